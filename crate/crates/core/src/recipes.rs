//! Experiment configs shipped with the binary (`prefcon recipe <name>`).

/// `(name, config text)` for every bundled recipe.
pub const BUNDLED: &[(&str, &str)] = &[
    ("pointmass", include_str!("../../../recipes/pointmass.cfg")),
    ("reach", include_str!("../../../recipes/reach.cfg")),
    ("locomotion_hc", include_str!("../../../recipes/locomotion_hc.cfg")),
    ("locomotion_ant", include_str!("../../../recipes/locomotion_ant.cfg")),
    ("sensitivity", include_str!("../../../recipes/sensitivity.cfg")),
    ("grid3x3", include_str!("../../../recipes/grid3x3.cfg")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::parse_config;

    #[test]
    fn bundled_recipes_parse() {
        for (name, text) in BUNDLED {
            let cfg = parse_config(text, std::path::Path::new(".")).unwrap();
            assert_eq!(&cfg.name, name);
        }
        assert!(bundled("nope").is_none());
    }
}
