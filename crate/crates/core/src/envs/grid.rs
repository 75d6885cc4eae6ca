//! The 3×3 grid example: three paths from one corner to the other, ranked
//! τ1 ≻ τ2 ≻ τ3.
//!
//! Cells carry one of three binary features: grey `(1,0,0)`, orange
//! `(0,1,0)` or red `(0,0,1)`. τ1 crosses only grey cells, τ2 cuts through
//! one orange cell and τ3 through one red cell. The accompanying statement is
//! that τ1 is about twice as preferable to τ2 as τ2 is to τ3.

use crate::margins::MarginTarget;
use crate::model::{FeatureVector, NominalModel, PreferenceDataset, Trajectory};

/// Dataset, nominal model and margin statement of the grid example.
#[derive(Debug, Clone)]
pub struct GridScenario {
    pub dataset: PreferenceDataset,
    pub nominal: NominalModel,
    /// `gap(τ2, τ3) / gap(τ1, τ2) ≈ 0.5`.
    pub target: MarginTarget,
}

const GREY: [f64; 3] = [1.0, 0.0, 0.0];
const ORANGE: [f64; 3] = [0.0, 1.0, 0.0];
const RED: [f64; 3] = [0.0, 0.0, 1.0];

fn path(cells: &[[f64; 3]]) -> Trajectory {
    Trajectory::without_progress(cells.iter().map(|c| FeatureVector::from(&c[..])).collect())
        .expect("grid paths are well formed")
}

/// Builds the three singleton groups. Every path visits five cells.
pub fn grid3x3_scenario() -> GridScenario {
    let tau1 = path(&[GREY; 5]);
    let tau2 = path(&[GREY, GREY, ORANGE, GREY, GREY]);
    let tau3 = path(&[GREY, GREY, RED, GREY, GREY]);
    let dataset = PreferenceDataset::new(vec![vec![tau1], vec![tau2], vec![tau3]]).expect("three groups");
    GridScenario {
        dataset,
        nominal: NominalModel::with_default_beta(vec![0.0; 3]).expect("beta is positive"),
        target: MarginTarget::new(vec![0.5], 0.25).expect("positive ratio"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::PairIndex;

    #[test]
    fn grid_features() {
        let s = grid3x3_scenario();
        assert_eq!(s.dataset.feature_mean(0).as_slice(), &[1.0, 0.0, 0.0]);
        assert!(s.dataset.feature_mean(1)[1] > 0.0);
        assert_eq!(s.dataset.feature_mean(1).as_slice(), &[0.8, 0.2, 0.0]);
        assert_eq!(s.dataset.feature_mean(2).as_slice(), &[0.8, 0.0, 0.2]);
        assert_eq!(PairIndex::new(&s.dataset).len(), 3);
    }
}
