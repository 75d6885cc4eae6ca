//! File formats: trajectories, dataset manifests, chain dumps and report CSVs.
//!
//! A trajectory file is line oriented. The first line is the header
//! `# prefcon-trajectory v1 features=M progress=yes|no`, then one step per
//! line with `M` comma-separated feature values and, when `progress=yes`, a
//! trailing progress value. Blank lines and further `#` lines are ignored.
//!
//! A dataset is a directory of trajectory files plus `manifest.csv`, which
//! maps each file (relative to the manifest) to its 1-based group.
//!
//! Every CSV starts with a `# <schema> v<version>` comment line. All writes
//! go through a temporary file in the target directory and a rename.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{ConstraintHypothesis, FeatureVector, PreferenceDataset, Trajectory};
use crate::sampler::{AcceptCounts, ChainSample, PosteriorChain};

pub const TRAJECTORY_HEADER: &str = "# prefcon-trajectory v1";
pub const MANIFEST_SCHEMA: &str = "prefcon-manifest v1";
pub const CHAIN_SCHEMA: &str = "prefcon-chain v1";
pub const MANIFEST_FILE: &str = "manifest.csv";

/// Writes `contents` to `path` via a temporary sibling file and a rename,
/// creating parent directories as needed.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&parent).map_err(|e| Error::io(&parent, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn format_trajectory(t: &Trajectory) -> String {
    let progress = t.has_progress();
    let mut out = format!(
        "{TRAJECTORY_HEADER} features={} progress={}\n",
        t.feature_dim(),
        if progress { "yes" } else { "no" }
    );
    for (i, step) in t.steps().iter().enumerate() {
        let mut first = true;
        for v in step.iter() {
            if !first {
                out.push(',');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        if progress {
            let _ = write!(out, ",{}", t.progress()[i]);
        }
        out.push('\n');
    }
    out
}

/// Parses the trajectory format; `path` is only used in error messages.
pub fn parse_trajectory(text: &str, path: &Path) -> Result<Trajectory> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l.trim()).unwrap_or("");
    let rest = header
        .strip_prefix(TRAJECTORY_HEADER)
        .ok_or_else(|| Error::parse(path, format!("first line must start with `{TRAJECTORY_HEADER}`")))?;
    let mut features = None;
    let mut progress = None;
    for field in rest.split_whitespace() {
        match field.split_once('=') {
            Some(("features", v)) => {
                features = Some(v.parse::<usize>().map_err(|_| Error::parse(path, format!("bad feature count `{v}`")))?)
            }
            Some(("progress", "yes")) => progress = Some(true),
            Some(("progress", "no")) => progress = Some(false),
            _ => return Err(Error::parse(path, format!("unknown header field `{field}`"))),
        }
    }
    let (dim, has_progress) = match (features, progress) {
        (Some(d), Some(p)) if d > 0 => (d, p),
        _ => return Err(Error::parse(path, "header needs features=M (M ≥ 1) and progress=yes|no")),
    };
    let width = dim + usize::from(has_progress);
    let mut steps = Vec::new();
    let mut prog = Vec::new();
    for (n, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(path, format!("line {}: {e}", n + 1)))?;
        if values.len() != width {
            return Err(Error::parse(
                path,
                format!("line {}: expected {width} values, found {}", n + 1, values.len()),
            ));
        }
        if has_progress {
            prog.push(values[dim]);
        }
        steps.push(FeatureVector::new(values[..dim].to_vec()));
    }
    Trajectory::new(steps, prog).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    parse_trajectory(&read_to_string(path)?, path)
}

pub fn write_trajectory(path: &Path, t: &Trajectory) -> Result<()> {
    write_atomic(path, format_trajectory(t).as_bytes())
}

/// Serializes rows as CSV behind a schema comment line.
pub fn csv_bytes(schema: &str, header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut out = format!("# {schema}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let csv_err = |e: csv::Error| Error::invalid(format!("CSV encoding failed: {e}"));
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<memory>", e))?;
    }
    Ok(out)
}

pub fn write_csv(path: &Path, schema: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, &csv_bytes(schema, header, rows)?)
}

/// Reads a CSV written by [`write_csv`], checking its schema line. Returns
/// the header and the rows.
pub fn read_csv(path: &Path, schema: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = read_to_string(path)?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    let found = first.trim().trim_start_matches('#').trim();
    if found != schema {
        return Err(Error::parse(path, format!("expected schema `{schema}`, found `{found}`")));
    }
    let mut r = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let header = r
        .headers()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()
        .map_err(|e| Error::parse(path, e.to_string()))?;
    Ok((header, rows))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Writes one file per trajectory and `manifest.csv` into `dir`; returns the
/// manifest path.
pub fn write_dataset(dir: &Path, ds: &PreferenceDataset) -> Result<PathBuf> {
    let mut rows = Vec::with_capacity(ds.len());
    for k in 0..ds.num_groups() {
        for (i, t) in ds.group(k).iter().enumerate() {
            let name = format!("g{}_{:04}.traj", k + 1, i);
            write_trajectory(&dir.join(&name), t)?;
            rows.push(vec![name, (k + 1).to_string()]);
        }
    }
    let manifest = dir.join(MANIFEST_FILE);
    write_csv(&manifest, MANIFEST_SCHEMA, &strings(&["file", "group"]), &rows)?;
    Ok(manifest)
}

/// Loads a dataset from its manifest. Groups must be numbered `1..=K`
/// without holes; file order within a group is preserved.
pub fn read_dataset(manifest: &Path) -> Result<PreferenceDataset> {
    let (header, rows) = read_csv(manifest, MANIFEST_SCHEMA)?;
    if header != ["file", "group"] {
        return Err(Error::parse(manifest, "manifest columns must be `file,group`"));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut groups: Vec<Vec<Trajectory>> = Vec::new();
    for (n, row) in rows.iter().enumerate() {
        let group: usize = row[1]
            .trim()
            .parse()
            .ok()
            .filter(|&g| g >= 1)
            .ok_or_else(|| Error::parse(manifest, format!("row {}: group must be a positive integer", n + 1)))?;
        if groups.len() < group {
            groups.resize_with(group, Vec::new);
        }
        groups[group - 1].push(read_trajectory(&base.join(row[0].trim()))?);
    }
    if let Some(k) = groups.iter().position(Vec::is_empty) {
        return Err(Error::parse(manifest, format!("group {} has no trajectories", k + 1)));
    }
    PreferenceDataset::new(groups).map_err(|e| Error::parse(manifest, e.to_string()))
}

fn hypothesis_columns(dim: usize, locations: usize) -> Vec<String> {
    let mut cols = Vec::new();
    cols.extend((1..=dim).map(|j| format!("c{j}")));
    cols.extend((1..=dim).map(|j| format!("w{j}")));
    cols.extend((1..=locations).map(|j| format!("theta{j}")));
    cols
}

fn hypothesis_values(h: &ConstraintHypothesis) -> Vec<String> {
    let mut v: Vec<String> = h.indicators.iter().map(|&c| u8::from(c).to_string()).collect();
    v.extend(h.weights.iter().map(f64::to_string));
    v.extend(h.locations.iter().map(f64::to_string));
    v
}

/// Header and rows of a chain dump: every recorded sample, then the MAP and
/// the final state, tagged in the `row` column.
pub fn chain_table(chain: &PosteriorChain) -> (Vec<String>, Vec<Vec<String>>) {
    let h = &chain.map.hypothesis;
    let mut header = strings(&["row", "iteration", "loglik", "accepted"]);
    header.extend(hypothesis_columns(h.dim(), h.locations.len()));
    let row = |tag: &str, s: &ChainSample| {
        let mut r = vec![
            tag.to_string(),
            s.iteration.to_string(),
            s.loglik.to_string(),
            u8::from(s.accepted).to_string(),
        ];
        r.extend(hypothesis_values(&s.hypothesis));
        r
    };
    let mut rows: Vec<Vec<String>> = chain.samples.iter().map(|s| row("sample", s)).collect();
    rows.push(row("map", &chain.map));
    rows.push(row("last", &chain.last));
    (header, rows)
}

fn chain_schema(chain: &PosteriorChain) -> String {
    let c = chain.accept_counts;
    format!(
        "{CHAIN_SCHEMA} iterations={} burn_in={} flip={}/{} weight={}/{} location={}/{}",
        chain.iterations,
        chain.burn_in_fraction,
        c.flip_accepted,
        c.flip_proposed,
        c.weight_accepted,
        c.weight_proposed,
        c.location_accepted,
        c.location_proposed
    )
}

pub fn write_chain(path: &Path, chain: &PosteriorChain) -> Result<()> {
    let (header, rows) = chain_table(chain);
    write_csv(path, &chain_schema(chain), &header, &rows)
}

pub fn read_chain(path: &Path) -> Result<PosteriorChain> {
    let text = read_to_string(path)?;
    let first = text.lines().next().unwrap_or("").trim_start_matches('#').trim();
    let meta = first
        .strip_prefix(CHAIN_SCHEMA)
        .ok_or_else(|| Error::parse(path, format!("expected schema `{CHAIN_SCHEMA}`")))?;
    let bad = |what: &str| Error::parse(path, format!("bad chain header field `{what}`"));
    let mut iterations = None;
    let mut burn_in = None;
    let mut counts = AcceptCounts::default();
    for field in meta.split_whitespace() {
        let (key, value) = field.split_once('=').ok_or_else(|| bad(field))?;
        let ratio = || -> Result<(usize, usize)> {
            let (a, p) = value.split_once('/').ok_or_else(|| bad(field))?;
            Ok((a.parse().map_err(|_| bad(field))?, p.parse().map_err(|_| bad(field))?))
        };
        match key {
            "iterations" => iterations = Some(value.parse::<usize>().map_err(|_| bad(field))?),
            "burn_in" => burn_in = Some(value.parse::<f64>().map_err(|_| bad(field))?),
            "flip" => (counts.flip_accepted, counts.flip_proposed) = ratio()?,
            "weight" => (counts.weight_accepted, counts.weight_proposed) = ratio()?,
            "location" => (counts.location_accepted, counts.location_proposed) = ratio()?,
            _ => return Err(bad(field)),
        }
    }
    let (Some(iterations), Some(burn_in_fraction)) = (iterations, burn_in) else {
        return Err(Error::parse(path, "chain header needs iterations= and burn_in="));
    };

    let (header, rows) = read_csv(path, first)?;
    let dim = header.iter().filter(|h| h.starts_with('c') && h[1..].parse::<usize>().is_ok()).count();
    let locations = header.iter().filter(|h| h.starts_with("theta")).count();
    if header.len() != 4 + 2 * dim + locations || header[4..] != hypothesis_columns(dim, locations)[..] {
        return Err(Error::parse(path, "unexpected chain columns"));
    }
    let mut samples = Vec::new();
    let mut map = None;
    let mut last = None;
    for (n, row) in rows.iter().enumerate() {
        let err = |m: &str| Error::parse(path, format!("row {}: {m}", n + 1));
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(&format!("bad number `{s}`")));
        let flag = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(err(&format!("bad flag `{s}`"))),
        };
        let indicators = row[4..4 + dim].iter().map(|s| flag(s)).collect::<Result<Vec<_>>>()?;
        let weights = row[4 + dim..4 + 2 * dim].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
        let locs = row[4 + 2 * dim..].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
        let sample = ChainSample {
            iteration: row[1].parse().map_err(|_| err("bad iteration"))?,
            loglik: num(&row[2])?,
            accepted: flag(&row[3])?,
            hypothesis: ConstraintHypothesis::new(indicators, weights, locs).map_err(|e| err(&e.to_string()))?,
        };
        match row[0].as_str() {
            "sample" => samples.push(sample),
            "map" => map = Some(sample),
            "last" => last = Some(sample),
            other => return Err(err(&format!("unknown row tag `{other}`"))),
        }
    }
    let (Some(map), Some(last)) = (map, last) else {
        return Err(Error::parse(path, "chain dump lacks its map/last rows"));
    };
    Ok(PosteriorChain {
        samples,
        map,
        last,
        accept_counts: counts,
        iterations,
        burn_in_fraction,
    })
}
