use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{Domain, SeedTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    /// One-hot encoding of `class`.
    pub label: Vec<f64>,
    pub class: usize,
}

impl LabeledSample {
    pub fn new(features: Vec<f64>, class: usize, classes: usize) -> Result<Self> {
        if class >= classes {
            return Err(invalid("class", format!("{class} is not below the class count {classes}")));
        }
        let mut label = vec![0.0; classes];
        label[class] = 1.0;
        Ok(Self { features, label, class })
    }
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path)?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Reads `label,x1,…,xp` rows. A first row starting with `label` is taken as a header;
/// lines starting with `#` are skipped.
pub fn load_dataset(path: &Path, classes: usize) -> Result<Vec<LabeledSample>> {
    if classes == 0 {
        return Err(invalid("classes", "must be at least 1"));
    }
    let mut out = Vec::new();
    let mut width = None;
    for (i, record) in reader(path)?.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if out.is_empty() && width.is_none() && record.get(0) == Some("label") {
            width = Some(record.len());
            continue;
        }
        if record.len() < 2 {
            return Err(parse_err(path, line, "expected a label followed by at least one feature"));
        }
        match width {
            Some(w) if w != record.len() => {
                return Err(parse_err(
                    path,
                    line,
                    format!("ragged row: {} fields, expected {w}", record.len()),
                ))
            }
            _ => width = Some(record.len()),
        }
        let label_field = &record[0];
        let class: usize = label_field
            .parse()
            .map_err(|_| parse_err(path, line, format!("label `{label_field}` is not a nonnegative integer")))?;
        if class >= classes {
            return Err(parse_err(
                path,
                line,
                format!("unknown label {class}; expected a value in [0, {classes})"),
            ));
        }
        let features = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(j, f)| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, line, format!("feature {} `{f}` is not a finite number", j + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(LabeledSample::new(features, class, classes)?);
    }
    if out.is_empty() {
        return Err(parse_err(path, 0, "dataset is empty"));
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, data: &[LabeledSample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let p = data.first().map_or(0, |s| s.features.len());
    write!(w, "label")?;
    for j in 1..=p {
        write!(w, ",x{j}")?;
    }
    writeln!(w)?;
    for s in data {
        write!(w, "{}", s.class)?;
        for v in &s.features {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Numeric CSV, optional header row, `#` comments.
pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader(path)?.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => {
                if let Some(first) = rows.first() {
                    if first.len() != row.len() {
                        return Err(parse_err(
                            path,
                            line,
                            format!("ragged row: {} fields, expected {}", row.len(), first.len()),
                        ));
                    }
                }
                rows.push(row);
            }
            Err(_) if rows.is_empty() && i == 0 => continue,
            Err(e) => return Err(parse_err(path, line, e.to_string())),
        }
    }
    if rows.is_empty() {
        return Err(parse_err(path, 0, "no numeric rows"));
    }
    Ok(rows)
}

/// Gaussian blobs around class centres on a sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobConfig {
    pub samples: usize,
    pub dim: usize,
    pub classes: usize,
    /// Norm of every class centre.
    pub separation: f64,
    /// Per-coordinate standard deviation around the centre.
    pub noise: f64,
    pub seed: u64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            dim: 20,
            classes: 3,
            separation: 1.0,
            noise: 0.25,
            seed: 0,
        }
    }
}

/// Labels cycle through the classes so every class is equally represented.
pub fn synthetic_blobs(cfg: &BlobConfig) -> Result<Vec<LabeledSample>> {
    if cfg.samples == 0 || cfg.dim == 0 || cfg.classes == 0 {
        return Err(invalid("blobs", "samples, dim and classes must be positive"));
    }
    if !(cfg.noise >= 0.0 && cfg.separation >= 0.0) {
        return Err(invalid("blobs", "noise and separation must be nonnegative"));
    }
    let tree = SeedTree::new(cfg.seed);
    let mut centre_rng = tree.stream(Domain::Data, 0, 0);
    let centres: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.dim).map(|_| centre_rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x * cfg.separation / n).collect()
        })
        .collect();
    let mut rng = tree.stream(Domain::Data, 1, 0);
    (0..cfg.samples)
        .map(|i| {
            let class = i % cfg.classes;
            let features = centres[class]
                .iter()
                .map(|c| c + cfg.noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            LabeledSample::new(features, class, cfg.classes)
        })
        .collect()
}
