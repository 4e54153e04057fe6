//! Quality manifests: `path,score,variance,split` CSV files whose scores are
//! mapped onto [0, 1] from a declared source range at load time.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::ensemble::LabeledImage;
use crate::metrics::normalize_scores;
use crate::raster::load_image;
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub path: PathBuf,
    pub mos: f64,
    pub variance: Option<f64>,
    pub split: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub dataset_id: String,
    pub records: Vec<SampleRecord>,
}

#[derive(Deserialize)]
struct Row {
    path: String,
    score: f64,
    #[serde(default)]
    variance: Option<f64>,
    #[serde(default)]
    split: Option<String>,
}

/// Reads a manifest, mapping scores from `[score_lo, score_hi]` to [0, 1]
/// (flipped when `invert`, for scales where lower is better). Relative
/// paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path, score_lo: f64, score_hi: f64, invert: bool) -> Result<Manifest, HarnessError> {
    let io = |e: csv::Error| HarnessError::Manifest(format!("{}: {e}", path.display()));
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path).map_err(io)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rows = Vec::new();
    for row in reader.deserialize::<Row>() {
        rows.push(row.map_err(io)?);
    }
    let mut seen = HashSet::new();
    let mut raw = Vec::with_capacity(rows.len());
    for r in &rows {
        if !(score_lo..=score_hi).contains(&r.score) {
            return Err(HarnessError::Range { path: r.path.clone(), score: r.score, lo: score_lo, hi: score_hi });
        }
        if !seen.insert(r.path.clone()) {
            return Err(HarnessError::DuplicatePath(r.path.clone()));
        }
        raw.push(r.score);
    }
    let mos = normalize_scores(&raw, score_lo, score_hi, invert)?;
    let records = rows
        .into_iter()
        .zip(mos)
        .map(|(r, mos)| {
            let p = PathBuf::from(&r.path);
            SampleRecord {
                path: if p.is_absolute() { p } else { base.join(p) },
                mos,
                variance: r.variance,
                split: r.split.filter(|s| !s.is_empty()),
            }
        })
        .collect();
    let dataset_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Manifest { dataset_id, records })
}

impl Manifest {
    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let io = |e: std::io::Error| HarnessError::Io(format!("{}: {e}", path.display()));
        let mut out = String::from("path,score,variance,split\n");
        for r in &self.records {
            let var = r.variance.map(|v| v.to_string()).unwrap_or_default();
            let split = r.split.clone().unwrap_or_default();
            out.push_str(&format!("{},{},{var},{split}\n", r.path.display(), r.mos));
        }
        std::fs::write(path, out).map_err(io)
    }

    /// Decodes every image; ids are the record paths.
    pub fn load_images(&self) -> Result<Vec<LabeledImage>, HarnessError> {
        self.records
            .iter()
            .map(|r| {
                let raster = load_image(&r.path).map_err(|e| HarnessError::Io(e.to_string()))?;
                Ok(LabeledImage { id: r.path.display().to_string(), raster: Arc::new(raster), target: r.mos })
            })
            .collect()
    }

    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Manifest, Manifest), HarnessError> {
        let (tr, te) = split_indices(self.records.len(), train_fraction, seed)?;
        let pick = |idx: &[usize]| Manifest {
            dataset_id: self.dataset_id.clone(),
            records: idx.iter().map(|i| self.records[*i].clone()).collect(),
        };
        Ok((pick(&tr), pick(&te)))
    }
}

/// Random train/test partition of `0..n` with `round(fraction·n)` training
/// indices; both parts come back sorted.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), HarnessError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(HarnessError::Split(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    if n < 2 {
        return Err(HarnessError::Split(format!("need at least 2 records, got {n}")));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(HarnessError::Split(format!("fraction {train_fraction} of {n} leaves an empty side")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    RngStream::new(seed, 0x5917).shuffle(&mut perm);
    let (mut train, mut test) = (perm[..n_train].to_vec(), perm[n_train..].to_vec());
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
