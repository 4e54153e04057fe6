//! Corpus sweep: every source × every requested spec, written as
//! `<stem>_<label>.png` plus `manifest.csv`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply, DistortError, DistortionSpec};
use crate::raster::{load_dir, save_image};
use crate::rng::RngStream;

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub source: PathBuf,
    pub distorted: PathBuf,
    pub spec: DistortionSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<CorpusEntry>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    source: String,
    distorted: String,
    type_id: i64,
    level: i64,
    label: String,
    seed: u64,
}

impl CorpusManifest {
    pub fn write_csv(&self, path: &Path) -> Result<(), DistortError> {
        let io = |e: csv::Error| DistortError::Io(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        for e in &self.entries {
            w.serialize(Row {
                source: e.source.display().to_string(),
                distorted: e.distorted.display().to_string(),
                type_id: e.spec.type_id() as i64,
                level: e.spec.level() as i64,
                label: e.spec.label(),
                seed: e.seed,
            })
            .map_err(io)?;
        }
        if self.entries.is_empty() {
            w.write_record(["source", "distorted", "type_id", "level", "label", "seed"]).map_err(io)?;
        }
        w.flush().map_err(|e| DistortError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read_csv(path: &Path) -> Result<Self, DistortError> {
        let io = |e: csv::Error| DistortError::Io(format!("{}: {e}", path.display()));
        let mut r = csv::Reader::from_path(path).map_err(io)?;
        let mut entries = Vec::new();
        for row in r.deserialize::<Row>() {
            let row = row.map_err(io)?;
            let spec = DistortionSpec::new(row.type_id, row.level)?;
            if spec.label() != row.label {
                return Err(DistortError::Label(row.label));
            }
            entries.push(CorpusEntry {
                source: row.source.into(),
                distorted: row.distorted.into(),
                spec,
                seed: row.seed,
            });
        }
        Ok(Self { entries })
    }
}

#[derive(Debug, Clone)]
pub struct CorpusReport {
    pub manifest: CorpusManifest,
    pub manifest_path: PathBuf,
    /// (intended output, reason) for entries that could not be produced.
    pub failures: Vec<(PathBuf, String)>,
}

/// Seed for one corpus entry; independent of processing order.
pub fn entry_seed(base_seed: u64, source_index: usize, class_index: usize) -> u64 {
    RngStream::derive_seed(base_seed, &[source_index as u64, class_index as u64])
}

pub fn generate_corpus(
    source_dir: &Path,
    out_dir: &Path,
    specs: &[DistortionSpec],
    base_seed: u64,
) -> Result<CorpusReport, DistortError> {
    let sources = load_dir(source_dir).map_err(|e| DistortError::Io(e.to_string()))?;
    if sources.is_empty() {
        return Err(DistortError::EmptySource(source_dir.display().to_string()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| DistortError::Io(format!("{}: {e}", out_dir.display())))?;

    let results: Vec<Vec<Result<CorpusEntry, (PathBuf, String)>>> = sources
        .par_iter()
        .enumerate()
        .map(|(si, (path, raster))| {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            specs
                .iter()
                .map(|spec| {
                    let seed = entry_seed(base_seed, si, spec.class_index());
                    let target = out_dir.join(format!("{stem}_{}.png", spec.label()));
                    let img = apply(raster, *spec, &mut RngStream::new(seed, 0))
                        .map_err(|e| (target.clone(), e.to_string()))?;
                    save_image(&img, &target).map_err(|e| (target.clone(), e.to_string()))?;
                    Ok(CorpusEntry { source: path.clone(), distorted: target, spec: *spec, seed })
                })
                .collect()
        })
        .collect();

    let mut manifest = CorpusManifest::default();
    let mut failures = Vec::new();
    for r in results.into_iter().flatten() {
        match r {
            Ok(e) => manifest.entries.push(e),
            Err(f) => failures.push(f),
        }
    }
    let manifest_path = out_dir.join(MANIFEST_NAME);
    manifest.write_csv(&manifest_path)?;
    Ok(CorpusReport { manifest, manifest_path, failures })
}
