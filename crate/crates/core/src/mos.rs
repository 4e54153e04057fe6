//! Subjective scores: per-observer ratings → MOS and variance, observer
//! screening, and the MOS histogram.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum MosError {
    #[error("score {score} from {observer} on {image} outside [0, 1]")]
    Score { image: String, observer: String, score: f64 },
    #[error("{observer} rated {image} more than once")]
    DuplicateRating { image: String, observer: String },
    #[error("screening needs at least 3 observers, got {0}")]
    TooFewObservers(usize),
    #[error("image {0} has no ratings")]
    Unrated(String),
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("{0}")]
    Csv(String),
}

type Result<T> = std::result::Result<T, MosError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub image_id: String,
    pub observer_id: String,
    pub score: f64,
    #[serde(default)]
    pub timestamp: String,
}

/// Ratings plus the full image list, so images nobody rated are visible.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RatingTable {
    images: Vec<String>,
    ratings: Vec<Rating>,
}

impl RatingTable {
    /// Image list is the rated images, sorted.
    pub fn new(ratings: Vec<Rating>) -> Result<Self> {
        let images: BTreeSet<String> = ratings.iter().map(|r| r.image_id.clone()).collect();
        Self::with_images(images.into_iter().collect(), ratings)
    }

    pub fn with_images(images: Vec<String>, ratings: Vec<Rating>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &ratings {
            if !(0.0..=1.0).contains(&r.score) {
                return Err(MosError::Score { image: r.image_id.clone(), observer: r.observer_id.clone(), score: r.score });
            }
            if !seen.insert((r.image_id.as_str(), r.observer_id.as_str())) {
                return Err(MosError::DuplicateRating { image: r.image_id.clone(), observer: r.observer_id.clone() });
            }
        }
        let mut images = images;
        let known: HashSet<String> = images.iter().cloned().collect();
        let extra: BTreeSet<&String> = ratings.iter().map(|r| &r.image_id).filter(|i| !known.contains(*i)).collect();
        images.extend(extra.into_iter().cloned());
        Ok(Self { images, ratings })
    }

    pub fn images(&self) -> &[String] {
        &self.images
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    /// Sorted distinct observer ids.
    pub fn observers(&self) -> Vec<String> {
        let s: BTreeSet<&String> = self.ratings.iter().map(|r| &r.observer_id).collect();
        s.into_iter().cloned().collect()
    }

    pub fn without_observers(&self, rejected: &[String]) -> Self {
        let drop: HashSet<&str> = rejected.iter().map(String::as_str).collect();
        Self {
            images: self.images.clone(),
            ratings: self.ratings.iter().filter(|r| !drop.contains(r.observer_id.as_str())).cloned().collect(),
        }
    }

    /// `image_id,observer_id,score,timestamp`
    pub fn read_csv(path: &Path) -> Result<Self> {
        let err = |e: csv::Error| MosError::Csv(format!("{}: {e}", path.display()));
        let mut rd = csv::ReaderBuilder::new().flexible(true).from_path(path).map_err(err)?;
        let ratings = rd.deserialize().collect::<std::result::Result<Vec<Rating>, _>>().map_err(err)?;
        Self::new(ratings)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let err = |e: csv::Error| MosError::Csv(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        for r in &self.ratings {
            w.serialize(r).map_err(err)?;
        }
        w.flush().map_err(|e| MosError::Csv(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreeningRule {
    /// Minimum Pearson correlation with the leave-one-out consensus.
    pub min_correlation: f64,
    pub z_threshold: f64,
    /// Rejected when |z| > threshold on more than this share of rated images.
    pub max_outlier_fraction: f64,
}

impl Default for ScreeningRule {
    fn default() -> Self {
        Self { min_correlation: 0.5, z_threshold: 3.0, max_outlier_fraction: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObserverScreen {
    pub observer_id: String,
    pub correlation: Option<f64>,
    pub outlier_fraction: f64,
    pub rejected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Screening {
    pub table: RatingTable,
    pub rejected: Vec<String>,
    pub rule: ScreeningRule,
    pub observers: Vec<ObserverScreen>,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Whole-observer rejection: each observer is compared with the mean and
/// spread of everyone else on the same images. An undefined correlation
/// (constant scores on either side) does not reject.
pub fn screen_outliers(table: &RatingTable, rule: &ScreeningRule) -> Result<Screening> {
    let observers = table.observers();
    if observers.len() < 3 {
        return Err(MosError::TooFewObservers(observers.len()));
    }
    let mut by_image: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    for r in &table.ratings {
        by_image.entry(&r.image_id).or_default().push((&r.observer_id, r.score));
    }
    let mut screens = Vec::with_capacity(observers.len());
    for obs in &observers {
        let (mut own, mut consensus) = (Vec::new(), Vec::new());
        let mut outliers = 0usize;
        for scores in by_image.values() {
            let Some(&(_, s)) = scores.iter().find(|(o, _)| *o == obs) else { continue };
            let others: Vec<f64> = scores.iter().filter(|(o, _)| *o != obs).map(|p| p.1).collect();
            if others.is_empty() {
                continue;
            }
            let m = others.iter().sum::<f64>() / others.len() as f64;
            let sd = (others.iter().map(|v| (v - m).powi(2)).sum::<f64>() / others.len() as f64).sqrt();
            let z = if sd > 0.0 {
                (s - m) / sd
            } else if (s - m).abs() < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            if z.abs() > rule.z_threshold {
                outliers += 1;
            }
            own.push(s);
            consensus.push(m);
        }
        let correlation = pearson(&own, &consensus);
        let outlier_fraction = if own.is_empty() { 0.0 } else { outliers as f64 / own.len() as f64 };
        let rejected = correlation.is_some_and(|c| c < rule.min_correlation) || outlier_fraction > rule.max_outlier_fraction;
        screens.push(ObserverScreen { observer_id: obs.clone(), correlation, outlier_fraction, rejected });
    }
    let rejected: Vec<String> = screens.iter().filter(|s| s.rejected).map(|s| s.observer_id.clone()).collect();
    Ok(Screening { table: table.without_observers(&rejected), rejected, rule: *rule, observers: screens })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    #[default]
    Population,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosRecord {
    pub image_id: String,
    pub mos: f64,
    pub variance: f64,
    pub n_raters: usize,
}

/// One record per image in table order. Sample variance of a single rating is 0.
pub fn aggregate(table: &RatingTable, kind: VarianceKind) -> Result<Vec<MosRecord>> {
    let mut by_image: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &table.ratings {
        by_image.entry(&r.image_id).or_default().push(r.score);
    }
    table
        .images
        .iter()
        .map(|id| {
            let mut s = by_image.get(id.as_str()).cloned().ok_or_else(|| MosError::Unrated(id.clone()))?;
            // Fixed summation order keeps the result independent of observer order.
            s.sort_by(f64::total_cmp);
            let n = s.len();
            let mos = (s.iter().sum::<f64>() / n as f64).clamp(s[0], s[n - 1]);
            let ss = s.iter().map(|v| (v - mos).powi(2)).sum::<f64>();
            let variance = match kind {
                VarianceKind::Population => ss / n as f64,
                VarianceKind::Sample if n > 1 => ss / (n - 1) as f64,
                VarianceKind::Sample => 0.0,
            };
            Ok(MosRecord { image_id: id.clone(), mos, variance, n_raters: n })
        })
        .collect()
}

pub fn write_mos_csv(records: &[MosRecord], path: &Path) -> Result<()> {
    let err = |e: csv::Error| MosError::Csv(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in records {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| MosError::Csv(e.to_string()))
}

pub fn read_mos_csv(path: &Path) -> Result<Vec<MosRecord>> {
    let err = |e: csv::Error| MosError::Csv(format!("{}: {e}", path.display()));
    let mut rd = csv::Reader::from_path(path).map_err(err)?;
    rd.deserialize().collect::<std::result::Result<_, _>>().map_err(err)
}

pub const DEFAULT_BINS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

/// Uniform bins over [0, 1]. Bins are right-closed, `(lo, hi]`, and the
/// first also takes 0, so {0, 0.5, 1} in two bins counts [2, 1].
pub fn mos_histogram(values: &[f64], bins: usize) -> Result<Vec<Bin>> {
    if bins == 0 {
        return Err(MosError::NoBins);
    }
    let mut out: Vec<Bin> = (0..bins)
        .map(|b| Bin { bin_lo: b as f64 / bins as f64, bin_hi: (b + 1) as f64 / bins as f64, count: 0 })
        .collect();
    for v in values {
        let mut b = ((v * bins as f64).ceil() as isize - 1).clamp(0, bins as isize - 1) as usize;
        // ceil can land one bin off when v·bins rounds across an edge
        if b > 0 && *v <= out[b].bin_lo {
            b -= 1;
        } else if b + 1 < bins && *v > out[b].bin_hi {
            b += 1;
        }
        out[b].count += 1;
    }
    Ok(out)
}

pub fn write_histogram_csv(bins: &[Bin], path: &Path) -> Result<()> {
    let err = |e: csv::Error| MosError::Csv(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for b in bins {
        w.serialize(b).map_err(err)?;
    }
    w.flush().map_err(|e| MosError::Csv(e.to_string()))
}
