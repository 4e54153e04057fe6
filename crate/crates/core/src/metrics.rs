//! Quality-prediction metrics: RMSE, PLCC, SROCC and PWRC, plus the affine
//! score normalization used to put every dataset on a 0-1 scale.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("score vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} scores, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("zero variance in {0} scores")]
    ZeroVariance(&'static str),
    #[error("all values equal; rank correlation undefined")]
    AllEqual,
    #[error("invalid PWRC parameters: {0}")]
    BadParams(String),
    #[error("no active pairs at any threshold")]
    NoActivePairs,
    #[error("degenerate source range [{0}, {1}]")]
    DegenerateRange(f64, f64),
}

/// Predicted (`y_P`) and subjective (`y_S`) scores for the same images.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePair {
    predicted: Vec<f64>,
    subjective: Vec<f64>,
}

impl ScorePair {
    pub fn new(predicted: Vec<f64>, subjective: Vec<f64>) -> Result<Self, MetricError> {
        if predicted.len() != subjective.len() {
            return Err(MetricError::LengthMismatch(predicted.len(), subjective.len()));
        }
        if predicted.len() < 2 {
            return Err(MetricError::TooShort { need: 2, got: predicted.len() });
        }
        if let Some(i) = predicted
            .iter()
            .zip(&subjective)
            .position(|(p, s)| !p.is_finite() || !s.is_finite())
        {
            return Err(MetricError::NonFinite(i));
        }
        Ok(Self { predicted, subjective })
    }

    pub fn predicted(&self) -> &[f64] {
        &self.predicted
    }

    pub fn subjective(&self) -> &[f64] {
        &self.subjective
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmseDenominator {
    N,
    #[default]
    NMinus1,
}

pub fn rmse(p: &ScorePair, denominator: RmseDenominator) -> Result<f64, MetricError> {
    let n = p.len() as f64;
    let d = match denominator {
        RmseDenominator::N => n,
        RmseDenominator::NMinus1 => n - 1.0,
    };
    let ss: f64 = p.predicted.iter().zip(&p.subjective).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss / d).sqrt())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(MetricError::ZeroVariance("predicted"));
    }
    if syy == 0.0 {
        return Err(MetricError::ZeroVariance("subjective"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson linear correlation between predicted and subjective scores.
pub fn plcc(p: &ScorePair) -> Result<f64, MetricError> {
    pearson(&p.predicted, &p.subjective)
}

/// Fractional (average) ranks, 1-based.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank-order correlation: Pearson correlation of average ranks.
pub fn srocc(p: &ScorePair) -> Result<f64, MetricError> {
    let all_equal = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if all_equal(&p.predicted) || all_equal(&p.subjective) {
        return Err(MetricError::AllEqual);
    }
    pearson(&average_ranks(&p.predicted), &average_ranks(&p.subjective))
}

/// `1 − 6Σd²/(N(N²−1))`. Only valid when neither vector has ties.
pub fn srocc_closed_form(p: &ScorePair) -> f64 {
    let (rp, rs) = (average_ranks(&p.predicted), average_ranks(&p.subjective));
    let d2: f64 = rp.iter().zip(&rs).map(|(a, b)| (a - b).powi(2)).sum();
    let n = p.len() as f64;
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Threshold grid and importance weighting for PWRC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PwrcParams {
    pub t_min: f64,
    pub t_max: f64,
    pub t_steps: usize,
    pub importance_beta: f64,
}

impl PwrcParams {
    pub const DEFAULT_STEPS: usize = 101;
    pub const DEFAULT_BETA: f64 = 0.2;

    /// `T ∈ [0, max(y_S) − min(y_S)]`, 101 steps, β = 0.2.
    pub fn for_subjective(subjective: &[f64]) -> Self {
        let lo = subjective.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = subjective.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { t_min: 0.0, t_max: hi - lo, t_steps: Self::DEFAULT_STEPS, importance_beta: Self::DEFAULT_BETA }
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if !(self.t_min < self.t_max) {
            return Err(MetricError::BadParams(format!("t_min {} >= t_max {}", self.t_min, self.t_max)));
        }
        if self.t_steps < 2 {
            return Err(MetricError::BadParams(format!("t_steps {} < 2", self.t_steps)));
        }
        if !(self.importance_beta > 0.0) {
            return Err(MetricError::BadParams(format!("importance_beta {} <= 0", self.importance_beta)));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let step = (self.t_max - self.t_min) / (self.t_steps - 1) as f64;
        (0..self.t_steps)
            .map(|k| if k + 1 == self.t_steps { self.t_max } else { self.t_min + k as f64 * step })
            .collect()
    }
}

/// Perceptually weighted rank correlation.
///
/// For each threshold `T` on a uniform grid, the pairs whose subjective
/// difference exceeds `T` are active. Each active pair contributes +1 when
/// the predicted order agrees with the subjective order and −1 otherwise,
/// weighted by `exp(max(y_S,i, y_S,j) / β)` so that mistakes among
/// high-quality images cost more. `S(T)` is the weighted mean of those
/// contributions and PWRC is the trapezoidal area under `S` on
/// `[t_min, t_max]`.
///
/// At thresholds above every subjective difference no pair is active; there
/// `S(T)` holds the value computed on the pairs with the largest difference
/// (the left limit of the step function at that difference).
pub fn pwrc(p: &ScorePair, params: &PwrcParams) -> Result<(f64, Vec<(f64, f64)>), MetricError> {
    params.validate()?;
    let n = p.len();
    let top = p.subjective.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    // pairs sorted by descending subjective gap
    let mut pairs: Vec<(f64, f64, f64)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let ds = p.subjective[i] - p.subjective[j];
            if ds == 0.0 {
                continue;
            }
            let dp = p.predicted[i] - p.predicted[j];
            let agree = if dp.signum() == ds.signum() && dp != 0.0 { 1.0 } else { -1.0 };
            let weight = ((p.subjective[i].max(p.subjective[j]) - top) / params.importance_beta).exp();
            pairs.push((ds.abs(), weight, agree));
        }
    }
    if pairs.is_empty() {
        return Err(MetricError::NoActivePairs);
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let widest = pairs[0].0;

    // prefix sums over the gap-sorted pairs
    let mut cum_w = Vec::with_capacity(pairs.len() + 1);
    let mut cum_wa = Vec::with_capacity(pairs.len() + 1);
    cum_w.push(0.0);
    cum_wa.push(0.0);
    for &(_, w, a) in &pairs {
        cum_w.push(cum_w.last().unwrap() + w);
        cum_wa.push(cum_wa.last().unwrap() + w * a);
    }
    let n_widest = pairs.iter().take_while(|q| q.0 == widest).count();

    let mut curve = Vec::with_capacity(params.t_steps);
    for t in params.grid() {
        let active = pairs.partition_point(|q| q.0 > t);
        let k = if active == 0 { n_widest } else { active };
        curve.push((t, cum_wa[k] / cum_w[k]));
    }
    let area = curve.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
    Ok((area, curve))
}

/// Affine map of `[src_lo, src_hi]` onto `[0, 1]`; `invert` flips the
/// orientation for scales where lower is better.
pub fn normalize_scores(scores: &[f64], src_lo: f64, src_hi: f64, invert: bool) -> Result<Vec<f64>, MetricError> {
    if !(src_lo < src_hi) || !src_lo.is_finite() || !src_hi.is_finite() {
        return Err(MetricError::DegenerateRange(src_lo, src_hi));
    }
    let span = src_hi - src_lo;
    Ok(scores
        .iter()
        .map(|s| {
            let u = (s - src_lo) / span;
            if invert {
                1.0 - u
            } else {
                u
            }
        })
        .collect())
}

/// All four metrics for one evaluation, plus the PWRC configuration used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub plcc: f64,
    pub srocc: f64,
    pub pwrc: f64,
    pub rmse_denominator: RmseDenominator,
    pub pwrc_params: PwrcParams,
    pub pwrc_curve: Vec<(f64, f64)>,
}

impl MetricReport {
    /// Computes every metric, using the default PWRC grid when `params` is `None`.
    pub fn compute(
        p: &ScorePair,
        params: Option<PwrcParams>,
        denominator: RmseDenominator,
    ) -> Result<Self, MetricError> {
        let params = params.unwrap_or_else(|| PwrcParams::for_subjective(&p.subjective));
        let (pwrc, pwrc_curve) = pwrc(p, &params)?;
        Ok(Self {
            rmse: rmse(p, denominator)?,
            plcc: plcc(p)?,
            srocc: srocc(p)?,
            pwrc,
            rmse_denominator: denominator,
            pwrc_params: params,
            pwrc_curve,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric report serializes")
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("T,S\n");
        for (t, s) in &self.pwrc_curve {
            out.push_str(&format!("{t},{s}\n"));
        }
        out
    }
}
