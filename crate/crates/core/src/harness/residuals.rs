//! Residual-analysis data files: per-sample residuals, ground truth vs
//! residual pairs, normal probability-plot coordinates and box-plot
//! quartiles across repeats. Only data is written; plotting is external.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{HarnessError, SplitReport};
use crate::stats::{normal_quantile, quantile_type7};

pub const QUARTILE_RULE: &str = "type-7 linear interpolation";

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn box_stats(values: &[f64]) -> BoxStats {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    BoxStats {
        min: v[0],
        q1: quantile_type7(&v, 0.25),
        median: quantile_type7(&v, 0.5),
        q3: quantile_type7(&v, 0.75),
        max: v[v.len() - 1],
    }
}

/// `(Φ⁻¹((i − 0.5)/n), i-th smallest residual)` for i = 1..n.
pub fn probability_plot(residuals: &[f64]) -> Vec<(f64, f64)> {
    let mut v = residuals.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(i, r)| (normal_quantile((i as f64 + 0.5) / n), r)).collect()
}

fn write(path: PathBuf, body: String) -> Result<PathBuf, HarnessError> {
    std::fs::write(&path, body).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

/// Writes the per-split residual, scatter and probability-plot files.
pub fn residual_report(split: &SplitReport, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::Io(format!("{}: {e}", out_dir.display())))?;
    let i = split.index;
    let mut bars = String::from("index,image_id,y_s,y_p,residual\n");
    let mut scatter = String::from("y_s,residual\n");
    for (k, r) in split.residuals.iter().enumerate() {
        bars.push_str(&format!("{k},{},{},{},{}\n", csv_field(&r.image_id), r.subjective, r.predicted, r.residual));
        scatter.push_str(&format!("{},{}\n", r.subjective, r.residual));
    }
    let mut prob = String::from("normal_quantile,residual\n");
    let res: Vec<f64> = split.residuals.iter().map(|r| r.residual).collect();
    for (q, r) in probability_plot(&res) {
        prob.push_str(&format!("{q},{r}\n"));
    }
    Ok(vec![
        write(out_dir.join(format!("residuals_{i}.csv")), bars)?,
        write(out_dir.join(format!("scatter_{i}.csv")), scatter)?,
        write(out_dir.join(format!("probability_{i}.csv")), prob)?,
    ])
}

/// One box-plot row of residual quartiles per split.
pub fn boxplot_csv(splits: &[SplitReport]) -> String {
    let mut out = format!("# quartile rule: {QUARTILE_RULE}\nsplit,min,q1,median,q3,max\n");
    for s in splits.iter().filter(|s| !s.residuals.is_empty()) {
        let res: Vec<f64> = s.residuals.iter().map(|r| r.residual).collect();
        let b = box_stats(&res);
        out.push_str(&format!("{},{},{},{},{},{}\n", s.index, b.min, b.q1, b.median, b.q3, b.max));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles() {
        let z = box_stats(&[0.0; 5]);
        assert_eq!((z.min, z.q1, z.median, z.q3, z.max), (0.0, 0.0, 0.0, 0.0, 0.0));
        let b = box_stats(&[1.0, -1.0, 0.0]);
        assert_eq!((b.min, b.q1, b.median, b.q3, b.max), (-1.0, -0.5, 0.0, 0.5, 1.0));
    }

    #[test]
    fn probability_positions() {
        let pts = probability_plot(&[0.3, -0.2, 0.1]);
        assert_eq!(pts.iter().map(|p| p.1).collect::<Vec<_>>(), vec![-0.2, 0.1, 0.3]);
        assert!(pts[1].0.abs() < 1e-12);
        assert!((pts[0].0 + pts[2].0).abs() < 1e-12);
        assert!(probability_plot(&[0.0; 4]).iter().all(|p| p.1 == 0.0));
    }

    #[test]
    fn quoting() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
