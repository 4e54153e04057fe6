//! One-sample t-tests of a metric sample against a baseline value.

use serde::Serialize;

use super::HarnessError;
use crate::stats::student_t_cdf;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TTest {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub t: f64,
    pub dof: f64,
    /// One-sided p-value for "mean > baseline".
    pub p_greater: f64,
    /// One-sided p-value for "mean < baseline".
    pub p_less: f64,
    /// 1 significantly greater, −1 significantly less, 0 indistinguishable.
    pub verdict: i8,
}

/// Two-sided test at level `alpha` reported as a direction: each tail is
/// tested at `alpha/2`, so the null rejection rate is `alpha` overall.
pub fn t_test_superiority(sample: &[f64], baseline: f64, alpha: f64) -> Result<TTest, HarnessError> {
    let n = sample.len();
    if n < 2 {
        return Err(HarnessError::TTest(format!("need at least 2 values, got {n}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(HarnessError::TTest(format!("alpha {alpha} outside (0, 1)")));
    }
    let mean = sample.iter().sum::<f64>() / n as f64;
    let var = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(HarnessError::TTest("zero sample variance".into()));
    }
    let sd = var.sqrt();
    let t = (mean - baseline) * (n as f64).sqrt() / sd;
    let dof = (n - 1) as f64;
    let cdf = student_t_cdf(t, dof);
    let (p_greater, p_less) = (1.0 - cdf, cdf);
    let verdict = if p_greater < alpha / 2.0 {
        1
    } else if p_less < alpha / 2.0 {
        -1
    } else {
        0
    };
    Ok(TTest { n, mean, sd, t, dof, p_greater, p_less, verdict })
}

/// Row `i`, column `j`: sample `i` tested against the mean of sample `j`.
/// The diagonal is 0.
pub fn significance_matrix(samples: &[Vec<f64>], alpha: f64) -> Result<Vec<Vec<i8>>, HarnessError> {
    let means: Vec<f64> = samples.iter().map(|s| s.iter().sum::<f64>() / s.len().max(1) as f64).collect();
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            (0..samples.len())
                .map(|j| if i == j { Ok(0) } else { t_test_superiority(s, means[j], alpha).map(|r| r.verdict) })
                .collect()
        })
        .collect()
}

pub fn matrix_csv(names: &[String], matrix: &[Vec<i8>]) -> String {
    let mut out = format!("method,{}\n", names.join(","));
    for (name, row) in names.iter().zip(matrix) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{name},{}\n", cells.join(",")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clear_superiority() {
        let s: Vec<f64> = (0..10).map(|i| 0.98 + (i as f64 - 4.5) * 1e-4).collect();
        assert_eq!(t_test_superiority(&s, 0.90, 0.05).unwrap().verdict, 1);
        assert_eq!(t_test_superiority(&s, 0.99, 0.05).unwrap().verdict, -1);
    }

    #[test]
    fn errors() {
        assert!(t_test_superiority(&[0.5], 0.4, 0.05).is_err());
        assert!(t_test_superiority(&[0.5, 0.5, 0.5], 0.4, 0.05).is_err());
    }

    #[test]
    fn matrix_shape() {
        let a: Vec<f64> = (0..10).map(|i| 0.9 + i as f64 * 1e-3).collect();
        let b: Vec<f64> = (0..10).map(|i| 0.5 + i as f64 * 1e-3).collect();
        let m = significance_matrix(&[a, b], 0.05).unwrap();
        assert_eq!(m, vec![vec![0, 1], vec![-1, 0]]);
        assert_eq!(matrix_csv(&["a".into(), "b".into()], &m), "method,a,b\na,0,1\nb,-1,0\n");
    }
}
