mod common;

use common::{pair, permutations, pwrc_oracle, tie_free};
use iqa_core::metrics::{plcc, pwrc, rmse, srocc, srocc_closed_form, MetricError, PwrcParams, RmseDenominator, ScorePair};
use iqa_core::RngStream;

#[test]
fn srocc_matches_closed_form_without_ties() {
    let mut rng = RngStream::new(1, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = 3 + rng.below(60);
        let p = pair(tie_free(&mut rng, n), tie_free(&mut rng, n));
        worst = worst.max((srocc(&p).unwrap() - srocc_closed_form(&p)).abs());
    }
    assert!(worst <= 1e-12, "{worst:e}");
}

#[test]
fn plcc_is_affine_invariant() {
    let mut rng = RngStream::new(2, 0);
    for _ in 0..500 {
        let n = 3 + rng.below(40);
        let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let base = plcc(&pair(x.clone(), y.clone())).unwrap();
        let (a, b) = (0.1 + 5.0 * rng.uniform(), 10.0 * rng.normal());
        let scaled = plcc(&pair(x.iter().map(|v| a * v + b).collect(), y.clone())).unwrap();
        let flipped = plcc(&pair(x.iter().map(|v| -a * v + b).collect(), y)).unwrap();
        assert!((scaled - base).abs() <= 1e-12);
        assert!((flipped + base).abs() <= 1e-12);
    }
}

#[test]
fn reference_values() {
    let p = pair(vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 3.0, 2.0, 4.0]);
    assert!((srocc(&p).unwrap() - 0.8).abs() < 1e-15);
    assert!((plcc(&p).unwrap() - 0.8).abs() < 1e-15);
    assert_eq!(rmse(&p, RmseDenominator::N).unwrap(), 0.5f64.sqrt());
    let tied = pair(vec![1.0, 1.0, 2.0], vec![1.0, 2.0, 3.0]);
    assert!((srocc(&tied).unwrap() - 0.866_025_403_784_438_6).abs() < 1e-15);
    assert!(matches!(plcc(&pair(vec![1.0; 3], vec![1.0, 2.0, 3.0])), Err(MetricError::ZeroVariance(_))));
    assert!(ScorePair::new(vec![1.0], vec![1.0, 2.0]).is_err());
    assert!(ScorePair::new(vec![f64::NAN, 1.0], vec![1.0, 2.0]).is_err());
}

#[test]
fn pwrc_matches_pair_enumeration() {
    let mut rng = RngStream::new(3, 0);
    let mut worst: f64 = 0.0;
    for case in 0..500 {
        let n = 2 + rng.below(7);
        // every fourth instance on a coarse grid, so ties occur
        let draw = |rng: &mut RngStream| if case % 4 == 0 { rng.below(5) as f64 / 4.0 } else { rng.uniform() };
        let subj: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        if subj.iter().all(|s| *s == subj[0]) {
            continue;
        }
        let pred: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let params = PwrcParams::for_subjective(&subj);
        let (got, curve) = pwrc(&pair(pred.clone(), subj.clone()), &params).unwrap();
        assert_eq!(curve.len(), PwrcParams::DEFAULT_STEPS);
        worst = worst.max((got - pwrc_oracle(&pred, &subj, &params)).abs());
    }
    assert!(worst <= 1e-10, "{worst:e}");
}

#[test]
fn identity_order_maximizes_pwrc() {
    let mut rng = RngStream::new(4, 0);
    for n in 2..=6 {
        for _ in 0..5 {
            let subj: Vec<f64> = tie_free(&mut rng, n).iter().map(|v| v / n as f64).collect();
            let params = PwrcParams::for_subjective(&subj);
            let (best, _) = pwrc(&pair(subj.clone(), subj.clone()), &params).unwrap();
            for perm in permutations(n) {
                let pred: Vec<f64> = perm.iter().map(|&k| subj[k]).collect();
                let (v, _) = pwrc(&pair(pred, subj.clone()), &params).unwrap();
                assert!(v <= best + 1e-12, "n={n}: {v} > {best}");
            }
        }
    }
}

#[test]
fn pwrc_rejects_degenerate_input() {
    let p = pair(vec![0.1, 0.2], vec![0.5, 0.5]);
    let params = PwrcParams { t_min: 0.0, t_max: 1.0, t_steps: 11, importance_beta: 0.2 };
    assert!(matches!(pwrc(&p, &params), Err(MetricError::NoActivePairs)));
    let bad = PwrcParams { t_steps: 1, ..params };
    assert!(matches!(pwrc(&pair(vec![0.1, 0.2], vec![0.1, 0.2]), &bad), Err(MetricError::BadParams(_))));
}
