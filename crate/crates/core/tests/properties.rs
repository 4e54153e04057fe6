use iqa_core::harness::split_indices;
use iqa_core::metrics::{normalize_scores, plcc, pwrc, rmse, srocc, PwrcParams, RmseDenominator, ScorePair};
use iqa_core::mos::{aggregate, mos_histogram, Rating, RatingTable, VarianceKind};
use proptest::prelude::*;

fn scores(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|n| (prop::collection::vec(0.0f64..1.0, n), prop::collection::vec(0.0f64..1.0, n)))
}

proptest! {
    #[test]
    fn correlations_stay_in_range((p, s) in scores(3..40)) {
        let pair = ScorePair::new(p, s).unwrap();
        if let Ok(r) = plcc(&pair) {
            prop_assert!((-1.0..=1.0).contains(&r));
        }
        if let Ok(r) = srocc(&pair) {
            prop_assert!((-1.0..=1.0).contains(&r));
        }
        prop_assert!(rmse(&pair, RmseDenominator::N).unwrap() >= 0.0);
    }

    #[test]
    fn srocc_ignores_monotone_maps((p, s) in scores(3..30)) {
        let pair = ScorePair::new(p.clone(), s.clone()).unwrap();
        let warped = ScorePair::new(p.iter().map(|v| (3.0 * v).exp() - 7.0).collect(), s).unwrap();
        match (srocc(&pair), srocc(&warped)) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn pwrc_is_bounded_by_grid_width((p, s) in scores(2..12)) {
        let params = PwrcParams::for_subjective(&s);
        if params.validate().is_ok() {
            let (v, curve) = pwrc(&ScorePair::new(p, s).unwrap(), &params).unwrap();
            prop_assert!(v.abs() <= params.t_max - params.t_min + 1e-12);
            prop_assert!(curve.iter().all(|(_, y)| (-1.0..=1.0).contains(y)));
        }
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive(n in 2usize..300, frac in 0.05f64..0.95, seed in any::<u64>()) {
        if let Ok((train, test)) = split_indices(n, frac, seed) {
            prop_assert!(!train.is_empty() && !test.is_empty());
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(split_indices(n, frac, seed).unwrap(), (train, test));
        }
    }

    #[test]
    fn histogram_conserves_counts(values in prop::collection::vec(0.0f64..=1.0, 0..500), bins in 1usize..150) {
        let h = mos_histogram(&values, bins).unwrap();
        prop_assert_eq!(h.len(), bins);
        prop_assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), values.len());
        for (k, b) in h.iter().enumerate() {
            let expect = values.iter().filter(|v| (**v > b.bin_lo && **v <= b.bin_hi) || (k == 0 && **v == 0.0)).count();
            prop_assert_eq!(b.count, expect);
        }
    }

    #[test]
    fn normalization_round_trips(raw in prop::collection::vec(1.0f64..=5.0, 1..50), invert in any::<bool>()) {
        let norm = normalize_scores(&raw, 1.0, 5.0, invert).unwrap();
        for (r, v) in raw.iter().zip(&norm) {
            prop_assert!((0.0..=1.0).contains(v));
            let back = if invert { 5.0 - 4.0 * v } else { 1.0 + 4.0 * v };
            prop_assert!((back - r).abs() < 1e-12);
        }
    }

    #[test]
    fn mos_ignores_observer_order(grid in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 4), 1..8), rot in 0usize..4) {
        let build = |shift: usize| {
            let mut ratings = Vec::new();
            for o in 0..4 {
                let o = (o + shift) % 4;
                for (i, row) in grid.iter().enumerate() {
                    ratings.push(Rating { image_id: format!("i{i}"), observer_id: format!("o{o}"), score: row[o], timestamp: String::new() });
                }
            }
            let images = (0..grid.len()).map(|i| format!("i{i}")).collect();
            aggregate(&RatingTable::with_images(images, ratings).unwrap(), VarianceKind::Sample).unwrap()
        };
        let (a, b) = (build(0), build(rot));
        prop_assert_eq!(&a, &b);
        for (rec, row) in a.iter().zip(&grid) {
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(rec.mos >= lo && rec.mos <= hi);
        }
    }
}
