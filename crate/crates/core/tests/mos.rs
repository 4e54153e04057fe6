use iqa_core::mos::{
    aggregate, mos_histogram, read_mos_csv, screen_outliers, write_mos_csv, MosError, Rating, RatingTable, ScreeningRule,
    VarianceKind, DEFAULT_BINS,
};
use iqa_core::RngStream;

fn rating(image: usize, observer: usize, score: f64) -> Rating {
    Rating { image_id: format!("img{image:03}"), observer_id: format!("obs{observer:02}"), score, timestamp: String::new() }
}

/// 30 observers whose offsets from each image's base cancel, so every mean is
/// the base and every variance is a known dyadic sum over 30.
fn balanced_panel(images: usize) -> (RatingTable, Vec<f64>, f64) {
    let offsets: Vec<f64> = (0..15).flat_map(|j| [(j + 1) as f64 / 256.0, -((j + 1) as f64) / 256.0]).collect();
    let ss: f64 = offsets.iter().map(|d| d * d).sum();
    let mut ratings = Vec::new();
    let mut bases = Vec::new();
    for i in 0..images {
        let base = 0.25 + (i % 9) as f64 / 16.0;
        bases.push(base);
        for (o, d) in offsets.iter().enumerate() {
            ratings.push(rating(i, o, base + d));
        }
    }
    (RatingTable::new(ratings).unwrap(), bases, ss)
}

#[test]
fn thirty_observers_give_exact_mean_and_variance() {
    let (table, bases, ss) = balanced_panel(20);
    let pop = aggregate(&table, VarianceKind::Population).unwrap();
    let smp = aggregate(&table, VarianceKind::Sample).unwrap();
    for ((p, s), base) in pop.iter().zip(&smp).zip(&bases) {
        assert_eq!(p.n_raters, 30);
        assert_eq!(p.mos, *base);
        assert_eq!(p.variance, ss / 30.0);
        assert_eq!(s.variance, ss / 29.0);
    }
}

#[test]
fn random_panel_matches_rational_oracle() {
    // Scores on a 1/64 grid: integer sums give the mean and variance exactly.
    let mut rng = RngStream::new(8, 0);
    let mut ratings = Vec::new();
    let mut grid = vec![Vec::new(); 12];
    for (i, g) in grid.iter_mut().enumerate() {
        for o in 0..30 {
            let k = rng.below(65) as i64;
            g.push(k);
            ratings.push(rating(i, o, k as f64 / 64.0));
        }
    }
    let recs = aggregate(&RatingTable::new(ratings).unwrap(), VarianceKind::Population).unwrap();
    for (r, g) in recs.iter().zip(&grid) {
        let n = g.len() as i64;
        let (s1, s2): (i64, i64) = (g.iter().sum(), g.iter().map(|k| k * k).sum());
        assert_eq!(r.mos, s1 as f64 / (64 * n) as f64);
        let var = (n * s2 - s1 * s1) as f64 / (4096 * n * n) as f64;
        assert!((r.variance - var).abs() <= 1e-15 * var.max(1e-300), "{} vs {var}", r.variance);
    }
}

#[test]
fn anti_correlated_observer_is_rejected() {
    let mut rng = RngStream::new(2, 0);
    let truth: Vec<f64> = (0..40).map(|i| 0.05 + 0.9 * i as f64 / 39.0).collect();
    let mut ratings = Vec::new();
    for o in 0..30 {
        for (i, t) in truth.iter().enumerate() {
            ratings.push(rating(i, o, (t + 0.05 * rng.normal()).clamp(0.0, 1.0)));
        }
    }
    for (i, t) in truth.iter().enumerate() {
        ratings.push(rating(i, 30, 1.0 - t));
    }
    let table = RatingTable::new(ratings).unwrap();
    let s = screen_outliers(&table, &ScreeningRule::default()).unwrap();
    assert_eq!(s.rejected, vec!["obs30".to_string()]);
    assert_eq!(s.table.observers().len(), 30);
    let c = s.observers.iter().find(|o| o.observer_id == "obs30").unwrap().correlation.unwrap();
    assert!(c < -0.9);

    // Screening the cleaned table again changes nothing.
    let again = screen_outliers(&s.table, &ScreeningRule::default()).unwrap();
    assert!(again.rejected.is_empty());
    assert_eq!(again.table.ratings(), s.table.ratings());
}

#[test]
fn aggregation_ignores_rating_order() {
    let (table, _, _) = balanced_panel(6);
    let mut shuffled = table.ratings().to_vec();
    RngStream::new(4, 0).shuffle(&mut shuffled);
    let images = table.images().to_vec();
    let other = RatingTable::with_images(images, shuffled).unwrap();
    assert_eq!(aggregate(&table, VarianceKind::Sample).unwrap(), aggregate(&other, VarianceKind::Sample).unwrap());
}

#[test]
fn table_and_mos_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (table, _, _) = balanced_panel(3);
    let path = dir.path().join("r.csv");
    table.write_csv(&path).unwrap();
    assert_eq!(RatingTable::read_csv(&path).unwrap().ratings(), table.ratings());
    let recs = aggregate(&table, VarianceKind::Population).unwrap();
    let mpath = dir.path().join("mos.csv");
    write_mos_csv(&recs, &mpath).unwrap();
    assert_eq!(read_mos_csv(&mpath).unwrap(), recs);
}

#[test]
fn bad_tables_are_rejected() {
    assert!(matches!(RatingTable::new(vec![rating(0, 0, 1.5)]), Err(MosError::Score { .. })));
    assert!(matches!(
        RatingTable::new(vec![rating(0, 0, 0.5), rating(0, 0, 0.6)]),
        Err(MosError::DuplicateRating { .. })
    ));
    let two = RatingTable::new(vec![rating(0, 0, 0.5), rating(0, 1, 0.6)]).unwrap();
    assert!(matches!(screen_outliers(&two, &ScreeningRule::default()), Err(MosError::TooFewObservers(2))));
    let unrated = RatingTable::with_images(vec!["img000".into(), "lonely".into()], vec![rating(0, 0, 0.5)]).unwrap();
    assert!(matches!(aggregate(&unrated, VarianceKind::Population), Err(MosError::Unrated(_))));
}

#[test]
fn histogram_conserves_twelve_thousand_records() {
    let mut rng = RngStream::new(12, 0);
    let mut values: Vec<f64> = (0..11_990).map(|_| rng.uniform()).collect();
    values.extend([0.0, 1.0, 0.01, 0.5, 0.99, 0.3, 0.7, 0.07, 0.29, 0.57]);
    let bins = mos_histogram(&values, DEFAULT_BINS).unwrap();
    assert_eq!(bins.len(), 100);
    assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 12_000);
    for (k, b) in bins.iter().enumerate() {
        let expect = values.iter().filter(|v| (**v > b.bin_lo && **v <= b.bin_hi) || (k == 0 && **v == 0.0)).count();
        assert_eq!(b.count, expect, "bin {k}");
    }
    assert!(matches!(mos_histogram(&values, 0), Err(MosError::NoBins)));
}
