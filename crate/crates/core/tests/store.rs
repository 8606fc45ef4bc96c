use embgen::rng;
use embgen::store::{
    fit_normalizer, load_dataset, save_dataset, DatasetFormat, EmbeddingDataset, EmbeddingRecord, NormalizationStats,
};
use proptest::prelude::*;
use rand::Rng;

fn dataset(rows: &[Vec<f64>]) -> EmbeddingDataset {
    EmbeddingDataset::from_rows(rows, "test", |i| (format!("u{i}"), format!("s{}", i % 7))).unwrap()
}

#[test]
fn normalization_round_trip_on_ten_thousand_vectors() {
    let mut r = rng::rng(5);
    let d = 12;
    let rows: Vec<Vec<f64>> = (0..10_000)
        .map(|i| {
            let mut v = rng::normal_vec(&mut r, d);
            v[0] = 4.5; // constant feature
            v[1] *= 30.0;
            if i % 997 == 0 {
                v[2] = 1e4; // outlier
            }
            v
        })
        .collect();
    let norm = NormalizationStats::fit_rows(&rows).unwrap();
    assert_eq!(norm.q_low[0], 4.5);
    assert_eq!(norm.q_high[0], 4.5);
    for x in &rows {
        let y = norm.normalize(x).unwrap();
        assert!(y.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(y[0], 0.0);
        let back = norm.denormalize(&y).unwrap();
        for ((b, c), span) in back.iter().zip(norm.clip(x)).zip(norm.q_high.iter().zip(&norm.q_low).map(|(h, l)| h - l)) {
            assert!((b - c).abs() <= 1e-6 * span.max(1.0), "{b} vs {c}");
        }
    }
    // Values outside the fitted range land on the boundary.
    let mut far = rows[0].clone();
    far[3] = -1e9;
    assert_eq!(norm.normalize(&far).unwrap()[3], -1.0);
    for (v, hi) in norm.denormalize(&vec![5.0; d]).unwrap().iter().zip(&norm.q_high) {
        assert!((v - hi).abs() <= 1e-12 * hi.abs().max(1.0));
    }
}

#[test]
fn quantiles_follow_linear_interpolation() {
    // 1..=1001: position (n-1)p = 1 and 999 give exactly the 2nd and 1000th values.
    let rows: Vec<Vec<f64>> = (1..=1001).rev().map(|v| vec![v as f64]).collect();
    let norm = fit_normalizer(&dataset(&rows)).unwrap();
    assert!((norm.q_low[0] - 2.0).abs() < 1e-12);
    assert!((norm.q_high[0] - 1000.0).abs() < 1e-12);
}

#[test]
fn normalizer_input_checks() {
    assert!(NormalizationStats::fit_rows(&[vec![1.0]]).is_err());
    assert!(NormalizationStats::fit_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    let norm = NormalizationStats::fit_rows(&[vec![0.0, 1.0], vec![1.0, 2.0]]).unwrap();
    assert!(norm.normalize(&[0.0]).is_err());
    assert!(norm.normalize(&[f64::NAN, 0.0]).is_err());
}

proptest! {
    #[test]
    fn normalize_is_monotone_per_feature(a in -10.0f64..10.0, b in -10.0f64..10.0, seed in 0u64..100) {
        let mut r = rng::rng(seed);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| vec![r.random_range(-5.0..5.0)]).collect();
        let norm = NormalizationStats::fit_rows(&rows).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(norm.normalize(&[lo]).unwrap()[0] <= norm.normalize(&[hi]).unwrap()[0]);
    }
}

fn sample_dataset() -> EmbeddingDataset {
    let mut r = rng::rng(2);
    let records = (0..25)
        .map(|i| {
            let v: Vec<f32> = (0..6).map(|_| r.random_range(-2.0f32..2.0)).collect();
            EmbeddingRecord::new(format!("utt-{i}"), format!("spk-{}", i % 4), v)
        })
        .collect();
    EmbeddingDataset::new(records, "unit").unwrap()
}

#[test]
fn dataset_round_trips_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_dataset();
    for (name, format) in [("a", DatasetFormat::ManifestBinary), ("b.jsonl", DatasetFormat::Jsonl)] {
        let path = dir.path().join(name);
        let files = save_dataset(&data, &path, format).unwrap();
        assert!(files.iter().all(|f| f.exists()));
        let back = load_dataset(&path, format).unwrap();
        assert_eq!(back.records(), data.records());
    }
}

#[test]
fn dataset_rejects_inconsistent_records() {
    let dup = vec![
        EmbeddingRecord::new("u", "s", vec![0.0, 1.0]),
        EmbeddingRecord::new("u", "s", vec![1.0, 0.0]),
    ];
    assert!(EmbeddingDataset::new(dup, "x").is_err());
    let ragged = vec![
        EmbeddingRecord::new("u1", "s", vec![0.0, 1.0]),
        EmbeddingRecord::new("u2", "s", vec![1.0]),
    ];
    assert!(EmbeddingDataset::new(ragged, "x").is_err());
}

#[test]
fn speaker_index_groups_rows() {
    let data = sample_dataset();
    let idx = data.speaker_index();
    assert_eq!(idx.len(), 4);
    assert_eq!(idx["spk-1"], vec![1, 5, 9, 13, 17, 21]);
    assert_eq!(data.row_of("utt-9"), Some(9));
}
