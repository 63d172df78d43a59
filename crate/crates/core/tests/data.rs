use aadladmm_core::data::{normalize_features, split, synth_blobs, Dataset, Normalization};
use aadladmm_core::DenseMatrix;

/// Perceptron with bias; returns true once an epoch passes without mistakes.
fn perceptron_separates(ds: &Dataset, max_epochs: usize) -> bool {
    let d = ds.dim();
    let mut w = vec![0.0; d + 1];
    for _ in 0..max_epochs {
        let mut mistakes = 0;
        for j in 0..ds.len() {
            let y = if ds.labels[j] == 1 { 1.0 } else { -1.0 };
            let score: f64 = (0..d).map(|i| w[i] * ds.features[(i, j)]).sum::<f64>() + w[d];
            if y * score <= 0.0 {
                mistakes += 1;
                for i in 0..d {
                    w[i] += y * ds.features[(i, j)];
                }
                w[d] += y;
            }
        }
        if mistakes == 0 {
            return true;
        }
    }
    false
}

#[test]
fn small_spread_two_class_blobs_are_linearly_separable() {
    for seed in 0..10 {
        let ds = synth_blobs(100, 10, 2, 0.1, seed).unwrap();
        assert!(perceptron_separates(&ds, 1000), "seed {seed}");
    }
}

#[test]
fn zero_spread_is_solved_by_nearest_center() {
    let ds = synth_blobs(20, 4, 3, 0.0, 2).unwrap();
    let centers: Vec<Vec<f64>> = (0..3).map(|c| ds.features.column(c)).collect();
    for j in 0..ds.len() {
        let x = ds.features.column(j);
        let nearest = (0..3)
            .min_by(|&a, &b| {
                let da: f64 = x.iter().zip(&centers[a]).map(|(p, q)| (p - q) * (p - q)).sum();
                let db: f64 = x.iter().zip(&centers[b]).map(|(p, q)| (p - q) * (p - q)).sum();
                da.total_cmp(&db)
            })
            .unwrap();
        assert_eq!(nearest, ds.labels[j]);
    }
}

#[test]
fn split_is_a_deterministic_partition() {
    // tag every sample with its index in feature row 0 to recover the partition
    let base = synth_blobs(25, 3, 2, 0.5, 4).unwrap();
    let mut f = base.features.clone();
    for j in 0..base.len() {
        f[(0, j)] = j as f64;
    }
    let ds = Dataset::new(f, base.labels.clone(), 2, "tagged").unwrap();
    let (tr, te) = split(&ds, 0.8, 7).unwrap();
    assert_eq!((tr.len(), te.len()), (40, 10));
    let mut seen: Vec<usize> = tr.features.row(0).iter().chain(te.features.row(0)).map(|&v| v as usize).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..50).collect::<Vec<_>>());
    for part in [&tr, &te] {
        for j in 0..part.len() {
            assert_eq!(part.labels[j], ds.labels[part.features[(0, j)] as usize]);
        }
        assert_eq!(part.num_classes, 2);
    }
    assert_eq!(split(&ds, 0.8, 7).unwrap(), (tr, te));
    assert_ne!(split(&ds, 0.8, 8).unwrap().0, split(&ds, 0.8, 7).unwrap().0);
}

#[test]
fn standardize_gives_zero_mean_unit_variance() {
    let mut ds = synth_blobs(30, 5, 2, 2.0, 1).unwrap();
    for j in 0..ds.len() {
        ds.features[(3, j)] = 4.0;
        ds.features[(1, j)] = 1e3 * ds.features[(1, j)] + 7.0;
    }
    let out = normalize_features(&ds, Normalization::Standardize);
    let n = ds.len() as f64;
    for i in 0..5 {
        let row = out.features.row(i);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() <= 1e-10);
        if i == 3 {
            assert!(row.iter().all(|&v| v == 0.0));
        } else {
            assert!((var - 1.0).abs() <= 1e-8);
        }
    }
}

#[test]
fn unit_rows_gives_unit_sample_norms() {
    let mut ds = synth_blobs(10, 4, 2, 1.0, 3).unwrap();
    for i in 0..4 {
        ds.features[(i, 5)] = 0.0;
    }
    let out = normalize_features(&ds, Normalization::UnitRows);
    for j in 0..ds.len() {
        let norm: f64 = out.features.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - if j == 5 { 0.0 } else { 1.0 }).abs() < 1e-12);
    }
}

#[test]
fn dataset_rejects_nan_and_width_mismatch() {
    let f = DenseMatrix::from_rows(&[&[1.0, f64::NAN]]);
    assert!(Dataset::new(f, vec![0, 1], 2, "nan").is_err());
    assert!(Dataset::new(DenseMatrix::zeros(1, 3), vec![0, 1], 2, "short").is_err());
    assert!(Dataset::new(DenseMatrix::zeros(1, 1), vec![0], 1, "tiny").is_err());
}
