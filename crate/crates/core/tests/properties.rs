use aadladmm_core::data::synth_blobs;
use aadladmm_core::model::{Activation, Loss, ProblemSpec};
use aadladmm_core::trainer::{flatten, init_state, unflatten};
use aadladmm_core::{DenseMatrix, DenseVector};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-10.0f64..10.0, rows * cols).prop_map(move |v| DenseMatrix::new(rows, cols, v).unwrap())
}

proptest! {
    #[test]
    fn matmul_is_associative((a, b, c) in (1usize..5, 1usize..5, 1usize..5, 1usize..5)
        .prop_flat_map(|(m, k, l, n)| (matrix(m, k), matrix(k, l), matrix(l, n))))
    {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = 1.0 + left.frob_norm();
        prop_assert!(left.sub(&right).unwrap().frob_norm() <= 1e-10 * scale);
    }

    #[test]
    fn transposed_products_agree((a, b, c) in (1usize..5, 1usize..5, 1usize..5)
        .prop_flat_map(|(m, k, n)| (matrix(m, k), matrix(n, k), matrix(m, n))))
    {
        let fused = a.matmul_transpose(&b).unwrap();
        prop_assert!(fused.sub(&a.matmul(&b.transpose()).unwrap()).unwrap().frob_norm() <= 1e-10 * (1.0 + fused.frob_norm()));
        let fused = a.transpose_matmul(&c).unwrap();
        prop_assert!(fused.sub(&a.transpose().matmul(&c).unwrap()).unwrap().frob_norm() <= 1e-10 * (1.0 + fused.frob_norm()));
    }

    #[test]
    fn frobenius_triangle_inequality((a, b) in (1usize..6, 1usize..6).prop_flat_map(|(m, n)| (matrix(m, n), matrix(m, n)))) {
        prop_assert!(a.add(&b).unwrap().frob_norm() <= a.frob_norm() + b.frob_norm() + 1e-12);
    }

    #[test]
    fn flatten_roundtrip_and_single_entry_perturbation(seed in 0u64..1000, pick in 0usize..10_000, delta in 0.1f64..5.0) {
        let ds = synth_blobs(3, 3, 2, 0.5, seed).unwrap();
        let spec = ProblemSpec::new(vec![3, 4, 3, 2], Activation::Tanh, Loss::CrossEntropySoftmax, 1.0).unwrap();
        let state = init_state(&spec, &ds, seed).unwrap();
        let v = flatten(&state);
        prop_assert_eq!(&unflatten(&v, &spec, &state).unwrap(), &state);
        let k = pick % v.len();
        let mut bumped = v.clone();
        bumped[k] += delta;
        let back = unflatten(&bumped, &spec, &state).unwrap();
        let changed = flatten(&back).sub(&v).as_slice().iter().filter(|d| **d != 0.0).count();
        prop_assert_eq!(changed, 1);
        let blocks_changed = back.w.iter().zip(&state.w).filter(|(x, y)| x != y).count()
            + back.b.iter().zip(&state.b).filter(|(x, y)| x != y).count()
            + back.z.iter().zip(&state.z).filter(|(x, y)| x != y).count()
            + back.a.iter().zip(&state.a).filter(|(x, y)| x != y).count();
        prop_assert_eq!(blocks_changed, 1);
    }

    #[test]
    fn vector_norm_is_homogeneous(v in prop::collection::vec(-5.0f64..5.0, 1..20), s in -4.0f64..4.0) {
        let v = DenseVector::from_vec(v);
        prop_assert!((v.scale(s).norm() - s.abs() * v.norm()).abs() <= 1e-12 * (1.0 + v.norm()));
    }
}
