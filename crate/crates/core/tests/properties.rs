//! Property tests for the module invariants: oracle agreement for the dense
//! kernels, norm inequalities, softmax structure, blockify/unblockify and
//! file-format round trips, and the attention-level symmetries.

use proptest::prelude::*;

use elfatt_core::attention::{vanilla_attention, AttentionMode, AttentionProblem};
use elfatt_core::elfatt::{blockify, unblockify};
use elfatt_core::kernel::effatt_attention;
use elfatt_core::linalg::{
    elementwise_exp, hadamard, matmul, norm, row_softmax, DenseMatrix, NormKind,
};
use elfatt_core::matio;

fn matrix(max_rows: usize, max_cols: usize, mag: f64) -> impl Strategy<Value = DenseMatrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(move |(r, c)| {
        proptest::collection::vec(-mag..mag, r * c)
            .prop_map(move |data| DenseMatrix::from_vec(r, c, data).unwrap())
    })
}

fn problem(max_m: usize, max_c: usize, mag: f64) -> impl Strategy<Value = AttentionProblem> {
    (1..=max_m, 1..=max_c).prop_flat_map(move |(m, c)| {
        proptest::collection::vec(-mag..mag, 3 * m * c).prop_map(move |data| {
            let take = |i: usize| {
                DenseMatrix::from_vec(m, c, data[i * m * c..(i + 1) * m * c].to_vec()).unwrap()
            };
            AttentionProblem::new(take(0), take(1), take(2)).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_matches_triple_loop_oracle(
        a in matrix(32, 16, 2.0),
        bcols in 1usize..=16,
        bseed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(bseed);
        let b = DenseMatrix::from_vec(
            a.cols(),
            bcols,
            (0..a.cols() * bcols).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        ).unwrap();
        let fast = matmul(&a, &b).unwrap();
        for i in 0..a.rows() {
            for j in 0..bcols {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                prop_assert!((fast.get(i, j) - acc).abs() <= 1e-12 * acc.abs().max(1.0));
            }
        }
    }

    #[test]
    fn hadamard_matches_entrywise_oracle(a in matrix(8, 8, 5.0), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = DenseMatrix::from_vec(
            a.rows(),
            a.cols(),
            (0..a.rows() * a.cols()).map(|_| rng.gen_range(-5.0..5.0)).collect(),
        ).unwrap();
        let h = hadamard(&a, &b).unwrap();
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                prop_assert_eq!(h.get(i, j), a.get(i, j) * b.get(i, j));
            }
        }
    }

    #[test]
    fn norms_are_submultiplicative_and_ordered(
        a in matrix(8, 6, 3.0),
        bcols in 1usize..=6,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = DenseMatrix::from_vec(
            a.cols(),
            bcols,
            (0..a.cols() * bcols).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        ).unwrap();
        let ab = matmul(&a, &b).unwrap();
        for kind in [NormKind::Spectral, NormKind::Frobenius] {
            let nab = norm(&ab, kind).unwrap();
            let na = norm(&a, kind).unwrap();
            let nb = norm(&b, kind).unwrap();
            prop_assert!(nab <= na * nb * (1.0 + 1e-9), "{kind:?}: {nab} > {na} * {nb}");
        }
        // Spectral never exceeds Frobenius.
        let s = norm(&a, NormKind::Spectral).unwrap();
        let f = norm(&a, NormKind::Frobenius).unwrap();
        prop_assert!(s <= f * (1.0 + 1e-12));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        a in matrix(8, 8, 20.0),
        scale in 0.05f64..3.0,
        shift in -50.0f64..50.0,
    ) {
        let s = row_softmax(&a, scale);
        for r in 0..a.rows() {
            let sum: f64 = s.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }
        let shifted = DenseMatrix::from_vec(
            a.rows(),
            a.cols(),
            a.data().iter().map(|x| x + shift).collect(),
        ).unwrap();
        let s2 = row_softmax(&shifted, scale);
        for (x, y) in s.data().iter().zip(s2.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn blockify_round_trip_is_identity(a in matrix(24, 6, 4.0)) {
        for b in 1..=a.rows() {
            if a.rows() % b != 0 {
                prop_assert!(blockify(&a, b).is_err());
                continue;
            }
            let blocks = blockify(&a, b).unwrap();
            prop_assert_eq!(blocks.len(), b);
            let back = unblockify(&blocks).unwrap();
            prop_assert_eq!(&back, &a);
        }
    }

    #[test]
    fn matrix_files_round_trip_bit_exact(
        dims in (1usize..=6, 1usize..=6),
        bits in proptest::collection::vec(any::<u64>(), 36),
    ) {
        let (r, c) = dims;
        let data: Vec<f64> = bits[..r * c]
            .iter()
            .map(|&b| {
                let x = f64::from_bits(b);
                if x.is_finite() { x } else { 0.0 }
            })
            .collect();
        let m = DenseMatrix::from_vec(r, c, data).unwrap();

        let mut bin = Vec::new();
        matio::write_elf1(&m, &mut bin).unwrap();
        let back = matio::read_elf1(&mut bin.as_slice()).unwrap();
        for (x, y) in m.data().iter().zip(back.data()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }

        let mut text = Vec::new();
        matio::write_csv(&m, &mut text).unwrap();
        let back = matio::read_csv(&mut text.as_slice()).unwrap();
        for (x, y) in m.data().iter().zip(back.data()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn vanilla_commutes_with_token_permutation(p in problem(10, 5, 0.8), rot in 0usize..10) {
        let m = p.m();
        let rot = rot % m;
        let rotate = |mat: &DenseMatrix| {
            let mut data = Vec::with_capacity(m * mat.cols());
            for i in 0..m {
                data.extend_from_slice(mat.row((i + rot) % m));
            }
            DenseMatrix::from_vec(m, mat.cols(), data).unwrap()
        };
        let mode = AttentionMode::normalized_for_width(p.c());
        let out = vanilla_attention(&p, mode).unwrap();
        let rotated = AttentionProblem::new(rotate(p.q()), rotate(p.k()), rotate(p.v())).unwrap();
        let out_rot = vanilla_attention(&rotated, mode).unwrap();
        let expect = rotate(&out);
        for (x, y) in out_rot.data().iter().zip(expect.data()) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn normalized_outputs_are_convex_combinations(p in problem(10, 4, 0.8)) {
        let mode = AttentionMode::normalized_for_width(p.c());
        for out in [vanilla_attention(&p, mode).unwrap(), effatt_attention(&p, mode).unwrap()] {
            for d in 0..p.c() {
                let col: Vec<f64> = (0..p.m()).map(|j| p.v().get(j, d)).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min) - 1e-9;
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1e-9;
                for i in 0..p.m() {
                    let x = out.get(i, d);
                    prop_assert!(x >= lo && x <= hi);
                }
            }
        }
    }

    #[test]
    fn raw_exp_is_exp_of_scores(p in problem(8, 4, 0.6)) {
        // exp(QKᵀ)V computed by the oracle path equals the module output.
        let out = vanilla_attention(&p, AttentionMode::RawExp).unwrap();
        let scores = matmul(p.q(), &p.k().transpose()).unwrap();
        let expect = matmul(&elementwise_exp(&scores).unwrap(), p.v()).unwrap();
        for (x, y) in out.data().iter().zip(expect.data()) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }
}
