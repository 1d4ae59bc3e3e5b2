//! Independent-oracle checks: the power-iteration spectral norm against a
//! full Jacobi eigen-decomposition of `AᵀA`, and the random-feature score
//! against the exact exponential kernel it estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use elfatt_core::attention::{AttentionMode, AttentionProblem};
use elfatt_core::kernel::{performer_attention, performer_score, RandomFeatureMap};
use elfatt_core::linalg::{matmul, norm, DenseMatrix, NormKind};

/// Largest singular value via cyclic Jacobi sweeps on the symmetric matrix
/// `AᵀA`. Deliberately independent of the power-iteration code path.
fn jacobi_spectral_norm(a: &DenseMatrix) -> f64 {
    let n = a.cols();
    let mut s = vec![vec![0.0f64; n]; n];
    for p in 0..n {
        for q in 0..n {
            let mut acc = 0.0;
            for k in 0..a.rows() {
                acc += a.get(k, p) * a.get(k, q);
            }
            s[p][q] = acc;
        }
    }
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(s[p][q].abs());
            }
        }
        let scale = (0..n).map(|i| s[i][i].abs()).fold(0.0f64, f64::max);
        if off <= 1e-15 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if s[p][q].abs() <= 1e-300 {
                    continue;
                }
                let tau = (s[q][q] - s[p][p]) / (2.0 * s[p][q]);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let (skp, skq) = (s[k][p], s[k][q]);
                    s[k][p] = c * skp - sn * skq;
                    s[k][q] = sn * skp + c * skq;
                }
                for k in 0..n {
                    let (spk, sqk) = (s[p][k], s[q][k]);
                    s[p][k] = c * spk - sn * sqk;
                    s[q][k] = sn * spk + c * sqk;
                }
            }
        }
    }
    (0..n)
        .map(|i| s[i][i])
        .fold(0.0f64, f64::max)
        .max(0.0)
        .sqrt()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, mag: f64) -> DenseMatrix {
    DenseMatrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-mag..mag)).collect(),
    )
    .unwrap()
}

#[test]
fn spectral_norm_agrees_with_jacobi_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6001);
    for case in 0..20 {
        let a = random_matrix(&mut rng, 6, 6, 2.0);
        let fast = norm(&a, NormKind::Spectral).unwrap();
        let oracle = jacobi_spectral_norm(&a);
        assert!(
            (fast - oracle).abs() <= 1e-8 * oracle,
            "case {case}: power iteration {fast} vs jacobi {oracle}"
        );
    }
}

#[test]
fn jacobi_oracle_sanity_on_known_matrices() {
    // The oracle itself must get the easy cases right before it judges
    // anything else.
    let id = DenseMatrix::identity(4);
    assert!((jacobi_spectral_norm(&id) - 1.0).abs() < 1e-12);
    let d = DenseMatrix::from_vec(2, 2, vec![3.0, 0.0, 0.0, -4.0]).unwrap();
    assert!((jacobi_spectral_norm(&d) - 4.0).abs() < 1e-12);
}

#[test]
fn spectral_norm_handles_rectangular_and_rank_deficient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6002);
    for &(r, c) in &[(8usize, 3usize), (3, 8), (5, 5)] {
        let a = random_matrix(&mut rng, r, c, 1.5);
        let fast = norm(&a, NormKind::Spectral).unwrap();
        let oracle = jacobi_spectral_norm(&a);
        assert!((fast - oracle).abs() <= 1e-8 * oracle.max(1e-12));
    }
    // Rank-one outer product: norm is the product of the factor norms.
    let u = random_matrix(&mut rng, 6, 1, 1.0);
    let v = random_matrix(&mut rng, 1, 4, 1.0);
    let outer = matmul(&u, &v).unwrap();
    let expect = norm(&u, NormKind::Frobenius).unwrap() * norm(&v, NormKind::Frobenius).unwrap();
    let fast = norm(&outer, NormKind::Spectral).unwrap();
    assert!((fast - expect).abs() <= 1e-9 * expect);
}

#[test]
fn performer_score_mean_estimate_within_five_percent() {
    // Fixed pair with norms below one; 20 feature-map seeds at r = 1e5.
    let x = [0.4, -0.3, 0.5, 0.2];
    let y = [-0.2, 0.6, 0.1, -0.5];
    let exact = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().exp();
    let mut sum = 0.0;
    for seed in 0..20u64 {
        let fm = RandomFeatureMap::sample(4, 100_000, 77_000 + seed).unwrap();
        sum += performer_score(&x, &y, &fm).unwrap();
    }
    let mean = sum / 20.0;
    assert!(
        (mean - exact).abs() <= 0.05 * exact,
        "mean estimate {mean} vs exact {exact}"
    );
}

#[test]
fn performer_attention_tracks_vanilla_at_large_r() {
    // Entries bounded by 1; median relative error over 10 feature-map seeds
    // stays under 10% at r = 1e4.
    let mut rng = ChaCha8Rng::seed_from_u64(6003);
    let (m, c) = (16usize, 4usize);
    let p = AttentionProblem::new(
        random_matrix(&mut rng, m, c, 1.0),
        random_matrix(&mut rng, m, c, 1.0),
        random_matrix(&mut rng, m, c, 1.0),
    )
    .unwrap();
    let mode = AttentionMode::normalized_for_width(c);
    let reference = elfatt_core::attention::vanilla_attention(&p, mode).unwrap();
    let mut errs: Vec<f64> = (0..10u64)
        .map(|seed| {
            let fm = RandomFeatureMap::sample(c, 10_000, 88_000 + seed).unwrap();
            let out = performer_attention(&p, &fm, mode).unwrap();
            elfatt_core::bounds::relative_error(&reference, &out, NormKind::Frobenius).unwrap()
        })
        .collect();
    errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = errs[errs.len() / 2];
    assert!(median <= 0.10, "median relative error {median} exceeds 10%");
}

#[test]
fn performer_association_order_at_m32() {
    let mut rng = ChaCha8Rng::seed_from_u64(6004);
    let (m, c) = (32usize, 4usize);
    let p = AttentionProblem::new(
        random_matrix(&mut rng, m, c, 0.5),
        random_matrix(&mut rng, m, c, 0.5),
        random_matrix(&mut rng, m, c, 0.5),
    )
    .unwrap();
    let fm = RandomFeatureMap::sample(c, 40, 9).unwrap();
    let fast = performer_attention(&p, &fm, AttentionMode::RawExp).unwrap();
    let mut score_data = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            score_data.push(performer_score(p.q().row(i), p.k().row(j), &fm).unwrap());
        }
    }
    let scores = DenseMatrix::from_vec(m, m, score_data).unwrap();
    let slow = matmul(&scores, p.v()).unwrap();
    for (a, b) in fast.data().iter().zip(slow.data()) {
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
    }
}
