//! Property-based invariants over randomized inputs.

use std::sync::OnceLock;

use ndarray::Array1;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

use eploop::linalg::{BandedCholesky, BlockMat};
use eploop::loops::LoopSpec;
use eploop::spectral::c_normalize_vector;
use eploop::two_level::{fit_model, matrix_from_kappa_eta, m2_eigenvalues, TwoLevelModel};
use eploop::FieldPoint;

fn loop_strategy() -> impl Strategy<Value = LoopSpec<f64>> {
    (
        1e-4..0.3f64,          // r
        1e2..1e5f64,           // T
        0.0..4.0 * std::f64::consts::PI, // phi0
    )
        .prop_map(|(r, t, phi0)| {
            LoopSpec::new(FieldPoint::new(1.445263e-2, 3.176736e-4), r, t, phi0)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ellipse_closes_and_winds_once(spec in loop_strategy()) {
        let p0 = spec.at(0.0);
        let pt = spec.at(spec.period);
        prop_assert!((p0.gamma - pt.gamma).abs() <= 1e-12 * p0.gamma.abs());
        prop_assert!((p0.f - pt.f).abs() <= 1e-12 * p0.f.abs());
        prop_assert_eq!(spec.winding_number(512), 1);
    }

    #[test]
    fn explicit_matrix_identities(
        kre in -1.0..1.0f64, kim in -1.0..0.0f64,
        ere in -1.0..1.0f64, eim in -1.0..1.0f64,
        cmod in 0.1..10.0f64, carg in 0.0..6.28f64,
    ) {
        let kappa = C64::new(kre, kim);
        let eta = C64::new(ere, eim);
        let c = C64::from_polar(cmod, carg);
        let m = matrix_from_kappa_eta(kappa, eta, c);
        let scale = m.iter().flatten().map(|z| z.norm()).fold(1.0, f64::max);
        let tr = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        prop_assert!((tr - kappa).norm() < 1e-13 * scale);
        prop_assert!((tr * tr - det * 4.0 - eta).norm() < 1e-13 * scale * scale);
        prop_assert_eq!(m[0][1], m[1][0]);
        // eigenvalues recover (kappa +- sqrt(eta)) / 2 independent of c
        let (l1, l2) = m2_eigenvalues(&m);
        prop_assert!((l1 + l2 - kappa).norm() < 1e-12 * scale);
        let d = l1 - l2;
        prop_assert!((d * d - eta).norm() < 1e-11 * scale * scale);
    }

    #[test]
    fn octagon_fit_recovers_random_polynomials(
        seedk in proptest::array::uniform3(-1.0..1.0f64),
        seede in proptest::array::uniform6(-1.0..1.0f64),
    ) {
        let center = FieldPoint::new(1.445263e-2, 3.176736e-4);
        let truth = TwoLevelModel {
            center,
            kappa_coeffs: [
                C64::new(-0.054, seedk[0] * 1e-3),
                C64::new(seedk[1], -seedk[2]),
                C64::new(seedk[2] * 10.0, seedk[0] * 2.0),
            ],
            eta_coeffs: [
                C64::new(seede[0] * 1e-8, seede[1] * 1e-8),
                C64::new(seede[1] * 1e-3, seede[2] * 1e-3),
                C64::new(seede[2] * 0.1, seede[3] * 0.1),
                C64::new(seede[3], seede[4]),
                C64::new(seede[4] * 20.0, seede[5] * 20.0),
                C64::new(seede[5] * 500.0, seede[0] * 500.0),
            ],
            c: C64::new(1.0, 0.0),
            fit_residual: 0.0,
        };
        let mut samples = Vec::new();
        for k in 0..9 {
            let p = if k == 0 {
                center
            } else {
                let th = std::f64::consts::PI / 4.0 * (k - 1) as f64;
                FieldPoint::new(
                    center.gamma * (1.0 + 1e-3 * th.cos()),
                    center.f * (1.0 + 1e-3 * th.sin()),
                )
            };
            let (e1, e2) = truth.eigenvalues(p);
            samples.push((p, e1, e2));
        }
        let fitted = fit_model(&samples, center).unwrap();
        for (a, b) in truth.kappa_coeffs.iter().zip(&fitted.kappa_coeffs) {
            prop_assert!((a - b).norm() < 1e-9 * (1.0 + a.norm()));
        }
        // eta coefficients reconstruct the surface over the sampled octagon
        for (p, e1, e2) in &samples {
            let eta_true = (e1 - e2) * (e1 - e2);
            prop_assert!((fitted.eta(*p) - eta_true).norm() < 1e-10 * (1.0 + eta_true.norm()));
        }
    }

    #[test]
    fn c_normalization_is_projective(re in -2.0..2.0f64, im in -2.0..2.0f64) {
        prop_assume!(re * re + im * im > 1e-4);
        let (chol, v0) = normalized_fixture();
        let scale = C64::new(re, im);
        let mut v = v0.mapv(|z| z * scale);
        let flag = c_normalize_vector(&mut v, chol, 1e-8);
        prop_assert!(!flag);
        for (a, b) in v.iter().zip(v0.iter()) {
            prop_assert!((a - b).norm() < 1e-9);
        }
    }
}

/// A fixed c-normalized vector plus its metric, built once.
fn normalized_fixture() -> (&'static BandedCholesky<f64>, &'static Array1<C64>) {
    static FIX: OnceLock<(BandedCholesky<f64>, Array1<C64>)> = OnceLock::new();
    let (c, v) = FIX.get_or_init(|| {
        let n = 6usize;
        let mut b = BlockMat::new(vec![n]);
        let mut bd = ndarray::Array2::from_elem((n, n), C64::new(0.0, 0.0));
        for i in 0..n {
            bd[(i, i)] = C64::new(2.0 + 0.1 * i as f64, 0.0);
            if i + 1 < n {
                bd[(i + 1, i)] = C64::new(0.3, 0.0);
                bd[(i, i + 1)] = C64::new(0.3, 0.0);
            }
        }
        b.push_block(0, 0, bd, 0.0);
        let chol = BandedCholesky::factor(&b).unwrap();
        let mut v = Array1::from_shape_fn(n, |i| C64::new(0.3 + i as f64, 0.2 * i as f64 - 0.4));
        let flag = c_normalize_vector(&mut v, &chol, 1e-8);
        assert!(!flag);
        (chol, v)
    });
    (c, v)
}
