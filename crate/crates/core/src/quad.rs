//! Quadrature rules and orthonormal-polynomial evaluation used by the basis
//! assembly and the decay integrals.

use crate::Scalar;

/// Nodes and weights of the `n`-point Gauss-Laguerre rule for the weight
/// `exp(-x)` on `[0, inf)`. Exact for polynomial integrands of degree
/// `<= 2n - 1`.
pub fn gauss_laguerre<S: Scalar>(n: usize) -> (Vec<S>, Vec<S>) {
    assert!(n >= 1, "rule order must be positive");
    let mut nodes = vec![S::zero(); n];
    let mut weights = vec![S::zero(); n];
    let nf = S::of(n as f64);
    let mut z = S::zero();
    for i in 0..n {
        // Stroud-Secrest style initial guesses, then Newton on L_n.
        z = match i {
            0 => S::of(3.0) / (S::one() + S::of(2.4) * nf),
            1 => z + S::of(15.0) / (S::one() + S::of(2.5) * nf),
            _ => {
                let ai = S::of((i - 1) as f64);
                z + (S::one() + S::of(2.55) * ai) / (S::of(1.9) * ai) * (z - nodes[i - 2])
            }
        };
        let eval = |z: S| -> (S, S, S) {
            let mut p1 = S::one();
            let mut p2 = S::zero();
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = S::of(j as f64);
                p1 = ((S::of(2.0) * jf + S::one() - z) * p2 - jf * p3) / (jf + S::one());
            }
            // L_n, L_{n-1}, L_n'
            (p1, p2, nf * (p1 - p2) / z)
        };
        for _ in 0..120 {
            let (p1, _, pp) = eval(z);
            let dz = p1 / pp;
            z = z - dz;
            if dz.abs() <= z.abs() * S::epsilon() * S::of(4.0) {
                break;
            }
        }
        let (_, p2, pp) = eval(z);
        nodes[i] = z;
        weights[i] = -(pp * nf * p2).recip();
    }
    (nodes, weights)
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre<S: Scalar>(n: usize) -> (Vec<S>, Vec<S>) {
    assert!(n >= 1, "rule order must be positive");
    let mut nodes = vec![S::zero(); n];
    let mut weights = vec![S::zero(); n];
    let m = n.div_ceil(2);
    let nf = S::of(n as f64);
    for i in 0..m {
        let theta = S::PI() * (S::of(i as f64) + S::of(0.75)) / (nf + S::of(0.5));
        let mut z = theta.cos();
        let mut pp = S::one();
        for _ in 0..120 {
            let mut p1 = S::one();
            let mut p2 = S::zero();
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = S::of(j as f64);
                p1 = ((S::of(2.0) * jf + S::one()) * z * p2 - jf * p3) / (jf + S::one());
            }
            pp = nf * (z * p1 - p2) / (z * z - S::one());
            let dz = p1 / pp;
            z = z - dz;
            if dz.abs() <= S::epsilon() * S::of(4.0) {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = S::of(2.0) / ((S::one() - z * z) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Values of the orthonormal associated Laguerre functions
/// `lhat_m^(k)(x) = sqrt(m! / (m+k)!) L_m^(k)(x)` for `m = 0..=m_max`.
///
/// These satisfy `integral x^k exp(-x) lhat_i lhat_j dx = delta_ij`; the
/// normalized three-term recurrence keeps every intermediate in range even
/// for the large `k` occurring at high angular momenta.
pub fn laguerre_normalized<S: Scalar>(m_max: usize, k: usize, x: S) -> Vec<S> {
    let mut out = Vec::with_capacity(m_max + 1);
    let mut inv_sqrt_kfac = S::one();
    for j in 1..=k {
        inv_sqrt_kfac = inv_sqrt_kfac / S::of(j as f64).sqrt();
    }
    let mut prev = S::zero();
    let mut cur = inv_sqrt_kfac;
    out.push(cur);
    for m in 0..m_max {
        let mf = S::of(m as f64);
        let kf = S::of(k as f64);
        let next = ((S::of(2.0) * mf + kf + S::one() - x) * cur
            - (mf * (mf + kf)).sqrt() * prev)
            / ((mf + S::one()) * (mf + kf + S::one())).sqrt();
        prev = cur;
        cur = next;
        out.push(cur);
    }
    out
}

/// Trapezoid rule over sampled data; `ts` must be increasing.
pub fn trapezoid<S: Scalar>(ts: &[S], ys: &[S]) -> S {
    assert_eq!(ts.len(), ys.len(), "mismatched sample lengths");
    let mut acc = S::zero();
    for i in 1..ts.len() {
        acc += (ts[i] - ts[i - 1]) * (ys[i] + ys[i - 1]) * S::of(0.5);
    }
    acc
}
