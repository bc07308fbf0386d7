//! Numerical-quadrature oracle for the Sturmian matrix elements.
//!
//! The oracle evaluates the explicit radial Sturmian polynomials (monomial
//! Laguerre coefficients, exact binomials) and the Legendre angular factors,
//! and integrates in `r`-space with a composite Gauss-Legendre rule. It
//! shares no code path with the assembly in `eploop::basis`, which uses
//! closed-form recurrences and a Gauss-Laguerre rule in the scaled variable.

use eploop::quad::gauss_legendre;

pub fn binom(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut acc = 1.0f64;
    for j in 0..k {
        acc = acc * (n - j) as f64 / (j + 1) as f64;
    }
    acc
}

pub fn factorial(n: u64) -> f64 {
    (1..=n).map(|v| v as f64).product::<f64>().max(1.0)
}

/// Monomial coefficients of `S_{Nl}(r) * exp(alpha r)`; index = power of r.
pub fn sturmian_poly(n_princ: usize, l: usize, alpha: f64) -> Vec<f64> {
    let m = n_princ - l - 1;
    let k = 2 * l + 1;
    let norm = (factorial(m as u64) / factorial((m + k) as u64)).sqrt();
    let mut coeffs = vec![0.0; n_princ + 1];
    for j in 0..=m {
        let lag = (-1.0f64).powi(j as i32) * binom((m + k) as u64, (m - j) as u64)
            / factorial(j as u64);
        coeffs[l + 1 + j] = norm * lag * (2.0 * alpha).powi((l + 1 + j) as i32);
    }
    coeffs
}

pub fn poly_eval(c: &[f64], r: f64) -> f64 {
    let mut acc = 0.0;
    for &ci in c.iter().rev() {
        acc = acc * r + ci;
    }
    acc
}

pub fn poly_derive(c: &[f64]) -> Vec<f64> {
    (1..c.len()).map(|j| c[j] * j as f64).collect()
}

pub fn sturmian_value(c: &[f64], alpha: f64, r: f64) -> f64 {
    poly_eval(c, r) * (-alpha * r).exp()
}

/// Second derivative of `S(r) = p(r) exp(-alpha r)`.
pub fn sturmian_dd(c: &[f64], alpha: f64, r: f64) -> f64 {
    let p = poly_eval(c, r);
    let d1 = poly_derive(c);
    let p1 = poly_eval(&d1, r);
    let p2 = poly_eval(&poly_derive(&d1), r);
    (p2 - 2.0 * alpha * p1 + alpha * alpha * p) * (-alpha * r).exp()
}

/// Composite Gauss-Legendre integral of `f` over `[0, rmax]`.
pub fn integrate_radial(f: impl Fn(f64) -> f64, rmax: f64) -> f64 {
    let panels = 80;
    let (x, w) = gauss_legendre::<f64>(20);
    let h = rmax / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let a = p as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            let r = a + 0.5 * h * (xi + 1.0);
            acc += 0.5 * h * wi * f(r);
        }
    }
    acc
}

pub fn legendre_p(l: usize, u: f64) -> f64 {
    let mut p0 = 1.0;
    let mut p1 = u;
    if l == 0 {
        return p0;
    }
    for j in 1..l {
        let jf = j as f64;
        let p2 = ((2.0 * jf + 1.0) * u * p1 - jf * p0) / (jf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Angular bracket `<Y_{l'0} | g(u) | Y_{l0}>` over the full solid angle,
/// `u = cos(theta)`.
pub fn angular(l_bra: usize, l_ket: usize, g: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_legendre::<f64>(64);
    let norm = 0.5
        * ((2 * l_bra + 1) as f64).sqrt()
        * ((2 * l_ket + 1) as f64).sqrt();
    let mut acc = 0.0;
    for (u, wi) in x.iter().zip(&w) {
        acc += wi * legendre_p(l_bra, *u) * legendre_p(l_ket, *u) * g(*u);
    }
    norm * acc
}

#[derive(Clone, Copy, PartialEq)]
pub enum Op {
    Overlap,
    Coulomb,
    Kinetic,
    Dipole,
    Diamagnetic,
}

/// Full 3D matrix element from the oracle quadratures.
pub fn oracle_element(op: Op, bra: (usize, usize), ket: (usize, usize), alpha: f64) -> f64 {
    let (nb, lb) = bra; // principal quantum number, l
    let (nk, lk) = ket;
    let cb = sturmian_poly(nb, lb, alpha);
    let ck = sturmian_poly(nk, lk, alpha);
    let rmax = 60.0 / alpha;
    match op {
        Op::Overlap => {
            angular(lb, lk, |_| 1.0)
                * integrate_radial(
                    |r| sturmian_value(&cb, alpha, r) * sturmian_value(&ck, alpha, r),
                    rmax,
                )
        }
        Op::Coulomb => {
            angular(lb, lk, |_| 1.0)
                * integrate_radial(
                    |r| -sturmian_value(&cb, alpha, r) * sturmian_value(&ck, alpha, r) / r,
                    rmax,
                )
        }
        Op::Kinetic => {
            let ll = (lk * (lk + 1)) as f64;
            angular(lb, lk, |_| 1.0)
                * integrate_radial(
                    |r| {
                        let sb = sturmian_value(&cb, alpha, r);
                        let sk_dd = sturmian_dd(&ck, alpha, r);
                        let sk = sturmian_value(&ck, alpha, r);
                        0.5 * sb * (-sk_dd + ll * sk / (r * r))
                    },
                    rmax,
                )
        }
        Op::Dipole => {
            angular(lb, lk, |u| u)
                * integrate_radial(
                    |r| sturmian_value(&cb, alpha, r) * r * sturmian_value(&ck, alpha, r),
                    rmax,
                )
        }
        Op::Diamagnetic => {
            angular(lb, lk, |u| 1.0 - u * u)
                * integrate_radial(
                    |r| sturmian_value(&cb, alpha, r) * r * r * sturmian_value(&ck, alpha, r),
                    rmax,
                )
        }
    }
}

