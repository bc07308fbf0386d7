//! Reduced 2x2 matrix model of two resonances around an exceptional point.
//!
//! The barycentric coordinate `kappa = E1 + E2` is expanded to first order
//! and the relative coordinate `eta = (E1 - E2)^2` to second order in the
//! field strengths around a center point; both are fitted by least squares
//! to spectral samples on an octagon. A complex-symmetric 2x2 Hamiltonian
//! with those trace/discriminant surfaces is then built explicitly; the
//! missing fourth constraint leaves a free complex parameter `c != 0` that
//! has no effect on observables.

use ndarray::Array2;

use crate::linalg::RealLu;
use crate::{Cplx, Error, FieldPoint, Result, Scalar};

/// Complex-symmetric 2x2 matrix `[[a, b], [b, d]]`.
pub type Matrix2<S> = [[Cplx<S>; 2]; 2];

/// Fitted surrogate for the EP pair.
#[derive(Debug, Clone)]
pub struct TwoLevelModel<S> {
    pub center: FieldPoint<S>,
    /// `(A, B, C)` of `kappa = A + B dg + C df`.
    pub kappa_coeffs: [Cplx<S>; 3],
    /// `(D, E, F, G, H, I)` of
    /// `eta = D + E dg + F df + G dg^2 + H df dg + I df^2`.
    pub eta_coeffs: [Cplx<S>; 6],
    /// Free parameter of the explicit matrix form.
    pub c: Cplx<S>,
    /// Largest eigenvalue mismatch over the fitted samples.
    pub fit_residual: S,
}

impl<S: Scalar> TwoLevelModel<S> {
    pub fn kappa(&self, p: FieldPoint<S>) -> Cplx<S> {
        let dg = p.gamma - self.center.gamma;
        let df = p.f - self.center.f;
        let [a, b, c] = self.kappa_coeffs;
        a + b * dg + c * df
    }

    pub fn eta(&self, p: FieldPoint<S>) -> Cplx<S> {
        let dg = p.gamma - self.center.gamma;
        let df = p.f - self.center.f;
        let [d, e, f, g, h, i] = self.eta_coeffs;
        d + e * dg + f * df + g * (dg * dg) + h * (df * dg) + i * (df * df)
    }

    /// `(d eta / d gamma, d eta / d f)` at `p`.
    pub fn eta_gradient(&self, p: FieldPoint<S>) -> (Cplx<S>, Cplx<S>) {
        let dg = p.gamma - self.center.gamma;
        let df = p.f - self.center.f;
        let [_, e, f, g, h, i] = self.eta_coeffs;
        let two = S::of(2.0);
        (e + g * (dg * two) + h * df, f + h * dg + i * (df * two))
    }

    /// Unordered eigenvalue pair `kappa/2 +- sqrt(eta)/2` (principal branch;
    /// pairing across parameter space is the tracker's job).
    pub fn eigenvalues(&self, p: FieldPoint<S>) -> (Cplx<S>, Cplx<S>) {
        let k = self.kappa(p);
        let s = self.eta(p).sqrt();
        let half = S::of(0.5);
        ((k + s) * half, (k - s) * half)
    }

    pub fn with_c(mut self, c: Cplx<S>) -> Result<Self> {
        if c.norm() == S::zero() {
            return Err(Error::InvalidArgument("free parameter c must be nonzero".into()));
        }
        self.c = c;
        Ok(self)
    }

    /// Newton/Levenberg root of `eta(gamma, f) = 0` within a relative
    /// displacement bound around the center.
    pub fn eta_root(&self, max_rel_displacement: S) -> Result<FieldPoint<S>> {
        let mut p = self.center;
        let scale_g = self.center.gamma.abs().max(S::of(1e-30));
        let scale_f = self.center.f.abs().max(S::of(1e-30));
        let mut lambda = S::of(1e-12);
        let mut best = p;
        let mut best_val = self.eta(p).norm();
        for _ in 0..200 {
            let r = self.eta(p);
            if r.norm() <= S::of(1e-30) {
                break;
            }
            let (dg, df) = self.eta_gradient(p);
            // normal equations of the 2x2 real system, Levenberg-damped
            let j = [[dg.re, df.re], [dg.im, df.im]];
            let jtj = [
                [
                    j[0][0] * j[0][0] + j[1][0] * j[1][0] + lambda,
                    j[0][0] * j[0][1] + j[1][0] * j[1][1],
                ],
                [
                    j[0][0] * j[0][1] + j[1][0] * j[1][1],
                    j[0][1] * j[0][1] + j[1][1] * j[1][1] + lambda,
                ],
            ];
            let rhs = [
                -(j[0][0] * r.re + j[1][0] * r.im),
                -(j[0][1] * r.re + j[1][1] * r.im),
            ];
            let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
            if det.abs() <= S::of(1e-300) {
                lambda = (lambda * S::of(10.0)).max(S::of(1e-10));
                continue;
            }
            let step_g = (rhs[0] * jtj[1][1] - rhs[1] * jtj[0][1]) / det;
            let step_f = (rhs[1] * jtj[0][0] - rhs[0] * jtj[1][0]) / det;
            let cand = FieldPoint::new(p.gamma + step_g, p.f + step_f);
            let val = self.eta(cand).norm();
            if val < r.norm() {
                p = cand;
                lambda = lambda * S::of(0.5);
                if val < best_val {
                    best_val = val;
                    best = p;
                }
            } else {
                lambda = lambda * S::of(10.0);
                if lambda > S::of(1e20) {
                    break;
                }
            }
        }
        let rel_g = ((best.gamma - self.center.gamma) / scale_g).abs();
        let rel_f = ((best.f - self.center.f) / scale_f).abs();
        if rel_g > max_rel_displacement || rel_f > max_rel_displacement {
            return Err(Error::EpNotFound(format!(
                "eta root escaped the sampling region (rel. displacement {rel_g:e}, {rel_f:e})"
            )));
        }
        Ok(best)
    }
}

/// Least-squares fit of the model coefficients from `(point, E1, E2)`
/// samples (canonically the eight octagon vertices plus the center).
pub fn fit_model<S: Scalar>(
    samples: &[(FieldPoint<S>, Cplx<S>, Cplx<S>)],
    center: FieldPoint<S>,
) -> Result<TwoLevelModel<S>> {
    if samples.len() < 6 {
        return Err(Error::FitFailure(format!(
            "need at least 6 samples for the quadratic eta fit, got {}",
            samples.len()
        )));
    }
    let mut sg = S::zero();
    let mut sf = S::zero();
    for (p, _, _) in samples {
        sg = sg.max((p.gamma - center.gamma).abs());
        sf = sf.max((p.f - center.f).abs());
    }
    if sg == S::zero() || sf == S::zero() {
        return Err(Error::FitFailure(
            "degenerate sample geometry: no spread in gamma or f".into(),
        ));
    }

    // scaled design matrix keeps the normal equations well conditioned
    let design: Vec<[S; 6]> = samples
        .iter()
        .map(|(p, _, _)| {
            let x = (p.gamma - center.gamma) / sg;
            let y = (p.f - center.f) / sf;
            [S::one(), x, y, x * x, x * y, y * y]
        })
        .collect();

    let solve_lsq = |ncoef: usize, rhs: &[Cplx<S>]| -> Result<Vec<Cplx<S>>> {
        let mut nm = Array2::from_elem((ncoef, ncoef), S::zero());
        let mut bre = vec![S::zero(); ncoef];
        let mut bim = vec![S::zero(); ncoef];
        for (row, y) in design.iter().zip(rhs.iter()) {
            for a in 0..ncoef {
                for b in 0..ncoef {
                    nm[(a, b)] += row[a] * row[b];
                }
                bre[a] += row[a] * y.re;
                bim[a] += row[a] * y.im;
            }
        }
        let lu = RealLu::factor(&nm)
            .map_err(|_| Error::FitFailure("rank-deficient design matrix".into()))?;
        let cond = lu.cond_1(&nm);
        if cond > S::of(1e12) {
            return Err(Error::FitFailure(format!(
                "normal equations too ill-conditioned (cond = {cond:e})"
            )));
        }
        lu.solve(&mut bre);
        lu.solve(&mut bim);
        Ok((0..ncoef).map(|k| Cplx::new(bre[k], bim[k])).collect())
    };

    let kappa_samples: Vec<Cplx<S>> = samples.iter().map(|(_, e1, e2)| *e1 + *e2).collect();
    let eta_samples: Vec<Cplx<S>> = samples
        .iter()
        .map(|(_, e1, e2)| {
            let d = *e1 - *e2;
            d * d
        })
        .collect();

    let kc = solve_lsq(3, &kappa_samples)?;
    let ec = solve_lsq(6, &eta_samples)?;

    // unscale the coefficients back to raw (dgamma, df) powers
    let kappa_coeffs = [kc[0], kc[1] / sg, kc[2] / sf];
    let eta_coeffs = [
        ec[0],
        ec[1] / sg,
        ec[2] / sf,
        ec[3] / (sg * sg),
        ec[4] / (sg * sf),
        ec[5] / (sf * sf),
    ];

    let mut model = TwoLevelModel {
        center,
        kappa_coeffs,
        eta_coeffs,
        c: Cplx::new(S::one(), S::zero()),
        fit_residual: S::zero(),
    };

    // residual: worst matched eigenvalue error over the samples
    let mut resid = S::zero();
    for (p, e1, e2) in samples {
        let (m1, m2) = model.eigenvalues(*p);
        let direct = ((m1 - *e1).norm()).max((m2 - *e2).norm());
        let swapped = ((m1 - *e2).norm()).max((m2 - *e1).norm());
        resid = resid.max(direct.min(swapped));
    }
    model.fit_residual = resid;
    Ok(model)
}

/// Octagon vertices plus center, each with the tracked EP-pair eigenvalues
/// from the full solver; ready to feed [`fit_model`].
///
/// The pair is identified at the center (the two eigenvalues nearest
/// `target`) and tracked outward to every vertex, so a vertex landing closer
/// to a side resonance raises an ambiguity error instead of corrupting the
/// fit.
pub fn sample_octagon<S: crate::linalg::EigenScalar>(
    blocks: &crate::basis::OperatorBlocks<S>,
    b: Cplx<S>,
    center: FieldPoint<S>,
    rel_radius: S,
    target: Cplx<S>,
    opts: &crate::spectral::SolveOptions<S>,
) -> Result<Vec<(FieldPoint<S>, Cplx<S>, Cplx<S>)>> {
    use crate::linalg::c_dot;
    use crate::spectral::{solve_at, ResonanceSet};
    let chol = blocks.cholesky();
    let center_set = solve_at(blocks, center, b, target, 6.min(blocks.dim()), opts)?;
    let mut samples = Vec::with_capacity(9);
    samples.push((
        center,
        center_set.resonances[0].energy,
        center_set.resonances[1].energy,
    ));

    // Which-is-which inside the pair is irrelevant (kappa and eta are
    // symmetric in E1, E2); what must never happen is trading a pair member
    // for a side resonance. The pair's two-dimensional span is analytic even
    // through the EP, so each new set's members are scored by their c-product
    // overlap with the previous pair span and the top two win.
    let pick_pair = |prev: (&ndarray::Array1<Cplx<S>>, &ndarray::Array1<Cplx<S>>),
                     set: &ResonanceSet<S>|
     -> Result<(usize, usize)> {
        let w1 = chol.apply_lower_t(prev.0);
        let w2 = chol.apply_lower_t(prev.1);
        let mut scores: Vec<(S, usize)> = set
            .resonances
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let wj = chol.apply_lower_t(&r.vector);
                let s1 = c_dot(&w1, &wj).norm();
                let s2 = c_dot(&w2, &wj).norm();
                ((s1 * s1 + s2 * s2).sqrt(), j)
            })
            .collect();
        scores.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
        if scores.len() > 2 && scores[2].0 > scores[1].0 * S::of(0.5) {
            return Err(Error::AmbiguousTracking(format!(
                "EP-pair span overlap {:e} vs side-resonance overlap {:e}",
                scores[1].0, scores[2].0
            )));
        }
        Ok((scores[0].1, scores[1].1))
    };

    let substeps = 4usize;
    for k in 0..8 {
        let th = S::of(k as f64) * S::FRAC_PI_4();
        let mut va = center_set.resonances[0].vector.clone();
        let mut vb = center_set.resonances[1].vector.clone();
        let mut ea = center_set.resonances[0].energy;
        let mut eb = center_set.resonances[1].energy;
        for s in 1..=substeps {
            let frac = rel_radius * S::of(s as f64 / substeps as f64);
            let p = FieldPoint::new(
                center.gamma * (S::one() + frac * th.cos()),
                center.f * (S::one() + frac * th.sin()),
            );
            let mean = (ea + eb) * S::of(0.5);
            let step_target = if mean.im > S::zero() {
                Cplx::new(mean.re, S::zero())
            } else {
                mean
            };
            let vset = solve_at(blocks, p, b, step_target, 6.min(blocks.dim()), opts)?;
            let (ja, jb) = pick_pair((&va, &vb), &vset)?;
            va = vset.resonances[ja].vector.clone();
            vb = vset.resonances[jb].vector.clone();
            ea = vset.resonances[ja].energy;
            eb = vset.resonances[jb].energy;
        }
        let p = FieldPoint::new(
            center.gamma * (S::one() + rel_radius * th.cos()),
            center.f * (S::one() + rel_radius * th.sin()),
        );
        samples.push((p, ea, eb));
    }
    Ok(samples)
}

/// Explicit complex-symmetric matrix with trace `kappa` and discriminant
/// `eta`: diagonal `kappa/2 +- (c + eta/c)/4`, off-diagonal `i(c - eta/c)/4`.
pub fn build_matrix<S: Scalar>(model: &TwoLevelModel<S>, p: FieldPoint<S>) -> Result<Matrix2<S>> {
    if model.c.norm() == S::zero() {
        return Err(Error::InvalidArgument("free parameter c must be nonzero".into()));
    }
    let kappa = model.kappa(p);
    let eta = model.eta(p);
    Ok(matrix_from_kappa_eta(kappa, eta, model.c))
}

/// Matrix form for explicit `(kappa, eta, c)` (used by tests and the model
/// propagation path).
pub fn matrix_from_kappa_eta<S: Scalar>(kappa: Cplx<S>, eta: Cplx<S>, c: Cplx<S>) -> Matrix2<S> {
    let quarter = S::of(0.25);
    let half = S::of(0.5);
    let f1 = (c + eta / c) * quarter;
    let f2 = Cplx::new(S::zero(), S::one()) * (c - eta / c) * quarter;
    let kh = kappa * half;
    [[kh + f1, f2], [f2, kh - f1]]
}

/// Eigenvalues of a complex-symmetric 2x2 matrix (unordered, principal
/// branch of the square root).
pub fn m2_eigenvalues<S: Scalar>(m: &Matrix2<S>) -> (Cplx<S>, Cplx<S>) {
    let half = S::of(0.5);
    let i = Cplx::new(S::zero(), S::one());
    let mean = (m[0][0] + m[1][1]) * half;
    let dev = (m[0][0] - m[1][1]) * half;
    // dev^2 + b^2 factored as (dev + i b)(dev - i b): avoids the huge
    // cancellation the matrices of `matrix_from_kappa_eta` exhibit at
    // extreme |c|
    let w = ((dev + i * m[0][1]) * (dev - i * m[0][1])).sqrt();
    (mean + w, mean - w)
}

/// Right eigenvector of `m` for eigenvalue `lambda`, c-normalized to
/// `v^T v = 1` when possible; returns `(vector, self_orthogonal)`.
pub fn m2_eigenvector<S: Scalar>(m: &Matrix2<S>, lambda: Cplx<S>) -> ([Cplx<S>; 2], bool) {
    let ra = lambda - m[0][0];
    let rd = lambda - m[1][1];
    // pick the better-conditioned representation
    let mut v = if ra.norm() >= rd.norm() {
        [m[0][1], ra]
    } else {
        [rd, m[0][1]]
    };
    let h = v[0].norm_sqr() + v[1].norm_sqr();
    if h == S::zero() {
        // diagonal matrix: unit vector on the matching diagonal entry
        let v = if (lambda - m[0][0]).norm() <= (lambda - m[1][1]).norm() {
            [Cplx::new(S::one(), S::zero()), Cplx::new(S::zero(), S::zero())]
        } else {
            [Cplx::new(S::zero(), S::zero()), Cplx::new(S::one(), S::zero())]
        };
        return (v, false);
    }
    let q = v[0] * v[0] + v[1] * v[1];
    let self_orth = q.norm() / h < S::of(1e-8);
    if !self_orth {
        let s = q.sqrt();
        v = [v[0] / s, v[1] / s];
        // sign convention: largest-modulus component gets positive real part
        let lead = if v[0].norm() >= v[1].norm() { v[0] } else { v[1] };
        if lead.re < S::zero() || (lead.re == S::zero() && lead.im < S::zero()) {
            v = [-v[0], -v[1]];
        }
    } else {
        let s = h.sqrt();
        v = [v[0] / s, v[1] / s];
    }
    (v, self_orth)
}

pub fn m2_mulv<S: Scalar>(m: &Matrix2<S>, v: &[Cplx<S>; 2]) -> [Cplx<S>; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}
