//! Derivative-free downhill-simplex minimization.

use crate::Scalar;

#[derive(Debug, Clone)]
pub struct SimplexOptions<S> {
    /// Stop when the relative spread of simplex values drops below this.
    pub rel_tol: S,
    pub max_evals: usize,
}

impl<S: Scalar> Default for SimplexOptions<S> {
    fn default() -> Self {
        Self { rel_tol: S::of(1e-4), max_evals: 400 }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexOutcome<S> {
    pub x: Vec<S>,
    pub value: S,
    pub evals: usize,
    /// False when the evaluation budget ran out before the tolerance was met.
    pub converged: bool,
}

/// Nelder-Mead minimization of `f` starting at `x0` with per-coordinate
/// initial displacements `steps`. Infeasible regions can be fenced off by
/// returning infinity from `f`.
pub fn nelder_mead<S: Scalar>(
    mut f: impl FnMut(&[S]) -> S,
    x0: &[S],
    steps: &[S],
    opts: &SimplexOptions<S>,
) -> SimplexOutcome<S> {
    assert_eq!(x0.len(), steps.len());
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[S], evals: &mut usize| -> S {
        *evals += 1;
        f(x)
    };

    let mut simplex: Vec<(Vec<S>, S)> = Vec::with_capacity(n + 1);
    let v0 = x0.to_vec();
    let f0 = eval(&v0, &mut evals);
    simplex.push((v0, f0));
    for d in 0..n {
        let mut v = x0.to_vec();
        v[d] += steps[d];
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }

    let alpha = S::one(); // reflection
    let gamma = S::of(2.0); // expansion
    let rho = S::of(0.5); // contraction
    let sigma = S::of(0.5); // shrink

    let mut converged = false;
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = (worst - best).abs();
        if spread <= opts.rel_tol * (best.abs() + S::of(1e-30)) {
            converged = true;
            break;
        }

        // centroid of all but the worst vertex
        let mut centroid = vec![S::zero(); n];
        for (v, _) in simplex.iter().take(n) {
            for (c, x) in centroid.iter_mut().zip(v.iter()) {
                *c += *x;
            }
        }
        for c in centroid.iter_mut() {
            *c = *c / S::of(n as f64);
        }

        let blend = |a: &[S], b: &[S], w: S| -> Vec<S> {
            a.iter().zip(b.iter()).map(|(x, y)| *x + (*x - *y) * w).collect()
        };
        let reflected = blend(&centroid, &simplex[n].0, alpha);
        let fr = eval(&reflected, &mut evals);
        if fr < simplex[0].1 {
            let expanded = blend(&centroid, &simplex[n].0, gamma);
            let fe = eval(&expanded, &mut evals);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            // contract toward the better of worst/reflected
            let (base, fb) = if fr < simplex[n].1 {
                (reflected.clone(), fr)
            } else {
                (simplex[n].0.clone(), simplex[n].1)
            };
            let contracted: Vec<S> = centroid
                .iter()
                .zip(base.iter())
                .map(|(c, x)| *c + (*x - *c) * rho)
                .collect();
            let fc = eval(&contracted, &mut evals);
            if fc < fb {
                simplex[n] = (contracted, fc);
            } else {
                // shrink everything toward the best vertex
                let best_v = simplex[0].0.clone();
                for vert in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<S> = best_v
                        .iter()
                        .zip(vert.0.iter())
                        .map(|(b, x)| *b + (*x - *b) * sigma)
                        .collect();
                    let fs = eval(&shrunk, &mut evals);
                    *vert = (shrunk, fs);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    SimplexOutcome {
        x: simplex[0].0.clone(),
        value: simplex[0].1,
        evals,
        converged,
    }
}
