//! Adaptive Dormand-Prince 5(4) integration of complex first-order systems
//! with dense output.

use ndarray::Array1;

use crate::{Cplx, Error, Result, Scalar};

#[derive(Debug, Clone)]
pub struct OdeOptions<S> {
    pub rtol: S,
    pub atol: S,
    pub max_step: S,
    pub initial_step: Option<S>,
    pub max_steps: usize,
}

impl<S: Scalar> Default for OdeOptions<S> {
    fn default() -> Self {
        Self {
            rtol: S::of(1e-8),
            atol: S::of(1e-12),
            max_step: S::infinity(),
            initial_step: None,
            max_steps: 200_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OdeStats {
    pub steps: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

// Dormand-Prince 5(4) tableau
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// dense-output coefficients
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

type CVec<S> = Array1<Cplx<S>>;

fn axpy_many<S: Scalar>(y: &CVec<S>, h: S, terms: &[(f64, &CVec<S>)], out: &mut CVec<S>) {
    let n = y.len();
    for i in 0..n {
        let mut acc = Cplx::new(S::zero(), S::zero());
        for (c, k) in terms {
            acc += k[i] * S::of(*c);
        }
        out[i] = y[i] + acc * h;
    }
}

/// Integrate `dy/dt = rhs(t, y)` from `t0` to `t1`, invoking `on_sample` at
/// every requested time (strictly increasing, inside `[t0, t1]`) with
/// dense-output accuracy. Returns the final state.
#[allow(clippy::too_many_arguments)]
pub fn integrate<S, F, G>(
    mut rhs: F,
    t0: S,
    t1: S,
    y0: &CVec<S>,
    opts: &OdeOptions<S>,
    sample_times: &[S],
    mut on_sample: G,
) -> Result<(CVec<S>, OdeStats)>
where
    S: Scalar,
    F: FnMut(S, &CVec<S>, &mut CVec<S>),
    G: FnMut(usize, S, &CVec<S>),
{
    let n = y0.len();
    let zero = Cplx::new(S::zero(), S::zero());
    let span = t1 - t0;
    let mut stats = OdeStats::default();
    if span <= S::zero() {
        return Err(Error::InvalidArgument("integration span must be positive".into()));
    }
    let mut sample_idx = 0usize;
    // samples exactly at the start are emitted immediately
    while sample_idx < sample_times.len() && sample_times[sample_idx] <= t0 {
        on_sample(sample_idx, t0, y0);
        sample_idx += 1;
    }

    let mut t = t0;
    let mut y = y0.clone();
    let mut k1 = Array1::from_elem(n, zero);
    rhs(t, &y, &mut k1);
    stats.rhs_evals += 1;
    let mut k2 = Array1::from_elem(n, zero);
    let mut k3 = Array1::from_elem(n, zero);
    let mut k4 = Array1::from_elem(n, zero);
    let mut k5 = Array1::from_elem(n, zero);
    let mut k6 = Array1::from_elem(n, zero);
    let mut k7 = Array1::from_elem(n, zero);
    let mut ytmp = Array1::from_elem(n, zero);
    let mut ynew = Array1::from_elem(n, zero);

    let mut h = opts
        .initial_step
        .unwrap_or(span * S::of(1e-4))
        .min(opts.max_step)
        .min(span);
    let hmin = span * S::epsilon() * S::of(16.0);

    loop {
        if t >= t1 {
            break;
        }
        if stats.steps + stats.rejected >= opts.max_steps {
            return Err(Error::IntegrationFailure {
                t: t.to_f64().unwrap_or(f64::NAN),
                msg: format!("step budget of {} exhausted", opts.max_steps),
            });
        }
        if t + h > t1 {
            h = t1 - t;
        }

        axpy_many(&y, h, &[(A21, &k1)], &mut ytmp);
        rhs(t + S::of(C2) * h, &ytmp, &mut k2);
        axpy_many(&y, h, &[(A31, &k1), (A32, &k2)], &mut ytmp);
        rhs(t + S::of(C3) * h, &ytmp, &mut k3);
        axpy_many(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)], &mut ytmp);
        rhs(t + S::of(C4) * h, &ytmp, &mut k4);
        axpy_many(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], &mut ytmp);
        rhs(t + S::of(C5) * h, &ytmp, &mut k5);
        axpy_many(
            &y,
            h,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            &mut ytmp,
        );
        rhs(t + h, &ytmp, &mut k6);
        axpy_many(
            &y,
            h,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
            &mut ynew,
        );
        rhs(t + h, &ynew, &mut k7);
        stats.rhs_evals += 6;

        // embedded 4th-order error estimate
        let mut err_acc = S::zero();
        for i in 0..n {
            let e = (k1[i] * S::of(E1)
                + k3[i] * S::of(E3)
                + k4[i] * S::of(E4)
                + k5[i] * S::of(E5)
                + k6[i] * S::of(E6)
                + k7[i] * S::of(E7))
                * h;
            let sc = opts.atol + opts.rtol * y[i].norm().max(ynew[i].norm());
            let r = e.norm() / sc;
            err_acc += r * r;
        }
        let err = (err_acc / S::of(n as f64)).sqrt();

        if err <= S::one() {
            // accepted; serve dense-output samples inside (t, t + h]
            if sample_idx < sample_times.len() && sample_times[sample_idx] <= t + h {
                // rcont coefficients of the quartic interpolant
                let mut cont = Vec::with_capacity(5);
                let ydiff: CVec<S> =
                    Array1::from_shape_fn(n, |i| ynew[i] - y[i]);
                let bspl: CVec<S> =
                    Array1::from_shape_fn(n, |i| k1[i] * h - ydiff[i]);
                let c4v: CVec<S> =
                    Array1::from_shape_fn(n, |i| ydiff[i] - k7[i] * h - bspl[i]);
                let c5v: CVec<S> = Array1::from_shape_fn(n, |i| {
                    (k1[i] * S::of(D1)
                        + k3[i] * S::of(D3)
                        + k4[i] * S::of(D4)
                        + k5[i] * S::of(D5)
                        + k6[i] * S::of(D6)
                        + k7[i] * S::of(D7))
                        * h
                });
                cont.push(y.clone());
                cont.push(ydiff);
                cont.push(bspl);
                cont.push(c4v);
                cont.push(c5v);
                while sample_idx < sample_times.len() && sample_times[sample_idx] <= t + h {
                    let ts = sample_times[sample_idx];
                    let theta = ((ts - t) / h).min(S::one()).max(S::zero());
                    let th1 = S::one() - theta;
                    let yi = Array1::from_shape_fn(n, |i| {
                        cont[0][i]
                            + (cont[1][i]
                                + (cont[2][i] + (cont[3][i] + cont[4][i] * th1) * theta) * th1)
                                * theta
                    });
                    on_sample(sample_idx, ts, &yi);
                    sample_idx += 1;
                }
            }
            t = t + h;
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7); // FSAL
            stats.steps += 1;
            let fac = S::of(0.9) * err.max(S::of(1e-10)).powf(S::of(-0.2));
            h = (h * fac.min(S::of(5.0)).max(S::of(0.2))).min(opts.max_step);
        } else {
            stats.rejected += 1;
            let fac = S::of(0.9) * err.powf(S::of(-0.2));
            h = h * fac.min(S::one()).max(S::of(0.1));
            if h < hmin {
                return Err(Error::IntegrationFailure {
                    t: t.to_f64().unwrap_or(f64::NAN),
                    msg: format!("step size underflow (h = {h:e})"),
                });
            }
        }
    }
    // flush any samples that coincide with the endpoint
    while sample_idx < sample_times.len() && sample_times[sample_idx] <= t1 + hmin {
        on_sample(sample_idx, t1, &y);
        sample_idx += 1;
    }
    Ok((y, stats))
}
