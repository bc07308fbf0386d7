//! Time propagation of resonance populations along closed field-strength
//! loops: the full pencil dynamics `B dv/dt = -i A(gamma(t), f(t)) v`
//! (Cholesky-reduced, adaptive Runge-Kutta, with periodic instantaneous-basis
//! refreshes and converged-subspace stabilization) and the reduced 2x2 model
//! dynamics `i dv/dt = M(gamma(t), f(t), c) v`.

use ndarray::{Array1, Array2};

use crate::basis::OperatorBlocks;
use crate::linalg::{c_dot, BandedCholesky, EigenScalar};
use crate::loops::LoopSpec;
use crate::ode::{integrate, OdeOptions};
use crate::quad::trapezoid;
use crate::spectral::{
    pair_label_one_first, solve_resonances_from, track_states, Resonance, ResonanceSet,
    SolveOptions,
};
use crate::two_level::{build_matrix, m2_eigenvalues, m2_eigenvector, m2_mulv, TwoLevelModel};
use crate::{Cplx, Error, FieldPoint, Result, Scalar};

/// Integration, refresh, and stabilization controls for one propagation.
#[derive(Debug, Clone)]
pub struct PropagationSettings<S> {
    /// Relative integrator tolerance.
    pub rtol: S,
    /// Absolute integrator tolerance.
    pub atol: S,
    /// Hard cap on the internal step size (a.u. of time).
    pub max_step: S,
    /// Period of instantaneous-basis re-diagonalization (a.u. of time).
    pub refresh_interval: S,
    /// Period of the converged-subspace projection (a.u. of time).
    pub stab_interval: S,
    /// Output grid size for the 2x2 engine (the full engine records at its
    /// refresh times, where the instantaneous basis exists).
    pub output_samples: usize,
    /// Number of instantaneous eigenpairs kept around the target during the
    /// full propagation (stabilization subspace).
    pub subspace: usize,
    /// Optional half-width of an energy window around the tracked centroid;
    /// untracked states outside it are excluded from stabilization.
    pub energy_window: Option<S>,
    /// Untracked states with `Im E` above this are always excluded
    /// (upper-half-plane growth guard).
    pub im_energy_guard: S,
    /// Number of consecutive identical loops to traverse.
    pub cycles: usize,
    /// Eigensolver options for the refresh solves.
    pub solver: SolveOptions<S>,
}

impl<S: Scalar> Default for PropagationSettings<S> {
    fn default() -> Self {
        Self {
            rtol: S::of(1e-8),
            atol: S::of(1e-12),
            max_step: S::infinity(),
            refresh_interval: S::one(),
            stab_interval: S::one(),
            output_samples: 1000,
            subspace: 24,
            energy_window: None,
            im_energy_guard: S::of(1e-6),
            cycles: 1,
            solver: SolveOptions::default(),
        }
    }
}

impl<S: Scalar> PropagationSettings<S> {
    /// Defaults for a loop of duration `t_total`: 200 refreshes per cycle,
    /// stabilization at every refresh, 1000 output samples.
    pub fn for_duration(t_total: S) -> Self {
        let refresh = t_total / S::of(200.0);
        Self {
            rtol: S::of(1e-8),
            atol: S::of(1e-12),
            max_step: refresh,
            refresh_interval: refresh,
            stab_interval: refresh,
            output_samples: 1000,
            subspace: 24,
            energy_window: None,
            im_energy_guard: S::of(1e-6),
            cycles: 1,
            solver: SolveOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > S::zero() && self.atol > S::zero()) {
            return Err(Error::InvalidArgument("integrator tolerances must be positive".into()));
        }
        if !(self.refresh_interval > S::zero() && self.stab_interval > S::zero()) {
            return Err(Error::InvalidArgument("intervals must be positive".into()));
        }
        if self.stab_interval < self.max_step {
            return Err(Error::InvalidArgument(
                "stabilization interval must be at least the maximum step".into(),
            ));
        }
        if self.cycles == 0 {
            return Err(Error::InvalidArgument("cycles must be at least 1".into()));
        }
        Ok(())
    }
}

/// Time series of instantaneous-basis expansion coefficients and eigenvalue
/// trajectories along a loop.
#[derive(Debug, Clone)]
pub struct PopulationTrace<S> {
    pub times: Vec<S>,
    /// Adiabatic labels, ascending; columns of the matrices below.
    pub labels: Vec<usize>,
    /// `coefficients[(k, j)]` = alpha of `labels[j]` at `times[k]`.
    pub coefficients: Array2<Cplx<S>>,
    /// Instantaneous eigenvalues per label along the loop.
    pub energies: Array2<Cplx<S>>,
    pub loop_spec: LoopSpec<S>,
    /// Raw state vector at the final time.
    pub final_state: Array1<Cplx<S>>,
}

impl<S: Scalar> PopulationTrace<S> {
    pub fn label_column(&self, label: usize) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    /// `|alpha_label(t)|^2` series.
    pub fn population(&self, label: usize) -> Option<Vec<S>> {
        let j = self.label_column(label)?;
        Some((0..self.times.len()).map(|k| self.coefficients[(k, j)].norm_sqr()).collect())
    }

    /// Post-loop population of one label.
    pub fn final_population(&self, label: usize) -> Option<S> {
        let j = self.label_column(label)?;
        let k = self.times.len() - 1;
        Some(self.coefficients[(k, j)].norm_sqr())
    }
}

/// Instantaneous-basis expansion coefficients `alpha_j = v_j^T B v` of a
/// state vector, keyed by label (ascending).
pub fn project_coefficients<S: Scalar>(
    v: &Array1<Cplx<S>>,
    set: &ResonanceSet<S>,
    chol: &BandedCholesky<S>,
) -> Vec<(usize, Cplx<S>)> {
    let w = chol.apply_lower_t(v);
    let mut out: Vec<(usize, Cplx<S>)> = set
        .resonances
        .iter()
        .map(|r| {
            let wr = chol.apply_lower_t(&r.vector);
            (r.label, c_dot(&wr, &w))
        })
        .collect();
    out.sort_by_key(|(l, _)| *l);
    out
}

/// Projection of `v` onto the span of the converged members of `set`
/// (discards components along non-converged directions).
pub fn stabilize<S: Scalar>(
    v: &Array1<Cplx<S>>,
    set: &ResonanceSet<S>,
    chol: &BandedCholesky<S>,
) -> Array1<Cplx<S>> {
    stabilize_filtered(v, set, chol, |r| r.converged)
}

fn stabilize_filtered<S: Scalar>(
    v: &Array1<Cplx<S>>,
    set: &ResonanceSet<S>,
    chol: &BandedCholesky<S>,
    keep: impl Fn(&Resonance<S>) -> bool,
) -> Array1<Cplx<S>> {
    let w = chol.apply_lower_t(v);
    let mut out = Array1::from_elem(v.len(), Cplx::new(S::zero(), S::zero()));
    for r in &set.resonances {
        if !keep(r) {
            continue;
        }
        let wr = chol.apply_lower_t(&r.vector);
        let alpha = c_dot(&wr, &w);
        for (dst, src) in out.iter_mut().zip(r.vector.iter()) {
            *dst += alpha * *src;
        }
    }
    out
}

/// Global decay factor `exp(integral 2 Im E_label dt)` of the adiabatic
/// evolution along the traced loop.
pub fn adiabatic_decay<S: Scalar>(trace: &PopulationTrace<S>, label: usize) -> Option<S> {
    let j = trace.label_column(label)?;
    let ys: Vec<S> = (0..trace.times.len())
        .map(|k| trace.energies[(k, j)].im * S::of(2.0))
        .collect();
    Some(trapezoid(&trace.times, &ys).exp())
}


/// Right-hand side `dv/dt = -i B^{-1} A(gamma(t), f(t)) v` of the full
/// dynamics along a loop, with the complex-scaling powers folded into three
/// static block operators so each evaluation costs a few banded matvecs and
/// two bidiagonal solves.
pub struct LoopOperator<S: Scalar> {
    k_static: crate::linalg::BlockMat<S>,
    dia: crate::linalg::BlockMat<S>,
    dip: crate::linalg::BlockMat<S>,
    para: crate::linalg::BlockMat<S>,
    chol: BandedCholesky<S>,
    loop_spec: LoopSpec<S>,
    ybuf: Array1<Cplx<S>>,
}

impl<S: Scalar> LoopOperator<S> {
    pub fn new(blocks: &OperatorBlocks<S>, loop_spec: LoopSpec<S>, b: Cplx<S>) -> Self {
        let b2 = b * b;
        let mut k_static = blocks.kinetic.scaled(b2.inv());
        k_static.add_scaled(b.inv(), &blocks.coulomb);
        Self {
            k_static,
            dia: blocks.diamagnetic.scaled(b2),
            dip: blocks.dipole.scaled(b),
            para: blocks.paramagnetic.scaled(Cplx::new(S::one(), S::zero())),
            chol: blocks.cholesky().clone(),
            loop_spec,
            ybuf: Array1::from_elem(blocks.dim(), Cplx::new(S::zero(), S::zero())),
        }
    }

    pub fn rhs(&mut self, t: S, v: &Array1<Cplx<S>>, dv: &mut Array1<Cplx<S>>) {
        let p = self.loop_spec.at(t);
        let one = Cplx::new(S::one(), S::zero());
        let minus_i = Cplx::new(S::zero(), -S::one());
        self.ybuf.fill(Cplx::new(S::zero(), S::zero()));
        self.k_static.matvec_acc(one, v, &mut self.ybuf);
        self.dia.matvec_acc(
            Cplx::new(p.gamma * p.gamma * S::of(0.125), S::zero()),
            v,
            &mut self.ybuf,
        );
        self.dip.matvec_acc(Cplx::new(p.f, S::zero()), v, &mut self.ybuf);
        self.para
            .matvec_acc(Cplx::new(p.gamma * S::of(0.5), S::zero()), v, &mut self.ybuf);
        self.chol.solve_lower(&mut self.ybuf);
        self.chol.solve_lower_t(&mut self.ybuf);
        for (d, s) in dv.iter_mut().zip(self.ybuf.iter()) {
            *d = minus_i * *s;
        }
    }
}

/// Solve and track at `t_to` starting from the tracked members of `from`,
/// bisecting the parameter step whenever the matching is ambiguous or some
/// matched overlap drops below 0.8: the eigenvector rotation concentrates
/// where `eta(t)` passes close to zero, and stepping across that region
/// aliases the labels over the branch cut without any ambiguity showing up.
/// Only the EP pair (labels 1 and 2) is tracked strictly; side labels that
/// lose their identity at genuine crossings on wide loops are reported in
/// `lost` and stop being tracked, while the propagation continues (the
/// stabilization keeps every admissible instantaneous state regardless of
/// labels).
#[allow(clippy::too_many_arguments)]
fn advance_tracked<S: EigenScalar>(
    blocks: &OperatorBlocks<S>,
    b: Cplx<S>,
    loop_spec: &LoopSpec<S>,
    tracked_labels: &[usize],
    t_from: S,
    from: &ResonanceSet<S>,
    t_to: S,
    subspace: usize,
    solver: &SolveOptions<S>,
    depth: usize,
    lost: &mut Vec<usize>,
) -> Result<ResonanceSet<S>> {
    let zero = Cplx::new(S::zero(), S::zero());
    let chol = blocks.cholesky();
    let pair_labels: Vec<usize> =
        tracked_labels.iter().copied().filter(|l| *l <= 2).collect();
    let side_labels: Vec<usize> =
        tracked_labels.iter().copied().filter(|l| *l > 2).collect();
    let prev_tracked = ResonanceSet {
        point: from.point,
        b: from.b,
        resonances: from
            .resonances
            .iter()
            .filter(|r| pair_labels.contains(&r.label))
            .cloned()
            .collect(),
    };
    let point = loop_spec.at(t_to);
    let pencil = blocks.build_pencil(point, b)?;
    let mut centroid = zero;
    let mut start = Array1::from_elem(blocks.dim(), zero);
    for r in &prev_tracked.resonances {
        centroid += r.energy;
        for (s, x) in start.iter_mut().zip(r.vector.iter()) {
            *s += *x;
        }
    }
    centroid /= Cplx::new(S::of(prev_tracked.len().max(1) as f64), S::zero());
    if centroid.im > S::zero() {
        centroid = Cplx::new(centroid.re, S::zero());
    }
    let mut next = solve_resonances_from(
        &pencil,
        blocks,
        centroid,
        subspace,
        solver,
        Some(&start),
    )?;
    // the pair's mixing angle advances with arg(eta); a large relative jump
    // of eta = (E1 - E2)^2 between step ends means the eigenvectors may have
    // rotated through a swap that overlap matching alone cannot see
    let eta_jump = {
        let ea = prev_tracked.by_label(1).map(|r| r.energy);
        let eb = prev_tracked.by_label(2).map(|r| r.energy);
        match (ea, eb) {
            (Some(ea), Some(eb)) => {
                let eta_from = (ea - eb) * (ea - eb);
                let mean = (ea + eb) * S::of(0.5);
                let mut ds: Vec<(S, Cplx<S>)> = next
                    .resonances
                    .iter()
                    .map(|r| ((r.energy - mean).norm(), r.energy))
                    .collect();
                ds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
                let d = ds[0].1 - ds[1].1;
                let eta_to = d * d;
                (eta_to - eta_from).norm()
                    > S::of(0.6) * eta_from.norm().min(eta_to.norm())
            }
            _ => false,
        }
    };
    let outcome = track_states(&prev_tracked, &mut next, chol);
    let needs_split = eta_jump
        || match &outcome {
            Ok(report) => report.min_overlap() < S::of(0.8),
            Err(Error::AmbiguousTracking(_)) => true,
            Err(_) => false,
        };
    if !needs_split {
        outcome?;
        return Ok(next);
    }
    if depth >= 16 {
        return match outcome {
            Err(e) => Err(e),
            Ok(report) => Err(Error::AmbiguousTracking(format!(
                "eigenvector rotation not resolved at t = {:e} even after bisection                  (weakest overlap {:e})",
                t_to.to_f64().unwrap_or(f64::NAN),
                report.min_overlap().to_f64().unwrap_or(f64::NAN)
            ))),
        };
    }
    let t_mid = (t_from + t_to) * S::of(0.5);
    let mid = advance_tracked(
        blocks,
        b,
        loop_spec,
        tracked_labels,
        t_from,
        from,
        t_mid,
        subspace,
        solver,
        depth + 1,
    )?;
    advance_tracked(
        blocks,
        b,
        loop_spec,
        tracked_labels,
        t_mid,
        &mid,
        t_to,
        subspace,
        solver,
        depth + 1,
    )
}

/// Propagate the full pencil dynamics for `init_label`, starting from the
/// (converged) resonance of that label in `init`.
pub fn propagate_full<S: EigenScalar>(
    blocks: &OperatorBlocks<S>,
    loop_spec: &LoopSpec<S>,
    b: Cplx<S>,
    init: &ResonanceSet<S>,
    init_label: usize,
    settings: &PropagationSettings<S>,
) -> Result<PopulationTrace<S>> {
    settings.validate()?;
    loop_spec.validate()?;
    let start_point = loop_spec.at(S::zero());
    let rel = |a: S, b: S| (a - b).abs() / (a.abs() + b.abs() + S::of(1e-300));
    if rel(init.point.gamma, start_point.gamma) > S::of(1e-9)
        || rel(init.point.f, start_point.f) > S::of(1e-9)
    {
        return Err(Error::InvalidArgument(
            "initial resonance set was solved away from the loop start point".into(),
        ));
    }
    let r0 = init
        .by_label(init_label)
        .ok_or_else(|| Error::InvalidArgument(format!("init set lacks label {init_label}")))?;
    if !r0.converged {
        return Err(Error::InvalidArgument(format!(
            "initial resonance (label {init_label}) is not flagged converged"
        )));
    }
    propagate_full_from(blocks, loop_spec, b, r0.vector.clone(), init, settings)
}

/// As [`propagate_full`] but starting from an arbitrary state vector
/// expanded in the same basis (used for loop-composition checks).
pub fn propagate_full_from<S: EigenScalar>(
    blocks: &OperatorBlocks<S>,
    loop_spec: &LoopSpec<S>,
    b: Cplx<S>,
    v0: Array1<Cplx<S>>,
    init: &ResonanceSet<S>,
    settings: &PropagationSettings<S>,
) -> Result<PopulationTrace<S>> {
    settings.validate()?;
    let m = blocks.dim();
    if v0.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "state vector length {} vs basis dimension {m}",
            v0.len()
        )));
    }
    let chol = blocks.cholesky();
    let period = loop_spec.period;
    let total = period * S::of(settings.cycles as f64);
    let tracked_labels = init.labels();

    // merged event grid: refresh times and stabilization times
    let mut events: Vec<(S, bool, bool)> = Vec::new(); // (t, refresh?, stabilize?)
    {
        let n_ref = (total / settings.refresh_interval).round().to_f64().unwrap() as usize;
        let n_stab = (total / settings.stab_interval).round().to_f64().unwrap() as usize;
        let mut ts: Vec<(S, bool, bool)> = Vec::new();
        for k in 1..=n_ref.max(1) {
            ts.push((total * S::of(k as f64 / n_ref.max(1) as f64), true, false));
        }
        for k in 1..=n_stab.max(1) {
            ts.push((total * S::of(k as f64 / n_stab.max(1) as f64), false, true));
        }
        ts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let tol = total * S::of(1e-12);
        for (t, rf, st) in ts {
            if let Some(last) = events.last_mut() {
                if (t - last.0).abs() <= tol {
                    last.1 |= rf;
                    last.2 |= st;
                    continue;
                }
            }
            events.push((t, rf, st));
        }
        if let Some(last) = events.last_mut() {
            // the endpoint always records a refresh
            if (last.0 - total).abs() <= tol {
                last.1 = true;
            } else {
                events.push((total, true, true));
            }
        }
    }

    let mut op = LoopOperator::new(blocks, loop_spec.clone(), b);
    let mut rhs = move |t: S, v: &Array1<Cplx<S>>, dv: &mut Array1<Cplx<S>>| {
        op.rhs(t, v, dv);
    };

    let ode_opts = OdeOptions {
        rtol: settings.rtol,
        atol: settings.atol,
        max_step: settings.max_step,
        initial_step: None,
        max_steps: 500_000_000,
    };

    let n_events = events.len();
    let n_labels = tracked_labels.len();
    let zero = Cplx::new(S::zero(), S::zero());
    let mut times = Vec::with_capacity(n_events + 1);
    let mut alphas: Vec<Vec<Cplx<S>>> = Vec::with_capacity(n_events + 1);
    let mut energy_rows: Vec<Vec<Cplx<S>>> = Vec::with_capacity(n_events + 1);

    let record =
        |set: &ResonanceSet<S>, v: &Array1<Cplx<S>>| -> (Vec<Cplx<S>>, Vec<Cplx<S>>) {
            let amap = project_coefficients(v, set, chol);
            let mut arow = Vec::with_capacity(n_labels);
            let mut erow = Vec::with_capacity(n_labels);
            for l in &tracked_labels {
                let a = amap
                    .iter()
                    .find(|(lbl, _)| lbl == l)
                    .map(|(_, a)| *a)
                    .unwrap_or(zero);
                arow.push(a);
                let e = set.by_label(*l).map(|r| r.energy).unwrap_or(zero);
                erow.push(e);
            }
            (arow, erow)
        };

    let mut v = v0;
    let mut current = init.clone();
    times.push(S::zero());
    {
        let (a, e) = record(&current, &v);
        alphas.push(a);
        energy_rows.push(e);
    }

    let subspace = settings.subspace.max(n_labels).min(m);
    let mut t_prev = S::zero();
    for (t_ev, is_refresh, is_stab) in events {
        let (vend, _stats) = integrate(&mut rhs, t_prev, t_ev, &v, &ode_opts, &[], |_, _, _| {})
            .map_err(|e| match e {
                Error::IntegrationFailure { t, msg } => Error::IntegrationFailure { t, msg },
                other => other,
            })?;
        v = vend;

        // instantaneous basis at t_ev, bisecting over fast rotations
        current = advance_tracked(
            blocks,
            b,
            loop_spec,
            &tracked_labels,
            t_prev,
            &current,
            t_ev,
            subspace,
            &settings.solver,
            0,
        )
        .map_err(|e| Error::IntegrationFailure {
            t: t_ev.to_f64().unwrap_or(f64::NAN),
            msg: format!("{e}"),
        })?;
        let target = {
            let mut centroid = zero;
            let mut ntr = 0usize;
            for l in &tracked_labels {
                if let Some(r) = current.by_label(*l) {
                    centroid += r.energy;
                    ntr += 1;
                }
            }
            let c = centroid / Cplx::new(S::of(ntr.max(1) as f64), S::zero());
            if c.im > S::zero() {
                Cplx::new(c.re, S::zero())
            } else {
                c
            }
        };

        if is_refresh {
            times.push(t_ev);
            let (a, e) = record(&current, &v);
            alphas.push(a);
            energy_rows.push(e);
        }
        if is_stab {
            let window = settings.energy_window;
            let guard = settings.im_energy_guard;
            let tracked = &tracked_labels;
            // tracked members span the active physics and always stay,
            // whatever their stability flag: projecting one of the mixing
            // pair out would pin the state to the other branch (a projective
            // Zeno drag) instead of merely discarding numerical junk
            v = stabilize_filtered(&v, &current, chol, |r| {
                if tracked.contains(&r.label) {
                    true
                } else {
                    let in_window = window
                        .map(|w| (r.energy - target).norm() <= w)
                        .unwrap_or(true);
                    in_window && r.energy.im <= guard
                }
            });
        }
        t_prev = t_ev;
    }

    let nt = times.len();
    let coeffs = Array2::from_shape_fn((nt, n_labels), |(k, j)| alphas[k][j]);
    let energies = Array2::from_shape_fn((nt, n_labels), |(k, j)| energy_rows[k][j]);
    Ok(PopulationTrace {
        times,
        labels: tracked_labels,
        coefficients: coeffs,
        energies,
        loop_spec: loop_spec.clone(),
        final_state: v,
    })
}

/// Two-state instantaneous eigenbasis at one time of the 2x2 engine.
#[derive(Clone)]
struct PairBasis<S> {
    energies: [Cplx<S>; 2],
    vectors: [[Cplx<S>; 2]; 2],
    /// labels[k] is the adiabatic label of eigenpair k
    labels: [usize; 2],
}

fn pair_basis_at<S: Scalar>(
    model: &TwoLevelModel<S>,
    p: FieldPoint<S>,
) -> Result<([Cplx<S>; 2], [[Cplx<S>; 2]; 2])> {
    let m = build_matrix(model, p)?;
    let (e1, e2) = m2_eigenvalues(&m);
    let (v1, s1) = m2_eigenvector(&m, e1);
    let (v2, s2) = m2_eigenvector(&m, e2);
    if s1 || s2 {
        return Err(Error::SelfOrthogonal(0.0));
    }
    Ok(([e1, e2], [v1, v2]))
}

/// Track the two-state basis continuously from `prev`, flipping signs so the
/// matched c-product overlaps have positive real part.
fn track_pair<S: Scalar>(
    prev: &PairBasis<S>,
    energies: [Cplx<S>; 2],
    vectors: [[Cplx<S>; 2]; 2],
) -> Result<(PairBasis<S>, S)> {
    // overlaps o[prev][next] under the plain bilinear product
    let ov = |a: &[Cplx<S>; 2], b: &[Cplx<S>; 2]| a[0] * b[0] + a[1] * b[1];
    let o00 = ov(&prev.vectors[0], &vectors[0]);
    let o01 = ov(&prev.vectors[0], &vectors[1]);
    let (perm, o_first) = if o00.norm() >= o01.norm() {
        ([0usize, 1usize], o00)
    } else {
        ([1usize, 0usize], o01)
    };
    let second = if perm[0] == 0 { o01.norm() } else { o00.norm() };
    if second >= o_first.norm() * S::of(0.9) {
        return Err(Error::AmbiguousTracking(
            "two-level tracking needs a finer step".into(),
        ));
    }
    let mut out = PairBasis {
        energies: [energies[perm[0]], energies[perm[1]]],
        vectors: [vectors[perm[0]], vectors[perm[1]]],
        labels: prev.labels,
    };
    let mut min_ov = S::infinity();
    for k in 0..2 {
        let o = ov(&prev.vectors[k], &out.vectors[k]);
        min_ov = min_ov.min(o.norm());
        if o.re < S::zero() {
            out.vectors[k][0] = -out.vectors[k][0];
            out.vectors[k][1] = -out.vectors[k][1];
        }
    }
    Ok((out, min_ov))
}

/// Advance the two-state basis from `t_from` to `t_to`, bisecting in time
/// when the eigenvectors rotate too much for unambiguous matching.
fn advance_pair<S: Scalar>(
    model: &TwoLevelModel<S>,
    loop_spec: &LoopSpec<S>,
    basis: &PairBasis<S>,
    t_from: S,
    t_to: S,
    depth: usize,
) -> Result<PairBasis<S>> {
    let eta_from = model.eta(loop_spec.at(t_from));
    let eta_to = model.eta(loop_spec.at(t_to));
    let eta_jump =
        (eta_to - eta_from).norm() > S::of(0.6) * eta_from.norm().min(eta_to.norm());
    let attempt = pair_basis_at(model, loop_spec.at(t_to))
        .and_then(|(e, vv)| track_pair(basis, e, vv));
    let needs_split = eta_jump
        || match &attempt {
            Ok((_, min_ov)) => *min_ov < S::of(0.8),
            Err(Error::AmbiguousTracking(_)) => true,
            Err(_) => false,
        };
    if !needs_split {
        return attempt.map(|(b, _)| b);
    }
    if depth >= 40 {
        return match attempt {
            Ok((b, _)) => Ok(b),
            Err(e) => Err(e),
        };
    }
    let t_mid = (t_from + t_to) * S::of(0.5);
    let mid = advance_pair(model, loop_spec, basis, t_from, t_mid, depth + 1)?;
    advance_pair(model, loop_spec, &mid, t_mid, t_to, depth + 1)
}

/// Walk the pair basis along the ellipse from angle 0 to `phi0` (the state
/// labeled #1 at a nonzero starting angle is the adiabatic continuation of
/// the #1 defined at angle zero, which makes the transfer 4 pi-periodic in
/// the starting angle).
fn pair_basis_at_start<S: Scalar>(
    model: &TwoLevelModel<S>,
    loop_spec: &LoopSpec<S>,
) -> Result<PairBasis<S>> {
    let base = LoopSpec { phi0: S::zero(), ..loop_spec.clone() };
    let (e, vv) = pair_basis_at(model, base.at(S::zero()))?;
    let one_first = pair_label_one_first(e[0], e[1]);
    let labels = if one_first { [1, 2] } else { [2, 1] };
    let mut basis = PairBasis { energies: e, vectors: vv, labels };
    let phi0 = loop_spec.phi0;
    if phi0 == S::zero() {
        return Ok(basis);
    }
    // walk in angle; the ellipse at angle phi equals the base loop at
    // t = phi/(2 pi) * T, and the bisecting advance keeps the matching
    // unambiguous through fast rotations
    let two_pi = S::of(2.0) * S::PI();
    let steps_per_turn = 256usize;
    let total_steps =
        ((phi0 / two_pi * S::of(steps_per_turn as f64)).abs().ceil().to_f64().unwrap() as usize)
            .max(1);
    let mut t_prev = S::zero();
    for k in 1..=total_steps {
        let phi = phi0 * S::of(k as f64 / total_steps as f64);
        let t_equiv = phi / two_pi * base.period;
        basis = advance_pair(model, &base, &basis, t_prev, t_equiv, 0)?;
        t_prev = t_equiv;
    }
    Ok(basis)
}

/// Propagate the 2x2 model dynamics for the state labeled `init_label` at
/// the loop start.
pub fn propagate_two_level<S: Scalar>(
    model: &TwoLevelModel<S>,
    loop_spec: &LoopSpec<S>,
    init_label: usize,
    settings: &PropagationSettings<S>,
) -> Result<PopulationTrace<S>> {
    settings.validate()?;
    loop_spec.validate()?;
    if init_label != 1 && init_label != 2 {
        return Err(Error::InvalidArgument(
            "the two-level engine tracks labels 1 and 2".into(),
        ));
    }
    let total = loop_spec.period * S::of(settings.cycles as f64);
    let mut basis = pair_basis_at_start(model, loop_spec)?;
    let init_k = basis
        .labels
        .iter()
        .position(|&l| l == init_label)
        .expect("pair labels are {1, 2}");
    let v0 = Array1::from_vec(vec![basis.vectors[init_k][0], basis.vectors[init_k][1]]);

    let n_out = settings.output_samples.max(2);
    let sample_times: Vec<S> = (0..=n_out)
        .map(|k| total * S::of(k as f64 / n_out as f64))
        .collect();

    let lspec = loop_spec.clone();
    let model_c = model.clone();
    let minus_i = Cplx::new(S::zero(), -S::one());
    let mut rhs = move |t: S, v: &Array1<Cplx<S>>, dv: &mut Array1<Cplx<S>>| {
        let m = build_matrix(&model_c, lspec.at(t)).expect("validated free parameter");
        let mv = m2_mulv(&m, &[v[0], v[1]]);
        dv[0] = minus_i * mv[0];
        dv[1] = minus_i * mv[1];
    };

    let ode_opts = OdeOptions {
        rtol: settings.rtol,
        atol: settings.atol,
        max_step: settings.max_step,
        initial_step: None,
        max_steps: 500_000_000,
    };

    let nt = sample_times.len();
    let zero = Cplx::new(S::zero(), S::zero());
    let mut times = Vec::with_capacity(nt);
    let mut coeffs = Array2::from_elem((nt, 2), zero);
    let mut energies = Array2::from_elem((nt, 2), zero);
    let mut track_error: Option<Error> = None;
    {
        let model_s = model.clone();
        let lspec_s = loop_spec.clone();
        let basis_ref = &mut basis;
        let times_ref = &mut times;
        let coeffs_ref = &mut coeffs;
        let energies_ref = &mut energies;
        let err_ref = &mut track_error;
        let (_vend, _stats) = integrate(
            &mut rhs,
            S::zero(),
            total,
            &v0,
            &ode_opts,
            &sample_times,
            |k, t, y| {
                if err_ref.is_some() {
                    return;
                }
                if t > S::zero() {
                    let t_prev = times_ref.last().copied().unwrap_or(S::zero());
                    match advance_pair(&model_s, &lspec_s, basis_ref, t_prev, t, 0) {
                        Ok(nb) => *basis_ref = nb,
                        Err(e) => {
                            *err_ref = Some(e);
                            return;
                        }
                    }
                }
                times_ref.push(t);
                for slot in 0..2 {
                    // column order by label: labels [1, 2]
                    let kvec = basis_ref.labels.iter().position(|&l| l == slot + 1).unwrap();
                    let alpha = basis_ref.vectors[kvec][0] * y[0] + basis_ref.vectors[kvec][1] * y[1];
                    coeffs_ref[(k, slot)] = alpha;
                    energies_ref[(k, slot)] = basis_ref.energies[kvec];
                }
            },
        )?;
        if let Some(e) = track_error {
            return Err(e);
        }
        // final state for composition checks
        let vend = _vend;
        return Ok(PopulationTrace {
            times,
            labels: vec![1, 2],
            coefficients: coeffs,
            energies,
            loop_spec: loop_spec.clone(),
            final_state: vend,
        });
    }
}
