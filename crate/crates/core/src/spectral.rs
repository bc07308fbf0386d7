//! Generalized eigensolvers for the complex-symmetric pencil, c-product
//! normalization, adiabatic label tracking, convergence assessment, and EP
//! location.

use ndarray::{s, Array1, Array2};

use crate::basis::{assemble_operator_blocks, OperatorBlocks, Pencil};
use crate::linalg::{arnoldi, c_dot, norm2, BandedCholesky, BandedLu, BlockMat, EigenScalar};
use crate::two_level::TwoLevelModel;
use crate::{Cplx, Error, FieldPoint, Result, Scalar};

/// One c-normalized eigenpair with a tracking label.
#[derive(Debug, Clone)]
pub struct Resonance<S> {
    pub energy: Cplx<S>,
    pub vector: Array1<Cplx<S>>,
    pub label: usize,
    pub converged: bool,
    /// Set when `|v^T B v|` vanished relative to the Hermitian norm (EP
    /// degeneracy); such vectors carry unit Hermitian norm instead.
    pub self_orthogonal: bool,
}

/// Eigenpairs of one pencil, c-normalized and labeled.
#[derive(Debug, Clone)]
pub struct ResonanceSet<S> {
    pub point: FieldPoint<S>,
    pub b: Cplx<S>,
    pub resonances: Vec<Resonance<S>>,
}

impl<S: Scalar> ResonanceSet<S> {
    pub fn len(&self) -> usize {
        self.resonances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resonances.is_empty()
    }

    pub fn by_label(&self, label: usize) -> Option<&Resonance<S>> {
        self.resonances.iter().find(|r| r.label == label)
    }

    /// Labels in ascending order.
    pub fn labels(&self) -> Vec<usize> {
        let mut l: Vec<usize> = self.resonances.iter().map(|r| r.label).collect();
        l.sort_unstable();
        l
    }
}

/// Solver backend selection; both are exact implementations of the same
/// contract and cross-check each other in the tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverBackend {
    /// Full dense decomposition after Cholesky reduction to standard form.
    Dense,
    /// Shift-invert Arnoldi with a banded LU of `A - sigma B`.
    ShiftInvert,
    /// Dense for small problems or large subsets, shift-invert otherwise.
    #[default]
    Auto,
}

#[derive(Debug, Clone)]
pub struct SolveOptions<S> {
    pub backend: SolverBackend,
    /// Relative residual acceptance for shift-invert Ritz pairs.
    pub residual_tol: S,
    /// `|v^T B v| / ||v||_B^2` below this flags self-orthogonality.
    pub self_orth_tol: S,
    /// Retry budget for Krylov enlargement / shift perturbation.
    pub max_retries: usize,
    /// Krylov dimension override.
    pub krylov_dim: Option<usize>,
}

impl<S: Scalar> Default for SolveOptions<S> {
    fn default() -> Self {
        Self {
            backend: SolverBackend::Auto,
            residual_tol: S::of(1e-9),
            self_orth_tol: S::of(1e-8),
            max_retries: 4,
            krylov_dim: None,
        }
    }
}

/// c-normalize `v` in place: `v^T B v = 1` with the sign fixed so the
/// largest-modulus component has positive real part. Returns `true` when the
/// vector is self-orthogonal (then it gets unit Hermitian `B`-norm instead).
pub fn c_normalize_vector<S: Scalar>(
    v: &mut Array1<Cplx<S>>,
    chol: &BandedCholesky<S>,
    self_orth_tol: S,
) -> bool {
    let w = chol.apply_lower_t(v);
    let q = c_dot(&w, &w);
    let h = w.iter().map(|z| z.norm_sqr()).fold(S::zero(), |a, b| a + b);
    let ratio = q.norm() / h;
    if ratio < self_orth_tol {
        let s = h.sqrt();
        v.mapv_inplace(|z| z / s);
        return true;
    }
    let s = q.sqrt();
    v.mapv_inplace(|z| z / s);
    fix_sign(v);
    false
}

/// Flip the overall sign so the largest-modulus component has positive real
/// part (positive imaginary part when its real part vanishes).
fn fix_sign<S: Scalar>(v: &mut Array1<Cplx<S>>) {
    let mut imax = 0usize;
    let mut best = S::zero();
    for (i, z) in v.iter().enumerate() {
        let n = z.norm_sqr();
        if n > best {
            best = n;
            imax = i;
        }
    }
    let lead = v[imax];
    if lead.re < S::zero() || (lead.re == S::zero() && lead.im < S::zero()) {
        v.mapv_inplace(|z| -z);
    }
}

/// Re-normalize every member of a set (idempotent on already-normalized
/// sets); self-orthogonal members are flagged and left at unit Hermitian
/// norm.
pub fn c_normalize<S: Scalar>(
    set: &mut ResonanceSet<S>,
    blocks: &OperatorBlocks<S>,
    self_orth_tol: S,
) {
    for r in &mut set.resonances {
        r.self_orthogonal = c_normalize_vector(&mut r.vector, blocks.cholesky(), self_orth_tol);
    }
}

fn dense_eigenpairs<S: EigenScalar>(
    a: &BlockMat<S>,
    ch: &BandedCholesky<S>,
) -> Result<Vec<(Cplx<S>, Array1<Cplx<S>>)>> {
    let m = a.dim();
    let a = a.to_dense();
    // Y = L^-1 A, then C = L^-1 Y^T (= L^-1 A L^-T by symmetry of A)
    let mut y = a;
    for j in 0..m {
        let mut col = y.column(j).to_owned();
        ch.solve_lower(&mut col);
        y.column_mut(j).assign(&col);
    }
    let mut c = Array2::from_elem((m, m), Cplx::new(S::zero(), S::zero()));
    for j in 0..m {
        let mut row = y.row(j).to_owned();
        ch.solve_lower(&mut row);
        c.column_mut(j).assign(&row);
    }
    let (vals, vecs) = S::dense_evd(&c)?;
    let mut out = Vec::with_capacity(m);
    for k in 0..m {
        let mut v = vecs.column(k).to_owned();
        ch.solve_lower_t(&mut v);
        out.push((vals[k], v));
    }
    Ok(out)
}

/// Relative residual `||A v - E B v|| / (||A v|| + |E| ||B v||)`.
fn pair_residual<S: Scalar>(
    a: &BlockMat<S>,
    b: &BlockMat<S>,
    e: Cplx<S>,
    v: &Array1<Cplx<S>>,
) -> S {
    let one = Cplx::new(S::one(), S::zero());
    let av = {
        let mut y = Array1::from_elem(v.len(), Cplx::new(S::zero(), S::zero()));
        a.matvec_acc(one, v, &mut y);
        y
    };
    let bv = b.matvec(v);
    let mut num = S::zero();
    for i in 0..v.len() {
        num += (av[i] - e * bv[i]).norm_sqr();
    }
    num.sqrt() / (norm2(&av) + e.norm() * norm2(&bv))
}

fn deterministic_start<S: Scalar>(m: usize) -> Array1<Cplx<S>> {
    Array1::from_shape_fn(m, |i| {
        let a = ((i.wrapping_mul(2654435761) >> 8) % 1000) as f64 / 1000.0;
        let b = ((i.wrapping_mul(40503) >> 4) % 1000) as f64 / 1000.0;
        Cplx::new(S::of(1.0 + 0.3 * a), S::of(0.1 * b))
    })
}

fn shift_invert_eigenpairs<S: EigenScalar>(
    a: &BlockMat<S>,
    b: &BlockMat<S>,
    target: Cplx<S>,
    count: usize,
    opts: &SolveOptions<S>,
    start: Option<&Array1<Cplx<S>>>,
) -> Result<Vec<(Cplx<S>, Array1<Cplx<S>>)>> {
    let m_dim = a.dim();
    let (kla, kua) = a.band_halfwidths();
    let (klb, kub) = b.band_halfwidths();
    let kl = kla.max(klb);
    let ku = kua.max(kub);
    let mut krylov = opts
        .krylov_dim
        .unwrap_or((4 * count + 16).max(48))
        .min(m_dim);
    let mut sigma = target;
    let mut start_vec = match start {
        Some(v) => v.clone(),
        None => deterministic_start(m_dim),
    };
    let mut best_report = String::new();
    for _attempt in 0..=opts.max_retries {
        // banded LU of A - sigma B; a singular shift gets nudged
        let shifted = {
            let mut sh = a.clone();
            sh.add_scaled(-sigma, b);
            sh
        };
        let lu = match BandedLu::factor(m_dim, kl, ku, shifted.entries()) {
            Ok(lu) => lu,
            Err(_) => {
                let scale = S::of(1e-8) * (S::one() + sigma.norm());
                sigma += Cplx::new(scale, scale * S::of(0.5));
                continue;
            }
        };
        let op = |x: &Array1<Cplx<S>>| {
            let mut y = b.matvec(x);
            lu.solve(&mut y);
            y
        };
        let (vs, h) = arnoldi(op, &start_vec, krylov);
        let msize = h.ncols();
        let hsq = h.slice(s![..msize, ..msize]).to_owned();
        let (thetas, yvecs) = S::dense_evd(&hsq)?;
        let mut order: Vec<usize> = (0..msize).collect();
        order.sort_by(|&a, &b| {
            thetas[b]
                .norm()
                .partial_cmp(&thetas[a].norm())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut accepted: Vec<(Cplx<S>, Array1<Cplx<S>>, S)> = Vec::new();
        let want_scan = (3 * count).min(msize);
        for &k in order.iter().take(want_scan.max(count)) {
            if thetas[k].norm() == S::zero() {
                continue;
            }
            let e = sigma + thetas[k].inv();
            let mut v = Array1::from_elem(m_dim, Cplx::new(S::zero(), S::zero()));
            for (i, vi) in vs.iter().take(msize).enumerate() {
                let c = yvecs[(i, k)];
                for (dst, src) in v.iter_mut().zip(vi.iter()) {
                    *dst += c * *src;
                }
            }
            let res = pair_residual(a, b, e, &v);
            if res < opts.residual_tol {
                // drop numerical duplicates of an already-accepted pair
                let dup = accepted.iter().any(|(ea, va, _)| {
                    (e - *ea).norm() < S::of(1e-9) * (S::one() + e.norm())
                        && crate::linalg::h_dot(va, &v).norm() / (norm2(va) * norm2(&v))
                            > S::of(0.5)
                });
                if !dup {
                    accepted.push((e, v, res));
                }
            }
        }
        if accepted.len() >= count {
            accepted.sort_by(|a, b| {
                (a.0 - target)
                    .norm()
                    .partial_cmp(&(b.0 - target).norm())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            accepted.truncate(count);
            return Ok(accepted.into_iter().map(|(e, v, _)| (e, v)).collect());
        }
        best_report = format!(
            "{} of {count} pairs converged below rel. residual {:e} with Krylov dim {krylov}",
            accepted.len(),
            opts.residual_tol
        );
        // enlarge the subspace and restart from the best accumulated guess
        if !accepted.is_empty() {
            let mut sum = Array1::from_elem(m_dim, Cplx::new(S::zero(), S::zero()));
            for (_, v, _) in &accepted {
                for (dst, src) in sum.iter_mut().zip(v.iter()) {
                    *dst += *src;
                }
            }
            start_vec = sum;
        }
        if krylov == m_dim {
            break;
        }
        krylov = (krylov * 3 / 2 + 8).min(m_dim);
    }
    Err(Error::NonConvergence(format!(
        "shift-invert Arnoldi: {best_report}"
    )))
}

/// Solve the pencil for the `count` eigenpairs nearest `target`,
/// c-normalized and labeled `1..=count` by distance from the target.
pub fn solve_resonances<S: EigenScalar>(
    pencil: &Pencil<S>,
    blocks: &OperatorBlocks<S>,
    target: Cplx<S>,
    count: usize,
    opts: &SolveOptions<S>,
) -> Result<ResonanceSet<S>> {
    solve_resonances_from(pencil, blocks, target, count, opts, None)
}

/// As [`solve_resonances`], reusing a previous eigenvector sum as the
/// iterative backend's starting subspace.
pub fn solve_resonances_from<S: EigenScalar>(
    pencil: &Pencil<S>,
    blocks: &OperatorBlocks<S>,
    target: Cplx<S>,
    count: usize,
    opts: &SolveOptions<S>,
    start: Option<&Array1<Cplx<S>>>,
) -> Result<ResonanceSet<S>> {
    let m = pencil.dim();
    if count == 0 || count > m {
        return Err(Error::InvalidArgument(format!(
            "requested {count} eigenpairs of a dimension-{m} pencil"
        )));
    }
    if target.im > S::zero() {
        return Err(Error::InvalidArgument(
            "target energy must lie in the closed lower half-plane".into(),
        ));
    }
    let backend = match opts.backend {
        SolverBackend::Auto => {
            if m <= 64 || count * 3 >= m {
                SolverBackend::Dense
            } else {
                SolverBackend::ShiftInvert
            }
        }
        other => other,
    };
    let mut pairs = match backend {
        SolverBackend::Dense => {
            let mut all = dense_eigenpairs(&pencil.a, blocks.cholesky())?;
            all.sort_by(|a, b| {
                (a.0 - target)
                    .norm()
                    .partial_cmp(&(b.0 - target).norm())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            all.truncate(count);
            all
        }
        SolverBackend::ShiftInvert => {
            shift_invert_eigenpairs(&pencil.a, &blocks.overlap, target, count, opts, start)?
        }
        SolverBackend::Auto => unreachable!(),
    };
    let mut resonances = Vec::with_capacity(count);
    for (label0, (e, v)) in pairs.iter_mut().enumerate() {
        let self_orth = c_normalize_vector(v, blocks.cholesky(), opts.self_orth_tol);
        resonances.push(Resonance {
            energy: *e,
            vector: v.clone(),
            label: label0 + 1,
            converged: false,
            self_orthogonal: self_orth,
        });
    }
    Ok(ResonanceSet { point: pencil.point, b: pencil.b, resonances })
}

/// Solve an arbitrary complex-symmetric block pencil `(A, B)` (with `B`
/// real SPD and block-tridiagonal) for the `count` eigenpairs nearest
/// `target`; vectors come back c-normalized. Both backends run behind the
/// same contract.
pub fn solve_generalized<S: EigenScalar>(
    a: &BlockMat<S>,
    b: &BlockMat<S>,
    target: Cplx<S>,
    count: usize,
    opts: &SolveOptions<S>,
) -> Result<Vec<(Cplx<S>, Array1<Cplx<S>>)>> {
    let m = a.dim();
    if count == 0 || count > m {
        return Err(Error::InvalidArgument(format!(
            "requested {count} eigenpairs of a dimension-{m} pencil"
        )));
    }
    let chol = BandedCholesky::factor(b)?;
    let backend = match opts.backend {
        SolverBackend::Auto => {
            if m <= 64 || count * 3 >= m {
                SolverBackend::Dense
            } else {
                SolverBackend::ShiftInvert
            }
        }
        other => other,
    };
    let mut pairs = match backend {
        SolverBackend::Dense => {
            let mut all = dense_eigenpairs(a, &chol)?;
            all.sort_by(|x, y| {
                (x.0 - target)
                    .norm()
                    .partial_cmp(&(y.0 - target).norm())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            all.truncate(count);
            all
        }
        SolverBackend::ShiftInvert => {
            shift_invert_eigenpairs(a, b, target, count, opts, None)?
        }
        SolverBackend::Auto => unreachable!(),
    };
    for (_, v) in pairs.iter_mut() {
        c_normalize_vector(v, &chol, opts.self_orth_tol);
    }
    Ok(pairs)
}

/// Convenience wrapper: build the pencil at `(point, b)` and solve.
pub fn solve_at<S: EigenScalar>(
    blocks: &OperatorBlocks<S>,
    point: FieldPoint<S>,
    b: Cplx<S>,
    target: Cplx<S>,
    count: usize,
    opts: &SolveOptions<S>,
) -> Result<ResonanceSet<S>> {
    let pencil = blocks.build_pencil(point, b)?;
    solve_resonances(&pencil, blocks, target, count, opts)
}

/// Deterministic initial ordering of the two EP-pair members: label #1 goes
/// to the member with the larger imaginary part (the more slowly decaying
/// state) at the starting point; ties break toward the smaller real part.
pub fn pair_label_one_first<S: Scalar>(e_a: Cplx<S>, e_b: Cplx<S>) -> bool {
    if e_a.im != e_b.im {
        e_a.im > e_b.im
    } else {
        e_a.re <= e_b.re
    }
}

/// Swap labels 1 and 2 of a freshly solved set so that the EP pair carries
/// the canonical initial ordering of [`pair_label_one_first`].
pub fn canonicalize_ep_pair<S: Scalar>(set: &mut ResonanceSet<S>) {
    let e1 = set.by_label(1).map(|r| r.energy);
    let e2 = set.by_label(2).map(|r| r.energy);
    if let (Some(e1), Some(e2)) = (e1, e2) {
        if !pair_label_one_first(e1, e2) {
            for r in &mut set.resonances {
                r.label = match r.label {
                    1 => 2,
                    2 => 1,
                    other => other,
                };
            }
        }
    }
}

/// Result of matching `next` against `prev`.
#[derive(Debug, Clone)]
pub struct TrackReport<S> {
    /// `(previous label, |overlap|)` per matched resonance of `next`, in the
    /// storage order of `next`.
    pub matches: Vec<(usize, S)>,
}

impl<S: Scalar> TrackReport<S> {
    /// Smallest matched overlap magnitude; values well below one signal a
    /// step so long that the eigenvectors rotated substantially and the
    /// matching may have aliased across the branch cut.
    pub fn min_overlap(&self) -> S {
        self.matches
            .iter()
            .map(|(_, o)| *o)
            .fold(S::infinity(), S::min)
    }
}

/// Inherit adiabatic labels from `prev` onto `next` by maximizing the
/// c-product overlap `|v_prev^T B v_next|`; vector signs are flipped so the
/// matched overlap has positive real part.
///
/// Fails when the best and second-best overlaps for some state lie within
/// 10% of each other, or when two previous states claim the same successor
/// (the path discretization is then too coarse to track unambiguously).
pub fn track_states<S: Scalar>(
    prev: &ResonanceSet<S>,
    next: &mut ResonanceSet<S>,
    chol: &BandedCholesky<S>,
) -> Result<TrackReport<S>> {
    if next.len() < prev.len() {
        return Err(Error::DimensionMismatch(format!(
            "cannot track {} states into a set of {}",
            prev.len(),
            next.len()
        )));
    }
    let wp: Vec<Array1<Cplx<S>>> =
        prev.resonances.iter().map(|r| chol.apply_lower_t(&r.vector)).collect();
    let wn: Vec<Array1<Cplx<S>>> =
        next.resonances.iter().map(|r| chol.apply_lower_t(&r.vector)).collect();
    let np = prev.len();
    let nn = next.len();
    let mut claimed = vec![usize::MAX; nn];
    let mut matches = vec![(0usize, S::zero()); nn];
    for i in 0..np {
        let mut best_j = 0usize;
        let mut best = S::neg_infinity();
        let mut second = S::neg_infinity();
        let mut best_ov = Cplx::new(S::zero(), S::zero());
        for (j, wnj) in wn.iter().enumerate() {
            let ov = c_dot(&wp[i], wnj);
            let a = ov.norm();
            if a > best {
                second = best;
                best = a;
                best_j = j;
                best_ov = ov;
            } else if a > second {
                second = a;
            }
        }
        if second >= best * S::of(0.9) {
            return Err(Error::AmbiguousTracking(format!(
                "state labeled {} at (gamma, f) = ({:e}, {:e}): best |overlap| {:e} vs runner-up {:e}",
                prev.resonances[i].label, prev.point.gamma, prev.point.f, best, second
            )));
        }
        if claimed[best_j] != usize::MAX {
            return Err(Error::AmbiguousTracking(format!(
                "states labeled {} and {} both match successor {}",
                prev.resonances[claimed[best_j]].label, prev.resonances[i].label, best_j
            )));
        }
        claimed[best_j] = i;
        matches[best_j] = (prev.resonances[i].label, best);
        next.resonances[best_j].label = prev.resonances[i].label;
        next.resonances[best_j].converged = prev.resonances[i].converged;
        if best_ov.re < S::zero() {
            next.resonances[best_j].vector.mapv_inplace(|z| -z);
        }
    }
    // any extra states get fresh labels above the tracked range
    let mut fresh = prev.resonances.iter().map(|r| r.label).max().unwrap_or(0);
    for (j, c) in claimed.iter().enumerate() {
        if *c == usize::MAX {
            fresh += 1;
            next.resonances[j].label = fresh;
            next.resonances[j].converged = false;
        }
    }
    Ok(TrackReport {
        matches: matches.into_iter().filter(|(l, _)| *l != 0).collect(),
    })
}

/// Stability test defining "numerically converged": the eigenvalue must move
/// less than `tol` under a 10% rotation-angle change and under a basis
/// enlargement `N_max -> N_max + 3`.
#[derive(Debug, Clone)]
pub struct ConvergenceCriteria<S> {
    pub angle_factor: S,
    pub n_max_increase: usize,
    pub tol: S,
}

impl<S: Scalar> Default for ConvergenceCriteria<S> {
    fn default() -> Self {
        Self { angle_factor: S::of(1.1), n_max_increase: 3, tol: S::of(1e-7) }
    }
}

/// Set the `converged` flag on every member of `set` per the stability test.
pub fn assess_convergence<S: EigenScalar>(
    blocks: &OperatorBlocks<S>,
    set: &mut ResonanceSet<S>,
    crit: &ConvergenceCriteria<S>,
    opts: &SolveOptions<S>,
) -> Result<()> {
    if set.is_empty() {
        return Ok(());
    }
    let n = set.len();
    let mut centroid = Cplx::new(S::zero(), S::zero());
    for r in &set.resonances {
        centroid += r.energy;
    }
    centroid /= Cplx::new(S::of(n as f64), S::zero());
    if centroid.im > S::zero() {
        centroid = Cplx::new(centroid.re, S::zero());
    }
    // generous margin: rotated-continuum states wander with the angle and
    // the basis size, and must not crowd genuine counterparts out of the
    // comparison window
    let count = (2 * n + 12).min(blocks.dim());

    // rotated-angle spectrum (angle scaled down if the factor would leave
    // the admissible sector)
    let theta = set.b.arg();
    let theta_mod = if theta * crit.angle_factor < S::FRAC_PI_4() {
        theta * crit.angle_factor
    } else {
        theta / crit.angle_factor
    };
    let b_mod = Cplx::from_polar(set.b.norm(), theta_mod);
    let rotated = solve_at(blocks, set.point, b_mod, centroid, count, opts)?;

    // enlarged-basis spectrum
    let mut spec_big = blocks.spec.clone();
    spec_big.n_principal_max += crit.n_max_increase;
    let blocks_big = assemble_operator_blocks(&spec_big)?;
    let enlarged = solve_at(&blocks_big, set.point, set.b, centroid, count, opts)?;

    let energies: Vec<Cplx<S>> = set.resonances.iter().map(|r| r.energy).collect();
    for (k, r) in set.resonances.iter_mut().enumerate() {
        let d_angle = rotated
            .resonances
            .iter()
            .map(|o| (o.energy - r.energy).norm())
            .fold(S::infinity(), S::min);
        let d_basis = enlarged
            .resonances
            .iter()
            .map(|o| (o.energy - r.energy).norm())
            .fold(S::infinity(), S::min);
        r.converged = d_angle < crit.tol && d_basis < crit.tol;
        if r.converged {
            continue;
        }
        // near an EP the individual eigenvalues inherit a square-root
        // sensitivity from the coalescence; the analytic invariants are the
        // pair mean and the splitting, so a quasi-degenerate pair is judged
        // on those instead
        let sibling = energies
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(_, e)| *e)
            .min_by(|a, b| {
                (a - r.energy)
                    .norm()
                    .partial_cmp(&(b - r.energy).norm())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
        let Some(sib) = sibling else { continue };
        let split = sib - r.energy;
        if split.norm() > S::of(1e4) * crit.tol {
            continue; // genuinely isolated and unstable: leave unconverged
        }
        let mean = (sib + r.energy) * S::of(0.5);
        let pair_stable = |other: &ResonanceSet<S>| -> bool {
            let mut ds: Vec<(S, Cplx<S>)> = other
                .resonances
                .iter()
                .map(|o| ((o.energy - mean).norm(), o.energy))
                .collect();
            ds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
            if ds.len() < 2 {
                return false;
            }
            let mean_o = (ds[0].1 + ds[1].1) * S::of(0.5);
            let split_o = ds[0].1 - ds[1].1;
            (mean_o - mean).norm() < crit.tol
                && (split_o.norm() - split.norm()).abs()
                    < (S::of(0.05) * split.norm()).max(S::of(10.0) * crit.tol)
        };
        r.converged = pair_stable(&rotated) && pair_stable(&enlarged);
    }
    Ok(())
}

/// Located EP: field point, coalescence energy, and the residual splitting
/// `E1 - E2` measured at that point.
#[derive(Debug, Clone)]
pub struct EPLocation<S> {
    pub point: FieldPoint<S>,
    pub energy: Cplx<S>,
    pub splitting: Cplx<S>,
}

#[derive(Debug, Clone)]
pub struct EpSearchOptions<S> {
    /// Acceptance threshold on `|E1 - E2|` at the located point.
    pub splitting_tol: S,
    pub max_iter: usize,
    /// Octagon radius shrink factor per refinement round.
    pub shrink: S,
    /// First refit radius (relative, like the octagon radius).
    pub initial_radius: S,
    /// Root-escape guard (relative displacement from the model center).
    pub max_rel_displacement: S,
}

impl<S: Scalar> Default for EpSearchOptions<S> {
    fn default() -> Self {
        Self {
            splitting_tol: S::of(5e-7),
            max_iter: 10,
            shrink: S::of(0.5),
            initial_radius: S::of(1e-3),
            max_rel_displacement: S::of(0.05),
        }
    }
}

/// Locate the EP of a fitted model by root-solving `eta = 0` and refining
/// with re-fits on shrinking octagons until the measured splitting at the
/// candidate point drops below tolerance.
///
/// `refit(center, radius)` must return a model fitted around `center` on an
/// octagon of the given relative radius; its constant coefficients then
/// report the measured `kappa` and `eta` at `center`.
pub fn locate_ep<S, F>(
    model: &TwoLevelModel<S>,
    mut refit: F,
    opts: &EpSearchOptions<S>,
) -> Result<EPLocation<S>>
where
    S: Scalar,
    F: FnMut(FieldPoint<S>, S) -> Result<TwoLevelModel<S>>,
{
    let mut current = model.clone();
    let mut radius = opts.initial_radius;
    let mut best: Option<EPLocation<S>> = None;
    for _ in 0..opts.max_iter {
        let root = current.eta_root(opts.max_rel_displacement)?;
        let refitted = refit(root, radius)?;
        let splitting = refitted.eta_coeffs[0].sqrt();
        let energy = refitted.kappa_coeffs[0] * S::of(0.5);
        let loc = EPLocation { point: root, energy, splitting };
        if best
            .as_ref()
            .map(|b| splitting.norm() < b.splitting.norm())
            .unwrap_or(true)
        {
            best = Some(loc.clone());
        }
        if splitting.norm() < opts.splitting_tol {
            return Ok(loc);
        }
        current = refitted;
        radius = radius * opts.shrink;
    }
    match best {
        Some(b) => Err(Error::NonConvergence(format!(
            "EP refinement stalled at |splitting| = {:e} (tol {:e})",
            b.splitting.norm(),
            opts.splitting_tol
        ))),
        None => Err(Error::EpNotFound("no refinement step succeeded".into())),
    }
}
