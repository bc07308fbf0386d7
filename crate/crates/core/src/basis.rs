//! Coulomb-Sturmian matrix representation of the hydrogen atom in parallel
//! electric and magnetic fields (m = 0 subspace).
//!
//! Basis functions are `phi_{Nl}(r) = S_{Nl}(r)/r * Y_{l0}(theta)` with the
//! radial Sturmians
//!
//! ```text
//! S_{Nl}(r) = sqrt[(N-l-1)!/(N+l)!] (2 a r)^(l+1) exp(-a r) L_{N-l-1}^(2l+1)(2 a r)
//! ```
//!
//! normalized to `<S_{N'l} | 1/r | S_{Nl}> = delta_{N'N}` (`a` is the
//! Sturmian scale). The principal quantum number `N = n_r + l` runs up to the
//! cutoff, giving the triangular basis dimension `M = N_max (N_max + 1) / 2`.
//!
//! Complex scaling `r -> b r` is realized as per-operator powers of `b`
//! applied at pencil-build time, so a single assembly at `b = 1` serves all
//! rotation angles.

use ndarray::Array2;

use crate::linalg::{BandedCholesky, BlockMat};
use crate::quad::{gauss_laguerre, laguerre_normalized};
use crate::{Cplx, Error, FieldPoint, Result, Scalar};

/// Default complex-scaling rotation angle (radians).
pub const DEFAULT_ROTATION_ANGLE: f64 = 0.15;

/// Basis cutoff and scaling parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec<S> {
    /// Principal quantum number cutoff `N_max`.
    pub n_principal_max: usize,
    /// Magnetic quantum number; this artifact covers only `m = 0`.
    pub magnetic_quantum_number: i32,
    /// Radial scale of the Sturmian functions (inverse length, a.u.).
    pub sturmian_scale: S,
    /// Complex scaling factor `b`.
    pub rotation: Cplx<S>,
}

impl<S: Scalar> BasisSpec<S> {
    /// Spec with the default rotation angle and `m = 0`.
    pub fn new(n_principal_max: usize, sturmian_scale: S) -> Self {
        let theta = S::of(DEFAULT_ROTATION_ANGLE);
        Self {
            n_principal_max,
            magnetic_quantum_number: 0,
            sturmian_scale,
            rotation: Cplx::new(theta.cos(), theta.sin()),
        }
    }

    pub fn with_rotation_angle(mut self, theta: S) -> Self {
        self.rotation = Cplx::new(theta.cos(), theta.sin());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_principal_max < 1 {
            return Err(Error::InvalidBasis("n_principal_max must be >= 1".into()));
        }
        if self.magnetic_quantum_number != 0 {
            return Err(Error::InvalidBasis(
                "only the m = 0 subspace is supported in parallel fields".into(),
            ));
        }
        if !(self.sturmian_scale > S::zero()) {
            return Err(Error::InvalidBasis("sturmian_scale must be positive".into()));
        }
        validate_rotation(self.rotation)?;
        Ok(())
    }

    /// Basis dimension `M = N_max (N_max + 1) / 2`.
    pub fn dim(&self) -> usize {
        self.n_principal_max * (self.n_principal_max + 1) / 2
    }
}

pub fn validate_rotation<S: Scalar>(b: Cplx<S>) -> Result<()> {
    let arg = b.arg();
    if !(b.norm() > S::zero()) || arg < S::zero() || arg >= S::FRAC_PI_4() {
        return Err(Error::InvalidBasis(format!(
            "rotation must satisfy |b| > 0 and 0 <= arg(b) < pi/4, got |b| = {}, arg = {}",
            b.norm(),
            arg
        )));
    }
    Ok(())
}

/// Field-independent operator blocks in the Sturmian basis (all real, at the
/// unscaled `b = 1` level).
#[derive(Debug, Clone)]
pub struct OperatorBlocks<S> {
    pub spec: BasisSpec<S>,
    /// `(n_radial, l)` per flat basis column, ordered by `l`, then `n_radial`.
    pub index_map: Vec<(usize, usize)>,
    pub kinetic: BlockMat<S>,
    pub coulomb: BlockMat<S>,
    pub dipole: BlockMat<S>,
    pub diamagnetic: BlockMat<S>,
    pub paramagnetic: BlockMat<S>,
    pub overlap: BlockMat<S>,
    cholesky: BandedCholesky<S>,
}

/// Angular bracket `<Y_{l+1,0} | cos(theta) | Y_{l,0}>`.
fn cos_coupling<S: Scalar>(l: usize) -> S {
    let lf = S::of(l as f64);
    (lf + S::one()) / ((S::of(2.0) * lf + S::one()) * (S::of(2.0) * lf + S::of(3.0))).sqrt()
}

/// Per-`l` tables of the orthonormal Laguerre functions at the quadrature
/// nodes: `tab[l][(q, m)] = lhat_m^(2l+1)(x_q)`.
struct LaguerreTables<S> {
    nodes: Vec<S>,
    weights: Vec<S>,
    tab: Vec<Array2<S>>,
}

impl<S: Scalar> LaguerreTables<S> {
    fn build(n_max: usize) -> Self {
        let q = (n_max + 12).max(48);
        let (nodes, weights) = gauss_laguerre::<S>(q);
        let mut tab = Vec::with_capacity(n_max);
        for l in 0..n_max {
            let size = n_max - l;
            let k = 2 * l + 1;
            let mut t = Array2::from_elem((q, size), S::zero());
            for (qi, &x) in nodes.iter().enumerate() {
                let vals = laguerre_normalized(size - 1, k, x);
                for m in 0..size {
                    t[(qi, m)] = vals[m];
                }
            }
            tab.push(t);
        }
        Self { nodes, weights, tab }
    }

    /// Radial block `R[i', i] = integral S_{N'l'} r^p S_{Nl} dr` for all
    /// radial indices of the pair `(l_bra, l_ket)`.
    fn radial_block(&self, scale: S, l_bra: usize, l_ket: usize, p: i32) -> Array2<S> {
        let tb = &self.tab[l_bra];
        let tk = &self.tab[l_ket];
        let (q, nb) = tb.dim();
        let nk = tk.ncols();
        let xpow = (l_bra + l_ket + 2) as i32 + p;
        let pref = (S::of(2.0) * scale).powi(-(p + 1));
        let wq: Vec<S> = (0..q)
            .map(|qi| self.weights[qi] * self.nodes[qi].powi(xpow))
            .collect();
        let mut out = Array2::from_elem((nb, nk), S::zero());
        for i in 0..nb {
            for j in 0..nk {
                let mut acc = S::zero();
                for qi in 0..q {
                    acc += wq[qi] * (tb[(qi, i)] * tk[(qi, j)]);
                }
                out[(i, j)] = pref * acc;
            }
        }
        out
    }
}

/// Assemble all six field-independent operator blocks.
///
/// The `l`-diagonal operators (overlap, kinetic, Coulomb) come from the
/// closed-form Sturmian recurrences; the `l`-coupling ones (dipole,
/// diamagnetic) from an exact Gauss-Laguerre rule over the normalized
/// Laguerre recurrences. Blocks are mirrored entry-exactly, so the full
/// matrices are symmetric to the last bit.
pub fn assemble_operator_blocks<S: Scalar>(spec: &BasisSpec<S>) -> Result<OperatorBlocks<S>> {
    spec.validate()?;
    let n_max = spec.n_principal_max;
    let alpha = spec.sturmian_scale;
    let sizes: Vec<usize> = (0..n_max).map(|l| n_max - l).collect();
    let band_tol = S::of(1e-13);
    let exact = S::zero();

    let mut overlap = BlockMat::new(sizes.clone());
    let mut kinetic = BlockMat::new(sizes.clone());
    let mut coulomb = BlockMat::new(sizes.clone());
    let mut dipole = BlockMat::new(sizes.clone());
    let mut diamagnetic = BlockMat::new(sizes.clone());
    let paramagnetic = BlockMat::new(sizes.clone()); // identically zero for m = 0

    let tables = LaguerreTables::build(n_max);

    for l in 0..n_max {
        let size = n_max - l;
        let mut ovl = Array2::from_elem((size, size), S::zero());
        let mut kin = Array2::from_elem((size, size), S::zero());
        let mut cou = Array2::from_elem((size, size), S::zero());
        for i in 0..size {
            let nf = S::of((i + l + 1) as f64); // principal quantum number N
            ovl[(i, i)] = nf / alpha;
            kin[(i, i)] = alpha * nf * S::of(0.5);
            cou[(i, i)] = -S::one();
            if i + 1 < size {
                let s = (S::of((i + 1) as f64) * S::of((i + 2 * l + 2) as f64)).sqrt();
                let o = -s / (S::of(2.0) * alpha);
                ovl[(i + 1, i)] = o;
                ovl[(i, i + 1)] = o;
                let t = alpha * s * S::of(0.25);
                kin[(i + 1, i)] = t;
                kin[(i, i + 1)] = t;
            }
        }
        overlap.push_block_real(l, l, ovl, exact);
        kinetic.push_block_real(l, l, kin, exact);
        coulomb.push_block_real(l, l, cou, exact);

        // diamagnetic, same l: <sin^2> = 1 - a_l^2 - a_{l-1}^2
        let a_l = cos_coupling::<S>(l);
        let a_lm1 = if l > 0 { cos_coupling::<S>(l - 1) } else { S::zero() };
        let ang_same = S::one() - a_l * a_l - a_lm1 * a_lm1;
        let r2 = tables.radial_block(alpha, l, l, 2);
        diamagnetic.push_block_real(l, l, r2.mapv(|v| v * ang_same), band_tol);

        // dipole, l' = l + 1
        if l + 1 < n_max {
            let r1 = tables.radial_block(alpha, l + 1, l, 1);
            let blk = r1.mapv(|v| v * a_l);
            dipole.push_block_real(l, l + 1, blk.t().to_owned(), band_tol);
            dipole.push_block_real(l + 1, l, blk, band_tol);
        }

        // diamagnetic, l' = l + 2: <sin^2> coupling = -a_{l+1} a_l
        if l + 2 < n_max {
            let ang = -(cos_coupling::<S>(l + 1) * a_l);
            let r2c = tables.radial_block(alpha, l + 2, l, 2);
            let blk = r2c.mapv(|v| v * ang);
            diamagnetic.push_block_real(l, l + 2, blk.t().to_owned(), band_tol);
            diamagnetic.push_block_real(l + 2, l, blk, band_tol);
        }
    }

    let cholesky = BandedCholesky::factor(&overlap)?;

    let mut index_map = Vec::with_capacity(spec.dim());
    for l in 0..n_max {
        for n_r in 1..=(n_max - l) {
            index_map.push((n_r, l));
        }
    }

    Ok(OperatorBlocks {
        spec: spec.clone(),
        index_map,
        kinetic,
        coulomb,
        dipole,
        diamagnetic,
        paramagnetic,
        overlap,
        cholesky,
    })
}

/// Complex-scaled generalized eigenvalue pencil `(A, B)` at one field point.
#[derive(Debug, Clone)]
pub struct Pencil<S> {
    pub a: BlockMat<S>,
    pub point: FieldPoint<S>,
    pub b: Cplx<S>,
    dim: usize,
}

impl<S: Scalar> Pencil<S> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a_dense(&self) -> Array2<Cplx<S>> {
        self.a.to_dense()
    }
}

impl<S: Scalar> OperatorBlocks<S> {
    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn cholesky(&self) -> &BandedCholesky<S> {
        &self.cholesky
    }

    /// `A(gamma, f, b) = b^-2 T + b^-1 V_C + (gamma/2) L_z + (gamma^2/8) b^2 D + f b Z`
    /// with `B` the (unscaled) overlap.
    pub fn build_pencil(&self, point: FieldPoint<S>, b: Cplx<S>) -> Result<Pencil<S>> {
        validate_rotation(b)?;
        if !(point.gamma >= S::zero()) || !(point.f >= S::zero()) {
            return Err(Error::InvalidArgument(format!(
                "field strengths must be non-negative, got gamma = {}, f = {}",
                point.gamma, point.f
            )));
        }
        let b2 = b * b;
        let mut a = self.kinetic.scaled(b2.inv());
        a.add_scaled(b.inv(), &self.coulomb);
        a.add_scaled(
            Cplx::new(point.gamma * S::of(0.5), S::zero()),
            &self.paramagnetic,
        );
        a.add_scaled(
            b2 * (point.gamma * point.gamma * S::of(0.125)),
            &self.diamagnetic,
        );
        a.add_scaled(b * point.f, &self.dipole);
        Ok(Pencil { a, point, b, dim: self.dim() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64 as C64;

    fn spec(n_max: usize) -> BasisSpec<f64> {
        BasisSpec::new(n_max, 0.6)
    }

    #[test]
    fn dimension_is_triangular_number() {
        let blocks = assemble_operator_blocks(&spec(35)).unwrap();
        assert_eq!(blocks.dim(), 630);
        assert_eq!(blocks.index_map.len(), 630);
        assert_eq!(blocks.overlap.to_dense().nrows(), 630);
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(assemble_operator_blocks(&spec(0)).is_err());
        let mut s = spec(4);
        s.magnetic_quantum_number = 1;
        assert!(assemble_operator_blocks(&s).is_err());
        let mut s = spec(4);
        s.sturmian_scale = -1.0;
        assert!(assemble_operator_blocks(&s).is_err());
        let s = spec(4).with_rotation_angle(1.0); // past pi/4
        assert!(s.validate().is_err());
    }

    #[test]
    fn nmax_1_dipole_is_zero() {
        let blocks = assemble_operator_blocks(&spec(1)).unwrap();
        let d = blocks.dipole.to_dense();
        assert_eq!(d.dim(), (1, 1));
        assert_eq!(d[(0, 0)], C64::new(0.0, 0.0));
        // paramagnetic is the zero matrix for m = 0
        let p = blocks.paramagnetic.to_dense();
        assert_eq!(p[(0, 0)], C64::new(0.0, 0.0));
    }

    #[test]
    fn selection_rules_hold() {
        let blocks = assemble_operator_blocks(&spec(6)).unwrap();
        for b in &blocks.dipole.blocks {
            assert_eq!((b.l_row as isize - b.l_col as isize).abs(), 1);
        }
        for b in &blocks.diamagnetic.blocks {
            let d = (b.l_row as isize - b.l_col as isize).abs();
            assert!(d == 0 || d == 2);
        }
        for m in [&blocks.kinetic, &blocks.coulomb, &blocks.overlap] {
            for b in &m.blocks {
                assert_eq!(b.l_row, b.l_col);
            }
        }
        assert!(blocks.paramagnetic.blocks.is_empty());
    }

    #[test]
    fn pencil_is_exactly_symmetric() {
        let blocks = assemble_operator_blocks(&spec(8)).unwrap();
        let p = blocks
            .build_pencil(FieldPoint::new(1.4e-2, 3.2e-4), C64::from_polar(1.0, 0.15))
            .unwrap();
        let a = p.a_dense();
        let m = a.nrows();
        for i in 0..m {
            for j in 0..m {
                assert_eq!(a[(i, j)], a[(j, i)], "asymmetry at ({i},{j})");
            }
        }
    }

    #[test]
    fn overlap_cholesky_succeeds_up_to_40() {
        for n_max in [10, 25, 40] {
            let blocks = assemble_operator_blocks(&spec(n_max)).unwrap();
            // factor() already ran inside assembly; re-run explicitly
            assert!(BandedCholesky::factor(&blocks.overlap).is_ok());
        }
    }

    #[test]
    fn quadrature_overlap_matches_closed_form() {
        // the GL path (used for dipole/diamagnetic) must reproduce the
        // closed-form overlap at the largest basis we use
        let n_max = 38;
        let alpha = 0.23;
        let tables = LaguerreTables::<f64>::build(n_max);
        for l in [0usize, 5, 20, n_max - 1] {
            let size = n_max - l;
            let r0 = tables.radial_block(alpha, l, l, 0);
            for i in 0..size {
                for j in 0..size {
                    let expect = if i == j {
                        (i + l + 1) as f64 / alpha
                    } else if i.abs_diff(j) == 1 {
                        let m = i.min(j);
                        -(((m + 1) as f64 * (m + 2 * l + 2) as f64).sqrt()) / (2.0 * alpha)
                    } else {
                        0.0
                    };
                    assert!(
                        (r0[(i, j)] - expect).abs() < 1e-10 * (1.0 + expect.abs()),
                        "l={l} ({i},{j}): {} vs {expect}",
                        r0[(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn bound_states_stable_under_rotation_angle() {
        // at zero field the converged real eigenvalues must not move when
        // the complex-scaling angle varies across [0, 0.3]
        use crate::spectral::{solve_at, SolveOptions, SolverBackend};
        use crate::FieldPoint;
        let blocks = assemble_operator_blocks(&BasisSpec::new(18, 0.5)).unwrap();
        let opts = SolveOptions { backend: SolverBackend::Dense, ..Default::default() };
        let mut reference = None;
        for theta in [0.0, 0.15, 0.3] {
            let b = C64::from_polar(1.0, theta);
            let set = solve_at(
                &blocks,
                FieldPoint::new(0.0, 0.0),
                b,
                C64::new(-0.5, 0.0),
                1,
                &opts,
            )
            .unwrap();
            let e = set.resonances[0].energy;
            match reference {
                None => reference = Some(e),
                Some(r) => assert!(
                    (e - r).norm() < 1e-8,
                    "theta = {theta}: {e} vs {r}"
                ),
            }
        }
    }

    #[test]
    fn scaled_reassembly_matches_direct() {
        // A(b) from per-block scaling of the b = 1 blocks vs assembly with
        // the scale factors applied inside: entrywise agreement to 1e-14
        let blocks = assemble_operator_blocks(&spec(7)).unwrap();
        let point = FieldPoint::new(1.0e-2, 2.0e-4);
        let b = C64::from_polar(1.0, 0.2);
        let via_pencil = blocks.build_pencil(point, b).unwrap().a_dense();

        let b2 = b * b;
        let mut direct = blocks.kinetic.scaled(b2.inv());
        direct.add_scaled(b.inv(), &blocks.coulomb);
        direct.add_scaled(b2 * (point.gamma * point.gamma * 0.125), &blocks.diamagnetic);
        direct.add_scaled(b * point.f, &blocks.dipole);
        let direct = direct.to_dense();

        let scale = via_pencil.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (x, y) in via_pencil.iter().zip(direct.iter()) {
            assert!((x - y).norm() <= 1e-14 * scale);
        }
    }
}
