//! Internal linear algebra: block-sparse operator storage keyed by angular
//! momentum, banded factorizations, a dense eigensolver bridge, and the
//! Arnoldi iteration used for shift-invert solves.

use ndarray::{Array1, Array2};
use num_complex::Complex;

use crate::{Cplx, Error, Result, Scalar};

/// One dense sub-block coupling angular momenta `l_row` and `l_col`, with a
/// band `lo <= i - j <= hi` (local radial indices) outside of which all
/// entries vanish.
#[derive(Debug, Clone)]
pub struct Block<S> {
    pub l_row: usize,
    pub l_col: usize,
    pub lo: isize,
    pub hi: isize,
    pub a: Array2<Cplx<S>>,
}

/// Block-sparse square matrix whose rows/columns are grouped into contiguous
/// runs (one per angular momentum `l`). Entries are complex; operators that
/// are mathematically real simply carry zero imaginary parts.
#[derive(Debug, Clone)]
pub struct BlockMat<S> {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    dim: usize,
    pub blocks: Vec<Block<S>>,
}

impl<S: Scalar> BlockMat<S> {
    pub fn new(sizes: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0usize;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        Self { sizes, offsets, dim: acc, blocks: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offset(&self, l: usize) -> usize {
        self.offsets[l]
    }

    pub fn block(&self, l_row: usize, l_col: usize) -> Option<&Block<S>> {
        self.blocks.iter().find(|b| b.l_row == l_row && b.l_col == l_col)
    }

    /// Insert a dense block; the band is tightened to the smallest window
    /// holding every entry above `tol` relative to the block maximum, and
    /// entries outside that window are zeroed.
    pub fn push_block(&mut self, l_row: usize, l_col: usize, a: Array2<Cplx<S>>, tol: S) {
        let (rows, cols) = a.dim();
        assert_eq!(rows, self.sizes[l_row], "block row count");
        assert_eq!(cols, self.sizes[l_col], "block col count");
        let mut maxabs = S::zero();
        for v in a.iter() {
            maxabs = maxabs.max(v.norm());
        }
        let thresh = maxabs * tol;
        let mut lo = isize::MAX;
        let mut hi = isize::MIN;
        for i in 0..rows {
            for j in 0..cols {
                if a[(i, j)].norm() > thresh {
                    let d = i as isize - j as isize;
                    lo = lo.min(d);
                    hi = hi.max(d);
                }
            }
        }
        if lo > hi {
            return; // entirely zero block: drop it
        }
        let mut a = a;
        let zero = Cplx::new(S::zero(), S::zero());
        for i in 0..rows {
            for j in 0..cols {
                let d = i as isize - j as isize;
                if d < lo || d > hi {
                    a[(i, j)] = zero;
                }
            }
        }
        self.blocks.push(Block { l_row, l_col, lo, hi, a });
        self.blocks.sort_by_key(|b| (b.l_row, b.l_col));
    }

    /// Real-valued convenience for [`Self::push_block`].
    pub fn push_block_real(&mut self, l_row: usize, l_col: usize, a: Array2<S>, tol: S) {
        self.push_block(l_row, l_col, a.mapv(|v| Cplx::new(v, S::zero())), tol);
    }

    /// `y += coeff * (M x)`
    pub fn matvec_acc(&self, coeff: Cplx<S>, x: &Array1<Cplx<S>>, y: &mut Array1<Cplx<S>>) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        let xs = x.as_slice().expect("contiguous vector");
        let ys = y.as_slice_mut().expect("contiguous vector");
        for b in &self.blocks {
            let ro = self.offsets[b.l_row];
            let co = self.offsets[b.l_col];
            let rows = self.sizes[b.l_row];
            let cols = self.sizes[b.l_col];
            for i in 0..rows {
                let j0 = ((i as isize - b.hi).max(0)) as usize;
                let j1 = (((i as isize - b.lo) + 1).clamp(0, cols as isize)) as usize;
                if j0 >= j1 {
                    continue;
                }
                let row = b.a.row(i);
                let mut acc = Cplx::new(S::zero(), S::zero());
                for j in j0..j1 {
                    acc += row[j] * xs[co + j];
                }
                ys[ro + i] += coeff * acc;
            }
        }
    }

    /// `y = M x`
    pub fn matvec(&self, x: &Array1<Cplx<S>>) -> Array1<Cplx<S>> {
        let mut y = Array1::from_elem(self.dim, Cplx::new(S::zero(), S::zero()));
        self.matvec_acc(Cplx::new(S::one(), S::zero()), x, &mut y);
        y
    }

    /// Flat half-bandwidths `(kl, ku)` of the full matrix.
    pub fn band_halfwidths(&self) -> (usize, usize) {
        let mut kl = 0isize;
        let mut ku = 0isize;
        for b in &self.blocks {
            let ro = self.offsets[b.l_row] as isize;
            let co = self.offsets[b.l_col] as isize;
            // flat distance i_flat - j_flat = (ro - co) + (i - j)
            kl = kl.max(ro - co + b.hi);
            ku = ku.max(co - ro - b.lo);
        }
        (kl.max(0) as usize, ku.max(0) as usize)
    }

    pub fn to_dense(&self) -> Array2<Cplx<S>> {
        let z = Cplx::new(S::zero(), S::zero());
        let mut out = Array2::from_elem((self.dim, self.dim), z);
        for b in &self.blocks {
            let ro = self.offsets[b.l_row];
            let co = self.offsets[b.l_col];
            for i in 0..self.sizes[b.l_row] {
                for j in 0..self.sizes[b.l_col] {
                    out[(ro + i, co + j)] += b.a[(i, j)];
                }
            }
        }
        out
    }

    /// Copy with every entry multiplied by `coeff`.
    pub fn scaled(&self, coeff: Cplx<S>) -> Self {
        let mut out = Self::new(self.sizes.clone());
        out.blocks = self
            .blocks
            .iter()
            .map(|b| Block {
                l_row: b.l_row,
                l_col: b.l_col,
                lo: b.lo,
                hi: b.hi,
                a: b.a.mapv(|v| coeff * v),
            })
            .collect();
        out
    }

    /// `self += coeff * other` (matching layouts; missing blocks are created
    /// on demand).
    pub fn add_scaled(&mut self, coeff: Cplx<S>, other: &Self) {
        assert_eq!(self.sizes, other.sizes, "layout mismatch");
        for ob in &other.blocks {
            if let Some(b) = self
                .blocks
                .iter_mut()
                .find(|b| b.l_row == ob.l_row && b.l_col == ob.l_col)
            {
                b.lo = b.lo.min(ob.lo);
                b.hi = b.hi.max(ob.hi);
                for (dst, src) in b.a.iter_mut().zip(ob.a.iter()) {
                    *dst += coeff * *src;
                }
            } else {
                self.blocks.push(Block {
                    l_row: ob.l_row,
                    l_col: ob.l_col,
                    lo: ob.lo,
                    hi: ob.hi,
                    a: ob.a.mapv(|v| coeff * v),
                });
                self.blocks.sort_by_key(|b| (b.l_row, b.l_col));
            }
        }
    }

    /// Iterate all stored entries as `(i, j, value)` in flat indices.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, Cplx<S>)> + '_ {
        self.blocks.iter().flat_map(move |b| {
            let ro = self.offsets[b.l_row];
            let co = self.offsets[b.l_col];
            b.a.indexed_iter().filter_map(move |((i, j), v)| {
                let d = i as isize - j as isize;
                if d < b.lo || d > b.hi {
                    None
                } else {
                    Some((ro + i, co + j, *v))
                }
            })
        })
    }
}

/// Cholesky factorization `B = L L^T` of a block-diagonal, tridiagonal,
/// real symmetric positive-definite matrix; `L` is lower-bidiagonal inside
/// every block.
#[derive(Debug, Clone)]
pub struct BandedCholesky<S> {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    diag: Vec<S>,
    sub: Vec<S>, // sub[i] couples flat rows i and i+1; zero across block edges
}

impl<S: Scalar> BandedCholesky<S> {
    /// Factor of the identity metric (`B = I`), used where the c-product
    /// carries no overlap weighting.
    pub fn identity(dim: usize) -> Self {
        Self {
            sizes: vec![dim],
            offsets: vec![0],
            diag: vec![S::one(); dim],
            sub: vec![S::zero(); dim.saturating_sub(1)],
        }
    }

    pub fn factor(b: &BlockMat<S>) -> Result<Self> {
        let sizes = b.sizes().to_vec();
        let dim = b.dim();
        let mut diag = vec![S::zero(); dim];
        let mut sub = vec![S::zero(); dim.saturating_sub(1)];
        for (l, &size) in sizes.iter().enumerate() {
            let off = b.offset(l);
            let blk = b
                .block(l, l)
                .ok_or_else(|| Error::Singular(format!("missing diagonal block l = {l}")))?;
            let mut prev_l: S = S::zero();
            for i in 0..size {
                let mut d = blk.a[(i, i)].re;
                if i > 0 {
                    d = d - prev_l * prev_l;
                }
                if d <= S::zero() {
                    return Err(Error::Singular(format!(
                        "overlap not positive definite at flat row {}",
                        off + i
                    )));
                }
                let ld = d.sqrt();
                diag[off + i] = ld;
                if i + 1 < size {
                    let s = blk.a[(i + 1, i)].re / ld;
                    sub[off + i] = s;
                    prev_l = s;
                }
            }
        }
        let offsets: Vec<usize> = {
            let mut v = Vec::with_capacity(sizes.len());
            let mut acc = 0;
            for &s in &sizes {
                v.push(acc);
                acc += s;
            }
            v
        };
        Ok(Self { sizes, offsets, diag, sub })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// In-place solve of `L y = x`.
    pub fn solve_lower(&self, x: &mut Array1<Cplx<S>>) {
        let xs = x.as_slice_mut().expect("contiguous vector");
        for (l, &size) in self.sizes.iter().enumerate() {
            let off = self.offsets[l];
            for i in 0..size {
                let mut v = xs[off + i];
                if i > 0 {
                    v -= xs[off + i - 1] * self.sub[off + i - 1];
                }
                xs[off + i] = v / self.diag[off + i];
            }
        }
    }

    /// In-place solve of `L^T y = x`.
    pub fn solve_lower_t(&self, x: &mut Array1<Cplx<S>>) {
        let xs = x.as_slice_mut().expect("contiguous vector");
        for (l, &size) in self.sizes.iter().enumerate() {
            let off = self.offsets[l];
            for i in (0..size).rev() {
                let mut v = xs[off + i];
                if i + 1 < size {
                    v -= xs[off + i + 1] * self.sub[off + i];
                }
                xs[off + i] = v / self.diag[off + i];
            }
        }
    }

    /// `y = L^T x` (used for c-norms: `v^T B v = (L^T v)^T (L^T v)`).
    pub fn apply_lower_t(&self, x: &Array1<Cplx<S>>) -> Array1<Cplx<S>> {
        let xs = x.as_slice().expect("contiguous vector");
        let mut out = x.clone();
        let os = out.as_slice_mut().unwrap();
        for (l, &size) in self.sizes.iter().enumerate() {
            let off = self.offsets[l];
            for i in 0..size {
                let mut v = xs[off + i] * self.diag[off + i];
                if i + 1 < size {
                    v += xs[off + i + 1] * self.sub[off + i];
                }
                os[off + i] = v;
            }
        }
        out
    }
}

/// LU factorization with partial pivoting of a complex banded matrix with
/// half-bandwidths `(kl, ku)`; fill-in extends the upper band to `kl + ku`.
pub struct BandedLu<S> {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    data: Vec<Cplx<S>>, // column-major: (i, j) at data[j * ldab + kl + ku + i - j]
    ipiv: Vec<usize>,
}

impl<S: Scalar> BandedLu<S> {
    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ldab + (self.kl + self.ku + i) - j
    }

    fn get(&self, i: usize, j: usize) -> Cplx<S> {
        self.data[self.idx(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, v: Cplx<S>) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// Factor the banded matrix given by `entries` (an iterator of
    /// `(i, j, value)` with `-ku <= i - j <= kl`); duplicate entries add up.
    pub fn factor(
        n: usize,
        kl: usize,
        ku: usize,
        entries: impl Iterator<Item = (usize, usize, Cplx<S>)>,
    ) -> Result<Self> {
        let ldab = 2 * kl + ku + 1;
        let zero = Cplx::new(S::zero(), S::zero());
        let mut lu = Self { n, kl, ku, ldab, data: vec![zero; ldab * n], ipiv: vec![0; n] };
        for (i, j, v) in entries {
            debug_assert!(i as isize - (j as isize) <= kl as isize);
            debug_assert!(j as isize - (i as isize) <= ku as isize);
            let k = lu.idx(i, j);
            lu.data[k] += v;
        }
        let kuw = kl + ku; // working upper bandwidth after pivoting
        for k in 0..n {
            let imax = (k + kl).min(n - 1);
            let mut p = k;
            let mut pmax = lu.get(k, k).norm_sqr();
            for i in (k + 1)..=imax {
                let m = lu.get(i, k).norm_sqr();
                if m > pmax {
                    pmax = m;
                    p = i;
                }
            }
            if pmax == S::zero() {
                return Err(Error::Singular(format!("zero pivot in banded LU at column {k}")));
            }
            lu.ipiv[k] = p;
            if p != k {
                let jmax = (k + kuw).min(n - 1);
                for j in k..=jmax {
                    let a = lu.get(k, j);
                    let b = lu.get(p, j);
                    lu.set(k, j, b);
                    lu.set(p, j, a);
                }
            }
            let piv = lu.get(k, k);
            for i in (k + 1)..=imax {
                let m = lu.get(i, k) / piv;
                lu.set(i, k, m);
                if m.norm_sqr() != S::zero() {
                    let jmax = (k + kuw).min(n - 1);
                    for j in (k + 1)..=jmax {
                        let v = lu.get(i, j) - m * lu.get(k, j);
                        lu.set(i, j, v);
                    }
                }
            }
        }
        Ok(lu)
    }

    /// In-place solve of `A x = b`.
    pub fn solve(&self, b: &mut Array1<Cplx<S>>) {
        debug_assert_eq!(b.len(), self.n);
        let xs = b.as_slice_mut().expect("contiguous vector");
        for k in 0..self.n {
            let p = self.ipiv[k];
            if p != k {
                xs.swap(k, p);
            }
            let imax = (k + self.kl).min(self.n - 1);
            for i in (k + 1)..=imax {
                let m = self.get(i, k);
                let upd = xs[k] * m;
                xs[i] -= upd;
            }
        }
        let kuw = self.kl + self.ku;
        for k in (0..self.n).rev() {
            let jmax = (k + kuw).min(self.n - 1);
            let mut v = xs[k];
            for j in (k + 1)..=jmax {
                v -= self.get(k, j) * xs[j];
            }
            xs[k] = v / self.get(k, k);
        }
    }
}

/// Bilinear (c-product) dot: `sum_i u_i v_i`, no conjugation.
pub fn c_dot<S: Scalar>(u: &Array1<Cplx<S>>, v: &Array1<Cplx<S>>) -> Cplx<S> {
    debug_assert_eq!(u.len(), v.len());
    let mut acc = Cplx::new(S::zero(), S::zero());
    for (a, b) in u.iter().zip(v.iter()) {
        acc += *a * *b;
    }
    acc
}

/// Hermitian dot: `sum_i conj(u_i) v_i`.
pub fn h_dot<S: Scalar>(u: &Array1<Cplx<S>>, v: &Array1<Cplx<S>>) -> Cplx<S> {
    debug_assert_eq!(u.len(), v.len());
    let mut acc = Cplx::new(S::zero(), S::zero());
    for (a, b) in u.iter().zip(v.iter()) {
        acc += a.conj() * *b;
    }
    acc
}

pub fn norm2<S: Scalar>(u: &Array1<Cplx<S>>) -> S {
    u.iter().map(|z| z.norm_sqr()).fold(S::zero(), |a, b| a + b).sqrt()
}

/// Scalar types for which a dense complex eigendecomposition backend is
/// wired up.
pub trait EigenScalar: Scalar {
    /// Eigenvalues and right eigenvectors (columns) of a general complex
    /// dense matrix.
    fn dense_evd(c: &Array2<Cplx<Self>>) -> Result<(Vec<Cplx<Self>>, Array2<Cplx<Self>>)>;
}

fn evd_via_faer<S: Scalar + faer::traits::RealField>(
    c: &Array2<Cplx<S>>,
) -> Result<(Vec<Cplx<S>>, Array2<Cplx<S>>)> {
    let n = c.nrows();
    assert_eq!(n, c.ncols(), "square matrix required");
    let m = faer::Mat::<Complex<S>>::from_fn(n, n, |i, j| c[(i, j)]);
    let evd = m
        .eigen()
        .map_err(|e| Error::NonConvergence(format!("dense eigensolver: {e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    let vals: Vec<Cplx<S>> = (0..n).map(|i| s[i]).collect();
    let vecs = Array2::from_shape_fn((n, n), |(i, j)| u[(i, j)]);
    Ok((vals, vecs))
}

impl EigenScalar for f64 {
    fn dense_evd(c: &Array2<Cplx<Self>>) -> Result<(Vec<Cplx<Self>>, Array2<Cplx<Self>>)> {
        evd_via_faer(c)
    }
}

impl EigenScalar for f32 {
    fn dense_evd(c: &Array2<Cplx<Self>>) -> Result<(Vec<Cplx<Self>>, Array2<Cplx<Self>>)> {
        evd_via_faer(c)
    }
}

/// Arnoldi factorization `op V_m = V_{m+1} H` with twice-iterated modified
/// Gram-Schmidt. Returns the orthonormal basis (m+1 columns unless breakdown
/// truncates it) and the (m+1) x m Hessenberg matrix.
pub fn arnoldi<S: Scalar>(
    mut op: impl FnMut(&Array1<Cplx<S>>) -> Array1<Cplx<S>>,
    start: &Array1<Cplx<S>>,
    m: usize,
) -> (Vec<Array1<Cplx<S>>>, Array2<Cplx<S>>) {
    let zero = Cplx::new(S::zero(), S::zero());
    let mut h = Array2::from_elem((m + 1, m), zero);
    let mut vs: Vec<Array1<Cplx<S>>> = Vec::with_capacity(m + 1);
    let nrm = norm2(start);
    assert!(nrm > S::zero(), "zero Arnoldi start vector");
    vs.push(start.mapv(|z| z / nrm));
    for j in 0..m {
        let mut w = op(&vs[j]);
        for _pass in 0..2 {
            for (i, vi) in vs.iter().enumerate() {
                let hij = h_dot(vi, &w);
                h[(i, j)] += hij;
                for (wk, vk) in w.iter_mut().zip(vi.iter()) {
                    *wk -= hij * *vk;
                }
            }
        }
        let beta = norm2(&w);
        h[(j + 1, j)] = Cplx::new(beta, S::zero());
        if beta <= S::epsilon() * S::of(16.0) {
            // invariant subspace found
            let h = h.slice(ndarray::s![..j + 2, ..j + 1]).to_owned();
            return (vs, h);
        }
        vs.push(w.mapv(|z| z / beta));
    }
    (vs, h)
}

/// LU-factorized small dense real matrix for repeated solves.
pub struct RealLu<S> {
    n: usize,
    lu: Array2<S>,
    piv: Vec<usize>,
}

impl<S: Scalar> RealLu<S> {
    pub fn factor(a: &Array2<S>) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols());
        let mut lu = a.clone();
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].abs();
            for i in (k + 1)..n {
                if lu[(i, k)].abs() > best {
                    best = lu[(i, k)].abs();
                    p = i;
                }
            }
            if best == S::zero() {
                return Err(Error::Singular("singular real system".into()));
            }
            piv[k] = p;
            if p != k {
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = t;
                }
            }
            for i in (k + 1)..n {
                let m = lu[(i, k)] / lu[(k, k)];
                lu[(i, k)] = m;
                for j in (k + 1)..n {
                    let v = lu[(i, j)] - m * lu[(k, j)];
                    lu[(i, j)] = v;
                }
            }
        }
        Ok(Self { n, lu, piv })
    }

    pub fn solve(&self, b: &mut [S]) {
        assert_eq!(b.len(), self.n);
        for k in 0..self.n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            for i in (k + 1)..self.n {
                let v = b[i] - self.lu[(i, k)] * b[k];
                b[i] = v;
            }
        }
        for k in (0..self.n).rev() {
            let mut v = b[k];
            for j in (k + 1)..self.n {
                v = v - self.lu[(k, j)] * b[j];
            }
            b[k] = v / self.lu[(k, k)];
        }
    }

    /// 1-norm condition estimate via the explicit inverse (fine at the
    /// small orders used for fits).
    pub fn cond_1(&self, a: &Array2<S>) -> S {
        let n = self.n;
        let mut inv_norm = S::zero();
        let mut col = vec![S::zero(); n];
        for j in 0..n {
            col.iter_mut().for_each(|v| *v = S::zero());
            col[j] = S::one();
            self.solve(&mut col);
            let mut s = S::zero();
            for v in &col {
                s += v.abs();
            }
            inv_norm = inv_norm.max(s);
        }
        let mut a_norm = S::zero();
        for j in 0..n {
            let mut s = S::zero();
            for i in 0..n {
                s += a[(i, j)].abs();
            }
            a_norm = a_norm.max(s);
        }
        a_norm * inv_norm
    }
}
