//! Shift-invert block Lanczos for `K x = E M x` with `K`, `M` symmetric
//! positive definite.
//!
//! The operator `K⁻¹M` is self-adjoint in the `M` inner product and maps the
//! lowest `E` to the largest `θ = 1/E`, so a plain Krylov space on it captures
//! the bottom of the spectrum fast. The basis is kept fully `M`-orthogonal
//! (classical Gram–Schmidt, two passes), the projected matrix is diagonalised
//! as a band matrix, and convergence is certified with true residuals. A block start
//! lets degenerate eigenvalues (up to the block size) appear with full
//! multiplicity.
//!
//! Dense kernels run over fixed row chunks whose partial results are summed
//! in chunk order, so output is bitwise identical for any thread count.

use nalgebra::{DMatrix, Dyn, MatrixView, U1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::band::BandMatrix;
use super::cholesky::{EnvelopeCholesky, NotPositiveDefinite};
use super::sparse::CsrMatrix;
use crate::exec::Exec;

const ROW_CHUNK: usize = 2048;

#[derive(Debug, Clone)]
pub struct EigenOptions {
    pub block: usize,
    /// Target for `‖Kx − E Mx‖ / (E ‖Mx‖)`.
    pub tol: f64,
    pub seed: u64,
    /// Largest Krylov basis before giving up (default `6k + 64`).
    pub max_basis: Option<usize>,
    pub exec: Exec,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { block: 4, tol: 1e-8, seed: 0, max_basis: None, exec: Exec::default() }
    }
}

#[derive(Debug, Clone)]
pub struct EigenResult {
    pub values: Vec<f64>,
    /// `M`-normalised.
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub basis_size: usize,
}

#[derive(Debug, Clone)]
pub enum LanczosError {
    NotPositiveDefinite(NotPositiveDefinite),
    NoConvergence { residuals: Vec<f64>, basis_size: usize },
}

struct Basis {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl Basis {
    fn view(&self, rows: std::ops::Range<usize>, cols: usize) -> MatrixView<'_, f64, Dyn, Dyn, U1, Dyn> {
        let data: &[f64] = if cols == 0 { &[] } else { &self.data[rows.start..rows.start + (cols - 1) * self.n + rows.len()] };
        MatrixView::from_slice_with_strides_generic(
            data,
            Dyn(rows.len()),
            Dyn(cols),
            U1,
            Dyn(self.n),
        )
    }

    fn push(&mut self, v: &[f64]) {
        self.data.extend_from_slice(v);
        self.m += 1;
    }

    fn truncate(&mut self, m: usize) {
        self.data.truncate(m * self.n);
        self.m = m;
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }
}

fn chunks(n: usize) -> Vec<std::ops::Range<usize>> {
    (0..n.div_ceil(ROW_CHUNK)).map(|c| c * ROW_CHUNK..((c + 1) * ROW_CHUNK).min(n)).collect()
}

/// `Qᵀ W` over the `m` basis vectors starting at column `first`.
fn project(q: &Basis, first: usize, m: usize, w: &DMatrix<f64>, exec: Exec) -> DMatrix<f64> {
    let parts = chunks(q.n);
    let partial = exec.map(parts.len(), |c| {
        let r = parts[c].clone();
        q.view(first * q.n + r.start..first * q.n + r.end, m).tr_mul(&w.rows(r.start, r.len()))
    });
    let mut out = DMatrix::zeros(m, w.ncols());
    for p in partial {
        out += p;
    }
    out
}

/// `W −= Q C` over the `m` basis vectors starting at column `first`.
fn subtract(q: &Basis, first: usize, m: usize, c: &DMatrix<f64>, w: &mut DMatrix<f64>, exec: Exec) {
    let parts = chunks(q.n);
    let prods = exec.map(parts.len(), |k| {
        let r = parts[k].clone();
        q.view(first * q.n + r.start..first * q.n + r.end, m) * c
    });
    for (r, p) in parts.iter().zip(prods) {
        let mut rows = w.rows_mut(r.start, r.len());
        rows -= p;
    }
}

/// `Q S` over the `m` basis vectors starting at column `first`.
fn combine_from(q: &Basis, first: usize, m: usize, s: &DMatrix<f64>, exec: Exec) -> DMatrix<f64> {
    let parts = chunks(q.n);
    let prods = exec.map(parts.len(), |k| {
        let r = parts[k].clone();
        q.view(first * q.n + r.start..first * q.n + r.end, m) * s
    });
    let mut out = DMatrix::zeros(q.n, s.ncols());
    for (r, p) in parts.iter().zip(prods) {
        out.rows_mut(r.start, r.len()).copy_from(&p);
    }
    out
}

fn apply_cols(w: &DMatrix<f64>, exec: Exec, f: impl Fn(&[f64]) -> Vec<f64> + Sync) -> DMatrix<f64> {
    let cols = exec.map(w.ncols(), |c| f(w.column(c).as_slice()));
    DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| cols[j][i])
}

/// `M`-norms of the columns of `w`, given `M w`.
fn column_norms(w: &DMatrix<f64>, mw: &DMatrix<f64>) -> Vec<f64> {
    (0..w.ncols()).map(|c| w.column(c).dot(&mw.column(c)).max(0.0).sqrt()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lowest `nev` eigenpairs of `K x = E M x`, ascending; equal values keep
/// solver order.
pub fn lowest(k: &CsrMatrix, mass: &CsrMatrix, nev: usize, opts: &EigenOptions) -> Result<EigenResult, LanczosError> {
    let n = k.dim();
    let chol = EnvelopeCholesky::factor(k).map_err(LanczosError::NotPositiveDefinite)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut q = Basis { n, m: 0, data: Vec::new() };
    let (mut pairs, basis_size) = krylov(k, mass, &chol, &mut q, nev, opts, &mut rng)
        .map_err(|(residuals, basis_size)| LanczosError::NoConvergence { residuals, basis_size })?;
    let mut idx: Vec<usize> = (0..nev).collect();
    idx.sort_by(|&a, &c| pairs[a].0.total_cmp(&pairs[c].0));
    let mut out = EigenResult { values: vec![], vectors: vec![], residuals: vec![], basis_size };
    for i in idx {
        out.values.push(pairs[i].0);
        out.vectors.push(std::mem::take(&mut pairs[i].1));
        out.residuals.push(pairs[i].2);
    }
    Ok(out)
}

type Pair = (f64, Vec<f64>, f64);

/// The `want` largest eigenvalues of `K⁻¹M` on the `M`-orthogonal
/// complement of the first `q.m` vectors of `q`, which is left unchanged.
fn krylov(
    k: &CsrMatrix,
    mass: &CsrMatrix,
    chol: &EnvelopeCholesky,
    q: &mut Basis,
    want: usize,
    opts: &EigenOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Pair>, usize), (Vec<f64>, usize)> {
    let n = q.n;
    let exec = opts.exec;
    let locked = q.m;
    let b = opts.block.max(1).min(n - locked);
    let cap = opts.max_basis.unwrap_or(6 * want + 64).min(n - locked);
    let op = |v: &[f64]| chol.solve(&mass.mul(v));
    // h[(i, j)]: coefficient of q_{locked+i} in Op q_{locked+j}
    let mut h = DMatrix::<f64>::zeros(cap + b, cap + b);

    let mut block = DMatrix::from_fn(n, b, |_, _| rng.gen_range(-1.0..1.0));
    for _ in 0..2 {
        let mb = apply_cols(&block, exec, |v| mass.mul(v));
        let c = project(q, 0, locked, &mb, exec);
        subtract(q, 0, locked, &c, &mut block, exec);
    }
    orthonormalize(q, &mut block, mass, exec, rng);

    let mut applied = 0;
    let mut thresh = 1e-10;
    let mut last_check = 0;
    let interval = (want / 8).max(4 * b);
    let result = loop {
        let j0 = applied;
        let cur = DMatrix::from_fn(n, b, |i, c| q.col(locked + j0 + c)[i]);
        let mut w = apply_cols(&cur, exec, op);
        let m = q.m;
        // The recurrence only couples neighbouring blocks: remove those
        // first, then sweep the whole basis once to restore orthogonality,
        // repeating the sweep only if it cancelled a large part of the vector.
        let near = (m - locked).min(2 * b);
        let mut mw = apply_cols(&w, exec, |v| mass.mul(v));
        for _ in 0..2 {
            let c = project(q, m - near, near, &mw, exec);
            subtract(q, m - near, near, &c, &mut w, exec);
            let mut hc = h.view_mut((m - near - locked, j0), (near, b));
            hc += c;
            mw = apply_cols(&w, exec, |v| mass.mul(v));
        }
        for _ in 0..3 {
            let before = column_norms(&w, &mw);
            let c = project(q, 0, m, &mw, exec);
            subtract(q, 0, m, &c, &mut w, exec);
            let mut hc = h.view_mut((0, j0), (m - locked, b));
            hc += c.rows(locked, m - locked);
            mw = apply_cols(&w, exec, |v| mass.mul(v));
            let after = column_norms(&w, &mw);
            if before.iter().zip(&after).all(|(b, a)| *a >= 0.5 * b) {
                break;
            }
        }
        applied += b;
        let r = orthonormalize(q, &mut w, mass, exec, rng);
        h.view_mut((m - locked, j0), (b, b)).copy_from(&r);

        let p = applied;
        let exhausted = q.m - locked + b > cap;
        if p < want + b || (p - last_check < interval && !exhausted) {
            if exhausted {
                break Err((vec![f64::INFINITY; want], p));
            }
            continue;
        }
        last_check = p;
        // block tridiagonal in exact arithmetic; entries outside the band
        // are reorthogonalisation round-off
        let w = 2 * b - 1;
        let mut t = BandMatrix::zeros(p, w);
        for j in 0..p {
            for i in j..(j + w + 1).min(p) {
                t.set(i, j, 0.5 * (h[(i, j)] + h[(j, i)]));
            }
        }
        let (theta, svecs) = t.top_eigenpairs(want);
        let coupling = h.view((p, p - b), (b, b));
        let converged_est = theta.iter().zip(&svecs).all(|(th, s)| {
            let tail = nalgebra::DVector::from_column_slice(&s[p - b..]);
            (coupling * tail).norm() <= thresh * th.abs()
        });
        if !converged_est && !exhausted {
            continue;
        }
        let s = DMatrix::from_fn(p, want, |i, c| svecs[c][i]);
        let y = combine_from(q, locked, p, &s, exec);
        let pairs = exec.map(want, |c| finish(k, mass, y.column(c).as_slice()));
        if pairs.iter().all(|p| p.2 <= opts.tol) {
            break Ok((pairs, p));
        }
        if exhausted {
            break Err((pairs.iter().map(|p| p.2).collect(), p));
        }
        thresh *= 1e-2;
    };
    q.truncate(locked);
    result
}

/// Rayleigh quotient, normalised vector with a fixed sign, relative residual.
fn finish(k: &CsrMatrix, mass: &CsrMatrix, y: &[f64]) -> (f64, Vec<f64>, f64) {
    let my = mass.mul(y);
    let nrm = dot(y, &my).sqrt();
    let pivot = y.iter().enumerate().fold(0, |best, (i, v)| if v.abs() > y[best].abs() { i } else { best });
    let s = if y[pivot] < 0.0 { -1.0 / nrm } else { 1.0 / nrm };
    let v: Vec<f64> = y.iter().map(|x| x * s).collect();
    let kv = k.mul(&v);
    let mv: Vec<f64> = my.iter().map(|x| x * s).collect();
    let e = dot(&v, &kv);
    let res: f64 = kv.iter().zip(&mv).map(|(a, b)| (a - e * b).powi(2)).sum::<f64>().sqrt();
    let mnorm = dot(&mv, &mv).sqrt();
    (e, v, res / (e * mnorm))
}

/// `M`-orthonormalises the columns of `w` against each other (the caller has
/// already removed the existing basis) and appends them to `q`. Returns the
/// triangular coefficients. Columns that vanish are replaced by fresh random
/// directions with zero coefficient.
fn orthonormalize(
    q: &mut Basis,
    w: &mut DMatrix<f64>,
    mass: &CsrMatrix,
    exec: Exec,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let b = w.ncols();
    let n = q.n;
    let base = q.m;
    let mut r = DMatrix::zeros(b, b);
    for c in 0..b {
        let mut v: Vec<f64> = w.column(c).iter().copied().collect();
        let start = dot(&v, &mass.mul(&v)).sqrt();
        for _ in 0..2 {
            let mv = mass.mul(&v);
            for d in 0..c {
                let u = q.col(base + d);
                let hcd = dot(u, &mv);
                r[(d, c)] += hcd;
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= hcd * y;
                }
            }
        }
        let mut beta = dot(&v, &mass.mul(&v)).sqrt();
        if !(beta > 1e-10 * start) || start == 0.0 {
            // invariant subspace found: continue with a random direction
            let mut fresh = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0));
            for _ in 0..2 {
                let mf = apply_cols(&fresh, exec, |x| mass.mul(x));
                let cf = project(q, 0, q.m, &mf, exec);
                subtract(q, 0, q.m, &cf, &mut fresh, exec);
            }
            v = fresh.column(0).iter().copied().collect();
            beta = dot(&v, &mass.mul(&v)).sqrt();
            r[(c, c)] = 0.0;
        } else {
            r[(c, c)] = beta;
        }
        for x in &mut v {
            *x /= beta;
        }
        q.push(&v);
    }
    r
}
