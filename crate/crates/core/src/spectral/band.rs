//! Selected eigenpairs of a symmetric band matrix.
//!
//! The projected matrices produced by block Lanczos are block tridiagonal, so
//! a dense `O(p³)` eigensolver wastes most of its work. Here eigenvalues come
//! from Givens reduction to tridiagonal form (`O(p²w)`) and Sturm bisection,
//! and eigenvectors from inverse iteration on the band matrix itself, with
//! reorthogonalisation inside clusters.

/// Symmetric `p × p` matrix with half-bandwidth `w`, full row-major storage.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    p: usize,
    w: usize,
    a: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(p: usize, w: usize) -> Self {
        Self { p, w, a: vec![0.0; p * p] }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.p + j]
    }

    /// Sets `(i, j)` and `(j, i)`; entries outside the band are ignored.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        if i.abs_diff(j) <= self.w {
            self.a[i * self.p + j] = v;
            self.a[j * self.p + i] = v;
        }
    }

    fn norm1(&self) -> f64 {
        (0..self.p)
            .map(|i| {
                let (lo, hi) = self.span(i);
                (lo..hi).map(|j| self.get(i, j).abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    fn span(&self, i: usize) -> (usize, usize) {
        (i.saturating_sub(self.w), (i + self.w + 1).min(self.p))
    }

    /// `y = A x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.p)
            .map(|i| {
                let (lo, hi) = self.span(i);
                (lo..hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// Diagonal and off-diagonal of an orthogonally similar tridiagonal
    /// matrix.
    fn tridiagonal(&self) -> (Vec<f64>, Vec<f64>) {
        let (p, w) = (self.p, self.w);
        let mut a = self.a.clone();
        let idx = |i: usize, j: usize| i * p + j;
        // rotation in plane (r-1, r) chosen to annihilate (r, t)
        let rotate = |a: &mut Vec<f64>, r: usize, t: usize| {
            let x = a[idx(r - 1, t)];
            let y = a[idx(r, t)];
            if y == 0.0 {
                return;
            }
            let rho = x.hypot(y);
            let (c, s) = (x / rho, y / rho);
            let lo = r.saturating_sub(w + 2);
            let hi = (r + w + 2).min(p);
            for k in lo..hi {
                let (u, v) = (a[idx(r - 1, k)], a[idx(r, k)]);
                a[idx(r - 1, k)] = c * u + s * v;
                a[idx(r, k)] = -s * u + c * v;
            }
            for k in lo..hi {
                let (u, v) = (a[idx(k, r - 1)], a[idx(k, r)]);
                a[idx(k, r - 1)] = c * u + s * v;
                a[idx(k, r)] = -s * u + c * v;
            }
            a[idx(r, t)] = 0.0;
            a[idx(t, r)] = 0.0;
        };
        if w > 1 {
            for j in 0..p.saturating_sub(2) {
                for i in (j + 2..=(j + w).min(p - 1)).rev() {
                    if a[idx(i, j)] == 0.0 {
                        continue;
                    }
                    rotate(&mut a, i, j);
                    // chase the bulge created at (r + w, r - 1)
                    let mut r = i;
                    while r + w < p {
                        let (br, bc) = (r + w, r - 1);
                        if a[idx(br, bc)] == 0.0 {
                            break;
                        }
                        rotate(&mut a, br, bc);
                        r = br;
                    }
                }
            }
        }
        let d = (0..p).map(|i| a[idx(i, i)]).collect();
        let e = (1..p).map(|i| a[idx(i, i - 1)]).collect();
        (d, e)
    }

    /// The `count` largest eigenvalues in descending order with orthonormal
    /// eigenvectors.
    pub fn top_eigenpairs(&self, count: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let p = self.p;
        let count = count.min(p);
        let (d, e) = self.tridiagonal();
        let values: Vec<f64> = (0..count).map(|k| kth_eigenvalue(&d, &e, p - 1 - k)).collect();
        let norm = self.norm1().max(f64::MIN_POSITIVE);
        // inverse iteration loses orthogonality like ε‖A‖/gap; below this gap
        // vectors are explicitly reorthogonalised
        let cluster_tol = 1e-6 * norm;
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(count);
        let mut cluster_start = 0;
        for (k, &lambda) in values.iter().enumerate() {
            if k > 0 && values[k - 1] - lambda > cluster_tol {
                cluster_start = k;
            }
            let lu = BandLu::new(self, lambda, norm);
            // deterministic, index-dependent start
            let mut x: Vec<f64> = (0..p).map(|i| 1.0 + 0.5 * ((i * 7919 + k * 104_729) as f64 * 0.618).sin()).collect();
            for _ in 0..3 {
                normalize(&mut x);
                x = lu.solve(&x);
                for v in &vectors[cluster_start..k] {
                    let c = dot(v, &x);
                    x.iter_mut().zip(v).for_each(|(a, b)| *a -= c * b);
                }
            }
            normalize(&mut x);
            vectors.push(x);
        }
        (values, vectors)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(x: &mut [f64]) {
    let n = dot(x, x).sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

/// Number of eigenvalues of the tridiagonal matrix below `x`.
fn sturm_count(d: &[f64], e: &[f64], x: f64, tiny: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..d.len() {
        let off = if i == 0 { 0.0 } else { e[i - 1] * e[i - 1] / q };
        q = d[i] - x - off;
        if q == 0.0 {
            q = -tiny;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// The `k`-th smallest (0-based) eigenvalue by bisection.
fn kth_eigenvalue(d: &[f64], e: &[f64], k: usize) -> f64 {
    let n = d.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < n { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    let tiny = f64::EPSILON * scale;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 2.0 * f64::EPSILON * scale || mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(d, e, mid, tiny) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// LU with partial pivoting of `A − λI` in band storage.
struct BandLu {
    p: usize,
    w: usize,
    /// row `i` holds columns `i − w ..= i + 2w`
    rows: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    fn new(a: &BandMatrix, lambda: f64, norm: f64) -> Self {
        let (p, w) = (a.p, a.w);
        let width = 3 * w + 1;
        let mut rows = vec![0.0; p * width];
        // absolute column c of row i lives at i*width + c + w - i
        let at = |i: usize, c: usize| i * width + c + w - i;
        for i in 0..p {
            let (lo, hi) = a.span(i);
            for j in lo..hi {
                rows[at(i, j)] = a.get(i, j) - if i == j { lambda } else { 0.0 };
            }
        }
        let floor = f64::EPSILON * norm;
        let mut piv = vec![0; p];
        for k in 0..p {
            let last = (k + w).min(p - 1);
            let mut best = k;
            for r in k + 1..=last {
                if rows[at(r, k)].abs() > rows[at(best, k)].abs() {
                    best = r;
                }
            }
            piv[k] = best;
            let cmax = (k + 2 * w).min(p - 1);
            if best != k {
                for c in k..=cmax {
                    rows.swap(at(k, c), at(best, c));
                }
            }
            if rows[at(k, k)].abs() < floor {
                rows[at(k, k)] = if rows[at(k, k)] < 0.0 { -floor } else { floor };
            }
            let pivot = rows[at(k, k)];
            for r in k + 1..=last {
                let l = rows[at(r, k)] / pivot;
                rows[at(r, k)] = l;
                if l != 0.0 {
                    for c in k + 1..=cmax {
                        rows[at(r, c)] -= l * rows[at(k, c)];
                    }
                }
            }
        }
        Self { p, w, rows, piv }
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (p, w) = (self.p, self.w);
        let width = 3 * w + 1;
        let at = |i: usize, c: usize| i * width + c + w - i;
        let mut x = b.to_vec();
        for k in 0..p {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            for r in k + 1..=(k + w).min(p - 1) {
                x[r] -= self.rows[at(r, k)] * xk;
            }
        }
        for k in (0..p).rev() {
            let mut s = x[k];
            for c in k + 1..=(k + 2 * w).min(p - 1) {
                s -= self.rows[at(k, c)] * x[c];
            }
            x[k] = s / self.rows[at(k, k)];
        }
        x
    }
}
