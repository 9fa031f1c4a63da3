//! Envelope (profile) Cholesky factorisation with reverse Cuthill–McKee
//! ordering. Finite-element matrices on 2-d meshes have a narrow profile
//! after RCM, which keeps both fill and solve cost modest.

use std::collections::VecDeque;

use super::sparse::CsrMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct NotPositiveDefinite {
    pub row: usize,
    pub pivot: f64,
}

#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<f64>,
}

/// Reverse Cuthill–McKee ordering of the matrix graph.
pub fn rcm(a: &CsrMatrix) -> Vec<usize> {
    let n = a.dim();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| a.row(i).map(|(j, _)| j).filter(|&j| j != i).collect())
        .collect();
    let deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs_last = |root: usize, seen: &mut Vec<bool>| -> (usize, usize) {
        // returns (last node of the final level with minimum degree, depth)
        let mut level = vec![root];
        seen[root] = true;
        let mut touched = vec![root];
        let mut depth = 0;
        loop {
            let mut next = Vec::new();
            for &u in &level {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        touched.push(v);
                        next.push(v);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            depth += 1;
            level = next;
        }
        for t in touched {
            seen[t] = false;
        }
        let best = *level.iter().min_by_key(|&&v| (deg[v], v)).unwrap();
        (best, depth)
    };
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start node
        let mut root = seed;
        let mut scratch = visited.clone();
        let (mut cand, mut depth) = bfs_last(root, &mut scratch);
        for _ in 0..8 {
            let (c2, d2) = bfs_last(cand, &mut scratch);
            if d2 <= depth {
                break;
            }
            root = cand;
            cand = c2;
            depth = d2;
        }
        let _ = cand;
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nb: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nb.sort_by_key(|&v| (deg[v], v));
            for v in nb {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

impl EnvelopeCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self, NotPositiveDefinite> {
        let n = a.dim();
        let perm = rcm(a);
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut first = vec![0; n];
        for (i, f) in first.iter_mut().enumerate() {
            *f = a
                .row(perm[i])
                .map(|(j, _)| iperm[j])
                .filter(|&j| j <= i)
                .min()
                .unwrap_or(i);
        }
        let mut start = vec![0; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut vals = vec![0.0; start[n]];
        for i in 0..n {
            for (j, v) in a.row(perm[i]) {
                let jn = iperm[j];
                if jn <= i {
                    vals[start[i] + jn - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let (head, tail) = vals.split_at_mut(start[i]);
                let row_j = &head[start[j]..start[j + 1]];
                let row_i = &mut tail[..i - fi + 1];
                let mut s = row_i[j - fi];
                let a_i = &row_i[lo - fi..j - fi];
                let a_j = &row_j[lo - fj..j - fj];
                s -= a_i.iter().zip(a_j).map(|(x, y)| x * y).sum::<f64>();
                row_i[j - fi] = s / row_j[j - fj];
            }
            let row_i = &mut vals[start[i]..start[i + 1]];
            let d = row_i[i - fi] - row_i[..i - fi].iter().map(|x| x * x).sum::<f64>();
            if !(d > 0.0) {
                return Err(NotPositiveDefinite { row: perm[i], pivot: d });
            }
            row_i[i - fi] = d.sqrt();
        }
        Ok(Self { n, perm, first, start, vals })
    }

    /// Stored entries of the factor.
    pub fn profile(&self) -> usize {
        self.vals.len()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.vals[self.start[i]..self.start[i + 1]];
            let s: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.vals[self.start[i]..self.start[i + 1]];
            y[i] /= row[i - fi];
            let xi = y[i];
            for (yj, l) in y[fi..i].iter_mut().zip(&row[..i - fi]) {
                *yj -= l * xi;
            }
        }
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i]] = y[i];
        }
        x
    }
}
