//! Sparse LU factorization of a simplex basis, left-looking with partial
//! pivoting, plus forward/backward solves.
//!
//! Columns are processed in basis-slot order, so pivot position `k` always
//! corresponds to basis slot `k`; only rows are permuted. Numerically
//! dependent columns are repaired in place by substituting logicals.

/// Position marker for rows that have not been pivoted yet.
const UNPIVOTED: usize = usize::MAX;

#[derive(Debug, Clone, Default)]
pub struct Lu {
    pub m: usize,
    /// Original row -> pivot position.
    pub pinv: Vec<usize>,
    /// Pivot position -> original row.
    pub prow: Vec<usize>,
    // L is unit lower triangular; strictly-below-diagonal entries per
    // column. Row indices are kept both as original rows (for ftran) and
    // as pivot positions (for btran).
    lp: Vec<usize>,
    li_orig: Vec<usize>,
    li_pos: Vec<usize>,
    lx: Vec<f64>,
    // U strictly-above-diagonal entries per column in pivot-position
    // space, plus the diagonal.
    up: Vec<usize>,
    ui: Vec<usize>,
    ux: Vec<f64>,
    udiag: Vec<f64>,
}

/// Scratch buffers reused across factorizations.
#[derive(Debug, Default)]
pub struct LuScratch {
    work: Vec<f64>,
    visited: Vec<u32>,
    stamp: u32,
    stack: Vec<(usize, usize)>,
    topo: Vec<usize>,
    col: Vec<(usize, f64)>,
}

#[derive(Debug)]
pub struct Factorized {
    pub lu: Lu,
    /// Slots whose columns were numerically dependent, with the original
    /// row whose logical replaced them.
    pub repaired: Vec<(usize, usize)>,
}

pub fn factorize(
    m: usize,
    mut col_of: impl FnMut(usize, &mut Vec<(usize, f64)>),
    pivot_tol: f64,
    scratch: &mut LuScratch,
) -> Factorized {
    let mut lu = Lu {
        m,
        pinv: vec![UNPIVOTED; m],
        prow: vec![0; m],
        lp: Vec::with_capacity(m + 1),
        li_orig: Vec::new(),
        li_pos: Vec::new(),
        lx: Vec::new(),
        up: Vec::with_capacity(m + 1),
        ui: Vec::new(),
        ux: Vec::new(),
        udiag: vec![0.0; m],
    };
    lu.lp.push(0);
    lu.up.push(0);
    let mut repaired = Vec::new();

    scratch.work.clear();
    scratch.work.resize(m, 0.0);
    scratch.visited.clear();
    scratch.visited.resize(m, 0);
    scratch.stamp = 0;

    for k in 0..m {
        scratch.col.clear();
        col_of(k, &mut scratch.col);
        eliminate(&lu, scratch);

        // Pivot: the largest eliminated value on a still-unpivoted row,
        // ties broken toward the lowest original row index.
        let mut best: Option<(usize, f64)> = None;
        for &i in &scratch.topo {
            if lu.pinv[i] == UNPIVOTED {
                let v = scratch.work[i];
                let better = match best {
                    None => true,
                    Some((bi, bv)) => {
                        v.abs() > bv.abs() || (v.abs() == bv.abs() && i < bi)
                    }
                };
                if better {
                    best = Some((i, v));
                }
            }
        }
        let (prow, pval) = match best {
            Some((r, v)) if v.abs() >= pivot_tol => (r, v),
            _ => {
                for &i in &scratch.topo {
                    scratch.work[i] = 0.0;
                }
                scratch.topo.clear();
                let r = (0..m)
                    .find(|&r| lu.pinv[r] == UNPIVOTED)
                    .expect("a row is always left for repair");
                repaired.push((k, r));
                scratch.topo.push(r);
                scratch.work[r] = 1.0;
                (r, 1.0)
            }
        };

        for idx in 0..scratch.topo.len() {
            let i = scratch.topo[idx];
            let v = scratch.work[i];
            scratch.work[i] = 0.0;
            if i == prow || v == 0.0 {
                continue;
            }
            let pos = lu.pinv[i];
            if pos != UNPIVOTED {
                lu.ui.push(pos);
                lu.ux.push(v);
            } else {
                lu.li_orig.push(i);
                lu.lx.push(v / pval);
            }
        }
        lu.udiag[k] = pval;
        lu.pinv[prow] = k;
        lu.prow[k] = prow;
        lu.lp.push(lu.lx.len());
        lu.up.push(lu.ux.len());
    }

    lu.li_pos = lu.li_orig.iter().map(|&i| lu.pinv[i]).collect();
    Factorized { lu, repaired }
}

/// Sparse solve of L v = (current column) through the partial factors,
/// leaving the result scattered in `scratch.work` with its pattern listed
/// in `scratch.topo` in post-order (dependencies appear after dependents).
fn eliminate(lu: &Lu, scratch: &mut LuScratch) {
    scratch.stamp += 1;
    let stamp = scratch.stamp;
    scratch.topo.clear();

    for c in 0..scratch.col.len() {
        let start = scratch.col[c].0;
        if scratch.visited[start] == stamp {
            continue;
        }
        scratch.visited[start] = stamp;
        scratch.stack.clear();
        scratch.stack.push((start, 0));
        while let Some(top) = scratch.stack.last_mut() {
            let (node, edge) = (top.0, top.1);
            let pos = lu.pinv[node];
            let deg = if pos == UNPIVOTED { 0 } else { lu.lp[pos + 1] - lu.lp[pos] };
            if edge < deg {
                top.1 += 1;
                let child = lu.li_orig[lu.lp[pos] + edge];
                if scratch.visited[child] != stamp {
                    scratch.visited[child] = stamp;
                    scratch.stack.push((child, 0));
                }
            } else {
                scratch.topo.push(node);
                scratch.stack.pop();
            }
        }
    }

    for &(i, v) in &scratch.col {
        scratch.work[i] += v;
    }
    // Reverse post-order is topological: each pivoted node's value is
    // final before it updates the rows below it.
    for idx in (0..scratch.topo.len()).rev() {
        let i = scratch.topo[idx];
        let pos = lu.pinv[i];
        if pos == UNPIVOTED {
            continue;
        }
        let xi = scratch.work[i];
        if xi == 0.0 {
            continue;
        }
        for e in lu.lp[pos]..lu.lp[pos + 1] {
            scratch.work[lu.li_orig[e]] -= lu.lx[e] * xi;
        }
    }
}

impl Lu {
    /// Solves B x = b. `b` is dense in original row space and is consumed;
    /// `out` receives x in basis-slot space.
    pub fn ftran(&self, b: &mut [f64], out: &mut [f64]) {
        debug_assert_eq!(b.len(), self.m);
        debug_assert_eq!(out.len(), self.m);
        for k in 0..self.m {
            let vk = b[self.prow[k]];
            out[k] = vk;
            if vk != 0.0 {
                for e in self.lp[k]..self.lp[k + 1] {
                    b[self.li_orig[e]] -= self.lx[e] * vk;
                }
            }
        }
        for &r in &self.prow {
            b[r] = 0.0;
        }
        for k in (0..self.m).rev() {
            let xk = out[k] / self.udiag[k];
            out[k] = xk;
            if xk != 0.0 {
                for e in self.up[k]..self.up[k + 1] {
                    out[self.ui[e]] -= self.ux[e] * xk;
                }
            }
        }
    }

    /// Solves B^T y = c. `c` is dense in basis-slot space and is consumed;
    /// `out` receives y in original row space.
    pub fn btran(&self, c: &mut [f64], out: &mut [f64]) {
        debug_assert_eq!(c.len(), self.m);
        debug_assert_eq!(out.len(), self.m);
        for k in 0..self.m {
            let mut wk = c[k];
            for e in self.up[k]..self.up[k + 1] {
                wk -= self.ux[e] * c[self.ui[e]];
            }
            c[k] = wk / self.udiag[k];
        }
        for k in (0..self.m).rev() {
            let mut zk = c[k];
            for e in self.lp[k]..self.lp[k + 1] {
                zk -= self.lx[e] * c[self.li_pos[e]];
            }
            c[k] = zk;
        }
        for r in 0..self.m {
            out[r] = c[self.pinv[r]];
        }
        for v in c.iter_mut() {
            *v = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_cols(a: &[Vec<f64>]) -> impl FnMut(usize, &mut Vec<(usize, f64)>) + '_ {
        move |k, out| {
            for (i, &v) in a[k].iter().enumerate() {
                if v != 0.0 {
                    out.push((i, v));
                }
            }
        }
    }

    fn check_solves(a: &[Vec<f64>]) {
        let m = a.len();
        let mut scratch = LuScratch::default();
        let f = factorize(m, dense_cols(a), 1e-10, &mut scratch);
        assert!(f.repaired.is_empty(), "unexpected repair: {:?}", f.repaired);

        // ftran: B x = b.
        let b: Vec<f64> = (0..m).map(|i| (i as f64 * 0.7).sin() + 1.5).collect();
        let mut rhs = b.clone();
        let mut x = vec![0.0; m];
        f.lu.ftran(&mut rhs, &mut x);
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..m {
                acc += a[j][i] * x[j];
            }
            assert!((acc - b[i]).abs() < 1e-9, "ftran row {i}: {acc} vs {}", b[i]);
        }

        // btran: B^T y = c.
        let c: Vec<f64> = (0..m).map(|i| (i as f64 * 1.3).cos() - 0.2).collect();
        let mut lhs = c.clone();
        let mut y = vec![0.0; m];
        f.lu.btran(&mut lhs, &mut y);
        for j in 0..m {
            let mut acc = 0.0;
            for i in 0..m {
                acc += a[j][i] * y[i];
            }
            assert!((acc - c[j]).abs() < 1e-9, "btran col {j}: {acc} vs {}", c[j]);
        }
    }

    #[test]
    fn identity_and_permutation() {
        check_solves(&[
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ]);
    }

    #[test]
    fn dense_small_matrix() {
        check_solves(&[
            vec![2.0, 1.0, 0.5, 0.0],
            vec![-1.0, 3.0, 0.0, 0.25],
            vec![0.0, -2.0, 4.0, 1.0],
            vec![1.0, 0.0, -1.0, 2.5],
        ]);
    }

    #[test]
    fn lower_triangular_chain() {
        // Recursion-shaped basis: x(t+1) - 0.9 x(t) pattern.
        let m = 50;
        let mut a = vec![vec![0.0; m]; m];
        for k in 0..m {
            a[k][k] = 1.0;
            if k + 1 < m {
                a[k][k + 1] = -0.9;
            }
        }
        check_solves(&a);
    }

    #[test]
    fn singular_column_is_repaired() {
        // Third column is a copy of the first.
        let a = vec![
            vec![1.0, 2.0, 0.0],
            vec![0.0, 1.0, 1.0],
            vec![1.0, 2.0, 0.0],
        ];
        let mut scratch = LuScratch::default();
        let f = factorize(3, dense_cols(&a), 1e-10, &mut scratch);
        assert_eq!(f.repaired.len(), 1);
        let (slot, row) = f.repaired[0];
        assert_eq!(slot, 2);
        // The repaired basis must be solvable.
        let mut rhs = vec![1.0, 1.0, 1.0];
        let mut x = vec![0.0; 3];
        f.lu.ftran(&mut rhs, &mut x);
        for v in &x {
            assert!(v.is_finite());
        }
        assert!(row < 3);
    }

    #[test]
    fn random_sparse_round_trip() {
        // Deterministic pseudo-random sparse matrix with guaranteed
        // nonzero diagonal.
        let m = 120;
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut a = vec![vec![0.0; m]; m];
        for (k, col) in a.iter_mut().enumerate() {
            col[k] = 1.0 + next();
            for _ in 0..3 {
                let i = (next() * m as f64) as usize % m;
                col[i] += next() - 0.5;
            }
        }
        check_solves(&a);
    }
}
