//! Activity-based interval propagation over the rows of a working model.
//!
//! Every row is treated as a range constraint lo <= a.x <= hi derived from
//! its logical's bounds. Propagation only ever shrinks variable domains, so
//! it is safe at any node of a search tree; integer domains are rounded.

use super::simplex::Work;

const IMPROVE_TOL: f64 = 1e-7;
const INT_GRACE: f64 = 1e-6;
const INFEAS_TOL: f64 = 1e-9;

pub enum PropagationResult {
    Consistent,
    Infeasible,
}

/// Tightens `work.lower`/`work.upper` of structural columns in place,
/// recording every change as (col, old_lower, old_upper) so the caller can
/// undo it. Visits at most `visit_cap` rows.
pub fn propagate(
    work: &mut Work,
    deltas: &mut Vec<(usize, f64, f64)>,
    visit_cap: usize,
) -> PropagationResult {
    let m = work.m;
    let mut in_queue = vec![true; m];
    let mut queue: std::collections::VecDeque<usize> = (0..m).collect();
    let mut visits = 0usize;

    while let Some(r) = queue.pop_front() {
        in_queue[r] = false;
        visits += 1;
        if visits > visit_cap {
            break;
        }
        // Row range from the logical's bounds: a.x = rhs - s.
        let (s_lo, s_hi) = (work.lower[work.n + r], work.upper[work.n + r]);
        let row_lo = if s_hi.is_finite() { work.rhs[r] - s_hi } else { f64::NEG_INFINITY };
        let row_hi = if s_lo.is_finite() { work.rhs[r] - s_lo } else { f64::INFINITY };

        // Activity bounds with infinity counting.
        let mut min_fin = 0.0;
        let mut max_fin = 0.0;
        let mut min_inf = 0usize;
        let mut max_inf = 0usize;
        for e in work.row_ptr[r]..work.row_ptr[r + 1] {
            let j = work.row_cols[e];
            let a = work.row_vals[e];
            let (lo, hi) = if a > 0.0 {
                (work.lower[j], work.upper[j])
            } else {
                (work.upper[j], work.lower[j])
            };
            let lo_term = a * lo;
            let hi_term = a * hi;
            if lo_term.is_finite() {
                min_fin += lo_term;
            } else {
                min_inf += 1;
            }
            if hi_term.is_finite() {
                max_fin += hi_term;
            } else {
                max_inf += 1;
            }
        }

        // Row-level infeasibility check.
        if min_inf == 0 && min_fin > row_hi + INFEAS_TOL.max(1e-7 * min_fin.abs()) {
            return PropagationResult::Infeasible;
        }
        if max_inf == 0 && max_fin < row_lo - INFEAS_TOL.max(1e-7 * max_fin.abs()) {
            return PropagationResult::Infeasible;
        }

        for e in work.row_ptr[r]..work.row_ptr[r + 1] {
            let j = work.row_cols[e];
            let a = work.row_vals[e];
            if a.abs() < 1e-12 {
                continue;
            }
            let (lo_j, hi_j) = if a > 0.0 {
                (work.lower[j], work.upper[j])
            } else {
                (work.upper[j], work.lower[j])
            };
            let own_min = a * lo_j;
            let own_max = a * hi_j;
            // Residual activity of the other terms.
            let others_min = if own_min.is_finite() {
                if min_inf == 0 { Some(min_fin - own_min) } else { None }
            } else if min_inf == 1 {
                Some(min_fin)
            } else {
                None
            };
            let others_max = if own_max.is_finite() {
                if max_inf == 0 { Some(max_fin - own_max) } else { None }
            } else if max_inf == 1 {
                Some(max_fin)
            } else {
                None
            };

            let mut new_lower = work.lower[j];
            let mut new_upper = work.upper[j];
            // a * x <= row_hi - others_min.
            if let Some(omin) = others_min {
                if row_hi.is_finite() {
                    let cap = (row_hi - omin) / a;
                    if a > 0.0 {
                        new_upper = new_upper.min(cap);
                    } else {
                        new_lower = new_lower.max(cap);
                    }
                }
            }
            // a * x >= row_lo - others_max.
            if let Some(omax) = others_max {
                if row_lo.is_finite() {
                    let floor = (row_lo - omax) / a;
                    if a > 0.0 {
                        new_lower = new_lower.max(floor);
                    } else {
                        new_upper = new_upper.min(floor);
                    }
                }
            }
            if work.integer[j] {
                if new_lower.is_finite() {
                    new_lower = (new_lower - INT_GRACE).ceil();
                }
                if new_upper.is_finite() {
                    new_upper = (new_upper + INT_GRACE).floor();
                }
            }
            // Infinite old bounds poison the relative-threshold arithmetic,
            // so a finite replacement counts as an improvement outright.
            let improved_lo = if work.lower[j].is_finite() {
                new_lower > work.lower[j] + IMPROVE_TOL * (1.0 + work.lower[j].abs())
            } else {
                new_lower.is_finite()
            };
            let improved_hi = if work.upper[j].is_finite() {
                new_upper < work.upper[j] - IMPROVE_TOL * (1.0 + work.upper[j].abs())
            } else {
                new_upper.is_finite()
            };
            if !(improved_lo || improved_hi) {
                continue;
            }
            if new_lower > new_upper + INFEAS_TOL {
                return PropagationResult::Infeasible;
            }
            deltas.push((j, work.lower[j], work.upper[j]));
            if improved_lo {
                work.lower[j] = new_lower.min(work.upper[j]);
            }
            if improved_hi {
                work.upper[j] = new_upper.max(work.lower[j]);
            }
            for e2 in work.col_ptr[j]..work.col_ptr[j + 1] {
                let r2 = work.col_rows[e2];
                if !in_queue[r2] {
                    in_queue[r2] = true;
                    queue.push_back(r2);
                }
            }
        }
    }
    PropagationResult::Consistent
}

#[cfg(test)]
mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    fn work_for(
        m: usize,
        rhs: Vec<f64>,
        entries: &[Vec<(usize, f64)>],
        lower: &[f64],
        upper: &[f64],
        ints: &[bool],
        logicals: &[(f64, f64)],
    ) -> Work {
        let cost = vec![0.0; entries.len()];
        Work::new(m, rhs, entries, lower, upper, &cost, ints, logicals)
    }

    #[test]
    fn fixes_binary_chain_from_budget_row() {
        // x0 + x1 + x2 = 2 with x0 fixed to 1 and x1 fixed to 1 forces
        // x2 = 0; all binary.
        let mut w = work_for(
            1,
            vec![2.0],
            &[vec![(0, 1.0)], vec![(0, 1.0)], vec![(0, 1.0)]],
            &[1.0, 1.0, 0.0],
            &[1.0, 1.0, 1.0],
            &[true, true, true],
            &[(0.0, 0.0)],
        );
        let mut deltas = Vec::new();
        assert!(matches!(propagate(&mut w, &mut deltas, 100), PropagationResult::Consistent));
        assert_eq!(w.lower[2], 0.0);
        assert_eq!(w.upper[2], 0.0);
        assert!(!deltas.is_empty());
    }

    #[test]
    fn detects_infeasible_row() {
        // x0 + x1 >= 3 with both in [0, 1].
        let mut w = work_for(
            1,
            vec![3.0],
            &[vec![(0, 1.0)], vec![(0, 1.0)]],
            &[0.0, 0.0],
            &[1.0, 1.0],
            &[false, false],
            &[(-INF, 0.0)],
        );
        let mut deltas = Vec::new();
        assert!(matches!(propagate(&mut w, &mut deltas, 100), PropagationResult::Infeasible));
    }

    #[test]
    fn integer_rounding_applies() {
        // 2 x0 <= 3 with x0 integer in [0, 5] tightens to x0 <= 1.
        let mut w = work_for(
            1,
            vec![3.0],
            &[vec![(0, 2.0)]],
            &[0.0],
            &[5.0],
            &[true],
            &[(0.0, INF)],
        );
        let mut deltas = Vec::new();
        assert!(matches!(propagate(&mut w, &mut deltas, 100), PropagationResult::Consistent));
        assert_eq!(w.upper[0], 1.0);
    }

    #[test]
    fn undo_restores_bounds() {
        let mut w = work_for(
            1,
            vec![3.0],
            &[vec![(0, 2.0)]],
            &[0.0],
            &[5.0],
            &[true],
            &[(0.0, INF)],
        );
        let mut deltas = Vec::new();
        propagate(&mut w, &mut deltas, 100);
        for &(j, lo, hi) in deltas.iter().rev() {
            w.lower[j] = lo;
            w.upper[j] = hi;
        }
        assert_eq!(w.upper[0], 5.0);
        assert_eq!(w.lower[0], 0.0);
    }

    #[test]
    fn free_variables_block_residual_reasoning() {
        // x0 free, x1 in [0,1], x0 + x1 <= 4: nothing should tighten x1,
        // and x0 gets an upper bound from the row.
        let mut w = work_for(
            1,
            vec![4.0],
            &[vec![(0, 1.0)], vec![(0, 1.0)]],
            &[-INF, 0.0],
            &[INF, 1.0],
            &[false, false],
            &[(0.0, INF)],
        );
        let mut deltas = Vec::new();
        assert!(matches!(propagate(&mut w, &mut deltas, 100), PropagationResult::Consistent));
        // x0 <= 4 - lower(x1) = 4.
        assert_eq!(w.upper[0], 4.0);
        // x1's residual involves x0's minimum, which is -inf: untouched.
        assert_eq!(w.upper[1], 1.0);
    }
}
