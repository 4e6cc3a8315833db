//! Best-bound branch and bound over the simplex working model.
//!
//! Nodes store only their branching delta; switching the active node
//! undoes the currently applied bound changes and replays the new node's
//! chain, so the simplex warm-starts from the previous node's basis every
//! time. Bound tightening runs per node and is undone the same way.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::simplex::{SolveOutcome, Work};
use super::tighten::{propagate, PropagationResult};
use super::{KernelError, MipParams, MipStatus};

pub const INT_TOL: f64 = 1e-6;
const PRUNE_EPS: f64 = 1e-9;

#[derive(Debug)]
pub struct RawMip {
    pub status: MipStatus,
    pub x: Vec<f64>,
    pub obj: f64,
    pub bound: f64,
    pub nodes: u64,
    pub lp_iterations: u64,
}

struct Node {
    parent: usize,
    /// Bound override applied on top of the parent: col gets [lo, hi].
    branch: Option<(usize, f64, f64)>,
}

#[derive(PartialEq)]
struct HeapKey(f64, u64);
impl Eq for HeapKey {}
impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Maximum row visits per node for propagation: generous at the root,
/// cheap in the tree.
fn visit_cap(m: usize, root: bool) -> usize {
    if root {
        30 * m.max(16)
    } else {
        8 * m.max(16)
    }
}

fn verify_against_work(work: &Work, x: &[f64], tol: f64) -> Result<(), String> {
    if x.len() != work.n {
        return Err(format!("point has {} entries, model has {}", x.len(), work.n));
    }
    for (j, &v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(format!("col {j}: value not finite"));
        }
        if v < work.lower[j] - tol || v > work.upper[j] + tol {
            return Err(format!(
                "col {j}: value {v} outside [{}, {}]",
                work.lower[j], work.upper[j]
            ));
        }
        if work.integer[j] && (v - v.round()).abs() > tol {
            return Err(format!("col {j}: value {v} not integral"));
        }
    }
    let mut act = vec![0.0; work.m];
    for j in 0..work.n {
        if x[j] != 0.0 {
            for e in work.col_ptr[j]..work.col_ptr[j + 1] {
                act[work.col_rows[e]] += work.col_vals[e] * x[j];
            }
        }
    }
    for r in 0..work.m {
        let (s_lo, s_hi) = (work.lower[work.n + r], work.upper[work.n + r]);
        let lo = if s_hi.is_finite() { work.rhs[r] - s_hi } else { f64::NEG_INFINITY };
        let hi = if s_lo.is_finite() { work.rhs[r] - s_lo } else { f64::INFINITY };
        if act[r] < lo - tol || act[r] > hi + tol {
            return Err(format!("row {r}: activity {} outside [{lo}, {hi}]", act[r]));
        }
    }
    Ok(())
}

fn most_fractional(work: &Work) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for j in 0..work.n {
        if !work.integer[j] {
            continue;
        }
        let v = work.value_of(j);
        let f = v - v.floor();
        let dist = f.min(1.0 - f);
        if dist <= INT_TOL {
            continue;
        }
        match best {
            Some((_, bd)) if bd >= dist => {}
            _ => best = Some((j, dist)),
        }
    }
    best
}

fn rel_gap(obj: f64, bound: f64) -> f64 {
    if obj.is_infinite() || bound.is_infinite() {
        return f64::INFINITY;
    }
    (obj - bound).abs() / bound.abs().max(1e-10)
}

pub fn branch_and_bound(work: &mut Work, params: &MipParams) -> Result<RawMip, KernelError> {
    let start = Instant::now();
    // Arm the pivot-level deadline so a single long node relaxation (the
    // root included) cannot overrun the budget; the per-node check alone
    // only fires between nodes.
    work.deadline =
        params.time_limit_s.map(|s| start + std::time::Duration::from_secs_f64(s.max(0.0)));
    let root_lower = work.lower.clone();
    let root_upper = work.upper.clone();

    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    if let Some(x0) = &params.initial_incumbent {
        verify_against_work(work, x0, 1e-6).map_err(KernelError::BadIncumbent)?;
        let mut obj = 0.0;
        for j in 0..work.n {
            obj += work.cost[j] * x0[j];
        }
        incumbent = Some((obj, x0.clone()));
    }

    let mut nodes: Vec<Node> = vec![Node { parent: usize::MAX, branch: None }];
    let mut open: BinaryHeap<Reverse<(HeapKey, usize)>> = BinaryHeap::new();
    open.push(Reverse((HeapKey(f64::NEG_INFINITY, 0), 0)));
    let mut seq: u64 = 1;

    // Bound changes currently applied on top of the root bounds.
    let mut applied: Vec<(usize, f64, f64)> = Vec::new();
    let mut chain: Vec<(usize, f64, f64)> = Vec::new();

    let mut best_bound = f64::NEG_INFINITY;
    let mut solved: u64 = 0;
    let mut status: Option<MipStatus> = None;
    let mut unbounded = false;

    while let Some(Reverse((HeapKey(node_lb, _), id))) = open.pop() {
        // The heap minimum is the global lower bound over open nodes.
        best_bound = best_bound.max(node_lb);
        if let Some((inc_obj, _)) = &incumbent {
            if node_lb.is_finite() && rel_gap(*inc_obj, node_lb) <= params.rel_gap {
                status = Some(MipStatus::Optimal);
                break;
            }
            if node_lb >= *inc_obj - PRUNE_EPS {
                continue;
            }
        }
        if solved >= params.node_limit {
            status = Some(if incumbent.is_some() {
                MipStatus::Feasible
            } else {
                MipStatus::NoIncumbent
            });
            break;
        }
        if let Some(limit) = params.time_limit_s {
            if start.elapsed().as_secs_f64() > limit {
                status = Some(if incumbent.is_some() {
                    MipStatus::Feasible
                } else {
                    MipStatus::NoIncumbent
                });
                break;
            }
        }

        // Switch bounds: undo everything, replay this node's chain.
        for &(j, lo, hi) in applied.iter().rev() {
            work.lower[j] = lo;
            work.upper[j] = hi;
        }
        applied.clear();
        chain.clear();
        let mut cursor = id;
        while cursor != usize::MAX {
            if let Some(delta) = nodes[cursor].branch {
                chain.push(delta);
            }
            cursor = nodes[cursor].parent;
        }
        for &(j, lo, hi) in chain.iter().rev() {
            applied.push((j, work.lower[j], work.upper[j]));
            work.lower[j] = lo;
            work.upper[j] = hi;
        }

        solved += 1;
        let mut deltas = Vec::new();
        let feasible = matches!(
            propagate(work, &mut deltas, visit_cap(work.m, id == 0)),
            PropagationResult::Consistent
        );
        applied.extend(deltas);
        if !feasible {
            continue;
        }

        match work.optimize() {
            SolveOutcome::Optimal => {}
            SolveOutcome::Infeasible => continue,
            SolveOutcome::Unbounded => {
                // A ray in any node's relaxation rides continuous columns
                // past every bound; the enclosing problem shares it.
                unbounded = true;
                break;
            }
            SolveOutcome::Deadline => {
                status = Some(if incumbent.is_some() {
                    MipStatus::Feasible
                } else {
                    MipStatus::NoIncumbent
                });
                break;
            }
            SolveOutcome::Stalled => {
                // One cold retry from scratch before giving up.
                work.set_reference(None);
                work.crash_basis();
                match work.optimize() {
                    SolveOutcome::Optimal => {}
                    SolveOutcome::Infeasible => continue,
                    SolveOutcome::Deadline => {
                        status = Some(if incumbent.is_some() {
                            MipStatus::Feasible
                        } else {
                            MipStatus::NoIncumbent
                        });
                        break;
                    }
                    _ => {
                        return Err(KernelError::Numerical(
                            "simplex stalled inside branch and bound".into(),
                        ))
                    }
                }
            }
        }

        let lp_obj = work.objective();
        let lb = node_lb.max(lp_obj);
        if let Some((inc_obj, _)) = &incumbent {
            if lb >= *inc_obj - PRUNE_EPS {
                continue;
            }
        }

        match most_fractional(work) {
            None => {
                let x = work.extract_x();
                let better = incumbent.as_ref().map_or(true, |(io, _)| lp_obj < *io - 1e-12);
                if better {
                    incumbent = Some((lp_obj, x));
                }
            }
            Some((col, _)) => {
                let v = work.value_of(col);
                let lo = work.lower[col];
                let hi = work.upper[col];
                let down = (col, lo, v.floor());
                let up = (col, v.ceil(), hi);
                for delta in [down, up] {
                    nodes.push(Node { parent: id, branch: Some(delta) });
                    open.push(Reverse((HeapKey(lb, seq), nodes.len() - 1)));
                    seq += 1;
                }
            }
        }
    }

    // Restore root bounds before reporting.
    work.deadline = None;
    for &(j, lo, hi) in applied.iter().rev() {
        work.lower[j] = lo;
        work.upper[j] = hi;
    }
    applied.clear();
    debug_assert_eq!(work.lower, root_lower);
    debug_assert_eq!(work.upper, root_upper);
    work.clamp_nonbasics();

    if unbounded {
        return Ok(RawMip {
            status: MipStatus::Unbounded,
            x: Vec::new(),
            obj: f64::NEG_INFINITY,
            bound: f64::NEG_INFINITY,
            nodes: solved,
            lp_iterations: work.stats.iterations,
        });
    }

    let status = match status {
        Some(s) => s,
        // Natural exhaustion: the tree is fully explored.
        None if incumbent.is_some() => {
            best_bound = incumbent.as_ref().map(|(o, _)| *o).unwrap();
            MipStatus::Optimal
        }
        None => MipStatus::Infeasible,
    };
    let (obj, x) = match &incumbent {
        Some((o, xs)) => (*o, xs.clone()),
        None => (f64::INFINITY, Vec::new()),
    };
    if matches!(status, MipStatus::Infeasible) {
        best_bound = f64::INFINITY;
    }
    Ok(RawMip {
        status,
        x,
        obj,
        bound: best_bound,
        nodes: solved,
        lp_iterations: work.stats.iterations,
    })
}
