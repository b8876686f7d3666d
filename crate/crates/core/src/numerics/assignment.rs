//! Exact minimum-cost assignment via shortest augmenting paths.
//!
//! Jonker-Volgenant style: rows are inserted one at a time, each by a
//! Dijkstra-like search over reduced costs `c[i][j] - u[i] - v[j]`, after
//! which the dual potentials are updated so all reduced costs stay
//! non-negative. Exact for finite cost matrices; no epsilon scaling.

use ndarray::Array2;

use super::{NumericsError, ASSIGNMENT_CAP};
use crate::Real;

const UNSET: usize = usize::MAX;

/// Minimize `sum_i c[i, sigma(i)]` over permutations `sigma`.
///
/// Returns `sigma` as a vector mapping each row to its assigned column. The
/// cost matrix must be square, finite, and at most [`ASSIGNMENT_CAP`] on a
/// side.
pub fn solve_assignment<T: Real>(cost: &Array2<T>) -> Result<Vec<usize>, NumericsError> {
    let (nr, nc) = cost.dim();
    if nr != nc {
        return Err(NumericsError::NonSquareCost { nr, nc });
    }
    let n = nr;
    if n == 0 {
        return Ok(Vec::new());
    }
    if n > ASSIGNMENT_CAP {
        return Err(NumericsError::AssignmentTooLarge {
            n,
            cap: ASSIGNMENT_CAP,
        });
    }
    if let Some(((row, col), _)) = cost.indexed_iter().find(|(_, &x)| !x.is_finite()) {
        return Err(NumericsError::NonFiniteCost { row, col });
    }
    // Zero-copy for standard-layout inputs, a straightening copy otherwise.
    let cost_std = cost.as_standard_layout();
    let cost_flat = cost_std.as_slice().expect("standard layout has a slice");

    let mut u = vec![T::zero(); n];
    let mut v = vec![T::zero(); n];
    let mut shortest_path_costs = vec![T::infinity(); n];
    let mut path = vec![UNSET; n];
    let mut col4row = vec![UNSET; n];
    let mut row4col = vec![UNSET; n];
    let mut sr = vec![false; n];
    let mut sc = vec![false; n];
    let mut remaining = vec![0usize; n];

    for cur_row in 0..n {
        let (sink, min_val) = augmenting_path(
            cost_flat,
            n,
            &u,
            &v,
            &mut path,
            &row4col,
            &mut shortest_path_costs,
            cur_row,
            &mut sr,
            &mut sc,
            &mut remaining,
        );
        debug_assert!(sink != UNSET, "finite costs always admit a perfect matching");

        u[cur_row] += min_val;
        for i in 0..n {
            if sr[i] && i != cur_row {
                u[i] += min_val - shortest_path_costs[col4row[i]];
            }
        }
        for j in 0..n {
            if sc[j] {
                v[j] -= min_val - shortest_path_costs[j];
            }
        }

        // Walk the augmenting path backwards, flipping assignments.
        let mut j = sink;
        loop {
            let i = path[j];
            row4col[j] = i;
            std::mem::swap(&mut col4row[i], &mut j);
            if i == cur_row {
                break;
            }
        }
    }

    Ok(col4row)
}

#[allow(clippy::too_many_arguments)]
fn augmenting_path<T: Real>(
    cost_flat: &[T],
    n: usize,
    u: &[T],
    v: &[T],
    path: &mut [usize],
    row4col: &[usize],
    shortest_path_costs: &mut [T],
    start_row: usize,
    sr: &mut [bool],
    sc: &mut [bool],
    remaining: &mut [usize],
) -> (usize, T) {
    let mut min_val = T::zero();
    let mut num_remaining = n;
    for (it, slot) in remaining.iter_mut().enumerate() {
        *slot = n - it - 1;
    }
    sr.fill(false);
    sc.fill(false);
    shortest_path_costs.fill(T::infinity());

    let mut i = start_row;
    let mut sink = UNSET;
    while sink == UNSET {
        let mut index = UNSET;
        let mut lowest = T::infinity();
        sr[i] = true;
        let row = &cost_flat[i * n..(i + 1) * n];
        for it in 0..num_remaining {
            let j = remaining[it];
            let r = min_val + row[j] - u[i] - v[j];
            if r < shortest_path_costs[j] {
                path[j] = i;
                shortest_path_costs[j] = r;
            }
            // Tie-break toward unassigned columns so the final hop can stop.
            if shortest_path_costs[j] < lowest
                || (shortest_path_costs[j] == lowest && row4col[j] == UNSET)
            {
                lowest = shortest_path_costs[j];
                index = it;
            }
        }
        min_val = lowest;
        debug_assert!(min_val < T::infinity(), "search space exhausted");

        let j = remaining[index];
        if row4col[j] == UNSET {
            sink = j;
        } else {
            i = row4col[j];
        }
        sc[j] = true;
        num_remaining -= 1;
        remaining[index] = remaining[num_remaining];
    }
    (sink, min_val)
}
