//! Rectangular linear assignment via the shortest augmenting path form of
//! the Hungarian method, with deterministic tie-breaking.

use crate::error::{Error, Result};

/// Dense row-major cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "cost matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite cost at ({}, {})",
                k / cols.max(1),
                k % cols.max(1)
            )));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidInput("ragged cost matrix".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }
}

/// Minimum-cost injection of rows into columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `row_to_col[i]` is the column assigned to row `i`.
    pub row_to_col: Vec<usize>,
    pub total_cost: f64,
}

struct Solution {
    row_to_col: Vec<usize>,
    total: f64,
    row_potential: Vec<f64>,
    col_potential: Vec<f64>,
}

/// Solves the assignment restricted to `rows` x `cols` (indices into `cost`).
/// Requires `rows.len() <= cols.len()`.
fn solve(cost: &CostMatrix, rows: &[usize], cols: &[usize]) -> Solution {
    let n = rows.len();
    let m = cols.len();
    debug_assert!(n <= m);
    let a = |i: usize, j: usize| cost.get(rows[i - 1], cols[j - 1]);

    // 1-based; index 0 is the virtual source row/column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            row_to_col[owner[j] - 1] = j - 1;
        }
    }
    let total = row_to_col
        .iter()
        .enumerate()
        .map(|(i, &j)| a(i + 1, j + 1))
        .sum();
    Solution {
        row_to_col,
        total,
        row_potential: u[1..].to_vec(),
        col_potential: v[1..].to_vec(),
    }
}

/// Minimum-cost assignment of every row to a distinct column.
///
/// Among all optimal assignments the lexicographically smallest
/// `row_to_col` vector is returned, so results do not depend on
/// floating-point accidents inside the solver. Costs are compared with a
/// tolerance scaled to the largest entry.
pub fn hungarian(cost: &CostMatrix) -> Result<Assignment> {
    let (n, m) = (cost.rows, cost.cols);
    if n > m {
        return Err(Error::InvalidInput(format!(
            "assignment needs rows <= cols, got {n}x{m}"
        )));
    }
    if n == 0 {
        return Ok(Assignment {
            row_to_col: Vec::new(),
            total_cost: 0.0,
        });
    }
    let all_rows: Vec<usize> = (0..n).collect();
    let all_cols: Vec<usize> = (0..m).collect();
    let best = solve(cost, &all_rows, &all_cols);

    let scale = cost.data.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    let tol = 1e-9 * scale * n as f64;
    // Edges outside the equality subgraph of the optimal dual cannot appear
    // in any optimal assignment.
    let tight_tol = 1e-7 * scale * n as f64;

    let mut row_to_col = Vec::with_capacity(n);
    let mut fixed = 0.0;
    let mut taken = vec![false; m];
    for i in 0..n {
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        let mut chosen = None;
        for j in 0..m {
            if taken[j] {
                continue;
            }
            let reduced = cost.get(i, j) - best.row_potential[i] - best.col_potential[j];
            if reduced > tight_tol {
                continue;
            }
            let rest_cols: Vec<usize> = (0..m).filter(|&c| !taken[c] && c != j).collect();
            let rest = if rest_rows.is_empty() {
                0.0
            } else {
                solve(cost, &rest_rows, &rest_cols).total
            };
            if fixed + cost.get(i, j) + rest <= best.total + tol {
                chosen = Some(j);
                break;
            }
        }
        match chosen {
            Some(j) => {
                taken[j] = true;
                fixed += cost.get(i, j);
                row_to_col.push(j);
            }
            None => {
                // Only reachable through rounding; finish with a plain solve.
                let rows: Vec<usize> = (i..n).collect();
                let cols: Vec<usize> = (0..m).filter(|&c| !taken[c]).collect();
                let rest = solve(cost, &rows, &cols);
                row_to_col.extend(rest.row_to_col.iter().map(|&k| cols[k]));
                break;
            }
        }
    }
    let total_cost = row_to_col
        .iter()
        .enumerate()
        .map(|(i, &j)| cost.get(i, j))
        .sum();
    Ok(Assignment {
        row_to_col,
        total_cost,
    })
}
