//! Minimum-cost bipartite assignment (Kuhn-Munkres with potentials).
//!
//! Entries equal to the infeasible sentinel are never matched. Among the
//! assignments that avoid sentinels, the result matches as many pairs as
//! possible and then minimizes the total cost.

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

/// Solves the assignment for a row-major `rows × cols` cost matrix.
///
/// Entries that are non-finite or equal to `infeasible` are gated out.
pub fn assign(cost: &[Vec<f64>], infeasible: f64) -> Assignment {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    assert!(cost.iter().all(|r| r.len() == cols), "cost matrix must be rectangular");
    if rows == 0 || cols == 0 {
        return Assignment {
            matches: Vec::new(),
            unmatched_rows: (0..rows).collect(),
            unmatched_cols: (0..cols).collect(),
        };
    }

    let gated = |c: f64| !c.is_finite() || c == infeasible;
    let finite_total: f64 = cost.iter().flatten().filter(|c| !gated(**c)).map(|c| c.abs()).sum();
    // Larger than any sum of feasible entries, so one fewer gated pair always wins.
    let big = 2.0 * finite_total + 1.0;

    // The solver below needs rows <= cols.
    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let at = |i: usize, j: usize| -> f64 {
        let c = if transposed { cost[j][i] } else { cost[i][j] };
        if gated(c) {
            big
        } else {
            c
        }
    };

    let row_of_col = hungarian(n, m, at);

    let mut matches = Vec::new();
    for (j, &i) in row_of_col.iter().enumerate() {
        if let Some(i) = i {
            let (r, c) = if transposed { (j, i) } else { (i, j) };
            if !gated(cost[r][c]) {
                matches.push((r, c));
            }
        }
    }
    matches.sort_unstable();
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    for &(r, c) in &matches {
        row_used[r] = true;
        col_used[c] = true;
    }
    Assignment {
        matches,
        unmatched_rows: (0..rows).filter(|&r| !row_used[r]).collect(),
        unmatched_cols: (0..cols).filter(|&c| !col_used[c]).collect(),
    }
}

/// Shortest-augmenting-path Hungarian algorithm for `n <= m`; returns, for
/// each column, the row assigned to it.
fn hungarian(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    // 1-based arrays with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m).map(|j| (p[j] != 0).then(|| p[j] - 1)).collect()
}
