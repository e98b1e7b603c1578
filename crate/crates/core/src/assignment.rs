//! Dense Hungarian solver for square assignment problems with real costs.
//!
//! Rows are scanned in index order and column minima use strict comparison,
//! so among equal-cost optima the result is a fixed function of the input order.

/// Returns `assignment[row] = column` minimising the total cost.
pub fn solve(costs: &[Vec<f64>]) -> Vec<usize> {
    let n = costs.len();
    if n == 0 {
        return Vec::new();
    }
    debug_assert!(costs.iter().all(|row| row.len() == n));

    // 1-based potentials; column 0 is the virtual start.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = costs[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
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

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Rectangular assignment with forbidden pairs (`None` costs).
///
/// Maximises the number of matched pairs first and then minimises their
/// total cost. Returns `(row, column)` pairs sorted by row.
pub fn solve_partial(costs: &[Vec<Option<f64>>], n_cols: usize) -> Vec<(usize, usize)> {
    let n_rows = costs.len();
    let n = n_rows.max(n_cols);
    if n == 0 {
        return Vec::new();
    }
    let max_cost = costs
        .iter()
        .flatten()
        .flatten()
        .fold(0.0f64, |m, &c| m.max(c.abs()));
    // Any single forbidden pair outweighs every feasible total.
    let big = (max_cost + 1.0) * (n as f64 + 1.0);
    let square: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            (0..n)
                .map(
                    |c| match costs.get(r).and_then(|row| row.get(c)).copied().flatten() {
                        Some(cost) => cost,
                        None => big,
                    },
                )
                .collect()
        })
        .collect();
    solve(&square)
        .into_iter()
        .enumerate()
        .filter(|&(r, c)| r < n_rows && c < n_cols && costs[r][c].is_some())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_square() {
        let costs = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let a = solve(&costs);
        let total: f64 = a.iter().enumerate().map(|(r, &c)| costs[r][c]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn forbidden_pairs_never_matched() {
        let costs = vec![vec![Some(1.0), None], vec![None, None]];
        assert_eq!(solve_partial(&costs, 2), vec![(0, 0)]);
        let costs: Vec<Vec<Option<f64>>> = vec![vec![None; 3]; 2];
        assert!(solve_partial(&costs, 3).is_empty());
    }

    #[test]
    fn prefers_more_matches_over_lower_cost() {
        // matching (0,1),(1,0) costs 18 but pairs both; (0,0) alone costs 1.
        let costs = vec![vec![Some(1.0), Some(9.0)], vec![Some(9.0), None]];
        assert_eq!(solve_partial(&costs, 2), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn rectangular_inputs() {
        let costs = vec![vec![Some(5.0), Some(1.0), Some(3.0)]];
        assert_eq!(solve_partial(&costs, 3), vec![(0, 1)]);
        let costs = vec![vec![Some(2.0)], vec![Some(1.0)], vec![Some(3.0)]];
        assert_eq!(solve_partial(&costs, 1), vec![(1, 0)]);
    }
}
