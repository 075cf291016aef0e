use ndarray::Array2;

use super::EvalError;

/// Optimal assignment of rows to columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column given to each row; `None` for rows left over when there are
    /// more rows than columns.
    pub row_to_col: Vec<Option<usize>>,
    /// Summed cost of the assigned pairs.
    pub total: f64,
}

/// Minimum-cost assignment (Kuhn–Munkres with potentials, `O(n³)`).
///
/// Rectangular matrices are padded to square with a constant; since every
/// complete assignment uses the same number of padding cells, the constant
/// does not affect which real pairs are chosen.
pub fn hungarian(cost: &Array2<f64>) -> Result<Assignment, EvalError> {
    if let Some(bad) = cost.iter().find(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite(format!("cost matrix contains {bad}")));
    }
    let (rows, cols) = cost.dim();
    let n = rows.max(cols);
    if n == 0 {
        return Ok(Assignment {
            row_to_col: vec![None; rows],
            total: 0.0,
        });
    }
    let pad = cost.iter().copied().fold(0.0, f64::max);
    let a = |i: usize, j: usize| if i < rows && j < cols { cost[[i, j]] } else { pad };

    // 1-based arrays; index 0 is the virtual start column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
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

    let mut row_to_col = vec![None; rows];
    for j in 1..=n {
        let i = p[j] - 1;
        if i < rows && j - 1 < cols {
            row_to_col[i] = Some(j - 1);
        }
    }
    let total = row_to_col
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|j| cost[[i, j]]))
        .sum();
    Ok(Assignment { row_to_col, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn small_cases() {
        let a = hungarian(&array![[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert_eq!(a.row_to_col, vec![Some(0), Some(1)]);
        assert_eq!(a.total, 2.0);
        let diag = array![[0.0, 9.0, 9.0], [9.0, 0.0, 9.0], [9.0, 9.0, 0.0]];
        assert_eq!(hungarian(&diag).unwrap().row_to_col, vec![Some(0), Some(1), Some(2)]);
        assert!(hungarian(&array![[f64::NAN]]).is_err());
    }

    #[test]
    fn rectangular() {
        // 3 rows, 2 columns: the best two rows are chosen
        let a = hungarian(&array![[5.0, 5.0], [1.0, 4.0], [4.0, 1.0]]).unwrap();
        assert_eq!(a.row_to_col, vec![None, Some(0), Some(1)]);
        assert_eq!(a.total, 2.0);
        let b = hungarian(&array![[3.0, 1.0, 2.0]]).unwrap();
        assert_eq!(b.row_to_col, vec![Some(1)]);
    }

    proptest! {
        #[test]
        fn matches_exhaustive_search(v in prop::collection::vec(0u8..50, 25)) {
            let m = Array2::from_shape_vec((5, 5), v.into_iter().map(f64::from).collect()).unwrap();
            let best = permutations(5)
                .iter()
                .map(|p| p.iter().enumerate().map(|(i, &j)| m[[i, j]]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            prop_assert_eq!(hungarian(&m).unwrap().total, best);
        }
    }
}
