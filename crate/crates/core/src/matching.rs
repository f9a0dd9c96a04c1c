//! Minimum-cost bipartite assignment (Kuhn–Munkres with potentials).
//!
//! Matrices may be rectangular and may contain [`INFEASIBLE`] entries. The
//! solver returns, among the matchings of maximum cardinality that use only
//! finite entries, one of minimum total cost.

/// Marks a pair that may never be matched.
pub const INFEASIBLE: f64 = f64::INFINITY;

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, fill: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![fill; rows * cols],
        }
    }

    /// Builds a matrix from row vectors; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost matrix");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn is_feasible(&self, r: usize, c: usize) -> bool {
        self.get(r, c).is_finite()
    }

    /// Sum of all finite entries.
    pub fn finite_sum(&self) -> f64 {
        self.data.iter().filter(|v| v.is_finite()).sum()
    }

    /// Replacement value for infeasible entries: larger than any sum of
    /// finite entries, so one more feasible pair always beats any cost gain.
    fn sentinel(&self) -> f64 {
        2.0 * (self.finite_sum() + 1.0)
    }

    fn tolerance(&self) -> f64 {
        let max = self
            .data
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0f64, |a, &v| a.max(v.abs()));
        1e-10 * max.max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn col_of(&self, row: usize) -> Option<usize> {
        self.pairs
            .binary_search_by_key(&row, |p| p.0)
            .ok()
            .map(|i| self.pairs[i].1)
    }

    fn from_pairs(m: &CostMatrix, mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.retain(|&(r, c)| m.is_feasible(r, c));
        pairs.sort_unstable();
        let total_cost = pairs.iter().map(|&(r, c)| m.get(r, c)).sum();
        Self { pairs, total_cost }
    }
}

/// Shortest-augmenting-path Hungarian method on an `n x m` problem with
/// `n <= m`. `cost(i, j)` is 0-based. Returns the column of each row.
///
/// Comparisons use a tolerance `tol` so that costs differing only by
/// floating-point rounding count as ties, which are then broken by scan order.
fn solve_rows_le_cols(n: usize, m: usize, tol: f64, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![inf; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.fill(inf);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] - tol {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta - tol {
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

    let mut col_of_row = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] > 0 {
            col_of_row[p[j] - 1] = j - 1;
        }
    }
    col_of_row
}

/// Optimal assignment of a possibly rectangular matrix. Rows or columns left
/// with only infeasible options stay unmatched.
pub fn hungarian_assign(m: &CostMatrix) -> Assignment {
    if m.rows == 0 || m.cols == 0 {
        return Assignment::default();
    }
    let big = m.sentinel();
    let tol = m.tolerance();
    let entry = |r: usize, c: usize| {
        let v = m.get(r, c);
        if v.is_finite() {
            v
        } else {
            big
        }
    };
    let pairs = if m.rows <= m.cols {
        solve_rows_le_cols(m.rows, m.cols, tol, entry)
            .into_iter()
            .enumerate()
            .collect()
    } else {
        solve_rows_le_cols(m.cols, m.rows, tol, |c, r| entry(r, c))
            .into_iter()
            .enumerate()
            .map(|(c, r)| (r, c))
            .collect()
    };
    Assignment::from_pairs(m, pairs)
}

/// Square form of a rectangular matrix: dummy rows/columns cost 0 and
/// infeasible entries carry the numeric sentinel.
#[derive(Debug, Clone)]
pub struct PaddedMatrix {
    pub size: usize,
    pub data: Vec<f64>,
    pub real_rows: usize,
    pub real_cols: usize,
}

impl PaddedMatrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.size + c]
    }

    /// Drops pairs that touch a dummy row or column.
    pub fn unpad(&self, pairs: impl IntoIterator<Item = (usize, usize)>) -> Vec<(usize, usize)> {
        pairs
            .into_iter()
            .filter(|&(r, c)| r < self.real_rows && c < self.real_cols)
            .collect()
    }
}

pub fn pad_rectangular(m: &CostMatrix) -> PaddedMatrix {
    let size = m.rows.max(m.cols);
    let big = m.sentinel();
    let mut data = vec![0.0; size * size];
    for r in 0..m.rows {
        for c in 0..m.cols {
            let v = m.get(r, c);
            data[r * size + c] = if v.is_finite() { v } else { big };
        }
    }
    PaddedMatrix {
        size,
        data,
        real_rows: m.rows,
        real_cols: m.cols,
    }
}

/// Solves through the padded square form. Same optimum as
/// [`hungarian_assign`]; kept as an independent route.
pub fn hungarian_assign_padded(m: &CostMatrix) -> Assignment {
    let padded = pad_rectangular(m);
    if padded.size == 0 {
        return Assignment::default();
    }
    let cols = solve_rows_le_cols(padded.size, padded.size, m.tolerance(), |r, c| padded.get(r, c));
    let pairs = padded.unpad(cols.into_iter().enumerate());
    Assignment::from_pairs(m, pairs)
}
