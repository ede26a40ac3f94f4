//! Matching subproblems on the present agents: the cheapest single couple,
//! first-come first-served pairing and the optimal k-assignment.

use thiserror::Error;

use crate::arrival::Agent;

/// Largest dimension [`brute_force_k_assignment`] accepts.
pub const BRUTE_FORCE_MAX_DIM: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("cost matrix must have at least one row and one column (got {rows}x{cols})")]
    Empty { rows: usize, cols: usize },
    #[error("k = {k} outside 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("matrix entry ({row}, {col}) = {value} is not finite and non-negative")]
    BadEntry { row: usize, col: usize, value: f64 },
    #[error("expected {expected} entries for the declared shape, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("brute force refuses min dimension {0} (> {max})", max = BRUTE_FORCE_MAX_DIM)]
    TooLarge(usize),
    #[error("both sides need at least one agent")]
    EmptySide,
}

/// Dense row-major matrix of non-negative match costs, rows = clients.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AssignmentError> {
        if data.len() != rows * cols {
            return Err(AssignmentError::Shape {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(AssignmentError::BadEntry {
                row: pos / cols,
                col: pos % cols,
                value: data[pos],
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssignmentError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(AssignmentError::Shape {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, AssignmentError> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    fn check_k(&self, k: usize) -> Result<(), AssignmentError> {
        let max = self.rows.min(self.cols);
        if k == 0 || k > max {
            return Err(AssignmentError::KOutOfRange { k, max });
        }
        Ok(())
    }
}

/// One-to-one selection of `(row, col)` pairs with its total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    /// Sorts the pairs by row and sums the matching entries in that order, so
    /// two solvers returning the same pair set report bit-identical totals.
    pub fn from_pairs(matrix: &CostMatrix, mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        let total_cost = pairs.iter().map(|&(i, j)| matrix.get(i, j)).sum();
        Self { pairs, total_cost }
    }

    pub fn is_one_to_one(&self) -> bool {
        let mut rows: Vec<usize> = self.pairs.iter().map(|p| p.0).collect();
        let mut cols: Vec<usize> = self.pairs.iter().map(|p| p.1).collect();
        rows.sort_unstable();
        cols.sort_unstable();
        rows.windows(2).all(|w| w[0] != w[1]) && cols.windows(2).all(|w| w[0] != w[1])
    }
}

/// The globally cheapest entry; ties go to the lowest row, then lowest column.
pub fn min_edge(matrix: &CostMatrix) -> Result<(usize, usize, f64), AssignmentError> {
    if matrix.rows == 0 || matrix.cols == 0 {
        return Err(AssignmentError::Empty {
            rows: matrix.rows,
            cols: matrix.cols,
        });
    }
    let mut best = (0, 0, matrix.get(0, 0));
    for i in 0..matrix.rows {
        for (j, &w) in matrix.row(i).iter().enumerate() {
            if w < best.2 {
                best = (i, j, w);
            }
        }
    }
    Ok(best)
}

/// Minimum-cost selection of `k` disjoint pairs on a rectangular matrix.
///
/// Successive shortest augmenting paths on the flow network
/// `source -> rows -> cols -> sink`, with Dijkstra on reduced costs. After
/// `i` augmentations the matching is optimal among all matchings of size `i`,
/// so stopping at `k` gives the optimal k-assignment. `O(k (n + m)^2)`.
pub fn min_k_assignment(matrix: &CostMatrix, k: usize) -> Result<Assignment, AssignmentError> {
    matrix.check_k(k)?;
    let (n, m) = (matrix.rows, matrix.cols);
    let mut row_match: Vec<Option<usize>> = vec![None; n];
    let mut col_match: Vec<Option<usize>> = vec![None; m];
    // potentials; the source keeps potential 0
    let mut pot_row = vec![0.0f64; n];
    let mut pot_col = vec![0.0f64; m];
    let mut pot_sink = 0.0f64;

    let mut dist_row = vec![0.0f64; n];
    let mut dist_col = vec![0.0f64; m];
    let mut done_row = vec![false; n];
    let mut done_col = vec![false; m];
    let mut parent_col = vec![usize::MAX; m];

    for _ in 0..k {
        for i in 0..n {
            done_row[i] = false;
            dist_row[i] = if row_match[i].is_none() {
                -pot_row[i]
            } else {
                f64::INFINITY
            };
        }
        dist_col.fill(f64::INFINITY);
        done_col.fill(false);
        let mut dist_sink = f64::INFINITY;
        let mut sink_parent = usize::MAX;

        loop {
            // pick the closest unsettled node; the sink wins ties
            let mut best = dist_sink;
            let mut pick: Option<(bool, usize)> = None;
            for i in 0..n {
                if !done_row[i] && dist_row[i] < best {
                    best = dist_row[i];
                    pick = Some((true, i));
                }
            }
            for j in 0..m {
                if !done_col[j] && dist_col[j] < best {
                    best = dist_col[j];
                    pick = Some((false, j));
                }
            }
            match pick {
                None => break,
                Some((true, i)) => {
                    done_row[i] = true;
                    let d = dist_row[i] + pot_row[i];
                    let row = matrix.row(i);
                    for j in 0..m {
                        if done_col[j] || row_match[i] == Some(j) {
                            continue;
                        }
                        let nd = d + row[j] - pot_col[j];
                        if nd < dist_col[j] {
                            dist_col[j] = nd;
                            parent_col[j] = i;
                        }
                    }
                }
                Some((false, j)) => {
                    done_col[j] = true;
                    match col_match[j] {
                        None => {
                            let nd = dist_col[j] + pot_col[j] - pot_sink;
                            if nd < dist_sink {
                                dist_sink = nd;
                                sink_parent = j;
                            }
                        }
                        Some(r) => {
                            if !done_row[r] {
                                let nd = dist_col[j] + pot_col[j] - matrix.get(r, j) - pot_row[r];
                                if nd < dist_row[r] {
                                    dist_row[r] = nd;
                                }
                            }
                        }
                    }
                }
            }
        }
        debug_assert!(dist_sink.is_finite());

        for i in 0..n {
            pot_row[i] += dist_row[i].min(dist_sink);
        }
        for j in 0..m {
            pot_col[j] += dist_col[j].min(dist_sink);
        }
        pot_sink += dist_sink;

        let mut j = sink_parent;
        loop {
            let i = parent_col[j];
            let prev = row_match[i];
            row_match[i] = Some(j);
            col_match[j] = Some(i);
            match prev {
                Some(pj) => j = pj,
                None => break,
            }
        }
    }

    let pairs = row_match
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect();
    Ok(Assignment::from_pairs(matrix, pairs))
}

/// Exhaustive reference solver over every k-subset of rows and every
/// injective map into the columns. Refuses min dimension above 8.
pub fn brute_force_k_assignment(matrix: &CostMatrix, k: usize) -> Result<Assignment, AssignmentError> {
    let min_dim = matrix.rows.min(matrix.cols);
    if min_dim > BRUTE_FORCE_MAX_DIM {
        return Err(AssignmentError::TooLarge(min_dim));
    }
    matrix.check_k(k)?;

    struct Search<'a> {
        matrix: &'a CostMatrix,
        k: usize,
        used: Vec<bool>,
        current: Vec<(usize, usize)>,
        best: f64,
        best_pairs: Vec<(usize, usize)>,
    }

    impl Search<'_> {
        fn go(&mut self, row: usize, acc: f64) {
            if self.current.len() == self.k {
                if acc < self.best {
                    self.best = acc;
                    self.best_pairs = self.current.clone();
                }
                return;
            }
            let still_needed = self.k - self.current.len();
            if self.matrix.rows - row < still_needed {
                return;
            }
            for j in 0..self.matrix.cols {
                if !self.used[j] {
                    self.used[j] = true;
                    self.current.push((row, j));
                    self.go(row + 1, acc + self.matrix.get(row, j));
                    self.current.pop();
                    self.used[j] = false;
                }
            }
            // leave this row unmatched
            self.go(row + 1, acc);
        }
    }

    let mut search = Search {
        matrix,
        k,
        used: vec![false; matrix.cols],
        current: Vec::with_capacity(k),
        best: f64::INFINITY,
        best_pairs: Vec::new(),
    };
    search.go(0, 0.0);
    Ok(Assignment::from_pairs(matrix, search.best_pairs))
}

/// Earliest-arrived client with earliest-arrived provider.
pub fn fcfs_pairs(clients: &[Agent], providers: &[Agent]) -> Result<(Agent, Agent), AssignmentError> {
    let earliest = |xs: &[Agent]| {
        xs.iter()
            .copied()
            .min_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time).then(a.id.cmp(&b.id)))
    };
    match (earliest(clients), earliest(providers)) {
        (Some(c), Some(p)) => Ok((c, p)),
        _ => Err(AssignmentError::EmptySide),
    }
}
