//! Observation masks and the bipartite graph they induce.
//!
//! Vertices are ordered rows first: row `i` is vertex `i`, column `j` is
//! vertex `n_rows + j`. Edges follow the row-major order of the observed
//! cells, which is also the order of [`vec_omega`].

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{DataMatrix, Error, Result};

/// Binary pattern of observed cells of an `n_rows x n_cols` matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMask {
    n_rows: usize,
    n_cols: usize,
    cells: Vec<bool>,
    count: usize,
}

impl ObservationMask {
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            cells: vec![false; n_rows * n_cols],
            count: 0,
        }
    }

    pub fn full(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            cells: vec![true; n_rows * n_cols],
            count: n_rows * n_cols,
        }
    }

    /// Builds a mask from 0-based `(row, col)` pairs. Repeated pairs collapse
    /// to a single observation.
    pub fn from_pairs<I>(n_rows: usize, n_cols: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut mask = Self::empty(n_rows, n_cols);
        for (row, col) in pairs {
            mask.insert(row, col)?;
        }
        Ok(mask)
    }

    pub fn from_fn(n_rows: usize, n_cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = Self::empty(n_rows, n_cols);
        for i in 0..n_rows {
            for j in 0..n_cols {
                if f(i, j) {
                    mask.cells[i * n_cols + j] = true;
                    mask.count += 1;
                }
            }
        }
        mask
    }

    /// Marks a cell observed. Returns `false` if it already was.
    pub fn insert(&mut self, row: usize, col: usize) -> Result<bool> {
        self.check(row, col)?;
        let cell = &mut self.cells[row * self.n_cols + col];
        if *cell {
            return Ok(false);
        }
        *cell = true;
        self.count += 1;
        Ok(true)
    }

    pub fn remove(&mut self, row: usize, col: usize) -> Result<bool> {
        self.check(row, col)?;
        let cell = &mut self.cells[row * self.n_cols + col];
        if !*cell {
            return Ok(false);
        }
        *cell = false;
        self.count -= 1;
        Ok(true)
    }

    fn check(&self, row: usize, col: usize) -> Result<()> {
        if row >= self.n_rows || col >= self.n_cols {
            return Err(Error::IndexOutOfRange {
                row,
                col,
                n_rows: self.n_rows,
                n_cols: self.n_cols,
            });
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Number of observed cells.
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row < self.n_rows && col < self.n_cols && self.cells[row * self.n_cols + col]
    }

    /// Observed cells in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.n_cols.max(1);
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(move |(k, _)| (k / cols, k % cols))
    }

    pub fn intersect(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self::from_fn(self.n_rows, self.n_cols, |i, j| {
            self.contains(i, j) && other.contains(i, j)
        }))
    }

    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self::from_fn(self.n_rows, self.n_cols, |i, j| {
            self.contains(i, j) && !other.contains(i, j)
        }))
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if (self.n_rows, self.n_cols) != (other.n_rows, other.n_cols) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.n_rows, self.n_cols),
                found: format!("{}x{}", other.n_rows, other.n_cols),
            });
        }
        Ok(())
    }

    pub(crate) fn check_data(&self, data: &DataMatrix) -> Result<()> {
        if data.nrows() != self.n_rows || data.ncols() != self.n_cols {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} data matrix", self.n_rows, self.n_cols),
                found: format!("{}x{}", data.nrows(), data.ncols()),
            });
        }
        Ok(())
    }
}

/// A vertex of the bipartite graph: row vertex `u_i` or column vertex `v_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Vertex {
    Row(usize),
    Col(usize),
}

impl Vertex {
    /// Position in the canonical rows-then-columns ordering.
    pub fn index(self, n_rows: usize) -> usize {
        match self {
            Vertex::Row(i) => i,
            Vertex::Col(j) => n_rows + j,
        }
    }

    pub fn from_index(index: usize, n_rows: usize) -> Self {
        if index < n_rows {
            Vertex::Row(index)
        } else {
            Vertex::Col(index - n_rows)
        }
    }

    pub fn is_row(self) -> bool {
        matches!(self, Vertex::Row(_))
    }

    /// 1-based label as used in files and the CLI, e.g. `u1` or `v3`.
    pub fn label(self) -> String {
        match self {
            Vertex::Row(i) => format!("u{}", i + 1),
            Vertex::Col(j) => format!("v{}", j + 1),
        }
    }
}

/// Undirected bipartite graph `G(Ω)` with canonical vertex and edge orders.
#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    n_left: usize,
    n_right: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    edge_ids: Vec<Option<usize>>,
}

impl BipartiteGraph {
    pub fn n_left(&self) -> usize {
        self.n_left
    }

    pub fn n_right(&self) -> usize {
        self.n_right
    }

    pub fn vertex_count(&self) -> usize {
        self.n_left + self.n_right
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// `(row, col)` pairs in row-major order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbor list of a vertex given by its canonical index.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    /// Position of edge `(u_row, v_col)` in the edge list.
    pub fn edge_id(&self, row: usize, col: usize) -> Option<usize> {
        if row >= self.n_left || col >= self.n_right {
            return None;
        }
        self.edge_ids[row * self.n_right + col]
    }

    pub fn has_edge(&self, row: usize, col: usize) -> bool {
        self.edge_id(row, col).is_some()
    }

    pub fn vertex(&self, index: usize) -> Vertex {
        Vertex::from_index(index, self.n_left)
    }

    pub fn index_of(&self, v: Vertex) -> usize {
        v.index(self.n_left)
    }

    /// Canonical indices of the endpoints of an edge, row vertex first.
    pub fn endpoints(&self, edge: usize) -> (usize, usize) {
        let (i, j) = self.edges[edge];
        (i, self.n_left + j)
    }
}

/// Builds `G(Ω)`: an edge `(u_i, v_j)` for every observed cell.
pub fn build_graph(mask: &ObservationMask) -> BipartiteGraph {
    let n = mask.n_rows();
    let m = mask.n_cols();
    let edges: Vec<_> = mask.iter().collect();
    let mut adjacency = vec![Vec::new(); n + m];
    let mut edge_ids = vec![None; n * m];
    for (e, &(i, j)) in edges.iter().enumerate() {
        adjacency[i].push(n + j);
        adjacency[n + j].push(i);
        edge_ids[i * m + j] = Some(e);
    }
    // Row-major insertion leaves row lists sorted; column lists are filled in
    // increasing row order, so they are sorted as well.
    debug_assert!(adjacency.iter().all(|a| a.windows(2).all(|w| w[0] < w[1])));
    BipartiteGraph {
        n_left: n,
        n_right: m,
        edges,
        adjacency,
        edge_ids,
    }
}

/// Connected-component label per vertex.
///
/// Labels are assigned in order of each component's smallest vertex index, so
/// the component containing vertex 0 is always component 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    labels: Vec<usize>,
    count: usize,
}

impl ComponentLabeling {
    pub fn label(&self, v: usize) -> usize {
        self.labels[v]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn same(&self, a: usize, b: usize) -> bool {
        self.labels[a] == self.labels[b]
    }

    /// Vertices of each component in increasing index order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (v, &c) in self.labels.iter().enumerate() {
            out[c].push(v);
        }
        out
    }
}

pub fn connected_components(graph: &BipartiteGraph) -> ComponentLabeling {
    let nv = graph.vertex_count();
    let mut labels = vec![usize::MAX; nv];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..nv {
        if labels[start] != usize::MAX {
            continue;
        }
        labels[start] = count;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            for &w in graph.neighbors(v) {
                if labels[w] == usize::MAX {
                    labels[w] = count;
                    queue.push_back(w);
                }
            }
        }
        count += 1;
    }
    ComponentLabeling { labels, count }
}

/// Oriented incidence matrix `B` (`n_e x n_v`): `+1` at the row vertex and
/// `-1` at the column vertex of every edge.
pub fn incidence_matrix(graph: &BipartiteGraph) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(graph.edge_count(), graph.vertex_count());
    for e in 0..graph.edge_count() {
        let (u, v) = graph.endpoints(e);
        b[(e, u)] = 1.0;
        b[(e, v)] = -1.0;
    }
    b
}

/// Graph Laplacian `L = D - A`.
pub fn laplacian(graph: &BipartiteGraph) -> DMatrix<f64> {
    let nv = graph.vertex_count();
    let mut l = DMatrix::zeros(nv, nv);
    for e in 0..graph.edge_count() {
        let (u, v) = graph.endpoints(e);
        l[(u, u)] += 1.0;
        l[(v, v)] += 1.0;
        l[(u, v)] -= 1.0;
        l[(v, u)] -= 1.0;
    }
    l
}

/// Observed entries of `data` in row-major (edge) order.
pub fn vec_omega(mask: &ObservationMask, data: &DataMatrix) -> Result<DVector<f64>> {
    mask.check_data(data)?;
    Ok(DVector::from_iterator(
        mask.len(),
        mask.iter().map(|(i, j)| data[(i, j)]),
    ))
}

/// Inverse of [`vec_omega`]: writes `values` back into the observed cells of
/// a matrix filled with `fill`.
pub fn scatter_omega(
    mask: &ObservationMask,
    values: &DVector<f64>,
    fill: f64,
) -> Result<DataMatrix> {
    if values.len() != mask.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} observations", mask.len()),
            found: values.len().to_string(),
        });
    }
    let mut out = DMatrix::from_element(mask.n_rows(), mask.n_cols(), fill);
    for ((i, j), &v) in mask.iter().zip(values.iter()) {
        out[(i, j)] = v;
    }
    Ok(out)
}

/// Validates an alternating `u_i → v → u → … → v_j` path whose edges are all
/// observed and whose vertices are distinct. Returns the endpoints `(i, j)`.
pub fn check_path(mask: &ObservationMask, path: &[Vertex]) -> Result<(usize, usize)> {
    let bad = |msg: String| Err(Error::InvalidPath(msg));
    let (Some(&first), Some(&last)) = (path.first(), path.last()) else {
        return bad("empty path".into());
    };
    let Vertex::Row(i) = first else {
        return bad(format!(
            "path starts at {}, not a row vertex",
            first.label()
        ));
    };
    let Vertex::Col(j) = last else {
        return bad(format!(
            "path ends at {}, not a column vertex",
            last.label()
        ));
    };
    let mut seen = std::collections::HashSet::with_capacity(path.len());
    for &v in path {
        let in_range = match v {
            Vertex::Row(r) => r < mask.n_rows(),
            Vertex::Col(c) => c < mask.n_cols(),
        };
        if !in_range {
            return bad(format!("vertex {} out of range", v.label()));
        }
        if !seen.insert(v) {
            return bad(format!("vertex {} repeats", v.label()));
        }
    }
    for w in path.windows(2) {
        let (r, c) = match (w[0], w[1]) {
            (Vertex::Row(r), Vertex::Col(c)) | (Vertex::Col(c), Vertex::Row(r)) => (r, c),
            _ => {
                return bad(format!(
                    "{} → {} does not alternate sides",
                    w[0].label(),
                    w[1].label()
                ))
            }
        };
        if !mask.contains(r, c) {
            return bad(format!("edge ({}, {}) is not observed", r + 1, c + 1));
        }
    }
    Ok((i, j))
}

type Cells = Vec<(usize, usize)>;

/// Row → column steps of a path as `(row, col)` cells, and the column → row
/// steps, in path order.
pub(crate) fn path_steps(path: &[Vertex]) -> (Cells, Cells) {
    let mut forward = Vec::new();
    let mut backward = Vec::new();
    for w in path.windows(2) {
        match (w[0], w[1]) {
            (Vertex::Row(r), Vertex::Col(c)) => forward.push((r, c)),
            (Vertex::Col(c), Vertex::Row(r)) => backward.push((r, c)),
            _ => unreachable!("path was validated"),
        }
    }
    (forward, backward)
}
