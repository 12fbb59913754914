//! Ratio-on-path estimation of rank-1 matrices `M*_{ij} = a_i b_j`.

use std::sync::OnceLock;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::graph::{build_graph, check_path, path_steps, BipartiteGraph, ObservationMask, Vertex};
use crate::maxflow::{max_flow, PathSet};
use crate::{DataMatrix, Error, Grid, Result};

/// Denominators below this are reported as degenerate.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RankOneModel {
    pub row_factors: DVector<f64>,
    pub col_factors: DVector<f64>,
}

impl RankOneModel {
    pub fn new(row_factors: DVector<f64>, col_factors: DVector<f64>) -> Self {
        Self {
            row_factors,
            col_factors,
        }
    }

    pub fn constant(n: usize, m: usize, value: f64) -> Self {
        Self::new(
            DVector::from_element(n, value),
            DVector::from_element(m, value),
        )
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.row_factors[i] * self.col_factors[j]
    }

    pub fn matrix(&self) -> DataMatrix {
        &self.row_factors * self.col_factors.transpose()
    }

    /// Whether every factor has magnitude at least one.
    pub fn bounded_below_by_one(&self) -> bool {
        self.row_factors
            .iter()
            .chain(self.col_factors.iter())
            .all(|x| x.abs() >= 1.0)
    }
}

/// Products of the forward (row → column) and backward observations on one
/// path. `beta` is 1 for a direct observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStatistics {
    pub alpha: f64,
    pub beta: f64,
    pub length: usize,
}

pub fn path_alpha_beta(
    path: &[Vertex],
    data: &DataMatrix,
    mask: &ObservationMask,
) -> Result<PathStatistics> {
    mask.check_data(data)?;
    check_path(mask, path)?;
    let (forward, backward) = path_steps(path);
    let product = |cells: &[(usize, usize)]| -> Result<f64> {
        let mut p = 1.0;
        for &(r, c) in cells {
            let y = data[(r, c)];
            if !y.is_finite() {
                return Err(Error::InvalidPath(format!(
                    "cell ({}, {}) holds {y}",
                    r + 1,
                    c + 1
                )));
            }
            p *= y;
        }
        Ok(p)
    };
    Ok(PathStatistics {
        alpha: product(&forward)?,
        beta: product(&backward)?,
        length: path.len() - 1,
    })
}

/// `(Σ α_k β_k) / (Σ β_k²)` over the paths of `path_set`.
pub fn rank1_entry(
    mask: &ObservationMask,
    data: &DataMatrix,
    i: usize,
    j: usize,
    path_set: &PathSet,
) -> Result<f64> {
    if path_set.paths.is_empty() {
        return Err(Error::NoPath { row: i, col: j });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for p in &path_set.paths {
        if p.first() != Some(&Vertex::Row(i)) || p.last() != Some(&Vertex::Col(j)) {
            return Err(Error::InvalidPath(format!(
                "path does not run from u{} to v{}",
                i + 1,
                j + 1
            )));
        }
        let s = path_alpha_beta(p, data, mask)?;
        num += s.alpha * s.beta;
        den += s.beta * s.beta;
    }
    let k = path_set.paths.len() as f64;
    let (num, den) = (num / k, den / k);
    if den < DENOMINATOR_FLOOR {
        return Err(Error::DegenerateDenominator { value: den });
    }
    Ok(num / den)
}

/// `C σ^L (1 + m_∞^L) sqrt(2^L log^{L+1}(nm/δ) / K)`.
#[allow(clippy::too_many_arguments)]
pub fn rank1_error_bound(
    k: usize,
    l: usize,
    sigma: f64,
    m_inf: f64,
    n: usize,
    m: usize,
    delta: f64,
    c: f64,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter(
            "bound needs at least one path".into(),
        ));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    let l = l as i32;
    let log = ((n * m) as f64 / delta).ln();
    Ok(c * sigma.powi(l)
        * (1.0 + m_inf.powi(l))
        * (2f64.powi(l) * log.powi(l + 1) / k as f64).sqrt())
}

/// Parameters for attaching error bounds to a report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub sigma: f64,
    pub delta: f64,
    /// Bound on `max |M*_{ij}|`.
    pub m_inf: f64,
    pub c: f64,
}

/// Rank-1 estimates with their path certificates.
#[derive(Debug, Clone, Serialize)]
pub struct Rank1Report {
    pub estimates: Grid<Option<f64>>,
    pub k: Grid<usize>,
    pub max_len: Grid<usize>,
    pub identifiable: Grid<bool>,
    /// Entries with paths whose denominator fell below the floor.
    pub degenerate: Grid<bool>,
    pub error_bound: Option<Grid<Option<f64>>>,
}

/// Rank-1 estimator for a fixed mask; path sets are computed on first use
/// and cached per entry.
#[derive(Debug)]
pub struct PathEstimator {
    mask: ObservationMask,
    graph: BipartiteGraph,
    paths: Vec<OnceLock<PathSet>>,
}

impl PathEstimator {
    pub fn new(mask: &ObservationMask) -> Self {
        Self {
            mask: mask.clone(),
            graph: build_graph(mask),
            paths: (0..mask.n_rows() * mask.n_cols())
                .map(|_| OnceLock::new())
                .collect(),
        }
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    pub fn path_set(&self, i: usize, j: usize) -> Result<&PathSet> {
        if i >= self.mask.n_rows() || j >= self.mask.n_cols() {
            return Err(Error::IndexOutOfRange {
                row: i,
                col: j,
                n_rows: self.mask.n_rows(),
                n_cols: self.mask.n_cols(),
            });
        }
        Ok(
            self.paths[i * self.mask.n_cols() + j]
                .get_or_init(|| max_flow(&self.graph, i, j).paths),
        )
    }

    pub fn entry(&self, data: &DataMatrix, i: usize, j: usize) -> Result<f64> {
        let ps = self.path_set(i, j)?;
        rank1_entry(&self.mask, data, i, j, ps)
    }

    pub fn report(&self, data: &DataMatrix, bounds: Option<BoundParams>) -> Result<Rank1Report> {
        self.mask.check_data(data)?;
        let (n, m) = (self.mask.n_rows(), self.mask.n_cols());
        let cells: Vec<(Option<f64>, usize, usize, bool)> = (0..n * m)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / m, idx % m);
                let ps = self.path_set(i, j)?;
                match rank1_entry(&self.mask, data, i, j, ps) {
                    Ok(v) => Ok((Some(v), ps.k, ps.max_len, false)),
                    Err(Error::NoPath { .. }) => Ok((None, 0, 0, false)),
                    Err(Error::DegenerateDenominator { .. }) => Ok((None, ps.k, ps.max_len, true)),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        fn grid<T, U>(n: usize, m: usize, cells: &[T], f: impl Fn(&T) -> U) -> Grid<U> {
            Grid::from_vec(n, m, cells.iter().map(f).collect())
        }
        let k = grid(n, m, &cells, |c| c.1);
        let max_len = grid(n, m, &cells, |c| c.2);
        let error_bound = match bounds {
            Some(b) => {
                let mut g = Grid::filled(n, m, None);
                for i in 0..n {
                    for j in 0..m {
                        if k[(i, j)] > 0 {
                            g[(i, j)] = Some(rank1_error_bound(
                                k[(i, j)],
                                max_len[(i, j)],
                                b.sigma,
                                b.m_inf,
                                n,
                                m,
                                b.delta,
                                b.c,
                            )?);
                        }
                    }
                }
                Some(g)
            }
            None => None,
        };
        Ok(Rank1Report {
            estimates: grid(n, m, &cells, |c| c.0),
            identifiable: k.map(|&k| k > 0),
            degenerate: grid(n, m, &cells, |c| c.3),
            k,
            max_len,
            error_bound,
        })
    }
}

/// Rank-1 estimates of every entry of `data` observed on `mask`.
pub fn rank1_full(
    mask: &ObservationMask,
    data: &DataMatrix,
    bounds: Option<BoundParams>,
) -> Result<Rank1Report> {
    PathEstimator::new(mask).report(data, bounds)
}

/// Two rank-1 models that agree on every observed entry except the minimum
/// cut between `u_i` and `v_j`, yet differ by `2ε²` at `(i, j)`.
pub fn hard_instance_rank1(
    mask: &ObservationMask,
    i: usize,
    j: usize,
    epsilon: f64,
) -> Result<(RankOneModel, RankOneModel)> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be in (0, 1), got {epsilon}"
        )));
    }
    let (n, m) = (mask.n_rows(), mask.n_cols());
    if i >= n || j >= m {
        return Err(Error::IndexOutOfRange {
            row: i,
            col: j,
            n_rows: n,
            n_cols: m,
        });
    }
    let cert = max_flow(&build_graph(mask), i, j);
    if cert.paths.k == 0 {
        return Err(Error::DisconnectedPair { row: i, col: j });
    }
    let mut left = vec![false; n + m];
    for &v in &cert.cut.left_side {
        left[v] = true;
    }
    let side = |v: usize| if left[v] { epsilon } else { -epsilon };
    let a = RankOneModel::constant(n, m, epsilon);
    let b = RankOneModel::new(
        DVector::from_fn(n, |k, _| side(k)),
        DVector::from_fn(m, |l, _| side(n + l)),
    );
    Ok((a, b))
}

/// `Σ_Ω (A_{kl} - B_{kl})² / (2σ²)`.
pub fn rank1_kl_divergence(
    mask: &ObservationMask,
    a: &RankOneModel,
    b: &RankOneModel,
    sigma: f64,
) -> f64 {
    let sq: f64 = mask
        .iter()
        .map(|(k, l)| (a.entry(k, l) - b.entry(k, l)).powi(2))
        .sum();
    sq / (2.0 * sigma * sigma)
}
