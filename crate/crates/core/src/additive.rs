//! Estimators for additive matrices `M*_{ij} = a_i + b_j`.

use nalgebra::DVector;
use serde::Serialize;

use crate::electrical::{
    all_resistances, effective_resistance, electrical_flow, verify_unit_flow, voltage_vector,
    Resistance, UnitFlow, FLOW_TOLERANCE,
};
use crate::graph::{build_graph, check_path, path_steps, BipartiteGraph, ObservationMask, Vertex};
use crate::spectral::SpectralCore;
use crate::{DataMatrix, Error, Grid, Result};

/// Latent row and column effects.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveModel {
    pub row_effects: DVector<f64>,
    pub col_effects: DVector<f64>,
}

impl AdditiveModel {
    pub fn new(row_effects: DVector<f64>, col_effects: DVector<f64>) -> Self {
        Self {
            row_effects,
            col_effects,
        }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self::new(DVector::zeros(n), DVector::zeros(m))
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.row_effects[i] + self.col_effects[j]
    }

    pub fn matrix(&self) -> DataMatrix {
        DataMatrix::from_fn(self.row_effects.len(), self.col_effects.len(), |i, j| {
            self.entry(i, j)
        })
    }

    /// `(a + c, b - c)`, which induces the same matrix.
    pub fn shifted(&self, c: f64) -> Self {
        Self::new(
            self.row_effects.add_scalar(c),
            self.col_effects.add_scalar(-c),
        )
    }
}

fn observed_value(data: &DataMatrix, r: usize, c: usize) -> Result<f64> {
    let y = data[(r, c)];
    if !y.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "observed cell ({}, {}) holds {y}",
            r + 1,
            c + 1
        )));
    }
    Ok(y)
}

/// Alternating sum along `u_i → v → u → … → v_j`: row→column steps add,
/// column→row steps subtract.
pub fn path_estimate_additive(
    path: &[Vertex],
    data: &DataMatrix,
    mask: &ObservationMask,
) -> Result<f64> {
    mask.check_data(data)?;
    check_path(mask, path)?;
    let (forward, backward) = path_steps(path);
    let mut est = 0.0;
    for (r, c) in forward {
        est += observed_value(data, r, c)?;
    }
    for (r, c) in backward {
        est -= observed_value(data, r, c)?;
    }
    Ok(est)
}

/// `⟨f, vec_Ω(M)⟩` for a unit flow `f` from `u_i` to `v_j`.
pub fn unit_flow_estimate(
    flow: &UnitFlow,
    graph: &BipartiteGraph,
    data: &DataMatrix,
) -> Result<f64> {
    if data.nrows() != graph.n_left() || data.ncols() != graph.n_right() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{} data matrix", graph.n_left(), graph.n_right()),
            found: format!("{}x{}", data.nrows(), data.ncols()),
        });
    }
    if !verify_unit_flow(flow, graph, flow.source, flow.sink, FLOW_TOLERANCE) {
        return Err(Error::InvalidFlow(format!(
            "not a unit flow from u{} to v{}",
            flow.source + 1,
            flow.sink + 1
        )));
    }
    let mut est = 0.0;
    for (e, &(r, c)) in graph.edges().iter().enumerate() {
        let f = flow.values[e];
        if f == 0.0 {
            continue;
        }
        let y = data[(r, c)];
        if !y.is_finite() {
            return Err(Error::InvalidFlow(format!(
                "flow uses cell ({}, {}) with no finite observation",
                r + 1,
                c + 1
            )));
        }
        est += f * y;
    }
    Ok(est)
}

/// Electrical flow estimate of entry `(i, j)`.
pub fn efe_entry(
    graph: &BipartiteGraph,
    core: &SpectralCore,
    data: &DataMatrix,
    i: usize,
    j: usize,
) -> Result<f64> {
    let flow = electrical_flow(graph, core, i, j)?;
    unit_flow_estimate(&flow, graph, data)
}

/// Observed row and column sums; unobserved cells count as zero.
fn margins(mask: &ObservationMask, data: &DataMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    mask.check_data(data)?;
    let mut r = vec![0.0; mask.n_rows()];
    let mut c = vec![0.0; mask.n_cols()];
    for (i, j) in mask.iter() {
        let y = observed_value(data, i, j)?;
        r[i] += y;
        c[j] += y;
    }
    Ok((r, c))
}

fn factors_from_margins(core: &SpectralCore, r: &[f64], c: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let n = core.n_rows();
    let mut a = DVector::zeros(n);
    let mut b = DVector::zeros(core.n_cols());
    for comp in core.components() {
        let blocks = comp.blocks();
        let rs = DVector::from_iterator(comp.n_rows, comp.rows().iter().map(|&v| r[v]));
        let cs = DVector::from_iterator(
            comp.vertices.len() - comp.n_rows,
            comp.col_vertices().iter().map(|&v| c[v - n]),
        );
        let ah = &blocks.g11 * &rs - &blocks.g12 * &cs;
        let bh = &blocks.g22 * &cs - &blocks.g21 * &rs;
        for (k, &v) in comp.rows().iter().enumerate() {
            a[v] = ah[k];
        }
        for (k, &v) in comp.col_vertices().iter().enumerate() {
            b[v - n] = bh[k];
        }
    }
    (a, b)
}

/// Minimum-norm least-squares row and column effects, per component.
pub fn lse_factors(mask: &ObservationMask, data: &DataMatrix) -> Result<AdditiveModel> {
    let core = SpectralCore::new(&build_graph(mask))?;
    lse_factors_with(&core, mask, data)
}

/// [`lse_factors`] reusing a precomputed core for `mask`.
pub fn lse_factors_with(
    core: &SpectralCore,
    mask: &ObservationMask,
    data: &DataMatrix,
) -> Result<AdditiveModel> {
    let (r, c) = margins(mask, data)?;
    let (a, b) = factors_from_margins(core, &r, &c);
    Ok(AdditiveModel::new(a, b))
}

/// Per-entry report of the electrical flow estimator.
///
/// `None` estimates mark pairs in different components.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub estimates: Grid<Option<f64>>,
    pub resistance: Grid<Resistance>,
    pub variance_bound: Option<Grid<Option<f64>>>,
    pub high_prob_bound: Option<Grid<Option<f64>>>,
    pub identifiable: Grid<bool>,
}

impl EstimateReport {
    pub fn identifiable_count(&self) -> usize {
        self.identifiable.as_slice().iter().filter(|&&b| b).count()
    }
}

/// `σ² R`.
pub fn variance_bound(sigma: f64, r: f64) -> f64 {
    sigma * sigma * r
}

/// `2 σ² R log(2nm/δ)`.
pub fn high_probability_bound(sigma: f64, r: f64, n: usize, m: usize, delta: f64) -> f64 {
    2.0 * sigma * sigma * r * (2.0 * (n * m) as f64 / delta).ln()
}

/// `2 σ² R / 27`.
pub fn minimax_lower_bound(sigma: f64, r: f64) -> f64 {
    2.0 * sigma * sigma * r / 27.0
}

fn check_sigma_delta(sigma: Option<f64>, delta: Option<f64>) -> Result<()> {
    if let Some(s) = sigma {
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be >= 0, got {s}"
            )));
        }
    }
    if let Some(d) = delta {
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must be in (0, 1), got {d}"
            )));
        }
    }
    Ok(())
}

/// Precomputed electrical flow estimator for a fixed mask. Repeated calls to
/// [`estimate`](Self::estimate) cost `O(|Ω| + Σ_c |V_c|²)`.
#[derive(Debug, Clone)]
pub struct ElectricalFlowEstimator {
    mask: ObservationMask,
    graph: BipartiteGraph,
    core: SpectralCore,
}

impl ElectricalFlowEstimator {
    pub fn new(mask: &ObservationMask) -> Result<Self> {
        let graph = build_graph(mask);
        let core = SpectralCore::new(&graph)?;
        Ok(Self {
            mask: mask.clone(),
            graph,
            core,
        })
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    pub fn graph(&self) -> &BipartiteGraph {
        &self.graph
    }

    pub fn core(&self) -> &SpectralCore {
        &self.core
    }

    pub fn factors(&self, data: &DataMatrix) -> Result<AdditiveModel> {
        lse_factors_with(&self.core, &self.mask, data)
    }

    /// Estimates of every entry; `None` across components.
    pub fn estimate(&self, data: &DataMatrix) -> Result<Grid<Option<f64>>> {
        let f = self.factors(data)?;
        Ok(Grid::from_fn(
            self.mask.n_rows(),
            self.mask.n_cols(),
            |i, j| self.core.connected(i, j).then(|| f.entry(i, j)),
        ))
    }

    /// Single entry through the explicit electrical flow.
    pub fn entry(&self, data: &DataMatrix, i: usize, j: usize) -> Result<f64> {
        self.mask.check_data(data)?;
        efe_entry(&self.graph, &self.core, data, i, j)
    }

    pub fn resistances(&self) -> Grid<Resistance> {
        all_resistances(&self.core)
    }

    pub fn report(
        &self,
        data: &DataMatrix,
        sigma: Option<f64>,
        delta: Option<f64>,
    ) -> Result<EstimateReport> {
        check_sigma_delta(sigma, delta)?;
        let estimates = self.estimate(data)?;
        let resistance = self.resistances();
        let (n, m) = (self.mask.n_rows(), self.mask.n_cols());
        let variance = sigma.map(|s| resistance.map(|r| r.finite().map(|r| variance_bound(s, r))));
        let high_prob = sigma.zip(delta).map(|(s, d)| {
            resistance.map(|r| r.finite().map(|r| high_probability_bound(s, r, n, m, d)))
        });
        let identifiable = resistance.map(|r| r.is_finite());
        Ok(EstimateReport {
            estimates,
            resistance,
            variance_bound: variance,
            high_prob_bound: high_prob,
            identifiable,
        })
    }
}

/// Electrical flow estimate of every entry, with resistances and, when `sigma`
/// (and `delta`) are given, variance and high-probability error bounds.
pub fn efe_full(
    mask: &ObservationMask,
    data: &DataMatrix,
    sigma: Option<f64>,
    delta: Option<f64>,
) -> Result<EstimateReport> {
    ElectricalFlowEstimator::new(mask)?.report(data, sigma, delta)
}

/// Largest `|EFE_{ij} - (â_i + b̂_j)|` over connected pairs, with the EFE
/// computed through explicit flows.
pub fn equivalence_gap(mask: &ObservationMask, data: &DataMatrix) -> Result<f64> {
    let est = ElectricalFlowEstimator::new(mask)?;
    let f = est.factors(data)?;
    let mut worst: f64 = 0.0;
    for i in 0..mask.n_rows() {
        for j in 0..mask.n_cols() {
            if est.core.connected(i, j) {
                let e = est.entry(data, i, j)?;
                worst = worst.max((e - f.entry(i, j)).abs());
            }
        }
    }
    Ok(worst)
}

/// Whether the flow-based and least-squares estimates agree within `tol` on
/// every connected pair.
pub fn verify_equivalence(mask: &ObservationMask, data: &DataMatrix, tol: f64) -> bool {
    matches!(equivalence_gap(mask, data), Ok(gap) if gap <= tol)
}

/// Alternative model `Z*` that moves entry `(i, j)` by `ε R(u_i, v_j)` while
/// changing the observed entries by a total squared amount of only `ε² R`.
pub fn hard_instance_additive(
    base: &AdditiveModel,
    core: &SpectralCore,
    i: usize,
    j: usize,
    epsilon: f64,
) -> Result<AdditiveModel> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be in (0, 1), got {epsilon}"
        )));
    }
    let n = core.n_rows();
    if base.row_effects.len() != n || base.col_effects.len() != core.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} row and {} column effects", n, core.n_cols()),
            found: format!("{} and {}", base.row_effects.len(), base.col_effects.len()),
        });
    }
    let v = voltage_vector(core, i, j)?.potentials;
    let a = DVector::from_fn(n, |k, _| base.row_effects[k] + epsilon * v[k]);
    let b = DVector::from_fn(core.n_cols(), |l, _| {
        base.col_effects[l] - epsilon * v[n + l]
    });
    Ok(AdditiveModel::new(a, b))
}

/// `Σ_Ω (X_{kl} - Z_{kl})² / (2σ²)`: KL divergence between the Gaussian
/// observation laws of two additive models.
pub fn additive_kl_divergence(
    mask: &ObservationMask,
    x: &AdditiveModel,
    z: &AdditiveModel,
    sigma: f64,
) -> f64 {
    let sq: f64 = mask
        .iter()
        .map(|(k, l)| (x.entry(k, l) - z.entry(k, l)).powi(2))
        .sum();
    sq / (2.0 * sigma * sigma)
}

/// `σ̂²` from least-squares residuals with `|Ω| - (n + m - components)`
/// degrees of freedom. `None` when no degrees of freedom remain.
pub fn estimate_noise_variance(mask: &ObservationMask, data: &DataMatrix) -> Result<Option<f64>> {
    let core = SpectralCore::new(&build_graph(mask))?;
    let f = lse_factors_with(&core, mask, data)?;
    let rank = mask.n_rows() + mask.n_cols() - core.labeling().count();
    let dof = mask.len().saturating_sub(rank);
    if dof == 0 {
        return Ok(None);
    }
    let rss: f64 = mask
        .iter()
        .map(|(i, j)| (data[(i, j)] - f.entry(i, j)).powi(2))
        .sum();
    Ok(Some(rss / dof as f64))
}

/// Resistance of `(i, j)` on the graph of `mask`.
pub fn resistance_for(mask: &ObservationMask, i: usize, j: usize) -> Result<Resistance> {
    let core = SpectralCore::new(&build_graph(mask))?;
    if i >= mask.n_rows() || j >= mask.n_cols() {
        return Err(Error::IndexOutOfRange {
            row: i,
            col: j,
            n_rows: mask.n_rows(),
            n_cols: mask.n_cols(),
        });
    }
    Ok(effective_resistance(&core, i, j))
}
