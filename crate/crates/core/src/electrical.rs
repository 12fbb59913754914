//! Voltages, unit electrical currents and effective resistance on `G(Ω)`
//! with unit resistance on every edge.

use std::fmt;

use nalgebra::DVector;
use serde::{Serialize, Serializer};

use crate::graph::BipartiteGraph;
use crate::spectral::SpectralCore;
use crate::{Error, Result};

/// Default per-vertex tolerance for flow conservation checks.
pub const FLOW_TOLERANCE: f64 = 1e-9;

/// Effective resistance, or `Infinite` when the endpoints are disconnected.
///
/// Serializes as a JSON number, or as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Resistance {
    Finite(f64),
    Infinite,
}

impl Resistance {
    pub fn is_finite(self) -> bool {
        matches!(self, Resistance::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Resistance::Finite(r) => Some(r),
            Resistance::Infinite => None,
        }
    }

    /// As a float, with `f64::INFINITY` for disconnected pairs.
    pub fn as_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl std::ops::Add for Resistance {
    type Output = Resistance;

    fn add(self, rhs: Resistance) -> Resistance {
        match (self, rhs) {
            (Resistance::Finite(a), Resistance::Finite(b)) => Resistance::Finite(a + b),
            _ => Resistance::Infinite,
        }
    }
}

impl fmt::Display for Resistance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resistance::Finite(r) => write!(f, "{:.16e}", r),
            Resistance::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Resistance {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Resistance::Finite(r) => s.serialize_f64(*r),
            Resistance::Infinite => s.serialize_str("inf"),
        }
    }
}

/// A flow from row vertex `source` to column vertex `sink`, one value per
/// edge in canonical edge order. Positive values run row → column.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitFlow {
    pub values: DVector<f64>,
    pub source: usize,
    pub sink: usize,
}

/// Vertex potentials; zero mean within the component, zero outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageVector {
    pub potentials: DVector<f64>,
}

fn require_connected(core: &SpectralCore, i: usize, j: usize) -> Result<()> {
    if i >= core.n_rows() || j >= core.n_cols() {
        return Err(Error::IndexOutOfRange {
            row: i,
            col: j,
            n_rows: core.n_rows(),
            n_cols: core.n_cols(),
        });
    }
    if !core.connected(i, j) {
        return Err(Error::DisconnectedPair { row: i, col: j });
    }
    Ok(())
}

/// `L⁺(e_i - e_{n+j})`.
pub fn voltage_vector(core: &SpectralCore, i: usize, j: usize) -> Result<VoltageVector> {
    require_connected(core, i, j)?;
    let n = core.n_rows();
    Ok(VoltageVector {
        potentials: core.apply_in_component(i, &[(i, 1.0), (n + j, -1.0)]),
    })
}

/// Unit electrical flow `B L⁺ (e_i - e_{n+j})`: each edge carries the
/// potential drop across it.
pub fn electrical_flow(
    graph: &BipartiteGraph,
    core: &SpectralCore,
    i: usize,
    j: usize,
) -> Result<UnitFlow> {
    let v = voltage_vector(core, i, j)?;
    let values = DVector::from_iterator(
        graph.edge_count(),
        (0..graph.edge_count()).map(|e| {
            let (a, b) = graph.endpoints(e);
            v.potentials[a] - v.potentials[b]
        }),
    );
    Ok(UnitFlow {
        values,
        source: i,
        sink: j,
    })
}

/// `(e_i - e_{n+j})ᵀ L⁺ (e_i - e_{n+j})`, or `Infinite` across components.
pub fn effective_resistance(core: &SpectralCore, i: usize, j: usize) -> Resistance {
    if !core.connected(i, j) {
        return Resistance::Infinite;
    }
    let a = i;
    let b = core.n_rows() + j;
    let r = core.pinv_entry(a, a) + core.pinv_entry(b, b) - 2.0 * core.pinv_entry(a, b);
    // Round-off can push a tiny resistance marginally negative.
    Resistance::Finite(r.max(0.0))
}

/// Effective resistance of every (row, column) pair.
pub fn all_resistances(core: &SpectralCore) -> crate::Grid<Resistance> {
    crate::Grid::from_fn(core.n_rows(), core.n_cols(), |i, j| {
        effective_resistance(core, i, j)
    })
}

/// Sum of squared edge values.
pub fn flow_energy(flow: &UnitFlow) -> f64 {
    flow.values.norm_squared()
}

/// Net outflow at every vertex (`Bᵀ f`).
pub fn divergence(flow: &UnitFlow, graph: &BipartiteGraph) -> DVector<f64> {
    let mut div = DVector::zeros(graph.vertex_count());
    for e in 0..graph.edge_count() {
        let (a, b) = graph.endpoints(e);
        div[a] += flow.values[e];
        div[b] -= flow.values[e];
    }
    div
}

/// Checks that `flow` sends one unit from `u_i` to `v_j` and is conserved at
/// every other vertex, to within `tol` per vertex.
pub fn verify_unit_flow(
    flow: &UnitFlow,
    graph: &BipartiteGraph,
    i: usize,
    j: usize,
    tol: f64,
) -> bool {
    if flow.values.len() != graph.edge_count() || i >= graph.n_left() || j >= graph.n_right() {
        return false;
    }
    let sink = graph.n_left() + j;
    divergence(flow, graph).iter().enumerate().all(|(v, &d)| {
        let want = if v == i {
            1.0
        } else if v == sink {
            -1.0
        } else {
            0.0
        };
        (d - want).abs() <= tol
    })
}
