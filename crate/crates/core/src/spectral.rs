//! Laplacian pseudoinverse via symmetric eigendecomposition.
//!
//! The pseudoinverse is computed one connected component at a time; the
//! full-graph `L⁺` is block diagonal in component order and only assembled on
//! request.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::graph::{connected_components, laplacian, BipartiteGraph, ComponentLabeling};
use crate::{Error, Result};

/// Eigenvalues with `|λ| <= DEFAULT_RANK_TOLERANCE * max|λ|` count as zero.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-9;

const SYMMETRY_TOLERANCE: f64 = 1e-12;
const EIGEN_MAX_ITER: usize = 10_000;

/// Moore–Penrose pseudoinverse of a symmetric matrix together with the
/// dimension of the null space that was discarded.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub matrix: DMatrix<f64>,
    pub null_dim: usize,
}

/// `L⁺ = Q Λ⁺ Qᵀ`, reciprocating every eigenvalue above the relative
/// `rank_tolerance` and zeroing the rest.
pub fn pseudo_inverse(l: &DMatrix<f64>, rank_tolerance: f64) -> Result<PseudoInverse> {
    if !l.is_square() {
        return Err(Error::DimensionMismatch {
            expected: "square matrix".into(),
            found: format!("{}x{}", l.nrows(), l.ncols()),
        });
    }
    let n = l.nrows();
    if n == 0 {
        return Ok(PseudoInverse {
            matrix: DMatrix::zeros(0, 0),
            null_dim: 0,
        });
    }
    let scale = l.amax();
    let asymmetry = (l - l.transpose()).amax();
    if asymmetry > SYMMETRY_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric { asymmetry });
    }

    let eig = SymmetricEigen::try_new(l.clone(), f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(Error::EigenNonConvergence)?;
    let max_abs = eig.eigenvalues.amax();
    let cutoff = rank_tolerance * max_abs;
    let mut null_dim = 0;
    let inv = DVector::from_iterator(
        n,
        eig.eigenvalues.iter().map(|&lam| {
            if lam.abs() <= cutoff {
                null_dim += 1;
                0.0
            } else {
                1.0 / lam
            }
        }),
    );
    let q = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(n, n, |r, c| q[(r, c)] * inv[c]);
    let mut matrix = scaled * q.transpose();
    // Round-off leaves tiny asymmetries; the result is symmetric by construction.
    let sym = (&matrix + matrix.transpose()) * 0.5;
    matrix = sym;
    Ok(PseudoInverse { matrix, null_dim })
}

/// The four blocks of `L⁺` split at the row/column boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct PinvBlocks {
    /// rows x rows
    pub g11: DMatrix<f64>,
    /// rows x cols
    pub g12: DMatrix<f64>,
    /// cols x rows
    pub g21: DMatrix<f64>,
    /// cols x cols
    pub g22: DMatrix<f64>,
}

impl PinvBlocks {
    pub fn assemble(&self) -> DMatrix<f64> {
        let n = self.g11.nrows();
        let m = self.g22.nrows();
        let mut out = DMatrix::zeros(n + m, n + m);
        out.view_mut((0, 0), (n, n)).copy_from(&self.g11);
        out.view_mut((0, n), (n, m)).copy_from(&self.g12);
        out.view_mut((n, 0), (m, n)).copy_from(&self.g21);
        out.view_mut((n, n), (m, m)).copy_from(&self.g22);
        out
    }
}

pub fn partition_blocks(pinv: &DMatrix<f64>, n: usize, m: usize) -> Result<PinvBlocks> {
    if pinv.nrows() != n + m || pinv.ncols() != n + m {
        return Err(Error::DimensionMismatch {
            expected: format!("{0}x{0}", n + m),
            found: format!("{}x{}", pinv.nrows(), pinv.ncols()),
        });
    }
    Ok(PinvBlocks {
        g11: pinv.view((0, 0), (n, n)).into_owned(),
        g12: pinv.view((0, n), (n, m)).into_owned(),
        g21: pinv.view((n, 0), (m, n)).into_owned(),
        g22: pinv.view((n, n), (m, m)).into_owned(),
    })
}

/// Pseudoinverse data for one connected component.
#[derive(Debug, Clone)]
pub struct ComponentCore {
    /// Global vertex indices, increasing; rows come before columns.
    pub vertices: Vec<usize>,
    /// Number of row vertices at the front of `vertices`.
    pub n_rows: usize,
    pub laplacian: DMatrix<f64>,
    pub pinv: DMatrix<f64>,
}

impl ComponentCore {
    pub fn rows(&self) -> &[usize] {
        &self.vertices[..self.n_rows]
    }

    /// Global column indices (not vertex indices) are `v - n_total_rows`.
    pub fn col_vertices(&self) -> &[usize] {
        &self.vertices[self.n_rows..]
    }

    pub fn blocks(&self) -> PinvBlocks {
        partition_blocks(&self.pinv, self.n_rows, self.vertices.len() - self.n_rows)
            .expect("component pinv has consistent shape")
    }
}

/// Laplacian pseudoinverse of `G(Ω)`, stored per connected component.
#[derive(Debug, Clone)]
pub struct SpectralCore {
    n_rows: usize,
    n_cols: usize,
    labeling: ComponentLabeling,
    components: Vec<ComponentCore>,
    local: Vec<usize>,
    rank_tolerance: f64,
}

impl SpectralCore {
    pub fn new(graph: &BipartiteGraph) -> Result<Self> {
        Self::with_tolerance(graph, DEFAULT_RANK_TOLERANCE)
    }

    pub fn with_tolerance(graph: &BipartiteGraph, rank_tolerance: f64) -> Result<Self> {
        if !(rank_tolerance > 0.0 && rank_tolerance < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rank tolerance must be in (0, 1), got {rank_tolerance}"
            )));
        }
        let labeling = connected_components(graph);
        let full_l = laplacian(graph);
        let mut local = vec![0; graph.vertex_count()];
        let mut components = Vec::with_capacity(labeling.count());
        let mut null_total = 0;
        for vertices in labeling.members() {
            for (k, &v) in vertices.iter().enumerate() {
                local[v] = k;
            }
            let n_rows = vertices.iter().take_while(|&&v| v < graph.n_left()).count();
            let size = vertices.len();
            let lap = DMatrix::from_fn(size, size, |a, b| full_l[(vertices[a], vertices[b])]);
            let (pinv, null_dim) = if size == 1 {
                (DMatrix::zeros(1, 1), 1)
            } else {
                let p = pseudo_inverse(&lap, rank_tolerance)?;
                (p.matrix, p.null_dim)
            };
            null_total += null_dim;
            components.push(ComponentCore {
                vertices,
                n_rows,
                laplacian: lap,
                pinv,
            });
        }
        if null_total != labeling.count() {
            return Err(Error::RankMismatch {
                expected: labeling.count(),
                found: null_total,
            });
        }
        Ok(Self {
            n_rows: graph.n_left(),
            n_cols: graph.n_right(),
            labeling,
            components,
            local,
            rank_tolerance,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn rank_tolerance(&self) -> f64 {
        self.rank_tolerance
    }

    pub fn labeling(&self) -> &ComponentLabeling {
        &self.labeling
    }

    pub fn components(&self) -> &[ComponentCore] {
        &self.components
    }

    pub fn component_of(&self, v: usize) -> &ComponentCore {
        &self.components[self.labeling.label(v)]
    }

    /// Whether row `i` and column `j` are connected.
    pub fn connected(&self, i: usize, j: usize) -> bool {
        self.labeling.same(i, self.n_rows + j)
    }

    /// `L⁺[a, b]` for vertex indices `a`, `b`; zero across components.
    pub fn pinv_entry(&self, a: usize, b: usize) -> f64 {
        if !self.labeling.same(a, b) {
            return 0.0;
        }
        self.component_of(a).pinv[(self.local[a], self.local[b])]
    }

    /// `L⁺ x` restricted to the component containing vertex `v`, returned as
    /// a full-length vector (zeros elsewhere). `x` is given sparsely.
    pub fn apply_in_component(&self, v: usize, x: &[(usize, f64)]) -> DVector<f64> {
        let comp = self.component_of(v);
        let mut out = DVector::zeros(self.n_rows + self.n_cols);
        for (a, &ga) in comp.vertices.iter().enumerate() {
            let mut acc = 0.0;
            for &(b, xb) in x {
                if self.labeling.same(v, b) {
                    acc += comp.pinv[(a, self.local[b])] * xb;
                }
            }
            out[ga] = acc;
        }
        out
    }

    /// Assembled full-graph `L⁺`.
    pub fn full_pinv(&self) -> DMatrix<f64> {
        self.assemble(|c| &c.pinv)
    }

    /// Assembled full-graph Laplacian.
    pub fn laplacian(&self) -> DMatrix<f64> {
        self.assemble(|c| &c.laplacian)
    }

    pub fn blocks(&self) -> PinvBlocks {
        partition_blocks(&self.full_pinv(), self.n_rows, self.n_cols)
            .expect("assembled pinv has consistent shape")
    }

    fn assemble(&self, pick: impl Fn(&ComponentCore) -> &DMatrix<f64>) -> DMatrix<f64> {
        let nv = self.n_rows + self.n_cols;
        let mut out = DMatrix::zeros(nv, nv);
        for c in &self.components {
            let mat = pick(c);
            for (a, &ga) in c.vertices.iter().enumerate() {
                for (b, &gb) in c.vertices.iter().enumerate() {
                    out[(ga, gb)] = mat[(a, b)];
                }
            }
        }
        out
    }
}
