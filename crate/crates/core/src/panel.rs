//! Heterogeneous two-way fixed effects on panel data.
//!
//! Outcomes follow `Y_it = F_it + X_it β_it + E_it` with additive control
//! outcomes `F_it = α_i + γ_t` and additive effects `β_it = μ_i + ν_t`. The
//! treated outcomes `G = F + β` are therefore additive as well, so `F̂` and
//! `Ĝ` are estimated separately on the control and treatment graphs.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::additive::ElectricalFlowEstimator;
use crate::electrical::{effective_resistance, Resistance};
use crate::graph::{build_graph, ObservationMask};
use crate::spectral::SpectralCore;
use crate::{DataMatrix, Error, Grid, Result};

/// Default multiplier in the `C σ² (R₀ + R₁) log(NT/δ)` error bound.
pub const DEFAULT_BOUND_MULTIPLIER: f64 = 2.0;

/// Outcomes, treatment indicator and observation pattern of an `N x T` panel.
#[derive(Debug, Clone)]
pub struct PanelData {
    outcomes: DataMatrix,
    treatment: ObservationMask,
    observed: ObservationMask,
}

impl PanelData {
    pub fn new(
        outcomes: DataMatrix,
        treatment: ObservationMask,
        observed: ObservationMask,
    ) -> Result<Self> {
        let shape = (outcomes.nrows(), outcomes.ncols());
        for (what, m) in [("treatment", &treatment), ("observed", &observed)] {
            if (m.n_rows(), m.n_cols()) != shape {
                return Err(Error::DimensionMismatch {
                    expected: format!("{}x{}", shape.0, shape.1),
                    found: format!("{}x{} {what} matrix", m.n_rows(), m.n_cols()),
                });
            }
        }
        Ok(Self {
            outcomes,
            treatment,
            observed,
        })
    }

    /// Panel with every cell observed.
    pub fn fully_observed(outcomes: DataMatrix, treatment: ObservationMask) -> Result<Self> {
        let observed = ObservationMask::full(outcomes.nrows(), outcomes.ncols());
        Self::new(outcomes, treatment, observed)
    }

    pub fn outcomes(&self) -> &DataMatrix {
        &self.outcomes
    }

    pub fn treatment(&self) -> &ObservationMask {
        &self.treatment
    }

    pub fn observed(&self) -> &ObservationMask {
        &self.observed
    }

    pub fn n_units(&self) -> usize {
        self.outcomes.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.outcomes.ncols()
    }

    pub fn with_outcomes(&self, outcomes: DataMatrix) -> Result<Self> {
        Self::new(outcomes, self.treatment.clone(), self.observed.clone())
    }
}

/// `(Ω ∘ (1 - X), Ω ∘ X)`.
pub fn split_masks(panel: &PanelData) -> (ObservationMask, ObservationMask) {
    let control = panel
        .observed
        .difference(&panel.treatment)
        .expect("shapes checked at construction");
    let treated = panel
        .observed
        .intersect(&panel.treatment)
        .expect("shapes checked at construction");
    (control, treated)
}

/// Per-entry treatment effect estimates.
#[derive(Debug, Clone, Serialize)]
pub struct CausalReport {
    pub beta_hat: Grid<Option<f64>>,
    pub control_estimates: Grid<Option<f64>>,
    pub treatment_estimates: Grid<Option<f64>>,
    pub resistance_control: Grid<Resistance>,
    pub resistance_treatment: Grid<Resistance>,
    pub resistance_sum: Grid<Resistance>,
    pub variance_bound: Option<Grid<Option<f64>>>,
    pub high_prob_bound: Option<Grid<Option<f64>>>,
    pub identifiable: Grid<bool>,
}

impl CausalReport {
    pub fn identifiable_count(&self) -> usize {
        self.identifiable.as_slice().iter().filter(|&&b| b).count()
    }
}

/// Effect estimator with both graphs' pseudoinverses precomputed.
#[derive(Debug, Clone)]
pub struct PanelEstimator {
    observed: ObservationMask,
    control: ElectricalFlowEstimator,
    treated: ElectricalFlowEstimator,
    resistance_control: Grid<Resistance>,
    resistance_treatment: Grid<Resistance>,
}

impl PanelEstimator {
    pub fn new(treatment: &ObservationMask, observed: &ObservationMask) -> Result<Self> {
        let control_mask = observed.difference(treatment)?;
        let treated_mask = observed.intersect(treatment)?;
        let (control, treated) = rayon::join(
            || ElectricalFlowEstimator::new(&control_mask),
            || ElectricalFlowEstimator::new(&treated_mask),
        );
        let (control, treated) = (control?, treated?);
        let resistance_control = control.resistances();
        let resistance_treatment = treated.resistances();
        Ok(Self {
            observed: observed.clone(),
            control,
            treated,
            resistance_control,
            resistance_treatment,
        })
    }

    pub fn for_panel(panel: &PanelData) -> Result<Self> {
        Self::new(&panel.treatment, &panel.observed)
    }

    pub fn control(&self) -> &ElectricalFlowEstimator {
        &self.control
    }

    pub fn treated(&self) -> &ElectricalFlowEstimator {
        &self.treated
    }

    /// `R₀ + R₁` per entry.
    pub fn resistance_sum(&self) -> Grid<Resistance> {
        Grid::from_fn(self.observed.n_rows(), self.observed.n_cols(), |i, t| {
            self.resistance_control[(i, t)] + self.resistance_treatment[(i, t)]
        })
    }

    /// `β̂ = Ĝ - F̂` where both are defined.
    pub fn beta(&self, outcomes: &DataMatrix) -> Result<Grid<Option<f64>>> {
        let f = self.control.estimate(outcomes)?;
        let g = self.treated.estimate(outcomes)?;
        Ok(Grid::from_fn(f.rows(), f.cols(), |i, t| {
            match (f[(i, t)], g[(i, t)]) {
                (Some(f), Some(g)) => Some(g - f),
                _ => None,
            }
        }))
    }

    pub fn report(
        &self,
        outcomes: &DataMatrix,
        sigma: Option<f64>,
        delta: Option<f64>,
        multiplier: f64,
    ) -> Result<CausalReport> {
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
        let f = self.control.estimate(outcomes)?;
        let g = self.treated.estimate(outcomes)?;
        let (n, t) = (self.observed.n_rows(), self.observed.n_cols());
        let beta_hat = Grid::from_fn(n, t, |i, k| match (f[(i, k)], g[(i, k)]) {
            (Some(f), Some(g)) => Some(g - f),
            _ => None,
        });
        let resistance_sum = self.resistance_sum();
        let variance_bound = sigma.map(|s| resistance_sum.map(|r| r.finite().map(|r| s * s * r)));
        let high_prob_bound = sigma.zip(delta).map(|(s, d)| {
            let log = ((n * t) as f64 / d).ln();
            resistance_sum.map(|r| r.finite().map(|r| multiplier * s * s * r * log))
        });
        Ok(CausalReport {
            identifiable: resistance_sum.map(|r| r.is_finite()),
            beta_hat,
            control_estimates: f,
            treatment_estimates: g,
            resistance_control: self.resistance_control.clone(),
            resistance_treatment: self.resistance_treatment.clone(),
            resistance_sum,
            variance_bound,
            high_prob_bound,
        })
    }
}

/// Estimates every `β_it` with the electrical flow estimator on the control
/// and treatment graphs.
pub fn estimate_effects(
    panel: &PanelData,
    sigma: Option<f64>,
    delta: Option<f64>,
) -> Result<CausalReport> {
    PanelEstimator::for_panel(panel)?.report(
        &panel.outcomes,
        sigma,
        delta,
        DEFAULT_BOUND_MULTIPLIER,
    )
}

/// Heterogeneous TWFE estimates of `β`; identical to [`estimate_effects`]'s
/// `beta_hat`.
pub fn twfe_beta(panel: &PanelData) -> Result<Grid<Option<f64>>> {
    PanelEstimator::for_panel(panel)?.beta(&panel.outcomes)
}

/// Heterogeneous TWFE by ordinary least squares on the stacked design
/// `[α, γ, μ, ν]`, solved with an SVD. Entries are `None` where `μ_i + ν_t`
/// is not identified. Intended for small panels.
pub fn twfe_least_squares(panel: &PanelData) -> Result<Grid<Option<f64>>> {
    let (n, t) = (panel.n_units(), panel.n_periods());
    let p = 2 * (n + t);
    let cells: Vec<(usize, usize)> = panel.observed.iter().collect();
    if cells.is_empty() {
        return Ok(Grid::from_fn(n, t, |_, _| None));
    }
    let mut design = DMatrix::zeros(cells.len(), p);
    let mut y = DVector::zeros(cells.len());
    for (r, &(i, k)) in cells.iter().enumerate() {
        design[(r, i)] = 1.0;
        design[(r, n + k)] = 1.0;
        if panel.treatment.contains(i, k) {
            design[(r, n + t + i)] = 1.0;
            design[(r, 2 * n + t + k)] = 1.0;
        }
        y[r] = panel.outcomes[(i, k)];
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = smax * 1e-10;
    let theta = svd
        .solve(&y, eps)
        .map_err(|e| Error::InvalidParameter(format!("least squares failed: {e}")))?;

    // μ_i + ν_t is estimable iff its coefficient vector lies in the row space
    // of the design.
    let v_t = svd.v_t.as_ref().expect("requested V");
    let rank_rows: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > eps)
        .collect();
    let estimable = |i: usize, k: usize| {
        let mut w = DVector::zeros(p);
        w[n + t + i] = 1.0;
        w[2 * n + t + k] = 1.0;
        let mut proj = DVector::zeros(p);
        for &r in &rank_rows {
            let row = v_t.row(r).transpose();
            proj += &row * row.dot(&w);
        }
        (w - proj).norm() < 1e-8
    };
    Ok(Grid::from_fn(n, t, |i, k| {
        estimable(i, k).then(|| theta[n + t + i] + theta[2 * n + t + k])
    }))
}

/// A difference-in-differences estimate and the donor unit and period used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DidEstimate {
    pub value: f64,
    pub donor_unit: usize,
    pub donor_period: usize,
}

/// Difference-in-differences for `β_it`.
///
/// For a treated target the donor path `u_i → v_t' → u_j → v_t` is searched
/// in the control graph; for a control target it is searched in the
/// treatment graph. Either way the estimate is
/// `(Y_it - Y_jt) - (Y_it' - Y_jt')` up to the sign that makes it an effect
/// of treatment. The lexicographically smallest `(t', j)` is used.
pub fn did_estimate(panel: &PanelData, i: usize, t: usize) -> Result<DidEstimate> {
    let (n, periods) = (panel.n_units(), panel.n_periods());
    if i >= n || t >= periods {
        return Err(Error::IndexOutOfRange {
            row: i,
            col: t,
            n_rows: n,
            n_cols: periods,
        });
    }
    if !panel.observed.contains(i, t) {
        return Err(Error::TargetNotObserved { row: i, col: t });
    }
    let treated = panel.treatment.contains(i, t);
    // The donor cells must be observed in the arm opposite the target's.
    let other = |r: usize, c: usize| {
        panel.observed.contains(r, c) && panel.treatment.contains(r, c) != treated
    };
    let y = &panel.outcomes;
    for tp in 0..periods {
        if !other(i, tp) {
            continue;
        }
        for j in 0..n {
            if other(j, tp) && other(j, t) {
                let did = (y[(i, t)] - y[(j, t)]) - (y[(i, tp)] - y[(j, tp)]);
                return Ok(DidEstimate {
                    value: if treated { did } else { -did },
                    donor_unit: j,
                    donor_period: tp,
                });
            }
        }
    }
    Err(Error::NoLengthThreePath { row: i, col: t })
}

/// Staggered exposure: with `N` units and `N` periods split into `G` equal
/// groups of size `H`, unit group `g` is treated in period groups `g` and
/// `g + 1`. The last group has no successor and is treated in its own period
/// group only.
pub fn staggered_exposure_treatment(n: usize, groups: usize) -> Result<ObservationMask> {
    if groups == 0 || n == 0 || !n.is_multiple_of(groups) {
        return Err(Error::InvalidParameter(format!(
            "group count {groups} must divide the number of units {n}"
        )));
    }
    let h = n / groups;
    Ok(ObservationMask::from_fn(n, n, |i, t| {
        let (g, c) = (i / h, t / h);
        c == g || c == g + 1
    }))
}

/// Exact resistances between `u_1` and `v_T` in a staggered exposure panel,
/// against their flow-based upper bounds `2G²/N` and `6/(N - H)`.
#[derive(Debug, Clone, Serialize)]
pub struct StaggeredCertificate {
    pub n: usize,
    pub groups: usize,
    pub group_size: usize,
    pub r_treatment: Resistance,
    pub r_treatment_bound: f64,
    pub r_control: Resistance,
    /// Needs at least three groups, so that an all-control corner block
    /// containing `(1, T)` exists.
    pub r_control_bound: Option<f64>,
}

impl StaggeredCertificate {
    pub fn treatment_holds(&self) -> bool {
        self.r_treatment.as_f64() <= self.r_treatment_bound
    }

    pub fn control_holds(&self) -> Option<bool> {
        self.r_control_bound.map(|b| self.r_control.as_f64() <= b)
    }
}

pub fn staggered_exposure_certificate(n: usize, groups: usize) -> Result<StaggeredCertificate> {
    let treatment = staggered_exposure_treatment(n, groups)?;
    let observed = ObservationMask::full(n, n);
    let control = observed.difference(&treatment)?;
    let resistance = |mask: &ObservationMask| -> Result<Resistance> {
        let core = SpectralCore::new(&build_graph(mask))?;
        Ok(effective_resistance(&core, 0, n - 1))
    };
    let (r1, r0) = rayon::join(|| resistance(&treatment), || resistance(&control));
    let h = n / groups;
    let m = (n - h) / (2 * h);
    Ok(StaggeredCertificate {
        n,
        groups,
        group_size: h,
        r_treatment: r1?,
        r_treatment_bound: 2.0 * (groups * groups) as f64 / n as f64,
        r_control: r0?,
        r_control_bound: (m >= 1).then(|| 6.0 / (n - h) as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Truth {
        control: DataMatrix,
        beta: DataMatrix,
    }

    fn random_truth(rng: &mut ChaCha8Rng, n: usize, t: usize) -> Truth {
        let alpha: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gamma: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nu: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        Truth {
            control: DataMatrix::from_fn(n, t, |i, k| alpha[i] + gamma[k]),
            beta: DataMatrix::from_fn(n, t, |i, k| mu[i] + nu[k]),
        }
    }

    fn outcomes(truth: &Truth, treatment: &ObservationMask) -> DataMatrix {
        DataMatrix::from_fn(truth.control.nrows(), truth.control.ncols(), |i, k| {
            truth.control[(i, k)]
                + if treatment.contains(i, k) {
                    truth.beta[(i, k)]
                } else {
                    0.0
                }
        })
    }

    #[test]
    fn masks_partition_observed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = ObservationMask::from_fn(6, 5, |_, _| rng.random_bool(0.3));
        let obs = ObservationMask::from_fn(6, 5, |_, _| rng.random_bool(0.8));
        let panel = PanelData::new(DataMatrix::zeros(6, 5), x, obs.clone()).unwrap();
        let (c, t) = split_masks(&panel);
        assert_eq!(c.len() + t.len(), obs.len());
        assert!(c.intersect(&t).unwrap().is_empty());

        let none = PanelData::fully_observed(DataMatrix::zeros(3, 3), ObservationMask::empty(3, 3))
            .unwrap();
        assert!(split_masks(&none).1.is_empty());
        assert!(
            PanelData::fully_observed(DataMatrix::zeros(3, 3), ObservationMask::empty(3, 2))
                .is_err()
        );
    }

    #[test]
    fn noiseless_effects_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = random_truth(&mut rng, 8, 8);
        let x = ObservationMask::from_fn(8, 8, |_, _| rng.random_bool(0.4));
        let panel = PanelData::fully_observed(outcomes(&truth, &x), x).unwrap();
        let report = estimate_effects(&panel, Some(0.1), Some(0.05)).unwrap();
        assert!(report.identifiable_count() > 0);
        for (i, k, b) in report.beta_hat.iter() {
            assert_eq!(b.is_some(), report.resistance_sum[(i, k)].is_finite());
            if let Some(b) = b {
                assert_close!(*b, truth.beta[(i, k)], 1e-8);
            }
        }
        let hp = report.high_prob_bound.unwrap();
        for (i, k, r) in report.resistance_sum.iter() {
            if let Some(r) = r.finite() {
                let want = 2.0 * 0.01 * r * (64.0f64 / 0.05).ln();
                assert_close!(hp[(i, k)].unwrap(), want, 1e-12);
            }
        }
    }

    #[test]
    fn twfe_least_squares_matches_flows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (n, t) = (6, 5);
            let x = ObservationMask::from_fn(n, t, |_, _| rng.random_bool(0.45));
            let obs = ObservationMask::from_fn(n, t, |_, _| rng.random_bool(0.85));
            let y = DataMatrix::from_fn(n, t, |_, _| rng.random_range(-2.0..2.0));
            let panel = PanelData::new(y, x, obs).unwrap();
            let efe = twfe_beta(&panel).unwrap();
            let lse = twfe_least_squares(&panel).unwrap();
            for ((_, _, a), (_, _, b)) in efe.iter().zip(lse.iter()) {
                match (a, b) {
                    (Some(a), Some(b)) => assert_close!(*a, *b, 1e-8),
                    (None, None) => {}
                    _ => panic!("identifiability disagrees: {a:?} vs {b:?}"),
                }
            }
        }
    }

    #[test]
    fn homogeneous_effect() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut truth = random_truth(&mut rng, 6, 6);
        truth.beta = DataMatrix::from_element(6, 6, 1.5);
        let x = ObservationMask::from_fn(6, 6, |i, k| (i + k) % 3 == 0);
        let panel = PanelData::fully_observed(outcomes(&truth, &x), x).unwrap();
        for (_, _, b) in twfe_beta(&panel).unwrap().iter() {
            if let Some(b) = b {
                assert_close!(*b, 1.5, 1e-9);
            }
        }
    }

    #[test]
    fn did_on_two_by_two() {
        // Unit 0 treated in period 1 only.
        let x = ObservationMask::from_pairs(2, 2, [(0, 1)]).unwrap();
        let y = DataMatrix::from_row_slice(2, 2, &[1.0, 5.0, 2.0, 3.0]);
        let panel = PanelData::fully_observed(y.clone(), x).unwrap();
        let d = did_estimate(&panel, 0, 1).unwrap();
        let want = (y[(0, 1)] - y[(1, 1)]) - (y[(0, 0)] - y[(1, 0)]);
        assert_eq!(d.value, want);
        assert_eq!((d.donor_unit, d.donor_period), (1, 0));
        // The single length-3 path makes DiD and the flow estimate coincide.
        assert_close!(twfe_beta(&panel).unwrap()[(0, 1)].unwrap(), want, 1e-12);
    }

    #[test]
    fn did_exact_when_noiseless() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = random_truth(&mut rng, 7, 7);
        let x = ObservationMask::from_fn(7, 7, |_, _| rng.random_bool(0.3));
        let panel = PanelData::fully_observed(outcomes(&truth, &x), x).unwrap();
        let mut found = 0;
        for i in 0..7 {
            for t in 0..7 {
                match did_estimate(&panel, i, t) {
                    Ok(d) => {
                        found += 1;
                        assert_close!(d.value, truth.beta[(i, t)], 1e-10);
                    }
                    Err(Error::NoLengthThreePath { .. }) => {}
                    Err(e) => panic!("{e}"),
                }
            }
        }
        assert!(found > 0);
    }

    #[test]
    fn did_rejects_unobserved_target() {
        let panel = PanelData::new(
            DataMatrix::zeros(2, 2),
            ObservationMask::empty(2, 2),
            ObservationMask::from_pairs(2, 2, [(0, 0)]).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            did_estimate(&panel, 1, 1),
            Err(Error::TargetNotObserved { .. })
        ));
    }

    #[test]
    fn staggered_pattern_shape() {
        let x = staggered_exposure_treatment(8, 2).unwrap();
        // Group 1 in two period groups, the last group in one.
        assert_eq!(x.len(), 4 * 8 + 4 * 4);
        assert!(staggered_exposure_treatment(8, 3).is_err());
        assert_eq!(staggered_exposure_treatment(5, 1).unwrap().len(), 25);
    }

    #[test]
    fn staggered_certificates() {
        for (n, g) in [(16, 4), (24, 3), (12, 2)] {
            let c = staggered_exposure_certificate(n, g).unwrap();
            assert!(c.treatment_holds(), "{c:?}");
            assert!(c.r_treatment.is_finite());
            if g >= 3 {
                assert_eq!(c.control_holds(), Some(true), "{c:?}");
            } else {
                assert_eq!(c.r_control_bound, None);
            }
        }
        let c = staggered_exposure_certificate(4, 1).unwrap();
        assert_eq!(c.r_control, Resistance::Infinite);
    }
}
