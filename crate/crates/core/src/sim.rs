//! Observation-pattern generators and a seeded Monte-Carlo harness.
//!
//! Trial `k` draws its noise from ChaCha8 stream `k + 1` of the configured
//! seed; stream 0 draws the ground truth. Results therefore do not depend on
//! the thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::additive::ElectricalFlowEstimator;
use crate::graph::ObservationMask;
use crate::io::{format_f64, write_float_grid, write_json};
use crate::panel::{staggered_exposure_treatment, PanelEstimator};
use crate::rank1::{PathEstimator, RankOneModel};
use crate::stats::{histogram, mean, spearman, HistogramBin};
use crate::{DataMatrix, Error, Grid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Staircase,
    StaggeredExposure,
    UniformBernoulli,
    ExtremeSparsity,
    DenseSubmatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Additive,
    Rank1,
    Panel,
}

fn parse_name<T: Copy>(s: &str, table: &[(&str, T)], what: &str) -> Result<T> {
    table
        .iter()
        .find(|(name, _)| *name == s)
        .map(|&(_, v)| v)
        .ok_or_else(|| {
            let names: Vec<_> = table.iter().map(|(n, _)| *n).collect();
            Error::Parse(format!(
                "unknown {what} {s:?}; expected one of {}",
                names.join(", ")
            ))
        })
}

const PATTERNS: [(&str, PatternKind); 5] = [
    ("staircase", PatternKind::Staircase),
    ("staggered_exposure", PatternKind::StaggeredExposure),
    ("uniform_bernoulli", PatternKind::UniformBernoulli),
    ("extreme_sparsity", PatternKind::ExtremeSparsity),
    ("dense_submatrix", PatternKind::DenseSubmatrix),
];

const MODELS: [(&str, ModelKind); 3] = [
    ("additive", ModelKind::Additive),
    ("rank1", ModelKind::Rank1),
    ("panel", ModelKind::Panel),
];

impl FromStr for PatternKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_name(s, &PATTERNS, "pattern")
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_name(s, &MODELS, "model")
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = PATTERNS
            .iter()
            .find(|(_, k)| k == self)
            .map(|(n, _)| *n)
            .unwrap_or("?");
        f.write_str(name)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = MODELS
            .iter()
            .find(|(_, k)| k == self)
            .map(|(n, _)| *n)
            .unwrap_or("?");
        f.write_str(name)
    }
}

/// Experiment settings. Parsed from `key = value` lines; see
/// [`SimConfig::parse`] for the keys.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub pattern: PatternKind,
    pub model: ModelKind,
    pub rows: usize,
    pub cols: usize,
    /// Staggered exposure group count.
    pub groups: usize,
    /// Bernoulli observation probability.
    pub p: f64,
    /// Staircase diagonal block count.
    pub blocks: usize,
    /// Staircase extra treated density in the first block.
    pub base_density: f64,
    /// Staircase density factor from one block to the next.
    pub thinning: f64,
    /// Dense-submatrix block rows and columns besides the target's.
    pub block_rows: usize,
    pub block_cols: usize,
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub bins: usize,
    /// Restricts evaluation to one 0-based entry.
    pub target: Option<(usize, usize)>,
    /// Magnitude of rank-1 factors.
    pub factor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            pattern: PatternKind::UniformBernoulli,
            model: ModelKind::Additive,
            rows: 10,
            cols: 10,
            groups: 2,
            p: 0.5,
            blocks: 3,
            base_density: 0.3,
            thinning: 0.5,
            block_rows: 3,
            block_cols: 3,
            sigma: 0.1,
            trials: 1000,
            seed: 0,
            bins: 30,
            target: None,
            factor: 1.0,
        }
    }
}

impl SimConfig {
    /// Parses `key = value` lines. Blank lines and `#` comments are ignored.
    ///
    /// Keys: `pattern`, `model`, `rows`, `cols` (`n` sets both), `groups`,
    /// `p`, `blocks`, `base_density`, `thinning`, `block_rows`, `block_cols`,
    /// `sigma`, `trials`, `seed`, `bins`, `target` (1-based `i,j`), `factor`.
    /// Missing keys keep their defaults; the model defaults to `panel` for
    /// treatment patterns.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut model_set = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad =
                |e: &dyn fmt::Display| Error::Parse(format!("line {}: {key}: {e}", lineno + 1));
            macro_rules! num {
                () => {
                    value.parse().map_err(|e| bad(&e))?
                };
            }
            match key {
                "pattern" => cfg.pattern = value.parse()?,
                "model" => {
                    cfg.model = value.parse()?;
                    model_set = true;
                }
                "rows" => cfg.rows = num!(),
                "cols" => cfg.cols = num!(),
                "n" => {
                    cfg.rows = num!();
                    cfg.cols = cfg.rows;
                }
                "groups" => cfg.groups = num!(),
                "p" => cfg.p = num!(),
                "blocks" => cfg.blocks = num!(),
                "base_density" => cfg.base_density = num!(),
                "thinning" => cfg.thinning = num!(),
                "block_rows" => cfg.block_rows = num!(),
                "block_cols" => cfg.block_cols = num!(),
                "sigma" => cfg.sigma = num!(),
                "trials" => cfg.trials = num!(),
                "seed" => cfg.seed = num!(),
                "bins" => cfg.bins = num!(),
                "factor" => cfg.factor = num!(),
                "target" => {
                    let (i, j) = value.split_once(',').ok_or_else(|| bad(&"expected i,j"))?;
                    let i: usize = i.trim().parse().map_err(|e| bad(&e))?;
                    let j: usize = j.trim().parse().map_err(|e| bad(&e))?;
                    if i == 0 || j == 0 {
                        return Err(bad(&"indices are 1-based"));
                    }
                    cfg.target = Some((i - 1, j - 1));
                }
                other => {
                    return Err(Error::Parse(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        if !model_set
            && matches!(
                cfg.pattern,
                PatternKind::Staircase | PatternKind::StaggeredExposure
            )
        {
            cfg.model = ModelKind::Panel;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParameter(msg));
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return fail(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if self.rows == 0 || self.cols == 0 {
            return fail("dimensions must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.p) {
            return fail(format!("p must be in [0, 1], got {}", self.p));
        }
        if !(0.0..=1.0).contains(&self.base_density) || !(0.0..=1.0).contains(&self.thinning) {
            return fail("base_density and thinning must be in [0, 1]".into());
        }
        if self.bins == 0 {
            return fail("bins must be at least 1".into());
        }
        if let Some((i, j)) = self.target {
            if i >= self.rows || j >= self.cols {
                return fail(format!(
                    "target ({}, {}) is outside the matrix",
                    i + 1,
                    j + 1
                ));
            }
        }
        let treatment_pattern = matches!(
            self.pattern,
            PatternKind::Staircase | PatternKind::StaggeredExposure
        );
        if self.model == ModelKind::Panel && !treatment_pattern {
            return fail(format!(
                "model panel needs a treatment pattern, not {}",
                self.pattern
            ));
        }
        match self.pattern {
            PatternKind::Staircase
                if self.blocks == 0 || self.blocks > self.rows.min(self.cols) =>
            {
                fail("blocks must be between 1 and min(rows, cols)".into())
            }
            PatternKind::StaggeredExposure if self.rows != self.cols => {
                fail("staggered exposure needs rows == cols".into())
            }
            PatternKind::StaggeredExposure
                if self.groups == 0 || !self.rows.is_multiple_of(self.groups) =>
            {
                fail(format!(
                    "groups ({}) must divide rows ({})",
                    self.groups, self.rows
                ))
            }
            PatternKind::ExtremeSparsity if self.rows != self.cols || self.rows < 2 => {
                fail("extreme sparsity needs a square matrix with n >= 2".into())
            }
            PatternKind::DenseSubmatrix
                if self.block_rows + 1 > self.rows || self.block_cols + 1 > self.cols =>
            {
                fail("dense block does not fit".into())
            }
            _ => Ok(()),
        }
    }
}

/// An observation pattern, with a treatment indicator for panel patterns.
#[derive(Debug, Clone)]
pub struct Pattern {
    pub observed: ObservationMask,
    pub treatment: Option<ObservationMask>,
    pub metadata: BTreeMap<String, String>,
}

/// First row, first column and the diagonal observed, except `(1, 1)`.
pub fn extreme_sparsity(n: usize) -> ObservationMask {
    ObservationMask::from_fn(n, n, |i, j| {
        (i == 0 || j == 0 || i == j) && (i, j) != (0, 0)
    })
}

/// Target `(1, 1)` unobserved; rows `1..=block_rows` and columns
/// `1..=block_cols`, together with the target's row and column, observed.
pub fn dense_submatrix(
    rows: usize,
    cols: usize,
    block_rows: usize,
    block_cols: usize,
) -> ObservationMask {
    ObservationMask::from_fn(rows, cols, |i, j| {
        i <= block_rows && j <= block_cols && (i, j) != (0, 0)
    })
}

pub fn uniform_bernoulli(rows: usize, cols: usize, p: f64, seed: u64) -> ObservationMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ObservationMask::from_fn(rows, cols, |_, _| rng.random_bool(p))
}

/// Staircase treatment: a zig-zag spine in which row `i` is treated from
/// column `⌊iT/N⌋` through column `⌊(i+1)T/N⌋` (the last row through
/// `T - 1`), plus extra treated cells drawn in `blocks` diagonal blocks with
/// density `base_density · thinning^b` for block `b`.
pub fn staircase_treatment(
    rows: usize,
    cols: usize,
    blocks: usize,
    base_density: f64,
    thinning: f64,
    seed: u64,
) -> ObservationMask {
    let spine = |i: usize| if i >= rows { cols - 1 } else { i * cols / rows };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ObservationMask::from_fn(rows, cols, |i, j| {
        let on_spine = (spine(i)..=spine(i + 1).max(spine(i))).contains(&j);
        let (bi, bj) = (i * blocks / rows, j * blocks / cols);
        // Draw for every cell so the stream does not depend on the spine.
        let extra = rng.random::<f64>() < base_density * thinning.powi(bi as i32);
        on_spine || (bi == bj && extra)
    })
}

pub fn generate_pattern(cfg: &SimConfig) -> Result<Pattern> {
    cfg.validate()?;
    let (n, m) = (cfg.rows, cfg.cols);
    let mut meta = BTreeMap::new();
    meta.insert("pattern".to_string(), cfg.pattern.to_string());
    meta.insert("rows".to_string(), n.to_string());
    meta.insert("cols".to_string(), m.to_string());
    let (observed, treatment) = match cfg.pattern {
        PatternKind::Staircase => {
            meta.insert("blocks".into(), cfg.blocks.to_string());
            meta.insert("base_density".into(), cfg.base_density.to_string());
            meta.insert("thinning".into(), cfg.thinning.to_string());
            meta.insert("seed".into(), cfg.seed.to_string());
            let x = staircase_treatment(n, m, cfg.blocks, cfg.base_density, cfg.thinning, cfg.seed);
            (ObservationMask::full(n, m), Some(x))
        }
        PatternKind::StaggeredExposure => {
            meta.insert("groups".into(), cfg.groups.to_string());
            (
                ObservationMask::full(n, m),
                Some(staggered_exposure_treatment(n, cfg.groups)?),
            )
        }
        PatternKind::UniformBernoulli => {
            meta.insert("p".into(), cfg.p.to_string());
            meta.insert("seed".into(), cfg.seed.to_string());
            (uniform_bernoulli(n, m, cfg.p, cfg.seed), None)
        }
        PatternKind::ExtremeSparsity => (extreme_sparsity(n), None),
        PatternKind::DenseSubmatrix => {
            meta.insert("block_rows".into(), cfg.block_rows.to_string());
            meta.insert("block_cols".into(), cfg.block_cols.to_string());
            (dense_submatrix(n, m, cfg.block_rows, cfg.block_cols), None)
        }
    };
    Ok(Pattern {
        observed,
        treatment,
        metadata: meta,
    })
}

/// Aggregated Monte-Carlo output.
#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub metadata: BTreeMap<String, String>,
    /// Mean squared error per entry; `None` where nothing was estimated.
    pub mse: Grid<Option<f64>>,
    /// `R`, `R₀ + R₁`, or `1/K` for rank-1; `None` when infinite.
    pub reference: Grid<Option<f64>>,
    /// `mse / reference` on evaluated entries.
    pub ratio: Grid<Option<f64>>,
    /// Trials in which the estimate was unavailable (degenerate denominator).
    pub failures: Grid<usize>,
    pub histogram: Vec<HistogramBin>,
    pub evaluated_entries: usize,
    pub grand_mean_ratio: f64,
    pub spearman: f64,
    pub runtime_seconds: f64,
}

#[allow(clippy::large_enum_variant)]
enum Estimator {
    Additive {
        est: ElectricalFlowEstimator,
        truth: DataMatrix,
    },
    Panel {
        est: PanelEstimator,
        control: DataMatrix,
        beta: DataMatrix,
        treatment: ObservationMask,
    },
    Rank1 {
        est: PathEstimator,
        truth: DataMatrix,
    },
}

fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    DVector::from_fn(len, |_, _| normal.sample(rng))
}

const TRIAL_CHUNK: usize = 16;

/// Runs `config.trials` noisy replicates and summarizes per-entry error.
pub fn run_experiment(cfg: &SimConfig) -> Result<SimResult> {
    let started = Instant::now();
    let pattern = generate_pattern(cfg)?;
    let (n, m) = (cfg.rows, cfg.cols);
    let mut truth_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    truth_rng.set_stream(0);

    let in_scope = |i: usize, j: usize| cfg.target.is_none_or(|t| t == (i, j));
    let (estimator, reference): (Estimator, Grid<Option<f64>>) = match cfg.model {
        ModelKind::Additive => {
            let est = ElectricalFlowEstimator::new(&pattern.observed)?;
            let a = gaussian_vector(&mut truth_rng, n);
            let b = gaussian_vector(&mut truth_rng, m);
            let truth = DataMatrix::from_fn(n, m, |i, j| a[i] + b[j]);
            let reference = est.resistances().map(|r| r.finite());
            (Estimator::Additive { est, truth }, reference)
        }
        ModelKind::Panel => {
            let treatment = pattern.treatment.clone().ok_or_else(|| {
                Error::InvalidParameter("panel model needs a treatment pattern".into())
            })?;
            let est = PanelEstimator::new(&treatment, &pattern.observed)?;
            let alpha = gaussian_vector(&mut truth_rng, n);
            let gamma = gaussian_vector(&mut truth_rng, m);
            let mu = gaussian_vector(&mut truth_rng, n);
            let nu = gaussian_vector(&mut truth_rng, m);
            let control = DataMatrix::from_fn(n, m, |i, t| alpha[i] + gamma[t]);
            let beta = DataMatrix::from_fn(n, m, |i, t| mu[i] + nu[t]);
            let reference = est.resistance_sum().map(|r| r.finite());
            (
                Estimator::Panel {
                    est,
                    control,
                    beta,
                    treatment,
                },
                reference,
            )
        }
        ModelKind::Rank1 => {
            let model = RankOneModel::constant(n, m, cfg.factor);
            let est = PathEstimator::new(&pattern.observed);
            let mut reference = Grid::filled(n, m, None);
            for i in 0..n {
                for j in 0..m {
                    if in_scope(i, j) {
                        let k = est.path_set(i, j)?.k;
                        reference[(i, j)] = (k > 0).then(|| 1.0 / k as f64);
                    }
                }
            }
            (
                Estimator::Rank1 {
                    est,
                    truth: model.matrix(),
                },
                reference,
            )
        }
    };
    let reference = Grid::from_fn(n, m, |i, j| {
        if in_scope(i, j) {
            reference[(i, j)]
        } else {
            None
        }
    });

    let observed = &pattern.observed;
    let noise = Normal::new(0.0, cfg.sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let run_trial = |trial: usize| -> Result<(Vec<f64>, Vec<usize>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(trial as u64 + 1);
        let mut draw = |base: f64| {
            let e = noise.sample(&mut rng);
            if cfg.sigma == 0.0 {
                base
            } else {
                base + e
            }
        };
        let mut sq = vec![0.0; n * m];
        let mut fail = vec![0usize; n * m];
        match &estimator {
            Estimator::Additive { est, truth } => {
                let mut y = DataMatrix::from_element(n, m, f64::NAN);
                for (i, j) in observed.iter() {
                    y[(i, j)] = draw(truth[(i, j)]);
                }
                let e = est.estimate(&y)?;
                for (i, j, v) in e.iter() {
                    if let (Some(v), true) = (v, in_scope(i, j)) {
                        sq[i * m + j] = (v - truth[(i, j)]).powi(2);
                    }
                }
            }
            Estimator::Panel {
                est,
                control,
                beta,
                treatment,
            } => {
                let mut y = DataMatrix::from_element(n, m, f64::NAN);
                for (i, t) in observed.iter() {
                    let mean = control[(i, t)]
                        + if treatment.contains(i, t) {
                            beta[(i, t)]
                        } else {
                            0.0
                        };
                    y[(i, t)] = draw(mean);
                }
                let b = est.beta(&y)?;
                for (i, t, v) in b.iter() {
                    if let (Some(v), true) = (v, in_scope(i, t)) {
                        sq[i * m + t] = (v - beta[(i, t)]).powi(2);
                    }
                }
            }
            Estimator::Rank1 { est, truth } => {
                let mut y = DataMatrix::from_element(n, m, f64::NAN);
                for (i, j) in observed.iter() {
                    y[(i, j)] = draw(truth[(i, j)]);
                }
                for i in 0..n {
                    for j in 0..m {
                        if !in_scope(i, j) || reference[(i, j)].is_none() {
                            continue;
                        }
                        match est.entry(&y, i, j) {
                            Ok(v) => sq[i * m + j] = (v - truth[(i, j)]).powi(2),
                            Err(Error::DegenerateDenominator { .. }) => fail[i * m + j] = 1,
                            Err(e) => return Err(e),
                        }
                    }
                }
            }
        }
        Ok((sq, fail))
    };

    let chunks = cfg.trials.div_ceil(TRIAL_CHUNK);
    let partial: Vec<(Vec<f64>, Vec<usize>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut sum = vec![0.0; n * m];
            let mut fails = vec![0usize; n * m];
            for trial in c * TRIAL_CHUNK..((c + 1) * TRIAL_CHUNK).min(cfg.trials) {
                let (sq, fail) = run_trial(trial)?;
                for k in 0..n * m {
                    sum[k] += sq[k];
                    fails[k] += fail[k];
                }
            }
            Ok((sum, fails))
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; n * m];
    let mut failures = vec![0usize; n * m];
    for (sum, fails) in &partial {
        for k in 0..n * m {
            total[k] += sum[k];
            failures[k] += fails[k];
        }
    }

    let mse = Grid::from_fn(n, m, |i, j| {
        let ok = cfg.trials - failures[i * m + j];
        (reference[(i, j)].is_some() && ok > 0).then(|| total[i * m + j] / ok as f64)
    });
    let ratio = Grid::from_fn(n, m, |i, j| match (mse[(i, j)], reference[(i, j)]) {
        (Some(e), Some(r)) if r > 0.0 => Some(e / r),
        _ => None,
    });
    let mut ratios = Vec::new();
    let mut mses = Vec::new();
    let mut refs = Vec::new();
    for (i, j, r) in ratio.iter() {
        if let Some(r) = r {
            ratios.push(*r);
            mses.push(mse[(i, j)].unwrap());
            refs.push(reference[(i, j)].unwrap());
        }
    }
    let mut metadata = pattern.metadata;
    metadata.insert("model".into(), cfg.model.to_string());
    metadata.insert("sigma".into(), format_f64(cfg.sigma));
    metadata.insert("trials".into(), cfg.trials.to_string());
    metadata.insert("seed".into(), cfg.seed.to_string());
    Ok(SimResult {
        config: cfg.clone(),
        metadata,
        histogram: histogram(&ratios, cfg.bins),
        evaluated_entries: ratios.len(),
        grand_mean_ratio: mean(&ratios),
        spearman: if ratios.len() >= 2 {
            spearman(&mses, &refs)
        } else {
            f64::NAN
        },
        mse,
        reference,
        ratio,
        failures: Grid::from_vec(n, m, failures),
        runtime_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Writes `mse.csv`, `resistance.csv`, `ratio.csv`, `histogram.csv` and
/// `summary.json` into `dir`. Only `summary.json` carries timing data.
pub fn export(result: &SimResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_float_grid(dir.join("mse.csv"), &result.mse)?;
    write_float_grid(dir.join("resistance.csv"), &result.reference)?;
    write_float_grid(dir.join("ratio.csv"), &result.ratio)?;
    let mut w = csv::Writer::from_path(dir.join("histogram.csv"))?;
    w.write_record(["bin_left", "bin_right", "count"])?;
    for b in &result.histogram {
        w.write_record([format_f64(b.left), format_f64(b.right), b.count.to_string()])?;
    }
    w.flush()?;
    #[derive(Serialize)]
    struct Summary<'a> {
        metadata: &'a BTreeMap<String, String>,
        evaluated_entries: usize,
        grand_mean_ratio: f64,
        spearman: f64,
        total_failures: usize,
        runtime_seconds: f64,
        seconds_per_trial: f64,
    }
    write_json(
        dir.join("summary.json"),
        &Summary {
            metadata: &result.metadata,
            evaluated_entries: result.evaluated_entries,
            grand_mean_ratio: result.grand_mean_ratio,
            spearman: result.spearman,
            total_failures: result.failures.as_slice().iter().sum(),
            runtime_seconds: result.runtime_seconds,
            seconds_per_trial: result.runtime_seconds / result.config.trials as f64,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, connected_components};

    #[test]
    fn config_parsing() {
        let cfg =
            SimConfig::parse("pattern = staircase\nn = 12 # square\nsigma=0.1\ntrials=5\nseed=3\n")
                .unwrap();
        assert_eq!(cfg.pattern, PatternKind::Staircase);
        assert_eq!(cfg.model, ModelKind::Panel);
        assert_eq!((cfg.rows, cfg.cols, cfg.trials, cfg.seed), (12, 12, 5, 3));
        assert!(SimConfig::parse("bogus = 1").is_err());
        assert!(SimConfig::parse("trials = 0").is_err());
        assert!(SimConfig::parse("sigma = -1").is_err());
        assert!(SimConfig::parse("pattern = staggered_exposure\nn = 10\ngroups = 3").is_err());
        assert!(SimConfig::parse("pattern = uniform_bernoulli\nmodel = panel").is_err());
        let t = SimConfig::parse("target = 2,3").unwrap();
        assert_eq!(t.target, Some((1, 2)));
    }

    #[test]
    fn pattern_counts() {
        assert_eq!(extreme_sparsity(5).len(), 12);
        let cfg = SimConfig {
            pattern: PatternKind::UniformBernoulli,
            rows: 4,
            cols: 4,
            p: 1.0,
            ..SimConfig::default()
        };
        assert_eq!(generate_pattern(&cfg).unwrap().observed.len(), 16);
        let d = dense_submatrix(6, 6, 3, 2);
        assert_eq!(d.len(), 4 * 3 - 1);
        assert!(!d.contains(0, 0));
    }

    #[test]
    fn staircase_spine_is_connected() {
        for (n, t) in [(30, 30), (20, 35), (35, 20)] {
            let x = staircase_treatment(n, t, 3, 0.0, 0.5, 1);
            let g = build_graph(&x);
            assert_eq!(connected_components(&g).count(), 1, "{n}x{t}");
            let control = ObservationMask::full(n, t).difference(&x).unwrap();
            assert_eq!(connected_components(&build_graph(&control)).count(), 1);
        }
        // Extra cells thin out block by block.
        let x = staircase_treatment(60, 60, 3, 0.8, 0.5, 2);
        let block = |b: usize| {
            x.iter()
                .filter(|&(i, j)| i / 20 == b && j / 20 == b)
                .count()
        };
        assert!(block(0) > block(1) && block(1) > block(2));
    }

    #[test]
    fn zero_noise_gives_zero_error() {
        let cfg = SimConfig {
            pattern: PatternKind::Staircase,
            model: ModelKind::Panel,
            rows: 8,
            cols: 8,
            sigma: 0.0,
            trials: 3,
            ..SimConfig::default()
        };
        let r = run_experiment(&cfg).unwrap();
        assert!(r.evaluated_entries > 0);
        for (_, _, v) in r.mse.iter() {
            if let Some(v) = v {
                assert!(*v < 1e-20);
            }
        }
    }

    #[test]
    fn missing_corner_of_two_by_two() {
        // R = 3 for the unobserved corner of a 2x2 with three observations.
        let cfg = SimConfig {
            pattern: PatternKind::DenseSubmatrix,
            rows: 2,
            cols: 2,
            block_rows: 1,
            block_cols: 1,
            sigma: 0.1,
            trials: 4000,
            seed: 5,
            ..SimConfig::default()
        };
        let r = run_experiment(&cfg).unwrap();
        assert_close!(r.reference[(0, 0)].unwrap(), 3.0, 1e-9);
        let mse = r.mse[(0, 0)].unwrap();
        assert!((mse / 0.03 - 1.0).abs() < 0.1, "{mse}");
    }

    #[test]
    fn deterministic_across_runs_and_threads() {
        let cfg = SimConfig {
            pattern: PatternKind::UniformBernoulli,
            rows: 6,
            cols: 7,
            p: 0.5,
            trials: 50,
            seed: 99,
            ..SimConfig::default()
        };
        let a = run_experiment(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| run_experiment(&cfg)).unwrap();
        assert_eq!(a.mse.as_slice(), b.mse.as_slice());
        let dir = tempfile::tempdir().unwrap();
        export(&a, dir.path().join("a")).unwrap();
        export(&b, dir.path().join("b")).unwrap();
        for f in ["mse.csv", "resistance.csv", "ratio.csv", "histogram.csv"] {
            let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
            let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
            assert_eq!(x, y, "{f}");
        }
        let total: usize = a.histogram.iter().map(|b| b.count).sum();
        assert_eq!(total, a.evaluated_entries);
        let heat = std::fs::read_to_string(dir.path().join("a/ratio.csv")).unwrap();
        assert_eq!(heat.lines().count(), 6);
    }

    #[test]
    fn rank1_target_only() {
        let cfg = SimConfig {
            pattern: PatternKind::ExtremeSparsity,
            model: ModelKind::Rank1,
            rows: 6,
            cols: 6,
            sigma: 0.05,
            trials: 20,
            target: Some((0, 0)),
            ..SimConfig::default()
        };
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.evaluated_entries, 1);
        assert_close!(r.reference[(0, 0)].unwrap(), 0.2, 1e-15);
    }
}
