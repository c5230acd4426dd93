//! Seeded simulation studies: level and power on the benchmark structures,
//! structural Hamming distance of learned graphs, and calibration checks.
//!
//! Repetition `r` draws from its own counter-based stream, so results do
//! not depend on scheduling or thread count.

use std::fmt::Write as _;

use log::warn;
use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{build_design, roughness_penalty, DesignRequest, ExpansionOrder};
use crate::discovery::{learn_graph_ca_prepared, CAConfig};
use crate::error::{Error, Result};
use crate::estimation::derivative_check;
use crate::events::MarkedEventSequence;
use crate::graph::{shd, DirectedGraph};
use crate::hawkes::{ExponentialKernel, IntensityModelSpec};
use crate::link::LinkFunction;
use crate::litest::{LITestConfig, PreparedSequence};
use crate::seeds::stream_rng;
use crate::simulate::{
    restrict_to_observed, sample_random_graph_with_rng, simulate_hawkes_with_rng, RandomGraphConfig,
    SimulationConfig, Structure, DEFAULT_BURN_IN, DEFAULT_HORIZON,
};
use crate::basis::SplineBasis;
use crate::stats::{binomial_fraction, ks_pvalue, ks_statistic, quantile};

const LEVEL_STREAM: u64 = 1;
const SHD_STREAM: u64 = 2;
const NULL_STREAM: u64 = 3;
const RESCALING_STREAM: u64 = 4;
const POISSON_STREAM: u64 = 5;
const DERIVATIVE_STREAM: u64 = 6;

/// Runs above this fraction of failed repetitions are rejected.
pub const MAX_FAILURE_RATE: f64 = 0.02;

fn simulation(horizon: f64, burn_in: f64) -> SimulationConfig {
    SimulationConfig {
        horizon,
        burn_in,
        ..Default::default()
    }
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPowerConfig {
    pub reps: usize,
    pub horizon: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub structures: Vec<Structure>,
    pub orders: Vec<ExpansionOrder>,
    pub test: LITestConfig,
}

impl Default for LevelPowerConfig {
    fn default() -> Self {
        Self {
            reps: 200,
            horizon: DEFAULT_HORIZON,
            burn_in: DEFAULT_BURN_IN,
            seed: 7,
            structures: Structure::ALL.to_vec(),
            orders: ExpansionOrder::BOTH.to_vec(),
            test: LITestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub order: ExpansionOrder,
    pub p_value: Option<f64>,
    pub statistic: Option<f64>,
    pub df: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPowerRecord {
    pub structure: Structure,
    pub rep: usize,
    pub events: Option<usize>,
    pub outcomes: Vec<TestOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionSummary {
    pub structure: Structure,
    pub order: ExpansionOrder,
    pub trials: usize,
    pub failures: usize,
    pub rejections: usize,
    pub fraction: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPowerReport {
    pub config: LevelPowerConfig,
    pub records: Vec<LevelPowerRecord>,
    pub summary: Vec<RejectionSummary>,
}

fn level_power_rep(config: &LevelPowerConfig, s_index: usize, structure: Structure, rep: usize) -> LevelPowerRecord {
    let bench = structure.build();
    let mut rng = stream_rng(config.seed, &[LEVEL_STREAM, s_index as u64, rep as u64]);
    let fail_all = |msg: String| LevelPowerRecord {
        structure,
        rep,
        events: None,
        outcomes: config
            .orders
            .iter()
            .map(|&order| TestOutcome {
                order,
                p_value: None,
                statistic: None,
                df: None,
                error: Some(msg.clone()),
            })
            .collect(),
    };
    let observed = (|| -> Result<_> {
        let seq = simulate_hawkes_with_rng(&bench.spec, &simulation(config.horizon, config.burn_in), &mut rng)?;
        let (obs, mapping) = restrict_to_observed(&seq, &bench.observed())?;
        let prepared = PreparedSequence::for_config(&obs, &config.test)?;
        Ok((obs.len(), mapping, prepared))
    })();
    let (events, mapping, prepared) = match observed {
        Ok(v) => v,
        Err(e) => {
            warn!("{structure} repetition {rep}: {e}");
            return fail_all(e.to_string());
        }
    };
    let new = |m: usize| mapping.iter().position(|&o| o == m).expect("observed mark");
    let (j, k) = (new(bench.j), new(bench.k));
    let cond: Vec<usize> = bench.c.map(|c| vec![new(c)]).unwrap_or_default();
    let outcomes = config
        .orders
        .iter()
        .map(|&order| match prepared.test(j, k, &cond, &config.test.with_order(order)) {
            Ok(r) => TestOutcome {
                order,
                p_value: Some(r.p_value),
                statistic: Some(r.statistic),
                df: Some(r.df),
                error: None,
            },
            Err(e) => {
                warn!("{structure} repetition {rep}, order {order}: {e}");
                TestOutcome {
                    order,
                    p_value: None,
                    statistic: None,
                    df: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();
    LevelPowerRecord {
        structure,
        rep,
        events: Some(events),
        outcomes,
    }
}

/// For every structure and repetition: simulate, drop latent marks and test
/// `j -/-> k | {c}` (or `| {}` without `c`) at each order on the same data.
pub fn run_level_power(config: &LevelPowerConfig) -> Result<LevelPowerReport> {
    config.test.validate()?;
    if config.reps == 0 || config.orders.is_empty() || config.structures.is_empty() {
        return Err(Error::InvalidConfig("need at least one repetition, order and structure".into()));
    }
    let jobs: Vec<(usize, Structure, usize)> = config
        .structures
        .iter()
        .enumerate()
        .flat_map(|(i, &s)| (0..config.reps).map(move |r| (i, s, r)))
        .collect();
    let records: Vec<LevelPowerRecord> = jobs
        .par_iter()
        .map(|&(i, s, r)| level_power_rep(config, i, s, r))
        .collect();
    let mut summary = Vec::new();
    for &structure in &config.structures {
        for (o, &order) in config.orders.iter().enumerate() {
            let outcomes: Vec<&TestOutcome> = records
                .iter()
                .filter(|r| r.structure == structure)
                .map(|r| &r.outcomes[o])
                .collect();
            let ok: Vec<f64> = outcomes.iter().filter_map(|t| t.p_value).collect();
            let rejections = ok.iter().filter(|&&p| p < config.test.alpha).count();
            let (fraction, se) = binomial_fraction(rejections, ok.len());
            summary.push(RejectionSummary {
                structure,
                order,
                trials: ok.len(),
                failures: outcomes.len() - ok.len(),
                rejections,
                fraction,
                se,
            });
        }
    }
    Ok(LevelPowerReport {
        config: config.clone(),
        records,
        summary,
    })
}

impl LevelPowerReport {
    pub fn get(&self, structure: Structure, order: ExpansionOrder) -> Option<&RejectionSummary> {
        self.summary.iter().find(|s| s.structure == structure && s.order == order)
    }

    /// Paired p-values `(first order, second order)` of one structure, over
    /// repetitions where both tests succeeded.
    pub fn paired(&self, structure: Structure) -> Vec<(f64, f64)> {
        let pos = |o| self.config.orders.iter().position(|&x| x == o);
        let (Some(a), Some(b)) = (pos(ExpansionOrder::First), pos(ExpansionOrder::Second)) else {
            return Vec::new();
        };
        self.records
            .iter()
            .filter(|r| r.structure == structure)
            .filter_map(|r| Some((r.outcomes[a].p_value?, r.outcomes[b].p_value?)))
            .collect()
    }

    pub fn failure_rate(&self) -> f64 {
        let total: usize = self.summary.iter().map(|s| s.trials + s.failures).sum();
        let failed: usize = self.summary.iter().map(|s| s.failures).sum();
        if total == 0 {
            0.0
        } else {
            failed as f64 / total as f64
        }
    }

    pub fn check_failure_rate(&self) -> Result<()> {
        let rate = self.failure_rate();
        if rate > MAX_FAILURE_RATE {
            return Err(Error::InvalidConfig(format!(
                "{:.1}% of tests failed (limit {:.0}%)",
                100.0 * rate,
                100.0 * MAX_FAILURE_RATE
            )));
        }
        Ok(())
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("structure,order,trials,failures,rejections,fraction,se\n");
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.structure, s.order, s.trials, s.failures, s.rejections, s.fraction, s.se
            );
        }
        out
    }

    pub fn records_csv(&self) -> String {
        let mut out = String::from("structure,rep,order,events,p_value,statistic,df,error\n");
        for r in &self.records {
            for t in &r.outcomes {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    r.structure,
                    r.rep,
                    t.order,
                    fmt_opt(r.events),
                    fmt_opt(t.p_value),
                    fmt_opt(t.statistic),
                    fmt_opt(t.df),
                    t.error.as_deref().map(csv_escape).unwrap_or_default()
                );
            }
        }
        out
    }
}

fn csv_escape(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShdConfig {
    pub dims: Vec<usize>,
    pub reps: usize,
    pub horizon: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub edge_prob: f64,
    pub orders: Vec<ExpansionOrder>,
    pub ca: CAConfig,
}

impl Default for ShdConfig {
    fn default() -> Self {
        Self {
            dims: vec![3, 4, 5, 6, 7],
            reps: 20,
            horizon: DEFAULT_HORIZON,
            burn_in: DEFAULT_BURN_IN,
            seed: 7,
            edge_prob: 0.2,
            orders: ExpansionOrder::BOTH.to_vec(),
            ca: CAConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShdOutcome {
    pub order: ExpansionOrder,
    pub shd: Option<usize>,
    pub learned_edges: Option<usize>,
    pub tests: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShdRecord {
    pub d: usize,
    pub rep: usize,
    /// Off-diagonal edges of the true graph.
    pub true_edges: usize,
    pub truth: DirectedGraph,
    pub outcomes: Vec<ShdOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShdSummary {
    pub d: usize,
    pub order: ExpansionOrder,
    pub trials: usize,
    pub failures: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShdReport {
    pub config: ShdConfig,
    pub records: Vec<ShdRecord>,
    pub summary: Vec<ShdSummary>,
}

fn off_diagonal(g: &DirectedGraph) -> usize {
    g.edges().filter(|(j, k)| j != k).count()
}

fn shd_rep(config: &ShdConfig, d: usize, rep: usize) -> ShdRecord {
    let mut rng = stream_rng(config.seed, &[SHD_STREAM, d as u64, rep as u64]);
    let graph_cfg = RandomGraphConfig::new(d, config.edge_prob, 0);
    let sampled = sample_random_graph_with_rng(&graph_cfg, &mut rng).and_then(|(truth, spec)| {
        let seq = simulate_hawkes_with_rng(&spec, &simulation(config.horizon, config.burn_in), &mut rng)?;
        Ok((truth, seq))
    });
    let (truth, seq) = match sampled {
        Ok(v) => v,
        Err(e) => {
            warn!("dimension {d} repetition {rep}: {e}");
            return ShdRecord {
                d,
                rep,
                true_edges: 0,
                truth: DirectedGraph::empty(d),
                outcomes: config
                    .orders
                    .iter()
                    .map(|&order| ShdOutcome {
                        order,
                        shd: None,
                        learned_edges: None,
                        tests: None,
                        error: Some(e.to_string()),
                    })
                    .collect(),
            };
        }
    };
    let prepared = PreparedSequence::for_config(&seq, &config.ca.test);
    let outcomes = config
        .orders
        .iter()
        .map(|&order| {
            let ca = CAConfig {
                test: config.ca.test.with_order(order),
                ..config.ca
            };
            let learned = prepared
                .as_ref()
                .map_err(|e| e.clone())
                .and_then(|p| learn_graph_ca_prepared(p, &ca))
                .and_then(|trace| Ok((shd(&trace.graph, &truth)?, trace)));
            match learned {
                Ok((distance, trace)) => ShdOutcome {
                    order,
                    shd: Some(distance),
                    learned_edges: Some(off_diagonal(&trace.graph)),
                    tests: Some(trace.num_tests()),
                    error: None,
                },
                Err(e) => {
                    warn!("dimension {d} repetition {rep}, order {order}: {e}");
                    ShdOutcome {
                        order,
                        shd: None,
                        learned_edges: None,
                        tests: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    ShdRecord {
        d,
        rep,
        true_edges: off_diagonal(&truth),
        truth,
        outcomes,
    }
}

/// For every dimension and repetition: sample a random graph, simulate it,
/// learn the graph at each order from the same data and score it by SHD.
pub fn run_shd_experiment(config: &ShdConfig) -> Result<ShdReport> {
    config.ca.test.validate()?;
    if config.reps == 0 || config.orders.is_empty() || config.dims.is_empty() {
        return Err(Error::InvalidConfig("need at least one repetition, order and dimension".into()));
    }
    if let Some(&d) = config.dims.iter().find(|&&d| d < 2) {
        return Err(Error::InvalidConfig(format!("dimension {d} is below 2")));
    }
    if !(0.0..=1.0).contains(&config.edge_prob) {
        return Err(Error::InvalidConfig(format!("edge probability {} outside [0, 1]", config.edge_prob)));
    }
    let jobs: Vec<(usize, usize)> = config
        .dims
        .iter()
        .flat_map(|&d| (0..config.reps).map(move |r| (d, r)))
        .collect();
    let records: Vec<ShdRecord> = jobs.par_iter().map(|&(d, r)| shd_rep(config, d, r)).collect();
    let mut summary = Vec::new();
    for &d in &config.dims {
        for (o, &order) in config.orders.iter().enumerate() {
            let all: Vec<Option<usize>> = records.iter().filter(|r| r.d == d).map(|r| r.outcomes[o].shd).collect();
            let ok: Vec<f64> = all.iter().flatten().map(|&v| v as f64).collect();
            summary.push(ShdSummary {
                d,
                order,
                trials: ok.len(),
                failures: all.len() - ok.len(),
                median: quantile(&ok, 0.5),
                q25: quantile(&ok, 0.25),
                q75: quantile(&ok, 0.75),
                mean: ok.iter().sum::<f64>() / ok.len().max(1) as f64,
            });
        }
    }
    Ok(ShdReport {
        config: config.clone(),
        records,
        summary,
    })
}

impl ShdReport {
    pub fn get(&self, d: usize, order: ExpansionOrder) -> Option<&ShdSummary> {
        self.summary.iter().find(|s| s.d == d && s.order == order)
    }

    /// `median(first) - median(second)` for dimension `d`.
    pub fn median_gap(&self, d: usize) -> Option<f64> {
        Some(self.get(d, ExpansionOrder::First)?.median - self.get(d, ExpansionOrder::Second)?.median)
    }

    pub fn failure_rate(&self) -> f64 {
        let total: usize = self.summary.iter().map(|s| s.trials + s.failures).sum();
        let failed: usize = self.summary.iter().map(|s| s.failures).sum();
        if total == 0 {
            0.0
        } else {
            failed as f64 / total as f64
        }
    }

    pub fn check_failure_rate(&self) -> Result<()> {
        let rate = self.failure_rate();
        if rate > MAX_FAILURE_RATE {
            return Err(Error::InvalidConfig(format!(
                "{:.1}% of graph fits failed (limit {:.0}%)",
                100.0 * rate,
                100.0 * MAX_FAILURE_RATE
            )));
        }
        Ok(())
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("d,order,trials,failures,median,q25,q75,mean\n");
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.d, s.order, s.trials, s.failures, s.median, s.q25, s.q75, s.mean
            );
        }
        out
    }

    pub fn records_csv(&self) -> String {
        let mut out = String::from("d,rep,true_edges,order,shd,learned_edges,tests,error\n");
        for r in &self.records {
            for o in &r.outcomes {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    r.d,
                    r.rep,
                    r.true_edges,
                    o.order,
                    fmt_opt(o.shd),
                    fmt_opt(o.learned_edges),
                    fmt_opt(o.tests),
                    o.error.as_deref().map(csv_escape).unwrap_or_default()
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub seed: u64,
    /// Independent Poisson pairs for the null p-value check.
    pub null_reps: usize,
    pub null_horizon: f64,
    pub orders: Vec<ExpansionOrder>,
    pub test: LITestConfig,
    /// Realizations pooled in the time-rescaling check.
    pub rescaling_reps: usize,
    pub rescaling_horizon: f64,
    pub poisson_reps: usize,
    pub poisson_horizon: f64,
    /// Random points per link in the derivative check.
    pub derivative_points: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            null_reps: 500,
            null_horizon: DEFAULT_HORIZON,
            orders: ExpansionOrder::BOTH.to_vec(),
            test: LITestConfig::default(),
            rescaling_reps: 100,
            rescaling_horizon: 200.0,
            poisson_reps: 200,
            poisson_horizon: 4000.0,
            derivative_points: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCheck {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub config: CalibrationConfig,
    pub checks: Vec<CalibrationCheck>,
}

impl CalibrationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("check,statistic,threshold,passed,detail\n");
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                c.name,
                c.statistic,
                c.threshold,
                c.passed,
                csv_escape(&c.detail)
            );
        }
        out
    }
}

/// P-values of `0 -/-> 1 | {}` on independent homogeneous Poisson marks
/// with rate 0.25.
pub fn null_p_values(config: &CalibrationConfig, order: ExpansionOrder) -> Result<Vec<Option<f64>>> {
    let spec = IntensityModelSpec::new(vec![0.25, 0.25], LinkFunction::Identity)?;
    let test = config.test.with_order(order);
    test.validate()?;
    let sim = simulation(config.null_horizon, 0.0);
    Ok((0..config.null_reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(config.seed, &[NULL_STREAM, r as u64]);
            let seq = simulate_hawkes_with_rng(&spec, &sim, &mut rng).ok()?;
            match PreparedSequence::for_config(&seq, &test).and_then(|p| p.test(0, 1, &[], &test)) {
                Ok(res) => Some(res.p_value),
                Err(e) => {
                    warn!("null repetition {r}: {e}");
                    None
                }
            }
        })
        .collect())
}

/// The self-exciting model of the time-rescaling check.
pub fn rescaling_spec() -> IntensityModelSpec {
    IntensityModelSpec::new(vec![0.25], LinkFunction::PiecewiseLogLinear)
        .and_then(|s| s.with_kernel(0, 0, ExponentialKernel::new(0.4, 0.8)?))
        .expect("valid model")
}

/// Compensator increments between consecutive events, pooled over
/// realizations started from an empty history.
pub fn rescaled_gaps(spec: &IntensityModelSpec, seed: u64, reps: usize, horizon: f64) -> Result<Vec<f64>> {
    let sim = simulation(horizon, 0.0);
    let per_rep: Result<Vec<Vec<f64>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, &[RESCALING_STREAM, r as u64]);
            let seq = simulate_hawkes_with_rng(spec, &sim, &mut rng)?;
            Ok((0..spec.d()).flat_map(|k| spec.compensator_increments(&seq, k)).collect())
        })
        .collect();
    Ok(per_rep?.into_iter().flatten().collect())
}

/// Per-seed event counts of a homogeneous Poisson process with `rate`.
pub fn poisson_counts(seed: u64, reps: usize, rate: f64, horizon: f64) -> Result<Vec<usize>> {
    let spec = IntensityModelSpec::new(vec![rate], LinkFunction::Identity)?;
    let sim = simulation(horizon, 0.0);
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, &[POISSON_STREAM, r as u64]);
            Ok(simulate_hawkes_with_rng(&spec, &sim, &mut rng)?.len())
        })
        .collect()
}

/// Finite-difference checks of the penalized log-likelihood at random
/// coefficient vectors on random order-2 designs; returns the largest
/// error per link.
pub fn derivative_errors(seed: u64, points: usize) -> Result<Vec<(LinkFunction, f64)>> {
    let basis = SplineBasis::new(5.0, 5, 3)?;
    let truth = IntensityModelSpec::new(vec![0.4, 0.3], LinkFunction::Identity)?
        .with_kernel(0, 1, ExponentialKernel::new(0.3, 0.8)?)?
        .with_kernel(1, 1, ExponentialKernel::new(0.3, 0.8)?)?;
    LinkFunction::ALL
        .into_iter()
        .enumerate()
        .map(|(l, link)| {
            let mut worst = 0.0f64;
            for p in 0..points {
                let mut rng = stream_rng(seed, &[DERIVATIVE_STREAM, l as u64, p as u64]);
                let seq = simulate_hawkes_with_rng(&truth, &simulation(60.0, 10.0), &mut rng)?;
                let request = DesignRequest {
                    target: 1,
                    conditioning: vec![1],
                    order: ExpansionOrder::Second,
                    test_mark: Some(0),
                };
                let design = build_design(&seq, &request, &basis, 0.1)?;
                let omega = roughness_penalty(&design.layout, &basis).matrix;
                let kappa = rng.gen_range(0.0..2.0);
                let mut beta = DVector::from_fn(design.ncols(), |_, _| rng.gen_range(-0.05..0.05));
                beta[0] = 0.0;
                // keep every linear predictor at least 0.5
                let lowest = (&design.quadrature * &beta)
                    .min()
                    .min((&design.events * &beta).min());
                beta[0] = rng.gen_range(0.5..1.5) + (-lowest).max(0.0);
                let check = derivative_check(&beta, &design, link, &omega, kappa)?;
                worst = worst.max(check.max_error());
            }
            Ok((link, worst))
        })
        .collect()
}

pub fn run_calibration_suite(config: &CalibrationConfig) -> Result<CalibrationReport> {
    let mut checks = Vec::new();
    for &order in &config.orders {
        let p = null_p_values(config, order)?;
        let ok: Vec<f64> = p.iter().flatten().copied().collect();
        let stat = ks_statistic(&ok, |x| x.clamp(0.0, 1.0));
        checks.push(CalibrationCheck {
            name: format!("null-uniformity-order-{order}"),
            statistic: stat,
            threshold: 0.08,
            passed: stat < 0.08 && (p.len() - ok.len()) as f64 <= MAX_FAILURE_RATE * p.len() as f64,
            detail: format!("KS distance of {} p-values from uniform, {} failed", ok.len(), p.len() - ok.len()),
        });
    }

    let gaps = rescaled_gaps(&rescaling_spec(), config.seed, config.rescaling_reps, config.rescaling_horizon)?;
    let d = ks_statistic(&gaps, |x| 1.0 - (-x).exp());
    let p = ks_pvalue(d, gaps.len());
    checks.push(CalibrationCheck {
        name: "time-rescaling".into(),
        statistic: p,
        threshold: 0.01,
        passed: p > 0.01,
        detail: format!("KS p-value of {} pooled rescaled gaps against Exp(1)", gaps.len()),
    });

    let rate = 0.25;
    let counts = poisson_counts(config.seed, config.poisson_reps, rate, config.poisson_horizon)?;
    let mean = rate * config.poisson_horizon;
    let within = counts.iter().filter(|&&n| (n as f64 - mean).abs() <= 4.0 * mean.sqrt()).count();
    let frac = within as f64 / counts.len().max(1) as f64;
    checks.push(CalibrationCheck {
        name: "poisson-counts".into(),
        statistic: frac,
        threshold: 0.99,
        passed: frac >= 0.99,
        detail: format!("fraction of {} counts within 4 sd of {mean}", counts.len()),
    });

    for (link, err) in derivative_errors(config.seed, config.derivative_points)? {
        checks.push(CalibrationCheck {
            name: format!("derivatives-{link}"),
            statistic: err,
            threshold: 1e-5,
            passed: err < 1e-5,
            detail: format!("max relative finite-difference error over {} points", config.derivative_points),
        });
    }
    Ok(CalibrationReport {
        config: config.clone(),
        checks,
    })
}

/// Observed-mark sequence of a benchmark structure for one repetition of
/// the level/power study, as used by [`run_level_power`].
pub fn level_power_sequence(
    config: &LevelPowerConfig,
    structure: Structure,
    rep: usize,
) -> Result<MarkedEventSequence> {
    let s_index = config
        .structures
        .iter()
        .position(|&s| s == structure)
        .ok_or_else(|| Error::UnknownStructure(structure.to_string()))?;
    let bench = structure.build();
    let mut rng = stream_rng(config.seed, &[LEVEL_STREAM, s_index as u64, rep as u64]);
    let seq = simulate_hawkes_with_rng(&bench.spec, &simulation(config.horizon, config.burn_in), &mut rng)?;
    Ok(restrict_to_observed(&seq, &bench.observed())?.0)
}
