//! Thinning simulation of nonlinear Hawkes processes and random models.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{MarkedEventSequence, Window};
use crate::graph::DirectedGraph;
use crate::hawkes::{spectral_radius, ExponentialKernel, IntensityModelSpec};
use crate::link::LinkFunction;

pub const DEFAULT_BURN_IN: f64 = 50.0;
pub const DEFAULT_HORIZON: f64 = 2000.0;
pub const DEFAULT_MAX_EVENTS: usize = 1_000_000;

/// Decay used by every shipped benchmark model.
pub const BENCHMARK_DECAY: f64 = 0.8;
pub const BENCHMARK_BASELINE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub horizon: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub max_events: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            burn_in: DEFAULT_BURN_IN,
            seed: 0,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }
}

impl SimulationConfig {
    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidConfig(format!("horizon {} must be > 0", self.horizon)));
        }
        if !(self.burn_in >= 0.0 && self.burn_in.is_finite()) {
            return Err(Error::InvalidConfig(format!("burn-in {} must be >= 0", self.burn_in)));
        }
        Ok(())
    }
}

/// Running state of all kernel contributions, decayed lazily to `now`.
struct Excitation<'a> {
    spec: &'a IntensityModelSpec,
    /// `values[j * d + k]` is `sum over j-events of g^{jk}(now - tau)`.
    values: Vec<f64>,
    now: f64,
    clamped: bool,
}

impl<'a> Excitation<'a> {
    fn new(spec: &'a IntensityModelSpec, now: f64) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.d() * spec.d()],
            now,
            clamped: false,
        }
    }

    fn advance(&mut self, t: f64) {
        let d = self.spec.d();
        let dt = t - self.now;
        for j in 0..d {
            for k in 0..d {
                if let Some(g) = self.spec.kernel(j, k) {
                    self.values[j * d + k] *= (-g.beta * dt).exp();
                }
            }
        }
        self.now = t;
    }

    fn fire(&mut self, j: usize) {
        let d = self.spec.d();
        for k in 0..d {
            if let Some(g) = self.spec.kernel(j, k) {
                self.values[j * d + k] += g.alpha * g.beta;
            }
        }
    }

    fn intensity(&mut self, k: usize) -> f64 {
        let d = self.spec.d();
        let x = self.spec.baselines()[k] + (0..d).map(|j| self.values[j * d + k]).sum::<f64>();
        let lam = self.spec.link().inverse(x);
        if lam < 0.0 {
            self.clamped = true;
            0.0
        } else {
            lam
        }
    }

    /// Upper bound on the total intensity until the next event: positive
    /// contributions only decay, negative ones only shrink toward zero, and
    /// the inverse link is increasing.
    fn dominating_rate(&self) -> f64 {
        let d = self.spec.d();
        (0..d)
            .map(|k| {
                let x = self.spec.baselines()[k]
                    + (0..d).map(|j| self.values[j * d + k].max(0.0)).sum::<f64>();
                self.spec.link().inverse(x).max(0.0)
            })
            .sum()
    }
}

fn warn_if_unstable(spec: &IntensityModelSpec) {
    if spec.link() != LinkFunction::Identity {
        return;
    }
    if spec.has_negative_alpha() {
        warn!("identity link with negative kernels: intensity is clamped at 0");
    } else if let Ok(rho) = spectral_radius(&spec.integrated_kernel_matrix()) {
        if rho >= 1.0 {
            warn!("spectral radius {rho:.4} >= 1: the linear Hawkes model is not stationary");
        }
    }
}

/// Ogata thinning on `[-burn_in, horizon)`; events before 0 are discarded and
/// the returned window is `[0, horizon)`.
pub fn simulate_hawkes(spec: &IntensityModelSpec, config: &SimulationConfig) -> Result<MarkedEventSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    simulate_hawkes_with_rng(spec, config, &mut rng)
}

pub fn simulate_hawkes_with_rng<R: Rng + ?Sized>(
    spec: &IntensityModelSpec,
    config: &SimulationConfig,
    rng: &mut R,
) -> Result<MarkedEventSequence> {
    config.validate()?;
    warn_if_unstable(spec);
    let d = spec.d();
    let refresh = spec.min_decay().map_or(f64::INFINITY, |b| 1.0 / b);
    let mut state = Excitation::new(spec, -config.burn_in);
    let mut times = Vec::new();
    let mut marks = Vec::new();
    let mut lambdas = vec![0.0; d];
    let mut total_events = 0usize;

    let mut t = -config.burn_in;
    'outer: loop {
        let bound = state.dominating_rate();
        if bound <= 0.0 {
            break;
        }
        let bound_set_at = t;
        loop {
            let gap: f64 = Exp1.sample(rng);
            t += gap / bound;
            if t >= config.horizon {
                break 'outer;
            }
            state.advance(t);
            let mut total = 0.0;
            for (k, l) in lambdas.iter_mut().enumerate() {
                *l = state.intensity(k);
                total += *l;
            }
            debug_assert!(total <= bound * (1.0 + 1e-9), "thinning bound violated");
            let u: f64 = rng.gen::<f64>() * bound;
            if u < total {
                let mut acc = 0.0;
                let mut mark = d - 1;
                for (k, &l) in lambdas.iter().enumerate() {
                    acc += l;
                    if u < acc {
                        mark = k;
                        break;
                    }
                }
                state.fire(mark);
                total_events += 1;
                if total_events > config.max_events {
                    return Err(Error::ExplosionGuard {
                        max_events: config.max_events,
                    });
                }
                if t >= 0.0 {
                    times.push(t);
                    marks.push(mark);
                }
                continue 'outer;
            }
            if t - bound_set_at > refresh {
                continue 'outer;
            }
        }
    }
    if state.clamped {
        warn!("linear predictor went negative during simulation; intensity clamped at 0");
    }
    MarkedEventSequence::new(times, marks, Window::new(0.0, config.horizon)?, d)
}

/// Thinning against a fixed per-mark rate cap, with candidate slot `k`
/// reserved for mark `k`. Two models run with the same seed see identical
/// candidates, so raising a baseline can only add accepted events of that
/// mark when all kernels are excitatory.
pub fn simulate_hawkes_coupled(
    spec: &IntensityModelSpec,
    config: &SimulationConfig,
    per_mark_cap: f64,
) -> Result<MarkedEventSequence> {
    config.validate()?;
    if !(per_mark_cap > 0.0 && per_mark_cap.is_finite()) {
        return Err(Error::InvalidConfig("rate cap must be positive".into()));
    }
    let d = spec.d();
    let total_rate = per_mark_cap * d as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = Excitation::new(spec, -config.burn_in);
    let mut times = Vec::new();
    let mut marks = Vec::new();
    let mut total_events = 0usize;
    let mut t = -config.burn_in;
    loop {
        let gap: f64 = Exp1.sample(&mut rng);
        t += gap / total_rate;
        if t >= config.horizon {
            break;
        }
        let u: f64 = rng.gen::<f64>() * d as f64;
        let slot = (u.floor() as usize).min(d - 1);
        let level = (u - slot as f64) * per_mark_cap;
        state.advance(t);
        let lam = state.intensity(slot);
        if lam > per_mark_cap {
            return Err(Error::InvalidConfig(format!(
                "intensity {lam} of mark {slot} exceeds the coupling cap {per_mark_cap}"
            )));
        }
        if level < lam {
            state.fire(slot);
            total_events += 1;
            if total_events > config.max_events {
                return Err(Error::ExplosionGuard {
                    max_events: config.max_events,
                });
            }
            if t >= 0.0 {
                times.push(t);
                marks.push(slot);
            }
        }
    }
    MarkedEventSequence::new(times, marks, Window::new(0.0, config.horizon)?, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomGraphConfig {
    pub d: usize,
    pub edge_prob: f64,
    pub seed: u64,
    pub cross_alpha_magnitude: f64,
    pub self_alpha: f64,
    /// Probability that a cross edge has a positive sign.
    pub sign_prob: f64,
}

impl RandomGraphConfig {
    pub fn new(d: usize, edge_prob: f64, seed: u64) -> Self {
        Self {
            d,
            edge_prob,
            seed,
            cross_alpha_magnitude: 0.4,
            self_alpha: 0.3,
            sign_prob: 0.5,
        }
    }
}

/// Random model with every self-loop present and each cross edge present
/// independently with probability `edge_prob`.
pub fn sample_random_graph(config: &RandomGraphConfig) -> Result<(DirectedGraph, IntensityModelSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    sample_random_graph_with_rng(config, &mut rng)
}

pub fn sample_random_graph_with_rng<R: Rng + ?Sized>(
    config: &RandomGraphConfig,
    rng: &mut R,
) -> Result<(DirectedGraph, IntensityModelSpec)> {
    if config.d == 0 {
        return Err(Error::InvalidConfig("random graph needs d >= 1".into()));
    }
    for (name, p) in [("edge_prob", config.edge_prob), ("sign_prob", config.sign_prob)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("{name} = {p} is not a probability")));
        }
    }
    let d = config.d;
    let mut spec = IntensityModelSpec::new(vec![BENCHMARK_BASELINE; d], LinkFunction::PiecewiseLogLinear)?;
    for j in 0..d {
        for k in 0..d {
            let alpha = if j == k {
                config.self_alpha
            } else if rng.gen::<f64>() < config.edge_prob {
                let positive = rng.gen::<f64>() < config.sign_prob;
                if positive {
                    config.cross_alpha_magnitude
                } else {
                    -config.cross_alpha_magnitude
                }
            } else {
                continue;
            };
            spec.set_kernel(j, k, Some(ExponentialKernel::new(alpha, BENCHMARK_DECAY)?))?;
        }
    }
    Ok((spec.graph(), spec))
}

/// The six benchmark structures for level and power studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Structure {
    L1,
    L2,
    L3,
    P1,
    P2,
    P3,
}

impl Structure {
    pub const ALL: [Structure; 6] = [
        Structure::L1,
        Structure::L2,
        Structure::L3,
        Structure::P1,
        Structure::P2,
        Structure::P3,
    ];

    /// True when `j -> k | C` holds in the structure.
    pub fn null_holds(self) -> bool {
        matches!(self, Structure::L1 | Structure::L2 | Structure::L3)
    }

    pub fn build(self) -> BenchmarkStructure {
        use Structure::*;
        let (labels, edges): (&[&str], &[(&str, &str, f64)]) = match self {
            L1 => (&["j", "c", "k"], &[("c", "j", 0.4), ("c", "k", 0.4)]),
            L2 => (
                &["j", "c", "h", "k"],
                &[("j", "c", 0.9), ("c", "h", -0.6), ("h", "k", 0.4)],
            ),
            L3 => (
                &["j", "c", "h", "k"],
                &[("c", "j", 0.4), ("h", "c", 0.4), ("h", "k", 0.4), ("c", "k", -0.4)],
            ),
            P1 => (&["j", "k"], &[("j", "k", -0.6)]),
            P2 => (&["j", "h", "k"], &[("j", "h", 0.4), ("h", "k", -0.4)]),
            P3 => (
                &["j", "c", "h", "k"],
                &[("j", "c", 0.3), ("j", "h", 0.3), ("c", "k", 0.2), ("h", "k", -0.25)],
            ),
        };
        let index = |name: &str| labels.iter().position(|&l| l == name).expect("known label");
        let d = labels.len();
        let mut spec =
            IntensityModelSpec::new(vec![BENCHMARK_BASELINE; d], LinkFunction::PiecewiseLogLinear)
                .expect("valid baselines");
        let kernel = |alpha| ExponentialKernel::new(alpha, BENCHMARK_DECAY).expect("valid kernel");
        for v in 0..d {
            spec.set_kernel(v, v, Some(kernel(0.4))).expect("in range");
        }
        for &(from, to, alpha) in edges {
            spec.set_kernel(index(from), index(to), Some(kernel(alpha)))
                .expect("in range");
        }
        BenchmarkStructure {
            structure: self,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            latent: labels.iter().position(|&l| l == "h").into_iter().collect(),
            j: index("j"),
            k: index("k"),
            c: labels.iter().position(|&l| l == "c"),
            spec,
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Structure::ALL
            .into_iter()
            .find(|st| st.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownStructure(s.to_string()))
    }
}

/// A benchmark model together with its node roles.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkStructure {
    pub structure: Structure,
    pub spec: IntensityModelSpec,
    pub labels: Vec<String>,
    /// Marks that are never observed.
    pub latent: Vec<usize>,
    pub j: usize,
    pub k: usize,
    pub c: Option<usize>,
}

impl BenchmarkStructure {
    pub fn observed(&self) -> Vec<usize> {
        (0..self.spec.d()).filter(|m| !self.latent.contains(m)).collect()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Drops unobserved marks and re-indexes the rest densely in increasing
/// order. Returns the new sequence and `mapping[new] = old`.
pub fn restrict_to_observed(
    seq: &MarkedEventSequence,
    observed: &[usize],
) -> Result<(MarkedEventSequence, Vec<usize>)> {
    let mut mapping: Vec<usize> = observed.to_vec();
    mapping.sort_unstable();
    mapping.dedup();
    if mapping.is_empty() {
        return Err(Error::EmptyObservedSet);
    }
    if let Some(&m) = mapping.iter().find(|&&m| m >= seq.d()) {
        return Err(Error::MarkOutOfRange { mark: m, d: seq.d() });
    }
    let mut new_index = vec![None; seq.d()];
    for (new, &old) in mapping.iter().enumerate() {
        new_index[old] = Some(new);
    }
    let (times, marks): (Vec<f64>, Vec<usize>) = seq
        .iter()
        .filter_map(|(t, m)| new_index[m].map(|n| (t, n)))
        .unzip();
    let restricted = MarkedEventSequence::new(times, marks, seq.window(), mapping.len())?;
    Ok((restricted, mapping))
}
