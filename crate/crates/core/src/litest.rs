//! Single local-independence tests `j -/-> k | C`.

use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, SplineBasis};
use crate::design::{check_spacing, roughness_penalty, DesignRequest, ExpansionOrder};
use crate::error::{Error, Result};
use crate::estimation::{fit_mle, wald_grid_test, FitConfig, FitReport, FittedIntensityModel, WaldResult};
use crate::events::MarkedEventSequence;
use crate::features::{HistoryFeatures, QuadratureGrid};
use crate::link::LinkFunction;

pub const DEFAULT_DELTA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LITestConfig {
    pub order: ExpansionOrder,
    pub alpha: f64,
    pub basis: BasisSpec,
    /// Quadrature spacing.
    pub delta: f64,
    pub fit: FitConfig,
    pub link: LinkFunction,
    /// Condition on the target's own history as well.
    pub include_target_history: bool,
    /// Wald grid size; the number of basis functions when absent.
    pub wald_points: Option<usize>,
    /// Apply the roughness penalty to the test block too. Off by default:
    /// shrinking the tested kernel makes the Wald test conservative.
    pub penalize_test_block: bool,
}

impl Default for LITestConfig {
    fn default() -> Self {
        Self {
            order: ExpansionOrder::Second,
            alpha: 0.05,
            basis: BasisSpec::default(),
            delta: DEFAULT_DELTA,
            fit: FitConfig::default(),
            link: LinkFunction::PiecewiseLogLinear,
            include_target_history: true,
            wald_points: None,
            penalize_test_block: false,
        }
    }
}

impl LITestConfig {
    pub fn with_order(mut self, order: ExpansionOrder) -> Self {
        self.order = order;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if self.wald_points == Some(0) {
            return Err(Error::InvalidConfig("Wald grid needs at least one point".into()));
        }
        self.fit.validate()?;
        let basis = self.basis.build()?;
        check_spacing(&basis, self.delta)
    }
}

/// Why a test was decided without fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFlag {
    /// The tested mark `j` has no events; reported as `p = 1`.
    NoSourceEvents,
    /// The target mark `k` has no events; reported as `p = 1`.
    NoTargetEvents,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub j: usize,
    pub k: usize,
    /// Conditioning set as given, sorted.
    pub conditioning: Vec<usize>,
    pub order: ExpansionOrder,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LITestResult {
    pub hypothesis: Hypothesis,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub reject: bool,
    pub flag: Option<TestFlag>,
    pub wald: Option<WaldResult>,
    pub fit: Option<FitReport>,
    #[serde(skip)]
    pub model: Option<Box<FittedIntensityModel>>,
}

/// A sequence with its first-order history features precomputed, so that
/// many hypotheses on the same data share one sweep.
#[derive(Debug, Clone)]
pub struct PreparedSequence {
    basis: SplineBasis,
    delta: f64,
    history: HistoryFeatures,
    counts: Vec<usize>,
}

impl PreparedSequence {
    pub fn new(seq: &MarkedEventSequence, basis: BasisSpec, delta: f64) -> Result<Self> {
        let basis = basis.build()?;
        check_spacing(&basis, delta)?;
        let grid = QuadratureGrid::uniform(seq.window(), delta)?;
        Ok(Self {
            history: HistoryFeatures::new(seq, &basis, grid),
            basis,
            delta,
            counts: seq.counts(),
        })
    }

    pub fn for_config(seq: &MarkedEventSequence, config: &LITestConfig) -> Result<Self> {
        Self::new(seq, config.basis, config.delta)
    }

    pub fn d(&self) -> usize {
        self.counts.len()
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn test(&self, j: usize, k: usize, conditioning: &[usize], config: &LITestConfig) -> Result<LITestResult> {
        config.validate()?;
        if config.basis != self.basis.spec() || config.delta != self.delta {
            return Err(Error::InvalidConfig(
                "test configuration does not match the prepared basis or spacing".into(),
            ));
        }
        let d = self.d();
        for &m in conditioning.iter().chain([&j, &k]) {
            if m >= d {
                return Err(Error::MarkOutOfRange { mark: m, d });
            }
        }
        if j == k {
            return Err(Error::InvalidHypothesis(format!(
                "mark {j} cannot be tested against itself"
            )));
        }
        if conditioning.contains(&j) {
            return Err(Error::InvalidHypothesis(format!(
                "tested mark {j} is in the conditioning set"
            )));
        }
        let mut given: Vec<usize> = conditioning.to_vec();
        given.sort_unstable();
        given.dedup();
        let hypothesis = Hypothesis {
            j,
            k,
            conditioning: given.clone(),
            order: config.order,
        };

        let flag = if self.counts[j] == 0 {
            Some(TestFlag::NoSourceEvents)
        } else if self.counts[k] == 0 {
            Some(TestFlag::NoTargetEvents)
        } else {
            None
        };
        if flag.is_some() {
            return Ok(LITestResult {
                hypothesis,
                statistic: 0.0,
                df: 0,
                p_value: 1.0,
                reject: false,
                flag,
                wald: None,
                fit: None,
                model: None,
            });
        }

        let mut nuisance = given;
        if config.include_target_history && !nuisance.contains(&k) {
            nuisance.push(k);
            nuisance.sort_unstable();
        }
        let request = DesignRequest {
            target: k,
            conditioning: nuisance,
            order: config.order,
            test_mark: Some(j),
        };
        let design = self.history.design(&request)?;
        let mut omega = roughness_penalty(&design.layout, &self.basis).matrix;
        if !config.penalize_test_block {
            if let Some(r) = design.layout.test_block().map(|b| b.range()) {
                omega.rows_mut(r.start, r.len()).fill(0.0);
                omega.columns_mut(r.start, r.len()).fill(0.0);
            }
        }
        let model = fit_mle(&design, config.link, &omega, &config.fit)?;
        let block = format!("test:{j}");
        let m = config.wald_points.unwrap_or(self.basis.len());
        let wald = wald_grid_test(&model, &block, &self.basis, m)?;
        Ok(LITestResult {
            hypothesis,
            statistic: wald.statistic,
            df: wald.df,
            p_value: wald.p_value,
            reject: wald.p_value < config.alpha,
            flag: None,
            fit: Some(model.report()),
            wald: Some(wald),
            model: Some(Box::new(model)),
        })
    }
}

/// Tests `j -/-> k | C`: fits the intensity of `k` on the histories of `C`
/// (plus `k` itself by default) at the configured expansion order, adds a
/// first-order filter of `j`'s history, and Wald-tests that filter.
pub fn test_local_independence(
    seq: &MarkedEventSequence,
    j: usize,
    k: usize,
    conditioning: &[usize],
    config: &LITestConfig,
) -> Result<LITestResult> {
    config.validate()?;
    PreparedSequence::for_config(seq, config)?.test(j, k, conditioning, config)
}
