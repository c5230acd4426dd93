//! Penalized maximum likelihood for spline intensity models, sandwich
//! covariance, and the grid-evaluated Wald test.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::design::{DesignLayout, DesignMatrix};
use crate::error::{Error, Result};
use crate::link::LinkFunction;
use crate::stats::chi2_upper_tail;

/// Quadrature intensities are floored here before dividing by them.
const INTENSITY_FLOOR: f64 = 1e-300;
/// Relative singular-value cutoff for pseudo-inverses.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Penalty weight `kappa_0`.
    pub kappa: f64,
    pub max_iterations: usize,
    /// Stop when `|grad| / (1 + |loglik|)` falls below this.
    pub gradient_tolerance: f64,
    pub max_step_halvings: usize,
    /// Initial ridge added to singular Hessians, scaled by their diagonal.
    pub ridge: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            max_step_halvings: 30,
            ridge: 1e-8,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidConfig(format!("kappa {} must be >= 0", self.kappa)));
        }
        if self.max_iterations == 0 || !(self.gradient_tolerance > 0.0) || !(self.ridge > 0.0) {
            return Err(Error::InvalidConfig(
                "iterations, gradient tolerance and ridge must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The penalized log-likelihood
/// `sum_events log mu(x'b) - sum_grid w mu(x'b) - kappa b' Omega b`,
/// with `mu` the inverse link.
pub struct PenalizedLikelihood<'a> {
    design: &'a DesignMatrix,
    link: LinkFunction,
    penalty: &'a DMatrix<f64>,
    kappa: f64,
}

pub struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

impl<'a> PenalizedLikelihood<'a> {
    pub fn new(design: &'a DesignMatrix, link: LinkFunction, penalty: &'a DMatrix<f64>, kappa: f64) -> Result<Self> {
        let p = design.ncols();
        if design.quadrature.ncols() != p || design.events.ncols() != p || design.weights.len() != design.quadrature.nrows()
        {
            return Err(Error::DimensionMismatch("design blocks disagree".into()));
        }
        if penalty.nrows() != p || penalty.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "penalty is {}x{}, design has {p} columns",
                penalty.nrows(),
                penalty.ncols()
            )));
        }
        Ok(Self {
            design,
            link,
            penalty,
            kappa,
        })
    }

    fn check(&self, beta: &DVector<f64>) -> Result<()> {
        if beta.len() != self.design.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "coefficient vector of length {} for {} columns",
                beta.len(),
                self.design.ncols()
            )));
        }
        Ok(())
    }

    fn penalty_value(&self, beta: &DVector<f64>) -> f64 {
        if self.kappa == 0.0 {
            0.0
        } else {
            self.kappa * beta.dot(&(self.penalty * beta))
        }
    }

    /// Value only; `-inf` when some event-row intensity is not positive.
    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        let eta_e = &self.design.events * beta;
        let mut ll = 0.0;
        for &y in eta_e.iter() {
            let mu = self.link.inverse(y);
            if !(mu > 0.0) {
                return f64::NEG_INFINITY;
            }
            ll += mu.ln();
        }
        let eta_q = &self.design.quadrature * beta;
        for (&y, &w) in eta_q.iter().zip(self.design.weights.iter()) {
            ll -= w * self.link.inverse(y);
        }
        ll - self.penalty_value(beta)
    }

    pub fn evaluate(&self, beta: &DVector<f64>, with_hessian: bool) -> Evaluation {
        let d = self.design;
        let eta_e = &d.events * beta;
        let eta_q = &d.quadrature * beta;
        let mut value = 0.0;
        let mut ge = DVector::zeros(eta_e.len());
        let mut he = vec![0.0; eta_e.len()];
        for (i, &y) in eta_e.iter().enumerate() {
            let (mu, d1, d2) = self.link.inverse_with_derivatives(y);
            if !(mu > 0.0) {
                value = f64::NEG_INFINITY;
                continue;
            }
            value += mu.ln();
            ge[i] = d1 / mu;
            he[i] = d2 / mu - (d1 / mu).powi(2);
        }
        let mut gq = DVector::zeros(eta_q.len());
        let mut hq = vec![0.0; eta_q.len()];
        for (i, (&y, &w)) in eta_q.iter().zip(d.weights.iter()).enumerate() {
            let (mu, d1, d2) = self.link.inverse_with_derivatives(y);
            value -= w * mu;
            gq[i] = w * d1;
            hq[i] = -w * d2;
        }
        value -= self.penalty_value(beta);
        let mut gradient = d.events.tr_mul(&ge) - d.quadrature.tr_mul(&gq);
        if self.kappa != 0.0 {
            gradient -= (self.penalty * beta) * (2.0 * self.kappa);
        }
        let hessian = with_hessian.then(|| {
            let mut h = weighted_gram(&d.events, &he);
            h += weighted_gram(&d.quadrature, &hq);
            if self.kappa != 0.0 {
                h -= self.penalty * (2.0 * self.kappa);
            }
            h
        });
        Evaluation {
            value,
            gradient,
            hessian,
        }
    }
}

/// `sum_r c_r x_r x_r'` over rows with nonzero weight.
pub(crate) fn weighted_gram(x: &DMatrix<f64>, c: &[f64]) -> DMatrix<f64> {
    let p = x.ncols();
    let active: Vec<usize> = (0..x.nrows()).filter(|&r| c[r] != 0.0).collect();
    if active.is_empty() {
        return DMatrix::zeros(p, p);
    }
    let sub = if active.len() == x.nrows() {
        x.clone()
    } else {
        x.select_rows(active.iter())
    };
    let mut scaled = sub.clone();
    for mut col in scaled.column_iter_mut() {
        for (v, &r) in col.iter_mut().zip(&active) {
            *v *= c[r];
        }
    }
    let out = scaled.transpose() * sub;
    (&out + out.transpose()) * 0.5
}

pub fn penalized_loglik(
    beta: &DVector<f64>,
    design: &DesignMatrix,
    link: LinkFunction,
    omega: &DMatrix<f64>,
    kappa: f64,
) -> Result<f64> {
    let ll = PenalizedLikelihood::new(design, link, omega, kappa)?;
    ll.check(beta)?;
    Ok(ll.value(beta))
}

pub fn penalized_gradient(
    beta: &DVector<f64>,
    design: &DesignMatrix,
    link: LinkFunction,
    omega: &DMatrix<f64>,
    kappa: f64,
) -> Result<DVector<f64>> {
    let ll = PenalizedLikelihood::new(design, link, omega, kappa)?;
    ll.check(beta)?;
    Ok(ll.evaluate(beta, false).gradient)
}

pub fn penalized_hessian(
    beta: &DVector<f64>,
    design: &DesignMatrix,
    link: LinkFunction,
    omega: &DMatrix<f64>,
    kappa: f64,
) -> Result<DMatrix<f64>> {
    let ll = PenalizedLikelihood::new(design, link, omega, kappa)?;
    ll.check(beta)?;
    Ok(ll.evaluate(beta, true).hessian.expect("requested"))
}

/// Largest relative deviation of the analytic gradient and Hessian from
/// central finite differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub gradient_error: f64,
    pub hessian_error: f64,
}

impl DerivativeCheck {
    pub fn max_error(&self) -> f64 {
        self.gradient_error.max(self.hessian_error)
    }
}

/// `|a - fd|_inf / max(|fd|_inf, 1)` for the gradient (differencing the
/// value) and the Hessian (differencing the gradient).
pub fn derivative_check(
    beta: &DVector<f64>,
    design: &DesignMatrix,
    link: LinkFunction,
    omega: &DMatrix<f64>,
    kappa: f64,
) -> Result<DerivativeCheck> {
    let objective = PenalizedLikelihood::new(design, link, omega, kappa)?;
    objective.check(beta)?;
    let at = objective.evaluate(beta, true);
    if !at.value.is_finite() {
        return Err(Error::NonFiniteValue("log-likelihood at the check point".into()));
    }
    let hessian = at.hessian.expect("requested");
    let p = beta.len();
    let mut fd_grad = DVector::zeros(p);
    let mut fd_hess = DMatrix::zeros(p, p);
    // small steps so that few rows straddle the kink of the piecewise link
    for i in 0..p {
        let h = 1e-6 * beta[i].abs().max(1.0);
        let mut up = beta.clone();
        up[i] += h;
        let mut down = beta.clone();
        down[i] -= h;
        fd_grad[i] = (objective.value(&up) - objective.value(&down)) / (2.0 * h);
        let gu = objective.evaluate(&up, false).gradient;
        let gd = objective.evaluate(&down, false).gradient;
        fd_hess.set_column(i, &((gu - gd) / (2.0 * h)));
    }
    let rel = |a: f64, scale: f64| a / scale.max(1.0);
    Ok(DerivativeCheck {
        gradient_error: rel((&at.gradient - &fd_grad).amax(), fd_grad.amax()),
        hessian_error: rel((&hessian - &fd_hess).amax(), fd_hess.amax()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub iterations: usize,
    pub relative_gradient: f64,
    /// Largest ridge added to the negative Hessian.
    pub max_jitter: f64,
    /// Penalized log-likelihood after each accepted step, starting value first.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FittedIntensityModel {
    pub coefficients: DVector<f64>,
    pub layout: DesignLayout,
    pub link: LinkFunction,
    pub kappa: f64,
    pub k_hat: DMatrix<f64>,
    pub j_hat: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    /// Plug-in `(I + 2 kappa J^-1 Omega) beta_hat`, reported for diagnostics.
    pub bias_mean: DVector<f64>,
    pub penalized_loglik: f64,
    pub convergence: ConvergenceReport,
}

impl FittedIntensityModel {
    pub fn block_coefficients(&self, name: &str) -> Result<Vec<f64>> {
        let b = self.layout.block(name)?;
        Ok(self.coefficients.rows(b.start, b.len()).iter().copied().collect())
    }

    pub fn report(&self) -> FitReport {
        let mut blocks = Vec::new();
        for b in &self.layout.blocks {
            blocks.push(BlockReport {
                name: b.name(),
                coefficients: b.range().map(|i| self.coefficients[i]).collect(),
                sigma_diagonal: b.range().map(|i| self.covariance[(i, i)]).collect(),
            });
        }
        FitReport {
            link: self.link,
            kappa: self.kappa,
            penalized_loglik: self.penalized_loglik,
            converged: self.convergence.converged,
            iterations: self.convergence.iterations,
            relative_gradient: self.convergence.relative_gradient,
            max_jitter: self.convergence.max_jitter,
            blocks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub name: String,
    pub coefficients: Vec<f64>,
    pub sigma_diagonal: Vec<f64>,
}

/// Serializable summary of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub link: LinkFunction,
    pub kappa: f64,
    pub penalized_loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub relative_gradient: f64,
    pub max_jitter: f64,
    pub blocks: Vec<BlockReport>,
}

fn solve_spd_with_jitter(a: &DMatrix<f64>, rhs: &DVector<f64>, ridge: f64) -> Result<(DVector<f64>, f64)> {
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut jitter = 0.0;
    for attempt in 0..16 {
        let mut m = a.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if let Some(chol) = m.cholesky() {
            return Ok((chol.solve(rhs), jitter));
        }
        jitter = ridge * scale * 10f64.powi(attempt);
    }
    Err(Error::SingularInformation)
}

fn invert_with_jitter(a: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut jitter = 0.0;
    for attempt in 0..16 {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        let lu = m.full_piv_lu();
        if lu.is_invertible() {
            if let Some(inv) = lu.try_inverse() {
                if inv.iter().all(|v| v.is_finite()) {
                    return Ok(inv);
                }
            }
        }
        jitter = ridge * scale * 10f64.powi(attempt);
    }
    Err(Error::SingularInformation)
}

fn starting_point(design: &DesignMatrix, link: LinkFunction) -> DVector<f64> {
    let horizon: f64 = design.weights.sum();
    let rate = (design.events.nrows() as f64).max(0.5) / horizon;
    let mut beta = DVector::zeros(design.ncols());
    beta[0] = link.eval(rate).unwrap_or(rate);
    beta
}

/// Newton ascent with step halving, then the sandwich covariance
/// `J^-1 K J^-1` with `K = sum_grid w x x' mu'(x'b)^2 / mu(x'b)` and
/// `J = K - 2 kappa Omega`.
pub fn fit_mle(
    design: &DesignMatrix,
    link: LinkFunction,
    omega: &DMatrix<f64>,
    config: &FitConfig,
) -> Result<FittedIntensityModel> {
    config.validate()?;
    let objective = PenalizedLikelihood::new(design, link, omega, config.kappa)?;
    if design.events.nrows() == 0 {
        warn!("no target events; fitting the compensator only");
    }
    let mut beta = starting_point(design, link);
    let mut eval = objective.evaluate(&beta, true);
    if !eval.value.is_finite() {
        return Err(Error::InvalidConfig("starting point has non-finite likelihood".into()));
    }
    let mut trace = vec![eval.value];
    let mut converged = false;
    let mut max_jitter = 0.0f64;
    let mut iterations = 0;
    let mut rel_grad = f64::INFINITY;

    while iterations < config.max_iterations {
        rel_grad = eval.gradient.norm() / (1.0 + eval.value.abs());
        if rel_grad < config.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let neg_hessian = -eval.hessian.take().expect("hessian requested");
        let (step, jitter) = solve_spd_with_jitter(&neg_hessian, &eval.gradient, config.ridge)?;
        max_jitter = max_jitter.max(jitter);
        let decrement = eval.gradient.dot(&step);

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_step_halvings {
            let candidate = &beta + &step * scale;
            let value = objective.value(&candidate);
            if value.is_finite() && value >= eval.value {
                accepted = Some((candidate, value));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((candidate, value)) => {
                let gain = value - eval.value;
                beta = candidate;
                eval = objective.evaluate(&beta, true);
                trace.push(eval.value);
                // no measurable progress left at machine precision
                if gain <= 1e-13 * (1.0 + value.abs()) && decrement.abs() <= 1e-10 * (1.0 + value.abs()) {
                    rel_grad = eval.gradient.norm() / (1.0 + eval.value.abs());
                    converged = true;
                    break;
                }
            }
            None => {
                converged = decrement.abs() <= 1e-9 * (1.0 + eval.value.abs());
                break;
            }
        }
    }
    if !converged {
        warn!("Newton ascent stopped after {iterations} iterations (relative gradient {rel_grad:.3e})");
    }

    let eta_q = &design.quadrature * &beta;
    let kw: Vec<f64> = eta_q
        .iter()
        .zip(design.weights.iter())
        .map(|(&y, &w)| {
            let (mu, d1, _) = link.inverse_with_derivatives(y);
            w * d1 * d1 / mu.max(INTENSITY_FLOOR)
        })
        .collect();
    let k_hat = weighted_gram(&design.quadrature, &kw);
    let j_hat = &k_hat - omega * (2.0 * config.kappa);
    let j_inv = invert_with_jitter(&j_hat, config.ridge)?;
    let cov = &j_inv * &k_hat * &j_inv;
    let covariance = (&cov + cov.transpose()) * 0.5;
    let identity = DMatrix::<f64>::identity(beta.len(), beta.len());
    let bias_mean = (identity + &j_inv * omega * (2.0 * config.kappa)) * &beta;

    Ok(FittedIntensityModel {
        coefficients: beta,
        layout: design.layout.clone(),
        link,
        kappa: config.kappa,
        k_hat,
        j_hat,
        covariance,
        bias_mean,
        penalized_loglik: eval.value,
        convergence: ConvergenceReport {
            converged,
            iterations,
            relative_gradient: rel_grad,
            max_jitter,
            trace,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub statistic: f64,
    /// Numerical rank of the evaluated covariance.
    pub df: usize,
    pub p_value: f64,
    pub grid: Vec<f64>,
    /// Fitted kernel evaluated on the grid.
    pub kernel_values: Vec<f64>,
}

/// Midpoint grid `S (m - 1/2) / M`, `m = 1..M`.
pub fn wald_grid(support: f64, m: usize) -> Vec<f64> {
    (1..=m).map(|i| support * (i as f64 - 0.5) / m as f64).collect()
}

/// Tests that the kernel of a univariate block vanishes on an `M`-point
/// grid: `T = v' (B Sigma B')^+ v` with `v = B beta`, referred to
/// chi-square with the numerical rank as degrees of freedom.
pub fn wald_grid_test(fit: &FittedIntensityModel, block: &str, basis: &SplineBasis, m: usize) -> Result<WaldResult> {
    if m == 0 {
        return Err(Error::InvalidConfig("Wald grid needs M >= 1".into()));
    }
    let b = fit.layout.block(block)?;
    if b.len() != basis.len() {
        return Err(Error::DimensionMismatch(format!(
            "block `{block}` has {} coefficients, basis has {}",
            b.len(),
            basis.len()
        )));
    }
    let grid = wald_grid(basis.support(), m);
    let eval = basis.evaluation_matrix(&grid);
    let coef = fit.coefficients.rows(b.start, b.len()).into_owned();
    let sigma = fit.covariance.view((b.start, b.start), (b.len(), b.len())).into_owned();
    if sigma.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateCovariance(block.to_string()));
    }
    let values = &eval * &coef;
    let kernel_values: Vec<f64> = values.iter().copied().collect();
    if coef.iter().all(|&v| v == 0.0) {
        return Ok(WaldResult {
            statistic: 0.0,
            df: m,
            p_value: 1.0,
            grid,
            kernel_values,
        });
    }
    let cov = &eval * sigma * eval.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;
    let eig = cov.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let cutoff = RANK_TOLERANCE * max_ev;
    let mut statistic = 0.0;
    let mut df = 0;
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cutoff {
            let proj = eig.eigenvectors.column(i).dot(&values);
            statistic += proj * proj / lam;
            df += 1;
        }
    }
    if df == 0 {
        return Err(Error::DegenerateCovariance(block.to_string()));
    }
    Ok(WaldResult {
        statistic,
        df,
        p_value: chi2_upper_tail(statistic, df as f64),
        grid,
        kernel_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_design, roughness_penalty, DesignRequest, ExpansionOrder};
    use crate::events::{MarkedEventSequence, Window};
    use crate::hawkes::{ExponentialKernel, IntensityModelSpec};
    use crate::simulate::{simulate_hawkes, SimulationConfig};

    fn poisson_design(rate: f64, horizon: f64, seed: u64, link: LinkFunction) -> DesignMatrix {
        let spec = IntensityModelSpec::new(vec![rate], LinkFunction::Identity).unwrap();
        let cfg = SimulationConfig {
            horizon,
            burn_in: 0.0,
            seed,
            ..Default::default()
        };
        let seq = simulate_hawkes(&spec, &cfg).unwrap();
        let _ = link;
        let basis = SplineBasis::new(5.0, 6, 3).unwrap();
        let req = DesignRequest {
            target: 0,
            conditioning: vec![],
            order: ExpansionOrder::First,
            test_mark: None,
        };
        build_design(&seq, &req, &basis, 0.5).unwrap()
    }

    #[test]
    fn baseline_only_compensator_closed_form() {
        let design = poisson_design(0.25, 100.0, 1, LinkFunction::PiecewiseLogLinear);
        let omega = DMatrix::zeros(1, 1);
        let beta = DVector::from_element(1, 0.0);
        let ll = penalized_loglik(&beta, &design, LinkFunction::PiecewiseLogLinear, &omega, 0.0).unwrap();
        // each event contributes log(e^-1) = -1, the compensator T e^-1
        let n = design.events.nrows() as f64;
        assert!((ll - (-n - 100.0 * (-1.0f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn zero_kappa_ignores_penalty() {
        let design = poisson_design(0.25, 100.0, 2, LinkFunction::Identity);
        let beta = DVector::from_element(1, 0.3);
        let a = penalized_loglik(&beta, &design, LinkFunction::Identity, &DMatrix::from_element(1, 1, 123.0), 0.0)
            .unwrap();
        let b = penalized_loglik(&beta, &design, LinkFunction::Identity, &DMatrix::zeros(1, 1), 0.0).unwrap();
        assert_eq!(a, b);
        assert!(penalized_loglik(&DVector::zeros(2), &design, LinkFunction::Identity, &DMatrix::zeros(1, 1), 0.0)
            .is_err());
    }

    #[test]
    fn non_positive_event_intensity_is_neg_infinity() {
        let design = poisson_design(0.25, 100.0, 3, LinkFunction::Identity);
        let beta = DVector::from_element(1, -0.1);
        let ll = penalized_loglik(&beta, &design, LinkFunction::Identity, &DMatrix::zeros(1, 1), 0.0).unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn poisson_mle_is_count_over_time() {
        let design = poisson_design(0.25, 400.0, 4, LinkFunction::Identity);
        let omega = DMatrix::zeros(1, 1);
        let cfg = FitConfig {
            kappa: 0.0,
            ..Default::default()
        };
        let fit = fit_mle(&design, LinkFunction::Identity, &omega, &cfg).unwrap();
        let n = design.events.nrows() as f64;
        assert!((fit.coefficients[0] - n / 400.0).abs() < 1e-8);
        assert!(fit.convergence.converged);
        // kappa = 0: the sandwich collapses to K^-1
        let k_inv = fit.k_hat.clone().try_inverse().unwrap();
        assert!((fit.covariance[(0, 0)] - k_inv[(0, 0)]).abs() < 1e-12 * k_inv[(0, 0)]);
        assert_eq!(fit.j_hat, fit.k_hat);
    }

    fn hawkes_fit_setup() -> (DesignMatrix, DMatrix<f64>, SplineBasis) {
        let spec = IntensityModelSpec::new(vec![0.25, 0.25], LinkFunction::PiecewiseLogLinear)
            .unwrap()
            .with_kernel(0, 0, ExponentialKernel::new(0.4, 0.8).unwrap())
            .unwrap()
            .with_kernel(1, 1, ExponentialKernel::new(0.4, 0.8).unwrap())
            .unwrap()
            .with_kernel(0, 1, ExponentialKernel::new(0.4, 0.8).unwrap())
            .unwrap();
        let cfg = SimulationConfig {
            horizon: 800.0,
            seed: 9,
            ..Default::default()
        };
        let seq = simulate_hawkes(&spec, &cfg).unwrap();
        let basis = SplineBasis::new(5.0, 5, 3).unwrap();
        let req = DesignRequest {
            target: 1,
            conditioning: vec![1],
            order: ExpansionOrder::Second,
            test_mark: Some(0),
        };
        let design = build_design(&seq, &req, &basis, 0.2).unwrap();
        let omega = roughness_penalty(&design.layout, &basis).matrix;
        (design, omega, basis)
    }

    #[test]
    fn newton_ascent_is_monotone_and_sandwich_is_consistent() {
        let (design, omega, basis) = hawkes_fit_setup();
        let fit = fit_mle(&design, LinkFunction::PiecewiseLogLinear, &omega, &FitConfig::default()).unwrap();
        assert!(fit.convergence.converged, "{:?}", fit.convergence);
        assert!(fit.convergence.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!((&fit.covariance - fit.covariance.transpose()).amax() < 1e-10);
        assert!((&fit.k_hat - fit.k_hat.transpose()).amax() < 1e-10);
        let recomposed = &fit.k_hat - &omega * 2.0;
        assert_eq!(fit.j_hat, recomposed);
        let eig = fit.covariance.clone().symmetric_eigenvalues();
        let max = eig.amax();
        assert!(eig.iter().all(|&e| e >= -1e-8 * max));
        let wald = wald_grid_test(&fit, "test:0", &basis, 5).unwrap();
        assert!(wald.p_value < 0.01, "true edge should be detected: {wald:?}");
        assert!(matches!(wald_grid_test(&fit, "test:7", &basis, 5), Err(Error::MissingBlock(_))));
    }

    #[test]
    fn wald_zero_block_and_scalar_reduction() {
        let (design, omega, basis) = hawkes_fit_setup();
        let mut fit = fit_mle(&design, LinkFunction::PiecewiseLogLinear, &omega, &FitConfig::default()).unwrap();
        let block = fit.layout.block("test:0").unwrap().clone();

        // M = 1: T = (B b)^2 / (B Sigma B')
        let w1 = wald_grid_test(&fit, "test:0", &basis, 1).unwrap();
        let row = basis.evaluation_matrix(&[basis.support() / 2.0]);
        let coef = fit.coefficients.rows(block.start, block.len()).into_owned();
        let sigma = fit.covariance.view((block.start, block.start), (block.len(), block.len())).into_owned();
        let v = (&row * &coef)[0];
        let var = (&row * sigma * row.transpose())[(0, 0)];
        assert!((w1.statistic - v * v / var).abs() < 1e-9 * w1.statistic.max(1.0));
        assert_eq!(w1.df, 1);
        assert!((w1.p_value - chi2_upper_tail(v * v / var, 1.0)).abs() < 1e-14);

        for i in block.range() {
            fit.coefficients[i] = 0.0;
        }
        let w0 = wald_grid_test(&fit, "test:0", &basis, 6).unwrap();
        assert_eq!((w0.statistic, w0.p_value), (0.0, 1.0));

        for i in block.range() {
            for j in 0..fit.covariance.ncols() {
                fit.covariance[(i, j)] = 0.0;
                fit.covariance[(j, i)] = 0.0;
            }
        }
        assert!(matches!(
            wald_grid_test(&fit, "test:0", &basis, 6),
            Err(Error::DegenerateCovariance(_))
        ));
    }

    #[test]
    fn wald_invariant_to_block_reparameterization() {
        let (design, omega, basis) = hawkes_fit_setup();
        let fit = fit_mle(&design, LinkFunction::PiecewiseLogLinear, &omega, &FitConfig::default()).unwrap();
        let block = fit.layout.block("test:0").unwrap().clone();
        let k = block.len();
        // coefficients b = A c for an invertible A: B b = (B A) c and
        // Sigma_b = A Sigma_c A', so the grid quadratic form is unchanged
        let a = DMatrix::from_fn(k, k, |i, j| if i == j { 2.0 } else { 0.3 / (1.0 + (i + j) as f64) });
        let a_inv = a.clone().try_inverse().unwrap();
        let grid = wald_grid(basis.support(), k);
        let bmat = basis.evaluation_matrix(&grid);
        let coef = fit.coefficients.rows(block.start, k).into_owned();
        let sigma = fit.covariance.view((block.start, block.start), (k, k)).into_owned();
        let c = &a_inv * &coef;
        let sigma_c = &a_inv * &sigma * a_inv.transpose();
        let b2 = &bmat * &a;
        let v = &b2 * &c;
        let cov = &b2 * sigma_c * b2.transpose();
        let t2 = v.dot(&(cov.try_inverse().unwrap() * &v));
        let w = wald_grid_test(&fit, "test:0", &basis, k).unwrap();
        assert!((w.statistic - t2).abs() < 1e-6 * t2.max(1.0), "{} vs {}", w.statistic, t2);
    }

    #[test]
    fn compensator_only_fit_warns_but_runs() {
        let w = Window::new(0.0, 50.0).unwrap();
        let seq = MarkedEventSequence::new(vec![1.0, 2.0], vec![1, 1], w, 2).unwrap();
        let basis = SplineBasis::new(5.0, 6, 3).unwrap();
        let req = DesignRequest {
            target: 0,
            conditioning: vec![1],
            order: ExpansionOrder::First,
            test_mark: None,
        };
        let design = build_design(&seq, &req, &basis, 0.5).unwrap();
        assert_eq!(design.events.nrows(), 0);
        let omega = roughness_penalty(&design.layout, &basis).matrix;
        let cfg = FitConfig {
            max_iterations: 5,
            ..Default::default()
        };
        let fit = fit_mle(&design, LinkFunction::PiecewiseLogLinear, &omega, &cfg).unwrap();
        assert!(fit.convergence.trace.windows(2).all(|w| w[1] >= w[0]));
    }
}
