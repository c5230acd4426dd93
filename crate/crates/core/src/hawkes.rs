//! Ground-truth (nonlinear) Hawkes models with exponential kernels.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::MarkedEventSequence;
use crate::graph::DirectedGraph;
use crate::link::LinkFunction;

/// `g(s) = alpha * beta * exp(-beta s)` for `s >= 0`; integrates to `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialKernel {
    pub alpha: f64,
    pub beta: f64,
}

impl ExponentialKernel {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) || !alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "kernel needs finite alpha and beta > 0, got alpha = {alpha}, beta = {beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        if s < 0.0 {
            0.0
        } else {
            self.alpha * self.beta * (-self.beta * s).exp()
        }
    }

    pub fn integral(&self) -> f64 {
        self.alpha
    }
}

/// Multivariate Hawkes model: `eta(lambda^k_t) = b_k + sum_j sum_{tau < t} g^{jk}(t - tau)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityModelSpec {
    d: usize,
    baselines: Vec<f64>,
    /// Row-major `d x d`, entry `j * d + k` is the kernel of `j -> k`.
    kernels: Vec<Option<ExponentialKernel>>,
    link: LinkFunction,
}

impl IntensityModelSpec {
    pub fn new(baselines: Vec<f64>, link: LinkFunction) -> Result<Self> {
        let d = baselines.len();
        if d == 0 {
            return Err(Error::InvalidConfig("model needs at least one mark".into()));
        }
        if let Some(b) = baselines.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(Error::InvalidConfig(format!("baseline {b} is not >= 0")));
        }
        Ok(Self {
            d,
            baselines,
            kernels: vec![None; d * d],
            link,
        })
    }

    pub fn with_kernel(mut self, j: usize, k: usize, kernel: ExponentialKernel) -> Result<Self> {
        self.set_kernel(j, k, Some(kernel))?;
        Ok(self)
    }

    pub fn set_kernel(&mut self, j: usize, k: usize, kernel: Option<ExponentialKernel>) -> Result<()> {
        if j >= self.d || k >= self.d {
            return Err(Error::MarkOutOfRange {
                mark: j.max(k),
                d: self.d,
            });
        }
        self.kernels[j * self.d + k] = kernel;
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn baselines(&self) -> &[f64] {
        &self.baselines
    }

    pub fn set_baseline(&mut self, k: usize, value: f64) {
        self.baselines[k] = value;
    }

    pub fn link(&self) -> LinkFunction {
        self.link
    }

    pub fn kernel(&self, j: usize, k: usize) -> Option<&ExponentialKernel> {
        self.kernels[j * self.d + k].as_ref()
    }

    /// Graph with an edge exactly where a kernel is present.
    pub fn graph(&self) -> DirectedGraph {
        let mut g = DirectedGraph::empty(self.d);
        for j in 0..self.d {
            for k in 0..self.d {
                if self.kernel(j, k).is_some() {
                    g.add_edge(j, k);
                }
            }
        }
        g
    }

    /// `G[j, k] = integral of g^{jk}`, which is `alpha` exactly.
    pub fn integrated_kernel_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.d, self.d, |j, k| {
            self.kernel(j, k).map_or(0.0, ExponentialKernel::integral)
        })
    }

    pub fn min_decay(&self) -> Option<f64> {
        self.kernels
            .iter()
            .flatten()
            .map(|g| g.beta)
            .min_by(f64::total_cmp)
    }

    pub fn has_negative_alpha(&self) -> bool {
        self.kernels.iter().flatten().any(|g| g.alpha < 0.0)
    }

    /// Linear predictor `b_k + sum_{tau < t} g(t - tau)` using the strict past.
    pub fn linear_predictor(&self, seq: &MarkedEventSequence, k: usize, t: f64) -> f64 {
        let mut x = self.baselines[k];
        for (tau, j) in seq.iter() {
            if tau >= t {
                break;
            }
            if let Some(g) = self.kernel(j, k) {
                x += g.eval(t - tau);
            }
        }
        x
    }

    /// Conditional intensity of mark `k` at `t`, from events strictly before `t`.
    /// The identity link is clamped at zero.
    pub fn true_intensity(&self, seq: &MarkedEventSequence, k: usize, t: f64) -> f64 {
        self.link.inverse(self.linear_predictor(seq, k, t)).max(0.0)
    }

    /// Compensator increments of mark `k` between its successive events,
    /// starting from the window start: `Lambda(tau_1) - Lambda(t_0), ...`.
    ///
    /// Pre-window history is taken to be empty.
    pub fn compensator_increments(&self, seq: &MarkedEventSequence, k: usize) -> Vec<f64> {
        let d = self.d;
        // excitation[j] = sum over j-events of g^{jk}(now - tau)
        let mut excitation = vec![0.0; d];
        let mut now = seq.window().start;
        let mut acc = 0.0;
        let mut out = Vec::new();
        for (tau, m) in seq.iter() {
            acc += self.segment_integral(k, &excitation, tau - now);
            for (j, e) in excitation.iter_mut().enumerate() {
                if let Some(g) = self.kernel(j, k) {
                    *e *= (-g.beta * (tau - now)).exp();
                }
            }
            now = tau;
            if m == k {
                out.push(acc);
                acc = 0.0;
            }
            if let Some(g) = self.kernel(m, k) {
                excitation[m] += g.alpha * g.beta;
            }
        }
        out
    }

    /// Integral over `[0, len)` of the intensity whose excitation terms start
    /// at `excitation` and decay without new events.
    fn segment_integral(&self, k: usize, excitation: &[f64], len: f64) -> f64 {
        if len <= 0.0 {
            return 0.0;
        }
        let predictor = |s: f64| {
            let mut x = self.baselines[k];
            for (j, &e) in excitation.iter().enumerate() {
                if let Some(g) = self.kernel(j, k) {
                    x += e * (-g.beta * s).exp();
                }
            }
            x
        };
        let nonneg = excitation.iter().all(|&e| e >= 0.0);
        if self.link == LinkFunction::Identity && nonneg {
            let mut total = self.baselines[k] * len;
            for (j, &e) in excitation.iter().enumerate() {
                if let Some(g) = self.kernel(j, k) {
                    total += e / g.beta * (1.0 - (-g.beta * len).exp());
                }
            }
            return total;
        }
        // Piecewise Gauss-Legendre. Panels where the predictor crosses the
        // link knot (or zero, for the identity clamp) are split there.
        let knot = match self.link {
            LinkFunction::Identity => 0.0,
            _ => 1.0,
        };
        let gl = |a: f64, b: f64| {
            let h = b - a;
            GAUSS_LEGENDRE_8
                .iter()
                .map(|&(x, w)| 0.5 * h * w * self.link.inverse(predictor(a + 0.5 * h * (x + 1.0))).max(0.0))
                .sum::<f64>()
        };
        let panels = (len / 0.25).ceil().max(1.0) as usize;
        let h = len / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let a = p as f64 * h;
            let b = if p + 1 == panels { len } else { a + h };
            let (fa, fb) = (predictor(a) - knot, predictor(b) - knot);
            if fa * fb < 0.0 {
                let (mut lo, mut hi) = (a, b);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if (predictor(mid) - knot) * fa > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let root = 0.5 * (lo + hi);
                total += gl(a, root) + gl(root, b);
            } else {
                total += gl(a, b);
            }
        }
        total
    }
}

pub(crate) const GAUSS_LEGENDRE_8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

/// Largest eigenvalue modulus, via the real Schur form (QR iteration).
pub fn spectral_radius(g: &DMatrix<f64>) -> Result<f64> {
    if !g.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "spectral radius of a {}x{} matrix",
            g.nrows(),
            g.ncols()
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue("matrix entry".into()));
    }
    if g.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let max_iter = 10_000;
    let schur = nalgebra::Schur::try_new(g.clone(), f64::EPSILON, max_iter).ok_or(
        Error::NoConvergence {
            what: "Schur decomposition",
            iterations: max_iter,
        },
    )?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}
