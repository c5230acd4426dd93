//! Clamped B-spline bases on a bounded lag support `[0, S)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hawkes::GAUSS_LEGENDRE_8;

pub const MAX_DEGREE: usize = 7;

/// Parameters of a [`SplineBasis`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub support: f64,
    pub num_basis: usize,
    pub degree: usize,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            support: 5.0,
            num_basis: 6,
            degree: 3,
        }
    }
}

impl BasisSpec {
    pub fn build(&self) -> Result<SplineBasis> {
        SplineBasis::new(self.support, self.num_basis, self.degree)
    }
}

/// B-spline basis with a clamped knot vector and uniform interior knots.
///
/// Every function vanishes for lags `u < 0` and `u >= S`, and the functions
/// sum to one on `[0, S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    support: f64,
    degree: usize,
    num_basis: usize,
    knots: Vec<f64>,
    spacing: f64,
}

impl SplineBasis {
    pub fn new(support: f64, num_basis: usize, degree: usize) -> Result<Self> {
        if !(support > 0.0 && support.is_finite()) {
            return Err(Error::InvalidBasisSpec(format!("support {support} must be > 0")));
        }
        if degree > MAX_DEGREE {
            return Err(Error::InvalidBasisSpec(format!(
                "degree {degree} exceeds the maximum of {MAX_DEGREE}"
            )));
        }
        if num_basis < degree + 1 {
            return Err(Error::InvalidBasisSpec(format!(
                "{num_basis} basis functions cannot carry degree {degree} (need >= {})",
                degree + 1
            )));
        }
        let spans = num_basis - degree;
        let spacing = support / spans as f64;
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..spans).map(|m| m as f64 * spacing));
        knots.extend(std::iter::repeat_n(support, degree + 1));
        Ok(Self {
            support,
            degree,
            num_basis,
            knots,
            spacing,
        })
    }

    pub fn spec(&self) -> BasisSpec {
        BasisSpec {
            support: self.support,
            num_basis: self.num_basis,
            degree: self.degree,
        }
    }

    pub fn support(&self) -> f64 {
        self.support
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.num_basis
    }

    pub fn is_empty(&self) -> bool {
        self.num_basis == 0
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Knot span `i` with `knots[i] <= u < knots[i + 1]`, for `u` in `[0, S)`.
    fn span(&self, u: f64) -> usize {
        let p = self.degree;
        let mut i = (p + (u / self.spacing) as usize).min(self.num_basis - 1);
        while i > p && u < self.knots[i] {
            i -= 1;
        }
        while i < self.num_basis - 1 && u >= self.knots[i + 1] {
            i += 1;
        }
        i
    }

    /// Nonzero basis values at `u`: returns the index of the first nonzero
    /// function and fills `vals[..=degree]`.
    #[inline]
    fn nonzero(&self, u: f64, vals: &mut [f64; MAX_DEGREE + 1]) -> Option<usize> {
        if !(u >= 0.0 && u < self.support) {
            return None;
        }
        let p = self.degree;
        let i = self.span(u);
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        vals[0] = 1.0;
        for j in 1..=p {
            left[j] = u - self.knots[i + 1 - j];
            right[j] = self.knots[i + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        Some(i - p)
    }

    /// Adds `b_i(u)` to `out[i]` for every basis function.
    #[inline]
    pub fn accumulate(&self, u: f64, out: &mut [f64]) {
        let mut vals = [0.0; MAX_DEGREE + 1];
        if let Some(first) = self.nonzero(u, &mut vals) {
            for (o, v) in out[first..=first + self.degree].iter_mut().zip(&vals) {
                *o += v;
            }
        }
    }

    pub fn eval(&self, u: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.num_basis];
        self.accumulate(u, &mut out);
        out
    }

    /// Derivatives of order `0..=n` of all basis functions at `u`, as
    /// `ders[order][i]`.
    pub fn derivatives(&self, u: f64, n: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.num_basis]; n + 1];
        if !(u >= 0.0 && u < self.support) {
            return out;
        }
        let p = self.degree;
        let i = self.span(u);
        let knots = &self.knots;
        // ndu holds basis functions (upper triangle) and knot differences
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = u - knots[i + 1 - j];
            right[j] = knots[i + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; p + 1]; n + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=n.min(p) {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for (k, row) in ders.iter_mut().enumerate().skip(1).take(n.min(p)) {
            for v in row.iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        for (k, row) in ders.iter().enumerate() {
            out[k][i - p..=i].copy_from_slice(row);
        }
        out
    }

    /// Greville abscissae: coefficients `c_i = f(xi_i)` reproduce any linear
    /// `f` exactly (degree >= 1).
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree.max(1);
        (0..self.num_basis)
            .map(|i| self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64)
            .collect()
    }

    /// `integral over [0, S) of b_i^(r) b_j^(r)`, by Gauss-Legendre per span.
    fn derivative_gram(&self, order: usize) -> DMatrix<f64> {
        let k = self.num_basis;
        let mut gram = DMatrix::zeros(k, k);
        if order > self.degree {
            return gram;
        }
        for span in self.degree..self.num_basis {
            let (a, b) = (self.knots[span], self.knots[span + 1]);
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            for (x, w) in GAUSS_LEGENDRE_8 {
                let u = a + half * (x + 1.0);
                let ders = self.derivatives(u, order);
                let row = &ders[order];
                for i in 0..k {
                    if row[i] == 0.0 {
                        continue;
                    }
                    for j in 0..k {
                        gram[(i, j)] += half * w * row[i] * row[j];
                    }
                }
            }
        }
        gram
    }

    /// Gram matrix of the basis functions.
    pub fn gram(&self) -> DMatrix<f64> {
        self.derivative_gram(0)
    }

    /// Integrated squared second derivative (curvature) penalty.
    pub fn roughness(&self) -> DMatrix<f64> {
        self.derivative_gram(2)
    }

    /// `M x K` evaluation matrix at the given points.
    pub fn evaluation_matrix(&self, points: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(points.len(), self.num_basis);
        for (r, &u) in points.iter().enumerate() {
            let vals = self.eval(u);
            for (c, v) in vals.into_iter().enumerate() {
                m[(r, c)] = v;
            }
        }
        m
    }
}
