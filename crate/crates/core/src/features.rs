//! Iterated integrals of basis functions against event histories.
//!
//! First-order feature `i` of mark `j` at time `t` is
//! `F_i^j(t) = sum over tau in N^j, tau < t, t - tau < S of b_i(t - tau)`.
//! Second-order features of tensor-product kernels factorize into products
//! `F_{i1}^{j1}(t) F_{i2}^{j2}(t)`, so they are never computed from pair lists.

use crate::basis::SplineBasis;
use crate::error::{Error, Result};
use crate::events::{MarkedEventSequence, Window};

pub fn first_order_features(seq: &MarkedEventSequence, mark: usize, basis: &SplineBasis, t: f64) -> Vec<f64> {
    let mut out = vec![0.0; basis.len()];
    for (tau, m) in seq.iter() {
        if tau >= t {
            break;
        }
        if m == mark && t - tau < basis.support() {
            basis.accumulate(t - tau, &mut out);
        }
    }
    out
}

/// Number of tensor coefficients for a mark pair: `K(K+1)/2` for a
/// symmetrized same-mark pair, `K^2` otherwise.
pub fn second_order_width(num_basis: usize, same_mark: bool) -> usize {
    if same_mark {
        num_basis * (num_basis + 1) / 2
    } else {
        num_basis * num_basis
    }
}

/// Index pairs `(i1, i2)` in column order for a second-order block.
pub fn second_order_pairs(num_basis: usize, same_mark: bool) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(second_order_width(num_basis, same_mark));
    for i1 in 0..num_basis {
        let start = if same_mark { i1 } else { 0 };
        for i2 in start..num_basis {
            pairs.push((i1, i2));
        }
    }
    pairs
}

/// Second-order features for marks `(j1, j2)`, `j1 <= j2`.
///
/// For `j1 == j2` only pairs `i1 <= i2` are emitted and off-diagonal entries
/// carry the factor 2 from symmetrization. The product includes the terms
/// where both integration variables sit on the same event.
pub fn second_order_features(
    seq: &MarkedEventSequence,
    marks: (usize, usize),
    basis: &SplineBasis,
    t: f64,
) -> Result<Vec<f64>> {
    let (j1, j2) = marks;
    if j1 > j2 {
        return Err(Error::InvalidConfig(format!(
            "second-order marks must be ordered, got ({j1}, {j2})"
        )));
    }
    let f1 = first_order_features(seq, j1, basis, t);
    let f2 = if j1 == j2 {
        f1.clone()
    } else {
        first_order_features(seq, j2, basis, t)
    };
    Ok(second_order_pairs(basis.len(), j1 == j2)
        .into_iter()
        .map(|(a, b)| {
            let scale = if j1 == j2 && a != b { 2.0 } else { 1.0 };
            scale * f1[a] * f2[b]
        })
        .collect())
}

/// Left-point quadrature grid on the observation window.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    /// Points `start + q * delta`; the last weight is trimmed so the weights
    /// sum to the window length.
    pub fn uniform(window: Window, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidConfig(format!("quadrature spacing {delta} must be > 0")));
        }
        let n = ((window.length() / delta) - 1e-9).ceil().max(1.0) as usize;
        let points: Vec<f64> = (0..n).map(|q| window.start + q as f64 * delta).collect();
        let weights = points
            .iter()
            .map(|&t| delta.min(window.end - t))
            .collect();
        Ok(Self { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// First-order features of every mark, at every quadrature point and at
/// every event time (left limits), computed in one sorted sweep per mark.
#[derive(Debug, Clone)]
pub struct HistoryFeatures {
    d: usize,
    num_basis: usize,
    /// Row-major: row `q` holds `d * K` values, mark-major.
    grid_rows: Vec<f64>,
    /// Row per event of the sequence, same layout.
    event_rows: Vec<f64>,
    grid: QuadratureGrid,
    event_marks: Vec<usize>,
}

impl HistoryFeatures {
    pub fn new(seq: &MarkedEventSequence, basis: &SplineBasis, grid: QuadratureGrid) -> Self {
        let d = seq.d();
        let k = basis.len();
        let stride = d * k;
        let mut grid_rows = vec![0.0; grid.len() * stride];
        let mut event_rows = vec![0.0; seq.len() * stride];
        for mark in 0..d {
            let times = seq.times_of(mark);
            sweep(&times, &grid.points, basis, |row, u| {
                basis.accumulate(u, &mut grid_rows[row * stride + mark * k..row * stride + (mark + 1) * k]);
            });
            sweep(&times, seq.times(), basis, |row, u| {
                basis.accumulate(u, &mut event_rows[row * stride + mark * k..row * stride + (mark + 1) * k]);
            });
        }
        Self {
            d,
            num_basis: k,
            grid_rows,
            event_rows,
            grid,
            event_marks: seq.marks().to_vec(),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_basis(&self) -> usize {
        self.num_basis
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn grid_row(&self, q: usize) -> &[f64] {
        let s = self.d * self.num_basis;
        &self.grid_rows[q * s..(q + 1) * s]
    }

    pub fn event_row(&self, e: usize) -> &[f64] {
        let s = self.d * self.num_basis;
        &self.event_rows[e * s..(e + 1) * s]
    }

    /// Indices of events with the given mark.
    pub fn events_of(&self, mark: usize) -> Vec<usize> {
        self.event_marks
            .iter()
            .enumerate()
            .filter(|&(_, &m)| m == mark)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Calls `f(row, t - tau)` for every query row and every event `tau` with
/// `tau < t` and `t - tau < S`; both slices must be sorted.
fn sweep(times: &[f64], queries: &[f64], basis: &SplineBasis, mut f: impl FnMut(usize, f64)) {
    let s = basis.support();
    let (mut lo, mut hi) = (0usize, 0usize);
    for (row, &t) in queries.iter().enumerate() {
        while hi < times.len() && times[hi] < t {
            hi += 1;
        }
        while lo < hi && t - times[lo] >= s {
            lo += 1;
        }
        for &tau in &times[lo..hi] {
            f(row, t - tau);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(times: Vec<f64>, marks: Vec<usize>, d: usize) -> MarkedEventSequence {
        MarkedEventSequence::new(times, marks, Window::new(0.0, 10.0).unwrap(), d).unwrap()
    }

    #[test]
    fn first_order_small_cases() {
        let b = SplineBasis::new(1.0, 1, 0).unwrap();
        let s = seq(vec![1.5], vec![0], 2);
        assert_eq!(first_order_features(&s, 0, &b, 1.0), vec![0.0]);
        assert_eq!(first_order_features(&s, 0, &b, 2.0), vec![1.0]);
        assert_eq!(first_order_features(&s, 1, &b, 2.0), vec![0.0]);
        // event exactly at t is excluded, old events beyond the support too
        assert_eq!(first_order_features(&s, 0, &b, 1.5), vec![0.0]);
        assert_eq!(first_order_features(&s, 0, &b, 2.5), vec![0.0]);
    }

    #[test]
    fn second_order_small_cases() {
        let b = SplineBasis::new(1.0, 1, 0).unwrap();
        let s = seq(vec![5.1, 5.2, 5.3, 5.4, 5.5], vec![0, 1, 0, 1, 1], 3);
        assert_eq!(second_order_features(&s, (0, 1), &b, 5.9).unwrap(), vec![6.0]);
        assert_eq!(second_order_features(&s, (0, 0), &b, 5.9).unwrap(), vec![4.0]);
        assert_eq!(second_order_features(&s, (0, 2), &b, 5.9).unwrap(), vec![0.0]);
        assert!(second_order_features(&s, (1, 0), &b, 5.9).is_err());
        assert_eq!(second_order_width(6, true), 21);
        assert_eq!(second_order_width(6, false), 36);
    }

    #[test]
    fn quadrature_weights_sum_to_length() {
        let g = QuadratureGrid::uniform(Window::new(0.0, 2000.0).unwrap(), 0.1).unwrap();
        assert_eq!(g.len(), 20_000);
        let g = QuadratureGrid::uniform(Window::new(1.0, 3.25).unwrap(), 0.5).unwrap();
        assert_eq!(g.points, vec![1.0, 1.5, 2.0, 2.5, 3.0]);
        assert!((g.weights.iter().sum::<f64>() - 2.25).abs() < 1e-15);
    }

    #[test]
    fn left_limit_at_grid_points() {
        let b = SplineBasis::new(2.0, 5, 3).unwrap();
        let base = seq(vec![0.35, 1.2], vec![0, 1], 2);
        let with_extra = seq(vec![0.35, 1.2, 1.5], vec![0, 1, 0], 2);
        let grid = QuadratureGrid::uniform(base.window(), 0.5).unwrap();
        let a = HistoryFeatures::new(&base, &b, grid.clone());
        let c = HistoryFeatures::new(&with_extra, &b, grid);
        // grid point 1.5 is row 3
        assert_eq!(a.grid_row(3), c.grid_row(3));
        assert_ne!(a.grid_row(4), c.grid_row(4));
    }

    /// Brute-force oracle: direct sum over every (event, basis) pair and
    /// every ordered pair of events, using the independent evaluator.
    fn brute_first(times: &[f64], marks: &[usize], j: usize, b: &SplineBasis, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; b.len()];
        for (&tau, &m) in times.iter().zip(marks) {
            if m == j && tau < t {
                for (i, v) in b.eval(t - tau).into_iter().enumerate() {
                    out[i] += v;
                }
            }
        }
        out
    }

    pub(crate) fn brute_second(
        times: &[f64],
        marks: &[usize],
        (j1, j2): (usize, usize),
        b: &SplineBasis,
        t: f64,
    ) -> Vec<f64> {
        let k = b.len();
        let mut full = vec![vec![0.0; k]; k];
        for (&s1, &m1) in times.iter().zip(marks) {
            if m1 != j1 || s1 >= t {
                continue;
            }
            for (&s2, &m2) in times.iter().zip(marks) {
                if m2 != j2 || s2 >= t {
                    continue;
                }
                let (v1, v2) = (b.eval(t - s1), b.eval(t - s2));
                for a in 0..k {
                    for c in 0..k {
                        full[a][c] += v1[a] * v2[c];
                    }
                }
            }
        }
        second_order_pairs(k, j1 == j2)
            .into_iter()
            .map(|(a, c)| if j1 == j2 && a != c { full[a][c] + full[c][a] } else { full[a][c] })
            .collect()
    }

    prop_compose! {
        fn small_case()(
            n in 0usize..30,
            d in 1usize..4,
            k in 1usize..7,
            support in 0.5f64..4.0,
            raw in proptest::collection::vec((0.0f64..10.0, 0usize..3), 30),
            t in 0.0f64..10.0,
        ) -> (Vec<f64>, Vec<usize>, usize, SplineBasis, f64) {
            let degree = (k - 1).min(3);
            let mut pts: Vec<(f64, usize)> = raw.into_iter().take(n).map(|(x, m)| (x, m % d)).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            pts.dedup_by(|a, b| a.0 == b.0);
            let (times, marks) = pts.into_iter().unzip();
            (times, marks, d, SplineBasis::new(support, k, degree).unwrap(), t)
        }
    }

    proptest! {
        #[test]
        fn features_match_brute_force((times, marks, d, b, t) in small_case()) {
            let s = seq(times.clone(), marks.clone(), d);
            for j1 in 0..d {
                let fast = first_order_features(&s, j1, &b, t);
                let slow = brute_first(&times, &marks, j1, &b, t);
                for (x, y) in fast.iter().zip(&slow) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
                for j2 in j1..d {
                    let fast = second_order_features(&s, (j1, j2), &b, t).unwrap();
                    let slow = brute_second(&times, &marks, (j1, j2), &b, t);
                    for (x, y) in fast.iter().zip(&slow) {
                        prop_assert!((x - y).abs() < 1e-10);
                    }
                }
            }
        }

        #[test]
        fn sweep_table_matches_direct((times, marks, d, b, _t) in small_case()) {
            let s = seq(times, marks, d);
            let grid = QuadratureGrid::uniform(s.window(), 0.37).unwrap();
            let table = HistoryFeatures::new(&s, &b, grid.clone());
            let k = b.len();
            for (q, &t) in grid.points.iter().enumerate() {
                for j in 0..d {
                    let direct = first_order_features(&s, j, &b, t);
                    for i in 0..k {
                        prop_assert!((table.grid_row(q)[j * k + i] - direct[i]).abs() < 1e-12);
                    }
                }
            }
            for (e, &t) in s.times().iter().enumerate() {
                for j in 0..d {
                    let direct = first_order_features(&s, j, &b, t);
                    for i in 0..k {
                        prop_assert!((table.event_row(e)[j * k + i] - direct[i]).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
