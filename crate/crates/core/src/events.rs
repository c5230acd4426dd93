//! Marked event sequences observed on a finite window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open observation window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    #[serde(rename = "t_start")]
    pub start: f64,
    #[serde(rename = "t_end")]
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) || end <= start {
            return Err(Error::InvalidWindow { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

/// A realization of a simple marked point process with marks in `0..d`.
///
/// Times are strictly increasing across all marks and lie in the window.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedEventSequence {
    times: Vec<f64>,
    marks: Vec<usize>,
    window: Window,
    d: usize,
}

impl MarkedEventSequence {
    /// Validates raw event data. Unsorted input is sorted by time; exact
    /// ties are rejected rather than perturbed.
    pub fn new(times: Vec<f64>, marks: Vec<usize>, window: Window, d: usize) -> Result<Self> {
        if times.len() != marks.len() {
            return Err(Error::LengthMismatch {
                times: times.len(),
                marks: marks.len(),
            });
        }
        Window::new(window.start, window.end)?;
        if d == 0 {
            return Err(Error::InvalidConfig("d must be at least 1".into()));
        }
        for (&t, &m) in times.iter().zip(&marks) {
            if !t.is_finite() {
                return Err(Error::NonFiniteValue(format!("event time {t}")));
            }
            if m >= d {
                return Err(Error::MarkOutOfRange { mark: m, d });
            }
            if !window.contains(t) {
                return Err(Error::TimeOutsideWindow {
                    time: t,
                    start: window.start,
                    end: window.end,
                });
            }
        }

        let (times, marks) = if times.windows(2).all(|w| w[0] < w[1]) {
            (times, marks)
        } else {
            let mut pairs: Vec<(f64, usize)> = times.into_iter().zip(marks).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            pairs.into_iter().unzip()
        };
        if let Some(w) = times.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateTime { time: w[0] });
        }

        Ok(Self {
            times,
            marks,
            window,
            d,
        })
    }

    pub fn empty(window: Window, d: usize) -> Self {
        Self {
            times: Vec::new(),
            marks: Vec::new(),
            window,
            d,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn marks(&self) -> &[usize] {
        &self.marks
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.times.iter().copied().zip(self.marks.iter().copied())
    }

    /// Event times of a single mark, in increasing order.
    pub fn times_of(&self, mark: usize) -> Vec<f64> {
        self.iter()
            .filter(|&(_, m)| m == mark)
            .map(|(t, _)| t)
            .collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.d];
        for &m in &self.marks {
            counts[m] += 1;
        }
        counts
    }

    /// Relabels marks through `perm` (old mark `m` becomes `perm[m]`).
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "permutation of length {} for d = {}",
                perm.len(),
                self.d
            )));
        }
        let marks = self.marks.iter().map(|&m| perm[m]).collect();
        Self::new(self.times.clone(), marks, self.window, self.d)
    }
}
