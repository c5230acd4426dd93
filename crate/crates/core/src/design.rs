//! Design matrices for penalized intensity fits and their roughness penalty.

use std::fmt;
use std::ops::Range;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::error::{Error, Result};
use crate::events::MarkedEventSequence;
use crate::features::{second_order_pairs, second_order_width, HistoryFeatures, QuadratureGrid};

/// Truncation order of the iterated-integral expansion of the nuisance
/// intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ExpansionOrder {
    First,
    Second,
}

impl ExpansionOrder {
    pub const BOTH: [ExpansionOrder; 2] = [ExpansionOrder::First, ExpansionOrder::Second];

    pub fn as_u8(self) -> u8 {
        match self {
            ExpansionOrder::First => 1,
            ExpansionOrder::Second => 2,
        }
    }
}

impl TryFrom<u8> for ExpansionOrder {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(ExpansionOrder::First),
            2 => Ok(ExpansionOrder::Second),
            other => Err(Error::InvalidConfig(format!("expansion order must be 1 or 2, got {other}"))),
        }
    }
}

impl From<ExpansionOrder> for u8 {
    fn from(o: ExpansionOrder) -> u8 {
        o.as_u8()
    }
}

impl fmt::Display for ExpansionOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockKind {
    Intercept,
    FirstOrder { mark: usize },
    SecondOrder { first: usize, second: usize },
    /// First-order filter of the tested mark.
    Test { mark: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub start: usize,
    pub end: usize,
}

impl Block {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn name(&self) -> String {
        match self.kind {
            BlockKind::Intercept => "intercept".into(),
            BlockKind::FirstOrder { mark } => format!("first:{mark}"),
            BlockKind::SecondOrder { first, second } => format!("second:{first},{second}"),
            BlockKind::Test { mark } => format!("test:{mark}"),
        }
    }
}

/// Named column blocks of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignLayout {
    pub blocks: Vec<Block>,
    pub num_basis: usize,
}

impl DesignLayout {
    /// Intercept, then one first-order block per conditioning mark, then
    /// (order 2) one block per mark pair `a <= b`, then the test block.
    pub fn new(conditioning: &[usize], order: ExpansionOrder, test_mark: Option<usize>, num_basis: usize) -> Self {
        let mut marks = conditioning.to_vec();
        marks.sort_unstable();
        marks.dedup();
        let mut blocks = Vec::new();
        let mut next = 0;
        let mut push = |kind, width| {
            blocks.push(Block {
                kind,
                start: next,
                end: next + width,
            });
            next += width;
        };
        push(BlockKind::Intercept, 1);
        for &m in &marks {
            push(BlockKind::FirstOrder { mark: m }, num_basis);
        }
        if order == ExpansionOrder::Second {
            for (ia, &a) in marks.iter().enumerate() {
                for &b in &marks[ia..] {
                    push(
                        BlockKind::SecondOrder { first: a, second: b },
                        second_order_width(num_basis, a == b),
                    );
                }
            }
        }
        if let Some(j) = test_mark {
            push(BlockKind::Test { mark: j }, num_basis);
        }
        Self { blocks, num_basis }
    }

    pub fn ncols(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.end)
    }

    pub fn block(&self, name: &str) -> Result<&Block> {
        self.blocks
            .iter()
            .find(|b| b.name() == name)
            .ok_or_else(|| Error::MissingBlock(name.to_string()))
    }

    pub fn test_block(&self) -> Option<&Block> {
        self.blocks
            .iter()
            .find(|b| matches!(b.kind, BlockKind::Test { .. }))
    }

    /// Per-column recipe in terms of a history-feature row.
    fn recipes(&self) -> Vec<Recipe> {
        let k = self.num_basis;
        let mut out = Vec::with_capacity(self.ncols());
        for block in &self.blocks {
            match block.kind {
                BlockKind::Intercept => out.push(Recipe::One),
                BlockKind::FirstOrder { mark } | BlockKind::Test { mark } => {
                    out.extend((0..k).map(|i| Recipe::Linear(mark * k + i)));
                }
                BlockKind::SecondOrder { first, second } => {
                    let same = first == second;
                    out.extend(second_order_pairs(k, same).into_iter().map(|(i1, i2)| Recipe::Product {
                        a: first * k + i1,
                        b: second * k + i2,
                        scale: if same && i1 != i2 { 2.0 } else { 1.0 },
                    }));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum Recipe {
    One,
    Linear(usize),
    Product { a: usize, b: usize, scale: f64 },
}

impl Recipe {
    #[inline]
    fn apply(self, row: &[f64]) -> f64 {
        match self {
            Recipe::One => 1.0,
            Recipe::Linear(i) => row[i],
            Recipe::Product { a, b, scale } => scale * row[a] * row[b],
        }
    }
}

/// Which model a design describes: target mark, nuisance marks, order, and
/// the optional tested mark.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignRequest {
    pub target: usize,
    pub conditioning: Vec<usize>,
    pub order: ExpansionOrder,
    pub test_mark: Option<usize>,
}

/// Feature rows at quadrature points (with weights) and at target events.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub quadrature: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub events: DMatrix<f64>,
    pub layout: DesignLayout,
}

impl DesignMatrix {
    pub fn ncols(&self) -> usize {
        self.layout.ncols()
    }
}

impl HistoryFeatures {
    pub fn design(&self, request: &DesignRequest) -> Result<DesignMatrix> {
        let d = self.d();
        let all_marks = request
            .conditioning
            .iter()
            .chain(request.test_mark.iter())
            .chain(std::iter::once(&request.target));
        if let Some(&m) = all_marks.into_iter().find(|&&m| m >= d) {
            return Err(Error::MarkOutOfRange { mark: m, d });
        }
        if let Some(j) = request.test_mark {
            if request.conditioning.contains(&j) {
                return Err(Error::InvalidHypothesis(format!(
                    "tested mark {j} is also in the conditioning set"
                )));
            }
        }
        let layout = DesignLayout::new(&request.conditioning, request.order, request.test_mark, self.num_basis());
        let recipes = layout.recipes();
        let p = recipes.len();

        let n = self.grid().len();
        let quadrature = DMatrix::from_fn(n, p, |r, c| recipes[c].apply(self.grid_row(r)));
        let weights = DVector::from_column_slice(&self.grid().weights);

        let rows = self.events_of(request.target);
        if rows.is_empty() {
            warn!("target mark {} has no events; fitting the compensator only", request.target);
        }
        let events = DMatrix::from_fn(rows.len(), p, |r, c| recipes[c].apply(self.event_row(rows[r])));

        Ok(DesignMatrix {
            quadrature,
            weights,
            events,
            layout,
        })
    }
}

/// Builds the design from raw events. The quadrature spacing must not
/// exceed a quarter of the basis support.
pub fn build_design(
    seq: &MarkedEventSequence,
    request: &DesignRequest,
    basis: &SplineBasis,
    delta: f64,
) -> Result<DesignMatrix> {
    check_spacing(basis, delta)?;
    let grid = QuadratureGrid::uniform(seq.window(), delta)?;
    HistoryFeatures::new(seq, basis, grid).design(request)
}

pub(crate) fn check_spacing(basis: &SplineBasis, delta: f64) -> Result<()> {
    let limit = basis.support() / 4.0;
    if delta > limit {
        return Err(Error::GridTooCoarse { delta, limit });
    }
    Ok(())
}

/// Quadratic roughness penalty over the full coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub matrix: DMatrix<f64>,
}

/// Curvature penalty matching a layout: the spline roughness Gram matrix on
/// univariate blocks, `R (x) G + G (x) R` on tensor blocks (folded onto the
/// symmetrized coefficients for same-mark pairs), and nothing on the
/// intercept.
pub fn roughness_penalty(layout: &DesignLayout, basis: &SplineBasis) -> PenaltyMatrix {
    let k = basis.len();
    let rough = basis.roughness();
    let gram = basis.gram();
    let kron = DMatrix::from_fn(k * k, k * k, |r, c| {
        let (i1, i2) = (r / k, r % k);
        let (l1, l2) = (c / k, c % k);
        rough[(i1, l1)] * gram[(i2, l2)] + gram[(i1, l1)] * rough[(i2, l2)]
    });
    let sym_pairs = second_order_pairs(k, true);
    let mut folded = DMatrix::zeros(sym_pairs.len(), sym_pairs.len());
    for (p, &(a, b)) in sym_pairs.iter().enumerate() {
        for (q, &(c, e)) in sym_pairs.iter().enumerate() {
            // sum over the full-matrix positions each symmetric coefficient fills
            let rows: &[(usize, usize)] = if a == b { &[(a, b)] } else { &[(a, b), (b, a)] };
            let cols: &[(usize, usize)] = if c == e { &[(c, e)] } else { &[(c, e), (e, c)] };
            let mut s = 0.0;
            for &(r1, r2) in rows {
                for &(c1, c2) in cols {
                    s += kron[(r1 * k + r2, c1 * k + c2)];
                }
            }
            folded[(p, q)] = s;
        }
    }

    let n = layout.ncols();
    let mut matrix = DMatrix::zeros(n, n);
    for block in &layout.blocks {
        let src = match block.kind {
            BlockKind::Intercept => continue,
            BlockKind::FirstOrder { .. } | BlockKind::Test { .. } => &rough,
            BlockKind::SecondOrder { first, second } if first == second => &folded,
            BlockKind::SecondOrder { .. } => &kron,
        };
        matrix
            .view_mut((block.start, block.start), (block.len(), block.len()))
            .copy_from(src);
    }
    PenaltyMatrix { matrix }
}
