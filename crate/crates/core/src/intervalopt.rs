//! Two-phase interval branch-and-bound for global maximization over a box.
//!
//! Phase I always splits the box with the greatest enclosure upper bound
//! until that box is atomic. Phase II splits any remaining non-atomic box,
//! highest upper bound first and oldest first on ties. The lower bound `l`
//! is the best exact evaluation at the midpoint of any box created so far.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError, Interval};

/// A scalar objective with exact point values and a sound box enclosure.
pub trait BoxObjective: Sync {
    fn eval(&self, x: &[f64]) -> Result<f64, ExprError>;
    fn enclose(&self, bx: &[Interval]) -> Result<Interval, ExprError>;
}

impl BoxObjective for Expr {
    fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        Expr::eval(self, x)
    }
    fn enclose(&self, bx: &[Interval]) -> Result<Interval, ExprError> {
        self.ieval(bx)
    }
}

#[derive(Debug, Error)]
pub enum IntervalOptError {
    #[error("box is atomic (widest side {width} <= eps_x = {eps_x})")]
    Atomic { width: f64, eps_x: f64 },
    #[error("tolerances must be positive")]
    Tolerance,
    #[error(transparent)]
    Domain(#[from] ExprError),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BnbSettings {
    pub eps_h: f64,
    /// Atomic width; `None` means 1e-6 times the widest side of the root box.
    pub eps_x: Option<f64>,
    pub max_iters: usize,
}

impl Default for BnbSettings {
    fn default() -> Self {
        BnbSettings {
            eps_h: 1e-4,
            eps_x: None,
            max_iters: 100_000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaxResult {
    pub lower: f64,
    pub upper: f64,
    pub witness: Vec<f64>,
    /// Number of box splits performed.
    pub iterations: usize,
    pub phase_one_iterations: usize,
    pub atomic_count: usize,
    pub boxes_remaining: usize,
    pub budget_exhausted: bool,
}

pub fn max_width(bx: &[Interval]) -> f64 {
    bx.iter().map(Interval::width).fold(0.0, f64::max)
}

/// Bisects the widest side at its midpoint; ties go to the lowest coordinate.
pub fn split(bx: &[Interval], eps_x: f64) -> Result<(Vec<Interval>, Vec<Interval>), IntervalOptError> {
    let mut k = 0;
    for (i, iv) in bx.iter().enumerate() {
        if iv.width() > bx[k].width() {
            k = i;
        }
    }
    let width = bx.get(k).map_or(0.0, Interval::width);
    if width <= eps_x {
        return Err(IntervalOptError::Atomic { width, eps_x });
    }
    let m = bx[k].mid();
    let (mut left, mut right) = (bx.to_vec(), bx.to_vec());
    left[k].hi = m;
    right[k].lo = m;
    Ok((left, right))
}

#[derive(Clone, Debug)]
pub struct CoverBox {
    pub bx: Vec<Interval>,
    pub enclosure: Interval,
    birth: u64,
}

impl PartialEq for CoverBox {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for CoverBox {}
impl PartialOrd for CoverBox {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
/// Max-heap order: higher upper bound first, then older.
impl Ord for CoverBox {
    fn cmp(&self, o: &Self) -> Ordering {
        self.enclosure
            .hi
            .total_cmp(&o.enclosure.hi)
            .then_with(|| o.birth.cmp(&self.birth))
    }
}

/// The collection of boxes that still may contain a maximizer.
/// Atomic boxes are kept apart because they are never split again.
#[derive(Clone, Debug, Default)]
pub struct Cover {
    open: BinaryHeap<CoverBox>,
    atomic: Vec<CoverBox>,
    next_birth: u64,
}

impl Cover {
    pub fn new() -> Cover {
        Cover::default()
    }

    pub fn push(&mut self, bx: Vec<Interval>, enclosure: Interval, eps_x: f64) {
        let b = CoverBox {
            bx,
            enclosure,
            birth: self.next_birth,
        };
        self.next_birth += 1;
        if max_width(&b.bx) <= eps_x {
            self.atomic.push(b);
        } else {
            self.open.push(b);
        }
    }

    pub fn len(&self) -> usize {
        self.open.len() + self.atomic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn atomic_count(&self) -> usize {
        self.atomic.len()
    }

    fn open_top_hi(&self) -> f64 {
        self.open.peek().map_or(f64::NEG_INFINITY, |b| b.enclosure.hi)
    }

    fn atomic_top_hi(&self) -> f64 {
        self.atomic.iter().map(|b| b.enclosure.hi).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greatest enclosure upper bound over the cover.
    pub fn upper(&self) -> f64 {
        self.open_top_hi().max(self.atomic_top_hi())
    }

    /// Drops every box whose enclosure lies strictly below `l`.
    pub fn prune(&mut self, l: f64) {
        self.open.retain(|b| b.enclosure.hi >= l);
        self.atomic.retain(|b| b.enclosure.hi >= l);
    }

    pub fn boxes(&self) -> impl Iterator<Item = &CoverBox> {
        self.open.iter().chain(&self.atomic)
    }
}

pub fn maximize<O: BoxObjective + ?Sized>(
    objective: &O,
    root: &[Interval],
    settings: &BnbSettings,
) -> Result<MaxResult, IntervalOptError> {
    let eps_x = settings.eps_x.unwrap_or(1e-6 * max_width(root));
    if !(settings.eps_h > 0.0) || eps_x < 0.0 {
        return Err(IntervalOptError::Tolerance);
    }
    let mid = |bx: &[Interval]| bx.iter().map(Interval::mid).collect::<Vec<f64>>();

    let mut cover = Cover::new();
    let witness0 = mid(root);
    let mut lower = objective.eval(&witness0)?;
    let mut witness = witness0;
    let root_enc = objective.enclose(root)?;
    cover.push(root.to_vec(), root_enc, eps_x);
    let mut upper = cover.upper();

    let mut iterations = 0;
    let mut phase_one = 0;
    let mut in_phase_one = true;
    let mut budget_exhausted = false;

    while upper - lower > settings.eps_h {
        if in_phase_one && cover.atomic_top_hi() >= cover.open_top_hi() {
            in_phase_one = false;
        }
        let Some(parent) = cover.open.pop() else {
            break;
        };
        if parent.enclosure.hi < lower {
            continue;
        }
        if iterations >= settings.max_iters {
            cover.open.push(parent);
            budget_exhausted = true;
            break;
        }
        iterations += 1;
        if in_phase_one {
            phase_one += 1;
        }
        let (left, right) = split(&parent.bx, eps_x)?;
        let mut improved = false;
        for child in [left, right] {
            let e = objective.enclose(&child)?;
            // The parent enclosure also contains the child's range.
            let e = Interval {
                lo: e.lo.max(parent.enclosure.lo).min(parent.enclosure.hi),
                hi: e.hi.min(parent.enclosure.hi),
            };
            let m = mid(&child);
            let v = objective.eval(&m)?;
            if v > lower {
                lower = v;
                witness = m;
                improved = true;
            }
            cover.push(child, e, eps_x);
        }
        if improved {
            cover.prune(lower);
        }
        upper = cover.upper().max(lower);
    }
    upper = upper.max(lower);

    Ok(MaxResult {
        lower,
        upper,
        witness,
        iterations,
        phase_one_iterations: phase_one,
        atomic_count: cover.atomic_count(),
        boxes_remaining: cover.len(),
        budget_exhausted,
    })
}
