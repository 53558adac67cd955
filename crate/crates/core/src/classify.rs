//! Constants for the four nonlinearity classes, from sampling or interval BnB.
//!
//! Row problems are posed only over the variables a row actually uses: the
//! row's gradient does not depend on the others, so the maximum over the
//! projected box equals the maximum over the full box.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError, Interval};
use crate::intervalopt::{self, BnbSettings, BoxObjective, IntervalOptError, MaxResult};
use crate::lds::{self, Estimate, LdsError, SequenceKind};
use crate::model::NdsModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearityClass {
    BoundedJacobian,
    Lipschitz,
    OneSidedLipschitz,
    Qib,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Lds,
    Interval,
    AnalyticInput,
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error(transparent)]
    Lds(#[from] LdsError),
    #[error(transparent)]
    Interval(#[from] IntervalOptError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("QIB constants (δ1 = {delta1}, δ2 = {delta2}) still violated on {violations} validation pairs after widening")]
    QibValidation { delta1: f64, delta2: f64, violations: usize },
    #[error("{0} is not available with method {1:?}")]
    Unsupported(&'static str, Method),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassifySettings {
    pub samples: usize,
    pub sequence: SequenceKind,
    pub seed: u64,
    pub bnb: BnbSettings,
    pub validation_samples: usize,
}

impl Default for ClassifySettings {
    fn default() -> Self {
        ClassifySettings {
            samples: lds::DEFAULT_SAMPLES,
            sequence: SequenceKind::Sobol,
            seed: 0,
            bnb: BnbSettings::default(),
            validation_samples: 10_000,
        }
    }
}

/// Per-row diagnostics for a Lipschitz or Jacobian run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RowRecord {
    pub row: usize,
    pub lower: f64,
    pub upper: f64,
    /// LDS samples drawn, or interval boxes split.
    pub work: usize,
    pub last_improvement: Option<usize>,
    pub budget_exhausted: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct NonlinearityParams {
    pub class: Option<NonlinearityClass>,
    pub method: Option<Method>,
    /// True only when every constant is an interval-certified upper bound.
    pub certificate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_rows: Option<Vec<f64>>,
    /// The aggregate as sqrt(sum beta_i), reported alongside the one used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_printed_formula: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jac_lo: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jac_hi: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta2: Option<f64>,
    /// (δ2, δ1) for every grid point of the QIB sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qib_sweep: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub rows: Vec<RowRecord>,
    #[serde(default)]
    pub samples: usize,
    #[serde(default)]
    pub boxes: usize,
    #[serde(default)]
    pub assumption1_violated: bool,
    #[serde(default)]
    pub notes: Vec<String>,
}

pub const AGGREGATION_NOTE: &str =
    "beta = sqrt(sum_i beta_i^2); beta_printed_formula = sqrt(sum_i beta_i) is reported for reference";

impl NonlinearityParams {
    pub fn analytic_lipschitz(beta: f64) -> Self {
        NonlinearityParams {
            class: Some(NonlinearityClass::Lipschitz),
            method: Some(Method::AnalyticInput),
            beta: Some(beta),
            notes: vec!["constant supplied by the user".into()],
            ..Default::default()
        }
    }

    pub fn analytic_jacobian(lo: Vec<Vec<f64>>, hi: Vec<Vec<f64>>) -> Self {
        NonlinearityParams {
            class: Some(NonlinearityClass::BoundedJacobian),
            method: Some(Method::AnalyticInput),
            jac_lo: Some(lo),
            jac_hi: Some(hi),
            notes: vec!["bounds supplied by the user".into()],
            ..Default::default()
        }
    }
}

/// Lifts an objective on the active coordinates to the full box.
struct Projected<'a, F> {
    full: &'a [Interval],
    active: Vec<usize>,
    f: F,
}

impl<F> Projected<'_, F> {
    fn point(&self, xr: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = self.full.iter().map(Interval::mid).collect();
        for (k, &i) in self.active.iter().enumerate() {
            x[i] = xr[k];
        }
        x
    }

    fn boxed(&self, br: &[Interval]) -> Vec<Interval> {
        let mut b = self.full.to_vec();
        for (k, &i) in self.active.iter().enumerate() {
            b[i] = br[k];
        }
        b
    }

    fn sub_box(&self) -> Vec<Interval> {
        self.active.iter().map(|&i| self.full[i]).collect()
    }
}

trait PointInterval: Sync {
    fn eval(&self, x: &[f64]) -> Result<f64, ExprError>;
    fn enclose(&self, b: &[Interval]) -> Result<Interval, ExprError>;
}

impl<F: PointInterval> BoxObjective for Projected<'_, F> {
    fn eval(&self, xr: &[f64]) -> Result<f64, ExprError> {
        self.f.eval(&self.point(xr))
    }
    fn enclose(&self, br: &[Interval]) -> Result<Interval, ExprError> {
        self.f.enclose(&self.boxed(br))
    }
}

struct GradNorm<'a>(&'a Expr);

impl PointInterval for GradNorm<'_> {
    fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        Ok(self.0.grad(x)?.iter().map(|g| g * g).sum::<f64>().sqrt())
    }
    fn enclose(&self, b: &[Interval]) -> Result<Interval, ExprError> {
        let g = self.0.igrad(b)?;
        let sq = g
            .iter()
            .map(|gi| gi.powi(2).expect("nonnegative power"))
            .fold(Interval::point(0.0), |acc, v| acc.add(&v));
        Ok(sq.sqrt().expect("sum of squares is nonnegative"))
    }
}

/// Signed partial derivative `sign * ∂f/∂x_j`.
struct Partial<'a> {
    e: &'a Expr,
    j: usize,
    sign: f64,
}

impl PointInterval for Partial<'_> {
    fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        Ok(self.sign * self.e.grad(x)?[self.j])
    }
    fn enclose(&self, b: &[Interval]) -> Result<Interval, ExprError> {
        Ok(self.e.igrad(b)?[self.j].scale(self.sign))
    }
}

#[derive(Clone, Debug)]
struct RowMax {
    lower: f64,
    upper: f64,
    work: usize,
    last_improvement: Option<usize>,
    budget_exhausted: bool,
}

fn row_max<F: PointInterval>(
    f: F,
    active: Vec<usize>,
    full: &[Interval],
    method: Method,
    st: &ClassifySettings,
) -> Result<RowMax, ClassifyError> {
    let p = Projected { full, active, f };
    if p.active.is_empty() {
        // The objective does not depend on the state: one evaluation is exact.
        let v = p.f.eval(&p.point(&[]))?;
        return Ok(RowMax {
            lower: v,
            upper: v,
            work: 0,
            last_improvement: None,
            budget_exhausted: false,
        });
    }
    let sub = p.sub_box();
    match method {
        Method::Lds => {
            let Estimate {
                value,
                last_improvement,
                samples,
                ..
            } = lds::estimate_max(|x| p.eval(x), &sub, st.samples, st.sequence, st.seed)?;
            Ok(RowMax {
                lower: value,
                upper: value,
                work: samples,
                last_improvement: Some(last_improvement),
                budget_exhausted: false,
            })
        }
        Method::Interval => {
            let MaxResult {
                lower,
                upper,
                iterations,
                budget_exhausted,
                ..
            } = intervalopt::maximize(&p, &sub, &st.bnb)?;
            Ok(RowMax {
                lower,
                upper,
                work: iterations,
                last_improvement: None,
                budget_exhausted,
            })
        }
        Method::AnalyticInput => Err(ClassifyError::Unsupported("estimation", method)),
    }
}

fn record(row: usize, m: &RowMax) -> RowRecord {
    RowRecord {
        row,
        lower: m.lower,
        upper: m.upper,
        work: m.work,
        last_improvement: m.last_improvement,
        budget_exhausted: m.budget_exhausted,
    }
}

fn work_totals(p: &mut NonlinearityParams, method: Method) {
    let w: usize = p.rows.iter().map(|r| r.work).sum();
    match method {
        Method::Interval => p.boxes = w,
        _ => p.samples = w,
    }
}

/// Per-row β_i = max ‖∇f_i‖₂ over the box, and the aggregate sqrt(Σ β_i²).
/// With the interval method each β_i is the certified upper bound u.
pub fn lipschitz_rowwise(model: &NdsModel, method: Method, st: &ClassifySettings) -> Result<NonlinearityParams, ClassifyError> {
    let results = model
        .f
        .par_iter()
        .map(|e| row_max(GradNorm(e), e.vars(), &model.bx, method, st))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<f64> = results.iter().map(|r| r.upper.max(0.0)).collect();
    let beta = rows.iter().map(|b| b * b).sum::<f64>().sqrt();
    let printed = rows.iter().sum::<f64>().sqrt();
    let mut p = NonlinearityParams {
        class: Some(NonlinearityClass::Lipschitz),
        method: Some(method),
        certificate: method == Method::Interval,
        beta: Some(beta),
        beta_rows: Some(rows),
        beta_printed_formula: Some(printed),
        rows: results.iter().enumerate().map(|(i, r)| record(i, r)).collect(),
        assumption1_violated: model.assumption1_violated(),
        notes: vec![AGGREGATION_NOTE.into()],
        ..Default::default()
    };
    work_totals(&mut p, method);
    Ok(p)
}

/// Entrywise bounds f̲_ij ≤ ∂f_i/∂x_j ≤ f̄_ij. Entries for variables absent
/// from row i are exactly zero.
pub fn jacobian_bounds(model: &NdsModel, method: Method, st: &ClassifySettings) -> Result<NonlinearityParams, ClassifyError> {
    let n = model.n_x;
    let tasks: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| {
            model.f[i]
                .vars()
                .into_iter()
                .flat_map(move |j| [(i, j, 1.0), (i, j, -1.0)])
        })
        .collect();
    let results = tasks
        .par_iter()
        .map(|&(i, j, sign)| {
            let e = &model.f[i];
            row_max(Partial { e, j, sign }, e.vars(), &model.bx, method, st)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut lo = vec![vec![0.0; n]; n];
    let mut hi = vec![vec![0.0; n]; n];
    let mut rows = Vec::new();
    for (&(i, j, sign), r) in tasks.iter().zip(&results) {
        if sign > 0.0 {
            hi[i][j] = r.upper;
        } else {
            lo[i][j] = -r.upper;
        }
        rows.push(record(i * n + j, r));
    }
    let mut p = NonlinearityParams {
        class: Some(NonlinearityClass::BoundedJacobian),
        method: Some(method),
        certificate: method == Method::Interval,
        jac_lo: Some(lo),
        jac_hi: Some(hi),
        rows,
        assumption1_violated: model.assumption1_violated(),
        notes: vec!["rows[k].row = i*n_x + j; each (i,j) appears once for the max and once for the negated min".into()],
        ..Default::default()
    };
    work_totals(&mut p, method);
    Ok(p)
}

fn deltas(model: &NdsModel, x: &[f64], xh: &[f64]) -> Result<(DVector<f64>, DVector<f64>), ExprError> {
    let df = model.f_eval(x)? - model.f_eval(xh)?;
    let dx = DVector::from_column_slice(x) - DVector::from_column_slice(xh);
    Ok((df, dx))
}

/// ρ = sup ⟨Δf, Δx⟩ / ‖Δx‖² from pairwise sampling; never certified.
pub fn osl_constant(model: &NdsModel, st: &ClassifySettings) -> Result<NonlinearityParams, ClassifyError> {
    let est = lds::estimate_max_pairs(
        |x, xh| {
            let (df, dx) = deltas(model, x, xh)?;
            Ok(df.dot(&dx) / dx.norm_squared())
        },
        &model.bx,
        st.samples,
        st.sequence,
        st.seed,
    )?;
    Ok(NonlinearityParams {
        class: Some(NonlinearityClass::OneSidedLipschitz),
        method: Some(Method::Lds),
        rho: Some(est.value),
        samples: est.samples,
        rows: vec![RowRecord {
            row: 0,
            lower: est.value,
            upper: est.value,
            work: est.samples,
            last_improvement: Some(est.last_improvement),
            budget_exhausted: false,
        }],
        assumption1_violated: model.assumption1_violated(),
        notes: vec!["sampling estimate over pairs; not certified".into()],
        ..Default::default()
    })
}

pub const QIB_DELTA2_GRID: [f64; 9] = [-10.0, -5.0, -2.0, -1.0, 0.0, 1.0, 2.0, 5.0, 10.0];
const QIB_WIDEN_ROUNDS: usize = 5;
const QIB_SLACK: f64 = 1e-9;
/// Decorrelates the validation sample from the fitting sample.
const VALIDATION_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// Pairwise samples of (‖Δf‖², ⟨Δf,Δx⟩, ‖Δx‖²), coincident pairs dropped.
fn qib_terms(model: &NdsModel, s: usize, kind: SequenceKind, seed: u64) -> Result<Vec<[f64; 3]>, ClassifyError> {
    let n = model.n_x;
    let product: Vec<Interval> = model.bx.iter().chain(&model.bx).copied().collect();
    let seq = lds::generate(kind, 2 * n, s, seed)?;
    let terms = seq
        .points
        .par_iter()
        .map(|u| {
            let p = lds::map_to_box(u, &product);
            let (x, xh) = p.split_at(n);
            let (df, dx) = deltas(model, x, xh).map_err(|source| LdsError::Objective { point: p.clone(), source })?;
            let d2 = dx.norm_squared();
            Ok((d2.sqrt() >= lds::PAIR_MIN_DISTANCE).then(|| [df.norm_squared(), df.dot(&dx), d2]))
        })
        .collect::<Result<Vec<_>, LdsError>>()?;
    Ok(terms.into_iter().flatten().collect())
}

/// (δ1, δ2) by sweeping δ2 over a fixed grid and taking the minimal δ1 for each,
/// then checking the pair on a fresh sample and widening δ1 if needed.
pub fn qib_constants(model: &NdsModel, st: &ClassifySettings) -> Result<NonlinearityParams, ClassifyError> {
    let fit = qib_terms(model, st.samples, st.sequence, st.seed)?;
    let sweep: Vec<(f64, f64)> = QIB_DELTA2_GRID
        .iter()
        .map(|&d2| {
            let d1 = fit
                .iter()
                .map(|[ff, fx, xx]| (ff - d2 * fx) / xx)
                .fold(f64::NEG_INFINITY, f64::max);
            (d2, d1)
        })
        .collect();
    // Ties go to the first grid point with the minimal δ1 + |δ2|.
    let (mut d2, mut d1) = sweep[0];
    for &(b2, b1) in &sweep[1..] {
        if b1 + b2.abs() < d1 + d2.abs() {
            (d2, d1) = (b2, b1);
        }
    }
    if fit.is_empty() {
        (d1, d2) = (0.0, 0.0);
    }
    let val = qib_terms(model, st.validation_samples, st.sequence, st.seed.wrapping_add(VALIDATION_SEED_OFFSET))?;
    let violations = |d1: f64, d2: f64| {
        val.iter()
            .filter(|[ff, fx, xx]| d1 * xx + d2 * fx - ff < -QIB_SLACK)
            .count()
    };
    // 10% of the magnitude of δ1, or of the δ2 = 0 value when δ1 is near zero.
    let zero_branch = sweep.iter().find(|s| s.0 == 0.0).map_or(0.0, |s| s.1);
    let step = 0.1 * d1.abs().max(zero_branch.abs()) + f64::EPSILON;
    let mut bad = violations(d1, d2);
    let mut rounds = 0;
    while bad > 0 && rounds < QIB_WIDEN_ROUNDS {
        d1 += step;
        rounds += 1;
        bad = violations(d1, d2);
    }
    if bad > 0 {
        return Err(ClassifyError::QibValidation {
            delta1: d1,
            delta2: d2,
            violations: bad,
        });
    }
    let mut notes = vec!["sampling estimate over pairs; not certified".to_string()];
    if rounds > 0 {
        notes.push(format!("δ1 widened {rounds} time(s) by 10% to pass validation"));
    }
    Ok(NonlinearityParams {
        class: Some(NonlinearityClass::Qib),
        method: Some(Method::Lds),
        delta1: Some(d1),
        delta2: Some(d2),
        qib_sweep: Some(sweep),
        samples: fit.len() + val.len(),
        assumption1_violated: model.assumption1_violated(),
        notes,
        ..Default::default()
    })
}

pub fn parameterize(model: &NdsModel, class: NonlinearityClass, method: Method, st: &ClassifySettings) -> Result<NonlinearityParams, ClassifyError> {
    match (class, method) {
        (_, Method::AnalyticInput) => Err(ClassifyError::Unsupported("estimation", method)),
        (NonlinearityClass::Lipschitz, m) => lipschitz_rowwise(model, m, st),
        (NonlinearityClass::BoundedJacobian, m) => jacobian_bounds(model, m, st),
        (NonlinearityClass::OneSidedLipschitz, Method::Lds) => osl_constant(model, st),
        (NonlinearityClass::Qib, Method::Lds) => qib_constants(model, st),
        (NonlinearityClass::OneSidedLipschitz, m) => Err(ClassifyError::Unsupported("one-sided Lipschitz", m)),
        (NonlinearityClass::Qib, m) => Err(ClassifyError::Unsupported("QIB", m)),
    }
}
