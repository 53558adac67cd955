//! Luenberger observer simulation and post-hoc certificate checks.
//!
//! The observer is `x̂' = A x̂ + f(x̂) + B u + L(y - Γ C x̂)` with `y = Γ C x`,
//! so `e = x - x̂` obeys `e' = (A - LΓC) e + f(x) - f(x̂)`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Schur};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::NonlinearityParams;
use crate::expr::{ExprError, Interval};
use crate::misdp::{bounded_jacobian_lmi, lipschitz_lmi, Variant};
use crate::model::{column_sensor_map, expand_gamma, NdsModel};
use crate::sdp::{max_eigenvalue, min_eigenvalue};

#[derive(Debug, Error)]
pub enum ObserverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("column {column} of L belongs to unselected sensor {sensor} but is nonzero")]
    LeakingColumn { column: usize, sensor: usize },
    #[error("step size {0} is not a positive finite number, or T < h")]
    Step(f64),
    #[error("{kind:?} state became nonfinite after t = {t}")]
    BlowUp { kind: TrajectoryKind, t: f64 },
    #[error("nonlinearity evaluation failed: {0}")]
    Expr(#[from] ExprError),
    #[error("certificate needs {0}")]
    Missing(&'static str),
}

/// Observer gain tied to the placement it came from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObserverGain {
    #[serde(with = "crate::misdp::matrix_rows")]
    pub l: DMatrix<f64>,
    pub gamma: Vec<bool>,
    pub certificate_residual: Option<f64>,
}

impl ObserverGain {
    /// Rejects gains that read an unselected sensor; the check is exact.
    pub fn new(l: DMatrix<f64>, gamma: Vec<bool>, model: &NdsModel) -> Result<Self, ObserverError> {
        if l.shape() != (model.n_x, model.n_y()) || gamma.len() != model.n_nodes() {
            return Err(ObserverError::Dimension(format!(
                "L is {:?} with {} sensor flags, expected {:?} and {}",
                l.shape(),
                gamma.len(),
                (model.n_x, model.n_y()),
                model.n_nodes()
            )));
        }
        for (column, &sensor) in column_sensor_map(&model.partition.y).iter().enumerate() {
            if !gamma[sensor] && l.column(column).iter().any(|&v| v != 0.0) {
                return Err(ObserverError::LeakingColumn { column, sensor });
            }
        }
        Ok(ObserverGain {
            l,
            gamma,
            certificate_residual: None,
        })
    }

    /// The closed-loop injection `K = L Γ(γ) C`.
    pub fn injection(&self, model: &NdsModel) -> DMatrix<f64> {
        &self.l * expand_gamma(&self.gamma, &model.partition.y) * model.c()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    Plant,
    Observer,
    Error,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub h: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Grid points where a plant state left the model box by more than 1e-9.
    pub box_violations: usize,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory has its initial point")
    }

    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, Vec::len);
        let prefix = match self.kind {
            TrajectoryKind::Plant => "x",
            TrajectoryKind::Observer => "xhat",
            TrajectoryKind::Error => "e",
        };
        let mut out = String::from("t");
        for i in 1..=n {
            write!(out, ",{prefix}{i}").unwrap();
        }
        out.push('\n');
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(out, "{t}").unwrap();
            for v in x {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    match Schur::try_new(m.clone(), f64::EPSILON, 10_000) {
        Some(s) => s.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max),
        None => m.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max),
    }
}

/// `0.01 / |λ|_max`, capped to [1e-4, 0.5], over the eigenvalues of every
/// matrix given (typically A and A - LΓC).
pub fn default_step(mats: &[&DMatrix<f64>]) -> f64 {
    let rho = mats.iter().map(|m| spectral_radius(m)).fold(0.0, f64::max);
    if rho == 0.0 {
        0.5
    } else {
        (0.01 / rho).clamp(1e-4, 0.5)
    }
}

/// Uniform sample in a box, reproducible from `seed`.
pub fn sample_in_box(bx: &[Interval], seed: u64) -> DVector<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_iterator(bx.len(), bx.iter().map(|iv| if iv.lo < iv.hi { r.random_range(iv.lo..=iv.hi) } else { iv.lo }))
}

/// Uniform grid `0, h, …, T` with `h` shrunk so it divides `T`.
fn grid(t_end: f64, h: f64) -> Result<(usize, f64), ObserverError> {
    if !(h > 0.0 && h.is_finite() && t_end >= h && t_end.is_finite()) {
        return Err(ObserverError::Step(h));
    }
    let steps = (t_end / h - 1e-9).ceil() as usize;
    Ok((steps, t_end / steps as f64))
}

fn rk4<F>(f: &F, t: f64, x: &DVector<f64>, h: f64) -> Result<DVector<f64>, ExprError>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>, ExprError>,
{
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)))?;
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)))?;
    let k4 = f(t + h, &(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

fn outside(bx: &[Interval], x: &[f64]) -> bool {
    bx.iter().zip(x).any(|(iv, &v)| v < iv.lo - 1e-9 || v > iv.hi + 1e-9)
}

/// Integrates the stacked state `[first; second]` and splits it afterwards.
fn integrate<F>(
    n: usize,
    z0: DVector<f64>,
    t_end: f64,
    h: f64,
    kinds: [TrajectoryKind; 2],
    bx: &[Interval],
    f: F,
) -> Result<(Trajectory, Trajectory), ObserverError>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>, ExprError>,
{
    let (steps, h) = grid(t_end, h)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut a = Vec::with_capacity(steps + 1);
    let mut b = Vec::with_capacity(steps + 1);
    let mut violations = 0;
    let mut z = z0;
    for k in 0..=steps {
        let t = k as f64 * h;
        for (idx, kind) in [(0, kinds[0]), (n, kinds[1])] {
            if z.rows(idx, n).iter().any(|v| !v.is_finite()) {
                return Err(ObserverError::BlowUp {
                    kind,
                    t: times.last().copied().unwrap_or(0.0),
                });
            }
        }
        let first: Vec<f64> = z.rows(0, n).iter().copied().collect();
        if kinds[0] == TrajectoryKind::Plant && outside(bx, &first) {
            violations += 1;
        }
        times.push(t);
        a.push(first);
        b.push(z.rows(n, n).iter().copied().collect());
        if k < steps {
            z = rk4(&f, t, &z, h)?;
        }
    }
    let traj = |kind, states, box_violations| Trajectory {
        kind,
        h,
        times: times.clone(),
        states,
        box_violations,
    };
    Ok((traj(kinds[0], a, violations), traj(kinds[1], b, 0)))
}

/// Plant and observer side by side on a shared RK4 grid.
pub fn simulate_coupled(
    model: &NdsModel,
    gain: &ObserverGain,
    x0: &DVector<f64>,
    xhat0: &DVector<f64>,
    t_end: f64,
    h: f64,
) -> Result<(Trajectory, Trajectory), ObserverError> {
    let n = model.n_x;
    if x0.len() != n || xhat0.len() != n {
        return Err(ObserverError::Dimension(format!("initial states must have {n} entries")));
    }
    let k = gain.injection(model);
    let mut z0 = DVector::zeros(2 * n);
    z0.rows_mut(0, n).copy_from(x0);
    z0.rows_mut(n, n).copy_from(xhat0);
    integrate(n, z0, t_end, h, [TrajectoryKind::Plant, TrajectoryKind::Observer], &model.bx, |t, z| {
        let u = model.input_at(t);
        let x = z.rows(0, n).into_owned();
        let xh = z.rows(n, n).into_owned();
        let dx = model.rhs(&x, &u)?;
        let dxh = model.rhs(&xh, &u)? + &k * (&x - &xh);
        let mut d = DVector::zeros(2 * n);
        d.rows_mut(0, n).copy_from(&dx);
        d.rows_mut(n, n).copy_from(&dxh);
        Ok(d)
    })
}

/// Integrates `e' = (A - LΓC) e + f(x) - f(x - e)` directly.
///
/// The plant is re-integrated alongside `e` from the trajectory's initial
/// point and step, so RK4 stages see exact `x` values rather than an
/// interpolation of the stored grid.
pub fn simulate_error(model: &NdsModel, gain: &ObserverGain, e0: &DVector<f64>, plant: &Trajectory) -> Result<Trajectory, ObserverError> {
    let n = model.n_x;
    if e0.len() != n || plant.states.first().is_none_or(|x| x.len() != n) {
        return Err(ObserverError::Dimension(format!("error and plant states must have {n} entries")));
    }
    let ak = &model.a - gain.injection(model);
    let mut z0 = DVector::zeros(2 * n);
    z0.rows_mut(0, n).copy_from_slice(&plant.states[0]);
    z0.rows_mut(n, n).copy_from(e0);
    let t_end = *plant.times.last().unwrap();
    let (_, err) = integrate(n, z0, t_end, plant.h, [TrajectoryKind::Plant, TrajectoryKind::Error], &model.bx, |t, z| {
        let x = z.rows(0, n).into_owned();
        let e = z.rows(n, n).into_owned();
        let dx = model.rhs(&x, &model.input_at(t))?;
        let xh = &x - &e;
        let de = &ak * &e + model.f_eval(x.as_slice())? - model.f_eval(xh.as_slice())?;
        let mut d = DVector::zeros(2 * n);
        d.rows_mut(0, n).copy_from(&dx);
        d.rows_mut(n, n).copy_from(&de);
        Ok(d)
    })?;
    Ok(err)
}

/// `x - x̂` along two coupled trajectories.
pub fn error_of(plant: &Trajectory, observer: &Trajectory) -> Trajectory {
    Trajectory {
        kind: TrajectoryKind::Error,
        h: plant.h,
        times: plant.times.clone(),
        states: plant
            .states
            .iter()
            .zip(&observer.states)
            .map(|(x, xh)| x.iter().zip(xh).map(|(a, b)| a - b).collect())
            .collect(),
        box_violations: 0,
    }
}

/// `V(e) = eᵀ P e` on every grid point.
pub fn lyapunov_values(p: &DMatrix<f64>, err: &Trajectory) -> Vec<f64> {
    err.states
        .iter()
        .map(|e| {
            let e = DVector::from_column_slice(e);
            e.dot(&(p * &e))
        })
        .collect()
}

/// Largest single-step increase of V (≤ 0 when V is non-increasing).
pub fn max_lyapunov_increase(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub t_end: f64,
    pub h: f64,
    pub initial_error_norm: f64,
    pub final_error_norm: f64,
    pub relative_final_error: f64,
    /// `-ln(‖e(T)‖ / ‖e(0)‖) / T`; `None` when either norm is zero.
    pub decay_rate: Option<f64>,
    pub max_lyapunov_increase: Option<f64>,
    pub plant_box_violations: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn summarize(plant: &Trajectory, err: &Trajectory, p: Option<&DMatrix<f64>>) -> SimulationSummary {
    let e0 = norm(&err.states[0]);
    let et = norm(err.last());
    let t_end = *err.times.last().unwrap();
    SimulationSummary {
        t_end,
        h: err.h,
        initial_error_norm: e0,
        final_error_norm: et,
        relative_final_error: if e0 > 0.0 { et / e0 } else { et },
        decay_rate: (e0 > 0.0 && et > 0.0).then(|| -(et / e0).ln() / t_end),
        max_lyapunov_increase: p.map(|p| max_lyapunov_increase(&lyapunov_values(p, err))),
        plant_box_violations: plant.box_violations,
    }
}

/// The solved multiplier: κ for the Lipschitz LMI, Λ for the bounded-Jacobian one.
#[derive(Clone, Debug)]
pub enum Multiplier {
    Kappa(f64),
    Lambda(DMatrix<f64>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateReport {
    pub lmi_max_eig: f64,
    pub p_min_eig: f64,
}

impl CertificateReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.lmi_max_eig <= tol && self.p_min_eig > 0.0
    }
}

/// Rebuilds the observer LMI from `Y = P L` and the solved multiplier.
pub fn check_certificate(
    model: &NdsModel,
    params: &NonlinearityParams,
    variant: Variant,
    gain: &ObserverGain,
    p: &DMatrix<f64>,
    mult: &Multiplier,
    w: Option<&DMatrix<f64>>,
) -> Result<CertificateReport, ObserverError> {
    let c = model.c();
    let gm = expand_gamma(&gain.gamma, &model.partition.y);
    let y = p * &gain.l;
    let m = match (variant, mult) {
        (Variant::Lipschitz, Multiplier::Kappa(k)) => {
            let beta = params.beta.ok_or(ObserverError::Missing("beta"))?;
            lipschitz_lmi(&model.a, &c, &gm, beta, p, &y, *k)
        }
        (Variant::BoundedJacobian, Multiplier::Lambda(lam)) => {
            let (lo, hi) = match (&params.jac_lo, &params.jac_hi) {
                (Some(lo), Some(hi)) => (lo, hi),
                _ => return Err(ObserverError::Missing("Jacobian bounds")),
            };
            let w = w.ok_or(ObserverError::Missing("W"))?;
            bounded_jacobian_lmi(&model.a, &c, w, lo, hi, p, &(&y * &gm), lam)
        }
        (Variant::Lipschitz, _) => return Err(ObserverError::Missing("kappa")),
        (Variant::BoundedJacobian, _) => return Err(ObserverError::Missing("Lambda")),
    };
    Ok(CertificateReport {
        lmi_max_eig: max_eigenvalue(&m),
        p_min_eig: min_eigenvalue(p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::NonlinearityParams;

    fn eye(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n)
    }

    fn zero_gain(m: &NdsModel) -> ObserverGain {
        ObserverGain::new(DMatrix::zeros(m.n_x, m.n_y()), vec![false; m.n_nodes()], m).unwrap()
    }

    #[test]
    fn identical_initial_conditions_stay_identical() {
        let m = NdsModel::linear_unit(-eye(2), &[1.0, 1.0], 1.0);
        let x0 = DVector::from_vec(vec![0.3, -0.2]);
        let (x, xh) = simulate_coupled(&m, &zero_gain(&m), &x0, &x0, 1.0, 0.01).unwrap();
        assert_eq!(x.states, xh.states);
    }

    #[test]
    fn linear_decay_matches_exponential() {
        let m = NdsModel::linear_unit(-eye(1), &[1.0], 1.0);
        let x0 = DVector::from_vec(vec![0.5]);
        let (x, xh) = simulate_coupled(&m, &zero_gain(&m), &x0, &DVector::zeros(1), 2.0, 1e-3).unwrap();
        let e = error_of(&x, &xh);
        for (t, v) in e.times.iter().zip(&e.states) {
            assert!((v[0] - 0.5 * (-t).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_error_is_an_equilibrium() {
        let m = NdsModel::linear_unit(-eye(2), &[1.0, 1.0], 1.0);
        let x0 = DVector::from_vec(vec![0.3, 0.1]);
        let (x, _) = simulate_coupled(&m, &zero_gain(&m), &x0, &x0, 1.0, 0.01).unwrap();
        let e = simulate_error(&m, &zero_gain(&m), &DVector::zeros(2), &x).unwrap();
        assert!(e.states.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn leaking_gain_rejected() {
        let m = NdsModel::linear_unit(-eye(2), &[1.0, 1.0], 1.0);
        let r = ObserverGain::new(eye(2), vec![true, false], &m);
        assert!(matches!(r, Err(ObserverError::LeakingColumn { column: 1, sensor: 1 })));
    }

    #[test]
    fn zero_system_certificate_by_hand() {
        // A = 0, C = I, L = P = I, β = 0: [-2I, I; I, -I] has λ_max = (-3 + √5)/2.
        let m = NdsModel::linear_unit(DMatrix::zeros(2, 2), &[1.0, 1.0], 1.0);
        let g = ObserverGain::new(eye(2), vec![true, true], &m).unwrap();
        let params = NonlinearityParams::analytic_lipschitz(0.0);
        let r = check_certificate(&m, &params, Variant::Lipschitz, &g, &eye(2), &Multiplier::Kappa(1.0), None).unwrap();
        assert!((r.lmi_max_eig - (-3.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
        assert!(r.passes(1e-9));
    }

    #[test]
    fn step_rule() {
        assert_eq!(default_step(&[&(eye(2) * -2.0)]), 0.005);
        assert_eq!(default_step(&[&(eye(1) * -1e6)]), 1e-4);
        assert_eq!(default_step(&[&DMatrix::zeros(2, 2)]), 0.5);
    }

    #[test]
    fn grid_divides_horizon() {
        let (n, h) = grid(1.0, 0.3).unwrap();
        assert_eq!(n, 4);
        assert!((h - 0.25).abs() < 1e-15);
        assert!(grid(0.1, 0.3).is_err());
    }
}
