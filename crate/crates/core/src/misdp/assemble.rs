//! Builds the SDPs behind the placement problem.
//!
//! Variables are laid out as P (upper triangle, row by row), Q, Y (both
//! column-major), κ or Λ (row-major), then γ. `μ I ⪯ P` closes `P ≻ 0`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::mccormick::{build_mccormick, McCormickSystem};
use super::{MisdpError, PlacementProblem, Variant};
use crate::sdp::{LmiBuilder, SdpProblem};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VarLayout {
    pub n_x: usize,
    pub n_y: usize,
    pub n_sensors: usize,
    p_index: Vec<usize>,
    q0: Option<usize>,
    y0: usize,
    pub kappa: Option<usize>,
    lambda0: Option<usize>,
    gamma0: Option<usize>,
}

impl VarLayout {
    pub fn p(&self, i: usize, j: usize) -> usize {
        let (a, b) = (i.min(j), i.max(j));
        self.p_index[a * self.n_x + b]
    }
    pub fn q(&self, i: usize, j: usize) -> Option<usize> {
        self.q0.map(|q0| q0 + j * self.n_x + i)
    }
    pub fn y(&self, i: usize, j: usize) -> usize {
        self.y0 + j * self.n_x + i
    }
    pub fn lambda(&self, i: usize, j: usize) -> Option<usize> {
        self.lambda0.map(|l0| l0 + i * self.n_x + j)
    }
    pub fn gamma(&self, s: usize) -> Option<usize> {
        self.gamma0.map(|g0| g0 + s)
    }
}

/// Continuous blocks read back from a solution vector.
#[derive(Clone, Debug)]
pub struct Extracted {
    pub p: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub kappa: Option<f64>,
    pub lambda: Option<DMatrix<f64>>,
    pub gamma: Vec<f64>,
}

fn layout(p: &mut SdpProblem, n_x: usize, n_y: usize, n_sensors: usize, with_q: bool, kappa: bool, lambda: bool, gamma: bool) -> VarLayout {
    let mut p_index = vec![usize::MAX; n_x * n_x];
    for i in 0..n_x {
        for j in i..n_x {
            p_index[i * n_x + j] = p.add_var(format!("P[{i},{j}]"), None, None);
        }
    }
    let q0 = with_q.then(|| {
        let q0 = p.n_vars();
        for j in 0..n_y {
            for i in 0..n_x {
                p.add_var(format!("Q[{i},{j}]"), None, None);
            }
        }
        q0
    });
    let y0 = p.n_vars();
    for j in 0..n_y {
        for i in 0..n_x {
            p.add_var(format!("Y[{i},{j}]"), None, None);
        }
    }
    let kappa = kappa.then(|| p.add_var("kappa", None, None));
    let lambda0 = lambda.then(|| {
        let l0 = p.n_vars();
        for i in 0..n_x {
            for j in 0..n_x {
                p.add_var(format!("Lambda[{i},{j}]"), Some(0.0), None);
            }
        }
        l0
    });
    let gamma0 = gamma.then(|| {
        let g0 = p.n_vars();
        for s in 0..n_sensors {
            p.add_var(format!("gamma[{s}]"), Some(0.0), Some(1.0));
        }
        g0
    });
    VarLayout {
        n_x,
        n_y,
        n_sensors,
        p_index,
        q0,
        y0,
        kappa,
        lambda0,
        gamma0,
    }
}

fn positivity_block(lay: &VarLayout, mu: f64) -> LmiBuilder {
    let n = lay.n_x;
    let mut b = LmiBuilder::new("P >= mu I", n);
    for i in 0..n {
        b.add_const(i, i, mu);
        for j in 0..n {
            b.add(i, j, lay.p(i, j), -1.0);
        }
    }
    b
}

/// Adds `AᵀP + PA` to the top-left n×n corner.
fn lyapunov_terms(b: &mut LmiBuilder, lay: &VarLayout, a: &DMatrix<f64>) {
    let n = lay.n_x;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if a[(k, i)] != 0.0 {
                    b.add(i, j, lay.p(k, j), a[(k, i)]);
                }
                if a[(k, j)] != 0.0 {
                    b.add(i, j, lay.p(i, k), a[(k, j)]);
                }
            }
        }
    }
}

/// Adds `-GC - CᵀGᵀ` where `G_il = scale(l) · var(i, l)`.
fn gain_terms(b: &mut LmiBuilder, lay: &VarLayout, c: &DMatrix<f64>, var: impl Fn(usize, usize) -> usize, scale: impl Fn(usize) -> f64) {
    let n = lay.n_x;
    for i in 0..n {
        for j in 0..n {
            for l in 0..lay.n_y {
                let s = scale(l);
                if s == 0.0 {
                    continue;
                }
                if c[(l, j)] != 0.0 {
                    b.add(i, j, var(i, l), -s * c[(l, j)]);
                }
                if c[(l, i)] != 0.0 {
                    b.add(i, j, var(j, l), -s * c[(l, i)]);
                }
            }
        }
    }
}

/// `[AᵀP + PA - GC - CᵀGᵀ + κβ²I, P; P, -κI]`.
fn lipschitz_block(
    lay: &VarLayout,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    beta: f64,
    var: impl Fn(usize, usize) -> usize,
    scale: impl Fn(usize) -> f64,
) -> LmiBuilder {
    let n = lay.n_x;
    let kappa = lay.kappa.expect("Lipschitz layout has kappa");
    let mut b = LmiBuilder::new("observer", 2 * n);
    lyapunov_terms(&mut b, lay, a);
    gain_terms(&mut b, lay, c, var, scale);
    for i in 0..n {
        b.add(i, i, kappa, beta * beta);
        b.add(n + i, n + i, kappa, -1.0);
        for j in 0..n {
            b.add_sym(i, n + j, lay.p(i, j), 1.0);
        }
    }
    b
}

fn jacobian_centers(lo: &[Vec<f64>], hi: &[Vec<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = lo.len();
    let c_lo = DMatrix::from_fn(n, n, |i, j| 0.5 * (lo[i][j] + hi[i][j]));
    let c_hi = DMatrix::from_fn(n, n, |i, j| 0.5 * (lo[i][j] - hi[i][j]));
    (c_lo, c_hi)
}

/// `diag_j(Σ_i Λ_ij (c̄_ij² - c̲_ij²))`.
pub fn theta1(lambda: &DMatrix<f64>, c_lo: &DMatrix<f64>, c_hi: &DMatrix<f64>) -> DMatrix<f64> {
    let n = lambda.nrows();
    DMatrix::from_fn(n, n, |r, j| {
        if r != j {
            0.0
        } else {
            (0..n).map(|i| lambda[(i, j)] * (c_hi[(i, j)].powi(2) - c_lo[(i, j)].powi(2))).sum()
        }
    })
}

/// n²×n with entry `(i·n + j, j) = Λ_ij c̲_ij`.
pub fn theta2(lambda: &DMatrix<f64>, c_lo: &DMatrix<f64>) -> DMatrix<f64> {
    let n = lambda.nrows();
    let mut t = DMatrix::zeros(n * n, n);
    for i in 0..n {
        for j in 0..n {
            t[(i * n + j, j)] = lambda[(i, j)] * c_lo[(i, j)];
        }
    }
    t
}

/// Bottom-right block as assembled: `-diag(Λ)` in row-major order.
pub fn theta3(lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let n = lambda.nrows();
    DMatrix::from_fn(n * n, n * n, |r, c| if r == c { -lambda[(r / n, r % n)] } else { 0.0 })
}

/// `W = I_n ⊗ 1ᵀ_n`, the default multiplier selecting row i of P for each `(i, j)`.
pub fn default_w(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n * n, |k, c| if c / n == k { 1.0 } else { 0.0 })
}

fn bounded_jacobian_block(prob: &PlacementProblem, lay: &VarLayout, c: &DMatrix<f64>) -> Result<LmiBuilder, MisdpError> {
    let n = lay.n_x;
    let (lo, hi) = prob.jacobian_bounds()?;
    let w = prob.w.as_ref().ok_or(MisdpError::MissingW)?;
    let (c_lo, c_hi) = jacobian_centers(lo, hi);
    let mut b = LmiBuilder::new("observer", n + n * n);
    lyapunov_terms(&mut b, lay, &prob.model.a);
    let q = |i, l| lay.q(i, l).expect("MISDP layout has Q");
    gain_terms(&mut b, lay, c, q, |_| 1.0);
    for i in 0..n {
        for j in 0..n {
            let lam = lay.lambda(i, j).expect("layout has Lambda");
            let r = n + i * n + j;
            b.add(j, j, lam, c_hi[(i, j)].powi(2) - c_lo[(i, j)].powi(2));
            b.add_sym(r, j, lam, c_lo[(i, j)]);
            b.add(r, r, lam, -1.0);
            // (WᵀP)_{r, col} = Σ_k W_{k, r} P_{k, col}.
            for k in 0..n {
                let wk = w[(k, i * n + j)];
                if wk != 0.0 {
                    for col in 0..n {
                        b.add_sym(r, col, lay.p(k, col), wk);
                    }
                }
            }
        }
    }
    Ok(b)
}

/// Effective fixing after merging node fixings with forced sensors.
fn merged_fixing(prob: &PlacementProblem, fix: &[Option<bool>]) -> (Vec<Option<bool>>, bool) {
    let mut out = fix.to_vec();
    let mut conflict = false;
    for &s in &prob.logistic.force_on {
        conflict |= out[s] == Some(false);
        out[s] = Some(true);
    }
    for &s in &prob.logistic.force_off {
        conflict |= out[s] == Some(true);
        out[s] = Some(false);
    }
    (out, conflict)
}

/// McCormick rows, γ bounds and (optionally) the cardinality rows.
fn add_placement_rows(p: &mut SdpProblem, lay: &VarLayout, sys: &McCormickSystem, prob: &PlacementProblem, fix: &[Option<bool>], logistic: bool) {
    for r in &sys.rows {
        let mut coeffs = Vec::with_capacity(3);
        if r.q != 0.0 {
            coeffs.push((lay.q(r.i, r.j).expect("MISDP layout has Q"), r.q));
        }
        if r.y != 0.0 {
            coeffs.push((lay.y(r.i, r.j), r.y));
        }
        if r.gamma != 0.0 {
            coeffs.push((lay.gamma(r.sensor).expect("MISDP layout has gamma"), r.gamma));
        }
        if r.kappa != 0.0 {
            match lay.kappa {
                Some(k) => coeffs.push((k, r.kappa)),
                None => continue,
            }
        }
        p.add_row(coeffs, r.rhs);
    }
    let (fix, conflict) = merged_fixing(prob, fix);
    if conflict {
        p.add_row(Vec::new(), -1.0);
    }
    for (s, f) in fix.iter().enumerate() {
        let g = lay.gamma(s).expect("MISDP layout has gamma");
        if let Some(v) = f {
            p.fix(g, if *v { 1.0 } else { 0.0 });
        }
        p.objective[g] = prob.weights[s];
    }
    if logistic {
        let all: Vec<(usize, f64)> = (0..lay.n_sensors).map(|s| (lay.gamma(s).unwrap(), 1.0)).collect();
        p.add_row(all.clone(), prob.logistic.k_max as f64);
        if prob.logistic.k_min > 0 {
            p.add_row(all.into_iter().map(|(k, a)| (k, -a)).collect(), -(prob.logistic.k_min as f64));
        }
    }
}

pub(crate) fn assemble_with(prob: &PlacementProblem, fix: &[Option<bool>], logistic: bool) -> Result<(SdpProblem, VarLayout), MisdpError> {
    prob.validate()?;
    let m = &prob.model;
    let c = m.c();
    let sys = build_mccormick(&prob.y_lo, &prob.y_hi, &m.partition.y)?;
    let mut p = SdpProblem::default();
    let bj = prob.variant == Variant::BoundedJacobian;
    let lay = layout(&mut p, m.n_x, m.n_y(), m.n_nodes(), true, !bj, bj, true);
    p.lmis.push(positivity_block(&lay, prob.settings.mu).finish());
    let block = if bj {
        bounded_jacobian_block(prob, &lay, &c)?
    } else {
        let q = |i, l| lay.q(i, l).unwrap();
        lipschitz_block(&lay, &m.a, &c, prob.beta()?, q, |_| 1.0)
    };
    p.lmis.push(block.finish());
    add_placement_rows(&mut p, &lay, &sys, prob, fix, logistic);
    Ok((p, lay))
}

/// The McCormick-relaxed Lipschitz problem at a node: `fix[s]` pins γ_s, `None` relaxes it to [0, 1].
pub fn assemble_relaxed(prob: &PlacementProblem, fix: &[Option<bool>]) -> Result<(SdpProblem, VarLayout), MisdpError> {
    if prob.variant != Variant::Lipschitz {
        return Err(MisdpError::Variant("assemble_relaxed needs the Lipschitz variant"));
    }
    assemble_with(prob, fix, true)
}

/// The bounded-Jacobian observer LMI with `YC` replaced by `QC`, `Q = YΓ(γ)`.
pub fn assemble_bounded_jacobian(prob: &PlacementProblem, fix: &[Option<bool>]) -> Result<(SdpProblem, VarLayout), MisdpError> {
    if prob.variant != Variant::BoundedJacobian {
        return Err(MisdpError::Variant("assemble_bounded_jacobian needs the bounded-Jacobian variant"));
    }
    assemble_with(prob, fix, true)
}

/// The exact bilinear problem for a fixed binary γ: `Q = YΓ(γ)` substituted directly, no McCormick rows.
pub fn assemble_exact(prob: &PlacementProblem, gamma: &[bool]) -> Result<(SdpProblem, VarLayout), MisdpError> {
    if prob.variant != Variant::Lipschitz {
        return Err(MisdpError::Variant("assemble_exact needs the Lipschitz variant"));
    }
    prob.validate()?;
    let m = &prob.model;
    let c = m.c();
    let sys = build_mccormick(&prob.y_lo, &prob.y_hi, &m.partition.y)?;
    let mut p = SdpProblem::default();
    let lay = layout(&mut p, m.n_x, m.n_y(), m.n_nodes(), false, true, false, false);
    p.lmis.push(positivity_block(&lay, prob.settings.mu).finish());
    let col = &sys.column_sensor;
    let y = |i, l| lay.y(i, l);
    let on = |l: usize| if gamma[col[l]] { 1.0 } else { 0.0 };
    p.lmis.push(lipschitz_block(&lay, &m.a, &c, prob.beta()?, y, on).finish());
    for j in 0..lay.n_y {
        for i in 0..lay.n_x {
            p.add_row(vec![(lay.y(i, j), 1.0)], prob.y_hi[(i, j)]);
            p.add_row(vec![(lay.y(i, j), -1.0)], -prob.y_lo[(i, j)]);
        }
    }
    p.add_row(vec![(lay.kappa.unwrap(), -1.0)], 0.0);
    if !prob.logistic.contains(gamma) {
        p.add_row(Vec::new(), -1.0);
    }
    Ok((p, lay))
}

pub fn extract(lay: &VarLayout, z: &[f64]) -> Extracted {
    let n = lay.n_x;
    let p = DMatrix::from_fn(n, n, |i, j| z[lay.p(i, j)]);
    let y = DMatrix::from_fn(n, lay.n_y, |i, j| z[lay.y(i, j)]);
    let gamma: Vec<f64> = (0..lay.n_sensors).map(|s| lay.gamma(s).map_or(f64::NAN, |g| z[g])).collect();
    let q = match lay.q(0, 0) {
        Some(_) => DMatrix::from_fn(n, lay.n_y, |i, j| z[lay.q(i, j).unwrap()]),
        None => y.clone(),
    };
    Extracted {
        p,
        y,
        q,
        kappa: lay.kappa.map(|k| z[k]),
        lambda: lay.lambda(0, 0).map(|_| DMatrix::from_fn(n, n, |i, j| z[lay.lambda(i, j).unwrap()])),
        gamma,
    }
}

/// The Lipschitz observer matrix `[AᵀP + PA + κβ²I - YΓC - CᵀΓYᵀ, P; P, -κI]`.
pub fn lipschitz_lmi(a: &DMatrix<f64>, c: &DMatrix<f64>, gamma_mat: &DMatrix<f64>, beta: f64, p: &DMatrix<f64>, y: &DMatrix<f64>, kappa: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let ygc = y * gamma_mat * c;
    let tl = a.transpose() * p + p * a + DMatrix::identity(n, n) * (kappa * beta * beta) - &ygc - ygc.transpose();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&tl);
    m.view_mut((0, n), (n, n)).copy_from(p);
    m.view_mut((n, 0), (n, n)).copy_from(p);
    m.view_mut((n, n), (n, n)).copy_from(&(DMatrix::identity(n, n) * -kappa));
    m
}

/// The bounded-Jacobian matrix evaluated directly from its blocks.
pub fn bounded_jacobian_lmi(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    w: &DMatrix<f64>,
    jac_lo: &[Vec<f64>],
    jac_hi: &[Vec<f64>],
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = a.nrows();
    let (c_lo, c_hi) = jacobian_centers(jac_lo, jac_hi);
    let qc = q * c;
    let tl = a.transpose() * p + p * a - &qc - qc.transpose() + theta1(lambda, &c_lo, &c_hi);
    let bl = w.transpose() * p + theta2(lambda, &c_lo);
    let d = n + n * n;
    let mut m = DMatrix::zeros(d, d);
    m.view_mut((0, 0), (n, n)).copy_from(&tl);
    m.view_mut((n, 0), (n * n, n)).copy_from(&bl);
    m.view_mut((0, n), (n, n * n)).copy_from(&bl.transpose());
    m.view_mut((n, n), (n * n, n * n)).copy_from(&theta3(lambda));
    m
}
