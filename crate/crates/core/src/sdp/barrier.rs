//! Primal log-det barrier path following.
//!
//! Phase I minimizes `t` subject to `F_b(w) ⪯ tI` and `a·w ≤ g + t`, with
//! the floor `t ≥ -1` keeping it bounded. Any iterate with `t < 0` is a
//! strictly feasible start for Phase II, which follows the central path of
//! `τ c·w - Σ log det(-F_b) - Σ log(g - a·w)` until `ν/τ` meets the gap.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::presolve::{presolve, Presolved, RBlock, RRow, Reduced};
use super::{verify, SdpProblem, SdpSettings, SdpSolution, SdpStatus};

/// Growth factor of τ between centerings.
const MU: f64 = 10.0;
/// Centering stops once half the squared Newton decrement is below this.
const NEWTON_TOL: f64 = 1e-9;
/// A failed line search is accepted as convergence below this decrement.
const STALL_TOL: f64 = 1e-6;
const ARMIJO: f64 = 0.01;
const MAX_HALVINGS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseOneOutcome {
    StrictlyFeasible,
    Infeasible,
    Marginal,
    BudgetExceeded,
    NumericalTrouble,
}

/// Phase I result. `t` is the last iterate (an upper bound on the optimum)
/// and `lower_bound` the certified lower bound `t - ν/τ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseOne {
    pub outcome: PhaseOneOutcome,
    pub t: f64,
    pub lower_bound: f64,
    pub z: Vec<f64>,
    pub newton_steps: usize,
    pub message: String,
}

struct Core<'a> {
    n: usize,
    blocks: &'a [RBlock],
    rows: &'a [RRow],
    c: &'a [f64],
}

enum Center {
    Converged,
    Early,
    Budget,
    Trouble(String),
}

fn slack(b: &RBlock, x: &[f64]) -> DMatrix<f64> {
    let mut s = -&b.constant;
    for (k, e) in &b.terms {
        let xk = x[*k];
        if xk != 0.0 {
            for &(i, j, v) in e {
                s[(i, j)] -= xk * v;
            }
        }
    }
    s
}

fn row_slack(r: &RRow, x: &[f64]) -> f64 {
    r.rhs - r.coeffs.iter().map(|&(k, a)| a * x[k]).sum::<f64>()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Core<'_> {
    /// Barrier value alone, `None` outside the open feasible set.
    fn barrier(&self, x: &[f64]) -> Option<f64> {
        let mut f = 0.0;
        for b in self.blocks {
            let ch = Cholesky::new(slack(b, x))?;
            f -= 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        for r in self.rows {
            let s = row_slack(r, x);
            if !(s > 0.0) {
                return None;
            }
            f -= s.ln();
        }
        f.is_finite().then_some(f)
    }

    /// Gradient and Hessian of the barrier alone.
    fn derivatives(&self, x: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n = self.n;
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        for b in self.blocks {
            let w = Cholesky::new(slack(b, x))?.inverse();
            let d = b.dim;
            let terms = &b.terms;
            // Row a of the Hessian block: tr(W M_k W M_l) for l at or after a.
            let parts: Vec<(f64, Vec<f64>)> = (0..terms.len())
                .into_par_iter()
                .map(|a| {
                    let ea = &terms[a].1;
                    let mut gk = 0.0;
                    let mut t = DMatrix::<f64>::zeros(d, d);
                    for &(i, j, v) in ea {
                        gk += v * w[(j, i)];
                        for q in 0..d {
                            let wjq = v * w[(j, q)];
                            if wjq != 0.0 {
                                for p in 0..d {
                                    t[(p, q)] += w[(p, i)] * wjq;
                                }
                            }
                        }
                    }
                    let row = terms[a..]
                        .iter()
                        .map(|(_, el)| el.iter().map(|&(c, dd, u)| u * t[(dd, c)]).sum())
                        .collect();
                    (gk, row)
                })
                .collect();
            for (a, (gk, row)) in parts.into_iter().enumerate() {
                let k = terms[a].0;
                g[k] += gk;
                for (off, hv) in row.into_iter().enumerate() {
                    let l = terms[a + off].0;
                    h[(k, l)] += hv;
                    if k != l {
                        h[(l, k)] += hv;
                    }
                }
            }
        }
        for r in self.rows {
            let s = row_slack(r, x);
            if !(s > 0.0) {
                return None;
            }
            for &(k, a) in &r.coeffs {
                g[k] += a / s;
                for &(l, b) in &r.coeffs {
                    h[(k, l)] += a * b / (s * s);
                }
            }
        }
        Some((g, h))
    }

    fn factor(h: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
        if let Some(ch) = Cholesky::new(h.clone()) {
            return Some(ch);
        }
        let scale = h.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for e in [1e-12, 1e-10, 1e-8, 1e-6] {
            let mut hr = h.clone();
            for i in 0..hr.nrows() {
                hr[(i, i)] += e * scale;
            }
            if let Some(ch) = Cholesky::new(hr) {
                return Some(ch);
            }
        }
        None
    }

    /// τ minimizing the Newton-norm of `τ c + ∇φ` at `x`.
    fn initial_tau(&self, x: &[f64]) -> f64 {
        let Some((g, h)) = self.derivatives(x) else {
            return 1.0;
        };
        let Some(ch) = Self::factor(&h) else {
            return 1.0;
        };
        let c = DVector::from_column_slice(self.c);
        let hc = ch.solve(&c);
        let chc = c.dot(&hc);
        let tau = -g.dot(&hc) / chc;
        if chc > 0.0 && tau.is_finite() {
            tau.clamp(1e-6, 1e6)
        } else {
            1.0
        }
    }

    fn center(
        &self,
        x: &mut [f64],
        tau: f64,
        steps: &mut usize,
        max_steps: usize,
        early: &dyn Fn(&[f64]) -> bool,
    ) -> Center {
        loop {
            if early(x) {
                return Center::Early;
            }
            if *steps >= max_steps {
                return Center::Budget;
            }
            let Some((mut g, h)) = self.derivatives(x) else {
                return Center::Trouble("iterate left the interior".into());
            };
            for (gi, ci) in g.iter_mut().zip(self.c) {
                *gi += tau * ci;
            }
            let Some(ch) = Self::factor(&h) else {
                return Center::Trouble("Newton system is not positive definite".into());
            };
            let d = -ch.solve(&g);
            *steps += 1;
            let lam2 = -g.dot(&d);
            if !lam2.is_finite() {
                return Center::Trouble("non-finite Newton step".into());
            }
            if lam2 / 2.0 <= NEWTON_TOL {
                return Center::Converged;
            }
            let f0 = self.barrier(x).expect("iterate is interior");
            let cd = tau * dot(self.c, d.as_slice());
            let slope = g.dot(&d);
            let mut alpha = 1.0;
            let mut accepted = false;
            let mut trial = x.to_vec();
            for _ in 0..MAX_HALVINGS {
                for (i, t) in trial.iter_mut().enumerate() {
                    *t = x[i] + alpha * d[i];
                }
                if let Some(f1) = self.barrier(&trial) {
                    if alpha * cd + (f1 - f0) <= ARMIJO * alpha * slope {
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                return if lam2 < STALL_TOL {
                    Center::Converged
                } else {
                    Center::Trouble("line search failed".into())
                };
            }
            x.copy_from_slice(&trial);
        }
    }
}

fn phase_one_problem(r: &Reduced) -> (Vec<RBlock>, Vec<RRow>, Vec<f64>) {
    let t = r.n;
    let blocks = r
        .blocks
        .iter()
        .map(|b| {
            let mut b = b.clone();
            b.terms.push((t, (0..b.dim).map(|i| (i, i, -1.0)).collect()));
            b
        })
        .collect();
    let mut rows: Vec<RRow> = r
        .rows
        .iter()
        .map(|row| {
            let mut row = row.clone();
            row.coeffs.push((t, -1.0));
            row
        })
        .collect();
    rows.push(RRow {
        coeffs: vec![(t, -1.0)],
        rhs: 1.0,
    });
    let mut c = vec![0.0; r.n + 1];
    c[t] = 1.0;
    (blocks, rows, c)
}

/// Phase I on a presolved problem. With `accurate` the optimum is resolved
/// to the gap tolerance even after infeasibility is already certain.
fn phase_one(r: &Reduced, st: &SdpSettings, accurate: bool) -> (PhaseOne, Vec<f64>) {
    let (blocks, rows, c) = phase_one_problem(r);
    let core = Core {
        n: r.n + 1,
        blocks: &blocks,
        rows: &rows,
        c: &c,
    };
    let nu = core.blocks.iter().map(|b| b.dim).sum::<usize>() as f64 + core.rows.len() as f64;
    let ti = r.n;

    let mut x = vec![0.0; r.n + 1];
    let viol = r
        .blocks
        .iter()
        .map(|b| super::max_eigenvalue(&(-slack(b, &x))))
        .chain(r.rows.iter().map(|row| -row_slack(row, &x)))
        .fold(f64::NEG_INFINITY, f64::max);
    x[ti] = viol.max(-0.5) + 1.0;

    let mut steps = 0;
    let mut tau = core.initial_tau(&x);
    let early = |x: &[f64]| x[ti] < 0.0;
    let gap_stop = st.gap_tol.min(0.1 * st.infeas_margin);
    let finish = |outcome, x: &[f64], tau: f64, steps, message: String| {
        let t = x[ti];
        let lb = if tau > 0.0 { t - nu / tau } else { f64::NEG_INFINITY };
        (
            PhaseOne {
                outcome,
                t,
                lower_bound: lb,
                z: r.lift(&x[..ti]),
                newton_steps: steps,
                message,
            },
            x[..ti].to_vec(),
        )
    };
    loop {
        match core.center(&mut x, tau, &mut steps, st.max_newton, &early) {
            Center::Early => return finish(PhaseOneOutcome::StrictlyFeasible, &x, tau, steps, String::new()),
            Center::Budget => {
                return finish(
                    PhaseOneOutcome::BudgetExceeded,
                    &x,
                    tau,
                    steps,
                    "Phase I Newton budget exhausted".into(),
                )
            }
            Center::Trouble(m) => return finish(PhaseOneOutcome::NumericalTrouble, &x, tau, steps, m),
            Center::Converged => {}
        }
        let t = x[ti];
        let gap = nu / tau;
        if t < 0.0 {
            return finish(PhaseOneOutcome::StrictlyFeasible, &x, tau, steps, String::new());
        }
        let converged = gap <= gap_stop * (1.0 + t.abs());
        if t - gap > st.infeas_margin && (!accurate || converged) {
            return finish(PhaseOneOutcome::Infeasible, &x, tau, steps, String::new());
        }
        if converged {
            let outcome = if t <= st.infeas_margin {
                PhaseOneOutcome::Marginal
            } else {
                PhaseOneOutcome::Infeasible
            };
            return finish(outcome, &x, tau, steps, String::new());
        }
        tau *= MU;
    }
}

fn inconsistent(n: usize, violation: f64, what: String, st: &SdpSettings) -> PhaseOne {
    PhaseOne {
        outcome: if violation > st.infeas_margin {
            PhaseOneOutcome::Infeasible
        } else {
            PhaseOneOutcome::Marginal
        },
        t: violation,
        lower_bound: violation,
        z: vec![0.0; n],
        newton_steps: 0,
        message: format!("presolve: {what} is contradictory"),
    }
}

/// Phase I alone, resolved to the gap tolerance.
pub fn feasibility_phase(p: &SdpProblem, st: &SdpSettings) -> PhaseOne {
    match presolve(p, st) {
        Presolved::Inconsistent { violation, what } => inconsistent(p.n_vars(), violation, what, st),
        Presolved::Reduced(r) => phase_one(&r, st, true).0,
    }
}

fn solution(p: &SdpProblem, status: SdpStatus, z: Vec<f64>, gap: f64, t: f64, steps: usize, message: String) -> SdpSolution {
    let residual = if z.len() == p.n_vars() {
        verify(p, &z).max_residual()
    } else {
        f64::INFINITY
    };
    SdpSolution {
        status,
        objective: p.objective_value(&z),
        z,
        residual,
        gap,
        phase_one_t: t,
        newton_steps: steps,
        message,
    }
}

pub fn solve(p: &SdpProblem, st: &SdpSettings) -> SdpSolution {
    let r = match presolve(p, st) {
        Presolved::Inconsistent { violation, what } => {
            let ph = inconsistent(p.n_vars(), violation, what, st);
            let status = match ph.outcome {
                PhaseOneOutcome::Marginal => SdpStatus::Marginal,
                _ => SdpStatus::Infeasible,
            };
            return solution(p, status, ph.z, f64::INFINITY, ph.t, 0, ph.message);
        }
        Presolved::Reduced(r) => r,
    };
    let (ph, mut w) = phase_one(&r, st, false);
    let status = match ph.outcome {
        PhaseOneOutcome::StrictlyFeasible => None,
        PhaseOneOutcome::Infeasible => Some(SdpStatus::Infeasible),
        PhaseOneOutcome::Marginal => Some(SdpStatus::Marginal),
        PhaseOneOutcome::BudgetExceeded => Some(SdpStatus::BudgetExceeded),
        PhaseOneOutcome::NumericalTrouble => Some(SdpStatus::NumericalTrouble),
    };
    if let Some(s) = status {
        return solution(p, s, ph.z, f64::INFINITY, ph.t, ph.newton_steps, ph.message);
    }

    let core = Core {
        n: r.n,
        blocks: &r.blocks,
        rows: &r.rows,
        c: &r.c,
    };
    let nu = r.nu();
    let mut steps = 0;
    let never = |_: &[f64]| false;
    let total = |steps: usize| ph.newton_steps + steps;

    if r.c.iter().all(|&c| c == 0.0) {
        // Pure feasibility: move to the analytic center for slack. The Phase I
        // point is already feasible, so a stalled centering is still a success.
        let mut wc = w.clone();
        if let Center::Converged = core.center(&mut wc, 0.0, &mut steps, st.max_newton, &never) {
            w = wc;
        } else if core.barrier(&wc).is_some() {
            w = wc;
        }
        return solution(p, SdpStatus::Optimal, r.lift(&w), 0.0, ph.t, total(steps), String::new());
    }

    let mut tau = core.initial_tau(&w);
    loop {
        match core.center(&mut w, tau, &mut steps, st.max_newton, &never) {
            Center::Converged | Center::Early => {}
            Center::Budget => {
                return solution(
                    p,
                    SdpStatus::BudgetExceeded,
                    r.lift(&w),
                    nu / tau,
                    ph.t,
                    total(steps),
                    "Phase II Newton budget exhausted".into(),
                )
            }
            Center::Trouble(m) => {
                return solution(p, SdpStatus::NumericalTrouble, r.lift(&w), nu / tau, ph.t, total(steps), m)
            }
        }
        let obj = dot(&r.c, &w) + r.c0;
        let gap = nu / tau;
        if gap <= st.gap_tol * (1.0 + obj.abs()) {
            return solution(p, SdpStatus::Optimal, r.lift(&w), gap, ph.t, total(steps), String::new());
        }
        tau *= MU;
    }
}

#[cfg(test)]
mod tests {
    use super::super::{LmiBuilder, SdpStatus};
    use super::*;

    /// P - I ⪰ 0 and AᵀP + PA ⪯ -I for a 2x2 Hurwitz A.
    fn lyapunov(a: [[f64; 2]; 2]) -> (SdpProblem, [usize; 3]) {
        let mut p = SdpProblem::default();
        let v = [
            p.add_var("p11", None, None),
            p.add_var("p12", None, None),
            p.add_var("p22", None, None),
        ];
        let idx = |i: usize, j: usize| match (i.min(j), i.max(j)) {
            (0, 0) => v[0],
            (0, 1) => v[1],
            _ => v[2],
        };
        let mut pos = LmiBuilder::new("P>=I", 2);
        let mut lyap = LmiBuilder::new("lyap", 2);
        for i in 0..2 {
            pos.add_const(i, i, 1.0);
            lyap.add_const(i, i, 1.0);
            for j in 0..2 {
                pos.add(i, j, idx(i, j), -1.0);
                // (AᵀP + PA)_ij = Σ_k A_ki P_kj + P_ik A_kj.
                for k in 0..2 {
                    lyap.add(i, j, idx(k, j), a[k][i]);
                    lyap.add(i, j, idx(i, k), a[k][j]);
                }
            }
        }
        p.lmis.push(pos.finish());
        p.lmis.push(lyap.finish());
        (p, v)
    }

    #[test]
    fn lyapunov_feasible() {
        let (p, _) = lyapunov([[-1.0, 2.0], [0.0, -3.0]]);
        let s = solve(&p, &SdpSettings::default());
        assert_eq!(s.status, SdpStatus::Optimal, "{s:?}");
        let r = verify(&p, &s.z);
        assert!(r.lmi_max_eig.iter().all(|&e| e <= 1e-7), "{r:?}");
    }

    #[test]
    fn lyapunov_unstable_is_infeasible() {
        let (p, _) = lyapunov([[0.5, 0.0], [0.0, -1.0]]);
        assert_eq!(solve(&p, &SdpSettings::default()).status, SdpStatus::Infeasible);
    }

    #[test]
    fn strictly_feasible_phase_one_is_negative() {
        let (p, _) = lyapunov([[-1.0, 0.0], [0.0, -1.0]]);
        let ph = feasibility_phase(&p, &SdpSettings::default());
        assert_eq!(ph.outcome, PhaseOneOutcome::StrictlyFeasible);
        assert!(ph.t < 0.0);
    }

    #[test]
    fn marginal_psd_block() {
        // [z, 0; 0, 0] ⪯ 0 is feasible only on its boundary.
        let mut p = SdpProblem::default();
        let z = p.add_var("z", None, None);
        let mut b = LmiBuilder::new("m", 2);
        b.add(0, 0, z, 1.0);
        p.lmis.push(b.finish());
        let ph = feasibility_phase(&p, &SdpSettings::default());
        assert_eq!(ph.outcome, PhaseOneOutcome::Marginal, "{ph:?}");
        assert!(ph.t.abs() <= 1e-6);
        assert_eq!(solve(&p, &SdpSettings::default()).status, SdpStatus::Marginal);
    }

    #[test]
    fn bounds_and_rows_shape_the_optimum() {
        // max x + y (as min -x - y) with x + 2y <= 4, x <= 3, y >= 0.
        let mut p = SdpProblem::default();
        let x = p.add_var("x", None, Some(3.0));
        let y = p.add_var("y", Some(0.0), None);
        p.objective[x] = -1.0;
        p.objective[y] = -1.0;
        p.add_row(vec![(x, 1.0), (y, 2.0)], 4.0);
        let s = solve(&p, &SdpSettings::default());
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.objective + 3.5).abs() < 1e-5, "{}", s.objective);
    }

    #[test]
    fn equality_pair_is_respected() {
        let mut p = SdpProblem::default();
        let x = p.add_var("x", None, None);
        let y = p.add_var("y", Some(-1.0), Some(1.0));
        p.objective[x] = 1.0;
        p.add_row(vec![(x, 1.0), (y, -1.0)], 0.0);
        p.add_row(vec![(x, -1.0), (y, 1.0)], 0.0);
        let s = solve(&p, &SdpSettings::default());
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.z[0] + 1.0).abs() < 1e-5 && (s.z[0] - s.z[1]).abs() < 1e-12);
    }

    #[test]
    fn block_scaling_keeps_status_and_point() {
        let (mut p, v) = lyapunov([[-1.0, 2.0], [0.0, -3.0]]);
        p.objective[v[0]] = 1.0;
        p.objective[v[2]] = 1.0;
        let s1 = solve(&p, &SdpSettings::default());
        for blk in &mut p.lmis {
            for e in blk.constant.iter_mut() {
                e.2 *= 10.0;
            }
            for (_, t) in blk.terms.iter_mut() {
                for e in t.iter_mut() {
                    e.2 *= 10.0;
                }
            }
        }
        let s2 = solve(&p, &SdpSettings::default());
        assert_eq!((s1.status, s2.status), (SdpStatus::Optimal, SdpStatus::Optimal));
        for (a, b) in s1.z.iter().zip(&s2.z) {
            assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }
}
