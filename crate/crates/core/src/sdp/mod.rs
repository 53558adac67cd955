//! Dense LMI solver: minimize c·z subject to affine LMI blocks `F_b(z) ⪯ 0`,
//! linear rows `a·z ≤ g`, and variable bounds.
//!
//! Coefficient matrices are stored sparsely because every block assembled
//! by the placement code has only a handful of entries per variable.

mod barrier;
mod presolve;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

pub use barrier::{feasibility_phase, solve, PhaseOne, PhaseOneOutcome};

/// One LMI block `M0 + Σ z_k M_k ⪯ 0`. Matrices are stored as upper-triangle
/// entries `(i, j, v)` with `i <= j`; the lower triangle mirrors them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmiBlock {
    pub name: String,
    pub dim: usize,
    pub constant: Vec<(usize, usize, f64)>,
    pub terms: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

/// `Σ coeffs · z ≤ rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub var_names: Vec<String>,
    pub objective: Vec<f64>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
    pub lmis: Vec<LmiBlock>,
    pub rows: Vec<LinearRow>,
}

impl SdpProblem {
    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: Option<f64>, upper: Option<f64>) -> usize {
        self.var_names.push(name.into());
        self.objective.push(0.0);
        self.lower.push(lower);
        self.upper.push(upper);
        self.var_names.len() - 1
    }

    pub fn fix(&mut self, k: usize, v: f64) {
        self.lower[k] = Some(v);
        self.upper[k] = Some(v);
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.rows.push(LinearRow { coeffs, rhs });
    }

    /// Dense value of block `b` at `z`.
    pub fn lmi_value(&self, b: usize, z: &[f64]) -> DMatrix<f64> {
        let blk = &self.lmis[b];
        let mut m = DMatrix::zeros(blk.dim, blk.dim);
        let mut put = |entries: &[(usize, usize, f64)], s: f64| {
            for &(i, j, v) in entries {
                m[(i, j)] += s * v;
                if i != j {
                    m[(j, i)] += s * v;
                }
            }
        };
        put(&blk.constant, 1.0);
        for (k, e) in &blk.terms {
            put(e, z[*k]);
        }
        m
    }

    pub fn objective_value(&self, z: &[f64]) -> f64 {
        self.objective.iter().zip(z).map(|(c, v)| c * v).sum()
    }
}

/// Accumulates a symmetric block from full-matrix entries. Callers add both
/// `(i, j)` and `(j, i)` of off-diagonal terms; `finish` checks the symmetry.
#[derive(Clone, Debug)]
pub struct LmiBuilder {
    name: String,
    dim: usize,
    constant: BTreeMap<(usize, usize), f64>,
    terms: BTreeMap<usize, BTreeMap<(usize, usize), f64>>,
}

impl LmiBuilder {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        LmiBuilder {
            name: name.into(),
            dim,
            constant: BTreeMap::new(),
            terms: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, i: usize, j: usize, var: usize, c: f64) {
        assert!(i < self.dim && j < self.dim);
        if c != 0.0 {
            *self.terms.entry(var).or_default().entry((i, j)).or_insert(0.0) += c;
        }
    }

    pub fn add_const(&mut self, i: usize, j: usize, c: f64) {
        assert!(i < self.dim && j < self.dim);
        if c != 0.0 {
            *self.constant.entry((i, j)).or_insert(0.0) += c;
        }
    }

    /// Adds `c` at `(i, j)` and at `(j, i)` (once on the diagonal).
    pub fn add_sym(&mut self, i: usize, j: usize, var: usize, c: f64) {
        self.add(i, j, var, c);
        if i != j {
            self.add(j, i, var, c);
        }
    }

    fn upper(full: &BTreeMap<(usize, usize), f64>, name: &str) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (&(i, j), &v) in full {
            if i > j {
                continue;
            }
            if i < j {
                let w = full.get(&(j, i)).copied().unwrap_or(0.0);
                assert!(
                    (v - w).abs() <= 1e-12 * (1.0 + v.abs().max(w.abs())),
                    "block {name} is not symmetric at ({i}, {j}): {v} vs {w}"
                );
            }
            if v != 0.0 {
                out.push((i, j, v));
            }
        }
        for &(i, j) in full.keys() {
            if i > j {
                assert!(full.contains_key(&(j, i)), "block {name} is not symmetric at ({j}, {i})");
            }
        }
        out
    }

    pub fn finish(self) -> LmiBlock {
        let constant = Self::upper(&self.constant, &self.name);
        let terms = self
            .terms
            .iter()
            .map(|(&k, m)| (k, Self::upper(m, &self.name)))
            .filter(|(_, e)| !e.is_empty())
            .collect();
        LmiBlock {
            name: self.name,
            dim: self.dim,
            constant,
            terms,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    /// Phase I optimum lies in [0, infeas_margin]: feasibility cannot be decided.
    Marginal,
    BudgetExceeded,
    NumericalTrouble,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SdpSettings {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub infeas_margin: f64,
    /// Newton steps allowed in each phase.
    pub max_newton: usize,
    /// Box applied to each side of a variable bound left unset.
    pub default_bound: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        SdpSettings {
            feas_tol: 1e-7,
            gap_tol: 1e-6,
            infeas_margin: 1e-6,
            max_newton: 200,
            default_bound: 1e4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub z: Vec<f64>,
    pub objective: f64,
    /// Largest eigenvalue over all LMI blocks at `z`.
    pub residual: f64,
    pub gap: f64,
    /// Phase I optimum estimate (negative if strictly feasible).
    pub phase_one_t: f64,
    pub newton_steps: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct VerifyReport {
    pub lmi_max_eig: Vec<f64>,
    pub row_max_violation: f64,
    pub bound_max_violation: f64,
}

impl VerifyReport {
    pub fn max_residual(&self) -> f64 {
        self.lmi_max_eig
            .iter()
            .copied()
            .fold(self.row_max_violation.max(self.bound_max_violation), f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    -max_eigenvalue(&(-m))
}

/// Post-hoc check with an exact symmetric eigendecomposition per block.
pub fn verify(p: &SdpProblem, z: &[f64]) -> VerifyReport {
    assert_eq!(z.len(), p.n_vars());
    let lmi_max_eig = (0..p.lmis.len()).map(|b| max_eigenvalue(&p.lmi_value(b, z))).collect();
    let row_max_violation = p
        .rows
        .iter()
        .map(|r| r.coeffs.iter().map(|&(k, a)| a * z[k]).sum::<f64>() - r.rhs)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let mut bound_max_violation: f64 = 0.0;
    for (k, &v) in z.iter().enumerate() {
        if let Some(lo) = p.lower[k] {
            bound_max_violation = bound_max_violation.max(lo - v);
        }
        if let Some(hi) = p.upper[k] {
            bound_max_violation = bound_max_violation.max(v - hi);
        }
    }
    VerifyReport {
        lmi_max_eig,
        row_max_violation: if p.rows.is_empty() { 0.0 } else { row_max_violation },
        bound_max_violation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_lmi(p: &mut SdpProblem, name: &str, k: usize, coef: f64, constant: f64) {
        let mut b = LmiBuilder::new(name, 1);
        b.add(0, 0, k, coef);
        b.add_const(0, 0, constant);
        p.lmis.push(b.finish());
    }

    #[test]
    fn scalar_minimum() {
        // min z s.t. 1 - z <= 0.
        let mut p = SdpProblem::default();
        let z = p.add_var("z", None, None);
        p.objective[z] = 1.0;
        scalar_lmi(&mut p, "1-z", z, -1.0, 1.0);
        let s = solve(&p, &SdpSettings::default());
        assert_eq!(s.status, SdpStatus::Optimal, "{s:?}");
        assert!((s.z[0] - 1.0).abs() < 1e-6, "{}", s.z[0]);
        assert!(verify(&p, &s.z).passes(1e-7));
    }

    #[test]
    fn contradictory_scalars() {
        let mut p = SdpProblem::default();
        let z = p.add_var("z", None, None);
        scalar_lmi(&mut p, "z<=0", z, 1.0, 0.0);
        scalar_lmi(&mut p, "z>=1", z, -1.0, 1.0);
        let ph = feasibility_phase(&p, &SdpSettings::default());
        assert!((ph.t - 0.5).abs() < 1e-6, "{ph:?}");
        assert_eq!(solve(&p, &SdpSettings::default()).status, SdpStatus::Infeasible);
    }

    #[test]
    fn empty_problem_verifies_vacuously() {
        let p = SdpProblem::default();
        let r = verify(&p, &[]);
        assert!(r.lmi_max_eig.is_empty() && r.passes(0.0));
    }

    #[test]
    #[should_panic(expected = "not symmetric")]
    fn builder_rejects_asymmetry() {
        let mut b = LmiBuilder::new("bad", 2);
        b.add(0, 1, 0, 1.0);
        b.finish();
    }
}
