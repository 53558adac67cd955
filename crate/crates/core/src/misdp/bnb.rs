//! Best-bound branch-and-bound over γ.
//!
//! Each node fixes some sensors and relaxes the rest to [0, 1]. Before the
//! relaxation is solved, the cardinality bounds are propagated (a node whose
//! fixed-on count reaches k_max pins every free sensor off), because a row
//! like `Σ γ_free ≤ 0` leaves the relaxation without interior.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::assemble::{assemble_with, extract, VarLayout};
use super::mccormick::build_mccormick;
use super::matrix_rows;
use super::{MisdpError, PlacementProblem};
use crate::model::Logistic;
use crate::sdp::{solve, verify, SdpProblem, SdpSettings, SdpSolution, SdpStatus};

/// A relaxed γ entry within this distance of 0 or 1 counts as integral.
pub const INTEGRALITY_TOL: f64 = 1e-4;
const BOUND_TOL: f64 = 1e-6;
const KAPPA_MARGINAL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeStatus {
    Branched,
    Incumbent,
    /// Integral and feasible but not better than the incumbent.
    Integral,
    PrunedBound,
    PrunedInfeasible,
    PrunedMarginal,
    PrunedSuperset,
    PrunedCardinality,
    /// Never processed because the node budget ran out.
    Open,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub fixing: Vec<Option<bool>>,
    pub bound: Option<f64>,
    pub status: NodeStatus,
    pub branch_on: Option<usize>,
    pub newton_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementStatus {
    Optimal,
    Infeasible,
    BudgetExceeded,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlacementSolution {
    pub gamma: Vec<bool>,
    pub objective: f64,
    #[serde(with = "matrix_rows")]
    pub p: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub y: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub q: DMatrix<f64>,
    /// `L = P⁻¹ Q`; columns of unselected outputs are zero.
    #[serde(with = "matrix_rows")]
    pub l: DMatrix<f64>,
    pub kappa: Option<f64>,
    #[serde(with = "matrix_rows::option")]
    pub lambda: Option<DMatrix<f64>>,
    pub p_min_eig: f64,
    pub p_condition: f64,
    pub lmi_residuals: Vec<(String, f64)>,
    pub residual_max: f64,
    pub kappa_marginal: bool,
    pub mu: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlacementResult {
    pub status: PlacementStatus,
    pub solution: Option<PlacementSolution>,
    pub nodes: usize,
    pub newton_steps: usize,
    pub wall_seconds: f64,
    pub superset_pruning: bool,
    pub node_log: Vec<NodeRecord>,
    pub notes: Vec<String>,
}

impl PlacementResult {
    pub fn gamma(&self) -> Option<&[bool]> {
        self.solution.as_ref().map(|s| s.gamma.as_slice())
    }
}

fn most_fractional(gamma: &[f64], free: &[bool], tol: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (s, (&g, &f)) in gamma.iter().zip(free).enumerate() {
        if !f {
            continue;
        }
        let fr = g.min(1.0 - g).clamp(0.0, 0.5);
        if fr <= tol {
            continue;
        }
        if best.is_none_or(|(_, b)| fr > b + 1e-12) {
            best = Some((s, fr));
        }
    }
    best.map(|(s, _)| s)
}

/// Most fractional free entry, lowest index on ties; `None` when all free
/// entries are integral within [`INTEGRALITY_TOL`].
pub fn branching_rule(gamma: &[f64], free: &[bool]) -> Option<usize> {
    most_fractional(gamma, free, INTEGRALITY_TOL)
}

/// Applies the cardinality bounds to a fixing; `false` if none can hold.
fn propagate(mut fix: Vec<Option<bool>>, lg: &Logistic) -> (Vec<Option<bool>>, bool) {
    let on = fix.iter().filter(|f| **f == Some(true)).count();
    let free = fix.iter().filter(|f| f.is_none()).count();
    if on > lg.k_max || on + free < lg.k_min {
        return (fix, false);
    }
    let fill = if on == lg.k_max {
        Some(false)
    } else if on + free == lg.k_min {
        Some(true)
    } else {
        None
    };
    if let Some(v) = fill {
        for f in fix.iter_mut().filter(|f| f.is_none()) {
            *f = Some(v);
        }
    }
    (fix, true)
}

struct Pending {
    bound: f64,
    id: usize,
}

impl PartialEq for Pending {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
/// Max-heap order that pops the lowest bound, then the lowest id.
impl Ord for Pending {
    fn cmp(&self, o: &Self) -> Ordering {
        o.bound.total_cmp(&self.bound).then_with(|| o.id.cmp(&self.id))
    }
}

struct Solved {
    sol: SdpSolution,
    problem: SdpProblem,
    layout: VarLayout,
}

struct Incumbent {
    objective: f64,
    gamma: Vec<bool>,
    solved: Solved,
}

struct Search<'a> {
    prob: &'a PlacementProblem,
    steps: usize,
    superset: HashMap<Vec<bool>, bool>,
}

impl Search<'_> {
    fn solve(&mut self, id: usize, fix: &[Option<bool>], logistic: bool) -> Result<(Solved, usize), MisdpError> {
        let (problem, layout) = assemble_with(self.prob, fix, logistic)?;
        let st = &self.prob.settings.sdp;
        let mut sol = solve(&problem, st);
        let mut steps = sol.newton_steps;
        if matches!(sol.status, SdpStatus::NumericalTrouble | SdpStatus::BudgetExceeded) {
            let relaxed = SdpSettings {
                feas_tol: st.feas_tol * 10.0,
                gap_tol: st.gap_tol * 10.0,
                max_newton: st.max_newton * 2,
                ..st.clone()
            };
            sol = solve(&problem, &relaxed);
            steps += sol.newton_steps;
            if matches!(sol.status, SdpStatus::NumericalTrouble | SdpStatus::BudgetExceeded) {
                return Err(MisdpError::Node { id, status: sol.status });
            }
        }
        self.steps += steps;
        Ok((Solved { sol, problem, layout }, steps))
    }

    fn superset_feasible(&mut self, id: usize, gamma: Vec<bool>) -> Result<(bool, usize), MisdpError> {
        if let Some(&f) = self.superset.get(&gamma) {
            return Ok((f, 0));
        }
        let fix: Vec<Option<bool>> = gamma.iter().map(|&g| Some(g)).collect();
        let (s, steps) = self.solve(id, &fix, false)?;
        let ok = s.sol.status == SdpStatus::Optimal;
        self.superset.insert(gamma, ok);
        Ok((ok, steps))
    }
}

fn lexmin(fix: &[Option<bool>]) -> Vec<bool> {
    fix.iter().map(|f| f.unwrap_or(false)).collect()
}

fn tol(obj: f64) -> f64 {
    BOUND_TOL * (1.0 + obj.abs())
}

/// Whether no point under `fix` with objective at least `bound` can beat the incumbent.
fn dominated(bound: f64, fix: &[Option<bool>], inc: &Option<Incumbent>) -> bool {
    match inc {
        None => false,
        Some(inc) => {
            bound > inc.objective + tol(inc.objective)
                || (bound >= inc.objective - tol(inc.objective) && lexmin(fix) >= inc.gamma)
        }
    }
}

fn improves(obj: f64, gamma: &[bool], inc: &Option<Incumbent>) -> bool {
    match inc {
        None => true,
        Some(inc) => {
            obj < inc.objective - tol(inc.objective)
                || ((obj - inc.objective).abs() <= tol(inc.objective) && gamma < inc.gamma.as_slice())
        }
    }
}

fn objective(prob: &PlacementProblem, gamma: &[bool]) -> f64 {
    gamma.iter().zip(&prob.weights).map(|(&g, w)| if g { *w } else { 0.0 }).sum()
}

pub fn branch_and_bound(prob: &PlacementProblem) -> Result<PlacementResult, MisdpError> {
    prob.validate()?;
    let start = Instant::now();
    let n = prob.n_sensors();
    let sys = build_mccormick(&prob.y_lo, &prob.y_hi, &prob.model.partition.y)?;
    let use_superset = prob.settings.superset_pruning && sys.box_contains_zero();
    let integral_weights = prob.weights.iter().all(|w| w.fract() == 0.0);

    let mut root = vec![None; n];
    for &s in &prob.logistic.force_on {
        root[s] = Some(true);
    }
    for &s in &prob.logistic.force_off {
        root[s] = Some(false);
    }
    let mut log = vec![NodeRecord {
        id: 0,
        parent: None,
        fixing: root,
        bound: None,
        status: NodeStatus::Open,
        branch_on: None,
        newton_steps: 0,
    }];
    let mut heap = BinaryHeap::new();
    heap.push(Pending {
        bound: f64::NEG_INFINITY,
        id: 0,
    });
    let mut search = Search {
        prob,
        steps: 0,
        superset: HashMap::new(),
    };
    let mut inc: Option<Incumbent> = None;
    let mut processed = 0;
    let mut budget = false;

    while let Some(pend) = heap.pop() {
        if processed >= prob.settings.max_nodes {
            budget = true;
            break;
        }
        processed += 1;
        let id = pend.id;
        let mut steps = 0;
        let fix0 = log[id].fixing.clone();
        let status = 'node: {
            if dominated(pend.bound, &fix0, &inc) {
                break 'node NodeStatus::PrunedBound;
            }
            let (fix, ok) = propagate(fix0, &prob.logistic);
            log[id].fixing = fix.clone();
            if !ok {
                break 'node NodeStatus::PrunedCardinality;
            }
            let free: Vec<bool> = fix.iter().map(Option::is_none).collect();

            if use_superset && (id == 0 || fix.contains(&Some(false))) {
                let sup = fix.iter().map(|f| f.unwrap_or(true)).collect();
                let (ok, s) = search.superset_feasible(id, sup)?;
                steps += s;
                if !ok {
                    break 'node NodeStatus::PrunedSuperset;
                }
            }

            if !free.contains(&true) {
                let gamma: Vec<bool> = fix.iter().map(|f| f.unwrap()).collect();
                let obj = objective(prob, &gamma);
                log[id].bound = Some(obj);
                let (s, k) = search.solve(id, &fix, true)?;
                steps += k;
                break 'node match s.sol.status {
                    SdpStatus::Optimal if improves(obj, &gamma, &inc) => {
                        inc = Some(Incumbent {
                            objective: obj,
                            gamma,
                            solved: s,
                        });
                        NodeStatus::Incumbent
                    }
                    SdpStatus::Optimal => NodeStatus::Integral,
                    SdpStatus::Marginal => NodeStatus::PrunedMarginal,
                    _ => NodeStatus::PrunedInfeasible,
                };
            }

            let (s, k) = search.solve(id, &fix, true)?;
            steps += k;
            match s.sol.status {
                SdpStatus::Optimal => {}
                SdpStatus::Marginal => break 'node NodeStatus::PrunedMarginal,
                _ => break 'node NodeStatus::PrunedInfeasible,
            }
            let gap = if s.sol.gap.is_finite() { s.sol.gap } else { 0.0 };
            let mut bound = (s.sol.objective - gap).max(pend.bound);
            if integral_weights {
                bound = bound.max((bound - 1e-6).ceil());
            }
            log[id].bound = Some(bound);
            if dominated(bound, &fix, &inc) {
                break 'node NodeStatus::PrunedBound;
            }
            let relaxed = extract(&s.layout, &s.sol.z).gamma;
            let mut node_status = NodeStatus::Branched;
            let branch = match branching_rule(&relaxed, &free) {
                Some(b) => b,
                None => {
                    let rounded: Vec<bool> = fix
                        .iter()
                        .zip(&relaxed)
                        .map(|(f, &g)| f.unwrap_or(g > 0.5))
                        .collect();
                    let obj = objective(prob, &rounded);
                    if prob.logistic.contains(&rounded) && improves(obj, &rounded, &inc) {
                        let leaf: Vec<Option<bool>> = rounded.iter().map(|&g| Some(g)).collect();
                        let (ls, k) = search.solve(id, &leaf, true)?;
                        steps += k;
                        if ls.sol.status == SdpStatus::Optimal {
                            inc = Some(Incumbent {
                                objective: obj,
                                gamma: rounded,
                                solved: ls,
                            });
                            node_status = NodeStatus::Incumbent;
                        }
                    }
                    if dominated(bound, &fix, &inc) {
                        break 'node node_status;
                    }
                    // Lexicographically smaller ties may remain below this node.
                    most_fractional(&relaxed, &free, -1.0).expect("node has a free sensor")
                }
            };
            log[id].branch_on = Some(branch);
            for v in [false, true] {
                let mut child = fix.clone();
                child[branch] = Some(v);
                let cid = log.len();
                log.push(NodeRecord {
                    id: cid,
                    parent: Some(id),
                    fixing: child,
                    bound: None,
                    status: NodeStatus::Open,
                    branch_on: None,
                    newton_steps: 0,
                });
                heap.push(Pending { bound, id: cid });
            }
            if node_status == NodeStatus::Incumbent {
                node_status
            } else {
                NodeStatus::Branched
            }
        };
        log[id].status = status;
        log[id].newton_steps = steps;
    }

    let mut notes = Vec::new();
    if prob.settings.superset_pruning && !use_superset {
        notes.push("superset pruning disabled: some Y interval excludes zero".into());
    }
    let status = if budget {
        notes.push(format!("node budget of {} exhausted", prob.settings.max_nodes));
        PlacementStatus::BudgetExceeded
    } else if inc.is_some() {
        PlacementStatus::Optimal
    } else {
        PlacementStatus::Infeasible
    };
    let solution = inc.map(|inc| solution_from(prob, inc, &mut notes));
    Ok(PlacementResult {
        status,
        solution,
        nodes: processed,
        newton_steps: search.steps,
        wall_seconds: start.elapsed().as_secs_f64(),
        superset_pruning: use_superset,
        node_log: log,
        notes,
    })
}

fn solution_from(prob: &PlacementProblem, inc: Incumbent, notes: &mut Vec<String>) -> PlacementSolution {
    let Solved { sol, problem, layout } = inc.solved;
    let ex = extract(&layout, &sol.z);
    let eig = SymmetricEigen::new(ex.p.clone()).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let l = ex
        .p
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&ex.q))
        .or_else(|| ex.p.clone().try_inverse().map(|pi| pi * &ex.q))
        .unwrap_or_else(|| DMatrix::from_element(ex.q.nrows(), ex.q.ncols(), f64::NAN));
    let report = verify(&problem, &sol.z);
    let lmi_residuals = problem
        .lmis
        .iter()
        .zip(&report.lmi_max_eig)
        .map(|(b, &e)| (b.name.clone(), e))
        .collect();
    let kappa_marginal = ex.kappa.is_some_and(|k| k < KAPPA_MARGINAL);
    if kappa_marginal {
        notes.push("kappa* below 1e-8: the -kappa I block is numerically singular, treat as marginal".into());
    }
    PlacementSolution {
        gamma: inc.gamma,
        objective: inc.objective,
        p: ex.p,
        y: ex.y,
        q: ex.q,
        l,
        kappa: ex.kappa,
        lambda: ex.lambda,
        p_min_eig: lo,
        p_condition: hi / lo,
        lmi_residuals,
        residual_max: report.max_residual(),
        kappa_marginal,
        mu: prob.settings.mu,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branching_examples() {
        assert_eq!(branching_rule(&[0.5, 0.9], &[true, true]), Some(0));
        assert_eq!(branching_rule(&[0.1, 0.9], &[true, true]), Some(0));
        assert_eq!(branching_rule(&[0.9, 0.1], &[true, true]), Some(0));
        assert_eq!(branching_rule(&[0.0, 1.0], &[true, true]), None);
        assert_eq!(branching_rule(&[0.5, 0.3], &[false, true]), Some(1));
    }

    #[test]
    fn cardinality_propagation() {
        let lg = Logistic {
            k_min: 1,
            k_max: 2,
            force_on: vec![],
            force_off: vec![],
        };
        let (f, ok) = propagate(vec![Some(true), Some(true), None], &lg);
        assert!(ok && f[2] == Some(false));
        let (f, ok) = propagate(vec![Some(false), Some(false), None], &lg);
        assert!(ok && f[2] == Some(true));
        assert!(!propagate(vec![Some(true); 3], &lg).1);
        assert!(propagate(vec![None; 3], &lg).0.iter().all(Option::is_none));
    }

    #[test]
    fn heap_pops_lowest_bound_then_id() {
        let mut h = BinaryHeap::new();
        for (bound, id) in [(2.0, 0), (1.0, 2), (1.0, 1), (3.0, 3)] {
            h.push(Pending { bound, id });
        }
        let order: Vec<usize> = std::iter::from_fn(|| h.pop().map(|p| p.id)).collect();
        assert_eq!(order, vec![1, 2, 0, 3]);
    }
}
