#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sensorplace::classify::NonlinearityParams;
use sensorplace::misdp::{assemble_exact, assemble_relaxed, PlacementProblem, Variant};
use sensorplace::model::NdsModel;
use sensorplace::sdp::{feasibility_phase, PhaseOneOutcome, SdpProblem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn lipschitz_problem(a: DMatrix<f64>, c: &[f64], beta: f64) -> PlacementProblem {
    let model = NdsModel::linear_unit(a, c, 1.0);
    PlacementProblem::new(model, NonlinearityParams::analytic_lipschitz(beta), Variant::Lipschitz)
}

/// A small Lipschitz instance with one scalar sensor per state.
///
/// Diagonal entries straddle zero so that some, but rarely all, sensor sets
/// are feasible; a fifth of the Y boxes exclude zero.
pub fn random_placement(r: &mut impl Rng, n_max: usize) -> PlacementProblem {
    let n = r.random_range(1..=n_max);
    let a = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            r.random_range(-2.0..1.0)
        } else if r.random_bool(0.5) {
            r.random_range(-0.5..0.5)
        } else {
            0.0
        }
    });
    let c: Vec<f64> = (0..n).map(|_| r.random_range(0.5..2.0)).collect();
    let beta = r.random_range(0.0..0.6);
    let mut p = lipschitz_problem(a, &c, beta);
    for i in 0..n {
        if r.random_bool(0.2) {
            p.y_lo[(i, i)] = r.random_range(0.1..2.0);
            p.y_hi[(i, i)] = r.random_range(3.0..50.0);
        } else {
            p.y_lo[(i, i)] = -r.random_range(1.0..50.0);
            p.y_hi[(i, i)] = r.random_range(1.0..50.0);
        }
    }
    for j in 0..n {
        for i in (0..n).filter(|&i| i != j) {
            let m = r.random_range(1.0..50.0);
            p.y_lo[(i, j)] = -m;
            p.y_hi[(i, j)] = m;
        }
    }
    p.weights = (0..n).map(|_| r.random_range(1..=3) as f64).collect();
    p.logistic.k_min = r.random_range(0..=1);
    p.logistic.k_max = if n > 1 && r.random_bool(0.3) { n - 1 } else { n };
    if n > 1 && r.random_bool(0.2) {
        p.logistic.force_off.push(r.random_range(0..n));
    }
    p
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Feasible,
    Infeasible,
    Marginal,
    Failed,
}

pub fn verdict(p: &SdpProblem, prob: &PlacementProblem) -> Verdict {
    match feasibility_phase(p, &prob.settings.sdp).outcome {
        PhaseOneOutcome::StrictlyFeasible => Verdict::Feasible,
        PhaseOneOutcome::Infeasible => Verdict::Infeasible,
        PhaseOneOutcome::Marginal => Verdict::Marginal,
        _ => Verdict::Failed,
    }
}

pub fn exact_verdict(prob: &PlacementProblem, gamma: &[bool]) -> Verdict {
    verdict(&assemble_exact(prob, gamma).unwrap().0, prob)
}

pub fn relaxed_verdict(prob: &PlacementProblem, gamma: &[bool]) -> Verdict {
    let fix: Vec<Option<bool>> = gamma.iter().map(|&g| Some(g)).collect();
    verdict(&assemble_relaxed(prob, &fix).unwrap().0, prob)
}

pub fn all_gammas(n: usize) -> impl Iterator<Item = Vec<bool>> {
    (0..1u32 << n).map(move |m| (0..n).map(|s| m >> s & 1 == 1).collect())
}

/// Minimum of `c·γ` over feasible γ in G by enumerating exact problems, ties to the
/// lexicographically smallest γ.
pub fn brute_force_min(prob: &PlacementProblem) -> Option<(f64, Vec<bool>)> {
    let mut best: Option<(f64, Vec<bool>)> = None;
    for g in all_gammas(prob.n_sensors()) {
        if !prob.logistic.contains(&g) || exact_verdict(prob, &g) != Verdict::Feasible {
            continue;
        }
        let obj: f64 = g.iter().zip(&prob.weights).filter(|(&on, _)| on).map(|(_, w)| w).sum();
        let better = match &best {
            None => true,
            Some((b, bg)) => obj < *b || (obj == *b && g < *bg),
        };
        if better {
            best = Some((obj, g));
        }
    }
    best
}
