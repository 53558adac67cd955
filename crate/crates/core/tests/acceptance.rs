//! Acceptance suite. Each criterion prints one PASS/FAIL line with its
//! runtime and the numbers it was judged on; the process exits nonzero if
//! any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sensorplace::classify::{jacobian_bounds, lipschitz_rowwise, ClassifySettings, Method, NonlinearityParams};
use sensorplace::expr::{parse, BinaryOp, Expr, Interval, UnaryOp};
use sensorplace::misdp::{
    assemble_bounded_jacobian, assemble_relaxed, branch_and_bound, default_w, extract, PlacementProblem, PlacementResult,
    PlacementSolution, PlacementStatus, Variant,
};
use sensorplace::model::NdsModel;
use sensorplace::observer::{
    check_certificate, default_step, error_of, lyapunov_values, max_lyapunov_increase, sample_in_box, simulate_coupled,
    simulate_error, summarize, Multiplier, ObserverGain,
};
use sensorplace::sdp::{feasibility_phase, max_eigenvalue, solve, verify, LmiBuilder, PhaseOneOutcome, SdpProblem, SdpSettings, SdpStatus};
use sensorplace::traffic::{
    aggregate, analytic_row_bounds, build_traffic_model, experiment_config, HighwayConfig, experiment_logistic, LogisticReading, TrafficModel,
};

/// Reference Lipschitz constants for the published highway model.
const REF_ANALYTIC_BETA: f64 = 0.34510;
const REF_INTERVAL_BETA: f64 = 0.29362;
const REF_WALL_SECONDS: f64 = 1.58;
const REF_NODES: usize = 2;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn gamma_string(g: &[bool]) -> String {
    g.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

// 1. The exact and McCormick-relaxed problems give the same feasibility verdict for every binary γ.
fn mccormick_equivalence() -> Outcome {
    let mut r = rng(1001);
    let (mut checked, mut mismatches, mut undecided) = (0, 0, 0);
    let mut first = None;
    for inst in 0..200 {
        let prob = random_placement(&mut r, 3);
        for g in all_gammas(prob.n_sensors()) {
            let (v3, v4) = (exact_verdict(&prob, &g), relaxed_verdict(&prob, &g));
            checked += 1;
            if matches!(v3, Verdict::Marginal | Verdict::Failed) || matches!(v4, Verdict::Marginal | Verdict::Failed) {
                undecided += 1;
            }
            if v3 != v4 {
                mismatches += 1;
                first.get_or_insert(format!("instance {inst} γ={}: exact {v3:?}, relaxed {v4:?}", gamma_string(&g)));
            }
        }
    }
    outcome(
        mismatches == 0,
        format!(
            "200 instances, {checked} (instance, γ) pairs, {mismatches} mismatches, {undecided} undecided{}",
            first.map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

// 2. Branch-and-bound objective equals the enumerated minimum.
fn bnb_optimality() -> Outcome {
    let mut r = rng(1002);
    let (mut bad, mut feasible, mut nodes) = (0, 0, 0);
    let mut first = None;
    for inst in 0..50 {
        let prob = random_placement(&mut r, 4);
        let bf = brute_force_min(&prob);
        let res = match branch_and_bound(&prob) {
            Ok(res) => res,
            Err(e) => {
                bad += 1;
                first.get_or_insert(format!("instance {inst}: {e}"));
                continue;
            }
        };
        nodes += res.nodes;
        let ok = match (&bf, &res.solution) {
            (None, None) => res.status == PlacementStatus::Infeasible,
            (Some((obj, _)), Some(sol)) => {
                feasible += 1;
                sol.objective == *obj
            }
            _ => false,
        };
        if !ok {
            bad += 1;
            first.get_or_insert(format!(
                "instance {inst}: enumeration {:?}, BnB {:?} {:?}",
                bf.as_ref().map(|b| b.0),
                res.status,
                res.solution.as_ref().map(|s| s.objective)
            ));
        }
    }
    outcome(
        bad == 0,
        format!(
            "50 instances ({feasible} feasible), {bad} objective mismatches, {nodes} nodes in total{}",
            first.map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

/// A model whose only nonzero row is `f`, so β equals max ‖∇f‖₂ over the box.
fn single_row_model(f: &str, bx: &[(f64, f64)]) -> NdsModel {
    let n = bx.len();
    let mut m = NdsModel::linear_unit(DMatrix::zeros(n, n), &vec![1.0; n], 1.0);
    m.bx = bx.iter().map(|&(lo, hi)| Interval::new(lo, hi)).collect();
    m.f[0] = parse(f, n).expect("corpus expression parses");
    m
}

// 3. Interval brackets and LDS estimates against closed-form constants.
fn lipschitz_engines() -> Outcome {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let corpus: Vec<(&str, Vec<(f64, f64)>, f64)> = vec![
        ("2*x1 - 3*x2", vec![(-1.0, 1.0), (-1.0, 1.0)], 13f64.sqrt()),
        ("x1", vec![(-5.0, 2.0)], 1.0),
        ("sin(x1)", vec![(-1.0, 2.0)], 1.0),
        ("cos(x1)", vec![(0.2, 1.0)], 1f64.sin()),
        ("x1^2", vec![(-1.0, 3.0)], 6.0),
        ("x1*x2", vec![(0.0, 1.0), (0.0, 2.0)], 5f64.sqrt()),
        ("sin(x1) + cos(x2)", vec![(0.0, half_pi), (0.0, half_pi)], (1.0 + half_pi.sin().powi(2)).sqrt()),
        ("x1^2 + x2^2", vec![(-1.0, 1.0), (-1.0, 1.0)], 8f64.sqrt()),
        ("0.5*x1^2 - x1*x2", vec![(0.0, 1.0), (0.0, 1.0)], 2f64.sqrt()),
        ("3*sin(2*x1)", vec![(-0.5, 0.5)], 6.0),
    ];
    let interval = ClassifySettings::default();
    let lds = ClassifySettings {
        samples: 1 << 14,
        ..ClassifySettings::default()
    };
    let mut failures = Vec::new();
    let (mut worst_width, mut worst_lds) = (0.0f64, 0.0f64);
    for (f, bx, truth) in &corpus {
        let m = single_row_model(f, bx);
        let iv = lipschitz_rowwise(&m, Method::Interval, &interval).expect("interval run");
        let row = &iv.rows[0];
        worst_width = worst_width.max(row.upper - row.lower);
        if !(row.lower <= *truth && *truth <= row.upper && row.upper - row.lower <= 1e-3) {
            failures.push(format!("{f}: interval [{}, {}] vs {truth}", row.lower, row.upper));
        }
        let est = lipschitz_rowwise(&m, Method::Lds, &lds).expect("LDS run").beta.unwrap();
        worst_lds = worst_lds.max((est - truth).abs());
        if (est - truth).abs() > 1e-2 {
            failures.push(format!("{f}: LDS {est} vs {truth}"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "10 functions, widest bracket {worst_width:.2e}, worst LDS error {worst_lds:.2e}{}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn random_expr(r: &mut impl Rng, n: usize, depth: u32) -> Expr {
    if depth == 0 || r.random_bool(0.25) {
        return if r.random_bool(0.7) {
            Expr::var(r.random_range(0..n))
        } else {
            Expr::constant(r.random_range(-3.0..3.0))
        };
    }
    let sub = |r: &mut _| random_expr(r, n, depth - 1);
    match r.random_range(0..12) {
        0 => Expr::unary(UnaryOp::Neg, sub(r)),
        1 => Expr::unary(UnaryOp::Sin, sub(r)),
        2 => Expr::unary(UnaryOp::Cos, sub(r)),
        3 => Expr::unary(UnaryOp::Exp, Expr::unary(UnaryOp::Sin, sub(r))),
        4 => Expr::unary(UnaryOp::Sqrt, Expr::unary(UnaryOp::Abs, sub(r))),
        5 => Expr::unary(UnaryOp::Abs, sub(r)),
        6 => Expr::pow(sub(r), r.random_range(-2..=4)),
        7 => Expr::binary(BinaryOp::Add, sub(r), sub(r)),
        8 => Expr::binary(BinaryOp::Sub, sub(r), sub(r)),
        9 => Expr::binary(BinaryOp::Mul, sub(r), sub(r)),
        10 => Expr::binary(BinaryOp::Div, sub(r), sub(r)),
        _ => Expr::binary(if r.random_bool(0.5) { BinaryOp::Min } else { BinaryOp::Max }, sub(r), sub(r)),
    }
}

// 4. Interval values and gradients enclose every sampled point value.
fn interval_soundness() -> Outcome {
    let mut r = rng(1004);
    let (mut pairs, mut skipped, mut points, mut violations) = (0, 0, 0, 0);
    let mut first = None;
    while pairs < 1000 {
        let n = r.random_range(1..=3);
        let e = random_expr(&mut r, n, 4);
        let bx: Vec<Interval> = (0..n)
            .map(|_| {
                let c = r.random_range(-3.0..3.0);
                let w = r.random_range(0.0..2.0);
                Interval::new(c - w, c + w)
            })
            .collect();
        // Boxes where the expression is undefined somewhere are reported as
        // domain errors rather than enclosed; they do not count as pairs.
        let (Ok(val), Ok(grad)) = (e.ieval(&bx), e.igrad(&bx)) else {
            skipped += 1;
            continue;
        };
        pairs += 1;
        for _ in 0..100 {
            let x: Vec<f64> = bx.iter().map(|iv| if iv.lo < iv.hi { r.random_range(iv.lo..=iv.hi) } else { iv.lo }).collect();
            let (Ok(v), Ok(g)) = (e.eval(&x), e.grad(&x)) else {
                continue;
            };
            points += 1;
            let bad = !val.contains(v) || g.iter().zip(&grad).any(|(gi, iv)| gi.is_finite() && !iv.contains(*gi));
            if bad {
                violations += 1;
                first.get_or_insert(format!("{e:?} at {x:?}: {v} in {val:?}, {g:?} in {grad:?}"));
            }
        }
    }
    outcome(
        violations == 0,
        format!(
            "1000 pairs ({skipped} undefined boxes skipped), {points} point checks, {violations} violations{}",
            first.map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

fn random_stable(r: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
    // Shifting by the spectral abscissa bound ‖M‖₁ plus a margin makes A Hurwitz.
    let shift = m.row_iter().map(|row| row.abs().sum()).fold(0.0, f64::max) + r.random_range(0.1..1.0);
    m - DMatrix::identity(n, n) * shift
}

fn min_scalar(p: &SdpProblem, st: &SdpSettings, expected: f64) -> Result<f64, String> {
    let s = solve(p, st);
    if s.status != SdpStatus::Optimal {
        return Err(format!("status {:?}", s.status));
    }
    let rel = (s.objective - expected).abs() / expected.abs().max(1.0);
    if rel > 1e-6 {
        return Err(format!("objective {} vs {expected}", s.objective));
    }
    Ok(rel)
}

// 5. Lyapunov feasibility, forced infeasibility and scalar optima.
fn sdp_kernel() -> Outcome {
    let mut r = rng(1005);
    let mut failures = Vec::new();
    let mut worst_residual = f64::NEG_INFINITY;
    for k in 0..20 {
        let n = r.random_range(1..=4);
        let prob = lipschitz_problem(random_stable(&mut r, n), &vec![1.0; n], 0.0);
        let (sdp, _) = assemble_relaxed(&prob, &vec![Some(false); n]).unwrap();
        let s = solve(&sdp, &prob.settings.sdp);
        let res = verify(&sdp, &s.z).max_residual();
        worst_residual = worst_residual.max(res);
        if s.status != SdpStatus::Optimal || res > 1e-7 {
            failures.push(format!("stable #{k}: {:?}, residual {res:.2e}", s.status));
        }
    }
    for k in 0..20 {
        let n = r.random_range(2..=4);
        // A stable block plus an unstable mode no sensor may observe.
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (n - 1, n - 1)).copy_from(&random_stable(&mut r, n - 1));
        a[(n - 1, n - 1)] = r.random_range(0.1..1.0);
        for j in 0..n - 1 {
            a[(n - 1, j)] = r.random_range(-0.5..0.5);
        }
        let prob = lipschitz_problem(a, &vec![1.0; n], 0.0);
        let (sdp, _) = assemble_relaxed(&prob, &vec![Some(false); n]).unwrap();
        let out = feasibility_phase(&sdp, &prob.settings.sdp).outcome;
        if out != PhaseOneOutcome::Infeasible {
            failures.push(format!("unstable #{k}: {out:?}"));
        }
    }

    let st = SdpSettings {
        gap_tol: 1e-9,
        ..SdpSettings::default()
    };
    let mut worst_rel = 0.0f64;
    let mut check = |label: &str, p: &SdpProblem, expected: f64, failures: &mut Vec<String>| match min_scalar(p, &st, expected) {
        Ok(rel) => worst_rel = worst_rel.max(rel),
        Err(e) => failures.push(format!("{label}: {e}")),
    };
    // min t with M - tI ⪯ 0 is λ_max(M).
    for k in 0..5 {
        let n = 3;
        let m = DMatrix::from_fn(n, n, |_, _| r.random_range(-2.0..2.0));
        let m = (&m + m.transpose()) * 0.5;
        let mut p = SdpProblem::default();
        let t = p.add_var("t", None, None);
        p.objective[t] = 1.0;
        let mut b = LmiBuilder::new("shifted", n);
        for i in 0..n {
            for j in 0..n {
                b.add_const(i, j, m[(i, j)]);
            }
            b.add(i, i, t, -1.0);
        }
        p.lmis.push(b.finish());
        check(&format!("lambda_max #{k}"), &p, max_eigenvalue(&m), &mut failures);
    }
    // min x1 + x2 with [-x1, 1; 1, -x2] ⪯ 0, i.e. x1 x2 ≥ 1: optimum 2.
    let mut p = SdpProblem::default();
    let x1 = p.add_var("x1", None, None);
    let x2 = p.add_var("x2", None, None);
    p.objective = vec![1.0, 1.0];
    let mut b = LmiBuilder::new("hyperbola", 2);
    b.add(0, 0, x1, -1.0);
    b.add(1, 1, x2, -1.0);
    b.add_const(0, 1, 1.0);
    b.add_const(1, 0, 1.0);
    p.lmis.push(b.finish());
    check("hyperbola", &p, 2.0, &mut failures);
    // max x with [x - 3] ⪯ 0 and x ≤ 5: optimum -3.
    let mut p = SdpProblem::default();
    let x = p.add_var("x", None, None);
    p.objective[x] = -1.0;
    let mut b = LmiBuilder::new("cap", 1);
    b.add(0, 0, x, 1.0);
    b.add_const(0, 0, -3.0);
    p.lmis.push(b.finish());
    p.add_row(vec![(x, 1.0)], 5.0);
    check("scalar cap", &p, -3.0, &mut failures);

    outcome(
        failures.is_empty(),
        format!(
            "20 stable (worst residual {worst_residual:.2e}), 20 forced-unobservable, 7 known optima (worst rel. error {worst_rel:.2e}){}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

struct SimCheck {
    diff: f64,
    tol: f64,
    dv: f64,
    ratio: f64,
    lmi_max_eig: f64,
    p_min_eig: f64,
}

fn simulate_solution(
    model: &NdsModel,
    params: &NonlinearityParams,
    variant: Variant,
    w: Option<&DMatrix<f64>>,
    sol: &PlacementSolution,
    seed: u64,
    t_end: f64,
) -> Result<SimCheck, String> {
    let gain = ObserverGain::new(sol.l.clone(), sol.gamma.clone(), model).map_err(|e| e.to_string())?;
    let mult = match variant {
        Variant::Lipschitz => Multiplier::Kappa(sol.kappa.ok_or("no kappa")?),
        Variant::BoundedJacobian => Multiplier::Lambda(sol.lambda.clone().ok_or("no Lambda")?),
    };
    let cert = check_certificate(model, params, variant, &gain, &sol.p, &mult, w).map_err(|e| e.to_string())?;
    let closed = &model.a - gain.injection(model);
    let h = default_step(&[&model.a, &closed]);
    let x0 = sample_in_box(&model.bx, seed);
    let xhat0 = sample_in_box(&model.bx, seed + 1);
    let (plant, obs) = simulate_coupled(model, &gain, &x0, &xhat0, t_end, h).map_err(|e| e.to_string())?;
    let err = error_of(&plant, &obs);
    let e0: DVector<f64> = &x0 - &xhat0;
    let direct = simulate_error(model, &gain, &e0, &plant).map_err(|e| e.to_string())?;
    let diff = err
        .states
        .iter()
        .zip(&direct.states)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    Ok(SimCheck {
        diff,
        tol: 1e-6 * (1.0 + e0.norm()),
        dv: max_lyapunov_increase(&lyapunov_values(&sol.p, &err)),
        ratio: summarize(&plant, &err, None).relative_final_error,
        lmi_max_eig: cert.lmi_max_eig,
        p_min_eig: cert.p_min_eig,
    })
}

struct Traffic {
    tm: TrafficModel,
    interval: NonlinearityParams,
    analytic_beta: f64,
    capped: PlacementResult,
    capped_secs: f64,
}

fn traffic_problem(tm: &TrafficModel, params: NonlinearityParams) -> PlacementProblem {
    PlacementProblem::new(tm.model.clone(), params, Variant::Lipschitz).with_y_bound(100.0)
}

fn traffic_setup() -> Traffic {
    let (cfg, mut sensors) = experiment_config();
    let n = cfg.n_x();
    sensors.weights = vec![1.0; n];
    sensors.logistic = experiment_logistic(LogisticReading::CardinalityCap, n);
    let tm = build_traffic_model(&cfg, sensors).expect("experiment configuration builds");
    let mut st = ClassifySettings::default();
    st.bnb.eps_h = 1e-6;
    let interval = lipschitz_rowwise(&tm.model, Method::Interval, &st).expect("interval estimate");
    let analytic_beta = aggregate(&analytic_row_bounds(&tm));
    let t = Instant::now();
    let capped = branch_and_bound(&traffic_problem(&tm, interval.clone())).expect("placement runs");
    Traffic {
        capped_secs: t.elapsed().as_secs_f64(),
        tm,
        interval,
        analytic_beta,
        capped,
    }
}

// 6. Full-scale traffic placement, certificate and simulation.
fn traffic_full_scale(tr: &Traffic) -> Outcome {
    let res = &tr.capped;
    let mut parts = vec![format!(
        "status {:?}, {} nodes, {:.1} s (reference {REF_NODES} nodes, {REF_WALL_SECONDS} s; comparison only)",
        res.status, res.nodes, tr.capped_secs
    )];
    let n = tr.tm.model.n_x;
    let check = |sol: &PlacementSolution| {
        simulate_solution(&tr.tm.model, &tr.interval, Variant::Lipschitz, None, sol, 1, 200.0)
    };
    let pass = match &res.solution {
        Some(sol) => {
            let k = sol.gamma.iter().filter(|&&g| g).count();
            parts.push(format!("|γ*|₁ = {k}, γ* = {}", gamma_string(&sol.gamma)));
            match check(sol) {
                Ok(c) => {
                    parts.push(format!(
                        "λ_max = {:.2e}, λ_min(P) = {:.3e}, ‖e(T)‖/‖e(0)‖ = {:.2e}",
                        c.lmi_max_eig, c.p_min_eig, c.ratio
                    ));
                    k == 1 && c.lmi_max_eig <= 1e-6 && c.p_min_eig > 0.0 && c.ratio <= 1e-3
                }
                Err(e) => {
                    parts.push(format!("simulation failed: {e}"));
                    false
                }
            }
        }
        None => {
            parts.push(format!(
                "no placement within the cap; per-state decay rate {:.4} vs β = {:.4}",
                -tr.tm.model.a[(0, 0)],
                tr.interval.beta.unwrap()
            ));
            // Diagnostic only: what the same problem needs without the cap.
            let mut open = traffic_problem(&tr.tm, tr.interval.clone());
            open.logistic.k_max = n;
            let t = Instant::now();
            match branch_and_bound(&open) {
                Ok(d) => {
                    parts.push(format!(
                        "uncapped: {:?}, {} sensors, {} nodes, {:.1} s",
                        d.status,
                        d.solution.as_ref().map_or(0, |s| s.gamma.iter().filter(|&&g| g).count()),
                        d.nodes,
                        t.elapsed().as_secs_f64()
                    ));
                    if let Some(c) = d.solution.as_ref().and_then(|s| check(s).ok()) {
                        parts.push(format!(
                            "uncapped certificate λ_max = {:.2e}, λ_min(P) = {:.3e}, ‖e(T)‖/‖e(0)‖ = {:.2e}",
                            c.lmi_max_eig, c.p_min_eig, c.ratio
                        ));
                    }
                }
                Err(e) => parts.push(format!("uncapped run failed: {e}")),
            }
            false
        }
    };
    outcome(pass, parts.join("; "))
}

// 7. β ordering, closeness to the reference values, and invariance of the outcome.
fn traffic_constants(tr: &Traffic) -> Outcome {
    let bi = tr.interval.beta.unwrap();
    let ba = tr.analytic_beta;
    let within3 = |v: f64, r: f64| v <= 3.0 * r && r <= 3.0 * v;
    let alt = branch_and_bound(&traffic_problem(&tr.tm, NonlinearityParams::analytic_lipschitz(ba))).expect("placement runs");
    let same = alt.status == tr.capped.status && alt.gamma() == tr.capped.gamma();
    let pass = bi <= ba && within3(ba, REF_ANALYTIC_BETA) && within3(bi, REF_INTERVAL_BETA) && same;
    outcome(
        pass,
        format!(
            "interval β = {bi:.5} ≤ analytic β = {ba:.5}: {}; ratios to reference {:.3} and {:.3}; outcome with interval β {:?} {}, with analytic β {:?} {}",
            bi <= ba,
            ba / REF_ANALYTIC_BETA,
            bi / REF_INTERVAL_BETA,
            tr.capped.status,
            tr.capped.gamma().map(gamma_string).unwrap_or_default(),
            alt.status,
            alt.gamma().map(gamma_string).unwrap_or_default()
        ),
    )
}

/// Lipschitz corpus for the error-dynamics check: linear, sine-coupled and
/// the small highway model.
fn observer_corpus() -> Vec<PlacementProblem> {
    let mut r = rng(1008);
    let mut out = Vec::new();
    while out.len() < 8 {
        out.push(random_placement(&mut r, 3));
    }
    let nonlinear = [
        (vec![-1.0, 1.0, 0.0, 0.5], vec!["0.3*sin(x2)", "0.2*cos(x1)"]),
        (vec![0.2, 0.0, 1.0, -1.0], vec!["0.25*sin(x1 + x2)", "0"]),
        // Stable with the quadratic rows, so the plant stays where β holds.
        (vec![-1.0, 0.3, 0.0, 0.0, -0.5, 1.0, 0.4, 0.0, -0.8], vec!["0.1*x1*x2", "0.2*sin(x3)", "0.1*x3^2"]),
    ];
    let st = ClassifySettings::default();
    for (a, f) in nonlinear {
        let n = f.len();
        let mut m = NdsModel::linear_unit(DMatrix::from_row_slice(n, n, &a), &vec![1.0; n], 1.0);
        m.f = f.iter().map(|s| parse(s, n).unwrap()).collect();
        let params = lipschitz_rowwise(&m, Method::Interval, &st).unwrap();
        out.push(PlacementProblem::new(m, params, Variant::Lipschitz));
    }
    let (_, mut sensors) = experiment_config();
    let cfg = HighwayConfig::small();
    sensors.weights = vec![1.0; cfg.n_x()];
    sensors.logistic = experiment_logistic(LogisticReading::CardinalityCap, cfg.n_x());
    let tm = build_traffic_model(&cfg, sensors).unwrap();
    let params = lipschitz_rowwise(&tm.model, Method::Interval, &st).unwrap();
    out.push(PlacementProblem::new(tm.model, params, Variant::Lipschitz));
    out
}

// 8. Coupled and direct error trajectories agree; V never increases.
fn error_dynamics() -> Outcome {
    let (mut certified, mut skipped) = (0, 0);
    let (mut worst_diff, mut worst_dv) = (0.0f64, f64::NEG_INFINITY);
    let mut failures = Vec::new();
    for (k, prob) in observer_corpus().iter().enumerate() {
        let res = match branch_and_bound(prob) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("#{k}: {e}"));
                continue;
            }
        };
        let Some(sol) = res.solution else {
            skipped += 1;
            continue;
        };
        match simulate_solution(&prob.model, &prob.params, Variant::Lipschitz, None, &sol, 10 + k as u64, 20.0) {
            Ok(c) => {
                worst_diff = worst_diff.max(c.diff / c.tol);
                if c.diff > c.tol {
                    failures.push(format!("#{k}: coupled-vs-direct {:.2e} > {:.2e}", c.diff, c.tol));
                }
                if c.lmi_max_eig <= 1e-7 && c.p_min_eig > 0.0 {
                    certified += 1;
                    worst_dv = worst_dv.max(c.dv);
                    if c.dv > 1e-6 {
                        failures.push(format!("#{k}: V increased by {:.2e} in one step", c.dv));
                    }
                }
            }
            Err(e) => failures.push(format!("#{k}: {e}")),
        }
    }
    outcome(
        failures.is_empty() && certified > 0,
        format!(
            "{certified} certified instances ({skipped} infeasible skipped), worst diff/tolerance {worst_diff:.2e}, worst per-step ΔV {worst_dv:.2e}{}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

/// Θ₁, Θ₂, Θ₃ written out entry by entry for n = 2, row-major (i, j) ↦ 2i + j.
fn hand_bj_block(
    a: &DMatrix<f64>,
    w: &DMatrix<f64>,
    lo: &[Vec<f64>],
    hi: &[Vec<f64>],
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    lam: &DMatrix<f64>,
) -> DMatrix<f64> {
    let cl = |i: usize, j: usize| 0.5 * (lo[i][j] + hi[i][j]);
    let ch = |i: usize, j: usize| 0.5 * (lo[i][j] - hi[i][j]);
    let mut th1 = DMatrix::zeros(2, 2);
    th1[(0, 0)] = lam[(0, 0)] * (ch(0, 0).powi(2) - cl(0, 0).powi(2)) + lam[(1, 0)] * (ch(1, 0).powi(2) - cl(1, 0).powi(2));
    th1[(1, 1)] = lam[(0, 1)] * (ch(0, 1).powi(2) - cl(0, 1).powi(2)) + lam[(1, 1)] * (ch(1, 1).powi(2) - cl(1, 1).powi(2));
    let mut th2 = DMatrix::zeros(4, 2);
    th2[(0, 0)] = lam[(0, 0)] * cl(0, 0);
    th2[(1, 1)] = lam[(0, 1)] * cl(0, 1);
    th2[(2, 0)] = lam[(1, 0)] * cl(1, 0);
    th2[(3, 1)] = lam[(1, 1)] * cl(1, 1);
    let th3 = DMatrix::from_diagonal(&DVector::from_vec(vec![-lam[(0, 0)], -lam[(0, 1)], -lam[(1, 0)], -lam[(1, 1)]]));
    let tl = a.transpose() * p + p * a - q - q.transpose() + th1;
    let bl = w.transpose() * p + th2;
    let mut m = DMatrix::zeros(6, 6);
    m.view_mut((0, 0), (2, 2)).copy_from(&tl);
    m.view_mut((2, 0), (4, 2)).copy_from(&bl);
    m.view_mut((0, 2), (2, 4)).copy_from(&bl.transpose());
    m.view_mut((2, 2), (4, 4)).copy_from(&th3);
    m
}

// 9. Bounded-Jacobian toy: exact Θ assembly and an end-to-end verdict.
fn bounded_jacobian_toy() -> Outcome {
    let a = DMatrix::from_row_slice(2, 2, &[0.25, 0.5, 0.0, -1.0]);
    let mut m = NdsModel::linear_unit(a.clone(), &[1.0, 1.0], 1.0);
    m.f = vec![parse("0.25*sin(x2)", 2).unwrap(), parse("0.125*x1^2", 2).unwrap()];
    let params = jacobian_bounds(&m, Method::Interval, &ClassifySettings::default()).expect("Jacobian bounds");
    let (lo, hi) = (params.jac_lo.clone().unwrap(), params.jac_hi.clone().unwrap());
    let w = default_w(2);
    let mut prob = PlacementProblem::new(m.clone(), params.clone(), Variant::BoundedJacobian);
    prob.w = Some(w.clone());
    prob.w_provenance = Some("user-supplied I ⊗ 1ᵀ".into());

    let (sdp, lay) = assemble_bounded_jacobian(&prob, &[Some(true), Some(true)]).unwrap();
    let mut r = rng(1009);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        // Dyadic points keep every product exact.
        let z: Vec<f64> = (0..sdp.n_vars()).map(|_| r.random_range(-16..=16) as f64 / 8.0).collect();
        let ex = extract(&lay, &z);
        let hand = hand_bj_block(&a, &w, &lo, &hi, &ex.p, &ex.q, ex.lambda.as_ref().unwrap());
        let block = (0..sdp.lmis.len()).find(|&b| sdp.lmis[b].dim == 6).expect("observer block");
        worst = worst.max((sdp.lmi_value(block, &z) - hand).amax());
    }

    let res = match branch_and_bound(&prob) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("assembly max diff {worst:e}; pipeline error: {e}")),
    };
    let verdict = match (&res.status, &res.solution) {
        (PlacementStatus::Optimal, Some(sol)) => {
            match simulate_solution(&m, &params, Variant::BoundedJacobian, Some(&w), sol, 7, 20.0) {
                Ok(c) if c.lmi_max_eig <= 1e-6 && c.p_min_eig > 0.0 => Ok(format!(
                    "certified γ = {}, λ_max = {:.2e}, λ_min(P) = {:.3e}",
                    gamma_string(&sol.gamma),
                    c.lmi_max_eig,
                    c.p_min_eig
                )),
                Ok(c) => Err(format!("certificate λ_max = {:.2e}, λ_min(P) = {:.3e}", c.lmi_max_eig, c.p_min_eig)),
                Err(e) => Err(e),
            }
        }
        (PlacementStatus::Infeasible, None) => Ok("clean infeasibility verdict".into()),
        (s, _) => Err(format!("status {s:?}")),
    };
    let pass = worst == 0.0 && verdict.is_ok();
    outcome(
        pass,
        format!("assembly max diff {worst:e} over 20 points; {}", verdict.unwrap_or_else(|e| e)),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut run = |id: usize, name: &str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!("{} [{id}] {name} ({secs:.1} s): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    };
    run(1, "McCormick equivalence", &mccormick_equivalence);
    run(2, "branch-and-bound optimality", &bnb_optimality);
    run(3, "Lipschitz engines", &lipschitz_engines);
    run(4, "interval soundness", &interval_soundness);
    run(5, "SDP kernel", &sdp_kernel);
    let t = Instant::now();
    let tr = traffic_setup();
    println!("      traffic setup: estimate and capped placement took {:.1} s", t.elapsed().as_secs_f64());
    run(6, "traffic placement at full scale", &|| traffic_full_scale(&tr));
    run(7, "traffic Lipschitz constants", &|| traffic_constants(&tr));
    run(8, "error-dynamics consistency", &error_dynamics);
    run(9, "bounded-Jacobian variant", &bounded_jacobian_toy);
    println!("{} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
