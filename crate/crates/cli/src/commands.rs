use std::path::Path;

use nalgebra::DMatrix;
use sensorplace::classify::{self, ClassifySettings, Method, NonlinearityClass, NonlinearityParams};
use sensorplace::lds::SequenceKind;
use sensorplace::misdp::{
    assemble_bounded_jacobian, assemble_relaxed, branch_and_bound, default_w, MisdpError, MisdpSettings, PlacementProblem,
    PlacementStatus, Variant,
};
use sensorplace::model::{NdsModel, ModelFile};
use sensorplace::observer::{
    check_certificate, default_step, error_of, sample_in_box, simulate_coupled, simulate_error, summarize, Multiplier,
    ObserverGain,
};
use sensorplace::sdp::SdpSettings;
use sensorplace::traffic::{
    aggregate, analytic_row_bounds, build_traffic_model, exact_row_lipschitz, experiment_config, experiment_logistic,
    HighwayConfig, LogisticReading,
};

use crate::manifest::{read_json, sidecar, write_json, write_text, ManifestBuilder};
use crate::report::{PlacementReport, SimulationReport};
use crate::{
    ClassArg, CliError, EstimationFlags, MethodArg, ParameterizeArgs, PlaceArgs, ReadingArg, ScaleArg, SequenceArg,
    SimFlags, SimulateArgs, SolverFlags, TrafficDemoArgs, VariantArg,
};

fn load_model(path: &Path) -> Result<(NdsModel, Option<serde_json::Value>), CliError> {
    let file: ModelFile = read_json(path)?;
    let meta = file.metadata.clone();
    let model = NdsModel::from_file_data(file).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    Ok((model, meta))
}

fn state_names(meta: &Option<serde_json::Value>) -> Option<Vec<String>> {
    serde_json::from_value(meta.as_ref()?.get("state_names")?.clone()).ok()
}

fn classify_settings(f: &EstimationFlags) -> ClassifySettings {
    let mut st = ClassifySettings {
        samples: f.samples,
        sequence: match f.sequence {
            SequenceArg::Sobol => SequenceKind::Sobol,
            SequenceArg::Halton => SequenceKind::Halton,
            SequenceArg::Uniform => SequenceKind::Uniform,
        },
        seed: f.seed,
        ..ClassifySettings::default()
    };
    st.bnb.eps_h = f.eps_h;
    if let Some(m) = f.max_iters {
        st.bnb.max_iters = m;
    }
    st
}

fn estimate(model: &NdsModel, class: ClassArg, f: &EstimationFlags) -> Result<NonlinearityParams, CliError> {
    let class = match class {
        ClassArg::Lipschitz => NonlinearityClass::Lipschitz,
        ClassArg::BoundedJacobian => NonlinearityClass::BoundedJacobian,
        ClassArg::OneSidedLipschitz => NonlinearityClass::OneSidedLipschitz,
        ClassArg::Qib => NonlinearityClass::Qib,
    };
    let method = match f.method {
        MethodArg::Interval => Method::Interval,
        MethodArg::Lds => Method::Lds,
    };
    classify::parameterize(model, class, method, &classify_settings(f)).map_err(CliError::estimation)
}

fn misdp_settings(f: &SolverFlags) -> MisdpSettings {
    MisdpSettings {
        sdp: SdpSettings {
            feas_tol: f.feas_tol,
            gap_tol: f.gap_tol,
            infeas_margin: f.infeas_margin,
            max_newton: f.max_newton,
            ..SdpSettings::default()
        },
        mu: f.mu,
        max_nodes: f.max_nodes,
        superset_pruning: !f.no_superset_pruning,
    }
}

pub fn parameterize(a: &ParameterizeArgs) -> Result<u8, CliError> {
    let mut man = ManifestBuilder::new("parameterize", a, &[&a.model]);
    let (model, _) = load_model(&a.model)?;
    let p = estimate(&model, a.class, &a.est)?;
    write_json(&a.out, &p)?;
    man.output(&a.out);
    man.finish(&sidecar(&a.out))?;
    if let Some(b) = p.beta {
        println!("beta = {b} (certificate: {})", p.certificate);
    }
    Ok(0)
}

fn usage(m: impl std::fmt::Display) -> CliError {
    CliError::io(m)
}

fn misdp_error(e: MisdpError) -> CliError {
    match e {
        MisdpError::Node { .. } => CliError::numerical(e),
        e => usage(e),
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn status_code(s: PlacementStatus) -> u8 {
    match s {
        PlacementStatus::Optimal => 0,
        PlacementStatus::Infeasible => 2,
        PlacementStatus::BudgetExceeded => 3,
    }
}

/// Runs branch-and-bound and packages the result.
fn solve_placement(prob: &PlacementProblem, names: Option<Vec<String>>, y_bound: f64) -> Result<PlacementReport, CliError> {
    let result = branch_and_bound(prob).map_err(misdp_error)?;
    let selected: Vec<usize> = result
        .gamma()
        .map(|g| g.iter().enumerate().filter(|(_, &on)| on).map(|(s, _)| s).collect())
        .unwrap_or_default();
    let selected_names = names.map(|n| selected.iter().map(|&s| n[s].clone()).collect());
    Ok(PlacementReport {
        variant: prob.variant,
        params: prob.params.clone(),
        w: prob.w.as_ref().map(to_rows),
        w_provenance: prob.w_provenance.clone(),
        y_bound,
        logistic: prob.logistic.clone(),
        selected,
        selected_names,
        result,
    })
}

fn print_placement(label: &str, r: &PlacementReport) {
    let res = &r.result;
    println!(
        "{label}: {:?}, {} sensor(s) [{}], {} nodes, {} Newton steps, {:.2} s",
        res.status,
        r.selected.len(),
        r.selected_names.as_ref().map_or_else(|| format!("{:?}", r.selected), |n| n.join(", ")),
        res.nodes,
        res.newton_steps,
        res.wall_seconds
    );
    for n in &res.notes {
        println!("  note: {n}");
    }
}

pub fn place(a: &PlaceArgs) -> Result<u8, CliError> {
    let mut man = ManifestBuilder::new("place", a, &[&a.model, &a.params]);
    let (model, meta) = load_model(&a.model)?;
    let params: NonlinearityParams = read_json(&a.params)?;
    let variant = match (a.variant, params.class) {
        (Some(VariantArg::Lipschitz), _) => Variant::Lipschitz,
        (Some(VariantArg::BoundedJacobian), _) => Variant::BoundedJacobian,
        (None, Some(NonlinearityClass::Lipschitz)) => Variant::Lipschitz,
        (None, Some(NonlinearityClass::BoundedJacobian)) => Variant::BoundedJacobian,
        (None, c) => return Err(usage(format!("params class {c:?} has no placement LMI; pass --variant"))),
    };
    let n = model.n_x;
    let mut prob = PlacementProblem::new(model, params, variant).with_y_bound(a.solver.ybound);
    prob.settings = misdp_settings(&a.solver);
    if let Some(k) = a.k_min {
        prob.logistic.k_min = k;
    }
    if let Some(k) = a.k_max {
        prob.logistic.k_max = k;
    }
    prob.logistic.force_on.extend(&a.force_on);
    prob.logistic.force_off.extend(&a.force_off);
    if variant == Variant::BoundedJacobian {
        if let Some(path) = &a.w {
            let rows: Vec<Vec<f64>> = read_json(path)?;
            let c = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != c) {
                return Err(usage(format!("{}: W rows have different lengths", path.display())));
            }
            prob.w = Some(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]));
            prob.w_provenance = Some(format!("user file {}", path.display()));
        } else if a.w_default {
            prob.w = Some(default_w(n));
            prob.w_provenance = Some("default W = I_n ⊗ 1ᵀ_n (--w-default)".into());
        } else {
            return Err(usage("--variant bounded-jacobian needs W: pass --w FILE or --w-default"));
        }
    }
    prob.validate().map_err(misdp_error)?;
    if let Some(path) = &a.dump_sdp {
        let root = vec![None; prob.n_sensors()];
        let (sdp, _) = match variant {
            Variant::Lipschitz => assemble_relaxed(&prob, &root),
            Variant::BoundedJacobian => assemble_bounded_jacobian(&prob, &root),
        }
        .map_err(misdp_error)?;
        write_json(path, &sdp)?;
        man.output(path);
    }
    let report = solve_placement(&prob, state_names(&meta), a.solver.ybound)?;
    write_json(&a.out, &report)?;
    man.output(&a.out);
    man.finish(&sidecar(&a.out))?;
    print_placement("placement", &report);
    Ok(status_code(report.result.status))
}

fn run_simulation(model: &NdsModel, report: &PlacementReport, f: &SimFlags, out_dir: &Path, man: &mut ManifestBuilder) -> Result<SimulationReport, CliError> {
    let sol = report
        .result
        .solution
        .as_ref()
        .ok_or_else(|| CliError { code: 2, message: "placement has no solution to simulate".into() })?;
    let gain = ObserverGain::new(sol.l.clone(), sol.gamma.clone(), model).map_err(usage)?;
    let closed = &model.a - gain.injection(model);
    let h = f.h.unwrap_or_else(|| default_step(&[&model.a, &closed]));
    let x0 = sample_in_box(&model.bx, f.x0_seed);
    let xhat0 = sample_in_box(&model.bx, f.xhat0_seed.unwrap_or(f.x0_seed + 1));
    let (plant, obs) = simulate_coupled(model, &gain, &x0, &xhat0, f.t_end, h).map_err(CliError::numerical)?;
    let err = error_of(&plant, &obs);
    let e0 = &x0 - &xhat0;
    let direct = simulate_error(model, &gain, &e0, &plant).map_err(CliError::numerical)?;
    let diff = err
        .states
        .iter()
        .zip(&direct.states)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    let mult = match report.variant {
        Variant::Lipschitz => sol.kappa.map(Multiplier::Kappa),
        Variant::BoundedJacobian => sol.lambda.clone().map(Multiplier::Lambda),
    };
    let w = report.w.as_ref().map(|rows| DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]));
    let cert = mult
        .ok_or_else(|| "placement has no multiplier".to_string())
        .and_then(|m| check_certificate(model, &report.params, report.variant, &gain, &sol.p, &m, w.as_ref()).map_err(|e| e.to_string()));
    let sim = SimulationReport {
        summary: summarize(&plant, &err, Some(&sol.p)),
        x0: x0.iter().copied().collect(),
        xhat0: xhat0.iter().copied().collect(),
        coupled_vs_direct_max_abs_diff: diff,
        coupled_vs_direct_tolerance: 1e-6 * (1.0 + e0.norm()),
        certificate_error: cert.as_ref().err().cloned(),
        certificate: cert.ok(),
    };
    for (name, traj) in [("plant.csv", &plant), ("observer.csv", &obs), ("error.csv", &err), ("error_direct.csv", &direct)] {
        let p = out_dir.join(name);
        write_text(&p, &traj.to_csv())?;
        man.output(&p);
    }
    let p = out_dir.join("summary.json");
    write_json(&p, &sim)?;
    man.output(&p);
    println!(
        "simulation: ||e(T)||/||e(0)|| = {:.3e} at T = {} s, h = {:.3e}, coupled-vs-direct {:.2e}",
        sim.summary.relative_final_error, sim.summary.t_end, sim.summary.h, diff
    );
    Ok(sim)
}

pub fn simulate(a: &SimulateArgs) -> Result<u8, CliError> {
    let mut man = ManifestBuilder::new("simulate", a, &[&a.model, &a.placement]);
    let (model, _) = load_model(&a.model)?;
    let report: PlacementReport = read_json(&a.placement)?;
    run_simulation(&model, &report, &a.sim, &a.out_dir, &mut man)?;
    man.finish(&a.out_dir.join("manifest.json"))?;
    Ok(0)
}

pub fn traffic_demo(a: &TrafficDemoArgs) -> Result<u8, CliError> {
    let mut man = ManifestBuilder::new("traffic-demo", a, &[]);
    let dir = &a.out_dir;
    let (cfg, mut sensors) = match a.scale {
        ScaleArg::Full => experiment_config(),
        ScaleArg::Small => {
            let (_, s) = experiment_config();
            (HighwayConfig::small(), s)
        }
    };
    let n = cfg.n_x();
    let reading = match a.reading {
        ReadingArg::Cap => LogisticReading::CardinalityCap,
        ReadingArg::FirstEight => LogisticReading::FirstEight,
    };
    sensors.weights = vec![1.0; n];
    sensors.logistic = experiment_logistic(reading, n);
    let tm = build_traffic_model(&cfg, sensors).map_err(usage)?;
    let mut meta = tm.metadata.clone();
    meta["logistic_reading"] = serde_json::to_value(reading).unwrap();
    let model_path = dir.join("model.json");
    write_text(&model_path, &tm.model.to_json(Some(meta)))?;
    man.output(&model_path);

    let params = estimate(&tm.model, ClassArg::Lipschitz, &a.est)?;
    let params_path = dir.join("params.json");
    write_json(&params_path, &params)?;
    man.output(&params_path);
    let analytic = analytic_row_bounds(&tm);
    let exact = exact_row_lipschitz(&tm);
    let oracle_path = dir.join("analytic_bounds.json");
    write_json(
        &oracle_path,
        &serde_json::json!({
            "row_bounds": analytic,
            "beta": aggregate(&analytic),
            "exact_rows": exact,
            "beta_exact": aggregate(&exact),
            "note": "row bound = sum_k max |df_i/dx_k| over the box; exact = max ||grad f_i||_2",
        }),
    )?;
    man.output(&oracle_path);
    println!(
        "beta ({:?}) = {:.6}, analytic row bound = {:.6}, exact = {:.6}",
        params.method,
        params.beta.unwrap_or(f64::NAN),
        aggregate(&analytic),
        aggregate(&exact)
    );

    let mut prob = PlacementProblem::new(tm.model.clone(), params, Variant::Lipschitz).with_y_bound(a.solver.ybound);
    prob.settings = misdp_settings(&a.solver);
    let report = solve_placement(&prob, Some(tm.state_names.clone()), a.solver.ybound)?;
    let place_path = dir.join("placement.json");
    write_json(&place_path, &report)?;
    man.output(&place_path);
    print_placement("placement", &report);
    let code = status_code(report.result.status);

    if report.result.status == PlacementStatus::Optimal {
        run_simulation(&tm.model, &report, &a.sim, &dir.join("sim"), &mut man)?;
    } else if report.result.status == PlacementStatus::Infeasible && a.uncapped_diagnostic {
        let mut open = prob.clone();
        open.logistic.k_max = n;
        open.logistic.force_off.clear();
        let diag = solve_placement(&open, Some(tm.state_names.clone()), a.solver.ybound)?;
        let p = dir.join("placement_uncapped.json");
        write_json(&p, &diag)?;
        man.output(&p);
        print_placement("diagnostic without the cardinality cap", &diag);
        if diag.result.status == PlacementStatus::Optimal {
            run_simulation(&tm.model, &diag, &a.sim, &dir.join("sim_uncapped"), &mut man)?;
        }
    }
    man.finish(&dir.join("manifest.json"))?;
    Ok(code)
}
