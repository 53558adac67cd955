use nalgebra::{DMatrix, DVector};
use sensorplace::classify::{lipschitz_rowwise, ClassifySettings, Method};
use sensorplace::misdp::{branch_and_bound, PlacementProblem, PlacementStatus, Variant};
use sensorplace::model::SensorConfig;
use sensorplace::observer::{
    default_step, error_of, lyapunov_values, max_lyapunov_increase, sample_in_box, simulate_coupled, ObserverGain,
};
use sensorplace::traffic::{build_traffic_model, experiment_config, HighwayConfig};

fn idle(m: &sensorplace::model::NdsModel) -> ObserverGain {
    ObserverGain::new(DMatrix::zeros(m.n_x, m.n_y()), vec![false; m.n_nodes()], m).unwrap()
}

#[test]
fn closed_road_conserves_vehicles() {
    let cfg = HighwayConfig {
        n_mainline: 5,
        on_ramps: vec![],
        off_ramps: vec![],
        exit_ratios: vec![],
        inflow: vec![0.0],
        downstream_open: false,
        ..HighwayConfig::small()
    };
    let tm = build_traffic_model(&cfg, SensorConfig::unit(5)).unwrap();
    let m = &tm.model;
    let x0 = sample_in_box(&m.bx, 3);
    let (x, _) = simulate_coupled(m, &idle(m), &x0, &x0, 300.0, 0.5).unwrap();
    let total0: f64 = x0.iter().sum();
    for s in &x.states {
        let total: f64 = s.iter().sum();
        assert!((total - total0).abs() <= 1e-12 * total0.max(1.0), "{total} vs {total0}");
    }
}

#[test]
fn densities_stay_nonnegative_over_the_demo_horizon() {
    let (cfg, sensors) = experiment_config();
    let tm = build_traffic_model(&cfg, sensors).unwrap();
    let m = &tm.model;
    let h = default_step(&[&m.a]);
    for seed in 0..3 {
        let x0 = sample_in_box(&m.bx, seed);
        let (x, _) = simulate_coupled(m, &idle(m), &x0, &x0, 200.0, h).unwrap();
        let worst = x.states.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        assert!(worst >= -1e-12, "density {worst} with seed {seed}");
    }
}

#[test]
fn nonlinearity_is_quadratic() {
    let (cfg, sensors) = experiment_config();
    let tm = build_traffic_model(&cfg, sensors).unwrap();
    assert!(tm.model.f.iter().all(|e| e.polynomial_degree().is_some_and(|d| d <= 2)));
    // At the zero state the dynamics reduce to B u.
    let zero = DVector::zeros(tm.model.n_x);
    let rhs = tm.model.rhs(&zero, &tm.model.u_ss).unwrap();
    assert!((rhs - &tm.model.b * &tm.model.u_ss).amax() < 1e-15);
}

#[test]
fn small_highway_observer_decreases_lyapunov_function() {
    let cfg = HighwayConfig::small();
    let tm = build_traffic_model(&cfg, SensorConfig::unit(cfg.n_x())).unwrap();
    let params = lipschitz_rowwise(&tm.model, Method::Interval, &ClassifySettings::default()).unwrap();
    let prob = PlacementProblem::new(tm.model.clone(), params, Variant::Lipschitz);
    let r = branch_and_bound(&prob).unwrap();
    assert_eq!(r.status, PlacementStatus::Optimal);
    let sol = r.solution.unwrap();
    let m = &tm.model;
    let gain = ObserverGain::new(sol.l.clone(), sol.gamma.clone(), m).unwrap();
    let h = default_step(&[&m.a, &(&m.a - gain.injection(m))]);
    let (x, xh) = simulate_coupled(m, &gain, &sample_in_box(&m.bx, 1), &sample_in_box(&m.bx, 2), 50.0, h).unwrap();
    let v = lyapunov_values(&sol.p, &error_of(&x, &xh));
    assert!(max_lyapunov_increase(&v) <= 1e-9 * v[0]);
    assert!(v.last().unwrap() < &(1e-3 * v[0]));
}
