//! Free-flow highway model: mainline segments plus on- and off-ramps.
//!
//! Every element is a density state with Greenshields discharge
//! `q(ρ) = v_f ρ (1 - ρ/ρ_m)`. A segment receives the upstream discharge
//! minus whatever an off-ramp attached to the upstream segment removes, plus
//! the discharge of its on-ramps. States are ordered mainline, on-ramps,
//! off-ramps; the linear part of every `q` goes to A and the quadratic part
//! to f.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::expr::{self, Interval};
use crate::model::{Logistic, NdsModel, Partition, SensorConfig};

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("{kind} {index} is attached to segment {segment}, outside 0..{n_mainline}")]
    Attachment {
        kind: &'static str,
        index: usize,
        segment: usize,
        n_mainline: usize,
    },
    #[error("two off-ramps leave segment {0}")]
    SharedExit(usize),
    #[error("exit ratio {0} is outside (0, 1)")]
    ExitRatio(f64),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighwayConfig {
    pub n_mainline: usize,
    /// Segment (0-based) each on-ramp discharges into.
    pub on_ramps: Vec<usize>,
    /// Segment (0-based) whose outflow each off-ramp splits.
    pub off_ramps: Vec<usize>,
    pub exit_ratios: Vec<f64>,
    /// Segment length l (m).
    pub segment_length: f64,
    /// Free-flow speed v_f (m/s).
    pub free_flow_speed: f64,
    /// Jam density ρ_m (veh/m).
    pub jam_density: f64,
    /// `[upstream inflow; on-ramp demands; off-ramp entries]` (veh/s). The
    /// off-ramp entries have no state they act on and enter B as zero columns.
    pub inflow: Vec<f64>,
    /// Whether the last segment discharges downstream.
    #[serde(default = "yes")]
    pub downstream_open: bool,
}

fn yes() -> bool {
    true
}

impl HighwayConfig {
    pub fn critical_density(&self) -> f64 {
        self.jam_density / 2.0
    }

    pub fn n_x(&self) -> usize {
        self.n_mainline + self.on_ramps.len() + self.off_ramps.len()
    }

    /// N_M = 4, N_I = 1, N_O = 1, same physical constants as the full experiment.
    pub fn small() -> Self {
        HighwayConfig {
            n_mainline: 4,
            on_ramps: vec![1],
            off_ramps: vec![2],
            exit_ratios: vec![0.2],
            inflow: vec![0.2, 0.1, 0.01],
            ..experiment_config().0
        }
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        let param = |m: String| Err(TrafficError::Parameter(m));
        if self.n_mainline == 0 {
            return param("at least one mainline segment is needed".into());
        }
        for (name, v) in [
            ("segment length", self.segment_length),
            ("free-flow speed", self.free_flow_speed),
            ("jam density", self.jam_density),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return param(format!("{name} must be positive, got {v}"));
            }
        }
        let n = self.n_mainline;
        for (kind, list) in [("on-ramp", &self.on_ramps), ("off-ramp", &self.off_ramps)] {
            if let Some((index, &segment)) = list.iter().enumerate().find(|(_, &s)| s >= n) {
                return Err(TrafficError::Attachment {
                    kind,
                    index,
                    segment,
                    n_mainline: n,
                });
            }
        }
        for (k, s) in self.off_ramps.iter().enumerate() {
            if self.off_ramps[..k].contains(s) {
                return Err(TrafficError::SharedExit(*s));
            }
        }
        if self.exit_ratios.len() != self.off_ramps.len() {
            return param(format!("{} exit ratios for {} off-ramps", self.exit_ratios.len(), self.off_ramps.len()));
        }
        if let Some(&a) = self.exit_ratios.iter().find(|&&a| !(a > 0.0 && a < 1.0)) {
            return Err(TrafficError::ExitRatio(a));
        }
        let n_u = 1 + self.on_ramps.len() + self.off_ramps.len();
        if self.inflow.len() != n_u || self.inflow.iter().any(|u| !(*u >= 0.0 && u.is_finite())) {
            return param(format!("inflow must hold {n_u} nonnegative entries"));
        }
        Ok(())
    }

    /// Human-readable name of every state, in model order.
    pub fn state_names(&self) -> Vec<String> {
        let mut v: Vec<String> = (0..self.n_mainline).map(|i| format!("mainline segment {}", i + 1)).collect();
        v.extend(self.on_ramps.iter().enumerate().map(|(k, s)| format!("on-ramp {} (into segment {})", k + 1, s + 1)));
        v.extend(self.off_ramps.iter().enumerate().map(|(k, s)| format!("off-ramp {} (after segment {})", k + 1, s + 1)));
        v
    }
}

/// The full-scale highway and sensor setup: ten segments, on-ramps at segments
/// 3 and 7, off-ramps after segments 2, 4, 6, 8, unit weights, 1 ≤ Σγ ≤ 8.
pub fn experiment_config() -> (HighwayConfig, SensorConfig) {
    let cfg = HighwayConfig {
        n_mainline: 10,
        on_ramps: vec![2, 6],
        off_ramps: vec![1, 3, 5, 7],
        exit_ratios: vec![0.2, 0.3, 0.4, 0.5],
        segment_length: 500.0,
        free_flow_speed: 31.3,
        jam_density: 0.053,
        inflow: vec![0.2, 0.1, 0.1, 0.01, 0.01, 0.01, 0.01],
        downstream_open: true,
    };
    let n = cfg.n_x();
    let sensors = SensorConfig {
        weights: vec![1.0; n],
        logistic: Logistic {
            k_min: 1,
            k_max: 8,
            force_on: Vec::new(),
            force_off: Vec::new(),
        },
    };
    (cfg, sensors)
}

/// How the experiment's "at most 8 sensors" is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogisticReading {
    /// Any state may be measured, at most 8 at once.
    CardinalityCap,
    /// Only the first 8 states carry candidate sensors.
    FirstEight,
}

pub fn experiment_logistic(reading: LogisticReading, n: usize) -> Logistic {
    match reading {
        LogisticReading::CardinalityCap => Logistic {
            k_min: 1,
            k_max: 8.min(n),
            force_on: Vec::new(),
            force_off: Vec::new(),
        },
        LogisticReading::FirstEight => Logistic {
            k_min: 1,
            k_max: n,
            force_on: Vec::new(),
            force_off: (8.min(n)..n).collect(),
        },
    }
}

/// The model plus the quadratic coefficients of f, kept for analytic bounds.
#[derive(Clone, Debug)]
pub struct TrafficModel {
    pub model: NdsModel,
    /// Row i of f is `Σ c · x_k²` over `(k, c)` in `quadratic[i]`.
    pub quadratic: Vec<Vec<(usize, f64)>>,
    pub state_names: Vec<String>,
    pub metadata: serde_json::Value,
}

fn quadratic_row(terms: &[(usize, f64)]) -> String {
    let mut s = String::new();
    for &(k, c) in terms.iter().filter(|(_, c)| *c != 0.0) {
        let sign = if c < 0.0 { "-" } else { "+" };
        if s.is_empty() {
            if c < 0.0 {
                s.push('-');
            }
        } else {
            s.push_str(&format!(" {sign} "));
        }
        s.push_str(&format!("{}*x{}^2", c.abs(), k + 1));
    }
    if s.is_empty() {
        "0".into()
    } else {
        s
    }
}

pub fn build_traffic_model(cfg: &HighwayConfig, sensors: SensorConfig) -> Result<TrafficModel, TrafficError> {
    cfg.validate()?;
    let nm = cfg.n_mainline;
    let ni = cfg.on_ramps.len();
    let no = cfg.off_ramps.len();
    let n = nm + ni + no;
    let n_u = 1 + ni + no;
    let l = cfg.segment_length;
    // q(ρ)/l = k ρ - kq ρ².
    let k = cfg.free_flow_speed / l;
    let kq = cfg.free_flow_speed / (cfg.jam_density * l);

    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n_u);
    let mut quad: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut add_q = |row: usize, state: usize, scale: f64, a: &mut DMatrix<f64>| {
        a[(row, state)] += scale * k;
        quad[row].push((state, -scale * kq));
    };
    let exit = |seg: usize| {
        cfg.off_ramps
            .iter()
            .position(|&s| s == seg)
            .map_or(0.0, |m| cfg.exit_ratios[m])
    };

    for i in 0..nm {
        if i + 1 < nm || cfg.downstream_open {
            add_q(i, i, -1.0, &mut a);
        }
        if i > 0 {
            add_q(i, i - 1, 1.0 - exit(i - 1), &mut a);
        }
    }
    b[(0, 0)] = 1.0 / l;
    for (j, &seg) in cfg.on_ramps.iter().enumerate() {
        let r = nm + j;
        add_q(r, r, -1.0, &mut a);
        add_q(seg, r, 1.0, &mut a);
        b[(r, 1 + j)] = 1.0 / l;
    }
    for (m, &seg) in cfg.off_ramps.iter().enumerate() {
        let o = nm + ni + m;
        add_q(o, seg, cfg.exit_ratios[m], &mut a);
        add_q(o, o, -1.0, &mut a);
    }
    for row in &mut quad {
        row.sort_by_key(|&(s, _)| s);
    }

    let f = quad
        .iter()
        .map(|row| expr::parse(&quadratic_row(row), n).expect("generated row parses"))
        .collect();
    let rho_c = cfg.critical_density();
    let mut partition = Partition::unit(n);
    partition.u = vec![0; n];
    partition.u[0] = 1;
    for u in &mut partition.u[nm..] {
        *u = 1;
    }
    // Node 0 owns u₁ and each ramp node its own entry, which is the inflow order.
    let model = NdsModel {
        n_x: n,
        n_u,
        partition,
        a,
        b,
        c_blocks: vec![DMatrix::from_element(1, 1, 1.0); n],
        f,
        bx: vec![Interval::new(0.0, rho_c); n],
        u_ss: DVector::from_column_slice(&cfg.inflow),
        u_series: None,
        sensors,
    };
    model.validate().map_err(|e| TrafficError::Parameter(e.to_string()))?;
    let state_names = cfg.state_names();
    let metadata = json!({
        "generator": "traffic highway reconstruction",
        "config": cfg,
        "state_names": state_names,
        "flux": "q(rho) = v_f * rho * (1 - rho / rho_m), free-flow branch",
        "segment": "rho_i' = (q_{i-1} (1 - alpha_{i-1}) + sum of on-ramp discharges - q_i) / l",
        "on_ramp": "rho' = (u_in - q(rho)) / l",
        "off_ramp": "rho' = (alpha * q_upstream - q(rho)) / l",
        "upstream_boundary_inflow": "u_1",
        "box": format!("[0, rho_c] = [0, {rho_c}] on every state"),
        "output": "C = I, one sensor per state",
        "off_ramp_inputs": "carried as zero columns of B",
        "note": "reconstructed model; its Lipschitz constants are not expected to match other implementations exactly",
    });
    Ok(TrafficModel {
        model,
        quadratic: quad,
        state_names,
        metadata,
    })
}

/// Symbolic row bound `Σ_k max_box |∂f_i/∂x_k|`, an upper bound on the row's
/// Lipschitz constant since ‖g‖₂ ≤ ‖g‖₁.
pub fn analytic_row_bounds(tm: &TrafficModel) -> Vec<f64> {
    row_gradient_sups(tm).iter().map(|g| g.iter().sum()).collect()
}

/// The exact row constant `max_box ‖∇f_i‖₂`: every term depends on its own
/// coordinate, so the maximum sits at the box corner of largest magnitude.
pub fn exact_row_lipschitz(tm: &TrafficModel) -> Vec<f64> {
    row_gradient_sups(tm)
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

fn row_gradient_sups(tm: &TrafficModel) -> Vec<Vec<f64>> {
    tm.quadratic
        .iter()
        .map(|row| {
            // Repeated states within a row are merged so the derivative is exact.
            let mut merged: Vec<(usize, f64)> = Vec::new();
            for &(s, c) in row {
                match merged.last_mut() {
                    Some((ls, lc)) if *ls == s => *lc += c,
                    _ => merged.push((s, c)),
                }
            }
            merged
                .iter()
                .map(|&(s, c)| 2.0 * c.abs() * tm.model.bx[s].mag())
                .collect()
        })
        .collect()
}

/// `sqrt(Σ β_i²)`.
pub fn aggregate(rows: &[f64]) -> f64 {
    rows.iter().map(|b| b * b).sum::<f64>().sqrt()
}
