//! Nonlinear dynamic system data, its JSON file format, and sensor selection.
//!
//! The plant is `x' = A x + f(x) + B u`, measured through `y = Γ(γ) C x`
//! where `C = blkdiag(C_1..C_N)` and `Γ(γ)` passes the output rows of the
//! active sensors.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, Expr, ExprError, Interval};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file is not valid JSON for the schema: {0}")]
    Json(#[from] serde_json::Error),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty box on state x{}: [{lo}, {hi}]", index + 1)]
    EmptyBox { index: usize, lo: f64, hi: f64 },
    #[error("invalid sensor configuration: {0}")]
    Sensors(String),
    #[error("nonlinearity row {}: {source}", row + 1)]
    Expr { row: usize, source: ExprError },
}

/// Per-node sizes. Node `i` owns `x[i]` states, `u[i]` inputs, `y[i]` outputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub x: Vec<usize>,
    pub u: Vec<usize>,
    pub y: Vec<usize>,
}

impl Partition {
    pub fn unit(n: usize) -> Self {
        Partition {
            x: vec![1; n],
            u: vec![1; n],
            y: vec![1; n],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.y.len()
    }
}

/// The admissible set G: cardinality bounds plus forced on/off sensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub k_min: usize,
    pub k_max: usize,
    #[serde(default)]
    pub force_on: Vec<usize>,
    #[serde(default)]
    pub force_off: Vec<usize>,
}

impl Logistic {
    pub fn free(n: usize) -> Self {
        Logistic {
            k_min: 0,
            k_max: n,
            force_on: Vec::new(),
            force_off: Vec::new(),
        }
    }

    pub fn contains(&self, gamma: &[bool]) -> bool {
        let k = gamma.iter().filter(|&&g| g).count();
        k >= self.k_min
            && k <= self.k_max
            && self.force_on.iter().all(|&i| gamma[i])
            && self.force_off.iter().all(|&i| !gamma[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub weights: Vec<f64>,
    pub logistic: Logistic,
}

impl SensorConfig {
    pub fn unit(n: usize) -> Self {
        SensorConfig {
            weights: vec![1.0; n],
            logistic: Logistic::free(n),
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Sensors(m));
        if self.weights.len() != n {
            return err(format!("{} weights for {n} sensors", self.weights.len()));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return err(format!("weight {w} is not a finite nonnegative number"));
        }
        let lg = &self.logistic;
        if let Some(i) = lg.force_on.iter().chain(&lg.force_off).find(|&&i| i >= n) {
            return err(format!("forced sensor index {i} out of range for {n} sensors"));
        }
        if let Some(i) = lg.force_on.iter().find(|i| lg.force_off.contains(i)) {
            return err(format!("sensor {i} is forced both on and off"));
        }
        Ok(())
    }
}

/// Piecewise-constant input schedule: `values[k]` holds on `[times[k], times[k+1])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSeries {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct NdsModel {
    pub n_x: usize,
    pub n_u: usize,
    pub partition: Partition,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c_blocks: Vec<DMatrix<f64>>,
    pub f: Vec<Expr>,
    pub bx: Vec<Interval>,
    pub u_ss: DVector<f64>,
    pub u_series: Option<InputSeries>,
    pub sensors: SensorConfig,
}

/// On-disk layout; matrices are arrays of rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub n_x: usize,
    pub n_u: usize,
    #[serde(rename = "N")]
    pub n_nodes: usize,
    pub partition_x: Vec<usize>,
    pub partition_u: Vec<usize>,
    pub partition_y: Vec<usize>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C_blocks")]
    pub c_blocks: Vec<Vec<Vec<f64>>>,
    pub f: Vec<String>,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    #[serde(default)]
    pub u_ss: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_series: Option<InputSeries>,
    #[serde(default)]
    pub weights_c: Option<Vec<f64>>,
    #[serde(default)]
    pub logistic: Option<Logistic>,
    /// Free-form provenance carried through untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

fn matrix(name: &str, rows: &[Vec<f64>], nr: usize, nc: usize) -> Result<DMatrix<f64>, ModelError> {
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        return Err(ModelError::Dimension(format!("{name} must be {nr}x{nc}")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl NdsModel {
    /// `x' = A x` with one scalar sensor per state, `y_i = c_i x_i`, box `±bound`.
    pub fn linear_unit(a: DMatrix<f64>, c_diag: &[f64], bound: f64) -> NdsModel {
        let n = a.nrows();
        assert_eq!(c_diag.len(), n, "one output gain per state");
        NdsModel {
            n_x: n,
            n_u: 0,
            partition: Partition {
                x: vec![1; n],
                u: vec![0; n],
                y: vec![1; n],
            },
            a,
            b: DMatrix::zeros(n, 0),
            c_blocks: c_diag.iter().map(|&c| DMatrix::from_element(1, 1, c)).collect(),
            f: vec![Expr::constant(0.0); n],
            bx: vec![Interval::new(-bound, bound); n],
            u_ss: DVector::zeros(0),
            u_series: None,
            sensors: SensorConfig::unit(n),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.partition.n_nodes()
    }

    pub fn n_y(&self) -> usize {
        self.partition.y.iter().sum()
    }

    /// The dense output matrix blkdiag(C_1..C_N).
    pub fn c(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.n_y(), self.n_x);
        let (mut r, mut k) = (0, 0);
        for blk in &self.c_blocks {
            c.view_mut((r, k), (blk.nrows(), blk.ncols())).copy_from(blk);
            r += blk.nrows();
            k += blk.ncols();
        }
        c
    }

    /// True if some row of f uses abs/min/max, which breaks continuous differentiability.
    pub fn assumption1_violated(&self) -> bool {
        self.f.iter().any(Expr::is_nonsmooth)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dim = |m: String| Err(ModelError::Dimension(m));
        let p = &self.partition;
        let n = p.n_nodes();
        if p.x.len() != n || p.u.len() != n {
            return dim(format!(
                "partitions have {}, {}, {} nodes",
                p.x.len(),
                p.u.len(),
                p.y.len()
            ));
        }
        if p.x.iter().sum::<usize>() != self.n_x {
            return dim(format!("partition_x sums to {} but n_x = {}", p.x.iter().sum::<usize>(), self.n_x));
        }
        if p.u.iter().sum::<usize>() != self.n_u {
            return dim(format!("partition_u sums to {} but n_u = {}", p.u.iter().sum::<usize>(), self.n_u));
        }
        if self.a.shape() != (self.n_x, self.n_x) {
            return dim(format!("A is {:?}, expected {}x{}", self.a.shape(), self.n_x, self.n_x));
        }
        if self.b.shape() != (self.n_x, self.n_u) {
            return dim(format!("B is {:?}, expected {}x{}", self.b.shape(), self.n_x, self.n_u));
        }
        if self.c_blocks.len() != n {
            return dim(format!("{} C blocks for {n} nodes", self.c_blocks.len()));
        }
        for (i, blk) in self.c_blocks.iter().enumerate() {
            if blk.shape() != (p.y[i], p.x[i]) {
                return dim(format!("C block {} is {:?}, expected {}x{}", i + 1, blk.shape(), p.y[i], p.x[i]));
            }
        }
        if self.f.len() != self.n_x {
            return dim(format!("f has {} rows, expected {}", self.f.len(), self.n_x));
        }
        for (row, e) in self.f.iter().enumerate() {
            e.check_vars(self.n_x).map_err(|source| ModelError::Expr { row, source })?;
        }
        if self.bx.len() != self.n_x {
            return dim(format!("box has {} components, expected {}", self.bx.len(), self.n_x));
        }
        for (index, iv) in self.bx.iter().enumerate() {
            if !(iv.lo <= iv.hi) || !iv.lo.is_finite() || !iv.hi.is_finite() {
                return Err(ModelError::EmptyBox { index, lo: iv.lo, hi: iv.hi });
            }
        }
        if self.u_ss.len() != self.n_u {
            return dim(format!("u_ss has {} entries, expected {}", self.u_ss.len(), self.n_u));
        }
        if let Some(s) = &self.u_series {
            if s.times.len() != s.values.len() || s.values.iter().any(|v| v.len() != self.n_u) {
                return dim("u_series times/values do not match n_u".into());
            }
            if s.times.windows(2).any(|w| !(w[0] < w[1])) {
                return dim("u_series times must be strictly increasing".into());
            }
        }
        self.sensors.validate(n)
    }

    pub fn from_file_data(d: ModelFile) -> Result<NdsModel, ModelError> {
        let partition = Partition {
            x: d.partition_x,
            u: d.partition_u,
            y: d.partition_y,
        };
        if partition.y.len() != d.n_nodes {
            return Err(ModelError::Dimension(format!(
                "partition_y has {} nodes but N = {}",
                partition.y.len(),
                d.n_nodes
            )));
        }
        let a = matrix("A", &d.a, d.n_x, d.n_x)?;
        let b = matrix("B", &d.b, d.n_x, d.n_u)?;
        if d.c_blocks.len() != d.n_nodes {
            return Err(ModelError::Dimension(format!("{} C blocks for N = {}", d.c_blocks.len(), d.n_nodes)));
        }
        let mut c_blocks = Vec::with_capacity(d.n_nodes);
        for (i, blk) in d.c_blocks.iter().enumerate() {
            let (ny, nx) = (
                partition.y[i],
                partition.x.get(i).copied().unwrap_or(0),
            );
            c_blocks.push(matrix(&format!("C block {}", i + 1), blk, ny, nx)?);
        }
        let f = d
            .f
            .iter()
            .enumerate()
            .map(|(row, s)| expr::parse(s, d.n_x).map_err(|source| ModelError::Expr { row, source }))
            .collect::<Result<Vec<_>, _>>()?;
        if d.box_lo.len() != d.n_x || d.box_hi.len() != d.n_x {
            return Err(ModelError::Dimension("box_lo/box_hi must have n_x entries".into()));
        }
        let bx = d
            .box_lo
            .iter()
            .zip(&d.box_hi)
            .enumerate()
            .map(|(index, (&lo, &hi))| {
                Interval::try_new(lo, hi).ok_or(ModelError::EmptyBox { index, lo, hi })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let u_ss = DVector::from_vec(d.u_ss.unwrap_or_else(|| vec![0.0; d.n_u]));
        let sensors = SensorConfig {
            weights: d.weights_c.unwrap_or_else(|| vec![1.0; d.n_nodes]),
            logistic: d.logistic.unwrap_or_else(|| Logistic::free(d.n_nodes)),
        };
        let m = NdsModel {
            n_x: d.n_x,
            n_u: d.n_u,
            partition,
            a,
            b,
            c_blocks,
            f,
            bx,
            u_ss,
            u_series: d.u_series,
            sensors,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn to_file_data(&self, metadata: Option<serde_json::Value>) -> ModelFile {
        ModelFile {
            n_x: self.n_x,
            n_u: self.n_u,
            n_nodes: self.n_nodes(),
            partition_x: self.partition.x.clone(),
            partition_u: self.partition.u.clone(),
            partition_y: self.partition.y.clone(),
            a: rows_of(&self.a),
            b: rows_of(&self.b),
            c_blocks: self.c_blocks.iter().map(rows_of).collect(),
            f: self.f.iter().map(|e| e.to_string()).collect(),
            box_lo: self.bx.iter().map(|i| i.lo).collect(),
            box_hi: self.bx.iter().map(|i| i.hi).collect(),
            u_ss: Some(self.u_ss.iter().copied().collect()),
            u_series: self.u_series.clone(),
            weights_c: Some(self.sensors.weights.clone()),
            logistic: Some(self.sensors.logistic.clone()),
            metadata,
        }
    }

    pub fn from_json(text: &str) -> Result<NdsModel, ModelError> {
        NdsModel::from_file_data(serde_json::from_str(text)?)
    }

    pub fn to_json(&self, metadata: Option<serde_json::Value>) -> String {
        serde_json::to_string_pretty(&self.to_file_data(metadata)).expect("model serializes")
    }

    /// Input at time `t`: the schedule entry in force, else the steady state.
    pub fn input_at(&self, t: f64) -> DVector<f64> {
        if let Some(s) = &self.u_series {
            if let Some(k) = s.times.iter().rposition(|&tk| tk <= t) {
                return DVector::from_column_slice(&s.values[k]);
            }
        }
        self.u_ss.clone()
    }

    pub fn f_eval(&self, x: &[f64]) -> Result<DVector<f64>, ExprError> {
        let v = self.f.iter().map(|e| e.eval(x)).collect::<Result<Vec<_>, _>>()?;
        Ok(DVector::from_vec(v))
    }

    /// The open-loop vector field `A x + f(x) + B u`.
    pub fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, ExprError> {
        Ok(&self.a * x + self.f_eval(x.as_slice())? + &self.b * u)
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NdsModel, ModelError> {
    NdsModel::from_json(&std::fs::read_to_string(path)?)
}

/// Γ(γ) = blkdiag(γ_1 I_{n_y1}, ..., γ_N I_{n_yN}).
pub fn expand_gamma(gamma: &[bool], partition_y: &[usize]) -> DMatrix<f64> {
    assert_eq!(gamma.len(), partition_y.len(), "one γ entry per sensor");
    let d: Vec<f64> = gamma
        .iter()
        .zip(partition_y)
        .flat_map(|(&g, &ny)| std::iter::repeat_n(if g { 1.0 } else { 0.0 }, ny))
        .collect();
    DMatrix::from_diagonal(&DVector::from_vec(d))
}

/// Owning sensor (0-based) of each output row, i.e. of each column of `Y Γ`.
pub fn column_sensor_map(partition_y: &[usize]) -> Vec<usize> {
    partition_y
        .iter()
        .enumerate()
        .flat_map(|(s, &ny)| std::iter::repeat_n(s, ny))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_json(partition_x: &str) -> String {
        format!(
            r#"{{"n_x":2,"n_u":0,"N":2,"partition_x":{partition_x},"partition_u":[0,0],
            "partition_y":[1,1],"A":[[-1,0],[0,-2]],"B":[[],[]],"C_blocks":[[[1]],[[1]]],
            "f":["0","0"],"box_lo":[-1,-1],"box_hi":[1,1]}}"#
        )
    }

    #[test]
    fn loads_linear_model() {
        let m = NdsModel::from_json(&two_state_json("[1,1]")).unwrap();
        assert_eq!(m.n_nodes(), 2);
        assert_eq!(m.f_eval(&[0.3, 0.4]).unwrap().norm(), 0.0);
        assert_eq!(m.c(), DMatrix::identity(2, 2));
        assert!(!m.assumption1_violated());
        let back = NdsModel::from_json(&m.to_json(None)).unwrap();
        assert_eq!(back.a, m.a);
    }

    #[test]
    fn rejects_partition_mismatch() {
        let r = NdsModel::from_json(&two_state_json("[2,1]"));
        assert!(matches!(r, Err(ModelError::Dimension(_))), "{r:?}");
    }

    #[test]
    fn rejects_empty_box() {
        let t = two_state_json("[1,1]").replace(r#""box_hi":[1,1]"#, r#""box_hi":[1,-2]"#);
        assert!(matches!(NdsModel::from_json(&t), Err(ModelError::EmptyBox { index: 1, .. })));
    }

    #[test]
    fn gamma_expansion() {
        assert_eq!(expand_gamma(&[true, false], &[1, 1]), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])));
        assert_eq!(expand_gamma(&[true], &[3]), DMatrix::identity(3, 3));
        let mut g = vec![false; 16];
        g[15] = true;
        let e = expand_gamma(&g, &[1; 16]);
        assert_eq!(e.sum(), 1.0);
        assert_eq!(e[(15, 15)], 1.0);
    }

    #[test]
    fn sensor_map() {
        assert_eq!(column_sensor_map(&[1, 1, 1]), vec![0, 1, 2]);
        assert_eq!(column_sensor_map(&[2, 1]), vec![0, 0, 1]);
        assert_eq!(column_sensor_map(&[1; 16]), (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn logistic_membership() {
        let g = Logistic {
            k_min: 1,
            k_max: 2,
            force_on: vec![0],
            force_off: vec![2],
        };
        assert!(g.contains(&[true, false, false]));
        assert!(!g.contains(&[false, true, false]));
        assert!(!g.contains(&[true, true, true]));
    }
}
