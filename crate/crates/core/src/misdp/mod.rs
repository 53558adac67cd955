//! Minimal sensor placement as a convex mixed-integer SDP.
//!
//! The bilinear product `YΓ(γ)` is replaced by `Q` plus McCormick rows that
//! are exact at binary γ, and the resulting problem is solved by
//! branch-and-bound with γ relaxed to [0, 1] at each node.

mod assemble;
mod bnb;
mod mccormick;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assemble::{
    assemble_bounded_jacobian, assemble_exact, assemble_relaxed, bounded_jacobian_lmi, default_w, extract, lipschitz_lmi, theta1,
    theta2, theta3, Extracted, VarLayout,
};
pub use bnb::{
    branch_and_bound, branching_rule, NodeRecord, NodeStatus, PlacementResult, PlacementSolution, PlacementStatus,
    INTEGRALITY_TOL,
};
pub use mccormick::{build_mccormick, McCormickRow, McCormickSystem, RowFamily};

use crate::classify::NonlinearityParams;
use crate::model::{Logistic, ModelError, NdsModel, SensorConfig};
use crate::sdp::{SdpSettings, SdpStatus};

/// Default `|Y_ij|` bound when none is given.
pub const DEFAULT_Y_BOUND: f64 = 100.0;

#[derive(Debug, Error)]
pub enum MisdpError {
    #[error("Y entry ({i}, {j}) has an unbounded interval")]
    UnboundedY { i: usize, j: usize },
    #[error("Y entry ({i}, {j}) has an empty interval [{lo}, {hi}]")]
    EmptyY { i: usize, j: usize, lo: f64, hi: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("the Lipschitz variant needs a constant beta")]
    MissingBeta,
    #[error("the bounded-Jacobian variant needs Jacobian bounds")]
    MissingJacobian,
    #[error("Jacobian bound ({i}, {j}) has lower {lo} above upper {hi}")]
    JacobianOrder { i: usize, j: usize, lo: f64, hi: f64 },
    #[error("the bounded-Jacobian variant needs a user-supplied W")]
    MissingW,
    #[error("{0}")]
    Variant(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("node {id} failed twice with status {status:?}")]
    Node { id: usize, status: SdpStatus },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Lipschitz,
    BoundedJacobian,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lipschitz" => Ok(Variant::Lipschitz),
            "bounded-jacobian" => Ok(Variant::BoundedJacobian),
            _ => Err(format!("unknown variant {s:?} (expected lipschitz or bounded-jacobian)")),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MisdpSettings {
    pub sdp: SdpSettings,
    /// Lower eigenvalue bound imposed on P.
    pub mu: f64,
    pub max_nodes: usize,
    /// Prune a node when its largest completion (every free sensor on) is
    /// already infeasible. Only used when zero lies in every Y interval.
    pub superset_pruning: bool,
}

impl Default for MisdpSettings {
    fn default() -> Self {
        MisdpSettings {
            sdp: SdpSettings::default(),
            mu: 1.0,
            max_nodes: 10_000,
            superset_pruning: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlacementProblem {
    pub model: NdsModel,
    pub params: NonlinearityParams,
    pub variant: Variant,
    pub y_lo: DMatrix<f64>,
    pub y_hi: DMatrix<f64>,
    pub logistic: Logistic,
    pub weights: Vec<f64>,
    /// Multiplier in the bounded-Jacobian LMI, n_x × n_x².
    pub w: Option<DMatrix<f64>>,
    pub w_provenance: Option<String>,
    pub settings: MisdpSettings,
}

impl PlacementProblem {
    /// Y boxed to ±100, logistic set and weights taken from the model.
    pub fn new(model: NdsModel, params: NonlinearityParams, variant: Variant) -> Self {
        let (n_x, n_y) = (model.n_x, model.n_y());
        PlacementProblem {
            y_lo: DMatrix::from_element(n_x, n_y, -DEFAULT_Y_BOUND),
            y_hi: DMatrix::from_element(n_x, n_y, DEFAULT_Y_BOUND),
            logistic: model.sensors.logistic.clone(),
            weights: model.sensors.weights.clone(),
            model,
            params,
            variant,
            w: None,
            w_provenance: None,
            settings: MisdpSettings::default(),
        }
    }

    pub fn with_y_bound(mut self, bound: f64) -> Self {
        self.y_lo.fill(-bound);
        self.y_hi.fill(bound);
        self
    }

    pub fn beta(&self) -> Result<f64, MisdpError> {
        self.params.beta.ok_or(MisdpError::MissingBeta)
    }

    pub fn jacobian_bounds(&self) -> Result<(&[Vec<f64>], &[Vec<f64>]), MisdpError> {
        match (&self.params.jac_lo, &self.params.jac_hi) {
            (Some(lo), Some(hi)) => Ok((lo, hi)),
            _ => Err(MisdpError::MissingJacobian),
        }
    }

    pub fn n_sensors(&self) -> usize {
        self.model.n_nodes()
    }

    pub fn validate(&self) -> Result<(), MisdpError> {
        self.model.validate()?;
        let n = self.model.n_x;
        let n_s = self.n_sensors();
        SensorConfig {
            weights: self.weights.clone(),
            logistic: self.logistic.clone(),
        }
        .validate(n_s)?;
        if self.y_lo.shape() != (n, self.model.n_y()) {
            return Err(MisdpError::Dimension(format!(
                "Y bounds are {:?}, expected {:?}",
                self.y_lo.shape(),
                (n, self.model.n_y())
            )));
        }
        match self.variant {
            Variant::Lipschitz => {
                self.beta()?;
            }
            Variant::BoundedJacobian => {
                let (lo, hi) = self.jacobian_bounds()?;
                if lo.len() != n || hi.len() != n || lo.iter().chain(hi).any(|r| r.len() != n) {
                    return Err(MisdpError::Dimension(format!("Jacobian bounds must be {n}×{n}")));
                }
                for i in 0..n {
                    for j in 0..n {
                        if lo[i][j] > hi[i][j] {
                            return Err(MisdpError::JacobianOrder {
                                i,
                                j,
                                lo: lo[i][j],
                                hi: hi[i][j],
                            });
                        }
                    }
                }
                let w = self.w.as_ref().ok_or(MisdpError::MissingW)?;
                if w.shape() != (n, n * n) {
                    return Err(MisdpError::Dimension(format!("W is {:?}, expected {:?}", w.shape(), (n, n * n))));
                }
            }
        }
        Ok(())
    }
}

pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let (r, c) = (rows.len(), rows.first().map_or(0, Vec::len));
        if rows.iter().any(|row| row.len() != c) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
            m.as_ref().map(to_rows).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
            let rows: Option<Vec<Vec<f64>>> = Option::deserialize(d)?;
            Ok(rows.map(|rows| {
                let (r, c) = (rows.len(), rows.first().map_or(0, Vec::len));
                DMatrix::from_fn(r, c, |i, j| rows[i][j])
            }))
        }
    }
}
