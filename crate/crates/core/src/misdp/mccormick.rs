//! Exact linearization of `Q_ij = Y_ij γ_owner(j)` for binary γ and boxed Y.
//!
//! Per entry `(i, j)` with `s = owner(j)` the four envelope rows are
//!
//! ```text
//!  Q - Y - Y̲ γ_s ≤ -Y̲        (Y - Y̲)(1 - γ) ≥ 0
//! -Q + Y + Ȳ γ_s ≤  Ȳ        (Ȳ - Y)(1 - γ) ≥ 0
//!  Q      - Ȳ γ_s ≤  0        (Ȳ - Y) γ ≥ 0
//! -Q      + Y̲ γ_s ≤  0        (Y - Y̲) γ ≥ 0
//! ```
//!
//! followed by the box rows on Y and `-κ ≤ 0`. Entries are visited in
//! column-major order, `p = j·n_x + i`, matching `vec`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::MisdpError;
use crate::model::column_sensor_map;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowFamily {
    /// One of the four envelope rows, numbered as in the module table.
    Envelope(u8),
    YUpper,
    YLower,
    KappaNonneg,
}

/// `q·Q_ij + y·Y_ij + gamma·γ_sensor + kappa·κ ≤ rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McCormickRow {
    pub i: usize,
    pub j: usize,
    pub sensor: usize,
    pub family: RowFamily,
    pub q: f64,
    pub y: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub rhs: f64,
}

impl McCormickRow {
    pub fn holds(&self, q: &DMatrix<f64>, y: &DMatrix<f64>, gamma: &[f64], kappa: f64) -> bool {
        let mut lhs = 0.0;
        if self.q != 0.0 {
            lhs += self.q * q[(self.i, self.j)];
        }
        if self.y != 0.0 {
            lhs += self.y * y[(self.i, self.j)];
        }
        if self.gamma != 0.0 {
            lhs += self.gamma * gamma[self.sensor];
        }
        if self.kappa != 0.0 {
            lhs += self.kappa * kappa;
        }
        lhs <= self.rhs
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McCormickSystem {
    pub n_x: usize,
    pub n_y: usize,
    pub n_sensors: usize,
    pub y_lo: DMatrix<f64>,
    pub y_hi: DMatrix<f64>,
    pub column_sensor: Vec<usize>,
    pub rows: Vec<McCormickRow>,
    /// Assembled form `Φ ξ ≤ ν` with `ξ = [vec Q; vec Y; γ; vec Y; vec Y; κ]`.
    pub phi: DMatrix<f64>,
    pub nu: DVector<f64>,
}

pub fn build_mccormick(
    y_lo: &DMatrix<f64>,
    y_hi: &DMatrix<f64>,
    partition_y: &[usize],
) -> Result<McCormickSystem, MisdpError> {
    let (n_x, n_y) = y_lo.shape();
    if y_hi.shape() != (n_x, n_y) || partition_y.iter().sum::<usize>() != n_y {
        return Err(MisdpError::Dimension(format!(
            "Y bounds are {:?} and {:?} for {} outputs",
            y_lo.shape(),
            y_hi.shape(),
            partition_y.iter().sum::<usize>()
        )));
    }
    for i in 0..n_x {
        for j in 0..n_y {
            let (lo, hi) = (y_lo[(i, j)], y_hi[(i, j)]);
            if !lo.is_finite() || !hi.is_finite() {
                return Err(MisdpError::UnboundedY { i, j });
            }
            if lo > hi {
                return Err(MisdpError::EmptyY { i, j, lo, hi });
            }
        }
    }
    let column_sensor = column_sensor_map(partition_y);
    let n_sensors = partition_y.len();
    let m = n_x * n_y;

    let mut rows = Vec::with_capacity(6 * m + 1);
    for j in 0..n_y {
        for i in 0..n_x {
            let (lo, hi, s) = (y_lo[(i, j)], y_hi[(i, j)], column_sensor[j]);
            let env = [
                (1.0, -1.0, -lo, -lo),
                (-1.0, 1.0, hi, hi),
                (1.0, 0.0, -hi, 0.0),
                (-1.0, 0.0, lo, 0.0),
            ];
            for (k, (q, y, gamma, rhs)) in env.into_iter().enumerate() {
                rows.push(McCormickRow {
                    i,
                    j,
                    sensor: s,
                    family: RowFamily::Envelope(k as u8),
                    q,
                    y,
                    gamma,
                    kappa: 0.0,
                    rhs,
                });
            }
        }
    }
    let box_row = |i, j, family, y, rhs| McCormickRow {
        i,
        j,
        sensor: column_sensor[j],
        family,
        q: 0.0,
        y,
        gamma: 0.0,
        kappa: 0.0,
        rhs,
    };
    for j in 0..n_y {
        for i in 0..n_x {
            rows.push(box_row(i, j, RowFamily::YUpper, 1.0, y_hi[(i, j)]));
        }
    }
    for j in 0..n_y {
        for i in 0..n_x {
            rows.push(box_row(i, j, RowFamily::YLower, -1.0, -y_lo[(i, j)]));
        }
    }
    rows.push(McCormickRow {
        i: 0,
        j: 0,
        sensor: 0,
        family: RowFamily::KappaNonneg,
        q: 0.0,
        y: 0.0,
        gamma: 0.0,
        kappa: -1.0,
        rhs: 0.0,
    });

    // Φ = blkdiag([I⊗σ₁ | I⊗σ₂ | Ψ], I, -I, -1).
    let sigma1 = [1.0, -1.0, 1.0, -1.0];
    let sigma2 = [-1.0, 1.0, 0.0, 0.0];
    let n_xi = 4 * m + n_sensors + 1;
    let mut phi = DMatrix::zeros(6 * m + 1, n_xi);
    let mut nu = DVector::zeros(6 * m + 1);
    for j in 0..n_y {
        for i in 0..n_x {
            let p = j * n_x + i;
            let (lo, hi) = (y_lo[(i, j)], y_hi[(i, j)]);
            let omega = [-lo, hi, -hi, lo];
            let psi = [-lo, hi, 0.0, 0.0];
            for k in 0..4 {
                let r = 4 * p + k;
                phi[(r, p)] = sigma1[k];
                phi[(r, m + p)] = sigma2[k];
                phi[(r, 2 * m + column_sensor[j])] = omega[k];
                nu[r] = psi[k];
            }
            phi[(4 * m + p, 2 * m + n_sensors + p)] = 1.0;
            nu[4 * m + p] = hi;
            phi[(5 * m + p, 3 * m + n_sensors + p)] = -1.0;
            nu[5 * m + p] = -lo;
        }
    }
    phi[(6 * m, n_xi - 1)] = -1.0;

    Ok(McCormickSystem {
        n_x,
        n_y,
        n_sensors,
        y_lo: y_lo.clone(),
        y_hi: y_hi.clone(),
        column_sensor,
        rows,
        phi,
        nu,
    })
}

fn vec_col_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    m.iter().copied()
}

impl McCormickSystem {
    pub fn xi(&self, q: &DMatrix<f64>, y: &DMatrix<f64>, gamma: &[f64], kappa: f64) -> DVector<f64> {
        let v: Vec<f64> = vec_col_major(q)
            .chain(vec_col_major(y))
            .chain(gamma.iter().copied())
            .chain(vec_col_major(y))
            .chain(vec_col_major(y))
            .chain(std::iter::once(kappa))
            .collect();
        DVector::from_vec(v)
    }

    /// Per-row outcome of `Φ ξ ≤ ν`.
    pub fn assembled_holds(&self, q: &DMatrix<f64>, y: &DMatrix<f64>, gamma: &[f64], kappa: f64) -> Vec<bool> {
        let xi = self.xi(q, y, gamma, kappa);
        (0..self.phi.nrows())
            .map(|r| {
                // Sum only the structural nonzeros so both forms round identically.
                let mut lhs = 0.0;
                for c in 0..self.phi.ncols() {
                    let a = self.phi[(r, c)];
                    if a != 0.0 {
                        lhs += a * xi[c];
                    }
                }
                lhs <= self.nu[r]
            })
            .collect()
    }

    pub fn rowwise_holds(&self, q: &DMatrix<f64>, y: &DMatrix<f64>, gamma: &[f64], kappa: f64) -> Vec<bool> {
        self.rows.iter().map(|r| r.holds(q, y, gamma, kappa)).collect()
    }

    /// Whether 0 lies in every Y interval, so zeroing a column of Y is always allowed.
    pub fn box_contains_zero(&self) -> bool {
        self.y_lo.iter().zip(self.y_hi.iter()).all(|(&lo, &hi)| (lo < 0.0 && hi > 0.0) || (lo == 0.0 && hi == 0.0))
    }
}
