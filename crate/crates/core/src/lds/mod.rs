//! Low-discrepancy sampling and the point-based maximum estimator.
//!
//! Estimates are sample maxima, so they bound the true supremum from below.
//! Objective values are computed in parallel and reduced sequentially, so
//! the result and its argmax are identical to a sequential run.

pub mod halton;
pub mod sobol;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExprError, Interval};

pub const DEFAULT_SAMPLES: usize = 1 << 14;
/// Pairs closer than this are skipped by the pairwise estimator.
pub const PAIR_MIN_DISTANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceKind {
    Halton,
    Sobol,
    Uniform,
}

impl FromStr for SequenceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "halton" => Ok(SequenceKind::Halton),
            "sobol" => Ok(SequenceKind::Sobol),
            "uniform" | "random" => Ok(SequenceKind::Uniform),
            _ => Err(format!("unknown sequence `{s}` (halton, sobol, uniform)")),
        }
    }
}

impl fmt::Display for SequenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SequenceKind::Halton => "halton",
            SequenceKind::Sobol => "sobol",
            SequenceKind::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Error)]
pub enum LdsError {
    #[error("sequence needs d >= 1 and s >= 1 (got d = {d}, s = {s})")]
    Empty { d: usize, s: usize },
    #[error("Sobol table supports at most {max} dimensions, {0} requested", max = sobol::MAX_DIM)]
    SobolDimension(usize),
    #[error("objective failed at {point:?}: {source}")]
    Objective { point: Vec<f64>, source: ExprError },
}

/// Points in the unit cube, reproducible from (kind, dim, seed).
///
/// Seed 0 gives the plain sequence. Any other seed applies a random
/// Cranley-Patterson shift (Halton) or digital XOR shift (Sobol), or seeds
/// the ChaCha8 generator (uniform).
#[derive(Clone, Debug)]
pub struct SampleSequence {
    pub kind: SequenceKind,
    pub dim: usize,
    pub seed: u64,
    pub points: Vec<Vec<f64>>,
}

pub fn generate(kind: SequenceKind, d: usize, s: usize, seed: u64) -> Result<SampleSequence, LdsError> {
    if d == 0 || s == 0 {
        return Err(LdsError::Empty { d, s });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = match kind {
        SequenceKind::Halton => {
            let mut pts = halton::halton(d, s);
            if seed != 0 {
                let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                for p in &mut pts {
                    for (v, sh) in p.iter_mut().zip(&shift) {
                        *v = (*v + sh).fract();
                    }
                }
            }
            pts
        }
        SequenceKind::Sobol => {
            if d > sobol::MAX_DIM {
                return Err(LdsError::SobolDimension(d));
            }
            let shift: Vec<u32> = if seed == 0 {
                vec![0; d]
            } else {
                (0..d).map(|_| rng.random::<u32>()).collect()
            };
            sobol::sobol(d, s, &shift)
        }
        SequenceKind::Uniform => (0..s)
            .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
            .collect(),
    };
    Ok(SampleSequence {
        kind,
        dim: d,
        seed,
        points,
    })
}

/// Affine image of a unit-cube point in the box; endpoints are clamped so
/// rounding cannot leave the box.
pub fn map_to_box(u: &[f64], bx: &[Interval]) -> Vec<f64> {
    u.iter()
        .zip(bx)
        .map(|(&t, iv)| (iv.lo + t * iv.width()).clamp(iv.lo, iv.hi))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub argmax: Vec<f64>,
    /// Sample index of the final improvement of the running maximum.
    pub last_improvement: usize,
    pub samples: usize,
    /// Pairs skipped for being closer than `PAIR_MIN_DISTANCE` (pairwise only).
    pub skipped: usize,
}

fn reduce(values: Vec<Option<f64>>, point_of: impl Fn(usize) -> Vec<f64>) -> Estimate {
    let mut best = f64::NEG_INFINITY;
    let mut idx = 0;
    let mut skipped = 0;
    for (i, v) in values.iter().enumerate() {
        match v {
            Some(v) if *v > best => {
                best = *v;
                idx = i;
            }
            Some(_) => {}
            None => skipped += 1,
        }
    }
    Estimate {
        value: best,
        argmax: point_of(idx),
        last_improvement: idx,
        samples: values.len(),
        skipped,
    }
}

fn first_error(results: Vec<Result<Option<f64>, (usize, ExprError)>>, point_of: impl Fn(usize) -> Vec<f64>) -> Result<Vec<Option<f64>>, LdsError> {
    results
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|(i, source)| LdsError::Objective {
            point: point_of(i),
            source,
        })
}

/// Running maximum of `objective` over `s` sequence points mapped into `bx`.
pub fn estimate_max<F>(objective: F, bx: &[Interval], s: usize, kind: SequenceKind, seed: u64) -> Result<Estimate, LdsError>
where
    F: Fn(&[f64]) -> Result<f64, ExprError> + Sync,
{
    let seq = generate(kind, bx.len(), s, seed)?;
    let point_of = |i: usize| map_to_box(&seq.points[i], bx);
    let results: Vec<_> = (0..s)
        .into_par_iter()
        .map(|i| objective(&point_of(i)).map(Some).map_err(|e| (i, e)))
        .collect();
    let values = first_error(results, point_of)?;
    Ok(reduce(values, point_of))
}

/// Running maximum of a two-point objective over the product box `bx × bx`,
/// sampled as one sequence of dimension `2 n`. The argmax is `[x, x̂]` concatenated.
pub fn estimate_max_pairs<F>(objective: F, bx: &[Interval], s: usize, kind: SequenceKind, seed: u64) -> Result<Estimate, LdsError>
where
    F: Fn(&[f64], &[f64]) -> Result<f64, ExprError> + Sync,
{
    let n = bx.len();
    let product: Vec<Interval> = bx.iter().chain(bx).copied().collect();
    let seq = generate(kind, 2 * n, s, seed)?;
    let point_of = |i: usize| map_to_box(&seq.points[i], &product);
    let results: Vec<_> = (0..s)
        .into_par_iter()
        .map(|i| {
            let p = point_of(i);
            let (x, xh) = p.split_at(n);
            let dist = x.iter().zip(xh).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if dist < PAIR_MIN_DISTANCE {
                return Ok(None);
            }
            objective(x, xh).map(Some).map_err(|e| (i, e))
        })
        .collect();
    let values = first_error(results, point_of)?;
    Ok(reduce(values, point_of))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use std::f64::consts::TAU;

    #[test]
    fn uniform_is_deterministic() {
        let a = generate(SequenceKind::Uniform, 3, 10, 42).unwrap();
        let b = generate(SequenceKind::Uniform, 3, 10, 42).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn sobol_dimension_limit() {
        assert!(matches!(
            generate(SequenceKind::Sobol, 65, 4, 0),
            Err(LdsError::SobolDimension(65))
        ));
    }

    #[test]
    fn gradient_norm_of_sine() {
        let e = parse("sin(x1)", 1).unwrap();
        let obj = |x: &[f64]| Ok(e.grad(x)?[0].abs());
        let est = estimate_max(obj, &[Interval::new(0.0, TAU)], 10_000, SequenceKind::Halton, 0).unwrap();
        assert!((est.value - 1.0).abs() < 1e-3 && est.value <= 1.0);
    }

    #[test]
    fn gradient_norm_of_square() {
        let e = parse("x1^2", 1).unwrap();
        let obj = |x: &[f64]| Ok(e.grad(x)?[0].abs());
        let est = estimate_max(obj, &[Interval::new(-1.0, 2.0)], 10_000, SequenceKind::Sobol, 0).unwrap();
        assert!((est.value - 4.0).abs() < 1e-2 && est.value <= 4.0);
    }

    #[test]
    fn one_sided_ratio_for_square() {
        let e = parse("x1^2", 1).unwrap();
        let obj = |x: &[f64], y: &[f64]| {
            let d = x[0] - y[0];
            Ok((e.eval(x)? - e.eval(y)?) * d / (d * d))
        };
        let est = estimate_max_pairs(obj, &[Interval::new(0.0, 1.0)], 1 << 14, SequenceKind::Sobol, 0).unwrap();
        // Sobol index 0 is a coincident pair.
        assert!(est.skipped >= 1);
        assert!((est.value - 2.0).abs() < 2e-2);
    }

    #[test]
    fn objective_error_reports_point() {
        let e = parse("sqrt(x1)", 1).unwrap();
        let r = estimate_max(|x| e.eval(x), &[Interval::new(-1.0, 1.0)], 8, SequenceKind::Halton, 0);
        match r {
            Err(LdsError::Objective { point, .. }) => assert!(point[0] < 0.0),
            other => panic!("{other:?}"),
        }
    }
}
