//! Removes fixed variables and equality pairs before the barrier runs.
//!
//! Bounds become rows. Two rows `a·z ≤ g` and `-a·z ≤ -g` collapse into the
//! equality `a·z = g`; all equalities are solved by reduced row echelon form
//! and the pivot variables are substituted out, leaving `z = z0 + N w`.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;

use super::{SdpProblem, SdpSettings};

const ZERO_COEF: f64 = 1e-13;
const PAIR_TOL: f64 = 1e-12;
const PIVOT_TOL: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-9;

/// Block in reduced variables; `terms` hold both triangles.
#[derive(Clone, Debug)]
pub(crate) struct RBlock {
    pub dim: usize,
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

#[derive(Clone, Debug)]
pub(crate) struct RRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct Reduced {
    pub n: usize,
    pub blocks: Vec<RBlock>,
    pub rows: Vec<RRow>,
    pub c: Vec<f64>,
    pub c0: f64,
    z0: Vec<f64>,
    map: Vec<Vec<(usize, f64)>>,
}

impl Reduced {
    pub fn lift(&self, w: &[f64]) -> Vec<f64> {
        self.z0
            .iter()
            .zip(&self.map)
            .map(|(z0, m)| z0 + m.iter().map(|&(f, a)| a * w[f]).sum::<f64>())
            .collect()
    }

    /// Barrier parameter: total LMI dimension plus the row count.
    pub fn nu(&self) -> f64 {
        (self.blocks.iter().map(|b| b.dim).sum::<usize>() + self.rows.len()) as f64
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Presolved {
    Reduced(Reduced),
    /// Contradiction found without iterating; `violation` bounds the Phase I optimum.
    Inconsistent { violation: f64, what: String },
}

fn canonical(coeffs: impl IntoIterator<Item = (usize, f64)>) -> Vec<(usize, f64)> {
    let mut m: BTreeMap<usize, f64> = BTreeMap::new();
    for (k, a) in coeffs {
        *m.entry(k).or_insert(0.0) += a;
    }
    m.into_iter().filter(|(_, a)| a.abs() > ZERO_COEF).collect()
}

fn key(coeffs: &[(usize, f64)], sign: f64) -> Vec<(usize, u64)> {
    coeffs.iter().map(|&(k, a)| (k, (sign * a).to_bits())).collect()
}

pub(crate) fn presolve(p: &SdpProblem, st: &SdpSettings) -> Presolved {
    let n = p.n_vars();
    let big = st.default_bound;
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    for k in 0..n {
        if let (Some(lo), Some(hi)) = (p.lower[k], p.upper[k]) {
            if lo > hi {
                return Presolved::Inconsistent {
                    violation: 0.5 * (lo - hi),
                    what: format!("bounds of {}", p.var_names[k]),
                };
            }
            if lo == hi {
                fixed[k] = Some(lo);
            }
        }
    }

    // Rows over the non-fixed variables.
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut add = |coeffs: &mut dyn Iterator<Item = (usize, f64)>, rhs: f64| -> Result<(), f64> {
        let mut g = rhs;
        let mut free = Vec::new();
        for (k, a) in coeffs {
            match fixed[k] {
                Some(v) => g -= a * v,
                None => free.push((k, a)),
            }
        }
        let c = canonical(free);
        if c.is_empty() {
            return if g < -RESIDUAL_TOL { Err(-g) } else { Ok(()) };
        }
        rows.push((c, g));
        Ok(())
    };
    for (i, r) in p.rows.iter().enumerate() {
        if let Err(v) = add(&mut r.coeffs.iter().copied(), r.rhs) {
            return Presolved::Inconsistent {
                violation: v,
                what: format!("row {i}"),
            };
        }
    }
    for k in 0..n {
        if fixed[k].is_some() {
            continue;
        }
        let lo = p.lower[k].unwrap_or_else(|| p.upper[k].map_or(-big, |h| h.min(0.0) - big));
        let hi = p.upper[k].unwrap_or_else(|| p.lower[k].map_or(big, |l| l.max(0.0) + big));
        // Single-variable rows never reduce to constants, so these cannot fail.
        let _ = add(&mut std::iter::once((k, -1.0)), -lo);
        let _ = add(&mut std::iter::once((k, 1.0)), hi);
    }

    // Negated pairs become equalities.
    let mut unmatched: HashMap<Vec<(usize, u64)>, Vec<usize>> = HashMap::new();
    let mut used = vec![false; rows.len()];
    let mut equalities: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for r in 0..rows.len() {
        let neg = key(&rows[r].0, -1.0);
        let g = rows[r].1;
        let mate = unmatched.get_mut(&neg).and_then(|list| {
            let pos = list
                .iter()
                .position(|&s| (g + rows[s].1).abs() <= PAIR_TOL * (1.0 + g.abs() + rows[s].1.abs()))?;
            Some(list.remove(pos))
        });
        match mate {
            Some(s) => {
                used[r] = true;
                used[s] = true;
                equalities.push(rows[r].clone());
            }
            None => unmatched.entry(key(&rows[r].0, 1.0)).or_default().push(r),
        }
    }

    // RREF over the equality system.
    let m = equalities.len();
    let mut e = DMatrix::<f64>::zeros(m, n);
    let mut h = vec![0.0; m];
    for (i, (c, g)) in equalities.iter().enumerate() {
        for &(k, a) in c {
            e[(i, k)] = a;
        }
        h[i] = *g;
    }
    let mut pivot_of_row: Vec<usize> = Vec::new();
    let mut is_pivot = vec![false; n];
    let mut r = 0;
    for col in 0..n {
        if r == m {
            break;
        }
        if fixed[col].is_some() {
            continue;
        }
        let (piv, mag) = (r..m).map(|i| (i, e[(i, col)].abs())).fold((r, 0.0), |b, x| if x.1 > b.1 { x } else { b });
        if mag <= PIVOT_TOL {
            continue;
        }
        e.swap_rows(r, piv);
        h.swap(r, piv);
        let d = e[(r, col)];
        for j in 0..n {
            e[(r, j)] /= d;
        }
        h[r] /= d;
        for i in 0..m {
            if i == r {
                continue;
            }
            let f = e[(i, col)];
            if f != 0.0 {
                for j in 0..n {
                    let v = e[(r, j)];
                    if v != 0.0 {
                        e[(i, j)] -= f * v;
                    }
                }
                h[i] -= f * h[r];
            }
        }
        pivot_of_row.push(col);
        is_pivot[col] = true;
        r += 1;
    }
    for hi in h.iter().skip(r) {
        if hi.abs() > RESIDUAL_TOL {
            return Presolved::Inconsistent {
                violation: hi.abs(),
                what: "equality system".into(),
            };
        }
    }

    // z = z0 + N w.
    let mut windex = vec![usize::MAX; n];
    let mut n_free = 0;
    for k in 0..n {
        if fixed[k].is_none() && !is_pivot[k] {
            windex[k] = n_free;
            n_free += 1;
        }
    }
    let mut z0 = vec![0.0; n];
    let mut map: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for k in 0..n {
        if let Some(v) = fixed[k] {
            z0[k] = v;
        } else if windex[k] != usize::MAX {
            map[k].push((windex[k], 1.0));
        }
    }
    for (i, &col) in pivot_of_row.iter().enumerate() {
        z0[col] = h[i];
        for j in 0..n {
            let a = e[(i, j)];
            if windex[j] != usize::MAX && a.abs() > ZERO_COEF {
                map[col].push((windex[j], -a));
            }
        }
    }

    // Substitute into blocks, rows and objective.
    let blocks = p
        .lmis
        .iter()
        .map(|b| {
            let mut constant = DMatrix::zeros(b.dim, b.dim);
            let put = |m: &mut DMatrix<f64>, i: usize, j: usize, v: f64| {
                m[(i, j)] += v;
                if i != j {
                    m[(j, i)] += v;
                }
            };
            for &(i, j, v) in &b.constant {
                put(&mut constant, i, j, v);
            }
            let mut acc: BTreeMap<usize, BTreeMap<(usize, usize), f64>> = BTreeMap::new();
            for (k, entries) in &b.terms {
                if z0[*k] != 0.0 {
                    for &(i, j, v) in entries {
                        put(&mut constant, i, j, z0[*k] * v);
                    }
                }
                for &(f, a) in &map[*k] {
                    let t = acc.entry(f).or_default();
                    for &(i, j, v) in entries {
                        *t.entry((i, j)).or_insert(0.0) += a * v;
                        if i != j {
                            *t.entry((j, i)).or_insert(0.0) += a * v;
                        }
                    }
                }
            }
            let terms = acc
                .into_iter()
                .map(|(f, t)| {
                    let e: Vec<_> = t.into_iter().filter(|(_, v)| *v != 0.0).map(|((i, j), v)| (i, j, v)).collect();
                    (f, e)
                })
                .filter(|(_, e)| !e.is_empty())
                .collect();
            RBlock {
                dim: b.dim,
                constant,
                terms,
            }
        })
        .collect();

    let mut rrows = Vec::new();
    for (i, (c, g)) in rows.iter().enumerate() {
        if used[i] {
            continue;
        }
        let mut rhs = *g;
        let mut w = Vec::new();
        for &(k, a) in c {
            rhs -= a * z0[k];
            for &(f, b) in &map[k] {
                w.push((f, a * b));
            }
        }
        let w = canonical(w);
        if w.is_empty() {
            if rhs < -RESIDUAL_TOL * (1.0 + g.abs()) {
                return Presolved::Inconsistent {
                    violation: -rhs,
                    what: "row implied by equalities".into(),
                };
            }
            continue;
        }
        rrows.push(RRow { coeffs: w, rhs });
    }

    let mut c = vec![0.0; n_free];
    let mut c0 = 0.0;
    for k in 0..n {
        let ck = p.objective[k];
        if ck != 0.0 {
            c0 += ck * z0[k];
            for &(f, a) in &map[k] {
                c[f] += ck * a;
            }
        }
    }

    Presolved::Reduced(Reduced {
        n: n_free,
        blocks,
        rows: rrows,
        c,
        c0,
        z0,
        map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reduced(p: &SdpProblem) -> Reduced {
        match presolve(p, &SdpSettings::default()) {
            Presolved::Reduced(r) => r,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negated_pair_is_eliminated() {
        let mut p = SdpProblem::default();
        let q = p.add_var("q", None, None);
        let y = p.add_var("y", Some(-2.0), Some(2.0));
        p.add_row(vec![(q, 1.0), (y, -1.0)], 0.0);
        p.add_row(vec![(q, -1.0), (y, 1.0)], 0.0);
        let r = reduced(&p);
        assert_eq!(r.n, 1);
        assert_eq!(r.lift(&[0.7]), vec![0.7, 0.7]);
    }

    #[test]
    fn fixed_variables_move_to_constants() {
        let mut p = SdpProblem::default();
        let a = p.add_var("a", Some(3.0), Some(3.0));
        let b = p.add_var("b", None, None);
        p.add_row(vec![(a, 1.0), (b, 1.0)], 5.0);
        let r = reduced(&p);
        assert_eq!(r.n, 1);
        // b <= 2 plus the two default bounds on b.
        assert!(r.rows.iter().any(|row| row.coeffs == vec![(0, 1.0)] && row.rhs == 2.0));
        assert_eq!(r.lift(&[1.0]), vec![3.0, 1.0]);
    }

    #[test]
    fn contradictory_constant_row() {
        let mut p = SdpProblem::default();
        let a = p.add_var("a", Some(1.0), Some(1.0));
        p.add_row(vec![(a, 1.0)], 0.25);
        match presolve(&p, &SdpSettings::default()) {
            Presolved::Inconsistent { violation, .. } => assert!((violation - 0.75).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }
}
