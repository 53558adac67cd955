/// The first `d` primes, used as Halton bases.
pub fn first_primes(d: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(d);
    let mut c = 2u64;
    while primes.len() < d {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| !c.is_multiple_of(p)) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

/// Van der Corput radical inverse of `i` in base `b`.
pub fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let inv = 1.0 / b as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    r
}

/// Points 1..=s of the d-dimensional Halton sequence (index 0 is the origin and is skipped).
pub fn halton(d: usize, s: usize) -> Vec<Vec<f64>> {
    let bases = first_primes(d);
    (1..=s as u64)
        .map(|i| bases.iter().map(|&b| radical_inverse(i, b)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primes() {
        assert_eq!(first_primes(6), vec![2, 3, 5, 7, 11, 13]);
    }

    #[test]
    fn base_two_prefix() {
        let p: Vec<f64> = halton(1, 4).into_iter().map(|v| v[0]).collect();
        assert_eq!(p, vec![0.5, 0.25, 0.75, 0.125]);
    }

    #[test]
    fn first_point_two_dims() {
        let p = &halton(2, 1)[0];
        assert_eq!(p[0], 0.5);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-16);
    }
}
