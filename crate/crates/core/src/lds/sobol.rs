//! Sobol points from the Joe and Kuo (d6) direction numbers, 32-bit resolution.

const JOE_KUO: &str = include_str!("joe_kuo_d6_64.txt");

pub const MAX_DIM: usize = 64;
const BITS: usize = 32;

/// Direction numbers `v[k]` (k = 0..32) for each of the first `d` dimensions.
pub fn direction_numbers(d: usize) -> Vec<[u32; BITS]> {
    assert!(d <= MAX_DIM);
    let mut out = Vec::with_capacity(d);
    if d == 0 {
        return out;
    }
    let mut first = [0u32; BITS];
    for (k, v) in first.iter_mut().enumerate() {
        *v = 1 << (BITS - 1 - k);
    }
    out.push(first);
    for line in JOE_KUO.lines().take(d - 1) {
        let nums: Vec<u32> = line.split_whitespace().map(|t| t.parse().unwrap()).collect();
        let (s, a, m) = (nums[1] as usize, nums[2], &nums[3..]);
        let mut v = [0u32; BITS];
        for k in 0..BITS {
            v[k] = if k < s {
                m[k] << (BITS - 1 - k)
            } else {
                let mut x = v[k - s] ^ (v[k - s] >> s);
                for i in 1..s {
                    if (a >> (s - 1 - i)) & 1 == 1 {
                        x ^= v[k - i];
                    }
                }
                x
            };
        }
        out.push(v);
    }
    out
}

/// The first `s` Sobol points (starting with the origin) in Gray-code order,
/// each coordinate XOR-ed with `shift[j]`.
pub fn sobol(d: usize, s: usize, shift: &[u32]) -> Vec<Vec<f64>> {
    let v = direction_numbers(d);
    let scale = 1.0 / (1u64 << BITS) as f64;
    let mut x = vec![0u32; d];
    let mut pts = Vec::with_capacity(s);
    for n in 0..s as u64 {
        if n > 0 {
            let c = (!(n - 1)).trailing_zeros() as usize;
            for j in 0..d {
                x[j] ^= v[j][c];
            }
        }
        pts.push((0..d).map(|j| (x[j] ^ shift[j]) as f64 * scale).collect());
    }
    pts
}
