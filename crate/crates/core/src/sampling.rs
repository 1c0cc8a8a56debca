//! Low-discrepancy point sets used by the sampling-based checks.

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Radical inverse of `index` in `base` (van der Corput sequence).
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv_base = 1.0 / base as f64;
    let mut factor = inv_base;
    let mut value = 0.0;
    while index > 0 {
        value += (index % base) as f64 * factor;
        index /= base;
        factor *= inv_base;
    }
    value
}

/// The `index`-th point of the Halton sequence in `[0,1)^D`.
///
/// Index 0 is the origin, so callers usually start at 1.
pub fn halton<const D: usize>(index: u64) -> [f64; D] {
    assert!(
        D <= PRIMES.len(),
        "Halton dimension limited to {}",
        PRIMES.len()
    );
    let mut point = [0.0; D];
    for (d, p) in point.iter_mut().enumerate() {
        *p = radical_inverse(index, PRIMES[d]);
    }
    point
}

/// Maps a unit coordinate onto `[lo, hi]`.
#[inline]
pub fn lerp(lo: f64, hi: f64, t: f64) -> f64 {
    lo + (hi - lo) * t
}

/// Maps a unit coordinate onto `[lo, hi]` uniformly in `ln`.
#[inline]
pub fn log_lerp(lo: f64, hi: f64, t: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * t).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn van_der_corput_base_two() {
        let seq: Vec<f64> = (1..=4).map(|i| radical_inverse(i, 2)).collect();
        assert_eq!(seq, vec![0.5, 0.25, 0.75, 0.125]);
    }

    #[test]
    fn halton_points_stay_in_unit_box() {
        for i in 1..2000 {
            let p = halton::<4>(i);
            assert!(p.iter().all(|&x| (0.0..1.0).contains(&x)));
        }
    }
}
