use crate::error::{Error, Result};

/// Expected number of uniform draws over `b` bit positions needed to observe
/// `k` distinct positions: `sum_{i=0}^{k-1} b / (b - i)`.
///
/// This inverts the random-bit-setting process of a block: a block holding
/// `k` set bits has absorbed `coupon_estimate(b, k)` increments in expectation.
pub fn coupon_estimate(b: u32, k: u32) -> Result<f64> {
    if b == 0 {
        return Err(Error::Domain("block width must be at least 1 bit".into()));
    }
    if k > b {
        return Err(Error::Domain(format!(
            "set-bit count {k} exceeds block width {b}"
        )));
    }
    let bf = f64::from(b);
    Ok((0..k).map(|i| bf / (bf - f64::from(i))).sum())
}

/// `coupon_estimate(b, k)` for every `k` in `0..=b`, indexed by popcount.
pub(crate) fn decode_table(b: u32) -> Vec<f64> {
    let bf = f64::from(b);
    let mut table = Vec::with_capacity(b as usize + 1);
    let mut acc = 0.0;
    table.push(acc);
    for i in 0..b {
        acc += bf / (bf - f64::from(i));
        table.push(acc);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // b * (H_b - H_{b-k}), summed from the other end as an independent route.
    fn harmonic_route(b: u32, k: u32) -> f64 {
        let h = |n: u32| (1..=n).rev().map(|j| 1.0 / f64::from(j)).sum::<f64>();
        f64::from(b) * (h(b) - h(b - k))
    }

    #[test]
    fn trivial_values() {
        assert_eq!(coupon_estimate(64, 0).unwrap(), 0.0);
        assert_eq!(coupon_estimate(64, 1).unwrap(), 1.0);
    }

    #[test]
    fn frozen_values() {
        // Computed offline by direct summation and confirmed by Monte-Carlo
        // (see the acceptance suite for the simulation).
        let cases = [
            (8, 8.474979131042456),
            (24, 29.782263345241148),
            (48, 87.24236227051364),
            (64, 303.6090178371692),
        ];
        for (k, want) in cases {
            let got = coupon_estimate(64, k).unwrap();
            assert!((got - want).abs() < 1e-9, "k={k}: {got} vs {want}");
            assert!((got - harmonic_route(64, k)).abs() < 1e-9);
        }
    }

    #[test]
    fn full_block_is_b_times_harmonic() {
        let h64: f64 = (1..=64).map(|j| 1.0 / f64::from(j)).sum();
        assert!((coupon_estimate(64, 64).unwrap() - 64.0 * h64).abs() < 1e-9);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(coupon_estimate(0, 0), Err(Error::Domain(_))));
        assert!(matches!(coupon_estimate(64, 65), Err(Error::Domain(_))));
    }

    #[test]
    fn table_matches_function() {
        for b in [1, 7, 32, 64] {
            let t = decode_table(b);
            assert_eq!(t.len(), b as usize + 1);
            for k in 0..=b {
                assert!((t[k as usize] - coupon_estimate(b, k).unwrap()).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn strictly_increasing(b in 1u32..=256, k in 0u32..256) {
            prop_assume!(k < b);
            prop_assert!(coupon_estimate(b, k).unwrap() < coupon_estimate(b, k + 1).unwrap());
        }
    }
}
