//! Counter-based seeding: every stream is a pure function of its coordinates.

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for the stream at `coords` under a base seed.
pub fn stream_seed(base: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(splitmix64(base), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct_and_stable() {
        let a = stream_seed(1, &[0, 0, 5]);
        assert_eq!(a, stream_seed(1, &[0, 0, 5]));
        assert_ne!(a, stream_seed(1, &[0, 5, 0]));
        assert_ne!(a, stream_seed(2, &[0, 0, 5]));
        let mut seen = std::collections::HashSet::new();
        for i in 0..1000u64 {
            assert!(seen.insert(stream_seed(7, &[i])));
        }
    }
}
