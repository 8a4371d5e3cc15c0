/// A word-sized virtual vector with a cached popcount.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VirtualBlock {
    bits: u64,
    popcount: u32,
}

impl VirtualBlock {
    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn popcount(&self) -> u32 {
        self.popcount
    }

    pub fn is_empty(&self) -> bool {
        self.popcount == 0
    }

    /// Sets bit `idx`. Returns false when it was already set.
    #[inline]
    pub fn set(&mut self, idx: u32) -> bool {
        debug_assert!(idx < 64);
        let mask = 1u64 << idx;
        let fresh = self.bits & mask == 0;
        self.bits |= mask;
        self.popcount += u32::from(fresh);
        debug_assert_eq!(self.popcount, self.bits.count_ones());
        fresh
    }

    #[inline]
    pub fn clear(&mut self) {
        self.bits = 0;
        self.popcount = 0;
    }

    pub fn is_saturated(&self, threshold: u32) -> bool {
        self.popcount >= threshold
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_set_is_noop() {
        let mut b = VirtualBlock::default();
        assert!(b.set(5));
        assert!(!b.set(5));
        assert_eq!(b.popcount(), 1);
        assert_eq!(b.bits(), 1 << 5);
    }

    #[test]
    fn saturation_threshold() {
        let mut b = VirtualBlock::default();
        for i in 0..47 {
            b.set(i);
        }
        assert!(!b.is_saturated(48));
        b.set(47);
        assert!(b.is_saturated(48));
        b.clear();
        assert!(b.is_empty());
    }

    proptest! {
        #[test]
        fn popcount_tracks_bits(ops in proptest::collection::vec(0u32..64, 0..200)) {
            let mut b = VirtualBlock::default();
            for i in ops {
                b.set(i);
                prop_assert_eq!(b.popcount(), b.bits().count_ones());
            }
        }
    }
}
