//! The saturating two-layer sketch for one metric.
//!
//! A flow hashes to one layer-1 block and one layer-2 block. Each unit
//! increment sets a pseudorandom bit of its layer-1 block; when that block
//! reaches `k1* = ceil(sat_frac * b1)` set bits it is recycled and a single
//! pseudorandom bit is set in the layer-2 block. A layer-2 bit therefore
//! stands for `C1 = coupon_estimate(b1, k1*)` increments. When the layer-2
//! block reaches `k2*` bits it is recycled too and a [`FlushEvent`] carrying
//! `C1 * coupon_estimate(b2, k2*)` is handed to the caller.
//!
//! Blocks are shared between flows that collide under the hash; no flow
//! identity is stored.

mod block;
mod estimate;

pub use block::VirtualBlock;
pub use estimate::coupon_estimate;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{Error, Result};
use crate::key::FlowKey;

/// Whether layer-1 saturations promote into layer 2 or flush directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layering {
    #[default]
    TwoLayer,
    /// Ablation: layer 2 is bypassed and every layer-1 saturation flushes `C1`.
    SingleLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchParams {
    /// Bits per layer-1 block; a power of two, at most 64.
    pub b1: u32,
    /// Bits per layer-2 block, at most 64.
    pub b2: u32,
    /// Saturation fraction in (0, 1].
    pub sat_frac: f64,
    pub blocks1: usize,
    pub blocks2: usize,
    pub seed: u64,
    pub layering: Layering,
}

impl Default for SketchParams {
    fn default() -> Self {
        SketchParams {
            b1: 64,
            b2: 64,
            sat_frac: 0.75,
            blocks1: 4096,
            blocks2: 4096,
            seed: 0,
            layering: Layering::TwoLayer,
        }
    }
}

impl SketchParams {
    pub fn with_seed(seed: u64) -> Self {
        SketchParams {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=64).contains(&self.b1) || !self.b1.is_power_of_two() {
            return Err(Error::InvalidParams(format!(
                "b1 must be a power of two in 1..=64, got {}",
                self.b1
            )));
        }
        if !(1..=64).contains(&self.b2) {
            return Err(Error::InvalidParams(format!(
                "b2 must be in 1..=64, got {}",
                self.b2
            )));
        }
        if !(self.sat_frac > 0.0 && self.sat_frac <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "saturation fraction must be in (0, 1], got {}",
                self.sat_frac
            )));
        }
        if self.blocks1 == 0 || self.blocks2 == 0 {
            return Err(Error::InvalidParams("block counts must be positive".into()));
        }
        Ok(())
    }

    /// Layer-1 saturation threshold `ceil(sat_frac * b1)`.
    pub fn k1(&self) -> u32 {
        saturation_threshold(self.sat_frac, self.b1)
    }

    pub fn k2(&self) -> u32 {
        saturation_threshold(self.sat_frac, self.b2)
    }

    /// Sketch memory for this metric, in bytes.
    pub fn memory_bytes(&self) -> usize {
        match self.layering {
            Layering::TwoLayer => {
                (self.blocks1 * self.b1 as usize + self.blocks2 * self.b2 as usize) / 8
            }
            Layering::SingleLayer => self.blocks1 * self.b1 as usize / 8,
        }
    }
}

fn saturation_threshold(sat_frac: f64, b: u32) -> u32 {
    // The epsilon keeps products such as 0.3 * 10 = 3.0000000000000004 from
    // rounding up a whole bit.
    let k = (sat_frac * f64::from(b) - 1e-9).ceil() as i64;
    k.clamp(1, i64::from(b)) as u32
}

/// SplitMix64 finalizer; used to derive independent sub-seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const H1_DOMAIN: u64 = 0x6831_6b65_795f_7631;
const H2_DOMAIN: u64 = 0x6832_6b65_795f_7632;
const RNG_DOMAIN: u64 = 0x726e_675f_7374_726d;

/// Attribution of a saturated layer-2 block to the flow whose increment
/// completed it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlushEvent {
    pub key: FlowKey,
    pub amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    One,
    Two,
}

/// Decoded content of one nonzero block, without flow attribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockResidue {
    pub layer: Layer,
    pub index: usize,
    pub estimate: f64,
}

/// The two keyed hash functions of a sketch, reduced to block indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHasher {
    h1_key: u64,
    h2_key: u64,
    blocks1: usize,
    blocks2: usize,
}

impl BlockHasher {
    /// `blocks2 == 0` means layer 2 is bypassed; its index is then always 0.
    pub fn new(seed: u64, blocks1: usize, blocks2: usize) -> Self {
        BlockHasher {
            h1_key: mix64(seed ^ H1_DOMAIN),
            h2_key: mix64(seed ^ H2_DOMAIN),
            blocks1: blocks1.max(1),
            blocks2,
        }
    }

    pub fn hash1(&self, key: &FlowKey) -> u64 {
        xxh3_64_with_seed(&key.to_bytes(), self.h1_key)
    }

    pub fn index(&self, key: &FlowKey) -> BlockIndex {
        let bytes = key.to_bytes();
        let hash1 = xxh3_64_with_seed(&bytes, self.h1_key);
        let layer2 = if self.blocks2 == 0 {
            0
        } else {
            (xxh3_64_with_seed(&bytes, self.h2_key) % self.blocks2 as u64) as usize
        };
        BlockIndex {
            layer1: (hash1 % self.blocks1 as u64) as usize,
            layer2,
            hash1,
        }
    }
}

/// Block coordinates of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockIndex {
    pub layer1: usize,
    pub layer2: usize,
    /// Full 64-bit layer-1 hash; its high bits select a shard.
    pub hash1: u64,
}

#[derive(Debug, Clone)]
pub struct TwoLayerSketch {
    params: SketchParams,
    k1: u32,
    k2: u32,
    c1: f64,
    flush_amount: f64,
    decode1: Vec<f64>,
    decode2: Vec<f64>,
    layer1: Vec<VirtualBlock>,
    layer2: Vec<VirtualBlock>,
    hasher: BlockHasher,
    rng: ChaCha8Rng,
}

impl TwoLayerSketch {
    pub fn new(params: SketchParams) -> Result<Self> {
        Self::with_stream(params, 0)
    }

    /// Same hash functions as [`TwoLayerSketch::new`], but an independent
    /// random-bit stream. Shards of one pipeline use this so that a key routed
    /// to any shard lands on the same block coordinates.
    pub fn with_stream(params: SketchParams, stream: u64) -> Result<Self> {
        params.validate()?;
        let k1 = params.k1();
        let k2 = params.k2();
        let decode1 = estimate::decode_table(params.b1);
        let decode2 = estimate::decode_table(params.b2);
        let c1 = decode1[k1 as usize];
        let flush_amount = match params.layering {
            Layering::TwoLayer => c1 * decode2[k2 as usize],
            Layering::SingleLayer => c1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(params.seed ^ RNG_DOMAIN));
        rng.set_stream(stream);
        let blocks2 = match params.layering {
            Layering::TwoLayer => params.blocks2,
            Layering::SingleLayer => 0,
        };
        Ok(TwoLayerSketch {
            k1,
            k2,
            c1,
            flush_amount,
            decode1,
            decode2,
            layer1: vec![VirtualBlock::default(); params.blocks1],
            layer2: vec![VirtualBlock::default(); blocks2],
            hasher: BlockHasher::new(params.seed, params.blocks1, blocks2),
            rng,
            params,
        })
    }

    pub fn params(&self) -> &SketchParams {
        &self.params
    }

    pub fn k1(&self) -> u32 {
        self.k1
    }

    pub fn k2(&self) -> u32 {
        self.k2
    }

    /// Increments represented by one layer-2 bit.
    pub fn c1(&self) -> f64 {
        self.c1
    }

    /// Amount carried by every [`FlushEvent`].
    pub fn flush_amount(&self) -> f64 {
        self.flush_amount
    }

    #[inline]
    pub fn index(&self, key: &FlowKey) -> BlockIndex {
        self.hasher.index(key)
    }

    pub fn hasher(&self) -> &BlockHasher {
        &self.hasher
    }

    #[inline]
    fn draw(&mut self, b: u32) -> u32 {
        (self.rng.next_u64() % u64::from(b)) as u32
    }

    /// Applies `t` unit increments for `key` and returns the flushes they caused.
    pub fn increment(&mut self, key: &FlowKey, t: u32) -> Vec<FlushEvent> {
        let idx = self.index(key);
        let mut flushes = Vec::new();
        for _ in 0..t {
            let bit = self.draw(self.params.b1);
            let block = &mut self.layer1[idx.layer1];
            block.set(bit);
            if !block.is_saturated(self.k1) {
                continue;
            }
            block.clear();
            match self.params.layering {
                Layering::SingleLayer => flushes.push(FlushEvent {
                    key: *key,
                    amount: self.flush_amount,
                }),
                Layering::TwoLayer => {
                    let bit = self.draw(self.params.b2);
                    let upper = &mut self.layer2[idx.layer2];
                    upper.set(bit);
                    if upper.is_saturated(self.k2) {
                        let amount = self.c1 * self.decode2[upper.popcount() as usize];
                        upper.clear();
                        flushes.push(FlushEvent { key: *key, amount });
                    }
                }
            }
        }
        flushes
    }

    /// Online, non-destructive estimate of the increments retained for `key`.
    pub fn decode_residue(&self, key: &FlowKey) -> f64 {
        let idx = self.index(key);
        self.layer1_residue(idx.layer1) + self.layer2_residue(idx.layer2)
    }

    pub fn layer1_residue(&self, index: usize) -> f64 {
        self.decode1[self.layer1[index].popcount() as usize]
    }

    /// C1-scaled decode of a layer-2 block; zero when layer 2 is bypassed.
    pub fn layer2_residue(&self, index: usize) -> f64 {
        match self.layer2.get(index) {
            Some(block) => self.c1 * self.decode2[block.popcount() as usize],
            None => 0.0,
        }
    }

    pub fn layer1_block(&self, index: usize) -> &VirtualBlock {
        &self.layer1[index]
    }

    pub fn layer2_block(&self, index: usize) -> Option<&VirtualBlock> {
        self.layer2.get(index)
    }

    pub fn blocks1(&self) -> usize {
        self.layer1.len()
    }

    pub fn blocks2(&self) -> usize {
        self.layer2.len()
    }

    /// Drains every nonzero block into an unattributed residue list and zeroes the sketch.
    pub fn force_flush_all(&mut self) -> Vec<BlockResidue> {
        let mut out = Vec::new();
        for (index, block) in self.layer1.iter_mut().enumerate() {
            if !block.is_empty() {
                out.push(BlockResidue {
                    layer: Layer::One,
                    index,
                    estimate: self.decode1[block.popcount() as usize],
                });
                block.clear();
            }
        }
        for (index, block) in self.layer2.iter_mut().enumerate() {
            if !block.is_empty() {
                out.push(BlockResidue {
                    layer: Layer::Two,
                    index,
                    estimate: self.c1 * self.decode2[block.popcount() as usize],
                });
                block.clear();
            }
        }
        out
    }

    /// Zeroes all blocks. The random stream continues.
    pub fn reset(&mut self) {
        self.layer1.iter_mut().for_each(VirtualBlock::clear);
        self.layer2.iter_mut().for_each(VirtualBlock::clear);
    }
}
