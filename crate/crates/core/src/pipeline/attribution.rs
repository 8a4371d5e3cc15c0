//! Epoch-end attribution of sketch residue to a caller-supplied key set.
//!
//! A block is shared by every key that hashes to it, so reading its residue
//! once per key would count it several times. Instead each block's residue
//! is split among the keys that map to it, so the split preserves the block
//! total.
//!
//! Keys that already reached the WSAF are the likely owners of a busy block.
//! Within a block, keys with no WSAF entry receive the background level,
//! which is the mean per-key residue observed in blocks holding no WSAF key
//! at all. The remainder goes to WSAF keys in proportion to their flushed
//! share, where packet and byte flushes each count as a fraction of their
//! metric's WSAF total. A block with no WSAF key is split evenly.

use crate::key::FlowKey;
use crate::sketch::TwoLayerSketch;
use crate::wsaf::WsafTable;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Share {
    pub packets: f64,
    /// In byte-sketch units.
    pub byte_units: f64,
}

pub(crate) fn attribute(
    packets: &TwoLayerSketch,
    bytes: &TwoLayerSketch,
    wsaf: &WsafTable,
    keys: &[FlowKey],
) -> Vec<Share> {
    let flushed: Vec<(f64, f64)> = keys
        .iter()
        .map(|k| {
            wsaf.lookup(k)
                .map_or((0.0, 0.0), |e| (e.packets_est, e.bytes_est))
        })
        .collect();
    let total_p: f64 = flushed.iter().map(|f| f.0).sum();
    let total_b: f64 = flushed.iter().map(|f| f.1).sum();
    let frac = |x: f64, total: f64| if total > 0.0 { x / total } else { 0.0 };
    let weights: Vec<f64> = flushed
        .iter()
        .map(|&(p, b)| frac(p, total_p) + frac(b, total_b))
        .collect();

    let packet_shares = apportion_sketch(packets, keys, &weights);
    let byte_shares = apportion_sketch(bytes, keys, &weights);
    packet_shares
        .into_iter()
        .zip(byte_shares)
        .map(|(packets, byte_units)| Share {
            packets,
            byte_units,
        })
        .collect()
}

fn apportion_sketch(sketch: &TwoLayerSketch, keys: &[FlowKey], weights: &[f64]) -> Vec<f64> {
    let idx: Vec<_> = keys.iter().map(|k| sketch.index(k)).collect();
    let mut out = vec![0.0; keys.len()];
    let l1: Vec<usize> = idx.iter().map(|i| i.layer1).collect();
    apportion_layer(&l1, |b| sketch.layer1_residue(b), weights, &mut out);
    if sketch.blocks2() > 0 {
        let l2: Vec<usize> = idx.iter().map(|i| i.layer2).collect();
        apportion_layer(&l2, |b| sketch.layer2_residue(b), weights, &mut out);
    }
    out
}

/// Adds each block's residue, split among the keys mapped to it, into `out`.
/// `block_of[i]` is key `i`'s block.
fn apportion_layer(
    block_of: &[usize],
    residue: impl Fn(usize) -> f64,
    weights: &[f64],
    out: &mut [f64],
) {
    let mut order: Vec<usize> = (0..block_of.len()).collect();
    order.sort_unstable_by_key(|&i| (block_of[i], i));
    let groups: Vec<&[usize]> = order
        .chunk_by(|&a, &b| block_of[a] == block_of[b])
        .collect();

    let (mut bg_mass, mut bg_keys) = (0.0, 0usize);
    for g in &groups {
        if g.iter().all(|&i| weights[i] == 0.0) {
            bg_mass += residue(block_of[g[0]]);
            bg_keys += g.len();
        }
    }
    let background = if bg_keys > 0 {
        bg_mass / bg_keys as f64
    } else {
        0.0
    };

    for g in groups {
        let r = residue(block_of[g[0]]);
        if r == 0.0 {
            continue;
        }
        let weight_sum: f64 = g.iter().map(|&i| weights[i]).sum();
        if weight_sum == 0.0 {
            let each = r / g.len() as f64;
            g.iter().for_each(|&i| out[i] += each);
            continue;
        }
        let unflushed = g.iter().filter(|&&i| weights[i] == 0.0).count();
        let to_unflushed = (background * unflushed as f64).min(r);
        if unflushed > 0 {
            let each = to_unflushed / unflushed as f64;
            g.iter()
                .filter(|&&i| weights[i] == 0.0)
                .for_each(|&i| out[i] += each);
        }
        let rest = r - to_unflushed;
        for &i in g.iter().filter(|&&i| weights[i] > 0.0) {
            out[i] += rest * weights[i] / weight_sum;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run(blocks: &[usize], residues: &[f64], weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; blocks.len()];
        apportion_layer(blocks, |b| residues[b], weights, &mut out);
        out
    }

    #[test]
    fn lone_key_takes_whole_block() {
        assert_eq!(run(&[1], &[0.0, 42.0], &[0.0]), vec![42.0]);
    }

    #[test]
    fn even_split_without_weights() {
        assert_eq!(run(&[0, 0, 0, 0], &[8.0], &[0.0; 4]), vec![2.0; 4]);
    }

    #[test]
    fn weighted_block_leaves_background_to_mice() {
        // Block 1 holds no WSAF key: background = 6 / 2 = 3 per key.
        // Block 0 has one flushed key and two mice: mice get 3 each, the rest
        // (100 - 6) goes to the flushed key.
        let out = run(&[0, 0, 0, 1, 1], &[100.0, 6.0], &[0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(out, vec![3.0, 94.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn background_capped_by_block() {
        let out = run(&[0, 0, 1], &[1.0, 50.0], &[0.0, 1.0, 0.0]);
        assert_eq!(out, vec![1.0, 0.0, 50.0]);
    }

    #[test]
    fn proportional_between_flushed_keys() {
        let out = run(&[0, 0], &[30.0], &[1.0, 2.0]);
        assert!((out[0] - 10.0).abs() < 1e-12 && (out[1] - 20.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn block_totals_preserved(
            blocks in proptest::collection::vec(0usize..16, 1..80),
            residues in proptest::collection::vec(0.0f64..1e4, 16),
            wsel in proptest::collection::vec(prop_oneof![Just(0.0), 0.01f64..1.0], 80),
        ) {
            let weights = &wsel[..blocks.len()];
            let out = run(&blocks, &residues, weights);
            let mut used: Vec<usize> = blocks.clone();
            used.sort_unstable();
            used.dedup();
            let want: f64 = used.iter().map(|&b| residues[b]).sum();
            let got: f64 = out.iter().sum();
            prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0));
            prop_assert!(out.iter().all(|&x| x >= 0.0));
        }
    }
}
