use rand::seq::index;
use rand::Rng;

use super::{Roster, TruthTable};

/// Signal rows used for the condition features.
pub const CONDITION_ROWS: usize = 256;
/// Packed features per node: 256 rows in 8-bit groups.
pub const CONDITION_WIDTH: usize = CONDITION_ROWS / 8;

/// Per-node condition features, row-major `n x 32`.
///
/// Input and output nodes receive their 256-row signal column packed into
/// bytes (first bit of a group most significant) and scaled by 1/256; AND
/// nodes receive zeros. Tables with fewer than 8 inputs are tiled up to 256
/// rows; tables with more have 256 distinct rows sampled (kept in row
/// order), using `rng`.
pub fn encode_condition<R: Rng + ?Sized>(tt: &TruthTable, roster: &Roster, rng: &mut R) -> Vec<f64> {
    let rows = tt.rows();
    let selected: Vec<usize> = if rows >= CONDITION_ROWS {
        if rows == CONDITION_ROWS {
            (0..rows).collect()
        } else {
            let mut pick = index::sample(rng, rows, CONDITION_ROWS).into_vec();
            pick.sort_unstable();
            pick
        }
    } else {
        (0..CONDITION_ROWS).map(|r| r % rows).collect()
    };

    let n = roster.n();
    let mut out = vec![0.0; n * CONDITION_WIDTH];
    let mut pack = |node: usize, bit: &dyn Fn(usize) -> bool| {
        let row = &mut out[node * CONDITION_WIDTH..(node + 1) * CONDITION_WIDTH];
        for (g, slot) in row.iter_mut().enumerate() {
            let mut byte = 0u32;
            for b in 0..8 {
                if bit(selected[g * 8 + b]) {
                    byte |= 1 << (7 - b);
                }
            }
            *slot = byte as f64 / 256.0;
        }
    };
    for (i, &node) in roster.inputs.iter().enumerate() {
        pack(node, &|r| (r >> i) & 1 == 1);
    }
    for (k, &node) in roster.outputs.iter().enumerate() {
        if k < tt.n_out() {
            pack(node, &|r| tt.bit(k, r));
        }
    }
    out
}
