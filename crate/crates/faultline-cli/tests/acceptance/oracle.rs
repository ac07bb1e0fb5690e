//! A brute-force reference datapath for the exhaustive fault check.
//!
//! It replays the same product stream as the engine but shares none of its
//! machinery: covers come from a segment-tree descent instead of greedy
//! alignment, the schedule is re-derived from scratch, and faults are
//! applied by a three-line hook on every register write. Wrapping adds are
//! associative bit-for-bit, so the two implementations must agree on every
//! latched value and every output — any divergence is a real defect in one
//! of them.

use std::ops::Range;

use faultline::accel::RegisterClass;
use faultline::faults::FaultKind;
use faultline::fxp::{self, FixedPointValue};
use faultline::nn::WeightArchive;

/// One single-bit fault: `mask` has exactly one bit set, `active` is the
/// cycle window — the whole run for stuck-at faults, one cycle wide for a
/// transient.
pub struct ReplayFault {
    pub kind: FaultKind,
    pub class: RegisterClass,
    pub index: usize,
    pub mask: u32,
    pub active: Range<u64>,
}

impl ReplayFault {
    fn apply(
        &self,
        class: RegisterClass,
        index: usize,
        cycle: u64,
        v: FixedPointValue,
    ) -> FixedPointValue {
        if class != self.class || index != self.index || !self.active.contains(&cycle) {
            return v;
        }
        let raw = match self.kind {
            FaultKind::StuckAt0 => v.raw() & !self.mask,
            FaultKind::StuckAt1 => v.raw() | self.mask,
            FaultKind::Transient => v.raw() ^ self.mask,
        };
        FixedPointValue::from_raw(raw, v.format())
    }
}

/// Pushes the maximal tree nodes fully inside lane range [a, b), walking
/// down from the root. `level` counts node size (2^level lanes), `k` is the
/// node's position within its level.
fn descend(
    tree: &[Vec<FixedPointValue>],
    level: usize,
    k: usize,
    a: usize,
    b: usize,
    out: &mut Vec<FixedPointValue>,
) {
    let lo = k << level;
    let hi = lo + (1 << level);
    if b <= lo || hi <= a {
        return;
    }
    if a <= lo && hi <= b {
        out.push(tree[level][k]);
        return;
    }
    descend(tree, level - 1, 2 * k, a, b, out);
    descend(tree, level - 1, 2 * k + 1, a, b, out);
}

/// Runs one inference the slow way and returns the output layer's values.
pub fn replay(
    archive: &WeightArchive,
    num_pes: usize,
    input: &[f64],
    fault: Option<&ReplayFault>,
) -> Vec<FixedPointValue> {
    let sizes = archive.topology().layer_sizes();
    let plan = archive.formats();
    let act = archive.topology().activation();
    let p = num_pes;
    let depth = p.trailing_zeros() as usize;

    let latch = |cycle: u64, class: RegisterClass, index: usize, v: FixedPointValue| match fault {
        Some(f) => f.apply(class, index, cycle, v),
        None => v,
    };

    let mut cycle = 0u64;
    let mut x: Vec<FixedPointValue> =
        input.iter().map(|&v| fxp::quantize(v, plan.ir[0])).collect();

    for j in 0..archive.topology().stage_count() {
        let n_in = sizes[j];
        let n_out = sizes[j + 1];
        let imr_fmt = plan.imr[j];
        let layer = archive.layer(j);
        let products = n_in * n_out;

        let mut acc: Vec<FixedPointValue> =
            layer.biases.iter().map(|&b| fxp::convert(b, imr_fmt)).collect();
        let mut y = Vec::with_capacity(n_out);

        let mut q0 = 0;
        while q0 < products {
            let q1 = (q0 + p).min(products);

            // Latch the cycle's operands; idle lanes hold zeros.
            let ir_vals: Vec<FixedPointValue> = (0..p)
                .map(|l| {
                    let v = if q0 + l < q1 {
                        x[(q0 + l) % n_in]
                    } else {
                        FixedPointValue::zero(plan.ir[j])
                    };
                    latch(cycle, RegisterClass::Ir, l, v)
                })
                .collect();
            let wr_vals: Vec<FixedPointValue> = (0..p)
                .map(|l| {
                    let v = if q0 + l < q1 {
                        let q = q0 + l;
                        layer.weights[(q % n_in) * n_out + q / n_in]
                    } else {
                        FixedPointValue::zero(plan.wr[j])
                    };
                    latch(cycle, RegisterClass::Wr, l, v)
                })
                .collect();

            // The full adder tree, bottom up. Flat register indices run
            // leaves first, then each internal level in order.
            let mut tree: Vec<Vec<FixedPointValue>> = Vec::with_capacity(depth + 1);
            tree.push(
                (0..p)
                    .map(|l| {
                        let prod = fxp::multiply(ir_vals[l], wr_vals[l], imr_fmt);
                        latch(cycle, RegisterClass::Imr, l, prod)
                    })
                    .collect(),
            );
            let mut offset = p;
            for level in 1..=depth {
                let row: Vec<FixedPointValue> = {
                    let below = &tree[level - 1];
                    (0..below.len() / 2)
                        .map(|k| {
                            let sum = fxp::add(below[2 * k], below[2 * k + 1]).unwrap();
                            latch(cycle, RegisterClass::Imr, offset + k, sum)
                        })
                        .collect()
                };
                offset += row.len();
                tree.push(row);
            }

            // Group live lanes into per-neuron runs; idle lanes ride with
            // the last one.
            let mut runs: Vec<(usize, usize, usize)> = Vec::new();
            for l in 0..(q1 - q0) {
                let o = (q0 + l) / n_in;
                match runs.last_mut() {
                    Some((neuron, _, b)) if *neuron == o => *b = l + 1,
                    _ => runs.push((o, l, l + 1)),
                }
            }
            runs.last_mut().unwrap().2 = p;

            for (o, a, b) in runs {
                let mut nodes = Vec::new();
                descend(&tree, depth, 0, a, b, &mut nodes);
                for v in nodes {
                    acc[o] = fxp::add(acc[o], v).unwrap();
                }
                if (o + 1) * n_in <= q1 {
                    y.push(act.apply_fixed(acc[o], plan.ir[j + 1]));
                }
            }

            cycle += 1;
            q0 += p;
        }
        assert_eq!(y.len(), n_out);
        x = y;
    }
    x
}
