//! The cycle-accurate datapath.
//!
//! Each cycle stages up to P (input, weight) operand pairs into IR/WR,
//! multiplies them into the adder tree's leaves, reduces the tree level by
//! level, and folds finished partial sums into per-neuron accumulators.
//! Products stream layer by layer, output-neuron-major: flat product
//! q = o * n_in + i pairs input i with the weight feeding neuron o, and
//! cycle c of a layer carries products [cP, cP+P). A neuron whose products
//! end inside a chunk hands its accumulator to the activation unit that
//! same cycle.
//!
//! A neuron's lanes within one chunk form a contiguous run, which the tree
//! sums via its minimal cover of aligned subtrees (a run spanning the full
//! chunk is read straight off the root). Lanes past the layer's last
//! product carry zeros and ride along with the chunk's final segment —
//! harmless when clean, but faultable like any other lane.
//!
//! Every register write funnels through one latch path: the fault (if any)
//! corrupts the word, the mitigation technique rewrites it based on which
//! bits flipped, and the trace records what was actually stored. Wrap
//! accounting counts only arithmetic whose result a neuron consumes; a
//! wrapped add in a dead corner of the tree never reaches an accumulator
//! and is not an event.

use super::{imr_level_offset, AccelError, AcceleratorConfig, RegisterClass, RegisterTrace};
use crate::faults::ActiveFault;
use crate::fxp::{self, FixedPointValue};
use crate::mitigate::{self, DetectionReport, Technique};
use crate::nn::{argmax, WeightArchive};

/// What one simulated inference produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceOutcome {
    /// Argmax over the output layer (ties break to the lowest index).
    pub class: usize,
    /// Output-layer activations, in the final format of the plan.
    pub outputs: Vec<FixedPointValue>,
    /// Consumed two's-complement wrap-arounds (multiplies, tree adds on
    /// paths a neuron read, accumulator adds, bias re-encodes).
    pub wrap_events: u64,
    /// Every register write, when requested.
    pub trace: Option<RegisterTrace>,
}

struct WritePath<'a> {
    fault: Option<&'a ActiveFault>,
    technique: Technique,
    trace: Option<RegisterTrace>,
}

impl WritePath<'_> {
    #[inline]
    fn latch(
        &mut self,
        cycle: u64,
        class: RegisterClass,
        index: u32,
        value: FixedPointValue,
    ) -> FixedPointValue {
        let (mut v, flipped) = match self.fault {
            Some(f) => f.corrupt(class, index, cycle, value),
            None => (value, 0),
        };
        if flipped != 0 {
            v = mitigate::apply(self.technique, DetectionReport { value: v, flipped });
        }
        if let Some(t) = self.trace.as_mut() {
            t.push(cycle, class, index, v);
        }
        v
    }
}

/// Largest power of two not above `x` (x >= 1).
fn prev_pow2(x: usize) -> usize {
    1 << (usize::BITS - 1 - x.leading_zeros())
}

/// Minimal cover of lane range [a, b) by aligned power-of-two blocks,
/// greedily taking the largest block that starts at `a`. Each block is one
/// adder-tree node, pushed as (level, index-within-level).
fn aligned_cover(num_pes: usize, mut a: usize, b: usize, nodes: &mut Vec<(u32, usize)>) {
    while a < b {
        let max_align = if a == 0 { num_pes } else { 1 << a.trailing_zeros() };
        let size = max_align.min(prev_pow2(b - a));
        nodes.push((size.trailing_zeros(), a / size));
        a += size;
    }
}

struct Segment {
    neuron: usize,
    completes: bool,
    nodes: Vec<(u32, usize)>,
}

/// Simulates one inference, cycle by cycle and register write by register
/// write, optionally under a fault and a mitigation technique.
pub fn run_inference(
    config: &AcceleratorConfig,
    archive: &WeightArchive,
    input: &[f64],
    fault: Option<&ActiveFault>,
    mitigation: Technique,
    record_trace: bool,
) -> Result<InferenceOutcome, AccelError> {
    if archive.topology() != config.topology() {
        return Err(AccelError::Mismatch(
            "archive topology differs from the accelerator's".into(),
        ));
    }
    if archive.formats() != config.formats() {
        return Err(AccelError::Mismatch(
            "archive format plan differs from the accelerator's".into(),
        ));
    }
    let sizes = config.topology().layer_sizes();
    if input.len() != sizes[0] {
        return Err(AccelError::InputSize { expected: sizes[0], got: input.len() });
    }

    let p = config.num_pes();
    let depth = p.trailing_zeros();
    let plan = config.formats();
    let act = config.topology().activation();

    let mut path = WritePath {
        fault,
        technique: mitigation,
        trace: record_trace.then(RegisterTrace::default),
    };
    let mut wraps = 0u64;
    let mut cycle = 0u64;
    let mut consumed = vec![false; 2 * p - 1];
    let mut segments: Vec<Segment> = Vec::new();

    let mut x: Vec<FixedPointValue> =
        input.iter().map(|&v| fxp::quantize(v, plan.ir[0])).collect();

    for j in 0..config.topology().stage_count() {
        let n_in = sizes[j];
        let n_out = sizes[j + 1];
        let imr_fmt = plan.imr[j];
        let out_fmt = plan.ir[j + 1];
        let layer = archive.layer(j);
        let products = n_in * n_out;

        let zero_ir = FixedPointValue::zero(plan.ir[j]);
        let zero_wr = FixedPointValue::zero(plan.wr[j]);
        let mut regs_ir = vec![zero_ir; p];
        let mut regs_wr = vec![zero_wr; p];
        let mut regs_imr = vec![FixedPointValue::zero(imr_fmt); 2 * p - 1];

        // Accumulators preload the biases, re-encoded into the tree format.
        let mut acc = Vec::with_capacity(n_out);
        for o in 0..n_out {
            let (b, wrapped) = fxp::convert_checked(layer.biases[o], imr_fmt);
            wraps += wrapped as u64;
            acc.push(b);
        }
        let mut y = Vec::with_capacity(n_out);

        for c in 0..products.div_ceil(p) {
            let q0 = c * p;
            let q1 = (q0 + p).min(products);
            let live = q1 - q0;

            // Stage the cycle's operands.
            for (l, reg) in regs_ir.iter_mut().enumerate() {
                let v = if l < live { x[(q0 + l) % n_in] } else { zero_ir };
                *reg = path.latch(cycle, RegisterClass::Ir, l as u32, v);
            }
            for (l, reg) in regs_wr.iter_mut().enumerate() {
                let v = if l < live {
                    let q = q0 + l;
                    layer.weights[(q % n_in) * n_out + q / n_in]
                } else {
                    zero_wr
                };
                *reg = path.latch(cycle, RegisterClass::Wr, l as u32, v);
            }

            // The chunk's per-neuron lane runs and their tree covers.
            segments.clear();
            let o_first = q0 / n_in;
            let o_last = (q1 - 1) / n_in;
            for o in o_first..=o_last {
                let a = (o * n_in).max(q0) - q0;
                let b = if o == o_last { p } else { (o + 1) * n_in - q0 };
                let mut nodes = Vec::new();
                aligned_cover(p, a, b, &mut nodes);
                segments.push(Segment { neuron: o, completes: (o + 1) * n_in <= q1, nodes });
            }

            // Internal tree entries sitting under some consumed cover node;
            // only their wraps feed real sums.
            consumed.fill(false);
            for seg in &segments {
                for &(level, k) in &seg.nodes {
                    for sub in 1..=level {
                        let base = imr_level_offset(p, sub);
                        let shift = level - sub;
                        for kk in (k << shift)..((k + 1) << shift) {
                            consumed[base + kk] = true;
                        }
                    }
                }
            }

            // Multiply into the leaves, then reduce level by level.
            for l in 0..p {
                let (prod, wrapped) = fxp::multiply_checked(regs_ir[l], regs_wr[l], imr_fmt);
                wraps += wrapped as u64;
                regs_imr[l] = path.latch(cycle, RegisterClass::Imr, l as u32, prod);
            }
            for level in 1..=depth {
                let dst = imr_level_offset(p, level);
                let src = imr_level_offset(p, level - 1);
                for k in 0..(p >> level) {
                    let (sum, wrapped) =
                        fxp::add_checked(regs_imr[src + 2 * k], regs_imr[src + 2 * k + 1])?;
                    if consumed[dst + k] {
                        wraps += wrapped as u64;
                    }
                    regs_imr[dst + k] = path.latch(cycle, RegisterClass::Imr, (dst + k) as u32, sum);
                }
            }

            // Fold covers into accumulators; finished neurons activate.
            for seg in &segments {
                for &(level, k) in &seg.nodes {
                    let abs = if level == 0 { k } else { imr_level_offset(p, level) + k };
                    let (sum, wrapped) = fxp::add_checked(acc[seg.neuron], regs_imr[abs])?;
                    wraps += wrapped as u64;
                    acc[seg.neuron] = sum;
                }
                if seg.completes {
                    y.push(act.apply_fixed(acc[seg.neuron], out_fmt));
                }
            }

            cycle += 1;
        }
        debug_assert_eq!(y.len(), n_out);
        x = y;
    }

    let ints: Vec<i64> = x.iter().map(|v| v.as_int()).collect();
    Ok(InferenceOutcome {
        class: argmax(&ints),
        outputs: x,
        wrap_events: wraps,
        trace: path.trace,
    })
}
