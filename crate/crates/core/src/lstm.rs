//! Stacked LSTM cell shared by the encoders and decoders.
//!
//! Each layer owns `{prefix}.l{n}.w` of shape `[input + hidden, 4 * hidden]`
//! (gate columns ordered input, forget, candidate, output) and a bias
//! `{prefix}.l{n}.b`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::diff::{Binding, Real, Tape, Var};
use crate::error::Result;
use crate::model::{Init, ParamSpec};

pub(crate) fn specs(prefix: &str, input_dim: usize, hidden: usize, layers: usize) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    for l in 0..layers {
        let in_dim = if l == 0 { input_dim } else { hidden };
        out.push(ParamSpec::new(
            format!("{}.l{}.w", prefix, l),
            vec![in_dim + hidden, 4 * hidden],
            Init::Uniform(0.08),
        ));
        out.push(ParamSpec::new(format!("{}.l{}.b", prefix, l), vec![4 * hidden], Init::Zeros));
    }
    out
}

/// Resolved tape variables of one stack.
pub(crate) struct LstmVars {
    layers: Vec<(Var, Var)>,
    hidden: usize,
}

impl LstmVars {
    pub(crate) fn resolve(binding: &Binding, prefix: &str, layers: usize, hidden: usize) -> Result<Self> {
        let layers = (0..layers)
            .map(|l| {
                Ok((
                    binding.var(&format!("{}.l{}.w", prefix, l))?,
                    binding.var(&format!("{}.l{}.b", prefix, l))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, hidden })
    }
}

/// Per-layer hidden and cell states, each `[batch, hidden]`.
#[derive(Debug, Clone)]
pub(crate) struct StackState {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

impl StackState {
    pub(crate) fn zeros<T: Real>(tape: &mut Tape<T>, batch: usize, hidden: usize, layers: usize) -> Result<Self> {
        let mut h = Vec::with_capacity(layers);
        let mut c = Vec::with_capacity(layers);
        for _ in 0..layers {
            h.push(tape.constant(batch, hidden, vec![T::zero(); batch * hidden])?);
            c.push(tape.constant(batch, hidden, vec![T::zero(); batch * hidden])?);
        }
        Ok(Self { h, c })
    }

    pub(crate) fn top(&self) -> Var {
        *self.h.last().expect("at least one layer")
    }
}

/// Row mask for one time step. `None` means every row advances.
pub(crate) struct StepMask {
    keep: Var,
    hold: Var,
}

impl StepMask {
    /// Returns `None` when all rows are active.
    pub(crate) fn new<T: Real>(tape: &mut Tape<T>, mask: &[f64]) -> Result<Option<Self>> {
        if mask.iter().all(|&m| m == 1.0) {
            return Ok(None);
        }
        let keep = mask.iter().map(|&m| T::lit(m)).collect();
        let hold = mask.iter().map(|&m| T::lit(1.0 - m)).collect();
        Ok(Some(Self {
            keep: tape.constant(mask.len(), 1, keep)?,
            hold: tape.constant(mask.len(), 1, hold)?,
        }))
    }

    fn blend<T: Real>(&self, tape: &mut Tape<T>, new: Var, old: Var) -> Result<Var> {
        let a = tape.mul_col(new, self.keep)?;
        let b = tape.mul_col(old, self.hold)?;
        tape.add(a, b)
    }
}

/// Advance every layer by one step. Masked-out rows keep their state
/// exactly.
pub(crate) fn step<T: Real>(
    tape: &mut Tape<T>,
    vars: &LstmVars,
    input: Var,
    state: &StackState,
    mask: Option<&StepMask>,
) -> Result<StackState> {
    let hd = vars.hidden;
    let mut x = input;
    let mut next = StackState {
        h: Vec::with_capacity(vars.layers.len()),
        c: Vec::with_capacity(vars.layers.len()),
    };
    for (l, &(w, b)) in vars.layers.iter().enumerate() {
        let (h_prev, c_prev) = (state.h[l], state.c[l]);
        let joined = tape.concat_cols(&[x, h_prev])?;
        let pre = tape.matmul(joined, w)?;
        let gates = tape.add_row(pre, b)?;
        let i_pre = tape.slice_cols(gates, 0, hd)?;
        let f_pre = tape.slice_cols(gates, hd, 2 * hd)?;
        let g_pre = tape.slice_cols(gates, 2 * hd, 3 * hd)?;
        let o_pre = tape.slice_cols(gates, 3 * hd, 4 * hd)?;
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let g = tape.tanh(g_pre);
        let o = tape.sigmoid(o_pre);
        let fc = tape.mul(f, c_prev)?;
        let ig = tape.mul(i, g)?;
        let mut c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        let mut h = tape.mul(o, tc)?;
        if let Some(m) = mask {
            h = m.blend(tape, h, h_prev)?;
            c = m.blend(tape, c, c_prev)?;
        }
        next.h.push(h);
        next.c.push(c);
        x = h;
    }
    Ok(next)
}
