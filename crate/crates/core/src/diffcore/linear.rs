use rand::Rng;

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;

/// Affine map `x W + b` over rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            weight: store.insert_glorot(format!("{name}.w"), fan_in, fan_out, rng)?,
            bias: store.insert_zeros(format!("{name}.b"), 1, fan_out)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }

    pub fn forward_tanh(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.forward(tape, store, x)?;
        Ok(tape.tanh(y))
    }
}
