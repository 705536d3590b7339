//! Word embeddings followed by a single-layer bidirectional GRU; each word's
//! output is the mean of its forward and backward hidden states.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{PAD, UNK};
use crate::diffcore::{Matrix, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Gate weights of one GRU direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruParams {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
}

impl GruParams {
    fn new<R: Rng>(store: &mut ParamStore, prefix: &str, e: usize, d: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w_z: store.insert_glorot(format!("{prefix}.w_z"), e, d, rng)?,
            w_r: store.insert_glorot(format!("{prefix}.w_r"), e, d, rng)?,
            w_h: store.insert_glorot(format!("{prefix}.w_h"), e, d, rng)?,
            u_z: store.insert_glorot(format!("{prefix}.u_z"), d, d, rng)?,
            u_r: store.insert_glorot(format!("{prefix}.u_r"), d, d, rng)?,
            u_h: store.insert_glorot(format!("{prefix}.u_h"), d, d, rng)?,
            b_z: store.insert_zeros(format!("{prefix}.b_z"), 1, d)?,
            b_r: store.insert_zeros(format!("{prefix}.b_r"), 1, d)?,
            b_h: store.insert_zeros(format!("{prefix}.b_h"), 1, d)?,
        })
    }

    pub fn ids(&self) -> [ParamId; 9] {
        [
            self.w_z, self.w_r, self.w_h, self.u_z, self.u_r, self.u_h, self.b_z, self.b_r, self.b_h,
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct WordEmbeddingSet {
    /// `m x d`, one row per token.
    pub embeddings: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoder {
    pub config: TextEncoderConfig,
    pub table: ParamId,
    pub forward: GruParams,
    pub backward: GruParams,
}

impl TextEncoder {
    pub const PREFIX: &'static str = "text.";

    pub fn new<R: Rng>(config: TextEncoderConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let (v, d) = (config.vocab_size, config.embed_dim);
        if v <= UNK || d == 0 {
            return Err(Error::Config("text encoder needs a vocabulary and embed_dim > 0".into()));
        }
        let table = store.insert_glorot("text.embed", v, d, rng)?;
        store.get_mut(table).value.row_mut(PAD).fill(0.0);
        let forward = GruParams::new(store, "text.gru_fwd", d, d, rng)?;
        let backward = GruParams::new(store, "text.gru_bwd", d, d, rng)?;
        Ok(Self {
            config,
            table,
            forward,
            backward,
        })
    }

    pub fn embed_tokens(&self, tape: &mut Tape, store: &ParamStore, tokens: &[usize]) -> Result<Var> {
        let table = tape.param(store, self.table);
        tape.gather_rows(table, tokens)
    }

    /// Hidden states of one direction, row `j` aligned with token `j`.
    pub fn gru_direction(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: Var,
        direction: Direction,
    ) -> Result<Var> {
        let p = match direction {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        };
        gru_direction(tape, store, p, inputs, direction)
    }

    pub fn encode_text(&self, tape: &mut Tape, store: &ParamStore, tokens: &[usize]) -> Result<WordEmbeddingSet> {
        if tokens.is_empty() {
            return Err(Error::EmptyText(String::new()));
        }
        let e = self.embed_tokens(tape, store, tokens)?;
        let fwd = self.gru_direction(tape, store, e, Direction::Forward)?;
        let bwd = self.gru_direction(tape, store, e, Direction::Backward)?;
        let sum = tape.add(fwd, bwd)?;
        Ok(WordEmbeddingSet {
            embeddings: tape.scale(sum, 0.5),
        })
    }
}

/// GRU recurrence from a zero state over the rows of `inputs`:
/// `z = σ(x W_z + h U_z + b_z)`, `r = σ(x W_r + h U_r + b_r)`,
/// `h̃ = tanh(x W_h + (r ⊙ h) U_h + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
pub fn gru_direction(
    tape: &mut Tape,
    store: &ParamStore,
    p: &GruParams,
    inputs: Var,
    direction: Direction,
) -> Result<Var> {
    let (m, _) = tape.value(inputs).shape();
    if m == 0 {
        return Err(Error::EmptyText(String::new()));
    }
    let [w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h] = p.ids().map(|id| tape.param(store, id));
    let d = tape.value(u_z).rows();

    // input projections for all steps at once
    let xz = tape.matmul(inputs, w_z)?;
    let xz = tape.add_row(xz, b_z)?;
    let xr = tape.matmul(inputs, w_r)?;
    let xr = tape.add_row(xr, b_r)?;
    let xh = tape.matmul(inputs, w_h)?;
    let xh = tape.add_row(xh, b_h)?;

    let order: Vec<usize> = match direction {
        Direction::Forward => (0..m).collect(),
        Direction::Backward => (0..m).rev().collect(),
    };
    let mut h = tape.constant(Matrix::zeros(1, d));
    let mut states = vec![h; m];
    for j in order {
        let xz_j = tape.gather_rows(xz, &[j])?;
        let xr_j = tape.gather_rows(xr, &[j])?;
        let xh_j = tape.gather_rows(xh, &[j])?;

        let hz = tape.matmul(h, u_z)?;
        let z = tape.add(xz_j, hz)?;
        let z = tape.sigmoid(z);
        let hr = tape.matmul(h, u_r)?;
        let r = tape.add(xr_j, hr)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let rh = tape.matmul(rh, u_h)?;
        let cand = tape.add(xh_j, rh)?;
        let cand = tape.tanh(cand);

        let keep = tape.one_minus(z);
        let keep = tape.mul(keep, h)?;
        let update = tape.mul(z, cand)?;
        h = tape.add(keep, update)?;
        states[j] = h;
    }
    tape.stack_rows(&states)
}
