//! Both encoders and their shared parameter store.

use rand::Rng;

use crate::data::{ColoredPointCloud, Vocabulary};
use crate::diffcore::{Matrix, ParamStore, Tape};
use crate::error::Result;
use crate::shape_encoder::{PartSource, ShapeEncoder, ShapeEncoderConfig};
use crate::text_encoder::{TextEncoder, TextEncoderConfig};

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ShapeEncoderConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub shape: ShapeEncoder,
    pub text: TextEncoder,
}

impl Model {
    /// Shape parameters are drawn first, then text parameters.
    pub fn new<R: Rng>(config: ShapeEncoderConfig, vocab: Vocabulary, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let shape = ShapeEncoder::new(config.clone(), &mut store, rng)?;
        let text_cfg = TextEncoderConfig {
            vocab_size: vocab.len(),
            embed_dim: config.embed_dim,
        };
        let text = TextEncoder::new(text_cfg, &mut store, rng)?;
        Ok(Self {
            config,
            vocab,
            store,
            shape,
            text,
        })
    }

    /// Part embeddings (one row per part) and predicted per-point labels.
    pub fn encode_shape(
        &self,
        cloud: &ColoredPointCloud,
        part_source: PartSource,
        min_fraction: f64,
    ) -> Result<(Matrix, Vec<usize>)> {
        let mut tape = Tape::new();
        let (parts, seg) = self
            .shape
            .encode_shape(&mut tape, &self.store, cloud, part_source, min_fraction)?;
        Ok((tape.value(parts.embeddings).clone(), seg.labels))
    }

    /// Context-sensitive word embeddings, one row per token.
    pub fn encode_text(&self, tokens: &[usize]) -> Result<Matrix> {
        let mut tape = Tape::new();
        let words = self.text.encode_text(&mut tape, &self.store, tokens)?;
        Ok(tape.value(words.embeddings).clone())
    }
}
