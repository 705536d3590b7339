//! Triplet ranking loss with in-batch negative mining and the two-stage
//! training procedure (segmentation pretraining, then joint training).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{PairedCorpus, Vocabulary};
use crate::diffcore::{AdamConfig, AdamState, Matrix, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::eval::{self, RetrievalDirection, ScoringConfig};
use crate::model::Model;
use crate::ot_matcher::{Matcher, PlanGradient, SinkhornConfig};
use crate::shape_encoder::{part_pool, PartSource, ShapeEncoder, ShapeEncoderConfig};
use crate::text_encoder::TextEncoder;

/// Shape-vs-text similarities of one batch; `scores[a][b]` pairs shape `a` with text `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchScores {
    pub scores: Matrix,
    pub positive: Vec<Vec<bool>>,
}

impl BatchScores {
    pub fn new(scores: Matrix, positive: Vec<Vec<bool>>) -> Result<Self> {
        let (n, m) = scores.shape();
        if positive.len() != n || positive.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension {
                op: "BatchScores",
                left: (n, m),
                right: (positive.len(), positive.first().map_or(0, Vec::len)),
            });
        }
        if !scores.is_finite() {
            return Err(Error::Numeric("non-finite batch score".into()));
        }
        let row_ok = positive.iter().all(|r| r.iter().any(|&p| p));
        let col_ok = (0..m).all(|b| positive.iter().any(|r| r[b]));
        if !row_ok || !col_ok {
            return Err(Error::Config("every shape and text needs a positive in its batch".into()));
        }
        Ok(Self { scores, positive })
    }

    /// Positives on the diagonal only.
    pub fn diagonal(scores: Matrix) -> Result<Self> {
        let (n, m) = scores.shape();
        let positive = (0..n).map(|a| (0..m).map(|b| a == b).collect()).collect();
        Self::new(scores, positive)
    }

    fn line(&self, anchor: usize, direction: RetrievalDirection) -> Vec<(usize, f64, bool)> {
        match direction {
            RetrievalDirection::S2T => (0..self.scores.cols())
                .map(|b| (b, self.scores.get(anchor, b), self.positive[anchor][b]))
                .collect(),
            RetrievalDirection::T2S => (0..self.scores.rows())
                .map(|a| (a, self.scores.get(a, anchor), self.positive[a][anchor]))
                .collect(),
        }
    }

    fn anchors(&self, direction: RetrievalDirection) -> usize {
        match direction {
            RetrievalDirection::S2T => self.scores.rows(),
            RetrievalDirection::T2S => self.scores.cols(),
        }
    }

    /// Highest-scoring positive of an anchor (lowest index on ties).
    pub fn positive_of(&self, anchor: usize, direction: RetrievalDirection) -> Option<(usize, f64)> {
        best(self.line(anchor, direction).into_iter().filter(|t| t.2).map(|t| (t.0, t.1)))
    }
}

fn best(it: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    it.fold(None, |acc, (i, s)| match acc {
        Some((_, bs)) if bs >= s => acc,
        _ => Some((i, s)),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mining {
    /// Hardest negative among those scoring below the positive.
    #[default]
    SemiHard,
    /// Hardest negative overall (ablation; prone to collapse).
    Hardest,
}

/// Negative chosen for `anchor`, or `None` when no candidate qualifies.
pub fn mine_negative(
    scores: &BatchScores,
    anchor: usize,
    direction: RetrievalDirection,
    mining: Mining,
) -> Option<usize> {
    let (_, pos) = scores.positive_of(anchor, direction)?;
    let candidates = scores
        .line(anchor, direction)
        .into_iter()
        .filter(|t| !t.2 && (mining == Mining::Hardest || t.1 < pos))
        .map(|t| (t.0, t.1));
    best(candidates).map(|b| b.0)
}

pub fn mine_semi_hard(scores: &BatchScores, anchor: usize, direction: RetrievalDirection) -> Option<usize> {
    mine_negative(scores, anchor, direction, Mining::SemiHard)
}

/// `max(margin - pos + neg, 0)`.
pub fn triplet_loss(pos: f64, neg: f64, margin: f64) -> f64 {
    (margin + (neg - pos)).max(0.0)
}

/// Loss value with `d loss / d scores`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchingTerms {
    pub loss: f64,
    pub grad: Matrix,
}

/// Mean S2T hinge plus mean T2S hinge, each against its mined negative.
pub fn matching_terms(scores: &BatchScores, margin: f64, mining: Mining) -> MatchingTerms {
    let mut grad = Matrix::zeros(scores.scores.rows(), scores.scores.cols());
    let mut loss = 0.0;
    for direction in [RetrievalDirection::S2T, RetrievalDirection::T2S] {
        let count = scores.anchors(direction);
        let w = 1.0 / count as f64;
        for anchor in 0..count {
            let (Some((p, pos)), Some(n)) = (
                scores.positive_of(anchor, direction),
                mine_negative(scores, anchor, direction, mining),
            ) else {
                continue;
            };
            let cell = |other: usize| match direction {
                RetrievalDirection::S2T => (anchor, other),
                RetrievalDirection::T2S => (other, anchor),
            };
            let neg = scores.scores.get(cell(n).0, cell(n).1);
            let l = triplet_loss(pos, neg, margin);
            if l > 0.0 {
                loss += w * l;
                let (pr, pc) = cell(p);
                let (nr, nc) = cell(n);
                grad.set(pr, pc, grad.get(pr, pc) - w);
                grad.set(nr, nc, grad.get(nr, nc) + w);
            }
        }
    }
    MatchingTerms { loss, grad }
}

pub fn matching_loss(scores: &BatchScores, margin: f64) -> f64 {
    matching_terms(scores, margin, Mining::SemiHard).loss
}

/// `seg_ce + beta * matching`.
pub fn combined_loss(seg_ce: f64, matching: f64, beta: f64) -> f64 {
    seg_ce + beta * matching
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub margin: f64,
    pub beta: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub mining: Mining,
    pub matcher: Matcher,
    pub sinkhorn: SinkhornConfig,
    pub plan_gradient: PlanGradient,
    /// Part grouping used for matching during joint training.
    pub stage2_parts: PartSource,
    /// Keep the segmentation loss in the joint objective.
    pub seg_loss_in_stage2: bool,
    /// Parts covering less than this fraction of a cloud are dropped.
    pub min_part_fraction: f64,
    /// Extra checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Log T2S RR@1 on the training corpus after each joint epoch.
    pub track_rr1: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            beta: 40.0,
            stage1_epochs: 30,
            stage2_epochs: 30,
            batch_size: 8,
            adam: AdamConfig::default(),
            mining: Mining::SemiHard,
            matcher: Matcher::Emd,
            sinkhorn: SinkhornConfig::default(),
            plan_gradient: PlanGradient::Implicit,
            stage2_parts: PartSource::Predicted,
            seg_loss_in_stage2: true,
            min_part_fraction: 0.01,
            checkpoint_every: 0,
            track_rr1: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be nonnegative, got {}", self.beta));
        }
        if self.stage2_epochs > 0 && self.batch_size < 2 {
            return bad(format!("joint training needs batch_size >= 2, got {}", self.batch_size));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        let a = &self.adam;
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(a.lr) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !positive(a.epsilon) {
            return bad(format!("invalid optimizer settings {a:?}"));
        }
        if !(0.0..1.0).contains(&self.min_part_fraction) {
            return bad(format!("min_part_fraction must lie in [0, 1), got {}", self.min_part_fraction));
        }
        self.sinkhorn.validate()
    }

    pub fn scoring(&self) -> ScoringConfig {
        ScoringConfig {
            matcher: self.matcher,
            sinkhorn: self.sinkhorn,
            min_part_fraction: self.min_part_fraction,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    SegPretrain,
    Joint,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::SegPretrain => "seg_pretrain",
            Stage::Joint => "joint",
        }
    }
}

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub model: Model,
    pub adam: AdamState,
    pub stage: Stage,
    /// Completed epochs over both stages.
    pub epoch: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub stage: Stage,
    pub ce: f64,
    pub matching: f64,
    pub total: f64,
    pub rr1: Option<f64>,
}

pub fn metrics_tsv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch\tstage\tL_CE\tL_EMD\tL_total\tRR@1\n");
    for m in metrics {
        let rr = m.rr1.map_or_else(|| "-".to_string(), |r| format!("{r:.4}"));
        writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{rr}",
            m.epoch,
            m.stage.as_str(),
            m.ce,
            m.matching,
            m.total
        )
        .unwrap();
    }
    out
}

pub struct TrainOutcome {
    pub state: ModelState,
    pub metrics: Vec<EpochMetrics>,
}

pub const FINAL_CHECKPOINT: &str = "final";
pub const METRICS_FILE: &str = "metrics.tsv";

/// Runs both stages. With `out_dir`, writes `stage1.json` at the stage
/// boundary, periodic `epoch-NNNN.json` files, the `final` checkpoint and
/// `metrics.tsv`.
pub fn train(
    corpus: &PairedCorpus,
    model_config: &ShapeEncoderConfig,
    cfg: &TrainConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    corpus.validate()?;
    let needs_labels = cfg.stage1_epochs > 0
        || (cfg.stage2_epochs > 0 && (cfg.seg_loss_in_stage2 || cfg.stage2_parts == PartSource::GroundTruth));
    if needs_labels {
        if let Some(s) = corpus.shapes.iter().find(|s| s.labels.is_none()) {
            return Err(Error::Config(format!("training needs part labels, {} has none", s.shape_id)));
        }
    }
    if cfg.stage2_epochs > 0 && corpus.shapes.len() < 2 {
        return Err(Error::Config("joint training needs at least 2 shapes".into()));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model_config = ShapeEncoderConfig {
        classes: corpus.classes,
        ..model_config.clone()
    };
    let model = Model::new(model_config, corpus.vocab.clone(), &mut rng)?;
    let adam = AdamState::new(cfg.adam, &model.store);
    let mut state = ModelState {
        model,
        adam,
        stage: Stage::SegPretrain,
        epoch: 0,
        train: cfg.clone(),
        seed,
    };
    let mut metrics = Vec::new();
    let save = |state: &ModelState, metrics: &[EpochMetrics], name: Option<String>| -> Result<()> {
        if let Some(dir) = out_dir {
            if let Some(name) = name {
                state.save(&dir.join(name))?;
            }
            let path = dir.join(METRICS_FILE);
            fs::write(&path, metrics_tsv(metrics)).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    };
    let periodic = |epoch: usize| {
        (cfg.checkpoint_every > 0 && epoch.is_multiple_of(cfg.checkpoint_every)).then(|| format!("epoch-{epoch:04}.json"))
    };

    state.model.store.set_trainable_prefix(TextEncoder::PREFIX, false);
    for _ in 0..cfg.stage1_epochs {
        let ce = seg_epoch(&mut state, corpus, &mut rng)?;
        state.epoch += 1;
        metrics.push(EpochMetrics {
            epoch: state.epoch,
            stage: Stage::SegPretrain,
            ce,
            matching: 0.0,
            total: ce,
            rr1: None,
        });
        save(&state, &metrics, periodic(state.epoch))?;
    }
    state.stage = Stage::Joint;
    state.model.store.set_trainable_prefix(TextEncoder::PREFIX, true);
    save(&state, &metrics, Some("stage1.json".into()))?;

    for _ in 0..cfg.stage2_epochs {
        let (ce, matching, total) = joint_epoch(&mut state, corpus, &mut rng)?;
        state.epoch += 1;
        let rr1 = if cfg.track_rr1 {
            let report = eval::evaluate(&state.model, corpus, &[1], &cfg.scoring())?;
            report.get(RetrievalDirection::T2S, 1).map(|r| r.rr)
        } else {
            None
        };
        metrics.push(EpochMetrics {
            epoch: state.epoch,
            stage: Stage::Joint,
            ce,
            matching,
            total,
            rr1,
        });
        save(&state, &metrics, periodic(state.epoch))?;
    }
    save(&state, &metrics, Some(FINAL_CHECKPOINT.into()))?;
    Ok(TrainOutcome { state, metrics })
}

fn batches(mut items: Vec<usize>, size: usize, min: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    items.shuffle(rng);
    let mut out: Vec<Vec<usize>> = items.chunks(size).map(<[usize]>::to_vec).collect();
    // a too-small tail joins the previous batch
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < min) {
        let tail = out.pop().unwrap_or_default();
        if let Some(prev) = out.last_mut() {
            prev.extend(tail);
        }
    }
    out
}

fn labels_of(corpus: &PairedCorpus, shape: usize) -> Result<&[usize]> {
    let s = &corpus.shapes[shape];
    s.labels
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{} has no part labels", s.shape_id)))
}

/// Mean of the per-shape cross-entropies of `shapes` on `tape`.
fn seg_loss(
    tape: &mut Tape,
    shape: &ShapeEncoder,
    state_store: &ParamStore,
    corpus: &PairedCorpus,
    shapes: &[usize],
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &s in shapes {
        let features = shape.backbone_forward(tape, state_store, &corpus.shapes[s])?;
        let seg = shape.segment(tape, state_store, &features)?;
        let ce = tape.softmax_cross_entropy(seg.logits, labels_of(corpus, s)?)?;
        total = Some(match total {
            Some(t) => tape.add(t, ce)?,
            None => ce,
        });
    }
    let total = total.ok_or_else(|| Error::Config("empty batch".into()))?;
    Ok(tape.scale(total, 1.0 / shapes.len() as f64))
}

fn seg_epoch(state: &mut ModelState, corpus: &PairedCorpus, rng: &mut ChaCha8Rng) -> Result<f64> {
    let bs = batches((0..corpus.shapes.len()).collect(), state.train.batch_size, 1, rng);
    let mut sum = 0.0;
    for batch in &bs {
        let mut tape = Tape::new();
        let loss = seg_loss(&mut tape, &state.model.shape, &state.model.store, corpus, batch)?;
        sum += tape.value(loss).item() * batch.len() as f64;
        tape.backward_into(loss, &mut state.model.store)?;
        state.adam.step(&mut state.model.store)?;
    }
    Ok(sum / corpus.shapes.len() as f64)
}

/// Each round pairs every shape with one of its texts; rounds are shuffled
/// and cut into batches, so a batch never holds the same shape twice.
fn joint_batches(corpus: &PairedCorpus, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<(usize, usize)>> {
    let mut per_shape = corpus.shape_to_texts();
    for texts in &mut per_shape {
        texts.shuffle(rng);
    }
    let rounds = per_shape.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for r in 0..rounds {
        let shapes: Vec<usize> = (0..per_shape.len()).filter(|&s| !per_shape[s].is_empty()).collect();
        for b in batches(shapes, size, 2, rng) {
            out.push(b.into_iter().map(|s| (s, per_shape[s][r % per_shape[s].len()])).collect());
        }
    }
    out
}

fn joint_epoch(state: &mut ModelState, corpus: &PairedCorpus, rng: &mut ChaCha8Rng) -> Result<(f64, f64, f64)> {
    let cfg = state.train.clone();
    let bs = joint_batches(corpus, cfg.batch_size, rng);
    let (mut ce_sum, mut m_sum, mut t_sum) = (0.0, 0.0, 0.0);
    for batch in &bs {
        let (ce, m, t) = joint_step(state, corpus, batch, &cfg)?;
        ce_sum += ce;
        m_sum += m;
        t_sum += t;
    }
    let n = bs.len().max(1) as f64;
    Ok((ce_sum / n, m_sum / n, t_sum / n))
}

/// Joint objective of one batch of `(shape, text)` pairs, built on `tape`.
#[derive(Clone, Copy, Debug)]
pub struct JointLoss {
    pub total: Var,
    pub ce: f64,
    pub matching: f64,
}

pub fn joint_loss(
    tape: &mut Tape,
    shape: &ShapeEncoder,
    text: &TextEncoder,
    store: &ParamStore,
    corpus: &PairedCorpus,
    batch: &[(usize, usize)],
    cfg: &TrainConfig,
) -> Result<JointLoss> {
    let mut part_vars = Vec::with_capacity(batch.len());
    let mut ce_total: Option<Var> = None;
    for &(s, _) in batch {
        let features = shape.backbone_forward(tape, store, &corpus.shapes[s])?;
        let seg = shape.segment(tape, store, &features)?;
        let assignment = match cfg.stage2_parts {
            PartSource::Predicted => seg.labels.clone(),
            PartSource::GroundTruth => labels_of(corpus, s)?.to_vec(),
        };
        let parts = part_pool(tape, features.fused, &assignment, cfg.min_part_fraction)?;
        part_vars.push(parts.embeddings);
        if cfg.seg_loss_in_stage2 {
            let ce = tape.softmax_cross_entropy(seg.logits, labels_of(corpus, s)?)?;
            ce_total = Some(match ce_total {
                Some(t) => tape.add(t, ce)?,
                None => ce,
            });
        }
    }
    let mut word_vars = Vec::with_capacity(batch.len());
    for &(_, t) in batch {
        word_vars.push(text.encode_text(tape, store, &corpus.texts[t].tokens)?.embeddings);
    }

    // all B^2 scores by value; only pairs the mined triplets use carry gradient
    let b = batch.len();
    let pairs = {
        let parts: Vec<&Matrix> = part_vars.iter().map(|&v| tape.value(v)).collect();
        let words: Vec<&Matrix> = word_vars.iter().map(|&v| tape.value(v)).collect();
        (0..b * b)
            .into_par_iter()
            .map(|k| {
                cfg.matcher
                    .similarity_with_grad(parts[k / b], words[k % b], &cfg.sinkhorn, cfg.plan_gradient)
            })
            .collect::<Result<Vec<_>>>()?
    };
    let scores = Matrix::from_vec(b, b, pairs.iter().map(|p| p.0).collect())?;
    let text_shape = corpus.text_to_shape();
    let positive = batch
        .iter()
        .map(|&(s, _)| batch.iter().map(|&(_, t)| text_shape[t] == s).collect())
        .collect();
    let terms = matching_terms(&BatchScores::new(scores, positive)?, cfg.margin, cfg.mining);

    let inputs: Vec<Var> = part_vars.iter().chain(&word_vars).copied().collect();
    let mut grads: Vec<Matrix> = inputs
        .iter()
        .map(|&v| {
            let (r, c) = tape.value(v).shape();
            Matrix::zeros(r, c)
        })
        .collect();
    for a in 0..b {
        for t in 0..b {
            let coef = terms.grad.get(a, t);
            if coef == 0.0 {
                continue;
            }
            let (_, gp, gw) = &pairs[a * b + t];
            grads[a].add_assign(&gp.map(|x| coef * x));
            grads[b + t].add_assign(&gw.map(|x| coef * x));
        }
    }
    let matching = tape.scalar_op(&inputs, terms.loss, grads)?;
    let weighted = tape.scale(matching, cfg.beta);
    let (ce, total) = match ce_total {
        Some(ce) => {
            let ce = tape.scale(ce, 1.0 / b as f64);
            (tape.value(ce).item(), tape.add(ce, weighted)?)
        }
        None => (0.0, weighted),
    };
    Ok(JointLoss {
        total,
        ce,
        matching: terms.loss,
    })
}

/// One optimizer step; returns `(L_CE, L_EMD, L_total)`.
fn joint_step(
    state: &mut ModelState,
    corpus: &PairedCorpus,
    batch: &[(usize, usize)],
    cfg: &TrainConfig,
) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new();
    let m = &state.model;
    let loss = joint_loss(&mut tape, &m.shape, &m.text, &m.store, corpus, batch, cfg)?;
    let total = tape.value(loss.total).item();
    if !total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss at epoch {}", state.epoch + 1)));
    }
    tape.backward_into(loss.total, &mut state.model.store)?;
    state.adam.step(&mut state.model.store)?;
    Ok((loss.ce, loss.matching, total))
}

const CHECKPOINT_FORMAT: &str = "otmatch-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
    trainable: bool,
    value: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    seed: u64,
    stage: Stage,
    epoch: usize,
    model: ShapeEncoderConfig,
    train: TrainConfig,
    vocab: Vocabulary,
    adam_t: u64,
    tensors: Vec<TensorRecord>,
}

impl ModelState {
    pub fn to_json(&self) -> Result<String> {
        let tensors = self
            .model
            .store
            .iter()
            .map(|(id, p)| TensorRecord {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
                trainable: p.trainable,
                value: p.value.data().to_vec(),
                adam_m: self.adam.m[id.index()].data().to_vec(),
                adam_v: self.adam.v[id.index()].data().to_vec(),
            })
            .collect();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed: self.seed,
            stage: self.stage,
            epoch: self.epoch,
            model: self.model.config.clone(),
            train: self.train.clone(),
            vocab: self.model.vocab.clone(),
            adam_t: self.adam.t,
            tensors,
        };
        serde_json::to_string(&file).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                file.format, file.version
            )));
        }
        file.train.validate()?;
        // parameter init values are overwritten below; the seed only fixes shapes
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::new(file.model, file.vocab, &mut rng)?;
        if file.tensors.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                file.tensors.len(),
                model.store.len()
            )));
        }
        let mut adam = AdamState::new(file.train.adam, &model.store);
        adam.t = file.adam_t;
        for rec in file.tensors {
            let id = model
                .store
                .id(&rec.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {}", rec.name)))?;
            let p = model.store.get_mut(id);
            let expected = p.value.shape();
            if (rec.rows, rec.cols) != expected {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {}: model expects {}x{}, checkpoint has {}x{}",
                    rec.name, expected.0, expected.1, rec.rows, rec.cols
                )));
            }
            let load = |data: Vec<f64>, what: &str| {
                Matrix::from_vec(rec.rows, rec.cols, data)
                    .map_err(|_| Error::Checkpoint(format!("{} of {} has the wrong length", what, rec.name)))
            };
            p.value = load(rec.value, "value")?;
            p.trainable = rec.trainable;
            adam.m[id.index()] = load(rec.adam_m, "first moment")?;
            adam.v[id.index()] = load(rec.adam_v, "second moment")?;
        }
        Ok(Self {
            model,
            adam,
            stage: file.stage,
            epoch: file.epoch,
            train: file.train,
            seed: file.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Re-expresses a corpus in this model's vocabulary and checks its class count.
    pub fn adapt_corpus(&self, corpus: &PairedCorpus) -> Result<PairedCorpus> {
        if corpus.classes != self.model.config.classes {
            return Err(Error::Checkpoint(format!(
                "corpus has {} part classes, model was trained with {}",
                corpus.classes, self.model.config.classes
            )));
        }
        corpus.retokenized(&self.model.vocab)
    }
}

/// Checkpoint path written by [`train`] inside `out_dir`.
pub fn final_checkpoint(out_dir: &Path) -> PathBuf {
    out_dir.join(FINAL_CHECKPOINT)
}
