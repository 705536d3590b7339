//! Point-cloud encoder: shared per-point MLP with global context, multi-tap
//! feature fusion with a color branch, a segmentation head, and pooling of
//! point features into part embeddings.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ColoredPointCloud;
use crate::diffcore::{Linear, Matrix, ParamStore, PoolMode, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeEncoderConfig {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub d_mid: usize,
    pub d_color: usize,
    pub embed_dim: usize,
    pub classes: usize,
    pub use_color: bool,
}

impl Default for ShapeEncoderConfig {
    fn default() -> Self {
        Self {
            d1: 64,
            d2: 128,
            d3: 128,
            d_mid: 128,
            d_color: 32,
            embed_dim: 64,
            classes: 4,
            use_color: true,
        }
    }
}

/// Which per-point assignment groups points into parts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartSource {
    Predicted,
    GroundTruth,
}

/// Fused per-point features plus the three taps they were built from.
#[derive(Clone, Copy, Debug)]
pub struct PointFeatures {
    pub fused: Var,
    pub taps: [Var; 3],
}

#[derive(Clone, Debug)]
pub struct SegmentationOutput {
    pub logits: Var,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct PartEmbeddingSet {
    /// `n x d` part embeddings, one row per retained part.
    pub embeddings: Var,
    pub classes: Vec<usize>,
    pub sizes: Vec<usize>,
}

/// Parameter handles of the shape encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeEncoder {
    pub config: ShapeEncoderConfig,
    local: [Linear; 3],
    context: [Linear; 3],
    taps: [Linear; 3],
    color: [Linear; 2],
    fuse: Linear,
    seg_head: Linear,
}

/// Row index of the largest entry; ties go to the lowest index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl ShapeEncoder {
    pub const PREFIX: &'static str = "shape.";

    pub fn new<R: Rng>(config: ShapeEncoderConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let c = &config;
        if c.classes < 1 || c.embed_dim == 0 {
            return Err(Error::Config("shape encoder needs classes >= 1 and embed_dim > 0".into()));
        }
        let mut lin = |name: &str, i: usize, o: usize| Linear::new(store, &format!("shape.{name}"), i, o, rng);
        let local = [lin("local1", 3, c.d1)?, lin("local2", c.d1, c.d2)?, lin("local3", c.d2, c.d3)?];
        let context = [
            lin("ctx1", 2 * c.d3, c.d1)?,
            lin("ctx2", c.d1, c.d2)?,
            lin("ctx3", c.d2, c.d3)?,
        ];
        let taps = [lin("tap1", c.d1, c.d_mid)?, lin("tap2", c.d2, c.d_mid)?, lin("tap3", c.d3, c.d_mid)?];
        let color = [lin("color1", 3, c.d_color)?, lin("color2", c.d_color, c.d_color)?];
        let fuse = lin("fuse", c.d_mid + c.d_color, c.embed_dim)?;
        let seg_head = lin("seg", c.embed_dim, c.classes)?;
        Ok(Self {
            config,
            local,
            context,
            taps,
            color,
            fuse,
            seg_head,
        })
    }

    /// Per-point features for one cloud.
    pub fn backbone_forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        cloud: &ColoredPointCloud,
    ) -> Result<PointFeatures> {
        let l = cloud.len();
        let x = tape.constant(cloud.coords_matrix());
        let mut h = x;
        for layer in &self.local {
            h = layer.forward_tanh(tape, store, h)?;
        }
        let global = tape.pool_rows(h, PoolMode::Max, None)?;
        let global = tape.broadcast_rows(global, l)?;
        let mut f = tape.concat_cols(h, global)?;
        let mut taps = [f; 3];
        for (tap, layer) in taps.iter_mut().zip(&self.context) {
            f = layer.forward_tanh(tape, store, f)?;
            *tap = f;
        }

        let mut mixed = self.taps[0].forward(tape, store, taps[0])?;
        for (layer, &tap) in self.taps.iter().zip(&taps).skip(1) {
            let t = layer.forward(tape, store, tap)?;
            mixed = tape.add(mixed, t)?;
        }

        let colors = if self.config.use_color {
            cloud.colors_matrix()
        } else {
            Matrix::zeros(l, 3)
        };
        let mut col = tape.constant(colors);
        for layer in &self.color {
            col = layer.forward_tanh(tape, store, col)?;
        }
        let cat = tape.concat_cols(mixed, col)?;
        let fused = self.fuse.forward(tape, store, cat)?;
        Ok(PointFeatures { fused, taps })
    }

    pub fn segment(&self, tape: &mut Tape, store: &ParamStore, features: &PointFeatures) -> Result<SegmentationOutput> {
        let logits = self.seg_head.forward(tape, store, features.fused)?;
        let lv = tape.value(logits);
        let labels = (0..lv.rows()).map(|i| argmax_row(lv.row(i))).collect();
        Ok(SegmentationOutput { logits, labels })
    }

    /// Backbone, segmentation and part pooling for one cloud.
    pub fn encode_shape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        cloud: &ColoredPointCloud,
        part_source: PartSource,
        min_fraction: f64,
    ) -> Result<(PartEmbeddingSet, SegmentationOutput)> {
        if part_source == PartSource::GroundTruth && cloud.labels.is_none() {
            return Err(Error::Config(format!(
                "ground-truth parts requested but {} is unlabeled",
                cloud.shape_id
            )));
        }
        let features = self.backbone_forward(tape, store, cloud)?;
        let seg = self.segment(tape, store, &features)?;
        let assignment = match part_source {
            PartSource::Predicted => &seg.labels,
            PartSource::GroundTruth => cloud.labels.as_ref().expect("checked above"),
        };
        let parts = part_pool(tape, features.fused, assignment, min_fraction)?;
        Ok((parts, seg))
    }
}

/// Groups points by label, drops groups smaller than `min_fraction` of the
/// cloud, and averages features within each kept group (ordered by label).
/// When every group is dropped the whole cloud becomes a single part.
pub fn part_pool(tape: &mut Tape, features: Var, assignment: &[usize], min_fraction: f64) -> Result<PartEmbeddingSet> {
    let l = tape.value(features).rows();
    if assignment.len() != l {
        return Err(Error::Dimension {
            op: "part_pool",
            left: (l, 1),
            right: (assignment.len(), 1),
        });
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, &a) in assignment.iter().enumerate() {
        groups.entry(a).or_default().push(k);
    }
    let threshold = min_fraction * l as f64;
    let kept: Vec<(usize, Vec<usize>)> = groups
        .into_iter()
        .filter(|(_, g)| g.len() as f64 >= threshold)
        .collect();
    let (classes, rows): (Vec<usize>, Vec<Vec<usize>>) = if kept.is_empty() {
        // whole-shape fallback; its class is the most frequent label
        let mut counts = BTreeMap::new();
        for &a in assignment {
            *counts.entry(a).or_insert(0usize) += 1;
        }
        let top = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map_or(0, |(&c, _)| c);
        (vec![top], vec![(0..l).collect()])
    } else {
        kept.into_iter().unzip()
    };
    let sizes = rows.iter().map(Vec::len).collect();
    let embeddings = tape.pool_rows(features, PoolMode::Mean, Some(&rows))?;
    Ok(PartEmbeddingSet {
        embeddings,
        classes,
        sizes,
    })
}
