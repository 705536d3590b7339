//! Deterministic synthetic corpora of colored multi-part shapes.
//!
//! Each shape is a handful of axis-aligned point blobs. A blob's part class
//! fixes where it sits, and its color comes from a named palette, so both the
//! segmentation target and the descriptions are fully determined by the
//! generator.

use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ColoredPointCloud, PairedCorpus, TextRecord};
use crate::error::{Error, Result};

pub const PALETTE: [(&str, [f64; 3]); 8] = [
    ("red", [0.85, 0.1, 0.1]),
    ("green", [0.15, 0.7, 0.2]),
    ("blue", [0.1, 0.2, 0.85]),
    ("yellow", [0.9, 0.85, 0.1]),
    ("black", [0.05, 0.05, 0.05]),
    ("white", [0.95, 0.95, 0.95]),
    ("brown", [0.5, 0.3, 0.1]),
    ("gray", [0.5, 0.5, 0.5]),
];

pub const COLOR_JITTER: f64 = 0.05;

const CLASS_NAMES: [&str; 12] = [
    "seat", "back", "leg", "top", "arm", "base", "shelf", "drawer", "door", "frame", "panel", "wheel",
];

pub fn class_name(class: usize) -> String {
    CLASS_NAMES
        .get(class)
        .map_or_else(|| format!("part{class}"), |s| s.to_string())
}

/// Nominal blob center for a part class.
fn class_center(class: usize, classes: usize) -> [f64; 3] {
    let radius = 0.8 * (classes as f64 / 4.0).max(1.0);
    let angle = TAU * class as f64 / classes as f64;
    [
        radius * angle.cos(),
        0.3 * ((class % 3) as f64 - 1.0),
        radius * angle.sin(),
    ]
}

const HALF_EXTENT: [f64; 3] = [0.22, 0.12, 0.22];

struct Part {
    class: usize,
    color: usize,
}

fn describe_list(parts: &[Part]) -> String {
    let phrases: Vec<String> = parts
        .iter()
        .map(|p| format!("{} {}", PALETTE[p.color].0, class_name(p.class)))
        .collect();
    let (last, init) = phrases.split_last().expect("at least two parts");
    format!("a {} and {last}", init.join(", "))
}

fn describe_statements(parts: &[Part]) -> String {
    parts
        .iter()
        .rev()
        .map(|p| format!("the {} is {}.", class_name(p.class), PALETTE[p.color].0))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Generates `n_shapes` shapes with two descriptions each. The same inputs
/// always produce the same corpus.
pub fn gen_synthetic(
    seed: u64,
    n_shapes: usize,
    classes: usize,
    points_per_shape: usize,
) -> Result<PairedCorpus> {
    if n_shapes < 2 {
        return Err(Error::Config(format!("need at least 2 shapes, got {n_shapes}")));
    }
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    let max_parts = classes.min(4);
    if points_per_shape < max_parts {
        return Err(Error::Config(format!(
            "need at least {max_parts} points per shape, got {points_per_shape}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shapes = Vec::with_capacity(n_shapes);
    let mut texts = Vec::with_capacity(2 * n_shapes);
    for s in 0..n_shapes {
        let shape_id = format!("s{s:03}");
        let k = rng.random_range(2..=max_parts);
        let mut class_ids = sample(&mut rng, classes, k).into_vec();
        class_ids.sort_unstable();
        let color_ids = sample(&mut rng, PALETTE.len(), k).into_vec();
        let parts: Vec<Part> = class_ids
            .iter()
            .zip(&color_ids)
            .map(|(&class, &color)| Part { class, color })
            .collect();

        let mut points = Vec::with_capacity(points_per_shape);
        let mut colors = Vec::with_capacity(points_per_shape);
        let mut labels = Vec::with_capacity(points_per_shape);
        for (pi, part) in parts.iter().enumerate() {
            let count = points_per_shape / k + usize::from(pi < points_per_shape % k);
            let nominal = class_center(part.class, classes);
            let mut center = [0.0; 3];
            let mut half = [0.0; 3];
            for a in 0..3 {
                center[a] = nominal[a] + rng.random_range(-0.05..0.05);
                half[a] = HALF_EXTENT[a] * rng.random_range(0.8..1.2);
            }
            let base = PALETTE[part.color].1;
            for _ in 0..count {
                let mut p = [0.0; 3];
                let mut c = [0.0; 3];
                for a in 0..3 {
                    p[a] = center[a] + rng.random_range(-half[a]..half[a]);
                    c[a] = (base[a] + rng.random_range(-COLOR_JITTER..COLOR_JITTER)).clamp(0.0, 1.0);
                }
                points.push(p);
                colors.push(c);
                labels.push(part.class);
            }
        }
        shapes.push(ColoredPointCloud::new(
            shape_id.clone(),
            points,
            colors,
            Some(labels),
            classes,
        )?);
        for raw in [describe_list(&parts), describe_statements(&parts)] {
            texts.push(TextRecord {
                text_id: format!("t{:04}", texts.len()),
                shape_id: shape_id.clone(),
                raw,
            });
        }
    }
    PairedCorpus::new(shapes, texts, classes, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_cloud;

    #[test]
    fn two_shapes_four_texts() {
        let c = gen_synthetic(7, 2, 4, 64).unwrap();
        assert_eq!(c.shapes.len(), 2);
        assert_eq!(c.texts.len(), 4);
        assert_eq!(c.pairs.len(), 4);
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = gen_synthetic(7, 6, 4, 100).unwrap();
        let b = gen_synthetic(7, 6, 4, 100).unwrap();
        assert_eq!(a, b);
        let sa: Vec<String> = a.shapes.iter().map(write_cloud).collect();
        let sb: Vec<String> = b.shapes.iter().map(write_cloud).collect();
        assert_eq!(sa, sb);
        assert_ne!(a, gen_synthetic(8, 6, 4, 100).unwrap());
    }

    #[test]
    fn colors_follow_palette_within_jitter() {
        let c = gen_synthetic(11, 10, 4, 200).unwrap();
        for (s, t_idx) in c.shapes.iter().zip(c.shape_to_texts()) {
            let text = &c.texts[t_idx[0]].raw;
            let labels = s.labels.as_ref().unwrap();
            for (col, &label) in s.colors.iter().zip(labels) {
                // the color named next to this part's class word in the description
                let name = class_name(label);
                let color_word = text
                    .split([',', ' '])
                    .collect::<Vec<_>>()
                    .windows(2)
                    .find(|w| w[1] == name)
                    .map(|w| w[0])
                    .unwrap();
                let base = PALETTE.iter().find(|p| p.0 == color_word).unwrap().1;
                for a in 0..3 {
                    assert!((col[a] - base[a]).abs() <= COLOR_JITTER + 1e-12);
                }
            }
        }
    }

    #[test]
    fn descriptions_mention_every_part() {
        let c = gen_synthetic(3, 5, 4, 50).unwrap();
        for (s, texts) in c.shapes.iter().zip(c.shape_to_texts()) {
            let mut classes: Vec<usize> = s.labels.clone().unwrap();
            classes.dedup();
            for t in texts {
                for &cl in &classes {
                    assert!(c.texts[t].raw.contains(&class_name(cl)));
                }
            }
        }
    }

    #[test]
    fn rejects_single_shape() {
        assert!(matches!(gen_synthetic(1, 1, 4, 64), Err(Error::Config(_))));
        assert!(matches!(gen_synthetic(1, 4, 1, 64), Err(Error::Config(_))));
    }
}
