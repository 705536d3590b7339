use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{build_vocab, tokenize, Vocabulary, DEFAULT_MAX_LEN};
use crate::diffcore::Matrix;
use crate::error::{Error, Result};

/// Point cloud with per-point colors and optional part labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ColoredPointCloud {
    pub shape_id: String,
    pub points: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub labels: Option<Vec<usize>>,
    pub classes: usize,
}

impl ColoredPointCloud {
    pub fn new(
        shape_id: impl Into<String>,
        points: Vec<[f64; 3]>,
        colors: Vec<[f64; 3]>,
        labels: Option<Vec<usize>>,
        classes: usize,
    ) -> Result<Self> {
        let cloud = Self {
            shape_id: shape_id.into(),
            points,
            colors,
            labels,
            classes,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.points.len();
        if l == 0 {
            return Err(Error::Config(format!("shape {} has no points", self.shape_id)));
        }
        if self.colors.len() != l {
            return Err(Error::Dimension {
                op: "point colors",
                left: (l, 3),
                right: (self.colors.len(), 3),
            });
        }
        if let Some(c) = self.colors.iter().flatten().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::Config(format!("color {c} outside [0, 1] in {}", self.shape_id)));
        }
        if self.points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite coordinate in {}", self.shape_id)));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != l {
                return Err(Error::Dimension {
                    op: "point labels",
                    left: (l, 1),
                    right: (labels.len(), 1),
                });
            }
            if let Some(&bad) = labels.iter().find(|&&x| x >= self.classes) {
                return Err(Error::Label {
                    label: bad,
                    classes: self.classes,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn coords_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.points)
    }

    pub fn colors_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.colors)
    }
}

/// Tokenized description.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub text_id: String,
    pub tokens: Vec<usize>,
    pub raw: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Full,
    Train,
    Test,
}

/// Shapes, descriptions and their ground-truth links.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedCorpus {
    pub shapes: Vec<ColoredPointCloud>,
    pub texts: Vec<TokenSequence>,
    /// `(shape_id, text_id)`; every text belongs to exactly one shape.
    pub pairs: Vec<(String, String)>,
    pub split: Split,
    pub classes: usize,
    pub split_seed: u64,
    pub vocab: Vocabulary,
}

/// Raw description record before tokenization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextRecord {
    pub text_id: String,
    pub shape_id: String,
    pub raw: String,
}

/// On-disk manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub clouds: Vec<PathBuf>,
    pub texts: PathBuf,
    pub classes: usize,
    pub split_seed: u64,
}

impl PairedCorpus {
    /// Builds a full corpus; the vocabulary is derived from all texts.
    pub fn new(
        shapes: Vec<ColoredPointCloud>,
        texts: Vec<TextRecord>,
        classes: usize,
        split_seed: u64,
    ) -> Result<Self> {
        let raws: Vec<&str> = texts.iter().map(|t| t.raw.as_str()).collect();
        let vocab = build_vocab(&raws, 1);
        let mut seqs = Vec::with_capacity(texts.len());
        let mut pairs = Vec::with_capacity(texts.len());
        for t in &texts {
            seqs.push(tokenize(&t.text_id, &t.raw, &vocab, DEFAULT_MAX_LEN)?);
            pairs.push((t.shape_id.clone(), t.text_id.clone()));
        }
        let corpus = Self {
            shapes,
            texts: seqs,
            pairs,
            split: Split::Full,
            classes,
            split_seed,
            vocab,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        let mut shape_ids = HashSet::new();
        for s in &self.shapes {
            s.validate()?;
            if s.classes != self.classes {
                return Err(Error::Config(format!(
                    "shape {} declares {} classes, corpus has {}",
                    s.shape_id, s.classes, self.classes
                )));
            }
            if !shape_ids.insert(s.shape_id.as_str()) {
                return Err(Error::Config(format!("duplicate shape id {}", s.shape_id)));
            }
        }
        let mut text_ids = HashSet::new();
        for t in &self.texts {
            if !text_ids.insert(t.text_id.as_str()) {
                return Err(Error::Config(format!("duplicate text id {}", t.text_id)));
            }
            if let Some(&bad) = t.tokens.iter().find(|&&id| id >= self.vocab.len()) {
                return Err(Error::Vocab {
                    id: bad,
                    size: self.vocab.len(),
                });
            }
        }
        let mut covered = HashSet::new();
        for (s, t) in &self.pairs {
            if !shape_ids.contains(s.as_str()) || !text_ids.contains(t.as_str()) {
                return Err(Error::Config(format!("dangling pair ({s}, {t})")));
            }
            covered.insert(s.as_str());
        }
        if let Some(s) = self.shapes.iter().find(|s| !covered.contains(s.shape_id.as_str())) {
            return Err(Error::Config(format!("shape {} has no paired text", s.shape_id)));
        }
        Ok(())
    }

    pub fn shape_index(&self, shape_id: &str) -> Option<usize> {
        self.shapes.iter().position(|s| s.shape_id == shape_id)
    }

    pub fn text_index(&self, text_id: &str) -> Option<usize> {
        self.texts.iter().position(|t| t.text_id == text_id)
    }

    /// For each text, the index of its paired shape.
    pub fn text_to_shape(&self) -> Vec<usize> {
        let shape_idx: HashMap<&str, usize> = self
            .shapes
            .iter()
            .enumerate()
            .map(|(i, s)| (s.shape_id.as_str(), i))
            .collect();
        let owner: HashMap<&str, usize> = self
            .pairs
            .iter()
            .map(|(s, t)| (t.as_str(), shape_idx[s.as_str()]))
            .collect();
        self.texts.iter().map(|t| owner[t.text_id.as_str()]).collect()
    }

    /// For each shape, the indices of its paired texts in corpus order.
    pub fn shape_to_texts(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.shapes.len()];
        for (t, s) in self.text_to_shape().into_iter().enumerate() {
            out[s].push(t);
        }
        out
    }

    /// Re-tokenizes every text with `vocab`.
    pub fn retokenized(&self, vocab: &Vocabulary) -> Result<Self> {
        if *vocab == self.vocab {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        for t in &mut out.texts {
            *t = tokenize(&t.text_id, &t.raw, vocab, DEFAULT_MAX_LEN)?;
        }
        out.vocab = vocab.clone();
        Ok(out)
    }

    fn subset(&self, keep: &HashSet<usize>, split: Split) -> Self {
        let shapes: Vec<_> = (0..self.shapes.len())
            .filter(|i| keep.contains(i))
            .map(|i| self.shapes[i].clone())
            .collect();
        let ids: HashSet<&str> = shapes.iter().map(|s| s.shape_id.as_str()).collect();
        let pairs: Vec<_> = self
            .pairs
            .iter()
            .filter(|(s, _)| ids.contains(s.as_str()))
            .cloned()
            .collect();
        let text_ids: HashSet<&str> = pairs.iter().map(|(_, t)| t.as_str()).collect();
        let texts = self
            .texts
            .iter()
            .filter(|t| text_ids.contains(t.text_id.as_str()))
            .cloned()
            .collect();
        Self {
            shapes,
            texts,
            pairs,
            split,
            classes: self.classes,
            split_seed: self.split_seed,
            vocab: self.vocab.clone(),
        }
    }
}

/// Disjoint partition of shapes (texts follow their shape).
pub fn split_dataset(
    corpus: &PairedCorpus,
    test_fraction: f64,
    seed: u64,
) -> Result<(PairedCorpus, PairedCorpus)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let n = corpus.shapes.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::Split(format!(
            "fraction {test_fraction} of {n} shapes leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test: HashSet<usize> = order[..n_test].iter().copied().collect();
    let train: HashSet<usize> = order[n_test..].iter().copied().collect();
    Ok((corpus.subset(&train, Split::Train), corpus.subset(&test, Split::Test)))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_num<T: std::str::FromStr>(tok: &str, path: &Path, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::load(path, line, format!("invalid {what} {tok:?}")))
}

/// Parses one point-cloud file.
pub fn read_cloud(path: &Path, classes: usize) -> Result<ColoredPointCloud> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::load(path, 1, "missing header"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 4 || head[0] != "pc" {
        return Err(Error::load(path, 1, "expected header `pc <shape_id> <l> <C>`"));
    }
    let shape_id = head[1].to_string();
    let l: usize = parse_num(head[2], path, 1, "point count")?;
    let c: usize = parse_num(head[3], path, 1, "class count")?;
    if c != classes {
        return Err(Error::load(
            path,
            1,
            format!("header declares {c} classes, manifest has {classes}"),
        ));
    }
    if l == 0 {
        return Err(Error::load(path, 1, "point count must be positive"));
    }
    let mut points = Vec::with_capacity(l);
    let mut colors = Vec::with_capacity(l);
    let mut labels = Vec::with_capacity(l);
    let mut any_label = false;
    let mut any_missing = false;
    for (lineno, line) in lines.by_ref().take(l) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 7 {
            return Err(Error::load(path, lineno, format!("expected 7 fields, found {}", toks.len())));
        }
        let mut v = [0.0f64; 6];
        for (k, t) in toks[..6].iter().enumerate() {
            v[k] = parse_num(t, path, lineno, "number")?;
            if !v[k].is_finite() {
                return Err(Error::load(path, lineno, format!("non-finite value {t}")));
            }
        }
        if let Some(c) = v[3..].iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::load(path, lineno, format!("color {c} outside [0, 1]")));
        }
        let label: i64 = parse_num(toks[6], path, lineno, "label")?;
        if label == -1 {
            any_missing = true;
        } else if label < 0 || label as usize >= classes {
            return Err(Error::load(
                path,
                lineno,
                format!("label {label} out of range for {classes} classes"),
            ));
        } else {
            any_label = true;
            labels.push(label as usize);
        }
        points.push([v[0], v[1], v[2]]);
        colors.push([v[3], v[4], v[5]]);
    }
    if points.len() != l {
        return Err(Error::load(
            path,
            points.len() + 2,
            format!("expected {l} points, found {}", points.len()),
        ));
    }
    if let Some((lineno, extra)) = lines.find(|(_, s)| !s.trim().is_empty()) {
        return Err(Error::load(path, lineno, format!("unexpected trailing line {extra:?}")));
    }
    if any_label && any_missing {
        return Err(Error::load(path, 1, "labels must be present for all points or none"));
    }
    ColoredPointCloud::new(shape_id, points, colors, any_label.then_some(labels), classes)
}

pub fn write_cloud(cloud: &ColoredPointCloud) -> String {
    let mut out = format!("pc {} {} {}\n", cloud.shape_id, cloud.len(), cloud.classes);
    for (k, (p, c)) in cloud.points.iter().zip(&cloud.colors).enumerate() {
        let label = cloud.labels.as_ref().map_or(-1, |l| l[k] as i64);
        let _ = writeln!(out, "{} {} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2], label);
    }
    out
}

pub fn read_texts(path: &Path) -> Result<Vec<TextRecord>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(t), Some(s), Some(raw)) if !t.is_empty() && !s.is_empty() => out.push(TextRecord {
                text_id: t.to_string(),
                shape_id: s.to_string(),
                raw: raw.to_string(),
            }),
            _ => {
                return Err(Error::load(
                    path,
                    i + 1,
                    "expected `<text_id>\\t<shape_id>\\t<description>`",
                ))
            }
        }
    }
    Ok(out)
}

/// Loads and validates a corpus from its manifest. Relative paths resolve
/// against the manifest's directory.
pub fn load_corpus(manifest_path: &Path) -> Result<PairedCorpus> {
    let manifest: Manifest = serde_json::from_str(&read(manifest_path)?)
        .map_err(|e| Error::load(manifest_path, e.line(), e.to_string()))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let shapes = manifest
        .clouds
        .iter()
        .map(|p| read_cloud(&base.join(p), manifest.classes))
        .collect::<Result<Vec<_>>>()?;
    let texts_path = base.join(&manifest.texts);
    let texts = read_texts(&texts_path)?;

    let ids: HashSet<&str> = shapes.iter().map(|s| s.shape_id.as_str()).collect();
    let mut seen = HashSet::new();
    let mut covered = HashSet::new();
    for (i, t) in texts.iter().enumerate() {
        if !ids.contains(t.shape_id.as_str()) {
            return Err(Error::load(
                &texts_path,
                i + 1,
                format!("text {} references unknown shape {}", t.text_id, t.shape_id),
            ));
        }
        if !seen.insert(t.text_id.as_str()) {
            return Err(Error::load(&texts_path, i + 1, format!("duplicate text id {}", t.text_id)));
        }
        if tokenize("", &t.raw, &Vocabulary::default(), DEFAULT_MAX_LEN).is_err() {
            return Err(Error::load(&texts_path, i + 1, "description is empty after cleaning"));
        }
        covered.insert(t.shape_id.as_str());
    }
    if let Some(s) = shapes.iter().find(|s| !covered.contains(s.shape_id.as_str())) {
        return Err(Error::load(
            &texts_path,
            0,
            format!("shape {} has no description", s.shape_id),
        ));
    }
    PairedCorpus::new(shapes, texts, manifest.classes, manifest.split_seed)
}

/// Writes `dir/manifest.json`, `dir/texts.tsv` and one `dir/clouds/<id>.pc`
/// per shape. Returns the manifest path.
pub fn write_corpus(corpus: &PairedCorpus, dir: &Path) -> Result<PathBuf> {
    let clouds_dir = dir.join("clouds");
    fs::create_dir_all(&clouds_dir).map_err(|e| Error::io(&clouds_dir, e))?;
    let mut clouds = Vec::with_capacity(corpus.shapes.len());
    for s in &corpus.shapes {
        let rel = PathBuf::from("clouds").join(format!("{}.pc", s.shape_id));
        let path = dir.join(&rel);
        fs::write(&path, write_cloud(s)).map_err(|e| Error::io(&path, e))?;
        clouds.push(rel);
    }
    let owner: HashMap<&str, &str> = corpus
        .pairs
        .iter()
        .map(|(s, t)| (t.as_str(), s.as_str()))
        .collect();
    let mut tsv = String::new();
    for t in &corpus.texts {
        let _ = writeln!(tsv, "{}\t{}\t{}", t.text_id, owner[t.text_id.as_str()], t.raw);
    }
    let texts_path = dir.join("texts.tsv");
    fs::write(&texts_path, tsv).map_err(|e| Error::io(&texts_path, e))?;
    let manifest = Manifest {
        clouds,
        texts: PathBuf::from("texts.tsv"),
        classes: corpus.classes,
        split_seed: corpus.split_seed,
    };
    let path = dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
