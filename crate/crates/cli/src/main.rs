use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use otmatch_core::data::{gen_synthetic, load_corpus, split_dataset, tokenize, write_corpus, DEFAULT_MAX_LEN};
use otmatch_core::eval::{evaluate_scores, rank_row, score_corpus, RetrievalDirection};
use otmatch_core::ot_matcher::cosine_cost;
use otmatch_core::shape_encoder::PartSource;
use otmatch_core::trainer::{self, Mining, ModelState};
use otmatch_core::{Error, Matcher, Matrix, PairedCorpus, Preset, RunConfig};

const DATA_ENV: &str = "OTMATCH_DATA_DIR";

#[derive(Parser)]
#[command(name = "otmatch", version, about = "Part-to-word optimal transport retrieval between colored point clouds and text")]
struct Cli {
    /// JSON file overriding preset values (unknown keys are rejected).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for scoring (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PresetArg {
    /// Base settings before --config and flags are applied.
    #[arg(long, default_value = "desk", value_parser = ["desk", "paper"])]
    preset: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatcherArg {
    Emd,
    Chamfer,
}

#[derive(Clone, Copy, ValueEnum)]
enum MiningArg {
    SemiHard,
    Hardest,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic paired corpus.
    Gen {
        /// Output directory [default: $OTMATCH_DATA_DIR].
        #[arg(long, env = DATA_ENV)]
        out: PathBuf,
        #[arg(long)]
        shapes: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        points: Option<usize>,
        #[command(flatten)]
        preset: PresetArg,
    },
    /// Two-stage training; writes checkpoints, metrics.tsv and config.json.
    Train {
        /// Corpus directory or manifest [default: $OTMATCH_DATA_DIR].
        #[arg(long, env = DATA_ENV)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        preset: PresetArg,
        #[arg(long, value_enum)]
        matcher: Option<MatcherArg>,
        #[arg(long, value_enum)]
        mining: Option<MiningArg>,
        /// Zero the color input of the shape encoder.
        #[arg(long)]
        no_color: bool,
        #[arg(long)]
        stage1_epochs: Option<usize>,
        #[arg(long)]
        stage2_epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Log T2S RR@1 on the training corpus after each joint epoch.
        #[arg(long)]
        track_rr1: bool,
    },
    /// Retrieval metrics in both directions.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Corpus directory or manifest [default: $OTMATCH_DATA_DIR].
        #[arg(long, env = DATA_ENV)]
        data: PathBuf,
        /// Report file (tab-separated).
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated cutoffs [default: from config, 1,5].
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        /// Also write per-query rankings as JSON.
        #[arg(long)]
        dump_queries: Option<PathBuf>,
        #[command(flatten)]
        preset: PresetArg,
    },
    /// Rank the corpus against one query text or shape.
    Retrieve {
        #[arg(long)]
        ckpt: PathBuf,
        /// Corpus directory or manifest [default: $OTMATCH_DATA_DIR].
        #[arg(long, env = DATA_ENV)]
        data: PathBuf,
        #[arg(long, conflicts_with = "shape", required_unless_present = "shape")]
        text: Option<String>,
        #[arg(long)]
        shape: Option<String>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Print the part x word cosine matrix (1 - c_ij) of each result.
        #[arg(long)]
        dump_costs: bool,
    },
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 1,
            Error::Numeric(_) | Error::Dimension { .. } | Error::Size { .. } => 3,
            _ => 2,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

fn data_error(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    let resolve = |preset: &PresetArg| -> Result<RunConfig, Failure> {
        let p = Preset::parse(&preset.preset)?;
        let mut cfg = match &cli.config {
            Some(path) => RunConfig::from_file(path, p)?,
            None => RunConfig::preset(p),
        };
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    };
    match &cli.command {
        Command::Gen {
            out,
            shapes,
            classes,
            points,
            preset,
        } => {
            let mut cfg = resolve(preset)?;
            let d = &mut cfg.data;
            d.shapes = shapes.unwrap_or(d.shapes);
            d.classes = classes.unwrap_or(d.classes);
            d.points_per_shape = points.unwrap_or(d.points_per_shape);
            let corpus = gen_synthetic(cfg.seed, d.shapes, d.classes, d.points_per_shape)?;
            write_corpus(&corpus, out)?;
            println!(
                "wrote {} shapes, {} texts, {} classes to {} (seed {})",
                corpus.shapes.len(),
                corpus.texts.len(),
                corpus.classes,
                out.display(),
                cfg.seed
            );
        }
        Command::Train {
            data,
            out,
            preset,
            matcher,
            mining,
            no_color,
            stage1_epochs,
            stage2_epochs,
            batch_size,
            track_rr1,
        } => {
            let mut cfg = resolve(preset)?;
            let t = &mut cfg.train;
            if let Some(m) = matcher {
                t.matcher = match m {
                    MatcherArg::Emd => Matcher::Emd,
                    MatcherArg::Chamfer => Matcher::Chamfer,
                };
            }
            if let Some(m) = mining {
                t.mining = match m {
                    MiningArg::SemiHard => Mining::SemiHard,
                    MiningArg::Hardest => Mining::Hardest,
                };
            }
            t.stage1_epochs = stage1_epochs.unwrap_or(t.stage1_epochs);
            t.stage2_epochs = stage2_epochs.unwrap_or(t.stage2_epochs);
            t.batch_size = batch_size.unwrap_or(t.batch_size);
            t.track_rr1 |= *track_rr1;
            if *no_color {
                cfg.model.use_color = false;
            }
            cfg.validate()?;
            let (train_set, _) = load_split(data, &cfg)?;
            fs::create_dir_all(out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            write_file(&out.join("config.json"), &(cfg.to_json_pretty() + "\n"))?;
            let outcome = trainer::train(&train_set, &cfg.model, &cfg.train, cfg.seed, Some(out))?;
            if let Some(last) = outcome.metrics.last() {
                println!(
                    "epoch {} ({}): L_CE {:.4} L_EMD {:.4} L_total {:.4}",
                    last.epoch,
                    last.stage.as_str(),
                    last.ce,
                    last.matching,
                    last.total
                );
            }
            println!("checkpoint: {}", trainer::final_checkpoint(out).display());
        }
        Command::Eval {
            ckpt,
            data,
            out,
            k,
            dump_queries,
            preset,
        } => {
            let cfg = resolve(preset)?;
            let state = ModelState::load(ckpt)?;
            let (_, test_set) = load_split(data, &cfg)?;
            let corpus = state.adapt_corpus(&test_set)?;
            let ks = k.clone().unwrap_or_else(|| cfg.eval_k.clone());
            if ks.is_empty() || ks.contains(&0) {
                return Err(usage("--k needs cutoffs >= 1"));
            }
            let s2t = score_corpus(&state.model, &corpus, RetrievalDirection::S2T, &state.train.scoring())?;
            let report = evaluate_scores(&s2t, &corpus, &ks)?;
            write_file(out, &report.to_tsv())?;
            if let Some(path) = dump_queries {
                write_file(path, &(report.queries_json()? + "\n"))?;
            }
            print!("{}", report.to_tsv());
        }
        Command::Retrieve {
            ckpt,
            data,
            text,
            shape,
            k,
            dump_costs,
        } => {
            if *k == 0 {
                return Err(usage("--k must be at least 1"));
            }
            let state = ModelState::load(ckpt)?;
            let corpus = state.adapt_corpus(&load_corpus(&manifest_path(data))?)?;
            retrieve(&state, &corpus, text.as_deref(), shape.as_deref(), *k, *dump_costs)?;
        }
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.json")
    } else {
        data.to_path_buf()
    }
}

/// `(train, test)`; both are the full corpus when `test_fraction` is 0.
fn load_split(data: &Path, cfg: &RunConfig) -> Result<(PairedCorpus, PairedCorpus), Failure> {
    let corpus = load_corpus(&manifest_path(data))?;
    if cfg.data.test_fraction == 0.0 {
        return Ok((corpus.clone(), corpus));
    }
    Ok(split_dataset(&corpus, cfg.data.test_fraction, cfg.seed)?)
}

fn retrieve(
    state: &ModelState,
    corpus: &PairedCorpus,
    text: Option<&str>,
    shape: Option<&str>,
    k: usize,
    dump_costs: bool,
) -> Result<(), Failure> {
    let model = &state.model;
    let scoring = state.train.scoring();
    let encode_shape = |i: usize| {
        model
            .encode_shape(&corpus.shapes[i], PartSource::Predicted, scoring.min_part_fraction)
            .map(|p| p.0)
    };
    // (query embedding rows, gallery ids, gallery embeddings); scores are shape-vs-text either way
    let (query, gallery_ids, gallery, query_is_shape) = match (text, shape) {
        (Some(t), _) => {
            let seq = tokenize("query", t, &model.vocab, DEFAULT_MAX_LEN)?;
            let q = model.encode_text(&seq.tokens)?;
            let g = (0..corpus.shapes.len()).map(encode_shape).collect::<Result<Vec<_>, _>>()?;
            let ids: Vec<String> = corpus.shapes.iter().map(|s| s.shape_id.clone()).collect();
            (q, ids, g, false)
        }
        (None, Some(id)) => {
            let i = corpus
                .shape_index(id)
                .ok_or_else(|| data_error(format!("unknown shape id {id:?}")))?;
            let q = encode_shape(i)?;
            let g = corpus
                .texts
                .iter()
                .map(|t| model.encode_text(&t.tokens))
                .collect::<Result<Vec<_>, _>>()?;
            let ids: Vec<String> = corpus.texts.iter().map(|t| t.text_id.clone()).collect();
            (q, ids, g, true)
        }
        (None, None) => return Err(usage("give --text or --shape")),
    };
    let scores = gallery
        .iter()
        .map(|g| {
            let (p, w) = shape_first(&query, g, query_is_shape);
            scoring.matcher.similarity(p, w, &scoring.sinkhorn)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ranked = rank_row(0, &scores);
    for (&g, s) in ranked.gallery.iter().zip(&ranked.scores).take(k) {
        println!("{}\t{s:.6}", gallery_ids[g]);
        if dump_costs {
            let (p, w) = shape_first(&query, &gallery[g], query_is_shape);
            let cost = cosine_cost(p, w)?;
            for r in 0..cost.values.rows() {
                let row: Vec<String> = cost.values.row(r).iter().map(|c| format!("{:.6}", 1.0 - c)).collect();
                println!("#\t{}", row.join("\t"));
            }
        }
    }
    Ok(())
}

/// Orders a (query, gallery) pair as (parts, words).
fn shape_first<'a>(query: &'a Matrix, gallery: &'a Matrix, query_is_shape: bool) -> (&'a Matrix, &'a Matrix) {
    if query_is_shape {
        (query, gallery)
    } else {
        (gallery, query)
    }
}
