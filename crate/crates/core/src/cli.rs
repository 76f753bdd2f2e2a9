//! Command-line front end: `synth`, `train`, `eval`, `search`, `gradcheck`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad arguments.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::data::{generate_synthetic, load_features, load_split_from_manifest, write_features, SplitKind, SynthConfig};
use crate::error::{Error, Result};
use crate::gradcheck::{self, GradcheckConfig};
use crate::loss::SimilarityRule;
use crate::net::ModelParams;
use crate::trainer::{build_index, curves_csv, evaluate_model, train_observed, Ablation, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "mvhash", version, about = "Multi-view hashing: train, evaluate and search binary codes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a clustered synthetic multi-view dataset
    Synth(SynthArgs),
    /// Train a model and write checkpoints, curves and evaluation reports
    Train(TrainArgs),
    /// Evaluate a checkpoint: query split ranked against the retrieval split
    Eval(EvalArgs),
    /// Rank an indexed split for every record of a query feature set
    Search(SearchArgs),
    /// Compare analytic gradients against central finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory (manifest.toml plus tensor and label files)
    #[arg(long)]
    pub out: PathBuf,
    /// Number of categories
    #[arg(long, default_value_t = 4)]
    pub categories: usize,
    /// Comma-separated per-view dimensions; one entry per view
    #[arg(long, value_delimiter = ',', default_value = "512,512")]
    pub view_dims: Vec<usize>,
    #[arg(long, default_value_t = 800)]
    pub train: usize,
    #[arg(long, default_value_t = 800)]
    pub retrieval: usize,
    #[arg(long, default_value_t = 200)]
    pub query: usize,
    /// Per-component noise standard deviation around the category anchors
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Probability that a sample carries a second category
    #[arg(long, default_value_t = 0.0)]
    pub multi_label_prob: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Training flags. Every flag overrides the same key of `--config`.
#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    /// TOML file with training keys (same names as the flags, snake_case)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Code length K [default: 16]
    #[arg(long)]
    pub bits: Option<usize>,
    /// Width of each per-view projection [default: 64]
    #[arg(long)]
    pub d_proj: Option<usize>,
    /// Training epochs [default: 500]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Batch size b [default: 128]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// AdamW learning rate [default: 1e-5]
    #[arg(long)]
    pub lr: Option<f64>,
    /// AdamW beta1 [default: 0.9]
    #[arg(long)]
    pub beta1: Option<f64>,
    /// AdamW beta2 [default: 0.999]
    #[arg(long)]
    pub beta2: Option<f64>,
    /// AdamW epsilon [default: 1e-8]
    #[arg(long)]
    pub eps: Option<f64>,
    /// Decoupled weight decay [default: 0]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Cosine-decay the learning rate to zero over the run [default: off]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub cosine_lr: Option<bool>,
    /// Clip the global gradient norm to this value [default: off]
    #[arg(long)]
    pub max_grad_norm: Option<f64>,
    /// Dropout probability on the concatenated views [default: 0.1]
    #[arg(long)]
    pub dropout_p: Option<f64>,
    /// Block fraction lambda in (0, 0.5]; lambda * batch_size must be >= 1 [default: 0.5]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Quantization loss weight mu [default: 0.5]
    #[arg(long)]
    pub mu: Option<f64>,
    /// Softplus weight w_d applied to every pair [default: 1.5]
    #[arg(long)]
    pub w_d: Option<f64>,
    /// Pair similarity: binary (label overlap) or raw-product (experimental) [default: binary]
    #[arg(long, value_parser = parse_similarity)]
    pub similarity: Option<SimilarityRule>,
    /// Seed for initialization, shuffling and dropout [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluate every N epochs and after the last one; 0 disables [default: 10]
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Comma-separated cutoffs for mAP@K and Recall@K [default: 1,10,50,100,200,500]
    #[arg(long, value_delimiter = ',')]
    pub cutoffs: Option<Vec<usize>>,
    /// full, metric-only, quant-only, image-only, text-only or concat-only [default: full]
    #[arg(long, value_parser = parse_ablation)]
    pub ablation: Option<Ablation>,
    /// Fill the wall_ms column of curves.csv (makes runs non-identical) [default: off]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub record_wall_time: Option<bool>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset manifest
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for final.ckpt, best.ckpt, curves.csv, eval.csv, eval_summary.txt
    #[arg(long)]
    pub out: PathBuf,
    /// Print one line per epoch
    #[arg(long)]
    pub verbose: bool,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset manifest
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated cutoffs [default: those stored in the checkpoint]
    #[arg(long, value_delimiter = ',')]
    pub cutoffs: Option<Vec<usize>>,
    /// Pipeline variant [default: the one stored in the checkpoint]
    #[arg(long, value_parser = parse_ablation)]
    pub ablation: Option<Ablation>,
    /// Write the report CSV here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest of the indexed records
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, default_value = "retrieval")]
    pub index_split: SplitKind,
    /// Manifest of the query records [default: --index]
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long, default_value = "query")]
    pub query_split: SplitKind,
    /// Results per query
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Pipeline variant [default: the one stored in the checkpoint]
    #[arg(long, value_parser = parse_ablation)]
    pub ablation: Option<Ablation>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Number of random instances
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Relative tolerance
    #[arg(long, default_value_t = 1e-4)]
    pub rel_tol: f64,
    /// Absolute floor below which differences are accepted
    #[arg(long, default_value_t = 1e-7)]
    pub abs_floor: f64,
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_similarity(s: &str) -> std::result::Result<SimilarityRule, String> {
    match s {
        "binary" => Ok(SimilarityRule::Binary),
        "raw-product" => Ok(SimilarityRule::RawProduct),
        other => Err(format!("unknown similarity {other:?}")),
    }
}

impl TrainFlags {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                toml::from_str(&text).map_err(|e| Error::load(path, format!("bad config: {e}")))?
            }
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    cfg.$f = v.clone();
                }
            )*};
        }
        set!(
            bits, d_proj, epochs, batch_size, lr, beta1, beta2, eps, weight_decay, cosine_lr, dropout_p, lambda,
            mu, w_d, similarity, seed, eval_every, cutoffs, ablation, record_wall_time
        );
        if self.max_grad_norm.is_some() {
            cfg.max_grad_norm = self.max_grad_norm;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match execute(cli.command, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Search(a) => search_cmd(a, out),
        Command::Gradcheck(a) => gradcheck_cmd(a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = SynthConfig {
        categories: a.categories,
        view_dims: a.view_dims,
        train: a.train,
        retrieval: a.retrieval,
        query: a.query,
        sigma: a.sigma,
        multi_label_prob: a.multi_label_prob,
        seed: a.seed,
    };
    let ds = generate_synthetic(&cfg)?;
    let manifest = write_features(&ds, &a.out)?;
    emit(out, &format!("wrote {}\n", manifest.display()))
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.flags.resolve()?;
    let ds = load_features(&a.data)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let echo = cfg.to_json();
    let verbose = a.verbose;
    let outcome = train_observed(&ds, &cfg, &mut |r, _| {
        if verbose {
            let map = r.map.map(|m| format!(" map {m:.6}")).unwrap_or_default();
            emit(out, &format!("epoch {} loss {:.6}{map}\n", r.epoch, r.loss))?;
        }
        Ok(())
    })?;

    Checkpoint {
        params: outcome.params.clone(),
        optimizer: Some(outcome.optimizer.clone()),
        train_config: Some(cfg.clone()),
        epoch: cfg.epochs as u64,
    }
    .save(&a.out.join("final.ckpt"))?;
    if let Some(best) = &outcome.best {
        Checkpoint {
            params: best.params.clone(),
            optimizer: None,
            train_config: Some(cfg.clone()),
            epoch: best.epoch as u64,
        }
        .save(&a.out.join("best.ckpt"))?;
    }
    write_file(&a.out.join("curves.csv"), &curves_csv(&outcome.records, Some(&echo)))?;
    if let Some(mut report) = outcome.final_report {
        report.config = Some(echo);
        report.write_csv(&a.out.join("eval.csv"))?;
        write_file(&a.out.join("eval_summary.txt"), &report.summary())?;
        emit(out, &report.summary())?;
    }
    emit(out, &format!("wrote {}\n", a.out.display()))
}

fn checkpoint_defaults(ck: &Checkpoint) -> TrainConfig {
    ck.train_config.clone().unwrap_or_else(|| TrainConfig {
        bits: ck.params.config.bits,
        d_proj: ck.params.config.d_proj,
        ..TrainConfig::default()
    })
}

fn check_dims(params: &ModelParams, dims: &[usize], what: &Path) -> Result<()> {
    if params.config.view_dims != dims {
        return Err(Error::Argument(format!(
            "{} has view dims {:?} but the checkpoint expects {:?}",
            what.display(),
            dims,
            params.config.view_dims
        )));
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut cfg = checkpoint_defaults(&ck);
    if let Some(c) = a.cutoffs {
        cfg.cutoffs = c;
    }
    if let Some(ab) = a.ablation {
        cfg.ablation = ab;
    }
    let ds = load_features(&a.data)?;
    check_dims(&ck.params, &ds.view_dims(), &a.data)?;
    let mut report = evaluate_model(&ds, &ck.params, cfg.ablation, &cfg.cutoffs)?;
    report.config = Some(cfg.to_json());
    if let Some(path) = &a.out {
        report.write_csv(path)?;
    }
    emit(out, &report.summary())
}

fn search_cmd(a: SearchArgs, out: &mut dyn Write) -> Result<()> {
    if a.top == 0 {
        return Err(Error::Argument("--top must be at least 1".into()));
    }
    let ck = Checkpoint::load(&a.checkpoint)?;
    let ablation = a.ablation.unwrap_or(checkpoint_defaults(&ck).ablation);
    let (index_manifest, index_records) = load_split_from_manifest(&a.index, a.index_split)?;
    check_dims(&ck.params, &index_manifest.views.iter().map(|v| v.dim).collect::<Vec<_>>(), &a.index)?;
    let query_path = a.queries.as_ref().unwrap_or(&a.index);
    let (query_manifest, query_records) = load_split_from_manifest(query_path, a.query_split)?;
    check_dims(&ck.params, &query_manifest.views.iter().map(|v| v.dim).collect::<Vec<_>>(), query_path)?;

    let index = build_index(&index_records, &ck.params, ablation)?;
    let queries = build_index(&query_records, &ck.params, ablation)?;
    let mut text = String::from("query,rank,id,distance\n");
    for (qid, code) in queries.ids().iter().zip(queries.codes()) {
        for (rank, hit) in index.search(code, a.top)?.into_iter().enumerate() {
            text.push_str(&format!("{qid},{},{},{}\n", rank + 1, hit.id, hit.distance));
        }
    }
    emit(out, &text)
}

fn gradcheck_cmd(a: GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let report = gradcheck::run(&GradcheckConfig {
        instances: a.instances,
        seed: a.seed,
        step: a.step,
        rel_tol: a.rel_tol,
        abs_floor: a.abs_floor,
    })?;
    emit(
        out,
        &format!(
            "instances: {}\nvalues checked: {}\nmax relative error: {:e}\n",
            report.instances, report.values_checked, report.max_error
        ),
    )?;
    if let Some(w) = &report.worst {
        emit(
            out,
            &format!(
                "worst: instance {} {}[{}] analytic {:e} numeric {:e}\n",
                w.instance, w.tensor, w.index, w.analytic, w.numeric
            ),
        )?;
    }
    if report.passed() {
        emit(out, "PASS\n")
    } else {
        Err(Error::NonFinite(format!(
            "gradient check failed: max relative error {:e} exceeds {:e}",
            report.max_error, report.rel_tol
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        fs::write(&path, "lr = 0.001\nmu = 0.25\nablation = \"concat-only\"\n").unwrap();
        let flags = TrainFlags {
            config: Some(path),
            mu: Some(0.75),
            ..TrainFlags::default()
        };
        let cfg = flags.resolve().unwrap();
        assert_eq!(cfg.lr, 0.001);
        assert_eq!(cfg.mu, 0.75);
        assert_eq!(cfg.ablation, Ablation::ConcatOnly);
        assert_eq!(cfg.w_d, 1.5);
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        fs::write(&path, "learning_rate = 0.1\n").unwrap();
        let flags = TrainFlags { config: Some(path), ..TrainFlags::default() };
        assert!(flags.resolve().is_err());
    }

    #[test]
    fn bad_flags_exit_2() {
        assert_eq!(run(["mvhash", "train", "--no-such-flag"]), 2);
        assert_eq!(run(["mvhash"]), 2);
        assert_eq!(run(["mvhash", "gradcheck", "--seed", "x"]), 2);
    }
}
