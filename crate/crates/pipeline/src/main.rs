use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sacl_core::diagnostics::model_suite;
use sacl_core::Network;
use sacl_pipeline::data::write_dataset;
use sacl_pipeline::run::{
    export_graph, fold_dir, load_model, load_or_synthesise, predict, run_training, write_graph, MODEL_CKPT,
};
use sacl_pipeline::synth::{generate, SynthSpec};
use sacl_pipeline::RunConfig;
use sacl_tensor::suite::kernel_suite;

/// Facial action unit detection with self-adjusting AU-correlation graphs.
#[derive(Parser)]
#[command(name = "sacl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML). Defaults to the toy preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory. Without it a synthetic set is generated in memory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Held-out fold; omit to train and evaluate on everything.
    #[arg(long)]
    fold: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Single-lane data loading and fixed reduction order.
    #[arg(long)]
    deterministic: bool,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct WithCheckpoint {
    #[command(flatten)]
    common: Common,
    /// Parameter file; defaults to the one `train` wrote under `--out`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write checkpoints, per-epoch metrics and a graph trace.
    Train(Common),
    /// Score a checkpoint on the held-out fold.
    Eval(WithCheckpoint),
    /// Write per-image probabilities and decisions.
    Predict(WithCheckpoint),
    /// Record the AU graph at every adjustment point for one image.
    ExportGraph {
        #[command(flatten)]
        args: WithCheckpoint,
        /// Image id; defaults to the first held-out image.
        #[arg(long)]
        sample: Option<String>,
    },
    /// Write a synthetic dataset to `--out`.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Finite-difference audit of every kernel and the composed network.
    Gradcheck {
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::toy(),
    };
    if let Some(s) = c.seed {
        cfg.train.seed = s;
    }
    cfg.train.deterministic |= c.deterministic;
    if let Some(f) = c.fold {
        if !(1..=cfg.data.folds).contains(&f) {
            bail!("--fold must be in 1..={}", cfg.data.folds);
        }
    }
    Ok(cfg)
}

struct Loaded {
    cfg: RunConfig,
    net: Network,
    params: sacl_core::ParamStore<f32>,
    data: sacl_pipeline::data::Dataset,
    dir: PathBuf,
}

fn load_trained(a: &WithCheckpoint) -> Result<Loaded> {
    let cfg = load_config(&a.common)?;
    let dir = fold_dir(&a.common.out, a.common.fold);
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| dir.join(MODEL_CKPT));
    let net = Network::new(cfg.model.clone())?;
    let params = load_model(&ckpt, &net, &cfg).context("no trained model; run `sacl train` first or pass --checkpoint")?;
    let data = load_or_synthesise(&cfg, a.common.dataset.as_deref())?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(Loaded {
        cfg,
        net,
        params,
        data,
        dir,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(c) => {
            let cfg = load_config(&c)?;
            let data = load_or_synthesise(&cfg, c.dataset.as_deref())?;
            eprintln!("{} samples, {} subjects", data.samples.len(), data.folds.len());
            let summary = run_training(&cfg, &data, c.fold, &c.out, &mut |m| eprintln!("{m}"))?;
            print!("{}", summary.test_report.to_csv());
            eprintln!("wrote {}", summary.dir.display());
        }
        Command::Eval(a) => {
            let l = load_trained(&a)?;
            let (_, test) = l.data.split(a.common.fold)?;
            let report = predict(&l.cfg, &l.net, &l.params, &l.data, &test)?.report(&l.data, &test)?;
            write(&l.dir.join("eval_metrics.csv"), &report.to_csv())?;
            print!("{}", report.to_csv());
        }
        Command::Predict(a) => {
            let l = load_trained(&a)?;
            let (_, test) = l.data.split(a.common.fold)?;
            let preds = predict(&l.cfg, &l.net, &l.params, &l.data, &test)?;
            let path = l.dir.join("predictions.csv");
            write(&path, &preds.to_csv())?;
            eprintln!("wrote {}", path.display());
        }
        Command::ExportGraph { args, sample } => {
            let l = load_trained(&args)?;
            let index = match sample {
                Some(id) => l
                    .data
                    .samples
                    .iter()
                    .position(|s| s.id == id)
                    .with_context(|| format!("no image `{id}` in the dataset"))?,
                None => l.data.split(args.common.fold)?.1[0],
            };
            let trace = export_graph(&l.cfg, &l.net, &l.params, &l.data, index)?;
            write_graph(&l.dir, &trace)?;
            eprintln!("{} snapshots written to {}", trace.snapshots.len(), l.dir.display());
        }
        Command::Synth { common, count } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = count {
                cfg.data.synth_samples = n;
            }
            let spec = SynthSpec::from_config(&cfg)?;
            let raw = generate(&spec, cfg.train.seed)?;
            write_dataset(&common.out, &raw, &spec.aus)?;
            eprintln!("wrote {} samples to {}", raw.len(), common.out.display());
        }
        Command::Gradcheck { seeds } => {
            let mut ok = true;
            let kernels = kernel_suite(seeds)?.into_iter().map(|(n, r)| (n.to_string(), r));
            for (name, r) in kernels.chain(model_suite(seeds)?) {
                let status = if r.passed() { "ok  " } else { "FAIL" };
                println!(
                    "{status} {name}: {} coords, {} skipped, max rel err {:.2e}",
                    r.checked, r.skipped, r.max_rel_err
                );
                ok &= r.passed();
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
