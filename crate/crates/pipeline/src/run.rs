//! Command drivers: training runs with their output files, evaluation,
//! prediction and graph export.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use sacl_core::checkpoint::{read_store, restore_into, write_store};
use sacl_core::metrics::{binarize, f1_and_accuracy, MetricsReport};
use sacl_core::{Ctx, GraphTrace, Network, ParamStore};
use sacl_tensor::Graph;

use crate::augment::Augmenter;
use crate::config::RunConfig;
use crate::data::{Dataset, DatasetManifest};
use crate::error::{io_err, Result};
use crate::synth::{generate, SynthSpec};
use crate::train::{batch_tensors, StepLog, Trainer};

pub const MODEL_CKPT: &str = "model.ckpt";
pub const STATE_CKPT: &str = "state.ckpt";

/// Load a dataset directory, or synthesise one in memory from the config.
pub fn load_or_synthesise(cfg: &RunConfig, dataset: Option<&Path>) -> Result<Dataset> {
    match dataset {
        Some(dir) => Dataset::load(&DatasetManifest::discover(dir)?, cfg),
        None => {
            let spec = SynthSpec::from_config(cfg)?;
            Dataset::from_raw(generate(&spec, cfg.train.seed)?, &spec.aus, cfg)
        }
    }
}

/// Output sub-directory for a fold: `fold<k>` or `all`.
pub fn fold_dir(out: &Path, fold: Option<usize>) -> PathBuf {
    match fold {
        Some(k) => out.join(format!("fold{k}")),
        None => out.join("all"),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

/// Per-sample probabilities, row-major `[samples × N_AU]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub ids: Vec<String>,
    pub aus: Vec<u32>,
    pub probs: Vec<f64>,
}

impl Predictions {
    pub fn report(&self, data: &Dataset, idx: &[usize]) -> Result<MetricsReport> {
        let labels: Vec<bool> = idx.iter().flat_map(|&i| data.samples[i].labels.iter().map(|&v| v == 1)).collect();
        Ok(f1_and_accuracy(&binarize(&self.probs, 0.5), &labels, &self.aus)?)
    }

    /// `image_id,p_au<ID>...,pred_au<ID>...` with a 0.5 threshold.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id");
        for a in &self.aus {
            let _ = write!(out, ",p_au{a}");
        }
        for a in &self.aus {
            let _ = write!(out, ",pred_au{a}");
        }
        out.push('\n');
        let n = self.aus.len();
        for (id, row) in self.ids.iter().zip(self.probs.chunks(n)) {
            out.push_str(id);
            for p in row {
                let _ = write!(out, ",{p:.6}");
            }
            for p in row {
                let _ = write!(out, ",{}", u8::from(*p >= 0.5));
            }
            out.push('\n');
        }
        out
    }
}

/// Eval-mode forward over `idx` with centre crops.
pub fn predict(cfg: &RunConfig, net: &Network, params: &ParamStore<f32>, data: &Dataset, idx: &[usize]) -> Result<Predictions> {
    let aug = Augmenter::from_config(cfg)?;
    let mut probs = Vec::with_capacity(idx.len() * net.n_au());
    for chunk in idx.chunks(cfg.train.batch_size) {
        let samples: Vec<_> = chunk.iter().map(|&i| &data.samples[i]).collect();
        let views: Vec<_> = samples.iter().map(|s| aug.center(s)).collect();
        let labels: Vec<&[u8]> = samples.iter().map(|s| s.labels.as_slice()).collect();
        let (images, targets) = batch_tensors(&views, &labels, cfg.model.inner_eye)?;
        let gt = targets.landmarks.to_f64_vec();
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, params, false).with_eps(cfg.model.bn_eps);
        let img = ctx.g.constant(images);
        let out = net.forward(&mut ctx, img, Some(&gt))?;
        probs.extend(ctx.g.value(out.probs).to_f64_vec());
    }
    Ok(Predictions {
        ids: idx.iter().map(|&i| data.samples[i].id.clone()).collect(),
        aus: data.aus.clone(),
        probs,
    })
}

/// One forward pass on a single sample, recording every graph snapshot.
pub fn export_graph(cfg: &RunConfig, net: &Network, params: &ParamStore<f32>, data: &Dataset, index: usize) -> Result<GraphTrace> {
    let aug = Augmenter::from_config(cfg)?;
    let s = &data.samples[index];
    let (images, targets) = batch_tensors(&[aug.center(s)], &[s.labels.as_slice()], cfg.model.inner_eye)?;
    let gt = targets.landmarks.to_f64_vec();
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, params, false).with_eps(cfg.model.bn_eps);
    let img = ctx.g.constant(images);
    let out = net.forward(&mut ctx, img, Some(&gt))?;
    Ok(GraphTrace::from_snapshots(&cfg.model, &out.sacl.snapshots, 0, net.node_labels())?)
}

pub fn write_graph(dir: &Path, trace: &GraphTrace) -> Result<()> {
    write_text(&dir.join("graph_trace.json"), &trace.to_json())?;
    write_text(&dir.join("graph.dot"), &trace.to_dot())
}

pub fn save_model(path: &Path, cfg: &RunConfig, params: &ParamStore<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    write_store(&mut w, params, &cfg.to_toml()?)?;
    Ok(())
}

pub fn load_model(path: &Path, net: &Network, cfg: &RunConfig) -> Result<ParamStore<f32>> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let (loaded, _) = read_store::<f32, _>(&mut r)?;
    let mut params = net.init_params::<f32>(cfg.init_seed());
    restore_into(&mut params, &loaded)?;
    Ok(params)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub dir: PathBuf,
    pub steps: usize,
    pub train_report: MetricsReport,
    pub test_report: MetricsReport,
    pub last_loss: f64,
}

fn log_csv(logs: &[StepLog]) -> String {
    let mut out = String::new();
    for l in logs {
        let _ = writeln!(
            out,
            "{},{},{:.8e},{:.6},{:.6},{:.6},{:.6},{:.6}",
            l.step, l.epoch, l.lr, l.loss, l.wa, l.dice, l.land, l.grad_norm
        );
    }
    out
}

/// Train on the fold's training subjects, writing per-epoch metrics on its
/// test subjects plus final checkpoints, predictions and the graph trace.
/// Without a fold, every sample is used for both.
pub fn run_training(
    cfg: &RunConfig,
    data: &Dataset,
    fold: Option<usize>,
    out: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<TrainSummary> {
    let dir = fold_dir(out, fold);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_text(&dir.join("config.toml"), &cfg.to_toml()?)?;
    let (train_idx, test_idx) = data.split(fold)?;
    let net = Network::new(cfg.model.clone())?;
    let mut trainer = Trainer::new(cfg, &net, data, train_idx.clone())?;
    let mut log = String::from("step,epoch,lr,loss,wa,dice,land,grad_norm\n");
    let mut last_loss = f64::NAN;
    while !trainer.finished() {
        let logs = trainer.epoch()?;
        if let Some(l) = logs.last() {
            last_loss = l.loss;
        }
        log.push_str(&log_csv(&logs));
        let epoch = trainer.state.epoch;
        let report = predict(cfg, &net, &trainer.state.params, data, &test_idx)?.report(data, &test_idx)?;
        write_text(&dir.join(format!("metrics_epoch{epoch:02}.csv")), &report.to_csv())?;
        if trainer.state.best_metric.is_none_or(|b| report.mean_f1 > b) {
            trainer.state.best_metric = Some(report.mean_f1);
        }
        let state_path = dir.join(STATE_CKPT);
        let mut w = BufWriter::new(File::create(&state_path).map_err(io_err(&state_path))?);
        trainer.state.save(&mut w)?;
        progress(&format!(
            "epoch {epoch} step {} loss {last_loss:.4} test mean F1 {:.4}",
            trainer.state.step, report.mean_f1
        ));
    }
    write_text(&dir.join("train_log.csv"), &log)?;
    let params = &trainer.state.params;
    save_model(&dir.join(MODEL_CKPT), cfg, params)?;

    let test_pred = predict(cfg, &net, params, data, &test_idx)?;
    let test_report = test_pred.report(data, &test_idx)?;
    write_text(&dir.join("metrics.csv"), &test_report.to_csv())?;
    write_text(&dir.join("predictions.csv"), &test_pred.to_csv())?;
    let train_report = predict(cfg, &net, params, data, &train_idx)?.report(data, &train_idx)?;
    write_text(&dir.join("train_metrics.csv"), &train_report.to_csv())?;
    write_graph(&dir, &export_graph(cfg, &net, params, data, test_idx[0])?)?;
    Ok(TrainSummary {
        dir,
        steps: trainer.state.step,
        train_report,
        test_report,
        last_loss,
    })
}
