//! Finite-difference checks of the composed network pieces at 64-bit.
//!
//! Each check perturbs at most ~1k scalars. Discrete choices (KNN graphs, ROI
//! origins, ReLU/max branches) are fingerprinted and coordinates whose
//! perturbation flips one of them are skipped rather than compared.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sacl_tensor::gradcheck::{check_gradients, check_gradients_piecewise, CheckOptions, CheckReport, Probe};
use sacl_tensor::suite::rand_tensor;
use sacl_tensor::{Graph, Tensor, Var};

use crate::config::{Metric, ModelConfig};
use crate::error::Result;
use crate::losses::{class_weights, total_loss_graph, LossConfig};
use crate::model::{Network, Targets};
use crate::params::{Ctx, ParamStore};
use crate::sacl::{knn_graph, Ffn, GraphBlock, Sacl};
use crate::template::template_pixels;

fn combine(a: u64, b: u64) -> u64 {
    let mut h = DefaultHasher::new();
    (a, b).hash(&mut h);
    h.finish()
}

/// Weighted sum of all outputs with fixed pseudo-random weights.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let w = g.constant(rand_tensor(&mut rng, g.shape(y)));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Checks gradients w.r.t. the named entries of `store` (plus any extra
/// inputs, which come first).
fn check_params<F>(
    store: &ParamStore<f64>,
    names: &[&str],
    extra: Vec<Tensor<f64>>,
    opts: CheckOptions,
    mut f: F,
) -> Result<CheckReport>
where
    F: FnMut(&mut Ctx<'_, f64>, &[Var]) -> Result<(Var, u64)>,
{
    let n_extra = extra.len();
    let mut inputs = extra;
    for n in names {
        inputs.push(store.get(n)?.clone());
    }
    check_gradients_piecewise(&inputs, opts, |g, vars| {
        let mut ctx = Ctx::new(g, store, true);
        for (n, &v) in names.iter().zip(&vars[n_extra..]) {
            ctx.bind(n, v)?;
        }
        let (root, regime) = f(&mut ctx, &vars[..n_extra])?;
        let regime = combine(regime, ctx.g.branch_fingerprint());
        Ok(Probe { root, regime })
    })
}

fn linear_names(prefixes: &[String]) -> Vec<String> {
    prefixes
        .iter()
        .flat_map(|p| [format!("{p}.weight"), format!("{p}.bias")])
        .collect()
}

fn block_case(seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d, k) = (6, 4, 2);
    let block = GraphBlock::new("gb", d);
    let mut store = ParamStore::new();
    for l in [&block.before, &block.gcn.lin, &block.after] {
        l.init(&mut store, &mut rng);
    }
    let x = rand_tensor(&mut rng, &[n, d]);
    let graph = knn_graph(x.data(), n, d, k, Metric::Euclidean)?;
    let names = linear_names(&["gb.before".into(), "gb.gcn".into(), "gb.after".into()]);
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    check_params(&store, &names, vec![x], CheckOptions::default(), |ctx, v| {
        let y = block.forward(ctx, v[0], std::slice::from_ref(&graph))?;
        Ok((project(ctx.g, y, seed)?, 0))
    })
}

fn ffn_case(seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (5, 3);
    let ffn = Ffn::new("ffn", d, 2);
    let mut store = ParamStore::new();
    ffn.w1.init(&mut store, &mut rng);
    ffn.w2.init(&mut store, &mut rng);
    let x = rand_tensor(&mut rng, &[n, d]);
    let graph = knn_graph(x.data(), n, d, 2, Metric::Euclidean)?;
    let names = linear_names(&["ffn.w1".into(), "ffn.w2".into()]);
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    check_params(&store, &names, vec![x], CheckOptions::default(), |ctx, v| {
        let (y, graphs) = ffn.forward_and_adjust(ctx, v[0], std::slice::from_ref(&graph))?;
        let mut h = DefaultHasher::new();
        graphs.hash(&mut h);
        Ok((project(ctx.g, y, seed)?, h.finish()))
    })
}

fn tiny_sacl_config(metric: Metric) -> ModelConfig {
    ModelConfig {
        stages: 2,
        blocks: vec![1, 1],
        k: 2,
        metric,
        d_model: 8,
        stage_dims: Some(vec![4, 8]),
        ffn_ratio: 2,
        ..ModelConfig::toy()
    }
}

fn sacl_case(seed: u64, metric: Metric) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tiny_sacl_config(metric);
    let (nodes, d1) = (5, 6);
    let sacl = Sacl::new(&cfg, d1, nodes);
    let mut store = ParamStore::new();
    sacl.init(&mut store, &mut rng);
    let names: Vec<String> = store.entries().iter().map(|e| e.name.clone()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let roi = rand_tensor(&mut rng, &[nodes, d1]);
    check_params(&store, &names, vec![roi], CheckOptions::default(), |ctx, v| {
        let out = sacl.forward(ctx, v[0])?;
        let mut h = DefaultHasher::new();
        for s in &out.snapshots {
            s.graphs.hash(&mut h);
        }
        Ok((project(ctx.g, out.features, seed)?, h.finish()))
    })
}

fn losses_case(seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n_au, n_lm) = (3, 4, 6);
    let logits = rand_tensor(&mut rng, &[b, n_au]);
    let pred = rand_tensor(&mut rng, &[b, n_lm]);
    let labels = Tensor::new([b, n_au], (0..b * n_au).map(|_| f64::from(rng.gen_bool(0.5) as u8)).collect())?;
    let gt = rand_tensor(&mut rng, &[b, n_lm]);
    let rates: Vec<f64> = (0..n_au).map(|_| rng.gen_range(0.1..0.9)).collect();
    let omega = class_weights(&rates)?;
    let d_o: Vec<f64> = (0..b).map(|_| rng.gen_range(0.5..2.0)).collect();
    let cfg = LossConfig::default();
    check_gradients(&[logits, pred], CheckOptions::default(), |g, v| -> Result<Var> {
        let p = g.sigmoid(v[0]);
        Ok(total_loss_graph(g, &cfg, p, &labels, &omega, v[1], &gt, &d_o)?.total)
    })
}

fn head_case(seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = crate::head::Head::new(5, Some(4), 3);
    let mut store = ParamStore::new();
    head.init(&mut store, &mut rng);
    let names = linear_names(&["head.hidden".into(), "head.fc".into()]);
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let tokens = rand_tensor(&mut rng, &[2, 4, 5]);
    let nodes = rand_tensor(&mut rng, &[6, 5]);
    check_params(&store, &names, vec![tokens, nodes], CheckOptions::default(), |ctx, v| {
        let out = head.forward(ctx, v[0], v[1])?;
        Ok((project(ctx.g, out.probs, seed)?, 0))
    })
}

/// Random inputs and supervision for a toy-sized network.
pub fn synthetic_batch(net: &Network, batch: usize, seed: u64) -> (Tensor<f64>, Targets<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = net.cfg.input_size;
    let images = Tensor::new(
        [batch, 3, size, size],
        (0..batch * 3 * size * size).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .expect("image shape");
    let template = template_pixels(size);
    let mut lm = Vec::with_capacity(batch * template.len());
    for _ in 0..batch {
        lm.extend(template.iter().map(|&v| v + rng.gen_range(-0.5..0.5)));
    }
    let n_au = net.n_au();
    let labels = (0..batch * n_au).map(|_| f64::from(rng.gen_bool(0.5) as u8)).collect();
    let d_o = lm
        .chunks(template.len())
        .map(|c| {
            let [a, b] = net.cfg.inner_eye;
            let (p, q) = ((c[2 * a - 2], c[2 * a - 1]), (c[2 * b - 2], c[2 * b - 1]));
            ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
        })
        .collect();
    let targets = Targets {
        labels: Tensor::new([batch, n_au], labels).expect("label shape"),
        landmarks: Tensor::new([batch, template.len()], lm).expect("landmark shape"),
        d_o,
    };
    (images, targets)
}

/// Parameter groups of the toy network audited end to end.
pub const MODEL_GROUPS: [&[&str]; 8] = [
    &["head.fc.weight", "head.fc.bias"],
    &["sacl.1.fc.weight", "sacl.1.0.ffn.w2.bias", "sacl.1.0.graph.after.bias"],
    &["sacl.0.0.graph.gcn.weight", "sacl.0.0.graph.before.bias", "sacl.0.0.ffn.w1.bias"],
    &["sacl.embed.weight", "sacl.embed.bias"],
    &["lp.fc.weight", "lp.fc.bias", "lp.2.1.conv.weight"],
    &["stage4.0.conv.weight", "stage3.0.bn.gamma", "stage2.0.bn.beta"],
    &["stage1.0.conv.weight", "stage1.0.bn.gamma", "stem.1.bn.beta"],
    &["stem.0.conv.weight", "stem.0.bn.gamma", "stem.1.conv.weight"],
];

/// Gradient of the full training objective w.r.t. one parameter group,
/// flowing through losses, head, graph branch, fusion and backbone.
pub fn model_case(group: &[&str], seed: u64, coords_per_tensor: usize) -> Result<CheckReport> {
    let net = Network::new(ModelConfig::toy())?;
    let store = net.init_params::<f64>(seed);
    let (images, targets) = synthetic_batch(&net, 2, seed);
    let omega = class_weights(&vec![0.4; net.n_au()])?;
    let loss_cfg = LossConfig::default();
    let opts = CheckOptions {
        max_coords_per_input: Some(coords_per_tensor),
        ..CheckOptions::default()
    };
    check_params(&store, group, vec![], opts, |ctx, _| {
        let img = ctx.g.constant(images.clone());
        let (out, terms) = net.loss(ctx, img, &targets, &loss_cfg, &omega)?;
        Ok((terms.total, out.regime()))
    })
}

/// Every composed check, in order from leaf pieces to the whole network.
pub fn model_suite(seeds: u64) -> Result<Vec<(String, CheckReport)>> {
    let mut out = Vec::new();
    let mut merged = |name: &str, f: &dyn Fn(u64) -> Result<CheckReport>| -> Result<()> {
        let mut total = CheckReport::default();
        for s in 0..seeds {
            total.merge(&f(s)?);
        }
        out.push((name.to_string(), total));
        Ok(())
    };
    merged("graph block", &block_case)?;
    merged("ffn + re-adjust", &ffn_case)?;
    for m in [Metric::Euclidean, Metric::Manhattan, Metric::Cosine] {
        merged(&format!("sacl ({})", m.name()), &|s| sacl_case(s, m))?;
    }
    merged("losses", &losses_case)?;
    merged("head", &head_case)?;
    for group in MODEL_GROUPS {
        let mut total = CheckReport::default();
        total.merge(&model_case(group, 0, 48)?);
        out.push((format!("model [{}]", group.join(", ")), total));
    }
    Ok(out)
}

