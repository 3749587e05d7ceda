//! Self-adjusting correlation learning over ROI nodes.
//!
//! Node features for a batch are stacked as `[B·N, d]`; every sample keeps
//! its own K-nearest-neighbour graph, recomputed after each FFN and again
//! after each stage's dimension-expanding FC.

use rand::Rng;
use sacl_tensor::{Scalar, Var};
use serde::{Deserialize, Serialize};

use crate::config::{Metric, ModelConfig};
use crate::error::{config_err, CoreError, Result};
use crate::params::{Ctx, Linear, ParamStore};

/// Directed K-neighbour graph: row `i` lists the neighbours of node `i`
/// ordered by increasing distance, ties broken by lower index.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AuGraph {
    pub adjacency: Vec<Vec<usize>>,
    pub k: usize,
    pub metric: Metric,
}

impl AuGraph {
    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn edges(&self) -> Vec<[usize; 2]> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&j| [i, j]))
            .collect()
    }
}

pub fn distance(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        // squared: same ordering, exact on integer inputs
        Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        Metric::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                1.0 - dot / (na * nb)
            }
        }
    }
}

/// KNN graph over the rows of a row-major `n × d` matrix, excluding self.
pub fn knn_graph<T: Scalar>(nodes: &[T], n: usize, d: usize, k: usize, metric: Metric) -> Result<AuGraph> {
    if nodes.len() != n * d {
        return Err(CoreError::Argument(format!("{} values for {n}×{d} nodes", nodes.len())));
    }
    if k == 0 || k >= n {
        return Err(CoreError::Argument(format!("K = {k} needs 1 <= K < N = {n}")));
    }
    let rows: Vec<Vec<f64>> = nodes.chunks(d).map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
    let mut adjacency = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| (distance(metric, &rows[i], &rows[j]), j)));
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        adjacency.push(cand[..k].iter().map(|c| c.1).collect());
    }
    Ok(AuGraph { adjacency, k, metric })
}

/// One graph per sample of a stacked `[batch·n, d]` matrix.
pub fn knn_batched<T: Scalar>(values: &[T], batch: usize, d: usize, k: usize, metric: Metric) -> Result<Vec<AuGraph>> {
    let per = values.len() / batch.max(1);
    values
        .chunks(per.max(1))
        .map(|chunk| knn_graph(chunk, per / d, d, k, metric))
        .collect()
}

/// Concatenation `[x_i ‖ max_j (x_j − x_i)]` for every node, `[B·N, 2d]`.
pub fn max_relative_aggregate<T: Scalar>(ctx: &mut Ctx<'_, T>, x: Var, graphs: &[AuGraph]) -> Result<Var> {
    let k = graphs.first().map(|g| g.k).unwrap_or(0);
    if k == 0 || graphs.iter().any(|g| g.k != k) {
        return Err(CoreError::Argument("graphs must share a positive K".into()));
    }
    let n = graphs[0].len();
    if ctx.g.shape(x)[0] != n * graphs.len() {
        return Err(CoreError::Argument(format!(
            "{} node rows for {} graphs of {n} nodes",
            ctx.g.shape(x)[0],
            graphs.len()
        )));
    }
    let mut diffs = Vec::with_capacity(k);
    for slot in 0..k {
        let rows: Vec<usize> = graphs
            .iter()
            .enumerate()
            .flat_map(|(b, g)| g.adjacency.iter().map(move |row| b * n + row[slot]))
            .collect();
        let xj = ctx.g.gather_rows(x, &rows)?;
        diffs.push(ctx.g.sub(xj, x)?);
    }
    let m = ctx.g.max_of(&diffs)?;
    Ok(ctx.g.concat(&[x, m], 1)?)
}

/// Max-relative graph convolution: linear map of the aggregate, `2d → d`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxRelativeConv {
    pub lin: Linear,
}

impl MaxRelativeConv {
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var, graphs: &[AuGraph]) -> Result<Var> {
        let agg = max_relative_aggregate(ctx, x, graphs)?;
        self.lin.forward(ctx, agg)
    }
}

/// `gelu(GCN(x·W_before))·W_after + x`
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBlock {
    pub before: Linear,
    pub gcn: MaxRelativeConv,
    pub after: Linear,
}

impl GraphBlock {
    pub fn new(prefix: &str, d: usize) -> Self {
        Self {
            before: Linear::new(format!("{prefix}.before"), d, d),
            gcn: MaxRelativeConv {
                lin: Linear::new(format!("{prefix}.gcn"), 2 * d, d),
            },
            after: Linear::new(format!("{prefix}.after"), d, d),
        }
    }

    fn layers(&self) -> [&Linear; 3] {
        [&self.before, &self.gcn.lin, &self.after]
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var, graphs: &[AuGraph]) -> Result<Var> {
        let d = ctx.g.shape(x)[1];
        if d != self.before.d_in || d != self.after.d_out {
            return Err(config_err(format!(
                "graph block `{}` expects dim {}, got {d}",
                self.before.name, self.before.d_in
            )));
        }
        let h = self.before.forward(ctx, x)?;
        let h = self.gcn.forward(ctx, h, graphs)?;
        let h = ctx.g.gelu(h);
        let h = self.after.forward(ctx, h)?;
        Ok(ctx.g.add(h, x)?)
    }
}

/// `gelu(x·W1)·W2 + x`
#[derive(Clone, Debug, PartialEq)]
pub struct Ffn {
    pub w1: Linear,
    pub w2: Linear,
}

impl Ffn {
    pub fn new(prefix: &str, d: usize, ratio: usize) -> Self {
        Self {
            w1: Linear::new(format!("{prefix}.w1"), d, ratio * d),
            w2: Linear::new(format!("{prefix}.w2"), ratio * d, d),
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.w1.forward(ctx, x)?;
        let h = ctx.g.gelu(h);
        let h = self.w2.forward(ctx, h)?;
        Ok(ctx.g.add(h, x)?)
    }

    /// FFN followed by recomputing every sample's KNN graph on the result.
    pub fn forward_and_adjust<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        x: Var,
        graphs: &[AuGraph],
    ) -> Result<(Var, Vec<AuGraph>)> {
        let y = self.forward(ctx, x)?;
        let (k, metric) = (graphs[0].k, graphs[0].metric);
        let d = ctx.g.shape(y)[1];
        let fresh = knn_batched(ctx.g.value(y).data(), graphs.len(), d, k, metric)?;
        Ok((y, fresh))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    PostFfn,
}

/// Adjacency of every sample at one adjustment point. Re-initialisations
/// after stage `s` are tagged `stage = s + 1, block = 0`; the last one
/// (`stage = S`) is the graph of the output features.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub stage: usize,
    pub block: usize,
    pub phase: Phase,
    pub graphs: Vec<AuGraph>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaclStage {
    pub blocks: Vec<(GraphBlock, Ffn)>,
    pub fc: Linear,
}

impl SaclStage {
    /// `L_i × (graph block, FFN + re-adjust)`, then FC and graph re-init.
    pub fn forward<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        index: usize,
        mut x: Var,
        mut graphs: Vec<AuGraph>,
        trace: &mut Vec<Snapshot>,
    ) -> Result<(Var, Vec<AuGraph>, usize)> {
        let mut executed = 0;
        for (b, (block, ffn)) in self.blocks.iter().enumerate() {
            x = block.forward(ctx, x, &graphs)?;
            let (y, fresh) = ffn.forward_and_adjust(ctx, x, &graphs)?;
            x = y;
            graphs = fresh;
            executed += 1;
            trace.push(Snapshot {
                stage: index,
                block: b,
                phase: Phase::PostFfn,
                graphs: graphs.clone(),
            });
        }
        x = self.fc.forward(ctx, x)?;
        let (k, metric) = (graphs[0].k, graphs[0].metric);
        graphs = knn_batched(ctx.g.value(x).data(), graphs.len(), self.fc.d_out, k, metric)?;
        trace.push(Snapshot {
            stage: index + 1,
            block: 0,
            phase: Phase::Init,
            graphs: graphs.clone(),
        });
        Ok((x, graphs, executed))
    }
}

#[derive(Clone, Debug)]
pub struct SaclOutput {
    /// `B` stacked as `[batch·N_ROI, D]`.
    pub features: Var,
    pub snapshots: Vec<Snapshot>,
    pub blocks_run: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sacl {
    pub embed: Linear,
    pub stages: Vec<SaclStage>,
    pub k: usize,
    pub metric: Metric,
    pub n_nodes: usize,
}

impl Sacl {
    pub fn new(cfg: &ModelConfig, d1: usize, n_nodes: usize) -> Self {
        let dims = cfg.sacl_dims();
        let stages = dims
            .iter()
            .enumerate()
            .map(|(s, &d)| {
                let blocks = (0..cfg.blocks[s])
                    .map(|b| {
                        let p = format!("sacl.{s}.{b}");
                        (GraphBlock::new(&format!("{p}.graph"), d), Ffn::new(&format!("{p}.ffn"), d, cfg.ffn_ratio))
                    })
                    .collect();
                let next = dims.get(s + 1).copied().unwrap_or(cfg.d_model);
                SaclStage {
                    blocks,
                    fc: Linear::new(format!("sacl.{s}.fc"), d, next),
                }
            })
            .collect();
        Self {
            embed: Linear::new("sacl.embed", d1, dims[0]),
            stages,
            k: cfg.k,
            metric: cfg.metric,
            n_nodes,
        }
    }

    pub fn linears(&self) -> Vec<&Linear> {
        let mut out = vec![&self.embed];
        for st in &self.stages {
            for (gb, ffn) in &st.blocks {
                out.extend(gb.layers());
                out.extend([&ffn.w1, &ffn.w2]);
            }
            out.push(&st.fc);
        }
        out
    }

    pub fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        for l in self.linears() {
            l.init(store, rng);
        }
    }

    pub fn param_count(&self) -> usize {
        self.linears().iter().map(|l| l.param_count()).sum()
    }

    /// `roi: [batch·N_ROI, d1]` → `[batch·N_ROI, D]` plus adjacency trace.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, roi: Var) -> Result<SaclOutput> {
        let rows = ctx.g.shape(roi)[0];
        if !rows.is_multiple_of(self.n_nodes) {
            return Err(CoreError::Argument(format!("{rows} ROI rows for {} nodes", self.n_nodes)));
        }
        let batch = rows / self.n_nodes;
        let mut x = self.embed.forward(ctx, roi)?;
        let mut graphs = knn_batched(ctx.g.value(x).data(), batch, self.embed.d_out, self.k, self.metric)?;
        let mut snapshots = vec![Snapshot {
            stage: 0,
            block: 0,
            phase: Phase::Init,
            graphs: graphs.clone(),
        }];
        let mut blocks_run = Vec::with_capacity(self.stages.len());
        for (s, stage) in self.stages.iter().enumerate() {
            let (y, g, n) = stage.forward(ctx, s, x, graphs, &mut snapshots)?;
            x = y;
            graphs = g;
            blocks_run.push(n);
        }
        Ok(SaclOutput {
            features: x,
            snapshots,
            blocks_run,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use sacl_tensor::{Graph, Tensor};

    #[test]
    fn knn_three_points() {
        let g = knn_graph(&[0.0f64, 1.0, 3.0], 3, 1, 1, Metric::Euclidean).unwrap();
        assert_eq!(g.adjacency, vec![vec![1], vec![0], vec![1]]);
        assert!(knn_graph(&[0.0f64, 1.0, 3.0], 3, 1, 3, Metric::Euclidean).is_err());
    }

    #[test]
    fn knn_full_and_ties() {
        let g = knn_graph(&[0.0f64, 1.0, -1.0, 5.0], 4, 1, 3, Metric::Manhattan).unwrap();
        for (i, row) in g.adjacency.iter().enumerate() {
            let mut r = row.clone();
            r.sort();
            assert_eq!(r, (0..4).filter(|&j| j != i).collect::<Vec<_>>());
        }
        // 1 and 2 are equidistant from 0: the lower index wins
        assert_eq!(g.adjacency[0], vec![1, 2, 3]);
    }

    #[test]
    fn cosine_handles_zero_vectors() {
        assert_eq!(distance(Metric::Cosine, &[0.0, 0.0], &[1.0, 0.0]), 1.0);
        assert!(distance(Metric::Cosine, &[2.0, 0.0], &[1.0, 0.0]).abs() < 1e-15);
    }

    #[test]
    fn aggregate_matches_hand_values() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &store, false);
        let x = ctx.g.constant(Tensor::from_f64([3, 2], &[1.0, 2.0, 0.0, 5.0, 3.0, 1.0]).unwrap());
        let graph = AuGraph {
            adjacency: vec![vec![1, 2], vec![0, 2], vec![0, 1]],
            k: 2,
            metric: Metric::Euclidean,
        };
        let agg = max_relative_aggregate(&mut ctx, x, &[graph]).unwrap();
        assert_eq!(&ctx.g.value(agg).data()[..4], &[1.0, 2.0, 2.0, 3.0]);
    }

    #[test]
    fn toy_stage_dims_and_trace_length() {
        let cfg = ModelConfig::toy();
        let sacl = Sacl::new(&cfg, 32, 6);
        let mut store = ParamStore::<f64>::new();
        sacl.init(&mut store, &mut ChaCha8Rng::seed_from_u64(2));
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &store, false);
        let data: Vec<f64> = (0..2 * 6 * 32).map(|i| ((i * 37) % 11) as f64 * 0.1).collect();
        let roi = ctx.g.constant(Tensor::new([12, 32], data).unwrap());
        let out = sacl.forward(&mut ctx, roi).unwrap();
        assert_eq!(ctx.g.shape(out.features), &[12, 120]);
        assert_eq!(out.snapshots.len(), 1 + 2 + 2);
        assert_eq!(out.blocks_run, vec![1, 1]);
        assert!(out.snapshots.iter().all(|s| s.graphs.len() == 2));
    }
}
