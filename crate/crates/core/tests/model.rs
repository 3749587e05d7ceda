use std::time::Instant;

use sacl_core::checkpoint::{read_store, restore_into, write_store};
use sacl_core::template::template_pixels;
use sacl_core::sacl::Phase;
use sacl_core::{Ctx, ModelConfig, Network};
use sacl_tensor::{Graph, Tensor};

fn full_scale_forward(cfg: ModelConfig, n_roi: usize, n_au: usize) {
    let net = Network::new(cfg).unwrap();
    assert_eq!(net.layout.len(), n_roi);
    let store = net.init_params::<f32>(3);
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &store, false);
    let img = ctx.g.constant(Tensor::full([1, 3, 224, 224], 0.5f32));
    let gt = template_pixels(224);
    let t = Instant::now();
    let out = net.forward(&mut ctx, img, Some(&gt)).unwrap();
    eprintln!("full-scale forward ({n_roi} rois): {:?}", t.elapsed());
    let g = &ctx.g;
    assert_eq!(g.shape(out.base), &[1, 64, 56, 56]);
    assert_eq!(g.shape(out.msfl), &[1, 960, 56, 56]);
    assert_eq!(g.shape(out.tokens), &[1, 3136, 960]);
    assert_eq!(g.shape(out.landmarks), &[1, 98]);
    // ROI side round(0.14 · 56) = 8 cells of 64 channels
    assert_eq!(g.shape(out.rois), &[n_roi, 8 * 8 * 64]);
    assert_eq!(g.shape(out.sacl.features), &[n_roi, 960]);
    assert_eq!(g.shape(out.fused), &[1, 3136 + n_roi, 960]);
    assert_eq!(g.shape(out.probs), &[1, n_au]);
    assert_eq!(out.sacl.snapshots.len(), 1 + 12 + 4);
    assert_eq!(out.sacl.blocks_run, vec![2, 2, 6, 2]);
    for s in &out.sacl.snapshots {
        assert!(s.graphs[0].adjacency.iter().all(|r| r.len() == 9));
    }
    assert!(g.value(out.probs).all_finite());
}

#[test]
fn full_scale_shapes_bp4d() {
    full_scale_forward(ModelConfig::bp4d(), 18, 12);
}

#[test]
fn full_scale_shapes_disfa() {
    full_scale_forward(ModelConfig::disfa(), 16, 8);
}

#[test]
fn parameter_counts_are_stable() {
    let toy = Network::new(ModelConfig::toy()).unwrap();
    let bp4d = Network::new(ModelConfig::bp4d()).unwrap();
    eprintln!("toy {} bp4d {}", toy.param_count(), bp4d.param_count());
    assert_eq!(toy.param_count(), toy.init_params::<f32>(0).trainable_count());
    assert_eq!(bp4d.param_count(), bp4d.init_params::<f32>(0).trainable_count());
    assert_eq!(toy.param_count(), TOY_PARAMS);
    assert_eq!(bp4d.param_count(), BP4D_PARAMS);
}

const TOY_PARAMS: usize = 199_125;
const BP4D_PARAMS: usize = 44_647_510;

#[test]
fn snapshot_phases_in_execution_order() {
    let net = Network::new(ModelConfig::toy()).unwrap();
    let store = net.init_params::<f64>(1);
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &store, false);
    let img = ctx.g.constant(Tensor::full([1, 3, 32, 32], 0.2));
    let out = net.forward(&mut ctx, img, None).unwrap();
    let order: Vec<(usize, usize, Phase)> =
        out.sacl.snapshots.iter().map(|s| (s.stage, s.block, s.phase)).collect();
    assert_eq!(
        order,
        vec![
            (0, 0, Phase::Init),
            (0, 0, Phase::PostFfn),
            (1, 0, Phase::Init),
            (1, 0, Phase::PostFfn),
            (2, 0, Phase::Init),
        ]
    );
}

#[test]
fn checkpoint_round_trip_reproduces_forward_bitwise() {
    let net = Network::new(ModelConfig::toy()).unwrap();
    let store = net.init_params::<f32>(42);
    let mut bytes = Vec::new();
    write_store(&mut bytes, &store, "{\"toy\":true}").unwrap();
    let (loaded, meta) = read_store::<f32, _>(&mut bytes.as_slice()).unwrap();
    assert_eq!(meta, "{\"toy\":true}");
    let mut target = net.init_params::<f32>(0);
    restore_into(&mut target, &loaded).unwrap();

    let run = |s: &sacl_core::ParamStore<f32>| {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, s, false);
        let img = ctx.g.constant(Tensor::new([1, 3, 32, 32], (0..3072).map(|i| (i % 17) as f32 / 17.0).collect()).unwrap());
        let out = net.forward(&mut ctx, img, None).unwrap();
        ctx.g.value(out.probs).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(&store), run(&target));

    let mut corrupt = bytes.clone();
    corrupt[0] = b'X';
    assert!(read_store::<f32, _>(&mut corrupt.as_slice()).is_err());
    assert!(read_store::<f32, _>(&mut &bytes[..bytes.len() - 3]).is_err());
}
