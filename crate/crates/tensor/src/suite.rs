//! Finite-difference audit of every differentiable kernel on random shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{check_gradients, CheckOptions, CheckReport};
use crate::graph::{Graph, NormMode, Var};
use crate::tensor::Tensor;

type Build = Box<dyn FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>>;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

fn positive_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(0.2..2.0)).collect()).expect("shape")
}

/// Reduce an output to a scalar with fixed random weights so every output
/// coordinate contributes a distinct amount.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = g.shape(y).to_vec();
    let w = g.constant(rand_tensor(&mut rng, &shape));
    let prod = g.mul(y, w)?;
    Ok(g.sum(prod))
}

fn run_case<F>(seeds: u64, project_output: bool, mut make: F) -> Result<CheckReport>
where
    F: FnMut(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Build),
{
    let mut total = CheckReport::default();
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (inputs, mut f) = make(&mut rng);
        let report = check_gradients(&inputs, CheckOptions::default(), |g, v| {
            let y = f(g, v)?;
            if project_output {
                project(g, y, seed)
            } else {
                Ok(y)
            }
        })?;
        total.merge(&report);
    }
    Ok(total)
}

/// One merged report per kernel, each over `seeds` random shapes.
pub fn kernel_suite(seeds: u64) -> Result<Vec<(&'static str, CheckReport)>> {
    let mut out = Vec::new();
    let mut push = |name: &'static str, r: Result<CheckReport>| -> Result<()> {
        out.push((name, r?));
        Ok(())
    };

    push("matmul", run_case(seeds, true, |rng| {
        let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
        let inputs = vec![rand_tensor(rng, &[m, k]), rand_tensor(rng, &[k, n])];
        (inputs, Box::new(|g, v| g.matmul(v[0], v[1])))
    }))?;
    push("sum(A·B)", run_case(seeds, false, |rng| {
        let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
        let inputs = vec![rand_tensor(rng, &[m, k]), rand_tensor(rng, &[k, n])];
        (inputs, Box::new(|g, v| {
            let c = g.matmul(v[0], v[1])?;
            Ok(g.sum(c))
        }))
    }))?;
    push("conv2d", run_case(seeds, true, |rng| {
        let b = rng.gen_range(1..3);
        let c = rng.gen_range(1..4);
        let o = rng.gen_range(1..4);
        let k = rng.gen_range(1..4);
        let stride = rng.gen_range(1..3);
        let pad = rng.gen_range(0..2);
        let h = rng.gen_range(k..k + 4);
        let inputs = vec![
            rand_tensor(rng, &[b, c, h, h + 1]),
            rand_tensor(rng, &[o, c, k, k]),
            rand_tensor(rng, &[o]),
        ];
        (inputs, Box::new(move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad)))
    }))?;
    push("gelu", run_case(seeds, true, |rng| {
        let n = rng.gen_range(1..12);
        (vec![rand_tensor(rng, &[n])], Box::new(|g, v| Ok(g.gelu(v[0]))))
    }))?;
    push("sum(gelu(Wx))", run_case(seeds, false, |rng| {
        let (m, k) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let inputs = vec![rand_tensor(rng, &[m, k]), rand_tensor(rng, &[k, 1])];
        (inputs, Box::new(|g, v| {
            let wx = g.matmul(v[0], v[1])?;
            let a = g.gelu(wx);
            Ok(g.sum(a))
        }))
    }))?;
    push("relu", run_case(seeds, true, |rng| {
        let n = rng.gen_range(1..12);
        (vec![rand_tensor(rng, &[2, n])], Box::new(|g, v| Ok(g.relu(v[0]))))
    }))?;
    push("sigmoid", run_case(seeds, true, |rng| {
        let n = rng.gen_range(1..12);
        (vec![rand_tensor(rng, &[n, 2])], Box::new(|g, v| Ok(g.sigmoid(v[0]))))
    }))?;
    push("log", run_case(seeds, true, |rng| {
        let n = rng.gen_range(1..12);
        (vec![positive_tensor(rng, &[n])], Box::new(|g, v| Ok(g.log(v[0]))))
    }))?;
    push("add/sub/mul/div", run_case(seeds, true, |rng| {
        let n = rng.gen_range(1..6);
        let inputs = vec![
            rand_tensor(rng, &[n, 3]),
            rand_tensor(rng, &[n, 3]),
            positive_tensor(rng, &[n, 3]),
        ];
        (inputs, Box::new(|g, v| {
            let s = g.add(v[0], v[1])?;
            let d = g.sub(s, v[2])?;
            let m = g.mul(d, v[0])?;
            g.div(m, v[2])
        }))
    }))?;
    push("scale/add_scalar/clamp", run_case(seeds, true, |rng| {
        let n = rng.gen_range(1..10);
        (vec![rand_tensor(rng, &[n])], Box::new(|g, v| {
            let s = g.scale(v[0], 2.5);
            let a = g.rsub_scalar(0.3, s);
            // bounds wide enough that no coordinate sits on a kink
            Ok(g.clamp(a, -10.0, 10.0))
        }))
    }))?;
    push("add_bias", run_case(seeds, true, |rng| {
        let (m, n) = (rng.gen_range(1..5), rng.gen_range(1..5));
        (vec![rand_tensor(rng, &[m, n]), rand_tensor(rng, &[n])], Box::new(|g, v| g.add_bias(v[0], v[1])))
    }))?;
    push("max_of", run_case(seeds, true, |rng| {
        let n = rng.gen_range(1..8);
        let k = rng.gen_range(1..5);
        let inputs = (0..k).map(|_| rand_tensor(rng, &[n])).collect();
        (inputs, Box::new(|g, v| g.max_of(v)))
    }))?;
    push("max_pool2d", run_case(seeds, true, |rng| {
        let (b, c) = (rng.gen_range(1..3), rng.gen_range(1..3));
        let h = 2 * rng.gen_range(1..4);
        (vec![rand_tensor(rng, &[b, c, h, h + 2])], Box::new(|g, v| g.max_pool2d(v[0], 2)))
    }))?;
    push("upsample_nearest", run_case(seeds, true, |rng| {
        let f = rng.gen_range(1..5);
        let h = rng.gen_range(1..4);
        (vec![rand_tensor(rng, &[2, h, h + 1])], Box::new(move |g, v| g.upsample_nearest(v[0], f)))
    }))?;
    push("upsample_bilinear", run_case(seeds, true, |rng| {
        let f = rng.gen_range(1..5);
        let h = rng.gen_range(1..4);
        (vec![rand_tensor(rng, &[1, 2, h + 1, h])], Box::new(move |g, v| g.upsample_bilinear(v[0], f)))
    }))?;
    push("batch_norm train", run_case(seeds, true, |rng| {
        let (b, c) = (rng.gen_range(2..4), rng.gen_range(1..4));
        let h = rng.gen_range(1..4);
        let inputs = vec![rand_tensor(rng, &[b, c, h, h]), rand_tensor(rng, &[c]), rand_tensor(rng, &[c])];
        (inputs, Box::new(|g, v| Ok(g.batch_norm(v[0], v[1], v[2], NormMode::Train { eps: 1e-5 })?.0)))
    }))?;
    push("batch_norm eval", run_case(seeds, true, |rng| {
        let c = rng.gen_range(1..4);
        let mean: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let var: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
        let inputs = vec![rand_tensor(rng, &[2, c, 3]), rand_tensor(rng, &[c]), rand_tensor(rng, &[c])];
        (inputs, Box::new(move |g, v| {
            let mode = NormMode::Eval { mean: &mean, var: &var, eps: 1e-5 };
            Ok(g.batch_norm(v[0], v[1], v[2], mode)?.0)
        }))
    }))?;
    push("concat", run_case(seeds, true, |rng| {
        let axis = rng.gen_range(0..3);
        let mut shapes = [vec![2, 3, 2], vec![2, 3, 2]];
        shapes[1][axis] = rng.gen_range(1..4);
        let inputs = shapes.iter().map(|s| rand_tensor(rng, s)).collect();
        (inputs, Box::new(move |g, v| g.concat(v, axis)))
    }))?;
    push("narrow/reshape/transpose", run_case(seeds, true, |rng| {
        let n = rng.gen_range(2..5);
        (vec![rand_tensor(rng, &[2, n, 3])], Box::new(move |g, v| {
            let t = g.transpose(v[0])?;
            let r = g.reshape(t, &[2 * 3, n])?;
            g.narrow(r, 1, 1, n - 1)
        }))
    }))?;
    push("sum_axis/mean_axis", run_case(seeds, true, |rng| {
        let n = rng.gen_range(1..5);
        (vec![rand_tensor(rng, &[3, n, 2])], Box::new(|g, v| {
            let s = g.sum_axis(v[0], 1)?;
            let m = g.mean_axis(v[0], 2)?;
            let ms = g.mean_axis(m, 1)?;
            let ss = g.mean_axis(s, 1)?;
            g.add(ss, ms)
        }))
    }))?;
    push("gather_rows", run_case(seeds, true, |rng| {
        let n = rng.gen_range(2..6);
        let rows: Vec<usize> = (0..7).map(|_| rng.gen_range(0..n)).collect();
        (vec![rand_tensor(rng, &[n, 3])], Box::new(move |g, v| g.gather_rows(v[0], &rows)))
    }))?;
    push("mean/flatten", run_case(seeds, true, |rng| {
        let n = rng.gen_range(1..5);
        (vec![rand_tensor(rng, &[2, n, 2])], Box::new(|g, v| {
            let f = g.flatten(v[0])?;
            let sq = g.mul(f, f)?;
            let m = g.mean(sq);
            g.reshape(m, &[1])
        }))
    }))?;
    Ok(out)
}
