//! Central finite-difference checks of [`Graph`] gradients, plus a catalogue
//! of randomised instances for every differentiable operation.

use super::{Graph, Rng, Tensor, Var};
use crate::error::{arg_err, Result};

/// Builds the output of an operation from leaf handles of the inputs.
pub type BuildFn = fn(&mut Graph, &[Var]) -> Result<Var>;

/// `Σ r·f(inputs)` in f64 for a fixed projection `r`.
fn projected(build: BuildFn, inputs: &[Tensor], proj: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t)).collect();
    let out = build(&mut g, &vars)?;
    Ok(g.value(out).data().iter().zip(proj).map(|(&v, &r)| v as f64 * r).sum())
}

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between the autodiff
/// gradient `a` and the central difference `n` (step `h`) of a random
/// projection of the output, over all inputs jointly.
pub fn gradcheck(build: BuildFn, inputs: &[Tensor], h: f32, rng: &mut Rng) -> Result<f64> {
    if !(h > 0.0) {
        return Err(arg_err!("finite-difference step must be positive"));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let out = build(&mut g, &vars)?;
    let n_out = g.value(out).numel();
    let proj: Vec<f64> = (0..n_out).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let pt = Tensor::from_vec(g.value(out).shape(), proj.iter().map(|&v| v as f32).collect())?;
    let pv = g.constant(&pt);
    let weighted = g.mul(out, pv)?;
    let loss = g.sum(weighted);
    g.backward(loss)?;

    let (mut diff2, mut a2, mut n2) = (0.0f64, 0.0f64, 0.0f64);
    for (i, &v) in vars.iter().enumerate() {
        let analytic = g.grad(v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            // the perturbation actually applied after f32 rounding
            let step = plus[i].data()[j] as f64 - minus[i].data()[j] as f64;
            let numeric = (projected(build, &plus, &proj)? - projected(build, &minus, &proj)?) / step;
            let a = analytic[j] as f64;
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
    }
    let scale = a2.sqrt().max(n2.sqrt());
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(diff2.sqrt() / scale)
}

/// One differentiable operation with a random instance generator.
pub struct OpCase {
    pub name: &'static str,
    /// Random inputs and the finite-difference step suited to them.
    pub make: fn(&mut Rng) -> Result<(Vec<Tensor>, f32)>,
    pub build: BuildFn,
}

fn randn(rng: &mut Rng, shape: &[usize]) -> Result<Tensor> {
    Tensor::randn(shape, rng, 1.0)
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform_range(lo, hi) as f32).collect())
}

/// Values at least `gap` away from every point in `kinks`.
fn away_from(rng: &mut Rng, shape: &[usize], kinks: &[f64], gap: f64) -> Result<Tensor> {
    let n = shape.iter().product();
    let mut v = Vec::with_capacity(n);
    while v.len() < n {
        let x = rng.uniform_range(-2.0, 2.0);
        if kinks.iter().all(|k| (x - k).abs() > gap) {
            v.push(x as f32);
        }
    }
    Tensor::from_vec(shape, v)
}

fn small_shape(rng: &mut Rng) -> Vec<usize> {
    vec![rng.int_range(1, 2) as usize, rng.int_range(1, 3) as usize, rng.int_range(2, 4) as usize, rng.int_range(2, 4) as usize]
}

fn image(rng: &mut Rng, factor: usize) -> Vec<usize> {
    let h = factor * rng.int_range(1, 3) as usize;
    let w = factor * rng.int_range(1, 3) as usize;
    vec![rng.int_range(1, 2) as usize, rng.int_range(1, 3) as usize, h, w]
}

fn pair_same(rng: &mut Rng) -> Result<(Vec<Tensor>, f32)> {
    let s = small_shape(rng);
    Ok((vec![randn(rng, &s)?, randn(rng, &s)?], 1e-2))
}

fn single(rng: &mut Rng) -> Result<(Vec<Tensor>, f32)> {
    let s = small_shape(rng);
    Ok((vec![randn(rng, &s)?], 1e-2))
}

fn scalar_left(rng: &mut Rng) -> Result<(Vec<Tensor>, f32)> {
    let s = small_shape(rng);
    Ok((vec![randn(rng, &[1])?, randn(rng, &s)?], 1e-2))
}

fn scalar_right(rng: &mut Rng) -> Result<(Vec<Tensor>, f32)> {
    let s = small_shape(rng);
    Ok((vec![randn(rng, &s)?, randn(rng, &[1])?], 1e-2))
}

fn divisor(rng: &mut Rng) -> Result<(Vec<Tensor>, f32)> {
    let s = small_shape(rng);
    let mut d = uniform(rng, &s, 0.5, 2.0)?;
    for (i, v) in d.data_mut().iter_mut().enumerate() {
        if i % 2 == 1 {
            *v = -*v;
        }
    }
    Ok((vec![randn(rng, &s)?, d], 1e-3))
}

fn kinked(rng: &mut Rng) -> Result<(Vec<Tensor>, f32)> {
    let s = small_shape(rng);
    Ok((vec![away_from(rng, &s, &[0.0], 0.05)?], 1e-2))
}

fn clamp_input(rng: &mut Rng) -> Result<(Vec<Tensor>, f32)> {
    let s = small_shape(rng);
    Ok((vec![away_from(rng, &s, &[-0.5, 0.75], 0.05)?], 1e-2))
}

fn positive(rng: &mut Rng) -> Result<(Vec<Tensor>, f32)> {
    let s = small_shape(rng);
    Ok((vec![uniform(rng, &s, 0.3, 3.0)?], 1e-3))
}

fn matmul_inputs(rng: &mut Rng) -> Result<(Vec<Tensor>, f32)> {
    let (m, k, n) = (rng.int_range(1, 4) as usize, rng.int_range(1, 5) as usize, rng.int_range(1, 4) as usize);
    Ok((vec![randn(rng, &[m, k])?, randn(rng, &[k, n])?], 1e-2))
}

fn conv_inputs(rng: &mut Rng) -> Result<(Vec<Tensor>, f32)> {
    let (n, cin, cout) = (rng.int_range(1, 2) as usize, rng.int_range(1, 3) as usize, rng.int_range(1, 3) as usize);
    let hw = rng.int_range(3, 6) as usize;
    Ok((vec![randn(rng, &[n, cin, hw, hw])?, randn(rng, &[cout, cin, 3, 3])?], 1e-2))
}

fn conv_1x1_inputs(rng: &mut Rng) -> Result<(Vec<Tensor>, f32)> {
    let (cin, cout) = (rng.int_range(1, 4) as usize, rng.int_range(1, 4) as usize);
    let hw = rng.int_range(1, 4) as usize;
    Ok((vec![randn(rng, &[2, cin, hw, hw])?, randn(rng, &[cout, cin, 1, 1])?], 1e-2))
}

fn bias_inputs(rng: &mut Rng) -> Result<(Vec<Tensor>, f32)> {
    let s = small_shape(rng);
    let c = s[1];
    Ok((vec![randn(rng, &s)?, randn(rng, &[c])?], 1e-2))
}

fn table(rng: &mut Rng) -> Result<(Vec<Tensor>, f32)> {
    let d = rng.int_range(1, 6) as usize;
    Ok((vec![randn(rng, &[4, d])?], 1e-2))
}

fn concat_inputs(rng: &mut Rng) -> Result<(Vec<Tensor>, f32)> {
    let (n, h, w) = (rng.int_range(1, 2) as usize, rng.int_range(1, 4) as usize, rng.int_range(1, 4) as usize);
    let (ca, cb) = (rng.int_range(1, 3) as usize, rng.int_range(1, 3) as usize);
    let a = randn(rng, &[n, ca, h, w])?;
    let b = randn(rng, &[n, cb, h, w])?;
    let c = randn(rng, &[n, 1, h, w])?;
    Ok((vec![a, b, c], 1e-2))
}

fn slice_input(rng: &mut Rng) -> Result<(Vec<Tensor>, f32)> {
    let (h, w) = (rng.int_range(1, 4) as usize, rng.int_range(1, 4) as usize);
    Ok((vec![randn(rng, &[2, 4, h, w])?], 1e-2))
}

fn pool_input(rng: &mut Rng) -> Result<(Vec<Tensor>, f32)> {
    let s = image(rng, 2);
    Ok((vec![randn(rng, &s)?], 1e-2))
}

fn pool4_input(rng: &mut Rng) -> Result<(Vec<Tensor>, f32)> {
    let s = image(rng, 4);
    Ok((vec![randn(rng, &s)?], 1e-2))
}

/// Every differentiable [`Graph`] operation, including broadcast variants
/// and each convolution geometry used by the networks.
pub fn op_catalog() -> Vec<OpCase> {
    vec![
        OpCase { name: "add", make: pair_same, build: |g, v| g.add(v[0], v[1]) },
        OpCase { name: "add (scalar lhs)", make: scalar_left, build: |g, v| g.add(v[0], v[1]) },
        OpCase { name: "sub", make: pair_same, build: |g, v| g.sub(v[0], v[1]) },
        OpCase { name: "sub (scalar rhs)", make: scalar_right, build: |g, v| g.sub(v[0], v[1]) },
        OpCase { name: "mul", make: pair_same, build: |g, v| g.mul(v[0], v[1]) },
        OpCase { name: "mul (scalar rhs)", make: scalar_right, build: |g, v| g.mul(v[0], v[1]) },
        OpCase { name: "div", make: divisor, build: |g, v| g.div(v[0], v[1]) },
        OpCase { name: "add_scalar", make: single, build: |g, v| Ok(g.add_scalar(v[0], 0.7)) },
        OpCase { name: "mul_scalar", make: single, build: |g, v| Ok(g.mul_scalar(v[0], -1.3)) },
        OpCase { name: "one_minus", make: single, build: |g, v| Ok(g.one_minus(v[0])) },
        OpCase { name: "relu", make: kinked, build: |g, v| Ok(g.relu(v[0])) },
        OpCase { name: "leaky_relu", make: kinked, build: |g, v| Ok(g.leaky_relu(v[0])) },
        OpCase { name: "sigmoid", make: single, build: |g, v| Ok(g.sigmoid(v[0])) },
        OpCase { name: "log", make: positive, build: |g, v| Ok(g.log(v[0])) },
        OpCase { name: "clamp", make: clamp_input, build: |g, v| Ok(g.clamp(v[0], -0.5, 0.75)) },
        OpCase { name: "matmul", make: matmul_inputs, build: |g, v| g.matmul(v[0], v[1]) },
        OpCase { name: "conv2d 3x3 s1 p1", make: conv_inputs, build: |g, v| g.conv2d(v[0], v[1], 1, 1) },
        OpCase { name: "conv2d 3x3 s2 p1", make: conv_inputs, build: |g, v| g.conv2d(v[0], v[1], 2, 1) },
        OpCase { name: "conv2d 3x3 s1 p0", make: conv_inputs, build: |g, v| g.conv2d(v[0], v[1], 1, 0) },
        OpCase { name: "conv2d 1x1", make: conv_1x1_inputs, build: |g, v| g.conv2d(v[0], v[1], 1, 0) },
        OpCase { name: "add_channel_bias", make: bias_inputs, build: |g, v| g.add_channel_bias(v[0], v[1]) },
        OpCase { name: "select_row", make: table, build: |g, v| g.select_row(v[0], 2) },
        OpCase { name: "sum", make: single, build: |g, v| Ok(g.sum(v[0])) },
        OpCase { name: "mean", make: single, build: |g, v| Ok(g.mean(v[0])) },
        OpCase { name: "mse", make: pair_same, build: |g, v| g.mse(v[0], v[1]) },
        OpCase { name: "mean_per_sample", make: single, build: |g, v| g.mean_per_sample(v[0]) },
        OpCase { name: "concat_channels", make: concat_inputs, build: |g, v| g.concat_channels(v) },
        OpCase { name: "slice_channels", make: slice_input, build: |g, v| g.slice_channels(v[0], 1, 2) },
        OpCase { name: "upsample_nearest x2", make: single, build: |g, v| g.upsample_nearest(v[0], 2) },
        OpCase { name: "upsample_nearest x4", make: single, build: |g, v| g.upsample_nearest(v[0], 4) },
        OpCase { name: "avg_pool /2", make: pool_input, build: |g, v| g.avg_pool(v[0], 2) },
        OpCase { name: "avg_pool /4", make: pool4_input, build: |g, v| g.avg_pool(v[0], 4) },
    ]
}
