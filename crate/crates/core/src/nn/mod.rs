//! Network architectures: the shared conditional U-Net backbone, the plain
//! convolutional downsampler and the convolutional discriminator.

mod conv_down;
mod discriminator;
mod unet;

pub use conv_down::ConvDownsampler;
pub use discriminator::{Discriminator, SCORE_EPS};
pub use unet::UNet;

use crate::error::{arg_err, Result};
use crate::tensor::{Graph, Rng, Tensor, Var};

/// Layer geometry shared by all networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub width: usize,
    pub in_res: usize,
    pub out_res: usize,
    /// Largest timestep index; the embedding table has `timesteps + 1` rows.
    pub timesteps: usize,
    /// First input channel of the identity skip (same-resolution nets only).
    pub skip_offset: usize,
}

pub const DEFAULT_WIDTH: usize = 16;

impl ArchSpec {
    /// SR backbone: input is concat(x_t, y↑) with `channels` each, output x̂_0.
    pub fn super_resolution(channels: usize, res: usize, timesteps: usize) -> Self {
        Self {
            in_channels: 2 * channels,
            out_channels: channels,
            width: DEFAULT_WIDTH,
            in_res: res,
            out_res: res,
            timesteps,
            skip_offset: channels,
        }
    }

    /// Learnable downsampler: input is concat(x̂, ε′) at HR, output LR.
    pub fn downsampler(channels: usize, hr_res: usize) -> Self {
        Self {
            in_channels: 2 * channels,
            out_channels: channels,
            width: DEFAULT_WIDTH,
            in_res: hr_res,
            out_res: hr_res / 4,
            timesteps: 1,
            skip_offset: 0,
        }
    }

    pub fn discriminator(channels: usize, res: usize) -> Self {
        Self {
            in_channels: channels,
            out_channels: 1,
            width: DEFAULT_WIDTH,
            in_res: res,
            out_res: 1,
            timesteps: 0,
            skip_offset: 0,
        }
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.width = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pow2 = |r: usize| r >= 8 && r.is_power_of_two();
        if self.in_channels == 0 || self.out_channels == 0 || self.width == 0 {
            return Err(arg_err!("channels and width must be >= 1: {self:?}"));
        }
        if !pow2(self.in_res) {
            return Err(arg_err!("input resolution {} must be a power of two >= 8", self.in_res));
        }
        Ok(())
    }

    /// Stored as f32 values so checkpoints can rebuild the network.
    pub fn to_values(&self) -> Vec<f32> {
        [
            self.in_channels,
            self.out_channels,
            self.width,
            self.in_res,
            self.out_res,
            self.timesteps,
            self.skip_offset,
        ]
        .iter()
        .map(|&v| v as f32)
        .collect()
    }

    pub fn from_values(v: &[f32]) -> Result<Self> {
        if v.len() != 7 || v.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
            return Err(arg_err!("malformed architecture record {v:?}"));
        }
        let u = |i: usize| v[i] as usize;
        Ok(Self {
            in_channels: u(0),
            out_channels: u(1),
            width: u(2),
            in_res: u(3),
            out_res: u(4),
            timesteps: u(5),
            skip_offset: u(6),
        })
    }
}

/// Named, ordered parameter tensors of one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Graph handles for a [`ParamSet`], in the same order.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn get(&self, i: usize) -> Var {
        self.0[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t.with_grad());
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter as a gradient-tracking leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.tensors.iter().map(|t| g.param(t)).collect())
    }

    /// Records every parameter as a constant (frozen network).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound(self.tensors.iter().map(|t| g.constant(t)).collect())
    }

    /// Adds the graph's gradients onto each parameter's `grad` buffer.
    /// Parameters the root never reached receive an explicit zero gradient.
    pub fn collect_grads(&mut self, g: &Graph, bound: &Bound) {
        for (t, &v) in self.tensors.iter_mut().zip(&bound.0) {
            let n = t.numel();
            let buf = t.grad.get_or_insert_with(|| vec![0.0; n]);
            if let Some(d) = g.grad(v) {
                buf.iter_mut().zip(d).for_each(|(b, x)| *b += x);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.grad = None);
    }

    /// Bit-level fingerprint of all parameter values (FNV-1a).
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tensors {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Replaces values from `(name, tensor)` pairs; names and shapes must match.
    pub fn load_values(&mut self, source: &ParamSet) -> Result<()> {
        if source.names != self.names {
            return Err(arg_err!("parameter names differ from the architecture"));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&source.tensors) {
            if dst.shape() != src.shape() {
                return Err(arg_err!("parameter shape {:?} != {:?}", src.shape(), dst.shape()));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

/// Convolution layer referencing its kernel and bias in a [`ParamSet`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvLayer {
    kernel: usize,
    bias: usize,
    stride: usize,
    pad: usize,
}

impl ConvLayer {
    /// Kaiming fan-in Gaussian kernel (`gain`), zero bias. `gain == 0` gives a zero layer.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn init(
        params: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        gain: f32,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = (cin * k * k) as f32;
        let std = gain / fan_in.sqrt();
        let w = Tensor::randn(&[cout, cin, k, k], rng, std).expect("valid conv shape");
        let kernel = params.push(format!("{name}.weight"), w);
        let bias = params.push(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self { kernel, bias, stride, pad: k / 2 }
    }

    pub(crate) fn apply(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        let y = g.conv2d(x, b.get(self.kernel), self.stride, self.pad)?;
        g.add_channel_bias(y, b.get(self.bias))
    }
}

pub(crate) const RELU_GAIN: f32 = std::f32::consts::SQRT_2;

/// Channel concatenation (N,Ca,H,W) ++ (N,Cb,H,W) -> (N,Ca+Cb,H,W).
pub fn concat_channels(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    g.concat_channels(&[a, b])
}
