use std::sync::atomic::{AtomicU64, Ordering};

use super::{ArchSpec, Bound, ConvLayer, ParamSet, RELU_GAIN};
use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Graph, Rng, Tensor, Var};

/// Tiny conditional U-Net shared by teacher, student and learnable downsampler.
///
/// Layout at width `w`: stem (w) with a learned per-timestep bias, two
/// stride-2 down blocks (2w), a bottleneck, then either two up blocks
/// (nearest 2× + conv, additive encoder skips) back to the input resolution,
/// or none when the network maps HR to LR. A zero-initialised head makes the
/// untrained network return its residual skip exactly:
/// - same resolution: channels `skip_offset..skip_offset+out` of the input
/// - 4× down: 4×4 average pool of the first `out` input channels
#[derive(Debug)]
pub struct UNet {
    spec: ArchSpec,
    params: ParamSet,
    stem: ConvLayer,
    temb: usize,
    down1: ConvLayer,
    down2: ConvLayer,
    mid: ConvLayer,
    ups: Vec<ConvLayer>,
    head: ConvLayer,
    calls: AtomicU64,
}

impl Clone for UNet {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec,
            params: self.params.clone(),
            stem: self.stem,
            temb: self.temb,
            down1: self.down1,
            down2: self.down2,
            mid: self.mid,
            ups: self.ups.clone(),
            head: self.head,
            calls: AtomicU64::new(self.calls()),
        }
    }
}

impl UNet {
    pub fn new(spec: ArchSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let same_res = spec.out_res == spec.in_res;
        if !same_res && spec.out_res * 4 != spec.in_res {
            return Err(arg_err!(
                "U-Net output resolution must equal the input or a quarter of it, got {} -> {}",
                spec.in_res,
                spec.out_res
            ));
        }
        if spec.timesteps == 0 {
            return Err(arg_err!("U-Net needs at least one timestep"));
        }
        if same_res && spec.skip_offset + spec.out_channels > spec.in_channels {
            return Err(arg_err!("skip channels exceed input channels"));
        }
        if !same_res && spec.out_channels > spec.in_channels {
            return Err(arg_err!("skip channels exceed input channels"));
        }
        let w = spec.width;
        let mut p = ParamSet::default();
        let stem = ConvLayer::init(&mut p, "stem", spec.in_channels, w, 3, 1, RELU_GAIN, rng);
        let temb = p.push("temb", Tensor::zeros(&[spec.timesteps + 1, w]));
        let down1 = ConvLayer::init(&mut p, "down1", w, 2 * w, 3, 2, RELU_GAIN, rng);
        let down2 = ConvLayer::init(&mut p, "down2", 2 * w, 2 * w, 3, 2, RELU_GAIN, rng);
        let mid = ConvLayer::init(&mut p, "mid", 2 * w, 2 * w, 3, 1, RELU_GAIN, rng);
        let (ups, head_in) = if same_res {
            let up1 = ConvLayer::init(&mut p, "up1", 2 * w, 2 * w, 3, 1, RELU_GAIN, rng);
            let up2 = ConvLayer::init(&mut p, "up2", 2 * w, w, 3, 1, RELU_GAIN, rng);
            (vec![up1, up2], w)
        } else {
            (Vec::new(), 2 * w)
        };
        let head = ConvLayer::init(&mut p, "head", head_in, spec.out_channels, 3, 1, 0.0, rng);
        Ok(Self { spec, params: p, stem, temb, down1, down2, mid, ups, head, calls: AtomicU64::new(0) })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Number of forward evaluations since construction or the last reset.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    fn skip(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let out = self.spec.out_channels;
        if self.ups.is_empty() {
            let first = g.slice_channels(x, 0, out)?;
            g.avg_pool(first, 4)
        } else {
            g.slice_channels(x, self.spec.skip_offset, out)
        }
    }

    /// Records one forward pass; `b` must come from binding [`Self::params`].
    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var, t: usize) -> Result<Var> {
        let s = g.value(x).shape().to_vec();
        if s.len() != 4 || s[1] != self.spec.in_channels || s[2] != self.spec.in_res || s[3] != self.spec.in_res {
            return Err(shape_err!(
                "U-Net expects (N,{},{},{}), got {s:?}",
                self.spec.in_channels,
                self.spec.in_res,
                self.spec.in_res
            ));
        }
        if t > self.spec.timesteps {
            return Err(arg_err!("timestep {t} outside 0..={}", self.spec.timesteps));
        }
        self.calls.fetch_add(1, Ordering::Relaxed);

        let h0 = self.stem.apply(g, b, x)?;
        let emb = g.select_row(b.get(self.temb), t)?;
        let h0 = g.add_channel_bias(h0, emb)?;
        let h0 = g.leaky_relu(h0);
        let h1 = self.down1.apply(g, b, h0)?;
        let h1 = g.leaky_relu(h1);
        let h2 = self.down2.apply(g, b, h1)?;
        let h2 = g.leaky_relu(h2);
        let m = self.mid.apply(g, b, h2)?;
        let mut h = g.leaky_relu(m);
        if let [up1, up2] = self.ups.as_slice() {
            let u = g.upsample_nearest(h, 2)?;
            let u = up1.apply(g, b, u)?;
            let u = g.leaky_relu(u);
            let u1 = g.add(u, h1)?;
            let u = g.upsample_nearest(u1, 2)?;
            let u = up2.apply(g, b, u)?;
            let u = g.leaky_relu(u);
            h = g.add(u, h0)?;
        }
        let residual = self.head.apply(g, b, h)?;
        let skip = self.skip(g, x)?;
        g.add(residual, skip)
    }

    /// Gradient-free forward on plain tensors.
    pub fn predict(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g);
        let xv = g.constant(x);
        let out = self.forward(&mut g, &b, xv, t)?;
        Ok(g.value(out).clone())
    }

    /// Copy of this network restricted to one timestep: the new step 1 reuses
    /// the embedding this network learned for its last step T.
    pub fn one_step_copy(&self) -> Result<UNet> {
        let spec = ArchSpec { timesteps: 1, ..self.spec };
        let mut net = UNet::new(spec, &mut Rng::new(0))?;
        let w = self.spec.width;
        let last = self.spec.timesteps;
        debug_assert_eq!(net.params.names(), self.params.names());
        for (i, (dst, src)) in net.params.tensors_mut().iter_mut().zip(self.params.tensors()).enumerate() {
            if i == self.temb {
                dst.data_mut()[..w].copy_from_slice(&src.data()[..w]);
                dst.data_mut()[w..].copy_from_slice(&src.data()[last * w..(last + 1) * w]);
            } else {
                dst.data_mut().copy_from_slice(src.data());
            }
        }
        Ok(net)
    }
}
