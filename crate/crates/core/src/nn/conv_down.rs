use super::{Bound, ConvLayer, ParamSet, RELU_GAIN};
use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Graph, Rng, Var};

/// Plain 3-layer convolutional 4× downsampler (no noise input), the
/// conv-based arm of the downsampler ablation. Residual on a 4×4 average
/// pool with a zero-initialised last layer.
#[derive(Debug, Clone)]
pub struct ConvDownsampler {
    channels: usize,
    hr_res: usize,
    params: ParamSet,
    layers: [ConvLayer; 3],
}

impl ConvDownsampler {
    pub fn new(channels: usize, hr_res: usize, width: usize, rng: &mut Rng) -> Result<Self> {
        if channels == 0 || width == 0 || hr_res < 8 || !hr_res.is_power_of_two() {
            return Err(arg_err!("invalid conv downsampler geometry c={channels} res={hr_res} w={width}"));
        }
        let mut p = ParamSet::default();
        let layers = [
            ConvLayer::init(&mut p, "conv0", channels, width, 3, 2, RELU_GAIN, rng),
            ConvLayer::init(&mut p, "conv1", width, width, 3, 2, RELU_GAIN, rng),
            ConvLayer::init(&mut p, "conv2", width, channels, 3, 1, 0.0, rng),
        ];
        Ok(Self { channels, hr_res, params: p, layers })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hr_res(&self) -> usize {
        self.hr_res
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        let s = g.value(x).shape();
        if s.len() != 4 || s[1] != self.channels || s[2] != self.hr_res || s[3] != self.hr_res {
            return Err(shape_err!("conv downsampler expects (N,{},{r},{r}), got {s:?}", self.channels, r = self.hr_res));
        }
        let h = self.layers[0].apply(g, b, x)?;
        let h = g.leaky_relu(h);
        let h = self.layers[1].apply(g, b, h)?;
        let h = g.leaky_relu(h);
        let r = self.layers[2].apply(g, b, h)?;
        let skip = g.avg_pool(x, 4)?;
        g.add(r, skip)
    }
}
