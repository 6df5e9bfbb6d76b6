use super::{ArchSpec, Bound, ConvLayer, ParamSet, RELU_GAIN};
use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Graph, Rng, Tensor, Var};

/// Scores are clamped to `(SCORE_EPS, 1 - SCORE_EPS)`.
pub const SCORE_EPS: f32 = 1e-6;

/// Four stride-2 convs with leaky ReLU, a 1×1 head, global mean and sigmoid.
/// Produces one realness score per batch element.
#[derive(Debug, Clone)]
pub struct Discriminator {
    spec: ArchSpec,
    params: ParamSet,
    convs: Vec<ConvLayer>,
    head: ConvLayer,
}

impl Discriminator {
    pub fn new(spec: ArchSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        if spec.out_channels != 1 {
            return Err(arg_err!("discriminator emits one score channel"));
        }
        let w = spec.width;
        let chans = [spec.in_channels, w, 2 * w, 2 * w, 2 * w];
        let mut p = ParamSet::default();
        let convs = (0..4)
            .map(|i| ConvLayer::init(&mut p, &format!("conv{i}"), chans[i], chans[i + 1], 3, 2, RELU_GAIN, rng))
            .collect();
        let head = ConvLayer::init(&mut p, "head", 2 * w, 1, 1, 1, 0.0, rng);
        Ok(Self { spec, params: p, convs, head })
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

    pub fn forward(&self, g: &mut Graph, b: &Bound, img: Var) -> Result<Var> {
        let s = g.value(img).shape().to_vec();
        if s.len() != 4 || s[1] != self.spec.in_channels || s[2] != self.spec.in_res || s[3] != self.spec.in_res {
            return Err(shape_err!(
                "discriminator expects (N,{},{},{}), got {s:?}",
                self.spec.in_channels,
                self.spec.in_res,
                self.spec.in_res
            ));
        }
        let mut h = img;
        for c in &self.convs {
            h = c.apply(g, b, h)?;
            h = g.leaky_relu(h);
        }
        let logits = self.head.apply(g, b, h)?;
        let logit = g.mean_per_sample(logits)?;
        let p = g.sigmoid(logit);
        Ok(g.clamp(p, SCORE_EPS, 1.0 - SCORE_EPS))
    }

    pub fn score(&self, img: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g);
        let x = g.constant(img);
        let s = self.forward(&mut g, &b, x)?;
        Ok(g.value(s).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::AdamState;

    #[test]
    fn fresh_scores_are_one_half() {
        let mut rng = Rng::new(0);
        let d = Discriminator::new(ArchSpec::discriminator(3, 16), &mut rng).unwrap();
        let x = Tensor::randn(&[3, 3, 16, 16], &mut rng, 1.0).unwrap();
        let s = d.score(&x).unwrap();
        assert_eq!(s.shape(), &[3]);
        assert!(s.data().iter().all(|&v| v == 0.5));
        assert!(d.score(&Tensor::zeros(&[1, 3, 32, 32])).is_err());
    }

    #[test]
    fn extreme_inputs_stay_clamped() {
        let mut rng = Rng::new(1);
        let mut d = Discriminator::new(ArchSpec::discriminator(1, 16), &mut rng).unwrap();
        for t in d.params_mut().tensors_mut() {
            for v in t.data_mut() {
                *v = if *v == 0.0 { 0.5 } else { *v * 3.0 };
            }
        }
        for fill in [1e6f32, -1e6] {
            let s = d.score(&Tensor::full(&[2, 1, 16, 16], fill)).unwrap();
            for &v in s.data() {
                assert!(v >= SCORE_EPS && v <= 1.0 - SCORE_EPS && v > 0.0 && v < 1.0, "{v}");
            }
        }
    }

    #[test]
    fn learns_to_separate_constant_images() {
        let mut rng = Rng::new(2);
        let mut d = Discriminator::new(ArchSpec::discriminator(1, 16), &mut rng).unwrap();
        let mut adam = AdamState::new(d.params().tensors());
        let real = Tensor::zeros(&[4, 1, 16, 16]);
        let fake = Tensor::full(&[4, 1, 16, 16], 1.0);
        for _ in 0..200 {
            let mut g = Graph::new();
            let b = d.params().bind(&mut g);
            let r = g.constant(&real);
            let f = g.constant(&fake);
            let sr = d.forward(&mut g, &b, r).unwrap();
            let sf = d.forward(&mut g, &b, f).unwrap();
            // minimise log(1 - D(real)) + log(D(fake))
            let one_minus = g.one_minus(sr);
            let lr = g.log(one_minus);
            let lf = g.log(sf);
            let a = g.mean(lr);
            let c = g.mean(lf);
            let loss = g.add(a, c).unwrap();
            g.backward(loss).unwrap();
            d.params_mut().collect_grads(&g, &b);
            adam.step(d.params_mut().tensors_mut(), 1e-3).unwrap();
        }
        let gap = d.score(&real).unwrap().mean() - d.score(&fake).unwrap().mean();
        assert!(gap > 0.8, "score gap {gap}");
    }
}
