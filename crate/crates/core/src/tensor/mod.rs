//! Dense f32 tensors, a define-by-run autodiff tape and the Adam optimizer.

mod adam;
pub mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod rng;

pub use adam::AdamState;
pub use graph::{Elementwise, Graph, Var, LEAKY_SLOPE};
pub use rng::{derive_seed, splitmix64, Rng};

use crate::error::{arg_err, shape_err, Result};

/// Row-major f32 array. Image tensors use (N, C, H, W) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f32>>,
}

/// Initial contents for [`Tensor::new`].
pub enum Fill {
    Constant(f32),
    Values(Vec<f32>),
}

impl Tensor {
    pub fn new(shape: &[usize], fill: Fill) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(shape_err!("dimensions must all be >= 1, got {shape:?}"));
        }
        let n: usize = shape.iter().product();
        let data = match fill {
            Fill::Constant(v) => vec![v; n],
            Fill::Values(v) => {
                if v.len() != n {
                    return Err(shape_err!(
                        "shape {shape:?} holds {n} values but {} were given",
                        v.len()
                    ));
                }
                v
            }
        };
        Ok(Self { shape: shape.to_vec(), data, requires_grad: false, grad: None })
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        Self::new(shape, Fill::Values(data))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, Fill::Constant(0.0)).expect("zeros: invalid shape")
    }

    pub fn full(shape: &[usize], v: f32) -> Self {
        Self::new(shape, Fill::Constant(v)).expect("full: invalid shape")
    }

    pub fn scalar(v: f32) -> Self {
        Self { shape: vec![1], data: vec![v], requires_grad: false, grad: None }
    }

    /// i.i.d. N(0, sigma^2) entries drawn from `rng`.
    pub fn randn(shape: &[usize], rng: &mut Rng, sigma: f32) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(arg_err!("sigma must be >= 0, got {sigma}"));
        }
        let mut t = Self::new(shape, Fill::Constant(0.0))?;
        for v in t.data.iter_mut() {
            *v = (rng.normal() * sigma as f64) as f32;
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(shape_err!("cannot reshape {:?} to {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), n);
        }
        Ok(self)
    }

    pub fn item(&self) -> f32 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(shape_err!("shape mismatch {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            requires_grad: false,
            grad: None,
        })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Image `index` of a (N, C, H, W) batch as a (C, H, W) tensor.
    pub fn batch_item(&self, index: usize) -> Result<Tensor> {
        if self.shape.len() != 4 || index >= self.shape[0] {
            return Err(shape_err!("batch_item({index}) on shape {:?}", self.shape));
        }
        let per: usize = self.shape[1..].iter().product();
        Tensor::from_vec(&self.shape[1..], self.data[index * per..(index + 1) * per].to_vec())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| shape_err!("stack of zero tensors"))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(shape_err!("stack shape mismatch {:?} vs {:?}", t.shape, first.shape));
            }
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(&shape, data)
    }

    /// Nearest-neighbour upsampling of a (N,C,H,W) tensor.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        let v = graph::upsample_nearest(&self.data, n * c, h, w, factor);
        Tensor::from_vec(&[n, c, h * factor, w * factor], v)
    }

    /// Block-average downsampling of a (N,C,H,W) tensor.
    pub fn avg_pool(&self, factor: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(shape_err!("avg_pool factor {factor} does not divide {h}x{w}"));
        }
        let v = graph::avg_pool(&self.data, n * c, h, w, factor);
        Tensor::from_vec(&[n, c, h / factor, w / factor], v)
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape {
            [n, c, h, w] => Ok((n, c, h, w)),
            ref s => Err(shape_err!("expected (N,C,H,W), got {s:?}")),
        }
    }

    /// Drops the autodiff metadata, keeping only shape and values.
    pub fn detached(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.clone(), requires_grad: false, grad: None }
    }
}

pub(crate) fn same_shape(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(shape_err!("{what}: shape mismatch {a:?} vs {b:?}"));
    }
    Ok(())
}
