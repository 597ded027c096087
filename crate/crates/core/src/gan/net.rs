use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::dp::Sampler;
use crate::error::{Error, Result};

/// Fully connected generator: ReLU hidden layers, sigmoid output.
///
/// Parameters live in one flat vector, layer by layer: the `in × out` weight
/// matrix in row-major order followed by the `out` biases. A forward pass
/// computes `h_{l+1} = act(h_l W_l + b_l)` on row-major batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetFile", into = "NetFile")]
pub struct GeneratorNet {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Activations saved by [`GeneratorNet::forward_cached`] for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input followed by the output of every layer.
    pub activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("at least the input")
    }
}

impl GeneratorNet {
    /// All-zero parameters.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::param(format!("layer dims need >= 2 positive entries, got {dims:?}")));
        }
        let len = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self { dims: dims.to_vec(), params: vec![0.0; len] })
    }

    /// He-uniform weights for the ReLU layers, Glorot-uniform for the output
    /// layer, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        let layers = net.num_layers();
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let limit = if l + 1 == layers {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            for w in &mut net.params[offset..offset + fan_in * fan_out] {
                *w = rng.random_range(-limit..limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        if params.len() != net.params.len() {
            return Err(Error::param(format!(
                "dims {dims:?} need {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.dims.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn weights(&self, l: usize) -> ArrayView2<'_, f64> {
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let off = self.layer_offset(l);
        ArrayView2::from_shape((i, o), &self.params[off..off + i * o]).expect("sized at construction")
    }

    pub fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let off = self.layer_offset(l) + i * o;
        ArrayView1::from(&self.params[off..off + o])
    }

    pub fn forward(&self, u: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.forward_cached(u).map(|c| c.activations.into_iter().last().expect("non-empty"))
    }

    pub fn forward_cached(&self, u: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if u.ncols() != self.input_dim() {
            return Err(Error::input(format!(
                "noise has {} columns but the generator expects {}",
                u.ncols(),
                self.input_dim()
            )));
        }
        let layers = self.num_layers();
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(u.to_owned());
        for l in 0..layers {
            let mut z = activations[l].dot(&self.weights(l));
            z += &self.bias(l);
            if l + 1 == layers {
                z.mapv_inplace(sigmoid);
            } else {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Parameter gradient given `grad_out = ∂L/∂output`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let layers = self.num_layers();
        if grad_out.dim() != cache.output().dim() {
            return Err(Error::input("output gradient shape does not match the forward pass"));
        }
        let mut grad = vec![0.0; self.params.len()];
        // delta = ∂L/∂(pre-activation) of the current layer.
        let y = cache.output();
        let mut delta = &grad_out * &y.mapv(|v| v * (1.0 - v));
        for l in (0..layers).rev() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let off = self.layer_offset(l);
            let gw = cache.activations[l].t().dot(&delta);
            grad[off..off + i * o].copy_from_slice(gw.as_slice().expect("standard layout"));
            let gb = delta.sum_axis(Axis(0));
            grad[off + i * o..off + i * o + o].copy_from_slice(gb.as_slice().expect("contiguous"));
            if l > 0 {
                let mut prev = delta.dot(&self.weights(l).t());
                prev.zip_mut_with(&cache.activations[l], |d, a| {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
        }
        Ok(grad)
    }
}

pub fn generator_forward(net: &GeneratorNet, u: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    net.forward(u)
}

/// Logistic function kept strictly inside (0, 1).
fn sigmoid(z: f64) -> f64 {
    let y = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    /// `in × out`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetFile {
    layer_dims: Vec<usize>,
    layers: Vec<LayerFile>,
}

impl From<GeneratorNet> for NetFile {
    fn from(net: GeneratorNet) -> Self {
        let layers = (0..net.num_layers())
            .map(|l| LayerFile { weights: net.weights(l).iter().copied().collect(), bias: net.bias(l).to_vec() })
            .collect();
        NetFile { layer_dims: net.dims, layers }
    }
}

impl TryFrom<NetFile> for GeneratorNet {
    type Error = Error;

    fn try_from(file: NetFile) -> Result<Self> {
        if file.layers.len() + 1 != file.layer_dims.len() {
            return Err(Error::input("layer count does not match layer_dims"));
        }
        for (l, (layer, w)) in file.layers.iter().zip(file.layer_dims.windows(2)).enumerate() {
            if layer.weights.len() != w[0] * w[1] || layer.bias.len() != w[1] {
                return Err(Error::input(format!("layer {l} has the wrong number of parameters")));
            }
        }
        let params: Vec<f64> = file.layers.into_iter().flat_map(|l| l.weights.into_iter().chain(l.bias)).collect();
        GeneratorNet::from_params(&file.layer_dims, params)
    }
}

/// Noise matrix with i.i.d. `U(-1, 1)` entries.
pub fn uniform_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// A generator is a model that can only be simulated: push fresh noise through it.
impl Sampler for GeneratorNet {
    fn dim(&self) -> usize {
        self.output_dim()
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Array2<f64> {
        let u = uniform_noise(n, self.input_dim(), rng);
        self.forward(u.view()).expect("noise width matches the input layer")
    }
}
