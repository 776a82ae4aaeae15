use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Tanh => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Sigmoid,
            3 => Activation::Tanh,
            _ => return None,
        })
    }

    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => z.mapv_inplace(|x| x.max(0.0)),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Multiplies `grad` in place by the derivative, given pre- and post-activation values.
    fn chain(self, grad: &mut Array2<f64>, pre: &Array2<f64>, post: &Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => ndarray::Zip::from(grad).and(pre).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Sigmoid => ndarray::Zip::from(grad).and(post).for_each(|g, &y| *g *= y * (1.0 - y)),
            Activation::Tanh => ndarray::Zip::from(grad).and(post).for_each(|g, &y| *g *= 1.0 - y * y),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Affine layer; `weights` is `in x out` so a batch is `x.dot(&weights)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weights: Array2::zeros((fan_in, fan_out)), biases: Array1::zeros(fan_out) }
    }
}

/// Dense network: rectifier on hidden layers, configurable output activation.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpNet {
    pub layers: Vec<Layer>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Per-layer inputs and pre/post activations from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    /// Output-layer pre-activations.
    pub fn logits(&self) -> &Array2<f64> {
        self.pre.last().expect("at least one layer")
    }

    pub fn batch(&self) -> usize {
        self.output.nrows()
    }
}

/// Gradients shaped like the network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &MlpNet) -> Self {
        Self { layers: net.layers.iter().map(|l| Layer::zeros(l.weights.nrows(), l.weights.ncols())).collect() }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights *= k;
            l.biases *= k;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.biases += &b.biases;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|&g| g == 0.0)
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter());
        out.extend(l.biases.iter());
    }
    out
}

impl MlpNet {
    /// Uniform init in +-sqrt(6 / (fan_in + fan_out)); zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], output: Activation, rng: &mut R) -> Self {
        let mut net = Self::zeros(dims, output);
        for l in &mut net.layers {
            let (fan_in, fan_out) = l.weights.dim();
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            l.weights.mapv_inplace(|_| rng.gen_range(-bound..=bound));
        }
        net
    }

    pub fn zeros(dims: &[usize], output: Activation) -> Self {
        assert!(dims.len() >= 2, "a network needs input and output sizes");
        let layers = dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Self { layers, hidden: Activation::Relu, output }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weights.ncols()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weights.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch { expected: self.num_params(), got: flat.len() });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.biases.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|w| w.is_finite()) && l.biases.iter().all(|b| b.is_finite()))
    }

    /// Forward pass over a batch (one row per sample).
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.weights) + &l.biases;
            let mut a = z.clone();
            if i + 1 == n {
                self.output.apply(&mut a);
            } else {
                self.hidden.apply(&mut a);
            }
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        Ok(ForwardCache { inputs, pre, output: h })
    }

    /// Single-sample forward returning only the output.
    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        Ok(self.forward(view)?.output.into_raw_vec_and_offset().0)
    }

    /// Reverse-mode gradients given dLoss/dOutput. Returns parameter gradients
    /// and dLoss/dInput.
    pub fn backward(&self, cache: &ForwardCache, grad_output: ArrayView2<'_, f64>) -> Result<(Gradients, Array2<f64>)> {
        self.check_cache(cache, grad_output)?;
        let mut g = grad_output.to_owned();
        let last = self.layers.len() - 1;
        self.output.chain(&mut g, &cache.pre[last], &cache.output);
        Ok(self.backprop_from(cache, g))
    }

    /// Same as [`backward`](Self::backward) but the incoming gradient is
    /// taken with respect to the output-layer pre-activations.
    pub fn backward_from_logits(
        &self,
        cache: &ForwardCache,
        grad_logits: ArrayView2<'_, f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        self.check_cache(cache, grad_logits)?;
        Ok(self.backprop_from(cache, grad_logits.to_owned()))
    }

    fn check_cache(&self, cache: &ForwardCache, grad: ArrayView2<'_, f64>) -> Result<()> {
        if cache.pre.len() != self.layers.len() {
            return Err(Error::StaleCache(format!("{} layers cached, {} in net", cache.pre.len(), self.layers.len())));
        }
        for (i, (l, z)) in self.layers.iter().zip(&cache.pre).enumerate() {
            if z.ncols() != l.weights.ncols() || cache.inputs[i].ncols() != l.weights.nrows() {
                return Err(Error::StaleCache(format!("layer {i} shape differs")));
            }
        }
        if grad.dim() != cache.output.dim() {
            return Err(Error::StaleCache(format!("gradient {:?} vs output {:?}", grad.dim(), cache.output.dim())));
        }
        Ok(())
    }

    fn backprop_from(&self, cache: &ForwardCache, mut g: Array2<f64>) -> (Gradients, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let dw = cache.inputs[i].t().dot(&g);
            let db = g.sum_axis(Axis(0));
            let mut dx = g.dot(&l.weights.t());
            if i > 0 {
                // cache.inputs[i] is the post-activation of layer i-1
                self.hidden.chain(&mut dx, &cache.pre[i - 1], &cache.inputs[i]);
            }
            grads.push(Layer { weights: dw, biases: db });
            g = dx;
        }
        grads.reverse();
        (Gradients { layers: grads }, g)
    }
}

/// Stacks equal-length rows into a batch matrix.
pub fn stack_rows(rows: &[&[f64]]) -> Array2<f64> {
    let cols = rows.first().map_or(0, |r| r.len());
    let mut flat = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        assert_eq!(r.len(), cols, "ragged batch");
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), cols), flat).expect("shape checked")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::fd_gradient;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(dims: &[usize], output: Activation, seed: u64) -> MlpNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = MlpNet::new(dims, output, &mut rng);
        let params: Vec<f64> = (0..net.num_params()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        net.set_params(&params).unwrap();
        net
    }

    #[test]
    fn zero_net_with_sigmoid_outputs_half() {
        let net = MlpNet::zeros(&[5, 7, 7, 3], Activation::Sigmoid);
        assert_eq!(net.forward_vec(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = MlpNet::zeros(&[3, 3], Activation::Identity);
        net.layers[0].weights = Array2::eye(3);
        assert_eq!(net.forward_vec(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn forward_is_pure() {
        let net = random_net(&[8, 16, 16, 4], Activation::Tanh, 3);
        let x = [0.1, 0.2, -0.3, 0.4, 1.0, 0.0, -1.0, 0.5];
        assert_eq!(net.forward_vec(&x).unwrap(), net.forward_vec(&x).unwrap());
        assert!(matches!(net.forward_vec(&x[..3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for output in [Activation::Identity, Activation::Sigmoid, Activation::Tanh] {
            let net = random_net(&[8, 16, 16, 4], output, 11);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let x = Array2::from_shape_fn((3, 8), |_| rng.gen_range(-1.0..1.0));
            let w = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
            // loss = sum(w * output)
            let cache = net.forward(x.view()).unwrap();
            let (grads, dx) = net.backward(&cache, w.view()).unwrap();
            let loss = |p: &[f64]| {
                let mut n = net.clone();
                n.set_params(p).unwrap();
                (n.forward(x.view()).unwrap().output() * &w).sum()
            };
            let numeric = fd_gradient(loss, &net.params(), 1e-5);
            crate::nn::assert_grad_close(&grads.flatten(), &numeric, 1e-4);

            let loss_x = |flat: &[f64]| {
                let xx = Array2::from_shape_vec((3, 8), flat.to_vec()).unwrap();
                (net.forward(xx.view()).unwrap().output() * &w).sum()
            };
            let numeric_x = fd_gradient(loss_x, x.as_slice().unwrap(), 1e-5);
            crate::nn::assert_grad_close(dx.as_slice().unwrap(), &numeric_x, 1e-4);
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let net = random_net(&[4, 6, 6, 2], Activation::Sigmoid, 2);
        let x = Array2::from_elem((2, 4), 0.3);
        let cache = net.forward(x.view()).unwrap();
        let (grads, dx) = net.backward(&cache, Array2::zeros((2, 2)).view()).unwrap();
        assert!(grads.is_zero());
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn last_bias_gradient_is_activation_derivative() {
        // 2-2-1 net with sigmoid output: d(sum out)/d(b_last) = s(1-s)
        let mut net = MlpNet::zeros(&[2, 2, 1], Activation::Sigmoid);
        net.layers[0].weights = array![[1.0, -1.0], [0.5, 2.0]];
        net.layers[0].biases = array![0.1, -0.2];
        net.layers[1].weights = array![[0.7], [-0.3]];
        net.layers[1].biases = array![0.05];
        let x = array![[1.0, 0.5]];
        // hidden pre = [1.35, -0.2] -> relu [1.35, 0], out pre = 0.945 + 0.05
        let s = sigmoid(0.7 * 1.35 + 0.05);
        let cache = net.forward(x.view()).unwrap();
        let (grads, _) = net.backward(&cache, array![[1.0]].view()).unwrap();
        assert!((grads.layers[1].biases[0] - s * (1.0 - s)).abs() < 1e-15);
        // inactive hidden unit passes no gradient
        assert_eq!(grads.layers[0].biases[1], 0.0);
    }

    #[test]
    fn stale_cache_is_detected() {
        let a = random_net(&[4, 6, 2], Activation::Identity, 1);
        let b = random_net(&[4, 5, 2], Activation::Identity, 1);
        let cache = a.forward(Array2::zeros((1, 4)).view()).unwrap();
        assert!(matches!(b.backward(&cache, Array2::zeros((1, 2)).view()), Err(Error::StaleCache(_))));
        assert!(matches!(a.backward(&cache, Array2::zeros((2, 2)).view()), Err(Error::StaleCache(_))));
    }

    #[test]
    fn init_respects_glorot_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = MlpNet::new(&[10, 30, 5], Activation::Identity, &mut rng);
        let bound = (6.0f64 / 40.0).sqrt();
        assert!(net.layers[0].weights.iter().all(|w| w.abs() <= bound));
        assert!(net.layers[0].biases.iter().all(|&b| b == 0.0));
    }
}
