use super::mlp::{Gradients, Layer, MlpNet};

pub const RMSPROP_DECAY: f64 = 0.99;
pub const RMSPROP_EPS: f64 = 1e-8;

/// RMSprop with a per-parameter running mean of squared gradients:
/// `v <- 0.99 v + 0.01 g^2`, `p <- p - lr g / (sqrt(v) + 1e-8)`.
#[derive(Clone, Debug)]
pub struct Rmsprop {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    square_avg: Vec<Layer>,
}

impl Rmsprop {
    pub fn new(net: &MlpNet, lr: f64) -> Self {
        let square_avg = Gradients::zeros_like(net).layers;
        Self { lr, decay: RMSPROP_DECAY, eps: RMSPROP_EPS, square_avg }
    }

    /// Descends along `grads`.
    pub fn step(&mut self, net: &mut MlpNet, grads: &Gradients) {
        let (decay, eps, lr) = (self.decay, self.eps, self.lr);
        for ((layer, g), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.square_avg) {
            ndarray::Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut v.weights)
                .for_each(|p, &g, v| update(p, g, v, decay, eps, lr));
            ndarray::Zip::from(&mut layer.biases)
                .and(&g.biases)
                .and(&mut v.biases)
                .for_each(|p, &g, v| update(p, g, v, decay, eps, lr));
        }
    }

    pub fn square_avg(&self) -> impl Iterator<Item = f64> + '_ {
        self.square_avg.iter().flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
    }
}

#[inline]
fn update(p: &mut f64, g: f64, v: &mut f64, decay: f64, eps: f64, lr: f64) {
    *v = decay * *v + (1.0 - decay) * g * g;
    *p -= lr * g / (v.sqrt() + eps);
}
