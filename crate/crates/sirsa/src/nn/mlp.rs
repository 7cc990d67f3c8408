//! Fully-connected network with hand-rolled reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SirsaError;
use crate::Result;

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn derivative(self, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if post > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
        }
    }
}

/// One dense layer, weights row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Linear {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Linear {
    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            out.push(acc);
        }
    }
}

/// Multi-layer perceptron: `dims = [in, hidden.., out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Linear>,
    activation: Activation,
}

/// Per-parameter gradients mirroring an [`Mlp`]'s shapes.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub(crate) weight: Vec<Vec<f64>>,
    pub(crate) bias: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weight: net.layers.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weight.iter_mut().chain(self.bias.iter_mut()) {
            for x in v.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weight
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }
}

/// Forward-pass tape: layer inputs and post-activation values, kept so the
/// backward pass can run without recomputation.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// inputs[l] is the input to layer l; inputs[L] is the network output.
    inputs: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("cache holds at least the input")
    }
}

impl Mlp {
    /// Fan-in uniform initialization: `U(−1/√in, 1/√in)` for weights and biases.
    pub fn init(dims: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| {
                let (in_dim, out_dim) = (w[0], w[1]);
                let bound = 1.0 / (in_dim as f64).sqrt();
                Linear {
                    in_dim,
                    out_dim,
                    weight: (0..in_dim * out_dim)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect(),
                    bias: (0..out_dim).map(|_| rng.gen_range(-bound..bound)).collect(),
                }
            })
            .collect();
        Self { layers, activation }
    }

    /// All-zero network with the given layout.
    pub fn zeros(dims: &[usize], activation: Activation) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| Linear {
                in_dim: w[0],
                out_dim: w[1],
                weight: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Self { layers, activation }
    }

    /// Single identity layer, for tests and degenerate configurations.
    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Self {
            layers: vec![Linear {
                in_dim: dim,
                out_dim: dim,
                weight,
                bias: vec![0.0; dim],
            }],
            activation: Activation::Relu,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim).unwrap_or(0)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Shrink the final layer, e.g. for near-zero initial policy outputs.
    pub fn scale_output_layer(&mut self, factor: f64) {
        if let Some(last) = self.layers.last_mut() {
            for w in last.weight.iter_mut().chain(last.bias.iter_mut()) {
                *w *= factor;
            }
        }
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Plain evaluation without a tape.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let n_layers = self.layers.len();
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&cur, &mut next);
            if l + 1 < n_layers {
                for z in next.iter_mut() {
                    *z = self.activation.apply(*z);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Evaluation that records the tape needed by [`Mlp::backward`].
    pub fn forward_cached(&self, input: &[f64]) -> Result<MlpCache> {
        self.check_input(input)?;
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers + 1);
        inputs.push(input.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.forward_into(inputs.last().unwrap(), &mut out);
            if l + 1 < n_layers {
                for z in out.iter_mut() {
                    *z = self.activation.apply(*z);
                }
            }
            inputs.push(out);
        }
        Ok(MlpCache { inputs })
    }

    /// Exact reverse-mode gradients for the scalar loss implied by `upstream`
    /// (= dL/d output). Returns parameter gradients and dL/d input.
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        if upstream.len() != self.out_dim() {
            return Err(SirsaError::DimensionMismatch {
                expected: self.out_dim(),
                got: upstream.len(),
            });
        }
        let n_layers = self.layers.len();
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = upstream.to_vec();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let layer_in = &cache.inputs[l];
            // Hidden layers: fold the activation derivative into delta
            // (cache stores post-activation values).
            if l + 1 < n_layers {
                let post = &cache.inputs[l + 1];
                for (d, p) in delta.iter_mut().zip(post) {
                    *d *= self.activation.derivative(*p);
                }
            }
            let gw = &mut grads.weight[l];
            for o in 0..layer.out_dim {
                let d = delta[o];
                grads.bias[l][o] = d;
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, x) in row.iter_mut().zip(layer_in) {
                    *g = d * x;
                }
            }
            if !grads.bias[l].iter().all(|g| g.is_finite())
                || !gw.iter().all(|g| g.is_finite())
            {
                return Err(SirsaError::NonFiniteGradient { layer: l });
            }
            // Propagate to the layer input.
            let mut prev = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        Ok((grads, delta))
    }

    /// Visit every parameter mutably in a fixed order (layer, weights, biases).
    pub(crate) fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for layer in &mut self.layers {
            for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                f(w);
            }
        }
    }

    /// Visit every parameter in the same fixed order as `for_each_param_mut`.
    pub fn for_each_param(&self, mut f: impl FnMut(f64)) {
        for layer in &self.layers {
            for w in layer.weight.iter().chain(layer.bias.iter()) {
                f(*w);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_param(|w| ok &= w.is_finite());
        ok
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.in_dim() {
            return Err(SirsaError::DimensionMismatch {
                expected: self.in_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }
}

/// Gradient iteration paired with the parameter order of `for_each_param_mut`.
impl MlpGrads {
    pub(crate) fn for_each(&self, mut f: impl FnMut(f64)) {
        for (w, b) in self.weight.iter().zip(&self.bias) {
            for g in w.iter().chain(b.iter()) {
                f(*g);
            }
        }
    }
}

/// In-place Polyak update: `target ← (1−τ)·target + τ·source`.
pub fn polyak_update(target: &mut Mlp, source: &Mlp, tau: f64) {
    debug_assert!((0.0..=1.0).contains(&tau));
    for (tl, sl) in target.layers.iter_mut().zip(&source.layers) {
        for (t, s) in tl
            .weight
            .iter_mut()
            .chain(tl.bias.iter_mut())
            .zip(sl.weight.iter().chain(sl.bias.iter()))
        {
            *t = (1.0 - tau) * *t + tau * s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rcmdp::child_rng;

    fn scalar_loss(net: &Mlp, input: &[f64], probe: &[f64]) -> f64 {
        net.forward(input)
            .unwrap()
            .iter()
            .zip(probe)
            .map(|(y, g)| y * g)
            .sum()
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[4, 8, 2], Activation::Relu);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_through() {
        let net = Mlp::identity(3);
        let x = [0.3, -1.2, 7.0];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = child_rng(10, 0);
        let net = Mlp::init(&[5, 16, 16, 3], Activation::Tanh, &mut rng);
        let x = [0.1, 0.2, -0.3, 0.4, 0.5];
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
    }

    #[test]
    fn shape_mismatch_is_error() {
        let net = Mlp::zeros(&[4, 2], Activation::Relu);
        assert!(net.forward(&[1.0, 2.0]).is_err());
        let cache = net.forward_cached(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(net.backward(&cache, &[1.0]).is_err());
    }

    #[test]
    fn linear_layer_gradient_is_input_outer_product() {
        // Single linear layer, loss = output: dL/dW = x, dL/db = 1.
        let mut rng = child_rng(11, 0);
        let net = Mlp::init(&[3, 1], Activation::Relu, &mut rng);
        let x = [0.5, -1.0, 2.0];
        let cache = net.forward_cached(&x).unwrap();
        let (grads, dx) = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(grads.weight[0], x.to_vec());
        assert_eq!(grads.bias[0], vec![1.0]);
        assert_eq!(dx, net.layers[0].weight.clone());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = child_rng(12, 0);
        let net = Mlp::init(&[4, 8, 2], Activation::Relu, &mut rng);
        let cache = net.forward_cached(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let (grads, dx) = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(grads.iter().all(|g| *g == 0.0));
        assert!(dx.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        // 20 random (net, input) pairs per activation.
        let h = 1e-5;
        for &act in &[Activation::Relu, Activation::Tanh] {
            let mut rng = child_rng(13, act as u64);
            for trial in 0..20 {
                let dims = [3, 10, 7, 2];
                let net = Mlp::init(&dims, act, &mut rng);
                let input: Vec<f64> = (0..dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let probe: Vec<f64> =
                    (0..dims[dims.len() - 1]).map(|_| rng.gen_range(-1.0..1.0)).collect();

                let cache = net.forward_cached(&input).unwrap();
                let (grads, dx) = net.backward(&cache, &probe).unwrap();

                // Flatten analytic grads in parameter order.
                let mut analytic = Vec::with_capacity(net.n_params());
                grads.for_each(|g| analytic.push(g));

                // Finite differences over every parameter.
                let mut numeric = Vec::with_capacity(net.n_params());
                let mut idx = 0;
                let n = net.n_params();
                while idx < n {
                    let mut plus = net.clone();
                    let mut minus = net.clone();
                    let mut k = 0;
                    plus.for_each_param_mut(|w| {
                        if k == idx {
                            *w += h;
                        }
                        k += 1;
                    });
                    k = 0;
                    minus.for_each_param_mut(|w| {
                        if k == idx {
                            *w -= h;
                        }
                        k += 1;
                    });
                    let fp = scalar_loss(&plus, &input, &probe);
                    let fm = scalar_loss(&minus, &input, &probe);
                    numeric.push((fp - fm) / (2.0 * h));
                    idx += 1;
                }

                for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
                    let denom = a.abs().max(n.abs()).max(1e-6);
                    assert!(
                        (a - n).abs() / denom < 1e-4,
                        "trial {trial} param {i}: analytic {a} vs numeric {n}"
                    );
                }

                // Input gradient too.
                for j in 0..input.len() {
                    let mut ip = input.clone();
                    let mut im = input.clone();
                    ip[j] += h;
                    im[j] -= h;
                    let fd = (scalar_loss(&net, &ip, &probe) - scalar_loss(&net, &im, &probe))
                        / (2.0 * h);
                    let denom = dx[j].abs().max(fd.abs()).max(1e-6);
                    assert!((dx[j] - fd).abs() / denom < 1e-4);
                }
            }
        }
    }

    #[test]
    fn polyak_blends_and_converges() {
        let mut rng = child_rng(14, 0);
        let source = Mlp::init(&[2, 4, 1], Activation::Relu, &mut rng);
        let mut target = Mlp::zeros(&[2, 4, 1], Activation::Relu);

        // τ = 1 copies the source.
        let mut full = target.clone();
        polyak_update(&mut full, &source, 1.0);
        assert_eq!(full, source);

        // τ = 0.005 from zero toward one: exactly 0.005.
        let ones = {
            let mut net = Mlp::zeros(&[2, 2], Activation::Relu);
            net.for_each_param_mut(|w| *w = 1.0);
            net
        };
        let mut small = Mlp::zeros(&[2, 2], Activation::Relu);
        polyak_update(&mut small, &ones, 0.005);
        small.for_each_param(|w| assert!((w - 0.005).abs() < 1e-15));

        // Repeated updates converge geometrically: gap shrinks by (1−τ) each step.
        let tau = 0.1;
        for step in 0..200 {
            polyak_update(&mut target, &source, tau);
            let _ = step;
        }
        let mut src_params = Vec::new();
        source.for_each_param(|w| src_params.push(w));
        let mut tgt_params = Vec::new();
        target.for_each_param(|w| tgt_params.push(w));
        for (s, t) in src_params.iter().zip(&tgt_params) {
            assert!((s - t).abs() <= s.abs() * (1.0 - tau).powi(200) + 1e-9);
        }
    }
}
