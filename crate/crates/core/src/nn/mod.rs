//! Feedforward scorer `h: R^d -> R` with hand-derived backpropagation.
//!
//! Weights are stored row-major as `outputs x inputs`. Hidden layers use the
//! configured activation; the output layer is linear and has width one.

mod adam;
mod format;

pub use adam::{adam_step, AdamState};
pub use format::{load_model, read_model, save_model, write_model, FORMAT_VERSION};

use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
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

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!(
                "unknown activation '{other}' (expected relu|tanh)"
            ))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One dense layer.
#[derive(Clone, Debug)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    #[inline]
    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.biases) {
            let dot: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
            out.push(dot + b);
        }
    }
}

/// The preference function: a stack of dense layers ending in one output.
///
/// `generation` changes on every parameter mutation so that traces
/// recorded against older parameters can be rejected by [`Network::backward`].
#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<Layer>,
    activation: Activation,
    generation: u64,
}

impl PartialEq for Network {
    /// Bitwise parameter equality; the mutation counter is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.activation == other.activation
            && self.layer_dims() == other.layer_dims()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| bits_eq(&a.weights, &b.weights) && bits_eq(&a.biases, &b.biases))
    }
}

fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::Config(format!(
            "layer_dims needs at least input and output entries, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::Config(format!(
            "layer_dims must be positive, got {layer_dims:?}"
        )));
    }
    if *layer_dims.last().unwrap() != 1 {
        return Err(Error::Config(format!(
            "output dimension must be 1 (scalar score), got {layer_dims:?}"
        )));
    }
    Ok(())
}

/// Build a network with uniform `±sqrt(6 / (fan_in + fan_out))` weights and
/// zero biases. The same seed always yields the same parameters.
pub fn init_network(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Network> {
    validate_dims(layer_dims)?;
    let mut rng = crate::seed::rng(seed);
    let layers = layer_dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite positive bound");
            Layer {
                inputs: fan_in,
                outputs: fan_out,
                weights: (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect(),
                biases: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(Network {
        layers,
        activation,
        generation: 0,
    })
}

/// Per-layer values recorded by a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    input: Vec<f64>,
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
    /// Post-activations per layer; equal to `pre` for the output layer.
    post: Vec<Vec<f64>>,
    generation: u64,
}

impl ForwardTrace {
    pub fn score(&self) -> f64 {
        self.post.last().map(|v| v[0]).unwrap_or(f64::NAN)
    }

    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }

    pub fn post_activations(&self) -> &[Vec<f64>] {
        &self.post
    }
}

/// Accumulators congruent with a network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer {
    pub(crate) weights: Vec<Vec<f64>>,
    pub(crate) biases: Vec<Vec<f64>>,
}

impl GradientBuffer {
    pub fn zeros_like(net: &Network) -> Self {
        GradientBuffer {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn fill_zero(&mut self) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .for_each(|v| v.fill(0.0));
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradientBuffer, scale: f64) -> Result<()> {
        if !self.congruent(other) {
            return Err(Error::Internal("gradient buffers have different shapes".into()));
        }
        let mine = self.weights.iter_mut().chain(self.biases.iter_mut());
        let theirs = other.weights.iter().chain(other.biases.iter());
        for (a, b) in mine.zip(theirs) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .for_each(|v| v.iter_mut().for_each(|x| *x *= factor));
    }

    fn congruent(&self, other: &GradientBuffer) -> bool {
        let lens =
            |g: &GradientBuffer| -> Vec<usize> { g.weights.iter().chain(g.biases.iter()).map(Vec::len).collect() };
        self.weights.len() == other.weights.len() && lens(self) == lens(other)
    }

    pub(crate) fn matches(&self, net: &Network) -> bool {
        self.weights.len() == net.layers.len()
            && net.layers.iter().enumerate().all(|(l, layer)| {
                self.weights[l].len() == layer.weights.len() && self.biases[l].len() == layer.biases.len()
            })
    }

    /// Flat view in [`Network::param`] order.
    pub fn flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

impl Network {
    /// Assemble a network from explicit parameters (row-major weights).
    pub fn from_parts(
        layer_dims: &[usize],
        activation: Activation,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Network> {
        validate_dims(layer_dims)?;
        let n = layer_dims.len() - 1;
        if weights.len() != n || biases.len() != n {
            return Err(Error::Config(format!(
                "expected {n} weight and bias arrays, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        let mut layers = Vec::with_capacity(n);
        for (l, (w, b)) in weights.into_iter().zip(biases).enumerate() {
            let (inputs, outputs) = (layer_dims[l], layer_dims[l + 1]);
            if w.len() != inputs * outputs || b.len() != outputs {
                return Err(Error::Config(format!(
                    "layer {l}: expected {outputs}x{inputs} weights and {outputs} biases, got {} and {}",
                    w.len(),
                    b.len()
                )));
            }
            if !w.iter().chain(&b).all(|v| v.is_finite()) {
                return Err(Error::Numeric {
                    layer: l,
                    message: "non-finite parameter".into(),
                });
            }
            layers.push(Layer {
                inputs,
                outputs,
                weights: w,
                biases: b,
            });
        }
        Ok(Network {
            layers,
            activation,
            generation: 0,
        })
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameter by flat index: layer by layer, weights (row-major) then biases.
    pub fn param(&self, index: usize) -> f64 {
        let (l, in_weights, i) = self.locate(index);
        let layer = &self.layers[l];
        if in_weights {
            layer.weights[i]
        } else {
            layer.biases[i]
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (l, in_weights, i) = self.locate(index);
        self.generation += 1;
        let layer = &mut self.layers[l];
        if in_weights {
            layer.weights[i] = value;
        } else {
            layer.biases[i] = value;
        }
    }

    fn locate(&self, mut index: usize) -> (usize, bool, usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            if index < layer.weights.len() {
                return (l, true, index);
            }
            index -= layer.weights.len();
            if index < layer.biases.len() {
                return (l, false, index);
            }
            index -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Input(format!(
                "feature vector has dimension {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("feature {pos} is not finite")));
        }
        Ok(())
    }

    /// Score without recording a trace.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, &mut next);
            if l < last {
                next.iter_mut().for_each(|z| *z = self.activation.apply(*z));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur[0])
    }

    pub fn forward(&self, x: &[f64]) -> Result<(f64, ForwardTrace)> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { &post[l - 1] };
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine(input, &mut z);
            let a = if l < last {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(a);
        }
        let trace = ForwardTrace {
            input: x.to_vec(),
            pre,
            post,
            generation: self.generation,
        };
        Ok((trace.score(), trace))
    }

    /// Gradient of the score with respect to every parameter, times `upstream`.
    pub fn backward(&self, trace: &ForwardTrace, upstream: f64) -> Result<GradientBuffer> {
        let mut grads = GradientBuffer::zeros_like(self);
        self.backward_into(trace, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Network::backward`] but accumulates into `grads`.
    pub fn backward_into(&self, trace: &ForwardTrace, upstream: f64, grads: &mut GradientBuffer) -> Result<()> {
        if trace.generation != self.generation
            || trace.pre.len() != self.layers.len()
            || trace.input.len() != self.input_dim()
        {
            return Err(Error::Internal(
                "forward trace does not belong to the current network parameters".into(),
            ));
        }
        if !grads.matches(self) {
            return Err(Error::Internal("gradient buffer does not match network shape".into()));
        }
        if upstream == 0.0 {
            return Ok(());
        }

        let mut delta = vec![upstream];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input: &[f64] = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            let gw = &mut grads.weights[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
            }
            grads.biases[l].iter_mut().zip(&delta).for_each(|(g, d)| *g += d);

            if l > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    prev.iter_mut().zip(row).for_each(|(p, w)| *p += w * d);
                }
                let (z, a) = (&trace.pre[l - 1], &trace.post[l - 1]);
                for (j, p) in prev.iter_mut().enumerate() {
                    *p *= self.activation.derivative(z[j], a[j]);
                }
                delta = prev;
            }
        }
        Ok(())
    }

    pub(crate) fn bump_generation(&mut self) {
        self.generation += 1;
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

impl Layer {
    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weights, &mut self.biases)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Straightforward matrix arithmetic, written independently of `Layer::affine`.
    fn naive_forward(net: &Network, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let n = net.layers().len();
        for (l, layer) in net.layers().iter().enumerate() {
            let mut z = vec![0.0; layer.outputs()];
            for i in 0..layer.outputs() {
                let mut s = layer.biases()[i];
                for j in 0..layer.inputs() {
                    s += layer.weights()[i * layer.inputs() + j] * a[j];
                }
                z[i] = s;
            }
            if l + 1 < n {
                for v in z.iter_mut() {
                    *v = match net.activation() {
                        Activation::Relu => {
                            if *v > 0.0 {
                                *v
                            } else {
                                0.0
                            }
                        }
                        Activation::Tanh => v.tanh(),
                    };
                }
            }
            a = z;
        }
        a[0]
    }

    fn central_difference(net: &Network, x: &[f64], index: usize, step: f64) -> f64 {
        let mut plus = net.clone();
        plus.set_param(index, net.param(index) + step);
        let mut minus = net.clone();
        minus.set_param(index, net.param(index) - step);
        (plus.score(x).unwrap() - minus.score(x).unwrap()) / (2.0 * step)
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_network(&[4096, 512, 1], Activation::Relu, 11).unwrap();
        let b = init_network(&[4096, 512, 1], Activation::Relu, 11).unwrap();
        assert_eq!(a, b);
        let c = init_network(&[4096, 512, 1], Activation::Relu, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_biases_are_zero() {
        let net = init_network(&[3, 1], Activation::Relu, 99).unwrap();
        assert_eq!(net.layers()[0].biases(), &[0.0]);
    }

    #[test]
    fn init_respects_uniform_bound() {
        let net = init_network(&[2, 2, 1], Activation::Relu, 7).unwrap();
        let bound = (6.0f64 / 4.0).sqrt();
        assert!(net.layers()[0].weights().iter().all(|w| w.abs() <= bound));
        let bound2 = (6.0f64 / 3.0).sqrt();
        assert!(net.layers()[1].weights().iter().all(|w| w.abs() <= bound2));
    }

    #[test]
    fn init_rejects_bad_dims() {
        for dims in [vec![4], vec![4, 2], vec![0, 1], vec![3, 0, 1], vec![]] {
            assert!(
                matches!(init_network(&dims, Activation::Relu, 0), Err(Error::Config(_))),
                "{dims:?}"
            );
        }
    }

    #[test]
    fn zero_network_scores_zero() {
        let net = Network::from_parts(
            &[3, 2, 1],
            Activation::Relu,
            vec![vec![0.0; 6], vec![0.0; 2]],
            vec![vec![0.0; 2], vec![0.0]],
        )
        .unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap().0, 0.0);
    }

    #[test]
    fn identity_network() {
        let net = Network::from_parts(&[1, 1], Activation::Relu, vec![vec![1.0]], vec![vec![0.0]]).unwrap();
        assert_eq!(net.forward(&[2.5]).unwrap().0, 2.5);
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut rng = crate::seed::rng(5);
        for trial in 0..50 {
            let act = if trial % 2 == 0 {
                Activation::Relu
            } else {
                Activation::Tanh
            };
            let net = init_network(&[7, 9, 5, 1], act, trial).unwrap();
            let x: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (s, trace) = net.forward(&x).unwrap();
            assert!((s - naive_forward(&net, &x)).abs() <= 1e-12);
            assert_eq!(s, trace.score());
            assert_eq!(s.to_bits(), net.score(&x).unwrap().to_bits());
        }
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let net = init_network(&[3, 1], Activation::Relu, 0).unwrap();
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Input(_))));
        assert!(matches!(net.forward(&[1.0, f64::NAN, 2.0]), Err(Error::Input(_))));
    }

    #[test]
    fn backward_zero_upstream() {
        let net = init_network(&[4, 6, 1], Activation::Tanh, 3).unwrap();
        let (_, trace) = net.forward(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let g = net.backward(&trace, 0.0).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_linear_case() {
        let net = Network::from_parts(&[2, 1], Activation::Relu, vec![vec![0.3, -0.7]], vec![vec![0.1]]).unwrap();
        let (a, b) = (1.5, -2.25);
        let (_, trace) = net.forward(&[a, b]).unwrap();
        let g = net.backward(&trace, 1.0).unwrap();
        assert_eq!(g.weights(0), &[a, b]);
        assert_eq!(g.biases(0), &[1.0]);
    }

    #[test]
    fn backward_rejects_stale_trace() {
        let mut net = init_network(&[2, 3, 1], Activation::Relu, 1).unwrap();
        let (_, trace) = net.forward(&[1.0, 2.0]).unwrap();
        net.set_param(0, 0.5);
        assert!(matches!(net.backward(&trace, 1.0), Err(Error::Internal(_))));
        let other = init_network(&[3, 3, 1], Activation::Relu, 1).unwrap();
        let (_, t2) = other.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(net.backward(&t2, 1.0), Err(Error::Internal(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = crate::seed::rng(17);
        let mut worst: f64 = 0.0;
        for trial in 0..120u64 {
            let d_in = rng.random_range(1..=8);
            let hidden = rng.random_range(1..=8);
            let act = if trial % 3 == 0 {
                Activation::Tanh
            } else {
                Activation::Relu
            };
            let mut net = init_network(&[d_in, hidden, 1], act, trial).unwrap();
            for i in 0..net.num_params() {
                let v = rng.random_range(-1.0..1.0);
                net.set_param(i, v);
            }
            let x: Vec<f64> = (0..d_in).map(|_| rng.random_range(-2.0..2.0)).collect();
            let upstream = rng.random_range(-2.0..2.0);
            let (_, trace) = net.forward(&x).unwrap();
            let g = net.backward(&trace, upstream).unwrap().flat();
            for (i, &analytic) in g.iter().enumerate() {
                let numeric = upstream * central_difference(&net, &x, i, 1e-5);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn score_is_pure() {
        let net = init_network(&[5, 8, 1], Activation::Relu, 2).unwrap();
        let x = [0.5, -0.1, 0.2, 0.9, -1.0];
        let s1 = net.score(&x).unwrap();
        let s2 = net.score(&x).unwrap();
        assert_eq!(s1.to_bits(), s2.to_bits());
    }
}
