use serde::{Deserialize, Serialize};

use super::{GradientBuffer, Network};
use crate::error::{Error, Result};

/// Adaptive-moment optimizer state for one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    #[serde(skip)]
    first_moment: Option<GradientBuffer>,
    #[serde(skip)]
    second_moment: Option<GradientBuffer>,
}

impl AdamState {
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(net: &Network, learning_rate: f64) -> Result<Self> {
        Self::with_constants(
            net,
            learning_rate,
            Self::DEFAULT_BETA1,
            Self::DEFAULT_BETA2,
            Self::DEFAULT_EPSILON,
        )
    }

    pub fn with_constants(net: &Network, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0,1), got {b}")));
            }
        }
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(AdamState {
            step_count: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon,
            first_moment: Some(GradientBuffer::zeros_like(net)),
            second_moment: Some(GradientBuffer::zeros_like(net)),
        })
    }

    pub fn first_moment(&self) -> &GradientBuffer {
        self.first_moment.as_ref().expect("moments allocated at construction")
    }

    pub fn second_moment(&self) -> &GradientBuffer {
        self.second_moment.as_ref().expect("moments allocated at construction")
    }
}

/// One bias-corrected Adam update of `net` in place.
///
/// Gradients are validated before anything is modified, so a rejected step
/// leaves both the network and the optimizer state untouched.
pub fn adam_step(net: &mut Network, grads: &GradientBuffer, state: &mut AdamState) -> Result<()> {
    if !grads.matches(net) {
        return Err(Error::Internal("gradient buffer does not match network shape".into()));
    }
    let (m, v) = match (state.first_moment.as_mut(), state.second_moment.as_mut()) {
        (Some(m), Some(v)) if m.matches(net) && v.matches(net) => (m, v),
        _ => return Err(Error::Internal("optimizer state does not match network shape".into())),
    };
    for l in 0..grads.num_layers() {
        if !grads.weights[l].iter().chain(&grads.biases[l]).all(|g| g.is_finite()) {
            return Err(Error::Numeric {
                layer: l,
                message: "non-finite gradient".into(),
            });
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.learning_rate, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);

    for (l, layer) in net.layers_mut().iter_mut().enumerate() {
        let (w, b) = layer.params_mut();
        let params = w.iter_mut().chain(b.iter_mut());
        let g = grads.weights[l].iter().chain(&grads.biases[l]);
        let m_l = m.weights[l].iter_mut().chain(m.biases[l].iter_mut());
        let v_l = v.weights[l].iter_mut().chain(v.biases[l].iter_mut());
        for (((p, &g), mi), vi) in params.zip(g).zip(m_l).zip(v_l) {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    net.bump_generation();
    Ok(())
}
