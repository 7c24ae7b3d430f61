//! The agent network family: a convolutional feature extractor, a recurrent
//! actor-critic head, and (for the curious variants) forward and inverse
//! prediction models.
//!
//! All networks are built as graph fragments on a caller-owned tape, so a
//! whole rollout becomes one differentiable graph. Gradient routing rules
//! live here as structure: the forward model detaches its feature input, and
//! the predicted-value branch is fenced off with stop-gradients on both ends.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamSet, Real, Tensor, TensorId};
use crate::env::{Action, Observation, OBS_CHANNELS, OBS_COLS, OBS_ROWS};
use crate::error::{Error, Result};

/// Feature dimension after the four stride-2 convolutions of a 10x30 input.
pub const FEATURE_DIM: usize = 64;
/// LSTM width.
pub const LSTM_UNITS: usize = 256;
/// Hidden width of the forward and inverse models.
pub const PREDICTION_HIDDEN: usize = 256;
const CONV_FILTERS: usize = 32;

/// The four agent flavours.
#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Plain recurrent actor-critic.
    A3c,
    /// Curiosity with the extractor shared between policy and prediction.
    Pred,
    /// Curiosity with a separate extractor for the prediction model.
    Icm,
    /// PRED plus the value prediction consistency term.
    Vpc,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::A3c, Variant::Pred, Variant::Icm, Variant::Vpc];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::A3c => "a3c",
            Variant::Pred => "pred",
            Variant::Icm => "icm",
            Variant::Vpc => "vpc",
        }
    }

    pub fn from_str(s: &str) -> Result<Variant> {
        match s {
            "a3c" => Ok(Variant::A3c),
            "pred" => Ok(Variant::Pred),
            "icm" => Ok(Variant::Icm),
            "vpc" => Ok(Variant::Vpc),
            other => Err(Error::InvalidConfig { reason: format!("unknown variant {other:?}") }),
        }
    }

    /// Whether the variant carries forward and inverse models.
    pub fn has_prediction(self) -> bool {
        !matches!(self, Variant::A3c)
    }

    /// Whether the prediction model reads from a separate extractor.
    pub fn has_extractor_copy(self) -> bool {
        matches!(self, Variant::Icm)
    }

    /// Whether predicted values feed a consistency term.
    pub fn has_value_prediction(self) -> bool {
        matches!(self, Variant::Vpc)
    }
}

/// Which feature extractor to run.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Extractor {
    Shared,
    IcmCopy,
}

/// Recurrent state as plain values, carried across rollout graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmValues<F> {
    pub h: Vec<F>,
    pub c: Vec<F>,
}

impl<F: Real> LstmValues<F> {
    pub fn zeros() -> Self {
        LstmValues { h: vec![F::zero(); LSTM_UNITS], c: vec![F::zero(); LSTM_UNITS] }
    }
}

/// Recurrent state as nodes on a specific graph.
#[derive(Clone, Copy, Debug)]
pub struct LstmNodes {
    pub h: TensorId,
    pub c: TensorId,
}

/// Outputs of one actor-critic step.
#[derive(Clone, Copy, Debug)]
pub struct PolicyValueNodes {
    /// Softmax distribution over the 4 actions.
    pub policy: TensorId,
    /// Log-softmax over the same logits.
    pub log_policy: TensorId,
    /// Scalar state value.
    pub value: TensorId,
    /// Advanced recurrent state.
    pub next_state: LstmNodes,
}

fn layer_specs(variant: Variant) -> Vec<(String, Vec<usize>, usize)> {
    let mut specs: Vec<(String, Vec<usize>, usize)> = Vec::new();
    let conv_stack = |specs: &mut Vec<(String, Vec<usize>, usize)>, prefix: &str| {
        let mut in_c = OBS_CHANNELS;
        for layer in 1..=4 {
            let fan_in = 3 * 3 * in_c;
            specs.push((
                format!("{prefix}.conv{layer}.weight"),
                vec![3, 3, in_c, CONV_FILTERS],
                fan_in,
            ));
            specs.push((format!("{prefix}.conv{layer}.bias"), vec![CONV_FILTERS], fan_in));
            in_c = CONV_FILTERS;
        }
    };

    conv_stack(&mut specs, "fe");
    specs.push(("lstm.wx".into(), vec![FEATURE_DIM, 4 * LSTM_UNITS], FEATURE_DIM));
    specs.push(("lstm.wh".into(), vec![LSTM_UNITS, 4 * LSTM_UNITS], LSTM_UNITS));
    specs.push(("lstm.b".into(), vec![4 * LSTM_UNITS], LSTM_UNITS));
    specs.push(("pi.weight".into(), vec![LSTM_UNITS, Action::COUNT], LSTM_UNITS));
    specs.push(("pi.bias".into(), vec![Action::COUNT], LSTM_UNITS));
    specs.push(("value.weight".into(), vec![LSTM_UNITS, 1], LSTM_UNITS));
    specs.push(("value.bias".into(), vec![1], LSTM_UNITS));

    if variant.has_prediction() {
        let fwd_in = FEATURE_DIM + Action::COUNT;
        specs.push(("fwd.fc1.weight".into(), vec![fwd_in, PREDICTION_HIDDEN], fwd_in));
        specs.push(("fwd.fc1.bias".into(), vec![PREDICTION_HIDDEN], fwd_in));
        specs.push(("fwd.fc2.weight".into(), vec![PREDICTION_HIDDEN, FEATURE_DIM], PREDICTION_HIDDEN));
        specs.push(("fwd.fc2.bias".into(), vec![FEATURE_DIM], PREDICTION_HIDDEN));
        let inv_in = 2 * FEATURE_DIM;
        specs.push(("inv.fc1.weight".into(), vec![inv_in, PREDICTION_HIDDEN], inv_in));
        specs.push(("inv.fc1.bias".into(), vec![PREDICTION_HIDDEN], inv_in));
        specs.push(("inv.fc2.weight".into(), vec![PREDICTION_HIDDEN, Action::COUNT], PREDICTION_HIDDEN));
        specs.push(("inv.fc2.bias".into(), vec![Action::COUNT], PREDICTION_HIDDEN));
    }
    if variant.has_extractor_copy() {
        conv_stack(&mut specs, "icm_fe");
    }
    specs
}

/// Exact parameter name set for a variant, for census assertions.
pub fn expected_param_names(variant: Variant) -> Vec<String> {
    let mut names: Vec<String> = layer_specs(variant).into_iter().map(|(n, _, _)| n).collect();
    names.sort();
    names
}

/// Fresh parameters: weights fan-in uniform, biases zero, except the LSTM
/// forget-gate bias block which starts at 1.
pub fn init_params(variant: Variant, seed: u64) -> ParamSet<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for (name, shape, fan_in) in layer_specs(variant) {
        let tensor = if name.ends_with(".bias") || name == "lstm.b" {
            Tensor::zeros(shape)
        } else {
            Tensor::fan_in_uniform(shape, fan_in, &mut rng)
        };
        params.insert(name, tensor);
    }
    let b = params.get_mut("lstm.b").expect("lstm bias exists");
    // Gate order i, f, g, o: the second block is the forget gate.
    for v in &mut b.data[LSTM_UNITS..2 * LSTM_UNITS] {
        *v = 1.0;
    }
    params
}

/// Observation as a graph constant of shape [rows, cols, channels].
pub fn obs_constant<F: Real>(g: &mut Graph<F>, obs: &Observation) -> TensorId {
    let values: Vec<F> = obs.data().iter().map(|&v| F::c(v as f64)).collect();
    g.constant(&[OBS_ROWS, OBS_COLS, OBS_CHANNELS], values)
}

/// One-hot action as a graph constant of shape [4].
pub fn action_constant<F: Real>(g: &mut Graph<F>, action: Action) -> TensorId {
    let mut values = vec![F::zero(); Action::COUNT];
    values[action.index()] = F::one();
    g.constant(&[Action::COUNT], values)
}

/// Recurrent state values entered into a graph as constants.
pub fn lstm_nodes<F: Real>(g: &mut Graph<F>, state: &LstmValues<F>) -> LstmNodes {
    LstmNodes {
        h: g.constant(&[LSTM_UNITS], state.h.clone()),
        c: g.constant(&[LSTM_UNITS], state.c.clone()),
    }
}

/// A model variant bound onto a graph: parameter leaves plus the methods that
/// grow network fragments on that graph.
#[derive(Debug)]
pub struct BoundModel {
    pub variant: Variant,
    ids: BTreeMap<String, TensorId>,
}

impl BoundModel {
    /// Bind every parameter and verify the name census matches the variant.
    pub fn bind<F: Real>(
        g: &mut Graph<F>,
        params: &ParamSet<F>,
        variant: Variant,
    ) -> Result<BoundModel> {
        let expected = expected_param_names(variant);
        let got: Vec<String> = params.names().cloned().collect();
        if expected != got {
            return Err(Error::contract(format!(
                "parameter census mismatch for variant {}: expected {expected:?}, got {got:?}",
                variant.as_str()
            )));
        }
        let ids = g.bind(params)?;
        Ok(BoundModel { variant, ids })
    }

    fn id(&self, name: &str) -> TensorId {
        self.ids[name]
    }

    /// Four stride-2 convolutions with ELU, flattened to a 64-vector.
    pub fn extract_features<F: Real>(
        &self,
        g: &mut Graph<F>,
        obs: TensorId,
        which: Extractor,
    ) -> Result<TensorId> {
        let prefix = match which {
            Extractor::Shared => "fe",
            Extractor::IcmCopy => {
                if !self.variant.has_extractor_copy() {
                    return Err(Error::contract(format!(
                        "extractor copy requested on variant {}",
                        self.variant.as_str()
                    )));
                }
                "icm_fe"
            }
        };
        if g.shape(obs) != [OBS_ROWS, OBS_COLS, OBS_CHANNELS] {
            return Err(Error::ShapeMismatch {
                op: "extract_features",
                expected: vec![OBS_ROWS, OBS_COLS, OBS_CHANNELS],
                got: g.shape(obs).to_vec(),
            });
        }
        let mut x = obs;
        for layer in 1..=4 {
            let w = self.id(&format!("{prefix}.conv{layer}.weight"));
            let b = self.id(&format!("{prefix}.conv{layer}.bias"));
            let conv = g.conv2d(x, w, b)?;
            x = g.elu(conv);
        }
        debug_assert_eq!(g.values(x).len(), FEATURE_DIM);
        Ok(g.reshape(x, &[FEATURE_DIM]))
    }

    fn lstm_step<F: Real>(
        &self,
        g: &mut Graph<F>,
        input: TensorId,
        state: LstmNodes,
    ) -> Result<LstmNodes> {
        let zx = g.linear(input, self.id("lstm.wx"), Some(self.id("lstm.b")))?;
        let zh = g.linear(state.h, self.id("lstm.wh"), None)?;
        let z = g.add(zx, zh)?;
        let i_raw = g.slice(z, 0, LSTM_UNITS);
        let f_raw = g.slice(z, LSTM_UNITS, LSTM_UNITS);
        let g_raw = g.slice(z, 2 * LSTM_UNITS, LSTM_UNITS);
        let o_raw = g.slice(z, 3 * LSTM_UNITS, LSTM_UNITS);
        let i_gate = g.sigmoid(i_raw);
        let f_gate = g.sigmoid(f_raw);
        let g_gate = g.tanh(g_raw);
        let o_gate = g.sigmoid(o_raw);
        let keep = g.mul(f_gate, state.c)?;
        let write = g.mul(i_gate, g_gate)?;
        let c_new = g.add(keep, write)?;
        let c_act = g.tanh(c_new);
        let h_new = g.mul(o_gate, c_act)?;
        Ok(LstmNodes { h: h_new, c: c_new })
    }

    /// LSTM step on the features, then the policy and value heads.
    pub fn policy_value<F: Real>(
        &self,
        g: &mut Graph<F>,
        features: TensorId,
        state: LstmNodes,
    ) -> Result<PolicyValueNodes> {
        let next_state = self.lstm_step(g, features, state)?;
        let logits = g.linear(next_state.h, self.id("pi.weight"), Some(self.id("pi.bias")))?;
        let policy = g.softmax(logits);
        let log_policy = g.log_softmax(logits);
        let value_vec = g.linear(next_state.h, self.id("value.weight"), Some(self.id("value.bias")))?;
        let value = g.reshape(value_vec, &[1]);
        Ok(PolicyValueNodes { policy, log_policy, value, next_state })
    }

    /// Predicted next features from (detached) current features and the
    /// action. The feature input is stop-gradient so the prediction loss
    /// reaches the extractor only through its target.
    pub fn forward_model<F: Real>(
        &self,
        g: &mut Graph<F>,
        features: TensorId,
        action: Action,
    ) -> Result<TensorId> {
        if !self.variant.has_prediction() {
            return Err(Error::contract(format!(
                "forward model on variant {}",
                self.variant.as_str()
            )));
        }
        let frozen = g.stop_grad(features);
        let onehot = action_constant(g, action);
        let joined = g.concat(&[frozen, onehot]);
        let z1 = g.linear(joined, self.id("fwd.fc1.weight"), Some(self.id("fwd.fc1.bias")))?;
        let a1 = g.relu(z1);
        g.linear(a1, self.id("fwd.fc2.weight"), Some(self.id("fwd.fc2.bias")))
    }

    /// Distribution over the action that connects two feature vectors.
    /// Inputs stay live: this loss is what shapes the extractor.
    pub fn inverse_model<F: Real>(
        &self,
        g: &mut Graph<F>,
        features_t: TensorId,
        features_t1: TensorId,
    ) -> Result<(TensorId, TensorId)> {
        if !self.variant.has_prediction() {
            return Err(Error::contract(format!(
                "inverse model on variant {}",
                self.variant.as_str()
            )));
        }
        let joined = g.concat(&[features_t, features_t1]);
        let z1 = g.linear(joined, self.id("inv.fc1.weight"), Some(self.id("inv.fc1.bias")))?;
        let a1 = g.relu(z1);
        let logits = g.linear(a1, self.id("inv.fc2.weight"), Some(self.id("inv.fc2.bias")))?;
        Ok((g.softmax(logits), g.log_softmax(logits)))
    }

    /// Value of the predicted next features, from the recurrent state
    /// snapshot taken right after the step-t value estimate. The branch is
    /// stop-gradient on both ends: it trains nothing and nothing trains it.
    pub fn predicted_value<F: Real>(
        &self,
        g: &mut Graph<F>,
        predicted_features: TensorId,
        snapshot: LstmNodes,
    ) -> Result<TensorId> {
        if !self.variant.has_value_prediction() {
            return Err(Error::contract(format!(
                "predicted value on variant {}",
                self.variant.as_str()
            )));
        }
        let frozen_input = g.stop_grad(predicted_features);
        let state = self.lstm_step(g, frozen_input, snapshot)?;
        let value_vec = g.linear(state.h, self.id("value.weight"), Some(self.id("value.bias")))?;
        let value = g.reshape(value_vec, &[1]);
        Ok(g.stop_grad(value))
    }
}
