//! Reward and loss formulas, in two layers.
//!
//! The scalar layer works on recorded rollout data and is used for metrics
//! and as an independent cross-check. [`assemble_rollout_loss`] builds the
//! same quantities as a differentiable graph over per-step network outputs,
//! encoding the gradient-routing rules: advantages and returns enter as
//! constants, the predicted-value branch stays behind its stop-gradient, and
//! the forward-model target is detached exactly for the split-extractor
//! variant.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, TensorId};
use crate::env::{Action, Observation};
use crate::error::{Error, Result};
use crate::models::{LstmValues, Variant};

/// One recorded environment transition with the network outputs at that step.
#[derive(Clone, Debug)]
pub struct Transition {
    pub observation: Observation,
    pub action: Action,
    pub extrinsic_reward: f64,
    pub intrinsic_reward: f64,
    pub done: bool,
    /// pi(.|s_t), recorded at acting time.
    pub policy: Vec<f32>,
    /// ln pi(a_t|s_t).
    pub log_policy_action: f64,
    /// V(phi(s_t)).
    pub value: f64,
    pub feature: Vec<f32>,
    pub next_feature: Option<Vec<f32>>,
    pub predicted_feature: Option<Vec<f32>>,
    /// Inverse-model distribution over actions.
    pub inverse_dist: Option<Vec<f32>>,
    /// V of the predicted next features (value-prediction variant only).
    pub predicted_value: Option<f64>,
    /// L2 norm (not squared) of the feature prediction error.
    pub prediction_error_l2: Option<f64>,
}

impl Transition {
    /// r̄ = extrinsic + intrinsic, the only reward the learner sees.
    pub fn combined_reward(&self) -> f64 {
        self.extrinsic_reward + self.intrinsic_reward
    }
}

/// Up to one BPTT segment of transitions plus the bootstrap value of the
/// state after the last transition (zero when that state is terminal).
#[derive(Clone, Debug)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    pub bootstrap_value: f64,
    pub initial_state: LstmValues<f32>,
}

impl Rollout {
    pub fn validate(&self) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::contract("empty rollout"));
        }
        for t in &self.transitions[..self.transitions.len() - 1] {
            if t.done {
                return Err(Error::contract("transition recorded after episode end"));
            }
        }
        let last_done = self.transitions.last().expect("non-empty").done;
        if last_done && self.bootstrap_value != 0.0 {
            return Err(Error::contract("terminal rollout must bootstrap with 0"));
        }
        Ok(())
    }
}

/// How the consistency error enters the loss.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VpcMode {
    Squared,
    Abs,
    Signed,
}

impl VpcMode {
    pub fn as_str(self) -> &'static str {
        match self {
            VpcMode::Squared => "squared",
            VpcMode::Abs => "abs",
            VpcMode::Signed => "signed",
        }
    }
}

/// Scalar weights of the combined objective.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossWeights {
    pub gamma: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub lambda_f: f64,
    pub lambda_i: f64,
    pub lambda_vpc: f64,
    pub vpc_mode: VpcMode,
    /// Use only the extrinsic reward in the consistency error instead of the
    /// combined reward the value function is actually trained on.
    pub vpc_extrinsic_only: bool,
    pub beta: f64,
}

impl LossWeights {
    /// The reward that enters the consistency error for one transition.
    pub fn vpc_reward(&self, t: &Transition) -> f64 {
        if self.vpc_extrinsic_only {
            t.extrinsic_reward
        } else {
            t.combined_reward()
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma: 0.99,
            value_coef: 0.5,
            entropy_coef: 0.001,
            lambda_f: 0.2,
            lambda_i: 0.8,
            lambda_vpc: 0.1,
            vpc_mode: VpcMode::Squared,
            vpc_extrinsic_only: false,
            beta: 5e-4,
        }
    }
}

/// Per-rollout loss components. `total` combines them with the value and
/// entropy coefficients applied.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy_bonus: f64,
    pub forward_loss: f64,
    pub inverse_loss: f64,
    pub vpc_loss: f64,
    pub total: f64,
}

// ----- scalar layer -----

/// Curiosity bonus: beta times the squared L2 feature prediction error.
pub fn intrinsic_reward(predicted: &[f32], actual: &[f32], beta: f64) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::ShapeMismatch {
            op: "intrinsic_reward",
            expected: vec![actual.len()],
            got: vec![predicted.len()],
        });
    }
    debug_assert!(beta >= 0.0);
    Ok(beta * squared_l2(predicted, actual))
}

fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Discounted n-step returns over combined rewards, seeded with the rollout's
/// bootstrap value.
pub fn n_step_returns(rollout: &Rollout, gamma: f64) -> Vec<f64> {
    assert!(gamma > 0.0 && gamma <= 1.0, "gamma out of range: {gamma}");
    let mut returns = vec![0.0; rollout.transitions.len()];
    let mut acc = rollout.bootstrap_value;
    for (i, t) in rollout.transitions.iter().enumerate().rev() {
        acc = t.combined_reward() + gamma * acc;
        returns[i] = acc;
    }
    returns
}

/// Actor-critic terms: policy loss with constant advantages, half squared
/// value error, entropy of the acting distribution. All sums over steps.
pub fn a3c_terms(rollout: &Rollout, returns: &[f64]) -> (f64, f64, f64) {
    assert_eq!(returns.len(), rollout.transitions.len());
    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    let mut entropy = 0.0;
    for (t, &ret) in rollout.transitions.iter().zip(returns) {
        let advantage = ret - t.value;
        policy_loss += -t.log_policy_action * advantage;
        let diff = ret - t.value;
        value_loss += 0.5 * diff * diff;
        entropy += distribution_entropy(&t.policy);
    }
    (policy_loss, value_loss, entropy)
}

fn distribution_entropy(probs: &[f32]) -> f64 {
    probs
        .iter()
        .map(|&p| {
            let p = p as f64;
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        })
        .sum()
}

/// Prediction losses for one step: weighted half squared feature error and
/// weighted cross-entropy of the true action under the inverse model.
pub fn prediction_terms(
    predicted: &[f32],
    actual: &[f32],
    action: Action,
    inverse_dist: &[f32],
    lambda_f: f64,
    lambda_i: f64,
) -> Result<(f64, f64)> {
    if predicted.len() != actual.len() {
        return Err(Error::ShapeMismatch {
            op: "prediction_terms",
            expected: vec![actual.len()],
            got: vec![predicted.len()],
        });
    }
    if inverse_dist.len() != Action::COUNT {
        return Err(Error::ShapeMismatch {
            op: "prediction_terms",
            expected: vec![Action::COUNT],
            got: vec![inverse_dist.len()],
        });
    }
    let sum: f64 = inverse_dist.iter().map(|&p| p as f64).sum();
    if (sum - 1.0).abs() > 1e-4 {
        return Err(Error::contract(format!("inverse distribution sums to {sum}")));
    }
    let forward = 0.5 * lambda_f * squared_l2(predicted, actual);
    let p_action = (inverse_dist[action.index()] as f64).max(f64::MIN_POSITIVE);
    let inverse = lambda_i * -p_action.ln();
    Ok((forward, inverse))
}

/// Consistency error: how far the predicted next value is from the value
/// implied by the current value estimate and the observed reward.
pub fn vpc_error(predicted_value: f64, value_t: f64, combined_reward: f64, gamma: f64) -> f64 {
    assert!(gamma > 0.0, "gamma must be positive");
    predicted_value - (value_t - combined_reward) / gamma
}

/// Weighted mean of the per-step consistency errors under the given shaping.
pub fn vpc_loss_scalar(errors: &[f64], lambda_vpc: f64, mode: VpcMode) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    let mean = errors
        .iter()
        .map(|&e| match mode {
            VpcMode::Squared => e * e,
            VpcMode::Abs => e.abs(),
            VpcMode::Signed => e,
        })
        .sum::<f64>()
        / errors.len() as f64;
    lambda_vpc * mean
}

/// Scalar recomputation of the full breakdown from recorded rollout data.
pub fn scalar_breakdown(
    variant: Variant,
    rollout: &Rollout,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    rollout.validate()?;
    let returns = n_step_returns(rollout, weights.gamma);
    let (policy_loss, value_loss, entropy_bonus) = a3c_terms(rollout, &returns);

    let mut forward_loss = 0.0;
    let mut inverse_loss = 0.0;
    let mut vpc_errors = Vec::new();
    if variant.has_prediction() {
        for t in &rollout.transitions {
            let predicted = t
                .predicted_feature
                .as_deref()
                .ok_or_else(|| Error::contract("missing predicted feature"))?;
            let actual = t
                .next_feature
                .as_deref()
                .ok_or_else(|| Error::contract("missing next feature"))?;
            let inverse = t
                .inverse_dist
                .as_deref()
                .ok_or_else(|| Error::contract("missing inverse distribution"))?;
            let (f, i) = prediction_terms(
                predicted,
                actual,
                t.action,
                inverse,
                weights.lambda_f,
                weights.lambda_i,
            )?;
            forward_loss += f;
            inverse_loss += i;
        }
    }
    if variant.has_value_prediction() {
        for t in &rollout.transitions {
            let vhat =
                t.predicted_value.ok_or_else(|| Error::contract("missing predicted value"))?;
            vpc_errors.push(vpc_error(vhat, t.value, weights.vpc_reward(t), weights.gamma));
        }
    } else if rollout.transitions.iter().any(|t| t.predicted_value.is_some()) {
        return Err(Error::contract("predicted values supplied for a non-vpc variant"));
    }
    if !variant.has_prediction()
        && rollout.transitions.iter().any(|t| t.predicted_feature.is_some())
    {
        return Err(Error::contract("predicted features supplied for a variant without a prediction model"));
    }
    let vpc_loss = vpc_loss_scalar(&vpc_errors, weights.lambda_vpc, weights.vpc_mode);

    let total = policy_loss + weights.value_coef * value_loss
        - weights.entropy_coef * entropy_bonus
        + forward_loss
        + inverse_loss
        + vpc_loss;
    Ok(LossBreakdown {
        policy_loss,
        value_loss,
        entropy_bonus,
        forward_loss,
        inverse_loss,
        vpc_loss,
        total,
    })
}

// ----- graph layer -----

/// Graph nodes produced while acting one step. Which options are filled
/// depends on the variant.
#[derive(Clone, Copy, Debug)]
pub struct StepNodes {
    pub policy: TensorId,
    pub log_policy: TensorId,
    pub value: TensorId,
    /// phi(s_{t+1}) from the extractor that feeds the prediction model
    /// (shared or copy, depending on the variant); live in the graph.
    pub next_feature: Option<TensorId>,
    pub predicted_feature: Option<TensorId>,
    pub inverse_log: Option<TensorId>,
    /// Already stop-gradient by construction.
    pub predicted_value: Option<TensorId>,
}

/// Scalar loss nodes of one assembled rollout.
#[derive(Clone, Copy, Debug)]
pub struct RolloutLossNodes {
    pub total: TensorId,
    pub policy: TensorId,
    pub value: TensorId,
    pub entropy: TensorId,
    pub forward: Option<TensorId>,
    pub inverse: Option<TensorId>,
    pub vpc: Option<TensorId>,
}

/// Build the differentiable total loss for one rollout.
///
/// Returns and advantages are computed on the scalar side and enter the
/// graph as constants, so value targets act as semi-gradients exactly like
/// the scalar layer assumes.
pub fn assemble_rollout_loss<F: Real>(
    g: &mut Graph<F>,
    variant: Variant,
    steps: &[StepNodes],
    rollout: &Rollout,
    weights: &LossWeights,
) -> Result<(RolloutLossNodes, LossBreakdown)> {
    rollout.validate()?;
    if steps.len() != rollout.transitions.len() {
        return Err(Error::contract(format!(
            "{} step nodes for {} transitions",
            steps.len(),
            rollout.transitions.len()
        )));
    }
    let returns = n_step_returns(rollout, weights.gamma);

    let mut policy_terms = Vec::with_capacity(steps.len());
    let mut value_terms = Vec::with_capacity(steps.len());
    let mut entropy_terms = Vec::with_capacity(steps.len());
    let mut forward_terms = Vec::new();
    let mut inverse_terms = Vec::new();
    let mut vpc_terms = Vec::new();

    for ((step, t), &ret) in steps.iter().zip(&rollout.transitions).zip(&returns) {
        let advantage = ret - t.value;
        let log_pi_a = g.gather(step.log_policy, t.action.index());
        policy_terms.push(g.scale(log_pi_a, -advantage));

        let ret_node = g.scalar_constant(F::c(ret));
        let diff = g.sub(step.value, ret_node)?;
        let sq = g.mul(diff, diff)?;
        value_terms.push(g.scale(sq, 0.5));

        let plogp = g.mul(step.policy, step.log_policy)?;
        let ent_sum = g.sum(plogp);
        entropy_terms.push(g.scale(ent_sum, -1.0));

        if variant.has_prediction() {
            let predicted = step
                .predicted_feature
                .ok_or_else(|| Error::contract("missing predicted feature node"))?;
            let next = step
                .next_feature
                .ok_or_else(|| Error::contract("missing next feature node"))?;
            let target = if variant.has_extractor_copy() {
                // The split-extractor variant trains its extractor through
                // the inverse loss only.
                g.stop_grad(next)
            } else {
                next
            };
            let fdiff = g.sub(predicted, target)?;
            let fsq = g.mul(fdiff, fdiff)?;
            let fsum = g.sum(fsq);
            forward_terms.push(g.scale(fsum, 0.5 * weights.lambda_f));

            let inv_log =
                step.inverse_log.ok_or_else(|| Error::contract("missing inverse node"))?;
            let picked = g.gather(inv_log, t.action.index());
            inverse_terms.push(g.scale(picked, -weights.lambda_i));
        } else if step.predicted_feature.is_some() || step.inverse_log.is_some() {
            return Err(Error::contract(
                "prediction nodes on a variant without a prediction model",
            ));
        }

        match (variant.has_value_prediction(), step.predicted_value) {
            (true, Some(vhat)) => {
                let r_node = g.scalar_constant(F::c(weights.vpc_reward(t)));
                let v_minus_r = g.sub(step.value, r_node)?;
                let implied = g.scale(v_minus_r, 1.0 / weights.gamma);
                let e = g.sub(vhat, implied)?;
                let shaped = match weights.vpc_mode {
                    VpcMode::Squared => g.mul(e, e)?,
                    VpcMode::Abs => g.abs(e),
                    VpcMode::Signed => e,
                };
                vpc_terms.push(shaped);
            }
            (true, None) => return Err(Error::contract("missing predicted value node")),
            (false, Some(_)) => {
                return Err(Error::contract("predicted value node on a non-vpc variant"))
            }
            (false, None) => {}
        }
    }

    let policy = g.add_n(&policy_terms)?;
    let value = g.add_n(&value_terms)?;
    let entropy = g.add_n(&entropy_terms)?;
    let value_part = g.scale(value, weights.value_coef);
    let entropy_part = g.scale(entropy, -weights.entropy_coef);
    let mut total_parts = vec![policy, value_part, entropy_part];

    let forward = if forward_terms.is_empty() {
        None
    } else {
        let f = g.add_n(&forward_terms)?;
        total_parts.push(f);
        Some(f)
    };
    let inverse = if inverse_terms.is_empty() {
        None
    } else {
        let i = g.add_n(&inverse_terms)?;
        total_parts.push(i);
        Some(i)
    };
    let vpc = if vpc_terms.is_empty() {
        None
    } else {
        let sum = g.add_n(&vpc_terms)?;
        let v = g.scale(sum, weights.lambda_vpc / vpc_terms.len() as f64);
        total_parts.push(v);
        Some(v)
    };

    let total = g.add_n(&total_parts)?;
    let breakdown = LossBreakdown {
        policy_loss: g.scalar(policy).to_f64(),
        value_loss: g.scalar(value).to_f64(),
        entropy_bonus: g.scalar(entropy).to_f64(),
        forward_loss: forward.map(|id| g.scalar(id).to_f64()).unwrap_or(0.0),
        inverse_loss: inverse.map(|id| g.scalar(id).to_f64()).unwrap_or(0.0),
        vpc_loss: vpc.map(|id| g.scalar(id).to_f64()).unwrap_or(0.0),
        total: g.scalar(total).to_f64(),
    };
    Ok((
        RolloutLossNodes { total, policy, value, entropy, forward, inverse, vpc },
        breakdown,
    ))
}
