//! Asynchronous on-policy training.
//!
//! N workers each own a private environment and recurrent state, act under
//! periodic snapshots of the shared parameters, and apply their own Adam
//! updates without cross-worker averaging. A rollout is collected, trained
//! on once, and dropped; there is no replay. With one worker the whole loop
//! is deterministic for a fixed seed.

pub mod config;
pub mod metrics;
pub mod shared;

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    clip_global_norm, save_checkpoint, AdamHyper, Checkpoint, Graph, TensorId,
};
use crate::env::{parse_maze, reset, Action, EnvState, Maze, Observation};
use crate::error::{Error, Result};
use crate::losses::{
    assemble_rollout_loss, LossBreakdown, LossWeights, Rollout, StepNodes, Transition,
};
use crate::models::{lstm_nodes, obs_constant, BoundModel, Extractor, LstmValues};

pub use config::TrainConfig;
pub use metrics::{MetricsRecord, MetricsWriter, METRICS_HEADER};
pub use shared::{LocalMoments, SharedTrainingState};

/// Output locations of one finished run.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub env_steps: u64,
}

/// Stable per-worker seed derived from the run seed.
fn worker_seed(seed: u64, worker_id: u64) -> u64 {
    let mut z = seed ^ worker_id.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(0xd1b54a32d192ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Inverse-CDF sample from the policy. `u` must lie in [0, 1); rounding
/// shortfall in the distribution falls through to the last action.
pub fn sample_action(policy: &[f32], u: f64) -> Result<Action> {
    if policy.len() != Action::COUNT {
        return Err(Error::ShapeMismatch {
            op: "sample_action",
            expected: vec![Action::COUNT],
            got: vec![policy.len()],
        });
    }
    let mut cum = 0.0f64;
    for (i, &p) in policy.iter().enumerate() {
        cum += p as f64;
        if u < cum {
            return Action::from_index(i);
        }
    }
    Action::from_index(Action::COUNT - 1)
}

fn finite_breakdown(b: &LossBreakdown, worker: usize) -> Result<()> {
    for (name, v) in [
        ("policy_loss", b.policy_loss),
        ("value_loss", b.value_loss),
        ("entropy_bonus", b.entropy_bonus),
        ("forward_loss", b.forward_loss),
        ("inverse_loss", b.inverse_loss),
        ("vpc_loss", b.vpc_loss),
        ("total", b.total),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("{name} on worker {worker}"),
            });
        }
    }
    Ok(())
}

struct EpisodeAccum {
    index: u64,
    extrinsic_return: f64,
    intrinsic_sum: f64,
    prediction_error_sum: f64,
    breakdowns: Vec<LossBreakdown>,
}

impl EpisodeAccum {
    fn fresh(index: u64) -> Self {
        EpisodeAccum {
            index,
            extrinsic_return: 0.0,
            intrinsic_sum: 0.0,
            prediction_error_sum: 0.0,
            breakdowns: Vec::new(),
        }
    }

    fn mean_losses(&self) -> LossBreakdown {
        let n = self.breakdowns.len().max(1) as f64;
        let mut acc = LossBreakdown::default();
        for b in &self.breakdowns {
            acc.policy_loss += b.policy_loss;
            acc.value_loss += b.value_loss;
            acc.entropy_bonus += b.entropy_bonus;
            acc.forward_loss += b.forward_loss;
            acc.inverse_loss += b.inverse_loss;
            acc.vpc_loss += b.vpc_loss;
            acc.total += b.total;
        }
        acc.policy_loss /= n;
        acc.value_loss /= n;
        acc.entropy_bonus /= n;
        acc.forward_loss /= n;
        acc.inverse_loss /= n;
        acc.vpc_loss /= n;
        acc.total /= n;
        acc
    }
}

struct WorkerLoop {
    id: usize,
    run_id: String,
    cfg: TrainConfig,
    weights: LossWeights,
    maze: Arc<Maze>,
    rng: ChaCha8Rng,
    env: EnvState,
    obs: Observation,
    lstm: LstmValues<f32>,
    episode: EpisodeAccum,
    local_adam: Option<LocalMoments>,
    checkpoint_dir: PathBuf,
    last_checkpoint_bucket: u64,
    env_steps_done: u64,
}

impl WorkerLoop {
    fn new(
        id: usize,
        run_id: &str,
        cfg: &TrainConfig,
        maze: Arc<Maze>,
        shared: &SharedTrainingState,
        checkpoint_dir: &Path,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(worker_seed(cfg.seed, id as u64));
        let episode_seed = rng.gen::<u64>();
        let (env, obs) = reset(maze.clone(), episode_seed);
        let local_adam = if cfg.shared_adam { None } else { Some(shared.local_moments()) };
        WorkerLoop {
            id,
            run_id: run_id.to_string(),
            cfg: cfg.clone(),
            weights: cfg.loss_weights(),
            maze,
            rng,
            env,
            obs,
            lstm: LstmValues::zeros(),
            episode: EpisodeAccum::fresh(0),
            local_adam,
            checkpoint_dir: checkpoint_dir.to_path_buf(),
            last_checkpoint_bucket: 0,
            env_steps_done: 0,
        }
    }

    fn start_new_episode(&mut self) {
        let next_index = self.episode.index + 1;
        self.episode = EpisodeAccum::fresh(next_index);
        let seed = self.rng.gen::<u64>();
        let (env, obs) = reset(self.maze.clone(), seed);
        self.env = env;
        self.obs = obs;
        self.lstm = LstmValues::zeros();
    }

    /// Collect one rollout under the given snapshot, assemble its loss, and
    /// return the gradients with the per-segment breakdown.
    fn rollout_update(
        &mut self,
        params: &crate::autodiff::ParamSet<f32>,
    ) -> Result<(Rollout, LossBreakdown, crate::autodiff::Gradients<f32>)> {
        let variant = self.cfg.variant;
        let mut g: Graph<f32> = Graph::new();
        let model = BoundModel::bind(&mut g, params, variant)?;

        let initial_state = self.lstm.clone();
        let mut state = lstm_nodes(&mut g, &initial_state);
        let mut carried_shared: Option<TensorId> = None;
        let mut carried_icm: Option<TensorId> = None;
        let mut transitions: Vec<Transition> = Vec::with_capacity(self.cfg.rollout_length);
        let mut step_nodes: Vec<StepNodes> = Vec::with_capacity(self.cfg.rollout_length);

        for _ in 0..self.cfg.rollout_length {
            let feat = match carried_shared {
                Some(f) => f,
                None => {
                    let o = obs_constant(&mut g, &self.obs);
                    model.extract_features(&mut g, o, Extractor::Shared)?
                }
            };
            let pv = model.policy_value(&mut g, feat, state)?;
            let action = sample_action(g.values(pv.policy), self.rng.gen::<f64>())?;

            let policy_rec = g.values(pv.policy).to_vec();
            let log_pi_a = g.values(pv.log_policy)[action.index()] as f64;
            let value = g.scalar(pv.value) as f64;
            let current_obs = self.obs.clone();
            let icm_feat = if variant.has_extractor_copy() {
                Some(match carried_icm {
                    Some(f) => f,
                    None => {
                        let o = obs_constant(&mut g, &current_obs);
                        model.extract_features(&mut g, o, Extractor::IcmCopy)?
                    }
                })
            } else {
                None
            };

            let sr = self.env.step(action)?;

            let next_shared = {
                let o = obs_constant(&mut g, &sr.observation);
                model.extract_features(&mut g, o, Extractor::Shared)?
            };
            carried_shared = Some(next_shared);

            let mut tr = Transition {
                observation: current_obs.clone(),
                action,
                extrinsic_reward: sr.extrinsic_reward,
                intrinsic_reward: 0.0,
                done: sr.done,
                policy: policy_rec,
                log_policy_action: log_pi_a,
                value,
                feature: g.values(feat).to_vec(),
                next_feature: None,
                predicted_feature: None,
                inverse_dist: None,
                predicted_value: None,
                prediction_error_l2: None,
            };
            let mut nodes = StepNodes {
                policy: pv.policy,
                log_policy: pv.log_policy,
                value: pv.value,
                next_feature: None,
                predicted_feature: None,
                inverse_log: None,
                predicted_value: None,
            };

            if variant.has_prediction() {
                let (pred_t, pred_next) = match icm_feat {
                    Some(it) => {
                        let o = obs_constant(&mut g, &sr.observation);
                        let inext = model.extract_features(&mut g, o, Extractor::IcmCopy)?;
                        carried_icm = Some(inext);
                        (it, inext)
                    }
                    None => (feat, next_shared),
                };
                let predicted = model.forward_model(&mut g, pred_t, action)?;
                let (inv_probs, inv_log) = model.inverse_model(&mut g, pred_t, pred_next)?;

                let predicted_vals = g.values(predicted);
                let target_vals = g.values(pred_next);
                let sq: f64 = predicted_vals
                    .iter()
                    .zip(target_vals)
                    .map(|(&p, &a)| {
                        let d = p as f64 - a as f64;
                        d * d
                    })
                    .sum();
                tr.intrinsic_reward = self.weights.beta * sq;
                tr.prediction_error_l2 = Some(sq.sqrt());
                tr.feature = g.values(pred_t).to_vec();
                tr.next_feature = Some(target_vals.to_vec());
                tr.predicted_feature = Some(predicted_vals.to_vec());
                tr.inverse_dist = Some(g.values(inv_probs).to_vec());
                nodes.next_feature = Some(pred_next);
                nodes.predicted_feature = Some(predicted);
                nodes.inverse_log = Some(inv_log);
            }
            if variant.has_value_prediction() {
                let pf = nodes.predicted_feature.expect("prediction model precedes vpc");
                let vhat = model.predicted_value(&mut g, pf, pv.next_state)?;
                tr.predicted_value = Some(g.scalar(vhat) as f64);
                nodes.predicted_value = Some(vhat);
            }

            self.obs = sr.observation;
            state = pv.next_state;
            transitions.push(tr);
            step_nodes.push(nodes);
            if sr.done {
                break;
            }
        }

        let last_done = transitions.last().expect("rollout_length >= 1").done;
        let bootstrap_value = if last_done {
            0.0
        } else {
            // peek at the next value; the advanced recurrent state is dropped
            let feat_end = carried_shared.expect("at least one step ran");
            let peek = model.policy_value(&mut g, feat_end, state)?;
            g.scalar(peek.value) as f64
        };

        // the recurrent state carries across segment boundaries of one episode
        self.lstm = LstmValues {
            h: g.values(state.h).to_vec(),
            c: g.values(state.c).to_vec(),
        };

        let rollout = Rollout { transitions, bootstrap_value, initial_state };
        let (loss_nodes, breakdown) =
            assemble_rollout_loss(&mut g, variant, &step_nodes, &rollout, &self.weights)?;
        finite_breakdown(&breakdown, self.id)?;
        let mut grads = g.backward(loss_nodes.total)?;
        clip_global_norm(&mut grads, self.cfg.clip_norm);
        Ok((rollout, breakdown, grads))
    }

    fn run(
        mut self,
        shared: &SharedTrainingState,
        tx: mpsc::Sender<MetricsRecord>,
        start: Instant,
    ) -> Result<u64> {
        while !shared.stop_requested() && shared.env_steps() < self.cfg.total_env_steps {
            let params = shared.snapshot();
            let (rollout, breakdown, grads) = self.rollout_update(&params)?;
            shared.apply(&grads, self.local_adam.as_mut())?;
            let n = rollout.transitions.len() as u64;
            self.env_steps_done += n;
            let global = shared.add_env_steps(n);
            if global >= self.cfg.total_env_steps {
                shared.request_stop();
            }

            for t in &rollout.transitions {
                self.episode.extrinsic_return += t.extrinsic_reward;
                self.episode.intrinsic_sum += t.intrinsic_reward;
                self.episode.prediction_error_sum += t.prediction_error_l2.unwrap_or(0.0);
            }
            self.episode.breakdowns.push(breakdown);

            if rollout.transitions.last().expect("non-empty").done {
                let losses = self.episode.mean_losses();
                let length = self.env.steps_taken;
                let record = MetricsRecord {
                    run_id: self.run_id.clone(),
                    worker_id: self.id,
                    global_step: global,
                    episode_index: self.episode.index,
                    episode_extrinsic_return: self.episode.extrinsic_return,
                    episode_length: length,
                    mean_intrinsic_reward: self.episode.intrinsic_sum / length as f64,
                    mean_prediction_error_l2: self.episode.prediction_error_sum / length as f64,
                    policy_loss: losses.policy_loss,
                    value_loss: losses.value_loss,
                    entropy: losses.entropy_bonus,
                    forward_loss: losses.forward_loss,
                    inverse_loss: losses.inverse_loss,
                    vpc_loss: losses.vpc_loss,
                    wall_clock_s: if self.cfg.record_wall_clock {
                        start.elapsed().as_secs_f64()
                    } else {
                        0.0
                    },
                };
                tx.send(record)
                    .map_err(|_| Error::contract("metrics writer exited early"))?;
                self.start_new_episode();
            }

            if self.id == 0 && self.cfg.checkpoint_interval > 0 {
                let bucket = global / self.cfg.checkpoint_interval;
                if bucket > self.last_checkpoint_bucket {
                    self.last_checkpoint_bucket = bucket;
                    let step = bucket * self.cfg.checkpoint_interval;
                    let ckpt = Checkpoint {
                        params: shared.snapshot(),
                        variant: self.cfg.variant.as_str().to_string(),
                        global_step: step,
                    };
                    let path = self.checkpoint_dir.join(format!("step_{step}.json"));
                    save_checkpoint(&ckpt, &path)?;
                }
            }
        }
        Ok(self.env_steps_done)
    }
}

/// Run one training process: spawn workers, stream metrics, checkpoint, and
/// save the final parameters. Blocks until the step budget is reached.
pub fn train(cfg: &TrainConfig, run_id: &str, run_dir: &Path) -> Result<RunArtifacts> {
    cfg.validate()?;
    let maze_text = std::fs::read_to_string(&cfg.maze_file)
        .map_err(|e| Error::io(&cfg.maze_file, e))?;
    let maze = Arc::new(parse_maze(&maze_text)?);

    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let checkpoint_dir = run_dir.join("checkpoints");
    std::fs::create_dir_all(&checkpoint_dir).map_err(|e| Error::io(&checkpoint_dir, e))?;

    let resolved = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::InvalidConfig { reason: format!("unserializable config: {e}") })?;
    let config_path = run_dir.join("config.json");
    std::fs::write(&config_path, resolved + "\n").map_err(|e| Error::io(&config_path, e))?;

    let metrics_path = run_dir.join("metrics.csv");
    let mut writer = MetricsWriter::create(&metrics_path, cfg.metrics_flush_interval)?;

    let params = crate::models::init_params(cfg.variant, cfg.seed);
    let shared = SharedTrainingState::new(params, cfg.lr, AdamHyper::default(), cfg.shared_adam);
    let start = Instant::now();
    let (tx, rx) = mpsc::channel::<MetricsRecord>();

    let (writer_result, worker_results) = std::thread::scope(|s| {
        let writer_handle = s.spawn(move || -> Result<()> {
            for record in rx {
                writer.append(&record)?;
            }
            writer.flush()
        });

        let mut handles = Vec::with_capacity(cfg.workers);
        for id in 0..cfg.workers {
            let worker = WorkerLoop::new(id, run_id, cfg, maze.clone(), &shared, &checkpoint_dir);
            let tx = tx.clone();
            let shared_ref = &shared;
            handles.push(s.spawn(move || worker.run(shared_ref, tx, start)));
        }
        drop(tx);

        let worker_results: Vec<Result<u64>> =
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect();
        let writer_result = writer_handle.join().expect("metrics writer panicked");
        (writer_result, worker_results)
    });

    writer_result?;
    let mut worker_total = 0u64;
    for r in worker_results {
        worker_total += r?;
    }
    let env_steps = shared.env_steps();
    if worker_total != env_steps {
        return Err(Error::contract(format!(
            "step accounting drift: workers report {worker_total}, counter says {env_steps}"
        )));
    }

    let final_checkpoint = checkpoint_dir.join("final.json");
    let ckpt = Checkpoint {
        params: shared.snapshot(),
        variant: cfg.variant.as_str().to_string(),
        global_step: env_steps,
    };
    save_checkpoint(&ckpt, &final_checkpoint)?;

    Ok(RunArtifacts {
        run_dir: run_dir.to_path_buf(),
        metrics_path,
        final_checkpoint,
        env_steps,
    })
}
