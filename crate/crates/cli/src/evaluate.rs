//! Greedy evaluation of a saved checkpoint: play full episodes with the
//! argmax action, no exploration, recurrent state reset at every episode.

use std::path::Path;
use std::sync::Arc;

use mazerl_core::autodiff::{load_checkpoint, Graph};
use mazerl_core::env::{parse_maze, reset, Action, Maze};
use mazerl_core::models::{lstm_nodes, obs_constant, BoundModel, Extractor, LstmValues, Variant};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct EvalSummary {
    pub episodes: u32,
    pub mean_return: f64,
    pub mean_length: f64,
    pub success_rate: f64,
}

/// Argmax over the policy; ties break toward the lowest action index, so a
/// uniform policy deterministically repeats the first action.
pub fn greedy_action(policy: &[f32]) -> Result<Action> {
    if policy.len() != Action::COUNT {
        return Err(Error::Core(mazerl_core::Error::ShapeMismatch {
            op: "greedy_action",
            expected: vec![Action::COUNT],
            got: vec![policy.len()],
        }));
    }
    let mut best = 0;
    for (i, &p) in policy.iter().enumerate() {
        if p > policy[best] {
            best = i;
        }
    }
    Ok(Action::from_index(best)?)
}

/// Play `episodes` greedy episodes on `maze` and summarize them. The policy
/// network is rebuilt per step on a fresh graph; only the recurrent values
/// carry over, exactly as during training.
pub fn evaluate_checkpoint(checkpoint: &Path, maze_file: &Path, episodes: u32) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::input("episodes must be at least 1"));
    }
    let ckpt = load_checkpoint(checkpoint)?;
    let variant = Variant::from_str(&ckpt.variant)?;
    let text = std::fs::read_to_string(maze_file).map_err(|e| Error::io(maze_file, e))?;
    let maze = Arc::new(parse_maze(&text)?);

    let mut total_return = 0.0;
    let mut total_length = 0u64;
    let mut successes = 0u32;
    for episode in 0..episodes {
        let (ret, len, goal) = play_episode(&ckpt.params, variant, &maze, episode as u64)?;
        total_return += ret;
        total_length += u64::from(len);
        if goal {
            successes += 1;
        }
    }
    Ok(EvalSummary {
        episodes,
        mean_return: total_return / f64::from(episodes),
        mean_length: total_length as f64 / f64::from(episodes),
        success_rate: f64::from(successes) / f64::from(episodes),
    })
}

fn play_episode(
    params: &mazerl_core::autodiff::ParamSet<f32>,
    variant: Variant,
    maze: &Arc<Maze>,
    seed: u64,
) -> Result<(f64, u32, bool)> {
    let (mut env, mut obs) = reset(Arc::clone(maze), seed);
    let mut lstm: LstmValues<f32> = LstmValues::zeros();
    let mut ret = 0.0;
    loop {
        let mut g: Graph<f32> = Graph::new();
        let model = BoundModel::bind(&mut g, params, variant)?;
        let o = obs_constant(&mut g, &obs);
        let feat = model.extract_features(&mut g, o, Extractor::Shared)?;
        let state = lstm_nodes(&mut g, &lstm);
        let pv = model.policy_value(&mut g, feat, state)?;
        let action = greedy_action(g.values(pv.policy))?;
        lstm = LstmValues {
            h: g.values(pv.next_state.h).to_vec(),
            c: g.values(pv.next_state.c).to_vec(),
        };
        let step = env.step(action)?;
        ret += step.extrinsic_reward;
        if step.done {
            return Ok((ret, env.steps_taken, step.reached_goal));
        }
        obs = step.observation;
    }
}
