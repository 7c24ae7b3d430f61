//! Deterministic grid mazes with sparse terminal reward.
//!
//! The agent walks a 4-connected grid. Every step costs a small penalty;
//! reaching the goal yields the terminal reward and ends the episode, as does
//! exhausting the step limit. Observations are an egocentric window onto the
//! maze, never the full layout.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Observation window geometry: rows x cols x channels, agent at the anchor.
pub const OBS_ROWS: usize = 10;
pub const OBS_COLS: usize = 30;
pub const OBS_CHANNELS: usize = 3;
pub const OBS_SHAPE: [usize; 3] = [OBS_ROWS, OBS_COLS, OBS_CHANNELS];
/// Window position of the agent: rows -5..+4 and cols -15..+14 around it.
pub const WINDOW_ANCHOR: (usize, usize) = (5, 15);

pub const STEP_PENALTY: f64 = -0.001;
pub const GOAL_REWARD: f64 = 1.0;

const CH_WALL: usize = 0;
const CH_GOAL: usize = 1;
const CH_AGENT: usize = 2;

/// The four grid moves, indexed 0..4 in this order.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Action {
    Up,
    Right,
    Down,
    Left,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Right, Action::Down, Action::Left];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Right => 1,
            Action::Down => 2,
            Action::Left => 3,
        }
    }

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::contract(format!("action index {i} out of range")))
    }

    /// (row delta, col delta) with rows growing downward.
    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Right => (0, 1),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
        }
    }
}

/// Immutable maze: wall grid, start/goal, episode limit.
#[derive(Clone, Debug)]
pub struct Maze {
    walls: Vec<bool>,
    rows: usize,
    cols: usize,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    pub max_steps: u32,
    pub name: String,
}

impl Maze {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Out-of-bounds coordinates count as walls.
    pub fn is_wall(&self, row: isize, col: isize) -> bool {
        if row < 0 || col < 0 || row >= self.rows as isize || col >= self.cols as isize {
            return true;
        }
        self.walls[row as usize * self.cols + col as usize]
    }

    pub fn is_free(&self, row: isize, col: isize) -> bool {
        !self.is_wall(row, col)
    }

    /// All free cells, row-major.
    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                if !self.walls[r * self.cols + c] {
                    out.push((r, c));
                }
            }
        }
        out
    }
}

/// Parse the ASCII maze format: optional `key=value` header lines (`name`,
/// `max_steps`), then the grid with `#` wall, `.` free, `S` start, `G` goal.
pub fn parse_maze(text: &str) -> Result<Maze> {
    let mut name = String::from("unnamed");
    let mut max_steps: Option<u32> = None;
    let mut grid_lines: Vec<&str> = Vec::new();
    let mut in_grid = false;

    for line in text.lines() {
        let trimmed = line.trim_end();
        if trimmed.is_empty() && !in_grid {
            continue;
        }
        if !in_grid {
            if let Some(rest) = trimmed.strip_prefix("name=") {
                name = rest.trim().to_string();
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix("max_steps=") {
                let v = rest.trim().parse::<u32>().map_err(|_| Error::InvalidMaze {
                    reason: format!("max_steps is not a positive integer: {rest:?}"),
                })?;
                if v == 0 {
                    return Err(Error::InvalidMaze { reason: "max_steps must be > 0".into() });
                }
                max_steps = Some(v);
                continue;
            }
            in_grid = true;
        }
        if trimmed.is_empty() {
            break;
        }
        grid_lines.push(trimmed);
    }

    let max_steps = max_steps
        .ok_or_else(|| Error::InvalidMaze { reason: "missing max_steps= header".into() })?;
    if grid_lines.is_empty() {
        return Err(Error::InvalidMaze { reason: "no grid rows".into() });
    }
    let rows = grid_lines.len();
    let cols = grid_lines[0].chars().count();
    if cols == 0 {
        return Err(Error::InvalidMaze { reason: "empty grid row".into() });
    }

    let mut walls = vec![false; rows * cols];
    let mut start = None;
    let mut goal = None;
    for (r, line) in grid_lines.iter().enumerate() {
        let row_chars: Vec<char> = line.chars().collect();
        if row_chars.len() != cols {
            return Err(Error::InvalidMaze {
                reason: format!("row {r} has {} cells, expected {cols}", row_chars.len()),
            });
        }
        for (c, ch) in row_chars.iter().enumerate() {
            match ch {
                '#' => walls[r * cols + c] = true,
                '.' => {}
                'S' => {
                    if start.replace((r, c)).is_some() {
                        return Err(Error::InvalidMaze { reason: "multiple start cells".into() });
                    }
                }
                'G' => {
                    if goal.replace((r, c)).is_some() {
                        return Err(Error::InvalidMaze { reason: "multiple goal cells".into() });
                    }
                }
                other => {
                    return Err(Error::InvalidMaze {
                        reason: format!("unexpected character {other:?} at row {r} col {c}"),
                    });
                }
            }
        }
    }

    let start = start.ok_or_else(|| Error::InvalidMaze { reason: "no start cell".into() })?;
    let goal = goal.ok_or_else(|| Error::InvalidMaze { reason: "no goal cell".into() })?;
    if start == goal {
        return Err(Error::InvalidMaze { reason: "start equals goal".into() });
    }

    let maze = Maze { walls, rows, cols, start, goal, max_steps, name };
    shortest_path_length(&maze)?;
    Ok(maze)
}

/// BFS distance (4-connected) from start to goal.
pub fn shortest_path_length(maze: &Maze) -> Result<usize> {
    let mut dist = vec![usize::MAX; maze.rows * maze.cols];
    let mut queue = VecDeque::new();
    dist[maze.start.0 * maze.cols + maze.start.1] = 0;
    queue.push_back(maze.start);
    while let Some((r, c)) = queue.pop_front() {
        let d = dist[r * maze.cols + c];
        if (r, c) == maze.goal {
            return Ok(d);
        }
        for action in Action::ALL {
            let (dr, dc) = action.delta();
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if maze.is_free(nr, nc) {
                let ni = nr as usize * maze.cols + nc as usize;
                if dist[ni] == usize::MAX {
                    dist[ni] = d + 1;
                    queue.push_back((nr as usize, nc as usize));
                }
            }
        }
    }
    Err(Error::InvalidMaze { reason: "goal not reachable from start".into() })
}

/// Egocentric binary observation: channel 0 walls, 1 goal, 2 agent.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    data: Vec<f32>,
}

impl Observation {
    pub fn from_data(data: Vec<f32>) -> Result<Observation> {
        if data.len() != OBS_ROWS * OBS_COLS * OBS_CHANNELS {
            return Err(Error::ShapeMismatch {
                op: "observation",
                expected: vec![OBS_ROWS, OBS_COLS, OBS_CHANNELS],
                got: vec![data.len()],
            });
        }
        Ok(Observation { data })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * OBS_COLS + col) * OBS_CHANNELS + ch]
    }
}

/// Render the window around `agent_pos`. Cells outside the maze are walls.
pub fn encode_observation(maze: &Maze, agent_pos: (usize, usize)) -> Observation {
    let mut data = vec![0.0f32; OBS_ROWS * OBS_COLS * OBS_CHANNELS];
    let top = agent_pos.0 as isize - WINDOW_ANCHOR.0 as isize;
    let left = agent_pos.1 as isize - WINDOW_ANCHOR.1 as isize;
    for wr in 0..OBS_ROWS {
        for wc in 0..OBS_COLS {
            let (mr, mc) = (top + wr as isize, left + wc as isize);
            let base = (wr * OBS_COLS + wc) * OBS_CHANNELS;
            if maze.is_wall(mr, mc) {
                data[base + CH_WALL] = 1.0;
            } else if (mr as usize, mc as usize) == maze.goal {
                data[base + CH_GOAL] = 1.0;
            }
        }
    }
    let anchor = (WINDOW_ANCHOR.0 * OBS_COLS + WINDOW_ANCHOR.1) * OBS_CHANNELS;
    data[anchor + CH_AGENT] = 1.0;
    Observation { data }
}

/// One environment episode in progress.
#[derive(Clone, Debug)]
pub struct EnvState {
    maze: Arc<Maze>,
    pub agent_pos: (usize, usize),
    pub steps_taken: u32,
    pub done: bool,
    pub reached_goal: bool,
    pub episode_seed: u64,
}

/// Outcome of one step.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub observation: Observation,
    pub extrinsic_reward: f64,
    pub done: bool,
    pub reached_goal: bool,
    pub steps_taken: u32,
}

/// Start an episode at the maze's start cell.
pub fn reset(maze: Arc<Maze>, seed: u64) -> (EnvState, Observation) {
    let obs = encode_observation(&maze, maze.start);
    let state = EnvState {
        agent_pos: maze.start,
        steps_taken: 0,
        done: false,
        reached_goal: false,
        episode_seed: seed,
        maze,
    };
    (state, obs)
}

impl EnvState {
    pub fn maze(&self) -> &Maze {
        &self.maze
    }

    /// Advance one step. Blocked moves keep the position but still cost the
    /// step penalty and count against the limit.
    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::contract("step called on a finished episode"));
        }
        let (dr, dc) = action.delta();
        let (nr, nc) = (self.agent_pos.0 as isize + dr, self.agent_pos.1 as isize + dc);
        if self.maze.is_free(nr, nc) {
            self.agent_pos = (nr as usize, nc as usize);
        }
        self.steps_taken += 1;

        let mut reward = STEP_PENALTY;
        if self.agent_pos == self.maze.goal {
            reward += GOAL_REWARD;
            self.reached_goal = true;
            self.done = true;
        }
        if self.steps_taken >= self.maze.max_steps {
            self.done = true;
        }

        Ok(StepResult {
            observation: encode_observation(&self.maze, self.agent_pos),
            extrinsic_reward: reward,
            done: self.done,
            reached_goal: self.reached_goal,
            steps_taken: self.steps_taken,
        })
    }
}
