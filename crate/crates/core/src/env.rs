//! 2-D point-mass navigation with walls, an optional circular obstacle, and
//! per-task action scaling.
//!
//! State is `[pos_x, pos_y, vel_x, vel_y, goal_dx, goal_dy]` where the last
//! two entries are the vector from the agent to the goal. Dynamics:
//!
//! ```text
//! v' = 0.8 v + action_scale * a        |a_i| <= 1
//! p' = p + 0.1 v'
//! ```
//!
//! Crossing a wall (|coordinate| > 1.5) reflects the position and negates
//! that velocity component; entering the obstacle mirrors the position back
//! across the circle boundary and reflects the velocity off the tangent.
//! Reward is the negative distance to the goal after the move, plus a +10
//! bonus on reaching the success radius. Episodes end on success or when
//! the horizon runs out.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const STATE_DIM: usize = 6;
pub const ACTION_DIM: usize = 2;

pub const WALL: f64 = 1.5;
const FRICTION: f64 = 0.8;
const DT: f64 = 0.1;
const SUCCESS_BONUS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Everything that defines one navigation task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task_id: String,
    pub goal: [f64; 2],
    #[serde(default)]
    pub obstacle: Option<Obstacle>,
    pub action_scale: f64,
    pub horizon: usize,
    pub success_radius: f64,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.task_id.is_empty()
            || !self
                .task_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return Err(Error::config(format!(
                "task id {:?} must be non-empty and filename-safe",
                self.task_id
            )));
        }
        if self.goal.iter().any(|g| g.abs() >= WALL) {
            return Err(Error::config(format!(
                "task {}: goal {:?} outside the arena",
                self.task_id, self.goal
            )));
        }
        if !(self.action_scale > 0.0) {
            return Err(Error::config(format!(
                "task {}: action scale must be positive",
                self.task_id
            )));
        }
        if self.horizon == 0 {
            return Err(Error::config(format!(
                "task {}: horizon must be at least 1",
                self.task_id
            )));
        }
        if !(self.success_radius > 0.0) {
            return Err(Error::config(format!(
                "task {}: success radius must be positive",
                self.task_id
            )));
        }
        if let Some(o) = &self.obstacle {
            if !(o.radius > 0.0) {
                return Err(Error::config(format!(
                    "task {}: obstacle radius must be positive (omit the obstacle instead)",
                    self.task_id
                )));
            }
            if dist(self.goal, o.center) <= o.radius + self.success_radius {
                return Err(Error::config(format!(
                    "task {}: goal region intersects the obstacle",
                    self.task_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub success: bool,
}

#[derive(Debug, Clone)]
pub struct PointNavEnv {
    spec: TaskSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    steps: usize,
    done: bool,
}

impl PointNavEnv {
    pub fn new(spec: TaskSpec) -> Result<Self> {
        spec.validate()?;
        Ok(PointNavEnv {
            spec,
            pos: [0.0, 0.0],
            vel: [0.0, 0.0],
            steps: 0,
            done: false,
        })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn state(&self) -> Vec<f64> {
        vec![
            self.pos[0],
            self.pos[1],
            self.vel[0],
            self.vel[1],
            self.spec.goal[0] - self.pos[0],
            self.spec.goal[1] - self.pos[1],
        ]
    }

    /// Reset to a fixed position at rest.
    pub fn reset_at(&mut self, pos: [f64; 2]) -> Vec<f64> {
        self.pos = pos;
        self.vel = [0.0, 0.0];
        self.steps = 0;
        self.done = false;
        self.state()
    }

    /// Reset to a random rest position in a small box around the origin,
    /// clear of the obstacle and of the goal region.
    pub fn reset_random(&mut self, rng: &mut impl Rng) -> Vec<f64> {
        const START_HALF_WIDTH: f64 = 0.35;
        loop {
            let p = [
                (rng.gen::<f64>() * 2.0 - 1.0) * START_HALF_WIDTH,
                (rng.gen::<f64>() * 2.0 - 1.0) * START_HALF_WIDTH,
            ];
            if let Some(o) = &self.spec.obstacle {
                if dist(p, o.center) < o.radius + 0.05 {
                    continue;
                }
            }
            if dist(p, self.spec.goal) < self.spec.success_radius + 0.1 {
                continue;
            }
            return self.reset_at(p);
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::state("step on a finished episode; reset first"));
        }
        if action.len() != ACTION_DIM {
            return Err(Error::argument(format!(
                "action has {} entries, expected {ACTION_DIM}",
                action.len()
            )));
        }
        if action.iter().any(|a| !a.is_finite() || a.abs() > 1.0) {
            return Err(Error::argument(format!(
                "action {action:?} outside [-1, 1]^2"
            )));
        }

        for i in 0..2 {
            self.vel[i] = FRICTION * self.vel[i] + self.spec.action_scale * action[i];
            self.pos[i] += DT * self.vel[i];
        }
        // Walls: mirror the overshoot, bounce the velocity.
        for i in 0..2 {
            if self.pos[i] > WALL {
                self.pos[i] = 2.0 * WALL - self.pos[i];
                self.vel[i] = -self.vel[i];
            } else if self.pos[i] < -WALL {
                self.pos[i] = -2.0 * WALL - self.pos[i];
                self.vel[i] = -self.vel[i];
            }
        }
        // Obstacle: mirror across the circle boundary, reflect velocity off
        // the tangent plane.
        if let Some(o) = &self.spec.obstacle {
            let d = dist(self.pos, o.center);
            if d < o.radius {
                let n = if d > 1e-9 {
                    [(self.pos[0] - o.center[0]) / d, (self.pos[1] - o.center[1]) / d]
                } else {
                    [1.0, 0.0]
                };
                let out = 2.0 * o.radius - d;
                self.pos = [o.center[0] + out * n[0], o.center[1] + out * n[1]];
                let vn = self.vel[0] * n[0] + self.vel[1] * n[1];
                self.vel[0] -= 2.0 * vn * n[0];
                self.vel[1] -= 2.0 * vn * n[1];
            }
        }

        self.steps += 1;
        let goal_dist = dist(self.pos, self.spec.goal);
        let success = goal_dist < self.spec.success_radius;
        let reward = -goal_dist + if success { SUCCESS_BONUS } else { 0.0 };
        let terminal = success || self.steps >= self.spec.horizon;
        self.done = terminal;
        Ok(StepOutcome {
            state: self.state(),
            reward,
            terminal,
            success,
        })
    }
}

/// Scripted data-collection controller: PD pull toward the goal, a radial +
/// tangential push away from the obstacle, white exploration noise, clipped
/// into the action box. Gains are expressed as accelerations and divided by
/// the task's action scale so behaviour is comparable across tasks.
pub fn behavior_policy(
    spec: &TaskSpec,
    state: &[f64],
    noise_scale: f64,
    rng: &mut impl Rng,
) -> Result<[f64; 2]> {
    if state.len() != STATE_DIM {
        return Err(Error::argument(format!(
            "state has {} entries, expected {STATE_DIM}",
            state.len()
        )));
    }
    const K_P: f64 = 1.0;
    const K_V: f64 = 0.3;
    const K_RADIAL: f64 = 1.2;
    const K_TANGENT: f64 = 0.9;
    const INFLUENCE_MARGIN: f64 = 0.35;

    let pos = [state[0], state[1]];
    let vel = [state[2], state[3]];
    let delta = [state[4], state[5]];
    let mut accel = [K_P * delta[0] - K_V * vel[0], K_P * delta[1] - K_V * vel[1]];
    if let Some(o) = &spec.obstacle {
        let d = dist(pos, o.center);
        let influence = o.radius + INFLUENCE_MARGIN;
        if d < influence && d > 1e-9 {
            let w = (influence - d) / influence;
            let n = [(pos[0] - o.center[0]) / d, (pos[1] - o.center[1]) / d];
            // Swirl sideways in whichever direction makes progress.
            let mut t = [-n[1], n[0]];
            if t[0] * delta[0] + t[1] * delta[1] < 0.0 {
                t = [-t[0], -t[1]];
            }
            accel[0] += w * (K_RADIAL * n[0] + K_TANGENT * t[0]);
            accel[1] += w * (K_RADIAL * n[1] + K_TANGENT * t[1]);
        }
    }
    let mut a = [0.0; 2];
    for i in 0..2 {
        let noise: f64 = rng.sample(StandardNormal);
        a[i] = (accel[i] / spec.action_scale + noise_scale * noise).clamp(-1.0, 1.0);
    }
    Ok(a)
}
