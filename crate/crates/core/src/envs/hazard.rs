//! Continuous 2-D goal reaching with circular hazards.
//!
//! The robot is a point in `[-w, w]²`. Each step it moves by
//! `step_size · a`, with `a` rescaled to at most unit norm, and is clamped to
//! the arena. Reward is the decrease in distance to the goal plus 1 when the
//! goal is reached; cost is 1 while the robot lies strictly inside any hazard.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{ActionSpace, EnvSpec, Environment, Step};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::trajectory::Action;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hazard {
    pub center: [f64; 2],
    pub radius: f64,
    #[serde(default)]
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalMode {
    /// Goal alternates between two fixed sites.
    FixedSwap,
    /// Goal respawns uniformly at random.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardMode {
    Static,
    Moving,
}

/// Static geometry and dynamics of a hazard world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardLayout {
    pub name: String,
    pub arena_half_width: f64,
    pub step_size: f64,
    pub goal_radius: f64,
    pub robot_start: [f64; 2],
    pub goal_sites: [[f64; 2]; 2],
    pub goal_mode: GoalMode,
    pub hazard_mode: HazardMode,
    pub hazards: Vec<Hazard>,
}

impl HazardLayout {
    /// `simple`, `dynamic` and `gremlin` share geometry and differ in how
    /// goals respawn and whether hazards move.
    pub fn preset(name: &str) -> Option<Self> {
        let (goal_mode, hazard_mode) = match name {
            "simple" => (GoalMode::FixedSwap, HazardMode::Static),
            "dynamic" => (GoalMode::Random, HazardMode::Static),
            "gremlin" => (GoalMode::Random, HazardMode::Moving),
            _ => return None,
        };
        let h = |x: f64, y: f64, vx: f64, vy: f64| Hazard { center: [x, y], radius: 0.35, velocity: [vx, vy] };
        Some(HazardLayout {
            name: name.to_string(),
            arena_half_width: 2.0,
            step_size: 0.1,
            goal_radius: 0.3,
            robot_start: [0.0, -1.6],
            goal_sites: [[1.4, 1.4], [-1.4, 1.4]],
            goal_mode,
            hazard_mode,
            hazards: vec![
                h(-0.8, 0.4, 0.03, 0.02),
                h(0.7, -0.3, -0.02, 0.03),
                h(0.2, 1.0, 0.025, -0.02),
                h(-0.3, -0.9, -0.03, -0.015),
            ],
        })
    }

    fn validate(&self) -> Result<()> {
        let w = self.arena_half_width;
        if !(w > 0.0 && self.step_size > 0.0 && self.goal_radius > 0.0) {
            return Err(Error::arg("arena_half_width, step_size and goal_radius must be > 0"));
        }
        let inside = |p: &[f64; 2]| p.iter().all(|c| c.is_finite() && c.abs() <= w);
        if !inside(&self.robot_start) || !self.goal_sites.iter().all(inside) {
            return Err(Error::arg("robot start and goal sites must lie inside the arena"));
        }
        for hz in &self.hazards {
            if !(hz.radius > 0.0) || !inside(&hz.center) || hz.velocity.iter().any(|v| !v.is_finite()) {
                return Err(Error::arg("hazards need positive radius, in-arena centres, finite velocity"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HazardNav2D {
    spec: EnvSpec,
    layout: HazardLayout,
    robot: [f64; 2],
    goal: [f64; 2],
    goal_index: usize,
    hazards: Vec<Hazard>,
    prev_distance: f64,
    t: usize,
    rng: Rng,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl HazardNav2D {
    pub fn new(layout: HazardLayout, horizon: usize) -> Result<Self> {
        layout.validate()?;
        if horizon == 0 {
            return Err(Error::arg("horizon must be >= 1"));
        }
        let w = layout.arena_half_width;
        let mut env = HazardNav2D {
            spec: EnvSpec {
                name: layout.name.clone(),
                state_dim: 4 + 2 * layout.hazards.len(),
                action_space: ActionSpace::Continuous { dim: 2, low: -1.0, high: 1.0 },
                horizon,
            },
            robot: layout.robot_start,
            goal: layout.goal_sites[0],
            goal_index: 0,
            hazards: layout.hazards.clone(),
            prev_distance: 0.0,
            t: 0,
            rng: rng::seeded(0),
            layout,
        };
        env.prev_distance = dist(env.robot, env.goal);
        debug_assert!(w > 0.0);
        Ok(env)
    }

    pub fn layout(&self) -> &HazardLayout {
        &self.layout
    }

    pub fn robot(&self) -> [f64; 2] {
        self.robot
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    pub fn hazards(&self) -> &[Hazard] {
        &self.hazards
    }

    /// Moves the robot without advancing time; used for scripted scenarios.
    pub fn place_robot(&mut self, pos: [f64; 2]) {
        let w = self.layout.arena_half_width;
        self.robot = [pos[0].clamp(-w, w), pos[1].clamp(-w, w)];
        self.prev_distance = dist(self.robot, self.goal);
    }

    pub fn place_goal(&mut self, pos: [f64; 2]) {
        self.goal = pos;
        self.prev_distance = dist(self.robot, self.goal);
    }

    /// 1 if `pos` lies strictly inside any hazard, else 0.
    pub fn cost_at(&self, pos: [f64; 2]) -> f64 {
        if self.hazards.iter().any(|h| dist(pos, h.center) < h.radius) {
            1.0
        } else {
            0.0
        }
    }

    fn observe(&self) -> Vec<f64> {
        let w = self.layout.arena_half_width;
        let [rx, ry] = self.robot;
        let mut obs = Vec::with_capacity(self.spec.state_dim);
        obs.extend([rx / w, ry / w, (self.goal[0] - rx) / w, (self.goal[1] - ry) / w]);
        for h in &self.hazards {
            obs.push((h.center[0] - rx) / w);
            obs.push((h.center[1] - ry) / w);
        }
        obs
    }

    fn respawn_goal(&mut self) {
        match self.layout.goal_mode {
            GoalMode::FixedSwap => {
                self.goal_index ^= 1;
                self.goal = self.layout.goal_sites[self.goal_index];
            }
            GoalMode::Random => {
                let m = self.layout.arena_half_width - self.layout.goal_radius;
                self.goal = [self.rng.random_range(-m..=m), self.rng.random_range(-m..=m)];
            }
        }
    }

    fn move_hazards(&mut self) {
        let w = self.layout.arena_half_width;
        for h in &mut self.hazards {
            for i in 0..2 {
                h.center[i] += h.velocity[i];
                if h.center[i] > w {
                    h.center[i] = 2.0 * w - h.center[i];
                    h.velocity[i] = -h.velocity[i];
                } else if h.center[i] < -w {
                    h.center[i] = -2.0 * w - h.center[i];
                    h.velocity[i] = -h.velocity[i];
                }
            }
        }
    }
}

impl Environment for HazardNav2D {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = rng::seeded(seed);
        self.robot = self.layout.robot_start;
        self.hazards = self.layout.hazards.clone();
        self.goal_index = 0;
        self.goal = match self.layout.goal_mode {
            GoalMode::FixedSwap => self.layout.goal_sites[0],
            GoalMode::Random => {
                self.respawn_goal();
                self.goal
            }
        };
        self.prev_distance = dist(self.robot, self.goal);
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        let a = match action {
            Action::Continuous(v) if v.len() == 2 => [v[0], v[1]],
            Action::Continuous(v) => return Err(Error::Shape { expected: 2, got: v.len(), context: "hazard action" }),
            Action::Discrete(_) => return Err(Error::arg("hazard world takes continuous actions")),
        };
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite action".into()));
        }
        if self.t >= self.spec.horizon {
            return Err(Error::arg("step called after episode end"));
        }
        let norm = (a[0] * a[0] + a[1] * a[1]).sqrt();
        let scale = if norm > 1.0 { 1.0 / norm } else { 1.0 };
        let w = self.layout.arena_half_width;
        let s = self.layout.step_size * scale;
        self.robot = [(self.robot[0] + s * a[0]).clamp(-w, w), (self.robot[1] + s * a[1]).clamp(-w, w)];
        if self.layout.hazard_mode == HazardMode::Moving {
            self.move_hazards();
        }

        let d = dist(self.robot, self.goal);
        let mut reward = self.prev_distance - d;
        if d < self.layout.goal_radius {
            reward += 1.0;
            self.respawn_goal();
        }
        self.prev_distance = dist(self.robot, self.goal);
        let cost = self.cost_at(self.robot);
        self.t += 1;
        Ok(Step { state: self.observe(), reward, cost, done: self.t >= self.spec.horizon })
    }
}
