//! 2D continuous navigation world with raycast lidar.
//!
//! A disc robot moves through an axis-aligned rectangular room containing
//! static and patrolling obstacles. Observations are 10 lidar ranges over
//! the front 180 degrees plus target distance and bearing. Episodes end on
//! goal contact, collision, or a step cap.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const LIDAR_BEAMS: usize = 10;
pub const LIDAR_MIN: f64 = 0.13;
pub const LIDAR_MAX: f64 = 4.0;
/// Raw observation width: 10 ranges + goal distance + goal bearing.
pub const OBS_DIM: usize = LIDAR_BEAMS + 2;
pub const ACTION_COUNT: usize = 5;
/// Heading change per action, radians: {-30, -15, 0, +15, +30} degrees.
pub const TURN_ANGLES: [f64; ACTION_COUNT] = [
    -30.0 * PI / 180.0,
    -15.0 * PI / 180.0,
    0.0,
    15.0 * PI / 180.0,
    30.0 * PI / 180.0,
];
pub const STEP_DISTANCE: f64 = 0.15;
pub const OBSTACLE_STEP: f64 = 0.04;
pub const GOAL_REWARD: f64 = 200.0;
pub const COLLISION_REWARD: f64 = -200.0;
pub const PROGRESS_GAIN: f64 = 15.0;
pub const STEP_PENALTY: f64 = 0.1;
/// Simulated wall-clock seconds per control tick, used for time axes.
pub const SECONDS_PER_STEP: f64 = 0.5;

pub const TRAIN_STEP_CAP: usize = 6000;
pub const TEST_STEP_CAP: usize = 1000;

pub const WORLD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error("could not sample a collision-free goal after {0} attempts")]
    GoalSampling(usize),
    #[error("step called on a finished episode")]
    EpisodeFinished,
    #[error("action index {0} out of range 0..{ACTION_COUNT}")]
    BadAction(usize),
    #[error("world file error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub enum Shape {
    Circle { center: [f64; 2], radius: f64 },
    Rect { corner: [f64; 2], width: f64, height: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Obstacle {
    pub shape: Shape,
    /// Patrol direction; the obstacle advances `OBSTACLE_STEP` along this
    /// (normalized) vector each tick and reverses on wall contact.
    #[serde(default)]
    pub patrol: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WorldSpec {
    pub format_version: u32,
    pub name: String,
    /// (x_min, y_min, x_max, y_max) in meters.
    pub bounds: [f64; 4],
    pub obstacles: Vec<Obstacle>,
    pub robot_radius: f64,
    /// (x, y, heading).
    pub start_pose: [f64; 3],
    pub goal_tolerance: f64,
    /// Optional uniform lidar range jitter amplitude; off by default.
    #[serde(default)]
    pub range_jitter: Option<f64>,
}

impl WorldSpec {
    /// Empty room centered on the origin; the starting pose is the
    /// geometric center facing +x.
    pub fn empty_room(name: &str, width: f64, height: f64) -> Self {
        Self {
            format_version: WORLD_FORMAT_VERSION,
            name: name.to_string(),
            bounds: [-width / 2.0, -height / 2.0, width / 2.0, height / 2.0],
            obstacles: Vec::new(),
            robot_radius: 0.105,
            start_pose: [0.0, 0.0, 0.0],
            goal_tolerance: 0.25,
            range_jitter: None,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.format_version != WORLD_FORMAT_VERSION {
            return Err(EnvError::Format(format!(
                "unsupported world format_version {}",
                self.format_version
            )));
        }
        if self.bounds[2] <= self.bounds[0] || self.bounds[3] <= self.bounds[1] {
            return Err(EnvError::InvalidSpec("degenerate bounds".into()));
        }
        if self.robot_radius <= 0.0 {
            return Err(EnvError::InvalidSpec("robot_radius must be positive".into()));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !self.shape_within_bounds(&o.shape) {
                return Err(EnvError::InvalidSpec(format!(
                    "obstacle {i} extends outside bounds"
                )));
            }
        }
        let start = [self.start_pose[0], self.start_pose[1]];
        if self.point_collides(start, self.robot_radius, &self.initial_positions()) {
            return Err(EnvError::InvalidSpec("start pose collides".into()));
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        let w = self.bounds[2] - self.bounds[0];
        let h = self.bounds[3] - self.bounds[1];
        (w * w + h * h).sqrt()
    }

    fn shape_within_bounds(&self, shape: &Shape) -> bool {
        let [xmin, ymin, xmax, ymax] = self.bounds;
        match *shape {
            Shape::Circle { center, radius } => {
                center[0] - radius >= xmin
                    && center[0] + radius <= xmax
                    && center[1] - radius >= ymin
                    && center[1] + radius <= ymax
            }
            Shape::Rect { corner, width, height } => {
                corner[0] >= xmin
                    && corner[1] >= ymin
                    && corner[0] + width <= xmax
                    && corner[1] + height <= ymax
            }
        }
    }

    /// Obstacle shapes at their spec-time positions.
    pub fn initial_positions(&self) -> Vec<Shape> {
        self.obstacles.iter().map(|o| o.shape).collect()
    }

    /// Whether a disc of `radius` at `p` overlaps a wall or any shape.
    pub fn point_collides(&self, p: [f64; 2], radius: f64, shapes: &[Shape]) -> bool {
        let [xmin, ymin, xmax, ymax] = self.bounds;
        if p[0] - radius < xmin || p[0] + radius > xmax || p[1] - radius < ymin || p[1] + radius > ymax
        {
            return true;
        }
        shapes.iter().any(|s| disc_hits_shape(p, radius, s))
    }
}

fn disc_hits_shape(p: [f64; 2], radius: f64, shape: &Shape) -> bool {
    match *shape {
        Shape::Circle { center, radius: r } => {
            let dx = p[0] - center[0];
            let dy = p[1] - center[1];
            dx * dx + dy * dy < (radius + r) * (radius + r)
        }
        Shape::Rect { corner, width, height } => {
            let cx = p[0].clamp(corner[0], corner[0] + width);
            let cy = p[1].clamp(corner[1], corner[1] + height);
            let dx = p[0] - cx;
            let dy = p[1] - cy;
            dx * dx + dy * dy < radius * radius
        }
    }
}

/// Lidar ranges plus target-relative features; the Q-network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub ranges: [f64; LIDAR_BEAMS],
    pub goal_distance: f64,
    /// Bearing to the goal relative to heading, in (-pi, pi].
    pub goal_bearing: f64,
}

impl Observation {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBS_DIM);
        v.extend_from_slice(&self.ranges);
        v.push(self.goal_distance);
        v.push(self.goal_bearing);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminal {
    None,
    Goal,
    Collision,
    Timeout,
}

impl Terminal {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, Terminal::None)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Terminal::None => "none",
            Terminal::Goal => "goal",
            Terminal::Collision => "collision",
            Terminal::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminal: Terminal,
}

struct MovingState {
    offset: [f64; 2],
    dir: [f64; 2],
}

/// A live episode. Single-owner, single-stepper; run many instances for
/// concurrent agents.
pub struct Environment {
    spec: WorldSpec,
    pose: [f64; 3],
    goal: [f64; 2],
    moving: Vec<MovingState>,
    steps: usize,
    step_cap: usize,
    finished: bool,
    last_goal_distance: f64,
    jitter_rng: Option<ChaCha8Rng>,
}

impl Environment {
    /// Starts an episode: robot at the spec's start pose, goal sampled
    /// uniformly over free space with the episode seed, moving obstacles at
    /// their initial positions.
    pub fn reset(spec: &WorldSpec, episode_seed: u64, step_cap: usize) -> Result<Self, EnvError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let shapes = spec.initial_positions();
        let goal = sample_goal(spec, &shapes, &mut rng)?;
        let moving = spec
            .obstacles
            .iter()
            .filter_map(|o| {
                o.patrol.map(|d| {
                    let norm = (d[0] * d[0] + d[1] * d[1]).sqrt().max(1e-12);
                    MovingState {
                        offset: [0.0, 0.0],
                        dir: [d[0] / norm, d[1] / norm],
                    }
                })
            })
            .collect();
        let jitter_rng = spec
            .range_jitter
            .map(|_| ChaCha8Rng::seed_from_u64(episode_seed.wrapping_add(0x9e3779b97f4a7c15)));
        let mut env = Self {
            spec: spec.clone(),
            pose: spec.start_pose,
            goal,
            moving,
            steps: 0,
            step_cap,
            finished: false,
            last_goal_distance: 0.0,
            jitter_rng,
        };
        env.last_goal_distance = env.goal_distance();
        Ok(env)
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    pub fn pose(&self) -> [f64; 3] {
        self.pose
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    fn goal_distance(&self) -> f64 {
        let dx = self.goal[0] - self.pose[0];
        let dy = self.goal[1] - self.pose[1];
        (dx * dx + dy * dy).sqrt()
    }

    /// Current obstacle shapes with patrol offsets applied.
    pub fn obstacle_shapes(&self) -> Vec<Shape> {
        let mut shapes = Vec::with_capacity(self.spec.obstacles.len());
        let mut mv = self.moving.iter();
        for o in &self.spec.obstacles {
            if o.patrol.is_some() {
                let state = mv.next().expect("moving state per patrol obstacle");
                shapes.push(translate(&o.shape, state.offset));
            } else {
                shapes.push(o.shape);
            }
        }
        shapes
    }

    pub fn observe(&mut self) -> Observation {
        let shapes = self.obstacle_shapes();
        let mut ranges = raycast(self.pose, &self.spec, &shapes);
        if let (Some(amp), Some(rng)) = (self.spec.range_jitter, self.jitter_rng.as_mut()) {
            for r in ranges.iter_mut() {
                *r = (*r + rng.gen_range(-amp..=amp)).clamp(LIDAR_MIN, LIDAR_MAX);
            }
        }
        let dx = self.goal[0] - self.pose[0];
        let dy = self.goal[1] - self.pose[1];
        let bearing = wrap_angle(dy.atan2(dx) - self.pose[2]);
        Observation {
            ranges,
            goal_distance: (dx * dx + dy * dy).sqrt(),
            goal_bearing: bearing,
        }
    }

    /// Applies one discrete action: turn, advance `STEP_DISTANCE`, tick the
    /// moving obstacles, then re-observe. Goal contact is checked before
    /// collision.
    pub fn step(&mut self, action_index: usize) -> Result<StepResult, EnvError> {
        if self.finished {
            return Err(EnvError::EpisodeFinished);
        }
        if action_index >= ACTION_COUNT {
            return Err(EnvError::BadAction(action_index));
        }
        self.steps += 1;
        self.pose[2] = wrap_angle(self.pose[2] + TURN_ANGLES[action_index]);
        self.pose[0] += STEP_DISTANCE * self.pose[2].cos();
        self.pose[1] += STEP_DISTANCE * self.pose[2].sin();

        self.advance_obstacles();
        let shapes = self.obstacle_shapes();

        let new_distance = self.goal_distance();
        let mut reward = PROGRESS_GAIN * (self.last_goal_distance - new_distance) - STEP_PENALTY;
        self.last_goal_distance = new_distance;

        let terminal = if new_distance <= self.spec.goal_tolerance {
            reward += GOAL_REWARD;
            Terminal::Goal
        } else if self
            .spec
            .point_collides([self.pose[0], self.pose[1]], self.spec.robot_radius, &shapes)
        {
            reward += COLLISION_REWARD;
            Terminal::Collision
        } else if self.steps >= self.step_cap {
            Terminal::Timeout
        } else {
            Terminal::None
        };
        if terminal.is_terminal() {
            self.finished = true;
        }
        Ok(StepResult {
            observation: self.observe(),
            reward,
            terminal,
        })
    }

    fn advance_obstacles(&mut self) {
        let moving_shapes: Vec<Shape> = self
            .spec
            .obstacles
            .iter()
            .filter(|o| o.patrol.is_some())
            .map(|o| o.shape)
            .collect();
        for (state, base) in self.moving.iter_mut().zip(&moving_shapes) {
            let candidate = [
                state.offset[0] + state.dir[0] * OBSTACLE_STEP,
                state.offset[1] + state.dir[1] * OBSTACLE_STEP,
            ];
            if self.spec.shape_within_bounds(&translate(base, candidate)) {
                state.offset = candidate;
            } else {
                state.dir = [-state.dir[0], -state.dir[1]];
                let back = [
                    state.offset[0] + state.dir[0] * OBSTACLE_STEP,
                    state.offset[1] + state.dir[1] * OBSTACLE_STEP,
                ];
                if self.spec.shape_within_bounds(&translate(base, back)) {
                    state.offset = back;
                }
            }
        }
    }
}

fn translate(shape: &Shape, offset: [f64; 2]) -> Shape {
    match *shape {
        Shape::Circle { center, radius } => Shape::Circle {
            center: [center[0] + offset[0], center[1] + offset[1]],
            radius,
        },
        Shape::Rect { corner, width, height } => Shape::Rect {
            corner: [corner[0] + offset[0], corner[1] + offset[1]],
            width,
            height,
        },
    }
}

fn sample_goal(
    spec: &WorldSpec,
    shapes: &[Shape],
    rng: &mut ChaCha8Rng,
) -> Result<[f64; 2], EnvError> {
    let [xmin, ymin, xmax, ymax] = spec.bounds;
    const MAX_ATTEMPTS: usize = 10_000;
    for _ in 0..MAX_ATTEMPTS {
        let p = [rng.gen_range(xmin..xmax), rng.gen_range(ymin..ymax)];
        let dx = p[0] - spec.start_pose[0];
        let dy = p[1] - spec.start_pose[1];
        let from_start = (dx * dx + dy * dy).sqrt();
        if from_start > spec.goal_tolerance && !spec.point_collides(p, spec.robot_radius, shapes) {
            return Ok(p);
        }
    }
    Err(EnvError::GoalSampling(MAX_ATTEMPTS))
}

/// Beam directions relative to heading: endpoints-inclusive sweep of the
/// front 180 degrees, -90 to +90 in steps of 20.
pub fn beam_offsets() -> [f64; LIDAR_BEAMS] {
    let mut offsets = [0.0; LIDAR_BEAMS];
    for (i, o) in offsets.iter_mut().enumerate() {
        *o = -PI / 2.0 + i as f64 * PI / (LIDAR_BEAMS - 1) as f64;
    }
    offsets
}

/// Casts the 10 lidar beams from `pose` and returns nearest-hit distances
/// clamped to `[LIDAR_MIN, LIDAR_MAX]`.
pub fn raycast(pose: [f64; 3], spec: &WorldSpec, shapes: &[Shape]) -> [f64; LIDAR_BEAMS] {
    let origin = [pose[0], pose[1]];
    let mut ranges = [LIDAR_MAX; LIDAR_BEAMS];
    for (i, offset) in beam_offsets().iter().enumerate() {
        let angle = pose[2] + offset;
        let dir = [angle.cos(), angle.sin()];
        let mut best = wall_hit(origin, dir, spec.bounds).unwrap_or(f64::INFINITY);
        for shape in shapes {
            if let Some(t) = shape_hit(origin, dir, shape) {
                if t < best {
                    best = t;
                }
            }
        }
        ranges[i] = best.clamp(LIDAR_MIN, LIDAR_MAX);
    }
    ranges
}

/// Distance along `dir` from an interior point to the room boundary.
fn wall_hit(origin: [f64; 2], dir: [f64; 2], bounds: [f64; 4]) -> Option<f64> {
    let [xmin, ymin, xmax, ymax] = bounds;
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t > 0.0 && best.map_or(true, |b| t < b) {
            best = Some(t);
        }
    };
    if dir[0].abs() > 1e-12 {
        consider((xmax - origin[0]) / dir[0]);
        consider((xmin - origin[0]) / dir[0]);
    }
    if dir[1].abs() > 1e-12 {
        consider((ymax - origin[1]) / dir[1]);
        consider((ymin - origin[1]) / dir[1]);
    }
    best
}

fn shape_hit(origin: [f64; 2], dir: [f64; 2], shape: &Shape) -> Option<f64> {
    match *shape {
        Shape::Circle { center, radius } => ray_circle(origin, dir, center, radius),
        Shape::Rect { corner, width, height } => ray_aabb(
            origin,
            dir,
            [corner[0], corner[1]],
            [corner[0] + width, corner[1] + height],
        ),
    }
}

fn ray_circle(origin: [f64; 2], dir: [f64; 2], center: [f64; 2], radius: f64) -> Option<f64> {
    let oc = [origin[0] - center[0], origin[1] - center[1]];
    let b = oc[0] * dir[0] + oc[1] * dir[1];
    let c = oc[0] * oc[0] + oc[1] * oc[1] - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sqrt_disc = disc.sqrt();
    let t1 = -b - sqrt_disc;
    if t1 > 0.0 {
        return Some(t1);
    }
    let t2 = -b + sqrt_disc;
    if t2 > 0.0 {
        return Some(t2);
    }
    None
}

fn ray_aabb(origin: [f64; 2], dir: [f64; 2], min: [f64; 2], max: [f64; 2]) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for axis in 0..2 {
        if dir[axis].abs() < 1e-12 {
            if origin[axis] < min[axis] || origin[axis] > max[axis] {
                return None;
            }
        } else {
            let mut t0 = (min[axis] - origin[axis]) / dir[axis];
            let mut t1 = (max[axis] - origin[axis]) / dir[axis];
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_near = t_near.max(t0);
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
    }
    if t_far < 0.0 {
        None
    } else if t_near > 0.0 {
        Some(t_near)
    } else {
        Some(t_far)
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Loads a world spec from its versioned JSON form.
pub fn load_world(text: &str) -> Result<WorldSpec, EnvError> {
    let spec: WorldSpec =
        serde_json::from_str(text).map_err(|e| EnvError::Format(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn world_to_json(spec: &WorldSpec) -> String {
    serde_json::to_string_pretty(spec).expect("world spec serializes")
}
