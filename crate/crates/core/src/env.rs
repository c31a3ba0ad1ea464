//! Modal path-navigation world.
//!
//! A point robot on an integer grid with eight 45° heading bins is driven
//! one dimension at a time: the active mode selects `x`, `y` or `θ`, motion
//! actions move ±1 along it, and mode switches rotate the active mode along
//! the cycle `X -> Y -> Theta -> X`. A task is an axis-alternating Manhattan
//! path followed by a rotation to a goal heading at the last corner.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assistance::{handle_command, AssistanceConfig, OutcomeReason};
use crate::error::EnvError;
use crate::inference::ActionPrior;
use crate::model::{ControlMapping, Distribution, InterfaceAction, TaskAction};
use crate::user_model::{sample_user_step, SimulatedUser};

pub const HEADING_BINS: u8 = 8;
pub const DEFAULT_MAX_STEPS: u32 = 200;
pub const DEFAULT_SEGMENT_LEN: u32 = 5;
/// Start cells are drawn from `[-START_EXTENT, START_EXTENT]` on both axes.
const START_EXTENT: i32 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    X,
    Y,
    Theta,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::X, Mode::Y, Mode::Theta];

    pub fn cw(self) -> Mode {
        match self {
            Mode::X => Mode::Y,
            Mode::Y => Mode::Theta,
            Mode::Theta => Mode::X,
        }
    }

    pub fn ccw(self) -> Mode {
        match self {
            Mode::X => Mode::Theta,
            Mode::Y => Mode::X,
            Mode::Theta => Mode::Y,
        }
    }

    /// Fewest switches from `self` to `target`, with the switch that starts
    /// that route. Ties go clockwise.
    pub fn switch_toward(self, target: Mode) -> Option<(TaskAction, u32)> {
        if self == target {
            return None;
        }
        let count = |step: fn(Mode) -> Mode| {
            let mut m = self;
            let mut n = 0;
            while m != target {
                m = step(m);
                n += 1;
            }
            n
        };
        let (cw, ccw) = (count(Mode::cw), count(Mode::ccw));
        Some(if cw <= ccw {
            (TaskAction::ModeSwitchCw, cw)
        } else {
            (TaskAction::ModeSwitchCcw, ccw)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldState {
    pub x: i32,
    pub y: i32,
    pub theta: u8,
    pub mode: Mode,
    pub step_count: u32,
}

impl WorldState {
    pub fn new(x: i32, y: i32, theta: u8, mode: Mode) -> Self {
        Self {
            x,
            y,
            theta: theta % HEADING_BINS,
            mode,
            step_count: 0,
        }
    }

    pub fn position(&self) -> (i32, i32) {
        (self.x, self.y)
    }
}

/// Applies one output command. `Null` leaves pose and mode alone but still
/// consumes a step.
pub fn apply(state: &WorldState, phi: InterfaceAction, f: &ControlMapping) -> WorldState {
    let mut next = *state;
    next.step_count += 1;
    let Ok(action) = f.inverse(phi) else {
        return next;
    };
    match action {
        TaskAction::ModeSwitchCw => next.mode = state.mode.cw(),
        TaskAction::ModeSwitchCcw => next.mode = state.mode.ccw(),
        TaskAction::MotionPositive | TaskAction::MotionNegative => {
            let delta = if action == TaskAction::MotionPositive {
                1
            } else {
                -1
            };
            match state.mode {
                Mode::X => next.x += delta,
                Mode::Y => next.y += delta,
                Mode::Theta => {
                    next.theta = (state.theta as i32 + delta).rem_euclid(HEADING_BINS as i32) as u8
                }
            }
        }
    }
    next
}

/// Shortest rotation from `from` to `to`: number of 45° steps and whether it
/// is in the positive direction. A half turn goes positive.
pub fn heading_arc(from: u8, to: u8) -> (u32, bool) {
    let d = (to as i32 - from as i32).rem_euclid(HEADING_BINS as i32) as u32;
    if d <= HEADING_BINS as u32 / 2 {
        (d, true)
    } else {
        (HEADING_BINS as u32 - d, false)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathTask {
    pub start: WorldState,
    /// Path corners, starting at the start cell and ending at the goal cell.
    pub waypoints: Vec<(i32, i32)>,
    pub goal_theta: u8,
    pub n_turns: usize,
    pub max_steps: u32,
    pub optimal_mode_switches: u32,
    pub optimal_steps: u32,
}

impl PathTask {
    /// Builds a task and computes its optimal rollout.
    pub fn new(
        start: WorldState,
        waypoints: Vec<(i32, i32)>,
        goal_theta: u8,
        max_steps: u32,
    ) -> Result<Self, EnvError> {
        if waypoints.is_empty() {
            return Err(EnvError::Range("a task needs at least one waypoint".into()));
        }
        if max_steps == 0 {
            return Err(EnvError::Range("max_steps must be positive".into()));
        }
        if goal_theta >= HEADING_BINS {
            return Err(EnvError::Range(format!(
                "goal heading {goal_theta} >= {HEADING_BINS}"
            )));
        }
        let mut turns = 0;
        for (i, w) in waypoints.windows(2).enumerate() {
            let axis = segment_axis(w[0], w[1])
                .ok_or_else(|| EnvError::Range(format!("segment {i} is not axis-aligned")))?;
            if i > 0 && segment_axis(waypoints[i - 1], w[0]) != Some(axis) {
                turns += 1;
            }
        }
        let mut task = Self {
            start,
            waypoints,
            goal_theta,
            n_turns: turns,
            max_steps,
            optimal_mode_switches: 0,
            optimal_steps: 0,
        };
        let (steps, switches) = optimal_rollout(&task);
        task.optimal_steps = steps;
        task.optimal_mode_switches = switches;
        Ok(task)
    }

    pub fn goal(&self) -> (i32, i32) {
        *self.waypoints.last().expect("validated non-empty")
    }

    pub fn path_length(&self) -> u32 {
        self.waypoints
            .windows(2)
            .map(|w| manhattan(w[0], w[1]))
            .sum()
    }

    pub fn is_complete(&self, state: &WorldState) -> bool {
        state.position() == self.goal() && state.theta == self.goal_theta
    }

    /// Manhattan cells to the goal cell and heading steps to the goal heading.
    pub fn distance(&self, state: &WorldState) -> FinalDistance {
        FinalDistance {
            xy: manhattan(state.position(), self.goal()),
            theta: heading_arc(state.theta, self.goal_theta).0,
        }
    }

    /// The cell the robot should head for next: the end of the path segment
    /// nearest to it (ties go to the later segment).
    pub fn next_target(&self, pos: (i32, i32)) -> (i32, i32) {
        let mut best = (u32::MAX, self.goal());
        for w in self.waypoints.windows(2) {
            let d = distance_to_segment(pos, w[0], w[1]);
            if d <= best.0 {
                best = (d, w[1]);
            }
        }
        best.1
    }
}

fn manhattan(a: (i32, i32), b: (i32, i32)) -> u32 {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

fn segment_axis(a: (i32, i32), b: (i32, i32)) -> Option<Mode> {
    match (a.0 == b.0, a.1 == b.1) {
        (false, true) => Some(Mode::X),
        (true, false) => Some(Mode::Y),
        _ => None,
    }
}

fn distance_to_segment(p: (i32, i32), a: (i32, i32), b: (i32, i32)) -> u32 {
    let cx = p.0.clamp(a.0.min(b.0), a.0.max(b.0));
    let cy = p.1.clamp(a.1.min(b.1), a.1.max(b.1));
    manhattan(p, (cx, cy))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalDistance {
    pub xy: u32,
    pub theta: u32,
}

/// The greedy optimal action: rotate first if already in `Theta` mode,
/// otherwise follow the path segment by segment, then rotate at the goal.
pub fn optimal_policy(state: &WorldState, task: &PathTask) -> Result<TaskAction, EnvError> {
    if task.is_complete(state) {
        return Err(EnvError::TaskComplete);
    }
    let toward = |positive: bool| {
        if positive {
            TaskAction::MotionPositive
        } else {
            TaskAction::MotionNegative
        }
    };
    let (arc, arc_positive) = heading_arc(state.theta, task.goal_theta);
    let pos = state.position();
    let (needed, positive) = if (state.mode == Mode::Theta && arc > 0) || pos == task.goal() {
        (Mode::Theta, arc_positive)
    } else {
        let target = task.next_target(pos);
        let (dx, dy) = (target.0 - state.x, target.1 - state.y);
        match state.mode {
            Mode::X if dx != 0 => (Mode::X, dx > 0),
            Mode::Y if dy != 0 => (Mode::Y, dy > 0),
            _ if dx != 0 => (Mode::X, dx > 0),
            _ => (Mode::Y, dy > 0),
        }
    };
    Ok(match state.mode.switch_toward(needed) {
        Some((switch, _)) => switch,
        None => toward(positive),
    })
}

/// `(1 - ρ)` on the optimal action plus `ρ` spread uniformly.
pub fn policy_prior(
    state: &WorldState,
    task: &PathTask,
    rho: f64,
) -> Result<ActionPrior, EnvError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(EnvError::Range(format!(
            "policy noise {rho} outside [0, 1]"
        )));
    }
    let best = optimal_policy(state, task)?;
    Ok(ActionPrior(Distribution::delta_uniform_mixture(best, rho)))
}

/// Steps and mode switches of the noise-free rollout of [`optimal_policy`].
pub fn optimal_rollout(task: &PathTask) -> (u32, u32) {
    let f = ControlMapping::default();
    let mut state = task.start;
    state.step_count = 0;
    let mut switches = 0;
    // bounded by path + half turn + one switch per segment and the rotation
    let bound = task.path_length() + 4 + 2 * task.waypoints.len() as u32 + 2;
    while let Ok(a) = optimal_policy(&state, task) {
        if a.is_mode_switch() {
            switches += 1;
        }
        state = apply(&state, f.forward(a), &f);
        assert!(
            state.step_count <= bound,
            "optimal rollout failed to terminate"
        );
    }
    (state.step_count, switches)
}

/// Random axis-alternating path with exactly `n_turns` turns, each segment
/// `segment_len` cells long, monotone in both axes.
pub fn generate_task<R: Rng + ?Sized>(
    n_turns: usize,
    segment_len: u32,
    max_steps: u32,
    rng: &mut R,
) -> Result<PathTask, EnvError> {
    if segment_len == 0 {
        return Err(EnvError::Range("segment_len must be at least 1".into()));
    }
    if max_steps == 0 {
        return Err(EnvError::Range("max_steps must be positive".into()));
    }
    let len = i32::try_from(segment_len)
        .map_err(|_| EnvError::Range(format!("segment_len {segment_len} too large")))?;
    let start_pos = (
        rng.gen_range(-START_EXTENT..=START_EXTENT),
        rng.gen_range(-START_EXTENT..=START_EXTENT),
    );
    let first_axis = *[Mode::X, Mode::Y].choose(rng).expect("non-empty");
    let sx = if rng.gen::<bool>() { 1 } else { -1 };
    let sy = if rng.gen::<bool>() { 1 } else { -1 };
    let mut waypoints = vec![start_pos];
    let mut axis = first_axis;
    for _ in 0..=n_turns {
        let (x, y) = *waypoints.last().expect("non-empty");
        waypoints.push(match axis {
            Mode::X => (x + sx * len, y),
            _ => (x, y + sy * len),
        });
        axis = if axis == Mode::X { Mode::Y } else { Mode::X };
    }
    let theta = rng.gen_range(0..HEADING_BINS);
    let goal_theta = (theta + rng.gen_range(1..HEADING_BINS)) % HEADING_BINS;
    let candidates: Vec<Mode> = Mode::ALL.into_iter().filter(|m| *m != first_axis).collect();
    let mode = *candidates.choose(rng).expect("two modes remain");
    PathTask::new(
        WorldState::new(start_pos.0, start_pos.1, theta, mode),
        waypoints,
        goal_theta,
        max_steps,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvStep {
    pub t: u32,
    /// Intended task action; known only for simulated users.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_intended: Option<TaskAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_i: Option<InterfaceAction>,
    pub phi_m: InterfaceAction,
    pub phi_out: InterfaceAction,
    pub a_applied: Option<TaskAction>,
    pub state_after: WorldState,
    pub reason: OutcomeReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub steps_total: u32,
    pub mode_switches: u32,
    pub success: bool,
    pub final_distance: FinalDistance,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<EnvStep>,
}

impl TrialResult {
    pub fn final_state<'a>(&'a self, task: &'a PathTask) -> &'a WorldState {
        self.trace.last().map_or(&task.start, |s| &s.state_after)
    }
}

/// Simulates one trial until the task is complete or the step cap is hit.
///
/// Each step the user samples an intent from its own policy mixture, emits
/// `(φ_i, φ_m)`, the assistance maps `φ_m` to `φ_out` using a prior built
/// with `cfg.assumed_policy_noise`, and the world applies `φ_out`.
pub fn run_trial<R: Rng + ?Sized>(
    task: &PathTask,
    user: &SimulatedUser,
    cfg: &AssistanceConfig,
    f: &ControlMapping,
    rng: &mut R,
) -> Result<TrialResult, EnvError> {
    let mut state = task.start;
    state.step_count = 0;
    let mut trace = Vec::new();
    let mut mode_switches = 0;
    while !task.is_complete(&state) && state.step_count < task.max_steps {
        let intent = policy_prior(&state, task, user.policy_noise)?.0.sample(rng);
        let (phi_i, phi_m) = sample_user_step(intent, user, rng);
        let prior = policy_prior(&state, task, cfg.assumed_policy_noise)?;
        let outcome = handle_command(phi_m, cfg, &prior, &user.tables, f)?;
        let a_applied = f.inverse(outcome.phi_out).ok();
        if a_applied.is_some_and(TaskAction::is_mode_switch) {
            mode_switches += 1;
        }
        state = apply(&state, outcome.phi_out, f);
        trace.push(EnvStep {
            t: state.step_count - 1,
            a_intended: Some(intent),
            phi_i: Some(phi_i),
            phi_m,
            phi_out: outcome.phi_out,
            a_applied,
            state_after: state,
            reason: outcome.reason,
        });
    }
    Ok(TrialResult {
        steps_total: state.step_count,
        mode_switches,
        success: task.is_complete(&state),
        final_distance: task.distance(&state),
        trace,
    })
}
