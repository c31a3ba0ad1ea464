//! Per-session state machines for calibration and evaluation.
//!
//! Nothing here touches the disk or the network; the manager feeds events in
//! and persists whatever comes out.

use ifassist_core::env::{FinalDistance, DEFAULT_MAX_STEPS, DEFAULT_SEGMENT_LEN};
use ifassist_core::user_model::CALIBRATION_TIME_LIMIT_S;
use ifassist_core::{
    apply, generate_task, handle_command, policy_prior, AssistanceConfig, AssistanceMode,
    AssistanceOutcome, CalibrationSample, ControlMapping, EnvStep, InterfaceAction, PathTask,
    Prompt, Response, Symbol, TaskAction, UserModelTables, WorldState,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

pub const DEFAULT_BLOCKS: u32 = 6;
pub const DEFAULT_N_TURNS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    Calibration1,
    Calibration2,
    Evaluation,
}

impl SessionPhase {
    pub fn name(self) -> &'static str {
        match self {
            SessionPhase::Calibration1 => "calibration1",
            SessionPhase::Calibration2 => "calibration2",
            SessionPhase::Evaluation => "evaluation",
        }
    }
}

/// An explicit task in place of a generated one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub start: WorldState,
    pub waypoints: Vec<(i32, i32)>,
    pub goal_theta: u8,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
}

fn default_max_steps() -> u32 {
    DEFAULT_MAX_STEPS
}

/// Body of a session-creation request.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub session_id: Option<String>,
    pub profile_id: String,
    pub phase: Option<SessionPhase>,
    /// Required for evaluation sessions.
    pub assistance: Option<AssistanceMode>,
    /// Falls back to the profile's threshold.
    pub epsilon: Option<f64>,
    pub assumed_policy_noise: Option<f64>,
    /// Calibration blocks; each block shows every prompt once.
    pub blocks: Option<u32>,
    pub seed: Option<u64>,
    pub n_turns: Option<usize>,
    pub segment_len: Option<u32>,
    pub max_steps: Option<u32>,
    pub task: Option<TaskSpec>,
}

/// Everything needed to rebuild a session from its logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub id: String,
    pub profile_id: String,
    pub phase: SessionPhase,
    pub created_at: f64,
    pub seed: u64,
    pub mapping: ControlMapping,
    /// Snapshot of the profile's tables when the session started.
    pub tables: UserModelTables,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assistance: Option<AssistanceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<PathTask>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prompts: Vec<Prompt>,
    #[serde(default)]
    pub finished: bool,
}

/// One line of an evaluation trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(flatten)]
    pub step: EnvStep,
    pub intervened: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_normalized: Option<f64>,
    pub received_at: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_ts: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptView {
    pub index: usize,
    pub total: usize,
    pub prompt: Prompt,
    pub shown_at: f64,
    pub deadline: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_switches: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interventions: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimal_steps: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimal_mode_switches: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts_done: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts_total: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeouts: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EndResult {
    Evaluation {
        steps_total: u32,
        mode_switches: u32,
        success: bool,
        final_distance: FinalDistance,
        optimal_steps: u32,
        optimal_mode_switches: u32,
    },
    Calibration {
        samples: usize,
        timeouts: usize,
    },
}

/// Messages pushed to WebSocket subscribers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State {
        session_id: String,
        phase: SessionPhase,
        world: Option<WorldState>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        task: Option<PathTask>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prompt: Option<PromptView>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        outcome: Option<Box<AssistanceOutcome>>,
        metrics: Metrics,
    },
    End {
        session_id: String,
        result: EndResult,
    },
    Error {
        message: String,
    },
}

/// What a submitted action produced.
#[derive(Clone, Debug, PartialEq)]
pub enum Effect {
    /// Calibration samples recorded, oldest first, including any timeouts
    /// that expired before the response arrived.
    Calibration(Vec<CalibrationSample>),
    Evaluation(TraceRecord, AssistanceOutcome),
}

#[derive(Clone, Debug)]
pub struct Session {
    pub meta: SessionMeta,
    pub world: Option<WorldState>,
    pub trace: Vec<TraceRecord>,
    pub samples: Vec<CalibrationSample>,
    /// When the current prompt appeared. Not persisted; reset on reload.
    pub shown_at: f64,
    last_outcome: Option<AssistanceOutcome>,
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `blocks` shuffled rounds over the four prompts of a calibration phase.
pub fn prompt_queue(phase: SessionPhase, blocks: u32, seed: u64) -> Vec<Prompt> {
    let base: [Prompt; 4] = match phase {
        SessionPhase::Calibration1 => TaskAction::ALL.map(Prompt::Task),
        _ => InterfaceAction::PHYSICAL.map(Prompt::Interface),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1));
    let mut out = Vec::with_capacity(blocks as usize * 4);
    for _ in 0..blocks {
        let mut block = base;
        block.shuffle(&mut rng);
        out.extend(block);
    }
    out
}

/// Builds the metadata for a new session. The caller supplies the resolved
/// id, seed and profile data.
pub fn build_meta(
    id: String,
    cfg: &SessionConfig,
    seed: u64,
    mapping: ControlMapping,
    tables: UserModelTables,
    profile_epsilon: f64,
    now: f64,
) -> Result<SessionMeta, ServiceError> {
    let phase = cfg
        .phase
        .ok_or_else(|| ServiceError::InvalidPhaseConfig("missing phase".into()))?;
    let bad = |e: &dyn std::fmt::Display| ServiceError::InvalidPhaseConfig(e.to_string());
    let mut meta = SessionMeta {
        id,
        profile_id: cfg.profile_id.clone(),
        phase,
        created_at: now,
        seed,
        mapping,
        tables,
        assistance: None,
        task: None,
        prompts: Vec::new(),
        finished: false,
    };
    match phase {
        SessionPhase::Evaluation => {
            let mode = cfg.assistance.ok_or_else(|| {
                ServiceError::InvalidPhaseConfig("evaluation needs an assistance mode".into())
            })?;
            let assistance = AssistanceConfig::new(mode, cfg.epsilon.unwrap_or(profile_epsilon))
                .and_then(|c| c.with_assumed_policy_noise(cfg.assumed_policy_noise.unwrap_or(0.0)))
                .map_err(|e| bad(&e))?;
            let task = match &cfg.task {
                Some(spec) => PathTask::new(
                    spec.start,
                    spec.waypoints.clone(),
                    spec.goal_theta,
                    spec.max_steps,
                )
                .map_err(|e| bad(&e))?,
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 2));
                    generate_task(
                        cfg.n_turns.unwrap_or(DEFAULT_N_TURNS),
                        cfg.segment_len.unwrap_or(DEFAULT_SEGMENT_LEN),
                        cfg.max_steps.unwrap_or(DEFAULT_MAX_STEPS),
                        &mut rng,
                    )
                    .map_err(|e| bad(&e))?
                }
            };
            meta.assistance = Some(assistance);
            meta.task = Some(task);
        }
        SessionPhase::Calibration1 | SessionPhase::Calibration2 => {
            if cfg.assistance.is_some() || cfg.task.is_some() {
                return Err(ServiceError::InvalidPhaseConfig(
                    "calibration sessions take no assistance or task".into(),
                ));
            }
            let blocks = cfg.blocks.unwrap_or(DEFAULT_BLOCKS);
            if blocks == 0 {
                return Err(ServiceError::InvalidPhaseConfig(
                    "blocks must be positive".into(),
                ));
            }
            meta.prompts = prompt_queue(phase, blocks, seed);
        }
    }
    Ok(meta)
}

impl Session {
    pub fn new(meta: SessionMeta, now: f64) -> Self {
        let world = meta.task.as_ref().map(|t| {
            let mut s = t.start;
            s.step_count = 0;
            s
        });
        Self {
            meta,
            world,
            trace: Vec::new(),
            samples: Vec::new(),
            shown_at: now,
            last_outcome: None,
        }
    }

    /// Rebuilds a session from its metadata and logs, checking that every
    /// logged step follows from the one before.
    pub fn restore(
        meta: SessionMeta,
        trace: Vec<TraceRecord>,
        samples: Vec<CalibrationSample>,
        now: f64,
    ) -> Result<Self, ServiceError> {
        let mut session = Session::new(meta, now);
        if let Some(mut world) = session.world {
            for (i, rec) in trace.iter().enumerate() {
                world = apply(&world, rec.step.phi_out, &session.meta.mapping);
                if world != rec.step.state_after {
                    return Err(ServiceError::Corrupt(format!(
                        "session `{}` trace line {} does not follow from its predecessor",
                        session.meta.id,
                        i + 1
                    )));
                }
            }
            session.world = Some(world);
        } else if !trace.is_empty() {
            return Err(ServiceError::Corrupt(
                "calibration session has a trace".into(),
            ));
        }
        if samples.len() > session.meta.prompts.len() {
            return Err(ServiceError::Corrupt("more samples than prompts".into()));
        }
        session.trace = trace;
        session.samples = samples;
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn phase(&self) -> SessionPhase {
        self.meta.phase
    }

    pub fn is_calibration(&self) -> bool {
        self.meta.phase != SessionPhase::Evaluation
    }

    pub fn queue_done(&self) -> bool {
        self.samples.len() >= self.meta.prompts.len()
    }

    /// No further actions are accepted.
    pub fn is_over(&self) -> bool {
        if self.meta.finished {
            return true;
        }
        match (&self.meta.task, self.world) {
            (Some(task), Some(w)) => task.is_complete(&w) || w.step_count >= task.max_steps,
            _ => self.queue_done(),
        }
    }

    pub fn current_prompt(&self) -> Option<PromptView> {
        if !self.is_calibration() || self.queue_done() || self.meta.finished {
            return None;
        }
        let index = self.samples.len();
        Some(PromptView {
            index,
            total: self.meta.prompts.len(),
            prompt: self.meta.prompts[index],
            shown_at: self.shown_at,
            deadline: self.shown_at + CALIBRATION_TIME_LIMIT_S,
        })
    }

    /// Records a timeout for every prompt whose deadline has passed. Each
    /// following prompt is taken to appear at its predecessor's deadline.
    pub fn expire(&mut self, now: f64) -> Vec<CalibrationSample> {
        let mut out = Vec::new();
        while let Some(view) = self.current_prompt() {
            if now < view.deadline {
                break;
            }
            let sample =
                CalibrationSample::new(view.prompt, Response::Timeout, CALIBRATION_TIME_LIMIT_S)
                    .expect("prompts in the queue match the phase");
            self.samples.push(sample);
            self.shown_at = view.deadline;
            out.push(sample);
        }
        out
    }

    pub fn submit(
        &mut self,
        phi_m: InterfaceAction,
        now: f64,
        client_ts: Option<f64>,
    ) -> Result<Effect, ServiceError> {
        if !phi_m.is_physical() {
            return Err(ServiceError::BadRequest(
                "`null` is not a physical action".into(),
            ));
        }
        if self.is_calibration() {
            let mut recorded = self.expire(now);
            let Some(view) = self.current_prompt() else {
                if recorded.is_empty() {
                    return Err(ServiceError::SessionClosed(self.meta.id.clone()));
                }
                // the response arrived after the last deadline
                return Ok(Effect::Calibration(recorded));
            };
            let sample =
                CalibrationSample::new(view.prompt, Response::Action(phi_m), now - view.shown_at)?;
            self.samples.push(sample);
            self.shown_at = now;
            recorded.push(sample);
            return Ok(Effect::Calibration(recorded));
        }
        if self.is_over() {
            return Err(ServiceError::SessionClosed(self.meta.id.clone()));
        }
        let world = self.world.expect("evaluation sessions have a world");
        let (record, outcome) = eval_step(&self.meta, &world, phi_m, now, client_ts)?;
        self.world = Some(record.step.state_after);
        self.trace.push(record);
        self.last_outcome = Some(outcome);
        Ok(Effect::Evaluation(record, outcome))
    }

    pub fn metrics(&self) -> Metrics {
        match &self.meta.task {
            Some(task) => Metrics {
                steps: self.world.map(|w| w.step_count),
                mode_switches: Some(self.mode_switches()),
                interventions: Some(self.trace.iter().filter(|r| r.intervened).count() as u32),
                optimal_steps: Some(task.optimal_steps),
                optimal_mode_switches: Some(task.optimal_mode_switches),
                ..Metrics::default()
            },
            None => Metrics {
                prompts_done: Some(self.samples.len()),
                prompts_total: Some(self.meta.prompts.len()),
                timeouts: Some(self.timeouts()),
                ..Metrics::default()
            },
        }
    }

    fn mode_switches(&self) -> u32 {
        self.trace
            .iter()
            .filter(|r| r.step.a_applied.is_some_and(TaskAction::is_mode_switch))
            .count() as u32
    }

    fn timeouts(&self) -> usize {
        self.samples
            .iter()
            .filter(|s| s.response == Response::Timeout)
            .count()
    }

    pub fn state_message(&self) -> ServerMessage {
        ServerMessage::State {
            session_id: self.meta.id.clone(),
            phase: self.meta.phase,
            world: self.world,
            task: self.meta.task.clone(),
            prompt: self.current_prompt(),
            outcome: self.last_outcome.map(Box::new),
            metrics: self.metrics(),
        }
    }

    pub fn end_result(&self) -> Option<EndResult> {
        if !self.is_over() {
            return None;
        }
        Some(match (&self.meta.task, self.world) {
            (Some(task), Some(w)) => EndResult::Evaluation {
                steps_total: w.step_count,
                mode_switches: self.mode_switches(),
                success: task.is_complete(&w),
                final_distance: task.distance(&w),
                optimal_steps: task.optimal_steps,
                optimal_mode_switches: task.optimal_mode_switches,
            },
            _ => EndResult::Calibration {
                samples: self.samples.len(),
                timeouts: self.timeouts(),
            },
        })
    }

    pub fn end_message(&self) -> Option<ServerMessage> {
        self.end_result().map(|result| ServerMessage::End {
            session_id: self.meta.id.clone(),
            result,
        })
    }
}

/// One evaluation step: assistance on `φ_m`, then the world update.
pub fn eval_step(
    meta: &SessionMeta,
    world: &WorldState,
    phi_m: InterfaceAction,
    now: f64,
    client_ts: Option<f64>,
) -> Result<(TraceRecord, AssistanceOutcome), ServiceError> {
    let task = meta.task.as_ref().expect("evaluation sessions have a task");
    let cfg = meta
        .assistance
        .as_ref()
        .expect("evaluation sessions have assistance");
    let prior = policy_prior(world, task, cfg.assumed_policy_noise)?;
    let outcome = handle_command(phi_m, cfg, &prior, &meta.tables, &meta.mapping)?;
    let state_after = apply(world, outcome.phi_out, &meta.mapping);
    let step = EnvStep {
        t: world.step_count,
        a_intended: None,
        phi_i: None,
        phi_m,
        phi_out: outcome.phi_out,
        a_applied: meta.mapping.inverse(outcome.phi_out).ok(),
        state_after,
        reason: outcome.reason,
    };
    let record = TraceRecord {
        step,
        intervened: outcome.intervened,
        entropy_normalized: outcome.inference.map(|i| i.entropy_normalized),
        received_at: now,
        client_ts,
    };
    Ok((record, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ifassist_core::env::Mode;
    use ifassist_core::OutcomeReason;

    fn meta_for(cfg: SessionConfig) -> SessionMeta {
        let f = ControlMapping::default();
        build_meta(
            "s1".into(),
            &cfg,
            7,
            f,
            UserModelTables::noise_free(&f),
            0.7,
            100.0,
        )
        .unwrap()
    }

    fn straight(mode: AssistanceMode) -> SessionConfig {
        SessionConfig {
            profile_id: "alice".into(),
            phase: Some(SessionPhase::Evaluation),
            assistance: Some(mode),
            task: Some(TaskSpec {
                start: WorldState::new(0, 0, 0, Mode::X),
                waypoints: vec![(0, 0), (3, 0)],
                goal_theta: 0,
                max_steps: 10,
            }),
            ..SessionConfig::default()
        }
    }

    #[test]
    fn calibration_queue_is_balanced() {
        let q = prompt_queue(SessionPhase::Calibration1, 6, 3);
        assert_eq!(q.len(), 24);
        for a in TaskAction::ALL {
            assert_eq!(q.iter().filter(|p| **p == Prompt::Task(a)).count(), 6);
        }
        for block in q.chunks(4) {
            let mut seen: Vec<_> = block.iter().map(|p| p.to_string()).collect();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), 4);
        }
        let q2 = prompt_queue(SessionPhase::Calibration2, 2, 3);
        assert!(q2.iter().all(|p| matches!(p, Prompt::Interface(_))));
    }

    #[test]
    fn no_assistance_passes_through() {
        let mut s = Session::new(meta_for(straight(AssistanceMode::NoAssistance)), 0.0);
        let Effect::Evaluation(rec, outcome) =
            s.submit(InterfaceAction::SoftPuff, 1.0, None).unwrap()
        else {
            panic!("expected an evaluation step");
        };
        assert_eq!(rec.step.state_after.position(), (1, 0));
        assert_eq!(outcome.reason, OutcomeReason::NoAssist);
    }

    #[test]
    fn corrective_fixes_wrong_input() {
        let mut s = Session::new(meta_for(straight(AssistanceMode::Corrective)), 0.0);
        let Effect::Evaluation(rec, outcome) =
            s.submit(InterfaceAction::SoftSip, 1.0, None).unwrap()
        else {
            panic!("expected an evaluation step");
        };
        assert!(outcome.intervened);
        assert_eq!(rec.step.phi_out, InterfaceAction::SoftPuff);
        assert_eq!(rec.step.state_after.position(), (1, 0));
    }

    #[test]
    fn evaluation_ends_at_goal() {
        let mut s = Session::new(meta_for(straight(AssistanceMode::NoAssistance)), 0.0);
        for _ in 0..3 {
            s.submit(InterfaceAction::SoftPuff, 1.0, None).unwrap();
        }
        assert!(s.is_over());
        assert!(matches!(
            s.end_result(),
            Some(EndResult::Evaluation {
                success: true,
                steps_total: 3,
                ..
            })
        ));
        assert!(matches!(
            s.submit(InterfaceAction::SoftPuff, 2.0, None),
            Err(ServiceError::SessionClosed(_))
        ));
    }

    #[test]
    fn timeouts_chain_from_deadlines() {
        let cfg = SessionConfig {
            profile_id: "alice".into(),
            phase: Some(SessionPhase::Calibration2),
            blocks: Some(1),
            ..SessionConfig::default()
        };
        let mut s = Session::new(meta_for(cfg), 0.0);
        assert!(s.expire(4.999).is_empty());
        let expired = s.expire(5.0);
        assert_eq!(expired.len(), 1);
        assert_eq!(expired[0].response, Response::Timeout);
        assert_eq!(s.current_prompt().unwrap().shown_at, 5.0);
        // 12 s: second prompt expired at 10, third was shown at 10
        let Effect::Calibration(rec) = s.submit(InterfaceAction::HardSip, 12.0, Some(0.0)).unwrap()
        else {
            panic!("expected calibration samples");
        };
        assert_eq!(rec.len(), 2);
        assert_eq!(rec[0].response, Response::Timeout);
        assert_eq!(rec[1].response, Response::Action(InterfaceAction::HardSip));
        assert!((rec[1].latency_s - 2.0).abs() < 1e-12);
        assert_eq!(s.samples.len(), 3);
    }

    #[test]
    fn evaluation_config_errors() {
        let f = ControlMapping::default();
        let t = UserModelTables::noise_free(&f);
        let mut cfg = straight(AssistanceMode::Filter);
        cfg.assistance = None;
        assert!(matches!(
            build_meta("s".into(), &cfg, 1, f, t, 0.7, 0.0),
            Err(ServiceError::InvalidPhaseConfig(_))
        ));
        let cfg = SessionConfig {
            profile_id: "alice".into(),
            phase: Some(SessionPhase::Calibration1),
            blocks: Some(0),
            ..SessionConfig::default()
        };
        assert!(matches!(
            build_meta("s".into(), &cfg, 1, f, t, 0.7, 0.0),
            Err(ServiceError::InvalidPhaseConfig(_))
        ));
    }

    #[test]
    fn generated_task_starts_off_axis() {
        for seed in 0..50 {
            let mut cfg = straight(AssistanceMode::Corrective);
            cfg.task = None;
            let f = ControlMapping::default();
            let meta = build_meta(
                "s".into(),
                &cfg,
                seed,
                f,
                UserModelTables::noise_free(&f),
                0.7,
                0.0,
            )
            .unwrap();
            let task = meta.task.unwrap();
            let (a, b) = (task.waypoints[0], task.waypoints[1]);
            let first_axis = if a.1 == b.1 { Mode::X } else { Mode::Y };
            assert_ne!(task.start.mode, first_axis);
        }
    }

    #[test]
    fn message_wire_shape() {
        let s = Session::new(meta_for(straight(AssistanceMode::Filter)), 0.0);
        let v = serde_json::to_value(s.state_message()).unwrap();
        assert_eq!(v["type"], "state");
        assert_eq!(v["phase"], "evaluation");
        assert_eq!(v["world"]["mode"], "x");
        assert!(v.get("prompt").is_none());
    }
}
