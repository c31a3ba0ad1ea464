//! Session registry: routes events to sessions, persists them and fans the
//! resulting messages out to subscribers.

use std::collections::HashMap;
use std::sync::Arc;

use ifassist_core::user_model::{
    estimate_distortion, estimate_internal_mapping, response_accuracy,
    DEFAULT_PROFICIENCY_THRESHOLD,
};
use ifassist_core::{
    CalibrationSample, ControlMapping, InterfaceAction, TableKind, UserModelTables, WorldState,
};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::clock::Clock;
use crate::error::ServiceError;
use crate::session::{
    build_meta, eval_step, Effect, ServerMessage, Session, SessionConfig, SessionMeta,
    SessionPhase, TraceRecord,
};
use crate::store::{valid_id, Store, TableSource, UserProfile};

pub const META_FILE: &str = "meta.json";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const CALIBRATION_FILE: &str = "calibration.jsonl";
const CHANNEL_CAPACITY: usize = 256;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileRequest {
    pub id: String,
    pub mapping: Option<ControlMapping>,
    pub epsilon: Option<f64>,
    pub tables: Option<UserModelTables>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmitEvent {
    pub state: ServerMessage,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub recorded: Vec<CalibrationSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<ServerMessage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinishReport {
    pub session_id: String,
    pub profile_id: String,
    pub table: TableKind,
    pub tables: UserModelTables,
    pub accuracy: f64,
    pub proficient: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceView {
    pub meta: SessionMeta,
    pub trace: Vec<TraceRecord>,
    pub samples: Vec<CalibrationSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub session_id: String,
    pub lines: usize,
    pub identical: bool,
    /// 1-based line of the first difference.
    pub first_mismatch: Option<usize>,
    pub final_world: Option<WorldState>,
}

/// Re-runs an evaluation log from its metadata and compares the regenerated
/// lines with the stored ones byte for byte.
pub fn replay_trace(
    meta: &SessionMeta,
    raw_lines: &[String],
) -> Result<ReplayReport, ServiceError> {
    let mut world = meta.task.as_ref().map(|t| WorldState {
        step_count: 0,
        ..t.start
    });
    let mut first_mismatch = None;
    for (i, raw) in raw_lines.iter().enumerate() {
        let logged: TraceRecord = serde_json::from_str(raw)?;
        let current =
            world.ok_or_else(|| ServiceError::Corrupt("calibration session has a trace".into()))?;
        let (regen, _) = eval_step(
            meta,
            &current,
            logged.step.phi_m,
            logged.received_at,
            logged.client_ts,
        )?;
        if first_mismatch.is_none() && serde_json::to_string(&regen)? != *raw {
            first_mismatch = Some(i + 1);
        }
        world = Some(regen.step.state_after);
    }
    Ok(ReplayReport {
        session_id: meta.id.clone(),
        lines: raw_lines.len(),
        identical: first_mismatch.is_none(),
        first_mismatch,
        final_world: world,
    })
}

struct SessionHandle {
    session: Mutex<Session>,
    tx: broadcast::Sender<ServerMessage>,
}

pub struct SessionManager {
    store: Store,
    clock: Arc<dyn Clock>,
    /// Serializes profile read-modify-write cycles.
    profiles: Mutex<()>,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
}

impl SessionManager {
    /// Opens the data directory and reloads every persisted session.
    pub fn open(store: Store, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        let now = clock.now();
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(store.root().join("sessions"))? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let id = entry.file_name().to_string_lossy().into_owned();
            let Some(meta) = store.read_session_file::<SessionMeta>(&id, META_FILE)? else {
                tracing::warn!(session = %id, "skipping session directory without metadata");
                continue;
            };
            let trace = store.read_lines(&id, TRACE_FILE)?;
            let samples = store.read_lines(&id, CALIBRATION_FILE)?;
            let session = Session::restore(meta, trace, samples, now)?;
            sessions.insert(id, Arc::new(new_handle(session)));
        }
        Ok(Self {
            store,
            clock,
            profiles: Mutex::new(()),
            sessions: RwLock::new(sessions),
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    pub fn create_profile(&self, req: ProfileRequest) -> Result<UserProfile, ServiceError> {
        if !valid_id(&req.id) {
            return Err(ServiceError::BadRequest(format!(
                "invalid profile id `{}`",
                req.id
            )));
        }
        let epsilon = req.epsilon.unwrap_or_else(UserProfile::default_epsilon);
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(ServiceError::BadRequest(format!(
                "epsilon {epsilon} outside [0, 1]"
            )));
        }
        let _guard = self.profiles.lock();
        if self.store.load_profile(&req.id)?.is_some() {
            return Err(ServiceError::ProfileExists(req.id));
        }
        let mut profile =
            UserProfile::new(req.id, req.mapping.unwrap_or_default(), epsilon, self.now());
        if let Some(tables) = req.tables {
            profile.tables = tables;
        }
        self.store.save_profile(&profile)?;
        Ok(profile)
    }

    pub fn get_profile(&self, id: &str) -> Result<UserProfile, ServiceError> {
        self.store
            .load_profile(id)?
            .ok_or_else(|| ServiceError::UnknownProfile(id.to_string()))
    }

    /// Creates and persists a session, returning its id and first state.
    pub fn create_session(
        &self,
        cfg: SessionConfig,
    ) -> Result<(String, ServerMessage), ServiceError> {
        let profile = self.get_profile(&cfg.profile_id)?;
        let id = match &cfg.session_id {
            Some(id) if !valid_id(id) => {
                return Err(ServiceError::InvalidPhaseConfig(format!(
                    "invalid session id `{id}`"
                )))
            }
            Some(id) => id.clone(),
            None => format!("{:016x}", rand::random::<u64>()),
        };
        let seed = cfg.seed.unwrap_or_else(rand::random);
        let now = self.now();
        let meta = build_meta(
            id.clone(),
            &cfg,
            seed,
            profile.mapping,
            profile.tables,
            profile.epsilon,
            now,
        )?;
        let mut sessions = self.sessions.write();
        if sessions.contains_key(&id) || self.store.session_exists(&id) {
            return Err(ServiceError::InvalidPhaseConfig(format!(
                "session `{id}` already exists"
            )));
        }
        self.store.write_session_file(&id, META_FILE, &meta)?;
        let session = Session::new(meta, now);
        let state = session.state_message();
        sessions.insert(id.clone(), Arc::new(new_handle(session)));
        tracing::info!(session = %id, phase = cfg.phase.map(SessionPhase::name), "session created");
        Ok((id, state))
    }

    fn handle(&self, id: &str) -> Result<Arc<SessionHandle>, ServiceError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.sessions.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Current state plus a receiver for everything that follows.
    pub fn subscribe(
        &self,
        id: &str,
    ) -> Result<(ServerMessage, broadcast::Receiver<ServerMessage>), ServiceError> {
        let handle = self.handle(id)?;
        let session = handle.session.lock();
        Ok((session.state_message(), handle.tx.subscribe()))
    }

    pub fn state(&self, id: &str) -> Result<ServerMessage, ServiceError> {
        Ok(self.handle(id)?.session.lock().state_message())
    }

    pub fn submit_action(
        &self,
        id: &str,
        phi_m: InterfaceAction,
        client_ts: Option<f64>,
        expected_phase: Option<SessionPhase>,
    ) -> Result<SubmitEvent, ServiceError> {
        let handle = self.handle(id)?;
        let mut session = handle.session.lock();
        if let Some(phase) = expected_phase {
            if phase != session.phase() {
                return Err(ServiceError::PhaseMismatch(format!(
                    "session `{id}` is in phase {}, not {}",
                    session.phase().name(),
                    phase.name()
                )));
            }
        }
        let now = self.now();
        let effect = session.submit(phi_m, now, client_ts)?;
        let recorded = match effect {
            Effect::Calibration(samples) => {
                for s in &samples {
                    self.store.append_line(id, CALIBRATION_FILE, s)?;
                }
                samples
            }
            Effect::Evaluation(record, _) => {
                self.store.append_line(id, TRACE_FILE, &record)?;
                Vec::new()
            }
        };
        let state = session.state_message();
        let end = session.end_message();
        broadcast(&handle.tx, &state, end.as_ref());
        Ok(SubmitEvent {
            state,
            recorded,
            end,
        })
    }

    /// Applies calibration deadlines to every live session; returns how many
    /// sessions changed.
    pub fn tick(&self) -> Result<usize, ServiceError> {
        let now = self.now();
        let handles: Vec<_> = self
            .sessions
            .read()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let mut changed = 0;
        for (id, handle) in handles {
            let mut session = handle.session.lock();
            if !session.is_calibration() || session.is_over() {
                continue;
            }
            let expired = session.expire(now);
            if expired.is_empty() {
                continue;
            }
            for s in &expired {
                self.store.append_line(&id, CALIBRATION_FILE, s)?;
            }
            changed += 1;
            broadcast(
                &handle.tx,
                &session.state_message(),
                session.end_message().as_ref(),
            );
        }
        Ok(changed)
    }

    /// Fits the table for this session's phase and stores it in the profile.
    pub fn finish_calibration(&self, id: &str, alpha: f64) -> Result<FinishReport, ServiceError> {
        let handle = self.handle(id)?;
        let mut session = handle.session.lock();
        if !session.is_calibration() {
            return Err(ServiceError::PhaseMismatch(format!(
                "session `{id}` is not a calibration session"
            )));
        }
        if session.meta.finished {
            return Err(ServiceError::SessionClosed(id.to_string()));
        }
        for s in session.expire(self.now()) {
            self.store.append_line(id, CALIBRATION_FILE, &s)?;
        }
        if !session.queue_done() {
            return Err(ServiceError::PhaseMismatch(format!(
                "session `{id}` still has {} prompts",
                session.meta.prompts.len() - session.samples.len()
            )));
        }
        let accuracy = response_accuracy(&session.samples, &session.meta.mapping);
        let _guard = self.profiles.lock();
        let mut profile = self.get_profile(&session.meta.profile_id)?;
        let table = match session.phase() {
            SessionPhase::Calibration1 => {
                profile.tables.internal_mapping =
                    estimate_internal_mapping(&session.samples, alpha)?;
                profile.internal_mapping_source = TableSource::Fitted;
                TableKind::InternalMapping
            }
            _ => {
                profile.tables.distortion = estimate_distortion(&session.samples, alpha)?;
                profile.distortion_source = TableSource::Fitted;
                TableKind::Distortion
            }
        };
        profile.updated_at = self.now();
        self.store.save_profile(&profile)?;
        session.meta.finished = true;
        self.store
            .write_session_file(id, META_FILE, &session.meta)?;
        let proficient = accuracy >= DEFAULT_PROFICIENCY_THRESHOLD;
        let warning = (!proficient).then(|| {
            format!(
                "accuracy {:.0}% is below the {:.0}% proficiency threshold",
                accuracy * 100.0,
                DEFAULT_PROFICIENCY_THRESHOLD * 100.0
            )
        });
        Ok(FinishReport {
            session_id: id.to_string(),
            profile_id: profile.id,
            table,
            tables: profile.tables,
            accuracy,
            proficient,
            warning,
        })
    }

    pub fn trace(&self, id: &str) -> Result<TraceView, ServiceError> {
        let handle = self.handle(id)?;
        let session = handle.session.lock();
        Ok(TraceView {
            meta: session.meta.clone(),
            trace: session.trace.clone(),
            samples: session.samples.clone(),
        })
    }

    /// Replays the persisted log of a session (evaluation trace or
    /// calibration samples) against the files on disk.
    pub fn replay_session(&self, id: &str) -> Result<ReplayReport, ServiceError> {
        let meta: SessionMeta = self
            .store
            .read_session_file(id, META_FILE)?
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))?;
        if meta.phase == SessionPhase::Evaluation {
            return replay_trace(&meta, &self.store.raw_lines(id, TRACE_FILE)?);
        }
        let raw = self.store.raw_lines(id, CALIBRATION_FILE)?;
        let mut first_mismatch = None;
        for (i, line) in raw.iter().enumerate() {
            let sample: CalibrationSample = serde_json::from_str(line)?;
            let expected = meta.prompts.get(i).copied();
            if first_mismatch.is_none()
                && (serde_json::to_string(&sample)? != *line || expected != Some(sample.prompt))
            {
                first_mismatch = Some(i + 1);
            }
        }
        Ok(ReplayReport {
            session_id: meta.id,
            lines: raw.len(),
            identical: first_mismatch.is_none(),
            first_mismatch,
            final_world: None,
        })
    }
}

fn new_handle(session: Session) -> SessionHandle {
    let (tx, _) = broadcast::channel(CHANNEL_CAPACITY);
    SessionHandle {
        session: Mutex::new(session),
        tx,
    }
}

fn broadcast(
    tx: &broadcast::Sender<ServerMessage>,
    state: &ServerMessage,
    end: Option<&ServerMessage>,
) {
    // no subscribers is fine
    let _ = tx.send(state.clone());
    if let Some(end) = end {
        let _ = tx.send(end.clone());
    }
}
