//! Session server for live assisted teleoperation and the two calibration
//! phases. Sessions are driven over HTTP or a WebSocket; every event is
//! persisted under a data directory so sessions survive restarts and can be
//! replayed.

pub mod clock;
pub mod error;
pub mod http;
pub mod manager;
pub mod session;
pub mod store;

pub use clock::{Clock, ManualClock, SystemClock};
pub use error::ServiceError;
pub use http::{router, serve, spawn_ticker};
pub use manager::{
    replay_trace, FinishReport, ProfileRequest, ReplayReport, SessionManager, SubmitEvent,
};
pub use session::{ServerMessage, SessionConfig, SessionPhase, TaskSpec};
pub use store::{Store, UserProfile};
