use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use futures::{SinkExt, StreamExt};
use ifassist_service::{router, ManualClock, SessionManager, Store};
use serde_json::{json, Value};
use tempfile::TempDir;
use tokio_tungstenite::tungstenite::Message;
use tower::ServiceExt;

fn app() -> (TempDir, Arc<SessionManager>, Router) {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(0.0));
    let m = Arc::new(SessionManager::open(Store::open(dir.path()).unwrap(), clock).unwrap());
    (dir, m.clone(), router(m))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes)
            .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

fn straight_session(id: &str, mode: &str) -> Value {
    json!({
        "session_id": id,
        "profile_id": "alice",
        "phase": "evaluation",
        "assistance": mode,
        "task": {
            "start": {"x": 0, "y": 0, "theta": 0, "mode": "x", "step_count": 0},
            "waypoints": [[0, 0], [3, 0]],
            "goal_theta": 0
        }
    })
}

#[tokio::test]
async fn profile_endpoints() {
    let (_dir, _m, app) = app();
    let (s, body) = call(
        &app,
        "POST",
        "/profiles",
        Some(json!({"id": "alice", "epsilon": 0.5})),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(body["epsilon"], 0.5);
    assert_eq!(body["internal_mapping_source"], "default");
    assert_eq!(body["mapping"]["mode_switch_cw"], "hard_puff");
    let (s, _) = call(&app, "POST", "/profiles", Some(json!({"id": "alice"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, body) = call(&app, "GET", "/profiles/alice", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["id"], "alice");
    let (s, body) = call(&app, "GET", "/profiles/bob", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "unknown_profile");
    let (s, _) = call(
        &app,
        "POST",
        "/profiles",
        Some(json!({"id": "x", "epsilon": 2.0})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn evaluation_over_http() {
    let (_dir, _m, app) = app();
    call(&app, "POST", "/profiles", Some(json!({"id": "alice"}))).await;
    let (s, body) = call(
        &app,
        "POST",
        "/sessions",
        Some(straight_session("e1", "no_assistance")),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{body}");
    assert_eq!(body["session_id"], "e1");
    assert_eq!(body["state"]["type"], "state");

    let (s, ev) = call(
        &app,
        "POST",
        "/sessions/e1/actions",
        Some(json!({"phi": "soft_puff", "ts": 1.5})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{ev}");
    assert_eq!(ev["state"]["world"]["x"], 1);
    assert_eq!(ev["state"]["world"]["y"], 0);
    assert_eq!(ev["state"]["outcome"]["reason"], "no_assist");
    assert_eq!(ev["state"]["outcome"]["phi_out"], "soft_puff");

    let (s, body) = call(
        &app,
        "POST",
        "/sessions/e1/actions",
        Some(json!({"phi": "null"})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");

    for _ in 0..2 {
        call(
            &app,
            "POST",
            "/sessions/e1/actions",
            Some(json!({"phi": "soft_puff"})),
        )
        .await;
    }
    let (s, body) = call(
        &app,
        "POST",
        "/sessions/e1/actions",
        Some(json!({"phi": "soft_puff"})),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["error"], "session_closed");

    let (s, trace) = call(&app, "GET", "/sessions/e1/trace", None).await;
    assert_eq!(s, StatusCode::OK);
    let steps = trace["trace"].as_array().unwrap();
    assert_eq!(steps.len(), 3);
    assert_eq!(steps[0]["client_ts"], 1.5);
    assert_eq!(steps[2]["state_after"]["x"], 3);

    let (s, report) = call(&app, "GET", "/sessions/e1/replay", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(report["identical"], true);
}

#[tokio::test]
async fn corrective_outcome_carries_inference() {
    let (_dir, _m, app) = app();
    call(&app, "POST", "/profiles", Some(json!({"id": "alice"}))).await;
    call(
        &app,
        "POST",
        "/sessions",
        Some(straight_session("e1", "corrective")),
    )
    .await;
    let (_, ev) = call(
        &app,
        "POST",
        "/sessions/e1/actions",
        Some(json!({"phi": "soft_sip"})),
    )
    .await;
    let outcome = &ev["state"]["outcome"];
    assert_eq!(outcome["intervened"], true);
    assert_eq!(outcome["reason"], "corrected");
    assert_eq!(outcome["phi_out"], "soft_puff");
    assert!(outcome["posterior"]["motion_positive"].as_f64().unwrap() > 0.99);
    assert!(outcome["entropy_normalized"].is_number());
    assert_eq!(ev["state"]["world"]["x"], 1);
}

#[tokio::test]
async fn session_errors() {
    let (_dir, _m, app) = app();
    let (s, body) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"profile_id": "ghost", "phase": "calibration1"})),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "unknown_profile");
    call(&app, "POST", "/profiles", Some(json!({"id": "alice"}))).await;
    let (s, body) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"profile_id": "alice", "phase": "evaluation"})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "invalid_phase_config");
    let (s, _) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"profile_id": "alice", "phase": "calibration1", "session_id": "c"})),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, body) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"profile_id": "alice", "phase": "calibration1", "session_id": "c"})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "invalid_phase_config");
    let (s, body) = call(
        &app,
        "POST",
        "/sessions/c/finish",
        Some(json!({"alpha": 1.0})),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["error"], "phase_mismatch");
    let (s, _) = call(&app, "GET", "/sessions/none/trace", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn calibration_over_http() {
    let (_dir, _m, app) = app();
    call(&app, "POST", "/profiles", Some(json!({"id": "alice"}))).await;
    let cfg =
        json!({"profile_id": "alice", "phase": "calibration2", "session_id": "c2", "blocks": 1});
    let (_, created) = call(&app, "POST", "/sessions", Some(cfg)).await;
    let mut prompt = created["state"]["prompt"]["prompt"]
        .as_str()
        .unwrap()
        .to_string();
    assert_eq!(created["state"]["prompt"]["deadline"], 5.0);
    for i in 0..4 {
        let (s, ev) = call(
            &app,
            "POST",
            "/sessions/c2/actions",
            Some(json!({"phi": prompt})),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(ev["recorded"][0]["response"], prompt.as_str());
        if i < 3 {
            prompt = ev["state"]["prompt"]["prompt"]
                .as_str()
                .unwrap()
                .to_string();
        } else {
            assert_eq!(ev["end"]["type"], "end");
            assert_eq!(ev["end"]["result"]["kind"], "calibration");
        }
    }
    let (s, report) = call(&app, "POST", "/sessions/c2/finish", None).await;
    assert_eq!(s, StatusCode::OK, "{report}");
    assert_eq!(report["table"], "distortion");
    assert_eq!(report["accuracy"], 1.0);
    let (_, profile) = call(&app, "GET", "/profiles/alice", None).await;
    assert_eq!(profile["distortion_source"], "fitted");
    assert_eq!(profile["internal_mapping_source"], "default");
    // one correct answer plus alpha = 1 gives 2/5 on the diagonal
    assert_eq!(profile["tables"]["distortion"]["soft_sip"]["soft_sip"], 0.4);
}

async fn next_json<S>(ws: &mut S) -> Value
where
    S: futures::Stream<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    loop {
        let msg = tokio::time::timeout(std::time::Duration::from_secs(5), ws.next())
            .await
            .expect("message within 5 s")
            .expect("stream open")
            .expect("valid frame");
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

#[tokio::test]
async fn websocket_session() {
    let (_dir, m, app) = app();
    m.create_profile(ifassist_service::ProfileRequest {
        id: "alice".into(),
        ..Default::default()
    })
    .unwrap();
    m.create_session(serde_json::from_value(straight_session("e1", "no_assistance")).unwrap())
        .unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/e1/ws"))
        .await
        .unwrap();
    let (mut observer, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/e1/ws"))
        .await
        .unwrap();
    let hello = next_json(&mut ws).await;
    assert_eq!(hello["type"], "state");
    assert_eq!(hello["world"]["x"], 0);
    assert_eq!(hello["task"]["goal_theta"], 0);
    next_json(&mut observer).await;

    ws.send(Message::Text(
        r#"{"type":"action","phi":"hard_sip","ts":12.5}"#.into(),
    ))
    .await
    .unwrap();
    let state = next_json(&mut ws).await;
    assert_eq!(state["world"]["mode"], "theta");
    assert_eq!(state["metrics"]["mode_switches"], 1);
    assert_eq!(next_json(&mut observer).await, state);

    ws.send(Message::Text(r#"{"type":"jump"}"#.into()))
        .await
        .unwrap();
    assert_eq!(next_json(&mut ws).await["type"], "error");

    // back to x, then three steps to the goal
    for phi in ["hard_puff", "soft_puff", "soft_puff", "soft_puff"] {
        let msg = json!({"type": "action", "phi": phi, "ts": 0.0}).to_string();
        ws.send(Message::Text(msg.into())).await.unwrap();
        assert_eq!(next_json(&mut ws).await["type"], "state");
    }
    let end = next_json(&mut ws).await;
    assert_eq!(end["type"], "end");
    assert_eq!(end["result"]["success"], true);
    assert_eq!(end["result"]["steps_total"], 5);

    let trace = m.trace("e1").unwrap();
    assert_eq!(trace.trace[0].client_ts, Some(12.5));

    let resp = tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/ghost/ws")).await;
    assert!(resp.is_err());
}
