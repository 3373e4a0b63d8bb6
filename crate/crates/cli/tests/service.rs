use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use clickcast::service::{router, AppState, Created, ParticlesBody, PredictionBody, SessionInfo, Status};
use clickcast_core::markspace::VisSpec;
use clickcast_core::simulator::{generate_dataset, STUDY_COLORS, STUDY_MARKS};
use clickcast_core::{run_session, FilterParams, MarkSpace};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn app() -> (Arc<AppState>, Router) {
    let state = AppState::new(Duration::from_secs(60));
    (state.clone(), router(state))
}

fn small_spec() -> Value {
    json!({
        "width": 100.0,
        "height": 50.0,
        "color_count": 2,
        "marks": [
            {"id": 1, "x": 10.0, "y": 10.0, "color": 1},
            {"id": 2, "x": 50.0, "y": 25.0, "color": 2},
            {"id": 3, "x": 90.0, "y": 40.0, "color": 1},
            {"id": 4, "x": 30.0, "y": 45.0, "color": 2}
        ]
    })
}

async fn create(app: &Router, body: Value) -> Created {
    let (status, v) = call(app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    serde_json::from_value(v).unwrap()
}

async fn click(app: &Router, id: &str, mark: u64) -> (StatusCode, Value) {
    call(app, Method::POST, &format!("/sessions/{id}/clicks"), Some(json!({ "mark_id": mark }))).await
}

#[tokio::test]
async fn health_responds() {
    let (_, app) = app();
    let (status, _) = call(&app, Method::GET, "/health", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn create_reports_space_and_effective_params() {
    let (state, app) = app();
    let created = create(&app, json!({ "spec": small_spec(), "params": { "particles": 200 } })).await;
    assert_eq!(created.marks, 4);
    assert_eq!(created.color_count, 2);
    assert_eq!(created.params.particles, Some(200));
    assert_eq!(created.params.alpha, Some(100));
    assert_eq!(state.session_count(), 1);
}

#[tokio::test]
async fn clicks_before_warmup_have_no_prediction() {
    let (_, app) = app();
    let created = create(&app, json!({ "spec": small_spec(), "params": { "particles": 200, "alpha": 2 } })).await;
    for (mark, expected) in [(1, Status::Warmup), (2, Status::Warmup), (3, Status::Ready)] {
        let (status, v) = click(&app, &created.id, mark).await;
        assert_eq!(status, StatusCode::OK);
        let body: PredictionBody = serde_json::from_value(v).unwrap();
        assert_eq!(body.status, expected);
        assert!(body.hit.is_none());
        match expected {
            Status::Warmup => assert!(body.prediction.is_empty()),
            Status::Ready => assert_eq!(body.prediction.len(), 2),
        }
    }
    let (_, v) = click(&app, &created.id, 4).await;
    let body: PredictionBody = serde_json::from_value(v).unwrap();
    assert_eq!(body.t, 4);
    assert!(body.hit.is_some());
}

#[tokio::test]
async fn error_codes() {
    let (_, app) = app();
    let created = create(&app, json!({ "spec": small_spec() })).await;

    let (status, v) = click(&app, &created.id, 99).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "UNKNOWN_MARK");

    let missing = "00000000-0000-4000-8000-000000000000";
    let (status, v) = click(&app, missing, 1).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "SESSION_NOT_FOUND");

    let (status, v) = call(&app, Method::POST, "/sessions", Some(json!({ "spec": small_spec(), "params": { "rho": 3.0 } }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "INVALID_PARAMS");

    let mut bad = small_spec();
    bad["marks"][0]["color"] = json!(7);
    let (status, v) = call(&app, Method::POST, "/sessions", Some(json!({ "spec": bad }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "INVALID_SPEC");

    let (status, v) = call(&app, Method::POST, "/sessions", Some(json!({ "dataset": { "name": "census" } }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "UNKNOWN_DATASET");

    let (status, v) = call(&app, Method::POST, "/sessions", Some(json!({ "nonsense": true }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "BAD_REQUEST");
}

#[tokio::test]
async fn live_prediction_matches_offline_replay() {
    let (_, app) = app();
    let created = create(&app, json!({ "dataset": { "name": "study", "seed": 7 }, "params": { "seed": 11 } })).await;
    assert_eq!(created.marks, STUDY_MARKS);

    let space: MarkSpace<f64> = generate_dataset(STUDY_MARKS, STUDY_COLORS, 7).unwrap();
    let ids: Vec<u64> = [5usize, 40, 41, 900].iter().map(|&i| space.marks()[i].id).collect();
    let mut last = None;
    for &id in &ids[..3] {
        let (status, v) = click(&app, &created.id, id).await;
        assert_eq!(status, StatusCode::OK);
        last = Some(serde_json::from_value::<PredictionBody>(v).unwrap());
    }
    let live = last.unwrap();
    assert_eq!(live.status, Status::Ready);
    assert_eq!(live.prediction.len(), 100);

    let params = FilterParams { seed: 11, ..FilterParams::default() };
    let clicks: Vec<_> = ids.iter().enumerate().map(|(i, &id)| space.click(i + 1, id).unwrap()).collect();
    let offline = run_session(&space, &clicks, &params).unwrap();
    assert_eq!(offline.records.len(), 1);
    assert_eq!(live.prediction, offline.records[0].prediction.entries);

    let (status, v) = call(&app, Method::GET, &format!("/sessions/{}/prediction", created.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let again: PredictionBody = serde_json::from_value(v).unwrap();
    assert_eq!(again.prediction, live.prediction);

    let (_, v) = click(&app, &created.id, ids[3]).await;
    let body: PredictionBody = serde_json::from_value(v).unwrap();
    assert_eq!(body.hit, Some(offline.records[0].hit));
}

#[tokio::test]
async fn particles_space_info_and_delete() {
    let (state, app) = app();
    let created = create(&app, json!({ "spec": small_spec(), "params": { "particles": 300 } })).await;
    click(&app, &created.id, 2).await;

    let (status, v) = call(&app, Method::GET, &format!("/sessions/{}/particles?max=50", created.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let particles: ParticlesBody = serde_json::from_value(v).unwrap();
    assert_eq!(particles.t, 1);
    assert!(!particles.points.is_empty() && particles.points.len() <= 50);
    assert_eq!(particles.pi_hist.len(), 10);
    assert!((particles.pi_hist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(particles.points.iter().all(|p| (0.0..=1.0).contains(&p.x) && (1..=2).contains(&p.k)));

    let (status, v) = call(&app, Method::GET, &format!("/sessions/{}/space", created.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let spec: VisSpec = serde_json::from_value(v).unwrap();
    assert_eq!(spec.marks.len(), 4);

    let (status, v) = call(&app, Method::GET, &format!("/sessions/{}", created.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let info: SessionInfo = serde_json::from_value(v).unwrap();
    assert_eq!(info.t, 1);
    assert_eq!(info.history.len(), 1);
    assert_eq!(info.history[0].mark_id, 2);

    let (status, _) = call(&app, Method::DELETE, &format!("/sessions/{}", created.id), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert_eq!(state.session_count(), 0);
    let (status, _) = call(&app, Method::GET, &format!("/sessions/{}", created.id), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn idle_sessions_expire() {
    let (state, app) = app();
    create(&app, json!({ "spec": small_spec() })).await;
    create(&app, json!({ "spec": small_spec() })).await;
    assert_eq!(state.purge_idle(Instant::now()), 0);
    assert_eq!(state.session_count(), 2);
    assert_eq!(state.purge_idle(Instant::now() + Duration::from_secs(61)), 2);
    assert_eq!(state.session_count(), 0);
}

#[tokio::test]
async fn concurrent_clicks_on_one_session_are_serialized() {
    let (_, app) = app();
    let created = create(&app, json!({ "spec": small_spec(), "params": { "particles": 200 } })).await;
    let tasks: Vec<_> = (0..8)
        .map(|i| {
            let app = app.clone();
            let id = created.id.clone();
            tokio::spawn(async move { click(&app, &id, 1 + i % 4).await })
        })
        .collect();
    for task in tasks {
        assert_eq!(task.await.unwrap().0, StatusCode::OK);
    }
    let (_, v) = call(&app, Method::GET, &format!("/sessions/{}", created.id), None).await;
    let info: SessionInfo = serde_json::from_value(v).unwrap();
    assert_eq!(info.t, 8);
    let ts: Vec<usize> = info.history.iter().map(|h| h.t).collect();
    assert_eq!(ts, (1..=8).collect::<Vec<_>>());
}
