use std::collections::BTreeSet;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use bodyaffect::annotations::parse_annotations;
use bodyaffect::quality::{read_hit_assignments, GoldSet};
use bodyaffect_service::{
    router, AppState, Event, ManualClock, Pool, PoolItem, Sampling, Service, ServiceConfig,
};

const T0: u64 = 1_700_000_000;

fn pool(n_tasks: usize) -> Pool {
    let mut items: Vec<PoolItem> = (0..n_tasks)
        .map(|i| PoolItem { instance_id: format!("m{}/i{i:03}", i % 7), media_url: format!("https://clips/{i}.mp4"), frames: 300 })
        .collect();
    for c in 0..2 {
        items.push(PoolItem { instance_id: format!("ctl/{c}"), media_url: format!("https://clips/c{c}.mp4"), frames: 120 });
    }
    let gold = GoldSet::parse(
        "[[control]]\ninstance_id = \"ctl/0\"\nforbidden = [\"anger\"]\n\n\
         [[control]]\ninstance_id = \"ctl/1\"\nforbidden = [\"anger\"]\n",
    )
    .unwrap();
    Pool::new(items, gold, 20).unwrap()
}

fn config(sampling: Sampling) -> ServiceConfig {
    ServiceConfig { sampling, seed: 9, ..ServiceConfig::default() }
}

fn app(n_tasks: usize) -> (Router, AppState, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(T0));
    let state = AppState::new(Service::new(config(Sampling::LeastAnnotated), pool(n_tasks)), clock.clone());
    (router(state.clone()), state, clock)
}

async fn send(r: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = r.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call(r: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, bytes) = send(r, method, uri, body).await;
    (s, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn record(instance: &str, participant: &str, cats: &[&str], v: u8, a: u8, d: u8) -> Value {
    json!({
        "instance_id": instance,
        "participant_id": participant,
        "corrupted": false,
        "categories": cats,
        "valence": v,
        "arousal": a,
        "dominance": d,
        "char_gender": "female",
        "char_age": "adult",
        "char_ethnicity": "asian",
        "start_frame": 0,
        "end_frame": 100,
    })
}

async fn create(r: &Router, pid: &str) -> (StatusCode, Value) {
    call(r, "POST", "/v1/sessions", Some(json!({ "participant_id": pid, "eq_passed": true }))).await
}

/// Walks a whole session; `answer` gets (task index or None for the control, instance id).
async fn run_session(
    r: &Router,
    pid: &str,
    answer: impl Fn(Option<usize>, &str) -> Value,
) -> (String, Vec<Value>, Value) {
    let (s, desc) = create(r, pid).await;
    assert_eq!(s, StatusCode::CREATED, "{desc}");
    let sid = desc["session_id"].as_str().unwrap().to_string();
    let mut items = Vec::new();
    let mut task = 0;
    loop {
        let (s, next) = call(r, "GET", &format!("/v1/sessions/{sid}/next"), None).await;
        assert_eq!(s, StatusCode::OK);
        if next["done"].as_bool().unwrap() {
            break;
        }
        let id = next["item"]["instance_id"].as_str().unwrap().to_string();
        let which = if id.starts_with("ctl/") {
            None
        } else {
            task += 1;
            Some(task - 1)
        };
        let (s, ack) = call(r, "POST", &format!("/v1/sessions/{sid}/annotations"), Some(answer(which, &id))).await;
        assert_eq!(s, StatusCode::OK, "{ack}");
        items.push(next["item"].clone());
    }
    let (s, done) = call(r, "POST", &format!("/v1/sessions/{sid}/complete"), None).await;
    assert_eq!(s, StatusCode::OK, "{done}");
    (sid, items, done)
}

fn clean(pid: &str) -> impl Fn(Option<usize>, &str) -> Value + '_ {
    move |_, id| record(id, pid, &["happiness"], 7, 5, 5)
}

#[tokio::test]
async fn active_participant_gets_twenty_one_items_with_hidden_control() {
    let (r, _, _) = app(40);
    let (_, items, done) = run_session(&r, "p1", clean("p1")).await;
    assert_eq!(items.len(), 21);
    let ids: BTreeSet<&str> = items.iter().map(|i| i["instance_id"].as_str().unwrap()).collect();
    assert_eq!(ids.len(), 21);
    assert_eq!(ids.iter().filter(|i| i.starts_with("ctl/")).count(), 1);
    let keys = |v: &Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    for it in &items {
        assert_eq!(keys(it), keys(&items[0]));
        assert!(it["media_url"].as_str().unwrap().starts_with("https://clips/"));
    }
    assert_eq!(done["outcome"]["low_performance"], false);
    assert_eq!(done["status"]["state"], "active");
    assert_eq!(done["version"], 1);
}

#[tokio::test]
async fn live_sanity_feedback() {
    let (r, _, _) = app(40);
    let (_, desc) = create(&r, "p1").await;
    let sid = desc["session_id"].as_str().unwrap();
    let (_, next) = call(&r, "GET", &format!("/v1/sessions/{sid}/next"), None).await;
    let id = next["item"]["instance_id"].as_str().unwrap();
    let (s, ack) =
        call(&r, "POST", &format!("/v1/sessions/{sid}/annotations"), Some(record(id, "p1", &["happiness"], 4, 5, 5))).await;
    assert_eq!(s, StatusCode::OK);
    let v = ack["violations"].as_array().unwrap();
    assert_eq!(v.len(), 1);
    assert_eq!(v[0]["rule"], "valence_above");
    assert_eq!(v[0]["category"], "happiness");
    assert_eq!(ack["position"], 1);

    let (_, next) = call(&r, "GET", &format!("/v1/sessions/{sid}/next"), None).await;
    let id = next["item"]["instance_id"].as_str().unwrap();
    let (_, ack) =
        call(&r, "POST", &format!("/v1/sessions/{sid}/annotations"), Some(record(id, "p1", &["happiness"], 8, 5, 5))).await;
    assert!(ack["violations"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn order_ownership_and_completeness_are_enforced() {
    let (r, _, _) = app(40);
    let (_, desc) = create(&r, "p1").await;
    let sid = desc["session_id"].as_str().unwrap();
    let (s, err) =
        call(&r, "POST", &format!("/v1/sessions/{sid}/annotations"), Some(record("m0/i999", "p1", &[], 5, 5, 5))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(err["error"], "out_of_order");

    let (_, next) = call(&r, "GET", &format!("/v1/sessions/{sid}/next"), None).await;
    let id = next["item"]["instance_id"].as_str().unwrap();
    let (s, err) = call(&r, "POST", &format!("/v1/sessions/{sid}/annotations"), Some(record(id, "p2", &[], 5, 5, 5))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "bad_request");
    let (s, _) = call(&r, "POST", &format!("/v1/sessions/{sid}/annotations"), Some(record(id, "p1", &[], 11, 5, 5))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, err) = call(&r, "POST", &format!("/v1/sessions/{sid}/complete"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(err["error"], "incomplete");
    assert_eq!(err["missing"].as_array().unwrap().len(), 21);

    let (s, err) = call(&r, "GET", "/v1/sessions/nope/next", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "unknown_session");
}

#[tokio::test]
async fn two_inconsistencies_block_for_an_hour() {
    let (r, _, clock) = app(40);
    let (_, _, done) = run_session(&r, "p1", |task, id| match task {
        Some(0) | Some(1) => record(id, "p1", &["happiness"], 3, 5, 5),
        _ => record(id, "p1", &["happiness"], 7, 5, 5),
    })
    .await;
    assert_eq!(done["outcome"]["violations"], 2);
    assert_eq!(done["outcome"]["low_performance"], true);
    assert_eq!(done["status"]["state"], "blocked_until");
    assert_eq!(done["status"]["until"], T0 + 3600);

    clock.advance(600);
    let (s, err) = create(&r, "p1").await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(err["error"], "blocked");
    assert_eq!(err["retry_after_secs"], 3000);

    clock.advance(3000);
    let (s, _) = create(&r, "p1").await;
    assert_eq!(s, StatusCode::CREATED);
}

#[tokio::test]
async fn one_inconsistency_is_tolerated() {
    let (r, _, _) = app(40);
    let (_, _, done) = run_session(&r, "p1", |task, id| match task {
        Some(5) => record(id, "p1", &["peace"], 7, 9, 5),
        _ => record(id, "p1", &[], 7, 5, 5),
    })
    .await;
    assert_eq!(done["outcome"]["violations"], 1);
    assert_eq!(done["outcome"]["low_performance"], false);
    assert_eq!(done["status"]["state"], "active");
}

#[tokio::test]
async fn gold_breach_alone_is_low_performance() {
    let (r, _, _) = app(40);
    let (_, _, done) = run_session(&r, "p1", |task, id| match task {
        None => record(id, "p1", &["anger"], 3, 5, 5),
        Some(_) => record(id, "p1", &[], 7, 5, 5),
    })
    .await;
    assert_eq!(done["outcome"]["violations"], 0);
    assert_eq!(done["outcome"]["gold_failed"], true);
    assert_eq!(done["outcome"]["low_performance"], true);
    assert_eq!(done["status"]["state"], "blocked_until");
}

#[tokio::test]
async fn completed_session_is_immutable() {
    let (r, _, _) = app(40);
    let (sid, items, _) = run_session(&r, "p1", clean("p1")).await;
    let id = items[0]["instance_id"].as_str().unwrap();
    let (s, err) = call(&r, "POST", &format!("/v1/sessions/{sid}/annotations"), Some(record(id, "p1", &[], 5, 5, 5))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(err["error"], "session_closed");
    let (s, _) = call(&r, "POST", &format!("/v1/sessions/{sid}/complete"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (_, next) = call(&r, "GET", &format!("/v1/sessions/{sid}/next"), None).await;
    assert_eq!(next["done"], true);
    assert!(next["item"].is_null());
}

#[tokio::test]
async fn unreliable_participant_is_excluded_permanently() {
    // 20 tasks, so every participant annotates the same instances
    let (r, _, clock) = app(20);
    for p in ["h1", "h2", "h3"] {
        let (_, _, done) = run_session(&r, p, move |_, id| record(id, p, &[], 7, 5, 5)).await;
        assert_eq!(done["status"]["state"], "active");
    }
    let (_, _, done) = run_session(&r, "bad", |_, id| record(id, "bad", &[], 1, 10, 1)).await;
    assert_eq!(done["outcome"]["low_performance"], false);
    assert_eq!(done["status"]["state"], "excluded");

    clock.advance(10 * 24 * 3600);
    let (s, err) = create(&r, "bad").await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(err["error"], "excluded");
}

#[tokio::test]
async fn first_timers_need_the_eq_flag() {
    let (r, _, _) = app(40);
    let (s, err) = call(&r, "POST", "/v1/sessions", Some(json!({ "participant_id": "new" }))).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(err["error"], "eq_required");
    run_session(&r, "p1", clean("p1")).await;
    // returning participants keep their EQ pass
    let (s, _) = call(&r, "POST", "/v1/sessions", Some(json!({ "participant_id": "p1" }))).await;
    assert_eq!(s, StatusCode::CREATED);
}

#[tokio::test]
async fn least_annotated_first_balances_the_pool() {
    let (r, _, _) = app(40);
    run_session(&r, "p1", clean("p1")).await;
    run_session(&r, "p2", clean("p2")).await;
    let (s, status) = call(&r, "GET", "/v1/admin/pool", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(status["version"], 1);
    let inst = status["instances"].as_array().unwrap();
    assert_eq!(inst.len(), 40);
    assert!(inst.iter().all(|e| e["assigned"] == 1 && e["annotated"] == 1));
    assert_eq!(status["completed_sessions"], 2);
    assert_eq!(status["target_per_instance"], 5);
    assert_eq!(status["at_target"], 0);
}

#[test]
fn uniform_sampling_and_seeded_sessions() {
    let make = |sampling| {
        let mut s = Service::new(config(sampling), pool(40));
        let a = s.create_session("p1", true, T0).unwrap().instance_ids.clone();
        let b = s.create_session("p2", true, T0).unwrap().instance_ids.clone();
        (a, b)
    };
    assert_eq!(make(Sampling::Uniform), make(Sampling::Uniform));
    let (a, b) = make(Sampling::LeastAnnotated);
    let overlap = a.iter().filter(|i| !i.starts_with("ctl/") && b.contains(i)).count();
    assert_eq!(overlap, 0);
    assert_eq!(make(Sampling::LeastAnnotated), (a, b));
}

#[tokio::test]
async fn admin_exports_feed_the_batch_tools() {
    let (r, _, _) = app(40);
    let (s, err) = call(&r, "GET", "/v1/admin/qc", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(err["error"], "qc_unavailable");

    for p in ["p1", "p2", "p3"] {
        run_session(&r, p, move |_, id| record(id, p, &[], 7, 5, 5)).await;
    }
    let (s, qc) = call(&r, "GET", "/v1/admin/qc", None).await;
    assert_eq!(s, StatusCode::OK, "{qc}");
    assert_eq!(qc["version"], 1);
    assert_eq!(qc["participants"].as_array().unwrap().len(), 3);
    assert_eq!(qc["hits"].as_array().unwrap().len(), 3);

    let (s, csv) = send(&r, "GET", "/v1/admin/annotations", None).await;
    assert_eq!(s, StatusCode::OK);
    let recs = parse_annotations(csv.as_slice()).unwrap();
    assert_eq!(recs.len(), 63);
    let (_, csv) = send(&r, "GET", "/v1/admin/hits", None).await;
    let hits = read_hit_assignments(csv.as_slice()).unwrap();
    assert_eq!(hits.len(), 3);
    assert!(hits.iter().all(|h| h.instance_ids.len() == 21));
}

#[tokio::test]
async fn replaying_the_log_reconstructs_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let clock = Arc::new(ManualClock::new(T0));
    let state = AppState::new(Service::open_log(config(Sampling::LeastAnnotated), pool(20), &path).unwrap(), clock.clone());
    let r = router(state.clone());
    for p in ["h1", "h2", "h3"] {
        run_session(&r, p, move |_, id| record(id, p, &[], 7, 5, 5)).await;
    }
    run_session(&r, "bad", |_, id| record(id, "bad", &[], 1, 10, 1)).await;
    run_session(&r, "sloppy", |t, id| match t {
        Some(0) | Some(1) => record(id, "sloppy", &["excitement"], 7, 2, 5),
        _ => record(id, "sloppy", &[], 7, 5, 5),
    })
    .await;
    // an abandoned open session is part of the log too
    create(&r, "h1").await;

    let live = state.lock();
    let from_memory = Service::replay(config(Sampling::LeastAnnotated), pool(20), live.events()).unwrap();
    let from_disk = Service::open_log(config(Sampling::LeastAnnotated), pool(20), &path).unwrap();
    for s in [&from_memory, &from_disk] {
        assert_eq!(s.participants(), live.participants());
        assert_eq!(s.pool_status(T0), live.pool_status(T0));
        assert_eq!(s.store(), live.store());
        assert_eq!(s.events(), live.events());
    }
    let statuses: Vec<String> =
        live.participants().values().map(|p| serde_json::to_value(p.status).unwrap()["state"].to_string()).collect();
    assert!(statuses.contains(&"\"excluded\"".to_string()));
    assert!(statuses.contains(&"\"blocked_until\"".to_string()));
    assert!(matches!(live.events()[0], Event::SessionCreated { .. }));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_keep_a_total_order() {
    let (r, state, _) = app(80);
    let mut handles = Vec::new();
    for k in 0..8 {
        let r = r.clone();
        handles.push(tokio::spawn(async move {
            let pid = format!("p{k}");
            run_session(&r, &pid, |_, id| record(id, &pid, &[], 7, 5, 5)).await;
        }));
    }
    for h in handles {
        h.await.unwrap();
    }
    let svc = state.lock();
    assert_eq!(svc.events().len(), 8 * 23);
    assert_eq!(svc.store().len(), 8 * 21);
    let status = svc.pool_status(T0);
    assert_eq!(status.instances.iter().map(|e| e.assigned).sum::<usize>(), 160);
    assert!(status.instances.iter().all(|e| e.assigned == 2));
    let replayed = Service::replay(config(Sampling::LeastAnnotated), pool(80), svc.events()).unwrap();
    assert_eq!(replayed.participants(), svc.participants());
}
