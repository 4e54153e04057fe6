use std::path::Path;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use iqa_core::raster::save_image;
use iqa_core::Raster;
use rating_service::{open, router, ServiceConfig, SetConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn make_set(dir: &Path, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        save_image(&Raster::filled(4, 4, 1, i as f32 / n as f32), &dir.join(format!("img{i:02}.png"))).unwrap();
    }
}

fn config(root: &Path, n: usize) -> ServiceConfig {
    make_set(&root.join("main"), n);
    make_set(&root.join("empty"), 0);
    ServiceConfig {
        data_dir: root.join("data"),
        sets: vec![
            SetConfig { id: "main".into(), dir: root.join("main") },
            SetConfig { id: "empty".into(), dir: root.join("empty") },
        ],
        ..Default::default()
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v["schema_version"], 1, "{v}");
    (s, v)
}

async fn new_session(app: &Router, observer: &str, seed: u64) -> Value {
    let (s, v) =
        call_json(app, "POST", "/sessions", Some(json!({"observer_id": observer, "image_set": "main", "shuffle_seed": seed}))).await;
    assert_eq!(s, StatusCode::CREATED);
    v["session"].clone()
}

async fn rate_next(app: &Router, id: &str, score: f64) -> (StatusCode, Value) {
    let (_, next) = call_json(app, "GET", &format!("/sessions/{id}/next"), None).await;
    let img = next["image_id"].clone();
    call_json(app, "POST", &format!("/sessions/{id}/ratings"), Some(json!({"image_id": img, "score": score}))).await
}

async fn export_rows(app: &Router, set: &str) -> Vec<String> {
    let (s, b) = call(app, "GET", &format!("/export/{set}.csv"), None).await;
    assert_eq!(s, StatusCode::OK);
    String::from_utf8(b).unwrap().lines().map(String::from).collect()
}

#[tokio::test]
async fn session_queues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 12);
    let app = router(open(&cfg).unwrap());
    let a1 = new_session(&app, "alice", 7).await;
    let a2 = new_session(&app, "alice", 7).await;
    let b = new_session(&app, "bob", 7).await;
    assert_eq!(a1["queue"], a2["queue"]);
    assert_ne!(a1["queue"], b["queue"]);
    assert_ne!(a1["id"], a2["id"]);
    assert_eq!(a1["queue"].as_array().unwrap().len(), 12);
    let (s, v) = call_json(&app, "POST", "/sessions", Some(json!({"observer_id": "x", "image_set": "nope"}))).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_set")));
}

#[tokio::test]
async fn next_and_submit() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(open(&config(dir.path(), 6)).unwrap());
    let sess = new_session(&app, "carol", 1).await;
    let id = sess["id"].as_str().unwrap();
    let (s, next) = call_json(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(next["image_id"], sess["queue"][0]);
    assert_eq!(next["history"], json!([]));
    assert_eq!(next["progress"], json!({"done": 0, "total": 6}));

    let (s, v) = rate_next(&app, id, 0.73).await;
    assert_eq!((s, v["cursor"].as_u64()), (StatusCode::OK, Some(1)));
    let img = sess["queue"][1].clone();
    let (s, _) =
        call_json(&app, "POST", &format!("/sessions/{id}/ratings"), Some(json!({"image_id": img, "discrete_label": 4}))).await;
    assert_eq!(s, StatusCode::OK);
    let (_, v) = rate_next(&app, id, 0.1).await;
    assert_eq!(v["cursor"], 3);
    let (_, next) = call_json(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    assert_eq!(next["history"], json!([0.73, 0.75, 0.1]));

    let wrong = sess["queue"][5].clone();
    let (s, v) = call_json(&app, "POST", &format!("/sessions/{id}/ratings"), Some(json!({"image_id": wrong, "score": 0.5}))).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::CONFLICT, Some("out_of_order")));
    let cur = sess["queue"][3].clone();
    for bad in [json!({"image_id": cur, "score": 1.2}), json!({"image_id": cur, "score": 0.5, "discrete_label": 4}), json!({"image_id": cur, "discrete_label": 6}), json!({"image_id": cur})] {
        let (s, _) = call_json(&app, "POST", &format!("/sessions/{id}/ratings"), Some(bad)).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    }
    let done = sess["queue"][0].clone();
    let (s, v) = call_json(&app, "POST", &format!("/sessions/{id}/ratings"), Some(json!({"image_id": done, "score": 0.5}))).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::CONFLICT, Some("duplicate")));

    for _ in 0..3 {
        rate_next(&app, id, 0.5).await;
    }
    let (s, v) = call_json(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::CONFLICT, Some("completed")));
    let (_, v) = call_json(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(v["session"]["status"], "completed");

    // A second session for the same observer only queues unrated images.
    let again = new_session(&app, "carol", 1).await;
    assert_eq!(again["queue"], json!([]));
    let rows = export_rows(&app, "main").await;
    assert_eq!(rows.len(), 7);
    assert!(rows[1].starts_with(&format!("{},carol,0.73,", sess["queue"][0].as_str().unwrap())));
    assert!(rows[2].contains(",0.75,"));
}

#[tokio::test]
async fn history_window_is_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(open(&config(dir.path(), 25)).unwrap());
    let id = new_session(&app, "dan", 0).await["id"].as_str().unwrap().to_string();
    for k in 0..22 {
        rate_next(&app, &id, k as f64 / 100.0).await;
    }
    let (_, next) = call_json(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    let h: Vec<f64> = serde_json::from_value(next["history"].clone()).unwrap();
    assert_eq!(h, (2..22).map(|k| k as f64 / 100.0).collect::<Vec<_>>());
}

#[tokio::test]
async fn export_counts_and_withdrawal() {
    let dir = tempfile::tempdir().unwrap();
    let n = 4;
    let app = router(open(&config(dir.path(), n)).unwrap());
    assert_eq!(export_rows(&app, "empty").await, vec!["image_id,observer_id,score,timestamp"]);
    for o in 0..30 {
        let id = new_session(&app, &format!("obs{o}"), 3).await["id"].as_str().unwrap().to_string();
        for _ in 0..n {
            let (s, _) = rate_next(&app, &id, 0.5).await;
            assert_eq!(s, StatusCode::OK);
        }
    }
    assert_eq!(export_rows(&app, "main").await.len(), 1 + 30 * n);

    let dir = tempfile::tempdir().unwrap();
    let app = router(open(&config(dir.path(), 8)).unwrap());
    let id = new_session(&app, "quitter", 0).await["id"].as_str().unwrap().to_string();
    for _ in 0..5 {
        rate_next(&app, &id, 0.4).await;
    }
    let (s, v) = call_json(&app, "POST", &format!("/sessions/{id}/withdraw"), None).await;
    assert_eq!((s, v["session"]["status"].as_str()), (StatusCode::OK, Some("withdrawn")));
    assert_eq!(export_rows(&app, "main").await.len(), 6);
    let (s, v) = call_json(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::CONFLICT, Some("inactive")));
    let (s, _) = rate_next(&app, &id, 0.4).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(&app, "POST", &format!("/sessions/{id}/withdraw"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(&app, "GET", "/export/nope.csv", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn images_are_served() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(open(&config(dir.path(), 2)).unwrap());
    let (s, b) = call(&app, "GET", "/images/img01", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b, std::fs::read(dir.path().join("main/img01.png")).unwrap());
    let (s, _) = call(&app, "GET", "/images/missing", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn restart_preserves_acknowledged_ratings() {
    for snapshot_every in [0, 3] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ServiceConfig { snapshot_every, ..config(dir.path(), 6) };
        let (id, before) = {
            let app = router(open(&cfg).unwrap());
            let id = new_session(&app, "erin", 5).await["id"].as_str().unwrap().to_string();
            for k in 0..4 {
                rate_next(&app, &id, 0.2 * k as f64).await;
            }
            (id, export_rows(&app, "main").await)
        };
        assert_eq!(before.len(), 5);
        // Simulate a crash in the middle of an unacknowledged write.
        use std::io::Write;
        let mut log = std::fs::OpenOptions::new().append(true).open(cfg.data_dir.join("events.jsonl")).unwrap();
        log.write_all(b"{\"event\":\"rated\",\"rat").unwrap();
        drop(log);

        let app = router(open(&cfg).unwrap());
        assert_eq!(export_rows(&app, "main").await, before);
        let (_, v) = call_json(&app, "GET", &format!("/sessions/{id}"), None).await;
        assert_eq!(v["session"]["cursor"], 4);
        let (s, v) = rate_next(&app, &id, 0.9).await;
        assert_eq!((s, v["cursor"].as_u64()), (StatusCode::OK, Some(5)));
        let other = new_session(&app, "fay", 5).await;
        assert_ne!(other["id"].as_str().unwrap(), id);
        drop(app);
        let app = router(open(&cfg).unwrap());
        assert_eq!(export_rows(&app, "main").await.len(), 6);
    }
}
