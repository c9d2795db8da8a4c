use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use base64::Engine;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use fastwalk::service::{router, router_with_state, unrle, AppState, SeedsResponse};

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
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
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

fn create_body() -> Value {
    json!({
        "phantom": { "kind": "blobs2d", "dims": [16, 16], "seed": 5, "noise": 0.02 },
        "precompute": { "betas": [50.0], "m": 40 },
        "k": 2
    })
}

fn seeds() -> Value {
    json!({ "seeds": [
        { "index": 0, "label": 0 }, { "index": 15, "label": 0 },
        { "index": 136, "label": 1 }, { "index": 119, "label": 1 }
    ] })
}

async fn create(app: &Router) -> u64 {
    let (status, body) = call(app, Method::POST, "/sessions", Some(create_body())).await;
    assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&body));
    let v = json_of(&body);
    assert_eq!(v["dims"], json!([16, 16]));
    assert_eq!(v["betas"], json!([50.0]));
    v["id"].as_u64().unwrap()
}

#[tokio::test]
async fn seeds_return_labels_and_uncertainty() {
    let app = router();
    let id = create(&app).await;
    let (status, body) = call(&app, Method::POST, &format!("/sessions/{id}/seeds"), Some(seeds())).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let r: SeedsResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(r.dims, vec![16, 16]);
    assert_eq!(r.k, 2);
    assert!(r.online_ms > 0.0);
    assert!(!r.refreshed);
    let labels = unrle(&r.labels_rle);
    assert_eq!(labels.len(), 256);
    assert_eq!(labels[0], 0);
    assert_eq!(labels[136], 1);
    let unc = base64::engine::general_purpose::STANDARD.decode(&r.uncertainty).unwrap();
    assert_eq!(unc.len(), 256);
    // Seeds are certain.
    assert_eq!(unc[0], 0);
    assert!(r.adaptive_converged.is_some());
}

#[tokio::test]
async fn bare_seed_lists_are_accepted() {
    let app = router();
    let id = create(&app).await;
    let bare = seeds()["seeds"].clone();
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/seeds"), Some(bare)).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn beta_change_refreshes_the_nearest_pack() {
    let app = router();
    let id = create(&app).await;
    let (status, body) = call(&app, Method::PUT, &format!("/sessions/{id}/params"), Some(json!({ "beta": 70.0 }))).await;
    assert_eq!(status, StatusCode::OK);
    let v = json_of(&body);
    assert_eq!(v["refreshed"], true);
    assert_eq!(v["base_beta"], 50.0);
    let (status, body) = call(&app, Method::POST, &format!("/sessions/{id}/seeds"), Some(seeds())).await;
    assert_eq!(status, StatusCode::OK);
    let r: SeedsResponse = serde_json::from_slice(&body).unwrap();
    assert!(r.refreshed);
    assert_eq!(r.base_beta, 50.0);
    assert_eq!(r.beta, 70.0);
}

#[tokio::test]
async fn repeated_payloads_give_identical_labels() {
    let app = router();
    let id = create(&app).await;
    let uri = format!("/sessions/{id}/seeds");
    let (_, a) = call(&app, Method::POST, &uri, Some(seeds())).await;
    let (_, b) = call(&app, Method::POST, &uri, Some(seeds())).await;
    let (a, b): (SeedsResponse, SeedsResponse) = (serde_json::from_slice(&a).unwrap(), serde_json::from_slice(&b).unwrap());
    assert_eq!(a.labels_rle, b.labels_rle);
    assert_eq!(a.uncertainty, b.uncertainty);
    assert_eq!(a.m_use, b.m_use);

    let (status, _) = call(&app, Method::PUT, &format!("/sessions/{id}/params"), Some(json!({ "gamma": 0.0 }))).await;
    assert_eq!(status, StatusCode::OK);
    let (_, c) = call(&app, Method::POST, &uri, Some(seeds())).await;
    assert_eq!(serde_json::from_slice::<SeedsResponse>(&c).unwrap().labels_rle, a.labels_rle);
}

#[tokio::test]
async fn unknown_sessions_are_404() {
    let app = router();
    let (status, body) = call(&app, Method::POST, "/sessions/99/seeds", Some(seeds())).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(json_of(&body)["error"].as_str().unwrap().contains("99"));
    let (status, _) = call(&app, Method::DELETE, "/sessions/99", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn invalid_requests_are_422() {
    let app = router();
    let (status, _) =
        call(&app, Method::POST, "/sessions", Some(json!({ "phantom": { "kind": "teapot", "dims": [8, 8] } }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, Method::POST, "/sessions", Some(json!({ "phantom": { "kind": "blobs2d", "dims": [8, 8] } })))
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let id = create(&app).await;
    let out_of_range = json!({ "seeds": [{ "index": 9999, "label": 0 }, { "index": 1, "label": 1 }] });
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/seeds"), Some(out_of_range)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, Method::PUT, &format!("/sessions/{id}/params"), Some(json!({ "gamma": -1.0 }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, Method::PUT, &format!("/sessions/{id}/params"), Some(json!({ "beta": -3.0 }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn slices_are_png_and_sessions_can_be_deleted() {
    let app = router();
    let id = create(&app).await;
    let (status, body) = call(&app, Method::GET, &format!("/sessions/{id}/slice"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&body[1..4], b"PNG");
    let (status, _) = call(&app, Method::GET, &format!("/sessions/{id}/slice?axis=0&index=40"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, Method::DELETE, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call(&app, Method::GET, &format!("/sessions/{id}/slice"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_solves_on_one_session_conflict() {
    let state = Arc::new(AppState::default());
    let app = router_with_state(state);
    // A larger session so one solve is still running when the second arrives.
    let body = json!({
        "phantom": { "kind": "blobs2d", "dims": [48, 48], "seed": 2, "noise": 0.05 },
        "precompute": { "betas": [50.0], "m": 200 },
        "k": 2
    });
    let (status, created) = call(&app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = json_of(&created)["id"].as_u64().unwrap();
    let (status, _) = call(&app, Method::PUT, &format!("/sessions/{id}/params"), Some(json!({ "m_use": 200 }))).await;
    assert_eq!(status, StatusCode::OK);
    let uri = format!("/sessions/{id}/seeds");
    let payload = json!({ "seeds": [{ "index": 0, "label": 0 }, { "index": 2303, "label": 1 }] });
    let mut saw_conflict = false;
    for _ in 0..20 {
        let (a, b) = tokio::join!(
            call(&app, Method::POST, &uri, Some(payload.clone())),
            call(&app, Method::POST, &uri, Some(payload.clone()))
        );
        let codes = [a.0, b.0];
        assert!(codes.contains(&StatusCode::OK), "{codes:?}");
        assert!(codes.iter().all(|c| *c == StatusCode::OK || *c == StatusCode::CONFLICT), "{codes:?}");
        if codes.contains(&StatusCode::CONFLICT) {
            saw_conflict = true;
            break;
        }
    }
    assert!(saw_conflict);
    // The guard is released afterwards.
    let (status, _) = call(&app, Method::POST, &uri, Some(payload)).await;
    assert_eq!(status, StatusCode::OK);
}
