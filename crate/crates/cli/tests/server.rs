use std::sync::OnceLock;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use serde_json::Value;
use tower::ServiceExt;

use semode_cli::server::{router, Session, MAX_POINTS};
use semode_core::datasets::generate;
use semode_core::{fit_model, Dataset, GenConfig, LibraryFilter, ModelConfig, SemanticModel, System};

fn pk_data() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| {
        let cfg = GenConfig { samples: Some(40), noise: 0.01, ..GenConfig::default() };
        generate(System::Pharmacokinetic, &cfg).unwrap()
    })
}

fn pk_model() -> &'static SemanticModel {
    static MODEL: OnceLock<SemanticModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let cfg = ModelConfig {
            max_motifs: 4,
            library_filter: LibraryFilter { last: Some("-+h".parse().unwrap()), ..LibraryFilter::default() },
            ..ModelConfig::default()
        };
        fit_model(&pk_data().samples, &cfg).unwrap().model
    })
}

fn app(model: bool, data: bool) -> Router {
    let session = Session::new(
        model.then(|| pk_model().clone()),
        data.then(|| pk_data().clone()),
        None,
    );
    router(session, None)
}

async fn call(app: &Router, method: Method, uri: &str, body: &str) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = to_bytes(res.into_body(), usize::MAX).await.unwrap();
    let json = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, json)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, "").await
}

#[tokio::test(flavor = "multi_thread")]
async fn empty_session_reports_not_found() {
    let app = app(false, false);
    for uri in ["/api/model", "/api/semantics?x0=1", "/api/dataset/summary", "/api/nope"] {
        let (status, body) = get(&app, uri).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert!(body["error"].is_string(), "{uri}: {body}");
    }
    let (status, _) = call(&app, Method::POST, "/api/revert", "").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn queries_validate_their_parameters() {
    let app = app(true, true);
    let (status, body) = get(&app, "/api/semantics").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "x0");
    let (status, body) = get(&app, "/api/semantics?x0=abc").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "x0");
    let (status, body) = get(&app, "/api/predict?x0=0.5&points=1").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "points");
    let (status, body) = get(&app, "/api/predict?x0=0.5&mode=c3").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "mode");
}

#[tokio::test(flavor = "multi_thread")]
async fn model_and_prediction_views() {
    let app = app(true, true);
    let (status, body) = get(&app, "/api/model").await;
    assert_eq!(status, StatusCode::OK);
    let n = body["compositions"].as_array().unwrap().len();
    assert!(n >= 1);
    assert_eq!(body["boundaries"].as_array().unwrap().len(), n - 1);
    assert_eq!(body["history"], 1);
    assert!(body["model"]["composition_map"].is_object() || body["model"]["composition_map"].is_array());

    let (status, body) = get(&app, "/api/dataset/summary").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["samples"], 40);

    let (status, body) = get(&app, "/api/predict?x0=0.5&points=100000").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["values"].as_array().unwrap().len(), MAX_POINTS);
    assert!(body["values"].as_array().unwrap().iter().all(|v| v.as_f64().unwrap().is_finite()));

    let sample = &pk_data().samples[3];
    let (status, body) = get(&app, &format!("/api/predict?x0={}&points=50&mode=c0", sample.x0)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["data"]["sample_id"], sample.id);
    let rmse = body["data"]["rmse"].as_f64().unwrap();
    assert!(rmse < 0.1, "training sample rmse {rmse}");
}

#[tokio::test(flavor = "multi_thread")]
async fn edit_job_lifecycle_and_revert() {
    let app = app(true, true);
    let (status, body) = call(&app, Method::POST, "/api/edit", "{\"edits\": 3}").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "edits");

    let (status, _) = call(&app, Method::POST, "/api/revert", "").await;
    assert_eq!(status, StatusCode::CONFLICT);

    let pin = r#"{"edits": [{"op": "pin_property", "property": "h", "value": 0.0}]}"#;
    let (status, _) = call(&app, Method::POST, "/api/edit", pin).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let (status, _) = call(&app, Method::POST, "/api/edit", pin).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let report = loop {
        let (status, body) = get(&app, "/api/job").await;
        assert_eq!(status, StatusCode::OK);
        match body["state"].as_str().unwrap() {
            "running" => tokio::time::sleep(Duration::from_millis(100)).await,
            "done" => break body["report"].clone(),
            other => panic!("job ended in state {other}: {body}"),
        }
    };
    assert!(report["fit_rmse_old"].as_f64().unwrap().is_finite());
    assert!(report["fit_rmse_new"].as_f64().unwrap().is_finite());

    let (_, body) = get(&app, "/api/model").await;
    assert_eq!(body["history"], 2);
    let (lo, hi) = pk_data().x0_range().unwrap();
    for k in 0..11 {
        let x0 = lo + (hi - lo) * k as f64 / 10.0;
        let (status, rep) = get(&app, &format!("/api/semantics?x0={x0}")).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(rep["properties"]["h"].as_f64(), Some(0.0), "x0 = {x0}: {rep}");
    }

    let (status, body) = call(&app, Method::POST, "/api/revert", "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["history"], 1);
    let (status, _) = call(&app, Method::POST, "/api/revert", "").await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn editing_needs_a_dataset() {
    let app = app(true, false);
    let pin = r#"{"edits": [{"op": "pin_property", "property": "h", "value": 0.0}]}"#;
    let (status, _) = call(&app, Method::POST, "/api/edit", pin).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}
