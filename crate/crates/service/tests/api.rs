use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pretrial_core::data::Outcome;
use pretrial_core::forest::{ForestConfig, HandoffForest};
use pretrial_core::scenarios::cluster_population;
use pretrial_core::psa::{CaseInput, PsaConfig};
use pretrial_core::tree::{
    Condition, FeatureKindSpec, FeatureSpec, HandoffTree, LeafStats, TreeConfig, TreeNode, TREE_FORMAT,
};
use pretrial_service::{router, AppState, Model, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn leaf(leaf_id: usize, n: usize, k: usize, config: &TreeConfig) -> TreeNode {
    let (label, error_rate) = config.label_for(k, n);
    TreeNode::Leaf(LeafStats { leaf_id, n, k, positive_rate: k as f64 / n as f64, label, error_rate })
}

/// prior_fta <= 3.5 hands off (p = 0.3); above it is HighRisk with FPR 0.6.
fn fixture_tree() -> HandoffTree {
    let config = TreeConfig::new(Outcome::Fta, 200, 0.65, 0.15);
    HandoffTree {
        format: TREE_FORMAT.into(),
        features: vec![FeatureSpec { name: "prior_fta".into(), kind: FeatureKindSpec::Numeric }],
        training_size: 900,
        root: TreeNode::Split {
            feature: "prior_fta".into(),
            condition: Condition::AtMost { threshold: 3.5 },
            n: 900,
            k: 310,
            impurity_decrease: 0.01,
            left: Box::new(leaf(0, 500, 150, &config)),
            right: Box::new(leaf(1, 400, 160, &config)),
        },
        config,
    }
}

fn state(log: &Path, model: Option<Model>) -> AppState {
    AppState::open(ServiceConfig { psa: PsaConfig::default(), model, log_path: log.to_path_buf(), token: None }).unwrap()
}

fn app(log: &Path) -> Router {
    router(state(log, Some(Model::Tree(fixture_tree()))))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn predict(app: &Router, prior: f64) -> Value {
    let (status, body) =
        call(app, "POST", "/predict", Some(json!({ "case_ref": format!("case-{prior}"), "features": { "prior_fta": prior } }).to_string())).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body
}

fn appendix_body() -> Value {
    let case = CaseInput::appendix_sample();
    json!({ "schema": "pretrial-api/v1", "factors": case.factors, "offenses": case.offenses, "metadata": case.metadata })
}

#[tokio::test]
async fn assess_appendix_case() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("log.jsonl"));
    let (status, body) = call(&app, "POST", "/assess", Some(appendix_body().to_string())).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["assessment"]["nvca_flag"], json!(false));
    assert_eq!(body["assessment"]["scaled_fta"], json!(3));
    assert!(body["report"].as_str().unwrap().contains("New Violent Criminal Activity Flag No"));
}

#[tokio::test]
async fn assess_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("log.jsonl"));
    let mut body = appendix_body();
    body["factors"]["prior_conviction"] = json!(!body["factors"]["prior_conviction"].as_bool().unwrap());
    let (status, err) = call(&app, "POST", "/assess", Some(body.to_string())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"]["invariant"], json!("prior_conviction"));
    let (status, _) = call(&app, "POST", "/assess", Some("{not json".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", "/assess", Some(json!({ "factors": 3 }).to_string())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let mut wrong = appendix_body();
    wrong["schema"] = json!("pretrial-api/v0");
    assert_eq!(call(&app, "POST", "/assess", Some(wrong.to_string())).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn predictions_by_label() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("log.jsonl"));
    let high = predict(&app, 5.0).await;
    assert_eq!(high["label"], json!("HighRisk"));
    assert!((high["error_rate"].as_f64().unwrap() - 0.6).abs() < 1e-12);
    assert_eq!(high["support"], json!(400));
    assert_eq!(high["path"], json!(["prior_fta > 3.5"]));
    assert!(high["prediction_id"].as_str().is_some());

    let hand = predict(&app, 1.0).await;
    assert_eq!(hand["label"], json!("Handoff"));
    let fields = hand.as_object().unwrap();
    assert!(!fields.contains_key("error_rate"));
    assert!(!fields.contains_key("positives"));
    assert!(!fields.contains_key("recommendation"));
    assert_eq!(hand["support"], json!(500));
    assert_eq!(hand["path"], json!(["prior_fta <= 3.5"]));
    assert_ne!(hand["prediction_id"], high["prediction_id"]);

    let (status, _) = call(&app, "POST", "/predict", Some(json!({ "features": { "age": 30 } }).to_string())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn no_model_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(&dir.path().join("log.jsonl"), None));
    let (status, body) = call(&app, "POST", "/predict", Some(json!({ "features": { "prior_fta": 1 } }).to_string())).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], json!("no_model"));
    assert_eq!(call(&app, "GET", "/leaves", None).await.0, StatusCode::CONFLICT);
    let (status, body) = call(&app, "GET", "/model", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["loaded"], json!(false));
}

#[tokio::test]
async fn decision_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("log.jsonl"));
    let (status, page) = call(&app, "GET", "/decisions", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!((page["total"].clone(), page["items"].clone()), (json!(0), json!([])));

    let hand = predict(&app, 0.0).await;
    let id = hand["prediction_id"].as_str().unwrap();
    let body = json!({ "prediction_id": id, "decision": "release", "rationale": "stable job, family nearby", "decider": "j-17" });
    let (status, rec) = call(&app, "POST", "/decisions", Some(body.to_string())).await;
    assert_eq!(status, StatusCode::CREATED, "{rec}");
    assert_eq!(rec["decision"], json!("release"));
    assert_eq!(rec["prediction"]["label"], json!("Handoff"));
    assert_eq!(rec["prediction"]["model_version"], hand["model_version"]);

    let (_, page) = call(&app, "GET", "/decisions", None).await;
    assert_eq!(page["total"], json!(1));
    assert_eq!(page["items"][0]["decision_id"], rec["decision_id"]);

    let again = call(&app, "POST", "/decisions", Some(body.to_string())).await;
    assert_eq!(again.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn decision_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("log.jsonl"));
    let id = predict(&app, 0.0).await["prediction_id"].as_str().unwrap().to_string();
    let unknown = json!({ "prediction_id": uuid::Uuid::nil(), "decision": "release" });
    assert_eq!(call(&app, "POST", "/decisions", Some(unknown.to_string())).await.0, StatusCode::NOT_FOUND);
    for bad in [
        json!({ "prediction_id": id }),
        json!({ "prediction_id": id, "decision": "maybe" }),
        json!({ "prediction_id": id, "decision": "detain", "rationale": "  " }),
        json!({ "decision": "release" }),
        json!({ "prediction_id": "nope", "decision": "release" }),
    ] {
        assert_eq!(call(&app, "POST", "/decisions", Some(bad.to_string())).await.0, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
    }
    assert_eq!(call(&app, "POST", "/decisions", Some("[".into())).await.0, StatusCode::BAD_REQUEST);
    let (_, page) = call(&app, "GET", "/decisions", None).await;
    assert_eq!(page["total"], json!(0));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_decisions_are_all_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let app = app(&log);
    let mut ids = Vec::new();
    for i in 0..8 {
        ids.push(predict(&app, (i % 6) as f64).await["prediction_id"].as_str().unwrap().to_string());
    }
    let tasks: Vec<_> = ids
        .iter()
        .map(|id| {
            let app = app.clone();
            let body = json!({ "prediction_id": id, "decision": "release_with_conditions", "rationale": "check-ins" });
            tokio::spawn(async move { call(&app, "POST", "/decisions", Some(body.to_string())).await })
        })
        .collect();
    let mut decision_ids = std::collections::HashSet::new();
    for t in tasks {
        let (status, rec) = t.await.unwrap();
        assert_eq!(status, StatusCode::CREATED);
        decision_ids.insert(rec["decision_id"].as_str().unwrap().to_string());
    }
    assert_eq!(decision_ids.len(), 8);
    let text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("\"kind\":\"decision\"")).count(), 8);
    assert!(text.lines().all(|l| l.starts_with("{\"schema\":\"decision-log/v1\"")));
}

#[tokio::test]
async fn replay_and_restart() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let first = app(&log);
    let a = predict(&first, 0.0).await["prediction_id"].as_str().unwrap().to_string();
    let b = predict(&first, 5.0).await["prediction_id"].as_str().unwrap().to_string();
    let body = json!({ "prediction_id": a, "decision": "detain", "rationale": "prior warrant" });
    assert_eq!(call(&first, "POST", "/decisions", Some(body.to_string())).await.0, StatusCode::CREATED);
    let (_, before) = call(&first, "GET", "/decisions", None).await;
    drop(first);

    // A torn final write is cut off on restart.
    let mut text = std::fs::read_to_string(&log).unwrap();
    text.push_str("{\"schema\":\"decision-log/v1\",\"kind\":\"deci");
    std::fs::write(&log, text).unwrap();

    let second = app(&log);
    let (_, after) = call(&second, "GET", "/decisions", None).await;
    assert_eq!(before, after);
    let body = json!({ "prediction_id": b, "decision": "release" });
    assert_eq!(call(&second, "POST", "/decisions", Some(body.to_string())).await.0, StatusCode::CREATED);
    let (_, page) = call(&second, "GET", "/decisions?offset=1&limit=1", None).await;
    assert_eq!((page["total"].clone(), page["items"].as_array().unwrap().len()), (json!(2), 1));
    assert_eq!(page["items"][0]["prediction_id"], json!(b));
    assert_eq!(call(&second, "GET", "/decisions?limit=0", None).await.0, StatusCode::BAD_REQUEST);

    // Two predictions and two decisions; the torn line is gone.
    let lines = std::fs::read_to_string(&log).unwrap().lines().count();
    assert_eq!(lines, 4);
}

#[tokio::test]
async fn corrupt_log_refuses_to_start() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    std::fs::write(&log, "{\"schema\":\"decision-log/v1\",\"kind\":\"bogus\"}\n").unwrap();
    let r = AppState::open(ServiceConfig { psa: PsaConfig::default(), model: None, log_path: log, token: None });
    assert!(r.is_err());
}

#[tokio::test]
async fn model_and_leaves() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("log.jsonl"));
    let (_, model) = call(&app, "GET", "/model", None).await;
    assert_eq!(model["model"]["kind"], json!("tree"));
    assert_eq!(model["model"]["version"].as_str().unwrap().len(), 16);
    assert_eq!(model["model"]["config"]["min_cluster_size"], json!(200));
    let (status, leaves) = call(&app, "GET", "/leaves", None).await;
    assert_eq!(status, StatusCode::OK);
    let rows = leaves["leaves"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let total: u64 = rows.iter().map(|r| r["n"].as_u64().unwrap()).sum();
    assert_eq!(total, leaves["training_size"].as_u64().unwrap());
}

#[tokio::test]
async fn static_token() {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::open(ServiceConfig {
        psa: PsaConfig::default(),
        model: None,
        log_path: dir.path().join("log.jsonl"),
        token: Some("s3cret".into()),
    })
    .unwrap();
    let app = router(state);
    assert_eq!(call(&app, "GET", "/model", None).await.0, StatusCode::UNAUTHORIZED);
    let req = Request::get("/model").header("authorization", "Bearer s3cret").body(Body::empty()).unwrap();
    assert_eq!(app.oneshot(req).await.unwrap().status(), StatusCode::OK);
}

#[tokio::test]
async fn forest_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let recs = cluster_population(3000, 5);
    let forest = HandoffForest::fit(&recs, &ForestConfig::new(5, TreeConfig::new(Outcome::Fta, 100, 0.65, 0.2), 9)).unwrap();
    let app = router(state(&dir.path().join("log.jsonl"), Some(Model::Forest(forest))));
    let (status, p) =
        call(&app, "POST", "/predict", Some(json!({ "features": { "age": 40, "prior_fta": 5 } }).to_string())).await;
    assert_eq!(status, StatusCode::OK, "{p}");
    assert_eq!(p["model_kind"], json!("forest"));
    assert_eq!(p["path"].as_array().unwrap().len(), 5);
    assert!(p["disagreement"].as_f64().is_some());
    assert_eq!(p.get("error_rate").is_some(), p["label"] != json!("Handoff"));
    let (_, leaves) = call(&app, "GET", "/leaves", None).await;
    assert_eq!(leaves["kind"], json!("forest"));
    assert_eq!(leaves["trees"].as_array().unwrap().len(), 5);
}
