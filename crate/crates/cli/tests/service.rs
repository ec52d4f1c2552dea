mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use conceptcause::pipeline::{Stage, StageArgs};
use conceptcause_cli::service::{router, ServiceState};

fn state() -> Arc<ServiceState> {
    use std::sync::OnceLock;
    static STATE: OnceLock<Arc<ServiceState>> = OnceLock::new();
    STATE
        .get_or_init(|| Arc::new(ServiceState::load(common::fitted()).unwrap()))
        .clone()
}

async fn call(req: Request<Body>) -> (StatusCode, Value) {
    let s = state();
    let resp = router(s.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(body["provenance"], s.provenance(), "response lacks provenance");
    (status, body)
}

async fn get(uri: &str) -> (StatusCode, Value) {
    call(Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(uri: &str, body: &str) -> (StatusCode, Value) {
    call(
        Request::post(uri)
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap(),
    )
    .await
}

fn first_id() -> usize {
    common::fitted().load_dataset().unwrap().test[0]
}

fn active() -> Vec<(usize, usize)> {
    let spec = common::fitted().load_spec().unwrap();
    spec.active.iter().map(|c| (c.level, c.channel)).collect()
}

#[tokio::test]
async fn health_and_instances() {
    let (status, body) = get("/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["provenance"].as_str().unwrap().len(), 64);

    let (status, body) = get("/instances").await;
    assert_eq!(status, StatusCode::OK);
    let list = body["instances"].as_array().unwrap();
    let ds = common::fitted().load_dataset().unwrap();
    assert_eq!(list.len(), ds.test.len());
    for item in list {
        let p: f64 = item["distribution"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((p - 1.0).abs() < 1e-9);
        assert!(item["predicted"].as_u64().unwrap() < 2);
    }
}

#[tokio::test]
async fn instance_concepts_follow_active_set() {
    let id = first_id();
    let (status, body) = get(&format!("/instances/{id}/concepts")).await;
    assert_eq!(status, StatusCode::OK);
    let concepts = body["concepts"].as_array().unwrap();
    let names: Vec<String> = concepts.iter().map(|c| c["name"].as_str().unwrap().to_string()).collect();
    let expected: Vec<String> = active().iter().map(|(l, c)| format!("level{l}_feat{c}")).collect();
    assert_eq!(names, expected);
    let levels: Vec<u64> = concepts.iter().map(|c| c["level"].as_u64().unwrap()).collect();
    assert!(levels.windows(2).all(|w| w[0] <= w[1]));
    for c in concepts {
        let map = c["map"].as_array().unwrap();
        assert!(!map.is_empty() && map.iter().all(|r| r.as_array().unwrap().len() == map[0].as_array().unwrap().len()));
        let mean: f64 = map.iter().flat_map(|r| r.as_array().unwrap()).map(|x| x.as_f64().unwrap()).sum::<f64>()
            / (map.len() * map[0].as_array().unwrap().len()) as f64;
        assert!((mean - c["pooled"].as_f64().unwrap()).abs() < 1e-9);
        assert!(c["bin"].as_u64().unwrap() < 2);
    }
    assert_eq!(body["image"].as_array().unwrap().len(), 32);

    let (status, body) = get("/instances/999999/concepts").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
    assert_eq!(body["field"], "id");
    let (status, body) = get("/instances/abc/concepts").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "id");
}

#[tokio::test]
async fn rank_matches_cli_artifact() {
    let p = common::fitted();
    let (status, body) = get("/rank").await;
    assert_eq!(status, StatusCode::OK);
    let file: Value = serde_json::from_slice(&std::fs::read(p.artifacts.rank_json()).unwrap()).unwrap();
    assert_eq!(body["report"]["rows"], file["rows"]);
    assert_eq!(body["text"].as_str().unwrap(), std::fs::read_to_string(p.artifacts.rank_text()).unwrap());

    for variant in ["signed", "max"] {
        let (status, body) = get(&format!("/rank?variant={variant}")).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["report"]["variant"], variant);
    }
    let (status, body) = get("/rank?variant=median").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "variant");
}

#[tokio::test]
async fn rank_stage_output_is_rerun_stable() {
    let p = common::fitted();
    let before = std::fs::read(p.artifacts.rank_text()).unwrap();
    p.run_stage(Stage::Rank, &StageArgs::default()).unwrap();
    assert_eq!(before, std::fs::read(p.artifacts.rank_text()).unwrap());
}

fn dist(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[tokio::test]
async fn empty_query_leaves_outputs_unchanged() {
    let id = first_id();
    let (status, body) = post("/query", &json!({ "instance_id": id, "interventions": [] }).to_string()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(dist(&body["bn"]["pre"]), dist(&body["bn"]["post"]));
    assert_eq!(dist(&body["network"]["pre"]), dist(&body["network"]["post"]));
    assert_eq!(body["target"], body["predicted"]);
    assert_eq!(body["effects"]["rows"].as_array().unwrap().len(), active().len());
}

#[tokio::test]
async fn query_zeroes_channels_in_both_views() {
    let id = first_id();
    let (l, c) = active()[0];
    let req = json!({ "instance_id": id, "interventions": [[l, c], { "level": 0, "channel": 7 }], "target": 1 });
    let (status, body) = post("/query", &req.to_string()).await;
    assert_eq!(status, StatusCode::OK);
    for view in ["bn", "network"] {
        for side in ["pre", "post"] {
            let d = dist(&body[view][side]);
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    let name = format!("level{l}_feat{c}");
    assert!(body["forced"][&name].is_u64());
    assert_eq!(body["target"], 1);
    let in_bn = active().contains(&(0, 7));
    assert_eq!(body["not_in_bn"].as_array().unwrap().is_empty(), in_bn);
}

#[tokio::test]
async fn malformed_queries_name_the_field() {
    let cases = [
        ("{not json", "body"),
        ("[1, 2]", "body"),
        (r#"{"interventions": []}"#, "instance_id"),
        (r#"{"instance_id": -3}"#, "instance_id"),
        (r#"{"instance_id": 0, "interventions": [[0]]}"#, "interventions[0]"),
        (r#"{"instance_id": 0, "interventions": [[0, 0], [9, 0]]}"#, "interventions[1]"),
        (r#"{"instance_id": 0, "interventions": [[0, 99]]}"#, "interventions[0]"),
        (r#"{"instance_id": 0, "interventions": 5}"#, "interventions"),
        (r#"{"instance_id": 0, "target": 2}"#, "target"),
        (r#"{"instance_id": 0, "extra": 1}"#, "extra"),
    ];
    for (body, field) in cases {
        let (status, resp) = post("/query", body).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(resp["field"], field, "{body}");
        assert_eq!(resp["code"], "bad_request");
        assert!(!resp["message"].as_str().unwrap().is_empty());
    }
    let (status, resp) = post("/query", r#"{"instance_id": 123456}"#).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(resp["field"], "instance_id");
}

#[tokio::test]
async fn nearest_neighbours_endpoint() {
    let id = first_id();
    let (l, c) = active()[0];
    let (status, body) = get(&format!("/nn?level={l}&channel={c}&id={id}&k=5")).await;
    assert_eq!(status, StatusCode::OK);
    let list = body["neighbors"].as_array().unwrap();
    assert_eq!(list.len(), 6);
    assert_eq!(list[0]["id"], id);
    assert_eq!(list[0]["distance"], 0.0);
    let d: Vec<f64> = list[1..].iter().map(|n| n["distance"].as_f64().unwrap()).collect();
    assert!(d.windows(2).all(|w| w[0] <= w[1]));
    assert!(list[0]["map"].as_array().unwrap()[0].is_array());

    let (status, body) = get(&format!("/nn?level={l}&channel={c}&id={id}&k=0")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["neighbors"].as_array().unwrap().len(), 1);

    let pruned = (0..8).find(|ch| !active().contains(&(0, *ch)));
    if let Some(ch) = pruned {
        let (status, body) = get(&format!("/nn?level=0&channel={ch}&id={id}")).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(body["field"], "channel");
        assert!(body["message"].as_str().unwrap().contains(&format!("level0_feat{ch}")));
    }
    let (status, body) = get(&format!("/nn?channel={c}&id={id}")).await;
    assert_eq!((status, body["field"].as_str()), (StatusCode::BAD_REQUEST, Some("level")));
    let (status, body) = get(&format!("/nn?level={l}&channel={c}&id=424242")).await;
    assert_eq!((status, body["field"].as_str()), (StatusCode::NOT_FOUND, Some("id")));
    let (status, body) = get(&format!("/nn?level={l}&channel={c}&id={id}&k=1000")).await;
    assert_eq!((status, body["field"].as_str()), (StatusCode::BAD_REQUEST, Some("k")));
}
