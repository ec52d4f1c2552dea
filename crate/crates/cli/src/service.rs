//! Read-only HTTP service over loaded artifacts.
//!
//! Every JSON body carries a `provenance` field, the fingerprint of the
//! fitted artifacts, so clients can detect that the server was restarted on
//! different ones. Errors are `{code, message, field, provenance}`.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

use conceptcause::autoencoder::AutoencodedModel;
use conceptcause::bn::{CausalBayesNet, EffectVariant, Evidence, PREDICTION};
use conceptcause::concepts::{ConceptId, DiscretizationSpec};
use conceptcause::explain::{self, EncodedCorpus};
use conceptcause::pipeline::{map_rows, neighbor_report, Pipeline};
use conceptcause::target::argmax;
use conceptcause::{Error, Tensor};

struct Instance {
    id: usize,
    label: usize,
    image: Tensor,
}

/// Artifacts loaded once at startup and shared immutably by all requests.
pub struct ServiceState {
    provenance: String,
    seed: u64,
    default_variant: EffectVariant,
    default_neighbors: usize,
    model: AutoencodedModel,
    spec: DiscretizationSpec,
    bn: CausalBayesNet,
    instances: Vec<Instance>,
    corpus: EncodedCorpus,
}

impl ServiceState {
    /// Loads every fitted artifact and encodes the held-out instances.
    pub fn load(pipeline: &Pipeline) -> Result<Self, Error> {
        let provenance = pipeline.fingerprint()?;
        let model = pipeline.load_model()?;
        let spec = pipeline.load_spec()?;
        let bn = pipeline.load_bn()?;
        let ds = pipeline.load_dataset()?;
        let instances: Vec<Instance> = ds
            .test_instances()
            .map(|i| Instance {
                id: i.id,
                label: i.label,
                image: i.image.clone(),
            })
            .collect();
        let corpus = EncodedCorpus::encode(&model, instances.iter().map(|i| (i.id, &i.image)))?;
        Ok(Self {
            provenance,
            seed: pipeline.config.seed,
            default_variant: pipeline.config.explain.variant,
            default_neighbors: pipeline.config.explain.neighbors,
            model,
            spec,
            bn,
            instances,
            corpus,
        })
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    fn position(&self, id: usize) -> Option<usize> {
        self.instances.iter().position(|i| i.id == id)
    }

    fn respond(&self, mut body: Value) -> Response {
        body["provenance"] = Value::String(self.provenance.clone());
        Json(body).into_response()
    }

    fn error(&self, status: StatusCode, message: impl Into<String>, field: Option<&str>) -> Response {
        let code = match status {
            StatusCode::NOT_FOUND => "not_found",
            StatusCode::BAD_REQUEST => "bad_request",
            _ => "internal",
        };
        let body = json!({
            "code": code,
            "message": message.into(),
            "field": field,
            "provenance": self.provenance,
        });
        (status, Json(body)).into_response()
    }

    fn internal(&self, e: Error) -> Response {
        log::error!("{e}");
        self.error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None)
    }

    /// Bins of the instance's concepts plus its prediction.
    fn evidence(&self, index: usize) -> Result<(Evidence, usize), Error> {
        let pooled = self.corpus.pooled(index);
        let predicted = argmax(&self.corpus.outputs[index]);
        let mut z = explain::instance_evidence(&self.bn, &self.spec, &pooled)?;
        z.insert(self.bn.index_of(PREDICTION)?, predicted);
        Ok((z, predicted))
    }
}

type Shared = Arc<ServiceState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/instances", get(instances))
        .route("/instances/{id}/concepts", get(concepts))
        .route("/rank", get(rank))
        .route("/query", post(query))
        .route("/nn", get(nn))
        .with_state(state)
}

async fn health(State(s): State<Shared>) -> Response {
    s.respond(json!({ "status": "ok" }))
}

async fn instances(State(s): State<Shared>) -> Response {
    let list: Vec<Value> = s
        .instances
        .iter()
        .zip(&s.corpus.outputs)
        .map(|(i, out)| {
            json!({
                "id": i.id,
                "label": i.label,
                "predicted": argmax(out),
                "distribution": out,
            })
        })
        .collect();
    s.respond(json!({ "instances": list }))
}

fn parse_id(s: &ServiceState, raw: &str, field: &str) -> Result<usize, Response> {
    let id: usize = raw
        .parse()
        .map_err(|_| s.error(StatusCode::BAD_REQUEST, format!("`{raw}` is not an instance id"), Some(field)))?;
    s.position(id)
        .ok_or_else(|| s.error(StatusCode::NOT_FOUND, format!("no instance {id}"), Some(field)))
}

async fn concepts(State(s): State<Shared>, Path(raw): Path<String>) -> Response {
    let index = match parse_id(&s, &raw, "id") {
        Ok(i) => i,
        Err(r) => return r,
    };
    let inst = &s.instances[index];
    let pooled = s.corpus.pooled(index);
    let mut list = Vec::with_capacity(s.spec.active.len());
    for (i, c) in s.spec.active.iter().enumerate() {
        let value = pooled[c.level][c.channel];
        let bin = match s.spec.bin_of(i, value) {
            Ok(b) => b,
            Err(e) => return s.internal(e),
        };
        let width = s.corpus.codes[index][c.level].shape()[2];
        list.push(json!({
            "name": c.name(),
            "level": c.level,
            "channel": c.channel,
            "pooled": value,
            "bin": bin,
            "map": map_rows(s.corpus.map(index, *c), width),
        }));
    }
    let width = inst.image.shape()[2];
    s.respond(json!({
        "id": inst.id,
        "label": inst.label,
        "predicted": argmax(&s.corpus.outputs[index]),
        "image": map_rows(inst.image.data(), width),
        "concepts": list,
    }))
}

fn parse_variant(s: &ServiceState, params: &HashMap<String, String>) -> Result<EffectVariant, Response> {
    match params.get("variant") {
        None => Ok(s.default_variant),
        Some(v) => v
            .parse()
            .map_err(|e: Error| s.error(StatusCode::BAD_REQUEST, e.to_string(), Some("variant"))),
    }
}

async fn rank(State(s): State<Shared>, Query(params): Query<HashMap<String, String>>) -> Response {
    let variant = match parse_variant(&s, &params) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let state = s.clone();
    let result = tokio::task::spawn_blocking(move || explain::rank_concepts(&state.bn, &Evidence::new(), variant, state.seed)).await;
    match result {
        Ok(Ok(report)) => s.respond(json!({ "text": report.to_text(), "report": report })),
        Ok(Err(e)) => s.internal(e),
        Err(e) => s.error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
    }
}

/// A validated `POST /query` body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRequest {
    pub instance_id: usize,
    pub interventions: Vec<ConceptId>,
    pub target: Option<usize>,
}

/// Field-level validation of a query body; errors carry the offending field.
pub fn parse_query(body: &[u8], model: &AutoencodedModel) -> Result<QueryRequest, (String, String)> {
    let bad = |field: &str, msg: String| (field.to_string(), msg);
    let v: Value = serde_json::from_slice(body).map_err(|e| bad("body", format!("invalid JSON: {e}")))?;
    let obj = v.as_object().ok_or_else(|| bad("body", "expected a JSON object".into()))?;
    if let Some(k) = obj.keys().find(|k| !["instance_id", "interventions", "target"].contains(&k.as_str())) {
        return Err(bad(k, format!("unknown field `{k}`")));
    }
    let instance_id = obj
        .get("instance_id")
        .and_then(Value::as_u64)
        .ok_or_else(|| bad("instance_id", "required nonnegative integer".into()))? as usize;
    let mut interventions = Vec::new();
    match obj.get("interventions") {
        None | Some(Value::Null) => {}
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                let field = format!("interventions[{i}]");
                let pair = match item {
                    Value::Array(p) if p.len() == 2 => (p[0].as_u64(), p[1].as_u64()),
                    Value::Object(o) => (
                        o.get("level").and_then(Value::as_u64),
                        o.get("channel").and_then(Value::as_u64),
                    ),
                    _ => (None, None),
                };
                let (Some(level), Some(channel)) = pair else {
                    return Err(bad(&field, "expected [level, channel]".into()));
                };
                let (level, channel) = (level as usize, channel as usize);
                let channels = model.stack.get(level).map(|ae| ae.code_channels());
                match channels {
                    None => return Err(bad(&field, format!("level {level} out of range (levels: {})", model.levels()))),
                    Some(n) if channel >= n => {
                        return Err(bad(&field, format!("channel {channel} out of range (channels: {n})")))
                    }
                    _ => interventions.push(ConceptId::new(level, channel)),
                }
            }
        }
        Some(_) => return Err(bad("interventions", "expected an array".into())),
    }
    let classes = model.net.class_count();
    let target = match obj.get("target") {
        None | Some(Value::Null) => None,
        Some(t) => match t.as_u64() {
            Some(t) if (t as usize) < classes => Some(t as usize),
            _ => return Err(bad("target", format!("expected a class index below {classes}"))),
        },
    };
    Ok(QueryRequest {
        instance_id,
        interventions,
        target,
    })
}

async fn query(State(s): State<Shared>, body: Bytes) -> Response {
    let req = match parse_query(&body, &s.model) {
        Ok(r) => r,
        Err((field, msg)) => return s.error(StatusCode::BAD_REQUEST, msg, Some(&field)),
    };
    let Some(index) = s.position(req.instance_id) else {
        return s.error(StatusCode::NOT_FOUND, format!("no instance {}", req.instance_id), Some("instance_id"));
    };
    let state = s.clone();
    let result = tokio::task::spawn_blocking(move || -> Result<Value, Error> {
        let inst = &state.instances[index];
        let shift = explain::what_if(&state.model, &state.spec, &state.bn, &inst.image, &req.interventions)?;
        let (z, predicted) = state.evidence(index)?;
        let target = req.target.unwrap_or(predicted);
        let effects = explain::instance_top_effects(&state.bn, &z, target, usize::MAX)?;
        Ok(json!({
            "instance_id": inst.id,
            "predicted": predicted,
            "target": target,
            "interventions": req.interventions.iter().map(|c| [c.level, c.channel]).collect::<Vec<_>>(),
            "bn": shift.bn,
            "network": shift.network,
            "forced": shift.forced,
            "not_in_bn": shift.not_in_bn,
            "effects": effects,
        }))
    })
    .await;
    match result {
        Ok(Ok(body)) => s.respond(body),
        Ok(Err(e)) => s.internal(e),
        Err(e) => s.error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
    }
}

fn required(s: &ServiceState, params: &HashMap<String, String>, field: &str) -> Result<usize, Response> {
    let raw = params
        .get(field)
        .ok_or_else(|| s.error(StatusCode::BAD_REQUEST, format!("missing `{field}`"), Some(field)))?;
    raw.parse()
        .map_err(|_| s.error(StatusCode::BAD_REQUEST, format!("`{raw}` is not a nonnegative integer"), Some(field)))
}

async fn nn(State(s): State<Shared>, Query(params): Query<HashMap<String, String>>) -> Response {
    let parsed = (|| {
        let level = required(&s, &params, "level")?;
        let channel = required(&s, &params, "channel")?;
        let index = parse_id(&s, params.get("id").map_or("", String::as_str), "id")?;
        let k = match params.get("k") {
            None => s.default_neighbors.min(s.instances.len() - 1),
            Some(_) => required(&s, &params, "k")?,
        };
        Ok::<_, Response>((ConceptId::new(level, channel), index, k))
    })();
    let (concept, index, k) = match parsed {
        Ok(p) => p,
        Err(r) => return r,
    };
    if s.spec.position(concept).is_none() {
        return s.error(StatusCode::BAD_REQUEST, format!("concept {} was pruned", concept.name()), Some("channel"));
    }
    if k >= s.instances.len() {
        return s.error(
            StatusCode::BAD_REQUEST,
            format!("k = {k} exceeds the {} other instances", s.instances.len() - 1),
            Some("k"),
        );
    }
    match neighbor_report(&s.corpus, &s.spec, concept, s.instances[index].id, k) {
        Ok(report) => s.respond(serde_json::to_value(report).expect("report serializes")),
        Err(e) => s.internal(e),
    }
}

/// Loads the artifacts and serves on `127.0.0.1:port` until interrupted.
pub fn serve_blocking(pipeline: Pipeline, port: u16) -> Result<(), Error> {
    let state = Arc::new(ServiceState::load(&pipeline)?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    runtime.block_on(async move {
        let addr = std::net::SocketAddr::from(([127, 0, 0, 1], port));
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::io(format!("{addr}"), e))?;
        eprintln!("serving {} on http://{addr}", state.provenance());
        axum::serve(listener, router(state))
            .await
            .map_err(|e| Error::io(format!("{addr}"), e))
    })
}
