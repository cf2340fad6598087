//! HTTP service: catalog lookup, asynchronous optimization jobs and the
//! append-only feedback log.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ecobasket::methods::{recommend, Method, MethodConfigs, Recommendation};
use ecobasket::{Basket, Catalog, Feature, NUM_OBJECTIVES};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::commands::{method_configs, validate_weights};
use crate::config::Config;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeRequest {
    pub basket: BTreeMap<String, u32>,
    pub method: Option<Method>,
    pub weights: Option<Vec<f64>>,
    pub seed: Option<u64>,
    /// Generation budget override.
    pub budget: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Running,
    Completed,
    Failed,
}

/// A recommendation on the wire, keyed by product id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireRecommendation {
    /// Non-zero quantities only.
    pub basket: BTreeMap<String, u32>,
    /// Taste, cost, three health and six environmental losses, in that order.
    pub objectives: [f64; NUM_OBJECTIVES],
    pub ratios: BTreeMap<String, f64>,
    pub cosine: f64,
    pub passed_filter: bool,
}

impl WireRecommendation {
    fn new(catalog: &Catalog, r: &Recommendation) -> Self {
        Self {
            basket: r.basket.to_pairs(catalog).into_iter().map(|(id, q)| (id.to_string(), q)).collect(),
            objectives: r.objectives.0,
            ratios: Feature::ALL.iter().map(|f| (f.name().to_string(), r.ratios[f.index()])).collect(),
            cosine: r.cosine,
            passed_filter: r.passed_filter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResponse {
    pub job_id: u64,
    pub status: JobStatus,
    pub method: Method,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Every non-dominated solution; the filtered set is those with `passed_filter`.
    pub recommendations: Vec<WireRecommendation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub timestamp_ms: u64,
    pub job_id: u64,
    pub choice: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackRequest {
    choice: Option<usize>,
}

pub struct AppState {
    catalog: Option<Arc<Catalog>>,
    configs: MethodConfigs,
    default_method: Method,
    default_seed: u64,
    jobs: Mutex<HashMap<u64, OptimizeResponse>>,
    next_id: AtomicU64,
    feedback: Mutex<File>,
    jobs_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(catalog: Option<Catalog>, config: &Config) -> anyhow::Result<Self> {
        if let Some(parent) = config.feedback_log.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let feedback = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&config.feedback_log)
            .with_context(|| format!("opening feedback log {}", config.feedback_log.display()))?;
        if let Some(dir) = &config.jobs_dir {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self {
            catalog: catalog.map(Arc::new),
            configs: config.methods.clone(),
            default_method: config.default_method,
            default_seed: config.seed,
            jobs: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            feedback: Mutex::new(feedback),
            jobs_dir: config.jobs_dir.clone(),
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/catalog", get(catalog))
        .route("/optimize", post(optimize))
        .route("/jobs/{id}", get(job))
        .route("/jobs/{id}/feedback", post(feedback))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn health(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let jobs = s.jobs.lock().unwrap().len();
    Json(json!({
        "status": "ok",
        "catalog_loaded": s.catalog.is_some(),
        "products": s.catalog.as_ref().map_or(0, |c| c.len()),
        "jobs": jobs,
    }))
}

async fn catalog(State(s): State<Arc<AppState>>) -> Response {
    let Some(cat) = &s.catalog else {
        return error(StatusCode::CONFLICT, "catalog not loaded");
    };
    let products: Vec<_> = cat
        .products()
        .iter()
        .zip(cat.coeffs())
        .map(|(p, row)| {
            let coefficients: BTreeMap<&str, f64> = Feature::ALL.iter().map(|f| (f.name(), row[f.index()])).collect();
            json!({ "product_id": p.id, "name": p.name, "unit": p.unit, "coefficients": coefficients })
        })
        .collect();
    let features: Vec<_> = Feature::ALL.iter().map(|f| json!({ "name": f.name(), "unit": f.unit() })).collect();
    Json(json!({ "products": products, "features": features })).into_response()
}

struct Validated {
    basket: Basket,
    method: Method,
    seed: u64,
    configs: MethodConfigs,
}

fn validate(s: &AppState, catalog: &Catalog, body: &[u8]) -> Result<Validated, Response> {
    let req: OptimizeRequest = serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))?;
    let mut q = vec![0u32; catalog.len()];
    for (id, &n) in &req.basket {
        let i = catalog
            .index_of(id)
            .ok_or_else(|| error(StatusCode::BAD_REQUEST, format!("unknown product {id:?}")))?;
        q[i] = n;
    }
    let basket = Basket::new(q);
    if basket.is_zero() {
        return Err(error(StatusCode::BAD_REQUEST, "basket must contain at least one unit"));
    }
    let weights = req
        .weights
        .as_deref()
        .map(validate_weights)
        .transpose()
        .map_err(|e| error(StatusCode::BAD_REQUEST, e.to_string()))?;
    if req.budget == Some(0) {
        return Err(error(StatusCode::BAD_REQUEST, "budget must be at least one generation"));
    }
    Ok(Validated {
        basket,
        method: req.method.unwrap_or(s.default_method),
        seed: req.seed.unwrap_or(s.default_seed),
        configs: method_configs(&s.configs, weights, req.budget),
    })
}

async fn optimize(State(s): State<Arc<AppState>>, body: Bytes) -> Response {
    let Some(cat) = s.catalog.clone() else {
        return error(StatusCode::CONFLICT, "catalog not loaded");
    };
    let v = match validate(&s, &cat, &body) {
        Ok(v) => v,
        Err(resp) => return resp,
    };
    let id = s.next_id.fetch_add(1, Ordering::Relaxed);
    let pending = OptimizeResponse {
        job_id: id,
        status: JobStatus::Pending,
        method: v.method,
        seed: v.seed,
        error: None,
        recommendations: Vec::new(),
    };
    s.jobs.lock().unwrap().insert(id, pending.clone());

    let state = s.clone();
    tokio::task::spawn_blocking(move || run_job(&state, &cat, id, v));
    (StatusCode::ACCEPTED, Json(pending)).into_response()
}

fn run_job(s: &AppState, cat: &Catalog, id: u64, v: Validated) {
    if let Some(job) = s.jobs.lock().unwrap().get_mut(&id) {
        job.status = JobStatus::Running;
    }
    let result = recommend(v.method, cat, &v.basket, &v.configs, v.seed);
    let mut jobs = s.jobs.lock().unwrap();
    let Some(job) = jobs.get_mut(&id) else { return };
    match result {
        Ok(recs) => {
            job.status = JobStatus::Completed;
            job.recommendations = recs.iter().map(|r| WireRecommendation::new(cat, r)).collect();
        }
        Err(e) => {
            job.status = JobStatus::Failed;
            job.error = Some(e.to_string());
        }
    }
    if let Some(dir) = &s.jobs_dir {
        let path = dir.join(format!("{id}.json"));
        if let Err(e) = File::create(&path).map_err(anyhow::Error::from).and_then(|f| Ok(serde_json::to_writer_pretty(f, &*job)?)) {
            log::warn!("could not persist job {id} to {}: {e}", path.display());
        }
    }
}

async fn job(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>) -> Response {
    match s.jobs.lock().unwrap().get(&id) {
        Some(job) => Json(job.clone()).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no job {id}")),
    }
}

async fn feedback(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>, body: Bytes) -> Response {
    let req: FeedbackRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed feedback: {e}")),
    };
    let count = match s.jobs.lock().unwrap().get(&id) {
        None => return error(StatusCode::NOT_FOUND, format!("no job {id}")),
        Some(job) if job.status != JobStatus::Completed => return error(StatusCode::CONFLICT, format!("job {id} has not completed")),
        Some(job) => job.recommendations.len(),
    };
    if let Some(i) = req.choice {
        if i >= count {
            return error(StatusCode::UNPROCESSABLE_ENTITY, format!("choice {i} out of range for {count} recommendations"));
        }
    }
    let record = FeedbackRecord {
        timestamp_ms: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64),
        job_id: id,
        choice: req.choice,
    };
    let line = serde_json::to_string(&record).expect("feedback record serializes");
    let written = {
        let mut f = s.feedback.lock().unwrap();
        writeln!(f, "{line}").and_then(|_| f.flush())
    };
    match written {
        Ok(()) => Json(json!({ "logged": true, "job_id": id, "choice": req.choice })).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("feedback log write failed: {e}")),
    }
}

/// Acceptance and decline counts rebuilt from a feedback log.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeedbackTally {
    pub accepted: usize,
    pub declined: usize,
    /// Times each `(job, index)` was accepted.
    pub per_choice: BTreeMap<(u64, usize), usize>,
}

pub fn replay_feedback(path: &Path) -> anyhow::Result<FeedbackTally> {
    let mut tally = FeedbackTally::default();
    for line in std::io::BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: FeedbackRecord = serde_json::from_str(&line).with_context(|| format!("bad feedback line {line:?}"))?;
        match r.choice {
            Some(i) => {
                tally.accepted += 1;
                *tally.per_choice.entry((r.job_id, i)).or_default() += 1;
            }
            None => tally.declined += 1,
        }
    }
    Ok(tally)
}

/// Serves until interrupted.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
