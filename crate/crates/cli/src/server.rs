//! Local HTTP endpoint plus the client side used by `submit`/`inspect
//! --endpoint`.
//!
//! Routes: `POST /requests`, `GET /inspect/{kind}`, `GET /streams/{id}`,
//! `GET /health`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use sensing_core::engine::Listing;
use sensing_core::{ClockMode, DocFormat, Engine, EngineError};
use serde_json::json;

const TICK_PERIOD: Duration = Duration::from_millis(50);

fn error_response(e: &EngineError) -> Response {
    let status = if e.exit_code() == 1 {
        StatusCode::BAD_REQUEST
    } else {
        StatusCode::UNPROCESSABLE_ENTITY
    };
    (
        status,
        Json(json!({ "code": e.code(), "message": e.to_string() })),
    )
        .into_response()
}

async fn health(State(engine): State<Arc<Engine>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "now": engine.now(),
        "sensors": engine.registry().len(),
        "domains": engine.knowledge().domain_count(),
    }))
}

async fn submit(State(engine): State<Arc<Engine>>, headers: HeaderMap, body: Bytes) -> Response {
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default();
    let format = if content_type.contains("json") {
        DocFormat::Json
    } else if content_type.contains("toml") {
        DocFormat::Toml
    } else {
        DocFormat::sniff(&body)
    };
    let result = tokio::task::spawn_blocking(move || engine.submit(&body, format)).await;
    match result {
        Ok(Ok(receipt)) => (StatusCode::CREATED, Json(receipt)).into_response(),
        Ok(Err(e)) => error_response(&e),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn inspect(State(engine): State<Arc<Engine>>, UrlPath(kind): UrlPath<String>) -> Response {
    match kind.parse::<Listing>() {
        Ok(listing) => Json(engine.inspect(listing)).into_response(),
        Err(e) => (
            StatusCode::NOT_FOUND,
            Json(json!({ "code": e.code(), "message": e.to_string() })),
        )
            .into_response(),
    }
}

async fn stream(State(engine): State<Arc<Engine>>, UrlPath(id): UrlPath<String>) -> Response {
    match engine.stream_contents(&id) {
        Some(bytes) => {
            ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], bytes).into_response()
        }
        None => (StatusCode::NOT_FOUND, format!("no stream for `{id}`\n")).into_response(),
    }
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/requests", post(submit))
        .route("/inspect/{kind}", get(inspect))
        .route("/streams/{id}", get(stream))
        .with_state(engine)
}

/// Drives the pipelines. A simulated clock follows wall time here.
fn spawn_ticker(engine: Arc<Engine>, stop: Arc<AtomicBool>) -> std::thread::JoinHandle<()> {
    std::thread::spawn(move || {
        let mut last = Instant::now();
        while !stop.load(Ordering::SeqCst) {
            std::thread::sleep(TICK_PERIOD);
            match engine.clock_mode() {
                ClockMode::Simulated => {
                    let elapsed = last.elapsed().as_millis() as u64;
                    last = Instant::now();
                    engine.run_for(elapsed);
                }
                ClockMode::Real => engine.step(),
            }
        }
    })
}

pub fn serve(engine: Engine, addr: &str, out: Option<PathBuf>) -> anyhow::Result<u8> {
    let engine = Arc::new(engine);
    let stop = Arc::new(AtomicBool::new(false));
    let ticker = spawn_ticker(Arc::clone(&engine), Arc::clone(&stop));

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        axum::serve(listener, router(Arc::clone(&engine)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;

    stop.store(true, Ordering::SeqCst);
    let _ = ticker.join();
    let report = engine.shutdown();
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
    }
    Ok(0)
}

fn exit_for_status(status: reqwest::StatusCode) -> u8 {
    if status.is_success() {
        0
    } else if status == reqwest::StatusCode::BAD_REQUEST {
        1
    } else {
        2
    }
}

pub fn remote_submit(endpoint: &str, request: &Path, body: Vec<u8>) -> anyhow::Result<u8> {
    let content_type = match request.extension().and_then(|e| e.to_str()) {
        Some("json") => "application/json",
        _ => "application/toml",
    };
    let url = format!("{}/requests", endpoint.trim_end_matches('/'));
    let response = reqwest::blocking::Client::new()
        .post(&url)
        .header(reqwest::header::CONTENT_TYPE, content_type)
        .body(body)
        .send()
        .with_context(|| format!("POST {url}"))?;
    let status = response.status();
    println!("{}", response.text()?);
    Ok(exit_for_status(status))
}

pub fn remote_inspect(endpoint: &str, kind: &str) -> anyhow::Result<u8> {
    let url = format!("{}/inspect/{kind}", endpoint.trim_end_matches('/'));
    let response = reqwest::blocking::get(&url).with_context(|| format!("GET {url}"))?;
    let status = response.status();
    println!("{}", response.text()?);
    Ok(if status == reqwest::StatusCode::NOT_FOUND {
        1
    } else {
        exit_for_status(status)
    })
}
