//! JSON-over-HTTP bridge for browser clients. `POST /v1` takes one request
//! envelope, exactly as sent over TCP but without the length prefix, and
//! returns the response envelope.

use std::net::SocketAddr;
use std::sync::Arc;

use airsign_core::service::{ErrorKind, Request, Response, Service};
use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use tower_http::cors::CorsLayer;

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/v1", post(handle))
        .layer(CorsLayer::permissive())
        .with_state(svc)
}

async fn handle(State(svc): State<Arc<Service>>, body: Result<Json<Request>, JsonRejection>) -> Json<Response> {
    let req = match body {
        Ok(Json(req)) => req,
        Err(e) => {
            return Json(Response::error(
                String::new(),
                ErrorKind::Protocol,
                e.body_text(),
                Vec::new(),
            ))
        }
    };
    let nonce = req.nonce.clone();
    match tokio::task::spawn_blocking(move || svc.handle(req)).await {
        Ok(resp) => Json(resp),
        Err(e) => Json(Response::error(nonce, ErrorKind::Internal, e.to_string(), Vec::new())),
    }
}

pub async fn serve_http(addr: SocketAddr, svc: Arc<Service>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    println!("HTTP bridge on {}", listener.local_addr()?);
    axum::serve(listener, router(svc)).await?;
    Ok(())
}
