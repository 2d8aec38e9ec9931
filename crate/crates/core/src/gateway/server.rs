//! HTTP transport: every request goes through [`Gateway::handle`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use tokio::net::TcpListener;

use super::{Gateway, ResponseBody};

pub const MAX_BODY_BYTES: usize = 256 * 1024 * 1024;

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new().fallback(handle).layer(DefaultBodyLimit::max(MAX_BODY_BYTES)).with_state(gateway)
}

pub async fn serve(gateway: Arc<Gateway>, listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(gateway)).await
}

/// Like [`serve`], returning once `shutdown` resolves and in-flight requests finish.
pub async fn serve_with_shutdown<F>(gateway: Arc<Gateway>, listener: TcpListener, shutdown: F) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(gateway)).with_graceful_shutdown(shutdown).await
}

async fn handle(State(gateway): State<Arc<Gateway>>, method: Method, uri: Uri, headers: HeaderMap, body: Bytes) -> Response {
    // A header that is not visible ASCII can never match a token.
    let auth = headers.get(header::AUTHORIZATION).map(|v| v.to_str().unwrap_or("\u{0}"));
    let response = gateway.handle(method.as_str(), uri.path(), auth, &body).await;
    let status = StatusCode::from_u16(response.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let (content_type, bytes) = match response.body {
        ResponseBody::Json(value) => ("application/json", serde_json::to_vec(&value).expect("json serializes")),
        ResponseBody::Bytes { content_type, bytes } => (content_type, bytes),
    };
    let mut out = (status, bytes).into_response();
    out.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static(content_type));
    out
}
