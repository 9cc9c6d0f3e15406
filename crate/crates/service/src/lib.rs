//! Read-only HTTP API over published analysis runs.

mod api;
mod error;
mod store;

pub use api::router;
pub use error::ApiError;
pub use store::ArtifactStore;

/// Environment variable naming the artifact root.
pub const ARTIFACT_ROOT_ENV: &str = "TLENS_ARTIFACT_ROOT";

pub async fn serve(store: ArtifactStore, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    axum::serve(listener, router(store)).await
}
