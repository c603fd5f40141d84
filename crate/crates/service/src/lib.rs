//! HTTP API over the captioning engine: content-addressed image uploads,
//! object captioning, object-centric chat sessions, paragraph captioning and
//! mask retrieval, persisted as plain files under a store root.
//!
//! | route | purpose |
//! |---|---|
//! | `POST /v1/images` | upload png/jpeg bytes, returns `{image_id, width, height}` |
//! | `POST /v1/images/{id}/caption` | caption one selected object |
//! | `POST /v1/images/{id}/chat` | chat about one object |
//! | `POST /v1/images/{id}/paragraph` | paragraph over every region |
//! | `GET /v1/images/{id}/masks/{mask_id}` | stored RLE |
//! | `GET /v1/healthz` | backend reachability |
//! | `GET /v1/metrics` | cache counters |
//!
//! Errors are `{"error": "..."}` with a 4xx/5xx status.

pub mod api;
pub mod cache;
pub mod config;
pub mod store;

use std::collections::HashMap;
use std::future::Future;
use std::num::NonZeroUsize;
use std::sync::atomic::AtomicU64;
use std::sync::{Arc, Mutex};

use axum::Router;
use capengine_core::backends::{BackendError, Backends};
use capengine_core::chat::{ChatEngine, ChatSession};
use capengine_core::paragraph::{ParagraphEngine, ParagraphOptions};
use capengine_core::pipeline::Pipeline;
use thiserror::Error;
use tokio::net::TcpListener;

pub use api::ApiError;
pub use cache::{CacheStats, MaskCache};
pub use config::{ConfigError, ServiceConfig};
pub use store::{Store, StoreError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("backend setup failed: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot restore session {session}: {message}")]
    Session { session: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A live chat session. The image id lives outside the lock so ownership
/// checks never wait on a running turn.
pub(crate) struct SessionSlot {
    pub image_id: String,
    pub session: Mutex<ChatSession>,
}

pub(crate) struct AppState {
    pub config: ServiceConfig,
    pub store: Store,
    pub pipeline: Pipeline,
    pub chat: ChatEngine,
    pub paragraph: ParagraphEngine,
    pub paragraph_defaults: ParagraphOptions,
    pub cache: MaskCache,
    pub sessions: Mutex<HashMap<String, Arc<SessionSlot>>>,
    pub next_session: AtomicU64,
}

#[derive(Clone)]
pub struct Service {
    state: Arc<AppState>,
}

impl Service {
    /// Builds backends from the configuration and opens the store.
    pub fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        let backends = Backends::from_configs(&config.backends)?;
        Self::with_backends(config, backends)
    }

    /// Opens the store and restores persisted sessions, using the given
    /// backends instead of the configured ones.
    pub fn with_backends(config: ServiceConfig, backends: Backends) -> Result<Self, ServiceError> {
        let store = Store::open(&config.store_root)?;
        let pipeline = Pipeline::new(backends.clone(), config.pipeline_config());
        let chat = ChatEngine::new(backends.clone(), config.chat_config());
        let paragraph = ParagraphEngine::new(Pipeline::new(backends, config.pipeline_config()));
        let paragraph_defaults = config.paragraph_options();

        let mut sessions = HashMap::new();
        let mut last = 0u64;
        for log in store.load_sessions()? {
            let restore_err = |message: String| ServiceError::Session { session: log.session_id.clone(), message };
            let mut session = chat
                .start_session(&log.session_id, &log.image_id, log.mask.dims(), log.mask.clone(), &log.seed_caption)
                .map_err(|e| restore_err(e.to_string()))?;
            session.messages = log.messages;
            if let Some(n) = log.session_id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                last = last.max(n);
            }
            let slot = SessionSlot { image_id: log.image_id, session: Mutex::new(session) };
            sessions.insert(log.session_id, Arc::new(slot));
        }

        let cache_size = NonZeroUsize::new(config.cache_size).unwrap_or(NonZeroUsize::MIN);
        let state = AppState {
            store,
            pipeline,
            chat,
            paragraph,
            paragraph_defaults,
            cache: MaskCache::new(cache_size),
            sessions: Mutex::new(sessions),
            next_session: AtomicU64::new(last + 1),
            config,
        };
        Ok(Self { state: Arc::new(state) })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.state.config
    }

    pub fn router(&self) -> Router {
        api::router(self.state.clone())
    }

    /// Messages of a session, if it exists.
    pub fn session(&self, session_id: &str) -> Option<ChatSession> {
        let slot = self.state.sessions.lock().unwrap().get(session_id).cloned()?;
        let session = slot.session.lock().unwrap_or_else(|p| p.into_inner()).clone();
        Some(session)
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.state.cache.stats()
    }

    /// Serves until `shutdown` resolves, then drains in-flight requests.
    pub async fn serve(
        self,
        listener: TcpListener,
        shutdown: impl Future<Output = ()> + Send + 'static,
    ) -> std::io::Result<()> {
        axum::serve(listener, self.router()).with_graceful_shutdown(shutdown).await
    }
}
