//! HTTP transport seam and the retry policy for remote backends.
//!
//! Transport errors and 5xx responses are retried with exponential backoff
//! (full jitter); 4xx responses fail immediately.

use std::time::Duration;

use rand::Rng;
use thiserror::Error;

use super::BackendError;

pub const DEFAULT_BACKOFF_BASE: Duration = Duration::from_millis(200);
pub const DEFAULT_BACKOFF_FACTOR: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Io(String),
}

/// Sends one JSON POST. Implementations must not retry on their own.
pub trait Transport: Send + Sync {
    fn post(
        &self,
        url: &str,
        body: &[u8],
        timeout: Duration,
        bearer: Option<&str>,
    ) -> Result<HttpResponse, TransportError>;
}

/// Blocking transport backed by `ureq`.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl Default for UreqTransport {
    fn default() -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for UreqTransport {
    fn post(
        &self,
        url: &str,
        body: &[u8],
        timeout: Duration,
        bearer: Option<&str>,
    ) -> Result<HttpResponse, TransportError> {
        let mut req = self
            .agent
            .post(url)
            .header("content-type", "application/json");
        if let Some(token) = bearer {
            req = req.header("authorization", format!("Bearer {token}"));
        }
        let result = req
            .config()
            .timeout_global(Some(timeout))
            .build()
            .send(body);
        let mut resp = match result {
            Ok(resp) => resp,
            Err(ureq::Error::Timeout(_)) => return Err(TransportError::Timeout),
            Err(e) => return Err(TransportError::Io(e.to_string())),
        };
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => TransportError::Timeout,
                other => TransportError::Io(other.to_string()),
            })?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base: Duration,
    pub factor: u32,
}

impl RetryPolicy {
    pub fn new(max_attempts: u32) -> Self {
        Self {
            max_attempts: max_attempts.max(1),
            base: DEFAULT_BACKOFF_BASE,
            factor: DEFAULT_BACKOFF_FACTOR,
        }
    }

    /// Upper bound of the wait before retry number `retry` (0-based).
    pub fn ceiling(&self, retry: u32) -> Duration {
        let mult = self.factor.saturating_pow(retry);
        self.base.saturating_mul(mult)
    }

    /// Full jitter: uniform in `[0, ceiling(retry)]`.
    pub fn jittered<R: Rng + ?Sized>(&self, retry: u32, rng: &mut R) -> Duration {
        let ceiling = self.ceiling(retry).as_micros() as u64;
        Duration::from_micros(rng.random_range(0..=ceiling))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallOutcome {
    pub response: HttpResponse,
    pub attempts: u32,
}

fn error_message(body: &[u8]) -> String {
    #[derive(serde::Deserialize)]
    struct ErrorBody {
        error: String,
    }
    serde_json::from_slice::<ErrorBody>(body)
        .map(|b| b.error)
        .unwrap_or_else(|_| String::from_utf8_lossy(body).chars().take(200).collect())
}

/// POSTs `body` until a 2xx arrives, a non-retryable status is seen, or
/// `policy.max_attempts` attempts have been made. `body` is sent unchanged on
/// every attempt.
pub fn call_with_retry(
    policy: &RetryPolicy,
    transport: &dyn Transport,
    url: &str,
    body: &[u8],
    timeout: Duration,
    bearer: Option<&str>,
    sleep: &dyn Fn(Duration),
) -> Result<CallOutcome, BackendError> {
    let max = policy.max_attempts.max(1);
    let mut rng = rand::rng();
    let mut last_failure = String::new();
    for attempt in 1..=max {
        match transport.post(url, body, timeout, bearer) {
            Ok(resp) if (200..300).contains(&resp.status) => {
                return Ok(CallOutcome { response: resp, attempts: attempt });
            }
            Ok(resp) if resp.status >= 500 => {
                last_failure = format!("status {}: {}", resp.status, error_message(&resp.body));
            }
            Ok(resp) => {
                return Err(BackendError::Rejected {
                    status: resp.status,
                    message: error_message(&resp.body),
                });
            }
            Err(e) => last_failure = e.to_string(),
        }
        if attempt < max {
            sleep(policy.jittered(attempt - 1, &mut rng));
        }
    }
    Err(BackendError::Unavailable(format!(
        "{url} failed after {max} attempt(s): {last_failure}"
    )))
}
