//! Policy and segmenter backends.
//!
//! A [`PolicyBackend`] produces the next assistant turn from the message
//! history; a [`SegmenterBackend`] turns box and point prompts into a mask.
//! Both report their own latency so that scripted runs stay byte-identical
//! while remote runs record wall-clock time.

mod oracle;
mod remote;
mod scripted;

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::aperture::{Mask, NormalizedBBox, PointPrompt};
use crate::protocol::Message;

pub use oracle::{image_fingerprint, GeometricOracle, LabelMap};
pub use remote::{encode_png_base64, RemoteConfig, RemotePolicy, RemoteSegmenter, WireContent, WireMessage, WireRequest, WireResponse};
pub use scripted::{load_script, Fallback, ScriptParseError, ScriptRecord, ScriptedPolicy, ANY_TASK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { temperature: 0.0, seed: 0, max_tokens: 1024 }
    }
}

/// Everything a policy sees when asked for the next turn.
#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub task_id: &'a str,
    pub turn_index: usize,
    pub messages: &'a [Message],
    pub params: SamplingParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyReply {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendErrorKind {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no scripted turn for task `{task_id}` turn {turn_index}")]
    ScriptExhausted { task_id: String, turn_index: usize },
}

impl BackendErrorKind {
    pub fn is_transient(&self) -> bool {
        matches!(self, Self::Timeout | Self::Transport(_) | Self::RateLimited)
    }
}

/// A failed call, with the time spent before giving up.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{kind} after {attempts} attempt(s)")]
pub struct BackendError {
    pub kind: BackendErrorKind,
    pub latency: Duration,
    pub attempts: u32,
}

impl BackendError {
    pub fn new(kind: BackendErrorKind, latency: Duration) -> Self {
        Self { kind, latency, attempts: 1 }
    }
}

pub trait PolicyBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<PolicyReply, BackendError>;

    /// Number of concurrent calls the backend accepts.
    fn max_concurrency(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, initial_backoff: Duration::from_millis(250) }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { attempts: 1, initial_backoff: Duration::ZERO }
    }
}

/// Calls the backend, retrying transient failures with exponential backoff.
/// The reported latency covers every attempt and every backoff sleep.
pub fn chat_complete(
    backend: &dyn PolicyBackend,
    request: &ChatRequest<'_>,
    retry: &RetryPolicy,
) -> Result<PolicyReply, BackendError> {
    let mut spent = Duration::ZERO;
    let mut backoff = retry.initial_backoff;
    let attempts = retry.attempts.max(1);
    for attempt in 1..=attempts {
        match backend.complete(request) {
            Ok(mut reply) => {
                reply.latency += spent;
                return Ok(reply);
            }
            Err(err) => {
                spent += err.latency;
                if !err.kind.is_transient() || attempt == attempts {
                    return Err(BackendError { kind: err.kind, latency: spent, attempts: attempt });
                }
                log::warn!(
                    "policy call for task {} turn {} failed ({}), retry {attempt}/{} in {:?}",
                    request.task_id,
                    request.turn_index,
                    err.kind,
                    attempts - 1,
                    backoff
                );
                std::thread::sleep(backoff);
                spent += backoff;
                backoff *= 2;
            }
        }
    }
    unreachable!("loop returns on the last attempt")
}

pub struct SegmentRequest<'a> {
    pub image: &'a RgbImage,
    pub bbox: &'a NormalizedBBox,
    pub points: &'a [PointPrompt],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentReply {
    pub mask: Mask,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SegmenterError {
    #[error("segmenter unavailable: {0}")]
    Unavailable(String),
    #[error("segmenter protocol error: {0}")]
    Protocol(String),
}

pub trait SegmenterBackend: Send + Sync {
    fn segment(&self, request: &SegmentRequest<'_>) -> Result<SegmentReply, SegmenterError>;

    fn max_concurrency(&self) -> usize {
        1
    }
}

/// Counting semaphore bounding concurrent calls into a shared backend.
pub struct ConcurrencyLimit {
    available: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a> {
    limit: &'a ConcurrencyLimit,
}

impl ConcurrencyLimit {
    pub fn new(permits: usize) -> Self {
        Self { available: Mutex::new(permits.max(1)), cv: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit { limit: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limit.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.limit.cv.notify_one();
    }
}

/// Wraps a backend so at most `max_concurrency` calls run at once.
pub struct Pooled<B> {
    inner: B,
    limit: ConcurrencyLimit,
    permits: usize,
}

impl<B> Pooled<B> {
    pub fn new(inner: B, permits: usize) -> Self {
        Self { inner, limit: ConcurrencyLimit::new(permits), permits: permits.max(1) }
    }
}

impl<B: PolicyBackend> PolicyBackend for Pooled<B> {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<PolicyReply, BackendError> {
        let _permit = self.limit.acquire();
        self.inner.complete(request)
    }

    fn max_concurrency(&self) -> usize {
        self.permits
    }
}

impl<B: SegmenterBackend> SegmenterBackend for Pooled<B> {
    fn segment(&self, request: &SegmentRequest<'_>) -> Result<SegmentReply, SegmenterError> {
        let _permit = self.limit.acquire();
        self.inner.segment(request)
    }

    fn max_concurrency(&self) -> usize {
        self.permits
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use super::*;

    struct Flaky {
        failures: usize,
        kind: BackendErrorKind,
        calls: AtomicUsize,
    }

    impl PolicyBackend for Flaky {
        fn complete(&self, _request: &ChatRequest<'_>) -> Result<PolicyReply, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(BackendError::new(self.kind.clone(), Duration::from_millis(5)))
            } else {
                Ok(PolicyReply { text: "ok".into(), token_logprobs: None, latency: Duration::from_millis(10) })
            }
        }
    }

    fn request() -> ChatRequest<'static> {
        ChatRequest { task_id: "t", turn_index: 0, messages: &[], params: SamplingParams::default() }
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy { attempts: 3, initial_backoff: Duration::from_millis(1) }
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let b = Flaky { failures: 2, kind: BackendErrorKind::RateLimited, calls: AtomicUsize::new(0) };
        let reply = chat_complete(&b, &request(), &fast_retry()).unwrap();
        assert_eq!(reply.text, "ok");
        // 2 failures (5ms each) + backoffs 1ms + 2ms + success 10ms
        assert_eq!(reply.latency, Duration::from_millis(23));
    }

    #[test]
    fn gives_up_after_configured_attempts() {
        let b = Flaky { failures: 10, kind: BackendErrorKind::Transport("refused".into()), calls: AtomicUsize::new(0) };
        let err = chat_complete(&b, &request(), &fast_retry()).unwrap_err();
        assert_eq!(err.attempts, 3);
        assert!(matches!(err.kind, BackendErrorKind::Transport(_)));
        assert_eq!(err.latency, Duration::from_millis(15 + 3));
        assert_eq!(b.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn permanent_errors_are_not_retried() {
        let b = Flaky { failures: 10, kind: BackendErrorKind::Protocol("bad json".into()), calls: AtomicUsize::new(0) };
        let err = chat_complete(&b, &request(), &fast_retry()).unwrap_err();
        assert_eq!(err.attempts, 1);
        assert_eq!(b.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn concurrency_limit_bounds_parallel_calls() {
        struct Probe {
            active: AtomicUsize,
            peak: AtomicUsize,
        }
        impl PolicyBackend for Probe {
            fn complete(&self, _r: &ChatRequest<'_>) -> Result<PolicyReply, BackendError> {
                let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(5));
                self.active.fetch_sub(1, Ordering::SeqCst);
                Ok(PolicyReply { text: String::new(), token_logprobs: None, latency: Duration::ZERO })
            }
        }
        let pooled = Arc::new(Pooled::new(Probe { active: AtomicUsize::new(0), peak: AtomicUsize::new(0) }, 2));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let p = Arc::clone(&pooled);
                s.spawn(move || p.complete(&request()).unwrap());
            }
        });
        assert!(pooled.inner.peak.load(Ordering::SeqCst) <= 2);
    }
}
