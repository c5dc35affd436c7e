use std::io::Cursor;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use super::{
    BackendError, BackendErrorKind, ChatRequest, PolicyBackend, PolicyReply, SegmentReply, SegmentRequest,
    SegmenterBackend, SegmenterError, TokenLogprob,
};
use crate::aperture::Mask;
use crate::protocol::{ContentPart, Role};

/// Connection settings for one HTTP endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Full URL of the POST endpoint, path included.
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Longest image side sent to the service; larger images are downscaled.
    #[serde(default)]
    pub max_image_side: Option<u32>,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_concurrency() -> usize {
    4
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout_ms: default_timeout_ms(),
            max_image_side: None,
            max_concurrency: default_concurrency(),
        }
    }

    fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(self.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum WireContent {
    Text { text: String },
    Image { data: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: Role,
    pub content: Vec<WireContent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub messages: Vec<WireMessage>,
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub text: String,
    #[serde(default)]
    pub token_logprobs: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SegmentWireRequest {
    image: String,
    bbox: [f64; 4],
    points: Vec<[f64; 2]>,
    labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SegmentWireResponse {
    mask: String,
}

/// PNG-encodes and base64s an image, downscaling so neither side exceeds `max_side`.
pub fn encode_png_base64(image: &RgbImage, max_side: Option<u32>) -> Result<String, String> {
    let scaled;
    let img = match max_side {
        Some(cap) if cap > 0 && image.width().max(image.height()) > cap => {
            let scale = cap as f64 / image.width().max(image.height()) as f64;
            let w = ((image.width() as f64 * scale).round() as u32).max(1);
            let h = ((image.height() as f64 * scale).round() as u32).max(1);
            scaled = image::imageops::resize(image, w, h, image::imageops::FilterType::Triangle);
            &scaled
        }
        _ => image,
    };
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| e.to_string())?;
    Ok(B64.encode(buf.into_inner()))
}

fn classify(err: ureq::Error) -> BackendErrorKind {
    match err {
        ureq::Error::Timeout(_) => BackendErrorKind::Timeout,
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => BackendErrorKind::Timeout,
        ureq::Error::Json(e) => BackendErrorKind::Protocol(e.to_string()),
        other => BackendErrorKind::Transport(other.to_string()),
    }
}

fn classify_status(status: u16) -> Option<BackendErrorKind> {
    match status {
        200..=299 => None,
        429 => Some(BackendErrorKind::RateLimited),
        408 | 504 => Some(BackendErrorKind::Timeout),
        500..=599 => Some(BackendErrorKind::Transport(format!("HTTP {status}"))),
        _ => Some(BackendErrorKind::Protocol(format!("HTTP {status}"))),
    }
}

fn post_json<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
    agent: &ureq::Agent,
    url: &str,
    body: &Req,
) -> Result<Resp, BackendErrorKind> {
    let mut resp = agent.post(url).send_json(body).map_err(classify)?;
    if let Some(kind) = classify_status(resp.status().as_u16()) {
        return Err(kind);
    }
    resp.body_mut().read_json::<Resp>().map_err(|e| match classify(e) {
        BackendErrorKind::Transport(m) => BackendErrorKind::Protocol(m),
        k => k,
    })
}

/// Chat-style model service over a single JSON POST endpoint.
pub struct RemotePolicy {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemotePolicy {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = config.agent();
        Self { config, agent }
    }

    pub fn wire_request(&self, request: &ChatRequest<'_>) -> Result<WireRequest, BackendErrorKind> {
        let mut messages = Vec::with_capacity(request.messages.len());
        for m in request.messages {
            let mut content = Vec::with_capacity(m.content.len());
            for part in &m.content {
                content.push(match part {
                    ContentPart::Text(text) => WireContent::Text { text: text.clone() },
                    ContentPart::Image(img) => WireContent::Image {
                        data: encode_png_base64(img, self.config.max_image_side).map_err(BackendErrorKind::Protocol)?,
                    },
                });
            }
            messages.push(WireMessage { role: m.role, content });
        }
        Ok(WireRequest {
            messages,
            temperature: request.params.temperature,
            seed: request.params.seed,
            max_tokens: request.params.max_tokens,
        })
    }
}

impl PolicyBackend for RemotePolicy {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<PolicyReply, BackendError> {
        let start = Instant::now();
        let result = self
            .wire_request(request)
            .and_then(|body| post_json::<_, WireResponse>(&self.agent, &self.config.endpoint, &body));
        let latency = start.elapsed();
        match result {
            Ok(r) => Ok(PolicyReply { text: r.text, token_logprobs: r.token_logprobs, latency }),
            Err(kind) => Err(BackendError::new(kind, latency)),
        }
    }

    fn max_concurrency(&self) -> usize {
        self.config.max_concurrency.max(1)
    }
}

/// Segmentation service speaking base64 PNG in both directions.
pub struct RemoteSegmenter {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteSegmenter {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = config.agent();
        Self { config, agent }
    }
}

impl SegmenterBackend for RemoteSegmenter {
    fn segment(&self, request: &SegmentRequest<'_>) -> Result<SegmentReply, SegmenterError> {
        let start = Instant::now();
        // masks must match the source dimensions, so the image is never downscaled here
        let image = encode_png_base64(request.image, None).map_err(SegmenterError::Protocol)?;
        let body = SegmentWireRequest {
            image,
            bbox: request.bbox.to_array(),
            points: request.points.iter().map(|p| [p.x, p.y]).collect(),
            labels: request.points.iter().map(|p| p.label()).collect(),
        };
        let resp: SegmentWireResponse = post_json(&self.agent, &self.config.endpoint, &body).map_err(|k| match k {
            BackendErrorKind::Protocol(m) => SegmenterError::Protocol(m),
            other => SegmenterError::Unavailable(other.to_string()),
        })?;
        let bytes = B64.decode(resp.mask.as_bytes()).map_err(|e| SegmenterError::Protocol(e.to_string()))?;
        let mask = Mask::from_png(&bytes).map_err(|e| SegmenterError::Protocol(e.to_string()))?;
        Ok(SegmentReply { mask, latency: start.elapsed() })
    }

    fn max_concurrency(&self) -> usize {
        self.config.max_concurrency.max(1)
    }
}
