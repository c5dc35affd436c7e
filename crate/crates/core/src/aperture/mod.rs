//! Aperture execution: zoom crops and segmentation views.
//!
//! A zoom view is an exact sub-rectangle copy of the source image. A segment
//! view keeps source pixels under the mask and replaces everything else with
//! seeded Gaussian noise, then crops to the action's box:
//!
//! ```text
//! view = M ⊙ I + (1 − M) ⊙ N      (cropped to bbox)
//! ```
//!
//! Nothing here resamples; resolution policy belongs to backend encoding.

mod geometry;
mod mask;

use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backends::{SegmentReply, SegmentRequest, SegmenterBackend, SegmenterError};

pub use geometry::{to_pixel_rect, NormalizedBBox, PixelRect, PointPrompt, FRAME};
pub use mask::Mask;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ApertureError {
    #[error("degenerate bounding box {0:?}")]
    DegenerateBox([f64; 4]),
    #[error("invalid point prompt: {0}")]
    InvalidPoint(String),
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch { expected: (u32, u32), found: (u32, u32) },
    #[error("image has zero area")]
    ZeroAreaImage,
    #[error("view of {pixels} pixels is below the minimum of {min}")]
    ViewTooSmall { pixels: u64, min: u64 },
    #[error("segmenter unavailable: {0}")]
    SegmenterUnavailable(String),
    #[error("segmenter returned an empty mask")]
    EmptyMask,
    #[error("segment action requires at least one point")]
    MissingPoints,
    #[error("image codec error: {0}")]
    Codec(String),
}

/// A zoom or segment request in normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ApertureAction {
    Zoom {
        bbox: NormalizedBBox,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        obj_label: Option<String>,
    },
    Segment {
        bbox: NormalizedBBox,
        points: Vec<PointPrompt>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        obj_label: Option<String>,
    },
}

impl ApertureAction {
    pub fn segment(
        bbox: NormalizedBBox,
        points: Vec<PointPrompt>,
        obj_label: Option<String>,
    ) -> Result<Self, ApertureError> {
        if points.is_empty() {
            return Err(ApertureError::MissingPoints);
        }
        Ok(Self::Segment { bbox, points, obj_label })
    }

    pub fn bbox(&self) -> &NormalizedBBox {
        match self {
            Self::Zoom { bbox, .. } | Self::Segment { bbox, .. } => bbox,
        }
    }

    pub fn obj_label(&self) -> Option<&str> {
        match self {
            Self::Zoom { obj_label, .. } | Self::Segment { obj_label, .. } => obj_label.as_deref(),
        }
    }

    pub fn tool_name(&self) -> &'static str {
        match self {
            Self::Zoom { .. } => crate::protocol::ZOOM_TOOL,
            Self::Segment { .. } => crate::protocol::SEGMENT_TOOL,
        }
    }
}

/// Limits applied to every produced view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    pub min_view_side: u32,
    pub min_view_pixels: u64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self { min_view_side: 8, min_view_pixels: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViewProvenance {
    ZoomCrop { pixel_rect: PixelRect },
    SegmentComposite {
        mask_id: u64,
        noise_seed: u64,
        pixel_rect: PixelRect,
        /// The segmenter returned nothing; the view is pure noise.
        empty_mask: bool,
    },
}

/// The local view `v_t` handed back to the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pixels: RgbImage,
    provenance: ViewProvenance,
}

pub type ViewRef = Arc<View>;

impl View {
    pub fn new(pixels: RgbImage, provenance: ViewProvenance) -> Result<Self, ApertureError> {
        if pixels.width() == 0 || pixels.height() == 0 {
            return Err(ApertureError::ZeroAreaImage);
        }
        Ok(Self { pixels, provenance })
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn provenance(&self) -> &ViewProvenance {
        &self.provenance
    }

    pub fn pixel_rect(&self) -> PixelRect {
        match self.provenance {
            ViewProvenance::ZoomCrop { pixel_rect } => pixel_rect,
            ViewProvenance::SegmentComposite { pixel_rect, .. } => pixel_rect,
        }
    }

    pub fn is_empty_mask(&self) -> bool {
        matches!(self.provenance, ViewProvenance::SegmentComposite { empty_mask: true, .. })
    }
}

/// Per-channel Gaussian background noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mean: f64,
    pub stddev: f64,
    pub seed: u64,
}

impl NoiseSpec {
    /// Mid-range mean, quarter-range deviation.
    pub fn with_seed(seed: u64) -> Self {
        Self { mean: 127.5, stddev: 63.75, seed }
    }

    /// Noise pixel values over `rect`. Row `y` of the full-image noise field is
    /// an independent ChaCha stream, so any sub-rectangle agrees with the same
    /// region of the full field.
    pub fn sample_region(&self, rect: PixelRect) -> Result<RgbImage, ApertureError> {
        let normal = Normal::new(self.mean, self.stddev)
            .map_err(|e| ApertureError::Codec(format!("bad noise parameters: {e}")))?;
        let mut out = RgbImage::new(rect.width(), rect.height());
        for y in rect.y0..rect.y1 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(y as u64);
            for x in 0..rect.x1 {
                let px = [0usize; 3].map(|_| quantize(normal.sample(&mut rng)));
                if x >= rect.x0 {
                    out.put_pixel(x - rect.x0, y - rect.y0, Rgb(px));
                }
            }
        }
        Ok(out)
    }
}

fn quantize(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}

fn check_view_size(rect: &PixelRect, config: &ViewConfig) -> Result<(), ApertureError> {
    if rect.area() < config.min_view_pixels {
        return Err(ApertureError::ViewTooSmall { pixels: rect.area(), min: config.min_view_pixels });
    }
    Ok(())
}

pub fn zoom_crop(image: &RgbImage, bbox: &NormalizedBBox, config: &ViewConfig) -> Result<View, ApertureError> {
    let rect = to_pixel_rect(bbox, image.width(), image.height(), config.min_view_side)?;
    check_view_size(&rect, config)?;
    let pixels = image::imageops::crop_imm(image, rect.x0, rect.y0, rect.width(), rect.height()).to_image();
    View::new(pixels, ViewProvenance::ZoomCrop { pixel_rect: rect })
}

/// Composites `mask ⊙ image + (1 − mask) ⊙ noise` and crops to `bbox`.
pub fn compose_segment_view(
    image: &RgbImage,
    mask: &Mask,
    bbox: &NormalizedBBox,
    noise: &NoiseSpec,
    config: &ViewConfig,
) -> Result<View, ApertureError> {
    if mask.dims() != image.dimensions() {
        return Err(ApertureError::DimensionMismatch { expected: image.dimensions(), found: mask.dims() });
    }
    let rect = to_pixel_rect(bbox, image.width(), image.height(), config.min_view_side)?;
    check_view_size(&rect, config)?;
    let mut pixels = noise.sample_region(rect)?;
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            if mask.get(x, y) {
                pixels.put_pixel(x - rect.x0, y - rect.y0, *image.get_pixel(x, y));
            }
        }
    }
    View::new(
        pixels,
        ViewProvenance::SegmentComposite {
            mask_id: mask.fingerprint(),
            noise_seed: noise.seed,
            pixel_rect: rect,
            empty_mask: mask.is_all_zero(),
        },
    )
}

/// Asks the segmenter for a mask of the whole image. An all-zero mask is
/// returned as-is so the caller can still show the policy a noise view.
pub fn request_mask_reply(
    segmenter: &dyn SegmenterBackend,
    image: &RgbImage,
    action: &ApertureAction,
) -> Result<SegmentReply, ApertureError> {
    let ApertureAction::Segment { bbox, points, .. } = action else {
        return Err(ApertureError::MissingPoints);
    };
    if points.is_empty() {
        return Err(ApertureError::MissingPoints);
    }
    let reply = segmenter
        .segment(&SegmentRequest { image, bbox, points })
        .map_err(|e| match e {
            SegmenterError::Unavailable(msg) | SegmenterError::Protocol(msg) => ApertureError::SegmenterUnavailable(msg),
        })?;
    if reply.mask.dims() != image.dimensions() {
        return Err(ApertureError::DimensionMismatch { expected: image.dimensions(), found: reply.mask.dims() });
    }
    Ok(reply)
}

/// Like [`request_mask_reply`] but treats an all-zero mask as an error.
pub fn request_mask(
    segmenter: &dyn SegmenterBackend,
    image: &RgbImage,
    action: &ApertureAction,
) -> Result<Mask, ApertureError> {
    let reply = request_mask_reply(segmenter, image, action)?;
    if reply.mask.is_all_zero() {
        return Err(ApertureError::EmptyMask);
    }
    Ok(reply.mask)
}
