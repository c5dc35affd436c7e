use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use image::RgbImage;

use super::{SegmentReply, SegmentRequest, SegmenterBackend, SegmenterError};
use crate::aperture::Mask;

/// Per-pixel owner of a rendered scene: 0 is background, `k` the k-th shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, labels: vec![0; width as usize * height as usize] }
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.labels[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, label: u16) {
        self.labels[(y * self.width + x) as usize] = label;
    }

    /// Visible pixels of one label.
    pub fn region(&self, label: u16) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| self.get(x, y) == label)
    }
}

/// FNV-1a over dimensions and raw RGB bytes.
pub fn image_fingerprint(image: &RgbImage) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let dims = image.width().to_le_bytes().into_iter().chain(image.height().to_le_bytes());
    for b in dims.chain(image.as_raw().iter().copied()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Segmenter stub for synthetic scenes with known geometry.
///
/// Foreground points inside the box select the visible region of the shape
/// under them; background points inside the box remove the shape under them.
/// Points outside the box are ignored.
#[derive(Debug, Default)]
pub struct GeometricOracle {
    scenes: RwLock<HashMap<u64, Arc<LabelMap>>>,
    latency: Duration,
}

impl GeometricOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn register(&self, image: &RgbImage, labels: LabelMap) {
        let key = image_fingerprint(image);
        self.scenes.write().unwrap_or_else(|e| e.into_inner()).insert(key, Arc::new(labels));
    }
}

impl SegmenterBackend for GeometricOracle {
    fn segment(&self, request: &SegmentRequest<'_>) -> Result<SegmentReply, SegmenterError> {
        let key = image_fingerprint(request.image);
        let labels = self
            .scenes
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(&key)
            .cloned()
            .ok_or_else(|| SegmenterError::Unavailable("image is not a registered synthetic scene".into()))?;
        let (w, h) = request.image.dimensions();
        if labels.dims() != (w, h) {
            return Err(SegmenterError::Protocol("label map does not match image".into()));
        }
        let mut mask = Mask::empty(w, h);
        let hit = |fg: bool| {
            request
                .points
                .iter()
                .filter(move |p| p.foreground == fg && request.bbox.contains(p.x, p.y))
                .map(|p| {
                    let (x, y) = p.to_pixel(w, h);
                    labels.get(x, y)
                })
                .filter(|&l| l != 0)
        };
        for l in hit(true) {
            mask.union_with(&labels.region(l));
        }
        for l in hit(false) {
            mask.subtract(&labels.region(l));
        }
        Ok(SegmentReply { mask, latency: self.latency })
    }

    fn max_concurrency(&self) -> usize {
        64
    }
}
