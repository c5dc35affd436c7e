use serde::{Deserialize, Serialize};

use super::ApertureError;

/// Side length of the normalized coordinate frame.
pub const FRAME: f64 = 1000.0;

/// Box in the `[0, 1000]²` frame, independent of the image resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct NormalizedBBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl NormalizedBBox {
    /// Strict constructor: requires `0 <= x1 < x2 <= 1000` and likewise for y.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, ApertureError> {
        let in_frame = |v: f64| v.is_finite() && (0.0..=FRAME).contains(&v);
        if !(in_frame(x1) && in_frame(y1) && in_frame(x2) && in_frame(y2)) || x1 >= x2 || y1 >= y2 {
            return Err(ApertureError::DegenerateBox([x1, y1, x2, y2]));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Clamps each coordinate into the frame first. Still fails if the
    /// clamped box has zero area.
    pub fn clamped(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, ApertureError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(ApertureError::DegenerateBox([x1, y1, x2, y2]));
        }
        let c = |v: f64| v.clamp(0.0, FRAME);
        Self::new(c(x1), c(y1), c(x2), c(y2))
    }

    pub fn full() -> Self {
        Self { x1: 0.0, y1: 0.0, x2: FRAME, y2: FRAME }
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }

    /// Smallest box in the frame covering the pixel rectangle of a
    /// `width`×`height` image.
    pub fn from_pixel_rect(rect: PixelRect, width: u32, height: u32) -> Result<Self, ApertureError> {
        let sx = FRAME / width as f64;
        let sy = FRAME / height as f64;
        Self::clamped(
            rect.x0 as f64 * sx,
            rect.y0 as f64 * sy,
            rect.x1 as f64 * sx,
            rect.y1 as f64 * sy,
        )
    }
}

impl TryFrom<[f64; 4]> for NormalizedBBox {
    type Error = ApertureError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<NormalizedBBox> for [f64; 4] {
    fn from(b: NormalizedBBox) -> Self {
        b.to_array()
    }
}

/// Point prompt for the segmenter; `foreground` is label 1, background 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPrompt {
    pub x: f64,
    pub y: f64,
    pub foreground: bool,
}

impl PointPrompt {
    pub fn new(x: f64, y: f64, label: i64) -> Result<Self, ApertureError> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(ApertureError::InvalidPoint(format!("non-finite point ({x}, {y})")));
        }
        let foreground = match label {
            1 => true,
            0 => false,
            other => return Err(ApertureError::InvalidPoint(format!("label {other} is not 0 or 1"))),
        };
        Ok(Self { x: x.clamp(0.0, FRAME), y: y.clamp(0.0, FRAME), foreground })
    }

    pub fn label(&self) -> u8 {
        u8::from(self.foreground)
    }

    /// Pixel the point falls on, clamped to the image.
    pub fn to_pixel(&self, width: u32, height: u32) -> (u32, u32) {
        let px = ((self.x * width as f64 / FRAME).floor() as u32).min(width.saturating_sub(1));
        let py = ((self.y * height as f64 / FRAME).floor() as u32).min(height.saturating_sub(1));
        (px, py)
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains_rect(&self, other: &PixelRect) -> bool {
        other.x0 >= self.x0 && other.y0 >= self.y0 && other.x1 <= self.x1 && other.y1 <= self.y1
    }
}

/// Maps a normalized box to pixels: floor for the min corner, ceil for the
/// max corner, clamped to the image. Sides shorter than `min_view_side` are
/// grown symmetrically (shifted back inside the image when they hit an edge).
pub fn to_pixel_rect(
    bbox: &NormalizedBBox,
    width: u32,
    height: u32,
    min_view_side: u32,
) -> Result<PixelRect, ApertureError> {
    if width == 0 || height == 0 {
        return Err(ApertureError::ZeroAreaImage);
    }
    let (x0, x1) = axis_span(bbox.x1, bbox.x2, width, min_view_side);
    let (y0, y1) = axis_span(bbox.y1, bbox.y2, height, min_view_side);
    if x0 >= x1 || y0 >= y1 {
        return Err(ApertureError::DegenerateBox(bbox.to_array()));
    }
    Ok(PixelRect { x0, y0, x1, y1 })
}

fn axis_span(lo: f64, hi: f64, extent: u32, min_side: u32) -> (u32, u32) {
    let scale = extent as f64 / FRAME;
    let mut a = ((lo * scale).floor().max(0.0) as u32).min(extent);
    let mut b = ((hi * scale).ceil().max(0.0) as u32).min(extent);
    let target = min_side.min(extent);
    if b.saturating_sub(a) < target {
        let extra = target - (b - a);
        let start = a as i64 - (extra / 2) as i64;
        let start = start.clamp(0, (extent - target) as i64) as u32;
        a = start;
        b = start + target;
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_box_maps_to_whole_image() {
        let r = to_pixel_rect(&NormalizedBBox::full(), 640, 480, 8).unwrap();
        assert_eq!(r, PixelRect { x0: 0, y0: 0, x1: 640, y1: 480 });
    }

    #[test]
    fn unit_scale_frame() {
        let b = NormalizedBBox::new(500.0, 500.0, 1000.0, 1000.0).unwrap();
        let r = to_pixel_rect(&b, 1000, 1000, 8).unwrap();
        assert_eq!(r, PixelRect { x0: 500, y0: 500, x1: 1000, y1: 1000 });
    }

    #[test]
    fn tiny_box_expands_to_min_side_at_origin() {
        // raw span is [0, 1); growing to 8 would start at -3, shifted to 0
        let b = NormalizedBBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let r = to_pixel_rect(&b, 100, 100, 8).unwrap();
        assert_eq!(r, PixelRect { x0: 0, y0: 0, x1: 8, y1: 8 });
    }

    #[test]
    fn expansion_is_symmetric_away_from_edges() {
        // 500/1000*100 = 50 -> [50, 51), grown by 7: 3 left, 4 right
        let b = NormalizedBBox::new(500.0, 500.0, 501.0, 501.0).unwrap();
        let r = to_pixel_rect(&b, 100, 100, 8).unwrap();
        assert_eq!(r, PixelRect { x0: 47, y0: 47, x1: 55, y1: 55 });
    }

    #[test]
    fn expansion_shifts_back_at_far_edge() {
        let b = NormalizedBBox::new(999.0, 999.0, 1000.0, 1000.0).unwrap();
        let r = to_pixel_rect(&b, 100, 100, 8).unwrap();
        assert_eq!(r, PixelRect { x0: 92, y0: 92, x1: 100, y1: 100 });
    }

    #[test]
    fn min_side_larger_than_image_is_capped() {
        let b = NormalizedBBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let r = to_pixel_rect(&b, 4, 3, 8).unwrap();
        assert_eq!(r, PixelRect { x0: 0, y0: 0, x1: 4, y1: 3 });
    }

    #[test]
    fn strict_constructor_rejects_zero_width() {
        assert!(matches!(
            NormalizedBBox::new(10.0, 0.0, 10.0, 5.0),
            Err(ApertureError::DegenerateBox(_))
        ));
        assert!(NormalizedBBox::new(-1.0, 0.0, 10.0, 5.0).is_err());
        assert!(NormalizedBBox::new(0.0, 0.0, f64::NAN, 5.0).is_err());
    }

    #[test]
    fn clamped_constructor_clips_then_checks_area() {
        let b = NormalizedBBox::clamped(-50.0, 10.0, 1200.0, 20.0).unwrap();
        assert_eq!(b.to_array(), [0.0, 10.0, 1000.0, 20.0]);
        assert!(NormalizedBBox::clamped(1001.0, 0.0, 1500.0, 10.0).is_err());
    }

    #[test]
    fn point_labels_are_binary() {
        assert!(PointPrompt::new(1.0, 2.0, 1).unwrap().foreground);
        assert!(!PointPrompt::new(1.0, 2.0, 0).unwrap().foreground);
        assert!(PointPrompt::new(1.0, 2.0, 2).is_err());
    }

    #[test]
    fn bbox_serializes_as_array() {
        let b = NormalizedBBox::new(1.0, 2.0, 3.0, 4.0).unwrap();
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1.0,2.0,3.0,4.0]");
        let back: NormalizedBBox = serde_json::from_str("[1,2,3,4]").unwrap();
        assert_eq!(back, b);
        assert!(serde_json::from_str::<NormalizedBBox>("[3,2,1,4]").is_err());
    }
}
