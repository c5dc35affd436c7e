use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::aperture::{Mask, PixelRect};
use crate::backends::LabelMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Geometry {
    /// Pixels with `(x − cx)² + (y − cy)² ≤ r²`.
    Disk { cx: i64, cy: i64, r: i64 },
    /// Half-open `[x0, x1) × [y0, y1)`.
    Rect { x0: i64, y0: i64, x1: i64, y1: i64 },
}

impl Geometry {
    pub fn contains(&self, x: i64, y: i64) -> bool {
        match *self {
            Self::Disk { cx, cy, r } => (x - cx).pow(2) + (y - cy).pow(2) <= r * r,
            Self::Rect { x0, y0, x1, y1 } => (x0..x1).contains(&x) && (y0..y1).contains(&y),
        }
    }

    /// Number of lattice points covered, ignoring image bounds.
    pub fn area(&self) -> i64 {
        match *self {
            Self::Disk { r, .. } => (-r..=r).map(|dx| 2 * ((r * r - dx * dx) as f64).sqrt().floor() as i64 + 1).sum(),
            Self::Rect { x0, y0, x1, y1 } => (x1 - x0).max(0) * (y1 - y0).max(0),
        }
    }

    /// Half-open pixel bounds clipped to a `width × height` image.
    pub fn bounds(&self, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let (x0, y0, x1, y1) = match *self {
            Self::Disk { cx, cy, r } => (cx - r, cy - r, cx + r + 1, cy + r + 1),
            Self::Rect { x0, y0, x1, y1 } => (x0, y0, x1, y1),
        };
        let cx = |v: i64| v.clamp(0, width as i64) as u32;
        let cy = |v: i64| v.clamp(0, height as i64) as u32;
        (cx(x0), cy(y0), cx(x1), cy(y1))
    }

    pub fn center(&self) -> (f64, f64) {
        match *self {
            Self::Disk { cx, cy, .. } => (cx as f64 + 0.5, cy as f64 + 0.5),
            Self::Rect { x0, y0, x1, y1 } => ((x0 + x1) as f64 / 2.0, (y0 + y1) as f64 / 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub geometry: Geometry,
    pub fill: [u8; 3],
    /// Human-readable description such as "red disk".
    pub label: String,
}

/// A square tag carrying one digit, drawn above every shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Glyph {
    pub symbol: char,
    pub x: u32,
    pub y: u32,
    pub size: u32,
}

impl Glyph {
    pub fn rect(&self) -> PixelRect {
        PixelRect { x0: self.x, y0: self.y, x1: self.x + self.size, y1: self.y + self.size }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x as f64 + self.size as f64 / 2.0, self.y as f64 + self.size as f64 / 2.0)
    }
}

/// Shapes painted in order (later on top) over a flat background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub width: u32,
    pub height: u32,
    pub background: [u8; 3],
    pub shapes: Vec<Shape>,
    pub glyph: Option<Glyph>,
    /// Minimum glyph size as a fraction of a view's shorter side for the glyph
    /// to be readable in that view.
    pub rho: f64,
}

const TAG_FILL: [u8; 3] = [255, 255, 255];
const INK: [u8; 3] = [0, 0, 0];

/// 5x7 digit bitmaps, one row per byte, bit 4 = leftmost column.
const DIGITS: [[u8; 7]; 10] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
];

fn glyph_ink(symbol: char, size: u32, u: u32, v: u32) -> bool {
    let Some(d) = symbol.to_digit(10) else { return false };
    // one-pixel margin when the tag is large enough to afford it
    let pad = u32::from(size >= 7);
    let inner = size - 2 * pad;
    if u < pad || v < pad || u >= pad + inner || v >= pad + inner {
        return false;
    }
    let col = (u - pad) * 5 / inner;
    let row = (v - pad) * 7 / inner;
    DIGITS[d as usize][row as usize] >> (4 - col) & 1 == 1
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.width == 0 || self.height == 0 {
            return Err(HarnessError::Param("scene has zero area".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(HarnessError::Param(format!("rho {} outside (0, 1]", self.rho)));
        }
        if let Some(g) = &self.glyph {
            if g.size == 0 || g.x + g.size > self.width || g.y + g.size > self.height {
                return Err(HarnessError::Param("glyph does not fit inside the image".into()));
            }
            if !g.symbol.is_ascii_digit() {
                return Err(HarnessError::Param(format!("glyph symbol {:?} is not a digit", g.symbol)));
            }
        }
        if self.shapes.len() >= u16::MAX as usize {
            return Err(HarnessError::Param("too many shapes".into()));
        }
        Ok(())
    }

    /// Label of the glyph in the ownership map.
    pub fn glyph_label(&self) -> u16 {
        self.shapes.len() as u16 + 1
    }

    /// Rasterizes the scene and its per-pixel ownership.
    pub fn render(&self) -> (RgbImage, LabelMap) {
        let mut img = RgbImage::from_pixel(self.width, self.height, Rgb(self.background));
        let mut labels = LabelMap::new(self.width, self.height);
        for (i, shape) in self.shapes.iter().enumerate() {
            let (x0, y0, x1, y1) = shape.geometry.bounds(self.width, self.height);
            for y in y0..y1 {
                for x in x0..x1 {
                    if shape.geometry.contains(x as i64, y as i64) {
                        img.put_pixel(x, y, Rgb(shape.fill));
                        labels.set(x, y, i as u16 + 1);
                    }
                }
            }
        }
        if let Some(g) = &self.glyph {
            for v in 0..g.size {
                for u in 0..g.size {
                    let ink = glyph_ink(g.symbol, g.size, u, v);
                    img.put_pixel(g.x + u, g.y + v, Rgb(if ink { INK } else { TAG_FILL }));
                    labels.set(g.x + u, g.y + v, self.glyph_label());
                }
            }
        }
        (img, labels)
    }

    /// Full raster of shape `i`, ignoring occlusion.
    pub fn shape_raster(&self, i: usize) -> Mask {
        let g = self.shapes[i].geometry;
        Mask::from_fn(self.width, self.height, |x, y| g.contains(x as i64, y as i64))
    }

    /// Whether the glyph can be read in a view of `rect`: it lies wholly inside
    /// and spans at least `rho` of the view's shorter side.
    pub fn glyph_readable_in(&self, rect: &PixelRect) -> bool {
        let Some(g) = &self.glyph else { return false };
        let short = rect.width().min(rect.height());
        short > 0 && rect.contains_rect(&g.rect()) && g.size as f64 / short as f64 >= self.rho
    }

    pub fn full_rect(&self) -> PixelRect {
        PixelRect { x0: 0, y0: 0, x1: self.width, y1: self.height }
    }

    pub fn readable_at_full_view(&self) -> bool {
        self.glyph_readable_in(&self.full_rect())
    }

    /// Reads the glyph from a view showing `rect` of `source`. The glyph must
    /// be readable at that scale and its pixels must actually be present in
    /// the view (a segment view may have replaced them with noise).
    pub fn perceive(&self, source: &RgbImage, view: &RgbImage, rect: &PixelRect) -> Option<char> {
        let g = self.glyph.as_ref()?;
        if view.dimensions() != (rect.width(), rect.height()) || !self.glyph_readable_in(rect) {
            return None;
        }
        let intact = (g.y..g.y + g.size)
            .all(|y| (g.x..g.x + g.size).all(|x| view.get_pixel(x - rect.x0, y - rect.y0) == source.get_pixel(x, y)));
        intact.then_some(g.symbol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(size: u32, glyph: u32) -> SyntheticScene {
        SyntheticScene {
            width: size,
            height: size,
            background: [90, 90, 90],
            shapes: vec![],
            glyph: Some(Glyph { symbol: '7', x: size / 2, y: size / 2, size: glyph }),
            rho: 0.05,
        }
    }

    #[test]
    fn readability_inequality() {
        // 16/2048 < 0.05 at full view, 16/200 >= 0.05 in a 200 px zoom
        let s = scene(2048, 16);
        assert!(!s.readable_at_full_view());
        let zoom = PixelRect { x0: 950, y0: 950, x1: 1150, y1: 1150 };
        assert!(s.glyph_readable_in(&zoom));
        // boundary: glyph exactly rho of the shorter side is readable
        let control = scene(320, 16);
        assert!(control.readable_at_full_view());
        let cut = PixelRect { x0: 0, y0: 0, x1: 1030, y1: 1030 };
        assert!(!s.glyph_readable_in(&cut));
    }

    #[test]
    fn glyph_owns_its_pixels() {
        let s = scene(64, 10);
        let (img, labels) = s.render();
        assert_eq!(labels.region(s.glyph_label()).count(), 100);
        assert_eq!(img.get_pixel(0, 0).0, [90, 90, 90]);
        assert_eq!(img.get_pixel(32, 32).0, TAG_FILL);
    }

    #[test]
    fn perception_requires_intact_pixels() {
        let s = scene(64, 10);
        let (img, _) = s.render();
        let rect = PixelRect { x0: 24, y0: 24, x1: 56, y1: 56 };
        let mut view = image::imageops::crop_imm(&img, 24, 24, 32, 32).to_image();
        assert_eq!(s.perceive(&img, &view, &rect), Some('7'));
        view.put_pixel(10, 10, Rgb([1, 2, 3]));
        assert_eq!(s.perceive(&img, &view, &rect), None);
    }

    #[test]
    fn disk_area_matches_raster() {
        let g = Geometry::Disk { cx: 20, cy: 20, r: 10 };
        assert_eq!(g.area(), 317);
        let s = SyntheticScene {
            width: 40,
            height: 40,
            background: [0; 3],
            shapes: vec![Shape { geometry: g, fill: [255, 0, 0], label: "red disk".into() }],
            glyph: None,
            rho: 0.05,
        };
        assert_eq!(s.shape_raster(0).count(), 317);
    }

    #[test]
    fn invalid_scenes() {
        let mut s = scene(64, 10);
        s.rho = 1.5;
        assert!(s.validate().is_err());
        let mut s = scene(64, 10);
        s.glyph = Some(Glyph { symbol: '1', x: 60, y: 0, size: 10 });
        assert!(s.validate().is_err());
    }
}
