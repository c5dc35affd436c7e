use std::io::Cursor;

use super::ApertureError;

/// Binary raster, row-major, `true` = foreground.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; (width as usize) * (height as usize)] }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![true; (width as usize) * (height as usize)] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity((width as usize) * (height as usize));
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, ApertureError> {
        if bits.len() != (width as usize) * (height as usize) {
            return Err(ApertureError::DimensionMismatch {
                expected: (width, height),
                found: (bits.len() as u32, 1),
            });
        }
        Ok(Self { width, height, bits })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y as usize) * (self.width as usize) + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[(y as usize) * w + x as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_all_zero(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn union_with(&mut self, other: &Mask) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    pub fn subtract(&mut self, other: &Mask) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= !*b;
        }
    }

    /// FNV-1a over dimensions and bits; stable across runs and platforms.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |byte: u8| {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for b in self.width.to_le_bytes().into_iter().chain(self.height.to_le_bytes()) {
            eat(b);
        }
        for chunk in self.bits.chunks(8) {
            let mut byte = 0u8;
            for (i, bit) in chunk.iter().enumerate() {
                byte |= u8::from(*bit) << i;
            }
            eat(byte);
        }
        h
    }

    /// 1-bit grayscale PNG, white = foreground.
    pub fn to_png(&self) -> Result<Vec<u8>, ApertureError> {
        let row_bytes = (self.width as usize).div_ceil(8);
        let mut packed = vec![0u8; row_bytes * self.height as usize];
        for y in 0..self.height as usize {
            for x in 0..self.width as usize {
                if self.bits[y * self.width as usize + x] {
                    packed[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::One);
            let mut writer = enc.write_header().map_err(|e| ApertureError::Codec(e.to_string()))?;
            writer.write_image_data(&packed).map_err(|e| ApertureError::Codec(e.to_string()))?;
        }
        Ok(out)
    }

    /// Decodes any grayscale/colour PNG; luminance above mid-range is foreground.
    pub fn from_png(bytes: &[u8]) -> Result<Self, ApertureError> {
        let img = image::ImageReader::with_format(Cursor::new(bytes), image::ImageFormat::Png)
            .decode()
            .map_err(|e| ApertureError::Codec(e.to_string()))?
            .to_luma8();
        let (w, h) = img.dimensions();
        Ok(Self::from_fn(w, h, |x, y| img.get_pixel(x, y).0[0] > 127))
    }
}
