use crate::error::{DeblurError, Result};

/// Rec. 601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// A planar image of `f64` intensities, nominally in `[0, 1]`.
///
/// Channels are stored one after another, each in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Zero-filled image.
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || width == 0 || height == 0 {
            return Err(DeblurError::Dimension(format!(
                "image must be non-empty, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(DeblurError::Dimension(format!(
                "expected {} samples for {width}x{height}x{channels}, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DeblurError::Dimension("image contains non-finite samples".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Single-channel image from a row-major buffer.
    pub fn gray(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(width, height, 1, data)
    }

    /// Single-channel image with `f(x, y)` at column `x`, row `y`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Pixels per channel.
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Sample of channel 0.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixel_count();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copy of channel `c` as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.plane(c).to_vec(),
        }
    }

    /// Stacks equally sized single-channel images into one multi-channel image.
    pub fn from_channels(planes: &[Image]) -> Result<Image> {
        let first = planes
            .first()
            .ok_or_else(|| DeblurError::Channel("no channels to stack".into()))?;
        let mut data = Vec::with_capacity(first.pixel_count() * planes.len());
        for p in planes {
            if p.dims() != first.dims() || p.channels != 1 {
                return Err(DeblurError::Shape("channel planes differ in shape".into()));
            }
            data.extend_from_slice(&p.data);
        }
        Ok(Image {
            width: first.width,
            height: first.height,
            channels: planes.len(),
            data,
        })
    }

    pub fn ensure_gray(&self) -> Result<()> {
        if self.channels != 1 {
            return Err(DeblurError::Channel(format!(
                "expected a single-channel image, got {} channels",
                self.channels
            )));
        }
        Ok(())
    }

    pub fn ensure_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() || self.channels != other.channels {
            return Err(DeblurError::Shape(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        Ok(())
    }

    /// Gray-scale version; three-channel input uses Rec. 601 luma, other
    /// channel counts average their planes.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.pixel_count();
        let mut out = vec![0.0; n];
        if self.channels == 3 {
            for (c, w) in LUMA_WEIGHTS.iter().enumerate() {
                for (o, v) in out.iter_mut().zip(self.plane(c)) {
                    *o += w * v;
                }
            }
        } else {
            let scale = 1.0 / self.channels as f64;
            for c in 0..self.channels {
                for (o, v) in out.iter_mut().zip(self.plane(c)) {
                    *o += scale * v;
                }
            }
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: out,
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Sum of squared differences against an image of identical shape.
    pub fn squared_distance(&self, other: &Image) -> Result<f64> {
        self.ensure_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    /// Rectangular crop with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Image> {
        if x0 + width > self.width || y0 + height > self.height || width == 0 || height == 0 {
            return Err(DeblurError::Dimension(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in y0..y0 + height {
                data.extend_from_slice(&plane[y * self.width + x0..y * self.width + x0 + width]);
            }
        }
        Ok(Image {
            width,
            height,
            channels: self.channels,
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Horizontal and vertical derivative responses of a single-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientPair {
    pub gx: Image,
    pub gy: Image,
}

impl GradientPair {
    pub fn dims(&self) -> (usize, usize) {
        self.gx.dims()
    }

    /// Per-pixel Euclidean gradient norm.
    pub fn magnitude(&self) -> Vec<f64> {
        self.gx
            .data()
            .iter()
            .zip(self.gy.data())
            .map(|(a, b)| a.hypot(*b))
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.gx.data().iter().chain(self.gy.data()).all(|v| *v == 0.0)
    }
}
