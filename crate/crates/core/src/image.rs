//! Dense row-major image buffers with interleaved channels.

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![T::zero(); width * height * channels] }
    }

    pub fn filled(width: usize, height: usize, value: &[T]) -> Self {
        let mut data = Vec::with_capacity(width * height * value.len());
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        Self { width, height, channels: value.len(), data }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "{}×{}×{} image needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [T] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, o: &Self) -> bool {
        self.width == o.width && self.height == o.height && self.channels == o.channels
    }

    pub fn check_same_shape(&self, o: &Self, what: &str) -> Result<()> {
        if self.same_shape(o) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{what}: shape {}×{}×{} vs {}×{}×{}",
                self.width, self.height, self.channels, o.width, o.height, o.channels
            )))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::lit(v.val())).collect(),
        }
    }

    /// A single channel as a new one-channel image.
    pub fn channel(&self, c: usize) -> Self {
        let data = self.data.chunks_exact(self.channels).map(|p| p[c]).collect();
        Self { width: self.width, height: self.height, channels: 1, data }
    }

    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        self.data.iter().zip(&o.data).map(|(a, b)| (a.val() - b.val()).abs()).fold(0.0, f64::max)
    }
}
