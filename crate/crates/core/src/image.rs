use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pixel grid stored height × width × channels, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if height * width * channels != pixels.len() {
            return Err(Error::Input(format!(
                "image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Image {
            height,
            width,
            channels,
            pixels: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let at = (y * self.width + x) * self.channels;
        &self.pixels[at..at + self.channels]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, value: &[f32]) {
        let at = (y * self.width + x) * self.channels;
        self.pixels[at..at + self.channels].copy_from_slice(value);
    }

    /// Flattens non-overlapping `patch × patch` tiles in raster order. Each row
    /// of the result holds one tile's pixels, themselves in raster order.
    pub fn patches(&self, patch: usize) -> Result<(usize, Vec<f32>)> {
        if patch == 0 || self.height % patch != 0 || self.width % patch != 0 {
            return Err(Error::Input(format!(
                "{}x{} image does not tile into {patch}x{patch} patches",
                self.height, self.width
            )));
        }
        let (gh, gw) = (self.height / patch, self.width / patch);
        let mut out = Vec::with_capacity(self.pixels.len());
        for py in 0..gh {
            for px in 0..gw {
                for y in py * patch..(py + 1) * patch {
                    for x in px * patch..(px + 1) * patch {
                        out.extend_from_slice(self.pixel(y, x));
                    }
                }
            }
        }
        Ok((gh * gw, out))
    }
}
