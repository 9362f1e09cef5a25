//! Samples, manifests, synthetic generation and content targets.

mod content;
mod io;
mod manifest;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use content::{content_target, ContentMode, ContentTarget};
pub use io::{load_dataset, read_content_target, read_png, write_content_target, write_png};
pub use manifest::{load_manifest, write_manifest, Manifest, ManifestRecord, MANIFEST_HEADER};
pub use synth::{
    domain_style, generate_sample, generate_synthetic_dataset, render_face, DomainStyle,
    FaceContent, SpoofTexture, SyntheticFactorSpec, TextureInstance, TEXTURE_AMPLITUDE,
};

/// An RGB image stored row-major as `height × width × 3` interleaved values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Contract(format!(
                "image buffer holds {} values, expected {}x{}x3",
                data.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn is_valid(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    /// Luma (BT.601 weights) per pixel, row-major.
    pub fn grayscale(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Liveness {
    Spoof = 0,
    Real = 1,
}

impl Liveness {
    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(v: usize) -> Option<Self> {
        match v {
            0 => Some(Liveness::Spoof),
            1 => Some(Liveness::Real),
            _ => None,
        }
    }

    pub fn is_real(self) -> bool {
        self == Liveness::Real
    }
}

impl fmt::Display for Liveness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

impl FromStr for Liveness {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "0" => Ok(Liveness::Spoof),
            "1" => Ok(Liveness::Real),
            other => Err(format!("liveness must be 0 or 1, got `{other}`")),
        }
    }
}

/// One training or evaluation image with its ground-truth factors.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub image: Image,
    pub liveness: Liveness,
    pub domain: usize,
    pub sample_id: String,
    /// Empty for real samples.
    pub spoof_type: String,
}
