//! Desk-scale face-proxy generator with three independent factors.
//!
//! * content: an ellipse ("face") with random centre, axes, orientation and
//!   brightness on a plain ground;
//! * liveness: spoof samples carry a periodic overlay texture inside the
//!   ellipse, real samples carry none;
//! * domain: a per-domain colour cast and Gaussian sensor noise.
//!
//! Every sample is a pure function of `(spec, domain, index)`, so workers can
//! render disjoint index ranges concurrently and get bit-identical output.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestRecord};
use super::{Image, LabeledSample, Liveness};
use crate::error::{Error, Result};

/// Peak intensity modulation of a spoof overlay.
pub const TEXTURE_AMPLITUDE: f64 = 0.12;

/// Base skin tone; every rendered colour is a multiple of it before the
/// domain cast, which keeps luma differences proportional across domains.
const SKIN_TONE: [f64; 3] = [1.0, 0.86, 0.74];

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;
const TINT_STRENGTH: f64 = 0.02;
const NOISE_SIGMAS: [f64; 4] = [0.010, 0.025, 0.040, 0.055];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpoofTexture {
    /// Oriented sinusoidal stripes (moire).
    #[serde(rename = "stripes")]
    Stripes,
    /// Two crossed sinusoids forming a lattice.
    #[serde(rename = "grid")]
    Grid,
    /// Concentric rings around the face centre, softened toward the border.
    #[serde(rename = "blur-halo")]
    BlurHalo,
}

impl SpoofTexture {
    pub const ALL: [SpoofTexture; 3] = [
        SpoofTexture::Stripes,
        SpoofTexture::Grid,
        SpoofTexture::BlurHalo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpoofTexture::Stripes => "stripes",
            SpoofTexture::Grid => "grid",
            SpoofTexture::BlurHalo => "blur-halo",
        }
    }
}

impl fmt::Display for SpoofTexture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpoofTexture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SpoofTexture::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown spoof texture `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticFactorSpec {
    pub n_domains: usize,
    pub n_per_domain: usize,
    pub image_size: usize,
    pub spoof_texture_set: Vec<String>,
    pub seed: u64,
}

impl Default for SyntheticFactorSpec {
    fn default() -> Self {
        Self {
            n_domains: 4,
            n_per_domain: 300,
            image_size: 32,
            spoof_texture_set: SpoofTexture::ALL.iter().map(|t| t.to_string()).collect(),
            seed: 7,
        }
    }
}

impl SyntheticFactorSpec {
    pub fn validate(&self) -> Result<Vec<SpoofTexture>> {
        if self.n_domains < 2 {
            return Err(Error::Config(format!(
                "n_domains must be >= 2, got {}",
                self.n_domains
            )));
        }
        if self.image_size < 8 {
            return Err(Error::Config(format!(
                "image_size must be >= 8, got {}",
                self.image_size
            )));
        }
        if self.spoof_texture_set.is_empty() {
            return Err(Error::Config("spoof_texture_set is empty".into()));
        }
        self.spoof_texture_set.iter().map(|s| s.parse()).collect()
    }
}

/// Colour cast and noise level of one domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainStyle {
    /// Per-channel multiplicative gains (R, G, B).
    pub gains: [f64; 3],
    pub noise_sigma: f64,
}

/// Fixed style of domain `d`: hue angle `d * 137.5°` sets a colour cast of
/// strength 0.02 via `gain_c = 1 + 0.02 cos(hue - c * 120°)`; the noise sigma
/// cycles through 0.010, 0.025, 0.040, 0.055.
pub fn domain_style(domain: usize) -> DomainStyle {
    let hue = domain as f64 * GOLDEN_ANGLE;
    let mut gains = [0.0; 3];
    for (c, g) in gains.iter_mut().enumerate() {
        *g = 1.0 + TINT_STRENGTH * (hue - c as f64 * 2.0 * PI / 3.0).cos();
    }
    DomainStyle {
        gains,
        noise_sigma: NOISE_SIGMAS[domain % NOISE_SIGMAS.len()],
    }
}

/// Geometry and brightness of the face ellipse, in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceContent {
    pub cx: f64,
    pub cy: f64,
    pub semi_x: f64,
    pub semi_y: f64,
    pub angle: f64,
    pub face_level: f64,
    pub ground_level: f64,
}

impl FaceContent {
    pub fn sample<R: Rng>(size: usize, rng: &mut R) -> Self {
        let n = size as f64;
        Self {
            cx: n * rng.random_range(0.38..0.62),
            cy: n * rng.random_range(0.38..0.62),
            semi_x: n * rng.random_range(0.22..0.30),
            semi_y: n * rng.random_range(0.28..0.36),
            angle: rng.random_range(0.0..PI),
            face_level: rng.random_range(0.55..0.75),
            ground_level: rng.random_range(0.12..0.30),
        }
    }

    /// Soft coverage in `[0, 1]` with a one-pixel anti-aliased border.
    fn coverage(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let rho = ((u / self.semi_x).powi(2) + (v / self.semi_y).powi(2)).sqrt();
        let dist = (rho - 1.0) * self.semi_x.min(self.semi_y);
        (0.5 - dist).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextureInstance {
    pub kind: SpoofTexture,
    pub period: f64,
    pub orientation: f64,
    pub phase: f64,
}

impl TextureInstance {
    pub fn sample<R: Rng>(kind: SpoofTexture, rng: &mut R) -> Self {
        Self {
            kind,
            period: rng.random_range(3.0..5.0),
            orientation: rng.random_range(0.0..PI),
            phase: rng.random_range(0.0..2.0 * PI),
        }
    }

    /// Overlay value in `[-1, 1]` at pixel centre `(x, y)`.
    fn value(&self, x: f64, y: f64, face: &FaceContent) -> f64 {
        let w = 2.0 * PI / self.period;
        let (s, c) = self.orientation.sin_cos();
        match self.kind {
            SpoofTexture::Stripes => (w * (c * x + s * y) + self.phase).sin(),
            SpoofTexture::Grid => {
                0.5 * ((w * (c * x + s * y) + self.phase).cos()
                    + (w * (-s * x + c * y) + self.phase).cos())
            }
            SpoofTexture::BlurHalo => {
                let r = ((x - face.cx).powi(2) + (y - face.cy).powi(2)).sqrt();
                let reach = face.semi_x.max(face.semi_y);
                let soften = (1.0 - 0.5 * (r / reach).min(1.0)).max(0.0);
                soften * (w * r + self.phase).sin()
            }
        }
    }
}

/// Render the domain-free intensity field of a face, optionally with a spoof overlay.
pub fn render_face(size: usize, face: &FaceContent, texture: Option<&TextureInstance>) -> Vec<f64> {
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let cov = face.coverage(px, py);
            let mut inner = face.face_level;
            if let Some(t) = texture {
                inner += TEXTURE_AMPLITUDE * t.value(px, py, face);
            }
            out.push(face.ground_level * (1.0 - cov) + inner * cov);
        }
    }
    out
}

impl DomainStyle {
    /// Map an intensity field to an 8-bit-quantized RGB image under this style.
    /// Noise is added only when `rng` is given.
    pub fn apply<R: Rng>(&self, size: usize, intensity: &[f64], rng: Option<&mut R>) -> Image {
        let normal = Normal::new(0.0, self.noise_sigma.max(0.0)).expect("finite sigma");
        let mut data = Vec::with_capacity(size * size * 3);
        let mut rng = rng;
        for &v in intensity {
            for c in 0..3 {
                let mut x = self.gains[c] * SKIN_TONE[c] * v;
                if let Some(r) = rng.as_deref_mut() {
                    x += normal.sample(r);
                }
                data.push(quantize(x));
            }
        }
        Image {
            height: size,
            width: size,
            data,
        }
    }
}

#[inline]
fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn sample_rng(spec: &SyntheticFactorSpec, domain: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream((domain * spec.n_per_domain + index) as u64);
    rng
}

fn relative_path(domain: usize, index: usize) -> String {
    format!("d{domain}/{index:05}.png")
}

/// Render sample `index` of `domain`. Even indices are real, odd are spoof;
/// spoof textures rotate through the configured set.
pub fn generate_sample(
    spec: &SyntheticFactorSpec,
    textures: &[SpoofTexture],
    domain: usize,
    index: usize,
) -> LabeledSample {
    let mut rng = sample_rng(spec, domain, index);
    let size = spec.image_size;
    let face = FaceContent::sample(size, &mut rng);
    let liveness = if index % 2 == 0 {
        Liveness::Real
    } else {
        Liveness::Spoof
    };
    let texture = match liveness {
        Liveness::Real => None,
        Liveness::Spoof => {
            let kind = textures[(index / 2) % textures.len()];
            Some(TextureInstance::sample(kind, &mut rng))
        }
    };
    let intensity = render_face(size, &face, texture.as_ref());
    let image = domain_style(domain).apply(size, &intensity, Some(&mut rng));
    let path = relative_path(domain, index);
    LabeledSample {
        image,
        liveness,
        domain,
        sample_id: path.trim_end_matches(".png").to_string(),
        spoof_type: texture.map(|t| t.kind.to_string()).unwrap_or_default(),
    }
}

pub fn generate_synthetic_dataset(
    spec: &SyntheticFactorSpec,
) -> Result<(Vec<LabeledSample>, Manifest)> {
    let textures = spec.validate()?;
    let mut samples = Vec::with_capacity(spec.n_domains * spec.n_per_domain);
    let mut records = Vec::with_capacity(samples.capacity());
    for domain in 0..spec.n_domains {
        for index in 0..spec.n_per_domain {
            let s = generate_sample(spec, &textures, domain, index);
            records.push(ManifestRecord {
                relative_path: relative_path(domain, index),
                domain,
                liveness: s.liveness,
                spoof_type: s.spoof_type.clone(),
            });
            samples.push(s);
        }
    }
    let manifest = Manifest {
        records,
        root: Default::default(),
        n_domains: spec.n_domains,
    };
    Ok((samples, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n_domains: usize, n_per_domain: usize, seed: u64) -> SyntheticFactorSpec {
        SyntheticFactorSpec {
            n_domains,
            n_per_domain,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn counts_and_balance() {
        let (samples, manifest) = generate_synthetic_dataset(&spec(3, 200, 7)).unwrap();
        assert_eq!(samples.len(), 600);
        assert_eq!(manifest.records.len(), 600);
        let real = samples.iter().filter(|s| s.liveness.is_real()).count();
        assert_eq!(real, 300);
        for d in 0..3 {
            let n = samples.iter().filter(|s| s.domain == d).count();
            let r = samples
                .iter()
                .filter(|s| s.domain == d && s.liveness.is_real())
                .count();
            assert_eq!(n, 200);
            assert_eq!(r, 100);
        }
        assert!(samples.iter().all(|s| s.image.is_valid()));
    }

    #[test]
    fn odd_domain_size_stays_within_one() {
        let (samples, _) = generate_synthetic_dataset(&spec(2, 7, 1)).unwrap();
        let real = samples.iter().filter(|s| s.domain == 0 && s.liveness.is_real()).count();
        assert!(real == 3 || real == 4);
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic_dataset(&spec(2, 20, 11)).unwrap().0;
        let b = generate_synthetic_dataset(&spec(2, 20, 11)).unwrap().0;
        for (x, y) in a.iter().zip(&b) {
            let xb: Vec<u64> = x.image.data.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.image.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        let c = generate_synthetic_dataset(&spec(2, 20, 12)).unwrap().0;
        assert_ne!(a[0].image, c[0].image);
    }

    #[test]
    fn per_index_generation_matches_batch() {
        let s = spec(3, 10, 5);
        let textures = s.validate().unwrap();
        let (all, _) = generate_synthetic_dataset(&s).unwrap();
        let one = generate_sample(&s, &textures, 2, 7);
        assert_eq!(one, all[2 * 10 + 7]);
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(matches!(
            generate_synthetic_dataset(&spec(1, 10, 0)),
            Err(Error::Config(_))
        ));
        let small = SyntheticFactorSpec {
            image_size: 4,
            ..spec(2, 10, 0)
        };
        assert!(matches!(generate_synthetic_dataset(&small), Err(Error::Config(_))));
        let bad = SyntheticFactorSpec {
            spoof_texture_set: vec!["moire".into()],
            ..spec(2, 10, 0)
        };
        assert!(generate_synthetic_dataset(&bad).is_err());
    }

    #[test]
    fn spoof_types_rotate() {
        let s = SyntheticFactorSpec {
            spoof_texture_set: vec!["stripes".into(), "grid".into()],
            ..spec(2, 40, 3)
        };
        let (samples, _) = generate_synthetic_dataset(&s).unwrap();
        let grid = samples.iter().filter(|s| s.spoof_type == "grid").count();
        let stripes = samples.iter().filter(|s| s.spoof_type == "stripes").count();
        assert_eq!(grid, 20);
        assert_eq!(stripes, 20);
        assert!(samples
            .iter()
            .all(|s| s.liveness.is_real() == s.spoof_type.is_empty()));
    }

    #[test]
    fn domain_styles_are_distinct() {
        let a = domain_style(0);
        let b = domain_style(1);
        assert_ne!(a.gains, b.gains);
        assert!(a.gains.iter().all(|g| (g - 1.0).abs() <= TINT_STRENGTH + 1e-12));
    }
}
