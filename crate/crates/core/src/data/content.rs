use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::io::read_content_target;
use super::Image;
use crate::error::{Error, Result};

/// Liveness-agnostic reconstruction target for the content decoder,
/// a `size × size × 1` map in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentTarget {
    pub size: usize,
    pub map: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentMode {
    /// Downsampled foreground mask computed from the image itself.
    ShapeMask,
    /// Raw float32 maps stored as `<root>/<sample_id>.ct`.
    Precomputed(PathBuf),
}

pub fn content_target(
    image: &Image,
    sample_id: &str,
    mode: &ContentMode,
    size: usize,
) -> Result<ContentTarget> {
    match mode {
        ContentMode::ShapeMask => shape_mask(image, size),
        ContentMode::Precomputed(root) => read_content_target(root, sample_id, size),
    }
}

/// `|luma - background|`, area-pooled to `size × size` and min-max normalized.
/// The background level is the median luma of the border pixels.
fn shape_mask(image: &Image, size: usize) -> Result<ContentTarget> {
    if size == 0 || image.height % size != 0 || image.width % size != 0 {
        return Err(Error::Contract(format!(
            "content target size {size} must divide the {}x{} image",
            image.height, image.width
        )));
    }
    if !image.is_valid() {
        return Err(Error::Contract("image values must lie in [0, 1]".into()));
    }
    let gray = image.grayscale();
    let (h, w) = (image.height, image.width);
    let mut border: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| y == 0 || x == 0 || y == h - 1 || x == w - 1)
        .map(|(y, x)| gray[y * w + x])
        .collect();
    border.sort_by(f64::total_cmp);
    let ground = border[border.len() / 2];

    let (fy, fx) = (h / size, w / size);
    let mut map = vec![0.0; size * size];
    for (i, cell) in map.iter_mut().enumerate() {
        let (cy, cx) = (i / size, i % size);
        let mut acc = 0.0;
        for y in cy * fy..(cy + 1) * fy {
            for x in cx * fx..(cx + 1) * fx {
                acc += (gray[y * w + x] - ground).abs();
            }
        }
        *cell = acc / (fy * fx) as f64;
    }
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    for v in &mut map {
        *v = if range > 1e-12 { (*v - lo) / range } else { 0.0 };
    }
    Ok(ContentTarget { size, map })
}

#[cfg(test)]
mod tests {
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::{domain_style, render_face, FaceContent, SpoofTexture, TextureInstance};

    fn face() -> FaceContent {
        FaceContent {
            cx: 15.0,
            cy: 17.0,
            semi_x: 8.0,
            semi_y: 10.0,
            angle: 0.4,
            face_level: 0.65,
            ground_level: 0.2,
        }
    }

    #[test]
    fn zero_image_gives_zero_map() {
        let t = content_target(&Image::zeros(32, 32), "x", &ContentMode::ShapeMask, 16).unwrap();
        assert_eq!(t.map.len(), 256);
        assert!(t.map.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_contract() {
        let img = domain_style(0).apply::<ChaCha8Rng>(32, &render_face(32, &face(), None), None);
        let t = content_target(&img, "x", &ContentMode::ShapeMask, 16).unwrap();
        assert_eq!(t.size, 16);
        assert_eq!(t.map.len(), 16 * 16);
        let max = t.map.iter().copied().fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
        assert!(content_target(&img, "x", &ContentMode::ShapeMask, 12).is_err());
    }

    #[test]
    fn invariant_to_domain_colour_cast() {
        let field = render_face(32, &face(), None);
        let base = domain_style(0).apply::<ChaCha8Rng>(32, &field, None);
        let t0 = content_target(&base, "x", &ContentMode::ShapeMask, 16).unwrap();
        for d in 1..8 {
            let img = domain_style(d).apply::<ChaCha8Rng>(32, &field, None);
            let t = content_target(&img, "x", &ContentMode::ShapeMask, 16).unwrap();
            let linf = t0
                .map
                .iter()
                .zip(&t.map)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(linf <= 0.1, "domain {d}: {linf}");
        }
    }

    #[test]
    fn spoof_overlay_barely_moves_the_target() {
        let field_real = render_face(32, &face(), None);
        let texture = TextureInstance {
            kind: SpoofTexture::Stripes,
            period: 4.0,
            orientation: 0.3,
            phase: 0.0,
        };
        let field_spoof = render_face(32, &face(), Some(&texture));
        let style = domain_style(1);
        let a = content_target(
            &style.apply::<ChaCha8Rng>(32, &field_real, None),
            "a",
            &ContentMode::ShapeMask,
            16,
        )
        .unwrap();
        let b = content_target(
            &style.apply::<ChaCha8Rng>(32, &field_spoof, None),
            "b",
            &ContentMode::ShapeMask,
            16,
        )
        .unwrap();
        // differences are confined to the face interior
        let mask = content_target(
            &style.apply::<ChaCha8Rng>(32, &field_real, None),
            "a",
            &ContentMode::ShapeMask,
            16,
        )
        .unwrap();
        for ((x, y), m) in a.map.iter().zip(&b.map).zip(&mask.map) {
            if *m < 0.05 {
                assert!((x - y).abs() < 1e-9);
            }
        }
        let l2 = a
            .map
            .iter()
            .zip(&b.map)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(l2 < 2.0, "l2 gap {l2}");
    }
}
