use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::content::ContentTarget;
use super::manifest::Manifest;
use super::{Image, LabeledSample};
use crate::error::{Error, Result};

/// Write an image as an 8-bit RGB PNG.
pub fn write_png(image: &Image, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, image.width as u32, image.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = image
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Image(e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Image(e.to_string()))?;
    writer.finish().map_err(|e| Error::Image(e.to_string()))?;
    Ok(())
}

/// Read a PNG as RGB in `[0, 1]`. Grey and alpha variants are expanded or dropped.
pub fn read_png(path: &Path) -> Result<Image> {
    let file = BufReader::new(File::open(path)?);
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Image(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let mut data = Vec::with_capacity(w * h * 3);
    for px in buf[..info.buffer_size()].chunks_exact(channels) {
        let rgb = match channels {
            1 | 2 => [px[0]; 3],
            _ => [px[0], px[1], px[2]],
        };
        data.extend(rgb.iter().map(|&b| b as f64 / 255.0));
    }
    Image::new(h, w, data)
}

/// Load every image referenced by the manifest.
pub fn load_dataset(manifest: &Manifest) -> Result<Vec<LabeledSample>> {
    manifest.verify_files()?;
    manifest
        .records
        .iter()
        .map(|r| {
            let image = read_png(&manifest.root.join(&r.relative_path)).map_err(|e| {
                Error::Ingestion {
                    sample_id: r.sample_id().to_string(),
                    msg: e.to_string(),
                }
            })?;
            Ok(LabeledSample {
                image,
                liveness: r.liveness,
                domain: r.domain,
                sample_id: r.sample_id().to_string(),
                spoof_type: r.spoof_type.clone(),
            })
        })
        .collect()
}

/// Store a content map as `<root>/<sample_id>.ct`: raw little-endian float32, row-major.
pub fn write_content_target(root: &Path, sample_id: &str, target: &ContentTarget) -> Result<()> {
    let path = root.join(format!("{sample_id}.ct"));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let bytes: Vec<u8> = target
        .map
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_content_target(root: &Path, sample_id: &str, size: usize) -> Result<ContentTarget> {
    let path = root.join(format!("{sample_id}.ct"));
    let ingest = |msg: String| Error::Ingestion {
        sample_id: sample_id.to_string(),
        msg,
    };
    let bytes = fs::read(&path)
        .map_err(|e| ingest(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() != size * size * 4 {
        return Err(ingest(format!(
            "{} holds {} bytes, expected {} for a {size}x{size} map",
            path.display(),
            bytes.len(),
            size * size * 4
        )));
    }
    let map: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if map.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
        return Err(ingest("content map values must lie in [0, 1]".into()));
    }
    Ok(ContentTarget { size, map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{content_target, generate_synthetic_dataset, write_manifest, ContentMode};
    use crate::data::{load_manifest, SyntheticFactorSpec};

    #[test]
    fn png_round_trip_is_exact_for_generated_images() {
        let spec = SyntheticFactorSpec {
            n_domains: 2,
            n_per_domain: 4,
            ..Default::default()
        };
        let (samples, mut manifest) = generate_synthetic_dataset(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for (s, r) in samples.iter().zip(&manifest.records) {
            write_png(&s.image, &dir.path().join(&r.relative_path)).unwrap();
        }
        manifest.root = dir.path().to_path_buf();
        write_manifest(&manifest, &dir.path().join("manifest.tsv")).unwrap();
        let loaded = load_dataset(&load_manifest(&dir.path().join("manifest.tsv")).unwrap()).unwrap();
        assert_eq!(loaded, samples);
    }

    #[test]
    fn precomputed_targets() {
        let dir = tempfile::tempdir().unwrap();
        let t = ContentTarget {
            size: 4,
            map: (0..16).map(|i| i as f64 / 16.0).collect(),
        };
        write_content_target(dir.path(), "d0/00001", &t).unwrap();
        let mode = ContentMode::Precomputed(dir.path().to_path_buf());
        let img = Image::zeros(8, 8);
        assert_eq!(content_target(&img, "d0/00001", &mode, 4).unwrap(), t);
        match content_target(&img, "d0/00002", &mode, 4) {
            Err(Error::Ingestion { sample_id, .. }) => assert_eq!(sample_id, "d0/00002"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(content_target(&img, "d0/00001", &mode, 8).is_err());
    }
}
