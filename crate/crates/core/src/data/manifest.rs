//! Tab-separated corpus manifest.
//!
//! ```text
//! DISFAS-MANIFEST v1<TAB>n_domains=<S>
//! relative_path<TAB>domain<TAB>liveness<TAB>spoof_type
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::Liveness;
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "DISFAS-MANIFEST v1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub relative_path: String,
    pub domain: usize,
    pub liveness: Liveness,
    /// Empty for real samples.
    pub spoof_type: String,
}

impl ManifestRecord {
    /// Relative path without its extension.
    pub fn sample_id(&self) -> &str {
        match self.relative_path.rfind('.') {
            Some(dot) if !self.relative_path[dot..].contains('/') => &self.relative_path[..dot],
            _ => &self.relative_path,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    /// Directory the relative paths resolve against; set from the manifest
    /// location on load.
    pub root: PathBuf,
    pub n_domains: usize,
}

impl Manifest {
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\tn_domains={}\n", self.n_domains);
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.relative_path, r.domain, r.liveness, r.spoof_type
            );
        }
        out
    }

    pub fn parse(text: &str, root: PathBuf) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::ManifestParse {
            line: 1,
            msg: "empty manifest".into(),
        })?;
        let n_domains = parse_header(header)?;
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::ManifestParse {
                    line: lineno,
                    msg: format!("expected 4 tab-separated fields, found {}", fields.len()),
                });
            }
            if fields[0].is_empty() {
                return Err(Error::ManifestParse {
                    line: lineno,
                    msg: "empty relative path".into(),
                });
            }
            let domain: usize = fields[1].parse().map_err(|_| Error::ManifestParse {
                line: lineno,
                msg: format!("bad domain `{}`", fields[1]),
            })?;
            let liveness: Liveness = fields[2]
                .parse()
                .map_err(|msg| Error::ManifestParse { line: lineno, msg })?;
            if domain >= n_domains {
                return Err(Error::ManifestValidation {
                    line: lineno,
                    msg: format!("domain {domain} out of range for n_domains={n_domains}"),
                });
            }
            if liveness.is_real() && !fields[3].is_empty() {
                return Err(Error::ManifestValidation {
                    line: lineno,
                    msg: "real record carries a spoof type".into(),
                });
            }
            records.push(ManifestRecord {
                relative_path: fields[0].to_string(),
                domain,
                liveness,
                spoof_type: fields[3].to_string(),
            });
        }
        if !records.is_empty() {
            for d in 0..n_domains {
                if !records.iter().any(|r| r.domain == d) {
                    return Err(Error::ManifestValidation {
                        line: 1,
                        msg: format!("domains must be contiguous from 0; domain {d} has no records"),
                    });
                }
            }
        }
        Ok(Self {
            records,
            root,
            n_domains,
        })
    }

    /// Every referenced file must exist under `root`.
    pub fn verify_files(&self) -> Result<()> {
        for r in &self.records {
            if !self.root.join(&r.relative_path).is_file() {
                return Err(Error::Ingestion {
                    sample_id: r.sample_id().to_string(),
                    msg: format!("missing file {}", self.root.join(&r.relative_path).display()),
                });
            }
        }
        Ok(())
    }
}

fn parse_header(line: &str) -> Result<usize> {
    let bad = |msg: String| Error::ManifestParse { line: 1, msg };
    let (magic, rest) = line
        .split_once('\t')
        .ok_or_else(|| bad(format!("malformed header `{line}`")))?;
    if magic != MANIFEST_HEADER {
        return Err(bad(format!("unsupported manifest header `{magic}`")));
    }
    let n = rest
        .strip_prefix("n_domains=")
        .and_then(|v| v.parse::<usize>().ok())
        .ok_or_else(|| bad(format!("malformed n_domains field `{rest}`")))?;
    if n == 0 {
        return Err(bad("n_domains must be positive".into()));
    }
    Ok(n)
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    fs::write(path, manifest.to_tsv())?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Manifest::parse(&text, root)
}
