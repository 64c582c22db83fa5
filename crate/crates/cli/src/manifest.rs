use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use eventdehaze::pipeline::config::{format_kv, Pairs};
use sha2::{Digest, Sha256};

/// Record of one successful invocation, stored next to its outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub verb: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    /// Effective settings after merging defaults, config file and flags.
    pub config: Pairs,
    pub outputs: Vec<PathBuf>,
    pub wall: Duration,
}

impl RunManifest {
    pub fn file_name(verb: &str) -> String {
        format!("{verb}.manifest")
    }

    /// SHA-256 of the effective settings in `key=value` form.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(format_kv(&self.config).as_bytes()))
    }

    pub fn to_text(&self) -> String {
        let mut pairs: Pairs = vec![
            ("verb".into(), self.verb.clone()),
            ("args".into(), self.args.join(" ")),
            (
                "seed".into(),
                self.seed.map_or_else(|| "none".into(), |s| s.to_string()),
            ),
            ("config_hash".into(), self.config_hash()),
            ("version".into(), env!("CARGO_PKG_VERSION").into()),
            ("core_version".into(), eventdehaze::VERSION.into()),
            ("rng".into(), eventdehaze::rng::RNG_ALGORITHM.into()),
            ("wall_seconds".into(), format!("{:.3}", self.wall.as_secs_f64())),
        ];
        for o in &self.outputs {
            pairs.push(("output".into(), o.display().to_string()));
        }
        for (k, v) in &self.config {
            pairs.push((format!("config.{k}"), v.clone()));
        }
        format_kv(&pairs)
    }

    /// Write via a temporary file and rename, so a reader never sees a
    /// half-written manifest.
    pub fn write_atomic(&self, dir: &Path) -> io::Result<PathBuf> {
        let path = dir.join(Self::file_name(&self.verb));
        let tmp = dir.join(format!(".{}.tmp", Self::file_name(&self.verb)));
        fs::write(&tmp, self.to_text())?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }
}
