use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

/// SHA-256 of the canonical JSON form of the effective configuration.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String, Failure> {
    let bytes = serde_json::to_vec(config).map_err(|e| Failure::usage(format!("config: {e}")))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Output directory plus the metadata stamped on every file in it.
pub struct Sink {
    dir: PathBuf,
    command: &'static str,
    hash: String,
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    meta: Meta<'a>,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Serialize)]
struct Meta<'a> {
    command: &'a str,
    config_hash: &'a str,
    version: &'a str,
}

impl Sink {
    pub fn new(dir: &Path, command: &'static str, hash: String) -> Result<Self, Failure> {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            hash,
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, Failure> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| Failure::io(&path, e))?;
        Ok(BufWriter::new(f))
    }

    /// JSON object with a leading `meta` block holding the config hash.
    pub fn json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<(), Failure> {
        let mut w = self.create(name)?;
        let stamped = Stamped {
            meta: Meta {
                command: self.command,
                config_hash: &self.hash,
                version: env!("CARGO_PKG_VERSION"),
            },
            body,
        };
        let path = self.dir.join(name);
        serde_json::to_writer_pretty(&mut w, &stamped)
            .map_err(|e| Failure::usage(format!("serializing {name}: {e}")))?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| Failure::io(&path, e))
    }

    /// CSV whose first line is `# config_hash: <hash>`.
    pub fn csv(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
    ) -> Result<(), Failure> {
        let path = self.dir.join(name);
        let hash = self.hash.clone();
        let mut w = self.create(name)?;
        writeln!(w, "# config_hash: {hash}")
            .and_then(|_| fill(&mut w))
            .and_then(|_| w.flush())
            .map_err(|e| Failure::io(&path, e))
    }
}
