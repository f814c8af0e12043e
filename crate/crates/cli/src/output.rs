//! Stamped output files.

use std::fs;
use std::path::{Path, PathBuf};

use bedflow::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const TOOL: &str = "bedflow";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance carried by every file the tool writes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: String,
    pub kind: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub meta: Meta,
    pub data: T,
}

#[derive(Clone, Debug)]
pub struct Writer {
    pub dir: PathBuf,
    pub seed: u64,
    pub hash: String,
}

impl Writer {
    pub fn new(dir: PathBuf, seed: u64, hash: String) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Writer { dir, seed, hash })
    }

    fn meta(&self, kind: &str) -> Meta {
        Meta {
            tool: TOOL.into(),
            version: VERSION.into(),
            seed: self.seed,
            config: self.hash.clone(),
            kind: kind.into(),
        }
    }

    pub fn header(&self) -> String {
        format!("# {TOOL} {VERSION} seed={} config={}\n", self.seed, self.hash)
    }

    /// Writes `name` as a CSV body produced by `body`, after the stamp line.
    pub fn csv(&self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = self.header().into_bytes();
        body(&mut buf)?;
        let path = self.dir.join(name);
        fs::write(&path, buf)?;
        Ok(path)
    }

    pub fn json<T: Serialize>(&self, name: &str, kind: &str, data: &T) -> Result<PathBuf> {
        let env = Envelope {
            meta: self.meta(kind),
            data,
        };
        let mut text = serde_json::to_string_pretty(&env).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        text.push('\n');
        let path = self.dir.join(name);
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// Reads a file written by [`Writer::json`], checking its kind.
pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Envelope<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let env: Envelope<T> = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: not a {kind} file: {e}", path.display())))?;
    if env.meta.kind != kind {
        return Err(Error::Config(format!(
            "{}: expected a {kind} file, found {}",
            path.display(),
            env.meta.kind
        )));
    }
    Ok(env)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let w = Writer::new(dir.path().join("o"), 7, "abc".into()).unwrap();
        let p = w.json("v.json", "numbers", &vec![1.5, 2.0]).unwrap();
        let env: Envelope<Vec<f64>> = read_json(&p, "numbers").unwrap();
        assert_eq!(env.data, vec![1.5, 2.0]);
        assert_eq!(env.meta.seed, 7);
        assert_eq!(env.meta.version, VERSION);
        assert!(read_json::<Vec<f64>>(&p, "record").is_err());
    }

    #[test]
    fn csv_starts_with_stamp() {
        let dir = tempfile::tempdir().unwrap();
        let w = Writer::new(dir.path().to_path_buf(), 3, "ff".into()).unwrap();
        let p = w
            .csv("a.csv", |b| {
                b.extend_from_slice(b"a,b\n1,2\n");
                Ok(())
            })
            .unwrap();
        let text = fs::read_to_string(p).unwrap();
        assert_eq!(text, format!("# bedflow {VERSION} seed=3 config=ff\na,b\n1,2\n"));
    }
}
