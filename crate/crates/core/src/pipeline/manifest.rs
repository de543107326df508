//! Provenance record written next to every output of a run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::{sha256_tag, DATASET_VERSION};

use super::checkpoint::CHECKPOINT_VERSION;
use super::config::RunConfig;
use super::evaluate::PREDICTIONS_VERSION;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub checksum: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            checksum: sha256_tag(&bytes),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seeds: Vec<u64>,
    pub config: Option<RunConfig>,
    /// Remaining command-line settings, by flag name.
    pub settings: BTreeMap<String, String>,
    pub format_versions: BTreeMap<String, u32>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let format_versions = [
            ("dataset", DATASET_VERSION),
            ("checkpoint", CHECKPOINT_VERSION),
            ("predictions", PREDICTIONS_VERSION),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seeds: Vec::new(),
            config: None,
            settings: BTreeMap::new(),
            format_versions,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn setting(mut self, key: &str, value: impl ToString) -> Self {
        self.settings.insert(key.into(), value.to_string());
        self
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs.push(FileRecord::of(path)?);
        Ok(self)
    }

    /// `<dir>/manifest.json` for a directory, `<file>.manifest.json` otherwise.
    pub fn location(output: &Path) -> PathBuf {
        if output.is_dir() {
            output.join("manifest.json")
        } else {
            let mut name = output
                .file_name()
                .map(|n| n.to_os_string())
                .unwrap_or_default();
            name.push(".manifest.json");
            output.with_file_name(name)
        }
    }

    /// Writes the manifest beside `output` and returns its path.
    pub fn write_beside(&self, output: &Path) -> Result<PathBuf> {
        let path = Self::location(output);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn location_rules() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            Manifest::location(dir.path()),
            dir.path().join("manifest.json")
        );
        let f = dir.path().join("report.txt");
        assert_eq!(
            Manifest::location(&f),
            dir.path().join("report.txt.manifest.json")
        );
    }

    #[test]
    fn written_manifest_parses_back() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.bin");
        std::fs::write(&input, b"abc").unwrap();
        let mut m = Manifest::new("eval")
            .setting("window", 5)
            .input(&input)
            .unwrap();
        m.seeds = vec![1, 2];
        m.outputs.push(dir.path().join("out.txt"));
        let path = m.write_beside(&dir.path().join("out.txt")).unwrap();
        let back: Manifest = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            back.inputs[0].checksum,
            "sha256:ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
