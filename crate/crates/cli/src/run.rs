use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ccreg::siren::sha256_hex;
use serde::Serialize;
use serde_json::Value;

pub const MANIFEST_FILE: &str = "manifest.json";

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug)]
pub enum CmdError {
    Input(String),
    Numerical(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Input(_) => EXIT_INPUT,
            CmdError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CmdError::Input(m) | CmdError::Numerical(m) => m,
        }
    }
}

impl From<ccreg::Error> for CmdError {
    fn from(e: ccreg::Error) -> Self {
        match e {
            ccreg::Error::NonFiniteGradient { .. } | ccreg::Error::NonFiniteLoss { .. } => {
                CmdError::Numerical(e.to_string())
            }
            _ => CmdError::Input(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CmdError {
    fn from(e: serde_json::Error) -> Self {
        CmdError::Input(e.to_string())
    }
}

pub fn io_error(path: &Path, e: std::io::Error) -> CmdError {
    CmdError::Input(format!("{}: {e}", path.display()))
}

/// What a command has resolved so far; becomes the run manifest.
#[derive(Debug, Default)]
pub struct RunContext {
    pub config: Value,
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
}

impl RunContext {
    pub fn hash_file(&mut self, path: &Path) -> Result<(), CmdError> {
        let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Hashes a volume header and the payload it names.
    pub fn hash_volume(&mut self, path: &Path) -> Result<(), CmdError> {
        self.hash_file(path)?;
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let header: Value = serde_json::from_str(&text)
            .map_err(|e| CmdError::Input(format!("{}: {e}", path.display())))?;
        if let Some(data) = header.get("data").and_then(Value::as_str) {
            let payload = path.parent().unwrap_or(Path::new("")).join(data);
            self.hash_file(&payload)?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub status: String,
    pub exit_code: i32,
    pub error: Option<String>,
    pub args: Value,
    pub config: Value,
    pub input_hashes: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn write(&self, out_dir: &Path) -> std::io::Result<PathBuf> {
        fs::create_dir_all(out_dir)?;
        let path = out_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

pub fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CmdError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| CmdError::Input(format!("{}: {e}", path.display())))
}
