//! Parameter checkpoints: a JSON manifest plus one raw little-endian f64
//! payload per layer (weights row-major, then biases).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{Layer, SirenParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamManifest {
    pub layer_sizes: Vec<usize>,
    pub omega0: f64,
    pub seed: u64,
    pub config_hash: String,
    pub layers: Vec<LayerFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn layer_bytes(l: &Layer) -> Vec<u8> {
    l.weight
        .iter()
        .chain(&l.bias)
        .flat_map(|v| v.to_le_bytes())
        .collect()
}

/// Writes `<name>.json` and `<name>.layer<i>.f64` under `dir`; returns the manifest.
pub fn save_params(
    p: &SirenParams,
    dir: &Path,
    name: &str,
    seed: u64,
    config_hash: &str,
) -> Result<ParamManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut layers = Vec::with_capacity(p.layers.len());
    for (i, l) in p.layers.iter().enumerate() {
        let file = format!("{name}.layer{i}.f64");
        let bytes = layer_bytes(l);
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        layers.push(LayerFile {
            file,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = ParamManifest {
        layer_sizes: p.layer_sizes(),
        omega0: p.omega0,
        seed,
        config_hash: config_hash.to_string(),
        layers,
    };
    let path = dir.join(format!("{name}.json"));
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads a checkpoint, verifying every payload against its recorded hash.
pub fn load_params(dir: &Path, name: &str) -> Result<(SirenParams, ParamManifest)> {
    let path = dir.join(format!("{name}.json"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ParamManifest = serde_json::from_str(&text)?;
    let sizes = &manifest.layer_sizes;
    if sizes.len() < 3 || sizes.len() - 1 != manifest.layers.len() {
        return Err(Error::Format(format!("{}: inconsistent layer list", path.display())));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, lf) in manifest.layers.iter().enumerate() {
        let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
        let lpath = dir.join(&lf.file);
        let bytes = fs::read(&lpath).map_err(|e| Error::io(&lpath, e))?;
        let digest = sha256_hex(&bytes);
        if digest != lf.sha256 {
            return Err(Error::Integrity(format!(
                "{}: sha256 {digest} does not match manifest {}",
                lpath.display(),
                lf.sha256
            )));
        }
        let expected = (fan_in * fan_out + fan_out) * 8;
        if bytes.len() != expected {
            return Err(Error::ShortPayload {
                path: lpath,
                expected,
                actual: bytes.len(),
            });
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (w, b) = values.split_at(fan_in * fan_out);
        layers.push(Layer {
            fan_in,
            fan_out,
            weight: w.to_vec(),
            bias: b.to_vec(),
        });
    }
    let params = SirenParams {
        layers,
        omega0: manifest.omega0,
    };
    params.check_shapes()?;
    Ok((params, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use crate::siren::init_siren;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = init_siren(2, 7, 30.0, &mut stream(2, Stream::Test));
        let m = save_params(&p, dir.path(), "forward", 2, "abc").unwrap();
        let (q, m2) = load_params(dir.path(), "forward").unwrap();
        assert_eq!(p, q);
        assert_eq!(m, m2);
        assert_eq!(m.layer_sizes, vec![3, 7, 7, 3]);
    }

    #[test]
    fn tampered_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = init_siren(1, 4, 30.0, &mut stream(2, Stream::Test));
        save_params(&p, dir.path(), "net", 0, "").unwrap();
        let f = dir.path().join("net.layer1.f64");
        let mut bytes = fs::read(&f).unwrap();
        bytes[0] ^= 1;
        fs::write(&f, bytes).unwrap();
        assert!(matches!(load_params(dir.path(), "net"), Err(Error::Integrity(_))));
    }
}
