//! Model files: a text header terminated by an `end` line, then the flat
//! little-endian f32 weights in declaration order.
//!
//! ```text
//! TPMRET-MODEL
//! format_version = 1
//! arch = input=25 classes=20 pool=flatten blocks=8/2,16/2,32/2
//! seed = 7
//! ...
//! checksum = <sha256 of the weight bytes>
//! end
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ModelParams, TrainMeta};
use crate::checksum;
use crate::error::{Error, Result};
use crate::grid::parse_key_values;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "TPMRET-MODEL";

pub fn write_model(m: &ModelParams) -> Vec<u8> {
    let payload: Vec<u8> = m.weights.iter().flat_map(|w| w.to_le_bytes()).collect();
    let mut h = String::new();
    let _ = writeln!(h, "{MAGIC}");
    let _ = writeln!(h, "format_version = {MODEL_FORMAT_VERSION}");
    let _ = writeln!(h, "arch = {}", m.arch);
    let _ = writeln!(h, "seed = {}", m.seed);
    let _ = writeln!(h, "epochs = {}", m.train_meta.epochs);
    let _ = writeln!(h, "learning_rate = {:?}", m.train_meta.learning_rate);
    let _ = writeln!(h, "final_val_accuracy = {:?}", m.train_meta.final_val_accuracy);
    let _ = writeln!(h, "params = {}", m.weights.len());
    let _ = writeln!(h, "checksum = {}", checksum::digest_bytes(&payload));
    let _ = writeln!(h, "end");
    let mut out = h.into_bytes();
    out.extend(payload);
    out
}

pub fn read_model(bytes: &[u8]) -> Result<ModelParams> {
    const END: &[u8] = b"\nend\n";
    let split = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Format("model header is not terminated".into()))?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::Format("model header is not UTF-8".into()))?;
    let payload = &bytes[split + END.len()..];
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Format("not a model file".into()));
    }
    let kv = parse_key_values(&lines.collect::<Vec<_>>().join("\n"))?;
    let get = |k: &str| -> Result<&str> {
        kv.iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format(format!("model header lacks {k}")))
    };
    let parse_num = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("model header field {k} is not a number")))
    };
    let version = parse_num("format_version")? as u32;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "model format version {version}, expected {MODEL_FORMAT_VERSION}"
        )));
    }
    let params = parse_num("params")? as usize;
    if payload.len() != params * 4 {
        return Err(Error::Format(format!(
            "model payload has {} bytes, header promises {}",
            payload.len(),
            params * 4
        )));
    }
    let expected = get("checksum")?.to_string();
    let found = checksum::digest_bytes(payload);
    if found != expected {
        return Err(Error::Checksum {
            what: "model weights".into(),
            expected,
            found,
        });
    }
    let arch = get("arch")?.parse()?;
    let m = ModelParams {
        arch,
        weights: payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect(),
        seed: parse_num("seed")? as u64,
        train_meta: TrainMeta {
            epochs: parse_num("epochs")? as usize,
            learning_rate: parse_num("learning_rate")?,
            final_val_accuracy: parse_num("final_val_accuracy")?,
        },
    };
    if m.layout()?.total != m.weights.len() {
        return Err(Error::Format("weight count does not match architecture".into()));
    }
    Ok(m)
}

pub fn save_model(m: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, write_model(m))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    read_model(&fs::read(path)?)
}
