//! Checkpoint files: a JSON header (schema version, element type, training
//! step/phase, model config, parameter manifest) followed by raw
//! little-endian buffers in manifest order.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ScheduleConfig;
use crate::error::{Error, Result};
use crate::tensor::optim::Adam;
use crate::tensor::param::Param;
use crate::tensor::Scalar;
use crate::unet::DenoiserConfig;

const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    step: u64,
    phase: u8,
    model: DenoiserConfig,
    schedule: ScheduleConfig,
    params: Vec<ParamEntry>,
    optimizer: Option<OptimizerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    frozen: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerEntry {
    step: u64,
    /// First/second moment buffers follow the parameter buffers, two per
    /// listed name, each the length of the matching parameter.
    names: Vec<String>,
}

pub fn save<T: Scalar>(
    path: &Path,
    model: &DenoiserConfig,
    schedule: &ScheduleConfig,
    params: &[Param<T>],
    step: u64,
    phase: u8,
    optimizer: Option<&Adam<T>>,
) -> Result<()> {
    let header = Header {
        version: VERSION,
        dtype: T::DTYPE.to_string(),
        step,
        phase,
        model: model.clone(),
        schedule: schedule.clone(),
        params: params
            .iter()
            .map(|p| ParamEntry {
                name: p.name(),
                shape: p.shape(),
                frozen: p.frozen(),
            })
            .collect(),
        optimizer: optimizer.map(|opt| {
            let (opt_step, moments) = opt.state();
            let mut names: Vec<String> = moments.keys().cloned().collect();
            names.sort();
            OptimizerEntry {
                step: opt_step,
                names,
            }
        }),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;

    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(&(header_json.len() as u64).to_le_bytes())?;
    file.write_all(&header_json)?;
    for p in params {
        for v in p.value().data().iter() {
            file.write_all(&v.to_le_bytes_vec())?;
        }
    }
    if let (Some(opt), Some(entry)) = (optimizer, &header.optimizer) {
        let (_, moments) = opt.state();
        for name in &entry.names {
            let (m, v) = &moments[name];
            for buf in [m, v] {
                for x in buf.iter() {
                    file.write_all(&x.to_le_bytes_vec())?;
                }
            }
        }
    }
    file.flush()?;
    Ok(())
}

/// A decoded checkpoint; apply it to a freshly built model with
/// [`Loaded::apply`].
pub struct Loaded<T: Scalar> {
    pub model: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub step: u64,
    pub phase: u8,
    pub dtype: String,
    tensors: Vec<(String, Vec<usize>, bool, Vec<T>)>,
    pub optimizer: Option<(u64, HashMap<String, (Vec<T>, Vec<T>)>)>,
}

pub fn load<T: Scalar>(path: &Path) -> Result<Loaded<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|_| Error::Checkpoint("file too short for header length".into()))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    if header_len > 64 << 20 {
        return Err(Error::Checkpoint(format!(
            "implausible header length {header_len}"
        )));
    }
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {VERSION})",
            header.version
        )));
    }

    // Buffers are stored in the file's element type and converted through
    // f64 if the caller asks for the other width.
    let read_buf = |file: &mut dyn Read, n: usize| -> Result<Vec<T>> {
        let width = match header.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(Error::Checkpoint(format!("unknown dtype {other:?}"))),
        };
        let mut bytes = vec![0u8; n * width];
        file.read_exact(&mut bytes)
            .map_err(|_| Error::Checkpoint("truncated tensor data".into()))?;
        let out = bytes
            .chunks_exact(width)
            .map(|chunk| match header.dtype.as_str() {
                "f32" => T::fl(f32::from_le_slice(chunk).as_f64()),
                _ => T::fl(f64::from_le_slice(chunk)),
            })
            .collect();
        Ok(out)
    };

    let mut tensors = Vec::with_capacity(header.params.len());
    for e in &header.params {
        let n = e.shape.iter().product::<usize>();
        tensors.push((e.name.clone(), e.shape.clone(), e.frozen, read_buf(&mut file, n)?));
    }
    let sizes: HashMap<&str, usize> = header
        .params
        .iter()
        .map(|e| (e.name.as_str(), e.shape.iter().product()))
        .collect();
    let optimizer = match &header.optimizer {
        None => None,
        Some(entry) => {
            let mut moments = HashMap::new();
            for name in &entry.names {
                let n = *sizes.get(name.as_str()).ok_or_else(|| {
                    Error::Checkpoint(format!("optimizer buffer for unknown parameter {name}"))
                })?;
                let m = read_buf(&mut file, n)?;
                let v = read_buf(&mut file, n)?;
                moments.insert(name.clone(), (m, v));
            }
            Some((entry.step, moments))
        }
    };

    Ok(Loaded {
        model: header.model,
        schedule: header.schedule,
        step: header.step,
        phase: header.phase,
        dtype: header.dtype,
        tensors,
        optimizer,
    })
}

impl<T: Scalar> Loaded<T> {
    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.tensors
            .iter()
            .find(|(n, ..)| n == name)
            .map(|(_, _, _, d)| d.as_slice())
    }

    /// Copy stored values into `params`. Every parameter must match a
    /// stored entry of the same shape; any difference is reported by name.
    pub fn apply(&self, params: &[Param<T>]) -> Result<()> {
        let mut diffs = Vec::new();
        let stored: HashMap<&str, (&Vec<usize>, bool, &Vec<T>)> = self
            .tensors
            .iter()
            .map(|(n, s, f, d)| (n.as_str(), (s, *f, d)))
            .collect();
        let mut seen = std::collections::HashSet::new();
        for p in params {
            let name = p.name();
            match stored.get(name.as_str()) {
                None => diffs.push(format!("  model parameter {name} not in checkpoint")),
                Some((shape, _, _)) if **shape != p.shape() => diffs.push(format!(
                    "  {name}: checkpoint shape {shape:?} vs model shape {:?}",
                    p.shape()
                )),
                Some(_) => {}
            }
            seen.insert(name);
        }
        for (name, ..) in &self.tensors {
            if !seen.contains(name) {
                diffs.push(format!("  checkpoint parameter {name} not in model"));
            }
        }
        if !diffs.is_empty() {
            return Err(Error::CheckpointMismatch {
                diff: diffs.join("\n"),
            });
        }
        for p in params {
            let (_, frozen, data) = stored[p.name().as_str()];
            p.set_data(data.clone());
            p.set_frozen(frozen);
        }
        Ok(())
    }
}
