//! File formats: dataset CSV, encoder checkpoints, atomic writes.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::encoder::{EncoderDims, EncoderParams};
use crate::{Error, Result};

/// Writes `bytes` to a sibling temp file, then renames it over `path`, so the
/// destination is either complete or untouched.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Parse(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// `index,identity,camera,f0,...`; values use shortest round-trip decimals.
pub fn write_samples_csv(samples: &[Sample], mut w: impl Write) -> Result<()> {
    let d = samples.first().map_or(0, |s| s.input.len());
    let mut header = vec!["index".to_string(), "identity".into(), "camera".into()];
    header.extend((0..d).map(|i| format!("f{i}")));
    writeln!(w, "{}", header.join(","))?;
    for s in samples {
        let mut row = vec![s.index.to_string(), s.identity.to_string(), s.camera.to_string()];
        row.extend(s.input.iter().map(|v| v.to_string()));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_samples_csv(r: impl Read) -> Result<Vec<Sample>> {
    let mut lines = BufReader::new(r).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty dataset file".into()))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[..3] != ["index", "identity", "camera"] {
        return Err(Error::Parse("header must start with index,identity,camera".into()));
    }
    let d = cols.len() - 3;
    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Parse(format!("line {}: {what}", lineno + 2));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 3 {
            return Err(bad("wrong number of columns"));
        }
        let int = |s: &str| s.trim().parse::<usize>().map_err(|_| bad("bad integer"));
        let input = fields[3..]
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad("bad number")))
            .collect::<Result<Vec<f64>>>()?;
        samples.push(Sample {
            index: int(fields[0])?,
            identity: int(fields[1])?,
            camera: int(fields[2])?,
            input,
        });
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub dims: EncoderDims,
    pub values_file: String,
    pub tensors: Vec<TensorEntry>,
}

const CHECKPOINT_FORMAT: &str = "dcct-encoder-text-v1";

/// Writes `<stem>.json` (shape manifest) and `<stem>.values` (one value per
/// line, 17 significant digits) into `dir`. Returns the manifest path.
pub fn save_checkpoint(params: &EncoderParams, dir: &Path, stem: &str) -> Result<PathBuf> {
    let dims = params.dims();
    let mut offset = 0;
    let tensors = dims
        .tensors()
        .into_iter()
        .map(|(name, shape)| {
            let e = TensorEntry {
                name: name.to_string(),
                shape: shape.clone(),
                offset,
            };
            offset += shape.iter().product::<usize>();
            e
        })
        .collect();
    let values_file = format!("{stem}.values");
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        dims,
        values_file: values_file.clone(),
        tensors,
    };
    let mut text = String::with_capacity(params.as_slice().len() * 25);
    for v in params.as_slice() {
        text.push_str(&format!("{v:.16e}\n"));
    }
    write_atomic(&dir.join(&values_file), text.as_bytes())?;
    let manifest_path = dir.join(format!("{stem}.json"));
    write_atomic(&manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest_path)
}

pub fn load_checkpoint(manifest_path: &Path) -> Result<EncoderParams> {
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Parse(format!("unknown checkpoint format {}", manifest.format)));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(dir.join(&manifest.values_file))?;
    let data = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("value {i}: {l:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    EncoderParams::from_vec(manifest.dims, data)
}
