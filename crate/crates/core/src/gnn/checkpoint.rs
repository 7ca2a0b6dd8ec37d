//! Checkpoints: one JSON header line followed by one parameter per line.
//!
//! Rust's float formatting is shortest-round-trip, so the text payload
//! reloads bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{build_model, GnnModel, ModelConfig};
use crate::error::{Error, Result};
use crate::graphon::Graphon;

const FORMAT: &str = "graphon-gnn-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub config: ModelConfig,
    pub param_count: usize,
}

pub fn save_checkpoint(model: &GnnModel, path: impl AsRef<Path>) -> Result<()> {
    let header = CheckpointHeader {
        format: FORMAT.to_string(),
        config: model.config().clone(),
        param_count: model.param_count(),
    };
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer(&mut out, &header)?;
    writeln!(out)?;
    for p in model.params_flat() {
        writeln!(out, "{p}")?;
    }
    out.flush()?;
    Ok(())
}

/// Rebuilds the model from the header and restores its weights. The graphon
/// is parsed from the recorded spec unless one is supplied (needed for step
/// graphons loaded from files).
pub fn load_checkpoint(path: impl AsRef<Path>, graphon: Option<&Graphon>) -> Result<GnnModel> {
    let path = path.as_ref();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(File::open(path)?).lines();
    let first = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty checkpoint".into()))??;
    let header: CheckpointHeader =
        serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
    if header.format != FORMAT {
        return Err(parse_err(1, format!("unsupported format `{}`", header.format)));
    }
    let mut params = Vec::with_capacity(header.param_count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|e| parse_err(i + 2, format!("bad weight `{line}`: {e}")))?;
        params.push(v);
    }
    if params.len() != header.param_count {
        return Err(parse_err(
            params.len() + 1,
            format!("expected {} weights, found {}", header.param_count, params.len()),
        ));
    }
    let parsed;
    let w = match graphon {
        Some(w) => w,
        None => {
            parsed = Graphon::parse_spec(&header.config.graphon_spec)?;
            &parsed
        }
    };
    let mut model = build_model(w, &header.config)?;
    model.set_params_flat(&params)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{Architecture, LayerArch, Nonlinearity, PoolingStrategy, Summarizer};
    use nalgebra::DMatrix;

    #[test]
    fn reload_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ModelConfig::new(
            vec![12, 6, 3],
            Architecture {
                input_features: 1,
                layers: vec![
                    LayerArch { features: 3, taps: 3, nonlinearity: Nonlinearity::Tanh, summarizer: Summarizer::Max },
                    LayerArch { features: 2, taps: 2, nonlinearity: Nonlinearity::Relu, summarizer: Summarizer::Mean },
                ],
                outputs: 4,
            },
            PoolingStrategy::CoarsenHem,
            21,
        );
        cfg.graphon_spec = "exp:beta=2.3".into();
        let w = Graphon::parse_spec(&cfg.graphon_spec).unwrap();
        let mut model = build_model(&w, &cfg).unwrap();
        let tweaked: Vec<f64> = model.params_flat().iter().map(|p| p * std::f64::consts::PI / 7.0).collect();
        model.set_params_flat(&tweaked).unwrap();

        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path, None).unwrap();
        let a: Vec<u64> = model.params_flat().iter().map(|p| p.to_bits()).collect();
        let b: Vec<u64> = back.params_flat().iter().map(|p| p.to_bits()).collect();
        assert_eq!(a, b);
        let x = DMatrix::from_fn(12, 1, |i, _| (i as f64 * 0.37).cos());
        assert_eq!(model.predict(&x).unwrap(), back.predict(&x).unwrap());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ModelConfig::new(
            vec![4],
            Architecture {
                input_features: 1,
                layers: vec![LayerArch { features: 1, taps: 2, nonlinearity: Nonlinearity::Relu, summarizer: Summarizer::Mean }],
                outputs: 1,
            },
            PoolingStrategy::Graphon,
            0,
        );
        cfg.graphon_spec = "bilinear".into();
        let model = build_model(&Graphon::bilinear(), &cfg).unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut: Vec<&str> = text.lines().collect();
        std::fs::write(&path, cut[..cut.len() - 1].join("\n")).unwrap();
        assert!(matches!(load_checkpoint(&path, None), Err(Error::Parse { .. })));
    }
}
