//! JSON checkpoints of a [`ParameterSet`]: named row-major tensors plus a
//! small header with the dimensions and the initialization seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::Mat;
use crate::refinement::{GcnLayer, ParameterSet};

const FORMAT: &str = "qcgm-parameters";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    attr_dim: usize,
    layers: usize,
    seed: u64,
    tensors: Vec<Tensor>,
}

fn to_tensor(name: String, m: &Mat) -> Tensor {
    let data = m
        .row_iter()
        .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
        .collect();
    Tensor {
        name,
        rows: m.nrows(),
        cols: m.ncols(),
        data,
    }
}

fn from_tensor(t: &Tensor, dim: usize) -> Result<Mat> {
    if t.rows != dim || t.cols != dim || t.data.len() != dim * dim {
        return Err(Error::invalid(format!(
            "tensor {} is not {dim} x {dim}",
            t.name
        )));
    }
    Ok(Mat::from_row_slice(dim, dim, &t.data))
}

pub fn to_json(params: &ParameterSet) -> Result<String> {
    let ckpt = Checkpoint {
        format: FORMAT.into(),
        attr_dim: params.attr_dim(),
        layers: params.num_layers(),
        seed: params.seed,
        tensors: params
            .tensors()
            .into_iter()
            .map(|(name, m)| to_tensor(name, m))
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&ckpt)? + "\n")
}

pub fn from_json(text: &str) -> Result<ParameterSet> {
    let ckpt: Checkpoint = serde_json::from_str(text)?;
    if ckpt.format != FORMAT {
        return Err(Error::invalid(format!(
            "unknown checkpoint format {:?}",
            ckpt.format
        )));
    }
    let expected: Vec<String> = (1..=ckpt.layers)
        .flat_map(|l| [format!("w_r.{l}"), format!("w_s.{l}")])
        .chain(["w_aff".to_string()])
        .collect();
    let names: Vec<&str> = ckpt.tensors.iter().map(|t| t.name.as_str()).collect();
    if names != expected {
        return Err(Error::invalid(format!(
            "checkpoint tensors {names:?}, expected {expected:?}"
        )));
    }
    let d = ckpt.attr_dim;
    let mut layers = Vec::with_capacity(ckpt.layers);
    for pair in ckpt.tensors[..2 * ckpt.layers].chunks(2) {
        layers.push(GcnLayer {
            w_r: from_tensor(&pair[0], d)?,
            w_s: from_tensor(&pair[1], d)?,
        });
    }
    let params = ParameterSet {
        layers,
        w_aff: from_tensor(ckpt.tensors.last().expect("w_aff present"), d)?,
        seed: ckpt.seed,
    };
    params.validate()?;
    Ok(params)
}

pub fn save(params: &ParameterSet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_json(params)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParameterSet> {
    from_json(&crate::pair::read_text(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let p = ParameterSet::init(5, 2, 42);
        let back = from_json(&to_json(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn rows_are_stored_row_major() {
        let mut p = ParameterSet::zeros(2, 0);
        p.w_aff = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let text = to_json(&p).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["tensors"][0]["name"], "w_aff");
        assert_eq!(
            v["tensors"][0]["data"],
            serde_json::json!([1.0, 2.0, 3.0, 4.0])
        );
    }

    #[test]
    fn rejects_wrong_names_and_shapes() {
        let p = ParameterSet::init(3, 1, 1);
        let text = to_json(&p).unwrap();
        assert!(from_json(&text.replace("w_s.1", "w_x.1")).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["tensors"][0]["rows"] = 2.into();
        assert!(from_json(&v.to_string()).is_err());
        assert!(from_json(&text.replace(FORMAT, "other")).is_err());
    }
}
