//! File formats: model JSON, dataset and result CSVs.
//!
//! Floats are written in shortest round-trip form, so a saved model loads
//! back bit-for-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::net::{Dataset, Network};

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn save_model(path: &Path, net: &Network<f64>) -> Result<()> {
    write_json(path, net)
}

pub fn load_model(path: &Path) -> Result<Network<f64>> {
    read_json(path)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Writes `x_1, …, x_d, y` columns with a header row.
pub fn write_dataset(path: &Path, data: &Dataset<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = data.input_dim();
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.y[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`]: every column but the last is an input.
pub fn read_dataset(path: &Path, noise_sigma: f64) -> Result<Dataset<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let cols = r.headers()?.len();
    if cols < 2 {
        return shape_err("dataset needs at least one input column and a y column");
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::InvalidArgument(format!("bad number {s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != cols {
            return shape_err("ragged dataset row");
        }
        y.push(vals[cols - 1]);
        x.extend_from_slice(&vals[..cols - 1]);
    }
    Dataset::new(Matrix::new(y.len(), cols - 1, x)?, y, noise_sigma)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub layer: usize,
    /// 1-based rank in decreasing order.
    pub j: usize,
    pub mu_j: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DofRow {
    pub layer: usize,
    pub lambda: f64,
    pub dof: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub layer: usize,
    pub lambda: f64,
    pub dof: f64,
    pub m_required: usize,
    /// False when the balancing fixed point was not reached.
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressRow {
    pub layer: usize,
    pub lambda: f64,
    pub m: usize,
    pub dof: f64,
    pub err_emp: f64,
    pub err_guarantee: f64,
    pub err_bound: f64,
    pub weight_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub estimator: String,
    pub teacher: String,
    pub n: usize,
    pub seed: usize,
    pub mse: f64,
    pub stderr: f64,
}
