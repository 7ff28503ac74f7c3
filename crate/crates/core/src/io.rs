//! Dataset CSV files and JSON model files.
//!
//! A dataset file has the header `task,y,x0,...,x{d-1}` and one sample per
//! row. Classification labels are written as integers.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::dataset::MultiTaskDataset;
use crate::error::{Error, Result};

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Parses a dataset. `num_classes` is 1 for regression. The task count is
/// one past the largest task id.
pub fn read_dataset<R: Read>(reader: R, num_classes: usize) -> Result<MultiTaskDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "task" || cols[1] != "y" {
        return Err(parse_err(1, "header must start with task,y followed by feature columns"));
    }
    for (j, c) in cols[2..].iter().enumerate() {
        if *c != format!("x{j}") {
            return Err(parse_err(1, format!("expected column x{j}, found '{c}'")));
        }
    }
    let dim = cols.len() - 2;

    let mut values = Vec::new();
    let mut targets = Vec::new();
    let mut task_of = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 2 {
            return Err(parse_err(line, format!("expected {} fields, found {}", dim + 2, record.len())));
        }
        let task: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("task id '{}' is not a non-negative integer", &record[0])))?;
        let num = |j: usize| -> Result<f64> {
            let v: f64 = record[j]
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("column {} value '{}' is not a number", cols[j], &record[j])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column {} is not finite", cols[j])));
            }
            Ok(v)
        };
        let y = num(1)?;
        if num_classes > 1 && (y < 0.0 || y.fract() != 0.0 || y as usize >= num_classes) {
            return Err(parse_err(line, format!("label {y} outside 0..{num_classes}")));
        }
        targets.push(y);
        task_of.push(task);
        for j in 0..dim {
            values.push(num(j + 2)?);
        }
    }
    if targets.is_empty() {
        return Err(parse_err(1, "no samples"));
    }
    let num_tasks = task_of.iter().max().map_or(0, |&t| t + 1);
    let features = Array2::from_shape_vec((targets.len(), dim), values).expect("row lengths checked");
    MultiTaskDataset::new(features, targets, task_of, num_tasks, num_classes)
}

pub fn read_dataset_file(path: &Path, num_classes: usize) -> Result<MultiTaskDataset> {
    read_dataset(File::open(path)?, num_classes)
}

pub fn write_dataset<W: Write>(ds: &MultiTaskDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["task".to_string(), "y".to_string()];
    header.extend((0..ds.dim()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for (i, x) in ds.features().rows().into_iter().enumerate() {
        record.clear();
        record.push(ds.task_of()[i].to_string());
        let y = ds.targets()[i];
        record.push(if ds.num_classes() > 1 { (y as usize).to_string() } else { y.to_string() });
        record.extend(x.iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_file(ds: &MultiTaskDataset, path: &Path) -> Result<()> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}
