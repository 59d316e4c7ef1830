//! IDX and headered-CSV readers.

use std::fs;
use std::path::{Path, PathBuf};

use super::dataset::{Dataset, Task};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_UBYTE: u8 = 0x08;
const IDX_FLOAT: u8 = 0x0D;

/// Loads a `.csv` file, or an IDX image file together with its labels file.
pub fn load_idx_or_csv(path: &Path) -> Result<Dataset> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        load_csv(path)
    } else {
        load_idx(path, &labels_path(path)?)
    }
}

// `train-images-idx3-ubyte` pairs with `train-labels-idx1-ubyte`.
fn labels_path(images: &Path) -> Result<PathBuf> {
    let name = images
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Format(format!("bad path {}", images.display())))?;
    if !name.contains("images") {
        return Err(Error::Format(format!("cannot derive a labels file from {name}")));
    }
    let labels = name.replacen("images", "labels", 1).replacen("idx3", "idx1", 1);
    Ok(images.with_file_name(labels))
}

struct Idx {
    dims: Vec<usize>,
    values: Vec<f64>,
    ubyte: bool,
}

fn parse_idx(bytes: &[u8]) -> Result<Idx> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format("malformed IDX header".into()));
    }
    let (ty, ndims) = (bytes[2], bytes[3] as usize);
    let width = match ty {
        IDX_UBYTE => 1,
        IDX_FLOAT => 4,
        other => return Err(Error::Format(format!("unsupported IDX type 0x{other:02x}"))),
    };
    let header = 4 + 4 * ndims;
    if ndims == 0 || bytes.len() < header {
        return Err(Error::Format("malformed IDX header".into()));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .and_then(|c| c.checked_mul(width))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    let body = &bytes[header..];
    if body.len() != count {
        return Err(Error::Format(format!("IDX payload is {} bytes, header implies {count}", body.len())));
    }
    let values = if ty == IDX_UBYTE {
        body.iter().map(|&b| b as f64).collect()
    } else {
        body.chunks_exact(4).map(|c| f32::from_be_bytes(c.try_into().expect("4 bytes")) as f64).collect()
    };
    Ok(Idx { dims, values, ubyte: ty == IDX_UBYTE })
}

/// Loads IDX images (unsigned bytes scaled by 1/255, or floats already in
/// `[0, 1]`) and integer labels, one-hot encoded.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = parse_idx(&fs::read(images)?)?;
    let lab = parse_idx(&fs::read(labels)?)?;
    let n = img.dims[0];
    let d: usize = img.dims[1..].iter().product();
    if lab.dims.len() != 1 || lab.dims[0] != n {
        return Err(Error::Format(format!("{n} images but labels have dims {:?}", lab.dims)));
    }
    let features: Vec<f64> = if img.ubyte { img.values.iter().map(|&b| b / 255.0).collect() } else { img.values };
    let classes: Vec<usize> =
        lab.values
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::Format(format!("bad label {v}")))
                }
            })
            .collect::<Result<_>>()?;
    let k = classes.iter().max().map_or(1, |&m| m + 1).max(2);
    Dataset::from_classes(Tensor::new(vec![n, d], features)?, &classes, k, images.display().to_string(), 0)
}

/// Reads `f0,...,f{d-1},label` (integer classes) or `...,target` (regression).
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    })?;
    let header = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    if header.len() < 2 {
        return Err(Error::Format("CSV needs at least one feature column and a label column".into()));
    }
    let d = header.len() - 1;
    let task = match &header[d] {
        "label" => Task::Classification,
        "target" => Task::Regression,
        other => return Err(Error::Format(format!("last CSV column must be label or target, got {other}"))),
    };
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        for j in 0..d {
            features.push(parse_f64(&rec[j])?);
        }
        targets.push(parse_f64(&rec[d])?);
    }
    let n = targets.len();
    let features = Tensor::new(vec![n, d], features)?;
    let source = path.display().to_string();
    match task {
        Task::Regression => Dataset::new(features, Tensor::new(vec![n, 1], targets)?, task, source, 0),
        Task::Classification => {
            let classes: Vec<usize> = targets
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(Error::Format(format!("bad label {v}")))
                    }
                })
                .collect::<Result<_>>()?;
            let k = classes.iter().max().map_or(1, |&m| m + 1).max(2);
            Dataset::from_classes(features, &classes, k, source, 0)
        }
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Format(format!("not a number: {s:?}")))
}

/// Writes the CSV layout read by [`load_csv`]; soft labels are reduced to
/// their argmax.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let d = ds.feature_dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    header.push(match ds.task() {
        Task::Classification => "label".into(),
        Task::Regression => "target".into(),
    });
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.features().row(i).iter().map(|x| x.to_string()).collect();
        rec.push(match ds.task() {
            Task::Classification => ds.class_of(i).to_string(),
            Task::Regression => ds.labels().row(i)[0].to_string(),
        });
        w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
