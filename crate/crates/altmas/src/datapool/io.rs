//! Pool loaders and writers: IDX image/label files, CSV pools and plain
//! prediction files.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::{Error, Result};

use super::TestPool;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct IdxReader<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        Ok(IdxReader {
            path,
            bytes: fs::read(path)?,
            pos: 0,
        })
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn read_u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn expect_magic(&mut self, expected: u32) -> Result<()> {
        let found = self.read_u32()?;
        if found != expected {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                found,
                expected,
            });
        }
        Ok(())
    }
}

/// Reads an IDX image file and its matching label file. Pixels come back as
/// rows of `rows * cols` features scaled to `[0, 1]`; labels as class
/// indices. The two files must agree on the item count.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<(Array2<f64>, Vec<usize>)> {
    let mut img = IdxReader::open(images_path)?;
    img.expect_magic(IDX_IMAGES_MAGIC)?;
    let count = img.read_u32()? as usize;
    let rows = img.read_u32()? as usize;
    let cols = img.read_u32()? as usize;
    let pixels = img.take(count * rows * cols)?;
    let features = Array2::from_shape_vec(
        (count, rows * cols),
        pixels.iter().map(|&b| b as f64 / 255.0).collect(),
    )
    .expect("shape follows from the header");

    let mut lbl = IdxReader::open(labels_path)?;
    lbl.expect_magic(IDX_LABELS_MAGIC)?;
    let label_count = lbl.read_u32()? as usize;
    if label_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let labels = lbl.take(count)?.iter().map(|&b| b as usize).collect();
    Ok((features, labels))
}

/// Writes an IDX image file. `pixels` holds `count * rows * cols` bytes in
/// row-major order.
pub fn write_idx_images(
    path: &Path,
    pixels: &[u8],
    count: usize,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if pixels.len() != count * rows * cols {
        return Err(Error::LengthMismatch {
            left: pixels.len(),
            right: count * rows * cols,
        });
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

/// Writes an IDX label file. Labels must fit in a byte.
pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &y in labels {
        if y > u8::MAX as usize {
            return Err(Error::LabelRange {
                value: y as i64,
                classes: 256,
            });
        }
        out.push(y as u8);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads a CSV pool with header `label,pred,f0,f1,...`. The class count is
/// `1 + max` over both label columns.
pub fn load_csv_pool(path: &Path) -> Result<TestPool> {
    let text = fs::read_to_string(path)?;
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0].trim() != "label" || cols[1].trim() != "pred" {
        return Err(err(
            1,
            format!("expected header `label,pred,f0,...`, got `{header}`"),
        ));
    }
    let d = cols.len() - 2;

    let mut truth = Vec::new();
    let mut preds = Vec::new();
    let mut flat = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(err(
                lineno,
                format!("expected {} fields, got {}", d + 2, fields.len()),
            ));
        }
        let class = |s: &str, what: &str| -> Result<usize> {
            let v: i64 = s
                .trim()
                .parse()
                .map_err(|_| err(lineno, format!("bad {what} `{s}`")))?;
            if v < 0 {
                return Err(err(lineno, format!("negative {what} {v}")));
            }
            Ok(v as usize)
        };
        truth.push(class(fields[0], "label")?);
        preds.push(class(fields[1], "pred")?);
        for f in &fields[2..] {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| err(lineno, format!("bad feature value `{f}`")))?;
            flat.push(v);
        }
    }
    if truth.is_empty() {
        return Err(err(1, "no data rows".into()));
    }
    let classes = 1 + truth.iter().chain(&preds).copied().max().unwrap_or(0);
    let features =
        Array2::from_shape_vec((truth.len(), d), flat).expect("row width checked per line");
    TestPool::new(features, preds, truth, classes)
}

/// Writes a pool in the CSV layout accepted by [`load_csv_pool`].
pub fn write_csv_pool(pool: &TestPool, path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    let header: Vec<String> = (0..pool.num_features()).map(|j| format!("f{j}")).collect();
    writeln!(out, "label,pred,{}", header.join(","))?;
    for i in 0..pool.len() {
        let feats: Vec<String> = pool.feature_row(i).iter().map(|v| format!("{v}")).collect();
        writeln!(
            out,
            "{},{},{}",
            pool.ground_truth()[i],
            pool.predictions()[i],
            feats.join(",")
        )?;
    }
    Ok(())
}

/// Loads model-under-test predictions: one integer per line, exactly
/// `expected` lines, every value below `classes`.
pub fn load_predictions(path: &Path, expected: usize, classes: usize) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut preds = Vec::with_capacity(expected);
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: i64 = line.trim().parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: format!("bad prediction `{line}`"),
        })?;
        if v < 0 || v as usize >= classes {
            return Err(Error::LabelRange { value: v, classes });
        }
        preds.push(v as usize);
    }
    if preds.len() != expected {
        return Err(Error::LineCount {
            expected,
            found: preds.len(),
        });
    }
    Ok(preds)
}

/// Writes predictions, one per line.
pub fn write_predictions(preds: &[usize], path: &Path) -> Result<()> {
    let mut out = String::new();
    for &p in preds {
        out.push_str(&p.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
