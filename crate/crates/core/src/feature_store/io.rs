//! CSV and PFV1 binary feature files.
//!
//! CSV: header `label,f0,f1,...,f{D-1}`, then one integer label and `D`
//! decimal floats per line.
//!
//! PFV1 (all multi-byte values little-endian):
//!
//! ```text
//! offset 0   b"PFV1"
//!        4   u32 row count R
//!        8   u32 dimension D
//!        12  u32 class count C
//!        16  R records of (u32 label, D x f32)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::FeatureSet;
use crate::error::{Error, Result};

pub const PFV1_MAGIC: &[u8; 4] = b"PFV1";
const PFV1_HEADER_LEN: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Csv,
    Binary,
}

impl FileFormat {
    /// `.csv` files are CSV, everything else is PFV1.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FileFormat::Csv,
            _ => FileFormat::Binary,
        }
    }
}

impl FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(FileFormat::Csv),
            "binary" | "bin" | "pfv" | "pfv1" => Ok(FileFormat::Binary),
            other => Err(Error::config(format!("unknown feature format '{other}'"))),
        }
    }
}

pub fn load_features(path: impl AsRef<Path>, format: FileFormat) -> Result<FeatureSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        FileFormat::Csv => read_csv(reader),
        FileFormat::Binary => read_binary(reader),
    }
}

pub fn save_features(fs: &FeatureSet, path: impl AsRef<Path>, format: FileFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    match format {
        FileFormat::Csv => write_csv(fs, &mut writer),
        FileFormat::Binary => write_binary(fs, &mut writer),
    }
    .map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<R: Read>(reader: R) -> Result<FeatureSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        None => return Err(Error::Empty("CSV file has no header".into())),
        Some(rec) => rec.map_err(csv_error)?,
    };
    let dim = parse_header(&header)?;

    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in records.enumerate() {
        let rec = rec.map_err(csv_error)?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != dim + 1 {
            return Err(Error::RowWidth {
                row,
                expected: dim + 1,
                found: rec.len(),
            });
        }
        let label: i64 = rec[0].parse().map_err(|_| Error::Parse {
            row,
            col: 0,
            message: format!("label '{}' is not an integer", &rec[0]),
        })?;
        labels.push(label);
        for (col, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                col: col + 1,
                message: format!("'{field}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::Empty("CSV file has a header but no rows".into()));
    }
    let features = DMatrix::from_row_slice(labels.len(), dim, &values);
    FeatureSet::from_original_labels(features, &labels)
}

fn parse_header(header: &csv::StringRecord) -> Result<usize> {
    if header.len() < 2 {
        return Err(Error::MalformedHeader(
            "expected 'label' followed by at least one feature column".into(),
        ));
    }
    if &header[0] != "label" {
        return Err(Error::MalformedHeader(format!(
            "first column must be 'label', found '{}'",
            &header[0]
        )));
    }
    for (i, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{i}") {
            return Err(Error::MalformedHeader(format!(
                "column {} must be 'f{i}', found '{name}'",
                i + 1
            )));
        }
    }
    Ok(header.len() - 1)
}

fn csv_error(e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        row,
        col: 0,
        message: e.to_string(),
    }
}

pub fn write_csv<W: Write>(fs: &FeatureSet, mut w: W) -> Result<()> {
    let wrap = |e| Error::io("<csv writer>", e);
    let mut line = String::from("label");
    for j in 0..fs.dim() {
        line.push_str(&format!(",f{j}"));
    }
    writeln!(w, "{line}").map_err(wrap)?;
    for i in 0..fs.rows() {
        line.clear();
        line.push_str(&fs.class_id(fs.labels()[i]).to_string());
        for v in fs.row_slice(i) {
            // Display prints the shortest string that parses back to the same f64
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}").map_err(wrap)?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<FeatureSet> {
    let mut offset = 0u64;
    let mut magic = [0u8; 4];
    read_exact_at(&mut r, &mut magic, &mut offset)?;
    if &magic != PFV1_MAGIC {
        return Err(Error::MalformedHeader(format!(
            "bad magic {:?}, expected \"PFV1\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let rows = read_u32(&mut r, &mut offset)? as usize;
    let dim = read_u32(&mut r, &mut offset)? as usize;
    let classes = read_u32(&mut r, &mut offset)?;
    debug_assert_eq!(offset, PFV1_HEADER_LEN);
    if rows == 0 {
        return Err(Error::Empty("PFV1 file declares zero rows".into()));
    }
    if dim == 0 {
        return Err(Error::MalformedHeader("PFV1 file declares zero dimensions".into()));
    }

    let mut labels = Vec::with_capacity(rows);
    let mut values = Vec::with_capacity(rows * dim);
    for row in 0..rows {
        let label = read_u32(&mut r, &mut offset)?;
        if label >= classes {
            return Err(Error::MalformedHeader(format!(
                "row {row} has label {label} but the header declares {classes} classes"
            )));
        }
        labels.push(label as i64);
        for col in 0..dim {
            let v = read_f32(&mut r, &mut offset)?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            values.push(v as f64);
        }
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe).map_err(|e| Error::io("<binary reader>", e))? != 0 {
        return Err(Error::MalformedHeader(format!(
            "trailing bytes after {rows} records at offset {offset}"
        )));
    }
    let features = DMatrix::from_row_slice(rows, dim, &values);
    FeatureSet::from_original_labels(features, &labels)
}

/// Writes PFV1. Features are stored as f32, so values that are not exactly
/// representable in f32 are rounded; a file read back and written again is
/// byte-identical.
pub fn write_binary<W: Write>(fs: &FeatureSet, mut w: W) -> Result<()> {
    let wrap = |e| Error::io("<binary writer>", e);
    let ids = fs.class_ids();
    if let Some(bad) = ids.iter().find(|&&id| id < 0 || id > u32::MAX as i64 - 1) {
        return Err(Error::InvalidFeatureSet(format!(
            "PFV1 labels are u32, class id {bad} does not fit"
        )));
    }
    let rows = u32::try_from(fs.rows()).map_err(|_| Error::InvalidFeatureSet("too many rows for PFV1".into()))?;
    let dim = u32::try_from(fs.dim()).map_err(|_| Error::InvalidFeatureSet("too many dimensions for PFV1".into()))?;
    let classes = ids.iter().copied().max().unwrap_or(0) as u32 + 1;

    w.write_all(PFV1_MAGIC).map_err(wrap)?;
    w.write_u32::<LittleEndian>(rows).map_err(wrap)?;
    w.write_u32::<LittleEndian>(dim).map_err(wrap)?;
    w.write_u32::<LittleEndian>(classes).map_err(wrap)?;
    for i in 0..fs.rows() {
        w.write_u32::<LittleEndian>(fs.class_id(fs.labels()[i]) as u32)
            .map_err(wrap)?;
        for &v in fs.row_slice(i) {
            w.write_f32::<LittleEndian>(v as f32).map_err(wrap)?;
        }
    }
    Ok(())
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated {
            offset: *offset,
            expected: buf.len(),
        },
        _ => Error::io("<binary reader>", e),
    })?;
    *offset += buf.len() as u64;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, offset: &mut u64) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact_at(r, &mut buf, offset)?;
    Ok((&buf[..]).read_u32::<LittleEndian>().expect("4-byte buffer"))
}

fn read_f32<R: Read>(r: &mut R, offset: &mut u64) -> Result<f32> {
    let mut buf = [0u8; 4];
    read_exact_at(r, &mut buf, offset)?;
    Ok((&buf[..]).read_f32::<LittleEndian>().expect("4-byte buffer"))
}
