//! EUDF binary and CSV codecs.
//!
//! EUDF layout (little-endian):
//!
//! ```text
//! "EUDF" | version u16 = 1 | flags u16 (bit0 = labels) | n u64 | d u64 | C u32
//! | tag_len u16 | tag utf-8 | features n*d f32 row-major | labels n*u32 (iff bit0)
//! ```

use std::fs;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::DomainDataset;
use crate::error::{EudaError, Result};

const MAGIC: &[u8; 4] = b"EUDF";
const VERSION: u16 = 1;
const FLAG_LABELS: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Binary,
    Csv,
}

impl FileFormat {
    /// Picks the format from the file extension: `.csv` is CSV, anything else EUDF.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FileFormat::Csv,
            _ => FileFormat::Binary,
        }
    }
}

pub fn load_dataset(path: &Path, format: FileFormat) -> Result<DomainDataset> {
    match format {
        FileFormat::Binary => {
            let bytes = fs::read(path).map_err(|e| EudaError::io(path, e))?;
            decode_binary(&bytes)
        }
        FileFormat::Csv => load_csv(path, None),
    }
}

pub fn save_dataset(ds: &DomainDataset, path: &Path, format: FileFormat) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| EudaError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let written = match format {
        FileFormat::Binary => out.write_all(&encode_binary(ds)),
        FileFormat::Csv => write_csv(ds, &mut out),
    };
    written
        .and_then(|_| out.flush())
        .map_err(|e| EudaError::io(path, e))
}

fn encode_binary(ds: &DomainDataset) -> Vec<u8> {
    let (n, d) = ds.features.dim();
    let labels = ds.raw_labels();
    let mut buf = Vec::with_capacity(32 + ds.domain_tag.len() + n * d * 4 + n * 4);
    buf.extend_from_slice(MAGIC);
    // Writes into a Vec cannot fail.
    buf.write_u16::<LittleEndian>(VERSION).unwrap();
    let flags = if labels.is_some() { FLAG_LABELS } else { 0 };
    buf.write_u16::<LittleEndian>(flags).unwrap();
    buf.write_u64::<LittleEndian>(n as u64).unwrap();
    buf.write_u64::<LittleEndian>(d as u64).unwrap();
    buf.write_u32::<LittleEndian>(ds.num_classes.unwrap_or(0) as u32).unwrap();
    buf.write_u16::<LittleEndian>(ds.domain_tag.len() as u16).unwrap();
    buf.extend_from_slice(ds.domain_tag.as_bytes());
    for v in ds.features.iter() {
        buf.write_f32::<LittleEndian>(*v).unwrap();
    }
    if let Some(labels) = labels {
        for &y in labels {
            buf.write_u32::<LittleEndian>(y as u32).unwrap();
        }
    }
    buf
}

fn truncated(_: std::io::Error) -> EudaError {
    EudaError::Format("unexpected end of file".into())
}

pub(crate) fn decode_binary(bytes: &[u8]) -> Result<DomainDataset> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(EudaError::Format(format!("bad magic {magic:02x?}, expected \"EUDF\"")));
    }
    let version = cur.read_u16::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(EudaError::Format(format!("unsupported EUDF version {version}")));
    }
    let flags = cur.read_u16::<LittleEndian>().map_err(truncated)?;
    if flags & !FLAG_LABELS != 0 {
        return Err(EudaError::Format(format!("unknown flag bits {flags:#06x}")));
    }
    let has_labels = flags & FLAG_LABELS != 0;
    let n = cur.read_u64::<LittleEndian>().map_err(truncated)?;
    let d = cur.read_u64::<LittleEndian>().map_err(truncated)?;
    let c = cur.read_u32::<LittleEndian>().map_err(truncated)?;
    let tag_len = cur.read_u16::<LittleEndian>().map_err(truncated)? as usize;
    let mut tag = vec![0u8; tag_len];
    cur.read_exact(&mut tag).map_err(truncated)?;
    let tag = String::from_utf8(tag)
        .map_err(|_| EudaError::Format("domain tag is not valid UTF-8".into()))?;

    if has_labels && c == 0 {
        return Err(EudaError::Consistency("labels flagged but class count is 0".into()));
    }
    let remaining = (bytes.len() as u64).saturating_sub(cur.position());
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|f| f.checked_add(if has_labels { n.checked_mul(4)? } else { 0 }))
        .ok_or_else(|| EudaError::Format(format!("header sizes overflow: n={n}, d={d}")))?;
    if remaining < expected {
        return Err(EudaError::Format(format!(
            "truncated payload: {remaining} bytes, header requires {expected}"
        )));
    }
    if remaining > expected {
        return Err(EudaError::Format(format!(
            "{} trailing bytes after payload",
            remaining - expected
        )));
    }
    let (n, d) = (n as usize, d as usize);
    let mut values = vec![0f32; n * d];
    cur.read_f32_into::<LittleEndian>(&mut values).map_err(truncated)?;
    let labels = if has_labels {
        let mut raw = vec![0u32; n];
        cur.read_u32_into::<LittleEndian>(&mut raw).map_err(truncated)?;
        Some(raw.into_iter().map(|y| y as usize).collect())
    } else {
        None
    };
    let features = Array2::from_shape_vec((n, d), values)
        .map_err(|e| EudaError::Format(format!("feature block: {e}")))?;
    DomainDataset::new(features, labels, has_labels.then_some(c as usize), tag)
}

fn write_csv<W: Write>(ds: &DomainDataset, out: &mut W) -> std::io::Result<()> {
    let d = ds.dim();
    let labels = ds.raw_labels();
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    if labels.is_some() {
        header.push("label".into());
    }
    writeln!(out, "{}", header.join(","))?;
    for (i, row) in ds.features.rows().into_iter().enumerate() {
        let mut line = row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        if let Some(labels) = labels {
            line.push(',');
            line.push_str(&labels[i].to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads a CSV dataset. The class count is `num_classes` when given,
/// otherwise one more than the largest label. The domain tag is the file stem.
pub fn load_csv(path: &Path, num_classes: Option<usize>) -> Result<DomainDataset> {
    let text = fs::read_to_string(path).map_err(|e| EudaError::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| EudaError::Format("empty CSV file".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_labels = columns.last() == Some(&"label");
    let d = columns.len() - usize::from(has_labels);
    for (j, name) in columns[..d].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(EudaError::Format(format!(
                "header column {j} is `{name}`, expected `f{j}`"
            )));
        }
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0usize;
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(EudaError::Format(format!(
                "line {}: {} fields, header has {}",
                line_no + 1,
                fields.len(),
                columns.len()
            )));
        }
        for f in &fields[..d] {
            let v: f32 = f.parse().map_err(|_| {
                EudaError::Format(format!("line {}: `{f}` is not a number", line_no + 1))
            })?;
            values.push(v);
        }
        if has_labels {
            let y: usize = fields[d].parse().map_err(|_| {
                EudaError::Format(format!("line {}: bad label `{}`", line_no + 1, fields[d]))
            })?;
            labels.push(y);
        }
        n += 1;
    }
    let features = Array2::from_shape_vec((n, d), values)
        .map_err(|e| EudaError::Format(format!("feature block: {e}")))?;
    let tag = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    let (labels, c) = if has_labels {
        let c = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        (Some(labels), Some(c))
    } else {
        (None, None)
    };
    DomainDataset::new(features, labels, c, tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn hand_written_csv_loads() {
        let dir = tmp();
        let path = dir.path().join("s.csv");
        fs::write(&path, "f0,f1,label\n0.5,1,0\n-1.25,2,1\n3,4,0\n").unwrap();
        let ds = load_dataset(&path, FileFormat::Csv).unwrap();
        assert_eq!((ds.len(), ds.dim()), (3, 2));
        assert_eq!(ds.num_classes(), Some(2));
        assert_eq!(ds.labels().unwrap(), &[0, 1, 0]);
        assert_eq!(ds.features()[[1, 0]], -1.25);
        assert_eq!(ds.domain_tag(), "s");
    }

    #[test]
    fn csv_round_trip_exact_for_representable_values() {
        let dir = tmp();
        let path = dir.path().join("a.csv");
        let ds = DomainDataset::new(array![[0.5, -1.25]], None, None, "a").unwrap();
        save_dataset(&ds, &path, FileFormat::Csv).unwrap();
        assert_eq!(load_dataset(&path, FileFormat::Csv).unwrap(), ds);
    }

    #[test]
    fn nan_in_csv_is_data_error() {
        let dir = tmp();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "f0,f1\n1,NaN\n").unwrap();
        let err = load_dataset(&path, FileFormat::Csv).unwrap_err();
        assert!(matches!(err, EudaError::Data(_)), "{err}");
    }

    #[test]
    fn bad_magic_is_format_error() {
        let ds = DomainDataset::new(array![[1.0, 2.0]], None, None, "t").unwrap();
        let mut bytes = encode_binary(&ds);
        bytes[0] = b'X';
        assert!(matches!(decode_binary(&bytes), Err(EudaError::Format(_))));
    }

    #[test]
    fn version_mismatch_is_format_error() {
        let ds = DomainDataset::new(array![[1.0, 2.0]], None, None, "t").unwrap();
        let mut bytes = encode_binary(&ds);
        bytes[4] = 2;
        assert!(matches!(decode_binary(&bytes), Err(EudaError::Format(_))));
    }

    #[test]
    fn truncated_binary_is_format_error() {
        let ds = DomainDataset::new(array![[1.0, 2.0], [3.0, 4.0]], Some(vec![0, 1]), Some(2), "t")
            .unwrap();
        let bytes = encode_binary(&ds);
        for cut in [3, 10, bytes.len() - 1] {
            assert!(matches!(decode_binary(&bytes[..cut]), Err(EudaError::Format(_))));
        }
    }

    #[test]
    fn binary_label_above_class_count_is_consistency_error() {
        let ds = DomainDataset::new(array![[1.0], [2.0]], Some(vec![0, 1]), Some(2), "t").unwrap();
        let mut bytes = encode_binary(&ds);
        let last = bytes.len() - 4;
        bytes[last] = 7;
        assert!(matches!(decode_binary(&bytes), Err(EudaError::Consistency(_))));
    }

    #[test]
    fn binary_nan_is_data_error() {
        let ds = DomainDataset::new(array![[1.0, 2.0]], None, None, "t").unwrap();
        let mut bytes = encode_binary(&ds);
        let off = bytes.len() - 4;
        bytes[off..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_binary(&bytes), Err(EudaError::Data(_))));
    }

    #[test]
    fn header_layout_is_fixed() {
        let ds = DomainDataset::new(array![[1.5f32]], Some(vec![0]), Some(3), "ab").unwrap();
        let bytes = encode_binary(&ds);
        let mut expected = Vec::new();
        expected.extend_from_slice(b"EUDF");
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&3u32.to_le_bytes());
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&1.5f32.to_le_bytes());
        expected.extend_from_slice(&0u32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn saving_to_a_directory_is_io_error() {
        let dir = tmp();
        let ds = DomainDataset::new(array![[1.0]], None, None, "t").unwrap();
        let err = save_dataset(&ds, dir.path(), FileFormat::Binary).unwrap_err();
        assert!(matches!(err, EudaError::Io { .. }));
    }

    fn arb_dataset() -> impl Strategy<Value = DomainDataset> {
        (1usize..6, 1usize..5, 2usize..5, any::<bool>()).prop_flat_map(|(n, d, c, labeled)| {
            (
                proptest::collection::vec(-1e6f32..1e6, n * d),
                proptest::collection::vec(0..c, n),
            )
                .prop_map(move |(vals, ys)| {
                    let x = Array2::from_shape_vec((n, d), vals).unwrap();
                    let (ys, c) = if labeled { (Some(ys), Some(c)) } else { (None, None) };
                    DomainDataset::new(x, ys, c, "prop").unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_exact(ds in arb_dataset()) {
            let back = decode_binary(&encode_binary(&ds)).unwrap();
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn csv_round_trip_within_tolerance(ds in arb_dataset()) {
            let dir = tmp();
            let path = dir.path().join("prop.csv");
            save_dataset(&ds, &path, FileFormat::Csv).unwrap();
            let back = load_csv(&path, ds.num_classes()).unwrap();
            prop_assert_eq!(back.raw_labels(), ds.raw_labels());
            for (a, b) in back.features().iter().zip(ds.features().iter()) {
                prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(f32::MIN_POSITIVE));
            }
        }
    }
}
