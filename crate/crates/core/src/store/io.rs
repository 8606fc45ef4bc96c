//! On-disk embedding tables.
//!
//! `manifest_binary` is the canonical layout: a JSON Lines manifest mapping
//! ids to rows, plus a matrix file of 16-byte header (`EMBT0001`, u32 N,
//! u32 D, all little-endian) followed by N*D little-endian f32 values in
//! row-major order. `jsonl` keeps each vector inline on its record line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{EmbeddingDataset, EmbeddingRecord};
use crate::error::{Error, Position, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"EMBT0001";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    #[default]
    ManifestBinary,
    Jsonl,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manifest_binary" | "manifest-binary" | "binary" => Ok(Self::ManifestBinary),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(Error::validation(format!("unknown dataset format {other:?}"))),
        }
    }
}

/// The two files that make up a `manifest_binary` table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub manifest: PathBuf,
    pub matrix: PathBuf,
}

impl DatasetPaths {
    /// Accepts the manifest (`<stem>.manifest.jsonl`), the matrix
    /// (`<stem>.embt`) or the bare stem.
    pub fn resolve(path: &Path) -> Self {
        let s = path.to_string_lossy();
        let stem = s
            .strip_suffix(".manifest.jsonl")
            .or_else(|| s.strip_suffix(".embt"))
            .unwrap_or(&s)
            .to_string();
        Self {
            manifest: PathBuf::from(format!("{stem}.manifest.jsonl")),
            matrix: PathBuf::from(format!("{stem}.embt")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    utterance_id: String,
    speaker_id: String,
    row: u64,
}

#[derive(Serialize, Deserialize)]
struct JsonlLine {
    utterance_id: String,
    speaker_id: String,
    vector: Vec<f32>,
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<EmbeddingDataset> {
    let records = match format {
        DatasetFormat::Jsonl => read_jsonl(path)?,
        DatasetFormat::ManifestBinary => read_manifest_binary(&DatasetPaths::resolve(path))?,
    };
    EmbeddingDataset::new(records, path.display().to_string())
}

/// Writes the dataset; returns the files written.
pub fn save_dataset(data: &EmbeddingDataset, path: &Path, format: DatasetFormat) -> Result<Vec<PathBuf>> {
    match format {
        DatasetFormat::Jsonl => {
            let mut out = Vec::new();
            for rec in data.records() {
                serde_json::to_writer(
                    &mut out,
                    &JsonlLine {
                        utterance_id: rec.utterance_id.clone(),
                        speaker_id: rec.speaker_id.clone(),
                        vector: rec.vector.clone(),
                    },
                )?;
                out.push(b'\n');
            }
            write_file(path, &out)?;
            Ok(vec![path.to_path_buf()])
        }
        DatasetFormat::ManifestBinary => {
            let paths = DatasetPaths::resolve(path);
            let mut manifest = Vec::new();
            for (row, rec) in data.records().iter().enumerate() {
                serde_json::to_writer(
                    &mut manifest,
                    &ManifestLine {
                        utterance_id: rec.utterance_id.clone(),
                        speaker_id: rec.speaker_id.clone(),
                        row: row as u64,
                    },
                )?;
                manifest.push(b'\n');
            }
            write_file(&paths.manifest, &manifest)?;
            write_file(&paths.matrix, &encode_matrix(data)?)?;
            Ok(vec![paths.manifest, paths.matrix])
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn encode_matrix(data: &EmbeddingDataset) -> Result<Vec<u8>> {
    let n = u32::try_from(data.len()).map_err(|_| Error::validation("too many records for u32 header"))?;
    let d = u32::try_from(data.dim()).map_err(|_| Error::validation("dimension exceeds u32 header"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * data.dim() * 4);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for rec in data.records() {
        for v in &rec.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, position: Position, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        position,
        message: message.into(),
    }
}

fn read_jsonl(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|e| parse_err(path, Position::Byte(e.utf8_error().valid_up_to() as u64), "invalid UTF-8"))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonlLine =
            serde_json::from_str(line).map_err(|e| parse_err(path, Position::Line(i + 1), e.to_string()))?;
        records.push(EmbeddingRecord::new(parsed.utterance_id, parsed.speaker_id, parsed.vector));
    }
    Ok(records)
}

/// Decoded matrix: (N, D, row-major values).
fn decode_matrix(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < HEADER_LEN {
        return Err(parse_err(path, Position::Byte(bytes.len() as u64), "truncated header"));
    }
    if &bytes[..8] != MATRIX_MAGIC {
        return Err(parse_err(path, Position::Byte(0), "bad magic, expected EMBT0001"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = HEADER_LEN as u64 + (n as u64) * (d as u64) * 4;
    if bytes.len() as u64 != expected {
        return Err(parse_err(
            path,
            Position::Byte(bytes.len().min(expected as usize) as u64),
            format!("matrix holds {} bytes, header N={n} D={d} requires {expected}", bytes.len()),
        ));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((n, d, values))
}

fn read_manifest_binary(paths: &DatasetPaths) -> Result<Vec<EmbeddingRecord>> {
    let (n, d, values) = decode_matrix(&paths.matrix, &read_file(&paths.matrix)?)?;
    let text = String::from_utf8(read_file(&paths.manifest)?).map_err(|e| {
        parse_err(&paths.manifest, Position::Byte(e.utf8_error().valid_up_to() as u64), "invalid UTF-8")
    })?;
    let mut slots: Vec<Option<(String, String)>> = vec![None; n];
    let mut count = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pos = Position::Line(i + 1);
        let entry: ManifestLine =
            serde_json::from_str(line).map_err(|e| parse_err(&paths.manifest, pos, e.to_string()))?;
        let row = usize::try_from(entry.row).unwrap_or(usize::MAX);
        let slot = slots
            .get_mut(row)
            .ok_or_else(|| parse_err(&paths.manifest, pos, format!("row {} outside 0..{n}", entry.row)))?;
        if slot.is_some() {
            return Err(parse_err(&paths.manifest, pos, format!("row {} listed twice", entry.row)));
        }
        *slot = Some((entry.utterance_id, entry.speaker_id));
        count += 1;
    }
    if count != n {
        return Err(Error::validation(format!(
            "{} lists {count} rows but matrix header declares {n}",
            paths.manifest.display()
        )));
    }
    Ok(slots
        .into_iter()
        .enumerate()
        .map(|(row, ids)| {
            let (utt, spk) = ids.expect("all rows filled");
            EmbeddingRecord::new(utt, spk, values[row * d..(row + 1) * d].to_vec())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingDataset {
        let records = (0..3)
            .map(|i| EmbeddingRecord::new(format!("u{i}"), "spk", vec![i as f32, 0.5, -1.25, 1e-7]))
            .collect();
        EmbeddingDataset::new(records, "test").unwrap()
    }

    #[test]
    fn resolves_sibling_paths() {
        let a = DatasetPaths::resolve(Path::new("x/data.manifest.jsonl"));
        let b = DatasetPaths::resolve(Path::new("x/data.embt"));
        let c = DatasetPaths::resolve(Path::new("x/data"));
        assert_eq!(a, b);
        assert_eq!(b, c);
        assert_eq!(a.matrix, PathBuf::from("x/data.embt"));
    }

    #[test]
    fn binary_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let data = sample();
        for fmt in [DatasetFormat::ManifestBinary, DatasetFormat::Jsonl] {
            let p = dir.path().join(format!("d-{fmt:?}"));
            save_dataset(&data, &p, fmt).unwrap();
            let back = load_dataset(&p, fmt).unwrap();
            assert_eq!(back.len(), 3);
            assert_eq!(back.dim(), 4);
            for (a, b) in data.records().iter().zip(back.records()) {
                let bits_a: Vec<u32> = a.vector.iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u32> = b.vector.iter().map(|v| v.to_bits()).collect();
                assert_eq!(bits_a, bits_b);
                assert_eq!(a.utterance_id, b.utterance_id);
            }
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_matrix(&sample()).unwrap();
        assert_eq!(&bytes[..8], b"EMBT0001");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
        assert_eq!(bytes.len(), 16 + 3 * 4 * 4);
    }

    #[test]
    fn truncated_matrix_reports_byte_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d");
        save_dataset(&sample(), &p, DatasetFormat::ManifestBinary).unwrap();
        let m = DatasetPaths::resolve(&p).matrix;
        let bytes = fs::read(&m).unwrap();
        fs::write(&m, &bytes[..bytes.len() - 2]).unwrap();
        match load_dataset(&p, DatasetFormat::ManifestBinary) {
            Err(Error::Parse { position: Position::Byte(_), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_jsonl_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        fs::write(
            &p,
            "{\"utterance_id\":\"a\",\"speaker_id\":\"s\",\"vector\":[1,2]}\n{\"utterance_id\": oops}\n",
        )
        .unwrap();
        match load_dataset(&p, DatasetFormat::Jsonl) {
            Err(Error::Parse { position, .. }) => assert_eq!(position, Position::Line(2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn manifest_rows_must_be_a_permutation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d");
        save_dataset(&sample(), &p, DatasetFormat::ManifestBinary).unwrap();
        let paths = DatasetPaths::resolve(&p);
        fs::write(
            &paths.manifest,
            "{\"utterance_id\":\"a\",\"speaker_id\":\"s\",\"row\":0}\n{\"utterance_id\":\"b\",\"speaker_id\":\"s\",\"row\":0}\n",
        )
        .unwrap();
        assert!(matches!(
            load_dataset(&p, DatasetFormat::ManifestBinary),
            Err(Error::Parse { position: Position::Line(2), .. })
        ));
    }
}
