//! Labeled utterance-level embedding sets and their CSV / binary encodings.
//!
//! CSV layout: header `utt_id,spk_id,d1,...,dD`, one record per row.
//!
//! Binary layout (little-endian): magic `EMB1`, `u32` version = 1, `u32` D,
//! `u64` N, then N records of `u16` utterance-id length, UTF-8 bytes, `u16`
//! speaker-id length, UTF-8 bytes and D `f32` components.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub utt_id: String,
    pub spk_id: String,
    pub vector: Vec<f64>,
}

/// A collection of embeddings with unique utterance ids and a shared
/// dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    records: Vec<Embedding>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Csv,
    Binary,
}

impl std::str::FromStr for EmbeddingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(EmbeddingFormat::Csv),
            "binary" | "bin" => Ok(EmbeddingFormat::Binary),
            other => Err(Error::Invalid(format!(
                "unknown embedding format '{other}' (expected csv or binary)"
            ))),
        }
    }
}

const MAGIC: &[u8; 4] = b"EMB1";
const VERSION: u32 = 1;

impl EmbeddingSet {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("embedding dimension must be at least 1".into()));
        }
        Ok(EmbeddingSet {
            dim,
            records: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn from_records(records: Vec<Embedding>) -> Result<Self> {
        let dim = records
            .first()
            .map(|r| r.vector.len())
            .ok_or_else(|| Error::InsufficientData { needed: 1, got: 0 })?;
        let mut set = EmbeddingSet::new(dim)?;
        for r in records {
            set.push(r)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, record: Embedding) -> Result<()> {
        if record.vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "utterance '{}' has dimension {}, expected {}",
                record.utt_id,
                record.vector.len(),
                self.dim
            )));
        }
        if let Some(j) = record.vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "utterance '{}', component {}",
                record.utt_id,
                j + 1
            )));
        }
        if self.index.contains_key(&record.utt_id) {
            return Err(Error::DuplicateId(record.utt_id));
        }
        self.index.insert(record.utt_id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Embedding] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Embedding> {
        self.records.iter()
    }

    pub fn get(&self, utt_id: &str) -> Option<&Embedding> {
        self.index.get(utt_id).map(|&i| &self.records[i])
    }

    pub fn vectors(&self) -> Vec<&[f64]> {
        self.records.iter().map(|r| r.vector.as_slice()).collect()
    }

    /// Speaker ids in order of first appearance.
    pub fn speakers(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.spk_id.as_str()))
            .map(|r| r.spk_id.as_str())
            .collect()
    }

    /// Replaces every vector with `f(record)`, keeping ids and order.
    pub fn try_map_vectors<F>(&self, mut f: F) -> Result<EmbeddingSet>
    where
        F: FnMut(&Embedding) -> Result<Vec<f64>>,
    {
        let mut out = EmbeddingSet::new(self.dim)?;
        for r in &self.records {
            out.push(Embedding {
                utt_id: r.utt_id.clone(),
                spk_id: r.spk_id.clone(),
                vector: f(r)?,
            })?;
        }
        Ok(out)
    }

    /// Rounds every component to the nearest `f32`, the precision of the
    /// binary encoding.
    pub fn to_f32_precision(&self) -> EmbeddingSet {
        let mut out = self.clone();
        for r in &mut out.records {
            for v in &mut r.vector {
                *v = *v as f32 as f64;
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["utt_id".to_string(), "spk_id".to_string()];
        header.extend((1..=self.dim).map(|j| format!("d{j}")));
        w.write_record(&header).map_err(csv_error)?;
        let mut row = Vec::with_capacity(self.dim + 2);
        for r in &self.records {
            row.clear();
            row.push(r.utt_id.clone());
            row.push(r.spk_id.clone());
            // `{}` on f64 prints the shortest text that parses back to the same value.
            row.extend(r.vector.iter().map(|v| format!("{v}")));
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::io("writing embeddings csv", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = rdr.records();
        let header = rows
            .next()
            .ok_or_else(|| Error::Format("empty embeddings csv".into()))?
            .map_err(csv_error)?;
        if header.len() < 3 || &header[0] != "utt_id" || &header[1] != "spk_id" {
            return Err(Error::Format(
                "embeddings csv header must start with utt_id,spk_id,d1".into(),
            ));
        }
        for (j, name) in header.iter().skip(2).enumerate() {
            if name != format!("d{}", j + 1) {
                return Err(Error::Format(format!(
                    "bad header column '{name}', expected 'd{}'",
                    j + 1
                )));
            }
        }
        let dim = header.len() - 2;
        let mut set = EmbeddingSet::new(dim)?;
        for (k, row) in rows.enumerate() {
            let line = k + 2;
            let row = row.map_err(csv_error)?;
            if row.len() != dim + 2 {
                return Err(Error::Format(format!(
                    "line {line}: {} fields, expected {}",
                    row.len(),
                    dim + 2
                )));
            }
            let vector = row
                .iter()
                .skip(2)
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::Format(format!("line {line}: bad number '{f}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            set.push(Embedding {
                utt_id: row[0].to_string(),
                spk_id: row[1].to_string(),
                vector,
            })?;
        }
        Ok(set)
    }

    pub fn to_binary(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(20 + self.records.len() * (self.dim * 4 + 32));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let dim = u32::try_from(self.dim)
            .map_err(|_| Error::Invalid(format!("dimension {} too large", self.dim)))?;
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            write_id(&mut out, &r.utt_id)?;
            write_id(&mut out, &r.spk_id)?;
            for &v in &r.vector {
                let f = v as f32;
                if !f.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "utterance '{}' overflows f32",
                        r.utt_id
                    )));
                }
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, expected EMB1".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dim = cur.u32()? as usize;
        let n = cur.u64()?;
        let mut set = EmbeddingSet::new(dim).map_err(|_| Error::Format("zero dimension".into()))?;
        for k in 0..n {
            let utt_id = cur.id(k)?;
            let spk_id = cur.id(k)?;
            let raw = cur.take(
                dim.checked_mul(4)
                    .ok_or_else(|| Error::Format("dimension overflow".into()))?,
            )?;
            let vector = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            set.push(Embedding {
                utt_id,
                spk_id,
                vector,
            })?;
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after {n} records",
                bytes.len() - cur.pos
            )));
        }
        Ok(set)
    }

    /// Reads a file, detecting the binary encoding by its magic when
    /// `format` is `None`.
    pub fn load(path: &Path, format: Option<EmbeddingFormat>) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let format = format.unwrap_or(if bytes.starts_with(MAGIC) {
            EmbeddingFormat::Binary
        } else {
            EmbeddingFormat::Csv
        });
        match format {
            EmbeddingFormat::Binary => EmbeddingSet::from_binary(&bytes),
            EmbeddingFormat::Csv => EmbeddingSet::read_csv(bytes.as_slice()),
        }
    }

    pub fn save(&self, path: &Path, format: EmbeddingFormat) -> Result<()> {
        let bytes = match format {
            EmbeddingFormat::Binary => self.to_binary()?,
            EmbeddingFormat::Csv => {
                let mut buf = Vec::new();
                self.write_csv(&mut buf)?;
                buf
            }
        };
        std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

impl<'a> IntoIterator for &'a EmbeddingSet {
    type Item = &'a Embedding;
    type IntoIter = std::slice::Iter<'a, Embedding>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io("embeddings csv", io),
            _ => unreachable!(),
        },
        _ => Error::Format(e.to_string()),
    }
}

fn write_id(out: &mut Vec<u8>, id: &str) -> Result<()> {
    let len = u16::try_from(id.len())
        .map_err(|_| Error::Invalid(format!("id longer than 65535 bytes: '{id:.32}...'")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(id.as_bytes());
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn id(&mut self, record: u64) -> Result<String> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Format(format!("record {record}: id is not valid UTF-8")))
    }
}
