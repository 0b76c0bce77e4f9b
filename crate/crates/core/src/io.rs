//! On-disk formats: FVM1 matrices, descriptor-set indices, dataset
//! manifests, row-id lists and the header-plus-blocks container used for
//! fitted models.
//!
//! FVM1 layout: ASCII `FVM1`, rows as `u32` little-endian, cols as `u32`
//! little-endian, then `rows * cols` little-endian `f64` values in row-major
//! order. Nothing else: a 1x1 matrix is exactly 20 bytes.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const FVM1_MAGIC: &[u8; 4] = b"FVM1";
pub const FVM1_HEADER_LEN: usize = 12;

/// Serializes a matrix into FVM1 bytes.
pub fn encode_matrix(m: &Matrix) -> Result<Vec<u8>> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::validation(format!(
            "cannot store an empty {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::validation("matrix contains non-finite values"));
    }
    let rows = u32::try_from(m.rows())
        .map_err(|_| Error::validation("row count exceeds u32"))?;
    let cols = u32::try_from(m.cols())
        .map_err(|_| Error::validation("column count exceeds u32"))?;
    let mut out = Vec::with_capacity(FVM1_HEADER_LEN + 8 * m.as_slice().len());
    out.extend_from_slice(FVM1_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Reads one FVM1 matrix from a byte stream.
pub fn read_matrix_from<R: Read>(reader: &mut R) -> Result<Matrix> {
    let mut header = [0u8; FVM1_HEADER_LEN];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::format("truncated FVM1 header"))?;
    if &header[0..4] != FVM1_MAGIC {
        return Err(Error::format(format!(
            "bad magic {:?}, expected \"FVM1\"",
            String::from_utf8_lossy(&header[0..4])
        )));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::format(format!("empty matrix {rows}x{cols} in FVM1 header")));
    }
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format("FVM1 dimensions overflow"))?;
    let mut payload = vec![0u8; count * 8];
    reader
        .read_exact(&mut payload)
        .map_err(|_| Error::format(format!("truncated FVM1 payload for {rows}x{cols}")))?;
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("FVM1 payload contains non-finite values"));
    }
    Matrix::from_vec(rows, cols, data)
}

/// Decodes a buffer holding exactly one FVM1 matrix.
pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix> {
    let mut cursor = bytes;
    let m = read_matrix_from(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::format(format!(
            "{} trailing bytes after FVM1 payload",
            cursor.len()
        )));
    }
    Ok(m)
}

pub fn save_matrix(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_matrix(m)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let bytes = fs::read(path)?;
    decode_matrix(&bytes)
}

/// One contiguous group of descriptor rows, e.g. the words of a sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetEntry {
    pub set_id: String,
    pub row_begin: usize,
    pub row_end: usize,
}

/// Maps set ids onto non-overlapping row ranges of a descriptor matrix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SetIndex {
    entries: Vec<SetEntry>,
}

impl SetIndex {
    pub fn new(entries: Vec<SetEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.row_end <= e.row_begin {
                return Err(Error::validation(format!(
                    "set {:?}: empty range {}..{}",
                    e.set_id, e.row_begin, e.row_end
                )));
            }
            if !seen.insert(e.set_id.as_str()) {
                return Err(Error::validation(format!("duplicate set id {:?}", e.set_id)));
            }
        }
        let mut order: Vec<&SetEntry> = entries.iter().collect();
        order.sort_by_key(|e| e.row_begin);
        for w in order.windows(2) {
            if w[1].row_begin < w[0].row_end {
                return Err(Error::validation(format!(
                    "sets {:?} and {:?} overlap",
                    w[0].set_id, w[1].set_id
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[SetEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.set_id.clone()).collect()
    }

    /// Largest row index referenced plus one.
    pub fn row_extent(&self) -> usize {
        self.entries.iter().map(|e| e.row_end).max().unwrap_or(0)
    }

    /// Checks every range against a matrix with `rows` rows.
    pub fn check_bounds(&self, rows: usize) -> Result<()> {
        match self.entries.iter().find(|e| e.row_end > rows) {
            Some(e) => Err(Error::shape(format!(
                "set {:?} ends at row {} but the matrix has {rows} rows",
                e.set_id, e.row_end
            ))),
            None => Ok(()),
        }
    }

    /// Extracts each set's rows, in index order.
    pub fn extract(&self, descriptors: &Matrix) -> Result<Vec<Matrix>> {
        self.check_bounds(descriptors.rows())?;
        self.entries
            .iter()
            .map(|e| descriptors.slice_rows(e.row_begin, e.row_end))
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.set_id, e.row_begin, e.row_end));
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in data_lines(text) {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::format(format!(
                    "set index line {lineno}: expected 3 tab-separated fields, got {}",
                    fields.len()
                )));
            }
            entries.push(SetEntry {
                set_id: non_empty(fields[0], lineno)?.to_string(),
                row_begin: parse_field(fields[1], lineno)?,
                row_end: parse_field(fields[2], lineno)?,
            });
        }
        Self::new(entries)
    }
}

pub fn load_set_index(path: impl AsRef<Path>) -> Result<SetIndex> {
    SetIndex::parse_tsv(&fs::read_to_string(path)?)
}

pub fn save_set_index(index: &SetIndex, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, index.to_tsv())?;
    Ok(())
}

/// Dataset split of an image-sentence pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::validation(format!(
                "unknown split {other:?}; expected train, validation or test"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestPair {
    pub sentence_id: String,
    pub image_id: String,
    pub split: Split,
}

/// Sentence-to-image ground truth with split assignment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pairs: Vec<ManifestPair>,
}

impl Manifest {
    pub fn new(pairs: Vec<ManifestPair>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &pairs {
            if !seen.insert(p.sentence_id.as_str()) {
                return Err(Error::validation(format!(
                    "sentence {:?} appears more than once",
                    p.sentence_id
                )));
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[ManifestPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Sentence id to image id.
    pub fn image_of(&self) -> HashMap<&str, &str> {
        self.pairs
            .iter()
            .map(|p| (p.sentence_id.as_str(), p.image_id.as_str()))
            .collect()
    }

    /// Pairs belonging to one split.
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestPair> + '_ {
        self.pairs.iter().filter(move |p| p.split == split)
    }

    /// Distinct image ids of a split in first-appearance order.
    pub fn images_in(&self, split: Split) -> Vec<String> {
        let mut seen = HashSet::new();
        self.split(split)
            .filter(|p| seen.insert(p.image_id.as_str()))
            .map(|p| p.image_id.clone())
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&format!("{}\t{}\t{}\n", p.sentence_id, p.image_id, p.split));
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in data_lines(text) {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::format(format!(
                    "manifest line {lineno}: expected 3 tab-separated fields, got {}",
                    fields.len()
                )));
            }
            pairs.push(ManifestPair {
                sentence_id: non_empty(fields[0], lineno)?.to_string(),
                image_id: non_empty(fields[1], lineno)?.to_string(),
                split: fields[2].parse()?,
            });
        }
        Self::new(pairs)
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    Manifest::parse_tsv(&fs::read_to_string(path)?)
}

pub fn save_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, manifest.to_tsv())?;
    Ok(())
}

/// Reads a list of row labels, one id per line.
pub fn load_ids(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let mut seen = HashSet::new();
    let mut ids = Vec::new();
    for (lineno, line) in data_lines(&text) {
        let id = non_empty(line, lineno)?;
        if id.contains('\t') {
            return Err(Error::format(format!("id list line {lineno}: unexpected tab")));
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::validation(format!("duplicate id {id:?}")));
        }
        ids.push(id.to_string());
    }
    Ok(ids)
}

pub fn save_ids(ids: &[String], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::new();
    for id in ids {
        text.push_str(id);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Header line followed by FVM1 blocks in a fixed order.
pub(crate) fn write_container(header: &str, blocks: &[&Matrix]) -> Result<Vec<u8>> {
    debug_assert!(!header.contains('\n'));
    let mut out = Vec::new();
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for b in blocks {
        out.write_all(&encode_matrix(b)?)?;
    }
    Ok(out)
}

/// Splits a container into its header line and `count` FVM1 blocks.
pub(crate) fn read_container(bytes: &[u8], count: usize) -> Result<(String, Vec<Matrix>)> {
    let mut cursor = bytes;
    let mut header = String::new();
    cursor
        .read_line(&mut header)
        .map_err(|_| Error::format("container header is not UTF-8"))?;
    if !header.ends_with('\n') {
        return Err(Error::format("container header line is not terminated"));
    }
    header.pop();
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        blocks.push(read_matrix_from(&mut cursor)?);
    }
    if !cursor.is_empty() {
        return Err(Error::format("trailing bytes after container blocks"));
    }
    Ok((header, blocks))
}

/// Parses `key=value` tokens after a fixed prefix such as `HGLMM-MODEL v1`.
pub(crate) fn parse_header<'a>(header: &'a str, prefix: &str) -> Result<HashMap<&'a str, &'a str>> {
    let rest = header
        .strip_prefix(prefix)
        .ok_or_else(|| Error::format(format!("expected header starting with {prefix:?}")))?;
    let mut fields = HashMap::new();
    for token in rest.split_whitespace() {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| Error::format(format!("bad header token {token:?}")))?;
        fields.insert(k, v);
    }
    Ok(fields)
}

pub(crate) fn header_field<T: FromStr>(fields: &HashMap<&str, &str>, key: &str) -> Result<T> {
    let raw = fields
        .get(key)
        .ok_or_else(|| Error::format(format!("header is missing {key}=")))?;
    raw.parse()
        .map_err(|_| Error::format(format!("header field {key}={raw} is malformed")))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.is_empty())
}

fn non_empty(field: &str, lineno: usize) -> Result<&str> {
    if field.is_empty() {
        Err(Error::format(format!("line {lineno}: empty field")))
    } else {
        Ok(field)
    }
}

fn parse_field<T: FromStr>(field: &str, lineno: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::format(format!("line {lineno}: cannot parse {field:?}")))
}
