//! Feature tables, identity manifests and their on-disk formats.
//!
//! Three formats are supported:
//!
//! * binary: the bytes `FSF1`, then `n` and `d` as little-endian `u32`, then
//!   `n * d` little-endian `f32` values in row-major order. Row IDs live in a
//!   sidecar file next to it (see [`sidecar_path`]), one UTF-8 ID per line.
//! * csv: a header row whose first column is `id`, followed by `d` numeric
//!   columns.
//! * identity manifest: one record per line,
//!   `identity_id<TAB>image_id[<TAB>key=value ...]`. An identity spanning
//!   several images repeats its ID on several lines.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Magic bytes opening every binary feature file.
pub const BINARY_MAGIC: &[u8; 4] = b"FSF1";

const HEADER_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic bytes, expected FSF1")]
    BadMagic { path: PathBuf },
    #[error("{path}: file too short for the 12-byte header")]
    TruncatedHeader { path: PathBuf },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value {value} at row {row}, column {column}")]
    NonFinite { row: usize, column: String, value: f32 },
    #[error("duplicate image id {id:?} at rows {first} and {second}")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },
    #[error("invalid image id at row {row}: {reason}")]
    InvalidId { row: usize, reason: String },
    #[error("feature table must have at least one row and one column (got {rows}x{cols})")]
    Empty { rows: usize, cols: usize },
    #[error("csv line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("manifest line {line}: unknown image id {image:?}")]
    UnknownImage { line: usize, image: String },
    #[error("image {image:?} claimed by both {first:?} and {second:?}")]
    ImageClaimedTwice {
        image: String,
        first: String,
        second: String,
    },
    #[error("identity {identity:?} has no images")]
    EmptyIdentity { identity: String },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

impl FeatureError {
    pub fn is_io(&self) -> bool {
        matches!(self, FeatureError::Io { .. })
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        FeatureError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// On-disk representation of a [`FeatureTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Binary,
    Csv,
}

impl FeatureFormat {
    /// `.csv` files are read as csv, everything else as binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::Binary,
        }
    }
}

/// Location of the ID sidecar for a binary feature file: the same path with
/// `.ids` appended (`pool.fsf` -> `pool.fsf.ids`).
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

/// An `n x d` matrix of `f32` embeddings with one unique ID per row.
///
/// Tables are immutable once built; every constructor validates shape,
/// finiteness and ID uniqueness.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    ids: Vec<String>,
    data: Vec<f32>,
    dim: usize,
    lookup: HashMap<String, usize>,
}

impl PartialEq for FeatureTable {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.ids == other.ids && self.data == other.data
    }
}

fn check_id(row: usize, id: &str) -> Result<(), FeatureError> {
    let reason = if id.is_empty() {
        "empty id"
    } else if id.contains(['\n', '\r', '\t']) {
        "id contains a tab or line break"
    } else if id != id.trim() {
        "id has leading or trailing whitespace"
    } else {
        return Ok(());
    };
    Err(FeatureError::InvalidId {
        row,
        reason: reason.to_string(),
    })
}

impl FeatureTable {
    /// Builds a table from row IDs and row-major values.
    pub fn new(ids: Vec<String>, data: Vec<f32>, dim: usize) -> Result<Self, FeatureError> {
        if ids.is_empty() || dim == 0 {
            return Err(FeatureError::Empty {
                rows: ids.len(),
                cols: dim,
            });
        }
        if data.len() != ids.len() * dim {
            return Err(FeatureError::DimensionMismatch(format!(
                "{} ids x {} columns needs {} values, got {}",
                ids.len(),
                dim,
                ids.len() * dim,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite {
                row: pos / dim,
                column: (pos % dim).to_string(),
                value: data[pos],
            });
        }
        let mut lookup = HashMap::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            check_id(row, id)?;
            if let Some(first) = lookup.insert(id.clone(), row) {
                return Err(FeatureError::DuplicateId {
                    id: id.clone(),
                    first,
                    second: row,
                });
            }
        }
        Ok(Self {
            ids,
            data,
            dim,
            lookup,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Row-major values.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    /// New table holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self, FeatureError> {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        let mut ids = Vec::with_capacity(rows.len());
        for &r in rows {
            ids.push(self.ids[r].clone());
            data.extend_from_slice(self.row(r));
        }
        Self::new(ids, data, self.dim)
    }

    /// New table holding the rows with the given IDs, in the given order.
    pub fn select_ids<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self, FeatureError> {
        let rows = ids
            .iter()
            .enumerate()
            .map(|(line, id)| {
                self.index_of(id.as_ref())
                    .ok_or_else(|| FeatureError::UnknownImage {
                        line: line + 1,
                        image: id.as_ref().to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.subset(&rows)
    }
}

pub fn load_features(path: &Path, format: FeatureFormat) -> Result<FeatureTable, FeatureError> {
    match format {
        FeatureFormat::Binary => load_binary(path),
        FeatureFormat::Csv => load_csv(path),
    }
}

pub fn save_features(
    table: &FeatureTable,
    path: &Path,
    format: FeatureFormat,
) -> Result<(), FeatureError> {
    match format {
        FeatureFormat::Binary => save_binary(table, path),
        FeatureFormat::Csv => save_csv(table, path),
    }
}

/// Encodes the binary payload (header plus values, without IDs).
pub fn encode_binary(table: &FeatureTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + table.data.len() * 4);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    out.extend_from_slice(&(table.dim as u32).to_le_bytes());
    for v in &table.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a binary payload against the given IDs.
pub fn decode_binary(
    bytes: &[u8],
    ids: Vec<String>,
    path: &Path,
) -> Result<FeatureTable, FeatureError> {
    if bytes.len() < HEADER_LEN {
        return Err(FeatureError::TruncatedHeader {
            path: path.to_path_buf(),
        });
    }
    if &bytes[..4] != BINARY_MAGIC {
        return Err(FeatureError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| FeatureError::DimensionMismatch(format!("header n={n} d={d} overflows")))?;
    if payload.len() != expected {
        return Err(FeatureError::DimensionMismatch(format!(
            "header declares n={n} d={d} ({expected} payload bytes) but payload has {} bytes",
            payload.len()
        )));
    }
    if ids.len() != n {
        return Err(FeatureError::DimensionMismatch(format!(
            "header declares n={n} rows but the id sidecar has {} lines",
            ids.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureTable::new(ids, data, d)
}

fn read_id_lines(path: &Path) -> Result<Vec<String>, FeatureError> {
    let text = fs::read_to_string(path).map_err(|e| FeatureError::io(path, e))?;
    let body = text.strip_suffix('\n').unwrap_or(&text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    Ok(body.split('\n').map(str::to_string).collect())
}

fn load_binary(path: &Path) -> Result<FeatureTable, FeatureError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| FeatureError::io(path, e))?;
    let ids = read_id_lines(&sidecar_path(path))?;
    decode_binary(&bytes, ids, path)
}

fn save_binary(table: &FeatureTable, path: &Path) -> Result<(), FeatureError> {
    fs::write(path, encode_binary(table)).map_err(|e| FeatureError::io(path, e))?;
    let sidecar = sidecar_path(path);
    let mut ids = String::new();
    for id in &table.ids {
        ids.push_str(id);
        ids.push('\n');
    }
    fs::write(&sidecar, ids).map_err(|e| FeatureError::io(&sidecar, e))
}

fn csv_err(e: csv::Error, path: &Path) -> FeatureError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => FeatureError::io(path, source),
        other => FeatureError::Csv {
            line,
            message: format!("{other:?}"),
        },
    }
}

fn load_csv(path: &Path) -> Result<FeatureTable, FeatureError> {
    let file = File::open(path).map_err(|e| FeatureError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header = reader.headers().map_err(|e| csv_err(e, path))?.clone();
    if header.get(0) != Some("id") {
        return Err(FeatureError::Csv {
            line: 1,
            message: "first header column must be `id`".into(),
        });
    }
    let dim = header.len() - 1;
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(e, path))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != dim + 1 {
            return Err(FeatureError::DimensionMismatch(format!(
                "csv line {line} has {} value columns, header declares {dim}",
                record.len().saturating_sub(1)
            )));
        }
        let row = ids.len();
        ids.push(record[0].to_string());
        for (j, cell) in record.iter().skip(1).enumerate() {
            let value: f32 = cell.trim().parse().map_err(|_| FeatureError::Csv {
                line,
                message: format!("row {row}, column {}: cannot parse {cell:?}", columns[j]),
            })?;
            if !value.is_finite() {
                return Err(FeatureError::NonFinite {
                    row,
                    column: columns[j].clone(),
                    value,
                });
            }
            data.push(value);
        }
    }
    FeatureTable::new(ids, data, dim)
}

fn save_csv(table: &FeatureTable, path: &Path) -> Result<(), FeatureError> {
    let file = File::create(path).map_err(|e| FeatureError::io(path, e))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["id".to_string()];
    header.extend((0..table.dim).map(|j| format!("f{j}")));
    writer.write_record(&header).map_err(|e| csv_err(e, path))?;
    let mut record = Vec::with_capacity(table.dim + 1);
    for i in 0..table.len() {
        record.clear();
        record.push(table.ids[i].clone());
        // `{}` on f32 prints the shortest decimal that parses back to the same bits.
        record.extend(table.row(i).iter().map(|v| v.to_string()));
        writer.write_record(&record).map_err(|e| csv_err(e, path))?;
    }
    writer
        .flush()
        .map_err(|e| FeatureError::io(path, e))
}

/// One identity: a group of table rows plus free-form attribute tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Identity {
    pub id: String,
    /// Row indices into the companion [`FeatureTable`], in manifest order.
    pub rows: Vec<usize>,
    pub attrs: BTreeMap<String, String>,
}

/// Grouping of table rows into identities, ordered lexicographically by ID.
///
/// Each row belongs to at most one identity. Rows not named by any identity
/// take no part in a search.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityIndex {
    identities: Vec<Identity>,
}

impl IdentityIndex {
    /// One identity per row, named after the row's image ID.
    pub fn singletons(table: &FeatureTable) -> Self {
        let mut identities: Vec<Identity> = table
            .ids()
            .iter()
            .enumerate()
            .map(|(row, id)| Identity {
                id: id.clone(),
                rows: vec![row],
                attrs: BTreeMap::new(),
            })
            .collect();
        identities.sort_by(|a, b| a.id.cmp(&b.id));
        Self { identities }
    }

    /// Builds an index from `(identity, image ids, attrs)` groups.
    pub fn from_groups<I>(table: &FeatureTable, groups: I) -> Result<Self, FeatureError>
    where
        I: IntoIterator<Item = (String, Vec<String>, BTreeMap<String, String>)>,
    {
        let mut text = String::new();
        for (id, images, attrs) in groups {
            if images.is_empty() {
                return Err(FeatureError::EmptyIdentity { identity: id });
            }
            for image in images {
                text.push_str(&id);
                text.push('\t');
                text.push_str(&image);
                for (k, v) in &attrs {
                    text.push_str(&format!("\t{k}={v}"));
                }
                text.push('\n');
            }
        }
        Self::parse_manifest(&text, table)
    }

    /// Parses manifest text against `table`.
    pub fn parse_manifest(text: &str, table: &FeatureTable) -> Result<Self, FeatureError> {
        let mut by_id: BTreeMap<String, Identity> = BTreeMap::new();
        let mut owner: HashMap<usize, String> = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let mut fields = raw.split('\t');
            let identity = fields.next().unwrap_or_default();
            if identity.is_empty() {
                return Err(FeatureError::Manifest {
                    line,
                    message: "empty identity id".into(),
                });
            }
            let image = fields.next().unwrap_or_default();
            if image.is_empty() {
                return Err(FeatureError::EmptyIdentity {
                    identity: identity.to_string(),
                });
            }
            let row = table
                .index_of(image)
                .ok_or_else(|| FeatureError::UnknownImage {
                    line,
                    image: image.to_string(),
                })?;
            if let Some(prev) = owner.insert(row, identity.to_string()) {
                return Err(FeatureError::ImageClaimedTwice {
                    image: image.to_string(),
                    first: prev,
                    second: identity.to_string(),
                });
            }
            let entry = by_id
                .entry(identity.to_string())
                .or_insert_with(|| Identity {
                    id: identity.to_string(),
                    rows: Vec::new(),
                    attrs: BTreeMap::new(),
                });
            entry.rows.push(row);
            for attr in fields {
                let (k, v) = attr.split_once('=').ok_or_else(|| FeatureError::Manifest {
                    line,
                    message: format!("attribute {attr:?} is not key=value"),
                })?;
                if let Some(old) = entry.attrs.insert(k.to_string(), v.to_string()) {
                    if old != v {
                        return Err(FeatureError::Manifest {
                            line,
                            message: format!(
                                "identity {identity:?} attribute {k} is both {old:?} and {v:?}"
                            ),
                        });
                    }
                }
            }
        }
        Ok(Self {
            identities: by_id.into_values().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    pub fn identities(&self) -> &[Identity] {
        &self.identities
    }

    pub fn get(&self, id: &str) -> Option<&Identity> {
        self.identities
            .binary_search_by(|probe| probe.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.identities[i])
    }

    /// Total number of images across all identities.
    pub fn image_count(&self) -> usize {
        self.identities.iter().map(|i| i.rows.len()).sum()
    }

    /// Identity of every covered row, `None` for rows outside the index.
    pub fn row_owners(&self, rows: usize) -> Vec<Option<usize>> {
        let mut owners = vec![None; rows];
        for (pos, identity) in self.identities.iter().enumerate() {
            for &r in &identity.rows {
                owners[r] = Some(pos);
            }
        }
        owners
    }

    pub fn to_manifest_string(&self, table: &FeatureTable) -> String {
        let mut out = String::new();
        for identity in &self.identities {
            for &row in &identity.rows {
                out.push_str(&identity.id);
                out.push('\t');
                out.push_str(&table.ids()[row]);
                for (k, v) in &identity.attrs {
                    out.push('\t');
                    out.push_str(k);
                    out.push('=');
                    out.push_str(v);
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, table: &FeatureTable, path: &Path) -> Result<(), FeatureError> {
        let mut file = File::create(path).map_err(|e| FeatureError::io(path, e))?;
        file.write_all(self.to_manifest_string(table).as_bytes())
            .map_err(|e| FeatureError::io(path, e))
    }
}

/// Loads an identity manifest, or synthesizes one identity per image when
/// `path` is `None`.
pub fn load_identities(
    path: Option<&Path>,
    table: &FeatureTable,
) -> Result<IdentityIndex, FeatureError> {
    match path {
        None => Ok(IdentityIndex::singletons(table)),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| FeatureError::io(path, e))?;
            IdentityIndex::parse_manifest(&text, table)
        }
    }
}

/// Reads a newline-delimited ID list (blank lines ignored).
pub fn read_id_list(path: &Path) -> Result<Vec<String>, FeatureError> {
    let text = fs::read_to_string(path).map_err(|e| FeatureError::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}
