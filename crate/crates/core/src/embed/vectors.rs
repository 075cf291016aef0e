use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;

use super::EmbedError;

/// Token → dense vector lookup with a fixed dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
}

impl VectorTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: HashMap::new(),
        }
    }

    pub fn from_entries<I>(dim: usize, entries: I) -> Result<Self, EmbedError>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut table = Self::new(dim);
        for (token, v) in entries {
            table.insert(token, v)?;
        }
        Ok(table)
    }

    /// Inserts or replaces a vector; returns whether the token was already present.
    pub fn insert(&mut self, token: String, v: Vec<f64>) -> Result<bool, EmbedError> {
        if v.len() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(self.entries.insert(token, v).is_some())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    /// Tokens in lexicographic order.
    pub fn tokens(&self) -> Vec<&str> {
        let mut t: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        t.sort_unstable();
        t
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub bad_lines: Vec<usize>,
    pub duplicates: usize,
}

/// Loads a GloVe-style text file, one `token v1 ... vD` per line.
///
/// `D` comes from the first line. Lines of the wrong arity (or with values
/// that do not parse) are skipped while their count stays within
/// `bad_line_tolerance`; one more is a hard error. Duplicate tokens keep the
/// last occurrence.
pub fn load_word_vectors(
    path: &Path,
    bad_line_tolerance: usize,
) -> Result<(VectorTable, LoadReport), EmbedError> {
    let file = File::open(path).map_err(|source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_word_vectors(BufReader::new(file), bad_line_tolerance)
}

pub fn read_word_vectors<R: BufRead>(
    reader: R,
    bad_line_tolerance: usize,
) -> Result<(VectorTable, LoadReport), EmbedError> {
    let mut table: Option<VectorTable> = None;
    let mut report = LoadReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| EmbedError::Io {
            path: "<reader>".into(),
            source,
        })?;
        let line_no = idx + 1;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        let table = table.get_or_insert_with(|| {
            VectorTable::new(values.as_ref().map_or(0, Vec::len))
        });
        let expected = table.dim();
        match values {
            Ok(v) if v.len() == expected && expected > 0 => {
                if table.insert(token.to_string(), v)? {
                    warn!("line {line_no}: duplicate token {token:?}, keeping the later vector");
                    report.duplicates += 1;
                }
            }
            other => {
                let found = other.map_or(0, |v| v.len());
                report.bad_lines.push(line_no);
                if report.bad_lines.len() > bad_line_tolerance {
                    return Err(EmbedError::BadVectorLine {
                        line: line_no,
                        expected,
                        found,
                        bad_lines: report.bad_lines.len(),
                        tolerance: bad_line_tolerance,
                    });
                }
                warn!("line {line_no}: skipping vector with {found} values (expected {expected})");
            }
        }
    }
    match table {
        Some(t) if !t.is_empty() => Ok((t, report)),
        _ => Err(EmbedError::EmptyVectors),
    }
}

/// Writes a table in the text format read by [`load_word_vectors`], tokens sorted.
pub fn write_word_vectors<W: Write>(mut w: W, table: &VectorTable) -> std::io::Result<()> {
    for token in table.tokens() {
        write!(w, "{token}")?;
        for x in table.get(token).unwrap_or_default() {
            write!(w, " {x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
