//! Binary data ingestion and the immutable sparse matrix used downstream.
//!
//! Three on-disk formats are understood:
//!
//! * transactions: one sample per line, item tokens separated by commas
//!   and/or whitespace. Columns are the distinct tokens sorted
//!   lexicographically.
//! * dense CSV: 0/1 cells, with an optional header row and an optional
//!   leading label column.
//! * triplets: `row_label,col_label` lines, one per cell equal to 1.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_TOKEN_LIMIT: usize = 1 << 20;

/// An n x d binary matrix stored as sorted row-index lists per column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryDataset {
    n: usize,
    /// `columns[j]` holds the sorted rows i with X_ij = 1.
    columns: Vec<Vec<usize>>,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
}

impl BinaryDataset {
    /// Builds a dataset from (row, col) cells. Duplicate cells collapse.
    pub fn from_cells(
        row_labels: Vec<String>,
        col_labels: Vec<String>,
        cells: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let n = row_labels.len();
        let d = col_labels.len();
        let mut columns = vec![Vec::new(); d];
        for (i, j) in cells {
            if i >= n || j >= d {
                return Err(Error::Shape(format!(
                    "cell ({i}, {j}) outside a {n} x {d} matrix"
                )));
            }
            columns[j].push(i);
        }
        for col in &mut columns {
            col.sort_unstable();
            col.dedup();
        }
        Ok(Self {
            n,
            columns,
            row_labels,
            col_labels,
        })
    }

    /// Builds a dataset from a row-major dense 0/1 matrix with default labels.
    pub fn from_dense(rows: &[Vec<u8>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut cells = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::RaggedRow {
                    row: i,
                    expected: d,
                    found: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => cells.push((i, j)),
                    other => {
                        return Err(Error::NonBinaryCell {
                            row: i,
                            col: j,
                            value: other.to_string(),
                        })
                    }
                }
            }
        }
        Self::from_cells(default_row_labels(rows.len()), default_col_labels(d), cells)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.columns.len()
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    /// Sorted row indices where column `j` is 1.
    pub fn column(&self, j: usize) -> &[usize] {
        &self.columns[j]
    }

    pub fn column_sum(&self, j: usize) -> usize {
        self.columns[j].len()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.columns[j].binary_search(&i).is_ok()
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    /// All cells in column-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.columns
            .iter()
            .enumerate()
            .flat_map(|(j, rows)| rows.iter().map(move |&i| (i, j)))
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut out = vec![vec![0u8; self.d()]; self.n];
        for (i, j) in self.cells() {
            out[i][j] = 1;
        }
        out
    }

    /// Rows as sorted column-index lists.
    pub fn rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.n];
        for (j, col) in self.columns.iter().enumerate() {
            for &i in col {
                rows[i].push(j);
            }
        }
        rows
    }

    pub fn row_sums(&self) -> Vec<usize> {
        let mut sums = vec![0; self.n];
        for col in &self.columns {
            for &i in col {
                sums[i] += 1;
            }
        }
        sums
    }

    pub fn col_index(&self, label: &str) -> Option<usize> {
        self.col_labels.iter().position(|l| l == label)
    }

    /// Resolves column labels to indices, reporting every unknown label at once.
    pub fn resolve_labels<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        let index: HashMap<&str, usize> = self
            .col_labels
            .iter()
            .enumerate()
            .map(|(j, l)| (l.as_str(), j))
            .collect();
        let mut found = Vec::with_capacity(labels.len());
        let mut missing = Vec::new();
        for l in labels {
            match index.get(l.as_ref()) {
                Some(&j) => found.push(j),
                None => missing.push(l.as_ref().to_string()),
            }
        }
        if missing.is_empty() {
            Ok(found)
        } else {
            Err(Error::UnknownLabels(missing))
        }
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_columns(&self, keep: &[usize]) -> Self {
        Self {
            n: self.n,
            columns: keep.iter().map(|&j| self.columns[j].clone()).collect(),
            row_labels: self.row_labels.clone(),
            col_labels: keep.iter().map(|&j| self.col_labels[j].clone()).collect(),
        }
    }

    /// Removes columns whose sum is 0 or n, returning the surviving dataset,
    /// the original indices of the kept columns, and the removed labels.
    pub fn filter_degenerate_indexed(&self) -> (Self, Vec<usize>, Vec<String>) {
        let (keep, drop): (Vec<usize>, Vec<usize>) = (0..self.d()).partition(|&j| {
            let s = self.column_sum(j);
            s > 0 && s < self.n
        });
        let removed = drop.iter().map(|&j| self.col_labels[j].clone()).collect();
        (self.select_columns(&keep), keep, removed)
    }

    /// Removes columns with sum 0 or n. Idempotent.
    pub fn filter_degenerate(&self) -> (Self, Vec<String>) {
        let (ds, _, removed) = self.filter_degenerate_indexed();
        (ds, removed)
    }

    /// Per-column means; fails on any degenerate column.
    pub fn column_means<T: Real>(&self) -> Result<ColumnStats<T>> {
        let n = T::from_usize(self.n).expect("row count fits scalar");
        let mut xbar = Vec::with_capacity(self.d());
        for j in 0..self.d() {
            let s = self.column_sum(j);
            if s == 0 || s == self.n {
                return Err(Error::DegenerateColumn {
                    label: self.col_labels[j].clone(),
                });
            }
            xbar.push(T::from_usize(s).expect("count fits scalar") / n);
        }
        Ok(ColumnStats { xbar })
    }

    // ---- readers ----

    pub fn load_transactions(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_transactions_with_limit(path, DEFAULT_TOKEN_LIMIT)
    }

    pub fn load_transactions_with_limit(path: impl AsRef<Path>, token_limit: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_transactions(&text, token_limit).map_err(|e| match e {
            Error::EmptyInput(_) => Error::EmptyInput(path.display().to_string()),
            other => other,
        })
    }

    pub fn parse_transactions(text: &str, token_limit: usize) -> Result<Self> {
        let mut rows: Vec<BTreeSet<&str>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let tokens: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .collect();
            if tokens.is_empty() {
                continue;
            }
            if tokens.len() > token_limit {
                return Err(Error::TokenLimit {
                    line: lineno + 1,
                    count: tokens.len(),
                    limit: token_limit,
                });
            }
            rows.push(tokens.into_iter().collect());
        }
        if rows.is_empty() {
            return Err(Error::EmptyInput("transaction input".into()));
        }
        let vocab: BTreeSet<&str> = rows.iter().flatten().copied().collect();
        let col_index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(j, &t)| (t, j)).collect();
        let cells = rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |t| (i, t)))
            .map(|(i, t)| (i, col_index[t]))
            .collect::<Vec<_>>();
        Self::from_cells(
            default_row_labels(rows.len()),
            vocab.into_iter().map(str::to_owned).collect(),
            cells,
        )
    }

    /// Loads a dense CSV. `has_header`/`has_row_labels` of `None` auto-detect:
    /// a header is present when the first row has a non-binary cell after
    /// the first field; a label column when the header's first cell is empty
    /// or one of `label`/`id`/`row`/`sample`, or any row starts with a
    /// non-binary field.
    pub fn load_dense_csv(
        path: impl AsRef<Path>,
        has_header: Option<bool>,
        has_row_labels: Option<bool>,
    ) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_dense_csv(&text, has_header, has_row_labels).map_err(|e| match e {
            Error::EmptyInput(_) => Error::EmptyInput(path.display().to_string()),
            other => other,
        })
    }

    pub fn parse_dense_csv(
        text: &str,
        has_header: Option<bool>,
        has_row_labels: Option<bool>,
    ) -> Result<Self> {
        let lines: Vec<Vec<&str>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split(',').map(str::trim).collect())
            .collect();
        if lines.is_empty() {
            return Err(Error::EmptyInput("CSV input".into()));
        }
        let is_bin = |s: &str| s == "0" || s == "1";
        let header = has_header.unwrap_or_else(|| {
            let first = &lines[0];
            first.iter().skip(1).any(|c| !is_bin(c)) || (first.len() == 1 && !is_bin(first[0]))
        });
        let data = if header { &lines[1..] } else { &lines[..] };
        // A label column is assumed when the header names it, or any row starts with a non-0/1 cell.
        let labels_col = has_row_labels.unwrap_or_else(|| {
            let named = header
                && lines[0].first().is_some_and(|c| {
                    c.is_empty() || ["label", "id", "row", "sample"].contains(&c.to_ascii_lowercase().as_str())
                });
            named || data.iter().any(|r| !is_bin(r[0]))
        });
        let offset = usize::from(labels_col);
        let width = if header {
            lines[0].len()
        } else {
            data.first().map_or(0, Vec::len)
        };
        let d = width.saturating_sub(offset);
        let col_labels = if header {
            lines[0][offset..].iter().map(|s| s.to_string()).collect()
        } else {
            default_col_labels(d)
        };
        let mut row_labels = Vec::with_capacity(data.len());
        let mut cells = Vec::new();
        for (i, row) in data.iter().enumerate() {
            if row.len() != width {
                return Err(Error::RaggedRow {
                    row: i,
                    expected: width,
                    found: row.len(),
                });
            }
            row_labels.push(if labels_col {
                row[0].to_string()
            } else {
                (i + 1).to_string()
            });
            for (j, cell) in row[offset..].iter().enumerate() {
                match *cell {
                    "0" => {}
                    "1" => cells.push((i, j)),
                    other => {
                        return Err(Error::NonBinaryCell {
                            row: i,
                            col: j,
                            value: other.to_string(),
                        })
                    }
                }
            }
        }
        if row_labels.is_empty() {
            return Err(Error::EmptyInput("CSV input".into()));
        }
        Self::from_cells(row_labels, col_labels, cells)
    }

    /// Loads `row_label,col_label` triplets. Rows appear in first-seen
    /// order, columns sorted lexicographically.
    pub fn load_triplets(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_triplets(&text).map_err(|e| match e {
            Error::EmptyInput(_) => Error::EmptyInput(path.display().to_string()),
            other => other,
        })
    }

    pub fn parse_triplets(text: &str) -> Result<Self> {
        let mut row_index: HashMap<&str, usize> = HashMap::new();
        let mut row_labels: Vec<String> = Vec::new();
        let mut pairs: Vec<(usize, &str)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (r, c) = line.split_once(',').ok_or_else(|| Error::Malformed {
                line: lineno + 1,
                reason: "expected row_label,col_label".into(),
            })?;
            let (r, c) = (r.trim(), c.trim());
            if c.contains(',') {
                return Err(Error::Malformed {
                    line: lineno + 1,
                    reason: "expected exactly two fields".into(),
                });
            }
            if r.is_empty() || c.is_empty() {
                return Err(Error::Malformed {
                    line: lineno + 1,
                    reason: "empty label".into(),
                });
            }
            let i = *row_index.entry(r).or_insert_with(|| {
                row_labels.push(r.to_string());
                row_labels.len() - 1
            });
            pairs.push((i, c));
        }
        if pairs.is_empty() {
            return Err(Error::EmptyInput("triplet input".into()));
        }
        let cols: BTreeMap<&str, usize> = pairs
            .iter()
            .map(|&(_, c)| c)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(j, c)| (c, j))
            .collect();
        let cells: Vec<_> = pairs.iter().map(|&(i, c)| (i, cols[c])).collect();
        Self::from_cells(row_labels, cols.into_keys().map(str::to_owned).collect(), cells)
    }

    // ---- writers ----

    /// Dense CSV with a header row and a leading label column.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("label");
        for l in &self.col_labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (i, row) in self.to_dense().iter().enumerate() {
            out.push_str(&self.row_labels[i]);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Transactions text; fails if a label cannot be represented as a token.
    pub fn to_transactions(&self) -> Result<String> {
        if let Some(bad) = self
            .col_labels
            .iter()
            .find(|l| l.is_empty() || l.contains(|c: char| c == ',' || c.is_whitespace()))
        {
            return Err(Error::InvalidArgument(format!(
                "column label {bad:?} cannot be written as a transaction token"
            )));
        }
        let mut out = String::new();
        for row in self.rows() {
            let tokens: Vec<&str> = row.iter().map(|&j| self.col_labels[j].as_str()).collect();
            out.push_str(&tokens.join(" "));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn to_triplets(&self) -> String {
        let mut out = String::new();
        for (i, row) in self.rows().iter().enumerate() {
            for &j in row {
                let _ = writeln!(out, "{},{}", self.row_labels[i], self.col_labels[j]);
            }
        }
        out
    }
}

/// Column means `xbar_j`, each strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats<T> {
    pub xbar: Vec<T>,
}

pub fn default_row_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| i.to_string()).collect()
}

pub fn default_col_labels(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("V{j}")).collect()
}
