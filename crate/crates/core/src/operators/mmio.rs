//! Matrix Market reader and writer.
//!
//! Supports `array` (dense, column-major) and `coordinate` (sparse) files with
//! `real`/`integer`/`double` fields and `general`/`symmetric` storage.
//! Sparse-plus-low-rank operators use two files: `<stem>.B.mtx` holds the
//! sparse part, `<stem>.C.mtx` the dense `2n x m` factor.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use super::{CsrMatrix, SpdOperator};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum MatrixMarket {
    Dense(DMatrix<f64>),
    Sparse(CsrMatrix),
}

impl MatrixMarket {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatrixMarket::Dense(m) => m.shape(),
            MatrixMarket::Sparse(m) => (m.nrows(), m.ncols()),
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Layout {
    Array,
    Coordinate,
}

struct Parsed {
    matrix: MatrixMarket,
    size_line: usize,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse(path: &Path) -> Result<Parsed> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let tokens: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(path, hline, "expected '%%MatrixMarket matrix <format> <field> <symmetry>'"));
    }
    let layout = match tokens[2].as_str() {
        "array" => Layout::Array,
        "coordinate" => Layout::Coordinate,
        other => return Err(parse_err(path, hline, format!("unsupported format '{other}'"))),
    };
    match tokens[3].as_str() {
        "real" | "integer" | "double" => {}
        other => return Err(parse_err(path, hline, format!("unsupported field '{other}'"))),
    }
    let symmetric = match tokens[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse_err(path, hline, format!("unsupported symmetry '{other}'"))),
    };

    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (size_line, size) = body
        .next()
        .ok_or_else(|| parse_err(path, hline, "missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(path, size_line, format!("bad size line: {e}")))?;
    let expected = if layout == Layout::Array { 2 } else { 3 };
    if dims.len() != expected {
        return Err(parse_err(path, size_line, format!("size line needs {expected} integers")));
    }
    let (rows, cols) = (dims[0], dims[1]);
    if symmetric && rows != cols {
        return Err(parse_err(path, size_line, "symmetric storage requires a square matrix"));
    }

    let parse_value = |line: usize, tok: &str| -> Result<f64> {
        tok.parse::<f64>()
            .map_err(|e| parse_err(path, line, format!("bad value '{tok}': {e}")))
    };

    let matrix = match layout {
        Layout::Array => {
            let mut m = DMatrix::zeros(rows, cols);
            let slots: Vec<(usize, usize)> = if symmetric {
                (0..cols).flat_map(|j| (j..rows).map(move |i| (i, j))).collect()
            } else {
                (0..cols).flat_map(|j| (0..rows).map(move |i| (i, j))).collect()
            };
            let mut filled = 0usize;
            for (lno, l) in body {
                for tok in l.split_whitespace() {
                    let &(i, j) = slots
                        .get(filled)
                        .ok_or_else(|| parse_err(path, lno, "more values than the size line declares"))?;
                    let v = parse_value(lno, tok)?;
                    m[(i, j)] = v;
                    if symmetric {
                        m[(j, i)] = v;
                    }
                    filled += 1;
                }
            }
            if filled != slots.len() {
                return Err(parse_err(
                    path,
                    size_line,
                    format!("expected {} values, found {filled}", slots.len()),
                ));
            }
            MatrixMarket::Dense(m)
        }
        Layout::Coordinate => {
            let nnz = dims[2];
            let mut triplets = Vec::with_capacity(if symmetric { 2 * nnz } else { nnz });
            let mut count = 0usize;
            for (lno, l) in body {
                let toks: Vec<&str> = l.split_whitespace().collect();
                if toks.len() != 3 {
                    return Err(parse_err(path, lno, "coordinate entry needs 'row col value'"));
                }
                let idx = |t: &str| -> Result<usize> {
                    t.parse::<usize>()
                        .map_err(|e| parse_err(path, lno, format!("bad index '{t}': {e}")))
                };
                let (i, j) = (idx(toks[0])?, idx(toks[1])?);
                if i == 0 || j == 0 || i > rows || j > cols {
                    return Err(parse_err(path, lno, format!("index ({i}, {j}) out of range")));
                }
                let v = parse_value(lno, toks[2])?;
                triplets.push((i - 1, j - 1, v));
                if symmetric && i != j {
                    triplets.push((j - 1, i - 1, v));
                }
                count += 1;
            }
            if count != nnz {
                return Err(parse_err(
                    path,
                    size_line,
                    format!("expected {nnz} entries, found {count}"),
                ));
            }
            MatrixMarket::Sparse(CsrMatrix::from_triplets(rows, cols, triplets)?)
        }
    };
    Ok(Parsed { matrix, size_line })
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<MatrixMarket> {
    parse(path.as_ref()).map(|p| p.matrix)
}

/// Writes `m`. With `symmetric` set only the lower triangle is stored; the
/// caller is responsible for `m` actually being symmetric.
pub fn write_matrix_market(path: impl AsRef<Path>, m: &MatrixMarket, symmetric: bool) -> Result<()> {
    write_matrix_market_with_comment(path, m, symmetric, None)
}

/// [`write_matrix_market`] with a comment block after the banner. Each line
/// of `comment` becomes one `%` line.
pub fn write_matrix_market_with_comment(
    path: impl AsRef<Path>,
    m: &MatrixMarket,
    symmetric: bool,
    comment: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let sym = if symmetric { "symmetric" } else { "general" };
    let res = (|| -> std::io::Result<()> {
        match m {
            MatrixMarket::Dense(d) => {
                writeln!(w, "%%MatrixMarket matrix array real {sym}")?;
                write_comment(&mut w, comment)?;
                writeln!(w, "{} {}", d.nrows(), d.ncols())?;
                for j in 0..d.ncols() {
                    let start = if symmetric { j } else { 0 };
                    for i in start..d.nrows() {
                        writeln!(w, "{:e}", d[(i, j)])?;
                    }
                }
            }
            MatrixMarket::Sparse(s) => {
                let entries: Vec<(usize, usize, f64)> = s
                    .triplets()
                    .filter(|&(i, j, _)| !symmetric || i >= j)
                    .collect();
                writeln!(w, "%%MatrixMarket matrix coordinate real {sym}")?;
                write_comment(&mut w, comment)?;
                writeln!(w, "{} {} {}", s.nrows(), s.ncols(), entries.len())?;
                for (i, j, v) in entries {
                    writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
                }
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

fn write_comment(w: &mut impl Write, comment: Option<&str>) -> std::io::Result<()> {
    for line in comment.into_iter().flat_map(str::lines) {
        writeln!(w, "% {line}")?;
    }
    Ok(())
}

fn low_rank_paths(path: &Path) -> Option<(PathBuf, PathBuf)> {
    let s = path.to_str()?;
    let stem = if let Some(stem) = s.strip_suffix(".B.mtx") {
        stem.to_string()
    } else if !path.exists() && Path::new(&format!("{s}.B.mtx")).exists() {
        s.to_string()
    } else {
        return None;
    };
    Some((
        PathBuf::from(format!("{stem}.B.mtx")),
        PathBuf::from(format!("{stem}.C.mtx")),
    ))
}

/// Loads an operator. A path ending in `.B.mtx`, or a stem for which
/// `<stem>.B.mtx` exists, selects the sparse-plus-low-rank convention.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<SpdOperator> {
    let path = path.as_ref();
    if let Some((b_path, c_path)) = low_rank_paths(path) {
        let b = parse(&b_path)?;
        let sparse = square_even(&b_path, b)?;
        let sparse = match sparse {
            MatrixMarket::Sparse(s) => s,
            MatrixMarket::Dense(d) => CsrMatrix::from_dense(&d),
        };
        let factor = match read_matrix_market(&c_path)? {
            MatrixMarket::Dense(d) => d,
            MatrixMarket::Sparse(s) => s.to_dense(),
        };
        if factor.nrows() != sparse.nrows() {
            return Err(parse_err(
                &c_path,
                2,
                format!("factor has {} rows, sparse part has {}", factor.nrows(), sparse.nrows()),
            ));
        }
        return SpdOperator::sparse_plus_low_rank(sparse, factor);
    }
    let parsed = parse(path)?;
    match square_even(path, parsed)? {
        MatrixMarket::Dense(d) => SpdOperator::dense(d),
        MatrixMarket::Sparse(s) => SpdOperator::sparse(s),
    }
}

fn square_even(path: &Path, parsed: Parsed) -> Result<MatrixMarket> {
    let (rows, cols) = parsed.matrix.shape();
    if rows != cols {
        return Err(parse_err(path, parsed.size_line, format!("matrix is {rows}x{cols}, not square")));
    }
    if rows == 0 || rows % 2 != 0 {
        return Err(parse_err(path, parsed.size_line, format!("dimension {rows} is not even")));
    }
    Ok(parsed.matrix)
}

/// Stores an operator. Dense goes to `array general` (bit-exact round trip),
/// sparse to `coordinate symmetric`. For the low-rank variant `path` is a
/// stem (a trailing `.mtx` is dropped) and two files are written; their
/// paths are returned.
pub fn store_matrix(op: &SpdOperator, path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    store_matrix_with_comment(op, path, None)
}

/// [`store_matrix`] with a comment block in every written file.
pub fn store_matrix_with_comment(
    op: &SpdOperator,
    path: impl AsRef<Path>,
    comment: Option<&str>,
) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    match op {
        SpdOperator::Dense(d) => {
            write_matrix_market_with_comment(path, &MatrixMarket::Dense(d.clone()), false, comment)?;
            Ok(vec![path.to_path_buf()])
        }
        SpdOperator::SparseCsr(s) => {
            let symmetric = s.asymmetry() == 0.0;
            write_matrix_market_with_comment(path, &MatrixMarket::Sparse(s.clone()), symmetric, comment)?;
            Ok(vec![path.to_path_buf()])
        }
        SpdOperator::SparsePlusLowRank { sparse, factor } => {
            let s = path.to_string_lossy();
            let stem = s.strip_suffix(".mtx").unwrap_or(&s);
            let stem = stem.strip_suffix(".B").unwrap_or(stem);
            let b_path = PathBuf::from(format!("{stem}.B.mtx"));
            let c_path = PathBuf::from(format!("{stem}.C.mtx"));
            let symmetric = sparse.asymmetry() == 0.0;
            write_matrix_market_with_comment(&b_path, &MatrixMarket::Sparse(sparse.clone()), symmetric, comment)?;
            write_matrix_market_with_comment(&c_path, &MatrixMarket::Dense(factor.clone()), false, comment)?;
            Ok(vec![b_path, c_path])
        }
    }
}
