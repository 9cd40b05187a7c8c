//! File formats of the command line tool.
//!
//! * Matrices travel as Matrix Market files. Reading accepts the `array`
//!   and `coordinate` layouts with field `real` and symmetry `general`;
//!   writing always produces `array`.
//! * Vectors travel as plain text, whitespace-separated values, `%`
//!   comment lines allowed.
//! * Values are printed with 17 fractional digits, enough for a save and
//!   load round trip to reproduce every f64 bit for bit.
//! * Every write lands in a temporary file next to the target and is
//!   renamed into place, so a crashed run never leaves a torn file behind.
//!
//! Parse errors carry `path:line:` prefixes; dimension mismatches between
//! the four files of a system name the offending file.

use std::fs;
use std::path::{Path, PathBuf};

use bilmor::system::BilinearSystem;
use nalgebra::{DMatrix, DVector};

use crate::RunError;

/// Round-trip float formatting shared by every writer.
pub fn format_float(x: f64) -> String {
    format!("{x:.17e}")
}

fn file_err(path: &Path, msg: impl AsRef<str>) -> RunError {
    RunError::Validation(format!("{}: {}", path.display(), msg.as_ref()))
}

fn line_err(path: &Path, line: usize, msg: impl AsRef<str>) -> RunError {
    RunError::Validation(format!("{}:{line}: {}", path.display(), msg.as_ref()))
}

/// Writes through a sibling temporary file and renames it into place.
///
/// The rename is atomic on POSIX filesystems, so concurrent readers see
/// either the previous file or the complete new one, never a prefix.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), RunError> {
    let name = path
        .file_name()
        .ok_or_else(|| file_err(path, "path has no file name"))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents).map_err(|e| file_err(&tmp, e.to_string()))?;
    fs::rename(&tmp, path).map_err(|e| file_err(path, e.to_string()))?;
    Ok(())
}

/// Non-comment, non-blank lines of a file, with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, raw)| (i + 1, raw.trim()))
        .filter(|(_, t)| !t.is_empty() && !t.starts_with('%'))
}

/// Reads a real general Matrix Market file, `array` or `coordinate`.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, RunError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e.to_string()))?;
    let banner = text
        .lines()
        .next()
        .ok_or_else(|| file_err(path, "empty file"))?;
    let words: Vec<String> = banner
        .split_whitespace()
        .map(|w| w.to_ascii_lowercase())
        .collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
        return Err(line_err(
            path,
            1,
            "expected a banner of the form %%MatrixMarket matrix <layout> real general",
        ));
    }
    let layout = words[2].as_str();
    if layout != "array" && layout != "coordinate" {
        return Err(line_err(
            path,
            1,
            format!("unsupported layout \"{layout}\", expected array or coordinate"),
        ));
    }
    if words[3] != "real" {
        return Err(line_err(
            path,
            1,
            format!("unsupported field \"{}\", only real is supported", words[3]),
        ));
    }
    if words[4] != "general" {
        return Err(line_err(
            path,
            1,
            format!(
                "unsupported symmetry \"{}\", only general is supported",
                words[4]
            ),
        ));
    }

    // The banner starts with '%', so the comment filter skips it too.
    let mut lines = data_lines(&text);
    let (size_no, size_line) = lines
        .next()
        .ok_or_else(|| file_err(path, "missing size line"))?;
    let sizes: Vec<usize> = size_line
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| line_err(path, size_no, format!("cannot parse size line \"{size_line}\"")))?;

    match layout {
        "array" => {
            let [rows, cols] = sizes[..] else {
                return Err(line_err(
                    path,
                    size_no,
                    "array size line must be \"rows cols\"",
                ));
            };
            if rows == 0 || cols == 0 {
                return Err(line_err(path, size_no, "matrix dimensions must be positive"));
            }
            let mut m = DMatrix::zeros(rows, cols);
            let mut filled = 0usize;
            for (no, line) in lines {
                for tok in line.split_whitespace() {
                    if filled == rows * cols {
                        return Err(line_err(
                            path,
                            no,
                            format!("more than {} entries in a {rows}x{cols} array", rows * cols),
                        ));
                    }
                    let x: f64 = tok
                        .parse()
                        .map_err(|_| line_err(path, no, format!("cannot parse value \"{tok}\"")))?;
                    // Array data is column-major per the format.
                    m[(filled % rows, filled / rows)] = x;
                    filled += 1;
                }
            }
            if filled != rows * cols {
                return Err(file_err(
                    path,
                    format!("expected {} entries, found {filled}", rows * cols),
                ));
            }
            Ok(m)
        }
        _ => {
            let [rows, cols, nnz] = sizes[..] else {
                return Err(line_err(
                    path,
                    size_no,
                    "coordinate size line must be \"rows cols nnz\"",
                ));
            };
            if rows == 0 || cols == 0 {
                return Err(line_err(path, size_no, "matrix dimensions must be positive"));
            }
            let mut m = DMatrix::zeros(rows, cols);
            let mut seen = vec![false; rows * cols];
            let mut count = 0usize;
            for (no, line) in lines {
                let toks: Vec<&str> = line.split_whitespace().collect();
                let [si, sj, sv] = toks[..] else {
                    return Err(line_err(path, no, "expected an \"i j value\" entry"));
                };
                let i: usize = si
                    .parse()
                    .map_err(|_| line_err(path, no, format!("cannot parse row index \"{si}\"")))?;
                let j: usize = sj
                    .parse()
                    .map_err(|_| line_err(path, no, format!("cannot parse column index \"{sj}\"")))?;
                let v: f64 = sv
                    .parse()
                    .map_err(|_| line_err(path, no, format!("cannot parse value \"{sv}\"")))?;
                if i == 0 || i > rows || j == 0 || j > cols {
                    return Err(line_err(
                        path,
                        no,
                        format!("entry ({i}, {j}) outside a {rows}x{cols} matrix"),
                    ));
                }
                if seen[(i - 1) + (j - 1) * rows] {
                    return Err(line_err(path, no, format!("duplicate entry ({i}, {j})")));
                }
                seen[(i - 1) + (j - 1) * rows] = true;
                m[(i - 1, j - 1)] = v;
                count += 1;
            }
            if count != nnz {
                return Err(file_err(
                    path,
                    format!("size line promised {nnz} entries, found {count}"),
                ));
            }
            Ok(m)
        }
    }
}

/// Writes a matrix in the Matrix Market `array` layout.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<(), RunError> {
    let mut out = String::from("%%MatrixMarket matrix array real general\n");
    out.push_str(&format!("{} {}\n", m.nrows(), m.ncols()));
    for col in 0..m.ncols() {
        for row in 0..m.nrows() {
            out.push_str(&format_float(m[(row, col)]));
            out.push('\n');
        }
    }
    write_atomic(path, &out)
}

/// Reads a plain-text vector: whitespace-separated values, `%` comments.
pub fn read_vector(path: &Path) -> Result<DVector<f64>, RunError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e.to_string()))?;
    let mut values = Vec::new();
    for (no, line) in data_lines(&text) {
        for tok in line.split_whitespace() {
            let x: f64 = tok
                .parse()
                .map_err(|_| line_err(path, no, format!("cannot parse value \"{tok}\"")))?;
            values.push(x);
        }
    }
    if values.is_empty() {
        return Err(file_err(path, "no values found"));
    }
    Ok(DVector::from_vec(values))
}

/// Writes a vector as plain text, one value per line.
pub fn write_vector(path: &Path, v: &DVector<f64>) -> Result<(), RunError> {
    let mut out = String::new();
    for x in v.iter() {
        out.push_str(&format_float(*x));
        out.push('\n');
    }
    write_atomic(path, &out)
}

/// The four files of a system quadruple (A, N, b, c).
#[derive(Debug, Clone)]
pub struct SystemPaths {
    pub a: PathBuf,
    pub n: PathBuf,
    pub b: PathBuf,
    pub c: PathBuf,
}

impl SystemPaths {
    /// Loads and cross-validates the quadruple; shape complaints name the
    /// file they come from.
    pub fn load(&self) -> Result<BilinearSystem, RunError> {
        let a = read_matrix(&self.a)?;
        if a.nrows() != a.ncols() {
            return Err(file_err(
                &self.a,
                format!("state matrix is {}x{}, expected square", a.nrows(), a.ncols()),
            ));
        }
        let dim = a.nrows();
        let n = read_matrix(&self.n)?;
        if n.shape() != (dim, dim) {
            return Err(file_err(
                &self.n,
                format!(
                    "coupling matrix is {}x{}, state dimension is {dim}",
                    n.nrows(),
                    n.ncols()
                ),
            ));
        }
        let b = read_vector(&self.b)?;
        if b.len() != dim {
            return Err(file_err(
                &self.b,
                format!("input vector has length {}, state dimension is {dim}", b.len()),
            ));
        }
        let c = read_vector(&self.c)?;
        if c.len() != dim {
            return Err(file_err(
                &self.c,
                format!("output vector has length {}, state dimension is {dim}", c.len()),
            ));
        }
        Ok(BilinearSystem::new(a, n, b, c)?)
    }

    /// Writes a quadruple to the four paths.
    pub fn save(
        &self,
        a: &DMatrix<f64>,
        n: &DMatrix<f64>,
        b: &DVector<f64>,
        c: &DVector<f64>,
    ) -> Result<(), RunError> {
        write_matrix(&self.a, a)?;
        write_matrix(&self.n, n)?;
        write_vector(&self.b, b)?;
        write_vector(&self.c, c)?;
        Ok(())
    }
}
