//! Text artifacts: comma-separated matrices, label lists and `key = value`
//! reports. Every write goes to a temporary sibling first and is renamed into
//! place, so a failed command never leaves a half-written file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dice_core::DenseMatrix;

use crate::error::{CliError, CliResult};

/// A matrix with an optional `#` header line.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFile {
    pub header: Option<String>,
    pub matrix: DenseMatrix,
}

/// `{:.16e}` prints 17 significant digits, enough to round-trip any double.
fn push_float(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String");
}

impl MatrixFile {
    pub fn new(matrix: DenseMatrix, header: Option<&str>) -> Self {
        Self { header: header.map(str::to_string), matrix }
    }

    pub fn serialize(&self) -> String {
        let m = &self.matrix;
        let mut out = String::with_capacity(m.rows() * m.cols() * 24 + 64);
        if let Some(h) = &self.header {
            out.push_str("# ");
            out.push_str(h);
            out.push('\n');
        }
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                push_float(&mut out, v);
            }
            out.push('\n');
        }
        out
    }

    /// `path` is only used in error messages.
    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        let err = |line: usize, message: String| CliError::Parse { path: path.to_path_buf(), line, message };
        let mut header = None;
        let mut data = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if let Some(h) = line.strip_prefix('#') {
                    header = Some(h.trim().to_string());
                    continue;
                }
            }
            if line.trim().is_empty() {
                continue;
            }
            let before = data.len();
            for field in line.split(',') {
                let v: f64 =
                    field.trim().parse().map_err(|_| err(i + 1, format!("not a number: `{}`", field.trim())))?;
                if !v.is_finite() {
                    return Err(err(i + 1, format!("non-finite value `{}`", field.trim())));
                }
                data.push(v);
            }
            let width = data.len() - before;
            match cols {
                None => cols = Some(width),
                Some(c) if c != width => return Err(err(i + 1, format!("expected {c} columns, found {width}"))),
                _ => {}
            }
            rows += 1;
        }
        let cols = cols.ok_or_else(|| err(1, "no data rows".into()))?;
        Ok(Self { header, matrix: DenseMatrix::new(rows, cols, data)? })
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, self.serialize().as_bytes())
    }
}

pub fn read_matrix(path: &Path) -> CliResult<DenseMatrix> {
    Ok(MatrixFile::read(path)?.matrix)
}

pub fn write_matrix(path: &Path, m: &DenseMatrix, header: Option<&str>) -> CliResult<()> {
    write_atomic(path, MatrixFile::new(m.clone(), header).serialize().as_bytes())
}

pub fn read_labels(path: &Path) -> CliResult<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| CliError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected a non-negative integer label, found `{}`", l.trim()),
            })
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> CliResult<()> {
    let mut out = String::with_capacity(labels.len() * 2);
    for l in labels {
        writeln!(out, "{l}").expect("writing to a String");
    }
    write_atomic(path, out.as_bytes())
}

/// Ordered `key = value` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn push_float(&mut self, key: impl Into<String>, v: f64) {
        let mut s = String::new();
        push_float(&mut s, v);
        self.entries.push((key.into(), s));
    }

    pub fn push_floats(&mut self, key: impl Into<String>, vs: &[f64]) {
        let mut s = String::new();
        for (i, &v) in vs.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            push_float(&mut s, v);
        }
        self.entries.push((key.into(), s));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, self.render().as_bytes())
    }
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = temp_sibling(path);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_shape() {
        let m = DenseMatrix::from_rows(&[[1.0, -2.5], [0.1, 3e-300]]).unwrap();
        let f = MatrixFile::new(m, Some("a b"));
        let text = f.serialize();
        assert!(text.starts_with("# a b\n"));
        assert_eq!(MatrixFile::parse(&text, Path::new("x")).unwrap(), f);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let p = Path::new("m.csv");
        let e = MatrixFile::parse("1,2\n3\n", p).unwrap_err().to_string();
        assert!(e.contains("m.csv:2") && e.contains("columns"), "{e}");
        assert!(MatrixFile::parse("1,x\n", p).unwrap_err().to_string().contains(":1:"));
        assert!(MatrixFile::parse("1,NaN\n", p).is_err());
        assert!(MatrixFile::parse("# only header\n", p).is_err());
    }

    #[test]
    fn report_rendering() {
        let mut r = Report::default();
        r.push("a", 3);
        r.push_float("b", 0.5);
        r.push_floats("c", &[1.0, 2.0]);
        assert_eq!(r.render(), "a = 3\nb = 5.0000000000000000e-1\nc = 1.0000000000000000e0,2.0000000000000000e0\n");
        assert_eq!(r.get("a"), Some("3"));
    }
}
