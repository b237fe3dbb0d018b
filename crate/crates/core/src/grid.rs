//! Row-major H×W grids and the plain-text matrix format used for images,
//! activation maps and region masks.
//!
//! The format is a header line `H W` followed by `H` lines of `W`
//! space-separated decimal values, LF line endings, no trailing whitespace.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Normalized intensity grid with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "expected {} values for a {height}x{width} grid, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Shape(format!(
                "value {v} at index {i} is outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(height, width, rows.concat())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn to_matrix_string(&self) -> String {
        render(self.height, self.width, self.values.iter().map(|v| v.to_string()))
    }

    pub fn parse_matrix(text: &str, path: Option<&Path>) -> Result<Self> {
        let (h, w, values) = parse(text, path)?;
        Self::new(h, w, values).map_err(|e| Error::parse(path.map(Path::to_path_buf), 1, e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_matrix(&text, Some(path))
    }
}

/// Binary H×W mask; `true` marks pixels inside a region.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || bits.len() != height * width {
            return Err(Error::Shape(format!(
                "mask of {} bits does not fit {height}x{width}",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(
            height,
            width,
            rows.iter().flatten().map(|&b| b != 0).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub(crate) fn set_index(&mut self, index: usize, value: bool) {
        self.bits[index] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.shape() == other.shape()
            && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub fn to_matrix_string(&self) -> String {
        render(
            self.height,
            self.width,
            self.bits.iter().map(|b| if *b { "1" } else { "0" }.to_string()),
        )
    }

    pub fn parse_matrix(text: &str, path: Option<&Path>) -> Result<Self> {
        let (h, w, values) = parse(text, path)?;
        if let Some(v) = values.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::parse(
                path.map(Path::to_path_buf),
                1,
                format!("mask value {v} is not 0 or 1"),
            ));
        }
        Self::new(h, w, values.iter().map(|v| *v == 1.0).collect())
    }
}

fn render(height: usize, width: usize, cells: impl Iterator<Item = String>) -> String {
    let mut out = format!("{height} {width}\n");
    let cells: Vec<String> = cells.collect();
    for row in cells.chunks(width) {
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

fn parse(text: &str, path: Option<&Path>) -> Result<(usize, usize, Vec<f64>)> {
    let err = |line: usize, msg: String| Error::parse(path.map(Path::to_path_buf), line, msg);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "missing `H W` header".into()))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    let [h, w] = dims.as_slice() else {
        return Err(err(1, format!("header `{header}` is not `H W`")));
    };
    let h: usize = h.parse().map_err(|_| err(1, format!("bad height `{h}`")))?;
    let w: usize = w.parse().map_err(|_| err(1, format!("bad width `{w}`")))?;
    if h == 0 || w == 0 {
        return Err(err(1, "dimensions must be positive".into()));
    }
    let mut values = Vec::with_capacity(h * w);
    for row in 0..h {
        let line_no = row + 2;
        let line = lines
            .next()
            .ok_or_else(|| err(line_no, format!("expected {h} rows, found {row}")))?;
        let before = values.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| err(line_no, format!("`{tok}` is not a number")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(err(line_no, format!("value {v} outside [0, 1]")));
            }
            values.push(v);
        }
        if values.len() - before != w {
            return Err(err(
                line_no,
                format!("expected {w} values, found {}", values.len() - before),
            ));
        }
    }
    if let Some((i, extra)) = lines.enumerate().find(|(_, l)| !l.trim().is_empty()) {
        return Err(err(h + 2 + i, format!("unexpected trailing content `{extra}`")));
    }
    Ok((h, w, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_text_round_trips() {
        let g = ImageGrid::from_rows(&[vec![0.25, 1.0], vec![0.0, 0.125]]).unwrap();
        let text = g.to_matrix_string();
        assert_eq!(text, "2 2\n0.25 1\n0 0.125\n");
        assert_eq!(ImageGrid::parse_matrix(&text, None).unwrap(), g);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let e = ImageGrid::parse_matrix("2 2\n0 0\n0 x\n", None).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = ImageGrid::parse_matrix("2 2\n0 0\n", None).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = ImageGrid::parse_matrix("2 2\n0 0 0\n0 0\n", None).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = ImageGrid::parse_matrix("1 1\n1.5\n", None).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(ImageGrid::new(2, 2, vec![0.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(ImageGrid::new(0, 2, vec![]), Err(Error::Shape(_))));
        assert!(matches!(ImageGrid::new(1, 1, vec![-0.1]), Err(Error::Shape(_))));
    }

    #[test]
    fn mask_serializes_as_zero_one() {
        let m = BinaryMask::from_rows(&[vec![1, 0], vec![0, 1]]).unwrap();
        let text = m.to_matrix_string();
        assert_eq!(text, "2 2\n1 0\n0 1\n");
        assert_eq!(BinaryMask::parse_matrix(&text, None).unwrap(), m);
        assert!(BinaryMask::parse_matrix("1 1\n0.5\n", None).is_err());
    }
}
