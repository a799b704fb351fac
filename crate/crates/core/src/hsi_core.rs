//! Hyperspectral cube data model and file formats.
//!
//! A cube stores the L×N spectral matrix with pixels as columns. Pixel `j`
//! sits at grid position `(j / width, j % width)` everywhere in the crate.
//!
//! Formats:
//! - raw-f32: binary file of `L·N` little-endian `f32`, band-major, plus a JSON
//!   sidecar `{ "bands": L, "height": H, "width": W }` next to it (same stem,
//!   `.json` extension).
//! - CSV: first line `L,H,W`, then `L` lines of `N` comma-separated values.
//! - PGM: binary P5 with maxval 255, one image per abundance row.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    data: Array2<f64>,
    height: usize,
    width: usize,
    wavelengths: Option<Vec<f64>>,
}

impl HsiCube {
    /// Wraps an L×N matrix, checking nonnegativity and the grid shape.
    pub fn new(data: Array2<f64>, height: usize, width: usize) -> Result<Self> {
        if height * width != data.ncols() {
            return Err(Error::Shape(format!(
                "grid {height}x{width} does not cover {} pixels",
                data.ncols()
            )));
        }
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Shape("cube must have at least one band and pixel".into()));
        }
        check_nonnegative(&data.view())?;
        Ok(Self {
            data,
            height,
            width,
            wavelengths: None,
        })
    }

    pub fn with_wavelengths(mut self, wavelengths: Vec<f64>) -> Result<Self> {
        if wavelengths.len() != self.bands() {
            return Err(Error::Shape(format!(
                "{} wavelengths for {} bands",
                wavelengths.len(),
                self.bands()
            )));
        }
        self.wavelengths = Some(wavelengths);
        Ok(self)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.data.ncols()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    /// Grid coordinates `(row, col)` of pixel `j`.
    pub fn pixel_coords(&self, j: usize) -> (usize, usize) {
        pixel_coords(j, self.width)
    }

    pub fn pixel_index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }
}

pub fn pixel_coords(j: usize, width: usize) -> (usize, usize) {
    (j / width, j % width)
}

fn check_nonnegative(data: &ArrayView2<f64>) -> Result<()> {
    for ((band, pixel), &v) in data.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::Data {
                band,
                pixel,
                msg: format!("non-finite value {v}"),
            });
        }
        if v < 0.0 {
            return Err(Error::Data {
                band,
                pixel,
                msg: format!("negative value {v}"),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CubeFormat {
    Csv,
    RawF32,
}

impl CubeFormat {
    /// Guesses the format from the extension: `.csv` is CSV, anything else raw.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CubeFormat::Csv,
            _ => CubeFormat::RawF32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawHeader {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
}

/// Path of the JSON header that accompanies a raw-f32 cube.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn load_cube(path: &Path, format: CubeFormat) -> Result<HsiCube> {
    match format {
        CubeFormat::Csv => load_csv_cube(path),
        CubeFormat::RawF32 => load_raw_cube(path),
    }
}

pub fn save_cube(cube: &HsiCube, path: &Path, format: CubeFormat) -> Result<()> {
    match format {
        CubeFormat::Csv => save_csv_cube(cube, path),
        CubeFormat::RawF32 => save_raw_cube(cube, path),
    }
}

fn load_raw_cube(path: &Path) -> Result<HsiCube> {
    let header_path = sidecar_path(path);
    let header_text =
        fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: RawHeader = serde_json::from_str(&header_text)
        .map_err(|e| Error::parse(&header_path, e.to_string()))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let pixels = header.height * header.width;
    let expected = header.bands * pixels * 4;
    if bytes.len() != expected {
        return Err(Error::parse(
            path,
            format!(
                "header declares {}x{} values ({expected} bytes) but file has {} bytes",
                header.bands,
                pixels,
                bytes.len()
            ),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let data = Array2::from_shape_vec((header.bands, pixels), values)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    HsiCube::new(data, header.height, header.width)
}

fn save_raw_cube(cube: &HsiCube, path: &Path) -> Result<()> {
    let header = RawHeader {
        bands: cube.bands(),
        height: cube.height(),
        width: cube.width(),
    };
    let header_path = sidecar_path(path);
    fs::write(&header_path, serde_json::to_string_pretty(&header)?)
        .map_err(|e| Error::io(&header_path, e))?;
    let mut bytes = Vec::with_capacity(cube.bands() * cube.pixels() * 4);
    for &v in cube.data().iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load_csv_cube(path: &Path) -> Result<HsiCube> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, "empty file")),
    };
    let dims: Vec<usize> = header
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::parse(path, format!("bad header {header:?}: {e}")))?;
    let [bands, height, width] = dims[..] else {
        return Err(Error::parse(path, format!("header must be L,H,W, got {header:?}")));
    };
    let pixels = height * width;
    let mut values = Vec::with_capacity(bands * pixels);
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(&line).map_err(|msg| Error::parse(path, format!("line {}: {msg}", i + 2)))?;
        if row.len() != pixels {
            return Err(Error::parse(
                path,
                format!("line {}: expected {pixels} values, found {}", i + 2, row.len()),
            ));
        }
        values.extend(row);
        rows += 1;
    }
    if rows != bands {
        return Err(Error::parse(path, format!("expected {bands} band rows, found {rows}")));
    }
    let data = Array2::from_shape_vec((bands, pixels), values)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    HsiCube::new(data, height, width)
}

fn save_csv_cube(cube: &HsiCube, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        writeln!(out, "{},{},{}", cube.bands(), cube.height(), cube.width())?;
        write_rows(out, &cube.data().view())?;
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

fn parse_row(line: &str) -> std::result::Result<Vec<f64>, String> {
    line.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>().map_err(|e| format!("bad value {t:?}: {e}"))
        })
        .collect()
}

fn write_rows<W: Write>(out: &mut W, m: &ArrayView2<f64>) -> std::io::Result<()> {
    for row in m.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.write_all(b",")?;
            }
            first = false;
            write!(out, "{v}")?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes a plain matrix as CSV, one matrix row per line, no header.
///
/// Values use Rust's shortest round-trip formatting, so reading the file back
/// with [`read_matrix_csv`] reproduces the matrix exactly.
pub fn write_matrix_csv(m: &ArrayView2<f64>, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_rows(&mut out, m)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(line).map_err(|msg| Error::parse(path, format!("line {}: {msg}", i + 1)))?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::parse(
                    path,
                    format!("line {}: expected {c} values, found {}", i + 1, row.len()),
                ))
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::parse(path, "empty matrix"))?;
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::parse(path, e.to_string()))
}

/// Appends a `delta`-valued row to both the residual and the endmember matrix.
///
/// This is how the sum-to-one constraint is imposed softly: fitting the extra
/// row forces `delta · Σ_m s_mj ≈ delta` for every pixel.
pub fn augment_for_asc(
    residual: &ArrayView2<f64>,
    endmembers: &ArrayView2<f64>,
    delta: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Param(format!("delta must be positive, got {delta}")));
    }
    if residual.nrows() != endmembers.nrows() {
        return Err(Error::Shape(format!(
            "residual has {} bands but endmembers have {}",
            residual.nrows(),
            endmembers.nrows()
        )));
    }
    Ok((
        append_constant_row(residual, delta),
        append_constant_row(endmembers, delta),
    ))
}

pub(crate) fn append_constant_row(m: &ArrayView2<f64>, value: f64) -> Array2<f64> {
    let mut out = Array2::from_elem((m.nrows() + 1, m.ncols()), value);
    out.slice_mut(s![..m.nrows(), ..]).assign(m);
    out
}

/// Drops the last row; inverse of the augmentation.
pub fn strip_augmentation(m: &ArrayView2<f64>) -> Array2<f64> {
    m.slice(s![..m.nrows().saturating_sub(1), ..]).to_owned()
}

/// Writes one P5 PGM per abundance row into `out_dir`.
pub fn save_abundance_maps(
    abundances: &ArrayView2<f64>,
    height: usize,
    width: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if height * width != abundances.ncols() {
        return Err(Error::Shape(format!(
            "grid {height}x{width} does not cover {} pixels",
            abundances.ncols()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::with_capacity(abundances.nrows());
    for (m, row) in abundances.axis_iter(Axis(0)).enumerate() {
        let path = out_dir.join(format!("abundance_{m:02}.pgm"));
        let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
        bytes.extend(row.iter().map(|&v| gray_level(v)));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

fn gray_level(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (255.0 * v).round() as u8
}
