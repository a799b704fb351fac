//! Synthetic scenes: library endmembers, smooth random or block-layout
//! abundances, linear mixing, and white noise at a calibrated SNR.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi_core::{load_cube, read_matrix_csv, save_cube, write_matrix_csv, CubeFormat, HsiCube};
use crate::metrics::{measure_snr, sad};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralLibrary {
    pub names: Vec<String>,
    /// One library entry per column, `L × P`.
    pub spectra: Array2<f64>,
    pub wavelengths: Option<Vec<f64>>,
}

impl SpectralLibrary {
    pub fn new(names: Vec<String>, spectra: Array2<f64>, wavelengths: Option<Vec<f64>>) -> Result<Self> {
        if names.len() != spectra.ncols() {
            return Err(Error::Shape(format!(
                "{} names for {} spectra",
                names.len(),
                spectra.ncols()
            )));
        }
        if let Some(w) = &wavelengths {
            if w.len() != spectra.nrows() {
                return Err(Error::Shape(format!(
                    "{} wavelengths for {} bands",
                    w.len(),
                    spectra.nrows()
                )));
            }
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(Error::InvalidData(format!("duplicate library entry {name:?}")));
            }
        }
        if let Some(((band, p), v)) = spectra
            .indexed_iter()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidData(format!(
                "library entry {:?} has value {v} at band {band}",
                names[p]
            )));
        }
        Ok(Self {
            names,
            spectra,
            wavelengths,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn bands(&self) -> usize {
        self.spectra.nrows()
    }

    /// Reads `name,v_1,…,v_L` rows. An optional first row whose name is
    /// `wavelength` carries the band centres; `#` lines are comments.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut names = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut wavelengths = None;
        let mut bands: Option<usize> = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',');
            let name = fields.next().unwrap_or_default().trim().to_string();
            let row: Vec<f64> = fields
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1)))?;
            if row.is_empty() {
                return Err(Error::parse(path, format!("line {}: no values", i + 1)));
            }
            if *bands.get_or_insert(row.len()) != row.len() {
                return Err(Error::parse(
                    path,
                    format!("line {}: expected {} values, found {}", i + 1, bands.unwrap(), row.len()),
                ));
            }
            if name.eq_ignore_ascii_case("wavelength") || name.eq_ignore_ascii_case("wavelengths") {
                wavelengths = Some(row);
            } else {
                names.push(name);
                values.extend(row);
            }
        }
        let bands = bands.ok_or_else(|| Error::parse(path, "empty library"))?;
        let by_entry = Array2::from_shape_vec((names.len(), bands), values)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        Self::new(names, by_entry.reversed_axes().as_standard_layout().into_owned(), wavelengths)
    }

    /// Mineral-like reflectance curves over 0.4–2.5 µm: a smooth continuum
    /// with a few Gaussian absorption bands. Entries closer than 0.08 rad to
    /// an earlier one are redrawn.
    pub fn synthetic(bands: usize, count: usize, seed: u64) -> Result<Self> {
        if bands < 2 || count == 0 {
            return Err(Error::Param(format!(
                "synthetic library needs at least 2 bands and 1 entry, got {bands} and {count}"
            )));
        }
        let mut rng = stream_rng(seed, Stream::Library);
        let wl: Vec<f64> = (0..bands)
            .map(|b| 0.4 + 2.1 * b as f64 / (bands - 1) as f64)
            .collect();
        let mut columns: Vec<Array1<f64>> = Vec::with_capacity(count);
        let mut attempts = 0;
        while columns.len() < count {
            attempts += 1;
            let spectrum = random_spectrum(&wl, &mut rng);
            let distinct = columns.iter().all(|c| {
                sad(&c.view(), &spectrum.view()).map(|v| v > 0.08).unwrap_or(false)
            });
            if distinct || attempts > 100 * count {
                columns.push(spectrum);
            }
        }
        let mut spectra = Array2::zeros((bands, count));
        for (p, c) in columns.iter().enumerate() {
            spectra.column_mut(p).assign(c);
        }
        let names = (0..count).map(|p| format!("synthetic_{p:02}")).collect();
        Self::new(names, spectra, Some(wl))
    }

    /// Library restricted to the given entries, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Param(format!("library has no entry {bad}")));
        }
        Self::new(
            indices.iter().map(|&i| self.names[i].clone()).collect(),
            self.spectra.select(Axis(1), indices),
            self.wavelengths.clone(),
        )
    }
}

fn random_spectrum(wl: &[f64], rng: &mut impl Rng) -> Array1<f64> {
    let base = rng.random_range(0.25..0.6);
    let slope = rng.random_range(-0.15..0.25);
    let ripple = rng.random_range(0.0..0.08);
    let freq = rng.random_range(0.5..2.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let features: Vec<(f64, f64, f64)> = (0..rng.random_range(2..=4))
        .map(|_| {
            (
                rng.random_range(0.05..0.35),
                rng.random_range(0.45..2.45),
                rng.random_range(0.02..0.15),
            )
        })
        .collect();
    wl.iter()
        .map(|&l| {
            let t = (l - 0.4) / 2.1;
            let mut r = base + slope * t + ripple * (std::f64::consts::TAU * freq * t + phase).sin();
            for &(depth, centre, width) in &features {
                r *= 1.0 - depth * (-(l - centre).powi(2) / (2.0 * width * width)).exp();
            }
            r.clamp(0.02, 0.98)
        })
        .collect()
}

/// Symmetric square root of the squared-exponential kernel on `0..n`.
fn kernel_sqrt(n: usize, length: f64) -> Array2<f64> {
    let k = DMatrix::from_fn(n, n, |i, j| {
        let d = i as f64 - j as f64;
        (-d * d / (2.0 * length * length)).exp()
    });
    let eig = SymmetricEigen::new(k);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let r = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Array2::from_shape_fn((n, n), |(i, j)| r[(i, j)])
}

/// `M` independent unit-variance Gaussian random fields with covariance
/// `exp(−d²/2ℓ²)`, ℓ = `smoothness`, passed through a per-pixel softmax.
pub fn generate_abundances(
    height: usize,
    width: usize,
    m: usize,
    smoothness: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    generate_abundances_with_contrast(height, width, m, smoothness, 1.0, seed)
}

/// As [`generate_abundances`], with the fields scaled by `contrast` before the
/// softmax; larger values push pixels towards a single dominant class.
pub fn generate_abundances_with_contrast(
    height: usize,
    width: usize,
    m: usize,
    smoothness: f64,
    contrast: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    if m < 2 {
        return Err(Error::Param(format!("need at least 2 endmembers, got {m}")));
    }
    if !(smoothness > 0.0) || !smoothness.is_finite() {
        return Err(Error::Param(format!("smoothness must be positive, got {smoothness}")));
    }
    if !(contrast > 0.0) || !contrast.is_finite() {
        return Err(Error::Param(format!("contrast must be positive, got {contrast}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::Param("scene must have at least one pixel".into()));
    }
    let root_u = kernel_sqrt(height, smoothness);
    let root_n = kernel_sqrt(width, smoothness);
    let n = height * width;
    let mut fields = Array2::<f64>::zeros((m, n));
    for k in 0..m {
        let mut rng = stream_rng(seed, Stream::Abundance(k as u32));
        let z = Array2::from_shape_simple_fn((height, width), || StandardNormal.sample(&mut rng));
        let f = root_u.dot(&z).dot(&root_n.t());
        fields
            .row_mut(k)
            .assign(&f.as_standard_layout().into_shape_with_order(n).expect("contiguous"));
    }
    for mut col in fields.axis_iter_mut(Axis(1)) {
        let top = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        col.mapv_inplace(|v| (contrast * (v - top)).exp());
        let sum = col.sum();
        col.mapv_inplace(|v| v / sum);
    }
    Ok(fields)
}

/// `A S`.
pub fn mix_lmm(a: &ArrayView2<f64>, s: &ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.ncols() != s.nrows() {
        return Err(Error::Shape(format!("A is {:?}, S is {:?}", a.dim(), s.dim())));
    }
    Ok(a.dot(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    GaussianWhite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyData {
    /// `max(clean + noise, 0)`.
    pub data: Array2<f64>,
    /// The drawn noise, before clamping.
    pub noise: Array2<f64>,
    pub clamp_fraction: f64,
    pub pre_clamp_snr_db: f64,
    pub post_clamp_snr_db: f64,
}

/// White Gaussian noise scaled so its energy is exactly
/// `Σ clean² / 10^(snr/10)`, added and clamped at zero.
pub fn add_noise_at_snr(
    clean: &ArrayView2<f64>,
    target_snr_db: f64,
    kind: NoiseKind,
    seed: u64,
) -> Result<NoisyData> {
    if !target_snr_db.is_finite() {
        return Err(Error::Param(format!("target SNR must be finite, got {target_snr_db}")));
    }
    let signal: f64 = clean.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::InvalidData("cannot calibrate noise against a zero signal".into()));
    }
    let NoiseKind::GaussianWhite = kind;
    let mut rng = stream_rng(seed, Stream::Noise);
    let mut noise = Array2::from_shape_simple_fn(clean.dim(), || StandardNormal.sample(&mut rng));
    let drawn: f64 = noise.iter().map(|v: &f64| v * v).sum();
    let wanted = signal / 10f64.powf(target_snr_db / 10.0);
    noise *= (wanted / drawn).sqrt();
    let mut data = clean.to_owned() + &noise;
    let mut clamped = 0usize;
    data.mapv_inplace(|v| {
        if v < 0.0 {
            clamped += 1;
            0.0
        } else {
            v
        }
    });
    let clamp_fraction = clamped as f64 / data.len().max(1) as f64;
    if clamped > 0 {
        log::info!("clamped {:.4}% of noisy entries at zero", 100.0 * clamp_fraction);
    }
    let pre_clamp_snr_db = measure_snr(clean, &noise.view())?;
    let effective = &data - clean;
    let post_clamp_snr_db = measure_snr(clean, &effective.view())?;
    Ok(NoisyData {
        data,
        noise,
        clamp_fraction,
        pre_clamp_snr_db,
        post_clamp_snr_db,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Smooth random abundance fields.
    #[default]
    Simu1,
    /// Pure square patches over a gradient-mixture background.
    Simu2,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "simu1" => Ok(Preset::Simu1),
            "simu2" => Ok(Preset::Simu2),
            _ => Err(format!("unknown preset {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub preset: Preset,
    pub height: usize,
    pub width: usize,
    /// Band count of the built-in library; ignored with a user library.
    pub bands: usize,
    pub endmembers: usize,
    /// `None` leaves the scene noiseless.
    pub snr_db: Option<f64>,
    pub smoothness: f64,
    pub contrast: f64,
    /// Size of the built-in library endmembers are drawn from.
    pub library_size: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Simu1,
            height: 64,
            width: 64,
            bands: 224,
            endmembers: 4,
            snr_db: Some(30.0),
            smoothness: 8.0,
            contrast: 3.0,
            library_size: 12,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.endmembers < 2 {
            return Err(Error::Param(format!(
                "need at least 2 endmembers, got {}",
                self.endmembers
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Param("scene must have at least one pixel".into()));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::Param(format!("SNR must be finite, got {snr}")));
            }
        }
        if self.library_size < self.endmembers {
            return Err(Error::Param(format!(
                "library size {} is below the endmember count {}",
                self.library_size, self.endmembers
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub config: SceneConfig,
    pub endmember_names: Vec<String>,
    pub target_snr_db: Option<f64>,
    pub pre_clamp_snr_db: Option<f64>,
    pub measured_snr_db: Option<f64>,
    pub clamp_fraction: f64,
    pub bands: usize,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub cube: HsiCube,
    pub clean: Array2<f64>,
    pub a_true: Array2<f64>,
    pub s_true: Array2<f64>,
    pub target_snr_db: Option<f64>,
    pub seed: u64,
    pub manifest: SceneManifest,
}

pub const CUBE_FILE: &str = "cube.raw";
pub const A_TRUE_FILE: &str = "A_true.csv";
pub const S_TRUE_FILE: &str = "S_true.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

impl SyntheticScene {
    fn assemble(
        config: &SceneConfig,
        library: &SpectralLibrary,
        s_true: Array2<f64>,
    ) -> Result<Self> {
        let a_true = library.spectra.clone();
        let clean = mix_lmm(&a_true.view(), &s_true.view())?;
        let (data, pre, post, clamp) = match config.snr_db {
            Some(snr) => {
                let noisy = add_noise_at_snr(&clean.view(), snr, NoiseKind::GaussianWhite, config.seed)?;
                (
                    noisy.data,
                    Some(noisy.pre_clamp_snr_db),
                    Some(noisy.post_clamp_snr_db),
                    noisy.clamp_fraction,
                )
            }
            None => (clean.clone(), None, None, 0.0),
        };
        let mut cube = HsiCube::new(data, config.height, config.width)?;
        if let Some(wl) = &library.wavelengths {
            cube = cube.with_wavelengths(wl.clone())?;
        }
        let manifest = SceneManifest {
            config: config.clone(),
            endmember_names: library.names.clone(),
            target_snr_db: config.snr_db,
            pre_clamp_snr_db: pre,
            measured_snr_db: post,
            clamp_fraction: clamp,
            bands: library.bands(),
            files: Vec::new(),
        };
        Ok(Self {
            cube,
            clean,
            a_true,
            s_true,
            target_snr_db: config.snr_db,
            seed: config.seed,
            manifest,
        })
    }

    /// Writes the noisy cube (raw f32 plus header), the ground truth, and the
    /// manifest into `dir`. Returns the paths written.
    pub fn save(&mut self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cube_path = dir.join(CUBE_FILE);
        save_cube(&self.cube, &cube_path, CubeFormat::RawF32)?;
        write_matrix_csv(&self.a_true.view(), &dir.join(A_TRUE_FILE))?;
        write_matrix_csv(&self.s_true.view(), &dir.join(S_TRUE_FILE))?;
        let sidecar = crate::hsi_core::sidecar_path(&cube_path);
        let written = vec![
            cube_path,
            sidecar,
            dir.join(A_TRUE_FILE),
            dir.join(S_TRUE_FILE),
            dir.join(MANIFEST_FILE),
        ];
        self.manifest.files = written
            .iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect();
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&self.manifest)?)
            .map_err(|e| Error::io(&path, e))?;
        Ok(written)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: SceneManifest =
            serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
        let cube = load_cube(&dir.join(CUBE_FILE), CubeFormat::RawF32)?;
        let a_true = read_matrix_csv(&dir.join(A_TRUE_FILE))?;
        let s_true = read_matrix_csv(&dir.join(S_TRUE_FILE))?;
        let clean = mix_lmm(&a_true.view(), &s_true.view())?;
        if clean.dim() != cube.data().dim() {
            return Err(Error::Shape(format!(
                "ground truth mixes to {:?} but the cube is {:?}",
                clean.dim(),
                cube.data().dim()
            )));
        }
        Ok(Self {
            cube,
            clean,
            a_true,
            s_true,
            target_snr_db: manifest.target_snr_db,
            seed: manifest.config.seed,
            manifest,
        })
    }
}

/// Draws `config.endmembers` distinct library entries with the scene seed.
fn pick_endmembers(library: &SpectralLibrary, config: &SceneConfig) -> Result<SpectralLibrary> {
    let m = config.endmembers;
    if library.len() < m {
        return Err(Error::InvalidData(format!(
            "library has {} entries, scene needs {m}",
            library.len()
        )));
    }
    let mut rng = stream_rng(config.seed, Stream::Scene);
    let mut idx = sample(&mut rng, library.len(), m).into_vec();
    idx.sort_unstable();
    library.select(&idx)
}

/// Random endmembers from `library` over smooth random abundance fields.
pub fn build_simu1(library: &SpectralLibrary, config: &SceneConfig) -> Result<SyntheticScene> {
    config.validate()?;
    let chosen = pick_endmembers(library, config)?;
    let s = generate_abundances_with_contrast(
        config.height,
        config.width,
        config.endmembers,
        config.smoothness,
        config.contrast,
        config.seed,
    )?;
    SyntheticScene::assemble(config, &chosen, s)
}

/// Block layout: a row of pure square patches, one per endmember, a row of
/// two-material 50/50 patches, and a background whose abundances vary
/// smoothly between anchors spread around the scene centre.
pub fn simu2_abundances(height: usize, width: usize, m: usize) -> Result<Array2<f64>> {
    if m < 2 {
        return Err(Error::Param(format!("need at least 2 endmembers, got {m}")));
    }
    let side = (width / (2 * m)).min(height / 5);
    if side < 1 {
        return Err(Error::Param(format!(
            "a {height}x{width} scene is too small for {m} patches"
        )));
    }
    let n = height * width;
    let (hf, wf) = (height as f64, width as f64);
    let radius = 0.4 * hf.min(wf);
    let tau = 0.3 * hf.min(wf);
    let anchors: Vec<(f64, f64)> = (0..m)
        .map(|k| {
            let angle = std::f64::consts::TAU * k as f64 / m as f64;
            (0.5 * hf + radius * angle.sin(), 0.5 * wf + radius * angle.cos())
        })
        .collect();
    let mut s = Array2::<f64>::zeros((m, n));
    for (j, mut col) in s.axis_iter_mut(Axis(1)).enumerate() {
        let (u, v) = (j / width, j % width);
        for (k, &(au, av)) in anchors.iter().enumerate() {
            let d2 = (u as f64 - au).powi(2) + (v as f64 - av).powi(2);
            col[k] = (-d2 / (2.0 * tau * tau)).exp();
        }
        let sum = col.sum();
        col.mapv_inplace(|x| x / sum);
    }
    let slot = width / m;
    let top = side / 2 + 1;
    let second = (top + side + side / 2 + 1).min(height - side);
    for k in 0..m {
        let left = k * slot + (slot - side) / 2;
        let partner = (k + 1) % m;
        for u in 0..side {
            for v in 0..side {
                let pure = (top + u) * width + left + v;
                let mut col = s.column_mut(pure);
                col.fill(0.0);
                col[k] = 1.0;
                if second >= top + side {
                    let mixed = (second + u) * width + left + v;
                    let mut col = s.column_mut(mixed);
                    col.fill(0.0);
                    col[k] = 0.5;
                    col[partner] += 0.5;
                }
            }
        }
    }
    Ok(s)
}

pub fn build_simu2_layout(library: &SpectralLibrary, config: &SceneConfig) -> Result<SyntheticScene> {
    config.validate()?;
    if library.len() < config.endmembers {
        return Err(Error::InvalidData(format!(
            "library has {} entries, scene needs {}",
            library.len(),
            config.endmembers
        )));
    }
    let chosen = library.select(&(0..config.endmembers).collect::<Vec<_>>())?;
    let s = simu2_abundances(config.height, config.width, config.endmembers)?;
    SyntheticScene::assemble(config, &chosen, s)
}

/// Builds a scene from a user library, or from the built-in synthetic one.
pub fn build_scene(library: Option<&SpectralLibrary>, config: &SceneConfig) -> Result<SyntheticScene> {
    config.validate()?;
    let owned;
    let library = match library {
        Some(l) => l,
        None => {
            owned = SpectralLibrary::synthetic(config.bands, config.library_size, config.seed)?;
            &owned
        }
    };
    match config.preset {
        Preset::Simu1 => build_simu1(library, config),
        Preset::Simu2 => build_simu2_layout(library, config),
    }
}
