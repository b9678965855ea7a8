//! Normal-incidence reflectance of planar multilayers by characteristic
//! matrices, and location of a microcavity mode in a reflectance spectrum.
//!
//! Indices are given as n + iκ with κ ≥ 0 for absorption. Internally the
//! matrices use the n − iκ convention that goes with the
//! `[[cos δ, i sin δ / N], [i N sin δ, cos δ]]` form.

use nalgebra::Matrix2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::peakfit::{fit_curve, CurveGuess, FitOptions, Weighting};

/// Thickness of a quarter-wave layer.
pub fn quarter_wave_thickness(lambda0_nm: f64, n: f64) -> Result<f64> {
    if !(lambda0_nm.is_finite() && lambda0_nm > 0.0 && n.is_finite() && n > 0.0) {
        return Err(Error::Domain(format!(
            "quarter-wave thickness needs lambda0 > 0 and n > 0, got {lambda0_nm}, {n}"
        )));
    }
    Ok(lambda0_nm / (4.0 * n))
}

/// Index vs wavelength, linearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexTable {
    lambdas_nm: Vec<f64>,
    values: Vec<Complex64>,
}

impl IndexTable {
    pub fn new(lambdas_nm: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if lambdas_nm.len() != values.len() || lambdas_nm.is_empty() {
            return Err(Error::Domain("index table needs equal, non-empty columns".into()));
        }
        if lambdas_nm.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("index table wavelengths must increase strictly".into()));
        }
        for v in &values {
            check_index(*v)?;
        }
        Ok(Self { lambdas_nm, values })
    }

    pub fn range_nm(&self) -> (f64, f64) {
        (self.lambdas_nm[0], self.lambdas_nm[self.lambdas_nm.len() - 1])
    }

    pub fn at(&self, lambda_nm: f64) -> Result<Complex64> {
        let (lo, hi) = self.range_nm();
        if !(lo..=hi).contains(&lambda_nm) {
            return Err(Error::Domain(format!(
                "wavelength {lambda_nm} nm outside index table range [{lo}, {hi}]"
            )));
        }
        let k = self.lambdas_nm.partition_point(|&l| l <= lambda_nm);
        if k == 0 {
            return Ok(self.values[0]);
        }
        if k == self.lambdas_nm.len() {
            return Ok(self.values[k - 1]);
        }
        let (l0, l1) = (self.lambdas_nm[k - 1], self.lambdas_nm[k]);
        let t = (lambda_nm - l0) / (l1 - l0);
        Ok(self.values[k - 1] * (1.0 - t) + self.values[k] * t)
    }
}

fn check_index(n: Complex64) -> Result<()> {
    if !(n.re.is_finite() && n.im.is_finite() && n.re > 0.0 && n.im >= 0.0) {
        return Err(Error::Domain(format!(
            "refractive index must have Re > 0 and Im >= 0, got {n}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Material {
    Constant(Complex64),
    Table(IndexTable),
}

impl Material {
    pub fn index_at(&self, lambda_nm: f64) -> Result<Complex64> {
        match self {
            Material::Constant(n) => Ok(*n),
            Material::Table(t) => t.at(lambda_nm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub label: String,
    pub material: Material,
    pub thickness_nm: f64,
}

impl Layer {
    pub fn new(label: impl Into<String>, index: Complex64, thickness_nm: f64) -> Result<Self> {
        check_index(index)?;
        Self::with_material(label, Material::Constant(index), thickness_nm)
    }

    pub fn real(label: impl Into<String>, n: f64, thickness_nm: f64) -> Result<Self> {
        Self::new(label, Complex64::new(n, 0.0), thickness_nm)
    }

    pub fn with_material(label: impl Into<String>, material: Material, thickness_nm: f64) -> Result<Self> {
        if !(thickness_nm.is_finite() && thickness_nm > 0.0) {
            return Err(Error::Domain(format!("layer thickness must be > 0, got {thickness_nm}")));
        }
        Ok(Self {
            label: label.into(),
            material,
            thickness_nm,
        })
    }
}

/// Layers listed from the ambient side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stack {
    pub ambient: Complex64,
    pub layers: Vec<Layer>,
    pub substrate: Complex64,
}

impl Stack {
    pub fn new(ambient: Complex64, layers: Vec<Layer>, substrate: Complex64) -> Result<Self> {
        check_index(ambient)?;
        check_index(substrate)?;
        if ambient.im != 0.0 {
            return Err(Error::Domain("ambient medium must be lossless".into()));
        }
        Ok(Self {
            ambient,
            layers,
            substrate,
        })
    }

    /// Same structure seen from the substrate side.
    pub fn reversed(&self) -> Self {
        Self {
            ambient: self.substrate,
            layers: self.layers.iter().rev().cloned().collect(),
            substrate: self.ambient,
        }
    }

    /// All thicknesses multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    thickness_nm: l.thickness_nm * c,
                    ..l.clone()
                })
                .collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Response {
    pub r: Complex64,
    pub reflectance: f64,
    pub transmittance: f64,
}

/// Reflection and transmission at one wavelength.
pub fn response(stack: &Stack, lambda_nm: f64) -> Result<Response> {
    if !(lambda_nm.is_finite() && lambda_nm > 0.0) {
        return Err(Error::Domain(format!("wavelength must be > 0, got {lambda_nm}")));
    }
    let k0 = 2.0 * std::f64::consts::PI / lambda_nm;
    let i = Complex64::i();
    let mut m = Matrix2::<Complex64>::identity();
    for layer in &stack.layers {
        let n = layer.material.index_at(lambda_nm)?.conj();
        let delta = n * k0 * layer.thickness_nm;
        let (s, c) = (delta.sin(), delta.cos());
        m *= Matrix2::new(c, i * s / n, i * n * s, c);
    }
    let n0 = stack.ambient.conj();
    let ns = stack.substrate.conj();
    let b = m[(0, 0)] + m[(0, 1)] * ns;
    let cc = m[(1, 0)] + m[(1, 1)] * ns;
    let denom = n0 * b + cc;
    let r = (n0 * b - cc) / denom;
    let t = 4.0 * n0.re * ns.re / denom.norm_sqr();
    Ok(Response {
        r,
        reflectance: r.norm_sqr(),
        transmittance: t,
    })
}

pub fn reflectance(stack: &Stack, lambda_nm: f64) -> Result<f64> {
    response(stack, lambda_nm).map(|r| r.reflectance)
}

pub fn reflectance_spectrum(stack: &Stack, lambdas_nm: &[f64]) -> Result<Vec<(f64, f64)>> {
    lambdas_nm
        .par_iter()
        .map(|&l| reflectance(stack, l).map(|r| (l, r)))
        .collect()
}

/// Peak reflectance of `pairs` (H, L) quarter-wave pairs at the design
/// wavelength, high index facing the ambient.
pub fn bragg_reflectance(n_high: f64, n_low: f64, pairs: u32, n_ambient: f64, n_substrate: f64) -> f64 {
    let y = (n_high / n_low).powi(2 * pairs as i32) * n_substrate;
    ((n_ambient - y) / (n_ambient + y)).powi(2)
}

/// Material indices at the design wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityIndices {
    pub gaas: f64,
    pub algaas: f64,
    pub inalas: f64,
}

impl Default for CavityIndices {
    fn default() -> Self {
        Self {
            gaas: 3.41,
            algaas: 3.07,
            inalas: 3.249,
        }
    }
}

pub const DESIGN_WAVELENGTH_NM: f64 = 1310.0;
pub const SPACER_THICKNESS_NM: f64 = 201.6;
pub const BOTTOM_DBR_PAIRS: usize = 25;

/// Asymmetric telecom cavity: three quarter-wave top layers
/// (GaAs/Al0.5Ga0.5As/GaAs), a 201.6 nm In0.6Al0.4As λ/2 spacer and a
/// 25-pair Al0.5Ga0.5As/GaAs bottom mirror on GaAs, seen from air.
pub fn telecom_cavity(indices: &CavityIndices, lambda0_nm: f64) -> Result<Stack> {
    let q = |n: f64| quarter_wave_thickness(lambda0_nm, n);
    let gaas = |label: &str| Layer::real(label, indices.gaas, q(indices.gaas)?);
    let algaas = |label: &str| Layer::real(label, indices.algaas, q(indices.algaas)?);
    let mut layers = vec![
        gaas("top GaAs")?,
        algaas("top AlGaAs")?,
        gaas("top GaAs")?,
        Layer::real("InAlAs spacer", indices.inalas, SPACER_THICKNESS_NM)?,
    ];
    for _ in 0..BOTTOM_DBR_PAIRS {
        layers.push(gaas("DBR GaAs")?);
        layers.push(algaas("DBR AlGaAs")?);
    }
    Stack::new(Complex64::new(1.0, 0.0), layers, Complex64::new(indices.gaas, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityMode {
    pub center_nm: f64,
    pub fwhm_nm: f64,
    /// Fitted dip depth below the fitted baseline.
    pub depth: f64,
    pub baseline: f64,
    /// Wavelength of the sampled minimum.
    pub minimum_nm: f64,
    pub converged: bool,
}

/// Shoulders must reach this fraction of the highest reflectance.
const SHOULDER_FRACTION: f64 = 0.9;
const MIN_PROMINENCE: f64 = 0.005;

/// Locates the most prominent dip inside the stopband and fits an inverted
/// Gaussian between its shoulders.
pub fn find_cavity_mode(spectrum: &[(f64, f64)]) -> Result<CavityMode> {
    let mut pts: Vec<(f64, f64)> = spectrum.to_vec();
    if pts.iter().any(|(l, r)| !(l.is_finite() && r.is_finite())) {
        return Err(Error::Domain("spectrum must be finite".into()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pts.len();
    if n < 5 {
        return Err(Error::Detection("spectrum too short to locate a dip".into()));
    }
    let r: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let rmax = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut best: Option<(f64, usize, usize, usize)> = None;
    for i in 1..n - 1 {
        if !(r[i] < r[i - 1] && r[i] <= r[i + 1]) {
            continue;
        }
        let mut left = i;
        while left > 0 && r[left - 1] >= r[left] {
            left -= 1;
        }
        let mut right = i;
        while right < n - 1 && r[right + 1] >= r[right] {
            right += 1;
        }
        let shoulder = r[left].min(r[right]);
        let prominence = shoulder - r[i];
        if r[left] >= SHOULDER_FRACTION * rmax
            && r[right] >= SHOULDER_FRACTION * rmax
            && prominence >= MIN_PROMINENCE
            && best.is_none_or(|b| prominence > b.0)
        {
            best = Some((prominence, i, left, right));
        }
    }
    let (_, i, left, right) =
        best.ok_or_else(|| Error::Detection("no reflectance dip bracketed by stopband shoulders".into()))?;

    let xs: Vec<f64> = pts[left..=right].iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts[left..=right].iter().map(|p| -p.1).collect();
    if xs.len() < 5 {
        return Err(Error::Detection(format!("dip at {} nm is sampled by fewer than 5 points", pts[i].0)));
    }
    // half-depth width as the starting FWHM
    let shoulder = r[left].min(r[right]);
    let half = r[i] + 0.5 * (shoulder - r[i]);
    let lo = (left..=i).rev().find(|&k| r[k] >= half).map_or(pts[left].0, |k| pts[k].0);
    let hi = (i..=right).find(|&k| r[k] >= half).map_or(pts[right].0, |k| pts[k].0);
    let guess = CurveGuess {
        center: pts[i].0,
        fwhm: (hi - lo).max(pts[i + 1].0 - pts[i - 1].0),
        amplitude: Some(shoulder - r[i]),
    };
    let opts = FitOptions {
        window_fwhm: f64::MAX / 4.0,
        fit_background: true,
        weighting: Weighting::Uniform,
        ..FitOptions::default()
    };
    let fit = fit_curve(&xs, &ys, &[guess], &opts)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Detection("dip fit returned nothing".into()))?;
    if !(fit.amplitude > 0.0 && fit.center >= xs[0] && fit.center <= xs[xs.len() - 1]) {
        return Err(Error::Fit {
            message: "inverted-Gaussian fit left the dip".into(),
            diagnostics: format!("center {} nm, amplitude {}", fit.center, fit.amplitude),
        });
    }
    Ok(CavityMode {
        center_nm: fit.center,
        fwhm_nm: fit.fwhm(),
        depth: fit.amplitude,
        baseline: -fit.background,
        minimum_nm: pts[i].0,
        converged: fit.converged,
    })
}

/// `n` evenly spaced wavelengths from `start` to `stop` inclusive.
pub fn wavelength_grid(start_nm: f64, stop_nm: f64, n: usize) -> Result<Vec<f64>> {
    if !(start_nm > 0.0 && stop_nm > start_nm && n >= 2) {
        return Err(Error::Domain("wavelength grid needs 0 < start < stop and n >= 2".into()));
    }
    Ok((0..n)
        .map(|k| start_nm + (stop_nm - start_nm) * k as f64 / (n - 1) as f64)
        .collect())
}
