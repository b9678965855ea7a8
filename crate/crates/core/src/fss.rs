//! Fine-structure splitting and dipole orientation from a waveplate scan.
//!
//! Each spectrum is reduced to a single line energy, then the energy-vs-angle
//! series is analysed either by harmonic projection over one full QWP
//! rotation or by a sinusoid fit to an HWP scan.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{normalize_polarization_angle, AngleSeries, RngSeed, Spectrum, StokesVector};
use crate::error::{Error, Result};
use crate::forward::{
    simulate_angle_series, uniform_angles, DetectorModel, EmitterModel, PolarimeterConfig,
};
use crate::peakfit::{fit_gaussians_with, percentile, FitOptions, PeakFitResult};

/// Line energy per waveplate reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySeries {
    angles_deg: Vec<f64>,
    centroids_ev: Vec<f64>,
    stderrs_uev: Vec<f64>,
}

impl EnergySeries {
    pub fn new(angles_deg: Vec<f64>, centroids_ev: Vec<f64>, stderrs_uev: Vec<f64>) -> Result<Self> {
        if angles_deg.len() != centroids_ev.len() || angles_deg.len() != stderrs_uev.len() {
            return Err(Error::Domain("energy series columns differ in length".into()));
        }
        if angles_deg.iter().chain(&centroids_ev).any(|v| !v.is_finite()) {
            return Err(Error::Domain("energy series values must be finite".into()));
        }
        if stderrs_uev.iter().any(|s| s.is_nan() || *s < 0.0) {
            return Err(Error::Domain("stderrs must be >= 0".into()));
        }
        if angles_deg.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("angles must be strictly increasing".into()));
        }
        Ok(Self {
            angles_deg,
            centroids_ev,
            stderrs_uev,
        })
    }

    pub fn angles_deg(&self) -> &[f64] {
        &self.angles_deg
    }

    pub fn centroids_ev(&self) -> &[f64] {
        &self.centroids_ev
    }

    pub fn stderrs_uev(&self) -> &[f64] {
        &self.stderrs_uev
    }

    pub fn len(&self) -> usize {
        self.angles_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles_deg.is_empty()
    }

    /// Centroids relative to the first one, in μeV.
    fn offsets_uev(&self) -> (f64, Vec<f64>) {
        let reference = self.centroids_ev.first().copied().unwrap_or(0.0);
        let d = self.centroids_ev.iter().map(|e| (e - reference) * 1e6).collect();
        (reference, d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FssMethod {
    #[serde(rename = "qwp_fft")]
    QwpFft,
    #[serde(rename = "hwp_sinusoid")]
    HwpSinusoid,
}

impl FssMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            FssMethod::QwpFft => "qwp_fft",
            FssMethod::HwpSinusoid => "hwp_sinusoid",
        }
    }
}

impl std::str::FromStr for FssMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qwp_fft" => Ok(FssMethod::QwpFft),
            "hwp_sinusoid" => Ok(FssMethod::HwpSinusoid),
            other => Err(Error::parse("method", format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FssResult {
    pub fss_uev: f64,
    pub fss_stderr_uev: f64,
    /// Polarization direction of the high-energy component in [0, 180).
    pub dipole_angle_deg: f64,
    pub dipole_stderr_deg: f64,
    /// False when the linear modulation is below twice its standard error;
    /// `dipole_angle_deg` is then noise.
    pub dipole_defined: bool,
    pub mean_energy_ev: f64,
    pub method: FssMethod,
    /// (2⟨E⟩, SQ, SU, SV) in μeV; the polarized length equals the splitting.
    pub energy_stokes: StokesVector,
    /// Reading of the first energy maximum in [0, 90) (HWP scans only).
    pub waveplate_max_deg: Option<f64>,
}

impl FssResult {
    /// Whether the splitting exceeds twice its standard error.
    pub fn resolved(&self) -> bool {
        self.fss_uev > 2.0 * self.fss_stderr_uev
    }
}

/// Which fitted line to follow through the scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSelector {
    /// Line nearest this energy at the first angle; the strongest line if unset.
    pub target_energy_ev: Option<f64>,
    /// Number of lines fitted in each spectrum.
    pub n_lines: usize,
}

impl Default for LineSelector {
    fn default() -> Self {
        Self {
            target_energy_ev: None,
            n_lines: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CentroidMethod {
    /// Background-subtracted first moment around the fitted line. Unbiased
    /// for an unresolved doublet of unequal weights.
    #[default]
    #[serde(rename = "weighted_mean")]
    WeightedMean,
    /// Center of the single-Gaussian fit. Lower variance, but biased towards
    /// the stronger component when the doublet is partially resolved.
    #[serde(rename = "gaussian_center")]
    GaussianCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentroidOptions {
    pub method: CentroidMethod,
    /// Half-width of the moment window, in fitted FWHM.
    pub window_fwhm: f64,
    /// Pixels further than this many FWHM from the line set the background.
    pub background_fwhm: f64,
    pub fit: FitOptions,
}

impl Default for CentroidOptions {
    fn default() -> Self {
        Self {
            method: CentroidMethod::WeightedMean,
            window_fwhm: 3.5,
            background_fwhm: 5.0,
            fit: FitOptions::default(),
        }
    }
}

/// Line energy (eV) and its standard error (μeV).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub energy_ev: f64,
    pub stderr_uev: f64,
    pub fit: PeakFitResult,
}

const MIN_BACKGROUND_PIXELS: usize = 8;
const MAD_TO_SIGMA: f64 = 1.482_602_218_505_602;

/// First moment of the line seeded by `fit`.
pub fn weighted_mean_centroid(spectrum: &Spectrum, fit: &PeakFitResult, opts: &CentroidOptions) -> Result<(f64, f64)> {
    let fwhm = fit.fwhm_uev;
    let xs: Vec<f64> = spectrum.energies_ev().iter().map(|e| (e - fit.center_ev) * 1e6).collect();
    let ys = spectrum.counts();

    let outer: Vec<f64> = xs
        .iter()
        .zip(ys)
        .filter(|(x, _)| x.abs() > opts.background_fwhm * fwhm)
        .map(|(_, &y)| y)
        .collect();
    let (background, bg_var) = if outer.len() >= MIN_BACKGROUND_PIXELS {
        // median and MAD so that other lines in the outer region do not leak in
        let n = outer.len() as f64;
        let median = percentile(&outer, 0.5);
        let deviations: Vec<f64> = outer.iter().map(|y| (y - median).abs()).collect();
        let sd = MAD_TO_SIGMA * percentile(&deviations, 0.5);
        // the level itself is uncertain; fold that into the per-pixel variance
        (median, sd * sd * (1.0 + 1.57 / n))
    } else {
        (fit.background, fit.residual_rms.powi(2))
    };

    let half = opts.window_fwhm * fwhm;
    let mut m = 0.0;
    let mut stderr = f64::NAN;
    for _ in 0..100 {
        let (mut w, mut wx) = (0.0, 0.0);
        for (&x, &y) in xs.iter().zip(ys) {
            if (x - m).abs() <= half {
                w += y - background;
                wx += x * (y - background);
            }
        }
        if w <= 0.0 {
            return Err(Error::Degenerate("no signal above background in the line window".into()));
        }
        let next = wx / w;
        let var: f64 = xs
            .iter()
            .zip(ys)
            .filter(|(x, _)| (*x - m).abs() <= half)
            .map(|(&x, &y)| (x - next).powi(2) * ((y - background).max(0.0) + bg_var))
            .sum();
        stderr = var.sqrt() / w;
        let done = (next - m).abs() < 1e-9;
        m = next;
        if done {
            break;
        }
    }
    Ok((fit.center_ev + m * 1e-6, stderr))
}

/// Energy of one line in `spectrum`.
pub fn spectrum_centroid(spectrum: &Spectrum, fit: &PeakFitResult, opts: &CentroidOptions) -> Result<Centroid> {
    let (energy_ev, stderr_uev) = match opts.method {
        CentroidMethod::WeightedMean => weighted_mean_centroid(spectrum, fit, opts)?,
        CentroidMethod::GaussianCenter => (fit.center_ev, fit.center_stderr_uev),
    };
    Ok(Centroid {
        energy_ev,
        stderr_uev,
        fit: *fit,
    })
}

pub fn centroid_series(series: &AngleSeries, selector: &LineSelector) -> Result<EnergySeries> {
    centroid_series_with(series, selector, &CentroidOptions::default())
}

/// Reduces every spectrum to the energy of the selected line.
///
/// Spectra are processed in order of increasing angle; from the second one
/// on, the line is the converged fit nearest the previous centroid, which
/// must lie within 3 FWHM.
pub fn centroid_series_with(
    series: &AngleSeries,
    selector: &LineSelector,
    opts: &CentroidOptions,
) -> Result<EnergySeries> {
    centroid_track(series, selector, opts).map(|(es, _)| es)
}

/// As [`centroid_series_with`], also returning the per-angle line fits in
/// order of increasing angle.
pub fn centroid_track(
    series: &AngleSeries,
    selector: &LineSelector,
    opts: &CentroidOptions,
) -> Result<(EnergySeries, Vec<Centroid>)> {
    if series.is_empty() {
        return Err(Error::Domain("empty angle series".into()));
    }
    let mut order: Vec<usize> = (0..series.len()).collect();
    order.sort_by(|&a, &b| series.entries[a].angle_deg.total_cmp(&series.entries[b].angle_deg));

    let mut angles = Vec::with_capacity(order.len());
    let mut centroids = Vec::with_capacity(order.len());
    let mut stderrs = Vec::with_capacity(order.len());
    let mut details = Vec::with_capacity(order.len());
    let mut previous: Option<f64> = None;
    for idx in order {
        let entry = &series.entries[idx];
        let angle = entry.angle_deg;
        let tracking = |reason: String| Error::Tracking {
            angle_deg: angle,
            reason,
        };
        let fits = fit_gaussians_with(&entry.spectrum, selector.n_lines, None, &opts.fit)
            .map_err(|e| tracking(format!("line fit failed: {e}")))?;
        let converged: Vec<&PeakFitResult> = fits.iter().filter(|f| f.converged).collect();
        let chosen = match (previous, selector.target_energy_ev) {
            (Some(prev), _) => converged
                .iter()
                .filter(|f| (f.center_ev - prev).abs() * 1e6 <= 3.0 * f.fwhm_uev)
                .min_by(|a, b| (a.center_ev - prev).abs().total_cmp(&(b.center_ev - prev).abs()))
                .copied()
                .ok_or_else(|| tracking(format!("no converged line within 3 FWHM of {prev:.6} eV")))?,
            (None, Some(target)) => converged
                .iter()
                .min_by(|a, b| (a.center_ev - target).abs().total_cmp(&(b.center_ev - target).abs()))
                .copied()
                .ok_or_else(|| tracking("no converged line".into()))?,
            (None, None) => converged
                .iter()
                .max_by(|a, b| (a.amplitude * a.fwhm_uev).total_cmp(&(b.amplitude * b.fwhm_uev)))
                .copied()
                .ok_or_else(|| tracking("no converged line".into()))?,
        };
        let c = spectrum_centroid(&entry.spectrum, chosen, opts).map_err(|e| tracking(e.to_string()))?;
        previous = Some(c.energy_ev);
        angles.push(angle);
        centroids.push(c.energy_ev);
        stderrs.push(c.stderr_uev);
        details.push(c);
    }
    Ok((EnergySeries::new(angles, centroids, stderrs)?, details))
}

/// Minimum number of readings for the harmonic extraction.
pub const MIN_QWP_ANGLES: usize = 16;
const SPACING_TOL_DEG: f64 = 1e-6;

/// Harmonic analysis of a full QWP rotation.
///
/// The centroid follows `⟨E⟩ + (S/4)(Q + Q·cos4χ + U·sin4χ + 2V·sin2χ)` with
/// χ the plate angle from the polarizer; the 2χ and 4χ bins give the energy
/// Stokes vector. Any 1χ or 3χ content (beam steering, plate wobble) falls in
/// other bins and is ignored.
pub fn extract_fss_qwp_fft(es: &EnergySeries, polarimeter: &PolarimeterConfig) -> Result<FssResult> {
    let n = es.len();
    if n < MIN_QWP_ANGLES {
        return Err(Error::Precondition(format!(
            "harmonic extraction needs at least {MIN_QWP_ANGLES} angles, got {n}"
        )));
    }
    let step = 360.0 / n as f64;
    let angles = es.angles_deg();
    for (k, w) in angles.windows(2).enumerate() {
        if ((w[1] - w[0]) - step).abs() > SPACING_TOL_DEG {
            return Err(Error::Precondition(format!(
                "angles must be uniformly spaced by {step}° over one full rotation; step {k} is {}°",
                w[1] - w[0]
            )));
        }
    }

    let (reference, d) = es.offsets_uev();
    let nf = n as f64;
    let dc = d.iter().sum::<f64>() / nf;
    let mut coeff = [0.0; 4]; // a2, b2, a4, b4
    let mut var = [0.0; 4];
    for ((&a, &e), &s) in angles.iter().zip(&d).zip(es.stderrs_uev()) {
        let chi = (a - polarimeter.reference_offset_deg).to_radians();
        let basis = [(2.0 * chi).cos(), (2.0 * chi).sin(), (4.0 * chi).cos(), (4.0 * chi).sin()];
        for j in 0..4 {
            coeff[j] += 2.0 / nf * (e - dc) * basis[j];
            var[j] += (2.0 / nf * s * basis[j]).powi(2);
        }
    }
    let sq = 4.0 * coeff[2];
    let su = 4.0 * coeff[3];
    let sv = 2.0 * coeff[1];
    let (var_q, var_u, var_v) = (16.0 * var[2], 16.0 * var[3], 4.0 * var[1]);
    let mean_uev = dc - sq / 4.0;

    let fss = (sq * sq + su * su + sv * sv).sqrt();
    let fss_stderr = if fss > 0.0 {
        ((sq * sq * var_q + su * su * var_u + sv * sv * var_v) / (fss * fss)).sqrt()
    } else {
        ((var_q + var_u + var_v) / 3.0).sqrt()
    };
    let (angle, angle_se, defined) = linear_orientation(sq, su, var_q, var_u);

    Ok(FssResult {
        fss_uev: fss,
        fss_stderr_uev: fss_stderr,
        dipole_angle_deg: normalize_polarization_angle(angle + polarimeter.lp_axis_deg)?,
        dipole_stderr_deg: angle_se,
        dipole_defined: defined,
        mean_energy_ev: reference + mean_uev * 1e-6,
        method: FssMethod::QwpFft,
        energy_stokes: StokesVector::new_unchecked(2.0 * (reference * 1e6 + mean_uev), sq, su, sv),
        waveplate_max_deg: None,
    })
}

/// Orientation ½·atan2(SU, SQ) in degrees, its standard error and whether
/// the linear amplitude exceeds twice its own standard error.
fn linear_orientation(sq: f64, su: f64, var_q: f64, var_u: f64) -> (f64, f64, bool) {
    let r2 = sq * sq + su * su;
    let angle = 0.5 * su.atan2(sq).to_degrees();
    if r2 == 0.0 {
        return (angle, f64::INFINITY, false);
    }
    let amp_se = ((sq * sq * var_q + su * su * var_u) / r2).sqrt();
    let angle_se = 0.5 * ((su * su * var_q + sq * sq * var_u).sqrt() / r2).to_degrees();
    (angle, angle_se, r2.sqrt() > 2.0 * amp_se)
}

/// Minimum number of readings for the sinusoid fit.
pub const MIN_HWP_ANGLES: usize = 8;

/// Least-squares fit of `E(θ) = ⟨E⟩ + (S/2)·cos(4(θ − ref_offset) − 2Δφ)`.
///
/// Centroid stderrs weight the fit and set the parameter errors directly;
/// without usable stderrs the fit is unweighted and the covariance is
/// scaled by the residual variance. An HWP scan carries no circular
/// information, so S here is the linear part of the splitting only.
pub fn extract_fss_hwp_sinusoid(es: &EnergySeries, ref_offset_deg: f64) -> Result<FssResult> {
    let n = es.len();
    if n < MIN_HWP_ANGLES {
        return Err(Error::Precondition(format!(
            "sinusoid fit needs at least {MIN_HWP_ANGLES} angles, got {n}"
        )));
    }
    let angles = es.angles_deg();
    let span = angles[n - 1] - angles[0];
    if span < 90.0 {
        return Err(Error::Precondition(format!(
            "HWP scan must span at least 90°, got {span}°"
        )));
    }
    if !ref_offset_deg.is_finite() {
        return Err(Error::Domain("reference offset must be finite".into()));
    }

    let (reference, d) = es.offsets_uev();
    let calibrated = es.stderrs_uev().iter().all(|s| s.is_finite() && *s > 0.0);
    let weights: Vec<f64> = if calibrated {
        es.stderrs_uev().iter().map(|s| 1.0 / (s * s)).collect()
    } else {
        vec![1.0; n]
    };

    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    let rows: Vec<nalgebra::Vector3<f64>> = angles
        .iter()
        .map(|a| {
            let t = 4.0 * (a - ref_offset_deg).to_radians();
            nalgebra::Vector3::new(1.0, t.cos(), t.sin())
        })
        .collect();
    for ((row, &e), &w) in rows.iter().zip(&d).zip(&weights) {
        ata += w * row * row.transpose();
        atb += w * e * row;
    }
    let cov = ata.try_inverse().ok_or_else(|| {
        Error::Degenerate("sinusoid design matrix is singular; angles do not sample 4θ".into())
    })?;
    let p = cov * atb;
    let chi2: f64 = rows
        .iter()
        .zip(&d)
        .zip(&weights)
        .map(|((row, &e), &w)| w * (e - row.dot(&p)).powi(2))
        .sum();
    if !chi2.is_finite() || p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit {
            message: "sinusoid fit produced non-finite parameters".into(),
            diagnostics: format!("params {:?}, chi2 {chi2}", p.as_slice()),
        });
    }
    let cov = if calibrated { cov } else { cov * (chi2 / (n as f64 - 3.0).max(1.0)) };

    let (m, a, b) = (p[0], p[1], p[2]);
    // 4θ' − 2Δφ = atan2(B, A) at the maximum, and SQ = 2A, SU = 2B
    let (sq, su) = (2.0 * a, 2.0 * b);
    let (var_q, var_u) = (4.0 * cov[(1, 1)], 4.0 * cov[(2, 2)]);
    let fss = (sq * sq + su * su).sqrt();
    let fss_stderr = if fss > 0.0 {
        ((sq * sq * var_q + su * su * var_u) / (fss * fss)).sqrt()
    } else {
        (0.5 * (var_q + var_u)).sqrt()
    };
    let (angle, angle_se, defined) = linear_orientation(sq, su, var_q, var_u);
    let dphi = normalize_polarization_angle(angle)?;
    let theta_max = (ref_offset_deg + 0.5 * dphi).rem_euclid(90.0);

    Ok(FssResult {
        fss_uev: fss,
        fss_stderr_uev: fss_stderr,
        dipole_angle_deg: dphi,
        dipole_stderr_deg: angle_se,
        dipole_defined: defined,
        mean_energy_ev: reference + m * 1e-6,
        method: FssMethod::HwpSinusoid,
        energy_stokes: StokesVector::new_unchecked(2.0 * (reference * 1e6 + m), sq, su, 0.0),
        waveplate_max_deg: Some(theta_max),
    })
}

/// Runs the extractor matching the polarimeter kind.
pub fn extract_fss(es: &EnergySeries, polarimeter: &PolarimeterConfig) -> Result<FssResult> {
    match polarimeter.kind {
        crate::forward::PolarimeterKind::QwpLp => extract_fss_qwp_fft(es, polarimeter),
        crate::forward::PolarimeterKind::HwpLp => extract_fss_hwp_sinusoid(es, polarimeter.reference_offset_deg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionOptions {
    /// Integrated doublet counts at full transmission.
    pub peak_counts: f64,
    pub mean_energy_ev: f64,
}

impl Default for ResolutionOptions {
    fn default() -> Self {
        Self {
            peak_counts: 1e4,
            mean_energy_ev: 0.9464,
        }
    }
}

/// 95th percentiles of the splitting recovered from S = 0 emitters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionLimit {
    pub qwp_fft_uev: f64,
    pub hwp_sinusoid_uev: f64,
    /// The larger of the two: the smallest splitting either method separates from zero.
    pub combined_uev: f64,
    pub n_trials: usize,
    /// Trials whose analysis failed and were left out.
    pub n_failed: usize,
}

pub const MIN_RESOLUTION_TRIALS: usize = 100;

/// Monte-Carlo resolution limit.
///
/// The QWP scan uses `n_angles` readings over 360°, the HWP scan
/// `n_angles` readings over 180°.
pub fn resolution_limit(
    linewidth_uev: f64,
    detector: &DetectorModel,
    n_angles: usize,
    n_trials: usize,
    seed: RngSeed,
) -> Result<ResolutionLimit> {
    resolution_limit_with(linewidth_uev, detector, n_angles, n_trials, seed, &ResolutionOptions::default())
}

pub fn resolution_limit_with(
    linewidth_uev: f64,
    detector: &DetectorModel,
    n_angles: usize,
    n_trials: usize,
    seed: RngSeed,
    options: &ResolutionOptions,
) -> Result<ResolutionLimit> {
    if n_trials < MIN_RESOLUTION_TRIALS {
        return Err(Error::Precondition(format!(
            "need at least {MIN_RESOLUTION_TRIALS} trials, got {n_trials}"
        )));
    }
    if n_angles < MIN_QWP_ANGLES {
        return Err(Error::Precondition(format!(
            "need at least {MIN_QWP_ANGLES} angles, got {n_angles}"
        )));
    }
    let emitter = EmitterModel::new(options.mean_energy_ev, 0.0, 0.0, linewidth_uev, options.peak_counts)?;
    detector.validate()?;
    let qwp = PolarimeterConfig::qwp();
    let hwp = PolarimeterConfig::hwp();
    let qwp_angles = uniform_angles(0.0, 360.0, n_angles);
    let hwp_angles = uniform_angles(0.0, 180.0, n_angles);

    let trial = |t: usize| -> Option<(f64, f64)> {
        let s = seed.derive(t as u64);
        let run = |p: &PolarimeterConfig, angles: &[f64], stream: u64| -> Option<f64> {
            let series = simulate_angle_series(&emitter, p, detector, angles, s.derive(stream)).ok()?;
            let es = centroid_series(&series, &LineSelector::default()).ok()?;
            extract_fss(&es, p).ok().map(|r| r.fss_uev)
        };
        Some((run(&qwp, &qwp_angles, 0)?, run(&hwp, &hwp_angles, 1)?))
    };
    let outcomes: Vec<Option<(f64, f64)>> = (0..n_trials).into_par_iter().map(trial).collect();
    let ok: Vec<(f64, f64)> = outcomes.iter().flatten().copied().collect();
    if ok.is_empty() {
        return Err(Error::Degenerate("every resolution trial failed".into()));
    }
    let q: Vec<f64> = ok.iter().map(|r| r.0).collect();
    let h: Vec<f64> = ok.iter().map(|r| r.1).collect();
    let qwp_fft_uev = percentile(&q, 0.95);
    let hwp_sinusoid_uev = percentile(&h, 0.95);
    Ok(ResolutionLimit {
        qwp_fft_uev,
        hwp_sinusoid_uev,
        combined_uev: qwp_fft_uev.max(hwp_sinusoid_uev),
        n_trials,
        n_failed: n_trials - ok.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{polarization_difference, AngleSpectrum};
    use crate::forward::{
        doublet_stokes, simulate_angle_series_with, IntensityModulation, Retarder, SimulationOptions, Species,
    };
    use proptest::prelude::*;

    const E0: f64 = 0.9464;

    fn emitter(s: f64, phi: f64) -> EmitterModel {
        EmitterModel::new(E0, s, phi, 250.0, 1e4).unwrap()
    }

    fn noiseless() -> DetectorModel {
        DetectorModel::default().noiseless()
    }

    fn qwp_series(e: &EmitterModel, opts: &SimulationOptions) -> EnergySeries {
        let p = PolarimeterConfig::qwp();
        let s = simulate_angle_series_with(e, &p, &noiseless(), &uniform_angles(0.0, 360.0, 36), RngSeed(1), opts).unwrap();
        centroid_series(&s, &LineSelector::default()).unwrap()
    }

    fn hwp_series(e: &EmitterModel, offset: f64) -> EnergySeries {
        let p = PolarimeterConfig::hwp().with_reference_offset(offset);
        let s = simulate_angle_series(e, &p, &noiseless(), &uniform_angles(0.0, 180.0, 36), RngSeed(1)).unwrap();
        centroid_series(&s, &LineSelector::default()).unwrap()
    }

    /// Transmission-weighted mean of the two component energies.
    fn analytic_centroid(e: &EmitterModel, p: &PolarimeterConfig, reading: f64) -> f64 {
        let (high, low) = doublet_stokes(e);
        let (eh, el) = e.component_energies_ev();
        let (th, tl) = (p.transmission(&high, reading), p.transmission(&low, reading));
        (eh * th + el * tl) / (th + tl)
    }

    #[test]
    fn noiseless_centroids_match_weighted_means() {
        for (p, span) in [(PolarimeterConfig::qwp(), 360.0), (PolarimeterConfig::hwp(), 180.0)] {
            for &(s, phi) in &[(100.0, 0.0), (300.0, 30.0), (10.0, 137.0)] {
                let e = emitter(s, phi);
                let angles = uniform_angles(0.0, span, 24);
                let series = simulate_angle_series(&e, &p, &noiseless(), &angles, RngSeed(0)).unwrap();
                let es = centroid_series(&series, &LineSelector::default()).unwrap();
                for (a, c) in es.angles_deg().iter().zip(es.centroids_ev()) {
                    let want = analytic_centroid(&e, &p, *a);
                    assert!((c - want).abs() * 1e6 < 1e-6, "S={s} φ={phi} θ={a}: {} μeV", (c - want) * 1e6);
                }
            }
        }
    }

    #[test]
    fn hwp_centroid_follows_cos4theta() {
        let e = emitter(100.0, 0.0);
        let p = PolarimeterConfig::hwp().with_reference_offset(0.0);
        let angles = uniform_angles(0.0, 180.0, 36);
        let series = simulate_angle_series(&e, &p, &noiseless(), &angles, RngSeed(0)).unwrap();
        let es = centroid_series(&series, &LineSelector::default()).unwrap();
        for (a, c) in es.angles_deg().iter().zip(es.centroids_ev()) {
            let want = 50.0 * (4.0 * a.to_radians()).cos();
            assert!(((c - E0) * 1e6 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_splitting_gives_constant_centroids() {
        let e = emitter(0.0, 0.0);
        for es in [qwp_series(&e, &SimulationOptions::default()), hwp_series(&e, 82.0)] {
            for c in es.centroids_ev() {
                assert!((c - E0).abs() * 1e6 < 1e-9);
            }
        }
    }

    #[test]
    fn seeded_noisy_centroids_are_deterministic() {
        let e = emitter(50.0, 20.0);
        let p = PolarimeterConfig::hwp();
        let angles = uniform_angles(0.0, 180.0, 18);
        let run = || {
            let s = simulate_angle_series(&e, &p, &DetectorModel::default(), &angles, RngSeed(42)).unwrap();
            centroid_series(&s, &LineSelector::default()).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn lost_line_is_a_tracking_error() {
        let e = emitter(0.0, 0.0);
        let p = PolarimeterConfig::hwp();
        let angles = uniform_angles(0.0, 180.0, 8);
        let mut series = simulate_angle_series(&e, &p, &noiseless(), &angles, RngSeed(0)).unwrap();
        // replace the line at the fourth angle by one 3 meV away
        let moved = EmitterModel::new(E0 + 3e-3, 0.0, 0.0, 250.0, 1e4).unwrap();
        let det = DetectorModel {
            center_energy_ev: Some(E0),
            ..noiseless()
        };
        let other = simulate_angle_series(&moved, &p, &det, &angles, RngSeed(0)).unwrap();
        series.entries[3] = AngleSpectrum {
            angle_deg: series.entries[3].angle_deg,
            spectrum: other.entries[3].spectrum.clone(),
        };
        match centroid_series(&series, &LineSelector::default()) {
            Err(Error::Tracking { angle_deg, .. }) => assert_eq!(angle_deg, angles[3]),
            other => panic!("expected tracking error, got {other:?}"),
        }
    }

    #[test]
    fn target_selects_line_among_several() {
        let p = PolarimeterConfig::hwp();
        let angles = uniform_angles(0.0, 180.0, 12);
        let det = DetectorModel {
            center_energy_ev: Some(E0),
            ..noiseless()
        };
        let x = EmitterModel::new(E0 - 1.5e-3, 60.0, 10.0, 250.0, 1e4).unwrap();
        let xx = EmitterModel::new(E0 + 1.5e-3, 60.0, 100.0, 250.0, 1e4).unwrap();
        let sx = simulate_angle_series(&x, &p, &det, &angles, RngSeed(0)).unwrap();
        let sxx = simulate_angle_series(&xx, &p, &det, &angles, RngSeed(0)).unwrap();
        let mut merged = sx.clone();
        for (m, o) in merged.entries.iter_mut().zip(&sxx.entries) {
            let counts: Vec<f64> = m.spectrum.counts().iter().zip(o.spectrum.counts()).map(|(a, b)| a + b).collect();
            m.spectrum = Spectrum::new(m.spectrum.energies_ev().to_vec(), counts).unwrap();
        }
        let sel = LineSelector {
            target_energy_ev: Some(E0 + 1.5e-3),
            n_lines: 2,
        };
        let es = centroid_series(&merged, &sel).unwrap();
        let r = extract_fss_hwp_sinusoid(&es, p.reference_offset_deg).unwrap();
        assert!((r.fss_uev - 60.0).abs() < 0.01, "{}", r.fss_uev);
        assert!((r.dipole_angle_deg - 100.0).abs() < 0.01);
    }

    #[test]
    fn qwp_examples() {
        let r = extract_fss_qwp_fft(&qwp_series(&emitter(100.0, 0.0), &Default::default()), &PolarimeterConfig::qwp()).unwrap();
        assert!((r.energy_stokes.q - 100.0).abs() < 1e-6);
        assert!(r.energy_stokes.u.abs() < 1e-6 && r.energy_stokes.v.abs() < 1e-6);
        assert!((r.fss_uev - 100.0).abs() < 1e-6);
        assert!(polarization_difference(r.dipole_angle_deg, 0.0).abs() < 1e-6);
        assert!((r.mean_energy_ev - E0).abs() * 1e6 < 1e-6);
        assert!((r.energy_stokes.i - 2.0 * E0 * 1e6).abs() < 1e-3);

        let r = extract_fss_qwp_fft(&qwp_series(&emitter(80.0, 45.0), &Default::default()), &PolarimeterConfig::qwp()).unwrap();
        assert!((r.energy_stokes.u - 80.0).abs() < 1e-6);
        assert!((r.fss_uev - 80.0).abs() < 1e-6);
        assert!((r.dipole_angle_deg - 45.0).abs() < 1e-6);
    }

    #[test]
    fn qwp_constant_series_has_zero_splitting() {
        let angles = uniform_angles(0.0, 360.0, 16);
        let es = EnergySeries::new(angles, vec![E0; 16], vec![1.0; 16]).unwrap();
        let r = extract_fss_qwp_fft(&es, &PolarimeterConfig::qwp()).unwrap();
        assert_eq!(r.fss_uev, 0.0);
        assert!(!r.dipole_defined);
        assert!(!r.resolved());
        assert!(r.fss_stderr_uev > 0.0);
    }

    #[test]
    fn qwp_preconditions() {
        let p = PolarimeterConfig::qwp();
        let es = EnergySeries::new(uniform_angles(0.0, 360.0, 12), vec![E0; 12], vec![1.0; 12]).unwrap();
        assert!(matches!(extract_fss_qwp_fft(&es, &p), Err(Error::Precondition(_))));
        let es = EnergySeries::new(uniform_angles(0.0, 180.0, 36), vec![E0; 36], vec![1.0; 36]).unwrap();
        assert!(matches!(extract_fss_qwp_fft(&es, &p), Err(Error::Precondition(_))));
        let mut a = uniform_angles(0.0, 360.0, 20);
        a[5] += 1.0;
        let es = EnergySeries::new(a, vec![E0; 20], vec![1.0; 20]).unwrap();
        assert!(matches!(extract_fss_qwp_fft(&es, &p), Err(Error::Precondition(_))));
    }

    #[test]
    fn energy_series_validation() {
        assert!(EnergySeries::new(vec![0.0, 1.0], vec![E0], vec![1.0]).is_err());
        assert!(EnergySeries::new(vec![1.0, 1.0], vec![E0, E0], vec![1.0, 1.0]).is_err());
        assert!(EnergySeries::new(vec![0.0, 1.0], vec![E0, E0], vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn hwp_examples() {
        let r = extract_fss_hwp_sinusoid(&hwp_series(&emitter(100.0, 0.0), 82.0), 82.0).unwrap();
        assert!((r.waveplate_max_deg.unwrap() - 82.0).abs() < 1e-6);
        assert!((r.fss_uev - 100.0).abs() < 1e-6);
        assert!(polarization_difference(r.dipole_angle_deg, 0.0).abs() < 1e-6);
        assert!(r.dipole_defined);

        let r = extract_fss_hwp_sinusoid(&hwp_series(&emitter(60.0, 90.0), 0.0), 0.0).unwrap();
        assert!((r.waveplate_max_deg.unwrap() - 45.0).abs() < 1e-6);
        assert!((r.dipole_angle_deg - 90.0).abs() < 1e-6);
        assert!((r.fss_uev - 60.0).abs() < 1e-6);
    }

    #[test]
    fn hwp_zero_splitting_flags_angle() {
        let r = extract_fss_hwp_sinusoid(&hwp_series(&emitter(0.0, 0.0), 82.0), 82.0).unwrap();
        assert!(r.fss_uev < 1e-6);
        assert!(!r.dipole_defined);
    }

    #[test]
    fn hwp_preconditions() {
        let es = EnergySeries::new(uniform_angles(0.0, 180.0, 6), vec![E0; 6], vec![1.0; 6]).unwrap();
        assert!(matches!(extract_fss_hwp_sinusoid(&es, 0.0), Err(Error::Precondition(_))));
        let es = EnergySeries::new(uniform_angles(0.0, 60.0, 12), vec![E0; 12], vec![1.0; 12]).unwrap();
        assert!(matches!(extract_fss_hwp_sinusoid(&es, 0.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn round_trip_grid() {
        for &s in &[10.0, 50.0, 100.0, 300.0] {
            for &phi in &[0.0, 30.0, 45.0, 90.0, 137.0] {
                let e = emitter(s, phi);
                let q = extract_fss_qwp_fft(&qwp_series(&e, &Default::default()), &PolarimeterConfig::qwp()).unwrap();
                let h = extract_fss_hwp_sinusoid(&hwp_series(&e, 82.0), 82.0).unwrap();
                for r in [q, h] {
                    assert!((r.fss_uev - s).abs() < 0.01, "{:?} S={s} φ={phi}: {}", r.method, r.fss_uev);
                    assert!(polarization_difference(r.dipole_angle_deg, phi).abs() < 0.01);
                }
                let es = &q.energy_stokes;
                let len2 = es.q * es.q + es.u * es.u + es.v * es.v;
                assert!((len2 - q.fss_uev.powi(2)).abs() <= 1e-9 * q.fss_uev.powi(2));
            }
        }
    }

    #[test]
    fn beam_steering_is_rejected() {
        let e = emitter(100.0, 30.0);
        let p = PolarimeterConfig::qwp();
        let base = extract_fss_qwp_fft(&qwp_series(&e, &Default::default()), &p).unwrap();
        let opts = SimulationOptions {
            intensity_modulation: Some(IntensityModulation {
                depth: 0.1,
                harmonic: 1,
                phase_deg: 17.0,
            }),
            ..Default::default()
        };
        let steered = extract_fss_qwp_fft(&qwp_series(&e, &opts), &p).unwrap();
        assert!((steered.fss_uev - base.fss_uev).abs() < 0.1);
    }

    #[test]
    fn fixed_birefringence_is_rejected() {
        let e = emitter(100.0, 30.0).with_circular_fraction(0.2);
        let p = PolarimeterConfig::qwp();
        let base = extract_fss_qwp_fft(&qwp_series(&e, &Default::default()), &p).unwrap();
        for (axis, ret) in [(10.0, 37.0), (67.0, 90.0), (133.0, 180.0)] {
            let opts = SimulationOptions {
                pre_retarder: Some(Retarder {
                    fast_axis_deg: axis,
                    retardance_deg: ret,
                }),
                ..Default::default()
            };
            let r = extract_fss_qwp_fft(&qwp_series(&e, &opts), &p).unwrap();
            assert!((r.fss_uev - base.fss_uev).abs() < 0.1, "{axis} {ret}: {}", r.fss_uev);
        }
    }

    #[test]
    fn biexciton_is_orthogonal() {
        for phi in [0.0, 30.0, 137.0] {
            let x = emitter(70.0, phi).with_species(Species::X);
            let xx = emitter(70.0, phi + 90.0).with_species(Species::XX);
            let rx = extract_fss_hwp_sinusoid(&hwp_series(&x, 82.0), 82.0).unwrap();
            let rxx = extract_fss_hwp_sinusoid(&hwp_series(&xx, 82.0), 82.0).unwrap();
            assert!(polarization_difference(rxx.dipole_angle_deg, rx.dipole_angle_deg + 90.0).abs() < 1e-6);
        }
    }

    #[test]
    fn hwp_misses_circular_part() {
        let e = emitter(100.0, 20.0).with_circular_fraction(0.6);
        let q = extract_fss_qwp_fft(&qwp_series(&e, &Default::default()), &PolarimeterConfig::qwp()).unwrap();
        let h = extract_fss_hwp_sinusoid(&hwp_series(&e, 82.0), 82.0).unwrap();
        assert!((q.fss_uev - 100.0).abs() < 0.01);
        assert!((q.energy_stokes.v - 60.0).abs() < 0.01);
        let linear = q.energy_stokes.q.hypot(q.energy_stokes.u);
        assert!((h.fss_uev - linear).abs() < 0.01, "{} vs {linear}", h.fss_uev);
        assert!((linear - 80.0).abs() < 0.01);
    }

    #[test]
    fn methods_agree_under_noise() {
        let e = emitter(60.0, 25.0);
        let det = DetectorModel::default();
        let trials = 200;
        let agree = (0..trials)
            .into_par_iter()
            .filter(|&t| {
                let s = RngSeed(1000 + t as u64);
                let qp = PolarimeterConfig::qwp();
                let hp = PolarimeterConfig::hwp();
                let qs = simulate_angle_series(&e, &qp, &det, &uniform_angles(0.0, 360.0, 36), s.derive(0)).unwrap();
                let hs = simulate_angle_series(&e, &hp, &det, &uniform_angles(0.0, 180.0, 36), s.derive(1)).unwrap();
                let q = extract_fss(&centroid_series(&qs, &LineSelector::default()).unwrap(), &qp).unwrap();
                let h = extract_fss(&centroid_series(&hs, &LineSelector::default()).unwrap(), &hp).unwrap();
                (q.fss_uev - h.fss_uev).abs() <= 2.0 * q.fss_stderr_uev.hypot(h.fss_stderr_uev)
            })
            .count();
        assert!(agree as f64 >= 0.9 * trials as f64, "{agree}/{trials}");
    }

    #[test]
    fn noisy_stderr_is_calibrated() {
        // reported centroid stderr should match the scatter
        let e = emitter(0.0, 0.0);
        let p = PolarimeterConfig::hwp();
        let angles = uniform_angles(0.0, 180.0, 36);
        let s = simulate_angle_series(&e, &p, &DetectorModel::default(), &angles, RngSeed(5)).unwrap();
        let es = centroid_series(&s, &LineSelector::default()).unwrap();
        let n = es.len() as f64;
        let mean = es.centroids_ev().iter().sum::<f64>() / n;
        let sd = (es.centroids_ev().iter().map(|c| ((c - mean) * 1e6).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let se = es.stderrs_uev().iter().sum::<f64>() / n;
        assert!(sd / se > 0.6 && sd / se < 1.6, "scatter {sd} vs stderr {se}");
    }

    #[test]
    fn resolution_limit_behaviour() {
        let det = DetectorModel::default();
        assert!(matches!(
            resolution_limit(250.0, &det, 36, 50, RngSeed(0)),
            Err(Error::Precondition(_))
        ));
        let base = resolution_limit(250.0, &det, 36, 100, RngSeed(7)).unwrap();
        assert!(base.combined_uev > 0.0);
        assert_eq!(base.combined_uev, base.qwp_fft_uev.max(base.hwp_sinusoid_uev));
        let bright = resolution_limit_with(
            250.0,
            &det,
            36,
            100,
            RngSeed(7),
            &ResolutionOptions {
                peak_counts: 1e6,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(bright.combined_uev < base.combined_uev);
        let narrow = resolution_limit(100.0, &det, 36, 100, RngSeed(7)).unwrap();
        let wide = resolution_limit(500.0, &det, 36, 100, RngSeed(7)).unwrap();
        assert!(narrow.combined_uev < wide.combined_uev);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip_random(s in 5.0f64..400.0, phi in 0.0f64..180.0, offset in 0.0f64..180.0) {
            let e = emitter(s, phi);
            let h = extract_fss_hwp_sinusoid(&hwp_series(&e, offset), offset).unwrap();
            prop_assert!((h.fss_uev - s).abs() < 0.01);
            prop_assert!(polarization_difference(h.dipole_angle_deg, phi).abs() < 0.01);
            let q = extract_fss_qwp_fft(&qwp_series(&e, &Default::default()), &PolarimeterConfig::qwp()).unwrap();
            prop_assert!((q.fss_uev - s).abs() < 0.01);
            prop_assert!(polarization_difference(q.dipole_angle_deg, phi).abs() < 0.01);
        }
    }
}
