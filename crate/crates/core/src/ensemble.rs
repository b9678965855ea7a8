//! Statistics over many emitters: splitting fractions, orientation
//! histograms, biexciton flagging and polar diagrams.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use rand_distr::{Distribution, LogNormal, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{normalize_polarization_angle, polarization_difference, AngleSeries, RngSeed};
use crate::error::{Error, Result};
use crate::forward::{EmitterModel, PolarimeterConfig, PolarimeterKind, Species};
use crate::fss::{
    centroid_track, extract_fss_hwp_sinusoid, extract_fss_qwp_fft, CentroidOptions, FssMethod, FssResult,
    LineSelector,
};
use crate::peakfit::{fit_curve, percentile, CurveGuess, FitOptions, Histogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFlag {
    /// S ≤ 10 % of the linewidth, or the orientation is not defined.
    BelowResolution,
    /// Oriented roughly perpendicular to the ensemble.
    SuspectedXx,
    /// A biexciton (declared or suspected) with no partner on the same dot.
    Unpaired,
    /// Loading or analysis failed; see `error`.
    Failed,
}

impl RecordFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecordFlag::BelowResolution => "below_resolution",
            RecordFlag::SuspectedXx => "suspected_xx",
            RecordFlag::Unpaired => "unpaired",
            RecordFlag::Failed => "failed",
        }
    }
}

impl std::str::FromStr for RecordFlag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "below_resolution" => Ok(RecordFlag::BelowResolution),
            "suspected_xx" => Ok(RecordFlag::SuspectedXx),
            "unpaired" => Ok(RecordFlag::Unpaired),
            "failed" => Ok(RecordFlag::Failed),
            other => Err(Error::parse("flags", format!("unknown flag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub emitter_id: String,
    pub dot_id: Option<String>,
    pub species: Species,
    pub method: FssMethod,
    pub result: Option<FssResult>,
    /// Linewidth hint, else the median fitted FWHM of the tracked line.
    pub linewidth_uev: Option<f64>,
    pub paired_id: Option<String>,
    pub flags: BTreeSet<RecordFlag>,
    pub error: Option<String>,
}

impl EnsembleRecord {
    /// Passes the 10 %-of-linewidth rule and has a defined orientation.
    pub fn selected(&self) -> bool {
        self.result.is_some() && !self.flags.contains(&RecordFlag::BelowResolution)
    }
}

/// One emitter to analyse. A load failure is carried in `series`.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub emitter_id: String,
    pub dot_id: Option<String>,
    pub species: Species,
    pub polarimeter: PolarimeterConfig,
    pub linewidth_hint_uev: Option<f64>,
    pub series: std::result::Result<AngleSeries, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    /// The extractor matching each series' polarimeter.
    #[default]
    Auto,
    QwpFft,
    HwpSinusoid,
    Both,
}

impl std::str::FromStr for MethodChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(MethodChoice::Auto),
            "qwp_fft" => Ok(MethodChoice::QwpFft),
            "hwp_sinusoid" => Ok(MethodChoice::HwpSinusoid),
            "both" => Ok(MethodChoice::Both),
            other => Err(Error::parse("method", format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub method: MethodChoice,
    pub selector: LineSelector,
    pub centroid: CentroidOptions,
    /// Keep emitters whose splitting exceeds this fraction of the linewidth.
    pub selection_fraction: f64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            method: MethodChoice::Auto,
            selector: LineSelector::default(),
            centroid: CentroidOptions::default(),
            selection_fraction: 0.1,
        }
    }
}

/// Orientation window, relative to the ensemble, that marks a suspected biexciton.
pub const SUSPECTED_XX_BAND_DEG: (f64, f64) = (75.0, 105.0);

fn methods_for(choice: MethodChoice, p: &PolarimeterConfig) -> Vec<FssMethod> {
    match choice {
        MethodChoice::Auto => vec![match p.kind {
            PolarimeterKind::QwpLp => FssMethod::QwpFft,
            PolarimeterKind::HwpLp => FssMethod::HwpSinusoid,
        }],
        MethodChoice::QwpFft => vec![FssMethod::QwpFft],
        MethodChoice::HwpSinusoid => vec![FssMethod::HwpSinusoid],
        MethodChoice::Both => vec![FssMethod::QwpFft, FssMethod::HwpSinusoid],
    }
}

fn analyze_one(item: &BatchItem, method: FssMethod, cfg: &BatchConfig) -> std::result::Result<(FssResult, f64), String> {
    let series = item.series.as_ref().map_err(Clone::clone)?;
    let (es, fits) = centroid_track(series, &cfg.selector, &cfg.centroid).map_err(|e| e.to_string())?;
    let widths: Vec<f64> = fits.iter().map(|c| c.fit.fwhm_uev).collect();
    let linewidth = item.linewidth_hint_uev.unwrap_or_else(|| percentile(&widths, 0.5));
    let result = match method {
        FssMethod::QwpFft => extract_fss_qwp_fft(&es, &item.polarimeter),
        FssMethod::HwpSinusoid => extract_fss_hwp_sinusoid(&es, item.polarimeter.reference_offset_deg),
    }
    .map_err(|e| e.to_string())?;
    Ok((result, linewidth))
}

/// Extracts every series, then flags and pairs the records.
///
/// Failures are recorded per emitter. Output is sorted by
/// `(emitter_id, method)` whatever the input order.
pub fn batch_analyze(items: &[BatchItem], cfg: &BatchConfig) -> Result<Vec<EnsembleRecord>> {
    let mut seen = BTreeSet::new();
    for item in items {
        if !seen.insert(item.emitter_id.as_str()) {
            return Err(Error::Config(format!("duplicate emitter_id {:?}", item.emitter_id)));
        }
    }
    let jobs: Vec<(&BatchItem, FssMethod)> = items
        .iter()
        .flat_map(|item| methods_for(cfg.method, &item.polarimeter).into_iter().map(move |m| (item, m)))
        .collect();
    let mut records: Vec<EnsembleRecord> = jobs
        .par_iter()
        .map(|&(item, method)| {
            let mut rec = EnsembleRecord {
                emitter_id: item.emitter_id.clone(),
                dot_id: item.dot_id.clone(),
                species: item.species,
                method,
                result: None,
                linewidth_uev: item.linewidth_hint_uev,
                paired_id: None,
                flags: BTreeSet::new(),
                error: None,
            };
            match analyze_one(item, method, cfg) {
                Ok((r, lw)) => {
                    rec.linewidth_uev = Some(lw);
                    if r.fss_uev <= cfg.selection_fraction * lw || !r.dipole_defined {
                        rec.flags.insert(RecordFlag::BelowResolution);
                    }
                    rec.result = Some(r);
                }
                Err(e) => {
                    rec.flags.insert(RecordFlag::Failed);
                    rec.error = Some(e);
                }
            }
            rec
        })
        .collect();
    records.sort_by(|a, b| a.emitter_id.cmp(&b.emitter_id).then(a.method.as_str().cmp(b.method.as_str())));

    for method in [FssMethod::QwpFft, FssMethod::HwpSinusoid] {
        assign_relational_flags(&mut records, method);
    }
    Ok(records)
}

/// Pairing by dot id and perpendicular-orientation flags within one method.
fn assign_relational_flags(records: &mut [EnsembleRecord], method: FssMethod) {
    let idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].method == method).collect();
    if idx.is_empty() {
        return;
    }

    let oriented = |i: &usize| {
        records[*i]
            .result
            .filter(|r| r.dipole_defined)
            .map(|r| (records[*i].species, r.dipole_angle_deg))
    };
    let all: Vec<(Species, f64)> = idx.iter().filter_map(oriented).collect();
    let non_xx: Vec<f64> = all.iter().filter(|(s, _)| *s != Species::XX).map(|(_, a)| *a).collect();
    let reference = if non_xx.is_empty() {
        circular_median(&all.iter().map(|(_, a)| *a).collect::<Vec<_>>())
    } else {
        circular_median(&non_xx)
    };
    if let Some(reference) = reference {
        for &i in &idx {
            if let Some(r) = records[i].result.filter(|r| r.dipole_defined) {
                let d = polarization_difference(r.dipole_angle_deg, reference).abs();
                if (SUSPECTED_XX_BAND_DEG.0..=SUSPECTED_XX_BAND_DEG.1).contains(&d) {
                    records[i].flags.insert(RecordFlag::SuspectedXx);
                }
            }
        }
    }

    let mut by_dot: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in &idx {
        if let Some(d) = records[i].dot_id.as_deref() {
            by_dot.entry(d).or_default().push(i);
        }
    }
    let mut pairs = Vec::new();
    for members in by_dot.values() {
        let xs: Vec<usize> = members.iter().copied().filter(|&i| records[i].species != Species::XX).collect();
        let xxs: Vec<usize> = members.iter().copied().filter(|&i| records[i].species == Species::XX).collect();
        for (&a, &b) in xs.iter().zip(&xxs) {
            pairs.push((a, b));
        }
    }
    for (a, b) in pairs {
        records[a].paired_id = Some(records[b].emitter_id.clone());
        records[b].paired_id = Some(records[a].emitter_id.clone());
    }
    for &i in &idx {
        let xx_like = records[i].species == Species::XX || records[i].flags.contains(&RecordFlag::SuspectedXx);
        if xx_like && records[i].paired_id.is_none() {
            records[i].flags.insert(RecordFlag::Unpaired);
        }
    }
}

/// Sample minimising the summed axial distance to all others (mod 180°).
pub fn circular_median(angles_deg: &[f64]) -> Option<f64> {
    let finite: Vec<f64> = angles_deg
        .iter()
        .filter_map(|&a| normalize_polarization_angle(a).ok())
        .collect();
    let costs: Vec<f64> = finite
        .iter()
        .map(|&c| finite.iter().map(|&a| polarization_difference(a, c).abs()).sum())
        .collect();
    let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
    // ties (up to rounding) go to the smallest angle so relabelled inputs agree
    finite
        .iter()
        .zip(&costs)
        .filter(|(_, &cost)| cost <= best + 1e-9 * (1.0 + best))
        .map(|(&c, _)| c)
        .min_by(f64::total_cmp)
}

/// Fraction of analysed records with a splitting below `threshold_uev`.
pub fn fraction_below(records: &[EnsembleRecord], threshold_uev: f64) -> Result<f64> {
    let s: Vec<f64> = records.iter().filter_map(|r| r.result.map(|r| r.fss_uev)).collect();
    fraction_below_values(&s, threshold_uev)
}

pub fn fraction_below_values(fss_uev: &[f64], threshold_uev: f64) -> Result<f64> {
    if fss_uev.is_empty() {
        return Err(Error::Domain("no analysed records".into()));
    }
    Ok(fss_uev.iter().filter(|&&s| s < threshold_uev).count() as f64 / fss_uev.len() as f64)
}

pub const DEFAULT_ORIENTATION_BIN_DEG: f64 = 2.0;
pub const MIN_ORIENTATION_RECORDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationDistribution {
    /// Bin centers in degrees, contiguous and spanning 180° around the median.
    pub centers: Vec<f64>,
    pub counts: Vec<usize>,
    pub bin_width: f64,
    pub median_deg: f64,
    /// Gaussian fit center in [0, 180).
    pub fit_center: f64,
    pub fit_sigma: f64,
    /// Standard error of the fitted center.
    pub fit_stderr: f64,
    pub fit_amplitude: f64,
    /// False when too few bins are populated and the moments were used instead.
    pub fit_converged: bool,
    pub n: usize,
    /// Angles within the suspected-biexciton band of the fit center.
    pub secondary_count: usize,
}

/// Orientation histogram of selected records.
pub fn orientation_distribution(records: &[EnsembleRecord], bin_width_deg: f64) -> Result<OrientationDistribution> {
    let angles: Vec<f64> = records
        .iter()
        .filter(|r| r.selected())
        .filter_map(|r| r.result.map(|r| r.dipole_angle_deg))
        .collect();
    if angles.is_empty() {
        return Err(Error::Domain("no record has a defined orientation".into()));
    }
    orientation_distribution_from_angles(&angles, bin_width_deg)
}

/// Axial histogram centered on the circular median, with a Gaussian fit to
/// the main population.
pub fn orientation_distribution_from_angles(angles_deg: &[f64], bin_width: f64) -> Result<OrientationDistribution> {
    if !(bin_width.is_finite() && bin_width > 0.0 && bin_width <= 90.0) {
        return Err(Error::Domain("bin width must lie in (0, 90]".into()));
    }
    if angles_deg.iter().any(|a| !a.is_finite()) {
        return Err(Error::Domain("orientations must be finite".into()));
    }
    if angles_deg.len() < MIN_ORIENTATION_RECORDS {
        return Err(Error::Domain(format!(
            "need at least {MIN_ORIENTATION_RECORDS} defined orientations, got {}",
            angles_deg.len()
        )));
    }
    let median = circular_median(angles_deg).expect("non-empty finite input");
    let rel: Vec<f64> = angles_deg.iter().map(|&a| polarization_difference(a, median)).collect();

    // bins centered on multiples of bin_width around the median
    let k_lo = (-90.0 / bin_width + 0.5).floor() as i64;
    let k_hi = (90.0 / bin_width + 0.5).ceil() as i64 - 1;
    let mut counts = vec![0usize; (k_hi - k_lo + 1) as usize];
    for d in &rel {
        let k = ((d / bin_width + 0.5).floor() as i64).clamp(k_lo, k_hi);
        counts[(k - k_lo) as usize] += 1;
    }
    let rel_centers: Vec<f64> = (k_lo..=k_hi).map(|k| k as f64 * bin_width).collect();
    let centers: Vec<f64> = rel_centers.iter().map(|c| median + c).collect();

    // main population: within 45° of the median
    let main: Vec<f64> = rel.iter().copied().filter(|d| d.abs() < 45.0).collect();
    let n_main = main.len() as f64;
    let floor = bin_width / 12f64.sqrt();
    let mean = main.iter().sum::<f64>() / n_main;
    let sd = (main.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n_main - 1.0).max(1.0)).sqrt();
    let moments = (mean, sd.max(floor), sd.max(floor) / n_main.sqrt());

    // seed the fit from the histogram alone so that inputs binning identically
    // fit identically; the fit is ill-conditioned when σ collapses to the floor
    let populated = counts.iter().filter(|&&c| c > 0).count();
    let ys: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let (hm, hsd) = {
        let inner: Vec<(f64, f64)> =
            rel_centers.iter().zip(&ys).filter(|(c, _)| c.abs() < 45.0).map(|(&c, &y)| (c, y)).collect();
        let w: f64 = inner.iter().map(|p| p.1).sum();
        let m = inner.iter().map(|(c, y)| c * y).sum::<f64>() / w;
        let v = inner.iter().map(|(c, y)| y * (c - m).powi(2)).sum::<f64>() / w;
        (m, v.sqrt())
    };
    let guess_fwhm = (2.354_820_045 * hsd).max(2.0 * bin_width);
    let fitted = if populated >= 3 {
        let opts = FitOptions {
            window_fwhm: 3.0,
            fit_background: false,
            weighting: crate::peakfit::Weighting::Uniform,
            ..FitOptions::default()
        };
        let guess = CurveGuess {
            center: hm,
            fwhm: guess_fwhm,
            amplitude: None,
        };
        fit_curve(&rel_centers, &ys, &[guess], &opts)
            .ok()
            .and_then(|p| p.into_iter().next())
            .filter(|p| p.converged && p.amplitude > 0.0 && p.center.abs() < 45.0 && p.sigma.is_finite())
    } else {
        None
    };
    let (center, sigma, stderr, amplitude, converged) = match fitted {
        Some(p) => (p.center, p.sigma.max(floor), p.center_stderr, p.amplitude, true),
        None => {
            let peak = counts.iter().copied().max().unwrap_or(0) as f64;
            (moments.0, moments.1, moments.2, peak, false)
        }
    };
    let fit_center = normalize_polarization_angle(median + center)?;
    let secondary_count = angles_deg
        .iter()
        .filter(|&&a| {
            let d = polarization_difference(a, fit_center).abs();
            (SUSPECTED_XX_BAND_DEG.0..=SUSPECTED_XX_BAND_DEG.1).contains(&d)
        })
        .count();

    Ok(OrientationDistribution {
        centers,
        counts,
        bin_width,
        median_deg: median,
        fit_center,
        fit_sigma: sigma,
        fit_stderr: stderr,
        fit_amplitude: amplitude,
        fit_converged: converged,
        n: angles_deg.len(),
        secondary_count,
    })
}

/// Histogram of splittings of analysed records.
pub fn fss_histogram(records: &[EnsembleRecord], bin_width_uev: f64) -> Result<Histogram> {
    let s: Vec<f64> = records.iter().filter_map(|r| r.result.map(|r| r.fss_uev)).collect();
    Histogram::aligned(&s, bin_width_uev)
}

/// A dipole matrix element with a label.
#[derive(Debug, Clone, PartialEq)]
pub struct Dipole {
    pub label: String,
    pub d: [Complex64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarDiagram {
    pub angles_deg: Vec<f64>,
    /// `(label, |d·ê(φ)|²)` per dipole.
    pub curves: Vec<(String, Vec<f64>)>,
    pub sum: Vec<f64>,
    /// Degree of linear polarization of the summed emission.
    pub dlp: f64,
}

pub const MIN_POLAR_SAMPLES: usize = 36;

/// In-plane emission patterns `|d·ê(φ)|²` with ê = (cos φ, sin φ, 0).
pub fn polar_diagram(dipoles: &[Dipole], n_samples: usize) -> Result<PolarDiagram> {
    if dipoles.is_empty() {
        return Err(Error::Domain("need at least one dipole".into()));
    }
    if n_samples < MIN_POLAR_SAMPLES {
        return Err(Error::Domain(format!("need at least {MIN_POLAR_SAMPLES} samples, got {n_samples}")));
    }
    for dp in dipoles {
        if dp.d.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::Domain(format!("dipole {:?} is not finite", dp.label)));
        }
        if dp.d.iter().all(|c| c.norm_sqr() == 0.0) {
            return Err(Error::Domain(format!("dipole {:?} is zero", dp.label)));
        }
    }
    let angles_deg: Vec<f64> = (0..n_samples).map(|k| 360.0 * k as f64 / n_samples as f64).collect();
    let curves: Vec<(String, Vec<f64>)> = dipoles
        .iter()
        .map(|dp| {
            let c = angles_deg
                .iter()
                .map(|a| {
                    let (s, c) = a.to_radians().sin_cos();
                    (dp.d[0] * c + dp.d[1] * s).norm_sqr()
                })
                .collect();
            (dp.label.clone(), c)
        })
        .collect();
    let sum = (0..n_samples).map(|k| curves.iter().map(|(_, c)| c[k]).sum()).collect();

    // Sum(φ) = A + B·cos2φ + C·sin2φ exactly
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for dp in dipoles {
        let (x, y) = (dp.d[0], dp.d[1]);
        a += 0.5 * (x.norm_sqr() + y.norm_sqr());
        b += 0.5 * (x.norm_sqr() - y.norm_sqr());
        c += (x.conj() * y).re;
    }
    let dlp = if a > 0.0 { b.hypot(c) / a } else { 0.0 };
    Ok(PolarDiagram {
        angles_deg,
        curves,
        sum,
        dlp,
    })
}

/// Parameters of a synthetic ensemble resembling a measured dot population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Number of exciton lines.
    pub n_x: usize,
    /// Of those dots, how many also contribute a biexciton line.
    pub n_xx: usize,
    /// Median of the log-normal splitting distribution.
    pub fss_median_uev: f64,
    pub fss_log_sigma: f64,
    pub dphi_mean_deg: f64,
    pub dphi_sigma_deg: f64,
    /// Intrinsic linewidths are uniform on [min, max].
    pub linewidth_min_uev: f64,
    pub linewidth_max_uev: f64,
    pub mean_energy_ev: f64,
    /// Biexciton line offset from its exciton.
    pub xx_offset_uev: f64,
    pub peak_counts: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_x: 30,
            n_xx: 5,
            fss_median_uev: 50.0,
            fss_log_sigma: 0.6,
            dphi_mean_deg: 3.1,
            dphi_sigma_deg: 2.2,
            linewidth_min_uev: 100.0,
            linewidth_max_uev: 550.0,
            mean_energy_ev: 0.9464,
            xx_offset_uev: -2000.0,
            peak_counts: 1e5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedEmitter {
    pub emitter_id: String,
    pub dot_id: String,
    pub emitter: EmitterModel,
}

/// Draws an ensemble. Biexcitons share splitting and dot with the first
/// `n_xx` excitons and are polarized perpendicular to them.
pub fn generate_ensemble(cfg: &GeneratorConfig, seed: RngSeed) -> Result<Vec<GeneratedEmitter>> {
    if cfg.n_xx > cfg.n_x {
        return Err(Error::Config("n_xx must not exceed n_x".into()));
    }
    let lognormal = LogNormal::new(cfg.fss_median_uev.ln(), cfg.fss_log_sigma)
        .map_err(|e| Error::Config(format!("fss distribution: {e}")))?;
    let normal = Normal::new(cfg.dphi_mean_deg, cfg.dphi_sigma_deg)
        .map_err(|e| Error::Config(format!("orientation distribution: {e}")))?;
    if !(cfg.linewidth_min_uev > 0.0 && cfg.linewidth_max_uev >= cfg.linewidth_min_uev) {
        return Err(Error::Config("linewidth range must satisfy 0 < min <= max".into()));
    }
    let widths = Uniform::new_inclusive(cfg.linewidth_min_uev, cfg.linewidth_max_uev)
        .map_err(|e| Error::Config(format!("linewidth range: {e}")))?;

    let mut rng = seed.rng();
    let mut out = Vec::with_capacity(cfg.n_x + cfg.n_xx);
    for k in 0..cfg.n_x {
        let s = lognormal.sample(&mut rng);
        let phi = normalize_polarization_angle(normal.sample(&mut rng))?;
        let lw = widths.sample(&mut rng);
        let dot = format!("dot{:03}", k + 1);
        let x = EmitterModel::new(cfg.mean_energy_ev, s, phi, lw, cfg.peak_counts)?.with_species(Species::X);
        if k < cfg.n_xx {
            let xx = EmitterModel::new(
                cfg.mean_energy_ev + cfg.xx_offset_uev * 1e-6,
                s,
                normalize_polarization_angle(phi + 90.0)?,
                lw,
                cfg.peak_counts,
            )?
            .with_species(Species::XX);
            out.push(GeneratedEmitter {
                emitter_id: format!("{dot}_XX"),
                dot_id: dot.clone(),
                emitter: xx,
            });
        }
        out.push(GeneratedEmitter {
            emitter_id: format!("{dot}_X"),
            dot_id: dot,
            emitter: x,
        });
    }
    out.sort_by(|a, b| a.emitter_id.cmp(&b.emitter_id));
    Ok(out)
}
