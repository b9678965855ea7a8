//! Gaussian line fitting by Levenberg–Marquardt.
//!
//! The optimizer works on plain `(x, y)` samples so the same machinery fits
//! spectral lines (x in μeV), angle histograms (x in degrees) and cavity
//! dips (x in nm). Model: `b + Σ_k A_k·exp(−(x − c_k)² / 2σ_k²)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{ev_to_uev, Spectrum, FWHM_PER_SIGMA};
use crate::error::{Error, Result};

const DAMPING_START: f64 = 1e-3;
const DAMPING_FACTOR: f64 = 10.0;
const DAMPING_MAX: f64 = 1e16;
const REL_COST_TOL: f64 = 1e-10;
const POISSON_WEIGHT_MIN_COUNTS: f64 = 10.0;

/// Number of model parameters per Gaussian: amplitude, center, sigma.
const PER_PEAK: usize = 3;

/// Evaluates the Gaussian mixture at `x`.
///
/// `params` holds `[A, c, σ]` per peak followed by the background when
/// `with_background` is set.
pub fn gaussian_mixture(x: f64, params: &[f64], with_background: bool) -> f64 {
    let n = peak_count(params.len(), with_background);
    let mut y = if with_background { params[n * PER_PEAK] } else { 0.0 };
    for k in 0..n {
        let (a, c, s) = (params[3 * k], params[3 * k + 1], params[3 * k + 2]);
        let z = (x - c) / s;
        y += a * (-0.5 * z * z).exp();
    }
    y
}

/// Analytic gradient of [`gaussian_mixture`] with respect to `params`.
pub fn gaussian_mixture_gradient(x: f64, params: &[f64], with_background: bool, out: &mut [f64]) {
    let n = peak_count(params.len(), with_background);
    for k in 0..n {
        let (a, c, s) = (params[3 * k], params[3 * k + 1], params[3 * k + 2]);
        let d = x - c;
        let e = (-0.5 * d * d / (s * s)).exp();
        out[3 * k] = e;
        out[3 * k + 1] = a * e * d / (s * s);
        out[3 * k + 2] = a * e * d * d / (s * s * s);
    }
    if with_background {
        out[n * PER_PEAK] = 1.0;
    }
}

fn peak_count(n_params: usize, with_background: bool) -> usize {
    (n_params - usize::from(with_background)) / PER_PEAK
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// Parameter covariance scaled by the reduced chi-square.
    pub covariance: Option<DMatrix<f64>>,
    /// Weighted sum of squared residuals at `params`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped least squares for a Gaussian mixture.
pub fn levenberg_marquardt(
    xs: &[f64],
    ys: &[f64],
    weights: &[f64],
    initial: &[f64],
    with_background: bool,
    max_iterations: usize,
) -> LmOutcome {
    let np = initial.len();
    let n = xs.len();
    let mut params = initial.to_vec();
    let mut grad = vec![0.0; np];

    let cost_of = |p: &[f64]| -> f64 {
        xs.iter()
            .zip(ys)
            .zip(weights)
            .map(|((&x, &y), &w)| {
                let r = y - gaussian_mixture(x, p, with_background);
                w * r * r
            })
            .sum()
    };
    let scale: f64 = ys.iter().zip(weights).map(|(y, w)| w * y * y).sum::<f64>().max(f64::MIN_POSITIVE);

    let mut cost = cost_of(&params);
    let mut lambda = DAMPING_START;
    let mut converged = false;
    let mut iterations = 0;

    let normal_equations = |p: &[f64], grad: &mut [f64]| {
        let mut h = DMatrix::<f64>::zeros(np, np);
        let mut g = DVector::<f64>::zeros(np);
        for ((&x, &y), &w) in xs.iter().zip(ys).zip(weights) {
            gaussian_mixture_gradient(x, p, with_background, grad);
            let r = y - gaussian_mixture(x, p, with_background);
            for i in 0..np {
                g[i] += w * grad[i] * r;
                for j in 0..=i {
                    h[(i, j)] += w * grad[i] * grad[j];
                }
            }
        }
        for i in 0..np {
            for j in 0..i {
                h[(j, i)] = h[(i, j)];
            }
        }
        (h, g)
    };

    if cost <= 1e-30 * scale {
        converged = true;
    }
    while !converged && iterations < max_iterations {
        iterations += 1;
        let (h, g) = normal_equations(&params, &mut grad);
        let mut accepted = false;
        while lambda <= DAMPING_MAX {
            let mut damped = h.clone();
            for i in 0..np {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-300);
            }
            let Some(step) = solve(&damped, &g) else {
                lambda *= DAMPING_FACTOR;
                continue;
            };
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, d)| p + d).collect();
            let valid = trial.iter().all(|v| v.is_finite())
                && (0..peak_count(np, with_background)).all(|k| trial[3 * k + 2] > 0.0);
            if !valid {
                lambda *= DAMPING_FACTOR;
                continue;
            }
            let trial_cost = cost_of(&trial);
            if trial_cost < cost {
                let rel = (cost - trial_cost) / cost;
                params = trial;
                cost = trial_cost;
                lambda = (lambda / DAMPING_FACTOR).max(1e-12);
                accepted = true;
                if rel < REL_COST_TOL || cost <= 1e-30 * scale {
                    converged = true;
                }
                break;
            }
            lambda *= DAMPING_FACTOR;
        }
        if !accepted {
            // No descent direction left at any damping: stationary point.
            converged = true;
        }
    }

    let dof = n.saturating_sub(np).max(1) as f64;
    let (h, _) = normal_equations(&params, &mut grad);
    let covariance = invert(&h).map(|c| c * (cost / dof));
    LmOutcome {
        params,
        covariance,
        cost,
        iterations,
        converged,
    }
}

fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    a.clone().lu().solve(b)
}

fn invert(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| a.clone().try_inverse())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Weighting {
    /// 1/y weights when every sample in the window has y >= 10, else uniform.
    #[default]
    Auto,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Half-width of each fit window in units of the initial FWHM.
    pub window_fwhm: f64,
    pub fit_background: bool,
    pub max_iterations: usize,
    pub weighting: Weighting,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            window_fwhm: 5.0,
            fit_background: true,
            max_iterations: 200,
            weighting: Weighting::Auto,
        }
    }
}

/// Starting point for one Gaussian, in the x units of the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveGuess {
    pub center: f64,
    pub fwhm: f64,
    pub amplitude: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePeak {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
    pub amplitude_stderr: f64,
    pub center_stderr: f64,
    pub sigma_stderr: f64,
    /// Background of the window this peak was fitted in.
    pub background: f64,
    pub converged: bool,
    /// Unweighted RMS residual of the window fit.
    pub residual_rms: f64,
    pub window: (f64, f64),
}

impl CurvePeak {
    pub fn fwhm(&self) -> f64 {
        FWHM_PER_SIGMA * self.sigma
    }
}

/// Fits one Gaussian per guess, grouping guesses whose windows overlap.
///
/// `xs` must be increasing. Results are sorted by center.
pub fn fit_curve(xs: &[f64], ys: &[f64], guesses: &[CurveGuess], opts: &FitOptions) -> Result<Vec<CurvePeak>> {
    if xs.len() != ys.len() {
        return Err(Error::Domain("x and y lengths differ".into()));
    }
    if guesses.is_empty() {
        return Err(Error::Init("no initial guesses".into()));
    }
    if let Some(g) = guesses.iter().find(|g| !(g.fwhm > 0.0 && g.center.is_finite())) {
        return Err(Error::Init(format!("invalid initial guess {g:?}")));
    }

    let mut order: Vec<usize> = (0..guesses.len()).collect();
    order.sort_by(|&a, &b| guesses[a].center.total_cmp(&guesses[b].center));
    let mut groups: Vec<(f64, f64, Vec<usize>)> = Vec::new();
    for idx in order {
        let g = guesses[idx];
        let lo = g.center - opts.window_fwhm * g.fwhm;
        let hi = g.center + opts.window_fwhm * g.fwhm;
        match groups.last_mut() {
            Some(last) if lo <= last.1 => {
                last.1 = last.1.max(hi);
                last.2.push(idx);
            }
            _ => groups.push((lo, hi, vec![idx])),
        }
    }

    let mut out = Vec::with_capacity(guesses.len());
    for (lo, hi, members) in groups {
        let idx: Vec<usize> = (0..xs.len()).filter(|&i| xs[i] >= lo && xs[i] <= hi).collect();
        let n_peaks = members.len();
        if idx.len() < 5 * n_peaks || idx.len() <= PER_PEAK * n_peaks + 1 {
            return Err(Error::Init(format!(
                "window [{lo}, {hi}] holds {} samples, too few for {n_peaks} peak(s)",
                idx.len()
            )));
        }
        let wx: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
        let wy: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
        let weights: Vec<f64> = match opts.weighting {
            Weighting::Auto if wy.iter().all(|&y| y >= POISSON_WEIGHT_MIN_COUNTS) => {
                wy.iter().map(|y| 1.0 / y).collect()
            }
            _ => vec![1.0; wy.len()],
        };

        let background = if opts.fit_background { percentile(&wy, 0.1) } else { 0.0 };
        let mut p0 = Vec::with_capacity(PER_PEAK * n_peaks + 1);
        for &m in &members {
            let g = guesses[m];
            let amp = g.amplitude.unwrap_or_else(|| {
                let nearest = nearest_index(&wx, g.center);
                wy[nearest] - background
            });
            p0.extend([amp, g.center, g.fwhm / FWHM_PER_SIGMA]);
        }
        if opts.fit_background {
            p0.push(background);
        }

        let fit = levenberg_marquardt(&wx, &wy, &weights, &p0, opts.fit_background, opts.max_iterations);
        let rms = (wx
            .iter()
            .zip(&wy)
            .map(|(&x, &y)| (y - gaussian_mixture(x, &fit.params, opts.fit_background)).powi(2))
            .sum::<f64>()
            / wx.len() as f64)
            .sqrt();
        let bg = if opts.fit_background { fit.params[PER_PEAK * n_peaks] } else { 0.0 };
        let sd = |i: usize| {
            fit.covariance
                .as_ref()
                .map(|c| c[(i, i)].max(0.0).sqrt())
                .unwrap_or(f64::NAN)
        };
        for k in 0..n_peaks {
            out.push(CurvePeak {
                amplitude: fit.params[3 * k],
                center: fit.params[3 * k + 1],
                sigma: fit.params[3 * k + 2],
                amplitude_stderr: sd(3 * k),
                center_stderr: sd(3 * k + 1),
                sigma_stderr: sd(3 * k + 2),
                background: bg,
                converged: fit.converged,
                residual_rms: rms,
                window: (lo, hi),
            });
        }
    }
    out.sort_by(|a, b| a.center.total_cmp(&b.center));
    Ok(out)
}

fn nearest_index(xs: &[f64], x: f64) -> usize {
    xs.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

pub(crate) fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Seeds `n_peaks` Gaussians from the largest local maxima of a 3-bin
/// moving average. Maxima inside the half-maximum extent of a stronger
/// accepted peak are skipped.
pub fn detect_peaks(xs: &[f64], ys: &[f64], n_peaks: usize) -> Result<Vec<CurveGuess>> {
    let n = ys.len();
    if n < 3 {
        return Err(Error::Init("need at least 3 samples to locate maxima".into()));
    }
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            ys[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let background = percentile(&smooth, 0.1);
    let mut candidates: Vec<usize> = (1..n - 1)
        .filter(|&i| smooth[i] > smooth[i - 1] && smooth[i] >= smooth[i + 1] && smooth[i] > background)
        .collect();
    candidates.sort_by(|&a, &b| smooth[b].total_cmp(&smooth[a]).then(a.cmp(&b)));

    let spacing = (xs[n - 1] - xs[0]) / (n - 1) as f64;
    let mut accepted: Vec<(CurveGuess, f64, f64)> = Vec::new();
    for i in candidates {
        if accepted.len() == n_peaks {
            break;
        }
        if accepted.iter().any(|(_, l, r)| xs[i] >= *l && xs[i] <= *r) {
            continue;
        }
        let half = background + 0.5 * (smooth[i] - background);
        let mut l = i;
        while l > 0 && smooth[l] > half {
            l -= 1;
        }
        let mut r = i;
        while r < n - 1 && smooth[r] > half {
            r += 1;
        }
        let cross = |a: usize, b: usize| {
            // linear interpolation of the half-maximum crossing between a and b
            let (ya, yb) = (smooth[a], smooth[b]);
            if (yb - ya).abs() < f64::MIN_POSITIVE {
                xs[a]
            } else {
                xs[a] + (half - ya) / (yb - ya) * (xs[b] - xs[a])
            }
        };
        let left = if l < i { cross(l, l + 1) } else { xs[i] };
        let right = if r > i { cross(r, r - 1) } else { xs[i] };
        let fwhm = (right - left).max(2.0 * spacing);
        accepted.push((
            CurveGuess {
                center: xs[i],
                fwhm,
                amplitude: Some(smooth[i] - background),
            },
            left,
            right,
        ));
    }
    if accepted.len() < n_peaks {
        return Err(Error::Init(format!(
            "found {} local maxima, need {n_peaks}",
            accepted.len()
        )));
    }
    Ok(accepted.into_iter().map(|(g, _, _)| g).collect())
}

/// Result for one fitted spectral line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakFitResult {
    pub center_ev: f64,
    pub center_stderr_uev: f64,
    pub fwhm_uev: f64,
    pub fwhm_stderr_uev: f64,
    /// Peak height in counts above background.
    pub amplitude: f64,
    pub background: f64,
    pub converged: bool,
    pub residual_rms: f64,
}

/// Initial guess for a spectral line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialGuess {
    pub center_ev: f64,
    pub fwhm_uev: f64,
    pub amplitude: Option<f64>,
}

pub fn fit_gaussians(
    spectrum: &Spectrum,
    n_peaks: usize,
    init: Option<&[InitialGuess]>,
) -> Result<Vec<PeakFitResult>> {
    fit_gaussians_with(spectrum, n_peaks, init, &FitOptions::default())
}

pub fn fit_gaussians_with(
    spectrum: &Spectrum,
    n_peaks: usize,
    init: Option<&[InitialGuess]>,
    opts: &FitOptions,
) -> Result<Vec<PeakFitResult>> {
    if n_peaks == 0 {
        return Err(Error::Domain("n_peaks must be positive".into()));
    }
    let (first, last) = spectrum
        .span_ev()
        .ok_or_else(|| Error::Domain("empty spectrum".into()))?;
    // fit in μeV relative to the middle of the span to keep the problem well scaled
    let reference = 0.5 * (first + last);
    let xs: Vec<f64> = spectrum.energies_ev().iter().map(|e| ev_to_uev(e - reference)).collect();
    let ys = spectrum.counts();

    let guesses = match init {
        Some(init) => {
            if init.len() != n_peaks {
                return Err(Error::Init(format!(
                    "{} initial guesses for {n_peaks} peaks",
                    init.len()
                )));
            }
            init.iter()
                .map(|g| CurveGuess {
                    center: ev_to_uev(g.center_ev - reference),
                    fwhm: g.fwhm_uev,
                    amplitude: g.amplitude,
                })
                .collect()
        }
        None => detect_peaks(&xs, ys, n_peaks)?,
    };

    let peaks = fit_curve(&xs, ys, &guesses, opts)?;
    Ok(peaks
        .into_iter()
        .map(|p| {
            let within = p.center >= xs[0] && p.center <= xs[xs.len() - 1];
            PeakFitResult {
                center_ev: reference + p.center * 1e-6,
                center_stderr_uev: p.center_stderr,
                fwhm_uev: p.fwhm(),
                fwhm_stderr_uev: FWHM_PER_SIGMA * p.sigma_stderr,
                amplitude: p.amplitude,
                background: p.background,
                converged: p.converged && within,
                residual_rms: p.residual_rms,
            }
        })
        .collect())
}

/// Fixed-width histogram; bin `k` covers `[start + k·width, start + (k+1)·width)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub start: f64,
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bins aligned to multiples of `bin_width`, covering every value.
    pub fn aligned(values: &[f64], bin_width: f64) -> Result<Self> {
        if !(bin_width.is_finite() && bin_width > 0.0) {
            return Err(Error::Domain("bin width must be > 0".into()));
        }
        if values.is_empty() {
            return Err(Error::Domain("no values to histogram".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("histogram values must be finite".into()));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let first = (min / bin_width).floor() as i64;
        let last = (max / bin_width).floor() as i64;
        let mut counts = vec![0usize; (last - first + 1) as usize];
        for v in values {
            let k = ((v / bin_width).floor() as i64 - first) as usize;
            counts[k] += 1;
        }
        Ok(Self {
            start: first as f64 * bin_width,
            bin_width,
            counts,
        })
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.counts.len())
            .map(|k| self.start + (k as f64 + 0.5) * self.bin_width)
            .collect()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinewidthSummary {
    pub n: usize,
    pub min_uev: f64,
    pub max_uev: f64,
    pub mean_uev: f64,
    pub histogram: Histogram,
}

pub const DEFAULT_LINEWIDTH_BIN_UEV: f64 = 50.0;

/// FWHM statistics over converged fits.
pub fn linewidth_statistics(fits: &[PeakFitResult], bin_width_uev: f64) -> Result<LinewidthSummary> {
    let widths: Vec<f64> = fits.iter().filter(|f| f.converged).map(|f| f.fwhm_uev).collect();
    if widths.is_empty() {
        return Err(Error::Domain("no converged fits".into()));
    }
    let n = widths.len();
    Ok(LinewidthSummary {
        n,
        min_uev: widths.iter().copied().fold(f64::INFINITY, f64::min),
        max_uev: widths.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_uev: widths.iter().sum::<f64>() / n as f64,
        histogram: Histogram::aligned(&widths, bin_width_uev)?,
    })
}
