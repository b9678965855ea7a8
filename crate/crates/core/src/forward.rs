//! Synthetic polarimeter measurements of an exciton doublet.
//!
//! Each doublet component is a fully polarized Stokes vector. It is
//! attenuated by the polarimeter at every waveplate reading and drawn as a
//! Gaussian line on the detector grid. Shot and read noise are optional.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    normalize_waveplate_angle, uev_to_ev, AngleSeries, AngleSpectrum, RngSeed, Spectrum,
    StokesVector, FWHM_PER_SIGMA,
};
use crate::error::{Error, Result};
use crate::mueller::{mueller_hwp, mueller_lp, mueller_qwp, mueller_retarder, MuellerMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum Species {
    X,
    XX,
    #[default]
    #[serde(rename = "unknown")]
    Unknown,
}

impl Species {
    pub fn as_str(&self) -> &'static str {
        match self {
            Species::X => "X",
            Species::XX => "XX",
            Species::Unknown => "unknown",
        }
    }
}

impl std::str::FromStr for Species {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "X" | "x" => Ok(Species::X),
            "XX" | "xx" => Ok(Species::XX),
            "unknown" | "" => Ok(Species::Unknown),
            other => Err(Error::parse("species", format!("unknown species {other:?}"))),
        }
    }
}

/// Ground truth for one exciton doublet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterModel {
    pub mean_energy_ev: f64,
    /// Fine-structure splitting S.
    pub fss_uev: f64,
    /// Polarization direction of the high-energy component, measured from
    /// the reference axis.
    pub dipole_angle_deg: f64,
    /// Intrinsic FWHM, before the instrument response.
    pub linewidth_fwhm_uev: f64,
    /// Integrated counts of the whole doublet with full transmission.
    pub peak_counts: f64,
    #[serde(default)]
    pub species: Species,
    /// Circular Stokes fraction V/I of the high-energy component; the
    /// low-energy component carries the opposite sign.
    #[serde(default)]
    pub circular_fraction: f64,
}

impl EmitterModel {
    pub fn new(
        mean_energy_ev: f64,
        fss_uev: f64,
        dipole_angle_deg: f64,
        linewidth_fwhm_uev: f64,
        peak_counts: f64,
    ) -> Result<Self> {
        let e = Self {
            mean_energy_ev,
            fss_uev,
            dipole_angle_deg,
            linewidth_fwhm_uev,
            peak_counts,
            species: Species::Unknown,
            circular_fraction: 0.0,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn with_species(mut self, species: Species) -> Self {
        self.species = species;
        self
    }

    pub fn with_circular_fraction(mut self, v: f64) -> Self {
        self.circular_fraction = v;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.mean_energy_ev,
            self.fss_uev,
            self.dipole_angle_deg,
            self.linewidth_fwhm_uev,
            self.peak_counts,
            self.circular_fraction,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Config("emitter parameters must be finite".into()));
        }
        if self.mean_energy_ev <= 0.0 {
            return Err(Error::Config("mean_energy_ev must be > 0".into()));
        }
        if self.fss_uev < 0.0 {
            return Err(Error::Config("fss_uev must be >= 0".into()));
        }
        if self.linewidth_fwhm_uev <= 0.0 {
            return Err(Error::Config("linewidth_fwhm_uev must be > 0".into()));
        }
        if self.peak_counts <= 0.0 {
            return Err(Error::Config("peak_counts must be > 0".into()));
        }
        if !(-1.0..=1.0).contains(&self.circular_fraction) {
            return Err(Error::Config("circular_fraction must lie in [-1, 1]".into()));
        }
        Ok(())
    }

    /// Energies of the (high, low) doublet components in eV.
    pub fn component_energies_ev(&self) -> (f64, f64) {
        let half = uev_to_ev(0.5 * self.fss_uev);
        (self.mean_energy_ev + half, self.mean_energy_ev - half)
    }
}

/// Normalized Stokes vectors of the (high, low) energy components.
pub fn doublet_stokes(e: &EmitterModel) -> (StokesVector, StokesVector) {
    let high = StokesVector::elliptical(1.0, e.dipole_angle_deg, e.circular_fraction)
        .expect("validated emitter has a physical polarization");
    (high, high.orthogonal())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolarimeterKind {
    #[serde(rename = "qwp_lp")]
    QwpLp,
    #[serde(rename = "hwp_lp")]
    HwpLp,
}

/// Rotating waveplate in front of a fixed linear polarizer.
///
/// Waveplate angles handed to the polarimeter are mechanical readings. For
/// `HwpLp` the HWP fast axis sits at `reading − reference_offset + lp_axis/2`,
/// so light along the reference axis is maximally transmitted at
/// `reading = reference_offset` whatever the polarizer orientation. For
/// `QwpLp` the plate and polarizer rotate together: the QWP fast axis is
/// parallel to the polarizer at `reading = reference_offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarimeterConfig {
    pub kind: PolarimeterKind,
    #[serde(default)]
    pub lp_axis_deg: f64,
    #[serde(default)]
    pub reference_offset_deg: f64,
}

impl PolarimeterConfig {
    pub fn qwp() -> Self {
        Self {
            kind: PolarimeterKind::QwpLp,
            lp_axis_deg: 0.0,
            reference_offset_deg: 0.0,
        }
    }

    /// HWP polarimeter with the reference axis transmitted at a reading of 82°.
    pub fn hwp() -> Self {
        Self {
            kind: PolarimeterKind::HwpLp,
            lp_axis_deg: 0.0,
            reference_offset_deg: 82.0,
        }
    }

    pub fn with_reference_offset(mut self, deg: f64) -> Self {
        self.reference_offset_deg = deg;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lp_axis_deg.is_finite() && self.reference_offset_deg.is_finite()) {
            return Err(Error::Config("polarimeter angles must be finite".into()));
        }
        if !(0.0..360.0).contains(&self.reference_offset_deg) {
            return Err(Error::Config(format!(
                "reference_offset_deg must lie in [0, 360), got {}",
                self.reference_offset_deg
            )));
        }
        Ok(())
    }

    /// Mueller matrix of waveplate followed by polarizer at a given reading.
    pub fn mueller(&self, reading_deg: f64) -> MuellerMatrix {
        let rel = reading_deg - self.reference_offset_deg;
        let plate = match self.kind {
            PolarimeterKind::HwpLp => mueller_hwp(rel + 0.5 * self.lp_axis_deg),
            PolarimeterKind::QwpLp => mueller_qwp(rel + self.lp_axis_deg),
        };
        plate.then(&mueller_lp(self.lp_axis_deg))
    }

    pub fn transmission(&self, s: &StokesVector, reading_deg: f64) -> f64 {
        self.mueller(reading_deg).apply(s).i
    }
}

/// Spectrometer and camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorModel {
    /// Gaussian instrument response FWHM.
    pub irf_fwhm_uev: f64,
    pub pixel_pitch_uev: f64,
    pub n_pixels: usize,
    pub read_noise_rms: f64,
    pub shot_noise: bool,
    /// Constant electronic offset added to every pixel.
    pub bias_counts: f64,
    /// Energy of the grid center; `None` centers the grid on the emitter.
    pub center_energy_ev: Option<f64>,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            irf_fwhm_uev: 89.0,
            pixel_pitch_uev: 25.0,
            n_pixels: 512,
            read_noise_rms: 10.0,
            shot_noise: true,
            bias_counts: 100.0,
            center_energy_ev: None,
        }
    }
}

impl DetectorModel {
    /// Same grid and response without any noise or offset.
    pub fn noiseless(&self) -> Self {
        Self {
            read_noise_rms: 0.0,
            shot_noise: false,
            bias_counts: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.irf_fwhm_uev.is_finite() && self.irf_fwhm_uev > 0.0) {
            return Err(Error::Config("irf_fwhm_uev must be > 0".into()));
        }
        if !(self.pixel_pitch_uev.is_finite() && self.pixel_pitch_uev > 0.0) {
            return Err(Error::Config("pixel_pitch_uev must be > 0".into()));
        }
        if self.n_pixels < 16 {
            return Err(Error::Config(format!(
                "n_pixels must be >= 16, got {}",
                self.n_pixels
            )));
        }
        if !(self.read_noise_rms.is_finite() && self.read_noise_rms >= 0.0) {
            return Err(Error::Config("read_noise_rms must be >= 0".into()));
        }
        if !(self.bias_counts.is_finite() && self.bias_counts >= 0.0) {
            return Err(Error::Config("bias_counts must be >= 0".into()));
        }
        Ok(())
    }

    /// Pixel offsets from the grid center in μeV.
    fn offsets_uev(&self) -> Vec<f64> {
        let mid = 0.5 * (self.n_pixels as f64 - 1.0);
        (0..self.n_pixels)
            .map(|i| (i as f64 - mid) * self.pixel_pitch_uev)
            .collect()
    }

    /// Total line FWHM for a given intrinsic width.
    pub fn observed_fwhm_uev(&self, intrinsic_fwhm_uev: f64) -> f64 {
        intrinsic_fwhm_uev.hypot(self.irf_fwhm_uev)
    }
}

/// A Gaussian line on the detector: integrated counts `area`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralLine {
    pub center_ev: f64,
    pub fwhm_uev: f64,
    pub area: f64,
}

/// Draws `lines` on the detector grid centered at `grid_center_ev`.
///
/// `fwhm_uev` is the total observed width; the instrument response is not
/// added again here. With `rng = None` the output is the noiseless mean.
pub fn render_spectrum<R: Rng + ?Sized>(
    lines: &[SpectralLine],
    detector: &DetectorModel,
    grid_center_ev: f64,
    rng: Option<&mut R>,
) -> Result<Spectrum> {
    detector.validate()?;
    let offsets = detector.offsets_uev();
    let (lo, hi) = (offsets[0], offsets[offsets.len() - 1]);
    let mut mean = vec![0.0; offsets.len()];
    for line in lines {
        if !(line.fwhm_uev > 0.0 && line.area >= 0.0 && line.center_ev.is_finite()) {
            return Err(Error::Config("invalid spectral line".into()));
        }
        let rel = (line.center_ev - grid_center_ev) * 1e6;
        if rel - 2.0 * line.fwhm_uev < lo || rel + 2.0 * line.fwhm_uev > hi {
            return Err(Error::Config(format!(
                "line at {:.6} eV (FWHM {:.1} μeV) lies outside the detector span",
                line.center_ev, line.fwhm_uev
            )));
        }
        if line.area == 0.0 {
            continue;
        }
        let sigma = line.fwhm_uev / FWHM_PER_SIGMA;
        let height = line.area * detector.pixel_pitch_uev / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        for (m, x) in mean.iter_mut().zip(&offsets) {
            let z = (x - rel) / sigma;
            *m += height * (-0.5 * z * z).exp();
        }
    }

    let counts = match rng {
        None => mean.iter().map(|m| m + detector.bias_counts).collect(),
        Some(rng) => mean
            .iter()
            .map(|&m| {
                let mut c = if detector.shot_noise && m > 0.0 {
                    Poisson::new(m)
                        .map_err(|e| Error::Domain(format!("poisson rate {m}: {e}")))?
                        .sample(rng)
                } else {
                    m
                };
                c += detector.bias_counts;
                if detector.read_noise_rms > 0.0 {
                    let z: f64 = StandardNormal.sample(rng);
                    c += detector.read_noise_rms * z;
                }
                Ok(c.max(0.0))
            })
            .collect::<Result<Vec<f64>>>()?,
    };
    let energies = offsets.iter().map(|x| grid_center_ev + x * 1e-6).collect();
    Spectrum::new(energies, counts)
}

/// Fixed retarder placed in the beam before the polarimeter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retarder {
    pub fast_axis_deg: f64,
    pub retardance_deg: f64,
}

/// Intensity modulation common to both doublet components, e.g. beam steering
/// by a wobbling plate: factor `1 + depth·cos(harmonic·reading + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityModulation {
    pub depth: f64,
    pub harmonic: u32,
    pub phase_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub pre_retarder: Option<Retarder>,
    pub intensity_modulation: Option<IntensityModulation>,
}

/// `n` readings starting at `start_deg` with spacing `span_deg / n`.
pub fn uniform_angles(start_deg: f64, span_deg: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| start_deg + span_deg * k as f64 / n as f64)
        .collect()
}

pub fn simulate_angle_series(
    emitter: &EmitterModel,
    polarimeter: &PolarimeterConfig,
    detector: &DetectorModel,
    angles_deg: &[f64],
    seed: RngSeed,
) -> Result<AngleSeries> {
    simulate_angle_series_with(
        emitter,
        polarimeter,
        detector,
        angles_deg,
        seed,
        &SimulationOptions::default(),
    )
}

pub fn simulate_angle_series_with(
    emitter: &EmitterModel,
    polarimeter: &PolarimeterConfig,
    detector: &DetectorModel,
    angles_deg: &[f64],
    seed: RngSeed,
    options: &SimulationOptions,
) -> Result<AngleSeries> {
    emitter.validate()?;
    polarimeter.validate()?;
    detector.validate()?;
    if angles_deg.len() < 4 {
        return Err(Error::Config(format!(
            "need at least 4 waveplate angles, got {}",
            angles_deg.len()
        )));
    }
    if let Some(a) = angles_deg.iter().find(|a| !a.is_finite()) {
        return Err(Error::Config(format!("waveplate angle {a} is not finite")));
    }

    let (mut high, mut low) = doublet_stokes(emitter);
    if let Some(r) = options.pre_retarder {
        let m = mueller_retarder(r.fast_axis_deg, r.retardance_deg);
        high = m.apply(&high);
        low = m.apply(&low);
    }
    let (e_high, e_low) = emitter.component_energies_ev();
    let fwhm = detector.observed_fwhm_uev(emitter.linewidth_fwhm_uev);
    let center = detector.center_energy_ev.unwrap_or(emitter.mean_energy_ev);
    let noisy = detector.shot_noise || detector.read_noise_rms > 0.0;
    let mut rng = seed.rng();

    let mut entries = Vec::with_capacity(angles_deg.len());
    for &reading in angles_deg {
        let mut scale = emitter.peak_counts;
        if let Some(m) = options.intensity_modulation {
            let arg = (m.harmonic as f64 * reading + m.phase_deg).to_radians();
            scale *= 1.0 + m.depth * arg.cos();
        }
        let lines = [
            SpectralLine {
                center_ev: e_high,
                fwhm_uev: fwhm,
                area: scale * polarimeter.transmission(&high, reading).max(0.0),
            },
            SpectralLine {
                center_ev: e_low,
                fwhm_uev: fwhm,
                area: scale * polarimeter.transmission(&low, reading).max(0.0),
            },
        ];
        let spectrum = if noisy {
            render_spectrum(&lines, detector, center, Some(&mut rng))?
        } else {
            render_spectrum::<rand_chacha::ChaCha8Rng>(&lines, detector, center, None)?
        };
        entries.push(AngleSpectrum {
            angle_deg: normalize_waveplate_angle(reading)?,
            spectrum,
        });
    }
    Ok(AngleSeries::new(entries))
}
