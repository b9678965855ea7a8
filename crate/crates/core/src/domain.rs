//! Shared value types: energies, angles, Stokes vectors, spectra and seeds.
//!
//! Absolute transition energies are carried in eV, splittings and linewidths
//! in μeV. Angles are degrees at every public boundary.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UEV_PER_EV: f64 = 1e6;

/// Planck constant times c in eV·nm, for E[eV] = HC_EV_NM / λ[nm].
pub const HC_EV_NM: f64 = 1239.841984;

/// Full width at half maximum of a Gaussian in units of its σ.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

#[inline]
pub fn ev_to_uev(ev: f64) -> f64 {
    ev * UEV_PER_EV
}

#[inline]
pub fn uev_to_ev(uev: f64) -> f64 {
    uev / UEV_PER_EV
}

pub fn wavelength_nm_to_ev(lambda_nm: f64) -> f64 {
    HC_EV_NM / lambda_nm
}

pub fn ev_to_wavelength_nm(energy_ev: f64) -> f64 {
    HC_EV_NM / energy_ev
}

/// Maps a polarization direction onto [0°, 180°).
pub fn normalize_polarization_angle(deg: f64) -> Result<f64> {
    wrap_deg(deg, 180.0)
}

/// Maps a waveplate reading onto [0°, 360°).
pub fn normalize_waveplate_angle(deg: f64) -> Result<f64> {
    wrap_deg(deg, 360.0)
}

fn wrap_deg(deg: f64, period: f64) -> Result<f64> {
    if !deg.is_finite() {
        return Err(Error::Domain(format!("angle must be finite, got {deg}")));
    }
    let r = deg.rem_euclid(period);
    // rem_euclid can round up to exactly `period` for tiny negative inputs
    Ok(if r >= period { 0.0 } else { r })
}

/// Signed difference `a - b` folded into [-90°, 90°) for mod-180 directions.
pub fn polarization_difference(a: f64, b: f64) -> f64 {
    (a - b + 90.0).rem_euclid(180.0) - 90.0
}

/// (imax − imin)/(imax + imin).
pub fn degree_of_linear_polarization(imax: f64, imin: f64) -> Result<f64> {
    if !(imax.is_finite() && imin.is_finite()) {
        return Err(Error::Domain("intensities must be finite".into()));
    }
    if imin < 0.0 || imax < imin {
        return Err(Error::Domain(format!(
            "need imax >= imin >= 0, got imax={imax}, imin={imin}"
        )));
    }
    if imax == 0.0 {
        return Err(Error::Degenerate("imax = imin = 0".into()));
    }
    Ok((imax - imin) / (imax + imin))
}

/// Stokes vector (I, Q, U, V).
///
/// Q is horizontal minus vertical, U is +45° minus −45°, V is right minus left
/// circular with right-handed light written as (H − iV)/√2 in Jones form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StokesVector {
    pub i: f64,
    pub q: f64,
    pub u: f64,
    pub v: f64,
}

const PHYSICALITY_TOL: f64 = 1e-12;

impl StokesVector {
    /// Checked constructor enforcing `i >= 0` and `q² + u² + v² <= i²`.
    pub fn new(i: f64, q: f64, u: f64, v: f64) -> Result<Self> {
        let s = Self { i, q, u, v };
        s.validate()?;
        Ok(s)
    }

    pub const fn new_unchecked(i: f64, q: f64, u: f64, v: f64) -> Self {
        Self { i, q, u, v }
    }

    pub fn unpolarized(i: f64) -> Result<Self> {
        Self::new(i, 0.0, 0.0, 0.0)
    }

    /// Fully linearly polarized light along `angle_deg`.
    pub fn linear(intensity: f64, angle_deg: f64) -> Result<Self> {
        let two = (2.0 * angle_deg).to_radians();
        Self::new(intensity, intensity * two.cos(), intensity * two.sin(), 0.0)
    }

    /// Fully polarized, elliptical: linear direction `angle_deg`, circular
    /// fraction `v_fraction` in [-1, 1] of the total intensity.
    pub fn elliptical(intensity: f64, angle_deg: f64, v_fraction: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&v_fraction) {
            return Err(Error::Domain(format!(
                "circular fraction must lie in [-1, 1], got {v_fraction}"
            )));
        }
        let lin = (1.0 - v_fraction * v_fraction).max(0.0).sqrt();
        let two = (2.0 * angle_deg).to_radians();
        Self::new(
            intensity,
            intensity * lin * two.cos(),
            intensity * lin * two.sin(),
            intensity * v_fraction,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let comps = [self.i, self.q, self.u, self.v];
        if comps.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("Stokes components must be finite".into()));
        }
        if self.i < 0.0 {
            return Err(Error::Domain(format!("Stokes I must be >= 0, got {}", self.i)));
        }
        let p = self.polarized_intensity();
        if p > self.i * (1.0 + PHYSICALITY_TOL) + f64::MIN_POSITIVE {
            return Err(Error::Domain(format!(
                "unphysical Stokes vector: |(Q,U,V)| = {p} exceeds I = {}",
                self.i
            )));
        }
        Ok(())
    }

    pub fn is_physical(&self) -> bool {
        self.validate().is_ok()
    }

    /// Length of the polarized part, sqrt(Q² + U² + V²).
    pub fn polarized_intensity(&self) -> f64 {
        (self.q * self.q + self.u * self.u + self.v * self.v).sqrt()
    }

    pub fn degree_of_polarization(&self) -> f64 {
        if self.i == 0.0 {
            0.0
        } else {
            self.polarized_intensity() / self.i
        }
    }

    /// The orthogonal state, {Q, U, V} → −{Q, U, V}.
    pub fn orthogonal(&self) -> Self {
        Self::new_unchecked(self.i, -self.q, -self.u, -self.v)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new_unchecked(self.i * c, self.q * c, self.u * c, self.v * c)
    }

    /// Linear polarization direction in [0°, 180°); zero for purely circular light.
    pub fn linear_angle_deg(&self) -> f64 {
        let a = 0.5 * self.u.atan2(self.q).to_degrees();
        normalize_polarization_angle(a).unwrap_or(0.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.i, self.q, self.u, self.v]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new_unchecked(a[0], a[1], a[2], a[3])
    }
}

/// A detector readout: strictly increasing energies (eV) and counts per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    energies_ev: Vec<f64>,
    counts: Vec<f64>,
}

impl Spectrum {
    pub fn new(energies_ev: Vec<f64>, counts: Vec<f64>) -> Result<Self> {
        if energies_ev.len() != counts.len() {
            return Err(Error::Domain(format!(
                "energy axis has {} bins but counts has {}",
                energies_ev.len(),
                counts.len()
            )));
        }
        if energies_ev.iter().any(|e| !e.is_finite()) {
            return Err(Error::Domain("energies must be finite".into()));
        }
        if energies_ev.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("energies must be strictly increasing".into()));
        }
        if let Some(c) = counts.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::Domain(format!("counts must be finite and >= 0, got {c}")));
        }
        Ok(Self { energies_ev, counts })
    }

    pub fn energies_ev(&self) -> &[f64] {
        &self.energies_ev
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total_counts(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Energy span (first, last) in eV.
    pub fn span_ev(&self) -> Option<(f64, f64)> {
        Some((*self.energies_ev.first()?, *self.energies_ev.last()?))
    }
}

/// One waveplate setting of a polarimeter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSpectrum {
    pub angle_deg: f64,
    pub spectrum: Spectrum,
}

/// An ordered polarimeter sweep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AngleSeries {
    pub entries: Vec<AngleSpectrum>,
}

impl AngleSeries {
    pub fn new(entries: Vec<AngleSpectrum>) -> Self {
        Self { entries }
    }

    pub fn angles_deg(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.angle_deg).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Root seed for every stochastic operation.
///
/// Streams are derived with ChaCha's native stream counter, so each
/// `(seed, stream)` pair is an independent, reproducible generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(&self) -> ChaCha8Rng {
        self.stream(0)
    }

    pub fn stream(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(stream);
        rng
    }

    /// Child seed for nested splitting, e.g. per-trial then per-series.
    pub fn derive(&self, stream: u64) -> RngSeed {
        use rand::RngCore;
        RngSeed(self.stream(stream).next_u64())
    }
}
