//! File formats: angle-series text files, manifests, result tables and
//! multilayer stack definitions. Writes are atomic (temp file + rename).

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cavity::{IndexTable, Layer, Material, Stack};
use crate::domain::{AngleSeries, AngleSpectrum, Spectrum};
use crate::ensemble::{BatchItem, EnsembleRecord, RecordFlag};
use crate::error::{Error, Result};
use crate::forward::{PolarimeterConfig, Species};
use crate::fss::FssMethod;

/// Fixed-point decimal with six significant digits.
pub fn fmt6(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let decimals = (5 - x.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // -0.00000 and friends
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        return "0".into();
    }
    s
}

pub fn fmt6_opt(x: Option<f64>) -> String {
    x.map(fmt6).unwrap_or_default()
}

/// Writes `bytes` to `path` via a sibling temp file and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

// ---- angle series -------------------------------------------------------

const ANGLE_TAG: &str = "# angle_deg=";
const SERIES_HEADER: &str = "energy_eV,counts";

/// Numbers are written in shortest round-trip form so a reloaded series is
/// bit-identical.
pub fn series_to_string(series: &AngleSeries) -> String {
    let mut out = String::new();
    for e in &series.entries {
        out.push_str(&format!("{ANGLE_TAG}{}\n{SERIES_HEADER}\n", e.angle_deg));
        for (x, c) in e.spectrum.energies_ev().iter().zip(e.spectrum.counts()) {
            out.push_str(&format!("{x},{c}\n"));
        }
    }
    out
}

pub fn parse_series(text: &str, context: &str) -> Result<AngleSeries> {
    let mut entries = Vec::new();
    let mut current: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let finish = |cur: Option<(f64, Vec<f64>, Vec<f64>)>, entries: &mut Vec<AngleSpectrum>| -> Result<()> {
        if let Some((angle_deg, e, c)) = cur {
            let spectrum = Spectrum::new(e, c)
                .map_err(|err| Error::parse(context, format!("block at angle {angle_deg}: {err}")))?;
            entries.push(AngleSpectrum { angle_deg, spectrum });
        }
        Ok(())
    };
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let at = |msg: String| Error::parse(format!("{context}:{}", lineno + 1), msg);
        if line.is_empty() || line == SERIES_HEADER {
            continue;
        }
        if let Some(v) = line.strip_prefix(ANGLE_TAG) {
            finish(current.take(), &mut entries)?;
            let angle: f64 = v.trim().parse().map_err(|_| at(format!("bad angle {v:?}")))?;
            if !angle.is_finite() {
                return Err(at("angle must be finite".into()));
            }
            current = Some((angle, Vec::new(), Vec::new()));
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let Some((_, e, c)) = current.as_mut() else {
            return Err(at("data before the first angle block".into()));
        };
        let mut it = line.split(',');
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(at(format!("expected two columns, got {line:?}")));
        };
        e.push(a.trim().parse().map_err(|_| at(format!("bad energy {a:?}")))?);
        c.push(b.trim().parse().map_err(|_| at(format!("bad counts {b:?}")))?);
    }
    finish(current, &mut entries)?;
    if entries.is_empty() {
        return Err(Error::parse(context, "no angle blocks"));
    }
    Ok(AngleSeries::new(entries))
}

pub fn write_series(path: &Path, series: &AngleSeries) -> Result<()> {
    atomic_write(path, series_to_string(series).as_bytes())
}

pub fn read_series(path: &Path) -> Result<AngleSeries> {
    let text = std::fs::read_to_string(path)?;
    parse_series(&text, &path.display().to_string())
}

// ---- manifest -----------------------------------------------------------

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub emitter_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dot_id: Option<String>,
    #[serde(default)]
    pub species: Species,
    /// Relative paths resolve against the manifest's directory.
    pub series_path: String,
    #[serde(rename = "linewidth_hint_ueV", default, skip_serializing_if = "Option::is_none")]
    pub linewidth_hint_uev: Option<f64>,
    pub polarimeter: PolarimeterConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if e.emitter_id.is_empty() {
                return Err(Error::Config("entries[].emitter_id must not be empty".into()));
            }
            if !seen.insert(e.emitter_id.as_str()) {
                return Err(Error::Config(format!("duplicate emitter_id {:?}", e.emitter_id)));
            }
            e.polarimeter
                .validate()
                .map_err(|err| Error::Config(format!("entries[{}].polarimeter: {err}", e.emitter_id)))?;
            if let Some(w) = e.linewidth_hint_uev {
                if !(w.is_finite() && w > 0.0) {
                    return Err(Error::Config(format!("entries[{}].linewidth_hint_ueV must be > 0", e.emitter_id)));
                }
            }
        }
        Ok(())
    }

    /// Loads every series. Unreadable files become per-item errors.
    pub fn batch_items(&self, base_dir: &Path) -> Vec<BatchItem> {
        self.entries
            .iter()
            .map(|e| BatchItem {
                emitter_id: e.emitter_id.clone(),
                dot_id: e.dot_id.clone(),
                species: e.species,
                polarimeter: e.polarimeter,
                linewidth_hint_uev: e.linewidth_hint_uev,
                series: read_series(&resolve(base_dir, &e.series_path)).map_err(|err| err.to_string()),
            })
            .collect()
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Reads and validates a manifest; returns it with its base directory.
pub fn read_manifest(path: &Path) -> Result<(Manifest, PathBuf)> {
    let text = std::fs::read_to_string(path)?;
    let m: Manifest = serde_json::from_str(&text)?;
    m.validate()?;
    Ok((m, base_dir(path)))
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<()> {
    let mut s = serde_json::to_string_pretty(m)?;
    s.push('\n');
    atomic_write(path, s.as_bytes())
}

// ---- results table ------------------------------------------------------

pub const RESULTS_HEADER: [&str; 9] = [
    "emitter_id",
    "method",
    "fss_ueV",
    "fss_stderr_ueV",
    "dphi_deg",
    "dphi_defined",
    "mean_energy_eV",
    "linewidth_ueV",
    "flags",
];

/// One line of a results table. Numeric fields are empty for failed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub emitter_id: String,
    pub method: FssMethod,
    pub fss_uev: Option<f64>,
    pub fss_stderr_uev: Option<f64>,
    pub dphi_deg: Option<f64>,
    pub dphi_defined: Option<bool>,
    pub mean_energy_ev: Option<f64>,
    pub linewidth_uev: Option<f64>,
    pub flags: BTreeSet<RecordFlag>,
}

impl ResultRow {
    pub fn selected(&self) -> bool {
        self.fss_uev.is_some() && !self.flags.contains(&RecordFlag::BelowResolution)
    }
}

impl From<&EnsembleRecord> for ResultRow {
    fn from(r: &EnsembleRecord) -> Self {
        Self {
            emitter_id: r.emitter_id.clone(),
            method: r.method,
            fss_uev: r.result.map(|x| x.fss_uev),
            fss_stderr_uev: r.result.map(|x| x.fss_stderr_uev),
            dphi_deg: r.result.map(|x| x.dipole_angle_deg),
            dphi_defined: r.result.map(|x| x.dipole_defined),
            mean_energy_ev: r.result.map(|x| x.mean_energy_ev),
            linewidth_uev: r.linewidth_uev,
            flags: r.flags.clone(),
        }
    }
}

fn flags_to_string(flags: &BTreeSet<RecordFlag>) -> String {
    flags.iter().map(RecordFlag::as_str).collect::<Vec<_>>().join(";")
}

/// Results table text. Mean energies keep nine decimals (0.001 μeV), the
/// rest six significant digits.
pub fn results_to_string(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.emitter_id.clone(),
            r.method.as_str().to_string(),
            fmt6_opt(r.fss_uev),
            fmt6_opt(r.fss_stderr_uev),
            fmt6_opt(r.dphi_deg),
            r.dphi_defined.map(|b| b.to_string()).unwrap_or_default(),
            r.mean_energy_ev.map(|e| format!("{e:.9}")).unwrap_or_default(),
            fmt6_opt(r.linewidth_uev),
            flags_to_string(&r.flags),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::parse("results", e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::parse("csv", e.to_string())
}

pub fn parse_results(text: &str, context: &str) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| Error::parse(context, e.to_string()))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(context, format!("missing column {name:?}")))
    };
    let idx: Vec<usize> = RESULTS_HEADER.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let ctx = format!("{context}:{}", k + 2);
        let rec = rec.map_err(|e| Error::parse(&ctx, e.to_string()))?;
        let field = |i: usize| rec.get(idx[i]).unwrap_or("").trim();
        let num = |i: usize| -> Result<Option<f64>> {
            let s = field(i);
            if s.is_empty() {
                return Ok(None);
            }
            s.parse()
                .map(Some)
                .map_err(|_| Error::parse(&ctx, format!("{}: bad number {s:?}", RESULTS_HEADER[i])))
        };
        let dphi_defined = match field(5) {
            "" => None,
            "true" => Some(true),
            "false" => Some(false),
            other => return Err(Error::parse(&ctx, format!("dphi_defined: bad value {other:?}"))),
        };
        let flags = field(8)
            .split(';')
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<BTreeSet<_>>>()?;
        rows.push(ResultRow {
            emitter_id: field(0).to_string(),
            method: field(1).parse()?,
            fss_uev: num(2)?,
            fss_stderr_uev: num(3)?,
            dphi_deg: num(4)?,
            dphi_defined,
            mean_energy_ev: num(6)?,
            linewidth_uev: num(7)?,
            flags,
        });
    }
    Ok(rows)
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    atomic_write(path, results_to_string(rows)?.as_bytes())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path)?;
    parse_results(&text, &path.display().to_string())
}

/// Generic CSV text from string cells.
pub fn csv_to_string<I, R>(header: &[&str], rows: I) -> Result<String>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::parse("csv", e.to_string()))
}

// ---- stack definitions --------------------------------------------------

/// A refractive index as a bare real number or `{n_re, n_im}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IndexValue {
    Real(f64),
    Complex {
        n_re: f64,
        #[serde(default)]
        n_im: f64,
    },
}

impl IndexValue {
    pub fn complex(&self) -> Complex64 {
        match *self {
            IndexValue::Real(n) => Complex64::new(n, 0.0),
            IndexValue::Complex { n_re, n_im } => Complex64::new(n_re, n_im),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerSpec {
    Constant {
        label: String,
        n_re: f64,
        #[serde(default)]
        n_im: f64,
        thickness_nm: f64,
    },
    Table {
        label: String,
        index_table_path: String,
        thickness_nm: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    pub ambient: IndexValue,
    pub substrate: IndexValue,
    pub layers: Vec<LayerSpec>,
}

impl StackSpec {
    /// Table paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<Stack> {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let built = match l {
                    LayerSpec::Constant { label, n_re, n_im, thickness_nm } => {
                        Layer::new(label.clone(), Complex64::new(*n_re, *n_im), *thickness_nm)
                    }
                    LayerSpec::Table { label, index_table_path, thickness_nm } => {
                        let table = read_index_table(&resolve(base_dir, index_table_path))?;
                        Layer::with_material(label.clone(), Material::Table(table), *thickness_nm)
                    }
                };
                built.map_err(|e| Error::Config(format!("layers[{k}]: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Stack::new(self.ambient.complex(), layers, self.substrate.complex())
            .map_err(|e| Error::Config(format!("ambient/substrate: {e}")))
    }

    pub fn from_stack(stack: &Stack) -> Self {
        let idx = |n: Complex64| {
            if n.im == 0.0 {
                IndexValue::Real(n.re)
            } else {
                IndexValue::Complex { n_re: n.re, n_im: n.im }
            }
        };
        let layers = stack
            .layers
            .iter()
            .map(|l| match &l.material {
                Material::Constant(n) => LayerSpec::Constant {
                    label: l.label.clone(),
                    n_re: n.re,
                    n_im: n.im,
                    thickness_nm: l.thickness_nm,
                },
                // tables are only ever loaded from files
                Material::Table(_) => unreachable!("tabulated layers are not serialized"),
            })
            .collect();
        Self {
            ambient: idx(stack.ambient),
            substrate: idx(stack.substrate),
            layers,
        }
    }
}

pub fn read_stack(path: &Path) -> Result<Stack> {
    let text = std::fs::read_to_string(path)?;
    let spec: StackSpec = serde_json::from_str(&text)?;
    spec.build(&base_dir(path))
}

/// CSV with columns `lambda_nm,n_re[,n_im]`.
pub fn read_index_table(path: &Path) -> Result<IndexTable> {
    let ctx = path.display().to_string();
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::parse(&ctx, e.to_string()))?;
    let mut lambdas = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(&ctx, e.to_string()))?;
        let get = |i: usize| -> Result<f64> {
            match rec.get(i).map(str::trim) {
                None | Some("") if i == 2 => Ok(0.0),
                Some(s) => s
                    .parse()
                    .map_err(|_| Error::parse(format!("{ctx}:{}", k + 2), format!("bad number {s:?}"))),
                None => Err(Error::parse(format!("{ctx}:{}", k + 2), "missing column")),
            }
        };
        lambdas.push(get(0)?);
        values.push(Complex64::new(get(1)?, get(2)?));
    }
    IndexTable::new(lambdas, values)
}
