use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use fsskit::cavity::{find_cavity_mode, reflectance_spectrum, telecom_cavity, wavelength_grid, CavityIndices, DESIGN_WAVELENGTH_NM};
use fsskit::ensemble::{
    batch_analyze, fraction_below_values, generate_ensemble, orientation_distribution_from_angles, polar_diagram,
    BatchConfig, Dipole, GeneratorConfig, MethodChoice, RecordFlag, DEFAULT_ORIENTATION_BIN_DEG,
    MIN_ORIENTATION_RECORDS, MIN_POLAR_SAMPLES,
};
use fsskit::entangle::sweep_row;
use fsskit::forward::{
    simulate_angle_series_with, uniform_angles, DetectorModel, EmitterModel, PolarimeterConfig, PolarimeterKind,
    SimulationOptions, Species,
};
use fsskit::fss::{resolution_limit_with, CentroidMethod, FssMethod, ResolutionOptions};
use fsskit::io::{
    atomic_write, csv_to_string, fmt6, read_manifest, read_results, read_stack, write_manifest,
    write_results, write_series, Manifest, ManifestEntry, ResultRow, MANIFEST_VERSION,
};
use fsskit::peakfit::{Histogram, DEFAULT_LINEWIDTH_BIN_UEV};
use fsskit::{Error, RngSeed};

/// Polarization-resolved spectroscopy toolkit for exciton fine-structure analysis.
#[derive(Parser)]
#[command(name = "fsskit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic polarimeter sweeps plus a manifest and ground truth.
    Simulate {
        /// Simulation config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; created if missing.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Extract splittings and orientations for every manifest entry.
    Analyze {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
        method: MethodArg,
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
        /// Per-angle line position estimator.
        #[arg(long, value_enum, default_value_t = CentroidArg::WeightedMean)]
        centroid: CentroidArg,
        /// Analyse the line nearest this energy instead of the strongest.
        #[arg(long)]
        target_energy_ev: Option<f64>,
        /// Splittings at or below this fraction of the linewidth are flagged.
        #[arg(long, default_value_t = 0.1)]
        selection_fraction: f64,
    },
    /// Histograms and summary statistics of a results table.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Output directory; created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Rows to use when the table holds several methods.
        #[arg(long, value_enum)]
        method: Option<FssMethodArg>,
        #[arg(long, default_value_t = 10.0)]
        fss_bin_uev: f64,
        #[arg(long, default_value_t = DEFAULT_ORIENTATION_BIN_DEG)]
        dphi_bin_deg: f64,
        #[arg(long, default_value_t = DEFAULT_LINEWIDTH_BIN_UEV)]
        linewidth_bin_uev: f64,
        #[arg(long, default_value_t = 50.0)]
        threshold_uev: f64,
    },
    /// Monte-Carlo smallest resolvable splitting (95th percentile at S = 0).
    Resolution {
        /// Intrinsic linewidth FWHM.
        #[arg(long)]
        linewidth_uev: f64,
        #[arg(long, default_value_t = 36)]
        n_angles: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 1e4)]
        peak_counts: f64,
        /// Detector model (JSON); defaults to the built-in detector.
        #[arg(long)]
        detector: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the JSON result here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-photon state sweep over splittings and time delay.
    Entangle {
        /// Bright-exciton splitting: comma list or start:stop:count.
        #[arg(long)]
        s: String,
        /// Hybridization term, same syntax.
        #[arg(long, default_value = "0")]
        sc: String,
        /// Time delay in ns, same syntax.
        #[arg(long, default_value = "0")]
        tau: String,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Multilayer reflectance spectrum and cavity-mode fit.
    Cavity {
        /// Stack definition (JSON); defaults to the built-in telecom cavity.
        #[arg(long)]
        stack: Option<PathBuf>,
        #[arg(long, default_value_t = 1100.0)]
        start_nm: f64,
        #[arg(long, default_value_t = 1550.0)]
        stop_nm: f64,
        #[arg(long, default_value_t = 1801)]
        points: usize,
        #[arg(long, default_value = "reflectance.csv")]
        out: PathBuf,
        /// Also write the mode summary (JSON) here.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// In-plane emission patterns of dipole matrix elements.
    Polar {
        /// JSON list of {label, re: [x, y, z], im: [x, y, z]}.
        #[arg(long)]
        dipoles: PathBuf,
        #[arg(long, default_value_t = 360)]
        samples: usize,
        #[arg(long, default_value = "polar.csv")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Auto,
    #[value(name = "qwp_fft")]
    QwpFft,
    #[value(name = "hwp_sinusoid")]
    HwpSinusoid,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum FssMethodArg {
    #[value(name = "qwp_fft")]
    QwpFft,
    #[value(name = "hwp_sinusoid")]
    HwpSinusoid,
}

#[derive(Clone, Copy, ValueEnum)]
enum CentroidArg {
    #[value(name = "weighted_mean")]
    WeightedMean,
    #[value(name = "gaussian_center")]
    GaussianCenter,
}

const EXIT_USAGE: u8 = 2;
const EXIT_EMPTY: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    fn empty(message: impl Into<String>) -> Self {
        Self { code: EXIT_EMPTY, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_)
            | Error::Parse { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Domain(_)
            | Error::Precondition(_) => EXIT_USAGE,
            Error::Detection(_) => EXIT_EMPTY,
            _ => EXIT_NUMERIC,
        };
        Self { code, message: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

fn with_context<T>(r: fsskit::Result<T>, what: impl std::fmt::Display) -> Result<T, Failure> {
    r.map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{what}: {}", f.message);
        f
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    if let Err(f) = configure_threads() {
        eprintln!("fsskit: {}", f.message);
        return ExitCode::from(f.code);
    }
    let r = match cli.command {
        Command::Simulate { config, out, seed } => cmd_simulate(&config, &out, RngSeed(seed)),
        Command::Analyze { manifest, method, out, centroid, target_energy_ev, selection_fraction } => {
            cmd_analyze(&manifest, method, &out, centroid, target_energy_ev, selection_fraction)
        }
        Command::Report { results, out, method, fss_bin_uev, dphi_bin_deg, linewidth_bin_uev, threshold_uev } => {
            cmd_report(&results, &out, method, [fss_bin_uev, dphi_bin_deg, linewidth_bin_uev], threshold_uev)
        }
        Command::Resolution { linewidth_uev, n_angles, trials, peak_counts, detector, seed, out } => cmd_resolution(
            linewidth_uev,
            n_angles,
            trials,
            peak_counts,
            detector.as_deref(),
            RngSeed(seed),
            out.as_deref(),
        ),
        Command::Entangle { s, sc, tau, out } => cmd_entangle(&s, &sc, &tau, &out),
        Command::Cavity { stack, start_nm, stop_nm, points, out, summary } => {
            cmd_cavity(stack.as_deref(), start_nm, stop_nm, points, &out, summary.as_deref())
        }
        Command::Polar { dipoles, samples, out } => cmd_polar(&dipoles, samples, &out),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fsskit: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Honours FSSKIT_THREADS as a cap on rayon workers.
fn configure_threads() -> CmdResult {
    let Ok(v) = std::env::var("FSSKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(format!("FSSKIT_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(format!("FSSKIT_THREADS: {e}")))
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    with_context(atomic_write(path, text.as_bytes()), path.display())
}

fn create_dir(path: &Path) -> CmdResult {
    std::fs::create_dir_all(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

/// Rounds to the printed precision so JSON numbers match the CSV tables.
fn r6(x: f64) -> f64 {
    fmt6(x).parse().unwrap_or(x)
}

fn json_text<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

// ---- simulate -------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimConfig {
    polarimeter: PolarimeterConfig,
    #[serde(default)]
    detector: DetectorModel,
    #[serde(default)]
    angles: Option<AngleSpec>,
    #[serde(default)]
    options: SimulationOptions,
    #[serde(default)]
    emitters: Option<Vec<EmitterSpec>>,
    #[serde(default)]
    generator: Option<GeneratorConfig>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AngleSpec {
    List(Vec<f64>),
    Uniform { start_deg: f64, span_deg: f64, count: usize },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmitterSpec {
    emitter_id: String,
    #[serde(default)]
    dot_id: Option<String>,
    #[serde(default)]
    species: Species,
    mean_energy_ev: f64,
    fss_uev: f64,
    dipole_angle_deg: f64,
    linewidth_fwhm_uev: f64,
    peak_counts: f64,
    #[serde(default)]
    circular_fraction: f64,
}

struct SimEmitter {
    emitter_id: String,
    dot_id: Option<String>,
    model: EmitterModel,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) && !id.starts_with('.')
}

fn load_sim_config(path: &Path, seed: RngSeed) -> Result<(SimConfig, Vec<SimEmitter>, Vec<f64>), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let cfg: SimConfig =
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    cfg.polarimeter.validate().map_err(|e| Failure::usage(format!("polarimeter: {e}")))?;
    cfg.detector.validate().map_err(|e| Failure::usage(format!("detector: {e}")))?;

    let angles = match &cfg.angles {
        Some(AngleSpec::List(a)) => a.clone(),
        Some(AngleSpec::Uniform { start_deg, span_deg, count }) => uniform_angles(*start_deg, *span_deg, *count),
        None => match cfg.polarimeter.kind {
            PolarimeterKind::HwpLp => uniform_angles(0.0, 180.0, 36),
            PolarimeterKind::QwpLp => uniform_angles(0.0, 360.0, 36),
        },
    };
    if angles.is_empty() || angles.iter().any(|a| !a.is_finite()) {
        return Err(Failure::usage("angles: need at least one finite angle"));
    }

    let emitters = match (&cfg.emitters, &cfg.generator) {
        (Some(_), Some(_)) => return Err(Failure::usage("emitters, generator: give one or the other")),
        (None, None) => return Err(Failure::usage("emitters: missing (or give a generator)")),
        (Some(list), None) => {
            let mut out = Vec::with_capacity(list.len());
            for (k, e) in list.iter().enumerate() {
                if !valid_id(&e.emitter_id) {
                    return Err(Failure::usage(format!(
                        "emitters[{k}].emitter_id: {:?} must be non-empty and use only letters, digits, '_', '-', '.'",
                        e.emitter_id
                    )));
                }
                let model = EmitterModel::new(e.mean_energy_ev, e.fss_uev, e.dipole_angle_deg, e.linewidth_fwhm_uev, e.peak_counts)
                    .map(|m| m.with_species(e.species).with_circular_fraction(e.circular_fraction))
                    .and_then(|m| m.validate().map(|_| m))
                    .map_err(|err| Failure::usage(format!("emitters[{k}]: {err}")))?;
                out.push(SimEmitter { emitter_id: e.emitter_id.clone(), dot_id: e.dot_id.clone(), model });
            }
            out
        }
        // the population draws from its own stream, series noise from the others
        (None, Some(g)) => generate_ensemble(g, seed.derive(u64::MAX))
            .map_err(|e| Failure::usage(format!("generator: {e}")))?
            .into_iter()
            .map(|g| SimEmitter { emitter_id: g.emitter_id, dot_id: Some(g.dot_id), model: g.emitter })
            .collect(),
    };
    let mut ids = std::collections::BTreeSet::new();
    for e in &emitters {
        if !ids.insert(e.emitter_id.as_str()) {
            return Err(Failure::usage(format!("emitters: duplicate emitter_id {:?}", e.emitter_id)));
        }
    }
    Ok((cfg, emitters, angles))
}

fn cmd_simulate(config: &Path, out: &Path, seed: RngSeed) -> CmdResult {
    let (cfg, emitters, angles) = load_sim_config(config, seed)?;
    let series_dir = out.join("series");
    create_dir(&series_dir)?;

    let series: Vec<_> = emitters
        .par_iter()
        .enumerate()
        .map(|(k, e)| {
            simulate_angle_series_with(&e.model, &cfg.polarimeter, &cfg.detector, &angles, seed.derive(k as u64), &cfg.options)
                .map_err(|err| Failure::from(err).prefixed(&e.emitter_id))
        })
        .collect::<Result<_, _>>()?;

    let mut entries = Vec::with_capacity(emitters.len());
    for (e, s) in emitters.iter().zip(&series) {
        let rel = format!("series/{}.csv", e.emitter_id);
        with_context(write_series(&out.join(&rel), s), &rel)?;
        entries.push(ManifestEntry {
            emitter_id: e.emitter_id.clone(),
            dot_id: e.dot_id.clone(),
            species: e.model.species,
            series_path: rel,
            linewidth_hint_uev: None,
            polarimeter: cfg.polarimeter,
        });
    }
    let truth = csv_to_string(
        &["emitter_id", "dot_id", "species", "fss_ueV", "dphi_deg", "linewidth_ueV", "mean_energy_eV"],
        emitters.iter().map(|e| {
            vec![
                e.emitter_id.clone(),
                e.dot_id.clone().unwrap_or_default(),
                e.model.species.as_str().to_string(),
                fmt6(e.model.fss_uev),
                fmt6(e.model.dipole_angle_deg),
                fmt6(e.model.linewidth_fwhm_uev),
                format!("{:.9}", e.model.mean_energy_ev),
            ]
        }),
    )?;
    write_text(&out.join("truth.csv"), &truth)?;
    let manifest = Manifest { version: MANIFEST_VERSION, entries };
    with_context(write_manifest(&out.join("manifest.json"), &manifest), "manifest.json")?;
    println!("wrote {} series to {}", emitters.len(), out.display());
    Ok(())
}

impl Failure {
    fn prefixed(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

// ---- analyze --------------------------------------------------------------

fn cmd_analyze(
    manifest: &Path,
    method: MethodArg,
    out: &Path,
    centroid: CentroidArg,
    target_energy_ev: Option<f64>,
    selection_fraction: f64,
) -> CmdResult {
    let (m, base) = read_manifest(manifest).map_err(|e| Failure::usage(format!("{}: {e}", manifest.display())))?;
    if !(selection_fraction.is_finite() && selection_fraction >= 0.0) {
        return Err(Failure::usage("--selection-fraction must be >= 0"));
    }
    let mut cfg = BatchConfig {
        method: match method {
            MethodArg::Auto => MethodChoice::Auto,
            MethodArg::QwpFft => MethodChoice::QwpFft,
            MethodArg::HwpSinusoid => MethodChoice::HwpSinusoid,
            MethodArg::Both => MethodChoice::Both,
        },
        selection_fraction,
        ..BatchConfig::default()
    };
    cfg.selector.target_energy_ev = target_energy_ev;
    cfg.centroid.method = match centroid {
        CentroidArg::WeightedMean => CentroidMethod::WeightedMean,
        CentroidArg::GaussianCenter => CentroidMethod::GaussianCenter,
    };
    let items = m.batch_items(&base);
    let records = batch_analyze(&items, &cfg)?;
    let mut failed = 0;
    for r in &records {
        if let Some(e) = &r.error {
            failed += 1;
            eprintln!("fsskit: {} ({}): {e}", r.emitter_id, r.method.as_str());
        }
    }
    let rows: Vec<ResultRow> = records.iter().map(ResultRow::from).collect();
    with_context(write_results(out, &rows), out.display())?;
    println!("analysed {} rows ({failed} failed) -> {}", rows.len(), out.display());
    Ok(())
}

// ---- report ---------------------------------------------------------------

#[derive(Serialize)]
struct Summary {
    method: Option<String>,
    n_rows: usize,
    n_analysed: usize,
    n_selected: usize,
    n_failed: usize,
    #[serde(rename = "threshold_ueV")]
    threshold_uev: f64,
    fraction_below_threshold: Option<f64>,
    #[serde(rename = "fraction_below_50ueV")]
    fraction_below_50uev: Option<f64>,
    median_dphi_deg: Option<f64>,
    fit_center: Option<f64>,
    fit_sigma: Option<f64>,
    fit_center_stderr: Option<f64>,
    fit_amplitude: Option<f64>,
    fit_converged: Option<bool>,
    secondary_count: Option<usize>,
}

fn histogram_csv(values: &[f64], bin_width: f64, label: &str) -> Result<String, Failure> {
    let header = [label, "count"];
    if values.is_empty() {
        return Ok(csv_to_string(&header, std::iter::empty::<Vec<String>>())?);
    }
    let h = Histogram::aligned(values, bin_width).map_err(|e| Failure::usage(format!("{label}: {e}")))?;
    Ok(csv_to_string(
        &header,
        h.centers().into_iter().zip(&h.counts).map(|(c, n)| vec![fmt6(c), n.to_string()]),
    )?)
}

fn cmd_report(results: &Path, out: &Path, method: Option<FssMethodArg>, bins: [f64; 3], threshold: f64) -> CmdResult {
    let [fss_bin, dphi_bin, lw_bin] = bins;
    let all = read_results(results).map_err(|e| Failure::usage(format!("{}: {e}", results.display())))?;
    if all.is_empty() {
        return Err(Failure::empty(format!("{}: no result rows", results.display())));
    }
    let wanted = method.map(|m| match m {
        FssMethodArg::QwpFft => FssMethod::QwpFft,
        FssMethodArg::HwpSinusoid => FssMethod::HwpSinusoid,
    });
    let methods: std::collections::BTreeSet<&str> = all.iter().map(|r| r.method.as_str()).collect();
    if wanted.is_none() && methods.len() > 1 {
        return Err(Failure::usage("results hold several methods; choose one with --method"));
    }
    let rows: Vec<&ResultRow> = all.iter().filter(|r| wanted.is_none_or(|m| r.method == m)).collect();
    if rows.is_empty() {
        return Err(Failure::empty("no rows for the chosen method"));
    }
    create_dir(out)?;

    let fss: Vec<f64> = rows.iter().filter_map(|r| r.fss_uev).collect();
    let widths: Vec<f64> = rows.iter().filter(|r| r.fss_uev.is_some()).filter_map(|r| r.linewidth_uev).collect();
    let dphi: Vec<f64> = rows.iter().filter(|r| r.selected()).filter_map(|r| r.dphi_deg).collect();

    write_text(&out.join("fss_hist.csv"), &histogram_csv(&fss, fss_bin, "fss_ueV")?)?;
    write_text(&out.join("linewidth_hist.csv"), &histogram_csv(&widths, lw_bin, "linewidth_ueV")?)?;

    let orient = if dphi.len() >= MIN_ORIENTATION_RECORDS {
        Some(orientation_distribution_from_angles(&dphi, dphi_bin)?)
    } else {
        eprintln!(
            "fsskit: only {} selected orientations (need {MIN_ORIENTATION_RECORDS}); skipping the orientation fit",
            dphi.len()
        );
        None
    };
    let header = ["dphi_deg", "count", "gaussian_fit"];
    let dphi_csv = match &orient {
        Some(o) => csv_to_string(
            &header,
            o.centers.iter().zip(&o.counts).map(|(&c, n)| {
                let d = fsskit::domain::polarization_difference(c, o.fit_center);
                let g = o.fit_amplitude * (-0.5 * (d / o.fit_sigma).powi(2)).exp();
                vec![fmt6(c), n.to_string(), fmt6(g)]
            }),
        )?,
        None => csv_to_string(&header, std::iter::empty::<Vec<String>>())?,
    };
    write_text(&out.join("dphi_hist.csv"), &dphi_csv)?;

    let frac = |t: f64| fraction_below_values(&fss, t).ok().map(r6);
    let summary = Summary {
        method: wanted.or(rows.first().map(|r| r.method)).map(|m| m.as_str().to_string()),
        n_rows: rows.len(),
        n_analysed: fss.len(),
        n_selected: rows.iter().filter(|r| r.selected()).count(),
        n_failed: rows.iter().filter(|r| r.flags.contains(&RecordFlag::Failed)).count(),
        threshold_uev: threshold,
        fraction_below_threshold: frac(threshold),
        fraction_below_50uev: frac(50.0),
        median_dphi_deg: orient.as_ref().map(|o| r6(o.median_deg)),
        fit_center: orient.as_ref().map(|o| r6(o.fit_center)),
        fit_sigma: orient.as_ref().map(|o| r6(o.fit_sigma)),
        fit_center_stderr: orient.as_ref().map(|o| r6(o.fit_stderr)),
        fit_amplitude: orient.as_ref().map(|o| r6(o.fit_amplitude)),
        fit_converged: orient.as_ref().map(|o| o.fit_converged),
        secondary_count: orient.as_ref().map(|o| o.secondary_count),
    };
    let text = json_text(&summary);
    write_text(&out.join("summary.json"), &text)?;
    print!("{text}");
    Ok(())
}

// ---- resolution -----------------------------------------------------------

fn cmd_resolution(
    linewidth: f64,
    n_angles: usize,
    trials: usize,
    peak_counts: f64,
    detector: Option<&Path>,
    seed: RngSeed,
    out: Option<&Path>,
) -> CmdResult {
    let det = match detector {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
            let d: DetectorModel =
                serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
            d.validate().map_err(|e| Failure::usage(format!("detector: {e}")))?;
            d
        }
        None => DetectorModel::default(),
    };
    let opts = ResolutionOptions { peak_counts, ..ResolutionOptions::default() };
    let r = resolution_limit_with(linewidth, &det, n_angles, trials, seed, &opts)?;
    let v = serde_json::json!({
        "linewidth_ueV": linewidth,
        "n_angles": n_angles,
        "peak_counts": peak_counts,
        "n_trials": r.n_trials,
        "n_failed": r.n_failed,
        "qwp_fft_ueV": r6(r.qwp_fft_uev),
        "hwp_sinusoid_ueV": r6(r.hwp_sinusoid_uev),
        "combined_ueV": r6(r.combined_uev),
    });
    let text = json_text(&v);
    if let Some(p) = out {
        write_text(p, &text)?;
    }
    print!("{text}");
    Ok(())
}

// ---- entangle -------------------------------------------------------------

/// `a,b,c` or `start:stop:count` (inclusive).
fn parse_values(spec: &str, name: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::usage(format!("--{name}: expected a comma list or start:stop:count, got {spec:?}"));
    let v: Vec<f64> = if let [a, b, n] = spec.split(':').collect::<Vec<_>>()[..] {
        let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        match n {
            0 => return Err(bad()),
            1 => vec![a],
            _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
        }
    } else {
        spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(bad());
    }
    Ok(v)
}

fn cmd_entangle(s: &str, sc: &str, tau: &str, out: &Path) -> CmdResult {
    let (s, sc, tau) = (parse_values(s, "s")?, parse_values(sc, "sc")?, parse_values(tau, "tau")?);
    let mut grid = Vec::with_capacity(s.len() * sc.len() * tau.len());
    for &a in &s {
        for &b in &sc {
            for &t in &tau {
                grid.push((a, b, t));
            }
        }
    }
    let mut rows = Vec::with_capacity(grid.len());
    let mut skipped = 0;
    for (a, b, t) in grid {
        match sweep_row(a, b, t) {
            Ok(r) => rows.push(vec![
                fmt6(r.s_uev),
                fmt6(r.s_c_uev),
                fmt6(r.tau_ns),
                fmt6(r.alpha),
                fmt6(r.beta),
                fmt6(r.fidelity),
                fmt6(r.c_rect),
                fmt6(r.c_diag),
                fmt6(r.c_circ),
            ]),
            Err(Error::Degenerate(_)) => skipped += 1,
            Err(e) => return Err(Failure::from(e).prefixed(&format!("S={a}, S_c={b}, tau={t}"))),
        }
    }
    if skipped > 0 {
        eprintln!("fsskit: skipped {skipped} grid points with S = S_c = 0 (eigenbasis undefined)");
    }
    let text = csv_to_string(
        &["s", "s_c", "tau", "alpha", "beta", "fidelity", "C_rect", "C_diag", "C_circ"],
        rows,
    )?;
    write_text(out, &text)?;
    println!("wrote {}", out.display());
    Ok(())
}

// ---- cavity ---------------------------------------------------------------

fn cmd_cavity(stack: Option<&Path>, start: f64, stop: f64, points: usize, out: &Path, summary: Option<&Path>) -> CmdResult {
    let stack = match stack {
        Some(p) => read_stack(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?,
        None => telecom_cavity(&CavityIndices::default(), DESIGN_WAVELENGTH_NM)?,
    };
    let grid = wavelength_grid(start, stop, points).map_err(|e| Failure::usage(e.to_string()))?;
    let spectrum = reflectance_spectrum(&stack, &grid)?;
    let text = csv_to_string(
        &["lambda_nm", "reflectance"],
        spectrum.iter().map(|(l, r)| vec![fmt6(*l), fmt6(*r)]),
    )?;
    write_text(out, &text)?;
    let mode = find_cavity_mode(&spectrum)?;
    let v = serde_json::json!({
        "center_nm": r6(mode.center_nm),
        "fwhm_nm": r6(mode.fwhm_nm),
        "depth": r6(mode.depth),
        "baseline": r6(mode.baseline),
        "minimum_nm": r6(mode.minimum_nm),
        "converged": mode.converged,
    });
    let text = json_text(&v);
    if let Some(p) = summary {
        write_text(p, &text)?;
    }
    print!("{text}");
    Ok(())
}

// ---- polar ----------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DipoleSpec {
    label: String,
    re: [f64; 3],
    #[serde(default)]
    im: [f64; 3],
}

fn cmd_polar(path: &Path, samples: usize, out: &Path) -> CmdResult {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let specs: Vec<DipoleSpec> =
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    if samples < MIN_POLAR_SAMPLES {
        return Err(Failure::usage(format!("--samples must be at least {MIN_POLAR_SAMPLES}")));
    }
    let dipoles: Vec<Dipole> = specs
        .into_iter()
        .map(|s| Dipole {
            label: s.label,
            d: std::array::from_fn(|k| Complex64::new(s.re[k], s.im[k])),
        })
        .collect();
    let pd = polar_diagram(&dipoles, samples)?;
    let mut header: Vec<&str> = vec!["angle_deg"];
    header.extend(pd.curves.iter().map(|(l, _)| l.as_str()));
    header.push("sum");
    let rows = (0..pd.angles_deg.len()).map(|k| {
        let mut row = vec![fmt6(pd.angles_deg[k])];
        row.extend(pd.curves.iter().map(|(_, c)| fmt6(c[k])));
        row.push(fmt6(pd.sum[k]));
        row
    });
    write_text(out, &csv_to_string(&header, rows)?)?;
    print!("{}", json_text(&serde_json::json!({ "dlp": r6(pd.dlp) })));
    Ok(())
}
