//! Acceptance suite. Runs without the libtest harness so the PASS/FAIL lines
//! are always printed; exits non-zero if any criterion fails.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::time::{Duration, Instant};

use nalgebra::{Vector2, Vector4};
use num_complex::Complex64;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::Rng;
use rayon::prelude::*;

use fsskit::cavity::{
    bragg_reflectance, find_cavity_mode, reflectance, reflectance_spectrum, response, telecom_cavity,
    wavelength_grid, CavityIndices, Layer, Stack, DESIGN_WAVELENGTH_NM,
};
use fsskit::domain::polarization_difference;
use fsskit::ensemble::{
    batch_analyze, fraction_below, generate_ensemble, orientation_distribution, BatchConfig, BatchItem,
    GeneratorConfig, DEFAULT_ORIENTATION_BIN_DEG,
};
use fsskit::entangle::{
    eigenstate_coefficients, fidelity_to_bell, two_photon_state, two_photon_state_with_phase, BellBasis, BellState,
    NonCollinearParams, TwoPhotonState,
};
use fsskit::forward::{
    render_spectrum, simulate_angle_series, simulate_angle_series_with, uniform_angles, DetectorModel, EmitterModel,
    IntensityModulation, PolarimeterConfig, Retarder, SimulationOptions, SpectralLine,
};
use fsskit::fss::{centroid_series, extract_fss, FssResult, LineSelector};
use fsskit::mueller::{mueller_lp, mueller_retarder};
use fsskit::peakfit::{fit_gaussians, gaussian_mixture, gaussian_mixture_gradient};
use fsskit::{RngSeed, StokesVector};

const MEAN_EV: f64 = 0.9464;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn recover(e: &EmitterModel, p: &PolarimeterConfig, det: &DetectorModel, angles: &[f64], seed: RngSeed, opts: &SimulationOptions) -> FssResult {
    let series = simulate_angle_series_with(e, p, det, angles, seed, opts).expect("simulate");
    let es = centroid_series(&series, &LineSelector::default()).expect("centroids");
    extract_fss(&es, p).expect("extract")
}

fn qwp_scan() -> (PolarimeterConfig, Vec<f64>) {
    (PolarimeterConfig::qwp(), uniform_angles(0.0, 360.0, 36))
}

fn hwp_scan() -> (PolarimeterConfig, Vec<f64>) {
    (PolarimeterConfig::hwp(), uniform_angles(0.0, 180.0, 36))
}

fn noiseless_round_trip() -> Outcome {
    let det = DetectorModel::default().noiseless();
    let mut worst_s: f64 = 0.0;
    let mut worst_phi: f64 = 0.0;
    for s in [10.0, 50.0, 100.0, 300.0] {
        for phi in [0.0, 30.0, 45.0, 90.0, 137.0] {
            let e = EmitterModel::new(MEAN_EV, s, phi, 250.0, 1e4).unwrap();
            for (p, angles) in [qwp_scan(), hwp_scan()] {
                let r = recover(&e, &p, &det, &angles, RngSeed(0), &SimulationOptions::default());
                worst_s = worst_s.max((r.fss_uev - s).abs());
                worst_phi = worst_phi.max(polarization_difference(r.dipole_angle_deg, phi).abs());
            }
        }
    }
    outcome(
        worst_s < 0.01 && worst_phi < 0.01,
        format!("max |ΔS| = {worst_s:.2e} μeV, max |Δφ| = {worst_phi:.2e}° over 20 cases × 2 methods"),
    )
}

fn centroid_resolution() -> Outcome {
    let det = DetectorModel::default();
    let line = SpectralLine { center_ev: MEAN_EV, fwhm_uev: det.observed_fwhm_uev(250.0), area: 1e4 };
    let centers: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngSeed(k).rng();
            let s = render_spectrum(&[line], &det, MEAN_EV, Some(&mut rng)).unwrap();
            (fit_gaussians(&s, 1, None).unwrap()[0].center_ev - MEAN_EV) * 1e6
        })
        .collect();
    let mean = centers.iter().sum::<f64>() / centers.len() as f64;
    let sd = (centers.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (centers.len() - 1) as f64).sqrt();
    outcome(
        (1.0..=5.0).contains(&sd),
        format!("Gaussian-fit centroid sd = {sd:.3} μeV (mean offset {mean:+.3} μeV), 200 seeds, 1e4 counts, IRF 89 μeV, linewidth 250 μeV"),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn noisy_recovery() -> Outcome {
    let det = DetectorModel::default();
    let (p, angles) = hwp_scan();
    let errs: Vec<(f64, f64)> = (0..100u64)
        .into_par_iter()
        .map(|k| {
            let phi = RngSeed(k).derive(1).rng().random_range(0.0..180.0);
            let e = EmitterModel::new(MEAN_EV, 100.0, phi, 250.0, 1e4).unwrap();
            let r = recover(&e, &p, &det, &angles, RngSeed(k), &SimulationOptions::default());
            ((r.fss_uev - 100.0).abs(), polarization_difference(r.dipole_angle_deg, phi).abs())
        })
        .collect();
    let ms = median(errs.iter().map(|e| e.0).collect());
    let mp = median(errs.iter().map(|e| e.1).collect());
    outcome(
        ms <= 5.0 && mp <= 3.0,
        format!("median |S − 100| = {ms:.2} μeV, median |Δφ error| = {mp:.2}°, 100 seeds"),
    )
}

fn ensemble_statistics() -> Outcome {
    let cfg = GeneratorConfig::default();
    let det = DetectorModel::default();
    let (p, angles) = hwp_scan();
    let per_seed: Vec<(f64, f64, f64)> = (0..20u64)
        .map(|k| {
            let root = RngSeed(1000 + k);
            let emitters = generate_ensemble(&cfg, root).unwrap();
            let items: Vec<BatchItem> = emitters
                .par_iter()
                .enumerate()
                .map(|(j, g)| BatchItem {
                    emitter_id: g.emitter_id.clone(),
                    dot_id: Some(g.dot_id.clone()),
                    species: g.emitter.species,
                    polarimeter: p,
                    linewidth_hint_uev: None,
                    series: Ok(simulate_angle_series(&g.emitter, &p, &det, &angles, root.derive(j as u64 + 1)).unwrap()),
                })
                .collect();
            let records = batch_analyze(&items, &BatchConfig::default()).unwrap();
            let frac = fraction_below(&records, 50.0).unwrap();
            let o = orientation_distribution(&records, DEFAULT_ORIENTATION_BIN_DEG).unwrap();
            (frac, o.fit_center, o.fit_sigma)
        })
        .collect();
    let n = per_seed.len() as f64;
    let frac = per_seed.iter().map(|x| x.0).sum::<f64>() / n;
    let center = per_seed.iter().map(|x| x.1).sum::<f64>() / n;
    let sigma = per_seed.iter().map(|x| x.2).sum::<f64>() / n;
    outcome(
        (frac - 0.5).abs() <= 0.15 && (center - 3.1).abs() <= 1.5 && (sigma - 2.2).abs() <= 1.5,
        format!("n = 35, 20 seeds: fraction below 50 μeV = {frac:.3}, fit center = {center:.2}°, sigma = {sigma:.2}°"),
    )
}

fn robustness() -> Outcome {
    let det = DetectorModel::default().noiseless();
    let (p, angles) = qwp_scan();
    let mut worst_mod: f64 = 0.0;
    let mut worst_ret: f64 = 0.0;
    for (s, phi) in [(20.0, 10.0), (50.0, 3.1), (120.0, 75.0), (300.0, 140.0)] {
        let e = EmitterModel::new(MEAN_EV, s, phi, 250.0, 1e4).unwrap();
        let base = recover(&e, &p, &det, &angles, RngSeed(0), &SimulationOptions::default()).fss_uev;
        for phase in [0.0, 40.0, 125.0] {
            let opts = SimulationOptions {
                intensity_modulation: Some(IntensityModulation { depth: 0.1, harmonic: 1, phase_deg: phase }),
                ..Default::default()
            };
            worst_mod = worst_mod.max((recover(&e, &p, &det, &angles, RngSeed(0), &opts).fss_uev - base).abs());
        }
        for (axis, delta) in [(17.0, 63.0), (-40.0, 90.0), (71.0, 151.0), (5.0, 12.0)] {
            let opts = SimulationOptions {
                pre_retarder: Some(Retarder { fast_axis_deg: axis, retardance_deg: delta }),
                ..Default::default()
            };
            worst_ret = worst_ret.max((recover(&e, &p, &det, &angles, RngSeed(0), &opts).fss_uev - base).abs());
        }
    }
    outcome(
        worst_mod < 0.5 && worst_ret < 0.5,
        format!("QWP scan: max shift with 10 % 1χ modulation = {worst_mod:.2e} μeV, with fixed retarder = {worst_ret:.2e} μeV"),
    )
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn kron(a: &Vector2<Complex64>, b: &Vector2<Complex64>) -> Vector4<Complex64> {
    Vector4::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
}

fn max_diff(a: &TwoPhotonState, b: &TwoPhotonState) -> f64 {
    (a.rho - b.rho).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn entanglement() -> Outcome {
    let cases = [
        ((40.0, 0.0), (1.0, 0.0)),
        ((0.0, 40.0), (FRAC_1_SQRT_2, FRAC_1_SQRT_2)),
        ((30.0, 30.0), ((PI / 8.0).cos(), (PI / 8.0).sin())),
    ];
    let coeff_err = cases
        .iter()
        .map(|&((s, sc), (a, b))| {
            let (ga, gb) = eigenstate_coefficients(s, sc).unwrap();
            (ga - a).abs().max((gb - b).abs())
        })
        .fold(0.0, f64::max);

    let mut rng = RngSeed(6).rng();
    let mut fid_err: f64 = 0.0;
    for _ in 0..50 {
        let (s, sc) = (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
        let p = NonCollinearParams::new(s, sc, 0.0).unwrap();
        let f = fidelity_to_bell(&two_photon_state(&p), BellState::PhiPlus, BellBasis::Eigen { alpha: p.alpha, beta: p.beta });
        fid_err = fid_err.max((f - 1.0).abs());
    }

    let i = Complex64::i();
    let r = Vector2::new(c(FRAC_1_SQRT_2), -i * FRAC_1_SQRT_2);
    let l = Vector2::new(c(FRAC_1_SQRT_2), i * FRAC_1_SQRT_2);
    let mut circ_err: f64 = 0.0;
    for phase in [0.0, 0.9, 2.0, PI] {
        let want = (kron(&r, &l) + kron(&l, &r) * Complex64::from_polar(1.0, phase)) * c(FRAC_1_SQRT_2);
        let want = TwoPhotonState::from_pure(&want).unwrap();
        let got = two_photon_state_with_phase(FRAC_1_SQRT_2, FRAC_1_SQRT_2, phase).unwrap();
        circ_err = circ_err.max(max_diff(&got, &want));
    }
    outcome(
        coeff_err < 1e-10 && fid_err < 1e-10 && circ_err < 1e-10,
        format!("coefficient error {coeff_err:.1e}, τ=0 eigen-basis Φ⁺ fidelity error {fid_err:.1e} (50 draws), circular-limit ρ error {circ_err:.1e}"),
    )
}

fn cavity() -> Outcome {
    let stack = telecom_cavity(&CavityIndices::default(), DESIGN_WAVELENGTH_NM).unwrap();
    let grid = wavelength_grid(1100.0, 1550.0, 1801).unwrap();
    let mode = match find_cavity_mode(&reflectance_spectrum(&stack, &grid).unwrap()) {
        Ok(m) => m,
        Err(e) => return outcome(false, format!("no cavity mode: {e}")),
    };
    let mut bragg_err: f64 = 0.0;
    for pairs in [5usize, 10, 25] {
        let mut layers = Vec::new();
        for _ in 0..pairs {
            layers.push(Layer::real("H", 3.41, 1310.0 / (4.0 * 3.41)).unwrap());
            layers.push(Layer::real("L", 3.07, 1310.0 / (4.0 * 3.07)).unwrap());
        }
        let dbr = Stack::new(c(1.0), layers, c(3.41)).unwrap();
        let want = bragg_reflectance(3.41, 3.07, pairs as u32, 1.0, 3.41);
        bragg_err = bragg_err.max((reflectance(&dbr, 1310.0).unwrap() - want).abs());
    }
    outcome(
        (1280.0..=1340.0).contains(&mode.center_nm) && (15.0..=80.0).contains(&mode.fwhm_nm) && bragg_err < 1e-6,
        format!(
            "dip center {:.1} nm, FWHM {:.1} nm, depth {:.4}; Bragg oracle error {bragg_err:.1e}",
            mode.center_nm, mode.fwhm_nm, mode.depth
        ),
    )
}

// ---- property suites -------------------------------------------------------

type Jones = [[Complex64; 2]; 2];

fn jones_apply(j: &Jones, e: [Complex64; 2]) -> [Complex64; 2] {
    [j[0][0] * e[0] + j[0][1] * e[1], j[1][0] * e[0] + j[1][1] * e[1]]
}

/// Element with eigen-axes at `theta`; the axis at `theta + 90°` is multiplied by `d`.
fn jones_element(theta_deg: f64, d: Complex64, along: Complex64) -> Jones {
    let (s, cs) = theta_deg.to_radians().sin_cos();
    // R(−θ)·diag(along, d)·R(θ)
    [
        [along * cs * cs + d * s * s, (along - d) * cs * s],
        [(along - d) * cs * s, along * s * s + d * cs * cs],
    ]
}

fn stokes_of(e: [Complex64; 2]) -> StokesVector {
    let x = e[0];
    let y = e[1];
    StokesVector::new_unchecked(
        x.norm_sqr() + y.norm_sqr(),
        x.norm_sqr() - y.norm_sqr(),
        2.0 * (x * y.conj()).re,
        2.0 * (x * y.conj()).im,
    )
}

/// Rounding is relative to the unit input intensity, not to what survives a
/// chain of nearly crossed polarizers.
fn physical(s: &StokesVector) -> bool {
    s.i >= -1e-12 && s.polarized_intensity() <= s.i + 1e-12
}

fn runner() -> TestRunner {
    let config = Config { cases: 512, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn stokes_close(a: &StokesVector, b: &StokesVector, tol: f64) -> bool {
    (a.i - b.i).abs() < tol && (a.q - b.q).abs() < tol && (a.u - b.u).abs() < tol && (a.v - b.v).abs() < tol
}

fn property_suites() -> Outcome {
    let mut failures = Vec::new();
    let mut record = |name: &str, r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };
    let amp = (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0);

    record(
        "Mueller–Jones",
        runner()
            .run(&(-360.0f64..360.0, -360.0f64..360.0, amp.clone()), |(theta, delta, (a, b, cc, d))| {
                let e = [Complex64::new(a, b), Complex64::new(cc, d)];
                let ret = jones_element(theta, Complex64::from_polar(1.0, -delta.to_radians()), c(1.0));
                let got = mueller_retarder(theta, delta).apply(&stokes_of(e));
                prop_assert!(stokes_close(&got, &stokes_of(jones_apply(&ret, e)), 1e-12));
                let lp = jones_element(theta, c(0.0), c(1.0));
                let got = mueller_lp(theta).apply(&stokes_of(e));
                prop_assert!(stokes_close(&got, &stokes_of(jones_apply(&lp, e)), 1e-12));
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );

    record(
        "Stokes physicality",
        runner()
            .run(
                &(0.0f64..1.0, -180.0f64..180.0, -1.0f64..1.0, prop::collection::vec((-180.0f64..180.0, -360.0f64..360.0, any::<bool>()), 1..6), -360.0f64..360.0),
                |(dop, angle, vf, elements, reading)| {
                    let pol = StokesVector::elliptical(1.0, angle, vf).unwrap();
                    let mut s = StokesVector::new_unchecked(1.0, dop * pol.q, dop * pol.u, dop * pol.v);
                    for (theta, delta, is_lp) in elements {
                        let m = if is_lp { mueller_lp(theta) } else { mueller_retarder(theta, delta) };
                        s = m.apply(&s);
                        prop_assert!(physical(&s), "{s:?}");
                    }
                    for p in [PolarimeterConfig::qwp(), PolarimeterConfig::hwp()] {
                        prop_assert!(physical(&p.mueller(reading).apply(&s)));
                    }
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );

    let layer = (1.0f64..4.0, 0.0f64..0.2, 5.0f64..400.0);
    record(
        "R+T=1",
        runner()
            .run(
                &(prop::collection::vec(layer, 0..15), 1.0f64..2.0, 1.0f64..4.0, 300.0f64..2500.0),
                |(ls, na, ns, lambda)| {
                    let lossless: Vec<Layer> = ls.iter().map(|&(n, _, d)| Layer::real("x", n, d).unwrap()).collect();
                    let r = response(&Stack::new(c(na), lossless, c(ns)).unwrap(), lambda).unwrap();
                    prop_assert!((r.reflectance + r.transmittance - 1.0).abs() < 1e-10);
                    // absorption only removes energy
                    let lossy: Vec<Layer> =
                        ls.iter().map(|&(n, k, d)| Layer::new("x", Complex64::new(n, k), d).unwrap()).collect();
                    let r = response(&Stack::new(c(na), lossy, c(ns)).unwrap(), lambda).unwrap();
                    prop_assert!(r.reflectance >= 0.0 && r.transmittance >= 0.0);
                    prop_assert!(r.reflectance + r.transmittance <= 1.0 + 1e-10);
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );

    record(
        "density matrix",
        runner()
            .run(&(0.0f64..500.0, 0.0f64..500.0, 0.0f64..10.0), |(s, sc, tau)| {
                prop_assume!(s > 0.0 || sc > 0.0);
                let st = two_photon_state(&NonCollinearParams::new(s, sc, tau).unwrap());
                prop_assert!((st.trace() - c(1.0)).norm() < 1e-12);
                prop_assert!(st.hermiticity_error() < 1e-12);
                prop_assert!(st.eigenvalues().iter().all(|&l| l > -1e-12));
                prop_assert!((st.purity() - 1.0).abs() < 1e-10);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );

    record(
        "Jacobian vs finite difference",
        runner()
            .run(
                &(prop::collection::vec((0.1f64..1e4, -500.0f64..500.0, 5.0f64..300.0), 1..4), -50.0f64..50.0, -800.0f64..800.0, any::<bool>()),
                |(peaks, bg, x, with_bg)| {
                    let mut params: Vec<f64> = peaks.iter().flat_map(|&(a, c, s)| [a, c, s]).collect();
                    if with_bg {
                        params.push(bg);
                    }
                    let mut grad = vec![0.0; params.len()];
                    gaussian_mixture_gradient(x, &params, with_bg, &mut grad);
                    for k in 0..params.len() {
                        let h = 1e-6 * params[k].abs().max(1.0);
                        let (mut up, mut dn) = (params.clone(), params.clone());
                        up[k] += h;
                        dn[k] -= h;
                        let fd = (gaussian_mixture(x, &up, with_bg) - gaussian_mixture(x, &dn, with_bg)) / (2.0 * h);
                        // differences of a function of size Σ|a| lose ~ε·Σ|a|/h to rounding
                        let total: f64 = peaks.iter().map(|p| p.0).sum::<f64>() + bg.abs();
                        let scale = grad[k].abs().max(1e-3 * total / params[k].abs().max(1.0)).max(1e-8);
                        prop_assert!((fd - grad[k]).abs() <= 1e-6 * scale, "param {k}: fd {fd} vs {}", grad[k]);
                    }
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );

    let pass = failures.is_empty();
    let detail = if pass {
        "Mueller–Jones, Stokes physicality, R+T=1, density matrix, Jacobian vs FD: 512 cases each".to_string()
    } else {
        failures.join("; ")
    };
    outcome(pass, detail)
}

fn main() {
    // libtest-style flags (e.g. --nocapture) are accepted and ignored
    let criteria: [(&str, Option<Duration>, fn() -> Outcome); 8] = [
        ("noiseless round trip", Some(Duration::from_secs(5)), noiseless_round_trip),
        ("centroid resolution", Some(Duration::from_secs(30)), centroid_resolution),
        ("noisy FSS recovery", Some(Duration::from_secs(60)), noisy_recovery),
        ("ensemble statistics", None, ensemble_statistics),
        ("beam-steering and retarder robustness", None, robustness),
        ("entanglement", None, entanglement),
        ("cavity", Some(Duration::from_secs(5)), cavity),
        ("property suites", None, property_suites),
    ];
    let mut failed = 0;
    for (k, (name, budget, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let mut o = run();
        let elapsed = t.elapsed();
        if let Some(b) = budget {
            if elapsed > *b {
                o.pass = false;
                o.detail.push_str(&format!("; over the {} s budget", b.as_secs()));
            }
        }
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} [{}] {name}: {} ({:.2} s)",
            if o.pass { "PASS" } else { "FAIL" },
            k + 1,
            o.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
