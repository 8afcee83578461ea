//! Acceptance criteria and the end-to-end reproduction run.

use std::time::Instant;

use bhscatter::fluct::{classical_autocorr, exponential_decay_fit, lorentzian_fit, LorentzianOptions};
use bhscatter::fock::{build_basis, build_hamiltonian, BhParams, Boundary};
use bhscatter::scatter::{channels, s_transmission};
use bhscatter::spectral::diagonalize;
use log::info;
use rayon::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::output::{tree_digest, Workspace};
use crate::pipeline::{self, Correspondence, EricsonResult, MeanfieldResult, ScanData, SpectrumSummary, Target, UnfoldSummary};
use crate::pipeline::{AlphaRow, ConvergenceReport};

/// Files left out of the determinism digest: they hold wall-clock timings.
pub const REPORT_FILES: [&str; 2] = ["acceptance.json", "acceptance.txt"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NotRun,
}

#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub status: Status,
    pub measured: Value,
    pub tolerance: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Criterion {
    fn new(id: u8, name: &'static str, pass: bool, measured: Value, tolerance: impl Into<String>) -> Self {
        let status = if pass { Status::Pass } else { Status::Fail };
        Self { id, name, status, measured, tolerance: tolerance.into(), note: None }
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// One line: id, status, measured value and tolerance.
    pub fn line(&self) -> String {
        let status = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::NotRun => "NOT RUN",
        };
        format!("[{status:>7}] {:>2}. {}: measured {} (tolerance: {})", self.id, self.name, self.measured, self.tolerance)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub criteria: Vec<Criterion>,
    /// SHA-256 over the data files of the run.
    pub digest: String,
    /// Seconds per stage.
    pub timings: Vec<(String, f64)>,
}

impl Report {
    pub fn text(&self) -> String {
        let mut s = String::new();
        for c in &self.criteria {
            s.push_str(&c.line());
            s.push('\n');
            if let Some(n) = &c.note {
                s.push_str(&format!("           {n}\n"));
            }
        }
        s.push_str(&format!("digest {}\n", self.digest));
        for (stage, t) in &self.timings {
            s.push_str(&format!("time {stage}: {t:.1} s\n"));
        }
        s
    }

    pub fn get(&self, id: u8) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.id == id)
    }
}

pub fn basis_size() -> Criterion {
    let n = build_basis(38, 3).map(|b| b.len()).unwrap_or(0);
    Criterion::new(1, "basis size N=38 L=3", n == 780, json!(n), "exactly 780")
}

pub fn spectral_width(s: &SpectrumSummary, cfg: &RunConfig) -> Criterion {
    let rel = (s.width - 211.0).abs() / 211.0;
    let c = Criterion::new(2, "spectral width E_max - E_min", rel <= 0.02, json!({ "width": s.width, "relative_error": rel }), "211 K within 2%");
    c.note(format!("boundary {:?}, u={}", cfg.model.boundary, cfg.model.control))
}

/// `N = 2`, `L = 2` against `{U, (U +- sqrt(U^2 + 16 K^2)) / 2}` for ten
/// random `(U, K)`.
pub fn small_instance(seed: u64) -> Criterion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = build_basis(2, 2).expect("two bosons on two sites");
    let mut worst = 0.0f64;
    let mut failed = None;
    for _ in 0..10 {
        let u: f64 = rng.random_range(-10.0..10.0);
        let k: f64 = rng.random_range(0.1..5.0);
        let got = BhParams::new(u, k, 2, Boundary::Open)
            .and_then(|p| build_hamiltonian(&basis, &p))
            .and_then(|h| diagonalize(&h));
        match got {
            Ok(s) => {
                let r = (u * u + 16.0 * k * k).sqrt();
                let mut want = [u, 0.5 * (u + r), 0.5 * (u - r)];
                want.sort_by(f64::total_cmp);
                for (a, b) in s.energies().iter().zip(want) {
                    worst = worst.max((a - b).abs());
                }
            }
            Err(e) => failed = Some(e.to_string()),
        }
    }
    let c = Criterion::new(3, "N=2 L=2 analytic eigenvalues", failed.is_none() && worst <= 1e-12, json!(worst), "1e-12 absolute");
    match failed {
        Some(e) => c.note(e),
        None => c,
    }
}

pub fn q_statistics(u: &UnfoldSummary) -> Criterion {
    let var = u.moments.variance;
    let pass = u.ks_passes_1pct && (var - 1.0).abs() <= 0.1;
    Criterion::new(
        4,
        "unfolded Q statistics",
        pass,
        json!({ "ks_statistic": u.ks.statistic, "ks_p_value": u.ks.p_value, "variance": var, "elements": u.elements }),
        "KS vs N(0,1) not rejected at 1%, variance 1 +- 0.1",
    )
}

pub fn unitarity(scan: &ScanData, reciprocity: &ReciprocityCheck) -> Criterion {
    let max = scan.max_transmission.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ok = scan.failures.is_empty() && scan.max_transmission.iter().all(|t| t.is_finite()) && max <= 1.0 + 1e-9;
    let all = reciprocity.max_transmission_all;
    Criterion::new(
        5,
        "unitarity bound max_m T_m",
        ok && all <= 1.0 + 1e-9,
        json!({ "scan_points": scan.energies.len(), "max_recorded": max, "max_all_channels_spot": all, "failed_points": scan.failures.len() }),
        "<= 1 + 1e-9",
    )
    .note("grid maximum over the recorded channels; all open channels checked at the reciprocity energies")
}

#[derive(Debug, Clone, Serialize)]
pub struct ReciprocityCheck {
    pub energies: usize,
    pub max_asymmetry: f64,
    pub max_transmission_all: f64,
    pub errors: Vec<String>,
}

/// Full open-channel transmission block at `count` random energies of the
/// main grid.
pub fn reciprocity_check(target: &Target, data: &ScanData, seed: u64, count: usize) -> anyhow::Result<ReciprocityCheck> {
    let params = data.setup.params()?;
    let (lo, hi) = (data.energies[0], data.energies[data.energies.len() - 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let energies: Vec<f64> = (0..count).map(|_| rng.random_range(lo..hi)).collect();
    let levels = target.spectrum.energies();
    let one = |e: f64| -> Result<(f64, f64), String> {
        let ch = channels(levels, e, &params);
        let s = s_transmission(&target.q, &ch, &params).map_err(|err| format!("E = {e}: {err}"))?;
        let a = s.amplitudes();
        let n = a.nrows();
        let mut asym = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                asym = asym.max((a[(i, j)] - a[(j, i)]).norm());
            }
        }
        let tmax = (0..n).map(|j| (0..n).map(|i| a[(i, j)].norm_sqr()).sum::<f64>()).fold(0.0, f64::max);
        Ok((asym, tmax))
    };
    let results: Vec<_> = energies.par_iter().map(|&e| one(e)).collect();
    let mut check = ReciprocityCheck { energies: count, max_asymmetry: 0.0, max_transmission_all: 0.0, errors: Vec::new() };
    for r in results {
        match r {
            Ok((a, t)) => {
                check.max_asymmetry = check.max_asymmetry.max(a);
                check.max_transmission_all = check.max_transmission_all.max(t);
            }
            Err(e) => check.errors.push(e),
        }
    }
    Ok(check)
}

pub fn reciprocity(r: &ReciprocityCheck) -> Criterion {
    Criterion::new(
        6,
        "reciprocity |S_T - S_T^T|_max",
        r.errors.is_empty() && r.max_asymmetry < 1e-9,
        json!({ "energies": r.energies, "max_asymmetry": r.max_asymmetry, "errors": r.errors.len() }),
        "< 1e-9",
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaShape {
    pub argmax: f64,
    pub local_maxima: usize,
    pub interior: bool,
    /// End values relative to the maximum.
    pub ends: (f64, f64),
}

pub fn alpha_shape(rows: &[AlphaRow]) -> AlphaShape {
    let v: Vec<f64> = rows.iter().map(|r| r.integrated_inelastic).collect();
    let k = (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
    let local_maxima = (0..v.len())
        .filter(|&i| (i == 0 || v[i] > v[i - 1]) && (i + 1 == v.len() || v[i] > v[i + 1]))
        .count();
    let max = v[k];
    AlphaShape {
        argmax: rows[k].alpha,
        local_maxima,
        interior: k > 0 && k + 1 < v.len(),
        ends: (v[0] / max, v[v.len() - 1] / max),
    }
}

pub fn alpha_sweep(rows: &[AlphaRow]) -> Criterion {
    let s = alpha_shape(rows);
    let near = s.argmax >= 5.0 / 3.0 && s.argmax <= 15.0;
    let pass = s.interior && s.local_maxima == 1 && near && s.ends.0 < 0.1 && s.ends.1 < 0.1;
    Criterion::new(
        7,
        "alpha sweep of integrated rho_in",
        pass,
        serde_json::to_value(&s).unwrap_or(Value::Null),
        "one interior maximum, argmax in [5/3, 15] K, both ends below 10% of the maximum",
    )
}

pub fn exponential(r: &EricsonResult) -> Criterion {
    let s = r.exponential.slope;
    Criterion::new(
        8,
        "exponential distribution of sigma~",
        (s + 1.0).abs() <= 0.15,
        json!({ "slope": s, "samples": r.exponential.samples, "pairs": r.pairs.len(), "r_squared": r.exponential.r_squared }),
        "log-density slope -1 +- 0.15",
    )
}

pub fn ericson_width(r: &EricsonResult, threshold: f64) -> Criterion {
    let g = r.gamma;
    let pass = (3.7e-3 / 2.0..=7.4e-3).contains(&g) && r.gamma_over_spacing > 3.0 && r.fit.residual < threshold;
    Criterion::new(
        9,
        "Ericson width",
        pass,
        json!({ "gamma_over_j": g, "gamma_over_spacing": r.gamma_over_spacing, "residual": r.fit.residual, "quality": r.fit.quality }),
        format!("Gamma in [1.85e-3, 7.4e-3] J, Gamma/Delta > 3, residual < {threshold}"),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct SyntheticFits {
    pub lorentzian_error: f64,
    pub decay_error: f64,
    pub autocorr_error: f64,
}

/// Fits on exact synthetic input.
pub fn synthetic_fits() -> anyhow::Result<SyntheticFits> {
    let g0 = 3.7e-3;
    let lags: Vec<f64> = (0..400).map(|i| i as f64 * 1e-4).collect();
    let vals: Vec<f64> = lags.iter().map(|e| 2.0 * g0 * g0 / (e * e + g0 * g0)).collect();
    let fit = lorentzian_fit(&lags, &vals, &LorentzianOptions::default())?;

    let b0 = 0.37;
    let times: Vec<f64> = (0..2000).map(|i| i as f64 * 0.01).collect();
    let p: Vec<f64> = times.iter().map(|t| (-b0 * t).exp()).collect();
    let decay = exponential_decay_fit(&times, &p, 1e-3, 0.99)?;

    let beta = 1.0;
    let dt = 0.1 / beta;
    let p: Vec<f64> = (0..4000).map(|i| (-beta * i as f64 * dt).exp()).collect();
    let eps: Vec<f64> = (0..=40).map(|i| i as f64 * 0.1).collect();
    let c = classical_autocorr(&p, dt, &eps)?;
    let autocorr_error =
        c.values.iter().zip(&eps).map(|(v, e)| (v * (e * e + beta * beta) - 1.0).abs()).fold(0.0, f64::max);
    Ok(SyntheticFits {
        lorentzian_error: (fit.gamma - g0).abs() / g0,
        decay_error: (decay.beta - b0).abs() / b0,
        autocorr_error,
    })
}

pub fn synthetic(s: &anyhow::Result<SyntheticFits>) -> Criterion {
    match s {
        Ok(s) => Criterion::new(
            10,
            "synthetic fit oracles",
            s.lorentzian_error <= 1e-6 && s.decay_error <= 1e-9 && s.autocorr_error <= 0.01,
            serde_json::to_value(s).unwrap_or(Value::Null),
            "Lorentzian 1e-6, decay 1e-9, classical autocorrelation 1% (relative)",
        ),
        Err(e) => Criterion::new(10, "synthetic fit oracles", false, Value::Null, "fits succeed").note(e.to_string()),
    }
}

pub fn integrator(c: &ConvergenceReport) -> Criterion {
    let norm = c.drift.condensate_norm.max(c.drift.probe_norm);
    let pass = norm < 1e-8 && c.drift.energy < 1e-7 && (c.ratio - 16.0).abs() <= 4.0;
    Criterion::new(
        11,
        "mean-field integrator",
        pass,
        json!({ "dt": c.steps[0], "norm_drift": norm, "energy_drift": c.drift.energy, "halving_ratio": c.ratio }),
        "norm drift < 1e-8, energy drift < 1e-7 per unit time, step-halving ratio 16 +- 4",
    )
    .note(format!("J={} K, gamma={}, alpha N={} K, t_max={}", c.params.hopping, c.params.coupling, c.params.alpha * c.params.particles, c.params.t_max))
}

pub fn correspondence(c: &Correspondence) -> Criterion {
    let in_range = c.rows.iter().filter(|r| (3e-4..=3e-3).contains(&r.0)).count();
    let pass = in_range >= 4 && (0.7..=1.2).contains(&c.slope);
    Criterion::new(
        12,
        "semiclassical correspondence beta = s Gamma",
        pass,
        json!({ "slope": c.slope, "points": c.rows }),
        "at least 4 couplings in [3e-4, 3e-3], slope in [0.7, 1.2]",
    )
}

pub fn determinism(digest: &str, reference: Option<&str>) -> Criterion {
    match reference {
        Some(r) => Criterion::new(13, "determinism", r == digest, json!({ "digest": digest, "reference": r }), "identical data digest"),
        None => Criterion {
            id: 13,
            name: "determinism",
            status: Status::NotRun,
            measured: json!({ "digest": digest }),
            tolerance: "identical data digest across two runs".into(),
            note: Some("pass a reference run to compare".into()),
        },
    }
}

/// Everything the figures need plus the acceptance report, below `ws.dir`.
/// `reference` is the data digest of an earlier run to compare against.
pub fn reproduce(cfg: &RunConfig, ws: &Workspace, reference: Option<&str>) -> anyhow::Result<Report> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>| {
        timings.push((name.to_string(), clock.elapsed().as_secs_f64()));
        info!("{name} done in {:.1} s", clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let target = pipeline::prepare_logged(cfg)?;
    let spectrum = pipeline::spectrum(cfg, &target, &ws.sub("spectrum"))?;
    let unfold = pipeline::unfold_q(cfg, &target, &ws.sub("unfold"))?;
    lap("spectrum", &mut timings);

    let setup = pipeline::scan_setup(cfg, &target, cfg.scattering.coupling, cfg.scattering.alpha)?;
    let req = pipeline::request(&cfg.analysis);
    let scan_ws = ws.sub("scan");
    let scan = pipeline::run_scan(&target, &setup, &req)?;
    pipeline::write_scan(&scan_ws, "scan.csv", &scan, cfg.analysis.channels)?;
    lap("scan", &mut timings);

    let recip = reciprocity_check(&target, &scan, pipeline::child_seed(cfg.seed, "reciprocity"), 100)?;
    scan_ws.json("reciprocity.json", &recip)?;
    lap("reciprocity", &mut timings);

    let alpha = pipeline::alpha_sweep(cfg, &target, &ws.sub("alpha_sweep"))?;
    lap("alpha sweep", &mut timings);

    let ericson_ws = ws.sub("ericson");
    let (ericson, exp) = pipeline::ericson(&scan, &cfg.analysis, spectrum.spacing)?;
    pipeline::write_ericson(&ericson_ws, "", &ericson, &exp)?;
    ericson_ws.json("ericson.json", &ericson)?;
    let widths = pipeline::quantum_widths(cfg, &target, Some(&ericson), &ericson_ws)?;
    lap("ericson", &mut timings);

    let mf_ws = ws.sub("meanfield");
    let mf: MeanfieldResult = pipeline::meanfield(cfg, &target, &mf_ws)?;
    let corr = pipeline::correspondence(&widths, &mf, &mf_ws)?;
    lap("mean field", &mut timings);

    let digest = tree_digest(&ws.dir, &REPORT_FILES)?;
    let criteria = vec![
        basis_size(),
        spectral_width(&spectrum, cfg),
        small_instance(pipeline::child_seed(cfg.seed, "small-instance")),
        q_statistics(&unfold),
        unitarity(&scan, &recip),
        reciprocity(&recip),
        alpha_sweep(&alpha),
        exponential(&ericson),
        ericson_width(&ericson, cfg.analysis.residual_threshold),
        synthetic(&synthetic_fits()),
        integrator(&mf.convergence),
        correspondence(&corr),
        determinism(&digest, reference),
    ];
    let report = Report { criteria, digest, timings };
    ws.json("acceptance.json", &report)?;
    crate::output::write_atomic(&ws.path("acceptance.txt"), report.text().as_bytes())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_size_criteria_pass() {
        assert_eq!(basis_size().status, Status::Pass);
        assert_eq!(small_instance(7).status, Status::Pass);
        assert_eq!(synthetic(&synthetic_fits()).status, Status::Pass);
    }

    #[test]
    fn alpha_shape_finds_interior_peak() {
        let row = |alpha, v| AlphaRow { alpha, integrated_inelastic: v, mean_transmission: 0.0 };
        let rows = [row(0.1, 0.01), row(1.0, 0.5), row(5.0, 1.0), row(50.0, 0.3), row(500.0, 0.05)];
        let s = alpha_shape(&rows);
        assert_eq!(s.argmax, 5.0);
        assert_eq!(s.local_maxima, 1);
        assert!(s.interior);
        assert_eq!(alpha_sweep(&rows).status, Status::Pass);
        let rows = [row(0.1, 1.0), row(1.0, 0.5), row(5.0, 0.2)];
        assert_eq!(alpha_sweep(&rows).status, Status::Fail);
    }
}
