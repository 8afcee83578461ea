//! The computations behind each subcommand, returning in-memory results and
//! writing their files through a [`Workspace`].

use anyhow::{bail, Context};
use bhscatter::fluct::{
    autocorrelation, exponential_test, histogram, ks_standard_normal, lorentzian_fit, moments, normalize_by_local_mean,
    Autocorrelation, ExponentialTest, KsTest, LorentzianFit, LorentzianOptions, Moments,
};
use bhscatter::fock::{build_basis, build_hamiltonian, number_operator, site_one_reflection, BhParams, FockBasis};
use bhscatter::meanfield::{
    beta_vs_gamma_scan, integrate, sample_energy_shell, split_seed, state_distance, ClassicalState, Condensate, Drift, GammaRow,
    GammaScan, MeanfieldParams,
};
use bhscatter::scatter::{energy_scan, uniform_grid, ScanRequest, ScatterParams};
use bhscatter::spectral::{diagonalize, q_matrix, symmetry_adapt, unfold, IndexBlock, Spectrum};
use faer::Mat;
use log::info;
use serde::Serialize;

use crate::config::{AnalysisConfig, ModelConfig, RunConfig};
use crate::output::{Table, Workspace};

/// Diagonalised target with its `Q = n_1` matrix.
pub struct Target {
    pub basis: FockBasis,
    pub params: BhParams,
    pub spectrum: Spectrum,
    /// Reflection-parity labels when the lattice has the symmetry.
    pub labels: Option<Vec<u32>>,
    pub q: Mat<f64>,
}

impl Target {
    pub fn width(&self) -> f64 {
        self.spectrum.width()
    }

    pub fn spacing(&self, block: [usize; 2]) -> anyhow::Result<f64> {
        Ok(self.spectrum.mean_spacing(block[0]..block[1] + 1)?)
    }
}

pub fn prepare(model: &ModelConfig) -> anyhow::Result<Target> {
    let basis = build_basis(model.particles, model.sites)?;
    let u = 2.0 * model.control * model.tunneling / model.particles.max(1) as f64;
    let params = BhParams::new(u, model.tunneling, model.particles, model.boundary)?;
    let spectrum = diagonalize(&build_hamiltonian(&basis, &params)?)?;
    let (spectrum, labels) = match site_one_reflection(&basis, model.boundary) {
        Some(perm) => {
            let tol = 1e-8 * spectrum.width().max(model.tunneling);
            let (s, l) = symmetry_adapt(&spectrum, &perm, tol)?;
            (s, Some(l))
        }
        None => (spectrum, None),
    };
    let q = q_matrix(&spectrum, &number_operator(&basis, 1)?)?;
    Ok(Target { basis, params, spectrum, labels, q })
}

// ---------------------------------------------------------------- spectrum

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumSummary {
    pub basis_size: usize,
    pub e_min: f64,
    pub e_max: f64,
    pub width: f64,
    /// Mean level spacing over `spacing_block`, in K.
    pub spacing: f64,
    pub spacing_block: [usize; 2],
    pub orthogonality_error: f64,
}

pub fn spectrum(cfg: &RunConfig, target: &Target, ws: &Workspace) -> anyhow::Result<SpectrumSummary> {
    let e = target.spectrum.energies();
    let summary = SpectrumSummary {
        basis_size: target.basis.len(),
        e_min: e[0],
        e_max: e[e.len() - 1],
        width: target.width(),
        spacing: target.spacing(cfg.analysis.spacing_block)?,
        spacing_block: cfg.analysis.spacing_block,
        orthogonality_error: target.spectrum.orthogonality_error(),
    };
    let mut t = Table::new(["index", "energy", "energy_per_particle", "parity_label"]);
    let n = target.params.particles as f64;
    for (i, &en) in e.iter().enumerate() {
        let label = target.labels.as_ref().map_or(f64::NAN, |l| l[i] as f64);
        t.push(vec![i as f64, en, en / n, label]);
    }
    ws.table("spectrum.csv", &t, &summary)?;

    let dim = target.q.nrows();
    let mut qt = Table::new((0..dim).map(|j| format!("q{j}")));
    for i in 0..dim {
        qt.push((0..dim).map(|j| target.q[(i, j)]).collect());
    }
    ws.table("qmatrix.csv", &qt, serde_json::json!({ "rows": "eigenstate n", "columns": "eigenstate m", "operator": "n_1" }))?;
    ws.json("summary.json", &summary)?;
    Ok(summary)
}

// ------------------------------------------------------------------ unfold

#[derive(Debug, Clone, Serialize)]
pub struct UnfoldSummary {
    pub block: [usize; 2],
    pub half_width: usize,
    pub elements: usize,
    pub moments: Moments,
    pub ks: KsTest,
    pub ks_passes_1pct: bool,
    pub bins: usize,
}

pub fn unfold_q(cfg: &RunConfig, target: &Target, ws: &Workspace) -> anyhow::Result<UnfoldSummary> {
    let a = &cfg.analysis;
    let block = IndexBlock::square(a.unfold_block[0]..a.unfold_block[1] + 1);
    let u = unfold(&target.q, &block, a.unfold_half_width, a.unfold_shape, target.labels.as_deref())?;
    let values = u.values();
    let moments = moments(&values)?;
    let ks = ks_standard_normal(&values)?;
    let hist = histogram(&values, None)?;
    let summary = UnfoldSummary {
        block: a.unfold_block,
        half_width: a.unfold_half_width,
        elements: values.len(),
        moments,
        ks_passes_1pct: ks.passes_1pct(),
        ks,
        bins: hist.counts.len(),
    };
    let mut t = Table::new(["q_tilde", "density", "count", "normal_density"]);
    for ((c, d), n) in hist.centers().iter().zip(&hist.density).zip(&hist.counts) {
        t.push(vec![*c, *d, *n as f64, (-0.5 * c * c).exp() / (2.0 * std::f64::consts::PI).sqrt()]);
    }
    ws.table("unfold_histogram.csv", &t, &summary)?;
    ws.json("unfold.json", &summary)?;
    Ok(summary)
}

// -------------------------------------------------------------------- scan

/// Energy grid and scattering parameters of one scan.
#[derive(Debug, Clone, Serialize)]
pub struct ScanSetup {
    pub hopping: f64,
    pub coupling: f64,
    pub alpha: f64,
    pub center: f64,
    pub step: f64,
    pub points: usize,
}

impl ScanSetup {
    pub fn params(&self) -> anyhow::Result<ScatterParams> {
        Ok(ScatterParams::new(self.hopping, self.coupling, self.alpha)?)
    }

    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.center - 0.5 * self.step * (self.points - 1) as f64, self.step, self.points)
    }
}

/// Middle of the central 90% of the strength that the channels in
/// `channels` carry over the resonances, the eigenstates of
/// `H + alpha Q / (1 - gamma)`.
pub fn resonance_center(target: &Target, alpha: f64, coupling: f64, channels: [usize; 2]) -> anyhow::Result<f64> {
    let e = target.spectrum.energies();
    let dim = e.len();
    let g = alpha / (1.0 - coupling).max(f64::EPSILON);
    let h = Mat::<f64>::from_fn(dim, dim, |i, j| g * target.q[(i, j)] + if i == j { e[i] } else { 0.0 });
    let res = diagonalize(&h)?;
    let v = res.vectors();
    let count = (channels[1] - channels[0] + 1) as f64;
    let mut acc = 0.0;
    let (mut lo, mut hi) = (None, None);
    for (k, &ek) in res.energies().iter().enumerate() {
        acc += (channels[0]..=channels[1]).map(|m| v[(m, k)].powi(2)).sum::<f64>() / count;
        if lo.is_none() && acc >= 0.05 {
            lo = Some(ek);
        }
        if hi.is_none() && acc >= 0.95 {
            hi = Some(ek);
        }
    }
    match (lo, hi) {
        (Some(a), Some(b)) => Ok(0.5 * (a + b)),
        _ => bail!("channel strength does not sum to one"),
    }
}

pub fn scan_setup(cfg: &RunConfig, target: &Target, coupling: f64, alpha: f64) -> anyhow::Result<ScanSetup> {
    let hopping = cfg.scattering.hopping.resolve(target.width());
    let center = match cfg.grid.center {
        Some(c) => c,
        None => resonance_center(target, alpha, coupling, cfg.analysis.channels)?,
    };
    let step = match cfg.grid.step {
        Some(s) => s,
        None => cfg.grid.spacing_fraction * target.spacing(cfg.analysis.spacing_block)?,
    };
    Ok(ScanSetup { hopping, coupling, alpha, center, step, points: cfg.grid.points })
}

/// Observables on an energy grid, one entry per grid point.
#[derive(Debug, Clone)]
pub struct ScanData {
    pub setup: ScanSetup,
    pub energies: Vec<f64>,
    pub open_channels: Vec<f64>,
    pub mean_transmission: Vec<f64>,
    pub max_transmission: Vec<f64>,
    pub mean_inelastic: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
    /// `sigma[k][i]` for pair `k` at grid point `i`.
    pub sigma: Vec<Vec<f64>>,
    pub failures: Vec<(f64, String)>,
}

pub fn request(a: &AnalysisConfig) -> ScanRequest {
    ScanRequest {
        incoming: (a.channels[0]..=a.channels[1]).collect(),
        pairs: (a.incoming[0]..=a.incoming[1]).map(|m| (a.outgoing, m)).collect(),
    }
}

pub fn run_scan(target: &Target, setup: &ScanSetup, req: &ScanRequest) -> anyhow::Result<ScanData> {
    let params = setup.params()?;
    let grid = setup.grid();
    let n = grid.len();
    let mut data = ScanData {
        setup: setup.clone(),
        energies: grid.clone(),
        open_channels: Vec::with_capacity(n),
        mean_transmission: Vec::with_capacity(n),
        max_transmission: Vec::with_capacity(n),
        mean_inelastic: Vec::with_capacity(n),
        pairs: req.pairs.clone(),
        sigma: vec![Vec::with_capacity(n); req.pairs.len()],
        failures: Vec::new(),
    };
    let chunk = n.div_ceil(16).max(1);
    for (c, part) in grid.chunks(chunk).enumerate() {
        for (e, r) in part.iter().zip(energy_scan(target.spectrum.energies(), &target.q, &params, part, req)) {
            match r {
                Ok(p) => {
                    data.open_channels.push(p.open_channels as f64);
                    data.mean_transmission.push(p.mean_transmission());
                    data.max_transmission.push(p.transmission.iter().cloned().fold(0.0, f64::max));
                    data.mean_inelastic.push(p.mean_inelastic());
                    for (s, v) in data.sigma.iter_mut().zip(&p.cross_sections) {
                        s.push(*v);
                    }
                }
                Err(err) => {
                    data.failures.push((*e, err.to_string()));
                    for v in [&mut data.open_channels, &mut data.mean_transmission, &mut data.max_transmission, &mut data.mean_inelastic] {
                        v.push(f64::NAN);
                    }
                    for s in data.sigma.iter_mut() {
                        s.push(f64::NAN);
                    }
                }
            }
        }
        let level = if n >= 4096 { log::Level::Info } else { log::Level::Debug };
        log::log!(level, "scan gamma={} alpha={}: {}/{} points", setup.coupling, setup.alpha, ((c + 1) * chunk).min(n), n);
    }
    Ok(data)
}

#[derive(Debug, Serialize)]
struct ScanMeta<'a> {
    setup: &'a ScanSetup,
    channels: [usize; 2],
    pairs: &'a [(usize, usize)],
    failures: &'a [(f64, String)],
}

pub fn write_scan(ws: &Workspace, name: &str, data: &ScanData, channels: [usize; 2]) -> anyhow::Result<()> {
    let mut header = vec!["energy".to_string(), "energy_over_j".into(), "open_channels".into()];
    header.extend(["mean_transmission".into(), "max_transmission".into(), "mean_inelastic".into()]);
    header.extend(data.pairs.iter().map(|(n, m)| format!("sigma_{n}_{m}")));
    let mut t = Table::new(header);
    for i in 0..data.energies.len() {
        let mut row = vec![data.energies[i], data.energies[i] / data.setup.hopping, data.open_channels[i]];
        row.extend([data.mean_transmission[i], data.max_transmission[i], data.mean_inelastic[i]]);
        row.extend(data.sigma.iter().map(|s| s[i]));
        t.push(row);
    }
    let meta = ScanMeta { setup: &data.setup, channels, pairs: &data.pairs, failures: &data.failures };
    ws.table(name, &t, meta)
}

/// Reload a scan written by [`write_scan`] if it was produced with `setup`.
pub fn load_scan(ws: &Workspace, name: &str, setup: &ScanSetup, req: &ScanRequest) -> Option<ScanData> {
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ws.path(&format!("{name}.json"))).ok()?).ok()?;
    let stored = &meta["details"]["setup"];
    let same = serde_json::to_value(setup).ok()? == *stored && serde_json::to_value(&req.pairs).ok()? == meta["details"]["pairs"];
    if !same {
        return None;
    }
    let t = Table::read(&ws.path(name)).ok()?;
    let sigma = req.pairs.iter().map(|(n, m)| t.column(&format!("sigma_{n}_{m}"))).collect::<Option<Vec<_>>>()?;
    Some(ScanData {
        setup: setup.clone(),
        energies: t.column("energy")?,
        open_channels: t.column("open_channels")?,
        mean_transmission: t.column("mean_transmission")?,
        max_transmission: t.column("max_transmission")?,
        mean_inelastic: t.column("mean_inelastic")?,
        pairs: req.pairs.clone(),
        sigma,
        failures: serde_json::from_value(meta["details"]["failures"].clone()).ok()?,
    })
}

// ------------------------------------------------------------- alpha sweep

#[derive(Debug, Clone, Serialize)]
pub struct AlphaRow {
    pub alpha: f64,
    /// `int dE <rho_in> / J` over the grid.
    pub integrated_inelastic: f64,
    pub mean_transmission: f64,
}

/// `<rho_in>` integrated over a fixed energy interval for every `alpha`. The
/// interval is the one the main grid covers at the configured `alpha`,
/// sampled with `alpha_points` points.
pub fn alpha_sweep(cfg: &RunConfig, target: &Target, ws: &Workspace) -> anyhow::Result<Vec<AlphaRow>> {
    let base = scan_setup(cfg, target, cfg.scattering.coupling, cfg.scattering.alpha)?;
    let span = base.step * (base.points - 1) as f64;
    let points = cfg.analysis.alpha_points;
    let mut req = request(&cfg.analysis);
    req.pairs.clear();
    let mut rows = Vec::new();
    for &alpha in &cfg.analysis.alpha_values {
        let setup = ScanSetup { alpha, step: span / (points - 1) as f64, points, ..base.clone() };
        let data = run_scan(target, &setup, &req)?;
        if !data.failures.is_empty() {
            bail!("alpha sweep at alpha = {alpha}: {} failed grid points, first at E = {}", data.failures.len(), data.failures[0].0);
        }
        // trapezoid in units of J
        let h = setup.step / setup.hopping;
        let rho = &data.mean_inelastic;
        let integral = h * (rho.iter().sum::<f64>() - 0.5 * (rho[0] + rho[rho.len() - 1]));
        let mean_t = data.mean_transmission.iter().sum::<f64>() / data.mean_transmission.len() as f64;
        rows.push(AlphaRow { alpha, integrated_inelastic: integral, mean_transmission: mean_t });
    }
    let mut t = Table::new(["alpha", "integrated_inelastic", "mean_transmission"]);
    for r in &rows {
        t.push(vec![r.alpha, r.integrated_inelastic, r.mean_transmission]);
    }
    ws.table("alpha_sweep.csv", &t, serde_json::json!({ "grid": base, "points": points, "channels": cfg.analysis.channels }))?;
    Ok(rows)
}

// ----------------------------------------------------------------- ericson

#[derive(Debug, Clone, Serialize)]
pub struct EricsonResult {
    pub coupling: f64,
    /// Autocorrelation windows, energy ranges in K.
    pub windows: Vec<(f64, f64)>,
    /// Window length in units of `J`.
    pub window: f64,
    pub pairs: Vec<(usize, usize)>,
    /// Lag grid in units of `J`.
    pub lags: Vec<f64>,
    /// `C(eps) / sigma_bar^2` averaged over pairs and windows.
    pub correlation: Vec<f64>,
    pub fit: LorentzianFit,
    /// Lorentzian half width in units of `J`.
    pub gamma: f64,
    /// Mean level spacing in units of `J`.
    pub spacing: f64,
    pub gamma_over_spacing: f64,
    pub exponential: ExponentialSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentialSummary {
    pub samples: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub bins_used: usize,
}

/// Autocorrelation of the recorded cross sections over `windows` adjacent
/// windows centred in the scan, averaged over pairs and windows, and the
/// distribution of `sigma / sigma_bar` inside the same windows.
///
/// Each series enters as `C(eps) / sigma_bar^2` with `sigma_bar` its window
/// mean, which puts all pairs on one scale without dividing by the noisy
/// `C(0)` of each window. The Lorentzian model carries the offset left by
/// subtracting the window mean.
pub fn ericson(data: &ScanData, a: &AnalysisConfig, spacing: f64) -> anyhow::Result<(EricsonResult, ExponentialTest)> {
    let j = data.setup.hopping;
    let step = data.setup.step / j;
    let n = data.energies.len();
    let wp = (a.window / step).round() as usize;
    let lp = (a.max_lag / step).floor() as usize;
    let need = a.windows * wp + lp;
    if need > n || lp < 2 {
        bail!(
            "scan of {n} points at step {step:.3e} J cannot hold {} windows of {} J plus lags up to {} J",
            a.windows,
            a.window,
            a.max_lag
        );
    }
    if !data.failures.is_empty() {
        bail!("scan has {} failed grid points", data.failures.len());
    }
    let start = (n - need) / 2;
    let ranges: Vec<std::ops::Range<usize>> = (0..a.windows).map(|w| start + w * wp..start + (w + 1) * wp).collect();

    let mut runs: Vec<Autocorrelation> = Vec::new();
    for s in &data.sigma {
        for r in &ranges {
            runs.push(autocorrelation(s, step, r.clone(), lp)?);
        }
    }
    let k = lp + 1;
    let correlation: Vec<f64> =
        (0..k).map(|i| runs.iter().map(|r| r.raw[i] / (r.mean * r.mean)).sum::<f64>() / runs.len() as f64).collect();
    let lags = runs[0].lags.clone();
    let opts = LorentzianOptions {
        lag_cutoff: a.lag_cutoff,
        residual_threshold: a.residual_threshold,
        mean_window: Some(wp as f64 * step),
        ..Default::default()
    };
    let fit = lorentzian_fit(&lags, &correlation, &opts)?;

    // sigma / sigma_bar, sigma_bar the running mean over one window
    let mut samples = Vec::new();
    let region = start..start + a.windows * wp;
    for s in &data.sigma {
        let norm = normalize_by_local_mean(s, wp / 2);
        samples.extend_from_slice(&norm[region.clone()]);
    }
    let exp = exponential_test(&samples, a.min_bin_count)?;
    let spacing_j = spacing / j;
    let result = EricsonResult {
        coupling: data.setup.coupling,
        windows: ranges.iter().map(|r| (data.energies[r.start], data.energies[r.end - 1])).collect(),
        window: wp as f64 * step,
        pairs: data.pairs.clone(),
        lags,
        correlation,
        gamma: fit.gamma,
        spacing: spacing_j,
        gamma_over_spacing: fit.gamma / spacing_j,
        fit,
        exponential: ExponentialSummary {
            samples: samples.len(),
            slope: exp.slope,
            intercept: exp.intercept,
            r_squared: exp.r_squared,
            bins_used: exp.bins_used,
        },
    };
    Ok((result, exp))
}

pub fn write_ericson(ws: &Workspace, prefix: &str, r: &EricsonResult, exp: &ExponentialTest) -> anyhow::Result<()> {
    let offset = std::f64::consts::PI * r.fit.gamma / r.window;
    let mut t = Table::new(["lag_over_j", "correlation", "normalized", "fit"]);
    let c0 = r.correlation[0];
    for (e, c) in r.lags.iter().zip(&r.correlation) {
        let g2 = r.fit.gamma * r.fit.gamma;
        t.push(vec![*e, *c, c / c0, r.fit.amplitude * (g2 / (e * e + g2) - offset)]);
    }
    ws.table(&format!("{prefix}autocorrelation.csv"), &t, r)?;
    let h = &exp.histogram;
    let mut t = Table::new(["sigma_tilde", "density", "count", "exponential_density"]);
    for ((c, d), n) in h.centers().iter().zip(&h.density).zip(&h.counts) {
        t.push(vec![*c, *d, *n as f64, (-c).exp()]);
    }
    ws.table(&format!("{prefix}sigma_histogram.csv"), &t, &r.exponential)?;
    Ok(())
}

// --------------------------------------------------------------- meanfield

/// Mean-field parameters at the configured model, `J` and `alpha`.
pub fn meanfield_base(cfg: &RunConfig, target: &Target, coupling: f64) -> MeanfieldParams {
    let m = &cfg.model;
    let condensate = Condensate { interaction: 2.0 * m.control * m.tunneling, tunneling: m.tunneling, sites: m.sites, boundary: m.boundary };
    let mut p = MeanfieldParams {
        condensate,
        particles: m.particles as f64,
        alpha: cfg.scattering.alpha,
        hopping: cfg.scattering.hopping.resolve(target.width()),
        coupling,
        lead: 0,
        dt: 0.0,
        t_max: 0.0,
        stride: cfg.meanfield.stride,
        back_action: cfg.meanfield.back_action,
        light_cone: true,
    };
    p.dt = cfg.meanfield.dt.unwrap_or_else(|| p.auto_step());
    p
}

/// Per-particle energy the condensate is prepared at: `E_m / N` for the
/// middle channel of the analysed window.
pub fn target_energy(cfg: &RunConfig, target: &Target) -> (usize, f64) {
    let m = (cfg.analysis.channels[0] + cfg.analysis.channels[1]) / 2;
    (m, target.spectrum.energies()[m] / cfg.model.particles as f64)
}

/// Step-halving check of the integrator at `dt = 1e-3 / K`.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub params: MeanfieldParams,
    pub steps: [f64; 3],
    /// `|y(dt) - y(dt/2)|` and `|y(dt/2) - y(dt/4)|` over the whole state.
    pub differences: [f64; 2],
    pub ratio: f64,
    /// Change of `P(t_max)` between `dt` and `dt / 2`.
    pub survival_change: f64,
    pub drift: Drift,
    pub within_budget: bool,
}

/// Runs the configured trimer against a lead with `J = 10 K` and
/// `alpha N = 38 K`, slow enough that `dt = 1e-3 / K` satisfies the
/// integrator's step precondition.
pub fn convergence_check(cfg: &RunConfig, seed: u64) -> anyhow::Result<ConvergenceReport> {
    let m = &cfg.model;
    let condensate = Condensate { interaction: 2.0 * m.control * m.tunneling, tunneling: m.tunneling, sites: m.sites, boundary: m.boundary };
    let particles = m.particles as f64;
    let t_max = 10.0 / m.tunneling;
    let hopping = 10.0 * m.tunneling;
    let mut p = MeanfieldParams {
        condensate,
        particles,
        alpha: 38.0 * m.tunneling / particles,
        hopping,
        coupling: 0.01,
        lead: 0,
        dt: 1e-3 / m.tunneling,
        t_max,
        stride: 100,
        back_action: true,
        light_cone: true,
    };
    p.lead = p.min_lead();
    let ((lo, _), (hi, _)) = bhscatter::meanfield::energy_extremes(&condensate);
    let a = sample_energy_shell(&condensate, 0.5 * (lo + hi), split_seed(seed, u64::MAX))?;
    let start = ClassicalState::with_probe_at_center(a, p.lead);
    let steps = [p.dt, 0.5 * p.dt, 0.25 * p.dt];
    let runs = steps
        .iter()
        .map(|&dt| integrate(&start, &MeanfieldParams { dt, stride: (100.0 * p.dt / dt).round() as usize, ..p }))
        .collect::<Result<Vec<_>, _>>()?;
    let d1 = state_distance(&runs[0].final_state, &runs[1].final_state);
    let d2 = state_distance(&runs[1].final_state, &runs[2].final_state);
    let last = |k: usize| *runs[k].survival.last().unwrap_or(&0.0);
    Ok(ConvergenceReport {
        params: p,
        steps,
        differences: [d1, d2],
        ratio: d1 / d2,
        survival_change: (last(0) - last(1)).abs(),
        drift: runs[0].drift,
        within_budget: runs[0].within_budget,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MeanfieldResult {
    pub channel: usize,
    pub energy_per_particle: f64,
    pub hopping: f64,
    pub dt: f64,
    pub rows: Vec<GammaSummary>,
    pub convergence: ConvergenceReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaSummary {
    pub gamma: f64,
    pub t_max: f64,
    pub lead: usize,
    /// Mean decay constant in K and in units of `J`.
    pub beta: f64,
    pub beta_over_j: f64,
    pub beta_std: f64,
    pub fitted: usize,
    pub runs: usize,
    pub within_budget: usize,
}

pub fn meanfield(cfg: &RunConfig, target: &Target, ws: &Workspace) -> anyhow::Result<MeanfieldResult> {
    let mf = &cfg.meanfield;
    let (channel, energy) = target_energy(cfg, target);
    let base = meanfield_base(cfg, target, mf.gammas[0]);
    let scan = GammaScan {
        energy,
        initial_conditions: mf.ensemble,
        t_scale: mf.t_scale,
        fit_window: (mf.fit_window[0], mf.fit_window[1]),
        lead: mf.lead,
    };
    let mut rows: Vec<GammaRow> = Vec::new();
    for &g in &mf.gammas {
        info!("mean field gamma={g}: {} trajectories", mf.ensemble);
        rows.extend(beta_vs_gamma_scan(&[g], &base, &scan, cfg.seed)?);
    }
    let convergence = convergence_check(cfg, cfg.seed)?;

    let mut summaries = Vec::new();
    for (gi, row) in rows.iter().enumerate() {
        let lead = row.runs.first().map_or(0, |r| r.trajectory.final_state.center());
        for (k, run) in row.runs.iter().enumerate() {
            let tr = &run.trajectory;
            let mut t = Table::new(["t", "survival", "condensate_norm", "probe_norm", "energy"]);
            for i in 0..tr.times.len() {
                t.push(vec![tr.times[i], tr.survival[i], tr.condensate_norm[i], tr.probe_norm[i], tr.energy[i]]);
            }
            let meta = serde_json::json!({
                "gamma": row.gamma, "seed": run.seed, "fit": run.fit, "drift": run.drift, "within_budget": run.within_budget,
                "dt": base.dt, "t_max": row.t_max, "lead": lead,
            });
            ws.table(&format!("trajectories/gamma{gi}_run{k:02}.csv"), &t, meta)?;
        }
        summaries.push(GammaSummary {
            gamma: row.gamma,
            t_max: row.t_max,
            lead,
            beta: row.beta_mean,
            beta_over_j: row.beta_mean / base.hopping,
            beta_std: row.beta_std,
            fitted: row.runs.iter().filter(|r| r.fit.is_some()).count(),
            runs: row.runs.len(),
            within_budget: row.runs.iter().filter(|r| r.within_budget).count(),
        });
    }
    let mut t = Table::new(["gamma", "t_max", "beta", "beta_over_j", "beta_std", "fitted", "within_budget"]);
    for s in &summaries {
        t.push(vec![s.gamma, s.t_max, s.beta, s.beta_over_j, s.beta_std, s.fitted as f64, s.within_budget as f64]);
    }
    let result = MeanfieldResult { channel, energy_per_particle: energy, hopping: base.hopping, dt: base.dt, rows: summaries, convergence };
    ws.table("beta_table.csv", &t, &result)?;
    ws.json("convergence.json", &result.convergence)?;
    Ok(result)
}

// ---------------------------------------------------------- widths vs gamma

/// Quantum width at one coupling.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct WidthRow {
    pub gamma: f64,
    pub width: f64,
    pub residual: f64,
    pub quality: bhscatter::fluct::FitQuality,
    pub points: usize,
    pub step: f64,
}

/// Grid for the width at `gamma`: `points_per_width` points per golden-rule
/// width `4 gamma J / (1 - gamma)`, long enough for the configured windows.
pub fn width_setup(cfg: &RunConfig, target: &Target, gamma: f64) -> anyhow::Result<ScanSetup> {
    let mut s = scan_setup(cfg, target, gamma, cfg.scattering.alpha)?;
    let estimate = 4.0 * gamma * s.hopping / (1.0 - gamma);
    s.step = estimate / cfg.meanfield.points_per_width;
    let a = &cfg.analysis;
    s.points = ((a.windows as f64 * a.window + a.max_lag) * s.hopping / s.step).ceil() as usize + 2;
    Ok(s)
}

pub fn quantum_widths(cfg: &RunConfig, target: &Target, main: Option<&EricsonResult>, ws: &Workspace) -> anyhow::Result<Vec<WidthRow>> {
    let spacing = target.spacing(cfg.analysis.spacing_block)?;
    let req = request(&cfg.analysis);
    let mut rows = Vec::new();
    for (gi, &gamma) in cfg.meanfield.gammas.iter().enumerate() {
        let reuse = main.filter(|r| r.coupling == gamma);
        let (r, points, step) = match reuse {
            Some(r) => (r.clone(), 0, 0.0),
            None => {
                let setup = width_setup(cfg, target, gamma)?;
                let data = run_scan(target, &setup, &req)?;
                let (r, exp) = ericson(&data, &cfg.analysis, spacing)?;
                write_ericson(ws, &format!("gamma{gi}_"), &r, &exp)?;
                (r, setup.points, setup.step)
            }
        };
        rows.push(WidthRow { gamma, width: r.gamma, residual: r.fit.residual, quality: r.fit.quality, points, step });
    }
    let mut t = Table::new(["gamma", "width_over_j", "residual", "points", "step"]);
    for r in &rows {
        t.push(vec![r.gamma, r.width, r.residual, r.points as f64, r.step]);
    }
    ws.table("widths.csv", &t, &rows)?;
    Ok(rows)
}

/// Least-squares slope of `beta = s Gamma` through the origin.
pub fn slope_through_origin(pairs: &[(f64, f64)]) -> f64 {
    let xy: f64 = pairs.iter().map(|(x, y)| x * y).sum();
    let xx: f64 = pairs.iter().map(|(x, _)| x * x).sum();
    xy / xx
}

#[derive(Debug, Clone, Serialize)]
pub struct Correspondence {
    /// `(gamma, Gamma / J, beta / J)`.
    pub rows: Vec<(f64, f64, f64)>,
    pub slope: f64,
}

pub fn correspondence(widths: &[WidthRow], mf: &MeanfieldResult, ws: &Workspace) -> anyhow::Result<Correspondence> {
    let mut rows = Vec::new();
    for w in widths {
        if let Some(b) = mf.rows.iter().find(|r| r.gamma == w.gamma) {
            rows.push((w.gamma, w.width, b.beta_over_j));
        }
    }
    let slope = slope_through_origin(&rows.iter().map(|r| (r.1, r.2)).collect::<Vec<_>>());
    let mut t = Table::new(["gamma", "width_over_j", "beta_over_j"]);
    for r in &rows {
        t.push(vec![r.0, r.1, r.2]);
    }
    let c = Correspondence { rows, slope };
    ws.table("gamma_beta.csv", &t, &c)?;
    Ok(c)
}

/// Reload the `Target` only once per process for commands that share it.
pub fn prepare_logged(cfg: &RunConfig) -> anyhow::Result<Target> {
    info!("diagonalising N={} L={} u={}", cfg.model.particles, cfg.model.sites, cfg.model.control);
    prepare(&cfg.model).context("preparing the target")
}

/// Seed of a named component: `split_seed(master, k)` with `k` the first
/// eight bytes of the SHA-256 of the name.
pub fn child_seed(master: u64, name: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let h = Sha256::digest(name.as_bytes());
    split_seed(master, u64::from_le_bytes(h[..8].try_into().expect("eight bytes")))
}
