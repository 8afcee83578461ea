//! Run configuration: one JSON block per pipeline stage.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use bhscatter::fock::Boundary;
use bhscatter::spectral::WindowShape;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub scattering: ScatteringConfig,
    pub grid: GridConfig,
    pub analysis: AnalysisConfig,
    pub meanfield: MeanfieldConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            scattering: ScatteringConfig::default(),
            grid: GridConfig::default(),
            analysis: AnalysisConfig::default(),
            meanfield: MeanfieldConfig::default(),
            seed: 38,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub particles: usize,
    pub sites: usize,
    /// `u = U N / 2K`.
    pub control: f64,
    /// Hopping `K`, the energy unit.
    pub tunneling: f64,
    pub boundary: Boundary,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { particles: 38, sites: 3, control: 5.0, tunneling: 1.0, boundary: Boundary::default() }
    }
}

/// Lead hopping: an explicit value in K or the spectral width `W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Hopping {
    Value(f64),
    Rule(HoppingRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HoppingRule {
    SpectralWidth,
}

impl std::str::FromStr for Hopping {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        if s == "spectral-width" {
            return Ok(Hopping::Rule(HoppingRule::SpectralWidth));
        }
        s.parse::<f64>().map(Hopping::Value).with_context(|| format!("hopping must be a number or \"spectral-width\", got {s:?}"))
    }
}

impl Hopping {
    pub fn resolve(self, width: f64) -> f64 {
        match self {
            Hopping::Value(v) => v,
            Hopping::Rule(HoppingRule::SpectralWidth) => width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatteringConfig {
    /// `gamma = (J0 / J)^2`.
    pub coupling: f64,
    pub alpha: f64,
    pub hopping: Hopping,
}

impl Default for ScatteringConfig {
    fn default() -> Self {
        Self { coupling: 1e-3, alpha: 5.0, hopping: Hopping::Rule(HoppingRule::SpectralWidth) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub points: usize,
    /// Grid centre in K. Default: middle of the central 90% of the strength
    /// the analysed channels carry over the resonances.
    pub center: Option<f64>,
    /// Step in K. Default: `spacing_fraction` times the mean level spacing.
    pub step: Option<f64>,
    pub spacing_fraction: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { points: 1 << 14, center: None, step: None, spacing_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Inclusive range of incoming channels averaged in scans.
    pub channels: [usize; 2],
    /// Outgoing channel of the recorded cross sections.
    pub outgoing: usize,
    /// Inclusive range of incoming channels of the recorded cross sections.
    pub incoming: [usize; 2],
    /// Inclusive eigenstate range of the unfolded `Q` block.
    pub unfold_block: [usize; 2],
    pub unfold_half_width: usize,
    pub unfold_shape: WindowShape,
    /// Autocorrelation window in units of `J`.
    pub window: f64,
    /// Number of adjacent windows averaged.
    pub windows: usize,
    /// Largest autocorrelation lag in units of `J`; must stay below a
    /// quarter of the window.
    pub max_lag: f64,
    pub lag_cutoff: f64,
    pub residual_threshold: f64,
    /// Smallest histogram count used in the exponential fit.
    pub min_bin_count: u64,
    /// Level-spacing block, inclusive.
    pub spacing_block: [usize; 2],
    pub alpha_values: Vec<f64>,
    pub alpha_points: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            channels: [400, 430],
            outgoing: 400,
            incoming: [401, 415],
            unfold_block: [360, 500],
            unfold_half_width: 10,
            unfold_shape: WindowShape::Band,
            window: 0.2,
            windows: 2,
            max_lag: 0.045,
            lag_cutoff: 10.0,
            residual_threshold: 0.1,
            min_bin_count: 5,
            spacing_block: [360, 500],
            alpha_values: vec![0.1, 0.3, 1.0, 2.0, 3.5, 5.0, 7.0, 10.0, 20.0, 50.0, 150.0, 500.0],
            alpha_points: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanfieldConfig {
    /// RK4 step in `1/K`. Default: the largest step that keeps
    /// `dt * energy_scale <= 0.05`, capped at `1e-3`.
    pub dt: Option<f64>,
    /// `t_max = t_scale / (4 gamma J)`.
    pub t_scale: f64,
    /// Lead half length. Default: the smallest length the wavefront cannot
    /// cross within `t_max`.
    pub lead: Option<usize>,
    pub ensemble: usize,
    pub gammas: Vec<f64>,
    pub back_action: bool,
    pub stride: usize,
    pub fit_window: [f64; 2],
    /// Grid points per golden-rule width in the quantum scans that pair
    /// `Gamma` with `beta`.
    pub points_per_width: f64,
}

impl Default for MeanfieldConfig {
    fn default() -> Self {
        Self {
            dt: None,
            t_scale: 8.0,
            lead: None,
            ensemble: 20,
            gammas: vec![1e-3, 1.5e-3, 2e-3, 3e-3],
            back_action: true,
            stride: 50,
            fit_window: [0.01, 0.9],
            points_per_width: 25.0,
        }
    }
}

impl RunConfig {
    /// Reduced grids and ensembles for smoke runs and determinism checks.
    pub fn quick() -> Self {
        let mut c = Self::default();
        c.grid.points = 1024;
        c.grid.spacing_fraction = 0.2;
        c.analysis.windows = 1;
        c.analysis.window = 0.08;
        c.analysis.max_lag = 0.015;
        c.analysis.alpha_values = vec![0.1, 1.0, 5.0, 50.0, 500.0];
        c.analysis.alpha_points = 64;
        c.meanfield.ensemble = 2;
        c.meanfield.gammas = vec![2e-3, 3e-3];
        c.meanfield.t_scale = 6.0;
        c.meanfield.points_per_width = 8.0;
        c
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Every violated constraint, in one message.
    pub fn validate(&self) -> anyhow::Result<()> {
        let mut errs = Vec::new();
        let m = &self.model;
        let dim = bhscatter::fock::basis_dimension(m.particles, m.sites);
        if m.sites == 0 {
            errs.push("model.sites must be at least 1".to_string());
        }
        if !(m.tunneling > 0.0 && m.tunneling.is_finite()) {
            errs.push(format!("model.tunneling must be positive, got {}", m.tunneling));
        }
        if !m.control.is_finite() || m.control < 0.0 {
            errs.push(format!("model.control must be non-negative, got {}", m.control));
        }
        match dim {
            None => errs.push(format!("basis for {} particles on {} sites overflows", m.particles, m.sites)),
            Some(d) if d > 5000 => errs.push(format!("basis dimension {d} exceeds the dense limit 5000")),
            _ => {}
        }
        let dim = dim.unwrap_or(0);

        let s = &self.scattering;
        if !(s.coupling > 0.0 && s.coupling <= 1.0) {
            errs.push(format!("scattering.coupling must lie in (0, 1], got {}", s.coupling));
        }
        if !(s.alpha >= 0.0 && s.alpha.is_finite()) {
            errs.push(format!("scattering.alpha must be non-negative, got {}", s.alpha));
        }
        if let Hopping::Value(j) = s.hopping {
            if !(j > 0.0 && j.is_finite()) {
                errs.push(format!("scattering.hopping must be positive, got {j}"));
            }
        }

        let g = &self.grid;
        if g.points == 0 {
            errs.push("grid.points must be positive".into());
        }
        if let Some(step) = g.step {
            if !(step > 0.0) {
                errs.push(format!("grid.step must be positive, got {step}"));
            }
        }
        if !(g.spacing_fraction > 0.0) {
            errs.push(format!("grid.spacing_fraction must be positive, got {}", g.spacing_fraction));
        }

        let a = &self.analysis;
        let range = |name: &str, r: [usize; 2], errs: &mut Vec<String>| {
            if r[0] > r[1] || r[1] >= dim {
                errs.push(format!("analysis.{name} {:?} must be an ordered range below the basis dimension {dim}", r));
            }
        };
        range("channels", a.channels, &mut errs);
        range("incoming", a.incoming, &mut errs);
        range("unfold_block", a.unfold_block, &mut errs);
        range("spacing_block", a.spacing_block, &mut errs);
        if a.outgoing >= dim {
            errs.push(format!("analysis.outgoing {} exceeds the basis dimension {dim}", a.outgoing));
        }
        if a.incoming[0] <= a.outgoing && a.outgoing <= a.incoming[1] {
            errs.push("analysis.outgoing must not be one of the incoming channels".into());
        }
        if a.unfold_half_width == 0 {
            errs.push("analysis.unfold_half_width must be positive".into());
        }
        if !(a.window > 0.0) || a.windows == 0 {
            errs.push("analysis.window and analysis.windows must be positive".into());
        }
        if !(a.max_lag > 0.0 && 4.0 * a.max_lag < a.window) {
            errs.push(format!("analysis.max_lag {} must be positive and below a quarter of the window {}", a.max_lag, a.window));
        }
        if !(a.lag_cutoff > 0.0 && a.residual_threshold > 0.0) {
            errs.push("analysis.lag_cutoff and analysis.residual_threshold must be positive".into());
        }
        if a.alpha_values.len() < 3 || a.alpha_values.iter().any(|x| !(*x >= 0.0)) || a.alpha_values.windows(2).any(|w| w[1] <= w[0]) {
            errs.push("analysis.alpha_values needs at least 3 increasing non-negative values".into());
        }
        if a.alpha_points < 2 {
            errs.push("analysis.alpha_points must be at least 2".into());
        }

        let mf = &self.meanfield;
        if let Some(dt) = mf.dt {
            if !(dt > 0.0) {
                errs.push(format!("meanfield.dt must be positive, got {dt}"));
            }
        }
        if !(mf.t_scale > 0.0) {
            errs.push(format!("meanfield.t_scale must be positive, got {}", mf.t_scale));
        }
        if mf.ensemble == 0 || mf.stride == 0 {
            errs.push("meanfield.ensemble and meanfield.stride must be positive".into());
        }
        if mf.gammas.is_empty() || mf.gammas.iter().any(|g| !(*g > 0.0 && *g <= 1.0)) {
            errs.push("meanfield.gammas must be non-empty with every value in (0, 1]".into());
        }
        let [lo, hi] = mf.fit_window;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            errs.push(format!("meanfield.fit_window must satisfy 0 < lower < upper < 1, got {:?}", mf.fit_window));
        }
        if !(mf.points_per_width >= 2.0) {
            errs.push(format!("meanfield.points_per_width must be at least 2, got {}", mf.points_per_width));
        }

        if errs.is_empty() {
            Ok(())
        } else {
            bail!("invalid configuration:\n  - {}", errs.join("\n  - "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        for c in [RunConfig::default(), RunConfig::quick()] {
            let text = serde_json::to_string_pretty(&c).unwrap();
            assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        }
        let mut c = RunConfig::default();
        c.scattering.hopping = Hopping::Value(211.0);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn partial_blocks_take_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"model": {"control": 3.0}, "scattering": {"hopping": 100}}"#).unwrap();
        assert_eq!(c.model.control, 3.0);
        assert_eq!(c.model.particles, 38);
        assert_eq!(c.scattering.hopping, Hopping::Value(100.0));
        assert!(serde_json::from_str::<RunConfig>(r#"{"model": {"colour": 1}}"#).is_err());
    }

    #[test]
    fn errors_are_aggregated() {
        RunConfig::default().validate().unwrap();
        RunConfig::quick().validate().unwrap();
        let mut c = RunConfig::default();
        c.scattering.coupling = 2.0;
        c.analysis.max_lag = 1.0;
        c.meanfield.gammas.clear();
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("coupling") && msg.contains("max_lag") && msg.contains("gammas"), "{msg}");
    }
}
