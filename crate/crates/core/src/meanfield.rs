//! Classical limit: the Gross-Pitaevskii trimer coupled to a tight-binding
//! probe on a finite lead.
//!
//! With condensate amplitudes `A_i` (`sum |A_i|^2 = 1`) and probe amplitudes
//! `c_j` on lead sites `j = -L..=L`, the conserved energy is
//!
//! ```text
//! E = N h(A) + H_TB(c) + a N |A_1|^2 |c_0|^2,
//! h(A) = UN/2 sum |A_i|^4 - K sum_bonds (A_i^* A_j + c.c.)
//! ```
//!
//! and the equations of motion are
//!
//! ```text
//! i dA_i/dt = UN |A_i|^2 A_i - K (A_{i-1} + A_{i+1}) + d_{i1} a |c_0|^2 A_i
//! i dc_j/dt = -J_b (c_{j-1} + c_{j+1}) + d_{j0} a N |A_1|^2 c_j
//! ```
//!
//! The two bonds touching `j = 0` carry `J0 = J sqrt(g)`. Time is in units of
//! `1/K`. Both norms are conserved exactly by the flow.

use std::ops::Range;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluct::{exponential_decay_fit, DecayFit};
use crate::fock::Boundary;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// The classical trimer, `h(A) = UN/2 sum |A|^4 - K sum_bonds 2 Re(A_i^* A_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condensate {
    /// `U N`.
    pub interaction: f64,
    pub tunneling: f64,
    pub sites: usize,
    pub boundary: Boundary,
}

impl Condensate {
    /// Condensate with `UN = 2 u K`.
    pub fn from_control(u: f64, sites: usize, boundary: Boundary) -> Self {
        Self { interaction: 2.0 * u, tunneling: 1.0, sites, boundary }
    }

    pub fn energy(&self, a: &[Complex64]) -> f64 {
        let onsite: f64 = a.iter().map(|z| z.norm_sqr().powi(2)).sum();
        let hop: f64 = self.boundary.bonds(self.sites).iter().map(|&(i, j)| 2.0 * (a[i].conj() * a[j]).re).sum();
        0.5 * self.interaction * onsite - self.tunneling * hop
    }

    /// `dh/dA^*`.
    fn gradient(&self, a: &[Complex64], out: &mut [Complex64]) {
        for (o, z) in out.iter_mut().zip(a) {
            *o = self.interaction * z.norm_sqr() * z;
        }
        for (i, j) in self.boundary.bonds(self.sites) {
            out[i] -= self.tunneling * a[j];
            out[j] -= self.tunneling * a[i];
        }
    }

    fn scale(&self) -> f64 {
        self.interaction.abs() + 2.0 * self.tunneling.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanfieldParams {
    pub condensate: Condensate,
    /// Particle number `N`, scales the probe's on-site energy `a N |A_1|^2`.
    pub particles: f64,
    /// Probe-condensate interaction `a`.
    pub alpha: f64,
    /// Lead hopping `J`.
    pub hopping: f64,
    /// `(J0 / J)^2`.
    pub coupling: f64,
    /// Lead sites run over `-lead..=lead`.
    pub lead: usize,
    pub dt: f64,
    pub t_max: f64,
    /// Record every `stride`-th step.
    pub stride: usize,
    /// Include the `a |c_0|^2` term acting on the condensate.
    pub back_action: bool,
    /// Only propagate lead sites the wave front can have reached.
    pub light_cone: bool,
}

impl MeanfieldParams {
    /// Largest frequency in the problem: lead band, probe barrier and
    /// condensate scales.
    pub fn energy_scale(&self) -> f64 {
        (2.0 * self.hopping).max(self.alpha * self.particles).max(self.condensate.scale()).max(self.alpha)
    }

    /// `min(1e-3, 0.05 / energy_scale)`.
    pub fn auto_step(&self) -> f64 {
        (0.05 / self.energy_scale()).min(1e-3)
    }

    /// Shortest lead for which the front cannot reach the end, `2 J t_max`.
    pub fn min_lead(&self) -> usize {
        (2.0 * self.hopping * self.t_max).floor() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.hopping > 0.0) {
            return bad(format!("lead hopping J must be positive, got {}", self.hopping));
        }
        if !(self.coupling > 0.0 && self.coupling <= 1.0) {
            return bad(format!("coupling gamma must lie in (0, 1], got {}", self.coupling));
        }
        if !(self.alpha >= 0.0) || !(self.particles > 0.0) {
            return bad("alpha must be non-negative and N positive".into());
        }
        if self.condensate.sites == 0 {
            return bad("condensate needs at least one site".into());
        }
        if !(self.dt > 0.0 && self.t_max >= 0.0) || self.stride == 0 {
            return bad("need dt > 0, t_max >= 0 and stride >= 1".into());
        }
        if self.dt * self.energy_scale() >= 0.1 {
            return bad(format!(
                "step {} too large for energy scale {} (need dt * scale < 0.1)",
                self.dt,
                self.energy_scale()
            ));
        }
        if (self.lead as f64) <= 2.0 * self.hopping * self.t_max {
            return bad(format!("lead half-length {} must exceed 2 J t_max = {}", self.lead, 2.0 * self.hopping * self.t_max));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalState {
    pub condensate: Vec<Complex64>,
    /// Lead amplitudes, index `j + lead`.
    pub probe: Vec<Complex64>,
    pub time: f64,
}

impl ClassicalState {
    /// Probe localised on the contact site, `c_j = d_{j0}`.
    pub fn with_probe_at_center(condensate: Vec<Complex64>, lead: usize) -> Self {
        let mut probe = vec![Complex64::new(0.0, 0.0); 2 * lead + 1];
        probe[lead] = Complex64::new(1.0, 0.0);
        Self { condensate, probe, time: 0.0 }
    }

    pub fn center(&self) -> usize {
        self.probe.len() / 2
    }

    pub fn survival(&self) -> f64 {
        self.probe[self.center()].norm_sqr()
    }

    pub fn condensate_norm(&self) -> f64 {
        self.condensate.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn probe_norm(&self) -> f64 {
        self.probe.iter().map(|z| z.norm_sqr()).sum()
    }
}

fn bond_hopping(params: &MeanfieldParams, center: usize, left: usize) -> f64 {
    // bond (left, left + 1)
    if left + 1 == center || left == center {
        params.hopping * params.coupling.sqrt()
    } else {
        params.hopping
    }
}

/// Total classical energy `N h(A) + H_TB + a N |A_1|^2 |c_0|^2`.
pub fn total_energy(state: &ClassicalState, params: &MeanfieldParams) -> f64 {
    let c = &state.probe;
    let center = state.center();
    let lead: f64 = (0..c.len().saturating_sub(1))
        .map(|j| -2.0 * bond_hopping(params, center, j) * (c[j].conj() * c[j + 1]).re)
        .sum();
    let a1 = state.condensate[0].norm_sqr();
    params.particles * params.condensate.energy(&state.condensate)
        + lead
        + params.alpha * params.particles * a1 * c[center].norm_sqr()
}

/// Time derivative of the packed state `[A..., c...]` for the condensate and
/// the lead sites in `active`; entries of `out` outside it are untouched.
fn derivative(y: &[Complex64], out: &mut [Complex64], params: &MeanfieldParams, active: &Range<usize>) {
    let l = params.condensate.sites;
    let (a, c) = y.split_at(l);
    let (da, dc) = out.split_at_mut(l);
    let center = c.len() / 2;

    params.condensate.gradient(a, da);
    if params.back_action {
        da[0] += params.alpha * c[center].norm_sqr() * a[0];
    }
    for z in da.iter_mut() {
        *z *= -I;
    }

    let j_far = params.hopping;
    let j_near = params.hopping * params.coupling.sqrt();
    let barrier = params.alpha * params.particles * a[0].norm_sqr();
    let last = c.len() - 1;
    let site = |j: usize| {
        let mut h = Complex64::new(0.0, 0.0);
        if j > 0 {
            let t = if j == center || j == center + 1 { j_near } else { j_far };
            h -= t * c[j - 1];
        }
        if j < last {
            let t = if j + 1 == center || j == center { j_near } else { j_far };
            h -= t * c[j + 1];
        }
        if j == center {
            h += barrier * c[j];
        }
        Complex64::new(h.im, -h.re)
    };

    // uniform bulk first, then the edges and the three contact sites
    let lo = active.start.max(1);
    let hi = active.end.min(last);
    if lo < hi {
        let bulk = dc[lo..hi].iter_mut().zip(&c[lo - 1..hi - 1]).zip(&c[lo + 1..hi + 1]);
        for ((d, l), r) in bulk {
            let s = l + r;
            *d = Complex64::new(-j_far * s.im, j_far * s.re);
        }
    }
    let special = [0, last, center.saturating_sub(1), center, (center + 1).min(last)];
    for j in special {
        if active.contains(&j) {
            dc[j] = site(j);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    /// `max_t |sum |A|^2 (t) - sum |A|^2 (0)| / t_max`.
    pub condensate_norm: f64,
    pub probe_norm: f64,
    /// `max_t |E(t) - E(0)| / max(|E(0)|, 1) / t_max`.
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `P(t) = |c_0(t)|^2`.
    pub survival: Vec<f64>,
    pub condensate_norm: Vec<f64>,
    pub probe_norm: Vec<f64>,
    pub energy: Vec<f64>,
    pub final_state: ClassicalState,
    pub drift: Drift,
    /// False when a drift exceeds its budget (norms `1e-8`, energy `1e-7`
    /// per unit time). The energy budget is not checked without back-action,
    /// where the energy is not conserved.
    pub within_budget: bool,
}

/// Fixed-step fourth-order Runge-Kutta from `state` over `params.t_max`.
pub fn integrate(state: &ClassicalState, params: &MeanfieldParams) -> Result<Trajectory> {
    params.validate()?;
    let l = params.condensate.sites;
    if state.condensate.len() != l {
        return Err(Error::DimensionMismatch { expected: l, got: state.condensate.len() });
    }
    if state.probe.len() != 2 * params.lead + 1 {
        return Err(Error::DimensionMismatch { expected: 2 * params.lead + 1, got: state.probe.len() });
    }
    let steps = (params.t_max / params.dt).round() as usize;
    let h = params.dt;
    let n = l + state.probe.len();
    let center = params.lead;

    let mut y: Vec<Complex64> = state.condensate.iter().chain(&state.probe).cloned().collect();
    let zero = Complex64::new(0.0, 0.0);
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n]);
    tmp.copy_from_slice(&y);

    // initial extent of the probe
    let occupied = state.probe.iter().enumerate().filter(|(_, z)| z.norm_sqr() > 0.0).map(|(j, _)| j);
    let reach0 = occupied.map(|j| j.abs_diff(center)).max().unwrap_or(0);
    let active_at = |t: f64| -> Range<usize> {
        if !params.light_cone {
            return 0..state.probe.len();
        }
        let x = 2.0 * params.hopping * t;
        let r = reach0 + (x + 15.0 * (0.5 * x).cbrt() + 20.0).ceil() as usize;
        center.saturating_sub(r)..(center + r + 1).min(state.probe.len())
    };

    let t0 = state.time;
    let mut out = Trajectory {
        times: Vec::new(),
        survival: Vec::new(),
        condensate_norm: Vec::new(),
        probe_norm: Vec::new(),
        energy: Vec::new(),
        final_state: state.clone(),
        drift: Drift { condensate_norm: 0.0, probe_norm: 0.0, energy: 0.0 },
        within_budget: true,
    };
    let record = |y: &[Complex64], t: f64, out: &mut Trajectory| {
        let s = ClassicalState { condensate: y[..l].to_vec(), probe: y[l..].to_vec(), time: t };
        out.times.push(t);
        out.survival.push(s.survival());
        out.condensate_norm.push(s.condensate_norm());
        out.probe_norm.push(s.probe_norm());
        out.energy.push(total_energy(&s, params));
    };
    record(&y, t0, &mut out);

    for step in 0..steps {
        let t = step as f64 * h;
        let act = active_at(t + h);
        let cells = [0..l, act.start + l..act.end + l];
        let lead_act = act.clone();

        derivative(&y, &mut k1, params, &lead_act);
        for r in cells.clone() {
            axpy(&mut tmp[r.clone()], &y[r.clone()], 0.5 * h, &k1[r]);
        }
        derivative(&tmp, &mut k2, params, &lead_act);
        for r in cells.clone() {
            axpy(&mut tmp[r.clone()], &y[r.clone()], 0.5 * h, &k2[r]);
        }
        derivative(&tmp, &mut k3, params, &lead_act);
        for r in cells.clone() {
            axpy(&mut tmp[r.clone()], &y[r.clone()], h, &k3[r]);
        }
        derivative(&tmp, &mut k4, params, &lead_act);
        for r in cells {
            let rows = y[r.clone()].iter_mut().zip(&mut tmp[r.clone()]);
            let ks = k1[r.clone()].iter().zip(&k2[r.clone()]).zip(&k3[r.clone()]).zip(&k4[r]);
            for ((yi, ti), (((a, b), c), d)) in rows.zip(ks) {
                *yi += h / 6.0 * (a + 2.0 * (b + c) + d);
                *ti = *yi;
            }
        }
        if (step + 1) % params.stride == 0 || step + 1 == steps {
            record(&y, t0 + (step + 1) as f64 * h, &mut out);
        }
    }

    let span = params.t_max.max(f64::MIN_POSITIVE);
    let dev = |v: &[f64]| v.iter().map(|x| (x - v[0]).abs()).fold(0.0, f64::max);
    out.drift = Drift {
        condensate_norm: dev(&out.condensate_norm) / span,
        probe_norm: dev(&out.probe_norm) / span,
        energy: dev(&out.energy) / out.energy[0].abs().max(1.0) / span,
    };
    out.within_budget = out.drift.condensate_norm < 1e-8
        && out.drift.probe_norm < 1e-8
        && (!params.back_action || out.drift.energy < 1e-7);
    out.final_state = ClassicalState { condensate: y[..l].to_vec(), probe: y[l..].to_vec(), time: t0 + steps as f64 * h };
    Ok(out)
}

fn axpy(out: &mut [Complex64], y: &[Complex64], a: f64, k: &[Complex64]) {
    for ((o, y), k) in out.iter_mut().zip(y).zip(k) {
        *o = y + a * k;
    }
}

/// Largest amplitude difference between two states on the same lattice.
pub fn state_distance(a: &ClassicalState, b: &ClassicalState) -> f64 {
    a.condensate
        .iter()
        .zip(&b.condensate)
        .chain(a.probe.iter().zip(&b.probe))
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// `P(t) = |c_0(t)|^2` as `(times, values)`.
pub fn survival_probability(trajectory: &Trajectory) -> (&[f64], &[f64]) {
    (&trajectory.times, &trajectory.survival)
}

fn normalize(a: &mut [Complex64]) {
    let n = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    a.iter_mut().for_each(|z| *z /= n);
}

fn random_unit(sites: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let mut a: Vec<Complex64> =
        (0..sites).map(|_| Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))).collect();
    normalize(&mut a);
    a
}

/// Projected gradient flow on the unit sphere towards the minimum
/// (`sign = 1`) or maximum (`sign = -1`) of `h`.
fn extremize(c: &Condensate, start: Vec<Complex64>, sign: f64) -> Vec<Complex64> {
    let eta = 0.1 / c.scale().max(1e-12);
    let mut a = start;
    let mut g = vec![Complex64::new(0.0, 0.0); a.len()];
    let mut e = c.energy(&a);
    for _ in 0..200_000 {
        c.gradient(&a, &mut g);
        let overlap: Complex64 = a.iter().zip(&g).map(|(x, y)| x.conj() * y).sum();
        let mut next: Vec<Complex64> = a.iter().zip(&g).map(|(x, y)| x - sign * eta * (y - overlap * x)).collect();
        normalize(&mut next);
        let en = c.energy(&next);
        a = next;
        if (en - e).abs() < 1e-15 * (1.0 + en.abs()) {
            break;
        }
        e = en;
    }
    a
}

/// Classical ground and top configurations of the trimer on the unit sphere
/// (best of several deterministic restarts).
pub fn energy_extremes(c: &Condensate) -> ((f64, Vec<Complex64>), (f64, Vec<Complex64>)) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d65_616e_6669_656c);
    let mut starts: Vec<Vec<Complex64>> = Vec::new();
    let uniform = vec![Complex64::new((1.0 / c.sites as f64).sqrt(), 0.0); c.sites];
    starts.push(uniform);
    for i in 0..c.sites {
        let mut a = vec![Complex64::new(0.05, 0.0); c.sites];
        a[i] = Complex64::new(1.0, 0.0);
        normalize(&mut a);
        starts.push(a);
    }
    for _ in 0..16 {
        starts.push(random_unit(c.sites, &mut rng));
    }
    let best = |sign: f64| {
        starts
            .iter()
            .map(|s| {
                let a = extremize(c, s.clone(), sign);
                (c.energy(&a), a)
            })
            .min_by(|x, y| (sign * x.0).total_cmp(&(sign * y.0)))
            .expect("at least one start")
    };
    (best(1.0), best(-1.0))
}

/// Random condensate configuration with `h(A) = target` to `1e-12`.
///
/// A Gaussian random point on the unit sphere is moved along the great
/// circle joining it to the classical minimum or maximum (whichever lies on
/// the other side of `target`), and the crossing is located by bisection.
pub fn sample_energy_shell(c: &Condensate, target: f64, seed: u64) -> Result<Vec<Complex64>> {
    let ((lo, a_lo), (hi, a_hi)) = energy_extremes(c);
    if !(target >= lo && target <= hi) {
        return Err(Error::UnreachableEnergy { target, min: lo, max: hi });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a0 = random_unit(c.sites, &mut rng);
    let e0 = c.energy(&a0);
    let toward = if e0 > target { a_lo } else { a_hi };
    // align the phase of the end point so the arc is real
    let ov: Complex64 = a0.iter().zip(&toward).map(|(x, y)| x.conj() * y).sum();
    let phase = if ov.norm() > 0.0 { ov.conj() / ov.norm() } else { Complex64::new(1.0, 0.0) };
    let end: Vec<Complex64> = toward.iter().map(|z| z * phase).collect();
    let cos_end = ov.norm().min(1.0);
    let theta_end = cos_end.acos();
    let mut b: Vec<Complex64> = end.iter().zip(&a0).map(|(e, a)| e - cos_end * a).collect();
    let bn = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if bn > 0.0 {
        b.iter_mut().for_each(|z| *z /= bn);
    }
    let point = |th: f64| -> Vec<Complex64> {
        let mut p: Vec<Complex64> = a0.iter().zip(&b).map(|(a, b)| th.cos() * a + th.sin() * b).collect();
        normalize(&mut p);
        p
    };
    let side = |th: f64| (c.energy(&point(th)) - target) * (e0 - target).signum();
    let (mut x0, mut x1) = (0.0, theta_end);
    if side(0.0) <= 0.0 {
        return Ok(a0);
    }
    for _ in 0..200 {
        let mid = 0.5 * (x0 + x1);
        if side(mid) > 0.0 {
            x0 = mid;
        } else {
            x1 = mid;
        }
        if x1 - x0 < 1e-15 {
            break;
        }
    }
    let a = point(x1);
    if (c.energy(&a) - target).abs() > 1e-9 {
        return Err(Error::UnreachableEnergy { target, min: lo, max: hi });
    }
    Ok(a)
}

/// Per-run seed `splitmix64(master + 0x9e37... * (index + 1))`.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRun {
    pub seed: u64,
    pub fit: Option<DecayFit>,
    pub within_budget: bool,
    pub drift: Drift,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub gamma: f64,
    pub t_max: f64,
    /// Mean of the successful fits.
    pub beta_mean: f64,
    pub beta_std: f64,
    pub runs: Vec<DecayRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaScan {
    /// Per-particle energy the condensate is prepared at.
    pub energy: f64,
    pub initial_conditions: usize,
    /// `t_max = t_scale / (4 gamma J)`.
    pub t_scale: f64,
    /// `P` window of the decay fit.
    pub fit_window: (f64, f64),
    /// Lead half length; `None` picks the shortest one the front cannot
    /// cross within `t_max`.
    pub lead: Option<usize>,
}

/// One trajectory per initial condition for every `gamma` in `gammas`; the
/// condensate configurations (seeded by `split_seed(seed, k)`) are shared
/// between all `gamma`. Lead length and `t_max` follow from `gamma`, all
/// other fields come from `base`.
pub fn beta_vs_gamma_scan(gammas: &[f64], base: &MeanfieldParams, scan: &GammaScan, seed: u64) -> Result<Vec<GammaRow>> {
    if scan.initial_conditions == 0 {
        return Err(Error::InvalidParameter("need at least one initial condition".into()));
    }
    let seeds: Vec<u64> = (0..scan.initial_conditions as u64).map(|k| split_seed(seed, k)).collect();
    let configs = seeds
        .iter()
        .map(|&s| sample_energy_shell(&base.condensate, scan.energy, s))
        .collect::<Result<Vec<_>>>()?;

    gammas
        .iter()
        .map(|&gamma| {
            let mut p = *base;
            p.coupling = gamma;
            p.t_max = scan.t_scale / (4.0 * gamma * p.hopping);
            p.lead = scan.lead.unwrap_or_else(|| p.min_lead());
            p.validate()?;
            let run = |(a, &s): (&Vec<Complex64>, &u64)| -> Result<DecayRun> {
                let traj = integrate(&ClassicalState::with_probe_at_center(a.clone(), p.lead), &p)?;
                let fit = exponential_decay_fit(&traj.times, &traj.survival, scan.fit_window.0, scan.fit_window.1).ok();
                Ok(DecayRun { seed: s, fit, within_budget: traj.within_budget, drift: traj.drift, trajectory: traj })
            };
            #[cfg(feature = "parallel")]
            let runs: Vec<DecayRun> = {
                use rayon::prelude::*;
                configs.par_iter().zip(seeds.par_iter()).map(run).collect::<Result<_>>()?
            };
            #[cfg(not(feature = "parallel"))]
            let runs: Vec<DecayRun> = configs.iter().zip(seeds.iter()).map(run).collect::<Result<_>>()?;

            let betas: Vec<f64> = runs.iter().filter_map(|r| r.fit.map(|f| f.beta)).collect();
            if betas.is_empty() {
                return Err(Error::EmptyFitWindow(format!("no trajectory decayed enough at gamma = {gamma}")));
            }
            let mean = betas.iter().sum::<f64>() / betas.len() as f64;
            let var = betas.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / betas.len() as f64;
            Ok(GammaRow { gamma, t_max: p.t_max, beta_mean: mean, beta_std: var.sqrt(), runs })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(lead: usize, t_max: f64) -> MeanfieldParams {
        MeanfieldParams {
            condensate: Condensate::from_control(5.0, 3, Boundary::Periodic),
            particles: 38.0,
            alpha: 0.05,
            hopping: 2.0,
            coupling: 0.3,
            lead,
            dt: 1e-3,
            t_max,
            stride: 10,
            back_action: true,
            light_cone: true,
        }
    }

    fn bessel_j0(x: f64) -> f64 {
        // (1/pi) int_0^pi cos(x sin th) dth, spectrally accurate trapezoid
        let n = 400;
        let h = std::f64::consts::PI / n as f64;
        let s: f64 = (0..n).map(|k| (x * (k as f64 * h).sin()).cos()).sum();
        s * h / std::f64::consts::PI
    }

    #[test]
    fn free_chain_follows_bessel() {
        let mut p = params(25, 5.0);
        p.alpha = 0.0;
        p.coupling = 1.0;
        p.hopping = 1.0;
        p.light_cone = false;
        let a = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)];
        let traj = integrate(&ClassicalState::with_probe_at_center(a, p.lead), &p).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.survival) {
            assert_abs_diff_eq!(*s, bessel_j0(2.0 * t).powi(2), epsilon = 1e-9);
        }
        assert!(traj.within_budget);
    }

    #[test]
    fn static_impurity_matches_resolvent() {
        // K = 0 keeps |A_1|^2 = 1, a static barrier V = a N on site 0
        let mut p = params(30, 5.0);
        p.condensate.tunneling = 0.0;
        p.alpha = 0.5;
        p.particles = 4.0;
        p.hopping = 1.0;
        p.coupling = 1.0;
        let v = 2.0;
        let a = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)];
        let traj = integrate(&ClassicalState::with_probe_at_center(a, p.lead), &p).unwrap();
        // bound state plus band continuum of G_00 = 1 / (-V + i v(e))
        let eb = (v * v + 4.0f64).sqrt();
        let z = v / eb;
        let amp = |t: f64| {
            let n = 4000;
            let h = std::f64::consts::PI / n as f64;
            let mut c = Complex64::new(0.0, 0.0);
            for k in 0..=n {
                let q = k as f64 * h;
                let vel = 2.0 * q.sin();
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                let dens = 2.0 * q.sin() * vel / (std::f64::consts::PI * (v * v + vel * vel));
                c += w * h * dens * Complex64::new(0.0, 2.0 * q.cos() * t).exp();
            }
            c + z * Complex64::new(0.0, -eb * t).exp()
        };
        for (t, s) in traj.times.iter().zip(&traj.survival).step_by(7) {
            assert_abs_diff_eq!(*s, amp(*t).norm_sqr(), epsilon = 1e-7);
        }
    }

    #[test]
    fn decoupled_condensate_keeps_populations() {
        let mut p = params(5, 100.0);
        p.alpha = 0.0;
        p.condensate.tunneling = 0.0;
        p.hopping = 0.01;
        p.stride = 1000;
        let a = vec![Complex64::new(0.6, 0.1), Complex64::new(0.2, -0.5), Complex64::new(0.3, 0.0)];
        let mut a = a;
        normalize(&mut a);
        let traj = integrate(&ClassicalState::with_probe_at_center(a.clone(), p.lead), &p).unwrap();
        for (x, y) in a.iter().zip(&traj.final_state.condensate) {
            assert_abs_diff_eq!(x.norm_sqr(), y.norm_sqr(), epsilon = 1e-10);
        }
    }

    #[test]
    fn conservation_and_light_cone() {
        let p = params(30, 5.0);
        let a = sample_energy_shell(&p.condensate, 2.0, 1).unwrap();
        let s0 = ClassicalState::with_probe_at_center(a, p.lead);
        let traj = integrate(&s0, &p).unwrap();
        assert!(traj.within_budget, "{:?}", traj.drift);
        let mut full = p;
        full.light_cone = false;
        let ref_traj = integrate(&s0, &full).unwrap();
        for (x, y) in traj.survival.iter().zip(&ref_traj.survival) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
    }

    #[test]
    fn fourth_order_convergence() {
        let mut p = params(30, 2.0);
        let a = sample_energy_shell(&p.condensate, 2.0, 2).unwrap();
        let s0 = ClassicalState::with_probe_at_center(a, p.lead);
        let runs: Vec<Trajectory> = [0.008, 0.004, 0.002]
            .iter()
            .map(|&dt| {
                p.dt = dt;
                integrate(&s0, &p).unwrap()
            })
            .collect();
        let ratio = state_distance(&runs[0].final_state, &runs[1].final_state)
            / state_distance(&runs[1].final_state, &runs[2].final_state);
        assert!((ratio - 16.0).abs() < 2.0, "{ratio}");
        let dp = runs[1].survival.last().unwrap() - runs[2].survival.last().unwrap();
        assert!(dp.abs() < 1e-6);
    }

    #[test]
    fn time_reversal_and_gauge() {
        let p = params(30, 3.0);
        let a = sample_energy_shell(&p.condensate, 1.0, 3).unwrap();
        let s0 = ClassicalState::with_probe_at_center(a.clone(), p.lead);
        let fwd = integrate(&s0, &p).unwrap().final_state;
        let conj = |s: &ClassicalState| ClassicalState {
            condensate: s.condensate.iter().map(|z| z.conj()).collect(),
            probe: s.probe.iter().map(|z| z.conj()).collect(),
            time: 0.0,
        };
        let mut back_p = p;
        back_p.light_cone = false;
        let back = conj(&integrate(&conj(&fwd), &back_p).unwrap().final_state);
        for (x, y) in back.condensate.iter().chain(&back.probe).zip(s0.condensate.iter().chain(&s0.probe)) {
            assert!((x - y).norm() < 1e-6);
        }

        let phase = Complex64::new(0.3f64.cos(), 0.3f64.sin());
        let rotated: Vec<Complex64> = a.iter().map(|z| z * phase).collect();
        let t1 = integrate(&s0, &p).unwrap();
        let t2 = integrate(&ClassicalState::with_probe_at_center(rotated, p.lead), &p).unwrap();
        for (x, y) in t1.survival.iter().zip(&t2.survival) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn energy_shell_sampling() {
        let c = Condensate::from_control(5.0, 3, Boundary::Periodic);
        let ((lo, _), (hi, _)) = energy_extremes(&c);
        assert_abs_diff_eq!(lo, 10.0 / 6.0 - 2.0, epsilon = 1e-9);
        assert!(hi >= 5.0);
        let a = sample_energy_shell(&c, 2.5, 11).unwrap();
        let b = sample_energy_shell(&c, 2.5, 12).unwrap();
        assert_abs_diff_eq!(c.energy(&a), 2.5, epsilon = 1e-9);
        assert_abs_diff_eq!(c.energy(&b), 2.5, epsilon = 1e-9);
        assert_abs_diff_eq!(a.iter().map(|z| z.norm_sqr()).sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).norm() > 1e-3));
        assert_eq!(sample_energy_shell(&c, 2.5, 11).unwrap(), a);
        assert!(matches!(sample_energy_shell(&c, hi + 1.0, 1), Err(Error::UnreachableEnergy { .. })));
    }

    #[test]
    fn ground_energy_gives_uniform_state() {
        let c = Condensate::from_control(0.5, 3, Boundary::Periodic);
        let ((lo, _), _) = energy_extremes(&c);
        let a = sample_energy_shell(&c, lo, 5).unwrap();
        let ph = a[0] / a[0].norm();
        for z in &a {
            let w = z / ph;
            assert!((w.re - (1.0f64 / 3.0).sqrt()).abs() < 1e-5 && w.im.abs() < 1e-5, "{a:?}");
        }
    }

    #[test]
    fn validation() {
        let mut p = params(5, 5.0);
        assert!(p.validate().is_err(), "lead too short");
        p.lead = 21;
        assert!(p.validate().is_ok());
        p.dt = 0.05;
        assert!(p.validate().is_err(), "step too large");
        assert_eq!(split_seed(1, 0), split_seed(1, 0));
        assert_ne!(split_seed(1, 0), split_seed(1, 1));
    }

    #[test]
    fn faster_escape_with_stronger_coupling() {
        let mut base = params(0, 0.0);
        base.hopping = 5.0;
        base.alpha = 0.2;
        base.dt = 2e-3;
        let scan = GammaScan { energy: 2.0, initial_conditions: 2, t_scale: 8.0, fit_window: (0.01, 0.9), lead: None };
        let rows = beta_vs_gamma_scan(&[0.05, 0.1], &base, &scan, 9).unwrap();
        assert!(rows[1].beta_mean > rows[0].beta_mean);
        // golden-rule rate 2 g v at the barrier energy
        for r in &rows {
            let e0 = base.alpha * base.particles / 3.0;
            let v = (4.0 * base.hopping * base.hopping - e0 * e0).sqrt();
            let ratio = r.beta_mean / (2.0 * r.gamma * v);
            assert!(ratio > 0.6 && ratio < 1.5, "{ratio}");
        }
    }
}
