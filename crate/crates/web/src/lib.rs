//! WebAssembly bindings for the demo page in `www/`. Every function returns
//! a JSON string; errors come back as `{"error": "..."}`.

use bhscatter::fock::{build_basis, build_hamiltonian, number_operator, BhParams, Boundary};
use bhscatter::meanfield::{integrate, sample_energy_shell, ClassicalState, Condensate, MeanfieldParams};
use bhscatter::scatter::{energy_scan, uniform_grid, ScanRequest, ScatterParams};
use bhscatter::spectral::{diagonalize, q_matrix};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest basis the page accepts; a dense diagonalisation beyond this
/// stalls the tab.
pub const MAX_DIM: usize = 300;

fn boundary(periodic: bool) -> Boundary {
    if periodic {
        Boundary::Periodic
    } else {
        Boundary::Open
    }
}

fn respond<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}")),
        Err(e) => serde_json::json!({ "error": e }).to_string(),
    }
}

#[derive(Serialize)]
struct SpectrumOut {
    dim: usize,
    energies: Vec<f64>,
    width: f64,
    /// `<n|n_1|n>` for every eigenstate.
    site_one: Vec<f64>,
}

fn spectrum_impl(particles: usize, sites: usize, u: f64, periodic: bool) -> Result<SpectrumOut, String> {
    let basis = build_basis(particles, sites).map_err(|e| e.to_string())?;
    if basis.len() > MAX_DIM {
        return Err(format!("basis dimension {} exceeds the demo limit {MAX_DIM}", basis.len()));
    }
    let p = BhParams::from_control(u, particles, boundary(periodic)).map_err(|e| e.to_string())?;
    let s = diagonalize(&build_hamiltonian(&basis, &p).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let q = q_matrix(&s, &number_operator(&basis, 1).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    Ok(SpectrumOut { dim: basis.len(), width: s.width(), site_one: (0..basis.len()).map(|i| q[(i, i)]).collect(), energies: s.energies().to_vec() })
}

/// Eigenvalues of the trimer Hamiltonian with `K = 1`.
#[wasm_bindgen]
pub fn spectrum(particles: usize, sites: usize, u: f64, periodic: bool) -> String {
    respond(spectrum_impl(particles, sites, u, periodic))
}

#[derive(Serialize)]
struct ScanOut {
    energies: Vec<f64>,
    transmission: Vec<f64>,
    inelastic: Vec<f64>,
    hopping: f64,
    failures: usize,
}

#[allow(clippy::too_many_arguments)]
fn scan_impl(particles: usize, u: f64, gamma: f64, alpha: f64, lo: usize, hi: usize, points: usize) -> Result<ScanOut, String> {
    let basis = build_basis(particles, 3).map_err(|e| e.to_string())?;
    if basis.len() > MAX_DIM {
        return Err(format!("basis dimension {} exceeds the demo limit {MAX_DIM}", basis.len()));
    }
    if lo > hi || hi >= basis.len() {
        return Err(format!("channel window {lo}..={hi} must lie below {}", basis.len()));
    }
    if !(2..=4096).contains(&points) {
        return Err("points must lie in 2..=4096".into());
    }
    let p = BhParams::from_control(u, particles, Boundary::Periodic).map_err(|e| e.to_string())?;
    let s = diagonalize(&build_hamiltonian(&basis, &p).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let q = q_matrix(&s, &number_operator(&basis, 1).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let hopping = s.width();
    let params = ScatterParams::new(hopping, gamma, alpha).map_err(|e| e.to_string())?;
    let e = s.energies();
    // channel window energies plus one band half width on either side
    let (start, end) = (e[lo] - 0.5 * hopping, e[hi] + 0.5 * hopping);
    let grid = uniform_grid(start, (end - start) / (points - 1) as f64, points);
    let req = ScanRequest { incoming: (lo..=hi).collect(), pairs: Vec::new() };
    let mut out = ScanOut { energies: grid.clone(), transmission: Vec::new(), inelastic: Vec::new(), hopping, failures: 0 };
    for r in energy_scan(e, &q, &params, &grid, &req) {
        match r {
            Ok(p) => {
                out.transmission.push(p.mean_transmission());
                out.inelastic.push(p.mean_inelastic());
            }
            Err(_) => {
                out.failures += 1;
                out.transmission.push(f64::NAN);
                out.inelastic.push(f64::NAN);
            }
        }
    }
    Ok(out)
}

/// Channel-averaged transmission and inelastic cross section on a periodic
/// trimer with the lead hopping set to the spectral width.
#[wasm_bindgen]
pub fn scan(particles: usize, u: f64, gamma: f64, alpha: f64, lo: usize, hi: usize, points: usize) -> String {
    respond(scan_impl(particles, u, gamma, alpha, lo, hi, points))
}

#[derive(Serialize)]
struct SurvivalOut {
    times: Vec<f64>,
    survival: Vec<f64>,
    lead: usize,
    dt: f64,
}

fn survival_impl(u: f64, alpha: f64, gamma: f64, hopping: f64, energy: f64, t_max: f64, seed: u64) -> Result<SurvivalOut, String> {
    let condensate = Condensate::from_control(u, 3, Boundary::Periodic);
    let mut p = MeanfieldParams {
        condensate,
        particles: 1.0,
        alpha,
        hopping,
        coupling: gamma,
        lead: 0,
        dt: 0.0,
        t_max,
        stride: 20,
        back_action: true,
        light_cone: true,
    };
    p.dt = p.auto_step();
    p.lead = p.min_lead();
    if p.lead > 200_000 {
        return Err(format!("lead of {} sites is too long for the page; lower J or t_max", p.lead));
    }
    let a = sample_energy_shell(&condensate, energy, seed).map_err(|e| e.to_string())?;
    let tr = integrate(&ClassicalState::with_probe_at_center(a, p.lead), &p).map_err(|e| e.to_string())?;
    Ok(SurvivalOut { times: tr.times, survival: tr.survival, lead: p.lead, dt: p.dt })
}

/// Classical survival probability of the probe on the contact site. `alpha`
/// here is the product `alpha N`.
#[wasm_bindgen]
pub fn survival(u: f64, alpha: f64, gamma: f64, hopping: f64, energy: f64, t_max: f64, seed: u64) -> String {
    respond(survival_impl(u, alpha, gamma, hopping, energy, t_max, seed))
}

/// Per-particle energy range of the classical trimer, `[min, max]`.
#[wasm_bindgen]
pub fn energy_range(u: f64) -> String {
    let ((lo, _), (hi, _)) = bhscatter::meanfield::energy_extremes(&Condensate::from_control(u, 3, Boundary::Periodic));
    respond::<[f64; 2]>(Ok([lo, hi]))
}
