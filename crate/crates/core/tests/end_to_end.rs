//! A small target taken through every stage.

use bhscatter::fluct::{autocorrelation, exponential_test, lorentzian_fit, normalize_by_local_mean, LorentzianOptions};
use bhscatter::fock::{build_basis, build_hamiltonian, number_operator, site_one_reflection, BhParams, Boundary};
use bhscatter::meanfield::{beta_vs_gamma_scan, Condensate, GammaScan, MeanfieldParams};
use bhscatter::scatter::{energy_scan, uniform_grid, ScanRequest, ScatterParams};
use bhscatter::spectral::{diagonalize, q_matrix, symmetry_adapt, unfold, IndexBlock, WindowShape};

#[test]
fn small_ring_pipeline() {
    let basis = build_basis(20, 3).unwrap();
    assert_eq!(basis.len(), 231);
    let params = BhParams::from_control(5.0, 20, Boundary::Periodic).unwrap();
    let spectrum = diagonalize(&build_hamiltonian(&basis, &params).unwrap()).unwrap();
    let perm = site_one_reflection(&basis, Boundary::Periodic).unwrap();
    let (spectrum, labels) = symmetry_adapt(&spectrum, &perm, 1e-8 * spectrum.width()).unwrap();
    let q = q_matrix(&spectrum, &number_operator(&basis, 1).unwrap()).unwrap();

    // trace of n_1 is a third of N times the dimension on the ring
    let trace: f64 = (0..basis.len()).map(|i| q[(i, i)]).sum();
    assert!((trace - 20.0 * 231.0 / 3.0).abs() < 1e-8);

    let u = unfold(&q, &IndexBlock::square(80..160), 6, WindowShape::Band, Some(&labels)).unwrap();
    let v = u.values();
    let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    assert!(v.len() > 500 && (var - 1.0).abs() < 0.3, "{} elements, variance {var}", v.len());

    let w = spectrum.width();
    let sp = ScatterParams::new(w, 0.02, 3.0).unwrap();
    let e = spectrum.energies();
    let delta = spectrum.mean_spacing(80..160).unwrap();
    let grid = uniform_grid(e[120] - 100.0 * delta, delta / 8.0, 1600);
    let req = ScanRequest { incoming: (110..=130).collect(), pairs: (111..=125).map(|m| (110, m)).collect() };
    let points: Vec<_> = energy_scan(e, &q, &sp, &grid, &req).into_iter().map(Result::unwrap).collect();
    assert!(points.iter().all(|p| p.transmission.iter().all(|t| *t <= 1.0 + 1e-9)));
    assert!(points.iter().any(|p| p.mean_inelastic() > 0.0));

    let step = delta / 8.0 / w;
    let mut pooled = vec![0.0; 41];
    let mut samples = Vec::new();
    for k in 0..req.pairs.len() {
        let s: Vec<f64> = points.iter().map(|p| p.cross_sections[k]).collect();
        let a = autocorrelation(&s, step, 200..1400, 40).unwrap();
        for (acc, r) in pooled.iter_mut().zip(&a.raw) {
            *acc += r / (a.mean * a.mean);
        }
        samples.extend(normalize_by_local_mean(&s, 300)[200..1400].iter().copied());
    }
    let lags: Vec<f64> = (0..41).map(|i| i as f64 * step).collect();
    let opts = LorentzianOptions { mean_window: Some(1200.0 * step), ..Default::default() };
    let fit = lorentzian_fit(&lags, &pooled, &opts).unwrap();
    assert!(fit.gamma > 0.0 && fit.gamma.is_finite());
    let exp = exponential_test(&samples, 5).unwrap();
    assert!(exp.slope < 0.0);

    let base = MeanfieldParams {
        condensate: Condensate::from_control(5.0, 3, Boundary::Periodic),
        particles: 20.0,
        alpha: 0.1,
        hopping: 5.0,
        coupling: 0.1,
        lead: 0,
        dt: 2e-3,
        t_max: 0.0,
        stride: 10,
        back_action: true,
        light_cone: true,
    };
    let scan = GammaScan { energy: 1.0, initial_conditions: 3, t_scale: 6.0, fit_window: (0.01, 0.9), lead: None };
    let rows = beta_vs_gamma_scan(&[0.05, 0.1, 0.2], &base, &scan, 11).unwrap();
    let betas: Vec<f64> = rows.iter().map(|r| r.beta_mean).collect();
    assert!(betas.windows(2).all(|b| b[1] > b[0]), "{betas:?}");
}
