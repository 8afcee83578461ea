//! Dense diagonalization of the Bose-Hubbard Hamiltonian, the interaction
//! matrix `Q_nm = <E_n| n_1 |E_m>` and local-variance unfolding of its
//! off-diagonal elements.

use std::ops::Range;

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenpairs of a real symmetric matrix, ascending in energy.
#[derive(Debug, Clone)]
pub struct Spectrum {
    energies: Vec<f64>,
    vectors: Mat<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Column `n` is the eigenvector belonging to `energies()[n]`.
    pub fn vectors(&self) -> &Mat<f64> {
        &self.vectors
    }

    /// `E_max - E_min`.
    pub fn width(&self) -> f64 {
        match (self.energies.first(), self.energies.last()) {
            (Some(lo), Some(hi)) => hi - lo,
            _ => 0.0,
        }
    }

    /// Mean spacing of consecutive levels with indices in `window`.
    pub fn mean_spacing(&self, window: Range<usize>) -> Result<f64> {
        if window.end > self.len() || window.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "spacing window {window:?} needs at least two levels inside 0..{}",
                self.len()
            )));
        }
        let e = &self.energies;
        Ok((e[window.end - 1] - e[window.start]) / (window.len() - 1) as f64)
    }

    /// Largest `|V^T V - I|` entry.
    pub fn orthogonality_error(&self) -> f64 {
        let v = &self.vectors;
        let gram = v.transpose() * v;
        let mut worst = 0.0f64;
        for j in 0..gram.ncols() {
            for i in 0..gram.nrows() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }
}

/// Largest absolute entry, used as the scale of residual tolerances.
pub fn max_abs(m: &Mat<f64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            worst = worst.max(m[(i, j)].abs());
        }
    }
    worst
}

/// Full eigendecomposition. Each eigenvector is normalised so that its
/// largest-magnitude component (first one on ties) is positive, and every
/// pair is checked against `|H v - E v|_2 < 1e-9 |H|`.
pub fn diagonalize(h: &Mat<f64>) -> Result<Spectrum> {
    let dim = h.nrows();
    if h.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: h.ncols() });
    }
    if dim == 0 {
        return Ok(Spectrum { energies: Vec::new(), vectors: Mat::zeros(0, 0) });
    }
    let evd = h.self_adjoint_eigen(Side::Lower).map_err(|_| Error::EigenNoConvergence)?;
    let s = evd.S().column_vector();
    let u = evd.U();

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));

    let energies: Vec<f64> = order.iter().map(|&k| s[k]).collect();
    let mut vectors = Mat::<f64>::zeros(dim, dim);
    for (col, &k) in order.iter().enumerate() {
        let mut pivot = 0;
        for i in 0..dim {
            if u[(i, k)].abs() > u[(pivot, k)].abs() {
                pivot = i;
            }
        }
        let sign = if u[(pivot, k)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..dim {
            vectors[(i, col)] = sign * u[(i, k)];
        }
    }

    let norm = max_abs(h) * dim as f64;
    let hv = h * &vectors;
    for n in 0..dim {
        let residual = (0..dim)
            .map(|i| (hv[(i, n)] - energies[n] * vectors[(i, n)]).powi(2))
            .sum::<f64>()
            .sqrt();
        if !(residual <= 1e-9 * norm.max(f64::MIN_POSITIVE)) {
            return Err(Error::EigenResidual { index: n, residual });
        }
    }
    Ok(Spectrum { energies, vectors })
}

/// `Q = V^T diag(op) V` for a diagonal operator given by its entries,
/// symmetrised to remove rounding skew.
pub fn q_matrix(spectrum: &Spectrum, diagonal: &[f64]) -> Result<Mat<f64>> {
    let dim = spectrum.len();
    if diagonal.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: diagonal.len() });
    }
    let v = spectrum.vectors();
    let scaled = Mat::<f64>::from_fn(dim, dim, |i, j| diagonal[i] * v[(i, j)]);
    let q = v.transpose() * &scaled;
    Ok(Mat::from_fn(dim, dim, |i, j| 0.5 * (q[(i, j)] + q[(j, i)])))
}

/// Rectangle of matrix indices `rows x cols`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexBlock {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl IndexBlock {
    pub fn square(range: Range<usize>) -> Self {
        Self { rows: range.clone(), cols: range }
    }

    fn contains(&self, n: usize, m: usize) -> bool {
        self.rows.contains(&n) && self.cols.contains(&m)
    }
}

/// Shape of the local window used to estimate the RMS around `(n, m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowShape {
    /// `|n' - n| <= w` and `|m' - m| <= w`.
    Square,
    /// Aligned with the diagonal: `|(n' + m') - (n + m)| <= 2w` and
    /// `|(m' - n') - (m - n)| <= w / 2`. Covers about half as many elements
    /// as the square window, all at nearly the same distance from the
    /// diagonal, along which the band profile of `Q` varies fastest.
    #[default]
    Band,
}

#[derive(Debug, Clone)]
pub struct UnfoldedElements {
    pub half_width: usize,
    pub shape: WindowShape,
    pub block: IndexBlock,
    /// `(n, m, Q_nm / rms_nm)` for every kept element.
    pub elements: Vec<(usize, usize, f64)>,
}

impl UnfoldedElements {
    pub fn values(&self) -> Vec<f64> {
        self.elements.iter().map(|e| e.2).collect()
    }
}

/// Divide every off-diagonal element of `block` by the root-mean-square of
/// the off-diagonal elements in the window around it, clipped to the block.
///
/// With `classes`, only elements whose unordered label pair matches that of
/// `(n, m)` enter the RMS, so symmetry-forbidden zeros form their own windows
/// and get dropped by the floor. Elements whose window RMS falls below
/// `1e-12 max|Q|` are dropped. When the block contains both `(n, m)` and
/// `(m, n)` only the upper-triangle copy is returned.
pub fn unfold(
    q: &Mat<f64>,
    block: &IndexBlock,
    half_width: usize,
    shape: WindowShape,
    classes: Option<&[u32]>,
) -> Result<UnfoldedElements> {
    if block.rows.end > q.nrows() || block.cols.end > q.ncols() || block.rows.is_empty() || block.cols.is_empty() {
        return Err(Error::InvalidParameter(format!("block {block:?} outside {}x{} matrix", q.nrows(), q.ncols())));
    }
    if half_width == 0 {
        return Err(Error::InvalidParameter("unfolding half-width must be at least 1".into()));
    }
    if let Some(c) = classes {
        if c.len() != q.nrows() || c.len() != q.ncols() {
            return Err(Error::DimensionMismatch { expected: q.nrows(), got: c.len() });
        }
    }
    let window = 2 * half_width + 1;
    let extent = block.rows.len().min(block.cols.len());
    if window > extent {
        return Err(Error::WindowTooLarge { window, extent });
    }

    let key = |n: usize, m: usize| match classes {
        Some(c) => (c[n].min(c[m]), c[n].max(c[m])),
        None => (0, 0),
    };
    let w = half_width as i64;
    let floor = 1e-12 * max_abs(q);
    let mut elements = Vec::new();
    for n in block.rows.clone() {
        for m in block.cols.clone() {
            if n == m || (n > m && block.contains(m, n)) {
                continue;
            }
            let class = key(n, m);
            let (ni, mi) = (n as i64, m as i64);
            let (rows, cols) = match shape {
                WindowShape::Square => (ni - w..=ni + w, mi - w..=mi + w),
                // bounding box of the band window
                WindowShape::Band => {
                    let r = w + (w / 2 + 1) / 2 + 1;
                    (ni - r..=ni + r, mi - r..=mi + r)
                }
            };
            let (mut sum, mut count) = (0.0, 0usize);
            for a in rows.clone().filter(|&a| a >= block.rows.start as i64 && a < block.rows.end as i64) {
                for b in cols.clone().filter(|&b| b >= block.cols.start as i64 && b < block.cols.end as i64) {
                    if a == b {
                        continue;
                    }
                    if shape == WindowShape::Band
                        && (((a + b) - (ni + mi)).abs() > 2 * w || ((b - a) - (mi - ni)).abs() > w / 2)
                    {
                        continue;
                    }
                    let (a, b) = (a as usize, b as usize);
                    if key(a, b) == class {
                        sum += q[(a, b)] * q[(a, b)];
                        count += 1;
                    }
                }
            }
            let rms = if count == 0 { 0.0 } else { (sum / count as f64).sqrt() };
            if rms > floor {
                elements.push((n, m, q[(n, m)] / rms));
            }
        }
    }
    Ok(UnfoldedElements { half_width, shape, block: block.clone(), elements })
}

/// Resolve exact degeneracies with a symmetry of the Hamiltonian given as a
/// basis permutation `P` (an involution commuting with `H`), and label each
/// level by its degeneracy and `P`-parity.
///
/// Levels closer than `tolerance` form one cluster; inside a cluster the
/// eigenvectors are rotated so that `P` is diagonal. The label is
/// `2 * multiplicity + (1 if odd)`.
pub fn symmetry_adapt(spectrum: &Spectrum, permutation: &[usize], tolerance: f64) -> Result<(Spectrum, Vec<u32>)> {
    let dim = spectrum.len();
    if permutation.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: permutation.len() });
    }
    let e = spectrum.energies();
    let v = spectrum.vectors();
    let mut vectors = v.clone();
    let mut labels = vec![0u32; dim];
    let mut start = 0;
    while start < dim {
        let mut end = start + 1;
        while end < dim && e[end] - e[end - 1] <= tolerance {
            end += 1;
        }
        let k = end - start;
        // R_ij = v_i^T P v_j inside the cluster
        let r = Mat::<f64>::from_fn(k, k, |i, j| {
            (0..dim).map(|x| v[(x, start + i)] * v[(permutation[x], start + j)]).sum::<f64>()
        });
        let r = Mat::<f64>::from_fn(k, k, |i, j| 0.5 * (r[(i, j)] + r[(j, i)]));
        let evd = r.self_adjoint_eigen(Side::Lower).map_err(|_| Error::EigenNoConvergence)?;
        let (parity, rot) = (evd.S().column_vector(), evd.U());
        for c in 0..k {
            let mut col: Vec<f64> = (0..dim).map(|x| (0..k).map(|i| v[(x, start + i)] * rot[(i, c)]).sum()).collect();
            let pivot = (0..dim).fold(0, |p, x| if col[x].abs() > col[p].abs() { x } else { p });
            if col[pivot] < 0.0 {
                col.iter_mut().for_each(|x| *x = -*x);
            }
            for (x, val) in col.into_iter().enumerate() {
                vectors[(x, start + c)] = val;
            }
            labels[start + c] = 2 * k as u32 + u32::from(parity[c] < 0.0);
        }
        start = end;
    }
    Ok((Spectrum { energies: e.to_vec(), vectors }, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{build_basis, build_hamiltonian, number_operator, BhParams, Boundary};
    use approx::assert_abs_diff_eq;

    #[test]
    fn dimer_single_particle() {
        let h = Mat::from_fn(2, 2, |i, j| if i == j { 0.0 } else { -1.0 });
        let s = diagonalize(&h).unwrap();
        assert_abs_diff_eq!(s.energies()[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.energies()[1], 1.0, epsilon = 1e-14);
        assert!(s.orthogonality_error() < 1e-14);
    }

    #[test]
    fn two_bosons_on_two_sites() {
        let b = build_basis(2, 2).unwrap();
        let h = build_hamiltonian(&b, &BhParams::new(2.0, 1.0, 2, Boundary::Open).unwrap()).unwrap();
        let s = diagonalize(&h).unwrap();
        let r5 = 5f64.sqrt();
        let expected = [-(r5 - 1.0), 2.0, r5 + 1.0];
        for (e, x) in s.energies().iter().zip(expected) {
            assert_abs_diff_eq!(*e, x, epsilon = 1e-12);
        }
    }

    #[test]
    fn sign_convention() {
        let h = Mat::from_fn(3, 3, |i, j| ((i + 1) * (j + 1)) as f64 + if i == j { 0.5 * i as f64 } else { 0.0 });
        let s = diagonalize(&h).unwrap();
        for n in 0..3 {
            let col: Vec<f64> = (0..3).map(|i| s.vectors()[(i, n)]).collect();
            let pivot = col.iter().cloned().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn q_for_free_dimer() {
        let b = build_basis(1, 2).unwrap();
        let h = build_hamiltonian(&b, &BhParams::new(0.0, 1.0, 1, Boundary::Open).unwrap()).unwrap();
        let s = diagonalize(&h).unwrap();
        let q = q_matrix(&s, &number_operator(&b, 1).unwrap()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(q[(i, j)].abs(), 0.5, epsilon = 1e-14);
            }
        }
        assert!(q_matrix(&s, &[1.0]).is_err());
    }

    #[test]
    fn site_sum_is_particle_number() {
        let b = build_basis(6, 3).unwrap();
        let h = build_hamiltonian(&b, &BhParams::from_control(5.0, 6, Boundary::Open).unwrap()).unwrap();
        let s = diagonalize(&h).unwrap();
        let dim = b.len();
        let mut total = Mat::<f64>::zeros(dim, dim);
        for site in 1..=3 {
            total += q_matrix(&s, &number_operator(&b, site).unwrap()).unwrap();
        }
        for i in 0..dim {
            for j in 0..dim {
                let target = if i == j { 6.0 } else { 0.0 };
                assert_abs_diff_eq!(total[(i, j)], target, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn spacing_and_width() {
        let h = Mat::from_fn(4, 4, |i, j| if i == j { [0.0, 1.0, 3.0, 6.0][i] } else { 0.0 });
        let s = diagonalize(&h).unwrap();
        assert_eq!(s.width(), 6.0);
        assert_abs_diff_eq!(s.mean_spacing(1..4).unwrap(), 2.5);
        assert!(s.mean_spacing(3..4).is_err());
        assert!(s.mean_spacing(0..5).is_err());
    }

    #[test]
    fn constant_matrix_unfolds_to_one() {
        let q = Mat::from_fn(30, 30, |i, j| if i == j { 7.0 } else { -0.3 });
        let u = unfold(&q, &IndexBlock::square(5..25), 3, WindowShape::Square, None).unwrap();
        assert_eq!(u.elements.len(), 20 * 19 / 2);
        for v in u.values() {
            assert_abs_diff_eq!(v, -1.0, epsilon = 1e-12);
        }
        let q = Mat::from_fn(10, 10, |_, _| 0.25);
        assert!(unfold(&q, &IndexBlock::square(0..10), 1, WindowShape::Band, None).unwrap().values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn unfold_rejects_bad_windows() {
        let q = Mat::from_fn(10, 10, |_, _| 1.0);
        assert!(matches!(unfold(&q, &IndexBlock::square(0..5), 3, WindowShape::Square, None), Err(Error::WindowTooLarge { .. })));
        assert!(unfold(&q, &IndexBlock::square(0..11), 1, WindowShape::Square, None).is_err());
        assert!(unfold(&q, &IndexBlock::square(0..10), 0, WindowShape::Band, None).is_err());
    }

    #[test]
    fn zero_windows_are_dropped() {
        let q = Mat::from_fn(12, 12, |i, j| if i < 6 && j < 6 { 1.0 } else { 0.0 });
        let u = unfold(&q, &IndexBlock { rows: 0..12, cols: 0..12 }, 1, WindowShape::Square, None).unwrap();
        assert!(!u.elements.is_empty());
        assert!(u.elements.iter().all(|&(n, m, _)| n < 7 || m < 7));
        assert!(u.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn band_window_matches_square_on_constant() {
        let q = Mat::from_fn(40, 40, |i, j| if i == j { 1.0 } else { 2.0 });
        let u = unfold(&q, &IndexBlock::square(0..40), 6, WindowShape::Band, None).unwrap();
        assert_eq!(u.elements.len(), 40 * 39 / 2);
        assert!(u.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn classes_separate_windows() {
        // checkerboard of two scales; class-resolved RMS removes the scale
        let labels: Vec<u32> = (0..20).map(|i| (i % 2) as u32).collect();
        let q = Mat::from_fn(20, 20, |i, j| if labels[i] == labels[j] { 3.0 } else { 0.01 });
        let u = unfold(&q, &IndexBlock::square(0..20), 2, WindowShape::Square, Some(&labels)).unwrap();
        assert!(u.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let mixed = unfold(&q, &IndexBlock::square(0..20), 2, WindowShape::Square, None).unwrap();
        assert!(mixed.values().iter().any(|v| (v - 1.0).abs() > 0.1));
        assert!(unfold(&q, &IndexBlock::square(0..20), 2, WindowShape::Square, Some(&labels[..3])).is_err());
    }

    #[test]
    fn ring_doublets_are_parity_resolved() {
        let b = build_basis(6, 3).unwrap();
        let h = build_hamiltonian(&b, &BhParams::from_control(2.0, 6, Boundary::Periodic).unwrap()).unwrap();
        let s = diagonalize(&h).unwrap();
        let p = crate::fock::site_one_reflection(&b, Boundary::Periodic).unwrap();
        let (a, labels) = symmetry_adapt(&s, &p, 1e-9).unwrap();
        assert!(a.orthogonality_error() < 1e-12);
        assert!(labels.iter().any(|&l| l / 2 == 2), "ring has doublets");
        let q = q_matrix(&a, &number_operator(&b, 1).unwrap()).unwrap();
        for i in 0..a.len() {
            for j in 0..a.len() {
                if labels[i] % 2 != labels[j] % 2 {
                    assert_abs_diff_eq!(q[(i, j)], 0.0, epsilon = 1e-12);
                }
            }
        }
        // still eigenvectors
        let hv = &h * a.vectors();
        for n in 0..a.len() {
            for i in 0..a.len() {
                assert_abs_diff_eq!(hv[(i, n)], a.energies()[n] * a.vectors()[(i, n)], epsilon = 1e-10);
            }
        }
    }
}
