//! Fixed-particle-number Fock basis and the Bose-Hubbard Hamiltonian.
//!
//! Energies are measured in units of the tunneling strength `K`. States are
//! enumerated in descending lexicographic order of their occupation vectors,
//! so `(N, 0, .., 0)` is state 0 and `(0, .., 0, N)` is the last one.

use std::collections::HashMap;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    #[default]
    Periodic,
}

impl Boundary {
    /// Nearest-neighbour bonds `(i, j)` as zero-based site pairs.
    ///
    /// The closing bond `(L-1, 0)` of a periodic chain is only added for
    /// `L >= 3`; for two sites it would duplicate the single bond.
    pub fn bonds(self, sites: usize) -> Vec<(usize, usize)> {
        let mut bonds: Vec<(usize, usize)> = (0..sites.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        if self == Boundary::Periodic && sites >= 3 {
            bonds.push((sites - 1, 0));
        }
        bonds
    }
}

#[derive(Debug, Clone)]
pub struct FockBasis {
    particles: usize,
    sites: usize,
    states: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

/// Number of `N`-boson states on `L` sites, `binomial(N + L - 1, L - 1)`,
/// or `None` if it does not fit into `usize`.
pub fn basis_dimension(particles: usize, sites: usize) -> Option<usize> {
    if sites == 0 {
        return None;
    }
    let k = sites - 1;
    let n = particles.checked_add(k)?;
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    usize::try_from(acc).ok()
}

pub fn build_basis(particles: usize, sites: usize) -> Result<FockBasis> {
    if sites == 0 {
        return Err(Error::InvalidParameter("site count must be at least 1".into()));
    }
    let overflow = Error::BasisOverflow { particles, sites };
    let dim = basis_dimension(particles, sites).ok_or(overflow.clone())?;
    if particles > u32::MAX as usize || dim.checked_mul(sites).is_none() {
        return Err(overflow);
    }
    let mut states = Vec::new();
    states.try_reserve_exact(dim).map_err(|_| overflow)?;

    let mut current = vec![0u32; sites];
    enumerate(&mut current, 0, particles as u32, &mut states);
    debug_assert_eq!(states.len(), dim);

    let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    Ok(FockBasis { particles, sites, states, index })
}

fn enumerate(current: &mut [u32], site: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
    if site + 1 == current.len() {
        current[site] = remaining;
        out.push(current.to_vec());
        return;
    }
    for n in (0..=remaining).rev() {
        current[site] = n;
        enumerate(current, site + 1, remaining - n, out);
    }
    current[site] = 0;
}

impl FockBasis {
    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Vec<u32>] {
        &self.states
    }

    pub fn state(&self, index: usize) -> &[u32] {
        &self.states[index]
    }

    pub fn index_of(&self, occupations: &[u32]) -> Option<usize> {
        self.index.get(occupations).copied()
    }
}

/// Bose-Hubbard parameters. `particles` is stored so that the control
/// parameter `u = U N / 2K` is always derived from the same `N` the basis uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BhParams {
    pub interaction: f64,
    pub tunneling: f64,
    pub particles: usize,
    pub boundary: Boundary,
}

impl BhParams {
    pub fn new(interaction: f64, tunneling: f64, particles: usize, boundary: Boundary) -> Result<Self> {
        if !(tunneling > 0.0) || !tunneling.is_finite() {
            return Err(Error::InvalidParameter(format!("tunneling K must be positive, got {tunneling}")));
        }
        if !interaction.is_finite() {
            return Err(Error::InvalidParameter("interaction U must be finite".into()));
        }
        Ok(Self { interaction, tunneling, particles, boundary })
    }

    /// Parameters from the control parameter `u = U N / 2K` with `K = 1`.
    pub fn from_control(u: f64, particles: usize, boundary: Boundary) -> Result<Self> {
        if particles == 0 {
            return Err(Error::InvalidParameter("control parameter needs N > 0".into()));
        }
        Self::new(2.0 * u / particles as f64, 1.0, particles, boundary)
    }

    pub fn control(&self) -> f64 {
        self.interaction * self.particles as f64 / (2.0 * self.tunneling)
    }
}

pub fn build_hamiltonian(basis: &FockBasis, params: &BhParams) -> Result<Mat<f64>> {
    if params.particles != basis.particles() {
        return Err(Error::DimensionMismatch { expected: basis.particles(), got: params.particles });
    }
    let dim = basis.len();
    let bonds = params.boundary.bonds(basis.sites());
    let half_u = 0.5 * params.interaction;
    let mut h = Mat::<f64>::zeros(dim, dim);
    let mut target = vec![0u32; basis.sites()];

    for (s, occ) in basis.states().iter().enumerate() {
        h[(s, s)] = half_u * occ.iter().map(|&n| n as f64 * (n as f64 - 1.0)).sum::<f64>();
        for &(i, j) in &bonds {
            // b_i^dag b_j and its reverse; each pair of states is set once
            for (to, from) in [(i, j), (j, i)] {
                if occ[from] == 0 {
                    continue;
                }
                target.copy_from_slice(occ);
                target[from] -= 1;
                target[to] += 1;
                let t = basis.index_of(&target).expect("hop stays in the basis");
                if t > s {
                    let amp = -params.tunneling * (occ[from] as f64 * (occ[to] as f64 + 1.0)).sqrt();
                    h[(t, s)] += amp;
                    h[(s, t)] += amp;
                }
            }
        }
    }
    Ok(h)
}

/// Diagonal of the occupation operator `n_site` (site is one-based).
pub fn number_operator(basis: &FockBasis, site: usize) -> Result<Vec<f64>> {
    if site == 0 || site > basis.sites() {
        return Err(Error::SiteOutOfRange { site, sites: basis.sites() });
    }
    Ok(basis.states().iter().map(|s| s[site - 1] as f64).collect())
}

/// Fock-state permutation induced by the lattice reflection that keeps site 1
/// in place, `i -> -i (mod L)` on a ring. Only rings with `L >= 3` have such
/// a reflection; it commutes with both the Hamiltonian and `n_1`.
pub fn site_one_reflection(basis: &FockBasis, boundary: Boundary) -> Option<Vec<usize>> {
    let l = basis.sites();
    if boundary != Boundary::Periodic || l < 3 {
        return None;
    }
    let mut image = vec![0u32; l];
    let perm = basis
        .states()
        .iter()
        .map(|s| {
            for (i, slot) in image.iter_mut().enumerate() {
                *slot = s[(l - i) % l];
            }
            basis.index_of(&image).expect("reflection preserves N")
        })
        .collect();
    Some(perm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn full_size_basis() {
        let b = build_basis(38, 3).unwrap();
        assert_eq!(b.len(), 780);
        assert_eq!(basis_dimension(38, 3), Some(780));
    }

    #[test]
    fn small_bases_in_canonical_order() {
        let b = build_basis(1, 2).unwrap();
        assert_eq!(b.states(), &[vec![1, 0], vec![0, 1]]);
        let b = build_basis(2, 2).unwrap();
        assert_eq!(b.states(), &[vec![2, 0], vec![1, 1], vec![0, 2]]);
        let b = build_basis(0, 4).unwrap();
        assert_eq!(b.states(), &[vec![0, 0, 0, 0]]);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(matches!(build_basis(3, 0), Err(Error::InvalidParameter(_))));
        assert!(matches!(build_basis(usize::MAX / 2, 40), Err(Error::BasisOverflow { .. })));
    }

    #[test]
    fn single_particle_dimer() {
        let b = build_basis(1, 2).unwrap();
        let p = BhParams::new(3.7, 1.0, 1, Boundary::Open).unwrap();
        let h = build_hamiltonian(&b, &p).unwrap();
        assert_eq!(h[(0, 0)], 0.0);
        assert_eq!(h[(1, 1)], 0.0);
        assert_eq!(h[(0, 1)], -1.0);
        assert_eq!(h[(1, 0)], -1.0);
    }

    #[test]
    fn two_particle_dimer_matrix() {
        let b = build_basis(2, 2).unwrap();
        let (u, k) = (0.8, 1.3);
        let h = build_hamiltonian(&b, &BhParams::new(u, k, 2, Boundary::Open).unwrap()).unwrap();
        let s2 = 2f64.sqrt();
        let expected = [[u, -s2 * k, 0.0], [-s2 * k, 0.0, -s2 * k], [0.0, -s2 * k, u]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(h[(i, j)], expected[i][j], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn periodic_adds_closing_bond() {
        assert_eq!(Boundary::Open.bonds(3), vec![(0, 1), (1, 2)]);
        assert_eq!(Boundary::Periodic.bonds(3), vec![(0, 1), (1, 2), (2, 0)]);
        assert_eq!(Boundary::Periodic.bonds(2), vec![(0, 1)]);
        let b = build_basis(1, 3).unwrap();
        let h = build_hamiltonian(&b, &BhParams::new(0.0, 1.0, 1, Boundary::Periodic).unwrap()).unwrap();
        assert_eq!(h[(0, 2)], -1.0);
    }

    #[test]
    fn number_operators() {
        let b = build_basis(2, 2).unwrap();
        assert_eq!(number_operator(&b, 1).unwrap(), vec![2.0, 1.0, 0.0]);
        let b1 = build_basis(1, 2).unwrap();
        assert_eq!(number_operator(&b1, 2).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(number_operator(&b, 3), Err(Error::SiteOutOfRange { .. })));
        assert!(matches!(number_operator(&b, 0), Err(Error::SiteOutOfRange { .. })));

        let b = build_basis(5, 3).unwrap();
        let total: f64 = (1..=3).map(|s| number_operator(&b, s).unwrap().iter().sum::<f64>()).sum();
        assert_eq!(total, 5.0 * b.len() as f64);
    }

    #[test]
    fn mismatched_particle_number() {
        let b = build_basis(2, 3).unwrap();
        let p = BhParams::new(1.0, 1.0, 3, Boundary::Open).unwrap();
        assert!(matches!(build_hamiltonian(&b, &p), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn reflection_permutation() {
        let b = build_basis(2, 3).unwrap();
        assert!(site_one_reflection(&b, Boundary::Open).is_none());
        let p = site_one_reflection(&b, Boundary::Periodic).unwrap();
        for (i, &j) in p.iter().enumerate() {
            let (s, t) = (b.state(i), b.state(j));
            assert_eq!((s[0], s[1], s[2]), (t[0], t[2], t[1]));
            assert_eq!(p[j], i);
        }
        // the reflection is a symmetry of the ring Hamiltonian
        let b = build_basis(5, 3).unwrap();
        let p = site_one_reflection(&b, Boundary::Periodic).unwrap();
        let h = build_hamiltonian(&b, &BhParams::new(0.7, 1.0, 5, Boundary::Periodic).unwrap()).unwrap();
        for i in 0..b.len() {
            for j in 0..b.len() {
                assert_eq!(h[(p[i], p[j])], h[(i, j)]);
            }
        }
    }

    #[test]
    fn control_parameter_roundtrip() {
        let p = BhParams::from_control(5.0, 38, Boundary::Open).unwrap();
        assert_abs_diff_eq!(p.control(), 5.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p.interaction, 10.0 / 38.0, epsilon = 1e-16);
        assert!(BhParams::new(1.0, 0.0, 3, Boundary::Open).is_err());
    }
}
