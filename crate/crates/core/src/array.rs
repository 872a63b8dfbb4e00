//! Steady state of a uniform cavity chain with reservoirs at both ends and an
//! optional atom in cavity m.
//!
//! The unknown is the 2N×2N matrix G = ⟨A†A⟩ over the operator row
//! A = (a₁,…,a_N, a₁σz,…,a_Nσz), which obeys
//! dG/dt = i[M₁,G] + {M₂,G} + M₃. The steady state is found by vectorizing
//! this Sylvester-type equation and solving the sparse linear system.

use faer::Mat;
use log::warn;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::ballistic_current;
use crate::error::{Error, Result};
use crate::linalg::{norm, residual, SparseOperator};
use crate::model::ArraySystem;

/// Steady-state residual tolerance, relative to ‖M₃‖.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Anti-Hermitian part of the raw solve above which a warning is logged
/// (largest entry of G − G†).
pub const HERMITICITY_TOLERANCE: f64 = 1e-10;

/// Anti-Hermitian part, relative to the largest entry of G, above which the
/// solve is rejected as failed.
pub const HERMITICITY_LIMIT: f64 = 1e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// The three block generators of the moment-matrix equation.
#[derive(Debug, Clone)]
pub struct BlockGenerators {
    /// Hermitian part, [[H_c, X], [X, H_c]].
    pub m1: Mat<Complex64>,
    /// Boundary damping, diag(−Γ_L/2, 0, …, 0, −Γ_R/2) on both diagonal blocks.
    pub m2: Mat<Complex64>,
    /// Reservoir drive.
    pub m3: Mat<Complex64>,
    /// H_c: ω on the diagonal, J on the first off-diagonals.
    pub hopping: Mat<Complex64>,
    /// X: χ at (m, m), zero elsewhere.
    pub shift: Mat<Complex64>,
}

/// Builds M₁, M₂ and M₃ for `sys`.
///
/// # Panics
///
/// If the atom's host index lies outside the chain (rejected by validation).
pub fn build_generators(sys: &ArraySystem) -> BlockGenerators {
    let n = sys.sites;
    let d = 2 * n;
    let hopping = Mat::<Complex64>::from_fn(n, n, |i, j| {
        if i == j {
            sys.omega.into()
        } else if i.abs_diff(j) == 1 {
            sys.coupling.into()
        } else {
            ZERO
        }
    });
    let mut shift = Mat::<Complex64>::zeros(n, n);
    if let Some(atom) = sys.atom {
        assert!(
            (1..=n).contains(&atom.host),
            "atom host {} outside a chain of {n} cavities",
            atom.host
        );
        shift[(atom.host - 1, atom.host - 1)] = atom.dispersive_strength.into();
    }

    let m1 = Mat::<Complex64>::from_fn(d, d, |i, j| {
        let (bi, bj) = (i / n, j / n);
        let (si, sj) = (i % n, j % n);
        if bi == bj {
            hopping[(si, sj)]
        } else {
            shift[(si, sj)]
        }
    });

    let s = sys.sigma_z();
    let damping = |k: usize| -> f64 {
        let mut v = 0.0;
        if k == 0 {
            v -= 0.5 * sys.left.rate;
        }
        if k == n - 1 {
            v -= 0.5 * sys.right.rate;
        }
        v
    };
    let drive = |k: usize| -> f64 {
        let mut v = 0.0;
        if k == 0 {
            v += sys.left.rate * sys.left.occupation;
        }
        if k == n - 1 {
            v += sys.right.rate * sys.right.occupation;
        }
        v
    };
    let m2 = Mat::<Complex64>::from_fn(d, d, |i, j| if i == j { damping(i % n).into() } else { ZERO });
    let m3 = Mat::<Complex64>::from_fn(d, d, |i, j| {
        if i % n != j % n {
            ZERO
        } else if i == j {
            drive(i % n).into()
        } else {
            (s * drive(i % n)).into()
        }
    });

    BlockGenerators {
        m1,
        m2,
        m3,
        hopping,
        shift,
    }
}

impl BlockGenerators {
    fn dim(&self) -> usize {
        self.m1.nrows()
    }

    /// i[M₁,G] + {M₂,G} + M₃.
    pub fn rate_of_change(&self, g: &Mat<Complex64>) -> Mat<Complex64> {
        let m1g = &self.m1 * g;
        let gm1 = g * &self.m1;
        let m2g = &self.m2 * g;
        let gm2 = g * &self.m2;
        Mat::from_fn(self.dim(), self.dim(), |i, j| {
            I * (m1g[(i, j)] - gm1[(i, j)]) + m2g[(i, j)] + gm2[(i, j)] + self.m3[(i, j)]
        })
    }

    /// Row-major vectorization of G ↦ i[M₁,G] + {M₂,G}.
    fn vectorized(&self) -> SparseOperator {
        let d = self.dim();
        let mut op = SparseOperator::new(d * d);
        for i in 0..d {
            for j in 0..d {
                let row = i * d + j;
                for k in 0..d {
                    let a = self.m1[(i, k)];
                    if a != ZERO {
                        op.add(row, k * d + j, I * a);
                    }
                    let b = self.m1[(k, j)];
                    if b != ZERO {
                        op.add(row, i * d + k, -I * b);
                    }
                }
                op.add(row, row, self.m2[(i, i)] + self.m2[(j, j)]);
            }
        }
        op
    }
}

/// Steady-state moment matrix ⟨G⟩.
#[derive(Debug, Clone)]
pub struct MomentMatrix {
    pub sites: usize,
    pub matrix: Mat<Complex64>,
    /// ‖i[M₁,G] + {M₂,G} + M₃‖_F / ‖M₃‖_F (absolute when M₃ = 0).
    pub residual: f64,
    /// Largest |G_ij − conj(G_ji)| of the linear solve before projection.
    pub hermiticity_defect: f64,
}

impl MomentMatrix {
    /// ⟨a_j†a_k⟩ with 1-based site indices.
    pub fn field(&self, j: usize, k: usize) -> Complex64 {
        self.matrix[(j - 1, k - 1)]
    }

    /// ⟨a_j†a_k σz⟩ with 1-based site indices.
    pub fn weighted(&self, j: usize, k: usize) -> Complex64 {
        self.matrix[(j - 1, self.sites + k - 1)]
    }

    /// Largest |G_ij − conj(G_ji)|.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.matrix.nrows();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }
}

/// Solves the steady-state moment matrix of `sys`.
///
/// The exact steady state is Hermitian. The linear solve is projected onto
/// Hermitian matrices, which can only move it closer to the exact answer;
/// the size of the discarded anti-Hermitian part is kept in
/// [`MomentMatrix::hermiticity_defect`]. It becomes noticeable when a site
/// is nearly cut off from both reservoirs (an interior atom with χ ≫ J),
/// where the slowest relaxation rate is tiny and the system is stiff.
pub fn steady_state_matrix(sys: &ArraySystem) -> Result<MomentMatrix> {
    sys.validate()?;
    let gens = build_generators(sys);
    let d = gens.dim();
    let op = gens.vectorized();
    let rhs: Vec<Complex64> = (0..d * d).map(|k| -gens.m3[(k / d, k % d)]).collect();
    let raw = op.solve(&rhs)?;

    let mut defect = 0.0f64;
    let mut largest = 0.0f64;
    let mut x = raw.clone();
    for i in 0..d {
        for j in i..d {
            let (a, b) = (raw[i * d + j], raw[j * d + i]);
            defect = defect.max((a - b.conj()).norm());
            largest = largest.max(a.norm()).max(b.norm());
            let mean = 0.5 * (a + b.conj());
            x[i * d + j] = mean;
            x[j * d + i] = mean.conj();
        }
    }
    if defect > HERMITICITY_TOLERANCE {
        warn!("array solve for N = {} left an anti-Hermitian part of {defect:.3e}; projected out", sys.sites);
    }
    if !(defect <= HERMITICITY_LIMIT * largest.max(f64::MIN_POSITIVE)) {
        return Err(Error::Residual {
            what: "array steady-state hermiticity",
            residual: defect,
            tolerance: HERMITICITY_LIMIT * largest,
        });
    }

    let scale = norm(&rhs);
    let abs_residual = residual(&op, &x, &rhs);
    let rel_residual = if scale > 0.0 { abs_residual / scale } else { abs_residual };
    if !(rel_residual < RESIDUAL_TOLERANCE) {
        return Err(Error::Residual {
            what: "array steady state",
            residual: rel_residual,
            tolerance: RESIDUAL_TOLERANCE,
        });
    }
    Ok(MomentMatrix {
        sites: sys.sites,
        matrix: Mat::from_fn(d, d, |i, j| x[i * d + j]),
        residual: rel_residual,
        hermiticity_defect: defect,
    })
}

/// Heat current from the left reservoir into site 1.
///
/// Evaluates Γ_L[(n̄_L − ⟨n₁⟩)ω + (n̄_L⟨σz⟩ − ⟨n₁σz⟩)χδ_{m,1} − J Re⟨a₁†a₂⟩],
/// which reduces to Γ_L[(n̄_L − ⟨n₁⟩)(ω + χ⟨σz⟩δ_{m,1}) − J Re⟨a₁†a₂⟩] for
/// a pure atomic level.
pub fn array_current(sys: &ArraySystem, g: &MomentMatrix) -> f64 {
    boundary_current(sys, g, 1, 2, sys.left.rate, sys.left.occupation)
}

/// Heat current from the right reservoir into site N, the mirror image of
/// [`array_current`].
pub fn right_current(sys: &ArraySystem, g: &MomentMatrix) -> f64 {
    let n = sys.sites;
    boundary_current(sys, g, n, n - 1, sys.right.rate, sys.right.occupation)
}

fn boundary_current(sys: &ArraySystem, g: &MomentMatrix, site: usize, neighbour: usize, rate: f64, nbar: f64) -> f64 {
    let occ = g.field(site, site).re;
    let mut energy = sys.omega * (nbar - occ);
    if let Some(atom) = sys.atom.filter(|a| a.host == site) {
        energy += atom.dispersive_strength * (nbar * atom.sigma_z - g.weighted(site, site).re);
    }
    rate * (energy - sys.coupling * g.field(site, neighbour).re)
}

/// Site occupations ⟨n_j⟩, j = 1…N.
pub fn occupation_profile(g: &MomentMatrix) -> Vec<f64> {
    (1..=g.sites).map(|j| g.field(j, j).re).collect()
}

/// Photon-number current −2J Im⟨a_j†a_{j+1}⟩ across each bond j → j+1.
pub fn bond_currents(sys: &ArraySystem, g: &MomentMatrix) -> Vec<f64> {
    (1..g.sites)
        .map(|j| -2.0 * sys.coupling * g.field(j, j + 1).im)
        .collect()
}

/// Where the atom sits as the chain grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostRule {
    /// m = N.
    LastCavity,
    /// A fixed 1-based site.
    Fixed(usize),
}

impl HostRule {
    /// The 1-based host site for a chain of `sites` cavities.
    pub fn host(self, sites: usize) -> usize {
        match self {
            HostRule::LastCavity => sites,
            HostRule::Fixed(m) => m,
        }
    }
}

/// One row of a size scan.
#[derive(Debug, Clone, Serialize)]
pub struct SizeScanRow {
    pub sites: usize,
    pub i_left: f64,
    pub i_right: f64,
    /// I_L / I₀, absent when the atom-free reference current vanishes.
    pub ratio: Option<f64>,
    pub residual: f64,
}

/// Solves the chain for each size in `sizes`, in parallel, returning rows in
/// the order given. The reference I₀ is the atom-free ballistic current.
pub fn size_scan(template: &ArraySystem, sizes: &[usize], rule: HostRule) -> Result<Vec<SizeScanRow>> {
    let reference = ballistic_current(
        template.omega,
        template.coupling,
        template.left.rate,
        template.right.rate,
        template.occupation_bias(),
    );
    sizes
        .par_iter()
        .map(|&n| {
            let sys = template.resized(n, rule.host(n));
            let g = steady_state_matrix(&sys).map_err(|e| Error::at(format!("N = {n}"), e))?;
            let i_left = array_current(&sys, &g);
            Ok(SizeScanRow {
                sites: n,
                i_left,
                i_right: right_current(&sys, &g),
                ratio: (reference != 0.0).then(|| i_left / reference),
                residual: g.residual,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::current_general;
    use crate::model::{AtomSpec, ReservoirSpec, TwoCavitySystem};
    use crate::moments;
    use proptest::prelude::*;

    const I0: f64 = 0.011538461538461539;

    fn chain(n: usize, chi: Option<f64>, sigma: f64) -> ArraySystem {
        ArraySystem {
            sites: n,
            omega: 1.0,
            coupling: 0.05,
            left: ReservoirSpec::new(0.15, 0.5),
            right: ReservoirSpec::new(0.15, 0.0),
            atom: chi.map(|c| AtomSpec::new(2.0, c, sigma, n)),
        }
    }

    fn max_abs(m: &Mat<Complex64>) -> f64 {
        let mut w = 0.0f64;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                w = w.max(m[(i, j)].norm());
            }
        }
        w
    }

    // Independent route: with K = iM₁ + M₂ the steady state solves
    // K G + G K† = −M₃; diagonalize K = VΛV⁻¹ and divide elementwise.
    fn eigen_lyapunov(sys: &ArraySystem) -> Mat<Complex64> {
        use faer::linalg::solvers::Solve;
        let gens = build_generators(sys);
        let d = gens.dim();
        let k = Mat::<Complex64>::from_fn(d, d, |i, j| I * gens.m1[(i, j)] + gens.m2[(i, j)]);
        let eig = k.eigen().unwrap();
        let v = eig.U().to_owned();
        let lambda: Vec<Complex64> = (0..d).map(|i| eig.S().column_vector()[i]).collect();
        let lu = v.partial_piv_lu();
        // C = V⁻¹ M₃ V⁻†
        let left = lu.solve(&gens.m3);
        let c = lu.solve(&left.adjoint().to_owned()).adjoint().to_owned();
        let gt = Mat::<Complex64>::from_fn(d, d, |i, j| -c[(i, j)] / (lambda[i] + lambda[j].conj()));
        &v * &gt * v.adjoint()
    }

    #[test]
    fn two_site_generators() {
        let g = build_generators(&chain(2, None, 0.0));
        assert_eq!(g.hopping[(0, 0)], Complex64::new(1.0, 0.0));
        assert_eq!(g.hopping[(0, 1)], Complex64::new(0.05, 0.0));
        assert_eq!(g.hopping[(1, 0)], Complex64::new(0.05, 0.0));
        assert_eq!(max_abs(&g.shift), 0.0);
    }

    #[test]
    fn shift_has_single_entry() {
        let g = build_generators(&chain(3, Some(0.1), -1.0));
        for i in 0..3 {
            for j in 0..3 {
                let expected = if (i, j) == (2, 2) { 0.1 } else { 0.0 };
                assert_eq!(g.shift[(i, j)], Complex64::new(expected, 0.0));
            }
        }
        assert_eq!(g.m1[(2, 5)], Complex64::new(0.1, 0.0));
        assert_eq!(g.m1[(5, 2)], Complex64::new(0.1, 0.0));
        assert_eq!(g.m3[(0, 3)], Complex64::new(-0.075, 0.0));
    }

    #[test]
    fn generator_structure() {
        for n in 2..7 {
            let g = build_generators(&chain(n, Some(0.2), 0.3));
            let d = 2 * n;
            for i in 0..d {
                for j in 0..d {
                    assert_eq!(g.m1[(i, j)], g.m1[(j, i)].conj());
                    if i != j {
                        assert_eq!(g.m2[(i, j)], ZERO);
                    }
                }
                assert!(g.m2[(i, i)].re <= 0.0 && g.m2[(i, i)].im == 0.0);
            }
        }
    }

    #[test]
    fn single_site_damping_adds_both_rates() {
        // Not a valid chain, but the builder should still stack both reservoirs.
        let mut s = chain(2, None, 0.0);
        s.sites = 1;
        let g = build_generators(&s);
        assert_eq!(g.m2[(0, 0)], Complex64::new(-0.15, 0.0));
    }

    #[test]
    fn matches_eigen_route() {
        for (n, chi, s) in [(2, Some(0.1), -1.0), (4, Some(0.15), 0.4), (5, None, 0.0), (7, Some(0.3), 1.0)] {
            let sys = chain(n, chi, s);
            let g = steady_state_matrix(&sys).unwrap();
            let reference = eigen_lyapunov(&sys);
            let d = 2 * n;
            let diff = Mat::<Complex64>::from_fn(d, d, |i, j| g.matrix[(i, j)] - reference[(i, j)]);
            assert!(max_abs(&diff) < 1e-10, "N = {n}: {}", max_abs(&diff));
        }
    }

    #[test]
    fn solution_is_stationary() {
        let sys = chain(6, Some(0.1), -1.0);
        let g = steady_state_matrix(&sys).unwrap();
        let gens = build_generators(&sys);
        let r = gens.rate_of_change(&g.matrix);
        assert!(max_abs(&r) < 1e-12);
        assert!(g.residual < 1e-12);
    }

    #[test]
    fn sigma_blocks_mirror_field_blocks() {
        let sys = chain(5, Some(0.2), 0.3);
        let g = steady_state_matrix(&sys).unwrap();
        for j in 0..5 {
            for k in 0..5 {
                assert!((g.matrix[(j, k)] - g.matrix[(j + 5, k + 5)]).norm() < 1e-12);
                assert!((g.matrix[(j, k + 5)] - g.matrix[(j + 5, k)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn two_sites_reproduce_two_cavity_paths() {
        let two = TwoCavitySystem {
            omega_left: 1.0,
            omega_right: 1.0,
            coupling: 0.05,
            left: ReservoirSpec::new(0.1, 0.5),
            right: ReservoirSpec::new(0.03, 0.1),
            atom: Some(AtomSpec::in_right_cavity(2.0, 0.7, -1.0)),
        };
        for s in [-1.0, 1.0, 0.25] {
            let two = two.with_sigma_z(s);
            let arr = two.as_array().unwrap();
            let g = steady_state_matrix(&arr).unwrap();
            let v = moments::steady_state(&two).unwrap();
            assert!((g.field(1, 1) - v.values[0]).norm() < 1e-10);
            assert!((g.field(2, 2) - v.values[1]).norm() < 1e-10);
            assert!((g.field(1, 2) - v.values[2]).norm() < 1e-10);
            assert!((g.field(2, 1) - v.values[3]).norm() < 1e-10);
            assert!((g.weighted(1, 1) - v.values[4]).norm() < 1e-10);
            assert!((g.weighted(2, 2) - v.values[5]).norm() < 1e-10);
            assert!((g.weighted(1, 2) - v.values[6]).norm() < 1e-10);
            let closed = current_general(&two);
            let il = array_current(&arr, &g);
            assert!((il - closed.i_left).abs() < 1e-10 * closed.i_left.abs());
            let ir = right_current(&arr, &g);
            let mr = moments::currents_from_moments(&two, &v).i_right;
            assert!((ir - mr).abs() < 1e-10 * mr.abs());
        }
    }

    #[test]
    fn equilibrium_is_flat() {
        let mut sys = chain(5, None, 0.0);
        sys.right.occupation = 0.5;
        let g = steady_state_matrix(&sys).unwrap();
        for j in 1..=5 {
            for k in 1..=5 {
                let expected = if j == k { 0.5 } else { 0.0 };
                assert!((g.field(j, k) - Complex64::new(expected, 0.0)).norm() < 1e-12);
            }
        }
        assert!(array_current(&sys, &g).abs() < 1e-14);
    }

    #[test]
    fn ballistic_chain() {
        for n in 2..=10 {
            let sys = chain(n, None, 0.0);
            let g = steady_state_matrix(&sys).unwrap();
            assert!((array_current(&sys, &g) - I0).abs() < 1e-12, "N = {n}");
            assert!(g.hermiticity_defect < 1e-10);
            for j in 1..n {
                assert!(g.field(j, j + 1).re.abs() < 1e-10);
            }
            if n >= 4 {
                let p = occupation_profile(&g);
                for w in p[1..n - 1].windows(2) {
                    assert!((w[0] - w[1]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn bond_currents_are_uniform() {
        for sys in [chain(7, None, 0.0), chain(7, Some(0.15), -1.0), chain(6, Some(0.3), 0.2)] {
            let g = steady_state_matrix(&sys).unwrap();
            let b = bond_currents(&sys, &g);
            for x in &b {
                assert!((x - b[0]).abs() < 1e-12 * b[0].abs());
            }
        }
    }

    #[test]
    fn size_scan_reference_values() {
        // Ratios I_L/I₀ from an independent dense vectorized solve.
        let expected = [0.726471, 0.640469, 0.637074, 0.636941, 0.636935];
        let rows = size_scan(&chain(2, Some(0.1), -1.0), &[2, 3, 4, 5, 6], HostRule::LastCavity).unwrap();
        for (row, e) in rows.iter().zip(expected) {
            assert!((row.ratio.unwrap() - e).abs() < 1e-6, "N = {}: {}", row.sites, row.ratio.unwrap());
        }
        let strong = size_scan(&chain(2, Some(0.15), -1.0), &[2, 3, 4], HostRule::LastCavity).unwrap();
        for (row, e) in strong.iter().zip([0.546591, 0.436687, 0.432162]) {
            assert!((row.ratio.unwrap() - e).abs() < 1e-6);
        }
    }

    #[test]
    fn size_scan_keeps_order_and_flags_failures() {
        let rows = size_scan(&chain(2, None, 0.0), &[5, 2, 8, 3], HostRule::LastCavity).unwrap();
        assert_eq!(rows.iter().map(|r| r.sites).collect::<Vec<_>>(), vec![5, 2, 8, 3]);
        for r in &rows {
            assert!((r.ratio.unwrap() - 1.0).abs() < 1e-12);
        }
        let err = size_scan(&chain(2, Some(0.1), -1.0), &[4, 3, 2], HostRule::Fixed(3)).unwrap_err();
        assert!(err.to_string().starts_with("at N = 2"), "{err}");
        assert!(err.is_validation());
    }

    #[test]
    fn raw_solve_is_hermitian_along_size_scans() {
        for n in 2..=12 {
            for chi in [0.1, 0.15] {
                let g = steady_state_matrix(&chain(n, Some(chi), -1.0)).unwrap();
                assert!(g.hermiticity_defect < 1e-10, "N = {n}: {:e}", g.hermiticity_defect);
            }
        }
    }

    #[test]
    fn stiff_interior_atom() {
        // Site 4 is detuned by χ ≫ J and relaxes on a ~1e12 timescale.
        let sys = ArraySystem {
            sites: 7,
            omega: 1.0,
            coupling: 0.01,
            left: ReservoirSpec::new(0.02, 0.0),
            right: ReservoirSpec::new(0.02, 0.285),
            atom: Some(AtomSpec::new(2.0, 0.4256, 0.0, 4)),
        };
        let g = steady_state_matrix(&sys).unwrap();
        assert_eq!(g.hermiticity_error(), 0.0);
        let (il, ir) = (array_current(&sys, &g), right_current(&sys, &g));
        assert!((il + ir).abs() < 1e-10 * il.abs());
        let b = bond_currents(&sys, &g);
        assert!((b[0] - b[5]).abs() < 1e-8 * b[0].abs());
    }

    #[test]
    fn profile_reference_values() {
        let sys = chain(6, Some(0.1), -1.0);
        let p = occupation_profile(&steady_state_matrix(&sys).unwrap());
        let expected = [0.45051522, 0.33723508, 0.33278044, 0.33218896, 0.32152371, 0.04948478];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn boundary_currents_balance(
            n in 2usize..9,
            host_frac in 0.0f64..1.0,
            chi in 0.0f64..0.5,
            sigma in -1.0f64..=1.0,
            j in 0.01f64..0.1,
            gl in 0.02f64..0.3,
            gr in 0.02f64..0.3,
            nl in 0.0f64..0.5,
            nr in 0.0f64..0.5,
        ) {
            let host = 1 + ((n as f64 * host_frac) as usize).min(n - 1);
            let sys = ArraySystem {
                sites: n,
                omega: 1.0,
                coupling: j,
                left: ReservoirSpec::new(gl, nl),
                right: ReservoirSpec::new(gr, nr),
                atom: Some(AtomSpec::new(2.0, chi, sigma, host)),
            };
            let g = steady_state_matrix(&sys).unwrap();
            prop_assert_eq!(g.hermiticity_error(), 0.0);
            for occ in occupation_profile(&g) {
                prop_assert!(occ >= -1e-14);
            }
            let il = array_current(&sys, &g);
            let ir = right_current(&sys, &g);
            // Each current subtracts ⟨n⟩ from n̄, so rounding of the occupations
            // sets an absolute floor.
            let floor = 1e-14 * (gl * nl.max(0.01) + gr * nr.max(0.01));
            prop_assert!((il + ir).abs() <= 1e-10 * il.abs() + floor);
            let b = bond_currents(&sys, &g);
            for x in &b {
                prop_assert!((x - b[0]).abs() <= 1e-10 * b[0].abs() + floor);
            }
        }
    }
}

