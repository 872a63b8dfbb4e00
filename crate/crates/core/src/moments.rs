//! Exact closed equations of motion for the second-order moments of the
//! two-cavity system, solved for the steady state or integrated in time.
//!
//! Because σz commutes with the full generator, the field moments and the
//! σz-weighted field moments form a closed affine system of eight complex
//! unknowns for any atomic population.

use faer::linalg::solvers::Solve;
use faer::Mat;
use log::warn;
use num_complex::Complex64;

use crate::analytic::{alpha, regime_from_sign, CurrentReport};
use crate::error::{Error, Result};
use crate::model::TwoCavitySystem;

pub const DIM: usize = 8;

/// Relative residual accepted from the steady-state solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-12;

/// Spectral bound above which `evolve` warns about the step size.
pub const STEP_WARNING_BOUND: f64 = 0.1;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Moment vector ordered as
/// (n_L, n_R, ⟨a_L†a_R⟩, ⟨a_L a_R†⟩, ⟨n_Lσz⟩, ⟨n_Rσz⟩, ⟨a_L†a_Rσz⟩, ⟨a_L a_R†σz⟩),
/// together with the conserved ⟨σz⟩.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentVector {
    pub values: [Complex64; DIM],
    pub sigma_z: f64,
}

impl MomentVector {
    /// All moments zero: both cavities in the vacuum.
    pub fn vacuum(sigma_z: f64) -> Self {
        Self {
            values: [ZERO; DIM],
            sigma_z,
        }
    }

    /// Uncorrelated state with the given occupations and no coherence.
    pub fn from_occupations(n_left: f64, n_right: f64, sigma_z: f64) -> Self {
        let mut v = Self::vacuum(sigma_z);
        v.values[0] = n_left.into();
        v.values[1] = n_right.into();
        v.values[4] = (n_left * sigma_z).into();
        v.values[5] = (n_right * sigma_z).into();
        v
    }

    pub fn n_left(&self) -> f64 {
        self.values[0].re
    }

    pub fn n_right(&self) -> f64 {
        self.values[1].re
    }

    /// ⟨a_L†a_R⟩.
    pub fn coherence(&self) -> Complex64 {
        self.values[2]
    }

    /// Largest imaginary part among the entries that must be real.
    pub fn max_imaginary_of_real_entries(&self) -> f64 {
        [0, 1, 4, 5]
            .iter()
            .map(|&k| self.values[k].im.abs())
            .fold(0.0, f64::max)
    }

    /// Largest violation of the conjugate pairing of entries (3, 4) and (7, 8).
    pub fn conjugate_pair_error(&self) -> f64 {
        (self.values[2] - self.values[3].conj())
            .norm()
            .max((self.values[6] - self.values[7].conj()).norm())
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    #[cfg(test)]
    fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Affine generator d⟨v⟩/dt = A⟨v⟩ + b.
#[derive(Debug, Clone)]
pub struct MomentGenerator {
    pub matrix: Mat<Complex64>,
    pub drive: [Complex64; DIM],
}

impl MomentGenerator {
    pub fn apply(&self, v: &[Complex64; DIM]) -> [Complex64; DIM] {
        let mut out = self.drive;
        for (i, o) in out.iter_mut().enumerate() {
            for (j, x) in v.iter().enumerate() {
                *o += self.matrix[(i, j)] * x;
            }
        }
        out
    }

    /// ‖A v + b‖ / ‖b‖, or the absolute residual when b = 0.
    pub fn relative_residual(&self, v: &MomentVector) -> f64 {
        let r = self.apply(&v.values);
        let rn = r.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let bn = self.drive.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if bn > 0.0 {
            rn / bn
        } else {
            rn
        }
    }

    pub fn eigenvalues(&self) -> Result<Vec<Complex64>> {
        self.matrix
            .eigenvalues()
            .map_err(|e| Error::NoUniqueSteadyState(format!("eigenvalue computation failed: {e:?}")))
    }

    fn spectral_radius(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.iter().map(|l| l.norm()).fold(0.0, f64::max))
    }
}

/// Builds the moment generator for `sys`.
pub fn generator_matrix(sys: &TwoCavitySystem) -> MomentGenerator {
    let (gl, gr) = (sys.left.rate, sys.right.rate);
    let g = sys.mean_rate();
    let dc = sys.detuning();
    let chi = sys.chi();
    let s = sys.sigma_z();
    let j = sys.coupling;
    let ij = I * j;
    let ichi = I * chi;
    let rot = Complex64::new(-g, dc);

    let mut a = Mat::<Complex64>::zeros(DIM, DIM);
    // Field moments and their σz-weighted copies obey the same hopping and
    // damping; χ couples each coherence to its partner in the other block.
    for off in [0, 4] {
        let (nl, nr, c, ct) = (off, off + 1, off + 2, off + 3);
        let (pc, pct) = ((off + 6) % DIM, (off + 7) % DIM);

        a[(nl, nl)] = (-gl).into();
        a[(nl, c)] = -ij;
        a[(nl, ct)] = ij;

        a[(nr, nr)] = (-gr).into();
        a[(nr, c)] = ij;
        a[(nr, ct)] = -ij;

        a[(c, c)] = rot;
        a[(c, pc)] = -ichi;
        a[(c, nl)] = -ij;
        a[(c, nr)] = ij;

        a[(ct, ct)] = rot.conj();
        a[(ct, pct)] = ichi;
        a[(ct, nl)] = ij;
        a[(ct, nr)] = -ij;
    }

    let (dl, dr) = (gl * sys.left.occupation, gr * sys.right.occupation);
    let drive = [
        dl.into(),
        dr.into(),
        ZERO,
        ZERO,
        (dl * s).into(),
        (dr * s).into(),
        ZERO,
        ZERO,
    ];
    MomentGenerator { matrix: a, drive }
}

/// Steady state from the direct solve A⟨v⟩ = −b.
pub fn steady_state(sys: &TwoCavitySystem) -> Result<MomentVector> {
    let generator = generator_matrix(sys);
    let rhs = Mat::<Complex64>::from_fn(DIM, 1, |i, _| -generator.drive[i]);
    let x = generator.matrix.partial_piv_lu().solve(&rhs);
    let mut v = MomentVector::vacuum(sys.sigma_z());
    for (i, slot) in v.values.iter_mut().enumerate() {
        *slot = x[(i, 0)];
    }
    if v.values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NoUniqueSteadyState(
            "moment generator is singular".into(),
        ));
    }
    let residual = generator.relative_residual(&v);
    if !(residual < RESIDUAL_TOLERANCE) {
        return Err(Error::Residual {
            what: "moment steady state",
            residual,
            tolerance: RESIDUAL_TOLERANCE,
        });
    }
    Ok(v)
}

/// Sampled time evolution.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<MomentVector>,
}

impl Trajectory {
    pub fn last(&self) -> &MomentVector {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Fixed-step fourth-order Runge–Kutta integration from `initial` to `t_final`.
///
/// The last step is shortened so the trajectory ends exactly at `t_final`.
pub fn evolve(sys: &TwoCavitySystem, initial: &MomentVector, t_final: f64, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Precondition(format!("time step must be positive, got {dt}")));
    }
    if !(t_final >= dt) || !t_final.is_finite() {
        return Err(Error::Precondition(format!(
            "final time must be at least one step, got t_final = {t_final}, dt = {dt}"
        )));
    }
    if initial.sigma_z != sys.sigma_z() {
        return Err(Error::Precondition(format!(
            "initial ⟨σz⟩ = {} differs from the system's {}",
            initial.sigma_z,
            sys.sigma_z()
        )));
    }
    let generator = generator_matrix(sys);
    let bound = dt * generator.spectral_radius()?;
    if bound > STEP_WARNING_BOUND {
        warn!("step size dt = {dt} gives dt·max|λ| = {bound:.3} > {STEP_WARNING_BOUND}");
    }

    let steps = (t_final / dt - 1e-9).ceil() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(*initial);

    let mut y = initial.values;
    for k in 1..=steps {
        let h = if k == steps { t_final - (steps - 1) as f64 * dt } else { dt };
        let k1 = generator.apply(&y);
        let k2 = generator.apply(&axpy(&y, 0.5 * h, &k1));
        let k3 = generator.apply(&axpy(&y, 0.5 * h, &k2));
        let k4 = generator.apply(&axpy(&y, h, &k3));
        for i in 0..DIM {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        times.push(if k == steps { t_final } else { k as f64 * dt });
        states.push(MomentVector {
            values: y,
            sigma_z: initial.sigma_z,
        });
    }
    Ok(Trajectory { times, states })
}

fn axpy(y: &[Complex64; DIM], h: f64, k: &[Complex64; DIM]) -> [Complex64; DIM] {
    let mut out = *y;
    for i in 0..DIM {
        out[i] += h * k[i];
    }
    out
}

/// Heat currents evaluated on a moment vector.
///
/// The right current uses ⟨n_Rσz⟩ directly, so it stays exact for a mixed
/// atomic population; for ⟨σz⟩ = ±1 it equals
/// Γ_R(n̄_R − n_R)(ω_R + ⟨σz⟩χ) − Γ_R I_coh.
pub fn currents_from_moments(sys: &TwoCavitySystem, v: &MomentVector) -> CurrentReport {
    let (gl, gr) = (sys.left.rate, sys.right.rate);
    let chi = sys.chi();
    let i_nd = (sys.left.occupation - v.n_left()) * sys.omega_left;
    let i_coh = 0.5 * sys.coupling * (v.values[2] + v.values[3]).re;
    let i_left = gl * (i_nd - i_coh);
    let i_right = gr
        * (sys.omega_right * (sys.right.occupation - v.n_right())
            + chi * (sys.right.occupation * v.sigma_z - v.values[5].re))
        - gr * i_coh;

    // n̄ − n cancels in floating point, so small currents balance only to
    // a rounding floor set by the reservoir energy scale.
    let floor = 1e-13
        * (gl * sys.omega_left * sys.left.occupation.max(0.01)
            + gr * (sys.omega_right + chi) * sys.right.occupation.max(0.01));
    if (i_left + i_right).abs() > 1e-10 * i_left.abs() + floor {
        warn!(
            "currents do not balance (I_L = {i_left:e}, I_R = {i_right:e}); input is not a steady state"
        );
    }
    CurrentReport {
        i_left,
        i_right,
        i_nd,
        i_coh,
        alpha: alpha(sys),
        regime: regime_from_sign(sys, i_left),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{current_general, steady_moments};
    use crate::model::{AtomSpec, ReservoirSpec};
    use proptest::prelude::*;

    fn sys(wr: f64, j: f64, gl: f64, gr: f64, nl: f64, nr: f64, atom: Option<(f64, f64)>) -> TwoCavitySystem {
        TwoCavitySystem {
            omega_left: 1.0,
            omega_right: wr,
            coupling: j,
            left: ReservoirSpec::new(gl, nl),
            right: ReservoirSpec::new(gr, nr),
            atom: atom.map(|(chi, s)| AtomSpec::in_right_cavity(2.0, chi, s)),
        }
    }

    fn fig2() -> TwoCavitySystem {
        sys(1.0, 0.02, 0.064, 0.064, 0.5, 0.0, Some((0.05, 1.0)))
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs())
    }

    #[test]
    fn decoupled_spectrum() {
        let s = sys(0.8, 0.0, 0.1, 0.3, 0.5, 0.0, None);
        let mut ev = generator_matrix(&s).eigenvalues().unwrap();
        ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        let g = 0.2;
        let dc = 0.2;
        let expected = [
            Complex64::new(-0.3, 0.0),
            Complex64::new(-0.3, 0.0),
            Complex64::new(-g, -dc),
            Complex64::new(-g, -dc),
            Complex64::new(-g, dc),
            Complex64::new(-g, dc),
            Complex64::new(-0.1, 0.0),
            Complex64::new(-0.1, 0.0),
        ];
        for (a, b) in ev.iter().zip(expected) {
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn no_chi_decouples_weighted_block() {
        let s = sys(0.9, 0.05, 0.1, 0.2, 0.5, 0.1, Some((0.0, 0.3)));
        let a = generator_matrix(&s).matrix;
        for i in 0..4 {
            for j in 4..8 {
                assert_eq!(a[(i, j)], ZERO);
                assert_eq!(a[(j, i)], ZERO);
            }
        }
    }

    #[test]
    fn fig2_generator_is_stable() {
        for l in generator_matrix(&fig2()).eigenvalues().unwrap() {
            assert!(l.re < 0.0);
        }
    }

    #[test]
    fn equilibrium_steady_state() {
        let s = sys(1.0, 0.05, 0.1, 0.2, 0.4, 0.4, None);
        let v = steady_state(&s).unwrap();
        assert!((v.n_left() - 0.4).abs() < 1e-14);
        assert!((v.n_right() - 0.4).abs() < 1e-14);
        assert!(v.coherence().norm() < 1e-14);
        let r = currents_from_moments(&s, &v);
        assert!(r.i_left.abs() < 1e-15 && r.i_right.abs() < 1e-15);
    }

    #[test]
    fn uncoupled_steady_state() {
        let s = sys(0.9, 0.0, 0.1, 0.2, 0.4, 0.1, Some((0.3, -1.0)));
        let v = steady_state(&s).unwrap();
        assert!((v.n_left() - 0.4).abs() < 1e-15);
        assert!((v.n_right() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_drive_gives_vacuum() {
        let s = sys(1.0, 0.05, 0.1, 0.2, 0.0, 0.0, Some((0.3, -1.0)));
        let v = steady_state(&s).unwrap();
        assert_eq!(v.distance(&MomentVector::vacuum(-1.0)), 0.0);
    }

    #[test]
    fn singular_generator_is_reported() {
        let s = sys(1.0, 0.05, 0.0, 0.0, 0.3, 0.1, None);
        let err = steady_state(&s).unwrap_err();
        assert!(matches!(err, Error::NoUniqueSteadyState(_) | Error::Residual { .. }), "{err}");
    }

    #[test]
    fn fig3_points_match_closed_form() {
        for chi in [0.2, 0.6, 1.0, 1.1, 1.4, 1.9] {
            let s = sys(0.8, 0.05, 0.1, 0.03, 0.5, 0.0, Some((chi, -1.0)));
            let v = steady_state(&s).unwrap();
            let m = steady_moments(&s);
            assert!(rel(v.n_left(), m.n_left) < 1e-10);
            assert!(rel(v.n_right(), m.n_right) < 1e-10);
            assert!((v.coherence() - m.coherence).norm() <= 1e-10 * m.coherence.norm());
        }
    }

    #[test]
    fn single_mode_relaxation() {
        let s = sys(1.0, 0.0, 0.1, 0.2, 0.5, 0.1, Some((0.05, 1.0)));
        let n0 = 2.0;
        let init = MomentVector::from_occupations(n0, 0.0, 1.0);
        let dt = 1e-3 / s.left.rate;
        let traj = evolve(&s, &init, 5.0 / s.left.rate, dt).unwrap();
        let mut worst = 0.0f64;
        for (t, v) in traj.times.iter().zip(&traj.states) {
            let exact = 0.5 + (n0 - 0.5) * (-s.left.rate * t).exp();
            worst = worst.max((v.n_left() - exact).abs());
        }
        assert!(worst < 1e-8, "{worst}");
        assert!((traj.times.last().unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn steady_state_is_a_fixed_point() {
        let s = fig2();
        let v = steady_state(&s).unwrap();
        let traj = evolve(&s, &v, 100.0, 0.05).unwrap();
        for st in &traj.states {
            assert!(st.distance(&v) < 1e-10);
            assert_eq!(st.sigma_z.to_bits(), v.sigma_z.to_bits());
        }
    }

    #[test]
    fn fig2_converges_from_vacuum() {
        let s = fig2();
        let target = steady_state(&s).unwrap();
        let t_final = 20.0 / s.left.rate;
        let traj = evolve(&s, &MomentVector::vacuum(1.0), t_final, 0.05).unwrap();
        assert!(traj.last().distance(&target) < 1e-6 * target.norm());
        // Monotone approach once past the slowest relaxation time.
        let slowest = generator_matrix(&s)
            .eigenvalues()
            .unwrap()
            .iter()
            .map(|l| -l.re)
            .fold(f64::INFINITY, f64::min);
        let start = traj.times.iter().position(|&t| t > 1.0 / slowest).unwrap();
        let dist: Vec<f64> = traj.states[start..].iter().step_by(20).map(|v| v.distance(&target)).collect();
        for w in dist.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn evolve_rejects_bad_input() {
        let s = fig2();
        assert!(evolve(&s, &MomentVector::vacuum(1.0), 1.0, 0.0).is_err());
        assert!(evolve(&s, &MomentVector::vacuum(1.0), 0.01, 0.1).is_err());
        assert!(evolve(&s, &MomentVector::vacuum(-1.0), 1.0, 0.1).is_err());
    }

    #[test]
    fn fig4_coherence_dominates_past_zero_crossing() {
        // Γ_R/Γ_L = 0.3, ω_R = ω_L: zero current at χ = 1.3.
        for chi in [1.35, 1.5, 2.0] {
            let s = sys(1.0, 0.05, 0.1, 0.03, 0.5, 0.0, Some((chi, -1.0)));
            let r = currents_from_moments(&s, &steady_state(&s).unwrap());
            assert!(r.i_coh > r.i_nd);
            assert!(r.i_left < 0.0);
        }
        let s = sys(1.0, 0.05, 0.1, 0.03, 0.5, 0.0, Some((1.2, -1.0)));
        let r = currents_from_moments(&s, &steady_state(&s).unwrap());
        assert!(r.i_coh < r.i_nd);
    }

    #[test]
    fn mixed_population_right_current_balances() {
        let s = sys(0.85, 0.05, 0.1, 0.04, 0.5, 0.2, Some((0.3, 0.4)));
        let r = currents_from_moments(&s, &steady_state(&s).unwrap());
        assert!((r.i_left + r.i_right).abs() < 1e-12 * r.i_left.abs());
        assert!(rel(r.i_left, current_general(&s).i_left) < 1e-10);
    }

    fn arb_system() -> impl Strategy<Value = TwoCavitySystem> {
        (
            0.6f64..1.4,
            0.0f64..0.1,
            0.01f64..0.3,
            0.01f64..0.3,
            0.0f64..0.5,
            0.0f64..0.5,
            prop::option::of((0.0f64..2.0, -1.0f64..=1.0)),
        )
            .prop_map(|(wr, j, gl, gr, nl, nr, atom)| sys(wr, j, gl, gr, nl, nr, atom))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn steady_state_structure(s in arb_system()) {
            let v = steady_state(&s).unwrap();
            prop_assert!(v.max_imaginary_of_real_entries() < 1e-10);
            prop_assert!(v.conjugate_pair_error() < 1e-12);
            prop_assert!(v.n_left() >= 0.0 && v.n_right() >= 0.0);
        }

        #[test]
        fn currents_balance_and_match_closed_form(s in arb_system()) {
            let r = currents_from_moments(&s, &steady_state(&s).unwrap());
            let scale = s.left.rate * s.omega_left * s.occupation_bias().abs();
            // n̄ − ⟨n⟩ is formed by subtraction, which sets an absolute floor.
            let floor = 1e-14 * (s.left.rate * s.left.occupation.max(0.01) + s.right.rate * s.right.occupation.max(0.01));
            prop_assert!((r.i_left + r.i_right).abs() <= 1e-10 * r.i_left.abs() + floor);
            let closed = current_general(&s).i_left;
            prop_assert!((r.i_left - closed).abs() <= 1e-10 * closed.abs().max(1e-12 * scale) + floor);
        }

        #[test]
        fn moments_match_closed_form(s in arb_system()) {
            let v = steady_state(&s).unwrap();
            let m = steady_moments(&s);
            prop_assert!((v.n_left() - m.n_left).abs() <= 1e-10 * m.n_left.abs().max(1e-12));
            prop_assert!((v.n_right() - m.n_right).abs() <= 1e-10 * m.n_right.abs().max(1e-12));
            prop_assert!((v.coherence() - m.coherence).norm() <= 1e-10 * m.coherence.norm().max(1e-14));
        }
    }
}
