//! Closed-form steady state of the two-cavity system: moments, heat
//! currents, switch-regime classification and rectification.
//!
//! The printed closed forms treat ⟨σz⟩ as a number multiplying the field
//! moments, i.e. they assume ⟨a†a σz⟩ = ⟨a†a⟩⟨σz⟩. That holds exactly when
//! the atom sits in |e⟩ or |g⟩ (and, for resonant cavities, for any
//! population). Because σz is conserved, a general atomic population is a
//! convex mixture of the two pure sectors, so every quantity here is
//! evaluated per sector at ⟨σz⟩ = ±1 and mixed with weights (1 ± ⟨σz⟩)/2.

use std::fmt;

use num_complex::Complex64;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::TwoCavitySystem;

/// Tolerance on |α − 1| below which the insulating regime is reported.
pub const INSULATING_ALPHA_TOLERANCE: f64 = 1e-12;

/// Relative tolerance used to decide that a current is zero, measured
/// against Γ_L ω_L (n̄_L − n̄_R).
pub const ZERO_CURRENT_TOLERANCE: f64 = 1e-12;

/// Steady-state field moments of the two-cavity system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyMoments {
    /// ⟨a_L†a_L⟩.
    pub n_left: f64,
    /// ⟨a_R†a_R⟩.
    pub n_right: f64,
    /// ⟨a_L†a_R⟩; ⟨a_L a_R†⟩ is its conjugate.
    pub coherence: Complex64,
}

impl SteadyMoments {
    /// δN = n_L − n_R.
    pub fn delta_n(&self) -> f64 {
        self.n_left - self.n_right
    }
}

/// Transport regime when n̄_L > n̄_R.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Heat flows from the hot to the cold reservoir.
    Conducting,
    /// No heat flows despite the bias.
    Insulating,
    /// Heat flows from the cold to the hot reservoir.
    Reversed,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Conducting => "conducting",
            Regime::Insulating => "insulating",
            Regime::Reversed => "reversed",
        })
    }
}

/// Heat currents at one steady state, in units of the reference frequency squared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurrentReport {
    /// Current from the left reservoir into the system.
    pub i_left: f64,
    /// Current from the right reservoir into the system.
    pub i_right: f64,
    /// (n̄_L − ⟨a_L†a_L⟩) ω_L.
    pub i_nd: f64,
    /// (J/2)(⟨a_L†a_R⟩ + ⟨a_L a_R†⟩).
    pub i_coh: f64,
    /// (Γ_R/Γ_L) / ((χ − ω_R)/ω_L), reported when an atom with χ > ω_R is present.
    pub alpha: Option<f64>,
    /// Sign classification of `i_left`, reported when n̄_L > n̄_R.
    pub regime: Option<Regime>,
}

impl CurrentReport {
    /// I_L + I_R, zero in a steady state.
    pub fn balance(&self) -> f64 {
        self.i_left + self.i_right
    }
}

/// Atomic level for the ±⟨σz⟩ specialisations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    Excited,
    Ground,
}

impl Level {
    pub fn sigma_z(self) -> f64 {
        match self {
            Level::Excited => 1.0,
            Level::Ground => -1.0,
        }
    }
}

/// Rectification coefficient R = −I_f / I_r.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rectification {
    Finite(f64),
    /// The reverse current vanishes. `below` and `above` are the signed
    /// infinities R tends to as Γ_L approaches the blocking point from
    /// below and from above.
    Divergent { below: f64, above: f64 },
    /// Both currents vanish.
    Indeterminate,
}

impl Rectification {
    pub fn value(&self) -> Option<f64> {
        match self {
            Rectification::Finite(r) => Some(*r),
            _ => None,
        }
    }
}

impl fmt::Display for Rectification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rectification::Finite(r) => write!(f, "{r:.16e}"),
            Rectification::Divergent { below, above } => {
                write!(f, "div:{}:{}", signed_inf(*below), signed_inf(*above))
            }
            Rectification::Indeterminate => f.write_str("indeterminate"),
        }
    }
}

impl Serialize for Rectification {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Rectification::Finite(r) => s.serialize_f64(*r),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

fn signed_inf(x: f64) -> &'static str {
    if x < 0.0 {
        "-inf"
    } else {
        "+inf"
    }
}

/// The printed moments at a given ⟨σz⟩, including the auxiliary constant C.
#[derive(Debug, Clone, Copy)]
struct PrintedMoments {
    aux: f64,
    n_left: f64,
    n_right: f64,
    delta_n: f64,
    coherence: Complex64,
}

fn printed_moments(sys: &TwoCavitySystem, sigma_z: f64) -> PrintedMoments {
    let (gl, gr) = (sys.left.rate, sys.right.rate);
    let (nl, nr) = (sys.left.occupation, sys.right.occupation);
    let g = sys.mean_rate();
    let dc = sys.detuning();
    let chi = sys.chi();
    let j = sys.coupling;

    let re = chi * chi - dc * dc + g * g;
    let denom = re * re + 4.0 * g * g * dc * dc;
    let aux = 2.0 * j * j * g * (dc * dc + chi * chi + 2.0 * dc * chi * sigma_z + g * g) / denom;

    let den = aux * (gl + gr) + gl * gr;
    let n_left = (aux * (gl * nl + gr * nr) + gl * gr * nl) / den;
    let n_right = (aux * (gl * nl + gr * nr) + gl * gr * nr) / den;
    let delta_n = gl * gr * (nl - nr) / den;
    let coherence = -j * Complex64::new(chi * sigma_z + dc, g) / Complex64::new(re, -2.0 * g * dc) * delta_n;

    PrintedMoments {
        aux,
        n_left,
        n_right,
        delta_n,
        coherence,
    }
}

fn printed_current(sys: &TwoCavitySystem, sigma_z: f64) -> f64 {
    let (gl, gr) = (sys.left.rate, sys.right.rate);
    let (wl, wr) = (sys.omega_left, sys.omega_right);
    let g = sys.mean_rate();
    let dc = sys.detuning();
    let chi = sys.chi();
    let j = sys.coupling;
    let delta_n = printed_moments(sys, sigma_z).delta_n;

    let re = chi * chi - dc * dc + g * g;
    let denom = re * re + 4.0 * g * g * dc * dc;
    let numer = gl * chi * sigma_z * re
        + (wl * gr + wr * gl) * (dc * dc + g * g)
        + chi * chi * (2.0 * wl * g + dc * gl)
        + 4.0 * dc * chi * sigma_z * wl * g;
    j * j * delta_n * numer / denom
}

/// Atomic sectors contributing to the steady state, as (weight, σz) pairs.
fn sectors(sys: &TwoCavitySystem) -> Vec<(f64, f64)> {
    match sys.atom {
        None => vec![(1.0, 0.0)],
        Some(a) if a.sigma_z == 1.0 || a.sigma_z == -1.0 => vec![(1.0, a.sigma_z)],
        Some(a) => vec![(0.5 * (1.0 + a.sigma_z), 1.0), (0.5 * (1.0 - a.sigma_z), -1.0)],
    }
}

/// Steady-state occupations and inter-cavity coherence.
pub fn steady_moments(sys: &TwoCavitySystem) -> SteadyMoments {
    let mut out = SteadyMoments {
        n_left: 0.0,
        n_right: 0.0,
        coherence: Complex64::new(0.0, 0.0),
    };
    for (w, s) in sectors(sys) {
        let m = printed_moments(sys, s);
        out.n_left += w * m.n_left;
        out.n_right += w * m.n_right;
        out.coherence += w * m.coherence;
    }
    out
}

/// The auxiliary constant C of the steady-state moments at a pure atomic level
/// (or without an atom, where the level is irrelevant).
pub fn auxiliary_constant(sys: &TwoCavitySystem, level: Level) -> f64 {
    printed_moments(sys, if sys.atom.is_some() { level.sigma_z() } else { 0.0 }).aux
}

/// Full non-resonant steady-state current report.
pub fn current_general(sys: &TwoCavitySystem) -> CurrentReport {
    let i_left: f64 = sectors(sys)
        .into_iter()
        .map(|(w, s)| w * printed_current(sys, s))
        .sum();
    let m = steady_moments(sys);
    let i_nd = (sys.left.occupation - m.n_left) * sys.omega_left;
    let i_coh = sys.coupling * m.coherence.re;
    CurrentReport {
        i_left,
        i_right: -i_left,
        i_nd,
        i_coh,
        alpha: alpha(sys),
        regime: regime_from_sign(sys, i_left),
    }
}

/// I = 4ωJ²Γ_LΓ_R (n̄_L − n̄_R) / [(4J² + Γ_LΓ_R)(Γ_L + Γ_R)]: the current of a
/// resonant, atom-free chain of any length.
pub fn ballistic_current(omega: f64, coupling: f64, rate_left: f64, rate_right: f64, bias: f64) -> f64 {
    let j2 = coupling * coupling;
    4.0 * omega * j2 * rate_left * rate_right * bias
        / ((4.0 * j2 + rate_left * rate_right) * (rate_left + rate_right))
}

/// Current through resonant cavities without an atom.
pub fn current_resonant_no_atom(sys: &TwoCavitySystem) -> Result<f64> {
    require_resonant(sys)?;
    if sys.chi() != 0.0 {
        return Err(Error::Precondition(
            "the atom-free resonant current needs χ = 0 (no atom)".into(),
        ));
    }
    Ok(ballistic_current(
        sys.omega_left,
        sys.coupling,
        sys.left.rate,
        sys.right.rate,
        sys.occupation_bias(),
    ))
}

/// Current through resonant cavities with the atom: Θ (c̄/γ)(γω + Γ_L χ⟨σz⟩/2)(n̄_L − n̄_R).
pub fn current_resonant_with_atom(sys: &TwoCavitySystem) -> Result<f64> {
    require_resonant(sys)?;
    require_atom(sys)?;
    let (gl, gr) = (sys.left.rate, sys.right.rate);
    let g = sys.mean_rate();
    let chi = sys.chi();
    let j = sys.coupling;
    let c_bar = 2.0 * j * j * g / (chi * chi + g * g);
    let theta = gl * gr / (c_bar * (gl + gr) + gl * gr);
    Ok(theta * c_bar / g
        * (g * sys.omega_left + 0.5 * gl * chi * sys.sigma_z())
        * sys.occupation_bias())
}

/// Resonant current with equal reservoir rates Γ_L = Γ_R = Γ:
/// 2J²Γ(ω + χ⟨σz⟩/2)(n̄_L − n̄_R) / (4J² + χ² + Γ²).
pub fn current_equal_rates(sys: &TwoCavitySystem) -> Result<f64> {
    require_resonant(sys)?;
    if sys.left.rate != sys.right.rate {
        return Err(Error::Precondition("equal reservoir rates Γ_L = Γ_R required".into()));
    }
    let gamma = sys.left.rate;
    let j2 = sys.coupling * sys.coupling;
    let chi = sys.chi();
    Ok(2.0 * j2 * gamma * (sys.omega_left + 0.5 * chi * sys.sigma_z()) * sys.occupation_bias()
        / (4.0 * j2 + chi * chi + gamma * gamma))
}

/// Reservoir rate Γ = √(4J² + χ²) that maximises the equal-rate current.
pub fn peak_rate(sys: &TwoCavitySystem) -> f64 {
    let chi = sys.chi();
    (4.0 * sys.coupling * sys.coupling + chi * chi).sqrt()
}

/// The equal-rate current at Γ = [`peak_rate`]:
/// J²(ω + χ⟨σz⟩/2)(n̄_L − n̄_R)/√(4J² + χ²).
pub fn peak_current(sys: &TwoCavitySystem) -> f64 {
    let chi = sys.chi();
    sys.coupling * sys.coupling * (sys.omega_left + 0.5 * chi * sys.sigma_z()) * sys.occupation_bias()
        / peak_rate(sys)
}

/// α = (Γ_R/Γ_L) / ((χ − ω_R)/ω_L), when an atom with χ > ω_R is present.
pub fn alpha(sys: &TwoCavitySystem) -> Option<f64> {
    let chi = sys.atom?.dispersive_strength;
    (chi > sys.omega_right)
        .then(|| (sys.right.rate / sys.left.rate) / ((chi - sys.omega_right) / sys.omega_left))
}

pub(crate) fn regime_from_sign(sys: &TwoCavitySystem, i_left: f64) -> Option<Regime> {
    let bias = sys.occupation_bias();
    if !(bias > 0.0) {
        return None;
    }
    let scale = sys.left.rate * sys.omega_left * bias;
    Some(if i_left.abs() <= ZERO_CURRENT_TOLERANCE * scale {
        Regime::Insulating
    } else if i_left > 0.0 {
        Regime::Conducting
    } else {
        Regime::Reversed
    })
}

/// Switch regime from α and the atomic level.
///
/// Requires an atom in |e⟩ or |g⟩, n̄_L > n̄_R, and χ > ω_R (the switching
/// window). The excited atom always conducts; the ground-state atom conducts
/// for α > 1, insulates at α = 1 and reverses the current for α < 1.
pub fn classify_regime(sys: &TwoCavitySystem) -> Result<(f64, Regime)> {
    let atom = sys
        .atom
        .ok_or_else(|| Error::Precondition("regime classification needs an atom".into()))?;
    if !(sys.occupation_bias() > 0.0) {
        return Err(Error::Precondition(
            "regime classification assumes n̄_L > n̄_R".into(),
        ));
    }
    if !(atom.dispersive_strength > sys.omega_right) {
        return Err(Error::Precondition(format!(
            "switching analysis assumes χ > ω_R (χ = {}, ω_R = {})",
            atom.dispersive_strength, sys.omega_right
        )));
    }
    let a = alpha(sys).expect("χ > ω_R checked above");
    let regime = if atom.sigma_z == 1.0 {
        Regime::Conducting
    } else if atom.sigma_z == -1.0 {
        if (a - 1.0).abs() < INSULATING_ALPHA_TOLERANCE {
            Regime::Insulating
        } else if a > 1.0 {
            Regime::Conducting
        } else {
            Regime::Reversed
        }
    } else {
        return Err(Error::Precondition(format!(
            "regime table applies to ⟨σz⟩ = ±1, got {}",
            atom.sigma_z
        )));
    };
    Ok((a, regime))
}

/// Current for the atom in a pure level, with Ω = ω_LΓ_R + Γ_L(ω_R ± χ):
/// J² δN Ω ((Δ_c ± χ)² + γ²) / [(χ² − Δ_c² + γ²)² + 4γ²Δ_c²].
pub fn current_pm(sys: &TwoCavitySystem, level: Level) -> Result<f64> {
    require_atom(sys)?;
    let s = level.sigma_z();
    let (gl, gr) = (sys.left.rate, sys.right.rate);
    let g = sys.mean_rate();
    let dc = sys.detuning();
    let chi = sys.chi();
    let delta_n = printed_moments(sys, s).delta_n;
    let omega_big = sys.omega_left * gr + gl * (sys.omega_right + s * chi);
    let re = chi * chi - dc * dc + g * g;
    let denom = re * re + 4.0 * g * g * dc * dc;
    Ok(sys.coupling * sys.coupling * delta_n * omega_big / denom
        * ((dc + s * chi).powi(2) + g * g))
}

fn require_ground_atom(sys: &TwoCavitySystem) -> Result<()> {
    require_atom(sys)?;
    if sys.sigma_z() != -1.0 {
        return Err(Error::Precondition(
            "forward/reverse currents are defined for the atom in its ground state".into(),
        ));
    }
    Ok(())
}

/// Forward current I_f and reverse current I_r (reservoirs and their rates
/// exchanged), atom in the ground state. I_r is negative for ordinary flow.
pub fn forward_reverse_currents(sys: &TwoCavitySystem) -> Result<(f64, f64)> {
    require_ground_atom(sys)?;
    let (gl, gr) = (sys.left.rate, sys.right.rate);
    let (wl, wr) = (sys.omega_left, sys.omega_right);
    let g = sys.mean_rate();
    let dc = sys.detuning();
    let chi = sys.chi();
    let j2 = sys.coupling * sys.coupling;
    let delta_n = printed_moments(sys, -1.0).delta_n;
    let re = chi * chi - dc * dc + g * g;
    let denom = re * re + 4.0 * g * g * dc * dc;
    let shape = ((dc - chi).powi(2) + g * g) / denom;
    let forward = j2 * delta_n * (wl * gr + gl * (wr - chi)) * shape;
    let reverse = -j2 * delta_n * (wl * gl + gr * (wr - chi)) * shape;
    Ok((forward, reverse))
}

/// R = [ω_LΓ_R + Γ_L(ω_R − χ)] / [ω_LΓ_L + Γ_R(ω_R − χ)], atom in the ground state.
pub fn rectification(sys: &TwoCavitySystem) -> Result<Rectification> {
    require_ground_atom(sys)?;
    let (gl, gr) = (sys.left.rate, sys.right.rate);
    let shifted = sys.omega_right - sys.chi();
    let numer = sys.omega_left * gr + gl * shifted;
    let denom = sys.omega_left * gl + gr * shifted;
    Ok(if denom != 0.0 {
        Rectification::Finite(numer / denom)
    } else if numer == 0.0 {
        Rectification::Indeterminate
    } else {
        // The denominator grows with Γ_L (slope ω_L > 0).
        Rectification::Divergent {
            below: -numer.signum() * f64::INFINITY,
            above: numer.signum() * f64::INFINITY,
        }
    })
}

fn require_resonant(sys: &TwoCavitySystem) -> Result<()> {
    if sys.detuning().abs() > 1e-12 * sys.omega_left {
        return Err(Error::Precondition(format!(
            "resonant cavities required (Δ_c = {})",
            sys.detuning()
        )));
    }
    Ok(())
}

fn require_atom(sys: &TwoCavitySystem) -> Result<()> {
    if sys.atom.is_none() {
        return Err(Error::Precondition("an atom is required".into()));
    }
    Ok(())
}
