//! Parameter records shared by every solver path.
//!
//! Units: ħ = k_B = 1. Frequencies, rates and couplings are angular
//! frequencies; in practice they are given as ratios against a reference
//! frequency (ω_L for two cavities, ω for an array), so that currents come
//! out in units of that frequency squared.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationErrors, Violation};

/// Site index of the right cavity in the two-cavity system (1-based).
pub const RIGHT_CAVITY: usize = 2;

/// Mean photon number of a thermal mode, `1 / (exp(ω/T) - 1)`.
///
/// Returns 0 at `T = 0`.
pub fn bose_occupation(omega: f64, temperature: f64) -> Result<f64> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::Precondition(format!(
            "mode frequency must be positive, got {omega}"
        )));
    }
    if !(temperature >= 0.0) {
        return Err(Error::Precondition(format!(
            "temperature must be non-negative, got {temperature}"
        )));
    }
    if temperature == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 / (omega / temperature).exp_m1())
}

/// A two-level atom dispersively coupled to one cavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomSpec {
    /// ω₀. Only offsets the energy; it never enters a current.
    pub transition_frequency: f64,
    /// χ = g²/(ω₀ − ω_cavity), assumed non-negative.
    pub dispersive_strength: f64,
    /// ⟨σz⟩, conserved by the dynamics.
    pub sigma_z: f64,
    /// 1-based index of the host cavity.
    pub host: usize,
}

impl AtomSpec {
    pub fn new(transition_frequency: f64, dispersive_strength: f64, sigma_z: f64, host: usize) -> Self {
        Self {
            transition_frequency,
            dispersive_strength,
            sigma_z,
            host,
        }
    }

    /// Atom in the right cavity of the two-cavity system.
    pub fn in_right_cavity(transition_frequency: f64, dispersive_strength: f64, sigma_z: f64) -> Self {
        Self::new(transition_frequency, dispersive_strength, sigma_z, RIGHT_CAVITY)
    }

    fn check(&self, sites: usize, out: &mut Vec<Violation>) {
        if !(self.transition_frequency > 0.0) || !self.transition_frequency.is_finite() {
            out.push(violation("atom.transition_frequency", "frequency must be positive"));
        }
        if !(self.dispersive_strength >= 0.0) || !self.dispersive_strength.is_finite() {
            out.push(violation(
                "atom.dispersive_strength",
                "dispersive strength must be non-negative",
            ));
        }
        if !(-1.0..=1.0).contains(&self.sigma_z) {
            out.push(violation("atom.sigma_z", "sigma_z must lie in [-1, 1]"));
        }
        if self.host < 1 || self.host > sites {
            out.push(Violation {
                field: "atom.host",
                message: format!("host cavity must lie in 1..={sites}, got {}", self.host),
            });
        }
    }
}

/// Coupling of one boundary cavity to its thermal reservoir.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReservoirSpec {
    /// Γ_x.
    pub rate: f64,
    /// n̄_x.
    pub occupation: f64,
}

impl ReservoirSpec {
    pub fn new(rate: f64, occupation: f64) -> Self {
        Self { rate, occupation }
    }

    /// Reservoir at temperature `temperature`, seen by a cavity of frequency `omega`.
    pub fn from_temperature(rate: f64, omega: f64, temperature: f64) -> Result<Self> {
        Ok(Self::new(rate, bose_occupation(omega, temperature)?))
    }

    fn check(&self, side: Side, out: &mut Vec<Violation>) {
        let (rate, occ) = match side {
            Side::Left => ("left.rate", "left.occupation"),
            Side::Right => ("right.rate", "right.occupation"),
        };
        if !(self.rate > 0.0) || !self.rate.is_finite() {
            out.push(violation(rate, "rate must be positive"));
        }
        if !(self.occupation >= 0.0) || !self.occupation.is_finite() {
            out.push(violation(occ, "occupation must be non-negative"));
        }
    }
}

#[derive(Clone, Copy)]
enum Side {
    Left,
    Right,
}

/// Two linearly coupled cavities between two reservoirs, with an optional
/// atom in the right cavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoCavitySystem {
    pub omega_left: f64,
    pub omega_right: f64,
    /// Inter-cavity coupling J.
    pub coupling: f64,
    pub left: ReservoirSpec,
    pub right: ReservoirSpec,
    pub atom: Option<AtomSpec>,
}

impl TwoCavitySystem {
    /// γ = (Γ_L + Γ_R)/2.
    pub fn mean_rate(&self) -> f64 {
        0.5 * (self.left.rate + self.right.rate)
    }

    /// Δ_c = ω_L − ω_R.
    pub fn detuning(&self) -> f64 {
        self.omega_left - self.omega_right
    }

    /// χ, or 0 without an atom.
    pub fn chi(&self) -> f64 {
        self.atom.map_or(0.0, |a| a.dispersive_strength)
    }

    /// ⟨σz⟩, or 0 without an atom.
    pub fn sigma_z(&self) -> f64 {
        self.atom.map_or(0.0, |a| a.sigma_z)
    }

    /// n̄_L − n̄_R.
    pub fn occupation_bias(&self) -> f64 {
        self.left.occupation - self.right.occupation
    }

    /// Same system with the atom set to a different ⟨σz⟩.
    pub fn with_sigma_z(mut self, sigma_z: f64) -> Self {
        if let Some(atom) = self.atom.as_mut() {
            atom.sigma_z = sigma_z;
        }
        self
    }

    /// Reverse configuration: reservoirs exchanged together with their rates.
    pub fn swapped_reservoirs(mut self) -> Self {
        std::mem::swap(&mut self.left, &mut self.right);
        self
    }

    pub fn validate(&self) -> Result<(), ValidationErrors> {
        let mut out = Vec::new();
        if !(self.omega_left > 0.0) || !self.omega_left.is_finite() {
            out.push(violation("omega_left", "frequency must be positive"));
        }
        if !(self.omega_right > 0.0) || !self.omega_right.is_finite() {
            out.push(violation("omega_right", "frequency must be positive"));
        }
        if !(self.coupling >= 0.0) || !self.coupling.is_finite() {
            out.push(violation("coupling", "coupling must be non-negative"));
        }
        self.left.check(Side::Left, &mut out);
        self.right.check(Side::Right, &mut out);
        if let Some(atom) = &self.atom {
            atom.check(RIGHT_CAVITY, &mut out);
            if atom.host == 1 {
                out.push(violation("atom.host", "the two-cavity atom sits in the right cavity"));
            }
        }
        finish(out)
    }
}

/// A uniform chain of N cavities with reservoirs on sites 1 and N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArraySystem {
    pub sites: usize,
    pub omega: f64,
    pub coupling: f64,
    pub left: ReservoirSpec,
    pub right: ReservoirSpec,
    pub atom: Option<AtomSpec>,
}

impl ArraySystem {
    pub fn chi(&self) -> f64 {
        self.atom.map_or(0.0, |a| a.dispersive_strength)
    }

    pub fn sigma_z(&self) -> f64 {
        self.atom.map_or(0.0, |a| a.sigma_z)
    }

    pub fn host(&self) -> Option<usize> {
        self.atom.map(|a| a.host)
    }

    pub fn occupation_bias(&self) -> f64 {
        self.left.occupation - self.right.occupation
    }

    /// Copy resized to `sites`, moving the atom (if any) to `host`.
    pub fn resized(mut self, sites: usize, host: usize) -> Self {
        self.sites = sites;
        if let Some(atom) = self.atom.as_mut() {
            atom.host = host;
        }
        self
    }

    pub fn validate(&self) -> Result<(), ValidationErrors> {
        let mut out = Vec::new();
        if self.sites < 2 {
            out.push(violation("sites", "an array needs at least 2 cavities"));
        }
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            out.push(violation("omega", "frequency must be positive"));
        }
        if !(self.coupling >= 0.0) || !self.coupling.is_finite() {
            out.push(violation("coupling", "coupling must be non-negative"));
        }
        self.left.check(Side::Left, &mut out);
        self.right.check(Side::Right, &mut out);
        if let Some(atom) = &self.atom {
            atom.check(self.sites.max(1), &mut out);
        }
        finish(out)
    }
}

impl TwoCavitySystem {
    /// The N = 2 array equivalent, defined only for resonant cavities.
    pub fn as_array(&self) -> Option<ArraySystem> {
        (self.omega_left == self.omega_right).then_some(ArraySystem {
            sites: 2,
            omega: self.omega_left,
            coupling: self.coupling,
            left: self.left,
            right: self.right,
            atom: self.atom,
        })
    }
}

fn violation(field: &'static str, message: &str) -> Violation {
    Violation {
        field,
        message: message.to_string(),
    }
}

fn finish(out: Vec<Violation>) -> Result<(), ValidationErrors> {
    if out.is_empty() {
        Ok(())
    } else {
        Err(ValidationErrors(out))
    }
}
