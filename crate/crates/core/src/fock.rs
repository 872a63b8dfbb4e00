//! Brute-force reference: the full Lindblad generator of the two-cavity +
//! atom system on a truncated Fock space.
//!
//! The basis is |n_L, n_R, a⟩ with 0 ≤ n_L, n_R ≤ n_max and a ∈ {g, e}.
//! Both the atomic level and the photon-number difference k = N − N' between
//! the ket and bra are conserved by the generator, so the steady state of a
//! fixed atomic level lives in the k = 0 block of that level. Solving only
//! that block makes the null space one-dimensional and keeps the linear
//! system small.

use std::collections::HashMap;

use faer::Mat;
use num_complex::Complex64;

use crate::analytic::{alpha, regime_from_sign, CurrentReport, Level};
use crate::error::{Error, Result, ValidationErrors, Violation};
use crate::linalg::{norm, SparseOperator};
use crate::model::TwoCavitySystem;

/// Smallest default truncation.
pub const DEFAULT_N_MAX: usize = 12;

/// Largest vectorized space built by default.
pub const DEFAULT_MAX_DIM: usize = 20_000;

/// Steady-state residual ‖L(ρ)‖ accepted from the solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Atomic population used by the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AtomState {
    Excited,
    Ground,
    /// Diagonal mixture with the given ⟨σz⟩.
    Mixture(f64),
}

impl AtomState {
    pub fn from_sigma_z(sigma_z: f64) -> Self {
        if sigma_z == 1.0 {
            AtomState::Excited
        } else if sigma_z == -1.0 {
            AtomState::Ground
        } else {
            AtomState::Mixture(sigma_z)
        }
    }

    pub fn sigma_z(self) -> f64 {
        match self {
            AtomState::Excited => 1.0,
            AtomState::Ground => -1.0,
            AtomState::Mixture(s) => s,
        }
    }

    /// Atomic levels with their weights, dropping empty ones.
    fn sectors(self) -> Vec<(Level, f64)> {
        let s = self.sigma_z();
        [(Level::Excited, 0.5 * (1.0 + s)), (Level::Ground, 0.5 * (1.0 - s))]
            .into_iter()
            .filter(|&(_, w)| w > 0.0)
            .collect()
    }
}

/// Truncation and solver settings for the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FockConfig {
    /// Highest Fock level kept in each cavity.
    pub n_max: usize,
    pub atom_state: AtomState,
    /// Bound on the Gibbs tail mass beyond `n_max` at the larger reservoir occupation.
    pub tail_bound: f64,
    /// Largest vectorized space the oracle agrees to build.
    pub max_dim: usize,
    /// Raise `n_max` until the occupations settle.
    pub escalate: bool,
    /// Occupation change between successive truncations that counts as settled.
    pub escalation_tol: f64,
    pub escalation_step: usize,
}

impl FockConfig {
    /// Default settings for `sys`: the atom state follows its ⟨σz⟩ and n_max
    /// is the larger of [`DEFAULT_N_MAX`] and the smallest truncation meeting
    /// the default tail bound.
    pub fn for_system(sys: &TwoCavitySystem) -> Self {
        let tail_bound = 1e-8;
        let nbar = sys.left.occupation.max(sys.right.occupation);
        Self {
            n_max: DEFAULT_N_MAX.max(truncation_for_tail(nbar, tail_bound)),
            atom_state: match sys.atom {
                Some(a) => AtomState::from_sigma_z(a.sigma_z),
                None => AtomState::Ground,
            },
            tail_bound,
            max_dim: DEFAULT_MAX_DIM,
            escalate: true,
            escalation_tol: 1e-8,
            escalation_step: 2,
        }
    }

    pub fn with_n_max(mut self, n_max: usize) -> Self {
        self.n_max = n_max;
        self
    }

    pub fn fixed(mut self) -> Self {
        self.escalate = false;
        self
    }

    pub fn validate(&self, sys: &TwoCavitySystem) -> Result<(), ValidationErrors> {
        let mut out = Vec::new();
        if self.n_max < 1 {
            out.push(Violation {
                field: "n_max",
                message: "truncation must keep at least one photon".into(),
            });
        }
        let nbar = sys.left.occupation.max(sys.right.occupation);
        let tail = gibbs_tail(nbar, self.n_max);
        if !(tail <= self.tail_bound) {
            out.push(Violation {
                field: "n_max",
                message: format!(
                    "Gibbs tail {tail:.3e} beyond n_max = {} exceeds the bound {:.3e}",
                    self.n_max, self.tail_bound
                ),
            });
        }
        if let AtomState::Mixture(s) = self.atom_state {
            if !(-1.0..=1.0).contains(&s) {
                out.push(Violation {
                    field: "atom_state",
                    message: "sigma_z must lie in [-1, 1]".into(),
                });
            }
        }
        if sys.atom.is_some() && self.atom_state.sigma_z() != sys.sigma_z() {
            out.push(Violation {
                field: "atom_state",
                message: format!(
                    "oracle atom state has ⟨σz⟩ = {} but the system has {}",
                    self.atom_state.sigma_z(),
                    sys.sigma_z()
                ),
            });
        }
        if self.escalate && self.escalation_step == 0 {
            out.push(Violation {
                field: "escalation_step",
                message: "escalation step must be positive".into(),
            });
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(ValidationErrors(out))
        }
    }
}

/// Probability mass above level `n_max` of a thermal mode with occupation `nbar`.
pub fn gibbs_tail(nbar: f64, n_max: usize) -> f64 {
    (nbar / (1.0 + nbar)).powi(n_max as i32 + 1)
}

/// Smallest n_max whose Gibbs tail at `nbar` is at most `bound`.
pub fn truncation_for_tail(nbar: f64, bound: f64) -> usize {
    let mut n = 1;
    while gibbs_tail(nbar, n) > bound && n < 10_000 {
        n += 1;
    }
    n
}

/// Product basis |n_L, n_R, a⟩, atom index 0 = ground, 1 = excited.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FockBasis {
    pub n_max: usize,
}

impl FockBasis {
    pub fn new(n_max: usize) -> Self {
        Self { n_max }
    }

    fn levels(&self) -> usize {
        self.n_max + 1
    }

    pub fn dim(&self) -> usize {
        self.levels() * self.levels() * 2
    }

    pub fn index(&self, n_left: usize, n_right: usize, atom: usize) -> usize {
        (n_left * self.levels() + n_right) * 2 + atom
    }

    pub fn state(&self, i: usize) -> (usize, usize, usize) {
        let atom = i % 2;
        let field = i / 2;
        (field / self.levels(), field % self.levels(), atom)
    }

    fn photons(&self, i: usize) -> usize {
        let (l, r, _) = self.state(i);
        l + r
    }
}

fn atom_index(level: Level) -> usize {
    match level {
        Level::Excited => 1,
        Level::Ground => 0,
    }
}

#[derive(Debug, Clone, Copy)]
enum Cavity {
    Left,
    Right,
}

/// One Lindblad jump: √rate · a (down) or √rate · a† (up) on one cavity.
#[derive(Debug, Clone, Copy)]
struct Jump {
    cavity: Cavity,
    up: bool,
    rate: f64,
}

impl Jump {
    fn set(sys: &TwoCavitySystem) -> [Jump; 4] {
        let (l, r) = (sys.left, sys.right);
        [
            Jump { cavity: Cavity::Left, up: false, rate: l.rate * (l.occupation + 1.0) },
            Jump { cavity: Cavity::Left, up: true, rate: l.rate * l.occupation },
            Jump { cavity: Cavity::Right, up: false, rate: r.rate * (r.occupation + 1.0) },
            Jump { cavity: Cavity::Right, up: true, rate: r.rate * r.occupation },
        ]
    }

    fn on(&self, cavity: Cavity) -> bool {
        matches!((self.cavity, cavity), (Cavity::Left, Cavity::Left) | (Cavity::Right, Cavity::Right))
    }

    /// L|i⟩ as (target, amplitude), or None when it vanishes in the truncated space.
    fn apply(&self, basis: &FockBasis, i: usize) -> Option<(usize, f64)> {
        let (l, r, a) = basis.state(i);
        let n = match self.cavity {
            Cavity::Left => l,
            Cavity::Right => r,
        };
        let m = if self.up {
            (n < basis.n_max).then_some(n + 1)?
        } else {
            n.checked_sub(1)?
        };
        let amp = (self.rate * n.max(m) as f64).sqrt();
        let target = match self.cavity {
            Cavity::Left => basis.index(m, r, a),
            Cavity::Right => basis.index(l, m, a),
        };
        Some((target, amp))
    }

    /// ⟨i|L†L|i⟩ (L†L is diagonal).
    fn number(&self, basis: &FockBasis, i: usize) -> f64 {
        self.apply(basis, i).map_or(0.0, |(_, a)| a * a)
    }
}

/// H|i⟩ as (row, value) pairs. H is real symmetric.
fn hamiltonian_column(sys: &TwoCavitySystem, basis: &FockBasis, i: usize) -> Vec<(usize, f64)> {
    let (l, r, a) = basis.state(i);
    let mut out = Vec::with_capacity(3);
    let mut diag = sys.omega_left * l as f64 + sys.omega_right * r as f64;
    if let Some(atom) = sys.atom {
        let s = if a == 1 { 1.0 } else { -1.0 };
        diag += 0.5 * atom.transition_frequency * s
            + atom.dispersive_strength * (a as f64 + r as f64 * s);
    }
    out.push((i, diag));
    let j = sys.coupling;
    if j != 0.0 {
        // a_L†a_R
        if r > 0 && l < basis.n_max {
            out.push((basis.index(l + 1, r - 1, a), j * ((l + 1) as f64 * r as f64).sqrt()));
        }
        // a_R†a_L
        if l > 0 && r < basis.n_max {
            out.push((basis.index(l - 1, r + 1, a), j * (l as f64 * (r + 1) as f64).sqrt()));
        }
    }
    out
}

/// Subspace of operator space the generator is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiouvilleSpace {
    /// Every |p⟩⟨q|.
    Full,
    /// |p⟩⟨q| with both atoms in `level` and equal total photon numbers.
    SteadySector(Level),
}

/// Vectorized Lindblad generator restricted to a [`LiouvilleSpace`].
#[derive(Debug, Clone)]
pub struct Liouvillian {
    pub basis: FockBasis,
    pub space: LiouvilleSpace,
    pairs: Vec<(usize, usize)>,
    index: HashMap<(usize, usize), usize>,
    op: SparseOperator,
}

impl Liouvillian {
    pub fn dim(&self) -> usize {
        self.pairs.len()
    }

    /// The (ket, bra) basis pair of each vector component.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn position(&self, ket: usize, bra: usize) -> Option<usize> {
        self.index.get(&(ket, bra)).copied()
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.op.apply(x)
    }

    pub fn to_dense(&self) -> Mat<Complex64> {
        self.op.to_dense()
    }

    /// Vectorizes the in-space entries of ρ.
    pub fn vectorize(&self, rho: &Mat<Complex64>) -> Vec<Complex64> {
        self.pairs.iter().map(|&(p, q)| rho[(p, q)]).collect()
    }

    pub fn unvectorize(&self, x: &[Complex64]) -> Mat<Complex64> {
        let mut rho = Mat::<Complex64>::zeros(self.basis.dim(), self.basis.dim());
        for (&(p, q), v) in self.pairs.iter().zip(x) {
            rho[(p, q)] = *v;
        }
        rho
    }
}

fn space_pairs(basis: &FockBasis, space: LiouvilleSpace) -> Vec<(usize, usize)> {
    let d = basis.dim();
    match space {
        LiouvilleSpace::Full => (0..d).flat_map(|p| (0..d).map(move |q| (p, q))).collect(),
        LiouvilleSpace::SteadySector(level) => {
            let a = atom_index(level);
            let states: Vec<usize> = (0..d).filter(|&i| i % 2 == a).collect();
            let mut pairs = Vec::new();
            for &p in &states {
                for &q in &states {
                    if basis.photons(p) == basis.photons(q) {
                        pairs.push((p, q));
                    }
                }
            }
            pairs
        }
    }
}

/// Dimension of the vectorized space without building it.
pub fn space_dim(n_max: usize, space: LiouvilleSpace) -> usize {
    let levels = n_max + 1;
    match space {
        LiouvilleSpace::Full => (levels * levels * 2).pow(2),
        LiouvilleSpace::SteadySector(_) => (0..=2 * n_max)
            .map(|n| {
                let c = levels.min(n + 1).min(2 * n_max + 1 - n);
                c * c
            })
            .sum(),
    }
}

/// Builds the generator ρ ↦ −i[H,ρ] + D_L(ρ) + D_R(ρ) on `space`.
pub fn build_liouvillian(sys: &TwoCavitySystem, cfg: &FockConfig, space: LiouvilleSpace) -> Result<Liouvillian> {
    let dim = space_dim(cfg.n_max, space);
    if dim > cfg.max_dim {
        return Err(Error::DimensionOverflow { dim, limit: cfg.max_dim });
    }
    let basis = FockBasis::new(cfg.n_max);
    let pairs = space_pairs(&basis, space);
    debug_assert_eq!(pairs.len(), dim);
    let index: HashMap<(usize, usize), usize> = pairs.iter().enumerate().map(|(k, &pq)| (pq, k)).collect();
    let jumps = Jump::set(sys);
    let columns: Vec<Vec<(usize, f64)>> = (0..basis.dim()).map(|i| hamiltonian_column(sys, &basis, i)).collect();
    let decay: Vec<f64> = (0..basis.dim())
        .map(|i| jumps.iter().map(|j| j.number(&basis, i)).sum())
        .collect();

    let mut op = SparseOperator::new(dim);
    let locate = |r: usize, c: usize| -> usize {
        *index
            .get(&(r, c))
            .expect("generator maps the space into itself")
    };
    for (col, &(p, q)) in pairs.iter().enumerate() {
        for &(r, h) in &columns[p] {
            op.add(locate(r, q), col, -I * h);
        }
        for &(c, h) in &columns[q] {
            op.add(locate(p, c), col, I * h);
        }
        for jump in &jumps {
            if let (Some((pp, lp)), Some((qq, lq))) = (jump.apply(&basis, p), jump.apply(&basis, q)) {
                op.add(locate(pp, qq), col, (lp * lq).into());
            }
        }
        op.add(col, col, (-0.5 * (decay[p] + decay[q])).into());
    }
    Ok(Liouvillian {
        basis,
        space,
        pairs,
        index,
        op,
    })
}

/// Density matrix on the truncated product space.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    pub basis: FockBasis,
    pub matrix: Mat<Complex64>,
}

impl DensityMatrix {
    pub fn trace(&self) -> Complex64 {
        (0..self.basis.dim()).map(|i| self.matrix[(i, i)]).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let d = self.basis.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue, computed on the blocks of fixed atomic level and
    /// photon number that the steady state is confined to. Entries outside
    /// those blocks are ignored.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let b = self.basis;
        let mut worst = f64::INFINITY;
        for atom in 0..2 {
            for n in 0..=2 * b.n_max {
                let states: Vec<usize> = (0..b.dim())
                    .filter(|&i| i % 2 == atom && b.photons(i) == n)
                    .collect();
                let block = Mat::<Complex64>::from_fn(states.len(), states.len(), |i, j| {
                    self.matrix[(states[i], states[j])]
                });
                worst = worst.min(min_hermitian_eigenvalue(&block)?);
            }
        }
        Ok(worst)
    }

    pub fn sigma_z(&self) -> f64 {
        (0..self.basis.dim())
            .map(|i| if i % 2 == 1 { 1.0 } else { -1.0 } * self.matrix[(i, i)].re)
            .sum()
    }

    pub fn occupation(&self, cavity_left: bool) -> f64 {
        (0..self.basis.dim())
            .map(|i| {
                let (l, r, _) = self.basis.state(i);
                (if cavity_left { l } else { r }) as f64 * self.matrix[(i, i)].re
            })
            .sum()
    }

    /// ⟨a_R†a_R σz⟩.
    pub fn weighted_right_occupation(&self) -> f64 {
        (0..self.basis.dim())
            .map(|i| {
                let (_, r, a) = self.basis.state(i);
                let s = if a == 1 { 1.0 } else { -1.0 };
                s * r as f64 * self.matrix[(i, i)].re
            })
            .sum()
    }

    /// ⟨a_L†a_R⟩ = Tr(ρ a_L†a_R).
    pub fn coherence(&self) -> Complex64 {
        let b = self.basis;
        let mut sum = ZERO;
        for q in 0..b.dim() {
            let (l, r, a) = b.state(q);
            if r > 0 && l < b.n_max {
                let p = b.index(l + 1, r - 1, a);
                sum += self.matrix[(q, p)] * ((l + 1) as f64 * r as f64).sqrt();
            }
        }
        sum
    }

    /// Reduced state of one cavity.
    pub fn reduced(&self, cavity_left: bool) -> Mat<Complex64> {
        let b = self.basis;
        let levels = b.n_max + 1;
        let mut out = Mat::<Complex64>::zeros(levels, levels);
        for m in 0..levels {
            for n in 0..levels {
                let mut s = ZERO;
                for other in 0..levels {
                    for a in 0..2 {
                        let (i, j) = if cavity_left {
                            (b.index(m, other, a), b.index(n, other, a))
                        } else {
                            (b.index(other, m, a), b.index(other, n, a))
                        };
                        s += self.matrix[(i, j)];
                    }
                }
                out[(m, n)] = s;
            }
        }
        out
    }
}

fn min_hermitian_eigenvalue(m: &Mat<Complex64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(f64::INFINITY);
    }
    let eig = m
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::NoUniqueSteadyState(format!("eigen decomposition failed: {e:?}")))?;
    let s = eig.S().column_vector();
    Ok((0..m.nrows()).map(|i| s[i].re).fold(f64::INFINITY, f64::min))
}

/// Steady state of a generator built on a single atomic sector.
///
/// The photon-vacuum population equation is replaced by the trace
/// condition; since the generator preserves the trace, that equation is
/// implied by the others.
pub fn steady_rho(l: &Liouvillian) -> Result<(DensityMatrix, f64)> {
    let level = match l.space {
        LiouvilleSpace::SteadySector(level) => level,
        LiouvilleSpace::Full => {
            return Err(Error::NoUniqueSteadyState(
                "the unrestricted generator has one steady state per atomic population; fix the atomic sector".into(),
            ))
        }
    };
    let vac = l.basis.index(0, 0, atom_index(level));
    let row = l.position(vac, vac).expect("vacuum lies in every sector");
    let trace_row: Vec<(usize, Complex64)> = l
        .pairs
        .iter()
        .enumerate()
        .filter(|(_, &(p, q))| p == q)
        .map(|(k, _)| (k, Complex64::new(1.0, 0.0)))
        .collect();
    let mut system = l.op.clone();
    system.replace_row(row, trace_row);
    let mut rhs = vec![ZERO; l.dim()];
    rhs[row] = Complex64::new(1.0, 0.0);
    let x = system.solve(&rhs)?;

    let residual = norm(&l.apply(&x));
    if !(residual < RESIDUAL_TOLERANCE) {
        return Err(Error::Residual {
            what: "oracle steady state",
            residual,
            tolerance: RESIDUAL_TOLERANCE,
        });
    }
    Ok((
        DensityMatrix {
            basis: l.basis,
            matrix: l.unvectorize(&x),
        },
        residual,
    ))
}

/// Oracle steady state of a two-cavity system.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub n_max: usize,
    pub rho: DensityMatrix,
    /// Largest ‖L(ρ)‖ over the solved sectors.
    pub residual: f64,
    /// Largest occupation change over the last escalation step, if any.
    pub last_change: Option<f64>,
}

fn solve_at(sys: &TwoCavitySystem, cfg: &FockConfig) -> Result<(DensityMatrix, f64)> {
    // Guard before allocating the dense Hilbert-space matrix below.
    let dim = space_dim(cfg.n_max, LiouvilleSpace::SteadySector(Level::Ground));
    if dim > cfg.max_dim {
        return Err(Error::DimensionOverflow { dim, limit: cfg.max_dim });
    }
    let basis = FockBasis::new(cfg.n_max);
    let mut total = Mat::<Complex64>::zeros(basis.dim(), basis.dim());
    let mut residual = 0.0f64;
    for (level, weight) in cfg.atom_state.sectors() {
        let l = build_liouvillian(sys, cfg, LiouvilleSpace::SteadySector(level))?;
        let (rho, res) = steady_rho(&l)?;
        residual = residual.max(res);
        for &(p, q) in l.pairs() {
            total[(p, q)] += weight * rho.matrix[(p, q)];
        }
    }
    Ok((DensityMatrix { basis, matrix: total }, residual))
}

/// Solves the oracle at `cfg.n_max`, then (when enabled) raises the
/// truncation in steps until both occupations move by less than
/// `cfg.escalation_tol`.
pub fn solve_oracle(sys: &TwoCavitySystem, cfg: &FockConfig) -> Result<OracleSolution> {
    sys.validate()?;
    cfg.validate(sys)?;
    let (mut rho, mut residual) = solve_at(sys, cfg)?;
    let mut n_max = cfg.n_max;
    let mut last_change = None;
    if cfg.escalate {
        loop {
            let next = n_max + cfg.escalation_step;
            let next_cfg = FockConfig { n_max: next, ..*cfg };
            let dim = space_dim(next, LiouvilleSpace::SteadySector(Level::Ground));
            if dim > cfg.max_dim {
                return Err(Error::TruncationNotConverged {
                    n_max,
                    change: last_change.unwrap_or(f64::INFINITY),
                });
            }
            let (next_rho, next_res) = solve_at(sys, &next_cfg)?;
            let change = (next_rho.occupation(true) - rho.occupation(true))
                .abs()
                .max((next_rho.occupation(false) - rho.occupation(false)).abs());
            rho = next_rho;
            residual = next_res;
            n_max = next;
            last_change = Some(change);
            if change < cfg.escalation_tol {
                break;
            }
        }
    }
    Ok(OracleSolution {
        n_max,
        rho,
        residual,
        last_change,
    })
}

/// Tr[A ρ] for a real operator A given by columns.
fn expectation(rho: &DensityMatrix, columns: &[Vec<(usize, f64)>]) -> f64 {
    let mut sum = ZERO;
    for (q, col) in columns.iter().enumerate() {
        for &(p, a) in col {
            sum += a * rho.matrix[(q, p)];
        }
    }
    sum.re
}

/// Columns of D_x†(H) = Σ_k L_k†HL_k − ½{L_k†L_k, H} for one cavity.
fn adjoint_dissipator_on_h(sys: &TwoCavitySystem, basis: &FockBasis, cavity: Cavity) -> Vec<Vec<(usize, f64)>> {
    let jumps: Vec<Jump> = Jump::set(sys).into_iter().filter(|j| j.on(cavity)).collect();
    let h: Vec<Vec<(usize, f64)>> = (0..basis.dim()).map(|i| hamiltonian_column(sys, basis, i)).collect();
    // Row index → (source, amplitude) of each jump, to apply L† from the left.
    let mut cols: Vec<HashMap<usize, f64>> = vec![HashMap::new(); basis.dim()];
    for jump in &jumps {
        let mut preimage: HashMap<usize, (usize, f64)> = HashMap::new();
        for i in 0..basis.dim() {
            if let Some((t, a)) = jump.apply(basis, i) {
                preimage.insert(t, (i, a));
            }
        }
        for q in 0..basis.dim() {
            // L†HL|q⟩
            if let Some((t, lq)) = jump.apply(basis, q) {
                for &(r, hv) in &h[t] {
                    if let Some(&(p, lp)) = preimage.get(&r) {
                        *cols[q].entry(p).or_default() += lp * hv * lq;
                    }
                }
            }
            // −½ (L†L H + H L†L)|q⟩
            let nq = jump.number(basis, q);
            for &(r, hv) in &h[q] {
                let nr = jump.number(basis, r);
                *cols[q].entry(r).or_default() -= 0.5 * (nr + nq) * hv;
            }
        }
    }
    cols.into_iter()
        .map(|c| {
            let mut v: Vec<(usize, f64)> = c.into_iter().filter(|&(_, x)| x != 0.0).collect();
            v.sort_by_key(|&(r, _)| r);
            v
        })
        .collect()
}

/// Heat currents I_x = Tr[H D_x(ρ)] evaluated directly on ρ.
pub fn oracle_currents(sys: &TwoCavitySystem, rho: &DensityMatrix) -> CurrentReport {
    let basis = rho.basis;
    let i_left = expectation(rho, &adjoint_dissipator_on_h(sys, &basis, Cavity::Left));
    let i_right = expectation(rho, &adjoint_dissipator_on_h(sys, &basis, Cavity::Right));
    CurrentReport {
        i_left,
        i_right,
        i_nd: (sys.left.occupation - rho.occupation(true)) * sys.omega_left,
        i_coh: sys.coupling * rho.coherence().re,
        alpha: alpha(sys),
        regime: regime_from_sign(sys, i_left),
    }
}

/// Gibbs state of one mode with mean occupation `nbar`, truncated to
/// levels 0…n_max and renormalized.
pub fn gibbs_state(nbar: f64, n_max: usize) -> Mat<Complex64> {
    let q = nbar / (1.0 + nbar);
    let weights: Vec<f64> = (0..=n_max).map(|n| q.powi(n as i32)).collect();
    let z: f64 = weights.iter().sum();
    Mat::from_fn(n_max + 1, n_max + 1, |i, j| if i == j { (weights[i] / z).into() } else { ZERO })
}

/// Uhlmann fidelity Tr√(√σ ρ √σ) between a single-cavity state ρ and the
/// truncated Gibbs state σ at occupation `nbar`.
pub fn thermal_fidelity(rho: &Mat<Complex64>, nbar: f64) -> Result<f64> {
    let n_max = rho.nrows() - 1;
    let sigma = gibbs_state(nbar, n_max);
    let root: Vec<f64> = (0..=n_max).map(|i| sigma[(i, i)].re.sqrt()).collect();
    let m = Mat::<Complex64>::from_fn(n_max + 1, n_max + 1, |i, j| root[i] * rho[(i, j)] * root[j]);
    let eig = m
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::NoUniqueSteadyState(format!("eigen decomposition failed: {e:?}")))?;
    let s = eig.S().column_vector();
    Ok((0..=n_max).map(|i| s[i].re.max(0.0).sqrt()).sum::<f64>().min(1.0))
}

/// g²(0) = ⟨a†²a²⟩ / ⟨a†a⟩² of a single-cavity state.
pub fn g2_zero(rho: &Mat<Complex64>) -> Result<f64> {
    let (mut n1, mut n2) = (0.0, 0.0);
    for n in 0..rho.nrows() {
        let p = rho[(n, n)].re;
        n1 += n as f64 * p;
        n2 += (n * n.saturating_sub(1)) as f64 * p;
    }
    if !(n1 > 0.0) {
        return Err(Error::Undefined("g2(0) at zero mean occupation"));
    }
    Ok(n2 / (n1 * n1))
}
