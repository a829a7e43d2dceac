//! No-click probabilities for every subset of the four detectors
//! `{A, A⊥, B, B⊥}`.
//!
//! Five closed-form families (one detector, both detectors of one party, one
//! detector per party, three detectors, all four) cover the sixteen subsets;
//! the remaining members of each family follow from exchanging the two
//! down-conversion processes, exchanging the parties, or turning an analyser
//! by a quarter wave. [`SUBSTITUTIONS`] spells that mapping out once.
//!
//! A second, independent route is kept in [`svd_route`]: the weighted
//! per-mode state is again a two-mode-squeezed Gaussian whose norm is fixed by
//! the singular values of the loss-weighted coupling matrix.

use std::fmt;

use crate::error::{ModelError, Result};
use crate::model::{
    singular_values, CouplingMatrix, SourceScalars, ValidatedConfig,
};

/// Excursions of a raw probability beyond `[0, 1]` larger than this are
/// reported as internal errors instead of being clamped.
pub const CONSISTENCY_SLACK: f64 = 1e-9;

/// Above this mode count powers are evaluated as `exp(N ln base)`.
const LOG_SPACE_MODES: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Detector {
    A,
    APerp,
    B,
    BPerp,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Detector::A, Detector::APerp, Detector::B, Detector::BPerp];

    pub fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn label(self) -> &'static str {
        match self {
            Detector::A => "A",
            Detector::APerp => "A_perp",
            Detector::B => "B",
            Detector::BPerp => "B_perp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Alice,
    Bob,
}

/// Subset of detectors required to stay dark; bit `i` is `Detector::ALL[i]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct DetectorSubset(u8);

impl DetectorSubset {
    pub const EMPTY: DetectorSubset = DetectorSubset(0);
    pub const FULL: DetectorSubset = DetectorSubset(0b1111);

    pub fn from_bits(bits: u8) -> Self {
        DetectorSubset(bits & 0b1111)
    }

    pub fn of(detectors: &[Detector]) -> Self {
        DetectorSubset(detectors.iter().fold(0, |acc, d| acc | d.bit()))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn len(self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, d: Detector) -> bool {
        self.0 & d.bit() != 0
    }

    pub fn is_subset_of(self, other: DetectorSubset) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn all() -> impl Iterator<Item = DetectorSubset> {
        (0..16u8).map(DetectorSubset)
    }
}

impl fmt::Display for DetectorSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("{}");
        }
        let names: Vec<_> =
            Detector::ALL.iter().filter(|d| self.contains(**d)).map(|d| d.label()).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

/// Closed-form family a subset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Empty,
    Single,
    LocalPair,
    CrossPair,
    Triple,
    All,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Empty => "empty",
            Family::Single => "p_nc_single",
            Family::LocalPair => "p_nc_local_pair",
            Family::CrossPair => "p_nc_cross_pair",
            Family::Triple => "p_nc_triple",
            Family::All => "p_nc_all",
        }
    }

    pub fn of(subset: DetectorSubset) -> Family {
        SUBSTITUTIONS[subset.bits() as usize].family
    }
}

/// Which analyser angle a single-angle family reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleSource {
    None,
    Alice,
    Bob,
}

/// How one subset is obtained from its family representative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Substitution {
    pub family: Family,
    /// exchange `g ↔ ḡ`
    pub swap_processes: bool,
    /// angle fed to single-angle families
    pub angle: AngleSource,
    /// quarter-wave shifts `α → α + π/2`, `β → β + π/2` (cross pairs only)
    pub shift_alice: bool,
    pub shift_bob: bool,
}

const fn sub(
    family: Family,
    swap_processes: bool,
    angle: AngleSource,
    shift_alice: bool,
    shift_bob: bool,
) -> Substitution {
    Substitution { family, swap_processes, angle, shift_alice, shift_bob }
}

use AngleSource as Ang;
use Family as F;

/// Indexed by subset bits (A = 1, A⊥ = 2, B = 4, B⊥ = 8).
pub const SUBSTITUTIONS: [Substitution; 16] = [
    sub(F::Empty, false, Ang::None, false, false),    // {}
    sub(F::Single, false, Ang::Alice, false, false),  // A
    sub(F::Single, true, Ang::Alice, false, false),   // A⊥
    sub(F::LocalPair, false, Ang::None, false, false), // A A⊥
    sub(F::Single, true, Ang::Bob, false, false),     // B
    sub(F::CrossPair, false, Ang::None, false, false), // A B
    sub(F::CrossPair, false, Ang::None, true, false), // A⊥ B
    sub(F::Triple, false, Ang::Bob, false, false),    // A A⊥ B
    sub(F::Single, false, Ang::Bob, false, false),    // B⊥
    sub(F::CrossPair, false, Ang::None, false, true), // A B⊥
    sub(F::CrossPair, false, Ang::None, true, true),  // A⊥ B⊥
    sub(F::Triple, true, Ang::Bob, false, false),     // A A⊥ B⊥
    sub(F::LocalPair, false, Ang::None, false, false), // B B⊥
    sub(F::Triple, true, Ang::Alice, false, false),   // A B B⊥
    sub(F::Triple, false, Ang::Alice, false, false),  // A⊥ B B⊥
    sub(F::All, false, Ang::None, false, false),      // all four
];

/// Mode-dependent part of a probability: either the per-mode base raised to
/// `N`, or directly the exponent of the Poisson limit.
#[derive(Debug, Clone, Copy, PartialEq)]
enum ModeFactor {
    PerMode { base: f64, modes: u32 },
    LimitExponent(f64),
}

impl ModeFactor {
    fn value(self) -> f64 {
        match self {
            ModeFactor::PerMode { base, modes } => pow_modes(base, modes),
            ModeFactor::LimitExponent(e) => e.exp(),
        }
    }
}

pub(crate) fn pow_modes(base: f64, modes: u32) -> f64 {
    if modes <= LOG_SPACE_MODES {
        base.powi(modes as i32)
    } else if base <= 0.0 {
        0.0
    } else {
        (modes as f64 * base.ln()).exp()
    }
}

/// Source scalars seen through an optional `g ↔ ḡ` exchange.
#[derive(Debug, Clone, Copy)]
enum Processes {
    Finite { modes: u32, t: f64, t_bar: f64, c2: f64, c2_bar: f64, cosh_sq: f64 },
    Poisson { gamma: f64, gamma_bar: f64 },
}

impl Processes {
    fn new(scalars: &SourceScalars, swap: bool) -> Self {
        let p = match *scalars {
            SourceScalars::Finite { modes, t, t_bar, cosh_2g, cosh_2g_bar, cosh_sq_product } => {
                Processes::Finite {
                    modes,
                    t,
                    t_bar,
                    c2: cosh_2g,
                    c2_bar: cosh_2g_bar,
                    cosh_sq: cosh_sq_product,
                }
            }
            SourceScalars::Poisson { gamma, gamma_bar } => Processes::Poisson { gamma, gamma_bar },
        };
        if swap {
            p.swapped()
        } else {
            p
        }
    }

    fn swapped(self) -> Self {
        match self {
            Processes::Finite { modes, t, t_bar, c2, c2_bar, cosh_sq } => {
                Processes::Finite { modes, t: t_bar, t_bar: t, c2: c2_bar, c2_bar: c2, cosh_sq }
            }
            Processes::Poisson { gamma, gamma_bar } => {
                Processes::Poisson { gamma: gamma_bar, gamma_bar: gamma }
            }
        }
    }
}

fn single(p: &Processes, eta: f64, angle: f64) -> ModeFactor {
    let (c, s) = (angle.cos(), angle.sin());
    match *p {
        Processes::Finite { modes, c2, c2_bar, .. } => ModeFactor::PerMode {
            base: 2.0 / (2.0 - eta + eta * (c * c * c2 + s * s * c2_bar)),
            modes,
        },
        Processes::Poisson { gamma, gamma_bar } => {
            ModeFactor::LimitExponent(-eta * (gamma * c * c + gamma_bar * s * s))
        }
    }
}

fn local_pair(p: &Processes, eta: f64) -> ModeFactor {
    match *p {
        Processes::Finite { modes, c2, c2_bar, .. } => ModeFactor::PerMode {
            base: 4.0 / ((2.0 - eta + eta * c2) * (2.0 - eta + eta * c2_bar)),
            modes,
        },
        Processes::Poisson { gamma, gamma_bar } => {
            ModeFactor::LimitExponent(-eta * (gamma + gamma_bar))
        }
    }
}

fn cross_pair(p: &Processes, eta: f64, alpha: f64, beta: f64, cos_dphi: f64) -> ModeFactor {
    let (c2a, s2a) = ((2.0 * alpha).cos(), (2.0 * alpha).sin());
    let (c2b, s2b) = ((2.0 * beta).cos(), (2.0 * beta).sin());
    let r = 1.0 - eta;
    // the three bracketed terms, per unit of T_g T_ḡ, T_ḡ², T_g²
    let cross = 2.0 * eta * eta * cos_dphi * s2a * s2b;
    let bar = (2.0 - eta + eta * c2a) * (2.0 - eta - eta * c2b);
    let plain = (2.0 - eta - eta * c2a) * (eta - 2.0 - eta * c2b);
    match *p {
        Processes::Finite { modes, t, t_bar, cosh_sq, .. } => {
            let base = 4.0 + cross * t * t_bar - t_bar * t_bar * bar
                + t * t * (plain + 4.0 * r * r * t_bar * t_bar);
            ModeFactor::PerMode { base: 4.0 / (cosh_sq * base), modes }
        }
        Processes::Poisson { gamma, gamma_bar } => {
            let first_order = cross * (gamma * gamma_bar).sqrt() - gamma_bar * bar + gamma * plain;
            ModeFactor::LimitExponent(-gamma - gamma_bar - 0.25 * first_order)
        }
    }
}

fn triple(p: &Processes, eta: f64, angle: f64) -> ModeFactor {
    let r = 1.0 - eta;
    let c2 = (2.0 * angle).cos();
    let s = angle.sin();
    match *p {
        Processes::Finite { modes, t, t_bar, cosh_sq, .. } => {
            let (tg2, tb2) = (t * t, t_bar * t_bar);
            let inner = 1.0
                - 0.5 * r * tb2 * (2.0 - eta - eta * c2)
                - r * tg2 * (1.0 - eta * s * s - r * r * tb2);
            ModeFactor::PerMode { base: 1.0 / (cosh_sq * inner), modes }
        }
        Processes::Poisson { gamma, gamma_bar } => ModeFactor::LimitExponent(
            -gamma - gamma_bar
                + 0.5 * r * gamma_bar * (2.0 - eta - eta * c2)
                + r * gamma * (1.0 - eta * s * s),
        ),
    }
}

fn all_four(p: &Processes, eta: f64) -> ModeFactor {
    let r2 = (1.0 - eta).powi(2);
    match *p {
        Processes::Finite { modes, c2, c2_bar, .. } => ModeFactor::PerMode {
            base: 4.0 / ((1.0 + r2 + (1.0 - r2) * c2) * (1.0 + r2 + (1.0 - r2) * c2_bar)),
            modes,
        },
        Processes::Poisson { gamma, gamma_bar } => {
            ModeFactor::LimitExponent(-(1.0 - r2) * (gamma + gamma_bar))
        }
    }
}

fn dark_factor(config: &ValidatedConfig, subset: DetectorSubset) -> f64 {
    (1.0 - config.detectors().p_dc).powi(subset.len() as i32)
}

/// Raw closed-form no-click probability of `subset` for inputs `(x, y)`,
/// before any range check.
pub fn closed_form_raw(config: &ValidatedConfig, subset: DetectorSubset, x: usize, y: usize) -> f64 {
    let rule = SUBSTITUTIONS[subset.bits() as usize];
    let eta = config.detectors().eta;
    let procs = Processes::new(config.scalars(), rule.swap_processes);
    let (alice, bob) = (config.alice(x), config.bob(y));
    let angle = match rule.angle {
        AngleSource::None => 0.0,
        AngleSource::Alice => alice.angle(),
        AngleSource::Bob => bob.angle(),
    };
    let factor = match rule.family {
        Family::Empty => return 1.0,
        Family::Single => single(&procs, eta, angle),
        Family::LocalPair => local_pair(&procs, eta),
        Family::CrossPair => {
            let quarter = std::f64::consts::FRAC_PI_2;
            let alpha = alice.angle() + if rule.shift_alice { quarter } else { 0.0 };
            let beta = bob.angle() + if rule.shift_bob { quarter } else { 0.0 };
            cross_pair(&procs, eta, alpha, beta, (alice.phase() - bob.phase()).cos())
        }
        Family::Triple => triple(&procs, eta, angle),
        Family::All => all_four(&procs, eta),
    };
    dark_factor(config, subset) * factor.value()
}

/// `p(nc_which)` for one detector.
pub fn p_nc_single(config: &ValidatedConfig, which: Detector, x: usize, y: usize) -> f64 {
    closed_form_raw(config, DetectorSubset::of(&[which]), x, y)
}

/// `p(nc_A & nc_A⊥)` or `p(nc_B & nc_B⊥)`; the two coincide.
pub fn p_nc_local_pair(config: &ValidatedConfig, side: Party) -> f64 {
    let subset = match side {
        Party::Alice => DetectorSubset::of(&[Detector::A, Detector::APerp]),
        Party::Bob => DetectorSubset::of(&[Detector::B, Detector::BPerp]),
    };
    closed_form_raw(config, subset, 0, 0)
}

/// No click in one of Alice's detectors and one of Bob's.
pub fn p_nc_cross_pair(
    config: &ValidatedConfig,
    which_a: Detector,
    which_b: Detector,
    x: usize,
    y: usize,
) -> Result<f64> {
    if !matches!(which_a, Detector::A | Detector::APerp) {
        return Err(ModelError::invalid("which_a", "must be one of Alice's detectors"));
    }
    if !matches!(which_b, Detector::B | Detector::BPerp) {
        return Err(ModelError::invalid("which_b", "must be one of Bob's detectors"));
    }
    Ok(closed_form_raw(config, DetectorSubset::of(&[which_a, which_b]), x, y))
}

/// No click in the three detectors other than `excluded`.
pub fn p_nc_triple(config: &ValidatedConfig, excluded: Detector, x: usize, y: usize) -> f64 {
    let subset = DetectorSubset::from_bits(DetectorSubset::FULL.bits() & !excluded.bit());
    closed_form_raw(config, subset, x, y)
}

pub fn p_nc_all(config: &ValidatedConfig) -> f64 {
    closed_form_raw(config, DetectorSubset::FULL, 0, 0)
}

/// The sixteen subset no-click probabilities for one input pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoClickTable {
    entries: [f64; 16],
}

impl NoClickTable {
    /// Range-check raw values, clamp them into `[0, 1]`, and project onto
    /// the monotone cone so that supersets never exceed subsets.
    pub fn from_raw(raw: [f64; 16]) -> Result<Self> {
        let mut entries = raw;
        for (bits, v) in entries.iter_mut().enumerate() {
            if !v.is_finite() || *v < -CONSISTENCY_SLACK || *v > 1.0 + CONSISTENCY_SLACK {
                return Err(ModelError::consistency(
                    format!("no-click probability of {}", DetectorSubset(bits as u8)),
                    *v,
                ));
            }
            *v = v.clamp(0.0, 1.0);
        }
        entries[0] = 1.0;
        for bits in 1..16usize {
            for d in 0..4 {
                if bits & (1 << d) != 0 {
                    let below = entries[bits & !(1 << d)];
                    if entries[bits] > below {
                        if entries[bits] - below > CONSISTENCY_SLACK {
                            return Err(ModelError::consistency(
                                format!(
                                    "monotonicity of {} over {}",
                                    DetectorSubset(bits as u8),
                                    DetectorSubset((bits & !(1 << d)) as u8)
                                ),
                                entries[bits] - below,
                            ));
                        }
                        entries[bits] = below;
                    }
                }
            }
        }
        Ok(NoClickTable { entries })
    }

    pub fn get(&self, subset: DetectorSubset) -> f64 {
        self.entries[subset.bits() as usize]
    }

    pub fn entries(&self) -> &[f64; 16] {
        &self.entries
    }
}

/// All sixteen closed-form entries for inputs `(x, y)`; handles both finite
/// mode counts and the Poisson limit.
pub fn no_click_table(config: &ValidatedConfig, x: usize, y: usize) -> Result<NoClickTable> {
    let mut raw = [0.0; 16];
    for s in DetectorSubset::all() {
        raw[s.bits() as usize] = closed_form_raw(config, s, x, y);
    }
    NoClickTable::from_raw(raw)
}

/// Table of the `N → ∞` limit; the source must be `PoissonLimit`.
pub fn poisson_limit_table(config: &ValidatedConfig, x: usize, y: usize) -> Result<NoClickTable> {
    if !config.source().is_poisson() {
        return Err(ModelError::invalid("modes", "poisson_limit_table needs a PoissonLimit source"));
    }
    no_click_table(config, x, y)
}

/// The singular-value route: weight the rows/columns of the coupling matrix
/// of every dark detector by `√(1−η)`, then the per-mode factor is
/// `(1−T_g²)(1−T_ḡ²) / ((1−λ1²)(1−λ2²))`; in the Poisson limit its
/// logarithm tends to `λ1² + λ2² − Γ − Γ̄` with `(√Γ, √Γ̄)` as amplitudes.
pub mod svd_route {
    use super::*;

    pub fn raw(config: &ValidatedConfig, subset: DetectorSubset, x: usize, y: usize) -> f64 {
        if subset.is_empty() {
            return 1.0;
        }
        let sr = config.loss().max(0.0).sqrt();
        let w = |d: Detector| if subset.contains(d) { sr } else { 1.0 };
        let (t, t_bar) = config.source().amplitudes();
        let m = CouplingMatrix::unattenuated(t, t_bar, config.alice(x), config.bob(y))
            .scaled([w(Detector::A), w(Detector::APerp)], [w(Detector::B), w(Detector::BPerp)]);
        let svd = singular_values(&m);
        let (l1, l2) = (svd.lambda1 * svd.lambda1, svd.lambda2 * svd.lambda2);
        let factor = match *config.scalars() {
            SourceScalars::Finite { modes, t, t_bar, .. } => {
                let base = (1.0 - t * t) * (1.0 - t_bar * t_bar) / ((1.0 - l1) * (1.0 - l2));
                pow_modes(base, modes)
            }
            SourceScalars::Poisson { gamma, gamma_bar } => (l1 + l2 - gamma - gamma_bar).exp(),
        };
        dark_factor(config, subset) * factor
    }

    pub fn table(config: &ValidatedConfig, x: usize, y: usize) -> Result<NoClickTable> {
        let mut raw = [0.0; 16];
        for s in DetectorSubset::all() {
            raw[s.bits() as usize] = self::raw(config, s, x, y);
        }
        NoClickTable::from_raw(raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DetectorParams, ExperimentConfig, MeasurementSetting, SourceParams};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    fn cfg(source: SourceParams, eta: f64, p_dc: f64, a: [(f64, f64); 2], b: [(f64, f64); 2]) -> ValidatedConfig {
        ExperimentConfig {
            source,
            detectors: DetectorParams::new(eta, p_dc),
            alice_settings: a.map(|(t, p)| MeasurementSetting::new(t, p)),
            bob_settings: b.map(|(t, p)| MeasurementSetting::new(t, p)),
        }
        .validate()
        .unwrap()
    }

    fn random_cfg(rng: &mut ChaCha8Rng, poisson: bool) -> ValidatedConfig {
        let mut ang = || (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
        let (a, b) = ([ang(), ang()], [ang(), ang()]);
        let source = if poisson {
            SourceParams::poisson(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0))
        } else {
            SourceParams::finite(rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0), rng.gen_range(1..=50))
        };
        cfg(source, rng.gen_range(0.0..=1.0), rng.gen_range(0.0..0.1), a, b)
    }

    #[test]
    fn substitution_table_is_keyed_by_subset_size() {
        for s in DetectorSubset::all() {
            let expect = match s.len() {
                0 => Family::Empty,
                1 => Family::Single,
                2 if s.bits() == 0b0011 || s.bits() == 0b1100 => Family::LocalPair,
                2 => Family::CrossPair,
                3 => Family::Triple,
                _ => Family::All,
            };
            assert_eq!(Family::of(s), expect, "{s}");
        }
    }

    #[test]
    fn vacuum_never_clicks() {
        let c = ExperimentConfig::vacuum().validate().unwrap();
        let t = no_click_table(&c, 0, 1).unwrap();
        assert!(t.entries().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn blind_detectors_only_dark_count() {
        let c = cfg(SourceParams::finite(0.8, 0.3, 4), 0.0, 0.01, [(0.3, 0.0); 2], [(1.0, 0.5); 2]);
        for d in Detector::ALL {
            assert_abs_diff_eq!(p_nc_single(&c, d, 0, 0), 0.99, epsilon = 1e-15);
        }
        // η = 0: cross pair reduces to (1 − p_dc)²
        let v = p_nc_cross_pair(&c, Detector::A, Detector::B, 0, 0).unwrap();
        assert_abs_diff_eq!(v, 0.99 * 0.99, epsilon = 1e-14);
    }

    #[test]
    fn cross_pair_rejects_same_party() {
        let c = ExperimentConfig::vacuum().validate().unwrap();
        assert!(p_nc_cross_pair(&c, Detector::B, Detector::B, 0, 0).is_err());
        assert!(p_nc_cross_pair(&c, Detector::A, Detector::APerp, 0, 0).is_err());
    }

    #[test]
    fn cross_pair_without_plain_process_is_single_squeezer() {
        // g = 0: only a⊥ b pairs. Independent evaluation: the weighted state is a
        // two-mode squeezer with amplitude T_ḡ·u·v, u = √R sin α... use the
        // Gaussian norm formula with one nonzero singular value.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let gb = rng.gen_range(0.0..2.0);
            let (al, be) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
            let eta = rng.gen_range(0.0..1.0);
            let n = rng.gen_range(1..5);
            let c = cfg(SourceParams::finite(0.0, gb, n), eta, 0.0, [(al, 0.3); 2], [(be, -0.2); 2]);
            let r = 1.0 - eta;
            let tb = gb.tanh();
            // a⊥† = s A† − C A⊥† ; b† = C B† + s̄ B⊥†. Weighted amplitude on A, B rows:
            let ua = (r * al.sin().powi(2) + al.cos().powi(2)).sqrt();
            let vb = (r * be.cos().powi(2) + be.sin().powi(2)).sqrt();
            let lam2 = (tb * ua * vb).powi(2);
            let expect = ((1.0 - tb * tb) / (1.0 - lam2)).powi(n as i32);
            let got = p_nc_cross_pair(&c, Detector::A, Detector::B, 0, 0).unwrap();
            assert_abs_diff_eq!(got, expect, epsilon = 1e-13);
        }
    }

    #[test]
    fn all_four_at_unit_efficiency_equal_squeezing() {
        for &(g, n, pdc) in &[(0.3, 1u32, 0.0), (0.9, 3, 0.02), (1.7, 25, 0.001)] {
            let c = cfg(SourceParams::finite(g, g, n), 1.0, pdc, [(0.0, 0.0); 2], [(0.0, 0.0); 2]);
            let c2 = (2.0 * g).cosh();
            let expect = (1.0 - pdc).powi(4) * (4.0 / (1.0 + c2).powi(2)).powi(n as i32);
            assert_abs_diff_eq!(p_nc_all(&c), expect, epsilon = 1e-14);
            let sech4n = (1.0 / g.cosh()).powi(4 * n as i32);
            assert_abs_diff_eq!(p_nc_all(&c), (1.0 - pdc).powi(4) * sech4n, epsilon = 1e-14);
        }
    }

    #[test]
    fn local_pair_is_the_same_for_both_parties() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let c = random_cfg(&mut rng, false);
            assert_eq!(p_nc_local_pair(&c, Party::Alice), p_nc_local_pair(&c, Party::Bob));
        }
    }

    #[test]
    fn triple_ignores_the_excluded_party_angle() {
        let base = |alpha: f64, phase: f64| {
            cfg(SourceParams::finite(0.2, 0.3, 3), 0.85, 0.0, [(alpha, phase); 2], [(PI / 7.0, 0.4); 2])
        };
        let a = p_nc_triple(&base(0.0, 0.0), Detector::BPerp, 0, 0);
        let b = p_nc_triple(&base(1.1, 2.0), Detector::BPerp, 0, 0);
        assert_eq!(a, b);
    }

    #[test]
    fn cross_pair_global_phase_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let (g, gb) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
            let (al, be, pa, pb) = (
                rng.gen_range(0.0..TAU),
                rng.gen_range(0.0..TAU),
                rng.gen_range(0.0..TAU),
                rng.gen_range(0.0..TAU),
            );
            let shift = rng.gen_range(-20.0..20.0);
            let eta = rng.gen_range(0.0..1.0);
            let c0 = cfg(SourceParams::finite(g, gb, 2), eta, 0.0, [(al, pa); 2], [(be, pb); 2]);
            let c1 = cfg(
                SourceParams::finite(g, gb, 2),
                eta,
                0.0,
                [(al, pa + shift); 2],
                [(be, pb + shift); 2],
            );
            for (wa, wb) in [(Detector::A, Detector::B), (Detector::APerp, Detector::BPerp)] {
                let v0 = p_nc_cross_pair(&c0, wa, wb, 0, 0).unwrap();
                let v1 = p_nc_cross_pair(&c1, wa, wb, 0, 0).unwrap();
                assert_abs_diff_eq!(v0, v1, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn closed_form_agrees_with_svd_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..10_000 {
            let c = random_cfg(&mut rng, i % 4 == 3);
            for s in DetectorSubset::all() {
                for (x, y) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let a = closed_form_raw(&c, s, x, y);
                    let b = svd_route::raw(&c, s, x, y);
                    assert!((a - b).abs() < 1e-12, "{s} {:?}: {a} vs {b}", c.config());
                }
            }
        }
    }

    #[test]
    fn relabeling_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..2000 {
            let (g, gb) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
            let (al, be) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
            let (pa, pb) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
            let eta = rng.gen_range(0.0..1.0);
            let n = rng.gen_range(1..10);
            let mk = |g, gb, al: f64, be: f64| {
                cfg(SourceParams::finite(g, gb, n), eta, 0.0, [(al, pa); 2], [(be, pb); 2])
            };
            let base = mk(g, gb, al, be);
            let swapped = mk(gb, g, al, be);
            let turned = mk(g, gb, al + FRAC_PI_2, be + FRAC_PI_2);
            let eps = 1e-12;
            // quarter-wave turn ≡ exchanging the processes, for every single
            for d in Detector::ALL {
                assert_abs_diff_eq!(
                    p_nc_single(&turned, d, 0, 0),
                    p_nc_single(&swapped, d, 0, 0),
                    epsilon = eps
                );
            }
            // A⊥ from A by g ↔ ḡ ; B⊥ from A by α → β ; B by both
            let ab = mk(g, gb, be, al);
            let ab_sw = mk(gb, g, be, al);
            assert_abs_diff_eq!(
                p_nc_single(&base, Detector::APerp, 0, 0),
                p_nc_single(&swapped, Detector::A, 0, 0),
                epsilon = eps
            );
            assert_abs_diff_eq!(
                p_nc_single(&base, Detector::BPerp, 0, 0),
                p_nc_single(&ab, Detector::A, 0, 0),
                epsilon = eps
            );
            assert_abs_diff_eq!(
                p_nc_single(&base, Detector::B, 0, 0),
                p_nc_single(&ab_sw, Detector::A, 0, 0),
                epsilon = eps
            );
            // every entry is invariant under (g ↔ ḡ, α → α+π/2, β → β+π/2)
            let t0 = no_click_table(&base, 0, 0).unwrap();
            let both = mk(gb, g, al + FRAC_PI_2, be + FRAC_PI_2);
            let t1 = no_click_table(&both, 0, 0).unwrap();
            for s in DetectorSubset::all() {
                assert_abs_diff_eq!(t0.get(s), t1.get(s), epsilon = eps);
            }
        }
    }

    #[test]
    fn cross_pair_reduces_at_zero_efficiency() {
        let c = cfg(SourceParams::finite(1.3, 0.4, 7), 0.0, 0.0, [(0.2, 0.1); 2], [(1.4, 2.5); 2]);
        for s in DetectorSubset::all() {
            assert_abs_diff_eq!(closed_form_raw(&c, s, 0, 0), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn table_invariants_on_random_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10_000 {
            let c = random_cfg(&mut rng, false);
            let t = no_click_table(&c, rng.gen_range(0..2), rng.gen_range(0..2)).unwrap();
            assert_eq!(t.get(DetectorSubset::EMPTY), 1.0);
            for s in DetectorSubset::all() {
                let v = t.get(s);
                assert!((0.0..=1.0).contains(&v));
                for sup in DetectorSubset::all() {
                    if s.is_subset_of(sup) {
                        assert!(t.get(sup) <= v);
                    }
                }
            }
        }
    }

    #[test]
    fn dark_counts_factor_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for i in 0..2000 {
            let c = random_cfg(&mut rng, i % 2 == 0);
            let mut clean = *c.config();
            clean.detectors.p_dc = 0.0;
            let clean = clean.validate().unwrap();
            let pdc = c.detectors().p_dc;
            let (t, t0) = (no_click_table(&c, 1, 0).unwrap(), no_click_table(&clean, 1, 0).unwrap());
            for s in DetectorSubset::all() {
                let expect = (1.0 - pdc).powi(s.len() as i32) * t0.get(s);
                assert!((t.get(s) - expect).abs() <= 1e-13 * expect.max(1e-300) + 1e-300);
            }
        }
    }

    #[test]
    fn poisson_single_entry_is_exponential() {
        let c = cfg(SourceParams::poisson(0.5, 0.4), 0.8, 0.01, [(0.7, 0.0); 2], [(0.2, 0.0); 2]);
        let expect = 0.99 * (-0.8f64 * (0.5 * 0.7f64.cos().powi(2) + 0.4 * 0.7f64.sin().powi(2))).exp();
        assert_abs_diff_eq!(p_nc_single(&c, Detector::A, 0, 0), expect, epsilon = 1e-15);
        let vac = cfg(SourceParams::poisson(0.0, 0.0), 0.8, 0.0, [(0.7, 0.0); 2], [(0.2, 0.0); 2]);
        assert!(poisson_limit_table(&vac, 0, 0).unwrap().entries().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn poisson_limit_requires_poisson_source() {
        let c = ExperimentConfig::vacuum().validate().unwrap();
        assert!(poisson_limit_table(&c, 0, 0).is_err());
    }

    #[test]
    fn finite_modes_converge_to_poisson_limit() {
        let (gamma, gamma_bar, n) = (0.5f64, 0.4f64, 1_000_000u32);
        let g = (gamma / n as f64).sqrt().atanh();
        let gb = (gamma_bar / n as f64).sqrt().atanh();
        let a = [(0.3, 0.0), (1.1, 0.7)];
        let b = [(0.9, 0.2), (2.0, 1.4)];
        let lim = cfg(SourceParams::poisson(gamma, gamma_bar), 0.8, 0.0, a, b);
        let fin = cfg(SourceParams::finite(g, gb, n), 0.8, 0.0, a, b);
        for (x, y) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let (tl, tf) = (no_click_table(&lim, x, y).unwrap(), no_click_table(&fin, x, y).unwrap());
            for s in DetectorSubset::all() {
                assert!((tl.get(s) - tf.get(s)).abs() < 1e-5, "{s}: {} vs {}", tl.get(s), tf.get(s));
            }
        }
    }

    #[test]
    fn out_of_range_raw_values_are_flagged() {
        let mut raw = [0.5; 16];
        raw[0] = 1.0;
        raw[5] = 1.0 + 1e-6;
        assert!(matches!(NoClickTable::from_raw(raw), Err(ModelError::Consistency { .. })));
        let mut raw = [0.5; 16];
        raw[15] = 0.5 + 1e-13;
        let t = NoClickTable::from_raw(raw).unwrap();
        assert_eq!(t.get(DetectorSubset::FULL), 0.5);
    }
}
