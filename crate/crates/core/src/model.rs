//! Domain types for the photon-pair Bell test: the pair source, the threshold
//! detectors, the polarization measurement settings, and the 2×2 coupling
//! matrix whose singular values drive every no-click probability.

use std::f64::consts::TAU;
use std::fmt;

use num_complex::Complex64;

use crate::error::{ModelError, Result};

/// Per-mode photon statistics of the down-conversion source.
///
/// `Finite` holds the two squeezing parameters of the coherently pumped
/// processes `a_k b_{k,⊥}` and `a_{k,⊥} b_k`, repeated over `modes` independent
/// mode quadruples. `PoissonLimit` is the `N → ∞` limit at fixed total
/// intensity: each mode carries `tanh²(g) = Γ/N`, `tanh²(ḡ) = Γ̄/N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceParams {
    Finite { g: f64, g_bar: f64, modes: u32 },
    PoissonLimit { gamma: f64, gamma_bar: f64 },
}

impl SourceParams {
    pub fn finite(g: f64, g_bar: f64, modes: u32) -> Self {
        SourceParams::Finite { g, g_bar, modes }
    }

    pub fn poisson(gamma: f64, gamma_bar: f64) -> Self {
        SourceParams::PoissonLimit { gamma, gamma_bar }
    }

    pub fn vacuum() -> Self {
        SourceParams::finite(0.0, 0.0, 1)
    }

    pub fn is_poisson(&self) -> bool {
        matches!(self, SourceParams::PoissonLimit { .. })
    }

    /// The two squeezing-like strengths, `(g, ḡ)` or `(Γ, Γ̄)`.
    pub fn strengths(&self) -> (f64, f64) {
        match *self {
            SourceParams::Finite { g, g_bar, .. } => (g, g_bar),
            SourceParams::PoissonLimit { gamma, gamma_bar } => (gamma, gamma_bar),
        }
    }

    /// Same source with the two processes exchanged.
    pub fn swapped(&self) -> Self {
        match *self {
            SourceParams::Finite { g, g_bar, modes } => SourceParams::finite(g_bar, g, modes),
            SourceParams::PoissonLimit { gamma, gamma_bar } => {
                SourceParams::poisson(gamma_bar, gamma)
            }
        }
    }

    /// Pair-creation amplitudes entering the coupling matrix. For a finite
    /// source these are `(tanh g, tanh ḡ)`; in the Poisson limit they are the
    /// rescaled amplitudes `(√Γ, √Γ̄)` that multiply `1/√N`.
    pub fn amplitudes(&self) -> (f64, f64) {
        match *self {
            SourceParams::Finite { g, g_bar, .. } => (g.tanh(), g_bar.tanh()),
            SourceParams::PoissonLimit { gamma, gamma_bar } => (gamma.sqrt(), gamma_bar.sqrt()),
        }
    }

    fn validate(&self) -> Result<()> {
        let (a, b, names) = match *self {
            SourceParams::Finite { g, g_bar, modes } => {
                if modes == 0 {
                    return Err(ModelError::invalid("modes", "mode count must be at least 1"));
                }
                (g, g_bar, ("g", "g_bar"))
            }
            SourceParams::PoissonLimit { gamma, gamma_bar } => {
                (gamma, gamma_bar, ("gamma", "gamma_bar"))
            }
        };
        for (value, name) in [(a, names.0), (b, names.1)] {
            if !value.is_finite() || value < 0.0 {
                return Err(ModelError::invalid(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Threshold detector shared by all four outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub eta: f64,
    pub p_dc: f64,
}

impl DetectorParams {
    pub fn new(eta: f64, p_dc: f64) -> Self {
        DetectorParams { eta, p_dc }
    }

    pub fn ideal() -> Self {
        DetectorParams::new(1.0, 0.0)
    }

    /// Per-photon transmission to the loss mode, `R = 1 − η`.
    pub fn loss(&self) -> f64 {
        1.0 - self.eta
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(ModelError::invalid("eta", "eta out of range [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.p_dc) {
            return Err(ModelError::invalid("p_dc", "p_dc out of range [0, 1)"));
        }
        Ok(())
    }
}

/// Polarization analyser setting: the mode rotation
/// `a = cos α·A + e^{iφ} sin α·A⊥`, `a⊥ = e^{−iφ} sin α·A − cos α·A⊥`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementSetting {
    angle: f64,
    phase: f64,
}

fn reduce_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

impl MeasurementSetting {
    pub fn new(angle: f64, phase: f64) -> Self {
        MeasurementSetting { angle: reduce_angle(angle), phase: reduce_angle(phase) }
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn cos_angle(&self) -> f64 {
        self.angle.cos()
    }

    /// Real `sin α`, the grouping used by the closed-form probabilities.
    pub fn sin_angle(&self) -> f64 {
        self.angle.sin()
    }

    /// Complex `e^{iφ} sin α`, the grouping used by the coupling matrix.
    pub fn phased_sin(&self) -> Complex64 {
        Complex64::from_polar(self.angle.sin(), self.phase)
    }

    /// Setting with the analyser rotated by a quarter turn (`α → α + π/2`).
    pub fn quarter_turn(&self) -> Self {
        MeasurementSetting::new(self.angle + std::f64::consts::FRAC_PI_2, self.phase)
    }

    fn validate(&self, field: &'static str) -> Result<()> {
        if self.angle.is_finite() && self.phase.is_finite() {
            Ok(())
        } else {
            Err(ModelError::invalid(field, "angles must be finite"))
        }
    }
}

impl Default for MeasurementSetting {
    fn default() -> Self {
        MeasurementSetting::new(0.0, 0.0)
    }
}

/// Everything needed to evaluate one Bell test: the source, the common
/// detector model, and two settings per party indexed by input `x`/`y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub source: SourceParams,
    pub detectors: DetectorParams,
    pub alice_settings: [MeasurementSetting; 2],
    pub bob_settings: [MeasurementSetting; 2],
}

impl ExperimentConfig {
    pub fn vacuum() -> Self {
        ExperimentConfig {
            source: SourceParams::vacuum(),
            detectors: DetectorParams::ideal(),
            alice_settings: [MeasurementSetting::default(); 2],
            bob_settings: [MeasurementSetting::default(); 2],
        }
    }

    pub fn validate(&self) -> Result<ValidatedConfig> {
        ValidatedConfig::new(*self)
    }
}

/// Source scalars cached once per configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceScalars {
    Finite {
        modes: u32,
        /// `tanh g`, `tanh ḡ`
        t: f64,
        t_bar: f64,
        /// `cosh 2g`, `cosh 2ḡ`
        cosh_2g: f64,
        cosh_2g_bar: f64,
        /// `cosh² g · cosh² ḡ`
        cosh_sq_product: f64,
    },
    Poisson {
        gamma: f64,
        gamma_bar: f64,
    },
}

/// A range-checked configuration with derived scalars precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidatedConfig {
    config: ExperimentConfig,
    scalars: SourceScalars,
}

impl ValidatedConfig {
    fn new(config: ExperimentConfig) -> Result<Self> {
        config.source.validate()?;
        config.detectors.validate()?;
        for (i, s) in config.alice_settings.iter().enumerate() {
            s.validate(["alice_settings[0]", "alice_settings[1]"][i])?;
        }
        for (i, s) in config.bob_settings.iter().enumerate() {
            s.validate(["bob_settings[0]", "bob_settings[1]"][i])?;
        }
        let scalars = match config.source {
            SourceParams::Finite { g, g_bar, modes } => {
                let (cg, cgb) = (g.cosh(), g_bar.cosh());
                SourceScalars::Finite {
                    modes,
                    t: g.tanh(),
                    t_bar: g_bar.tanh(),
                    cosh_2g: (2.0 * g).cosh(),
                    cosh_2g_bar: (2.0 * g_bar).cosh(),
                    cosh_sq_product: cg * cg * cgb * cgb,
                }
            }
            SourceParams::PoissonLimit { gamma, gamma_bar } => {
                SourceScalars::Poisson { gamma, gamma_bar }
            }
        };
        Ok(ValidatedConfig { config, scalars })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn source(&self) -> &SourceParams {
        &self.config.source
    }

    pub fn detectors(&self) -> &DetectorParams {
        &self.config.detectors
    }

    pub fn scalars(&self) -> &SourceScalars {
        &self.scalars
    }

    pub fn alice(&self, x: usize) -> &MeasurementSetting {
        &self.config.alice_settings[x]
    }

    pub fn bob(&self, y: usize) -> &MeasurementSetting {
        &self.config.bob_settings[y]
    }

    /// `tanh g`, or `None` in the Poisson limit.
    pub fn t_g(&self) -> Option<f64> {
        match self.scalars {
            SourceScalars::Finite { t, .. } => Some(t),
            SourceScalars::Poisson { .. } => None,
        }
    }

    pub fn cosh_2g(&self) -> Option<f64> {
        match self.scalars {
            SourceScalars::Finite { cosh_2g, .. } => Some(cosh_2g),
            SourceScalars::Poisson { .. } => None,
        }
    }

    /// `R = 1 − η`
    pub fn loss(&self) -> f64 {
        self.config.detectors.loss()
    }
}

/// The 2×2 matrix `M` in `exp((A†, A⊥†) M (B†, B⊥†)ᵀ)|0⟩`, rows indexed by
/// Alice's modes `(A, A⊥)`, columns by Bob's `(B, B⊥)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingMatrix {
    pub m: [[Complex64; 2]; 2],
}

impl CouplingMatrix {
    pub fn zero() -> Self {
        CouplingMatrix { m: [[Complex64::new(0.0, 0.0); 2]; 2] }
    }

    /// Coupling of the rotated modes with no detector weighting, for pair
    /// amplitudes `t` (process `a b⊥`) and `t_bar` (process `a⊥ b`).
    pub fn unattenuated(
        t: f64,
        t_bar: f64,
        alice: &MeasurementSetting,
        bob: &MeasurementSetting,
    ) -> Self {
        let ca = Complex64::new(alice.cos_angle(), 0.0);
        let sa = alice.phased_sin();
        let cb = Complex64::new(bob.cos_angle(), 0.0);
        let sb = bob.phased_sin();
        CouplingMatrix {
            m: [
                [t * ca * sb.conj() - t_bar * sa.conj() * cb, -t * ca * cb - t_bar * sa.conj() * sb],
                [t * sa * sb.conj() + t_bar * ca * cb, -t * sa * cb + t_bar * ca * sb],
            ],
        }
    }

    /// Scale row `i` by `row_scale[i]` and column `j` by `col_scale[j]`.
    pub fn scaled(&self, row_scale: [f64; 2], col_scale: [f64; 2]) -> Self {
        let mut m = self.m;
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= row_scale[i] * col_scale[j];
            }
        }
        CouplingMatrix { m }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.m.iter().flatten().map(|z| z.norm_sqr()).sum()
    }

    pub fn det(&self) -> Complex64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }
}

/// Coupling matrix for a no-click test on detector `A` alone: the `A` row
/// carries the loss weight `√(1 − η)`.
pub fn coupling_matrix(
    source: &SourceParams,
    alice: &MeasurementSetting,
    bob: &MeasurementSetting,
    eta: f64,
) -> CouplingMatrix {
    let (t, t_bar) = source.amplitudes();
    let r = (1.0 - eta).max(0.0).sqrt();
    CouplingMatrix::unattenuated(t, t_bar, alice, bob).scaled([r, 1.0], [1.0, 1.0])
}

/// Singular value decomposition `M = U · diag(λ1, λ2) · V†` with `λ1 ≥ λ2 ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Svd2 {
    pub lambda1: f64,
    pub lambda2: f64,
    pub u: [[Complex64; 2]; 2],
    pub v: [[Complex64; 2]; 2],
}

impl Svd2 {
    pub fn reconstruct(&self) -> [[Complex64; 2]; 2] {
        let s = [self.lambda1, self.lambda2];
        let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..2).map(|k| self.u[i][k] * s[k] * self.v[j][k].conj()).sum();
            }
        }
        out
    }
}

fn normalize2(v: [Complex64; 2]) -> [Complex64; 2] {
    let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    [v[0] / n, v[1] / n]
}

/// Orthonormal complement of a unit 2-vector.
fn perp2(v: [Complex64; 2]) -> [Complex64; 2] {
    [-v[1].conj(), v[0].conj()]
}

fn matvec(m: &[[Complex64; 2]; 2], v: [Complex64; 2]) -> [Complex64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

/// Closed-form 2×2 SVD via the Hermitian eigenproblem of `M†M`.
pub fn singular_values(coupling: &CouplingMatrix) -> Svd2 {
    let m = &coupling.m;
    let frob = coupling.frobenius_sq();
    let det_abs = coupling.det().norm();
    let zero = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    if frob == 0.0 {
        return Svd2 { lambda1: 0.0, lambda2: 0.0, u: [[one, zero], [zero, one]], v: [[one, zero], [zero, one]] };
    }

    // λ1² + λ2² = ‖M‖², λ1 λ2 = |det M|
    let disc = ((frob - 2.0 * det_abs) * (frob + 2.0 * det_abs)).max(0.0).sqrt();
    let l1_sq = 0.5 * (frob + disc);
    let lambda1 = l1_sq.sqrt();
    let lambda2 = if lambda1 > 0.0 { det_abs / lambda1 } else { 0.0 };

    // H = M†M = [[a, b], [b*, d]]
    let a = m[0][0].norm_sqr() + m[1][0].norm_sqr();
    let d = m[0][1].norm_sqr() + m[1][1].norm_sqr();
    let b = m[0][0].conj() * m[0][1] + m[1][0].conj() * m[1][1];

    // Top eigenvector of H; pick the better conditioned of the two forms.
    let c1 = [b, Complex64::new(l1_sq - a, 0.0)];
    let c2 = [Complex64::new(l1_sq - d, 0.0), b.conj()];
    let n1 = c1[0].norm_sqr() + c1[1].norm_sqr();
    let n2 = c2[0].norm_sqr() + c2[1].norm_sqr();
    let v1 = if n1.max(n2) <= f64::EPSILON * f64::EPSILON * frob * frob {
        // H ∝ identity
        [one, zero]
    } else if n1 >= n2 {
        normalize2(c1)
    } else {
        normalize2(c2)
    };
    let v2 = perp2(v1);

    let mv1 = matvec(m, v1);
    let u1 = if lambda1 > 0.0 { [mv1[0] / lambda1, mv1[1] / lambda1] } else { [one, zero] };
    let u1 = normalize2(u1);
    let mut u2 = perp2(u1);
    // fix the phase of u2 so that u2† M v2 = λ2 ≥ 0
    let mv2 = matvec(m, v2);
    let proj = u2[0].conj() * mv2[0] + u2[1].conj() * mv2[1];
    if proj.norm() > 0.0 {
        let phase = proj / proj.norm();
        u2 = [u2[0] * phase, u2[1] * phase];
    }

    Svd2 {
        lambda1,
        lambda2,
        u: [[u1[0], u2[0]], [u1[1], u2[1]]],
        v: [[v1[0], v2[0]], [v1[1], v2[1]]],
    }
}

impl fmt::Display for SourceParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SourceParams::Finite { g, g_bar, modes } => {
                write!(f, "g={g:.9} g_bar={g_bar:.9} N={modes}")
            }
            SourceParams::PoissonLimit { gamma, gamma_bar } => {
                write!(f, "gamma={gamma:.9} gamma_bar={gamma_bar:.9} N=poisson")
            }
        }
    }
}
