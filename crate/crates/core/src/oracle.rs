//! Brute-force verification path in a truncated photon-number basis.
//!
//! One mode quadruple `(a, a⊥, b, b⊥)` is built explicitly, the analysers are
//! applied as passive two-mode transformations, and detector weights
//! `(1 − p_dc)(1 − η)^n` are summed over occupations. Several modes enter only
//! through the power of the per-mode trace.
//!
//! Both parties' analysers conserve local photon number, so amplitudes are
//! kept in blocks of fixed total `T = n_a + n_a⊥ = n_b + n_b⊥`; block `T`
//! is a `(T+1)×(T+1)` matrix indexed by `(n_A, n_B)`.

use num_complex::Complex64;

use crate::distribution::ClickPattern;
use crate::error::{ModelError, Result};
use crate::model::{DetectorParams, MeasurementSetting};
use crate::probabilities::DetectorSubset;

/// Default ceiling on the norm lost to truncation.
pub const DEFAULT_TRUNCATION_BOUND: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Largest occupation of each unrotated mode.
    pub n_max: usize,
    /// Number of independent mode quadruples.
    pub modes: u32,
    pub truncation_bound: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { n_max: 30, modes: 1, truncation_bound: DEFAULT_TRUNCATION_BOUND }
    }
}

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Truncated state of one mode quadruple.
#[derive(Debug, Clone, PartialEq)]
pub struct FockStateSingleModePair {
    n_max: usize,
    /// `blocks[T][i * (T + 1) + j]`: amplitude of `|i, T−i⟩_Alice |j, T−j⟩_Bob`.
    blocks: Vec<Vec<Complex64>>,
    norm_deficit: f64,
}

impl FockStateSingleModePair {
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn norm_deficit(&self) -> f64 {
        self.norm_deficit
    }

    pub fn norm_sqr(&self) -> f64 {
        self.blocks.iter().flatten().map(|z| z.norm_sqr()).sum()
    }

    /// Amplitude of `|n_1, n_2⟩_Alice |n_3, n_4⟩_Bob` in the current basis.
    pub fn amplitude(&self, n_a: usize, n_a_perp: usize, n_b: usize, n_b_perp: usize) -> Complex64 {
        let t = n_a + n_a_perp;
        if t != n_b + n_b_perp || t >= self.blocks.len() {
            return ZERO;
        }
        self.blocks[t][n_a * (t + 1) + n_b]
    }

    fn occupations(&self) -> impl Iterator<Item = ([usize; 4], f64)> + '_ {
        self.blocks.iter().enumerate().flat_map(|(t, block)| {
            block.iter().enumerate().map(move |(idx, z)| {
                let (i, j) = (idx / (t + 1), idx % (t + 1));
                ([i, t - i, j, t - j], z.norm_sqr())
            })
        })
    }

    fn powers(&self, base: f64) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.blocks.len());
        let mut v = 1.0;
        for _ in 0..self.blocks.len() {
            p.push(v);
            v *= base;
        }
        p
    }

    /// `tr(Π_{d∈S} (1−η)^{n_d} ρ)` for this one mode, without dark counts.
    pub fn no_click_trace(&self, subset: DetectorSubset, eta: f64) -> f64 {
        let r = self.powers(1.0 - eta);
        self.occupations()
            .map(|(n, p)| {
                let mut w = p;
                for (d, &k) in n.iter().enumerate() {
                    if subset.bits() & (1 << d) != 0 {
                        w *= r[k];
                    }
                }
                w
            })
            .sum()
    }

    /// Single-mode click-pattern probability summed directly over
    /// occupations with per-detector click / no-click weights.
    pub fn pattern_probability(&self, detectors: &DetectorParams, pattern: ClickPattern) -> f64 {
        self.pattern_probabilities(detectors)[pattern.bits() as usize]
    }

    /// All sixteen single-mode click-pattern probabilities in one pass.
    pub fn pattern_probabilities(&self, detectors: &DetectorParams) -> [f64; 16] {
        let dark = 1.0 - detectors.p_dc;
        let no_click: Vec<f64> = self.powers(1.0 - detectors.eta).into_iter().map(|v| dark * v).collect();
        let mut out = [0.0; 16];
        for (n, p) in self.occupations() {
            let nc = n.map(|k| no_click[k]);
            for (bits, slot) in out.iter_mut().enumerate() {
                let mut w = p;
                for (d, &q) in nc.iter().enumerate() {
                    w *= if bits & (1 << d) != 0 { 1.0 - q } else { q };
                }
                *slot += w;
            }
        }
        out
    }
}

/// `(1 − T_g²)^{1/2}(1 − T_ḡ²)^{1/2} exp(T_g a†b⊥† − T_ḡ a⊥†b†)|0⟩`, cut at
/// `n_max` photons per mode.
pub fn build_state(g: f64, g_bar: f64, n_max: usize, truncation_bound: f64) -> Result<FockStateSingleModePair> {
    if !(g >= 0.0 && g_bar >= 0.0 && g.is_finite() && g_bar.is_finite()) {
        return Err(ModelError::invalid("g", "squeezing must be finite and non-negative"));
    }
    let (t, tb) = (g.tanh(), g_bar.tanh());
    let (x, y) = (t * t, tb * tb);
    let tail = |q: f64| q.powi(n_max as i32 + 1);
    // 1 − (1 − x^{n+1})(1 − y^{n+1})
    let norm_deficit = tail(x) + tail(y) - tail(x) * tail(y);
    if norm_deficit > truncation_bound {
        return Err(ModelError::Truncation { deficit: norm_deficit, bound: truncation_bound });
    }
    let c = ((1.0 - x) * (1.0 - y)).sqrt();
    let mut blocks: Vec<Vec<Complex64>> = (0..=2 * n_max).map(|t| vec![ZERO; (t + 1) * (t + 1)]).collect();
    // n pairs in (a, b⊥), m pairs in (a⊥, b): |n, m⟩_a |m, n⟩_b
    let mut pow_t = 1.0;
    for n in 0..=n_max {
        let mut pow_tb = 1.0;
        for m in 0..=n_max {
            let total = n + m;
            blocks[total][n * (total + 1) + m] = Complex64::new(c * pow_t * pow_tb, 0.0);
            pow_tb *= -tb;
        }
        pow_t *= t;
    }
    Ok(FockStateSingleModePair { n_max, blocks, norm_deficit })
}

/// Matrices `W_T[k][n] = ⟨k, T−k|_rotated |n, T−n⟩_original` for one
/// analyser, built by applying the substituted creation operators
/// `a† = cos α A† + e^{−iφ} sin α A⊥†`, `a⊥† = e^{iφ} sin α A† − cos α A⊥†`.
fn mode_transform(setting: &MeasurementSetting, t_max: usize) -> Vec<Vec<Complex64>> {
    let c = Complex64::new(setting.cos_angle(), 0.0);
    let s = setting.phased_sin();
    let create = [(c, s.conj()), (s, -c)];
    let apply = |v: &[Complex64], (p, q): (Complex64, Complex64), norm: f64| -> Vec<Complex64> {
        let t = v.len() - 1;
        let mut out = vec![ZERO; t + 2];
        for (k, &amp) in v.iter().enumerate() {
            if amp == ZERO {
                continue;
            }
            out[k + 1] += p * amp * ((k + 1) as f64).sqrt() / norm;
            out[k] += q * amp * ((t - k + 1) as f64).sqrt() / norm;
        }
        out
    };
    (0..=t_max)
        .map(|t| {
            let mut w = vec![ZERO; (t + 1) * (t + 1)];
            for n in 0..=t {
                let mut v = vec![Complex64::new(1.0, 0.0)];
                for j in 1..=(t - n) {
                    v = apply(&v, create[1], (j as f64).sqrt());
                }
                for i in 1..=n {
                    v = apply(&v, create[0], (i as f64).sqrt());
                }
                for (k, amp) in v.into_iter().enumerate() {
                    w[k * (t + 1) + n] = amp;
                }
            }
            w
        })
        .collect()
}

/// Precomputed analyser transformation, reusable across states.
#[derive(Debug, Clone)]
pub struct AnalyserTransform {
    blocks: Vec<Vec<Complex64>>,
}

impl AnalyserTransform {
    pub fn new(setting: &MeasurementSetting, n_max: usize) -> Self {
        AnalyserTransform { blocks: mode_transform(setting, 2 * n_max) }
    }
}

/// Express the state in the analysers' output modes.
pub fn rotate(
    state: &FockStateSingleModePair,
    alice: &MeasurementSetting,
    bob: &MeasurementSetting,
) -> FockStateSingleModePair {
    let wa = AnalyserTransform::new(alice, state.n_max);
    let wb = AnalyserTransform::new(bob, state.n_max);
    rotate_with(state, &wa, &wb)
}

pub fn rotate_with(
    state: &FockStateSingleModePair,
    alice: &AnalyserTransform,
    bob: &AnalyserTransform,
) -> FockStateSingleModePair {
    let blocks = state
        .blocks
        .iter()
        .enumerate()
        .map(|(t, psi)| {
            let d = t + 1;
            let (wa, wb) = (&alice.blocks[t], &bob.blocks[t]);
            // Ψ' = W_A Ψ W_Bᵀ
            let mut tmp = vec![ZERO; d * d];
            for k in 0..d {
                for n in 0..d {
                    let w = wa[k * d + n];
                    if w == ZERO {
                        continue;
                    }
                    for j in 0..d {
                        tmp[k * d + j] += w * psi[n * d + j];
                    }
                }
            }
            let mut out = vec![ZERO; d * d];
            for k in 0..d {
                for l in 0..d {
                    let mut acc = ZERO;
                    for j in 0..d {
                        acc += tmp[k * d + j] * wb[l * d + j];
                    }
                    out[k * d + l] = acc;
                }
            }
            out
        })
        .collect();
    FockStateSingleModePair { n_max: state.n_max, blocks, norm_deficit: state.norm_deficit }
}

/// Subset no-click probability over `modes` independent quadruples:
/// `(1 − p_dc)^{|S|} · trace^N`.
pub fn multimode_probability(per_mode_trace: f64, modes: u32, p_dc: f64, subset: DetectorSubset) -> f64 {
    (1.0 - p_dc).powi(subset.len() as i32) * per_mode_trace.powi(modes as i32)
}

/// All sixteen subset no-click probabilities from a rotated state.
pub fn no_click_probabilities(
    rotated: &FockStateSingleModePair,
    detectors: &DetectorParams,
    modes: u32,
) -> [f64; 16] {
    std::array::from_fn(|bits| {
        let s = DetectorSubset::from_bits(bits as u8);
        if s.is_empty() {
            1.0
        } else {
            multimode_probability(rotated.no_click_trace(s, detectors.eta), modes, detectors.p_dc, s)
        }
    })
}

/// Click-pattern probabilities over several modes. Each pattern is the
/// alternating sum of no-click probabilities over the supersets of its dark
/// set, enumerated here by brute force.
pub fn pattern_probabilities(no_click: &[f64; 16]) -> [f64; 16] {
    std::array::from_fn(|pattern| {
        let dark = !pattern & 0b1111;
        (0..16usize)
            .filter(|t| t & dark == dark)
            .map(|t| {
                let extra = (t & !dark).count_ones();
                if extra % 2 == 0 {
                    no_click[t]
                } else {
                    -no_click[t]
                }
            })
            .sum()
    })
}
