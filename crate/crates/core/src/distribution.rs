//! Click-pattern distributions, outcome binning, and the CHSH / CH values.

use std::fmt;

use crate::error::{ModelError, Result};
use crate::model::ValidatedConfig;
use crate::probabilities::{no_click_table, DetectorSubset, NoClickTable};

pub const NORMALIZATION_SLACK: f64 = 1e-9;

/// Which of the four detectors fired; bit layout matches [`DetectorSubset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClickPattern(u8);

impl ClickPattern {
    pub fn from_bits(bits: u8) -> Self {
        ClickPattern(bits & 0b1111)
    }

    pub fn from_local(alice: LocalOutcome, bob: LocalOutcome) -> Self {
        ClickPattern(alice.0 | (bob.0 << 2))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    /// Detectors that stayed dark.
    pub fn no_click_set(self) -> DetectorSubset {
        DetectorSubset::from_bits(!self.0 & 0b1111)
    }

    pub fn alice(self) -> LocalOutcome {
        LocalOutcome(self.0 & 0b11)
    }

    pub fn bob(self) -> LocalOutcome {
        LocalOutcome(self.0 >> 2)
    }

    pub fn all() -> impl Iterator<Item = ClickPattern> {
        (0..16u8).map(ClickPattern)
    }
}

impl fmt::Display for ClickPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.alice(), self.bob())
    }
}

/// One party's observation: bit 0 = first detector clicked, bit 1 = the
/// orthogonal detector clicked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocalOutcome(u8);

impl LocalOutcome {
    pub const NONE: LocalOutcome = LocalOutcome(0);
    pub const FIRST_ONLY: LocalOutcome = LocalOutcome(1);
    pub const PERP_ONLY: LocalOutcome = LocalOutcome(2);
    pub const BOTH: LocalOutcome = LocalOutcome(3);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> [LocalOutcome; 4] {
        [LocalOutcome(0), LocalOutcome(1), LocalOutcome(2), LocalOutcome(3)]
    }
}

impl fmt::Display for LocalOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            0 => "nc",
            1 => "c_",
            2 => "_c",
            _ => "cc",
        })
    }
}

/// Probability of each of the sixteen click patterns for one input pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointDistribution {
    probs: [f64; 16],
}

impl JointDistribution {
    /// Möbius inversion on the subset lattice:
    /// `p(pattern) = Σ_{T ⊇ S} (−1)^{|T|−|S|} table[T]`, `S` the dark set.
    pub fn from_no_click_table(table: &NoClickTable) -> Result<Self> {
        let mut probs = [0.0; 16];
        for pattern in ClickPattern::all() {
            let dark = pattern.no_click_set().bits();
            let clicked = pattern.bits();
            // supersets of `dark` are `dark | sub` for sub ⊆ clicked
            let mut acc = 0.0;
            let mut sub = clicked;
            loop {
                let sign = if sub.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * table.get(DetectorSubset::from_bits(dark | sub));
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & clicked;
            }
            probs[pattern.bits() as usize] = acc;
        }
        Self::checked(probs)
    }

    /// Validate and clamp; entries below `−1e-9` or a total off by more
    /// than `1e-9` are internal errors.
    pub fn checked(mut probs: [f64; 16]) -> Result<Self> {
        let mut total = 0.0;
        for (i, p) in probs.iter_mut().enumerate() {
            if !p.is_finite() || *p < -NORMALIZATION_SLACK {
                return Err(ModelError::consistency(
                    format!("probability of pattern {}", ClickPattern(i as u8)),
                    *p,
                ));
            }
            total += *p;
            *p = p.max(0.0);
        }
        if (total - 1.0).abs() > NORMALIZATION_SLACK {
            return Err(ModelError::consistency("distribution normalization", total));
        }
        Ok(JointDistribution { probs })
    }

    pub fn get(&self, pattern: ClickPattern) -> f64 {
        self.probs[pattern.bits() as usize]
    }

    pub fn probs(&self) -> &[f64; 16] {
        &self.probs
    }

    /// `P[i][j] = p(Alice sees outcome i, Bob sees outcome j)`.
    pub fn local_matrix(&self) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for p in ClickPattern::all() {
            m[p.alice().index()][p.bob().index()] = self.get(p);
        }
        m
    }

    pub fn alice_marginal(&self) -> [f64; 4] {
        self.local_matrix().map(|row| row.iter().sum())
    }

    pub fn bob_marginal(&self) -> [f64; 4] {
        let m = self.local_matrix();
        std::array::from_fn(|j| (0..4).map(|i| m[i][j]).sum())
    }
}

pub fn joint_distribution(config: &ValidatedConfig, x: usize, y: usize) -> Result<JointDistribution> {
    JointDistribution::from_no_click_table(&no_click_table(config, x, y)?)
}

/// Distributions for the four input pairs, indexed `[x][y]`.
pub fn all_distributions(config: &ValidatedConfig) -> Result<[[JointDistribution; 2]; 2]> {
    Ok([
        [joint_distribution(config, 0, 0)?, joint_distribution(config, 0, 1)?],
        [joint_distribution(config, 1, 0)?, joint_distribution(config, 1, 1)?],
    ])
}

/// Map from one party's four local outcomes to ±1: bit `i` set sends
/// outcome `i` to −1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocalMap(u8);

impl LocalMap {
    /// −1 only when the first detector fires alone.
    pub const REFERENCE: LocalMap = LocalMap(1 << 1);
    /// −1 whenever the first detector fires, ignoring the orthogonal one.
    pub const SINGLE_DETECTOR: LocalMap = LocalMap((1 << 1) | (1 << 3));
    pub const CONSTANT: LocalMap = LocalMap(0);

    pub fn from_bits(bits: u8) -> Self {
        LocalMap(bits & 0b1111)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn value(self, outcome: LocalOutcome) -> f64 {
        if self.0 & (1 << outcome.0) != 0 {
            -1.0
        } else {
            1.0
        }
    }

    pub fn signs(self) -> [f64; 4] {
        LocalOutcome::all().map(|o| self.value(o))
    }

    pub fn flipped(self) -> Self {
        LocalMap(!self.0 & 0b1111)
    }
}

/// A joint local binning; there are 16 × 16 = 256 of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinningStrategy {
    pub alice: LocalMap,
    pub bob: LocalMap,
}

impl BinningStrategy {
    pub const REFERENCE: BinningStrategy =
        BinningStrategy { alice: LocalMap::REFERENCE, bob: LocalMap::REFERENCE };
    pub const SINGLE_DETECTOR: BinningStrategy =
        BinningStrategy { alice: LocalMap::SINGLE_DETECTOR, bob: LocalMap::SINGLE_DETECTOR };

    /// `index = alice_bits + 16 · bob_bits`.
    pub fn from_index(index: usize) -> Self {
        BinningStrategy { alice: LocalMap((index % 16) as u8), bob: LocalMap((index / 16 % 16) as u8) }
    }

    pub fn index(self) -> usize {
        self.alice.0 as usize + 16 * self.bob.0 as usize
    }

    pub fn all() -> impl Iterator<Item = BinningStrategy> {
        (0..256).map(BinningStrategy::from_index)
    }
}

impl fmt::Display for BinningStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |m: LocalMap| {
            LocalOutcome::all()
                .iter()
                .map(|o| if m.value(*o) < 0.0 { '-' } else { '+' })
                .collect::<String>()
        };
        write!(f, "#{} alice[{}] bob[{}]", self.index(), side(self.alice), side(self.bob))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChshResult {
    pub s: f64,
    /// `E(x, y)` indexed `[x][y]`
    pub correlators: [[f64; 2]; 2],
    pub binning: BinningStrategy,
}

impl ChshResult {
    pub fn ch(&self) -> f64 {
        ch_value(self.s)
    }
}

/// `E = Σ p(pattern) · a(pattern_A) · b(pattern_B)`.
pub fn correlator(dist: &JointDistribution, binning: BinningStrategy) -> f64 {
    ClickPattern::all()
        .map(|p| dist.get(p) * binning.alice.value(p.alice()) * binning.bob.value(p.bob()))
        .sum()
}

fn chsh_from(dists: &[[JointDistribution; 2]; 2], binning: BinningStrategy) -> ChshResult {
    let mut correlators = [[0.0; 2]; 2];
    for (x, row) in correlators.iter_mut().enumerate() {
        for (y, e) in row.iter_mut().enumerate() {
            *e = correlator(&dists[x][y], binning);
        }
    }
    let s = correlators[0][0] + correlators[0][1] + correlators[1][0] - correlators[1][1];
    ChshResult { s, correlators, binning }
}

pub fn chsh_from_distributions(dists: &[[JointDistribution; 2]; 2], binning: BinningStrategy) -> ChshResult {
    chsh_from(dists, binning)
}

pub fn chsh(config: &ValidatedConfig, binning: BinningStrategy) -> Result<ChshResult> {
    Ok(chsh_from(&all_distributions(config)?, binning))
}

/// `Q = P₀₀ + P₀₁ + P₁₀ − P₁₁`, so that `S = aᵀ Q b` for sign vectors `a`, `b`.
pub fn chsh_matrix(dists: &[[JointDistribution; 2]; 2]) -> [[f64; 4]; 4] {
    let mut q = [[0.0; 4]; 4];
    for (x, row) in dists.iter().enumerate() {
        for (y, d) in row.iter().enumerate() {
            let sign = if x == 1 && y == 1 { -1.0 } else { 1.0 };
            let p = d.local_matrix();
            for i in 0..4 {
                for j in 0..4 {
                    q[i][j] += sign * p[i][j];
                }
            }
        }
    }
    q
}

/// `max |S|` over all 256 binnings; for fixed Alice signs the best Bob map
/// picks `sign((Qᵀa)_j)`, leaving `Σ_j |(Qᵀa)_j|`.
pub fn max_abs_chsh(q: &[[f64; 4]; 4]) -> f64 {
    let mut best = 0.0f64;
    // a and −a give the same value; enumerate half
    for bits in 0..8u8 {
        let a = LocalMap(bits).signs();
        let mut total = 0.0;
        for j in 0..4 {
            total += (a[0] * q[0][j] + a[1] * q[1][j] + a[2] * q[2][j] + a[3] * q[3][j]).abs();
        }
        best = best.max(total);
    }
    best
}

/// `max |S|` over binnings in which neither party's map is constant.
///
/// A constant map on either side caps `|S|` at 2 for every state, so this
/// agrees with [`max_abs_chsh`] wherever the value exceeds 2, but unlike it
/// stays informative below 2 instead of saturating there.
pub fn max_abs_chsh_informative(q: &[[f64; 4]; 4]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for bits in 1..8u8 {
        let a = LocalMap(bits).signs();
        let mut total = 0.0;
        let mut smallest = f64::INFINITY;
        let (mut pos, mut neg) = (false, false);
        for j in 0..4 {
            let c = a[0] * q[0][j] + a[1] * q[1][j] + a[2] * q[2][j] + a[3] * q[3][j];
            total += c.abs();
            smallest = smallest.min(c.abs());
            pos |= c > 0.0;
            neg |= c < 0.0;
        }
        // sign(c) would be a constant map for Bob: flip the cheapest entry
        if !(pos && neg) {
            total -= 2.0 * smallest;
        }
        best = best.max(total);
    }
    best
}

/// Values closer than this count as ties when ranking binnings.
pub const BINNING_TIE: f64 = 1e-12;

/// Exhaustive search over all 256 binnings for the largest `|S|`. Ties go
/// to the reference strategy, then to the lowest index.
pub fn best_binning_from(dists: &[[JointDistribution; 2]; 2]) -> (BinningStrategy, ChshResult) {
    let reference = chsh_from(dists, BinningStrategy::REFERENCE);
    let mut best = reference;
    let mut best_abs = f64::NEG_INFINITY;
    for b in BinningStrategy::all() {
        let r = chsh_from(dists, b);
        if r.s.abs() > best_abs + BINNING_TIE {
            best = r;
            best_abs = r.s.abs();
        }
    }
    if reference.s.abs() >= best_abs - BINNING_TIE {
        best = reference;
    }
    (best.binning, best)
}

pub fn best_binning(config: &ValidatedConfig) -> Result<(BinningStrategy, ChshResult)> {
    Ok(best_binning_from(&all_distributions(config)?))
}

/// Ignore both orthogonal detectors: −1 whenever `A` (respectively `B`) clicks.
pub fn single_detector_binning(config: &ValidatedConfig) -> Result<ChshResult> {
    chsh(config, BinningStrategy::SINGLE_DETECTOR)
}

/// Clauser–Horne value `(S − 2) / 4`.
pub fn ch_value(s: f64) -> f64 {
    (s - 2.0) / 4.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DetectorParams, ExperimentConfig, MeasurementSetting, SourceParams};
    use crate::probabilities::Detector;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{SQRT_2, TAU};

    fn random_cfg(rng: &mut ChaCha8Rng) -> ValidatedConfig {
        let mut s = || MeasurementSetting::new(rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
        let (a, b) = ([s(), s()], [s(), s()]);
        let source = if rng.gen_bool(0.25) {
            SourceParams::poisson(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0))
        } else {
            SourceParams::finite(rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0), rng.gen_range(1..=50))
        };
        ExperimentConfig {
            source,
            detectors: DetectorParams::new(rng.gen_range(0.0..=1.0), rng.gen_range(0.0..0.1)),
            alice_settings: a,
            bob_settings: b,
        }
        .validate()
        .unwrap()
    }

    #[test]
    fn vacuum_puts_all_mass_on_no_click() {
        let c = ExperimentConfig::vacuum().validate().unwrap();
        let d = joint_distribution(&c, 0, 0).unwrap();
        assert_eq!(d.get(ClickPattern::from_bits(0)), 1.0);
        assert_eq!(d.probs().iter().sum::<f64>(), 1.0);
        assert_eq!(correlator(&d, BinningStrategy::REFERENCE), 1.0);
        assert_eq!(chsh(&c, BinningStrategy::REFERENCE).unwrap().s, 2.0);
        let (b, r) = best_binning(&c).unwrap();
        assert_eq!(b, BinningStrategy::REFERENCE);
        assert_abs_diff_eq!(r.s, 2.0, epsilon = 1e-15);
        assert_eq!(single_detector_binning(&c).unwrap().s, 2.0);
    }

    #[test]
    fn blind_detectors_give_two() {
        let mut c = *random_cfg(&mut ChaCha8Rng::seed_from_u64(1)).config();
        c.detectors = DetectorParams::new(0.0, 0.0);
        let c = c.validate().unwrap();
        assert_abs_diff_eq!(chsh(&c, BinningStrategy::REFERENCE).unwrap().s, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn saturated_source_gives_two() {
        let c = ExperimentConfig {
            source: SourceParams::finite(6.0, 6.0, 4),
            detectors: DetectorParams::ideal(),
            alice_settings: [MeasurementSetting::new(0.0, 0.0), MeasurementSetting::new(0.8, 0.0)],
            bob_settings: [MeasurementSetting::new(0.4, 0.0), MeasurementSetting::new(1.2, 0.5)],
        }
        .validate()
        .unwrap();
        let r = chsh(&c, BinningStrategy::REFERENCE).unwrap();
        assert_abs_diff_eq!(r.s, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn minus_minus_matches_four_term_expression() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let c = random_cfg(&mut rng);
            let t = no_click_table(&c, 0, 1).unwrap();
            let d = JointDistribution::from_no_click_table(&t).unwrap();
            let p_mm: f64 = ClickPattern::all()
                .filter(|p| p.alice() == LocalOutcome::FIRST_ONLY && p.bob() == LocalOutcome::FIRST_ONLY)
                .map(|p| d.get(p))
                .sum();
            use Detector::*;
            let s = DetectorSubset::of;
            let four = t.get(s(&[APerp, BPerp])) - t.get(s(&[A, APerp, BPerp])) - t.get(s(&[APerp, B, BPerp]))
                + t.get(s(&[A, APerp, B, BPerp]));
            assert_abs_diff_eq!(p_mm, four, epsilon = 1e-15);
        }
    }

    #[test]
    fn uniform_distribution_balanced_maps_decorrelate() {
        let d = JointDistribution::checked([1.0 / 16.0; 16]).unwrap();
        for a in 0..16u8 {
            for b in 0..16u8 {
                let (la, lb) = (LocalMap(a), LocalMap(b));
                if la.signs().iter().sum::<f64>() == 0.0 {
                    assert_abs_diff_eq!(
                        correlator(&d, BinningStrategy { alice: la, bob: lb }),
                        0.0,
                        epsilon = 1e-15
                    );
                }
            }
        }
    }

    #[test]
    fn correlator_matches_local_matrix_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut raw: [f64; 16] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
            let total: f64 = raw.iter().sum();
            raw.iter_mut().for_each(|p| *p /= total);
            let d = JointDistribution::checked(raw).unwrap();
            let b = BinningStrategy::from_index(rng.gen_range(0..256));
            let m = d.local_matrix();
            let (sa, sb) = (b.alice.signs(), b.bob.signs());
            let mut direct = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    direct += m[i][j] * sa[i] * sb[j];
                }
            }
            assert_abs_diff_eq!(correlator(&d, b), direct, epsilon = 1e-14);
        }
    }

    #[test]
    fn distribution_properties_over_random_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2000 {
            let c = random_cfg(&mut rng);
            let d = all_distributions(&c).unwrap();
            for row in &d {
                for dist in row {
                    assert!((dist.probs().iter().sum::<f64>() - 1.0).abs() < 1e-10);
                }
            }
            for x in 0..2 {
                let (m0, m1) = (d[x][0].alice_marginal(), d[x][1].alice_marginal());
                for i in 0..4 {
                    assert!((m0[i] - m1[i]).abs() < 1e-12);
                }
            }
            for y in 0..2 {
                let (m0, m1) = (d[0][y].bob_marginal(), d[1][y].bob_marginal());
                for i in 0..4 {
                    assert!((m0[i] - m1[i]).abs() < 1e-12);
                }
            }
            let q = chsh_matrix(&d);
            let fast = max_abs_chsh(&q);
            let (_, best) = best_binning_from(&d);
            assert!((fast - best.s.abs()).abs() < 1e-12);
            assert!(fast <= 2.0 * SQRT_2 + 1e-9);
            let informative = max_abs_chsh_informative(&q);
            let brute = BinningStrategy::all()
                .filter(|b| b.alice.bits() % 15 != 0 && b.bob.bits() % 15 != 0)
                .map(|b| chsh_from(&d, b).s.abs())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((informative - brute).abs() < 1e-12);
            if fast > 2.0 + 1e-12 {
                assert!((informative - fast).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn best_binning_is_the_brute_force_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let c = random_cfg(&mut rng);
            let (b, r) = best_binning(&c).unwrap();
            let brute = BinningStrategy::all()
                .map(|s| chsh(&c, s).unwrap().s.abs())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((r.s.abs() - brute).abs() <= BINNING_TIE);
            assert_eq!(b, r.binning);
            let single = single_detector_binning(&c).unwrap();
            let indexed = chsh(&c, BinningStrategy::from_index(BinningStrategy::SINGLE_DETECTOR.index())).unwrap();
            assert_eq!(single.s, indexed.s);
        }
    }

    #[test]
    fn flipping_one_party_negates_correlators() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let c = random_cfg(&mut rng);
        for idx in [0usize, 34, 77, 255] {
            let b = BinningStrategy::from_index(idx);
            let f = BinningStrategy { alice: b.alice.flipped(), bob: b.bob };
            let (r, rf) = (chsh(&c, b).unwrap(), chsh(&c, f).unwrap());
            for x in 0..2 {
                for y in 0..2 {
                    assert_abs_diff_eq!(r.correlators[x][y], -rf.correlators[x][y], epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn ch_values() {
        assert_eq!(ch_value(2.0), 0.0);
        assert_abs_diff_eq!(ch_value(2.35), 0.0875, epsilon = 1e-15);
        assert_abs_diff_eq!(ch_value(2.0 * SQRT_2), 0.20710678118654752, epsilon = 1e-15);
    }

    #[test]
    fn negative_mass_is_rejected() {
        let mut raw = [1.0 / 15.0; 16];
        raw[3] = -1e-6;
        assert!(JointDistribution::checked(raw).is_err());
        let mut raw = [0.0; 16];
        raw[0] = 0.9;
        assert!(JointDistribution::checked(raw).is_err());
    }

    #[test]
    fn strategy_index_round_trip() {
        for i in 0..256 {
            assert_eq!(BinningStrategy::from_index(i).index(), i);
        }
        assert_eq!(BinningStrategy::REFERENCE.index(), 2 + 16 * 2);
    }
}
