//! Closed forms against the truncated-Fock oracle over a seeded sweep.
//!
//! The closed-form provider is a parameter so that a deliberately broken
//! implementation can be fed in to check that the sweep catches it.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distribution::{ClickPattern, JointDistribution};
use crate::error::Result;
use crate::model::{DetectorParams, ExperimentConfig, MeasurementSetting, SourceParams, ValidatedConfig};
use crate::oracle::{self, AnalyserTransform, DEFAULT_TRUNCATION_BOUND};
use crate::probabilities::{closed_form_raw, DetectorSubset, Family, NoClickTable};

/// Signature of a closed-form subset no-click provider.
pub type ClosedForm = dyn Fn(&ValidatedConfig, DetectorSubset, usize, usize) -> f64 + Sync;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Squeezing parameters are drawn from `[0, g_max]`.
    pub g_max: f64,
    pub n_max: usize,
    /// Random source/settings draws (three corner states come on top).
    pub samples: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub etas: Vec<f64>,
    pub dark_counts: Vec<f64>,
    pub modes: Vec<u32>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            g_max: 0.3,
            n_max: 30,
            samples: 40,
            seed: 0,
            tolerance: 1e-8,
            etas: vec![0.0, 0.25, 0.75, 1.0],
            dark_counts: vec![0.0, 0.01],
            modes: vec![1, 2, 5, 25],
        }
    }
}

/// Largest deviation seen within one group of quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: &'static str,
    pub max_deviation: f64,
    pub comparisons: usize,
    /// Parameters at the largest deviation.
    pub worst: String,
}

impl GroupReport {
    fn new(name: &'static str) -> Self {
        GroupReport { name, max_deviation: 0.0, comparisons: 0, worst: String::new() }
    }

    fn record(&mut self, deviation: f64, at: impl FnOnce() -> String) {
        self.comparisons += 1;
        // NaN counts as the worst possible deviation
        if !(deviation <= self.max_deviation) {
            self.max_deviation = if deviation.is_nan() { f64::INFINITY } else { deviation };
            self.worst = at();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    /// One entry per subset family, then the click patterns.
    pub groups: Vec<GroupReport>,
    pub tolerance: f64,
    pub max_norm_deficit: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_deviation <= self.tolerance)
    }

    pub fn failing(&self) -> impl Iterator<Item = &GroupReport> {
        self.groups.iter().filter(move |g| g.max_deviation > self.tolerance)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            let verdict = if g.max_deviation <= self.tolerance { "PASS" } else { "FAIL" };
            write!(f, "{verdict} {:<18} max_dev={:.3e} n={}", g.name, g.max_deviation, g.comparisons)?;
            if g.max_deviation > self.tolerance {
                write!(f, " worst: {}", g.worst)?;
            }
            writeln!(f)?;
        }
        write!(
            f,
            "tolerance={:.1e} truncation_deficit<={:.1e} overall={}",
            self.tolerance,
            self.max_norm_deficit,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

const FAMILIES: [Family; 5] = [Family::Single, Family::LocalPair, Family::CrossPair, Family::Triple, Family::All];

fn group_index(family: Family) -> usize {
    FAMILIES.iter().position(|f| *f == family).expect("every family is listed")
}

struct Sample {
    g: f64,
    g_bar: f64,
    alice: [MeasurementSetting; 2],
    bob: [MeasurementSetting; 2],
}

fn samples(opts: &VerifyOptions) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let setting = |rng: &mut ChaCha8Rng| {
        MeasurementSetting::new(rng.gen_range(0.0..std::f64::consts::PI), rng.gen_range(0.0..std::f64::consts::TAU))
    };
    let mut out = Vec::with_capacity(opts.samples + 3);
    let corners = [(0.0, 0.0), (opts.g_max, opts.g_max), (opts.g_max, 0.0)];
    for (g, g_bar) in corners {
        let alice = [setting(&mut rng), setting(&mut rng)];
        let bob = [setting(&mut rng), setting(&mut rng)];
        out.push(Sample { g, g_bar, alice, bob });
    }
    for _ in 0..opts.samples {
        let g = rng.gen_range(0.0..=opts.g_max);
        let g_bar = rng.gen_range(0.0..=opts.g_max);
        let alice = [setting(&mut rng), setting(&mut rng)];
        let bob = [setting(&mut rng), setting(&mut rng)];
        out.push(Sample { g, g_bar, alice, bob });
    }
    out
}

/// Sweep with the library's own closed forms.
pub fn verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    verify_with(opts, &closed_form_raw)
}

pub fn verify_with(opts: &VerifyOptions, closed_form: &ClosedForm) -> Result<VerifyReport> {
    let mut groups: Vec<GroupReport> = FAMILIES.iter().map(|f| GroupReport::new(f.name())).collect();
    groups.push(GroupReport::new("click_pattern"));
    let mut max_norm_deficit = 0.0f64;

    for s in samples(opts) {
        let state = oracle::build_state(s.g, s.g_bar, opts.n_max, DEFAULT_TRUNCATION_BOUND)?;
        max_norm_deficit = max_norm_deficit.max(state.norm_deficit());
        let wa = s.alice.map(|a| AnalyserTransform::new(&a, opts.n_max));
        let wb = s.bob.map(|b| AnalyserTransform::new(&b, opts.n_max));
        for x in 0..2 {
            for y in 0..2 {
                let rotated = oracle::rotate_with(&state, &wa[x], &wb[y]);
                for &eta in &opts.etas {
                    // per-mode traces depend on η only
                    let traces: [f64; 16] = std::array::from_fn(|bits| {
                        rotated.no_click_trace(DetectorSubset::from_bits(bits as u8), eta)
                    });
                    for &p_dc in &opts.dark_counts {
                        let detectors = DetectorParams::new(eta, p_dc);
                        for &modes in &opts.modes {
                            let config = ExperimentConfig {
                                source: SourceParams::finite(s.g, s.g_bar, modes),
                                detectors,
                                alice_settings: s.alice,
                                bob_settings: s.bob,
                            }
                            .validate()?;
                            let describe = || {
                                format!(
                                    "g={} g_bar={} N={modes} eta={eta} p_dc={p_dc} x={x} y={y} alice={:?} bob={:?}",
                                    s.g, s.g_bar, s.alice, s.bob
                                )
                            };
                            let oracle_nc: [f64; 16] = std::array::from_fn(|bits| {
                                let subset = DetectorSubset::from_bits(bits as u8);
                                if subset.is_empty() {
                                    1.0
                                } else {
                                    oracle::multimode_probability(traces[bits], modes, p_dc, subset)
                                }
                            });
                            let mut raw = [1.0; 16];
                            for subset in DetectorSubset::all().filter(|s| !s.is_empty()) {
                                let b = subset.bits() as usize;
                                raw[b] = closed_form(&config, subset, x, y);
                                let dev = (raw[b] - oracle_nc[b]).abs();
                                groups[group_index(Family::of(subset))]
                                    .record(dev, || format!("S={subset} {}", describe()));
                            }

                            let oracle_patterns = if modes == 1 {
                                rotated.pattern_probabilities(&detectors)
                            } else {
                                oracle::pattern_probabilities(&oracle_nc)
                            };
                            let library = NoClickTable::from_raw(raw).and_then(|t| JointDistribution::from_no_click_table(&t));
                            let patterns = groups.last_mut().expect("pattern group");
                            match library {
                                Ok(d) => {
                                    for c in ClickPattern::all() {
                                        let dev = (d.get(c) - oracle_patterns[c.bits() as usize]).abs();
                                        patterns.record(dev, || format!("pattern={c} {}", describe()));
                                    }
                                }
                                Err(e) => patterns.record(f64::INFINITY, || format!("{e} at {}", describe())),
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(VerifyReport { groups, tolerance: opts.tolerance, max_norm_deficit })
}
