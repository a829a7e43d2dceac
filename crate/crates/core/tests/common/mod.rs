//! Random configurations over the full parameter ranges and the invariant
//! checks run on them.

#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use rand::Rng;
use spdc_chsh::distribution::{all_distributions, chsh_matrix, max_abs_chsh};
use spdc_chsh::model::{DetectorParams, ExperimentConfig, MeasurementSetting, SourceParams};
use spdc_chsh::probabilities::{closed_form_raw, no_click_table, DetectorSubset};

pub fn random_setting(rng: &mut impl Rng) -> MeasurementSetting {
    MeasurementSetting::new(rng.gen_range(0.0..PI), rng.gen_range(0.0..TAU))
}

/// `g, ḡ ∈ [0, 2]`, `η ∈ [0, 1]`, `p_dc ∈ [0, 0.1]`, `N ∈ 1..=50`, with one
/// draw in eight taken in the Poisson limit (`Γ, Γ̄ ∈ [0, 4]`).
pub fn random_config(rng: &mut impl Rng) -> ExperimentConfig {
    let source = if rng.gen_ratio(1, 8) {
        SourceParams::poisson(rng.gen_range(0.0..=4.0), rng.gen_range(0.0..=4.0))
    } else {
        SourceParams::finite(rng.gen_range(0.0..=2.0), rng.gen_range(0.0..=2.0), rng.gen_range(1..=50))
    };
    ExperimentConfig {
        source,
        detectors: DetectorParams::new(rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=0.1)),
        alice_settings: [random_setting(rng), random_setting(rng)],
        bob_settings: [random_setting(rng), random_setting(rng)],
    }
}

/// Worst violation of each invariant seen so far.
#[derive(Debug, Default, Clone, Copy)]
pub struct Worst {
    pub normalization: f64,
    pub no_signaling: f64,
    /// Largest amount by which a superset's raw no-click value exceeds a subset's.
    pub raw_monotonicity: f64,
    /// Same on the tables the distributions are built from (must be zero).
    pub table_monotonicity: f64,
    pub max_abs_s: f64,
    pub dark_count_factor: f64,
    pub phase_shift: f64,
    pub configs: usize,
}

fn max_into(slot: &mut f64, v: f64) {
    if !(v <= *slot) {
        *slot = if v.is_nan() { f64::INFINITY } else { v };
    }
}

impl Worst {
    pub fn check(&mut self, config: &ExperimentConfig, phase_offset: f64) {
        self.configs += 1;
        let v = config.validate().expect("random configs are valid");
        let dists = all_distributions(&v).expect("distributions exist");
        for x in 0..2 {
            for y in 0..2 {
                let total: f64 = dists[x][y].probs().iter().sum();
                max_into(&mut self.normalization, (total - 1.0).abs());
            }
        }
        for x in 0..2 {
            let (a, b) = (dists[x][0].alice_marginal(), dists[x][1].alice_marginal());
            (0..4).for_each(|i| max_into(&mut self.no_signaling, (a[i] - b[i]).abs()));
        }
        for y in 0..2 {
            let (a, b) = (dists[0][y].bob_marginal(), dists[1][y].bob_marginal());
            (0..4).for_each(|i| max_into(&mut self.no_signaling, (a[i] - b[i]).abs()));
        }
        max_into(&mut self.max_abs_s, max_abs_chsh(&chsh_matrix(&dists)));

        let dark_free = ExperimentConfig { detectors: DetectorParams::new(config.detectors.eta, 0.0), ..*config }
            .validate()
            .unwrap();
        let shift = |s: &MeasurementSetting| MeasurementSetting::new(s.angle(), s.phase() + phase_offset);
        let shifted = ExperimentConfig {
            alice_settings: config.alice_settings.map(|s| shift(&s)),
            bob_settings: config.bob_settings.map(|s| shift(&s)),
            ..*config
        }
        .validate()
        .unwrap();
        let keep = 1.0 - config.detectors.p_dc;
        for x in 0..2 {
            for y in 0..2 {
                let table = no_click_table(&v, x, y).unwrap();
                let moved = no_click_table(&shifted, x, y).unwrap();
                for s in DetectorSubset::all() {
                    let raw = closed_form_raw(&v, s, x, y);
                    for t in DetectorSubset::all().filter(|t| s.is_subset_of(*t)) {
                        max_into(&mut self.raw_monotonicity, closed_form_raw(&v, t, x, y) - raw);
                        max_into(&mut self.table_monotonicity, table.get(t) - table.get(s));
                    }
                    let expected = keep.powi(s.len() as i32) * closed_form_raw(&dark_free, s, x, y);
                    max_into(&mut self.dark_count_factor, (raw - expected).abs() / expected.max(1e-300));
                    max_into(&mut self.phase_shift, (table.get(s) - moved.get(s)).abs());
                }
            }
        }
    }
}
