//! Crossing events on simulated fields.

use shotnoise::experiments::{FieldConfig, FieldRunner};
use shotnoise::field::{FieldSample, MarkRule};
use shotnoise::percolation::{detect, excursion_values, near_critical_count, CrossingSpec, EventKind};
use shotnoise::rng::derive_seed;
use shotnoise::{Kernel, MarkDistribution};

fn cfg(seed: u64) -> FieldConfig {
    let mut c = FieldConfig::new(MarkDistribution::Gaussian { sigma: 1.0 }, Kernel::power_law(3.5));
    c.master_seed = seed;
    c
}

#[test]
fn cross_and_dual_cross_partition_sampled_fields() {
    let c = cfg(5);
    let r = 32.0;
    let runner = FieldRunner::covering(&c, [0.0, 0.0], [r, r], None).unwrap();
    let cross = CrossingSpec::rect(r, r, 0.0, EventKind::Cross);
    let star = CrossingSpec::rect(r, r, 0.0, EventKind::CrossStar);
    let mut violations = 0;
    for t in 0..10_000u64 {
        let cloud = runner.cloud(derive_seed(5, &[t])).unwrap();
        let bg = excursion_values(runner.spec(), &runner.values(&cloud, MarkRule::Plain).unwrap(), 0.0);
        violations += (detect(&bg, &cross).unwrap() == detect(&bg, &star).unwrap()) as usize;
    }
    // The 8/4 connectivity pair makes the partition exact on the grid.
    assert_eq!(violations, 0);
}

#[test]
fn near_critical_counts_scale_with_window() {
    let c = cfg(6);
    let runner = FieldRunner::covering(&c, [0.0, 0.0], [16.0, 16.0], None).unwrap();
    let deltas = [0.02, 0.01, 0.005];
    let mut totals = [0usize; 3];
    for t in 0..200u64 {
        let cloud = runner.cloud(derive_seed(6, &[t])).unwrap();
        let s = runner.synth.synthesize(&cloud, MarkRule::Plain, true).unwrap();
        let mut fs = FieldSample::from_values(*runner.spec(), s.values);
        fs.gradient = s.gradient;
        for (k, &d) in deltas.iter().enumerate() {
            totals[k] += near_critical_count(&fs, 0.0, d).unwrap();
        }
    }
    assert!(totals[0] > totals[1] && totals[1] > totals[2], "{totals:?}");
    for w in totals.windows(2) {
        let ratio = w[1] as f64 / w[0] as f64;
        assert!((0.3..=0.8).contains(&ratio), "{totals:?}");
    }
}
