//! Influence and revealment estimates on random small instances.

use shotnoise::inequalities::{influences, random_instances, revealments, ProductEvent};
use shotnoise::{Kernel, MarkDistribution};

#[test]
fn influences_and_revealments_are_probabilities() {
    for (marks, seed) in [
        (MarkDistribution::Gaussian { sigma: 1.0 }, 1),
        (MarkDistribution::Laplace { b: 1.0 }, 2),
    ] {
        let insts = random_instances(marks, Kernel::power_law(3.5), 3, &[3.0, 4.0], 3.0, 1.0, 0.25, 0.3, seed).unwrap();
        for inst in &insts {
            assert!(inst.len() <= 200);
            let inf = influences(inst, 300, seed).unwrap();
            let rev = revealments(inst, 300, seed).unwrap();
            assert_eq!(inf.influence.len(), inst.len());
            assert!(inf.influence.iter().all(|i| (0.0..=1.0).contains(i)));
            assert!(rev.revealment.iter().all(|d| (0.0..=1.0).contains(d)));
        }
    }
}
