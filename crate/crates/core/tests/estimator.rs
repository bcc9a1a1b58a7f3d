use std::sync::Arc;

use saa_amis::amis::{AdaptionPolicy, Sampler};
use saa_amis::estimator::EstimatorSnapshot;
use saa_amis::problems::builtin_problem;

fn chain(name: &str, seed: u64, n: usize) -> EstimatorSnapshot {
    let p = Arc::new(builtin_problem(name).unwrap());
    let mut s = Sampler::for_problem(&p, AdaptionPolicy::fixed(p.reference_proposal().clone()), seed);
    s.run(n);
    EstimatorSnapshot::from_history(p, s.history())
}

#[test]
fn abs_uniform_deviation_is_root_n() {
    let n = 10_000;
    let inside = (0..200).filter(|seed| chain("abs_uniform_1d", *seed, n).deviation(&[0.5]).unwrap().h_n.abs() < 5.0 / (n as f64).sqrt()).count();
    assert!(inside >= 198, "{inside} of 200");
}

#[test]
fn single_point_profile_matches_evaluation() {
    let snap = chain("quad_gauss_1d", 1, 1000);
    let prof = snap.grid_profile(&[vec![0.42]]).unwrap();
    assert_eq!(prof.f_n[0], snap.evaluate_fn(&[0.42]).unwrap());
    assert_eq!(prof.sup_abs_h, prof.h_n[0].abs());
}

/// Compares n = 10^4 against n = 10^2. Strict decrease at every 10× step has
/// probability only about 0.65 under the exact law, so only the endpoints are
/// asserted.
#[test]
fn sup_deviation_shrinks_with_n() {
    let p = Arc::new(builtin_problem("quad_gauss_1d").unwrap());
    let grid = p.domain().grid(101);
    let mut decreasing = 0;
    for seed in 0..100 {
        let mut s = Sampler::for_problem(&p, AdaptionPolicy::fixed(p.reference_proposal().clone()), seed);
        let mut snap = EstimatorSnapshot::new(Arc::clone(&p));
        let mut sups = Vec::new();
        for n in [100, 1000, 10_000] {
            while snap.n() < n {
                snap.push_record(s.next_sample());
            }
            sups.push(snap.grid_profile(&grid).unwrap().sup_abs_h);
        }
        decreasing += usize::from(sups[0] > sups[2]);
    }
    assert!(decreasing >= 90, "{decreasing} of 100");
}
