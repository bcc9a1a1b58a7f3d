use proptest::prelude::*;
use saa_amis::densities::{Density, SupportRegion};
use saa_amis::domain::BoxDomain;
use saa_amis::rng::rng_from_seed;

#[test]
fn reference_values() {
    let g = Density::standard_gaussian(1);
    assert!((g.evaluate(&[0.0]).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-15);
    let u = Density::uniform_box(BoxDomain::unit(1)).unwrap();
    assert_eq!(u.evaluate(&[0.5]).unwrap(), 1.0);
    assert_eq!(u.evaluate(&[2.0]).unwrap(), 0.0);
}

#[test]
fn narrow_gaussian_concentrates() {
    let g = Density::gaussian(vec![0.7], vec![1e-9]).unwrap();
    let mut rng = rng_from_seed(3);
    for _ in 0..1000 {
        assert!((g.sample(&mut rng)[0] - 0.7).abs() < 1e-7);
    }
}

#[test]
fn support_boundaries() {
    let b = SupportRegion::Box(BoxDomain::unit(1));
    assert!(b.contains(&[1.0]).unwrap());
    assert!(!b.contains(&[1.0001]).unwrap());
    assert!(SupportRegion::AllOfRr { dim: 1 }.contains(&[-1e300]).unwrap());
}

fn any_density() -> impl Strategy<Value = Density> {
    prop_oneof![
        (-3.0..3.0f64, 0.1..3.0f64).prop_map(|(m, s)| Density::gaussian(vec![m], vec![s]).unwrap()),
        (-2.0..0.0f64, 0.1..2.0f64).prop_map(|(lo, w)| Density::uniform_box(BoxDomain::new(vec![lo], vec![lo + w]).unwrap()).unwrap()),
        (-1.0..2.0f64, 0.2..2.0f64).prop_map(|(m, s)| Density::truncated_gaussian(vec![m], vec![s], BoxDomain::unit(1)).unwrap()),
        (0.05..0.95f64, -2.0..2.0f64).prop_map(|(w, m)| Density::mixture(
            vec![w, 1.0 - w],
            vec![Density::standard_gaussian(1), Density::gaussian(vec![m], vec![0.5]).unwrap()]
        )
        .unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn draws_stay_in_support_with_positive_density(d in any_density(), seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        for _ in 0..200 {
            let t = d.sample(&mut rng);
            prop_assert!(d.support().contains(&t).unwrap());
            prop_assert!(d.pdf(&t) > 0.0);
        }
    }

    #[test]
    fn same_seed_same_draws(d in any_density(), seed in any::<u64>()) {
        let (mut a, mut b) = (rng_from_seed(seed), rng_from_seed(seed));
        for _ in 0..20 {
            prop_assert_eq!(d.sample(&mut a), d.sample(&mut b));
        }
    }

    #[test]
    fn json_round_trip(d in any_density()) {
        let text = serde_json::to_string(&d).unwrap();
        let back: Density = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, d);
    }
}
