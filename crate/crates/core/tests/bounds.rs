use proptest::prelude::*;
use saa_amis::bounds::*;
use saa_amis::domain::BoxDomain;
use saa_amis::problems::{builtin_problem, ProblemInstance, Template};
use saa_amis::densities::Density;
use saa_amis::Error;

fn valid_spec() -> impl Strategy<Value = TailBoundSpec> {
    (0.05..20.0f64, 0.01..50.0f64, 0.001..0.999f64, 1u64..10_000).prop_map(|(b, k, frac, n)| TailBoundSpec::new(b, k, frac * b, n).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn entropy_positive_off_diagonal(p in 0.001..0.999f64, q in 0.001..0.999f64) {
        prop_assume!((p - q).abs() > 1e-6);
        prop_assert!(relative_entropy(p, q).unwrap() > 0.0);
    }

    #[test]
    fn optimal_lambda_attains_tail_bound(spec in valid_spec()) {
        let lam = optimal_lambda(&spec);
        prop_assert!(lam > 0.0);
        let log_lhs = -lam * spec.n as f64 * spec.epsilon + log_bennett_mgf_bound(&spec, lam).unwrap();
        let log_rhs = -(spec.n as f64) * spec.exponent();
        prop_assert!((log_lhs - log_rhs).abs() <= 1e-12 * log_rhs.abs().max(1.0) * 8.0, "{log_lhs} vs {log_rhs}");
    }

    #[test]
    fn optimal_lambda_minimizes(spec in valid_spec(), scale in 0.5..1.5f64) {
        let lam = optimal_lambda(&spec);
        let at = |l: f64| -l * spec.n as f64 * spec.epsilon + log_bennett_mgf_bound(&spec, l).unwrap();
        prop_assert!(at(lam) <= at(lam * scale) + 1e-9 * at(lam).abs().max(1.0));
    }

    #[test]
    fn tail_bound_below_one_and_decreasing_in_n(spec in valid_spec()) {
        let t = tail_bound(&spec);
        prop_assert!(t < 1.0);
        let mut doubled = spec;
        doubled.n *= 2;
        prop_assert!(tail_bound(&doubled) <= t);
    }

    #[test]
    fn mgf_bound_is_one_at_zero(spec in valid_spec()) {
        prop_assert_eq!(bennett_mgf_bound(&spec, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn covering_radius_holds(lo in -2.0..0.0f64, w in 0.1..3.0f64, delta in 0.01..1.0f64, probe in prop::collection::vec(0.0..1.0f64, 2)) {
        let b = BoxDomain::new(vec![lo, lo], vec![lo + w, lo + 0.5 * w]).unwrap();
        let c = covering(&b, delta).unwrap();
        let x: Vec<f64> = probe.iter().zip(&b.lo).zip(&b.hi).map(|((u, l), h)| l + u * (h - l)).collect();
        let nearest = c.centers.iter().map(|z| saa_amis::domain::distance(z, &x)).fold(f64::INFINITY, f64::min);
        prop_assert!(nearest <= delta * (1.0 + 1e-12));
    }
}

#[test]
fn two_sided_is_twice_one_sided() {
    let b = pointwise_bound(1.0, 1.0, 0.5, 1).unwrap();
    assert!((b.one_sided - 0.877_38).abs() < 1e-5);
    assert_eq!(b.two_sided_raw, 2.0 * b.one_sided_raw);
}

#[test]
fn degenerate_covering_reduces_to_pointwise() {
    // A single center and a vanishing calmness coefficient.
    let factor = Density::standard_gaussian(1);
    let p = ProblemInstance::new("sn", Template::SelfNormalizing { factor }, BoxDomain::unit(1)).unwrap();
    let cover = covering(p.domain(), 0.5).unwrap();
    assert_eq!(cover.len(), 1);
    let calm = CalmnessSpec::new(0.0, MRule::Fixed { m: 1.0 }).unwrap();
    let ub = uniform_bound(&p, 1.0, &cover, &calm, &ModulusOfContinuity::Linear, 0.4, 50).unwrap();
    let pw = two_sided_pointwise_bound(&p, 1.0, &[0.5], 0.2, 50).unwrap();
    assert_eq!(ub.calmness_term, 0.0);
    assert_eq!(ub.one_sided_raw, pw.one_sided_raw);
}

fn quad_uniform(epsilon: f64, delta: f64, n: u64) -> saa_amis::Result<UniformBound> {
    let p = builtin_problem("quad_gauss_1d").unwrap();
    let cover = covering(p.domain(), delta)?;
    let calm = CalmnessSpec::for_problem(&p, 1.0, &ModulusOfContinuity::Linear, MRule::Largest { m_max: 1.0 / delta })?;
    uniform_bound(&p, 1.0, &cover, &calm, &ModulusOfContinuity::Linear, epsilon, n)
}

#[test]
fn infeasible_covering_radius_is_reported() {
    // With δ = 0.05 the calmness step needs ε > 4·k̂·δ ≈ 0.525.
    match quad_uniform(0.2, 0.05, 10_000) {
        Err(Error::Precondition(msg)) => assert!(msg.contains("calmness"), "{msg}"),
        other => panic!("expected a precondition error, got {other:?}"),
    }
}

#[test]
fn feasible_uniform_bound_has_breakdown() {
    let ub = quad_uniform(0.6, 0.05, 10_000).unwrap();
    assert!(ub.two_sided > 0.0 && ub.two_sided < 1.0);
    assert_eq!(ub.terms.len(), 10);
    let sum: f64 = ub.terms.iter().map(|t| t.bound).sum();
    assert!((ub.one_sided_raw - (sum + ub.calmness_term)).abs() <= 1e-15 * ub.one_sided_raw);
}

#[test]
fn log_bound_doubles_with_n() {
    let a = quad_uniform(0.6, 0.05, 20_000).unwrap();
    let b = quad_uniform(0.6, 0.05, 40_000).unwrap();
    let ratio = b.one_sided_raw.ln() / a.one_sided_raw.ln();
    assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
}
