use qillum::probe::{
    geometric_amplitudes, optimize_two, poisson_amplitudes, random_competitor, term_absorb_closed, xi_single, xi_two,
    zeta,
};
use qillum::{OptimizerOptions, TargetParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn coherent_zeta_dominates_random_candidates() {
    let ns = 0.5f64;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bound = ns.sqrt();
    let worst = (0..1000)
        .map(|_| zeta(&random_competitor(ns, 40, &mut rng)).unwrap())
        .fold(0.0_f64, f64::max);
    assert!(worst <= bound + 1e-12, "{worst} > {bound}");
    assert!((zeta(&poisson_amplitudes(ns, 40)).unwrap() - bound).abs() < 1e-12);
}

#[test]
fn tmsv_beats_coherent_statistics_perturbatively() {
    let p = TargetParams::new(1e-3, 1e-3, 2.0).unwrap();
    for ns in [0.1, 0.5, 1.0] {
        let tm = xi_two(&geometric_amplitudes(ns, 60), &p).unwrap();
        let cs = xi_two(&poisson_amplitudes(ns, 60), &p).unwrap();
        assert!(tm.term_reflect >= cs.term_reflect);
        // a larger subtracted term means a smaller bound
        assert!(tm.q_perturbative <= cs.q_perturbative);
    }
}

#[test]
fn single_mode_random_candidates_share_absorption_term() {
    let p = TargetParams::new(0.01, 0.01, 3.0).unwrap();
    let reference = term_absorb_closed(&p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let first = xi_single(&random_competitor(1.0, 12, &mut rng), &p)
        .unwrap()
        .term_absorb;
    for _ in 0..20 {
        let c = random_competitor(1.0, 12, &mut rng);
        let b = xi_single(&c, &p).unwrap();
        assert_eq!(b.term_absorb.to_bits(), first.to_bits());
        assert_eq!(b.q_perturbative, 1.0 - b.term_reflect - b.term_absorb);
    }
    assert!((first - reference).abs() < 1e-16);
}

#[test]
fn two_mode_optimum_does_not_depend_on_background() {
    let opts = OptimizerOptions::default();
    let a = optimize_two(0.7, 2.0, 50, &opts).unwrap();
    let b = optimize_two(0.7, 500.0, 50, &opts).unwrap();
    let dev = a
        .coeffs
        .iter()
        .zip(&b.coeffs)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(dev < 1e-6, "deviation {dev:e}");
}

#[test]
fn optimizer_is_deterministic_for_a_seed() {
    let opts = OptimizerOptions {
        seed: 9,
        ..OptimizerOptions::default()
    };
    let a = optimize_two(1.0, 1.0, 40, &opts).unwrap();
    let b = optimize_two(1.0, 1.0, 40, &opts).unwrap();
    assert_eq!(a, b);
}
