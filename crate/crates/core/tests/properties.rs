mod common;

use common::probit_sample;
use knp::effects::Region;
use knp::{fit, FitConfig, HermiteDistribution, KernelSpec};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hermite_cdf_is_a_distribution(tau in prop::collection::vec(-3.0..3.0f64, 0..=6), u in -8.0..8.0f64, du in 0.0..3.0f64) {
        let d = HermiteDistribution::new(&tau).unwrap();
        let (a, b) = (d.cdf(u), d.cdf(u + du));
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(b >= a - 1e-14);
        prop_assert!(d.density(u) >= 0.0);
        prop_assert!(d.cdf(-40.0) < 1e-12 && d.cdf(40.0) > 1.0 - 1e-12);
    }

    #[test]
    fn kernel_is_symmetric_and_bounded(
        a in prop::collection::vec(-5.0..5.0f64, 3),
        b in prop::collection::vec(-5.0..5.0f64, 3),
        sigma in 0.2..4.0f64,
    ) {
        let k = KernelSpec::new(sigma).unwrap();
        let ab = k.eval(&a, &b).unwrap();
        prop_assert_eq!(ab, k.eval(&b, &a).unwrap());
        prop_assert!(ab > 0.0 && ab <= 1.0);
        prop_assert_eq!(k.eval(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn region_text_round_trips(
        c1 in -3.0..3.0f64,
        c2 in -3.0..3.0f64,
        ops in prop::sample::subsequence(vec!["<", "<=", ">", ">="], 2),
        negate in any::<bool>(),
    ) {
        let base = format!("v{}{c1} & w1{}{c2}", ops[0], ops[1]);
        let text = if negate { format!("!({base})") } else { base };
        let region: Region = text.parse().unwrap();
        let again: Region = region.to_string().parse().unwrap();
        prop_assert_eq!(&region, &again);
        let (v, w) = (0.3, [-0.4]);
        prop_assert_eq!(region.contains(v, &w), !region.complement().contains(v, &w));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fits_satisfy_their_constraints(
        seed in 0..1000u64,
        radius in 0.5..20.0f64,
        order in 0..=4usize,
        m in 1..=12usize,
    ) {
        let data = probit_sample(60, 2, seed, |w| w[0] * w[1]);
        let cfg = FitConfig { radius, hermite_order: order, components: m, ..FitConfig::default() };
        let model = fit(&data, &cfg).unwrap();
        prop_assert!(model.constraint_value() <= radius * radius * (1.0 + 1e-9));
        prop_assert!(model.predict_g(model.w_star_raw()).unwrap().abs() < 1e-12);
        for i in 0..data.len() {
            let p = model.predict_p(data.v()[i], &data.w()[i]).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
