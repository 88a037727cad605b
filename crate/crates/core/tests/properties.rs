use cyclemax::bdp::{BirthDeathSpec, TailRule, Weights};
use cyclemax::cycle_max::{blocking_prob, dual_process, CycleMaxDistribution};
use proptest::prelude::*;

fn table_spec() -> impl Strategy<Value = BirthDeathSpec> {
    (
        prop::collection::vec(-3.0f64..3.0, 2..30),
        0.05f64..3.0,
        -2.0f64..2.0,
        0.1f64..5.0,
        0.1f64..5.0,
        prop::option::of(2usize..40),
    )
        .prop_map(|(steps, ratio, power, lambda, mu, cap)| {
            let mut ln = Vec::with_capacity(steps.len());
            let mut acc = 0.0;
            for s in steps {
                ln.push(acc);
                acc += s;
            }
            let psi = Weights::log_table(ln, TailRule { ratio, power, factorial: 0.0 }).unwrap();
            let spec = BirthDeathSpec::new("prop", lambda, mu, None, psi, Weights::SingleServer).unwrap();
            match cap {
                Some(c) => spec.with_cap(c).unwrap(),
                None => spec,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn json_round_trip(spec in table_spec()) {
        let back = BirthDeathSpec::from_json_str(&spec.to_json_string().unwrap()).unwrap();
        prop_assert_eq!(&back, &spec);
        prop_assert_eq!(back.to_json_string().unwrap(), spec.to_json_string().unwrap());
    }

    #[test]
    fn cdf_is_a_distribution_function(spec in table_spec()) {
        let d = CycleMaxDistribution::new(spec.clone());
        let mut prev = 0.0;
        for n in 0..120 {
            let f = d.cdf(n);
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!(f >= prev - 1e-15);
            prev = f;
            let h = d.failure_rate(n);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&h));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&blocking_prob(&spec, n)));
        }
    }

    #[test]
    fn dual_is_an_involution(spec in table_spec()) {
        prop_assert_eq!(dual_process(&dual_process(&spec)), spec);
    }
}
