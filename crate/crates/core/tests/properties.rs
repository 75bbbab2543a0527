use ccepe_core::harness::checks;
use ccepe_core::mechanisms::{ccepe, pseudo_vickrey};
use ccepe_core::revcurve::{ef_payments, efo, revenue_curve, truncate_profile};
use ccepe_core::{Allocation, ConsensusParams, Environment, Mode, ValuationProfile};
use proptest::prelude::*;

fn profile(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![(0u8..6).prop_map(f64::from), 0.0..20.0f64],
        3..=max_n,
    )
    .prop_map(|mut v| {
        v.sort_by(|a, b| b.total_cmp(a));
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn curve_is_the_least_concave_majorant(v in profile(12)) {
        let r = revenue_curve(&ValuationProfile::new(v.clone()).unwrap());
        prop_assert_eq!(checks::envelope(&v, r.values()).unwrap(), None);
        for (got, want) in r.values().iter().zip(checks::envelope_oracle(&v)) {
            prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want));
        }
    }

    #[test]
    fn efo_is_the_sum_of_envy_free_payments(v in profile(8), k in 1usize..8) {
        let n = v.len();
        let env = Environment::k_unit(n, k.min(n)).unwrap();
        let prof = ValuationProfile::new(v).unwrap();
        let (total, x) = efo(&prof, &env, Mode::Exact).unwrap();
        prop_assert!(x.is_monotone());
        let p = ef_payments(&Allocation::new(x.as_slice().to_vec()).unwrap(), &prof).unwrap();
        prop_assert!((p.iter().sum::<f64>() - total).abs() <= 1e-9 * (1.0 + total));
        for (i, &pi) in p.iter().enumerate() {
            prop_assert!(pi >= -1e-12 && pi <= prof.as_slice()[i] * x.as_slice()[i] + 1e-9);
        }
    }

    #[test]
    fn truncation_only_lowers_the_top(v in profile(10), m in 1usize..12) {
        let t = truncate_profile(&v, m).unwrap();
        prop_assert_eq!(t.len(), v.len());
        prop_assert!(t.iter().zip(&v).all(|(a, b)| a <= b));
        prop_assert!(t.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn mechanism_outcomes_are_individually_rational(v in profile(6), sigma in 0.0..1.0f64) {
        let support = Environment::digital_goods(v.len()).unwrap().exact_support().unwrap();
        let params = ConsensusParams::reference();
        for out in [pseudo_vickrey(&v, &support).unwrap(), ccepe(&v, &support, &params, sigma).unwrap()] {
            for (i, &vi) in v.iter().enumerate() {
                prop_assert!(out.payments[i] >= -1e-12);
                prop_assert!(out.utilities[i] >= -1e-9 * (1.0 + vi));
                prop_assert!((0.0..=1.0 + 1e-12).contains(&out.allocation[i]));
            }
        }
    }
}
