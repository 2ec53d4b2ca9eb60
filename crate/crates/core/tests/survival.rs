use proptest::prelude::*;
use topogbm::losses::cox_nll;
use topogbm::survival::{c_index, kaplan_meier, SurvivalRecord};

fn cohort() -> impl Strategy<Value = Vec<(f64, bool, f64)>> {
    prop::collection::vec((1u32..30, any::<bool>(), -3.0f64..3.0).prop_map(|(t, e, r)| (t as f64, e, r)), 2..25)
}

fn records(c: &[(f64, bool, f64)]) -> Vec<SurvivalRecord> {
    c.iter().map(|&(t, e, _)| SurvivalRecord::new(t, e, vec![])).collect()
}

proptest! {
    #[test]
    fn c_index_depends_only_on_risk_order(c in cohort()) {
        let recs = records(&c);
        let risks: Vec<f64> = c.iter().map(|x| x.2).collect();
        let squashed: Vec<f64> = risks.iter().map(|r| r.tanh() * 5.0 + 1.0).collect();
        let flipped: Vec<f64> = risks.iter().map(|r| -r).collect();
        if let Ok(a) = c_index(&risks, &recs) {
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(a, c_index(&squashed, &recs).unwrap());
            prop_assert!((a + c_index(&flipped, &recs).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn km_is_nonincreasing_and_bounded(c in cohort()) {
        let km = kaplan_meier(&records(&c));
        let mut prev = 1.0;
        for &s in &km.survival {
            prop_assert!((0.0..=prev).contains(&s));
            prev = s;
        }
        prop_assert!(km.times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn cox_gradient_sums_to_zero(c in cohort()) {
        let recs = records(&c);
        let eta: Vec<f64> = c.iter().map(|x| x.2).collect();
        let (loss, grad) = cox_nll(&eta, &recs).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!(grad.iter().sum::<f64>().abs() < 1e-9);
    }
}

#[test]
fn perfect_ranking_scores_one() {
    let recs: Vec<SurvivalRecord> = (1..=10).map(|t| SurvivalRecord::new(t as f64, true, vec![])).collect();
    let risks: Vec<f64> = (1..=10).map(|t| -(t as f64)).collect();
    assert_eq!(c_index(&risks, &recs).unwrap(), 1.0);
    assert_eq!(c_index(&vec![0.0; 10], &recs).unwrap(), 0.5);
}
