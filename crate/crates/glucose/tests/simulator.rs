use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safebo::Oracle;
use safebo_glucose::dose::{INITIAL_BOLUS_U, MAX_BOLUS_U, MEAL_CARBS_G};
use safebo_glucose::{
    calibrate, cohort, gpi, hypo_constraint, simulate_noiseless, tir_metrics, DoseOracle, DoseSweep,
    MealScenario, PatientModel,
};

fn meal(bolus: f64) -> MealScenario {
    MealScenario::new(MEAL_CARBS_G, bolus)
}

#[test]
fn fasting_patient_stays_at_basal() {
    let p = PatientModel::default();
    let trace = simulate_noiseless(&p, &MealScenario::new(0.0, 0.0)).unwrap();
    for g in &trace.true_bg {
        assert!((g - p.basal_glucose).abs() <= 1.0, "{g}");
    }
}

#[test]
fn unbolused_meal_rises_then_falls() {
    let p = PatientModel::default();
    let bg = simulate_noiseless(&p, &meal(0.0)).unwrap().true_bg;
    let peak = bg
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    assert!(peak > 0 && peak < bg.len() - 1);
    assert!(bg[peak] > p.basal_glucose + 50.0);
    assert!(bg[..=peak].windows(2).all(|w| w[1] >= w[0]));
    assert!(bg[peak..].windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn maximum_bolus_causes_hypoglycemia() {
    let bg = simulate_noiseless(&PatientModel::default(), &meal(MAX_BOLUS_U)).unwrap().true_bg;
    assert!(bg.iter().cloned().fold(f64::INFINITY, f64::min) < 70.0);
}

#[test]
fn halving_the_step_changes_little() {
    let p = PatientModel::default();
    for bolus in [0.0, 5.0, 20.0] {
        let coarse = simulate_noiseless(&p, &meal(bolus)).unwrap();
        let fine = simulate_noiseless(&p.clone().with_integrator_step(0.5), &meal(bolus)).unwrap();
        assert_eq!(coarse.times_min, fine.times_min);
        for (a, b) in coarse.true_bg.iter().zip(&fine.true_bg) {
            assert!((a - b).abs() < 0.1, "bolus {bolus}: {a} vs {b}");
        }
    }
}

#[test]
fn hypo_margin_is_nonincreasing_in_dose() {
    let sweep = DoseSweep::run(&PatientModel::default()).unwrap();
    for w in sweep.hypo.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{} then {}", w[0], w[1]);
    }
}

#[test]
fn optimal_dose_beats_both_extremes() {
    let c = calibrate(&PatientModel::default()).unwrap();
    let o = DoseOracle::new(c.patient.clone(), 0).unwrap();
    let at = |d: f64| o.truth(&[d]).unwrap().cost;
    assert!(at(c.optimal_dose) <= at(0.0));
    assert!(at(c.optimal_dose) <= at(MAX_BOLUS_U));
    assert!(o.truth(&[c.optimal_dose]).unwrap().constraints[0] >= 0.0);
}

#[test]
fn truth_matches_noiseless_trace_metrics() {
    let p = PatientModel::default();
    let o = DoseOracle::new(p.clone(), 0).unwrap();
    let bg = simulate_noiseless(&p, &meal(3.0)).unwrap().true_bg;
    let t = o.truth(&[3.0]).unwrap();
    assert_eq!(t.cost, gpi(&bg));
    assert_eq!(t.constraints, vec![hypo_constraint(&bg)]);
}

#[test]
fn oracle_noise_is_seeded() {
    let p = PatientModel::default();
    let mut a = DoseOracle::new(p.clone(), 9).unwrap();
    let mut b = DoseOracle::new(p.clone(), 9).unwrap();
    let mut c = DoseOracle::new(p, 10).unwrap();
    let (ya, yb, yc) = (a.query(&[2.0]).unwrap(), b.query(&[2.0]).unwrap(), c.query(&[2.0]).unwrap());
    assert_eq!(ya, yb);
    assert_ne!(ya, yc);
    assert_eq!(a.traces()[0], b.traces()[0]);
}

#[test]
fn cohort_is_reproducible_and_personalized() {
    let draw = |seed| cohort(10, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let a = draw(11);
    let b = draw(11);
    assert_eq!(a.len(), 10);
    let params = |c: &[safebo_glucose::CalibratedPatient]| c.iter().map(|p| p.patient.clone()).collect::<Vec<_>>();
    assert_eq!(params(&a), params(&b));
    assert_ne!(params(&a), params(&draw(12)));

    let mut doses: Vec<f64> = a.iter().map(|c| c.optimal_dose).collect();
    doses.sort_by(f64::total_cmp);
    doses.dedup();
    assert!(doses.len() >= 5, "optimal doses barely differ: {doses:?}");
    assert!(doses.last().unwrap() - doses[0] >= 1.0);

    for (i, c) in a.iter().enumerate() {
        let mut o = DoseOracle::new(c.patient.clone(), i as u64).unwrap();
        assert!(o.truth(&[INITIAL_BOLUS_U]).unwrap().constraints[0] > 0.0);
        assert!(o.query(&[INITIAL_BOLUS_U]).unwrap().constraints[0] > 0.0);
        assert!(o.truth(&[MAX_BOLUS_U]).unwrap().constraints[0] < 0.0);
        let fasting = simulate_noiseless(&c.patient, &MealScenario::new(0.0, 0.0)).unwrap();
        assert!(fasting.true_bg.iter().all(|g| (g - c.patient.basal_glucose).abs() <= 1.0));
    }
}

#[test]
fn patient_json_round_trip_and_strictness() {
    let p = PatientModel::default();
    let json = serde_json::to_string_pretty(&p).unwrap();
    let back: PatientModel = serde_json::from_str(&json).unwrap();
    assert_eq!(p, back);

    let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
    value["bogus"] = serde_json::json!(1);
    assert!(serde_json::from_value::<PatientModel>(value).is_err());

    let mut minimal: serde_json::Value = serde_json::from_str(&json).unwrap();
    let obj = minimal.as_object_mut().unwrap();
    obj.remove("cgm_sample_period");
    obj.remove("cgm_noise_std");
    obj.remove("integrator_step");
    assert_eq!(serde_json::from_value::<PatientModel>(minimal).unwrap(), p);
}

proptest! {
    #[test]
    fn gpi_vanishes_exactly_in_band(samples in proptest::collection::vec(40.0f64..350.0, 1..80)) {
        let in_band = samples.iter().all(|y| *y > 80.0 && *y <= 140.0);
        let g = gpi(&samples);
        prop_assert!(g >= 0.0);
        prop_assert_eq!(g == 0.0, in_band);
    }

    #[test]
    fn tir_fractions_sum_to_one(samples in proptest::collection::vec(30.0f64..400.0, 1..100)) {
        let t = tir_metrics(&samples);
        let n = samples.len() as f64;
        let counts = [t.in_range * n, t.above * n, t.below * n];
        prop_assert!(counts.iter().all(|c| (c - c.round()).abs() < 1e-9));
        prop_assert_eq!(counts.iter().map(|c| c.round() as usize).sum::<usize>(), samples.len());
    }

    #[test]
    fn hypo_margin_never_exceeds_final_reading(samples in proptest::collection::vec(30.0f64..400.0, 1..80)) {
        let h = hypo_constraint(&samples);
        prop_assert!(h <= samples.last().unwrap() - 70.0);
        prop_assert!(samples.iter().any(|y| (y - 70.0 - h).abs() < 1e-12));
    }
}
