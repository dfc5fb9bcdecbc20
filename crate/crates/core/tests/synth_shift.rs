use simreal_core::learner::{Learner, MCDropoutClassifier, TrainConfig};
use simreal_core::pipeline::metrics::evaluate_classifier;
use simreal_core::seed::Seed;
use simreal_core::synthdata::{generate_classification, ClassificationBenchmarkSpec, LabelShiftSpec};

/// Accuracy on sim-domain test data minus accuracy on the real test set, for
/// a model trained on sim data only.
fn sim_to_real_gap(shift: f64, seed: u64) -> f64 {
    let spec = ClassificationBenchmarkSpec {
        n_classes: 4,
        dim: 4,
        separation: 3.0,
        n_sim: 400,
        n_pool: 10,
        n_test: 600,
        shift_magnitude: shift,
        label_shift: LabelShiftSpec { pool_priors: None, dirichlet_alpha: None },
        ..Default::default()
    };
    let s = Seed(seed);
    let data = spec.build(s).unwrap();
    let (sim_domain, _, _) = spec.domains(s).unwrap();
    let sim_test = generate_classification(&sim_domain, 600, s.derive(100)).unwrap();
    let mut model = MCDropoutClassifier::new(4, 16, 4, 0.1, s.derive(101));
    let cfg = TrainConfig { epochs: 20, learning_rate: 0.05, seed: s.derive(102), ..TrainConfig::default() };
    model.fit(&data.sim, &cfg).unwrap();
    let on_sim = evaluate_classifier(&model, &sim_test, 5, s.derive(103)).unwrap();
    let on_real = evaluate_classifier(&model, &data.test, 5, s.derive(103)).unwrap();
    on_sim - on_real
}

#[test]
fn zero_shift_has_no_gap() {
    let mean = (0..10).map(|s| sim_to_real_gap(0.0, s)).sum::<f64>() / 10.0;
    assert!(mean.abs() <= 0.02, "mean gap {mean}");
}

#[test]
fn gap_grows_with_translation() {
    let avg = |shift: f64| (0..10).map(|s| sim_to_real_gap(shift, s)).sum::<f64>() / 10.0;
    let gaps: Vec<f64> = [0.0, 1.0, 3.0].into_iter().map(avg).collect();
    assert!(gaps.windows(2).all(|w| w[0] <= w[1]), "{gaps:?}");
}
