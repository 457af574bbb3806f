use rrcal_core::calibrators::{MlpParams, Objective, ObjectiveKind};
use rrcal_core::grad::finite_diff;
use rrcal_core::objectives::joint_mc_nll;
use rrcal_core::simulator::{generate, SimulatorConfig};
use rrcal_core::{CalibrationExample, GateCoupling, RngState, TemperatureParams};

fn instance(seed: u64) -> Vec<CalibrationExample> {
    generate(&SimulatorConfig {
        n_examples: 4,
        pool_size: 5,
        k: 2,
        answers_per_doc: 3,
        retriever_sharpness: 1.5,
        reader_sharpness: 1.5,
        seed,
        ..SimulatorConfig::default()
    })
    .unwrap()
    .examples
}

fn assert_close(analytic: &[f64], numeric: &[f64], tol: f64) {
    for (a, n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs()).max(1e-3);
        assert!((a - n).abs() / scale <= tol, "analytic {a} numeric {n}");
    }
}

#[test]
fn joint_gradient_matches_finite_differences() {
    for seed in 0..10u64 {
        let examples = instance(seed);
        let mut draw = RngState::named(seed, "theta");
        let theta = [draw.normal(0.0, 0.4), draw.normal(0.0, 0.4)];
        for coupling in [
            GateCoupling::Sequential,
            GateCoupling::Posterior,
            GateCoupling::Uniform,
        ] {
            let rng = RngState::named(seed, "mc");
            let eval = |t: &[f64]| {
                let params = TemperatureParams::new(t[0].exp(), t[1].exp()).unwrap();
                joint_mc_nll(&examples, &params, 0.7, 3, coupling, &mut rng.clone()).unwrap()
            };
            let analytic = eval(&theta).grad_log_t;
            let numeric = finite_diff(|t| eval(t).value, &theta, 1e-5).unwrap();
            assert_close(&analytic, &numeric, 1e-4);
        }
    }
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    for seed in 0..5u64 {
        let examples = instance(100 + seed);
        let width = 2;
        let shape = MlpParams::random(2 * width + 2, 3, 0.3, &mut RngState::named(seed, "init"));
        let kind = ObjectiveKind::Joint {
            mc_samples: 2,
            coupling: GateCoupling::Sequential,
        };
        let objective = Objective::mlp(&examples, kind, &shape, width).unwrap();
        let theta = shape.weights();
        let rng = RngState::named(seed, "mc");
        let analytic = objective
            .evaluate(&theta, 0.7, &mut rng.clone())
            .unwrap()
            .grad;
        let numeric = finite_diff(
            |t| objective.evaluate(t, 0.7, &mut rng.clone()).unwrap().sum,
            &theta,
            1e-5,
        )
        .unwrap();
        assert_eq!(analytic.len(), theta.len());
        assert_close(&analytic, &numeric, 1e-4);
    }
}

#[test]
fn platt_gradient_matches_finite_differences() {
    let examples = instance(7);
    let objective = Objective::platt(&examples, ObjectiveKind::ReaderOnly);
    let theta = [0.8, 0.1, 1.3, -0.2];
    let mut rng = RngState::new(0);
    let analytic = objective.evaluate(&theta, 1.0, &mut rng).unwrap().grad;
    let numeric = finite_diff(
        |t| {
            objective
                .evaluate(t, 1.0, &mut RngState::new(0))
                .unwrap()
                .sum
        },
        &theta,
        1e-5,
    )
    .unwrap();
    assert_close(&analytic, &numeric, 1e-4);
}
