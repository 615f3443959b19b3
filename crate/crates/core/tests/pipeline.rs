use oscitune_core::lha::{estimate, parse_target, Estimate};
use oscitune_core::model::{parse_model, repressilator, three_way};
use oscitune_core::{
    abc_rejection, measure_distance, DistanceMeter, ModelMeter, PeriodMeter, PeriodMeterConfig,
    Prior, RejectionConfig, SafetyBounds, SsaSource,
};

fn exp1_meter() -> PeriodMeterConfig {
    serde_json::from_str(r#"{"species": "A", "L": 300, "H": 360, "N": 4, "target": 0.01}"#).unwrap()
}

#[test]
fn hasl_over_the_period_automaton() {
    let model = three_way();
    let meter = PeriodMeter::new(&exp1_meter(), &model).unwrap();
    let source = SsaSource {
        model: &model,
        theta: vec![1.0; 3],
        init: model.initial_state.clone(),
        bounds: SafetyBounds::for_period_target(0.01, 4),
        seed: 5,
    };
    let prob = parse_target("PROB()", &meter.lha.variables).unwrap();
    let r = estimate(&prob, &meter.lha, &source, 20).unwrap();
    let Estimate::Scalar { value, ci } = r.estimate else {
        panic!()
    };
    assert!(value > 0.5, "{value}");
    assert!(ci.0 <= value && value <= ci.1);

    let avg = parse_target("AVG(last(n))", &meter.lha.variables).unwrap();
    let r = estimate(&avg, &meter.lha, &source, 20).unwrap();
    let Estimate::Scalar { value, ci } = r.estimate else {
        panic!()
    };
    // every accepted path stops on its fourth period
    assert_eq!(value, 4.0);
    assert_eq!(ci, (4.0, 4.0));
}

#[test]
fn exported_model_simulates_like_the_builtin() {
    let builtin = repressilator();
    let reparsed = parse_model(&builtin.to_json()).unwrap();
    let cfg: PeriodMeterConfig =
        serde_json::from_str(r#"{"species": "P1", "L": 50, "H": 200, "N": 4, "target": 20}"#)
            .unwrap();
    let theta = [200.0, 2.0, 2.0, 0.0];
    let bounds = SafetyBounds::for_period_target(20.0, 4);
    let a = measure_distance(&builtin, &theta, &cfg, 3, bounds).unwrap();
    let b = measure_distance(&reparsed, &theta, &cfg, 3, bounds).unwrap();
    assert!(a.is_finite());
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn rejection_on_the_three_way_model() {
    let model = three_way();
    let meter = ModelMeter {
        model: &model,
        meter: PeriodMeter::new(&exp1_meter(), &model).unwrap(),
        template: vec![1.0; 3],
        free: vec![0],
        bounds: SafetyBounds {
            max_time: 0.4,
            max_events: 1_000_000,
        },
    };
    assert!(meter.distance(&[1.0], 1).unwrap().is_finite());
    let prior = Prior::new(vec!["r_A".into()], vec![(0.5, 2.0)]).unwrap();
    let cfg = RejectionConfig {
        n_particles: 5,
        epsilon: 0.2,
        max_simulations: None,
    };
    let a = abc_rejection(&meter, &prior, &cfg, 3, 1).unwrap();
    assert_eq!(a.particles.len(), 5);
    assert!(a
        .particles
        .iter()
        .all(|p| p.distance <= 0.2 && prior.contains(&p.theta)));
    assert_eq!(a, abc_rejection(&meter, &prior, &cfg, 3, 2).unwrap());
}
