//! Behavior, census and gradient-routing tests for the agent network family.

use mazerl_core::autodiff::{cast_params, Graph, ParamSet};
use mazerl_core::env::{encode_observation, parse_maze, Action};
use mazerl_core::models::{
    expected_param_names, init_params, lstm_nodes, obs_constant, BoundModel, Extractor,
    LstmValues, Variant, FEATURE_DIM, LSTM_UNITS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MAZE: &str = "name=t\nmax_steps=50\n########\n#S.....#\n#.##.#.#\n#....#G#\n########\n";

fn test_obs() -> mazerl_core::env::Observation {
    let maze = parse_maze(MAZE).unwrap();
    encode_observation(&maze, maze.start)
}

#[test]
fn census_is_frozen_per_variant() {
    let base = vec![
        "fe.conv1.bias",
        "fe.conv1.weight",
        "fe.conv2.bias",
        "fe.conv2.weight",
        "fe.conv3.bias",
        "fe.conv3.weight",
        "fe.conv4.bias",
        "fe.conv4.weight",
        "lstm.b",
        "lstm.wh",
        "lstm.wx",
        "pi.bias",
        "pi.weight",
        "value.bias",
        "value.weight",
    ];
    let prediction = vec![
        "fwd.fc1.bias",
        "fwd.fc1.weight",
        "fwd.fc2.bias",
        "fwd.fc2.weight",
        "inv.fc1.bias",
        "inv.fc1.weight",
        "inv.fc2.bias",
        "inv.fc2.weight",
    ];
    let icm_copy = vec![
        "icm_fe.conv1.bias",
        "icm_fe.conv1.weight",
        "icm_fe.conv2.bias",
        "icm_fe.conv2.weight",
        "icm_fe.conv3.bias",
        "icm_fe.conv3.weight",
        "icm_fe.conv4.bias",
        "icm_fe.conv4.weight",
    ];

    let sorted = |mut v: Vec<&str>| {
        v.sort();
        v.into_iter().map(String::from).collect::<Vec<_>>()
    };

    assert_eq!(expected_param_names(Variant::A3c), sorted(base.clone()));
    let with_pred = sorted([base.clone(), prediction.clone()].concat());
    assert_eq!(expected_param_names(Variant::Pred), with_pred);
    assert_eq!(expected_param_names(Variant::Vpc), with_pred);
    assert_eq!(
        expected_param_names(Variant::Icm),
        sorted([base, prediction, icm_copy].concat())
    );

    for variant in Variant::ALL {
        let params = init_params(variant, 1);
        let got: Vec<String> = params.names().cloned().collect();
        assert_eq!(got, expected_param_names(variant), "{}", variant.as_str());
    }
}

#[test]
fn init_biases_zero_except_forget_gate() {
    let params = init_params(Variant::Vpc, 3);
    let b = params.get("lstm.b").unwrap();
    for (i, &v) in b.data.iter().enumerate() {
        let expected = if (LSTM_UNITS..2 * LSTM_UNITS).contains(&i) { 1.0 } else { 0.0 };
        assert_eq!(v, expected, "lstm.b[{i}]");
    }
    for name in ["fe.conv1.bias", "pi.bias", "value.bias", "fwd.fc1.bias", "inv.fc2.bias"] {
        assert!(params.get(name).unwrap().data.iter().all(|&v| v == 0.0), "{name}");
    }
    // Weights are not all zero and respect the fan-in bound.
    let w = params.get("fe.conv2.weight").unwrap();
    let bound = 1.0 / (9.0f32 * 32.0).sqrt();
    assert!(w.data.iter().any(|&v| v != 0.0));
    assert!(w.data.iter().all(|&v| v.abs() <= bound + f32::EPSILON));
}

#[test]
fn bind_rejects_census_mismatch() {
    let params = init_params(Variant::A3c, 0);
    let mut g: Graph<f32> = Graph::new();
    let err = BoundModel::bind(&mut g, &params, Variant::Pred).unwrap_err();
    assert!(err.to_string().contains("census"), "unexpected: {err}");
}

#[test]
fn zero_observation_with_zero_biases_gives_zero_features() {
    let params = init_params(Variant::A3c, 5);
    let mut g: Graph<f32> = Graph::new();
    let model = BoundModel::bind(&mut g, &params, Variant::A3c).unwrap();
    let zero_obs = g.constant(&[10, 30, 3], vec![0.0; 900]);
    let feat = model.extract_features(&mut g, zero_obs, Extractor::Shared).unwrap();
    assert_eq!(g.values(feat), &[0.0; FEATURE_DIM]);
}

#[test]
fn feature_vector_has_dimension_64_and_is_finite() {
    let obs = test_obs();
    let params = init_params(Variant::Pred, 6);
    let mut g: Graph<f32> = Graph::new();
    let model = BoundModel::bind(&mut g, &params, Variant::Pred).unwrap();
    let obs_id = obs_constant(&mut g, &obs);
    let feat = model.extract_features(&mut g, obs_id, Extractor::Shared).unwrap();
    assert_eq!(g.shape(feat), &[FEATURE_DIM]);
    assert!(g.values(feat).iter().all(|v| v.is_finite()));
    assert!(g.values(feat).iter().any(|&v| v != 0.0));
}

#[test]
fn zeroed_heads_give_uniform_policy_and_zero_value() {
    let mut params = init_params(Variant::A3c, 7);
    for name in ["pi.weight", "pi.bias", "value.weight", "value.bias"] {
        let t = params.get_mut(name).unwrap();
        t.data.iter_mut().for_each(|v| *v = 0.0);
    }
    let obs = test_obs();
    let mut g: Graph<f32> = Graph::new();
    let model = BoundModel::bind(&mut g, &params, Variant::A3c).unwrap();
    let obs_id = obs_constant(&mut g, &obs);
    let feat = model.extract_features(&mut g, obs_id, Extractor::Shared).unwrap();
    let state = lstm_nodes(&mut g, &LstmValues::zeros());
    let pv = model.policy_value(&mut g, feat, state).unwrap();
    for &p in g.values(pv.policy) {
        assert!((p - 0.25).abs() < 1e-7, "{p}");
    }
    assert_eq!(g.values(pv.value), &[0.0]);
}

#[test]
fn policy_normalizes_across_random_parameterizations() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cases = 0;
    for seed in 0..100u64 {
        let params = init_params(Variant::A3c, 1000 + seed);
        let mut g: Graph<f32> = Graph::new();
        let model = BoundModel::bind(&mut g, &params, Variant::A3c).unwrap();
        for _ in 0..10 {
            let feat_values: Vec<f32> = (0..FEATURE_DIM).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let feat = g.constant(&[FEATURE_DIM], feat_values);
            let h: Vec<f32> = (0..LSTM_UNITS).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c: Vec<f32> = (0..LSTM_UNITS).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let state = lstm_nodes(&mut g, &LstmValues { h, c });
            let pv = model.policy_value(&mut g, feat, state).unwrap();
            let probs = g.values(pv.policy);
            let sum: f32 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "sum {sum}");
            assert!(probs.iter().all(|&p| p >= 0.0));
            cases += 1;
        }
    }
    assert_eq!(cases, 1000);
}

#[test]
fn policy_value_is_deterministic() {
    let params = init_params(Variant::A3c, 9);
    let obs = test_obs();
    let run = || {
        let mut g: Graph<f32> = Graph::new();
        let model = BoundModel::bind(&mut g, &params, Variant::A3c).unwrap();
        let obs_id = obs_constant(&mut g, &obs);
        let feat = model.extract_features(&mut g, obs_id, Extractor::Shared).unwrap();
        let state = lstm_nodes(&mut g, &LstmValues::zeros());
        let pv = model.policy_value(&mut g, feat, state).unwrap();
        (g.values(pv.policy).to_vec(), g.values(pv.value).to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn forward_model_with_zero_weights_returns_output_bias() {
    let mut params = init_params(Variant::Pred, 10);
    for name in ["fwd.fc1.weight", "fwd.fc1.bias", "fwd.fc2.weight"] {
        params.get_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
    }
    let bias: Vec<f32> = (0..FEATURE_DIM as i32).map(|i| i as f32 * 0.1).collect();
    params.get_mut("fwd.fc2.bias").unwrap().data = bias.clone();

    let mut g: Graph<f32> = Graph::new();
    let model = BoundModel::bind(&mut g, &params, Variant::Pred).unwrap();
    let feat = g.constant(&[FEATURE_DIM], vec![0.5; FEATURE_DIM]);
    let pred = model.forward_model(&mut g, feat, Action::Left).unwrap();
    assert_eq!(g.values(pred), &bias[..]);
}

#[test]
fn forward_model_depends_on_the_action() {
    let params = init_params(Variant::Pred, 11);
    let mut g: Graph<f32> = Graph::new();
    let model = BoundModel::bind(&mut g, &params, Variant::Pred).unwrap();
    let feat = g.constant(&[FEATURE_DIM], vec![0.3; FEATURE_DIM]);
    let p_up = model.forward_model(&mut g, feat, Action::Up).unwrap();
    let p_down = model.forward_model(&mut g, feat, Action::Down).unwrap();
    assert_ne!(g.values(p_up), g.values(p_down));
    assert_eq!(g.values(p_up).len(), FEATURE_DIM);
}

#[test]
fn inverse_model_with_zero_weights_is_uniform() {
    let mut params = init_params(Variant::Pred, 12);
    for name in ["inv.fc1.weight", "inv.fc1.bias", "inv.fc2.weight", "inv.fc2.bias"] {
        params.get_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut g: Graph<f32> = Graph::new();
    let model = BoundModel::bind(&mut g, &params, Variant::Pred).unwrap();
    let f1 = g.constant(&[FEATURE_DIM], vec![0.2; FEATURE_DIM]);
    let f2 = g.constant(&[FEATURE_DIM], vec![-0.4; FEATURE_DIM]);
    let (probs, _log) = model.inverse_model(&mut g, f1, f2).unwrap();
    for &p in g.values(probs) {
        assert!((p - 0.25).abs() < 1e-7);
    }
}

#[test]
fn shared_and_icm_extractors_differ_on_random_init() {
    let params = init_params(Variant::Icm, 13);
    let obs = test_obs();
    let mut g: Graph<f32> = Graph::new();
    let model = BoundModel::bind(&mut g, &params, Variant::Icm).unwrap();
    let obs_id = obs_constant(&mut g, &obs);
    let shared = model.extract_features(&mut g, obs_id, Extractor::Shared).unwrap();
    let copy = model.extract_features(&mut g, obs_id, Extractor::IcmCopy).unwrap();
    assert_ne!(g.values(shared), g.values(copy));
}

#[test]
fn variant_contracts_are_enforced() {
    let obs = test_obs();

    let mut g: Graph<f32> = Graph::new();
    let pred_params = init_params(Variant::Pred, 14);
    let model = BoundModel::bind(&mut g, &pred_params, Variant::Pred).unwrap();
    let obs_id = obs_constant(&mut g, &obs);
    assert!(model.extract_features(&mut g, obs_id, Extractor::IcmCopy).is_err());
    let feat = g.constant(&[FEATURE_DIM], vec![0.1; FEATURE_DIM]);
    let snap = lstm_nodes(&mut g, &LstmValues::zeros());
    assert!(model.predicted_value(&mut g, feat, snap).is_err());

    let mut g2: Graph<f32> = Graph::new();
    let a3c_params = init_params(Variant::A3c, 15);
    let a3c = BoundModel::bind(&mut g2, &a3c_params, Variant::A3c).unwrap();
    let feat2 = g2.constant(&[FEATURE_DIM], vec![0.1; FEATURE_DIM]);
    assert!(a3c.forward_model(&mut g2, feat2, Action::Up).is_err());
    assert!(a3c.inverse_model(&mut g2, feat2, feat2).is_err());
}

#[test]
fn perfect_prediction_reproduces_the_next_step_value() {
    // Feeding the true phi(s_{t+1}) into the predicted-value branch must give
    // exactly the value the live trajectory computes at t+1, because both run
    // the same LSTM step from the same snapshot.
    let params = init_params(Variant::Vpc, 16);
    let maze = parse_maze(MAZE).unwrap();
    let obs_t = encode_observation(&maze, maze.start);
    let obs_t1 = encode_observation(&maze, (1, 2));

    let mut g: Graph<f32> = Graph::new();
    let model = BoundModel::bind(&mut g, &params, Variant::Vpc).unwrap();
    let o_t = obs_constant(&mut g, &obs_t);
    let o_t1 = obs_constant(&mut g, &obs_t1);
    let f_t = model.extract_features(&mut g, o_t, Extractor::Shared).unwrap();
    let f_t1 = model.extract_features(&mut g, o_t1, Extractor::Shared).unwrap();

    let state0 = lstm_nodes(&mut g, &LstmValues::zeros());
    let pv_t = model.policy_value(&mut g, f_t, state0).unwrap();
    let snapshot = pv_t.next_state;

    let predicted = model.predicted_value(&mut g, f_t1, snapshot).unwrap();
    let pv_t1 = model.policy_value(&mut g, f_t1, snapshot).unwrap();
    assert_eq!(g.values(predicted), g.values(pv_t1.value));
}

#[test]
fn predicted_value_does_not_disturb_the_trajectory() {
    let params = init_params(Variant::Vpc, 17);
    let maze = parse_maze(MAZE).unwrap();
    let cells = [maze.start, (1, 2), (1, 3), (2, 4), (3, 4)];

    let run = |with_vpc: bool| -> Vec<(Vec<f32>, f32)> {
        let mut g: Graph<f32> = Graph::new();
        let model = BoundModel::bind(&mut g, &params, Variant::Vpc).unwrap();
        let mut state = lstm_nodes(&mut g, &LstmValues::zeros());
        let mut out = Vec::new();
        let mut prev: Option<mazerl_core::autodiff::TensorId> = None;
        for pos in cells {
            let obs = encode_observation(&maze, pos);
            let o = obs_constant(&mut g, &obs);
            let f = model.extract_features(&mut g, o, Extractor::Shared).unwrap();
            let pv = model.policy_value(&mut g, f, state).unwrap();
            if with_vpc {
                if let Some(prev_feat) = prev {
                    let fake_pred = model.forward_model(&mut g, prev_feat, Action::Right).unwrap();
                    model.predicted_value(&mut g, fake_pred, pv.next_state).unwrap();
                }
            }
            out.push((g.values(pv.policy).to_vec(), g.values(pv.value)[0]));
            state = pv.next_state;
            prev = Some(f);
        }
        out
    };
    assert_eq!(run(false), run(true));
}

#[test]
fn predicted_value_alone_produces_exactly_zero_gradients() {
    let params_f32 = init_params(Variant::Vpc, 18);
    let params: ParamSet<f64> = cast_params(&params_f32);
    let obs = test_obs();

    let mut g: Graph<f64> = Graph::new();
    let model = BoundModel::bind(&mut g, &params, Variant::Vpc).unwrap();
    let o = obs_constant(&mut g, &obs);
    let f = model.extract_features(&mut g, o, Extractor::Shared).unwrap();
    let state0 = lstm_nodes(&mut g, &LstmValues::zeros());
    let pv = model.policy_value(&mut g, f, state0).unwrap();
    let pred = model.forward_model(&mut g, f, Action::Up).unwrap();
    let vhat = model.predicted_value(&mut g, pred, pv.next_state).unwrap();

    let grads = g.backward(vhat).unwrap();
    for (name, grad) in grads.iter() {
        assert!(grad.iter().all(|&v| v == 0.0), "nonzero gradient in {name}");
    }
}

#[test]
fn icm_prediction_losses_never_touch_the_policy_extractor() {
    let params_f32 = init_params(Variant::Icm, 19);
    let params: ParamSet<f64> = cast_params(&params_f32);
    let maze = parse_maze(MAZE).unwrap();
    let obs_t = encode_observation(&maze, maze.start);
    let obs_t1 = encode_observation(&maze, (1, 2));

    let mut g: Graph<f64> = Graph::new();
    let model = BoundModel::bind(&mut g, &params, Variant::Icm).unwrap();
    let o_t = obs_constant(&mut g, &obs_t);
    let o_t1 = obs_constant(&mut g, &obs_t1);
    let f_t = model.extract_features(&mut g, o_t, Extractor::IcmCopy).unwrap();
    let f_t1 = model.extract_features(&mut g, o_t1, Extractor::IcmCopy).unwrap();

    // Forward loss against a detached target plus inverse cross-entropy:
    // the full prediction objective for this variant.
    let action = Action::Right;
    let pred = model.forward_model(&mut g, f_t, action).unwrap();
    let target = g.stop_grad(f_t1);
    let diff = g.sub(pred, target).unwrap();
    let sq = g.mul(diff, diff).unwrap();
    let fwd_loss = g.sum(sq);
    let (_probs, log_probs) = model.inverse_model(&mut g, f_t, f_t1).unwrap();
    let picked = g.gather(log_probs, action.index());
    let inv_loss = g.scale(picked, -1.0);
    let total = g.add(fwd_loss, inv_loss).unwrap();

    let grads = g.backward(total).unwrap();
    for (name, grad) in grads.iter() {
        let zero = grad.iter().all(|&v| v == 0.0);
        if name.starts_with("fe.")
            || name.starts_with("lstm.")
            || name.starts_with("pi.")
            || name.starts_with("value.")
        {
            assert!(zero, "policy-side parameter {name} received gradient");
        }
    }
    // The inverse path must actually train the copy extractor.
    let copy_grad = grads.get("icm_fe.conv1.weight").unwrap();
    assert!(copy_grad.iter().any(|&v| v != 0.0), "icm extractor got no gradient");
    assert!(grads.get("fwd.fc1.weight").unwrap().iter().any(|&v| v != 0.0));
    assert!(grads.get("inv.fc1.weight").unwrap().iter().any(|&v| v != 0.0));
}

#[test]
fn forward_model_input_is_detached_but_target_is_live() {
    // For the shared-extractor variants the forward loss reaches the
    // extractor only through the target phi(s_{t+1}).
    let params_f32 = init_params(Variant::Pred, 20);
    let params: ParamSet<f64> = cast_params(&params_f32);
    let maze = parse_maze(MAZE).unwrap();
    let obs_t = encode_observation(&maze, maze.start);
    let obs_t1 = encode_observation(&maze, (1, 2));

    // Loss A: forward loss with live target. Gradient on fe.* must be the
    // target-path gradient only.
    let mut g: Graph<f64> = Graph::new();
    let model = BoundModel::bind(&mut g, &params, Variant::Pred).unwrap();
    let o_t = obs_constant(&mut g, &obs_t);
    let o_t1 = obs_constant(&mut g, &obs_t1);
    let f_t = model.extract_features(&mut g, o_t, Extractor::Shared).unwrap();
    let f_t1 = model.extract_features(&mut g, o_t1, Extractor::Shared).unwrap();
    let pred = model.forward_model(&mut g, f_t, Action::Up).unwrap();
    let diff = g.sub(pred, f_t1).unwrap();
    let sq = g.mul(diff, diff).unwrap();
    let loss = g.sum(sq);
    let grads = g.backward(loss).unwrap();
    let fe_grad = grads.get("fe.conv1.weight").unwrap().to_vec();
    assert!(fe_grad.iter().any(|&v| v != 0.0), "live target must train the extractor");

    // Loss B: same but the input features come from a second, disjoint
    // observation pass whose gradient we can isolate: detaching the input
    // inside forward_model means perturbing only the t-side extraction path
    // contributes nothing. Verify by computing the same loss where the
    // target is detached too: then the extractor gradient must vanish.
    let mut g2: Graph<f64> = Graph::new();
    let model2 = BoundModel::bind(&mut g2, &params, Variant::Pred).unwrap();
    let o_t2 = obs_constant(&mut g2, &obs_t);
    let o_t12 = obs_constant(&mut g2, &obs_t1);
    let f_t2 = model2.extract_features(&mut g2, o_t2, Extractor::Shared).unwrap();
    let f_t12 = model2.extract_features(&mut g2, o_t12, Extractor::Shared).unwrap();
    let pred2 = model2.forward_model(&mut g2, f_t2, Action::Up).unwrap();
    let target2 = g2.stop_grad(f_t12);
    let diff2 = g2.sub(pred2, target2).unwrap();
    let sq2 = g2.mul(diff2, diff2).unwrap();
    let loss2 = g2.sum(sq2);
    let grads2 = g2.backward(loss2).unwrap();
    for name in ["fe.conv1.weight", "fe.conv4.weight", "fe.conv1.bias"] {
        assert!(
            grads2.get(name).unwrap().iter().all(|&v| v == 0.0),
            "{name}: input side of the forward model leaked gradient"
        );
    }
}
