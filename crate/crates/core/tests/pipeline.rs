use keyplan::encoder::{EncoderConfig, HeteroEncoder};
use keyplan::env::{Dynamics, EnvConfig};
use keyplan::error::Error;
use keyplan::keys::KeyPositionSet;
use keyplan::pipeline::{plan_from_keys, predict_scene, training_subscenes};
use keyplan::plot::{render_svg, PlotLayers};
use keyplan::ppo::{PolicyConfig, PolicyNet};
use keyplan::scene::{generate_synthetic_scene, SceneKind, FUTURE_LEN};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn untrained(env: &EnvConfig) -> (HeteroEncoder, PolicyNet) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let encoder = HeteroEncoder::new(EncoderConfig { width: 16, ..Default::default() }, &mut rng).unwrap();
    let policy = PolicyNet::new(PolicyConfig { width: 16, ..Default::default() }, env, &mut rng).unwrap();
    (encoder, policy)
}

#[test]
fn single_agent_prediction_shape() {
    let env = EnvConfig::default();
    let (encoder, policy) = untrained(&env);
    let scene = generate_synthetic_scene(SceneKind::Straight, 1, 3);
    let p = predict_scene(&scene, &encoder, &policy, &env).unwrap();
    let modes = encoder.config().modes;
    assert_eq!(modes, 6);
    let agent = &p.plan.predictions.agents[0];
    assert_eq!(agent.modes.len(), modes);
    assert!(agent.modes.iter().all(|m| m.len() == FUTURE_LEN));
    assert!((agent.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(agent.ground_truth.as_ref().map(Vec::len), Some(FUTURE_LEN));
    assert_eq!(p.plan.groups.len(), modes);
    assert!(p.plan.groups.iter().all(|g| g.groups == vec![vec!["A0".to_string()]]));
    assert_eq!(p.plan.traces.len(), modes);
    assert!(p.plan.traces.iter().all(|t| t.len() == FUTURE_LEN));
    p.plan.predictions.validate().unwrap();
}

#[test]
fn prediction_is_repeatable() {
    let env = EnvConfig::default();
    let (encoder, policy) = untrained(&env);
    let scene = generate_synthetic_scene(SceneKind::Merge, 3, 9);
    assert_eq!(
        predict_scene(&scene, &encoder, &policy, &env).unwrap(),
        predict_scene(&scene, &encoder, &policy, &env).unwrap()
    );
}

#[test]
fn planning_resumes_from_key_files() {
    let env = EnvConfig::default();
    let (_, policy) = untrained(&env);
    let scene = generate_synthetic_scene(SceneKind::Intersection, 3, 1);
    let keys = KeyPositionSet::from_ground_truth(&scene, &EncoderConfig::default().key_timestamps).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("keys.json");
    keys.save(&path).unwrap();
    let reloaded = KeyPositionSet::load(&path).unwrap();
    assert_eq!(
        plan_from_keys(&scene, &keys, &policy, &env).unwrap(),
        plan_from_keys(&scene, &reloaded, &policy, &env).unwrap()
    );
}

#[test]
fn dynamics_mismatch_is_rejected() {
    let env = EnvConfig::default();
    let (_, policy) = untrained(&env);
    let scene = generate_synthetic_scene(SceneKind::Straight, 1, 0);
    let keys = KeyPositionSet::from_ground_truth(&scene, &EncoderConfig::default().key_timestamps).unwrap();
    let positional = EnvConfig { dynamics: Dynamics::Positional, ..env };
    assert!(matches!(plan_from_keys(&scene, &keys, &policy, &positional).unwrap_err(), Error::Checkpoint(_)));
}

#[test]
fn training_pool_needs_scenes() {
    let env = EnvConfig::default();
    assert!(matches!(training_subscenes(&[], &[1.5, 3.0], &env).unwrap_err(), Error::Input(_)));
    let scenes: Vec<_> = (0..3).map(|s| generate_synthetic_scene(SceneKind::Curve, 2, s)).collect();
    let pool = training_subscenes(&scenes, &[1.5, 3.0], &env).unwrap();
    assert_eq!(pool.iter().map(|s| s.members.len()).sum::<usize>(), 6);
}

#[test]
fn svg_is_deterministic_and_layered() {
    let env = EnvConfig::default();
    let (encoder, policy) = untrained(&env);
    let scene = generate_synthetic_scene(SceneKind::Curve, 2, 4);
    let p = predict_scene(&scene, &encoder, &policy, &env).unwrap();
    let layers = PlotLayers {
        predictions: Some(&p.plan.predictions),
        keys: Some(&p.calibrated_keys),
        trace: Some(&p.plan.traces[0]),
        metadata: Some(r#"{"seed":1,"note":"<&>"}"#),
    };
    let a = render_svg(&scene, layers);
    assert_eq!(a, render_svg(&scene, layers));
    assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
    assert!(a.contains("<metadata>{\"seed\":1,\"note\":\"&lt;&amp;&gt;\"}</metadata>"));
    let bare = render_svg(&scene, PlotLayers::default());
    let count = |s: &str, tag: &str| s.matches(tag).count();
    assert_eq!(count(&bare, "<polygon"), scene.lanelets.len());
    assert_eq!(count(&a, "<polyline") - count(&bare, "<polyline"), 2 * 6 + 2);
    assert_eq!(count(&a, "<circle") - count(&bare, "<circle"), 2 * 6 * 2);
}
