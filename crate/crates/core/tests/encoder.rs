mod common;

use common::{constant_velocity_track, single_lane_scene, transform_point, transform_scene};
use keyplan::encoder::{
    calibrate_key_positions, edge_groups, edge_inputs, history_inputs, scene_loss, train_encoder, Ablation,
    EncoderConfig, EncoderTrainConfig, HeteroEncoder,
};
use keyplan::eval::{constant_velocity_baseline, dac, AgentPrediction, PredictionSet};
use keyplan::geometry::Vec2;
use keyplan::scene::{build_hetero_graph_at, generate_synthetic_scene, Scene, SceneKind};
use keyplan::Error;
use keyplan_tensor::check::param_grad_check;
use keyplan_tensor::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config(ablation: Ablation) -> EncoderConfig {
    EncoderConfig {
        width: 8,
        heads: 2,
        temporal_layers: 1,
        global_layers: 1,
        radius: 20.0,
        ablation,
        ..Default::default()
    }
}

fn encoder(config: EncoderConfig, seed: u64) -> HeteroEncoder {
    HeteroEncoder::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn two_agent_scene() -> Scene {
    let mut s = generate_synthetic_scene(SceneKind::Merge, 3, 4);
    s.agents.truncate(2);
    s
}

#[test]
fn zero_history_agent_has_finite_embedding() {
    let mut scene = single_lane_scene(vec![constant_velocity_track("A", Vec2::ZERO, Vec2::ZERO)]);
    scene.agents[0].future_gt = None;
    let enc = encoder(EncoderConfig::default(), 1);
    let mut g = Graph::with_params(enc.params());
    let emb = enc.embed_agents(&mut g, &scene).unwrap();
    assert_eq!(g.shape(emb), [1, 64]);
    assert!(g.value(emb).is_finite());
}

#[test]
fn short_history_is_an_input_error() {
    let mut scene = single_lane_scene(vec![constant_velocity_track("A", Vec2::ZERO, Vec2::new(5.0, 0.0))]);
    scene.agents[0].history.truncate(12);
    assert!(matches!(history_inputs(&scene, 0), Err(Error::Input(_))));
    let enc = encoder(tiny_config(Ablation::DirectionStacked), 1);
    assert!(matches!(enc.predict(&scene), Err(Error::Input(_))));
}

#[test]
fn agent_embedding_ignores_other_agents() {
    let scene = two_agent_scene();
    let enc = encoder(tiny_config(Ablation::DirectionStacked), 2);
    let embed = |s: &Scene| {
        let mut g = Graph::with_params(enc.params());
        let v = enc.embed_agents(&mut g, s).unwrap();
        g.value(v).clone()
    };
    let mut swapped = scene.clone();
    swapped.agents.reverse();
    let (a, b) = (embed(&scene), embed(&swapped));
    assert_eq!(a.row(0), b.row(1));
    assert_eq!(a.row(1), b.row(0));
}

#[test]
fn edge_inputs_are_invariant_under_rigid_motion() {
    let scene = generate_synthetic_scene(SceneKind::Curve, 3, 9);
    let moved = transform_scene(&scene, std::f64::consts::FRAC_PI_2, Vec2::new(-31.0, 12.5));
    for agent in 0..scene.agents.len() {
        let a = build_hetero_graph_at(&scene, agent, 30.0).unwrap();
        let b = build_hetero_graph_at(&moved, agent, 30.0).unwrap();
        let (ea, eb) = (edge_inputs(&a, true), edge_inputs(&b, true));
        assert_eq!(ea.shape(), eb.shape());
        let diff = ea.sub(&eb).unwrap().max_abs();
        assert!(diff < 1e-9, "agent {agent}: edge inputs moved by {diff}");
    }
}

#[test]
fn coincident_sources_share_edge_embedding() {
    let scene = two_agent_scene();
    let mut graph = build_hetero_graph_at(&scene, 0, 50.0).unwrap();
    let dup = graph.nodes.len() - 1;
    graph.nodes.push(graph.nodes[dup].clone());
    let mut e = graph.edges[dup];
    e.source = dup + 1;
    graph.edges.push(e);
    let enc = encoder(tiny_config(Ablation::None), 3);
    let mut g = Graph::with_params(enc.params());
    let agents = enc.embed_agents(&mut g, &scene).unwrap();
    let sources = enc.edge_sources(&mut g, &graph, agents).unwrap();
    let s = g.value(sources);
    assert_eq!(s.row(dup), s.row(dup + 1));
}

/// Direct evaluation of multi-head attention from the raw parameter tensors.
fn attention_oracle(
    centre: &[f64],
    sources: &[Vec<f64>],
    wq: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
    heads: usize,
) -> Vec<f64> {
    let project = |x: &[f64], w: &Tensor| -> Vec<f64> {
        (0..w.cols()).map(|c| (0..w.rows()).map(|r| x[r] * w.get(r, c)).sum()).collect()
    };
    let q = project(centre, wq);
    let ks: Vec<Vec<f64>> = sources.iter().map(|s| project(s, wk)).collect();
    let vs: Vec<Vec<f64>> = sources.iter().map(|s| project(s, wv)).collect();
    let d = q.len();
    let dh = d / heads;
    let mut out = vec![0.0; d];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let logits: Vec<f64> =
            ks.iter().map(|k| cols.clone().map(|c| q[c] * k[c]).sum::<f64>() / (dh as f64).sqrt()).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = w.iter().sum();
        for c in cols {
            out[c] = w.iter().zip(&vs).map(|(wi, v)| wi / z * v[c]).sum();
        }
    }
    out
}

struct GroupCase {
    enc: HeteroEncoder,
    scene: Scene,
    graph: keyplan::scene::HeteroGraph,
}

impl GroupCase {
    fn new() -> Self {
        let scene = two_agent_scene();
        let graph = build_hetero_graph_at(&scene, 0, 50.0).unwrap();
        GroupCase { enc: encoder(tiny_config(Ablation::DirectionStacked), 5), scene, graph }
    }

    /// Aggregate of `group` over the listed edges, with the centre vector and source rows.
    fn run(&self, group: usize, edges: &[usize]) -> (Vec<f64>, Vec<f64>, Tensor) {
        let mut g = Graph::with_params(self.enc.params());
        let agents = self.enc.embed_agents(&mut g, &self.scene).unwrap();
        let sources = self.enc.edge_sources(&mut g, &self.graph, agents).unwrap();
        let centre = g.gather_rows(agents, &[0]).unwrap();
        let layer = &self.enc.local_layers()[0];
        let out = self.enc.aggregate_group(&mut g, layer, group, centre, Some(sources), edges).unwrap();
        (g.value(out).row(0).to_vec(), g.value(centre).row(0).to_vec(), g.value(sources).clone())
    }
}

#[test]
fn single_source_group_returns_its_value_projection() {
    let case = GroupCase::new();
    let layer = &case.enc.local_layers()[0];
    let edge = 3;
    let (out, _, sources) = case.run(1, &[edge]);
    let wv = case.enc.params().get(layer.value[1].weight);
    let src = sources.row(edge);
    for (c, o) in out.iter().enumerate() {
        let expect: f64 = (0..wv.rows()).map(|r| src[r] * wv.get(r, c)).sum();
        assert!((o - expect).abs() < 1e-9);
    }
}

#[test]
fn duplicated_source_matches_single_source() {
    let case = GroupCase::new();
    let (one, _, _) = case.run(0, &[4]);
    let (two, _, _) = case.run(0, &[4, 4]);
    for (a, b) in one.iter().zip(&two) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn three_source_group_matches_direct_evaluation() {
    let case = GroupCase::new();
    let layer = &case.enc.local_layers()[0];
    let edges = [1, 6, 11];
    let (out, centre, sources) = case.run(2, &edges);
    let p = case.enc.params();
    let rows: Vec<Vec<f64>> = edges.iter().map(|&e| sources.row(e).to_vec()).collect();
    let expect = attention_oracle(
        &centre,
        &rows,
        p.get(layer.query[2].weight),
        p.get(layer.key[2].weight),
        p.get(layer.value[2].weight),
        2,
    );
    for (a, b) in out.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn empty_group_aggregates_to_zero() {
    let case = GroupCase::new();
    let (out, _, _) = case.run(3, &[]);
    assert!(out.iter().all(|v| *v == 0.0));
}

#[test]
fn zero_aggregates_leave_centre_unchanged() {
    let enc = encoder(tiny_config(Ablation::DirectionStacked), 6);
    let mut g = Graph::with_params(enc.params());
    let centre = g.constant(Tensor::from_vec(1, 8, (0..8).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap());
    let zeros: Vec<_> = (0..4).map(|_| g.constant(Tensor::zeros(1, 8))).collect();
    let (combined, weights) = enc.combine_groups(&mut g, &enc.local_layers()[0], centre, &zeros).unwrap();
    assert_eq!(g.value(combined), g.value(centre));
    assert!((g.value(weights).sum() - 1.0).abs() < 1e-12);
}

#[test]
fn combination_weights_sum_to_one_and_equal_scores_average() {
    let mut enc = encoder(tiny_config(Ablation::DirectionStacked), 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let aggs: Vec<Tensor> = (0..4).map(|_| Tensor::randn(1, 8, 1.0, &mut rng)).collect();
    let centre = Tensor::randn(1, 8, 1.0, &mut rng);
    {
        let mut g = Graph::with_params(enc.params());
        let c = g.constant(centre.clone());
        let a: Vec<_> = aggs.iter().map(|t| g.constant(t.clone())).collect();
        let (_, w) = enc.combine_groups(&mut g, &enc.local_layers()[0], c, &a).unwrap();
        assert!((g.value(w).sum() - 1.0).abs() < 1e-12);
    }
    let score = enc.local_layers()[0].score.weight;
    *enc.params_mut().get_mut(score) = Tensor::zeros(8, 1);
    let mut g = Graph::with_params(enc.params());
    let c = g.constant(centre.clone());
    let a: Vec<_> = aggs.iter().map(|t| g.constant(t.clone())).collect();
    let (combined, _) = enc.combine_groups(&mut g, &enc.local_layers()[0], c, &a).unwrap();
    for col in 0..8 {
        let mean = aggs.iter().map(|t| t.get(0, col)).sum::<f64>() / 4.0;
        assert!((g.value(combined).get(0, col) - centre.get(0, col) - mean).abs() < 1e-12);
    }
}

#[test]
fn ablation_groups_match_structure() {
    let scene = two_agent_scene();
    let graph = build_hetero_graph_at(&scene, 0, 50.0).unwrap();
    for ab in Ablation::ALL {
        let groups = edge_groups(&graph, ab);
        assert_eq!(groups.len(), ab.groups());
        assert_eq!(groups.iter().map(Vec::len).sum::<usize>(), graph.edges.len());
    }
    let by_dir = edge_groups(&graph, Ablation::DirectionStacked);
    for (d, group) in by_dir.iter().enumerate() {
        assert!(group.iter().all(|&e| graph.edges[e].direction.index() == d));
    }
    assert_eq!(edge_inputs(&graph, true).cols(), 8);
    assert_eq!(edge_inputs(&graph, false).cols(), 4);
    for ab in Ablation::ALL {
        assert_eq!(ab.name().parse::<Ablation>().unwrap(), ab);
    }
}

#[test]
fn predictions_are_translation_invariant_and_rotation_equivariant() {
    let scene = generate_synthetic_scene(SceneKind::Intersection, 3, 2);
    let enc = encoder(tiny_config(Ablation::DirectionStacked), 9);
    let base = enc.predict(&scene).unwrap();
    let (angle, shift) = (0.7, Vec2::new(40.0, -25.0));
    let moved = enc.predict(&transform_scene(&scene, angle, shift)).unwrap();
    for (a, b) in base.agents.iter().zip(&moved.agents) {
        for (ma, mb) in a.modes.iter().zip(&b.modes) {
            for (pa, pb) in ma.iter().zip(mb) {
                assert!(transform_point(*pa, angle, shift).distance(*pb) < 1e-8);
            }
        }
        for (x, y) in a.probabilities.iter().zip(&b.probabilities) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn permuting_agents_permutes_predictions() {
    let scene = generate_synthetic_scene(SceneKind::Straight, 3, 5);
    let enc = encoder(tiny_config(Ablation::TypeStacked), 10);
    let base = enc.predict(&scene).unwrap();
    let mut shuffled = scene.clone();
    shuffled.agents.rotate_left(1);
    let moved = enc.predict(&shuffled).unwrap();
    for a in &base.agents {
        let b = moved.agent(&a.agent_id).unwrap();
        for (ma, mb) in a.modes.iter().zip(&b.modes) {
            for (pa, pb) in ma.iter().zip(mb) {
                assert!(pa.distance(*pb) < 1e-9);
            }
        }
    }
}

#[test]
fn single_agent_prediction_is_deterministic() {
    let scene = single_lane_scene(vec![constant_velocity_track("A", Vec2::new(3.0, 0.5), Vec2::new(8.0, 0.0))]);
    let enc = encoder(tiny_config(Ablation::DirectionStacked), 11);
    assert_eq!(enc.predict(&scene).unwrap(), enc.predict(&scene).unwrap());
}

#[test]
fn output_shape_and_probabilities() {
    let scene = two_agent_scene();
    let enc = encoder(EncoderConfig::default(), 12);
    let keys = enc.predict(&scene).unwrap();
    keys.validate().unwrap();
    assert_eq!(keys.agents.len(), 2);
    for a in &keys.agents {
        assert_eq!(a.modes.len(), 6);
        assert!(a.modes.iter().all(|m| m.len() == 2));
        assert!((a.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_offset_head_places_every_mode_at_the_current_position() {
    let scene = two_agent_scene();
    let mut enc = encoder(tiny_config(Ablation::DirectionStacked), 13);
    let ids: Vec<_> = enc.params().ids().filter(|id| enc.params().name(*id).starts_with("offset_head")).collect();
    assert_eq!(ids.len(), 2);
    for id in ids {
        let t = enc.params_mut().get_mut(id);
        *t = Tensor::zeros(t.rows(), t.cols());
    }
    let keys = enc.predict(&scene).unwrap();
    for (a, track) in keys.agents.iter().zip(&scene.agents) {
        assert!(a.modes.iter().flatten().all(|p| *p == track.last_position()));
    }
}

#[test]
fn full_encoder_passes_gradient_check() {
    let scene = two_agent_scene();
    for ab in [Ablation::DirectionStacked, Ablation::TypeStacked] {
        let enc = encoder(tiny_config(ab), 14);
        let (err, id) = param_grad_check(
            |g| {
                let out = enc.forward(g, &scene).map_err(|e| keyplan_tensor::TensorError::Graph(e.to_string()))?;
                let loss = scene_loss(g, enc.config(), &scene, &out)
                    .map_err(|e| keyplan_tensor::TensorError::Graph(e.to_string()))?;
                Ok(loss.total)
            },
            enc.params(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{ab}: worst relative error {err} at {:?}", id.map(|i| enc.params().name(i).to_string()));
    }
}

#[test]
fn loss_decreases_for_ten_epochs_on_a_toy_set() {
    let scenes: Vec<Scene> = (0..10).map(|s| generate_synthetic_scene(SceneKind::ALL[s % 4], 2, s as u64)).collect();
    let config = EncoderConfig { width: 16, ..tiny_config(Ablation::DirectionStacked) };
    let train = EncoderTrainConfig {
        epochs: 10,
        batch_scenes: 10,
        learning_rate: 2e-3,
        final_lr_fraction: 1.0,
        ..Default::default()
    };
    let (_, logs) = train_encoder(&scenes, config, &train, 3).unwrap();
    for w in logs.windows(2) {
        assert!(w[1].loss < w[0].loss, "loss rose from {} to {} at epoch {}", w[0].loss, w[1].loss, w[1].epoch);
    }
}

#[test]
fn identical_seed_gives_identical_parameters() {
    let scenes: Vec<Scene> = (0..3).map(|s| generate_synthetic_scene(SceneKind::Curve, 2, s)).collect();
    let train = EncoderTrainConfig { epochs: 2, batch_scenes: 2, ..Default::default() };
    let (a, la) = train_encoder(&scenes, tiny_config(Ablation::None), &train, 4).unwrap();
    let (b, lb) = train_encoder(&scenes, tiny_config(Ablation::None), &train, 4).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a.params(), b.params());
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enc.json");
    let enc = encoder(tiny_config(Ablation::TypeAttr), 15);
    enc.save(&path).unwrap();
    let back = HeteroEncoder::load(&path, Some(enc.config())).unwrap();
    assert_eq!(back.params(), enc.params());
    let other = EncoderConfig { modes: 3, ..enc.config().clone() };
    assert!(matches!(HeteroEncoder::load(&path, Some(&other)), Err(Error::Checkpoint(_))));
}

#[test]
fn missing_future_is_rejected_by_training() {
    let mut scene = two_agent_scene();
    scene.agents[1].future_gt = None;
    let train = EncoderTrainConfig { epochs: 1, ..Default::default() };
    assert!(matches!(train_encoder(&[scene], tiny_config(Ablation::None), &train, 0), Err(Error::Input(_))));
}

#[test]
fn trained_on_straight_lanes_beats_constant_velocity() {
    let train_set: Vec<Scene> = (0..50).map(|s| generate_synthetic_scene(SceneKind::Straight, 2, s)).collect();
    let test_set: Vec<Scene> = (500..520).map(|s| generate_synthetic_scene(SceneKind::Straight, 2, s)).collect();
    let cfg = EncoderConfig { width: 32, ..Default::default() };
    let train = EncoderTrainConfig { epochs: 100, ..Default::default() };
    let (enc, _) = train_encoder(&train_set, cfg, &train, 21).unwrap();
    let (mut ours, mut cv, mut n) = (0.0, 0.0, 0.0);
    for s in &test_set {
        let keys = enc.predict(s).unwrap();
        for (a, track) in keys.agents.iter().zip(&s.agents) {
            let truth = track.future_positions().unwrap();
            let end = *truth.last().unwrap();
            ours += a.modes.iter().map(|m| m.last().unwrap().distance(end)).fold(f64::INFINITY, f64::min);
            cv += constant_velocity_baseline(track).last().unwrap().distance(end);
            n += 1.0;
        }
    }
    assert!(ours / n < cv / n, "encoder minFDE {} vs constant velocity {}", ours / n, cv / n);
}

#[test]
fn calibration_fixes_off_road_points_only() {
    let scene = single_lane_scene(vec![constant_velocity_track("A", Vec2::ZERO, Vec2::new(5.0, 0.0))]);
    let enc = encoder(tiny_config(Ablation::None), 16);
    let mut keys = enc.predict(&scene).unwrap();
    keys.agents[0].modes[0] = vec![Vec2::new(10.0, 0.0), Vec2::new(20.0, 5.0)];
    keys.agents[0].modes[1] = vec![Vec2::new(-30.0, -9.0), Vec2::new(12.0, 1.0)];
    let fixed = calibrate_key_positions(&keys, &scene);
    assert_eq!(fixed.agents[0].modes[0], vec![Vec2::new(10.0, 0.0), Vec2::new(20.0, 0.0)]);
    assert_eq!(fixed.agents[0].modes[1], vec![Vec2::new(-30.0, 0.0), Vec2::new(12.0, 1.0)]);
    let as_points = PredictionSet::new(
        fixed
            .agents
            .iter()
            .map(|a| AgentPrediction {
                agent_id: a.agent_id.clone(),
                modes: a.modes.clone(),
                probabilities: a.probabilities.clone(),
                ground_truth: None,
            })
            .collect(),
    );
    assert_eq!(dac(&as_points, &scene.drivable_area()).unwrap(), 1.0);
}
