use std::sync::Arc;

use keyplan::env::{ground_truth_goals, Dynamics, EnvConfig, LaneContext, SubScene, MOTION_FEATURES};
use keyplan::error::Error;
use keyplan::ppo::{
    compute_gae, normalize, ppo_loss, rollout_predict, run_episode, train, ActionMode, PolicyArch, PolicyConfig,
    PolicyNet, PpoConfig, RolloutBuffer, Transition, LOG_STD_MAX,
};
use keyplan::scene::{generate_speed_change_scene, generate_synthetic_scene, SceneKind};
use keyplan_tensor::check::param_grad_check;
use keyplan_tensor::{Graph, Tensor, TensorError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Advantage as a direct sum of discounted residuals up to the segment end.
fn brute_force_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let next_value = |t: usize| {
        if dones[t] {
            0.0
        } else if t + 1 < n {
            values[t + 1]
        } else {
            bootstrap
        }
    };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            let mut weight = 1.0;
            for k in t..n {
                total += weight * (rewards[k] + gamma * next_value(k) - values[k]);
                if dones[k] {
                    break;
                }
                weight *= gamma * lambda;
            }
            total
        })
        .collect()
}

fn tiny_policy(arch: PolicyArch) -> PolicyConfig {
    PolicyConfig { arch, width: 8, heads: 2, encoder_layers: 1, decoder_layers: 1, ..PolicyConfig::default() }
}

fn net(config: PolicyConfig, env: &EnvConfig, seed: u64) -> PolicyNet {
    PolicyNet::new(config, env, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn task(seed: u64, env: &EnvConfig) -> Arc<SubScene> {
    let scene = generate_speed_change_scene(seed);
    let goals = ground_truth_goals(&scene, 0, &[1.5, 3.0]).unwrap();
    Arc::new(SubScene::new(&scene, Arc::new(scene.drivable_area()), &[(0, goals)], env).unwrap())
}

fn two_agent_subscene(env: &EnvConfig) -> Arc<SubScene> {
    let scene = generate_synthetic_scene(SceneKind::Straight, 2, 4);
    let schedules: Vec<_> = (0..2).map(|i| (i, ground_truth_goals(&scene, i, &[1.5, 3.0]).unwrap())).collect();
    Arc::new(SubScene::new(&scene, Arc::new(scene.drivable_area()), &schedules, env).unwrap())
}

/// Sampled transitions from a few episodes.
fn transitions(policy: &PolicyNet, env: &EnvConfig, seed: u64) -> Vec<Transition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for s in 0..2 {
        let ep = run_episode(policy, env, &task(s, env), ActionMode::Sample(&mut rng), 1.0).unwrap();
        out.extend(ep.segments.into_iter().flatten());
    }
    out
}

fn as_graph_error(e: Error) -> TensorError {
    TensorError::Graph(e.to_string())
}

#[test]
fn single_terminal_transition() {
    let (adv, ret) = compute_gae(&[2.0], &[0.5], &[true], 9.0, 0.95, 0.97).unwrap();
    assert_eq!(adv, vec![1.5]);
    assert_eq!(ret, vec![2.0]);
}

#[test]
fn undiscounted_zero_values_give_return_to_go() {
    let rewards = [1.0, -2.0, 0.5, 3.0, 1.0, 4.0];
    let dones = [false, false, true, false, false, true];
    let (adv, _) = compute_gae(&rewards, &[0.0; 6], &dones, 0.0, 1.0, 1.0).unwrap();
    assert_eq!(adv, vec![-0.5, -1.5, 0.5, 8.0, 5.0, 4.0]);
}

#[test]
fn misaligned_inputs_are_a_contract_error() {
    let err = compute_gae(&[1.0, 2.0], &[0.0], &[true, true], 0.0, 0.9, 0.9).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn random_episode_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let rewards: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let values: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut dones = vec![false; 10];
    dones[9] = true;
    let (adv, ret) = compute_gae(&rewards, &values, &dones, 0.0, 0.95, 0.97).unwrap();
    let oracle = brute_force_gae(&rewards, &values, &dones, 0.0, 0.95, 0.97);
    for t in 0..10 {
        assert!((adv[t] - oracle[t]).abs() < 1e-10);
        assert!((ret[t] - (oracle[t] + values[t])).abs() < 1e-10);
    }
}

#[test]
fn normalised_advantages_have_unit_moments() {
    let mut v = vec![1.0, 4.0, -2.0, 7.0, 0.5];
    normalize(&mut v);
    let mean = v.iter().sum::<f64>() / 5.0;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
    assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    let mut flat = vec![3.0; 4];
    normalize(&mut flat);
    assert_eq!(flat, vec![0.0; 4]);
}

#[test]
fn buffer_accepts_only_complete_segments() {
    let env = EnvConfig::default();
    let policy = net(tiny_policy(PolicyArch::Transformer), &env, 1);
    let ts = transitions(&policy, &env, 2);
    let end = ts.iter().position(|t| t.done).unwrap();
    let mut buffer = RolloutBuffer::new(end + 1);
    assert!(matches!(buffer.push_segment(ts[..end].to_vec()).unwrap_err(), Error::Contract(_)));
    buffer.push_segment(ts[..=end].to_vec()).unwrap();
    assert!(buffer.is_full());
    assert!(matches!(buffer.push_segment(ts[..=end].to_vec()).unwrap_err(), Error::Contract(_)));
    buffer.finish(0.95, 0.97).unwrap();
    let adv = buffer.advantages();
    assert_eq!(adv.len(), end + 1);
    assert!((adv.iter().sum::<f64>() / adv.len() as f64).abs() < 1e-12);
    buffer.clear();
    assert!(buffer.is_empty() && buffer.advantages().is_empty());
}

#[test]
fn identical_observations_give_identical_outputs() {
    let env = EnvConfig::default();
    let policy = net(PolicyConfig::default(), &env, 2);
    let sub = task(0, &env);
    let motion = [[5.0, 0.1, 0.02, 0.0, 10.0, 0.3, 1.5, 0.0, 20.0, 0.0]];
    let a = policy.evaluate(&sub.lanes, None, &motion).unwrap();
    let memory = policy.lane_memory(&sub.lanes).unwrap();
    let b = policy.evaluate(&sub.lanes, memory.as_ref(), &motion).unwrap();
    let c = policy.evaluate(&sub.lanes, memory.as_ref(), &motion).unwrap();
    assert_eq!(b, c);
    // Without memory the decoder skips cross-attention, so the outputs differ.
    assert_ne!(a, b);
}

#[test]
fn lane_token_order_is_irrelevant() {
    let env = EnvConfig::default();
    let sub = task(3, &env);
    let mut shuffled: LaneContext = (*sub.lanes).clone();
    shuffled.tokens.reverse();
    shuffled.tokens.swap(0, 5);
    let motion =
        [[6.0, 0.0, 0.0, 0.0, 9.0, 0.1, 1.5, 0.0, 30.0, 0.0], [4.0, -1.0, 0.1, 0.2, 2.0, -0.4, 0.5, 0.1, 35.0, 1.0]];
    for arch in [PolicyArch::Transformer, PolicyArch::Mlp] {
        let policy = net(PolicyConfig { arch, ..PolicyConfig::default() }, &env, 5);
        let run = |lanes: &LaneContext| {
            let mem = policy.lane_memory(lanes).unwrap();
            policy.evaluate(lanes, mem.as_ref(), &motion).unwrap()
        };
        for (x, y) in run(&sub.lanes).iter().zip(run(&shuffled)) {
            for d in 0..2 {
                assert!((x.mean[d] - y.mean[d]).abs() < 1e-10);
            }
            assert!((x.value - y.value).abs() < 1e-10);
        }
    }
}

#[test]
fn empty_lane_context_still_produces_actions() {
    let env = EnvConfig::default();
    let sub = task(0, &env);
    let empty = LaneContext { tokens: Vec::new(), ..(*sub.lanes).clone() };
    for arch in [PolicyArch::Transformer, PolicyArch::Mlp] {
        let policy = net(PolicyConfig { arch, ..PolicyConfig::default() }, &env, 6);
        let mem = policy.lane_memory(&empty).unwrap();
        assert!(mem.is_none());
        let out = policy.evaluate(&empty, None, &[[5.0; MOTION_FEATURES]]).unwrap();
        assert!(out[0].mean.iter().chain(&out[0].std).all(|v| v.is_finite()) && out[0].value.is_finite());
    }
}

#[test]
fn log_std_is_clamped() {
    let env = EnvConfig::default();
    let mut policy = net(PolicyConfig::default(), &env, 7);
    let id = policy.params().ids().find(|id| policy.params().name(*id) == "log_std").unwrap();
    *policy.params_mut().get_mut(id) = Tensor::full(1, 2, 10.0);
    let sub = task(0, &env);
    let out = policy.evaluate(&sub.lanes, None, &[[5.0; MOTION_FEATURES]]).unwrap();
    assert_eq!(out[0].std, [LOG_STD_MAX.exp(); 2]);
}

#[test]
fn policy_loss_passes_gradient_check() {
    let env = EnvConfig::default();
    let config = PpoConfig::default();
    for arch in [PolicyArch::Transformer, PolicyArch::Mlp] {
        let policy = net(tiny_policy(arch), &env, 8);
        let mut ts = transitions(&policy, &env, 9);
        ts.truncate(40);
        // Spread the ratios so both sides of the clip range are exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for t in &mut ts {
            t.log_prob += rng.random_range(-0.5..0.5);
        }
        let batch: Vec<&Transition> = ts.iter().collect();
        let adv: Vec<f64> = (0..ts.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ret: Vec<f64> = (0..ts.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (err, id) = param_grad_check(
            |g| Ok(ppo_loss(g, &policy, &batch, &adv, &ret, &config).map_err(as_graph_error)?.total),
            policy.params(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{arch:?}: relative error {err} at {:?}", id.map(|i| policy.params().name(i).to_string()));
    }
}

#[test]
fn frozen_policy_reproduces_stored_log_probs() {
    let env = EnvConfig::default();
    let policy = net(PolicyConfig::default(), &env, 11);
    let ts = transitions(&policy, &env, 12);
    let batch: Vec<&Transition> = ts.iter().collect();
    let zeros = vec![0.0; ts.len()];
    let mut g = Graph::with_params(policy.params());
    let loss = ppo_loss(&mut g, &policy, &batch, &zeros, &zeros, &PpoConfig::default()).unwrap();
    for r in g.value(loss.ratio).data() {
        assert!((r - 1.0).abs() < 1e-10, "ratio {r}");
    }
}

#[test]
fn unit_ratio_gives_the_vanilla_policy_gradient() {
    let env = EnvConfig::default();
    let policy = net(tiny_policy(PolicyArch::Transformer), &env, 13);
    let ts = transitions(&policy, &env, 14);
    let batch: Vec<&Transition> = ts.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let adv: Vec<f64> = (0..ts.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let zeros = vec![0.0; ts.len()];
    let config = PpoConfig { value_coef: 0.0, entropy_coef: 0.0, ..PpoConfig::default() };
    let clipped = {
        let mut g = Graph::with_params(policy.params());
        let loss = ppo_loss(&mut g, &policy, &batch, &adv, &zeros, &config).unwrap();
        g.backward(loss.policy).unwrap().param_grads()
    };
    let vanilla = {
        let mut g = Graph::with_params(policy.params());
        // Every transition here shares one lane context per episode; keep the batch order.
        let mut groups: Vec<(Arc<LaneContext>, Vec<[f64; MOTION_FEATURES]>)> = Vec::new();
        for t in &ts {
            match groups.last_mut() {
                Some((lanes, rows)) if Arc::ptr_eq(lanes, &t.lanes) => rows.push(t.motion),
                _ => groups.push((t.lanes.clone(), vec![t.motion])),
            }
        }
        let inputs: Vec<_> = groups.iter().map(|(l, m)| (&**l, m.as_slice())).collect();
        let out = policy.forward(&mut g, &inputs).unwrap();
        let actions = g.constant(Tensor::from_vec(ts.len(), 2, ts.iter().flat_map(|t| t.action).collect()).unwrap());
        let log_prob = g.gaussian_log_prob(actions, out.mean, out.log_std).unwrap();
        let a = g.constant(Tensor::column_vector(&adv));
        let weighted = g.mul(log_prob, a).unwrap();
        let mean = g.mean(weighted);
        let loss = g.neg(mean);
        g.backward(loss).unwrap().param_grads()
    };
    for id in policy.params().ids() {
        let (x, y) = (clipped.get(id), vanilla.get(id));
        match (x, y) {
            (Some(x), Some(y)) => {
                for (p, q) in x.data().iter().zip(y.data()) {
                    assert!((p - q).abs() <= 1e-9 * (1.0 + q.abs()), "{}: {p} vs {q}", policy.params().name(id));
                }
            }
            (None, None) => {}
            _ => panic!("gradient present in only one loss for {}", policy.params().name(id)),
        }
    }
}

#[test]
fn clipped_term_uses_the_bound() {
    let env = EnvConfig::default();
    let policy = net(tiny_policy(PolicyArch::Transformer), &env, 16);
    let mut ts = transitions(&policy, &env, 17);
    ts.truncate(3);
    for t in &mut ts {
        t.log_prob -= 1.5f64.ln();
    }
    let batch: Vec<&Transition> = ts.iter().collect();
    let adv = vec![2.0, 0.5, -1.0];
    let zeros = vec![0.0; 3];
    let mut g = Graph::with_params(policy.params());
    let loss = ppo_loss(&mut g, &policy, &batch, &adv, &zeros, &PpoConfig::default()).unwrap();
    let ratio = g.value(loss.ratio).data().to_vec();
    let clipped = g.value(loss.clipped).data().to_vec();
    let unclipped = g.value(loss.unclipped).data().to_vec();
    for i in 0..3 {
        assert!((ratio[i] - 1.5).abs() < 1e-9);
        assert!((clipped[i] - 1.2 * adv[i]).abs() < 1e-9);
        assert!(clipped[i].min(unclipped[i]) <= unclipped[i]);
    }
    // Positive advantages take the clipped branch; negative ones keep the ratio.
    let surrogate: Vec<f64> = (0..3).map(|i| clipped[i].min(unclipped[i])).collect();
    assert_eq!(surrogate[0], clipped[0]);
    assert_eq!(surrogate[2], unclipped[2]);
}

#[test]
fn clipped_surrogate_never_exceeds_unclipped() {
    let env = EnvConfig::default();
    let policy = net(tiny_policy(PolicyArch::Mlp), &env, 18);
    let mut ts = transitions(&policy, &env, 19);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for t in &mut ts {
        t.log_prob += rng.random_range(-1.0..1.0);
    }
    let batch: Vec<&Transition> = ts.iter().collect();
    let adv: Vec<f64> = (0..ts.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut g = Graph::with_params(policy.params());
    let loss = ppo_loss(&mut g, &policy, &batch, &adv, &adv, &PpoConfig::default()).unwrap();
    let c = g.value(loss.clipped).data().to_vec();
    let u = g.value(loss.unclipped).data().to_vec();
    let surrogate = -g.value(loss.policy).item();
    let mean_min = c.iter().zip(&u).map(|(a, b)| a.min(*b)).sum::<f64>() / c.len() as f64;
    assert!((surrogate - mean_min).abs() < 1e-12);
    assert!(mean_min <= u.iter().sum::<f64>() / u.len() as f64 + 1e-12);
}

fn small_ppo() -> PpoConfig {
    PpoConfig { rollout: 256, minibatch: 256, epochs: 4, learning_rate: 3e-4, ..PpoConfig::default() }
}

fn pool_source(env: &EnvConfig, n: u64) -> impl FnMut(&mut ChaCha8Rng) -> keyplan::error::Result<Arc<SubScene>> {
    let pool: Vec<_> = (0..n).map(|s| task(s, env)).collect();
    move |rng| Ok(pool[rng.random_range(0..pool.len())].clone())
}

#[test]
fn zero_updates_leave_the_network_unchanged() {
    let env = EnvConfig::default();
    let mut policy = net(tiny_policy(PolicyArch::Transformer), &env, 22);
    let before = policy.params().clone();
    let logs = train(&mut policy, &env, &small_ppo(), 0, 1, &mut pool_source(&env, 4)).unwrap();
    assert!(logs.is_empty());
    assert_eq!(policy.params(), &before);
}

#[test]
fn training_is_deterministic() {
    let env = EnvConfig::default();
    let run = || {
        let mut policy = net(tiny_policy(PolicyArch::Transformer), &env, 23);
        let logs = train(&mut policy, &env, &small_ppo(), 3, 4, &mut pool_source(&env, 4)).unwrap();
        (logs, policy.params().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn value_error_and_return_improve_on_the_toy_task() {
    let env = EnvConfig::default();
    let mut policy = net(PolicyConfig { width: 32, ..PolicyConfig::default() }, &env, 24);
    let config = PpoConfig { learning_rate: 3e-4, ..PpoConfig::default() };
    let logs = train(&mut policy, &env, &config, 40, 5, &mut pool_source(&env, 16)).unwrap();
    let mean = |f: &dyn Fn(&keyplan::ppo::UpdateLog) -> f64, r: std::ops::Range<usize>| {
        logs[r.clone()].iter().map(f).sum::<f64>() / r.len() as f64
    };
    let value_start = mean(&|l| l.value_loss, 0..5);
    let value_end = mean(&|l| l.value_loss, 15..20);
    assert!(value_end < value_start, "value loss {value_start} -> {value_end}");
    let return_start = mean(&|l| l.mean_return, 0..5);
    let return_end = mean(&|l| l.mean_return, 35..40);
    assert!(return_end > return_start, "mean return {return_start} -> {return_end}");
}

#[test]
fn deterministic_rollouts_repeat_and_respect_limits() {
    let env = EnvConfig::default();
    let policy = net(PolicyConfig::default(), &env, 25);
    let sub = two_agent_subscene(&env);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = rollout_predict(&policy, &env, &sub, true, &mut rng).unwrap();
    let b = rollout_predict(&policy, &env, &sub, true, &mut rng).unwrap();
    assert_eq!(a, b);
    let sampled = rollout_predict(&policy, &env, &sub, false, &mut rng).unwrap();
    assert_ne!(a, sampled);
    let limits = env.limits;
    for (plan, member) in sampled.iter().zip(&sub.members) {
        assert_eq!(plan.positions.len(), 30);
        let mut prev = member.start;
        for s in &plan.states {
            assert!((s.steer - prev.steer).abs() <= limits.max_steer_delta + 1e-12);
            assert!((s.speed - prev.speed).abs() <= limits.max_speed_delta + 1e-12);
            assert!(s.steer.abs() <= limits.max_steer && (0.0..=limits.max_speed).contains(&s.speed));
            prev = *s;
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    let env = EnvConfig::default();
    let config = tiny_policy(PolicyArch::Transformer);
    let policy = net(config, &env, 26);
    policy.save(&path).unwrap();
    let loaded = PolicyNet::load(&path, &config, &env).unwrap();
    assert_eq!(loaded.params(), policy.params());
    let other = PolicyConfig { width: 16, ..config };
    assert!(matches!(PolicyNet::load(&path, &other, &env).unwrap_err(), Error::Checkpoint(_)));
    let positional = EnvConfig { dynamics: Dynamics::Positional, ..env };
    assert!(matches!(PolicyNet::load(&path, &config, &positional).unwrap_err(), Error::Checkpoint(_)));
}

proptest! {
    #[test]
    fn gae_matches_direct_sum(
        steps in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, prop::bool::weighted(0.2)), 1..40),
        bootstrap in -3.0f64..3.0,
        gamma in 0.5f64..=1.0,
        lambda in 0.5f64..=1.0,
    ) {
        let rewards: Vec<f64> = steps.iter().map(|s| s.0).collect();
        let values: Vec<f64> = steps.iter().map(|s| s.1).collect();
        let dones: Vec<bool> = steps.iter().map(|s| s.2).collect();
        let (adv, ret) = compute_gae(&rewards, &values, &dones, bootstrap, gamma, lambda).unwrap();
        let oracle = brute_force_gae(&rewards, &values, &dones, bootstrap, gamma, lambda);
        for t in 0..rewards.len() {
            prop_assert!((adv[t] - oracle[t]).abs() < 1e-10);
            prop_assert!((ret[t] - adv[t] - values[t]).abs() < 1e-12);
        }
    }
}
