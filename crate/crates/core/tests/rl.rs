use instasim::encoder::EncoderConfig;
use instasim::rl::{
    assign_advantages, collect_rollouts, compute_gae, ppo_update, ActionMode, Experience, PPOConfig, Policy, PolicyConfig, PpoLoss,
    PpoTarget, Rollout, RolloutConfig,
};
use instasim::scene::{generate_synthetic_scenario, Template, World};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_force_gae(r: &[f64], v: &[f64], done: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let delta: Vec<f64> =
        (0..n).map(|t| r[t] + if done[t] { 0.0 } else { gamma * v[t + 1] } - v[t]).collect();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            for k in 0..n - t {
                sum += (gamma * lambda).powi(k as i32) * delta[t + k];
                if done[t + k] {
                    break;
                }
            }
            sum
        })
        .collect()
}

proptest! {
    #[test]
    fn gae_matches_the_discounted_delta_sum(
        seq in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, prop::bool::weighted(0.15)), 1..=10),
        last in -10.0f64..10.0,
        gamma in 0.5f64..1.0,
        lambda in 0.0f64..1.0,
    ) {
        let r: Vec<f64> = seq.iter().map(|x| x.0).collect();
        let mut v: Vec<f64> = seq.iter().map(|x| x.1).collect();
        v.push(last);
        let d: Vec<bool> = seq.iter().map(|x| x.2).collect();
        let (adv, ret) = compute_gae(&r, &v, &d, gamma, lambda).unwrap();
        let want = brute_force_gae(&r, &v, &d, gamma, lambda);
        for t in 0..r.len() {
            prop_assert!((adv[t] - want[t]).abs() < 1e-9);
            prop_assert!((ret[t] - adv[t] - v[t]).abs() < 1e-12);
        }
    }
}

#[test]
fn gae_rejects_mismatched_lengths() {
    assert!(compute_gae(&[1.0, 2.0], &[0.0, 0.0], &[false, false], 0.9, 0.9).is_err());
}

fn small_policy(seed: u64) -> Policy {
    let mut cfg = PolicyConfig::new(EncoderConfig { hidden: 32, layers: 1, ..EncoderConfig::small(50.0) });
    cfg.value_scale = 20.0;
    Policy::new(cfg, seed).unwrap()
}

fn worlds(n: u64, agents: usize) -> Vec<World> {
    (0..n).map(|s| World::from_scenario(generate_synthetic_scenario(Template::Intersection, agents, 70 + s).unwrap())).collect()
}

#[test]
fn advantages_are_computed_per_agent_sequence() {
    let policy = small_policy(1);
    let ws = policy.store.snapshot::<f32>();
    let w = worlds(2, 3);
    let mut rollout = collect_rollouts(&policy, &ws, &w, RolloutConfig { bootstrap: true, ..RolloutConfig::new(1, 0, ActionMode::Sample) }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for x in &mut rollout.experiences {
        x.reward = rng.random_range(-1.0..1.0);
    }
    assign_advantages(&mut rollout.experiences, 0.95, 0.9).unwrap();
    for env in 0..2 {
        for agent in 0..3 {
            let seq: Vec<&Experience> = rollout.experiences.iter().filter(|x| x.env == env && x.agent == agent).collect();
            assert!(seq.windows(2).all(|p| p[1].step == p[0].step + 1));
            let last = seq.last().unwrap();
            let mut values: Vec<f64> = seq.iter().map(|x| x.value).collect();
            values.push(if last.done { 0.0 } else { last.bootstrap.unwrap_or(0.0) });
            let rewards: Vec<f64> = seq.iter().map(|x| x.reward).collect();
            let dones: Vec<bool> = seq.iter().map(|x| x.done).collect();
            let (adv, _) = compute_gae(&rewards, &values, &dones, 0.95, 0.9).unwrap();
            for (x, a) in seq.iter().zip(adv) {
                assert_eq!(x.advantage, a);
            }
            // Only the final experience of a sequence can end it.
            assert!(seq[..seq.len() - 1].iter().all(|x| !x.done && x.bootstrap.is_none()));
            assert!(last.done || last.bootstrap.is_some());
        }
    }
}

fn fingerprint(r: &Rollout) -> Vec<(usize, usize, usize, [u64; 2], u64)> {
    r.experiences.iter().map(|x| (x.env, x.step, x.agent, x.raw_action.map(f64::to_bits), x.value.to_bits())).collect()
}

#[test]
fn rollouts_are_reproducible_and_thread_count_independent() {
    let policy = small_policy(2);
    let ws = policy.store.snapshot::<f32>();
    let w = worlds(3, 4);
    let cfg = RolloutConfig::new(5, 7, ActionMode::Sample);
    let run = |threads: usize, cfg: RolloutConfig| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| collect_rollouts(&policy, &ws, &w, cfg).unwrap())
    };
    let a = run(1, cfg);
    let b = run(3, cfg);
    assert_eq!(fingerprint(&a), fingerprint(&b));
    let c = run(1, RolloutConfig { seed: 6, ..cfg });
    assert_ne!(fingerprint(&a), fingerprint(&c));
    // Environment streams do not depend on which other envs are present.
    let solo = collect_rollouts(&policy, &ws, &w[..1], cfg).unwrap();
    let first: Vec<_> = fingerprint(&a).into_iter().filter(|x| x.0 == 0).collect();
    assert_eq!(fingerprint(&solo), first);
}

#[test]
fn rollout_counts_match_alive_agents() {
    let policy = small_policy(3);
    let ws = policy.store.snapshot::<f32>();
    let w = worlds(2, 5);
    let r = collect_rollouts(&policy, &ws, &w, RolloutConfig::new(1, 0, ActionMode::Sample)).unwrap();
    let mut expected = 0;
    for (e, traj) in r.states.iter().enumerate() {
        assert!(traj.len() <= w[e].horizon() + 1);
        for s in &traj[..traj.len() - 1] {
            expected += s.iter().filter(|a| a.alive).count();
        }
        let ended = r.events[e].len();
        let alive_at_end = traj.last().unwrap().iter().filter(|a| a.alive).count();
        assert_eq!(ended + alive_at_end, 5);
    }
    assert_eq!(r.experiences.len(), expected);
    assert_eq!(r.counters.agent_encodings as usize, expected);
    assert_eq!(r.counters.polyline_encodings as usize, w.iter().map(World::n_polylines).sum::<usize>());
}

#[test]
fn mean_mode_is_deterministic_and_seed_free() {
    let policy = small_policy(4);
    let ws = policy.store.snapshot::<f32>();
    let w = worlds(1, 3);
    let a = collect_rollouts(&policy, &ws, &w, RolloutConfig::new(1, 0, ActionMode::Mean)).unwrap();
    let b = collect_rollouts(&policy, &ws, &w, RolloutConfig::new(2, 9, ActionMode::Mean)).unwrap();
    assert_eq!(fingerprint(&a), fingerprint(&b));
}

fn surrogate(policy: &Policy, w: &[World], r: &Rollout, targets: &[PpoTarget]) -> f64 {
    let (frames, offsets) = r.frames(w);
    let samples: Vec<_> = (0..r.experiences.len()).map(|i| r.sample(&offsets, i)).collect();
    let loss = PpoLoss::new(policy, targets, 1e9, 0.0, 0.0);
    -policy.batch_loss(&policy.store.snapshot::<f32>(), &frames, &samples, &loss, None, true).unwrap()
}

#[test]
fn one_ppo_step_increases_the_surrogate() {
    let mut policy = small_policy(5);
    let ws = policy.store.snapshot::<f32>();
    let w = worlds(2, 4);
    let mut r = collect_rollouts(&policy, &ws, &w, RolloutConfig::new(3, 0, ActionMode::Sample)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for x in &mut r.experiences {
        // Reward braking: advantages correlate with the sampled action.
        x.advantage = -x.raw_action[0] + rng.random_range(-0.1..0.1);
        x.ret = x.value;
    }
    let mut adv: Vec<f64> = r.experiences.iter().map(|x| x.advantage).collect();
    instasim::rl::normalize_advantages(&mut adv);
    let targets: Vec<PpoTarget> = r
        .experiences
        .iter()
        .zip(&adv)
        .map(|(x, &a)| PpoTarget { action: x.raw_action, old_log_prob: x.log_prob, advantage: a, ret: x.ret })
        .collect();
    let before = surrogate(&policy, &w, &r, &targets);
    let cfg = PPOConfig { epochs_per_batch: 1, minibatch: 4096, value_coef: 0.0, weight_decay: 0.0, ..PPOConfig::default() };
    let stats = ppo_update(&mut policy, &w, &r, &cfg, 1e-3, 0, true).unwrap();
    assert_eq!(stats.updates, 1);
    assert!(stats.initial_ratio_dev < 1e-5, "{}", stats.initial_ratio_dev);
    let after = surrogate(&policy, &w, &r, &targets);
    assert!(after > before, "{before} -> {after}");
}
