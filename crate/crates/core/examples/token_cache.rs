//! Map tokens are encoded once per scenario and reused at every step; the
//! cached rollout is bit-identical to re-encoding everything.

use instasim::encoder::EncoderConfig;
use instasim::rl::{collect_rollouts, ActionMode, Policy, PolicyConfig, RolloutConfig};
use instasim::scene::{generate_synthetic_scenario, Template, World};

fn main() -> instasim::Result<()> {
    let policy = Policy::new(PolicyConfig::new(EncoderConfig::small(50.0)), 1)?;
    let ws = policy.store.snapshot::<f32>();
    let worlds = vec![World::from_scenario(generate_synthetic_scenario(Template::Merge, 8, 2)?)];
    let cfg = RolloutConfig::new(3, 0, ActionMode::Sample);

    let t = std::time::Instant::now();
    let cached = collect_rollouts(&policy, &ws, &worlds, cfg)?;
    let t_cached = t.elapsed();
    let t = std::time::Instant::now();
    let uncached = collect_rollouts(&policy, &ws, &worlds, RolloutConfig { cache: false, ..cfg })?;
    let t_uncached = t.elapsed();

    let same = cached.experiences.iter().zip(&uncached.experiences).all(|(a, b)| a.raw_action == b.raw_action);
    println!("map polylines N_p = {}", worlds[0].n_polylines());
    println!("cached:   {:?} in {t_cached:.2?}", cached.counters);
    println!("uncached: {:?} in {t_uncached:.2?}", uncached.counters);
    println!("identical actions: {same}");
    Ok(())
}
