//! Instance-steps per second and the encoder-scaling comparison against
//! agent-centric re-encoding.
//!
//! cargo run --release --example throughput -- [reps]

use instasim::encoder::AgentCentricEncoder;
use instasim::eval::{fixed_map_scenes, isps_benchmark, latency_slope, scaling_report};
use instasim::nn::ParamStore;
use instasim::rl::{Policy, TrainConfig};
use instasim::scene::{generate_synthetic_scenario, Template, World};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> instasim::Result<()> {
    let reps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let policy = Policy::new(TrainConfig::default().policy_config(), 0)?;

    for n_envs in [1, 4] {
        let worlds: Vec<World> = (0..n_envs)
            .map(|i| Ok(World::from_scenario(generate_synthetic_scenario(Template::Intersection, 8, i)?)))
            .collect::<instasim::Result<_>>()?;
        let r = isps_benchmark(&policy, &worlds, reps, 1)?;
        println!(
            "{n_envs} env(s) x 8 agents: {:.0} instance-steps/s, first step {:.2} ms, later steps {:.2} ms",
            r.isps,
            r.initial_step_latency_s * 1e3,
            r.subsequent_step_latency_s * 1e3
        );
    }

    let mut store = ParamStore::new();
    let reference = AgentCentricEncoder::new(&mut store, "agent_centric", policy.cfg.encoder, &mut ChaCha8Rng::seed_from_u64(1))?;
    let ref_ws = store.snapshot::<f32>();
    // One map for all agent counts.
    let worlds = fixed_map_scenes(Template::Intersection, &[1, 8, 32], 0)?;
    let rows = scaling_report(&policy, Some((&reference, &ref_ws)), &worlds, reps, 1)?;
    for r in &rows {
        println!(
            "N_a {:>3}: polyline encodings instance-centric {:>5} (N_p = {}), agent-centric {:>6}; step latency {:.2} ms vs {:.2} ms",
            r.n_agents,
            r.ic_counts.polyline_encodings,
            r.n_polylines,
            r.ac_counts.map_or(0, |c| c.polyline_encodings),
            r.ic_step_latency_s * 1e3,
            r.ac_step_latency_s.unwrap_or(f64::NAN) * 1e3
        );
    }
    println!(
        "latency slope per agent: instance-centric {:.3} ms, agent-centric {:.3} ms",
        latency_slope(&rows, |r| Some(r.ic_step_latency_s)).unwrap_or(f64::NAN) * 1e3,
        latency_slope(&rows, |r| r.ac_step_latency_s).unwrap_or(f64::NAN) * 1e3
    );
    Ok(())
}
