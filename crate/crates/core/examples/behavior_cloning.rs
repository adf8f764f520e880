//! Behavior cloning of the scripted expert and its closed-loop evaluation.
//!
//! cargo run --release --example behavior_cloning -- [steps]

use instasim::eval::evaluate_policy;
use instasim::rl::{train_bc, TrainConfig};
use instasim::scene::{generate_synthetic_scenario, Template, World};

fn main() -> instasim::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let worlds: Vec<World> = (0..20)
        .map(|i| Ok(World::from_scenario(generate_synthetic_scenario(Template::Straight, 4, 1_000 + i)?)))
        .collect::<instasim::Result<_>>()?;
    let held_out: Vec<World> = (0..10)
        .map(|i| Ok(World::from_scenario(generate_synthetic_scenario(Template::Straight, 4, 500_000 + i)?)))
        .collect::<instasim::Result<_>>()?;
    let cfg = TrainConfig { bc_steps: steps, ..TrainConfig::default() };
    let (policy, losses) = train_bc(&cfg, &worlds, None)?;
    for (i, l) in losses.iter().enumerate().filter(|(i, _)| i % 20 == 0) {
        println!("step {i:>4}  nll {l:+.3}");
    }
    let m = evaluate_policy(&policy, &held_out)?;
    println!(
        "closed loop: rmse {:.2} m  off-track {:.3}  collision {:.3}  selection score {:.2}",
        m.rmse,
        m.offtrack_rate,
        m.collision_rate,
        m.selection_score()
    );
    Ok(())
}
