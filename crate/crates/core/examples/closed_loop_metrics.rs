//! RMSE, off-track and collision rates of the constant-velocity baseline,
//! the replayed expert and an untrained policy on the same scenarios.

use instasim::dynamics::Action;
use instasim::eval::{cv_baseline, evaluate_policy, metrics, simulate};
use instasim::rl::{Policy, TrainConfig};
use instasim::scene::{generate_synthetic_scenario, Template, World};

fn main() -> instasim::Result<()> {
    for template in Template::ALL {
        let worlds: Vec<World> = (0..10)
            .map(|i| Ok(World::from_scenario(generate_synthetic_scenario(template, 4, 40 + i)?)))
            .collect::<instasim::Result<_>>()?;
        let cv = metrics(&worlds.iter().map(cv_baseline).collect::<instasim::Result<Vec<_>>>()?)?;
        let replay = worlds
            .iter()
            .map(|w| {
                simulate(w, |t, states| {
                    Ok((0..states.len())
                        .filter(|&i| states[i].alive)
                        .map(|i| w.scenario.expert[i].actions.get(t).copied().unwrap_or(Action::ZERO))
                        .collect())
                })
            })
            .collect::<instasim::Result<Vec<_>>>()?;
        let expert = metrics(&replay)?;
        let policy = Policy::new(TrainConfig::default().policy_config(), 0)?;
        let untrained = evaluate_policy(&policy, &worlds)?;
        println!("{template}");
        for (name, m) in [("constant velocity", cv), ("expert replay", expert), ("untrained policy", untrained)] {
            println!(
                "  {name:<18} rmse {:>6.2} m  off-track {:.3}  collision {:.3}",
                m.rmse, m.offtrack_rate, m.collision_rate
            );
        }
    }
    Ok(())
}
