//! Short AIRL training run on the straight template, with checkpointing,
//! model selection and a closed-loop comparison against constant velocity.
//!
//! cargo run --release --example train_airl -- [epochs] [out_dir]
//! Re-running with the same out_dir resumes from the latest checkpoint.

use std::path::PathBuf;

use instasim::eval::{evaluate_cv, evaluate_policy};
use instasim::rl::{list_checkpoints, select_checkpoint, train, TrainConfig};
use instasim::scene::{generate_synthetic_scenario, Template, World};

fn scenarios(n: u64, seed: u64) -> instasim::Result<Vec<World>> {
    (0..n).map(|i| Ok(World::from_scenario(generate_synthetic_scenario(Template::Straight, 4, seed + i)?))).collect()
}

fn main() -> instasim::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example_airl".into()));
    let train_worlds = scenarios(20, 1_000)?;
    let val_worlds = scenarios(10, 500_000)?;

    let cfg = TrainConfig { epochs, checkpoint_every: 10, ..TrainConfig::default() };
    let outcome = train(&cfg, &train_worlds, Some(&out))?;
    for r in outcome.records.iter().filter(|r| r.epoch % 5 == 0 || r.epoch + 1 == epochs) {
        println!(
            "epoch {:>4}  disc acc {:.2}  raw reward {:+.2}  offset {:+.2}  collisions {:.2}  off-track {:.2}  std [{:.2}, {:.3}]",
            r.epoch, r.disc_acc, r.r_mean_raw, r.offset, r.collision_rate, r.offtrack_rate, r.policy_std[0], r.policy_std[1]
        );
    }

    let paths: Vec<PathBuf> = list_checkpoints(&out)?.into_iter().map(|(_, p)| p).collect();
    if !paths.is_empty() {
        let (best, reports) = select_checkpoint(&paths, &val_worlds)?;
        for (p, m) in paths.iter().zip(&reports) {
            println!("{}  score {:.3}", p.display(), m.selection_score());
        }
        println!("selected {}", paths[best].display());
    }

    let m = evaluate_policy(&outcome.policy, &val_worlds)?;
    let cv = evaluate_cv(&val_worlds)?;
    println!("final policy:      rmse {:.2} m  off-track {:.3}  collision {:.3}", m.rmse, m.offtrack_rate, m.collision_rate);
    println!("constant velocity: rmse {:.2} m  off-track {:.3}  collision {:.3}", cv.rmse, cv.offtrack_rate, cv.collision_rate);
    Ok(())
}
