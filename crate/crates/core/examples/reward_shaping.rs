//! Surrogate reward from discriminator outputs and the adaptive offset that
//! pins each epoch's mean reward to a target.

use instasim::airl::{adaptive_offset, sigmoid, surrogate_reward, RewardMode, RewardTransform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> instasim::Result<()> {
    for d in [1e-9, 0.1, 0.5, 0.9, 1.0] {
        println!("D = {d:<6} -> r = {:+.4}", surrogate_reward(d));
    }
    println!("r(sigmoid(3.2)) = {:.6}", surrogate_reward(sigmoid(3.2)));

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let logits = Normal::new(-2.0, 1.5).unwrap();
    for epoch in 0..3 {
        let raw: Vec<f64> = (0..500).map(|_| surrogate_reward(sigmoid(logits.sample(&mut rng) + epoch as f64))).collect();
        for mode in [RewardMode::Adaptive(11.0), RewardMode::Constant(5.0)] {
            let (t, shaped) = RewardTransform::fit(mode, &raw)?;
            let mean = shaped.iter().sum::<f64>() / shaped.len() as f64;
            println!(
                "epoch {epoch} {mode:<14} raw mean {:+.3} offset {:+.3} shaped mean {:+.3}",
                t.running_mean, t.offset, mean
            );
        }
    }
    println!("c for target 11 and mean -3: {}", adaptive_offset(11.0, &[-3.0])?);
    Ok(())
}
