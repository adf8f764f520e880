//! Generalized advantage estimation on a short reward sequence, compared
//! with the explicit discounted sum of TD errors.

use instasim::rl::{compute_gae, normalize_advantages};

fn main() -> instasim::Result<()> {
    let (gamma, lambda) = (0.95, 0.95);
    let rewards = [1.0, 0.5, -0.2, 2.0, 0.0];
    let values = [3.0, 2.5, 2.8, 1.0, 0.4, 0.9];
    for done_last in [false, true] {
        let mut dones = [false; 5];
        dones[4] = done_last;
        let (adv, ret) = compute_gae(&rewards, &values, &dones, gamma, lambda)?;
        let delta: Vec<f64> = (0..5)
            .map(|t| rewards[t] + if dones[t] { 0.0 } else { gamma * values[t + 1] } - values[t])
            .collect();
        let explicit: Vec<f64> = (0..5).map(|t| (t..5).map(|k| (gamma * lambda).powi((k - t) as i32) * delta[k]).sum()).collect();
        println!("terminal last step: {done_last}");
        println!("  advantages {adv:.4?}");
        println!("  explicit   {explicit:.4?}");
        println!("  returns    {ret:.4?}");
        let mut n = adv.clone();
        normalize_advantages(&mut n);
        println!("  normalized {n:.4?}");
    }
    Ok(())
}
