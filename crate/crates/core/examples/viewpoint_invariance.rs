//! Refined agent tokens and action means do not change when the whole
//! scene is moved to another global frame.

use instasim::dynamics::initial_states;
use instasim::encoder::{EncoderConfig, TokenCache};
use instasim::geometry::AnchorPose;
use instasim::rl::{Policy, PolicyConfig};
use instasim::scene::{generate_synthetic_scenario, Template, World};

fn main() -> instasim::Result<()> {
    let policy = Policy::new(PolicyConfig::new(EncoderConfig::small(50.0)), 0)?;
    let ws = policy.store.snapshot::<f32>();
    let scenario = generate_synthetic_scenario(Template::Intersection, 8, 5)?;
    let base = World::from_scenario(scenario.clone());
    let reference = policy.evaluate(&ws, &base, &initial_states(&base), &mut TokenCache::new())?;

    for t in [AnchorPose::new(120.0, -40.0, 0.7)?, AnchorPose::new(-3000.0, 2500.0, -2.9)?, AnchorPose::new(0.0, 0.0, 3.1)?] {
        let moved = World::from_scenario(scenario.transformed(&t)?);
        let z0 = policy.encoder.encode_scene(&ws, &base, &initial_states(&base), &mut TokenCache::new())?;
        let z1 = policy.encoder.encode_scene(&ws, &moved, &initial_states(&moved), &mut TokenCache::new())?;
        let token_diff = z0
            .tokens
            .iter()
            .zip(&z1.tokens)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0f32, f32::max);
        let step = policy.evaluate(&ws, &moved, &initial_states(&moved), &mut TokenCache::new())?;
        let mean_diff = reference
            .outputs
            .iter()
            .zip(&step.outputs)
            .flat_map(|(a, b)| [(a.mean[0] - b.mean[0]).abs(), (a.mean[1] - b.mean[1]).abs()])
            .fold(0.0f32, f32::max);
        println!(
            "transform ({:>7.1}, {:>7.1}, {:>5.2} rad): max token change {token_diff:.2e}, max action-mean change {mean_diff:.2e}",
            t.position.x, t.position.y, t.heading
        );
    }
    Ok(())
}
