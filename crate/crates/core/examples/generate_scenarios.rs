//! Generates one scenario per template, replays the scripted expert and
//! round-trips the scenario through JSON.
//!
//! cargo run --release --example generate_scenarios -- [n_agents] [out_dir]

use instasim::eval::expert_tracks;
use instasim::scene::{generate_synthetic_scenario, load_scenario, save_scenario, Template, World};

fn main() -> instasim::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_agents: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "target/example_scenarios".into()));
    std::fs::create_dir_all(&out).map_err(|e| instasim::Error::InvalidArgument(e.to_string()))?;

    for (k, template) in Template::ALL.into_iter().enumerate() {
        let sc = generate_synthetic_scenario(template, n_agents, 100 + k as u64)?;
        let path = out.join(format!("{template}.json"));
        save_scenario(&sc, &path)?;
        assert_eq!(load_scenario(&path)?, sc);

        let world = World::from_scenario(sc);
        let steps: usize = world.scenario.expert.iter().map(|e| e.actions.len()).sum();
        let lengths: Vec<f64> = expert_tracks(&world)
            .iter()
            .map(|t| {
                let pts: Vec<_> = t.iter().flatten().collect();
                pts.windows(2).map(|w| (*w[1] - *w[0]).norm()).sum()
            })
            .collect();
        println!(
            "{template:<13} polylines {:>3}  routes {}  agents {}  expert steps {:>4}  mean path {:>5.1} m  -> {}",
            world.n_polylines(),
            world.routes.len(),
            world.scenario.n_agents(),
            steps,
            lengths.iter().sum::<f64>() / lengths.len() as f64,
            path.display()
        );
    }

    // The same template and seed always produce the same scenario.
    let a = generate_synthetic_scenario(Template::Merge, 4, 7)?;
    let b = generate_synthetic_scenario(Template::Merge, 4, 7)?;
    assert_eq!(a, b);
    Ok(())
}
