//! Kinematic bicycle integration, turning radius, collision and off-track
//! checks.

use instasim::dynamics::{bicycle_step, boxes_overlap, check_collision, initial_states, simulation_step, Action, AgentState};
use instasim::geometry::{normalize_angle, AnchorPose, Vec2};
use instasim::scene::{generate_synthetic_scenario, AgentFeatures, Template, World};

fn car(x: f64, y: f64, heading: f64, speed: f64) -> AgentState {
    let features = AgentFeatures { width: 2.0, length: 5.0, speed, speed_limit: 13.9, vru: false };
    AgentState {
        pose: AnchorPose::new(x, y, heading).unwrap(),
        speed,
        features,
        route_id: 0,
        alive: true,
        termination: Default::default(),
    }
}

fn main() -> instasim::Result<()> {
    // Constant steering traces a circle of radius ~ L / tan(delta).
    let steer = 0.1;
    let mut s = car(0.0, 0.0, 0.0, 5.0);
    let wheelbase = s.wheelbase();
    let mut pts = vec![s.pose.position];
    let mut turned = 0.0;
    while turned < std::f64::consts::TAU {
        let next = bicycle_step(&s, Action::new(0.0, steer), 0.01);
        turned += normalize_angle(next.pose.heading - s.pose.heading)?;
        s = next;
        pts.push(s.pose.position);
    }
    let center = pts.iter().fold(Vec2::ZERO, |a, p| a + *p) * (1.0 / pts.len() as f64);
    let radius = pts.iter().map(|p| (*p - center).norm()).sum::<f64>() / pts.len() as f64;
    println!("turning radius {radius:.2} m, L/tan(delta) = {:.2} m", wheelbase / steer.tan());

    // Separating-axis overlap of oriented boxes.
    let a = car(0.0, 0.0, 0.0, 0.0);
    for (label, b) in [
        ("overlapping", car(4.0, 0.5, 0.0, 0.0)),
        ("touching", car(5.0, 0.0, 0.0, 0.0)),
        ("rotated, clear", car(6.0, 3.5, 0.8, 0.0)),
        ("crossing", car(2.0, 0.0, 1.57, 0.0)),
    ] {
        println!("{label:<14} overlap = {}", boxes_overlap(&a, &b));
    }
    println!("collision pairs {:?}", check_collision(&[a, car(4.0, 0.5, 0.0, 0.0), car(30.0, 0.0, 0.0, 0.0)]));

    // A hard left turn on a straight road ends off-track.
    let world = World::from_scenario(generate_synthetic_scenario(Template::Straight, 1, 3)?);
    let mut states = initial_states(&world);
    for t in 0..world.horizon() {
        let out = simulation_step(&world, &states, &[Action::new(0.0, 0.4)], t)?;
        states = out.states;
        if let Some(ev) = out.events.first() {
            println!("hard left: {:?} at step {}", ev.cause, ev.step);
            break;
        }
    }
    Ok(())
}
