use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use super::{RouteGeometry, Scenario};
use crate::geometry::AnchorPose;

/// Immutable per-scenario precomputation shared by the simulator, the
/// encoders and rollout workers.
#[derive(Debug, Clone)]
pub struct World {
    pub scenario: Arc<Scenario>,
    pub routes: Vec<RouteGeometry>,
    /// `route_members[r][p]` is true when polyline `p` belongs to route `r`.
    pub route_members: Vec<Vec<bool>>,
    pub map_anchors: Vec<AnchorPose>,
    /// Content hash of the polyline inputs.
    pub map_fingerprint: u64,
}

impl World {
    pub fn new(scenario: Arc<Scenario>) -> Self {
        let n_poly = scenario.polylines.len();
        let mut routes = Vec::with_capacity(scenario.routes.len());
        let mut route_members = Vec::with_capacity(scenario.routes.len());
        for route in &scenario.routes {
            let mut chain = Vec::new();
            let mut members = vec![false; n_poly];
            for &id in &route.polyline_ids {
                chain.extend_from_slice(scenario.polylines[id].points());
                members[id] = true;
            }
            routes.push(RouteGeometry::new(&chain, route.corridor_halfwidth, route.speed_limit));
            route_members.push(members);
        }
        let map_anchors = scenario.polylines.iter().map(|p| *p.anchor()).collect();
        let mut h = DefaultHasher::new();
        n_poly.hash(&mut h);
        for p in &scenario.polylines {
            p.element_type().hash(&mut h);
            for q in p.points() {
                q.x.to_bits().hash(&mut h);
                q.y.to_bits().hash(&mut h);
            }
        }
        Self { scenario, routes, route_members, map_anchors, map_fingerprint: h.finish() }
    }

    pub fn from_scenario(scenario: Scenario) -> Self {
        Self::new(Arc::new(scenario))
    }

    pub fn dt(&self) -> f64 {
        self.scenario.meta.dt
    }

    pub fn horizon(&self) -> usize {
        self.scenario.meta.horizon
    }

    pub fn n_polylines(&self) -> usize {
        self.scenario.polylines.len()
    }
}
