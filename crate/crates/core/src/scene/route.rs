use crate::geometry::Vec2;

/// Concatenated centerline of a route with cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteGeometry {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
    pub halfwidth: f64,
    pub speed_limit: f64,
}

/// Closest point on a route centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the closest point.
    pub arc: f64,
    /// Signed lateral offset, positive to the left of the direction of travel.
    pub lateral: f64,
    /// Unsigned distance to the centerline.
    pub distance: f64,
    pub segment: usize,
}

impl RouteGeometry {
    pub fn new(chain: &[Vec2], halfwidth: f64, speed_limit: f64) -> Self {
        let mut points: Vec<Vec2> = Vec::with_capacity(chain.len());
        for &p in chain {
            match points.last() {
                Some(&q) if (p - q).norm() < 1e-9 => {}
                _ => points.push(p),
            }
        }
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += (w[1] - w[0]).norm();
            cumulative.push(acc);
        }
        Self { points, cumulative, halfwidth, speed_limit }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    pub fn project(&self, p: Vec2) -> Projection {
        let mut best = Projection { arc: 0.0, lateral: 0.0, distance: f64::INFINITY, segment: 0 };
        if self.points.len() == 1 {
            let d = (p - self.points[0]).norm();
            return Projection { distance: d, lateral: d, ..best };
        }
        for (i, w) in self.points.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let ab = b - a;
            let len2 = ab.dot(ab);
            let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
            let foot = a + ab * t;
            let d = (p - foot).norm();
            if d < best.distance {
                let seg_len = len2.sqrt();
                let lateral = ab.cross(p - a) / seg_len;
                best = Projection {
                    arc: self.cumulative[i] + t * seg_len,
                    lateral: if lateral >= 0.0 { d } else { -d },
                    distance: d,
                    segment: i,
                };
            }
        }
        best
    }

    /// Point at arc length `s`, extrapolating linearly past either end.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let n = self.points.len();
        if n == 1 {
            return self.points[0];
        }
        let i = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        a + (b - a) * ((s - self.cumulative[i]) / seg)
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let n = self.points.len();
        if n == 1 {
            return 0.0;
        }
        let i = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        (self.points[i + 1] - self.points[i]).angle()
    }

    /// Arc lengths (on `self`, on `other`) of the first point where the two
    /// centerlines meet, scanning `self` from its start.
    pub fn first_crossing(&self, other: &RouteGeometry) -> Option<(f64, f64)> {
        for (i, w) in self.points.windows(2).enumerate() {
            let (p, r) = (w[0], w[1] - w[0]);
            let mut hit: Option<(f64, f64)> = None;
            for (j, v) in other.points.windows(2).enumerate() {
                let (q, s) = (v[0], v[1] - v[0]);
                let denom = r.cross(s);
                if denom.abs() < 1e-12 {
                    continue;
                }
                let t = (q - p).cross(s) / denom;
                let u = (q - p).cross(r) / denom;
                if (-1e-9..=1.0 + 1e-9).contains(&t) && (-1e-9..=1.0 + 1e-9).contains(&u) {
                    let a = self.cumulative[i] + t.clamp(0.0, 1.0) * r.norm();
                    let b = other.cumulative[j] + u.clamp(0.0, 1.0) * s.norm();
                    if hit.map_or(true, |(ha, _)| a < ha) {
                        hit = Some((a, b));
                    }
                }
            }
            if hit.is_some() {
                return hit;
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_signs_and_arc() {
        let r = RouteGeometry::new(&[Vec2::ZERO, Vec2::new(10.0, 0.0), Vec2::new(20.0, 0.0)], 2.0, 10.0);
        let p = r.project(Vec2::new(12.0, 1.5));
        assert!((p.arc - 12.0).abs() < 1e-12);
        assert!((p.lateral - 1.5).abs() < 1e-12);
        let q = r.project(Vec2::new(3.0, -0.5));
        assert!((q.lateral + 0.5).abs() < 1e-12);
        assert_eq!(r.point_at(15.0), Vec2::new(15.0, 0.0));
        assert_eq!(r.point_at(25.0), Vec2::new(25.0, 0.0));
    }

    #[test]
    fn crossing_of_perpendicular_routes() {
        let a = RouteGeometry::new(&[Vec2::new(-10.0, 0.0), Vec2::new(10.0, 0.0)], 2.0, 10.0);
        let b = RouteGeometry::new(&[Vec2::new(0.0, -5.0), Vec2::new(0.0, 5.0)], 2.0, 10.0);
        let (sa, sb) = a.first_crossing(&b).unwrap();
        assert!((sa - 10.0).abs() < 1e-12 && (sb - 5.0).abs() < 1e-12);
        let c = RouteGeometry::new(&[Vec2::new(-10.0, 3.0), Vec2::new(10.0, 3.0)], 2.0, 10.0);
        assert!(a.first_crossing(&c).is_none());
    }
}
