//! Planar frames and the relative-pose descriptor between them.
//!
//! Every scene instance (agent or map polyline) owns an [`AnchorPose`]: the
//! origin and heading of its local frame in an arbitrary global frame. The
//! encoder never sees global coordinates; it only sees [`RelPose`] values
//! computed between pairs of anchors, which is what makes the scene encoding
//! independent of the choice of global frame.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Rotates counter-clockwise by `theta`.
    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(wrap_angle(x))
}

/// Infallible variant of [`normalize_angle`] for values already known finite.
pub(crate) fn wrap_angle(x: f64) -> f64 {
    if x > -PI && x <= PI {
        return x;
    }
    let r = x.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// Origin and heading of a local coordinate frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorPose {
    pub position: Vec2,
    pub heading: f64,
}

impl AnchorPose {
    pub const IDENTITY: AnchorPose = AnchorPose { position: Vec2::ZERO, heading: 0.0 };

    pub fn new(x: f64, y: f64, heading: f64) -> Result<Self> {
        let position = Vec2::new(x, y);
        if !position.is_finite() {
            return Err(Error::NonFinite("anchor position"));
        }
        Ok(Self { position, heading: normalize_angle(heading)? })
    }

    pub fn validate(&self) -> Result<()> {
        if !self.position.is_finite() {
            return Err(Error::NonFinite("anchor position"));
        }
        if !self.heading.is_finite() {
            return Err(Error::NonFinite("anchor heading"));
        }
        if !(self.heading > -PI && self.heading <= PI) {
            return Err(Error::InvalidArgument(format!(
                "anchor heading {} outside (-pi, pi]",
                self.heading
            )));
        }
        Ok(())
    }

    /// Expresses a global point in this frame.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.position).rotate(-self.heading)
    }

    /// Maps a point given in this frame to global coordinates.
    pub fn to_global(&self, p: Vec2) -> Vec2 {
        p.rotate(self.heading) + self.position
    }

    pub fn forward(&self) -> Vec2 {
        Vec2::from_angle(self.heading)
    }
}

/// Relative pose of one anchor seen from another, with both angles embedded
/// on the unit circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelPose {
    pub dheading_cos: f64,
    pub dheading_sin: f64,
    pub azimuth_cos: f64,
    pub azimuth_sin: f64,
    pub distance: f64,
}

impl RelPose {
    pub const SELF: RelPose = RelPose {
        dheading_cos: 1.0,
        dheading_sin: 0.0,
        azimuth_cos: 1.0,
        azimuth_sin: 0.0,
        distance: 0.0,
    };

    pub fn dheading(&self) -> f64 {
        self.dheading_sin.atan2(self.dheading_cos)
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth_sin.atan2(self.azimuth_cos)
    }

    /// The five-value embedding with distance scaled by `radius`.
    pub fn features(&self, radius: f64) -> [f64; 5] {
        [
            self.dheading_cos,
            self.dheading_sin,
            self.azimuth_cos,
            self.azimuth_sin,
            self.distance / radius,
        ]
    }
}

/// Below this separation the azimuth is undefined and set to zero.
pub const COINCIDENT_EPS: f64 = 1e-9;

/// Relative pose of `to` in the frame of `from`.
pub fn relative_pose(from: &AnchorPose, to: &AnchorPose) -> RelPose {
    let dheading = wrap_angle(to.heading - from.heading);
    let delta = to.position - from.position;
    let distance = delta.norm();
    let (azimuth_cos, azimuth_sin) = if distance < COINCIDENT_EPS {
        (1.0, 0.0)
    } else {
        let local = delta.rotate(-from.heading);
        (local.x / distance, local.y / distance)
    };
    let (dheading_sin, dheading_cos) = dheading.sin_cos();
    RelPose { dheading_cos, dheading_sin, azimuth_cos, azimuth_sin, distance }
}

/// Applies the SE(2) transform `t` to `pose`: rotate by `t.heading`, then
/// translate by `t.position`.
pub fn apply_rigid_transform(pose: &AnchorPose, t: &AnchorPose) -> AnchorPose {
    AnchorPose {
        position: t.to_global(pose.position),
        heading: wrap_angle(pose.heading + t.heading),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_angle(0.0).unwrap(), 0.0);
        assert!(close(normalize_angle(3.0 * PI).unwrap(), PI, 1e-12));
        assert_eq!(normalize_angle(-PI).unwrap(), PI);
        assert!(normalize_angle(f64::NAN).is_err());
        assert!(normalize_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn relative_pose_examples() {
        let o = AnchorPose::new(3.0, -2.0, 0.7).unwrap();
        assert_eq!(relative_pose(&o, &o), RelPose::SELF);

        let a = AnchorPose::new(0.0, 0.0, 0.0).unwrap();
        let b = AnchorPose::new(1.0, 0.0, 0.0).unwrap();
        let r = relative_pose(&a, &b);
        assert!(close(r.dheading(), 0.0, 1e-12));
        assert!(close(r.azimuth(), 0.0, 1e-12));
        assert!(close(r.distance, 1.0, 1e-12));

        // (0,1) seen from a frame rotated by pi/2 lies on its +x axis.
        let a = AnchorPose::new(0.0, 0.0, PI / 2.0).unwrap();
        let b = AnchorPose::new(0.0, 1.0, PI).unwrap();
        let r = relative_pose(&a, &b);
        assert!(close(r.dheading(), PI / 2.0, 1e-12));
        assert!(close(r.azimuth(), 0.0, 1e-12));
        assert!(close(r.distance, 1.0, 1e-12));
    }

    #[test]
    fn rigid_transform_examples() {
        let p = AnchorPose::new(1.5, -0.5, 0.3).unwrap();
        assert_eq!(apply_rigid_transform(&p, &AnchorPose::IDENTITY), p);

        let t = AnchorPose::new(1.0, 0.0, 0.0).unwrap();
        let moved = apply_rigid_transform(&AnchorPose::IDENTITY, &t);
        assert_eq!(moved.position, Vec2::new(1.0, 0.0));

        let rot = AnchorPose::new(0.0, 0.0, PI).unwrap();
        let twice = apply_rigid_transform(&apply_rigid_transform(&p, &rot), &rot);
        assert!(close(twice.position.x, p.position.x, 1e-12));
        assert!(close(twice.position.y, p.position.y, 1e-12));
        assert!(close(twice.heading, p.heading, 1e-12));
    }

    fn pose() -> impl Strategy<Value = AnchorPose> {
        (-200.0..200.0f64, -200.0..200.0f64, -10.0..10.0f64)
            .prop_map(|(x, y, h)| AnchorPose::new(x, y, h).unwrap())
    }

    proptest! {
        #[test]
        fn normalized_range_and_congruence(x in -1e3..1e3f64) {
            let r = normalize_angle(x).unwrap();
            prop_assert!(r > -PI && r <= PI);
            let k = ((x - r) / TAU).round();
            prop_assert!(close(x - r, k * TAU, 1e-9));
        }

        #[test]
        fn distance_symmetric_and_heading_antisymmetric(a in pose(), b in pose()) {
            let ab = relative_pose(&a, &b);
            let ba = relative_pose(&b, &a);
            prop_assert_eq!(ab.distance, ba.distance);
            prop_assert!(close(ab.dheading_cos, ba.dheading_cos, 1e-12));
            prop_assert!(close(ab.dheading_sin, -ba.dheading_sin, 1e-12));
            prop_assert!(close(ab.dheading_cos.powi(2) + ab.dheading_sin.powi(2), 1.0, 1e-9));
            prop_assert!(close(ab.azimuth_cos.powi(2) + ab.azimuth_sin.powi(2), 1.0, 1e-9));
        }

        #[test]
        fn relative_pose_is_frame_invariant(a in pose(), b in pose(), t in pose()) {
            let r0 = relative_pose(&a, &b);
            let r1 = relative_pose(&apply_rigid_transform(&a, &t), &apply_rigid_transform(&b, &t));
            prop_assert!(close(r0.dheading_cos, r1.dheading_cos, 1e-9));
            prop_assert!(close(r0.dheading_sin, r1.dheading_sin, 1e-9));
            prop_assert!(close(r0.azimuth_cos, r1.azimuth_cos, 1e-9));
            prop_assert!(close(r0.azimuth_sin, r1.azimuth_sin, 1e-9));
            prop_assert!(close(r0.distance, r1.distance, 1e-9));
        }
    }
}
