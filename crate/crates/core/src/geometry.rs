//! Rigid poses, camera/world frame transforms, axis-aligned boxes and
//! per-axis interval gaps.
//!
//! Camera frame convention: `X` points right in the image, `Y` points down,
//! `Z` is the viewing direction. Poses are camera-to-world.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the bottom row of a homogeneous pose matrix.
pub const POSE_ROW_TOLERANCE: f64 = 1e-9;
/// Tolerance on `RᵀR = I` and `det R = 1`.
pub const ROTATION_TOLERANCE: f64 = 1e-6;
/// Tolerance for pose/point round trips.
pub const ROUND_TRIP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_f32(p: [f32; 3]) -> Self {
        Self::new(p[0] as f64, p[1] as f64, p[2] as f64)
    }

    pub fn get(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }

    pub fn dot(&self, o: &Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(&self) -> Vec3 {
        *self * (1.0 / self.norm())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    /// The two axes other than `self`, in X, Y, Z order.
    pub fn others(self) -> [Axis; 2] {
        match self {
            Axis::X => [Axis::Y, Axis::Z],
            Axis::Y => [Axis::X, Axis::Z],
            Axis::Z => [Axis::X, Axis::Y],
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}] is inverted");
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn extend(&mut self, v: f64) {
        if v < self.lo {
            self.lo = v;
        }
        if v > self.hi {
            self.hi = v;
        }
    }
}

/// Minimum distance between two intervals; zero when they overlap or touch.
pub fn interval_gap(a: Interval, b: Interval) -> f64 {
    0f64.max(a.lo - b.hi).max(b.lo - a.hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb3 {
    pub x: Interval,
    pub y: Interval,
    pub z: Interval,
}

impl Aabb3 {
    pub fn from_point(p: Vec3) -> Self {
        Self {
            x: Interval::point(p.x),
            y: Interval::point(p.y),
            z: Interval::point(p.z),
        }
    }

    pub fn axis(&self, axis: Axis) -> Interval {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }

    pub fn extend(&mut self, p: Vec3) {
        self.x.extend(p.x);
        self.y.extend(p.y);
        self.z.extend(p.z);
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.x.contains(p.x) && self.y.contains(p.y) && self.z.contains(p.z)
    }

    /// Volume of the intersection with `other` (zero for touching boxes).
    pub fn overlap_volume(&self, other: &Aabb3) -> f64 {
        Axis::ALL
            .iter()
            .map(|&a| {
                let (s, o) = (self.axis(a), other.axis(a));
                (s.hi.min(o.hi) - s.lo.max(o.lo)).max(0.0)
            })
            .product()
    }
}

pub fn aabb_from_points<I>(points: I) -> Result<Aabb3>
where
    I: IntoIterator<Item = Vec3>,
{
    let mut it = points.into_iter();
    let first = it
        .next()
        .ok_or(Error::EmptyGeometry("no points for bounding box"))?;
    let mut b = Aabb3::from_point(first);
    for p in it {
        b.extend(p);
    }
    Ok(b)
}

pub fn axis_gap(a: &Aabb3, b: &Aabb3, axis: Axis) -> f64 {
    interval_gap(a.axis(axis), b.axis(axis))
}

/// Rigid camera-to-world transform stored as a row-major 4×4 matrix.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CameraPose {
    m: [f64; 16],
}

impl fmt::Debug for CameraPose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[f64]> = self.m.chunks(4).collect();
        f.debug_struct("CameraPose").field("m", &rows).finish()
    }
}

impl CameraPose {
    pub const IDENTITY: CameraPose = CameraPose {
        m: [
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ],
    };

    /// Validates and wraps a row-major 4×4 matrix.
    pub fn from_matrix(m: [f64; 16]) -> Result<Self> {
        if let Some(v) = m.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidPose(format!("non-finite entry {v}")));
        }
        let bottom = [m[12], m[13], m[14], m[15] - 1.0];
        if bottom.iter().any(|v| v.abs() > POSE_ROW_TOLERANCE) {
            return Err(Error::InvalidPose(format!(
                "bottom row is [{}, {}, {}, {}], expected [0, 0, 0, 1]",
                m[12], m[13], m[14], m[15]
            )));
        }
        let pose = CameraPose { m };
        let r = pose.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > ROTATION_TOLERANCE {
                    return Err(Error::InvalidPose(format!(
                        "rotation block is not orthonormal (RᵀR[{i}][{j}] = {dot})"
                    )));
                }
            }
        }
        let det = det3(&r);
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidPose(format!("rotation determinant is {det}")));
        }
        Ok(pose)
    }

    /// Builds a pose from a rotation (rows) and translation.
    pub fn from_rotation_translation(r: [[f64; 3]; 3], t: Vec3) -> Result<Self> {
        Self::from_matrix([
            r[0][0], r[0][1], r[0][2], t.x, //
            r[1][0], r[1][1], r[1][2], t.y, //
            r[2][0], r[2][1], r[2][2], t.z, //
            0.0, 0.0, 0.0, 1.0,
        ])
    }

    pub fn translation_only(t: Vec3) -> Self {
        let mut m = Self::IDENTITY.m;
        m[3] = t.x;
        m[7] = t.y;
        m[11] = t.z;
        CameraPose { m }
    }

    /// Camera at `eye` looking at `target`, with image "up" as close to
    /// `world_up` as possible (no roll).
    pub fn look_at(eye: Vec3, target: Vec3, world_up: Vec3) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::InvalidPose("look_at eye and target coincide".into()));
        }
        let forward = forward.normalized();
        let right = forward.cross(&world_up);
        if right.norm() < 1e-9 {
            return Err(Error::InvalidPose(
                "look_at direction is parallel to up".into(),
            ));
        }
        let right = right.normalized();
        let down = forward.cross(&right);
        // Columns of R are the camera axes expressed in world coordinates.
        Self::from_rotation_translation(
            [
                [right.x, down.x, forward.x],
                [right.y, down.y, forward.y],
                [right.z, down.z, forward.z],
            ],
            eye,
        )
    }

    pub fn matrix(&self) -> &[f64; 16] {
        &self.m
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let m = &self.m;
        [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]]
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(self.m[3], self.m[7], self.m[11])
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.translation()
    }

    /// Rigid inverse: `[Rᵀ | −Rᵀt]`.
    pub fn inverse(&self) -> CameraPose {
        let r = self.rotation();
        let t = self.translation();
        let mut m = [0.0; 16];
        for i in 0..3 {
            for j in 0..3 {
                m[i * 4 + j] = r[j][i];
            }
            m[i * 4 + 3] = -(r[0][i] * t.x + r[1][i] * t.y + r[2][i] * t.z);
        }
        m[15] = 1.0;
        CameraPose { m }
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &CameraPose) -> CameraPose {
        let mut m = [0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                m[i * 4 + j] = (0..4).map(|k| self.m[i * 4 + k] * other.m[k * 4 + j]).sum();
            }
        }
        CameraPose { m }
    }

    /// Applies the transform to a point.
    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        let m = &self.m;
        Vec3::new(
            m[0] * p.x + m[1] * p.y + m[2] * p.z + m[3],
            m[4] * p.x + m[5] * p.y + m[6] * p.z + m[7],
            m[8] * p.x + m[9] * p.y + m[10] * p.z + m[11],
        )
    }

    /// Maps a world point into this camera's frame: `Rᵀ(p − t)`.
    #[inline]
    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        let m = &self.m;
        let d = Vec3::new(p.x - m[3], p.y - m[7], p.z - m[11]);
        Vec3::new(
            m[0] * d.x + m[4] * d.y + m[8] * d.z,
            m[1] * d.x + m[5] * d.y + m[9] * d.z,
            m[2] * d.x + m[6] * d.y + m[10] * d.z,
        )
    }

    pub fn camera_to_world(&self, p: Vec3) -> Vec3 {
        self.transform_point(p)
    }

    /// Largest absolute entry-wise difference to another pose.
    pub fn max_abs_diff(&self, other: &CameraPose) -> f64 {
        self.m
            .iter()
            .zip(other.m.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for CameraPose {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        let m: [f64; 16] = v
            .as_slice()
            .try_into()
            .map_err(|_| Error::InvalidPose(format!("expected 16 entries, found {}", v.len())))?;
        CameraPose::from_matrix(m)
    }
}

impl From<CameraPose> for Vec<f64> {
    fn from(p: CameraPose) -> Self {
        p.m.to_vec()
    }
}

/// World-to-camera transform of `pose`.
pub fn invert_pose(pose: &CameraPose) -> CameraPose {
    pose.inverse()
}

fn det3(r: &[[f64; 3]; 3]) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

/// Rotation about an arbitrary unit axis (Rodrigues).
pub fn rotation_about(axis: Vec3, angle: f64) -> [[f64; 3]; 3] {
    let k = axis.normalized();
    let (s, c) = angle.sin_cos();
    let v = 1.0 - c;
    [
        [
            c + k.x * k.x * v,
            k.x * k.y * v - k.z * s,
            k.x * k.z * v + k.y * s,
        ],
        [
            k.y * k.x * v + k.z * s,
            c + k.y * k.y * v,
            k.y * k.z * v - k.x * s,
        ],
        [
            k.z * k.x * v - k.y * s,
            k.z * k.y * v + k.x * s,
            c + k.z * k.z * v,
        ],
    ]
}


#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::testutil::random_pose;
    use super::*;

    #[test]
    fn identity_inverse() {
        assert_eq!(invert_pose(&CameraPose::IDENTITY), CameraPose::IDENTITY);
    }

    #[test]
    fn translation_inverse() {
        let p = CameraPose::translation_only(Vec3::new(1.0, 2.0, 3.0));
        let inv = invert_pose(&p);
        assert_eq!(
            inv,
            CameraPose::translation_only(Vec3::new(-1.0, -2.0, -3.0))
        );
    }

    #[test]
    fn random_inverse_composes_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = random_pose(&mut rng);
            let err = p
                .compose(&invert_pose(&p))
                .max_abs_diff(&CameraPose::IDENTITY);
            assert!(err < ROUND_TRIP_TOLERANCE, "{err}");
        }
    }

    #[test]
    fn world_to_camera_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(CameraPose::IDENTITY.world_to_camera(p), p);
        let pose = CameraPose::translation_only(Vec3::new(0.0, 0.0, -5.0));
        assert_eq!(pose.world_to_camera(Vec3::ZERO), Vec3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn world_camera_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let pose = random_pose(&mut rng);
            let p = Vec3::new(
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
            );
            let back = pose.camera_to_world(pose.world_to_camera(p));
            assert!((back - p).norm() < ROUND_TRIP_TOLERANCE);
            // world_to_camera agrees with applying the explicit inverse matrix
            let via_inv = pose.inverse().transform_point(p);
            assert!((via_inv - pose.world_to_camera(p)).norm() < ROUND_TRIP_TOLERANCE);
        }
    }

    #[test]
    fn rejects_malformed_poses() {
        let mut m = *CameraPose::IDENTITY.matrix();
        m[12] = 0.5;
        assert!(matches!(
            CameraPose::from_matrix(m),
            Err(Error::InvalidPose(_))
        ));

        let mut m = *CameraPose::IDENTITY.matrix();
        m[0] = 2.0;
        assert!(CameraPose::from_matrix(m).is_err());

        // reflection: orthonormal but det = -1
        let mut m = *CameraPose::IDENTITY.matrix();
        m[0] = -1.0;
        assert!(CameraPose::from_matrix(m).is_err());

        let mut m = *CameraPose::IDENTITY.matrix();
        m[3] = f64::INFINITY;
        assert!(CameraPose::from_matrix(m).is_err());

        assert!(CameraPose::try_from(vec![1.0; 3]).is_err());
    }

    #[test]
    fn look_at_axes() {
        // camera on +Y looking at the origin: world +X is image-left
        let pose = CameraPose::look_at(
            Vec3::new(0.0, 5.0, 0.0),
            Vec3::ZERO,
            Vec3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        let c = pose.world_to_camera(Vec3::ZERO);
        assert!((c - Vec3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
        assert!(pose.world_to_camera(Vec3::new(1.0, 0.0, 0.0)).x < 0.0);
        // world up is image-up, i.e. negative Y_cam
        assert!(pose.world_to_camera(Vec3::new(0.0, 0.0, 1.0)).y < 0.0);
    }

    #[test]
    fn interval_gap_examples() {
        assert_eq!(
            interval_gap(Interval::new(0.0, 1.0), Interval::new(2.0, 3.0)),
            1.0
        );
        assert_eq!(
            interval_gap(Interval::new(0.0, 2.0), Interval::new(1.0, 3.0)),
            0.0
        );
        assert_eq!(
            interval_gap(Interval::new(2.0, 3.0), Interval::new(0.0, 1.0)),
            1.0
        );
        assert_eq!(
            interval_gap(Interval::new(0.0, 1.0), Interval::new(1.0, 2.0)),
            0.0
        );
    }

    #[test]
    fn aabb_examples() {
        let b = aabb_from_points([Vec3::ZERO, Vec3::new(1.0, 2.0, 3.0)]).unwrap();
        assert_eq!(b.x, Interval::new(0.0, 1.0));
        assert_eq!(b.y, Interval::new(0.0, 2.0));
        assert_eq!(b.z, Interval::new(0.0, 3.0));

        let p = Vec3::new(5.0, 5.0, 5.0);
        let d = aabb_from_points([p]).unwrap();
        assert_eq!(d, Aabb3::from_point(p));

        assert!(matches!(
            aabb_from_points(std::iter::empty()),
            Err(Error::EmptyGeometry(_))
        ));
    }

    #[test]
    fn aabb_contains_all_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..10_000)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                )
            })
            .collect();
        let b = aabb_from_points(pts.iter().copied()).unwrap();
        assert!(pts.iter().all(|p| b.contains(*p)));
    }

    #[test]
    fn axis_gap_examples() {
        let a = Aabb3 {
            x: Interval::new(0.0, 1.0),
            y: Interval::new(0.0, 1.0),
            z: Interval::new(0.0, 1.0),
        };
        let b = Aabb3 {
            y: Interval::new(1.6, 2.0),
            ..a
        };
        assert!((axis_gap(&a, &b, Axis::Y) - 0.6).abs() < 1e-12);
        for axis in Axis::ALL {
            assert_eq!(axis_gap(&a, &a, axis), 0.0);
        }
    }

    mod props {
        use proptest::prelude::*;

        use super::super::*;

        fn interval() -> impl Strategy<Value = Interval> {
            (-100.0f64..100.0, 0.0f64..50.0).prop_map(|(lo, w)| Interval::new(lo, lo + w))
        }

        fn aabb() -> impl Strategy<Value = Aabb3> {
            (interval(), interval(), interval()).prop_map(|(x, y, z)| Aabb3 { x, y, z })
        }

        proptest! {
            #[test]
            fn gap_symmetric_nonnegative(a in interval(), b in interval()) {
                let g = interval_gap(a, b);
                prop_assert_eq!(g, interval_gap(b, a));
                prop_assert!(g >= 0.0);
                let intersect = a.lo <= b.hi && b.lo <= a.hi;
                prop_assert_eq!(g == 0.0, intersect);
            }

            #[test]
            fn axis_gap_symmetric(a in aabb(), b in aabb()) {
                for axis in Axis::ALL {
                    prop_assert_eq!(axis_gap(&a, &b, axis), axis_gap(&b, &a, axis));
                }
            }

            #[test]
            fn aabb_permutation_invariant(
                pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0), 1..40),
                seed in any::<u64>(),
            ) {
                use rand::{seq::SliceRandom, SeedableRng};
                let pts: Vec<Vec3> = pts.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
                let mut shuffled = pts.clone();
                shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                prop_assert_eq!(aabb_from_points(pts).unwrap(), aabb_from_points(shuffled).unwrap());
            }
        }
    }
}
