//! Coordinate frames and angle math.
//!
//! The vehicle frame follows ISO 8855 (x forward, y left, z up) with the
//! origin translated from the front-axle center to a point behind the
//! driver's seat, so that in-cockpit targets and outside landmarks share a
//! comparable forward-pointing direction regime. Angles are degrees at API
//! boundaries and radians internally. Yaw is measured in the x-y plane from
//! +x toward +y (positive left), pitch from the x-y plane toward +z
//! (positive up); at the poles yaw is reported as 0.

use crate::math;
use core::fmt;

/// Offset, in meters, from the front-axle origin to the driver-seat origin:
/// `p_driver = p_axle + DRIVER_FRAME_OFFSET`.
pub const DRIVER_FRAME_OFFSET: Vec3 = Vec3::new(2.0, -0.4, 0.0);

/// WGS84 semi-major axis in meters.
pub const WGS84_A: f64 = 6378137.0;
/// WGS84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257223563;
/// WGS84 first eccentricity squared, e2 = f(2-f).
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeometryError {
    /// A vector with (near-)zero norm was used where a direction is required.
    DegenerateVector,
    /// A rotation matrix failed the orthonormality / right-handedness check.
    InvalidTransform,
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::DegenerateVector => write!(f, "degenerate (zero-norm) vector"),
            GeometryError::InvalidTransform => write!(f, "rotation matrix is not orthonormal"),
        }
    }
}

impl core::error::Error for GeometryError {}

/// A 3D position (meters) or direction (dimensionless).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        math::sqrt(self.dot(self))
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    /// Unit vector parallel to `self`; errors on a (near-)zero vector.
    pub fn normalized(self) -> Result<Vec3, GeometryError> {
        let n = self.norm();
        if n < NORM_EPS {
            return Err(GeometryError::DegenerateVector);
        }
        Ok(self.scale(1.0 / n))
    }

    // Inherent rather than the std ops traits so call sites stay
    // import-free in a no_std crate used from many modules.
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Vec3) -> Vec3 {
        Vec3::new(self.x + other.x, self.y + other.y, self.z + other.z)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Vec3) -> Vec3 {
        Vec3::new(self.x - other.x, self.y - other.y, self.z - other.z)
    }
}

/// Spherical direction: radius in meters, yaw/pitch in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalDir {
    pub r: f64,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
}

/// Head orientation as yaw/pitch/roll in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerAngles {
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
}

impl EulerAngles {
    pub const fn new(yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> Self {
        EulerAngles {
            yaw_deg,
            pitch_deg,
            roll_deg,
        }
    }
}

/// WGS84 geodetic coordinate (degrees, degrees, meters above the ellipsoid).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodeticCoord {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub height_m: f64,
}

impl GeodeticCoord {
    pub const fn new(lat_deg: f64, lon_deg: f64, height_m: f64) -> Self {
        GeodeticCoord {
            lat_deg,
            lon_deg,
            height_m,
        }
    }
}

/// Rigid transform `p' = R p + t` with orthonormal, right-handed `R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    /// Row-major 3x3 rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl AffineTransform {
    /// Builds a transform, rejecting rotations that are not orthonormal with
    /// determinant +1 (within 1e-9).
    pub fn new(rotation: [[f64; 3]; 3], translation: Vec3) -> Result<Self, GeometryError> {
        let r = AffineTransform {
            rotation,
            translation,
        };
        if !r.rotation_is_orthonormal(1e-9) {
            return Err(GeometryError::InvalidTransform);
        }
        Ok(r)
    }

    fn rotation_is_orthonormal(&self, tol: f64) -> bool {
        let m = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[i][k] * m[j][k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if math::abs(dot - expect) > tol {
                    return false;
                }
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        math::abs(det - 1.0) <= tol
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let m = &self.rotation;
        Vec3::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z,
        )
        .add(self.translation)
    }

    /// Inverse transform: `p = R^T (p' - t)`.
    pub fn invert(&self) -> AffineTransform {
        let m = &self.rotation;
        let rt = [
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ];
        let t = Vec3::new(
            -(rt[0][0] * self.translation.x
                + rt[0][1] * self.translation.y
                + rt[0][2] * self.translation.z),
            -(rt[1][0] * self.translation.x
                + rt[1][1] * self.translation.y
                + rt[1][2] * self.translation.z),
            -(rt[2][0] * self.translation.x
                + rt[2][1] * self.translation.y
                + rt[2][2] * self.translation.z),
        );
        AffineTransform {
            rotation: rt,
            translation: t,
        }
    }
}

/// Unit vector parallel to `v`.
pub fn normalize(v: Vec3) -> Result<Vec3, GeometryError> {
    v.normalized()
}

/// Angle between two vectors in degrees, in [0, 180]. Symmetric and
/// invariant to positive rescaling of either argument.
pub fn angular_distance(u: Vec3, v: Vec3) -> Result<f64, GeometryError> {
    let nu = u.norm();
    let nv = v.norm();
    if nu < NORM_EPS || nv < NORM_EPS {
        return Err(GeometryError::DegenerateVector);
    }
    let c = math::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
    Ok(math::to_deg(math::acos(c)))
}

/// Cartesian to spherical. Yaw = atan2(y, x), pitch = angle above the x-y
/// plane. At the poles (x = y = 0) yaw is 0 by convention.
pub fn cartesian_to_spherical(v: Vec3) -> Result<SphericalDir, GeometryError> {
    let r = v.norm();
    if r < NORM_EPS {
        return Err(GeometryError::DegenerateVector);
    }
    let planar = math::hypot(v.x, v.y);
    let yaw = if planar == 0.0 {
        0.0
    } else {
        let y = math::to_deg(math::atan2(v.y, v.x));
        if y == -180.0 {
            180.0
        } else {
            y
        }
    };
    let pitch = math::to_deg(math::atan2(v.z, planar));
    Ok(SphericalDir {
        r,
        yaw_deg: yaw,
        pitch_deg: pitch,
    })
}

pub fn spherical_to_cartesian(s: SphericalDir) -> Vec3 {
    let yaw = math::to_rad(s.yaw_deg);
    let pitch = math::to_rad(s.pitch_deg);
    let cp = math::cos(pitch);
    Vec3::new(
        s.r * cp * math::cos(yaw),
        s.r * cp * math::sin(yaw),
        s.r * math::sin(pitch),
    )
}

/// Yaw/pitch of a direction vector, in degrees.
pub fn yaw_pitch_deg(v: Vec3) -> Result<(f64, f64), GeometryError> {
    let s = cartesian_to_spherical(v)?;
    Ok((s.yaw_deg, s.pitch_deg))
}

/// Re-expresses a front-axle-frame point in the driver-seat frame.
pub fn translate_to_driver_frame(p: Vec3) -> Vec3 {
    p.add(DRIVER_FRAME_OFFSET)
}

/// Inverse of [`translate_to_driver_frame`]; exact (pure addition).
pub fn translate_from_driver_frame(p: Vec3) -> Vec3 {
    p.sub(DRIVER_FRAME_OFFSET)
}

/// Forward unit vector of a head orientation. Roll spins the head around the
/// viewing axis and does not move the forward vector.
pub fn euler_to_direction(e: EulerAngles) -> Vec3 {
    spherical_to_cartesian(SphericalDir {
        r: 1.0,
        yaw_deg: e.yaw_deg,
        pitch_deg: e.pitch_deg,
    })
}

/// WGS84 geodetic to Earth-Centered Earth-Fixed, meters.
pub fn geodetic_to_ecef(g: GeodeticCoord) -> Vec3 {
    let phi = math::to_rad(g.lat_deg);
    let lam = math::to_rad(g.lon_deg);
    let sin_phi = math::sin(phi);
    let n = WGS84_A / math::sqrt(1.0 - WGS84_E2 * sin_phi * sin_phi);
    Vec3::new(
        (n + g.height_m) * math::cos(phi) * math::cos(lam),
        (n + g.height_m) * math::cos(phi) * math::sin(lam),
        (n * (1.0 - WGS84_E2) + g.height_m) * sin_phi,
    )
}

/// ECEF back to geodetic by fixed-point iteration on the latitude; converges
/// well below 1e-6 m for near-surface points.
pub fn ecef_to_geodetic(p: Vec3) -> GeodeticCoord {
    let lon = math::atan2(p.y, p.x);
    let rho = math::hypot(p.x, p.y);
    if rho < NORM_EPS {
        // On the polar axis the longitude is arbitrary; report 0.
        let lat = if p.z >= 0.0 { 90.0 } else { -90.0 };
        let b = WGS84_A * (1.0 - WGS84_F);
        return GeodeticCoord::new(lat, 0.0, math::abs(p.z) - b);
    }
    let mut lat = math::atan2(p.z, rho * (1.0 - WGS84_E2));
    let mut height = 0.0;
    for _ in 0..50 {
        let sin_lat = math::sin(lat);
        let n = WGS84_A / math::sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat);
        // The planar form degrades near the poles; switch to the polar form
        // above 45 degrees.
        height = if math::abs(lat) < core::f64::consts::FRAC_PI_4 {
            rho / math::cos(lat) - n
        } else {
            p.z / sin_lat - n * (1.0 - WGS84_E2)
        };
        let next = math::atan2(p.z, rho * (1.0 - WGS84_E2 * n / (n + height)));
        let step = math::abs(next - lat);
        lat = next;
        if step < 1e-15 {
            break;
        }
    }
    GeodeticCoord::new(math::to_deg(lat), math::to_deg(lon), height)
}

/// Local east/north/up unit vectors (in ECEF) at a geodetic point.
pub fn enu_basis(at: GeodeticCoord) -> (Vec3, Vec3, Vec3) {
    let phi = math::to_rad(at.lat_deg);
    let lam = math::to_rad(at.lon_deg);
    let (sp, cp) = (math::sin(phi), math::cos(phi));
    let (sl, cl) = (math::sin(lam), math::cos(lam));
    let east = Vec3::new(-sl, cl, 0.0);
    let north = Vec3::new(-sp * cl, -sp * sl, cp);
    let up = Vec3::new(cp * cl, cp * sl, sp);
    (east, north, up)
}

/// Transform from ECEF into the driver frame of a vehicle standing at
/// `position` with its forward axis at compass `heading_deg` (degrees
/// clockwise from true north). The vehicle is assumed level, so the
/// orientation is a single rotation about the local vertical.
pub fn car_frame_transform(position: GeodeticCoord, heading_deg: f64) -> AffineTransform {
    let (east, north, up) = enu_basis(position);
    let h = math::to_rad(heading_deg);
    let fwd = east.scale(math::sin(h)).add(north.scale(math::cos(h)));
    let left = east.scale(-math::cos(h)).add(north.scale(math::sin(h)));
    let origin = geodetic_to_ecef(position);
    // Rows of R are the car axes, so R maps ECEF deltas into the axle frame;
    // the driver-frame offset then moves the origin behind the seat.
    let rotation = [
        [fwd.x, fwd.y, fwd.z],
        [left.x, left.y, left.z],
        [up.x, up.y, up.z],
    ];
    let rt = Vec3::new(
        -(fwd.x * origin.x + fwd.y * origin.y + fwd.z * origin.z),
        -(left.x * origin.x + left.y * origin.y + left.z * origin.z),
        -(up.x * origin.x + up.y * origin.y + up.z * origin.z),
    );
    AffineTransform {
        rotation,
        translation: rt.add(DRIVER_FRAME_OFFSET),
    }
}

/// ECEF point into the driver frame of the given car pose.
pub fn ecef_to_car(p: Vec3, position: GeodeticCoord, heading_deg: f64) -> Vec3 {
    car_frame_transform(position, heading_deg).apply(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    const POSE1: GeodeticCoord = GeodeticCoord::new(48.220446, 11.724796, 500.0);

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn assert_vec_close(a: Vec3, b: Vec3, tol: f64) {
        assert_close(a.x, b.x, tol);
        assert_close(a.y, b.y, tol);
        assert_close(a.z, b.z, tol);
    }

    #[test]
    fn normalize_examples() {
        let v = normalize(Vec3::new(2.0, 0.0, 0.0)).unwrap();
        assert_vec_close(v, Vec3::new(1.0, 0.0, 0.0), 1e-15);
        let v = normalize(Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert_vec_close(v, Vec3::new(s, s, s), 1e-15);
        assert_eq!(
            normalize(Vec3::ZERO).unwrap_err(),
            GeometryError::DegenerateVector
        );
    }

    #[test]
    fn angular_distance_examples() {
        let x = Vec3::new(1.0, 0.0, 0.0);
        let y = Vec3::new(0.0, 1.0, 0.0);
        assert_close(angular_distance(x, y).unwrap(), 90.0, 1e-12);
        assert_close(angular_distance(x, x).unwrap(), 0.0, 1e-12);
        assert_close(
            angular_distance(x, Vec3::new(-1.0, 0.0, 0.0)).unwrap(),
            180.0,
            1e-12,
        );
        assert!(angular_distance(Vec3::ZERO, x).is_err());
    }

    #[test]
    fn spherical_examples() {
        let s = cartesian_to_spherical(Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_close(s.r, 1.0, 1e-15);
        assert_close(s.yaw_deg, 0.0, 1e-12);
        assert_close(s.pitch_deg, 0.0, 1e-12);

        // Pole convention: yaw reported as 0.
        let s = cartesian_to_spherical(Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_close(s.yaw_deg, 0.0, 1e-12);
        assert_close(s.pitch_deg, 90.0, 1e-12);

        let s = cartesian_to_spherical(Vec3::new(1.0, 1.0, 0.0)).unwrap();
        assert_close(s.r, 2f64.sqrt(), 1e-15);
        assert_close(s.yaw_deg, 45.0, 1e-12);
        assert_close(s.pitch_deg, 0.0, 1e-12);

        assert!(cartesian_to_spherical(Vec3::ZERO).is_err());
    }

    #[test]
    fn driver_frame_examples() {
        assert_vec_close(
            translate_to_driver_frame(Vec3::ZERO),
            Vec3::new(2.0, -0.4, 0.0),
            0.0,
        );
        assert_vec_close(
            translate_to_driver_frame(Vec3::new(-2.0, 0.4, 0.0)),
            Vec3::ZERO,
            0.0,
        );
        assert_vec_close(
            translate_to_driver_frame(Vec3::new(1.5, 0.4, 1.0)),
            Vec3::new(3.5, 0.0, 1.0),
            0.0,
        );
        // Pure addition round-trips to within an ulp of the intermediate
        // (the y offset is not exactly representable in binary).
        let p = Vec3::new(0.3, -7.25, 1.125);
        let rt = translate_from_driver_frame(translate_to_driver_frame(p));
        assert!(rt.sub(p).norm() < 1e-13);
        // Exact where the components are representable.
        let p = Vec3::new(0.5, -0.25, 4.0);
        assert_eq!(translate_from_driver_frame(translate_to_driver_frame(p)), p);
    }

    #[test]
    fn euler_examples() {
        assert_vec_close(
            euler_to_direction(EulerAngles::new(0.0, 0.0, 0.0)),
            Vec3::new(1.0, 0.0, 0.0),
            1e-15,
        );
        assert_vec_close(
            euler_to_direction(EulerAngles::new(90.0, 0.0, 0.0)),
            Vec3::new(0.0, 1.0, 0.0),
            1e-12,
        );
        assert_vec_close(
            euler_to_direction(EulerAngles::new(0.0, -45.0, 0.0)),
            Vec3::new(0.5f64.sqrt(), 0.0, -(0.5f64.sqrt())),
            1e-12,
        );
    }

    #[test]
    fn ecef_constants() {
        let eq = geodetic_to_ecef(GeodeticCoord::new(0.0, 0.0, 0.0));
        assert_vec_close(eq, Vec3::new(WGS84_A, 0.0, 0.0), 1e-9);
        let pole = geodetic_to_ecef(GeodeticCoord::new(90.0, 0.0, 0.0));
        assert_close(pole.z, 6356752.3142, 1e-3);
        assert_close(pole.x, 0.0, 1e-8);
    }

    #[test]
    fn ecef_reference_point() {
        // Frozen from an independent closed-form evaluation of the WGS84
        // ellipsoid mapping (prime-vertical radius form), cross-checked
        // against the semi-axis constants above.
        let p = geodetic_to_ecef(POSE1);
        assert_vec_close(
            p,
            Vec3::new(4168964.2639110093, 865232.7496198338, 4733615.788941497),
            1e-6,
        );
    }

    #[test]
    fn geodetic_round_trip() {
        let g = ecef_to_geodetic(geodetic_to_ecef(POSE1));
        let back = geodetic_to_ecef(g);
        let fwd = geodetic_to_ecef(POSE1);
        assert!(back.sub(fwd).norm() < 1e-6);
    }

    #[test]
    fn car_frame_anchors_reference_point() {
        let t = car_frame_transform(POSE1, 37.0);
        let own = t.apply(geodetic_to_ecef(POSE1));
        assert_vec_close(own, Vec3::new(2.0, -0.4, 0.0), 1e-8);
    }

    #[test]
    fn car_frame_point_ahead() {
        // Local tangent-plane oracle: a point displaced 10 m along the
        // heading direction in the tangent plane lands at x = 12 in the
        // driver frame, with curvature-scale (sub-mm) z error.
        let heading = 123.0;
        let t = car_frame_transform(POSE1, heading);
        let (east, north, _) = enu_basis(POSE1);
        let h = math::to_rad(heading);
        let fwd = east.scale(math::sin(h)).add(north.scale(math::cos(h)));
        let p = geodetic_to_ecef(POSE1).add(fwd.scale(10.0));
        let car = t.apply(p);
        assert_vec_close(car, Vec3::new(12.0, -0.4, 0.0), 1e-3);
    }

    #[test]
    fn car_frame_round_trip() {
        let t = car_frame_transform(POSE1, -41.5);
        let inv = t.invert();
        let p = Vec3::new(4168901.0, 865301.5, 4733640.25);
        let back = inv.apply(t.apply(p));
        assert!(back.sub(p).norm() < 1e-6);
    }

    #[test]
    fn affine_rejects_sheared_rotation() {
        let m = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(
            AffineTransform::new(m, Vec3::ZERO).unwrap_err(),
            GeometryError::InvalidTransform
        );
        // Reflections (det = -1) are rejected too.
        let m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(AffineTransform::new(m, Vec3::ZERO).is_err());
    }
}
