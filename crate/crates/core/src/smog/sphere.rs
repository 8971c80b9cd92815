use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::geometry::cloud::{norm, Point3};

/// Tolerance on `‖v‖ = 1` accepted by [`cart_to_sph`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// `|z|` above this counts as a pole, where θ is fixed to 0.
pub const POLE_THRESHOLD: f64 = 1.0 - 1e-12;

/// Azimuth θ ∈ [0, 2π) and elevation ϕ ∈ [0, π] measured from +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    pub theta: f64,
    pub phi: f64,
}

impl SphericalCoord {
    /// Wraps θ into [0, 2π) and reflects ϕ into [0, π], shifting θ by π on
    /// each reflection so the point on the sphere is unchanged.
    pub fn canonical(theta: f64, phi: f64) -> Self {
        let mut theta = theta;
        let mut phi = phi.rem_euclid(TAU);
        if phi > PI {
            phi = TAU - phi;
            theta += PI;
        }
        Self {
            theta: wrap_angle(theta),
            phi,
        }
    }
}

/// `x mod 2π` in [0, 2π).
pub fn wrap_angle(x: f64) -> f64 {
    let w = x.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Signed shortest angular difference `a − b` in (−π, π].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

pub fn cart_to_sph(v: &Point3) -> Result<SphericalCoord> {
    let n = norm(v);
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::NonUnitVector(n));
    }
    let z = (v[2] / n).clamp(-1.0, 1.0);
    if z.abs() > POLE_THRESHOLD {
        return Ok(SphericalCoord {
            theta: 0.0,
            phi: if z > 0.0 { 0.0 } else { PI },
        });
    }
    Ok(SphericalCoord {
        theta: wrap_angle(v[1].atan2(v[0])),
        phi: z.acos(),
    })
}

pub fn sph_to_cart(s: &SphericalCoord) -> Point3 {
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.phi.sin_cos();
    [sp * ct, sp * st, cp]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poles_and_equator() {
        assert_eq!(
            cart_to_sph(&[0.0, 0.0, 1.0]).unwrap(),
            SphericalCoord {
                theta: 0.0,
                phi: 0.0
            }
        );
        assert_eq!(
            cart_to_sph(&[0.0, 0.0, -1.0]).unwrap(),
            SphericalCoord {
                theta: 0.0,
                phi: PI
            }
        );
        let s = cart_to_sph(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.theta, 0.0);
        assert!((s.phi - PI / 2.0).abs() < 1e-15);
        let s = cart_to_sph(&[0.0, -1.0, 0.0]).unwrap();
        assert!((s.theta - 1.5 * PI).abs() < 1e-15);
    }

    #[test]
    fn non_unit_rejected() {
        assert!(matches!(
            cart_to_sph(&[2.0, 0.0, 0.0]),
            Err(Error::NonUnitVector(_))
        ));
        assert!(cart_to_sph(&[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn canonical_reflects() {
        let s = SphericalCoord::canonical(0.5, -0.2);
        assert!((s.phi - 0.2).abs() < 1e-15);
        assert!((s.theta - (0.5 + PI)).abs() < 1e-15);
        let s = SphericalCoord::canonical(6.0, PI + 0.3);
        assert!((s.phi - (PI - 0.3)).abs() < 1e-12);
        assert!((s.theta - (6.0 + PI - TAU)).abs() < 1e-12);
        let s = SphericalCoord::canonical(-1e-20, 1.0);
        assert!(s.theta >= 0.0 && s.theta < TAU);
    }

    #[test]
    fn canonical_preserves_point() {
        for (t, p) in [(0.3f64, -0.4f64), (-2.0, 3.5), (10.0, 7.0), (1.0, -4.0)] {
            let raw = [p.sin() * t.cos(), p.sin() * t.sin(), p.cos()];
            let c = sph_to_cart(&SphericalCoord::canonical(t, p));
            for k in 0..3 {
                assert!((raw[k] - c[k]).abs() < 1e-12, "{t} {p}");
            }
        }
    }

    #[test]
    fn diff_is_shortest() {
        assert!((angle_diff(0.1, TAU - 0.1) - 0.2).abs() < 1e-12);
        assert!((angle_diff(TAU - 0.1, 0.1) + 0.2).abs() < 1e-12);
        assert_eq!(angle_diff(1.0, 1.0), 0.0);
    }
}
