//! Disc-contact geometry shared by the fine simulator, the analytical coarse
//! model and the training loss.

use crate::error::{Error, Result};
use crate::state::Vec2;

/// Split of a pusher path into free travel and travel in contact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactSplit {
    pub d_free: f64,
    pub d_contact: f64,
}

impl ContactSplit {
    pub fn total(&self) -> f64 {
        self.d_free + self.d_contact
    }

    /// Fraction of the path spent in contact; zero for an empty path.
    pub fn contact_fraction(&self) -> f64 {
        let total = self.total();
        if total > 0.0 {
            self.d_contact / total
        } else {
            0.0
        }
    }
}

/// Overlap of two discs, zero when they do not intersect.
pub fn penetration_depth(center_a: &Vec2, r_a: f64, center_b: &Vec2, r_b: f64) -> f64 {
    ((r_a + r_b) - (center_a - center_b).norm()).max(0.0)
}

/// Path-length interval `[enter, exit]` along a straight pusher path during
/// which the pusher center is within `combined_radius` of `slider_center`.
/// `None` when the path never touches the disc (or only grazes it).
pub fn contact_interval(
    pusher_start: &Vec2,
    pusher_motion: &Vec2,
    slider_center: &Vec2,
    combined_radius: f64,
) -> Option<(f64, f64)> {
    let length = pusher_motion.norm();
    if length == 0.0 {
        return None;
    }
    let dir = pusher_motion / length;
    let offset = pusher_start - slider_center;
    let b = offset.dot(&dir);
    let c = offset.norm_squared() - combined_radius * combined_radius;
    let disc = b * b - c;
    if disc <= 0.0 {
        return None;
    }
    let root = disc.sqrt();
    let enter = (-b - root).max(0.0);
    let exit = (-b + root).min(length);
    (exit > enter).then_some((enter, exit))
}

/// Ray-disc intersection of the pusher path against the Minkowski disc of
/// radius `combined_radius` around a slider held at its start pose.
pub fn swept_contact_split(
    pusher_start: &Vec2,
    pusher_motion: &Vec2,
    slider_center: &Vec2,
    combined_radius: f64,
) -> ContactSplit {
    let length = pusher_motion.norm();
    let d_contact = contact_interval(pusher_start, pusher_motion, slider_center, combined_radius)
        .map_or(0.0, |(enter, exit)| exit - enter);
    ContactSplit {
        d_free: (length - d_contact).max(0.0),
        d_contact,
    }
}

/// Vector `r_c` from the contact point to the slider center and the signed
/// angle `theta` from the pushing direction to `r_c` (counter-clockwise positive).
///
/// The contact point is the slider surface point on the center-to-center line.
pub fn contact_point_and_angle(
    pusher_center: &Vec2,
    slider_center: &Vec2,
    slider_radius: f64,
    pusher_velocity: &Vec2,
) -> Result<(Vec2, f64)> {
    if pusher_velocity.norm() == 0.0 {
        return Err(Error::ZeroVelocity);
    }
    let between = slider_center - pusher_center;
    let dist = between.norm();
    if dist == 0.0 {
        return Err(Error::InvalidParameter("pusher and slider centers coincide".into()));
    }
    let r_c = between * (slider_radius / dist);
    let cross = pusher_velocity.x * r_c.y - pusher_velocity.y * r_c.x;
    let theta = cross.atan2(pusher_velocity.dot(&r_c));
    Ok((r_c, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;
    use std::f64::consts::FRAC_PI_4;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    #[test]
    fn penetration_examples() {
        assert_eq!(penetration_depth(&v(0.0, 0.0), 0.0512, &v(0.2, 0.0), 0.0512), 0.0);
        assert!((penetration_depth(&v(0.3, 0.1), 0.05, &v(0.3, 0.1), 0.05) - 0.10).abs() < 1e-15);
        assert!((penetration_depth(&v(0.0, 0.0), 0.0512, &v(0.09, 0.0), 0.0512) - 0.0124).abs() < 1e-12);
    }

    #[test]
    fn split_head_on() {
        let s = swept_contact_split(&v(0.0, 0.0), &v(0.1, 0.0), &v(0.10, 0.0), 0.0657);
        assert!((s.d_free - 0.0343).abs() < 1e-12);
        assert!((s.d_contact - 0.0657).abs() < 1e-12);
    }

    #[test]
    fn split_far_path_has_no_contact() {
        let s = swept_contact_split(&v(0.0, 0.0), &v(0.0, 0.1), &v(0.5, 0.0), 0.0657);
        assert_eq!(s.d_contact, 0.0);
        assert!((s.d_free - 0.1).abs() < 1e-15);
    }

    #[test]
    fn split_zero_path() {
        let s = swept_contact_split(&v(0.0, 0.0), &v(0.0, 0.0), &v(0.05, 0.0), 0.0657);
        assert_eq!(
            s,
            ContactSplit {
                d_free: 0.0,
                d_contact: 0.0
            }
        );
        assert_eq!(s.contact_fraction(), 0.0);
    }

    #[test]
    fn split_starting_in_contact() {
        // starts touching, leaves the disc sideways after some travel
        let s = swept_contact_split(&v(0.0, 0.0), &v(0.0, 0.1), &v(0.03, 0.0), 0.0657);
        let exit = (0.0657f64.powi(2) - 0.03f64.powi(2)).sqrt();
        assert!((s.d_contact - exit).abs() < 1e-12);
        assert!((s.d_free - (0.1 - exit)).abs() < 1e-12);
    }

    #[test]
    fn head_on_angle_is_zero() {
        let (r_c, theta) = contact_point_and_angle(&v(0.0, 0.0), &v(0.0657, 0.0), 0.0512, &v(0.1, 0.0)).unwrap();
        assert_eq!(theta, 0.0);
        assert!((r_c - v(0.0512, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn perpendicular_angle() {
        let (_, theta) = contact_point_and_angle(&v(0.0, 0.0), &v(0.0657, 0.0), 0.0512, &v(0.0, 0.1)).unwrap();
        assert!((theta.abs() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn diagonal_angle() {
        let (r_c, theta) = contact_point_and_angle(&v(0.0, 0.0), &v(0.0657, 0.0), 0.0512, &v(0.1, 0.1)).unwrap();
        assert!((theta + FRAC_PI_4).abs() < 1e-12);
        assert!((r_c - v(0.0512, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn zero_velocity_is_an_error() {
        assert!(matches!(
            contact_point_and_angle(&v(0.0, 0.0), &v(0.0657, 0.0), 0.0512, &v(0.0, 0.0)),
            Err(Error::ZeroVelocity)
        ));
    }

    proptest! {
        #[test]
        fn penetration_is_symmetric(ax in -1.0f64..1.0, ay in -1.0f64..1.0, bx in -1.0f64..1.0, by in -1.0f64..1.0,
                                    ra in 0.01f64..0.5, rb in 0.01f64..0.5) {
            let (a, b) = (v(ax, ay), v(bx, by));
            prop_assert_eq!(penetration_depth(&a, ra, &b, rb), penetration_depth(&b, rb, &a, ra));
        }

        #[test]
        fn split_is_translation_invariant(sx in -0.5f64..0.5, sy in -0.5f64..0.5, mx in -0.2f64..0.2, my in -0.2f64..0.2,
                                          cx in -0.5f64..0.5, cy in -0.5f64..0.5, tx in -1.0f64..1.0, ty in -1.0f64..1.0) {
            let shift = v(tx, ty);
            let a = swept_contact_split(&v(sx, sy), &v(mx, my), &v(cx, cy), 0.0657);
            let b = swept_contact_split(&(v(sx, sy) + shift), &v(mx, my), &(v(cx, cy) + shift), 0.0657);
            prop_assert!((a.d_free - b.d_free).abs() < 1e-9);
            prop_assert!((a.d_contact - b.d_contact).abs() < 1e-9);
        }

        #[test]
        fn split_partitions_the_path(sx in -0.5f64..0.5, sy in -0.5f64..0.5, mx in -0.2f64..0.2, my in -0.2f64..0.2,
                                     cx in -0.5f64..0.5, cy in -0.5f64..0.5) {
            let motion = v(mx, my);
            let s = swept_contact_split(&v(sx, sy), &motion, &v(cx, cy), 0.0657);
            prop_assert!(s.d_free >= 0.0 && s.d_contact >= 0.0);
            prop_assert!(s.d_contact <= motion.norm() + 1e-15);
            prop_assert!((s.total() - motion.norm()).abs() < 1e-12);
        }
    }
}
