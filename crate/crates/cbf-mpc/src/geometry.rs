//! Straight-route geometry shared by barriers, the controller objective, and
//! the merging scenario.

use serde::{Deserialize, Serialize};

/// A straight route segment: starts at `origin`, runs along `heading` for
/// `length` meters, ending at the merging point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteLine {
    pub origin: [f64; 2],
    pub heading: f64,
    pub length: f64,
}

impl RouteLine {
    pub fn new(origin: [f64; 2], heading: f64, length: f64) -> Self {
        Self { origin, heading, length }
    }

    /// Unit tangent along the direction of travel.
    pub fn tangent(&self) -> [f64; 2] {
        [self.heading.cos(), self.heading.sin()]
    }

    /// Unit left normal (90 degrees counterclockwise from the tangent).
    pub fn normal(&self) -> [f64; 2] {
        [-self.heading.sin(), self.heading.cos()]
    }

    /// Arc-length progress of a point measured from the route origin.
    pub fn progress(&self, x: f64, y: f64) -> f64 {
        let t = self.tangent();
        (x - self.origin[0]) * t[0] + (y - self.origin[1]) * t[1]
    }

    /// Signed lateral offset of a point from the centerline (positive to the
    /// left of travel).
    pub fn lateral_offset(&self, x: f64, y: f64) -> f64 {
        let n = self.normal();
        (x - self.origin[0]) * n[0] + (y - self.origin[1]) * n[1]
    }

    /// Point on the centerline at a given progress.
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let t = self.tangent();
        [self.origin[0] + s * t[0], self.origin[1] + s * t[1]]
    }

    /// The end of the route (progress = length).
    pub fn end(&self) -> [f64; 2] {
        self.point_at(self.length)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn progress_and_offset_on_axis_aligned_route() {
        let route = RouteLine::new([-100.0, 0.0], 0.0, 100.0);
        assert_relative_eq!(route.progress(-40.0, 1.0), 60.0, epsilon = 1e-12);
        assert_relative_eq!(route.lateral_offset(-40.0, 1.0), 1.0, epsilon = 1e-12);
        assert_eq!(route.end(), [0.0, 0.0]);
    }

    #[test]
    fn angled_route_decomposes_points_consistently() {
        let heading = 0.3;
        let route = RouteLine::new([2.0, -1.0], heading, 50.0);
        let p = route.point_at(20.0);
        let n = route.normal();
        let q = [p[0] + 0.7 * n[0], p[1] + 0.7 * n[1]];
        assert_relative_eq!(route.progress(q[0], q[1]), 20.0, epsilon = 1e-12);
        assert_relative_eq!(route.lateral_offset(q[0], q[1]), 0.7, epsilon = 1e-12);
    }
}
