//! Merging-scenario geometry: two straight control-zone roads meeting at a
//! merge point, each bounded by large road-edge circles.
//!
//! The merge point sits at the origin. The main road runs along the x axis
//! and the ramp approaches from the lower left at the configured angle; both
//! have the same control-zone length, and a vehicle leaves the episode when
//! its progress crosses that length. Road edges are modeled as circles of
//! 10 km radius so they carry well-defined first and second Lie derivatives;
//! over a 100 m zone the circular edge deviates from the straight lane line
//! by only 0.125 m at the ends.

use serde::{Deserialize, Serialize};

use crate::barrier::RoadCircle;
use crate::config::AppConfig;
use crate::controller::LaneContext;
use crate::dynamics::VehicleState;
use crate::geometry::RouteLine;

/// Which approach road a vehicle drives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Road {
    Main,
    Ramp,
}

impl Road {
    pub fn other(self) -> Self {
        match self {
            Road::Main => Road::Ramp,
            Road::Ramp => Road::Main,
        }
    }

    /// Stable numeric code used in CSV output.
    pub fn lane_code(self) -> u8 {
        match self {
            Road::Main => 0,
            Road::Ramp => 1,
        }
    }
}

impl std::fmt::Display for Road {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Road::Main => write!(f, "main"),
            Road::Ramp => write!(f, "ramp"),
        }
    }
}

const EDGE_RADIUS: f64 = 1.0e4;

#[derive(Debug, Clone)]
pub struct MergeGeometry {
    pub main: RouteLine,
    pub ramp: RouteLine,
    pub main_left: RoadCircle,
    pub main_right: RoadCircle,
    pub ramp_left: RoadCircle,
    pub ramp_right: RoadCircle,
    pub lane_width: f64,
}

fn edge_circles(route: &RouteLine, lane_width: f64) -> (RoadCircle, RoadCircle) {
    let mid = route.point_at(route.length / 2.0);
    let n = route.normal();
    let half = lane_width / 2.0;
    let left = RoadCircle {
        center: [mid[0] + (half + EDGE_RADIUS) * n[0], mid[1] + (half + EDGE_RADIUS) * n[1]],
        radius: EDGE_RADIUS,
    };
    let right = RoadCircle {
        center: [
            mid[0] + (EDGE_RADIUS - half) * n[0],
            mid[1] + (EDGE_RADIUS - half) * n[1],
        ],
        radius: EDGE_RADIUS,
    };
    (left, right)
}

impl MergeGeometry {
    pub fn from_config(cfg: &AppConfig) -> Self {
        let length = cfg.scenario.road_length;
        let angle = cfg.scenario.ramp_angle;
        let main = RouteLine::new([-length, 0.0], 0.0, length);
        let ramp = RouteLine::new(
            [-length * angle.cos(), -length * angle.sin()],
            angle,
            length,
        );
        let (main_left, main_right) = edge_circles(&main, cfg.scenario.lane_width);
        let (ramp_left, ramp_right) = edge_circles(&ramp, cfg.scenario.lane_width);
        Self { main, ramp, main_left, main_right, ramp_left, ramp_right, lane_width: cfg.scenario.lane_width }
    }

    pub fn route(&self, road: Road) -> &RouteLine {
        match road {
            Road::Main => &self.main,
            Road::Ramp => &self.ramp,
        }
    }

    pub fn edges(&self, road: Road) -> (RoadCircle, RoadCircle) {
        match road {
            Road::Main => (self.main_left, self.main_right),
            Road::Ramp => (self.ramp_left, self.ramp_right),
        }
    }

    /// Everything a controller on `road` needs to know about its lane.
    pub fn lane_context(&self, road: Road, cfg: &AppConfig) -> LaneContext {
        let (left, right) = self.edges(road);
        LaneContext {
            route: *self.route(road),
            other_route: *self.route(road.other()),
            road_left: left,
            road_right: right,
            v_min: cfg.limits.v_min,
            v_max: cfg.limits.v_max,
            v_des: cfg.mpc.v_des,
        }
    }

    /// Vehicle pose at a given progress along a road's centerline.
    pub fn spawn_state(&self, road: Road, progress: f64, speed: f64) -> VehicleState {
        let route = self.route(road);
        let p = route.point_at(progress);
        VehicleState::new(p[0], p[1], route.heading, speed)
    }

    /// Remaining distance to the merge point along the vehicle's road.
    pub fn distance_to_merge(&self, road: Road, state: &VehicleState) -> f64 {
        let route = self.route(road);
        route.length - route.progress(state.x, state.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn geometry() -> MergeGeometry {
        MergeGeometry::from_config(&AppConfig::default())
    }

    #[test]
    fn both_roads_end_at_the_merge_point() {
        let g = geometry();
        let main_end = g.main.point_at(g.main.length);
        let ramp_end = g.ramp.point_at(g.ramp.length);
        assert_relative_eq!(main_end[0], 0.0, epsilon = 1e-9);
        assert_relative_eq!(main_end[1], 0.0, epsilon = 1e-9);
        assert_relative_eq!(ramp_end[0], 0.0, epsilon = 1e-9);
        assert_relative_eq!(ramp_end[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn edge_circles_pass_through_the_lane_boundaries() {
        let g = geometry();
        for road in [Road::Main, Road::Ramp] {
            let route = g.route(road);
            let (left, right) = g.edges(road);
            let mid = route.point_at(route.length / 2.0);
            let n = route.normal();
            let half = g.lane_width / 2.0;
            let left_edge = [mid[0] + half * n[0], mid[1] + half * n[1]];
            let right_edge = [mid[0] - half * n[0], mid[1] - half * n[1]];
            let d_left = ((left_edge[0] - left.center[0]).powi(2)
                + (left_edge[1] - left.center[1]).powi(2))
            .sqrt();
            let d_right = ((right_edge[0] - right.center[0]).powi(2)
                + (right_edge[1] - right.center[1]).powi(2))
            .sqrt();
            assert_relative_eq!(d_left, left.radius, epsilon = 1e-9);
            assert_relative_eq!(d_right, right.radius, epsilon = 1e-9);
        }
    }

    #[test]
    fn centerline_stays_within_the_edge_barriers() {
        let g = geometry();
        for road in [Road::Main, Road::Ramp] {
            let route = g.route(road);
            let (left, right) = g.edges(road);
            for i in 0..=10 {
                let s = route.length * (i as f64) / 10.0;
                let p = route.point_at(s);
                let dl = ((p[0] - left.center[0]).powi(2) + (p[1] - left.center[1]).powi(2)).sqrt();
                let dr =
                    ((p[0] - right.center[0]).powi(2) + (p[1] - right.center[1]).powi(2)).sqrt();
                assert!(dl > left.radius, "{road} centerline inside left circle at s={s}");
                assert!(dr < right.radius, "{road} centerline outside right circle at s={s}");
            }
        }
    }

    #[test]
    fn chord_sag_of_the_edge_circles_is_small() {
        // At the ends of a 100 m zone the circular edge bows 0.125 m outward
        // from the straight lane line: the clearance from the centerline end
        // to the circle is the lane half-width plus the sag r - sqrt(r^2 - h^2)
        // with half-chord h = 50.
        let g = geometry();
        let route = &g.main;
        let end = route.point_at(0.0);
        let left = g.main_left;
        let d = ((end[0] - left.center[0]).powi(2) + (end[1] - left.center[1]).powi(2)).sqrt();
        let sag = d - left.radius - g.lane_width / 2.0;
        assert!(sag > 0.1 && sag < 0.15, "sag {sag}");
    }

    #[test]
    fn spawn_state_sits_on_the_route_origin() {
        let g = geometry();
        let s = g.spawn_state(Road::Ramp, 0.0, 10.0);
        assert_relative_eq!(s.x, g.ramp.origin[0], epsilon = 1e-12);
        assert_relative_eq!(s.y, g.ramp.origin[1], epsilon = 1e-12);
        assert_relative_eq!(s.psi, g.ramp.heading, epsilon = 1e-12);
        assert_relative_eq!(g.distance_to_merge(Road::Ramp, &s), 100.0, epsilon = 1e-9);
    }
}
