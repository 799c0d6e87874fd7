//! Episode metrics: travel time, control effort, fuel, and infeasibility.
//!
//! Fuel consumption uses a polynomial rate model in speed with an additional
//! positive-acceleration term:
//!
//! ```text
//!   f(v, u) = w0 + w1 v + w2 v^2 + w3 v^3 + max(u, 0) (r0 + r1 v + r2 v^2)
//! ```
//!
//! Per-vehicle integrals accumulate with the controls held constant over
//! each step: effort adds (u^2 / 2) dt exactly, fuel uses the trapezoid of
//! the rate between the step's endpoint states. A vehicle's final partial
//! step (when it crosses the merge point mid-step) contributes its
//! interpolated fraction.

use serde::{Deserialize, Serialize};

use super::scenario::Road;

/// Speed-polynomial and acceleration-term coefficients of the fuel model.
pub const FUEL_W: [f64; 4] = [0.1569, 2.450e-2, -7.415e-4, 5.975e-5];
pub const FUEL_R: [f64; 3] = [0.07224, 9.681e-2, 1.075e-3];

/// Instantaneous fuel rate at speed `v` under acceleration `u`.
pub fn fuel_rate(v: f64, u: f64) -> f64 {
    let cruise = FUEL_W[0] + FUEL_W[1] * v + FUEL_W[2] * v * v + FUEL_W[3] * v * v * v;
    let accel = u.max(0.0) * (FUEL_R[0] + FUEL_R[1] * v + FUEL_R[2] * v * v);
    cruise + accel
}

/// Lifetime record of one vehicle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CavRecord {
    pub id: u64,
    pub road: Road,
    pub spawn_time: f64,
    /// Interpolated merge-point crossing time; `None` when the episode ended
    /// first.
    pub exit_time: Option<f64>,
    /// Integral of u^2 / 2 over the vehicle's active time.
    pub effort_integral: f64,
    /// Trapezoid integral of the fuel rate over the vehicle's active time.
    pub fuel_integral: f64,
    pub steps: u64,
    pub infeasible_steps: u64,
}

impl CavRecord {
    pub fn new(id: u64, road: Road, spawn_time: f64) -> Self {
        Self {
            id,
            road,
            spawn_time,
            exit_time: None,
            effort_integral: 0.0,
            fuel_integral: 0.0,
            steps: 0,
            infeasible_steps: 0,
        }
    }

    pub fn travel_time(&self) -> Option<f64> {
        self.exit_time.map(|t| t - self.spawn_time)
    }
}

/// Aggregated episode result. Means cover completed vehicles only; vehicles
/// still in the zone when the episode ends are counted in `incomplete` and
/// excluded from the means, while their infeasible steps still count toward
/// the total.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub completed: usize,
    pub incomplete: usize,
    pub mean_travel_time: f64,
    /// Mean over vehicles of the time-averaged control effort u^2 / 2.
    pub mean_effort: f64,
    /// Mean over vehicles of total fuel consumed in the zone.
    pub mean_fuel: f64,
    /// Total infeasible controller steps across all vehicles and all steps.
    pub infeasible_steps: u64,
    pub total_steps: u64,
    pub duration: f64,
}

pub fn summarize(records: &[CavRecord], duration: f64) -> EpisodeMetrics {
    let completed: Vec<&CavRecord> = records.iter().filter(|r| r.exit_time.is_some()).collect();
    let n = completed.len();
    let mean = |f: &dyn Fn(&CavRecord) -> f64| -> f64 {
        if n == 0 {
            0.0
        } else {
            completed.iter().map(|r| f(r)).sum::<f64>() / n as f64
        }
    };
    EpisodeMetrics {
        completed: n,
        incomplete: records.len() - n,
        mean_travel_time: mean(&|r| r.travel_time().unwrap()),
        mean_effort: mean(&|r| r.effort_integral / r.travel_time().unwrap()),
        mean_fuel: mean(&|r| r.fuel_integral),
        infeasible_steps: records.iter().map(|r| r.infeasible_steps).sum(),
        total_steps: records.iter().map(|r| r.steps).sum(),
        duration,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fuel_rate_matches_hand_value_at_cruise() {
        // 0.1569 + 0.245 - 0.07415 + 0.05975 = 0.3875 at v = 10, u = 0.
        assert_relative_eq!(fuel_rate(10.0, 0.0), 0.3875, epsilon = 1e-9);
    }

    #[test]
    fn braking_adds_no_fuel_term() {
        assert_relative_eq!(fuel_rate(10.0, -3.0), fuel_rate(10.0, 0.0), epsilon = 1e-15);
        let with_accel = fuel_rate(10.0, 2.0);
        let term = 2.0 * (0.07224 + 0.9681 + 0.1075);
        assert_relative_eq!(with_accel - 0.3875, term, epsilon = 1e-9);
    }

    #[test]
    fn travel_time_is_exit_minus_spawn() {
        let mut r = CavRecord::new(0, Road::Main, 2.0);
        r.exit_time = Some(12.94);
        assert_relative_eq!(r.travel_time().unwrap(), 10.94, epsilon = 1e-12);
    }

    #[test]
    fn constant_acceleration_effort_averages_to_half_u_squared() {
        // u = 2 held for 3 s: the integral of u^2/2 is 6, the time average 2.
        let mut r = CavRecord::new(1, Road::Ramp, 0.0);
        let dt = 0.2;
        for _ in 0..15 {
            r.effort_integral += 0.5 * 2.0_f64.powi(2) * dt;
            r.steps += 1;
        }
        r.exit_time = Some(3.0);
        let m = summarize(&[r], 3.0);
        assert_relative_eq!(m.mean_effort, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn trapezoid_fuel_over_two_steps_matches_hand_arithmetic() {
        // Speed 10 -> 10.4 -> 10.8 under u = 2, dt = 0.2: each step adds
        // dt/2 (f(v_k, u) + f(v_{k+1}, u)).
        let dt = 0.2;
        let f0 = fuel_rate(10.0, 2.0);
        let f1 = fuel_rate(10.4, 2.0);
        let f2 = fuel_rate(10.8, 2.0);
        let hand = dt / 2.0 * (f0 + f1) + dt / 2.0 * (f1 + f2);
        let mut acc = 0.0;
        let speeds = [10.0, 10.4, 10.8];
        for k in 0..2 {
            acc += dt / 2.0 * (fuel_rate(speeds[k], 2.0) + fuel_rate(speeds[k + 1], 2.0));
        }
        assert_relative_eq!(acc, hand, epsilon = 1e-15);
    }

    #[test]
    fn incomplete_vehicles_are_excluded_from_means_but_counted() {
        let mut done = CavRecord::new(0, Road::Main, 1.0);
        done.exit_time = Some(9.0);
        done.effort_integral = 8.0;
        done.fuel_integral = 3.0;
        done.infeasible_steps = 1;
        let mut stuck = CavRecord::new(1, Road::Ramp, 5.0);
        stuck.effort_integral = 100.0;
        stuck.fuel_integral = 100.0;
        stuck.infeasible_steps = 4;
        let m = summarize(&[done, stuck], 20.0);
        assert_eq!(m.completed, 1);
        assert_eq!(m.incomplete, 1);
        assert_relative_eq!(m.mean_travel_time, 8.0, epsilon = 1e-12);
        assert_relative_eq!(m.mean_effort, 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.mean_fuel, 3.0, epsilon = 1e-12);
        assert_eq!(m.infeasible_steps, 5);
    }

    #[test]
    fn empty_record_set_summarizes_to_zeros() {
        let m = summarize(&[], 0.0);
        assert_eq!(m.completed, 0);
        assert_eq!(m.incomplete, 0);
        assert_eq!(m.mean_travel_time, 0.0);
    }
}
