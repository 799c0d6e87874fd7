//! Step-by-step rollout logging and its CSV serialization.
//!
//! One row is written per vehicle per step, capturing the state at decision
//! time, the chosen control, solver feasibility, and the active barrier
//! values. The CSV writer is hand-rolled so the byte stream is fully
//! deterministic: floats use Rust's shortest-roundtrip formatting, absent
//! barrier values (no leader / no conflict) are empty fields, and rows appear
//! in simulation order.

use std::io::Write;
use std::path::Path;

use super::scenario::Road;

#[derive(Debug, Clone)]
pub struct LogRow {
    pub step: u64,
    pub time: f64,
    pub cav_id: u64,
    pub road: Road,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub accel: f64,
    pub steer: f64,
    pub feasible: bool,
    pub b_ellipse: Option<f64>,
    pub b_merge: Option<f64>,
    pub b_road_left: f64,
    pub b_road_right: f64,
    pub fuel_rate: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutLog {
    pub rows: Vec<LogRow>,
}

pub const CSV_HEADER: &str =
    "step,time,cav_id,lane,x,y,psi,v,u,phi,feasible,b_ellipse,b_merge,b_road_l,b_road_r,fuel_rate";

fn push_float(out: &mut String, v: f64) {
    // Shortest-roundtrip decimal form: deterministic for identical bits.
    out.push_str(&format!("{v}"));
}

impl RolloutLog {
    pub fn push(&mut self, row: LogRow) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 + self.rows.len() * 96);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.step.to_string());
            out.push(',');
            push_float(&mut out, r.time);
            out.push(',');
            out.push_str(&r.cav_id.to_string());
            out.push(',');
            out.push_str(&r.road.lane_code().to_string());
            out.push(',');
            push_float(&mut out, r.x);
            out.push(',');
            push_float(&mut out, r.y);
            out.push(',');
            push_float(&mut out, r.psi);
            out.push(',');
            push_float(&mut out, r.v);
            out.push(',');
            push_float(&mut out, r.accel);
            out.push(',');
            push_float(&mut out, r.steer);
            out.push(',');
            out.push(if r.feasible { '1' } else { '0' });
            out.push(',');
            if let Some(b) = r.b_ellipse {
                push_float(&mut out, b);
            }
            out.push(',');
            if let Some(b) = r.b_merge {
                push_float(&mut out, b);
            }
            out.push(',');
            push_float(&mut out, r.b_road_left);
            out.push(',');
            push_float(&mut out, r.b_road_right);
            out.push(',');
            push_float(&mut out, r.fuel_rate);
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_csv().as_bytes())?;
        file.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row() -> LogRow {
        LogRow {
            step: 3,
            time: 0.6000000000000001,
            cav_id: 7,
            road: Road::Ramp,
            x: -42.5,
            y: -11.25,
            psi: 0.2617993877991494,
            v: 9.5,
            accel: -1.25,
            steer: 0.0,
            feasible: true,
            b_ellipse: Some(0.75),
            b_merge: None,
            b_road_left: 39999.0,
            b_road_right: 40001.5,
            fuel_rate: 0.385,
        }
    }

    #[test]
    fn csv_row_layout_is_exact() {
        let mut log = RolloutLog::default();
        log.push(sample_row());
        let text = log.to_csv();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "3,0.6000000000000001,7,1,-42.5,-11.25,0.2617993877991494,9.5,-1.25,0,1,0.75,,39999,40001.5,0.385"
        );
        assert!(lines.next().is_none());
    }

    #[test]
    fn identical_rows_serialize_to_identical_bytes() {
        let mut a = RolloutLog::default();
        let mut b = RolloutLog::default();
        for _ in 0..5 {
            a.push(sample_row());
            b.push(sample_row());
        }
        assert_eq!(a.to_csv().into_bytes(), b.to_csv().into_bytes());
    }

    #[test]
    fn missing_neighbors_leave_empty_fields() {
        let mut row = sample_row();
        row.b_ellipse = None;
        row.b_merge = None;
        row.feasible = false;
        let mut log = RolloutLog::default();
        log.push(row);
        let text = log.to_csv();
        let data_line = text.lines().nth(1).unwrap();
        let fields: Vec<&str> = data_line.split(',').collect();
        assert_eq!(fields.len(), 16);
        assert_eq!(fields[10], "0"); // feasible flag
        assert_eq!(fields[11], "");
        assert_eq!(fields[12], "");
    }
}
