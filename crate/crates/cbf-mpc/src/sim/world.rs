//! The merging world: arrivals, conflict structure, stepping, and episodes.
//!
//! Vehicles arrive on each road as a Poisson process. Arrival times are
//! sampled continuously; an arrival becomes a vehicle at the first step
//! boundary at or after its sampled time, provided the entry is clear — a
//! new vehicle must satisfy, with a configurable margin, both the rear-end
//! barrier against the rearmost vehicle on its road and the merging barrier
//! against its would-be crossing predecessor, so every constraint it will be
//! asked to enforce starts out satisfied. Otherwise it waits at the gate
//! (preserving order) and its activation time becomes its spawn time.
//!
//! Each step runs in phases over a consistent snapshot: release arrivals,
//! resolve every vehicle's neighbors (same-road leader plus the crossing
//! predecessor when it drives on the other road), query the parameter policy
//! and solve one receding-horizon problem per vehicle, integrate everyone,
//! then audit the step: the barriers each solver claimed feasible are
//! re-evaluated at the *realized* next states, and the worst value is
//! tracked for the whole episode. Vehicles exit when their progress crosses
//! the zone length; the crossing time is interpolated inside the step and
//! the final partial step contributes proportionally to the effort and fuel
//! integrals.
//!
//! Controllers predict their neighbors from shared plans: each vehicle
//! publishes the state trajectory of its last solve, and because vehicles
//! replan in spawn order a follower always sees its leader's plan from the
//! *same* round (crossing predecessors that replan later contribute their
//! previous plan shifted one stage). Only a vehicle that has never planned —
//! one that just entered — is predicted as constant-speed drift.
//!
//! Everything is deterministic for a fixed seed: arrivals and entry speeds
//! draw from per-purpose, per-road RNG streams, vehicles are processed in
//! spawn order, and ties resolve by index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::barrier::{eval_barrier, BarrierSpec, EllipseParams, MergingParams};
use crate::config::{AppConfig, ConflictPolicy};
use crate::controller::{ControllerTheta, MpcController, NeighborModel};
use crate::dynamics::{step_rk4, ControlBounds, ControlInput, VehicleParams, VehicleState};
use crate::geometry::RouteLine;

use super::log::{LogRow, RolloutLog};
use super::metrics::{fuel_rate, summarize, CavRecord, EpisodeMetrics};
use super::scenario::{MergeGeometry, Road};

/// Everything a parameter policy may look at when choosing the controller
/// parameters for one vehicle at one step.
#[derive(Debug, Clone)]
pub struct SceneObs {
    pub cav_id: u64,
    pub ego: VehicleState,
    pub prev_control: ControlInput,
    pub leader: Option<VehicleState>,
    pub conflict: Option<VehicleState>,
    pub road: Road,
    pub v_des: f64,
    pub route: RouteLine,
    pub other_route: RouteLine,
}

/// Chooses controller parameters per vehicle per step.
pub trait ThetaPolicy {
    fn theta(&mut self, obs: &SceneObs) -> ControllerTheta;
}

/// The same parameters for every vehicle at every step.
pub struct FixedTheta(pub ControllerTheta);

impl ThetaPolicy for FixedTheta {
    fn theta(&mut self, _obs: &SceneObs) -> ControllerTheta {
        self.0
    }
}

pub struct CavAgent {
    pub id: u64,
    pub arrival_index: u64,
    pub road: Road,
    pub state: VehicleState,
    pub prev_control: ControlInput,
    pub controller: MpcController,
    pub record: CavRecord,
    exited: bool,
    /// Most recent published plan (x_0..x_N), shared with followers so their
    /// barriers see intended motion instead of constant-speed extrapolation.
    plan: Option<Vec<VehicleState>>,
}

/// Per-vehicle outcome of one world step, for training loops and diagnostics.
#[derive(Debug, Clone)]
pub struct AgentStepInfo {
    pub id: u64,
    pub road: Road,
    pub control: ControlInput,
    pub feasible: bool,
    pub violation: f64,
    pub post_state: VehicleState,
    pub exited: bool,
}

struct ArrivalQueue {
    road: Road,
    rate: f64,
    next_time: f64,
    next_speed: f64,
    rng_time: ChaCha8Rng,
    rng_speed: ChaCha8Rng,
    speed_lo: f64,
    speed_hi: f64,
}

impl ArrivalQueue {
    fn new(road: Road, seed: u64, cfg: &AppConfig) -> Self {
        // Fixed stream ids: arrival clocks on streams 0/1, entry speeds on
        // streams 2/3, so deferrals never shift unrelated draws.
        let (time_stream, speed_stream, rate) = match road {
            Road::Main => (0, 2, cfg.scenario.arrival_rate_main),
            Road::Ramp => (1, 3, cfg.scenario.arrival_rate_ramp),
        };
        let mut rng_time = ChaCha8Rng::seed_from_u64(seed);
        rng_time.set_stream(time_stream);
        let mut rng_speed = ChaCha8Rng::seed_from_u64(seed);
        rng_speed.set_stream(speed_stream);
        let mut q = Self {
            road,
            rate,
            next_time: 0.0,
            next_speed: 0.0,
            rng_time,
            rng_speed,
            speed_lo: cfg.scenario.spawn_speed_lo,
            speed_hi: cfg.scenario.spawn_speed_hi,
        };
        q.next_time = q.sample_gap();
        q.next_speed = q.sample_speed();
        q
    }

    fn sample_gap(&mut self) -> f64 {
        if self.rate <= 0.0 {
            return f64::INFINITY;
        }
        let u: f64 = self.rng_time.gen();
        -(1.0 - u).ln() / self.rate
    }

    fn sample_speed(&mut self) -> f64 {
        if self.speed_hi > self.speed_lo {
            self.rng_speed.gen_range(self.speed_lo..self.speed_hi)
        } else {
            self.speed_lo
        }
    }

    fn advance(&mut self) {
        let gap = self.sample_gap();
        self.next_time += gap;
        self.next_speed = self.sample_speed();
    }
}

/// Minimal view of one vehicle used for neighbor resolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AgentView {
    pub id: u64,
    pub arrival_index: u64,
    pub road: Road,
    pub state: VehicleState,
    pub progress: f64,
    pub dist_to_merge: f64,
}

/// Same-road leader: the nearest vehicle strictly ahead in progress.
pub(crate) fn resolve_leader(views: &[AgentView], me: usize) -> Option<usize> {
    let ego = &views[me];
    views
        .iter()
        .enumerate()
        .filter(|(i, v)| *i != me && v.road == ego.road && ahead_of(v, ego))
        .min_by(|(_, a), (_, b)| a.progress.partial_cmp(&b.progress).unwrap())
        .map(|(i, _)| i)
}

fn ahead_of(v: &AgentView, ego: &AgentView) -> bool {
    v.progress > ego.progress || (v.progress == ego.progress && v.id < ego.id)
}

/// Crossing predecessor under the configured ordering; only an other-road
/// predecessor creates a merging conflict.
pub(crate) fn resolve_conflict(
    views: &[AgentView],
    me: usize,
    policy: ConflictPolicy,
) -> Option<usize> {
    let ego = &views[me];
    let predecessor = match policy {
        ConflictPolicy::Fifo => views
            .iter()
            .enumerate()
            .filter(|(i, v)| *i != me && v.arrival_index < ego.arrival_index)
            .max_by_key(|(_, v)| v.arrival_index),
        ConflictPolicy::Sdf => views
            .iter()
            .enumerate()
            .filter(|(i, v)| {
                *i != me
                    && (v.dist_to_merge < ego.dist_to_merge
                        || (v.dist_to_merge == ego.dist_to_merge
                            && v.arrival_index < ego.arrival_index))
            })
            .max_by(|(_, a), (_, b)| {
                a.dist_to_merge
                    .partial_cmp(&b.dist_to_merge)
                    .unwrap()
                    .then(b.arrival_index.cmp(&a.arrival_index))
            }),
    };
    predecessor
        .filter(|(_, v)| v.road != ego.road)
        .map(|(i, _)| i)
}

pub struct World {
    pub cfg: AppConfig,
    pub geometry: MergeGeometry,
    pub time: f64,
    pub step_count: u64,
    pub agents: Vec<CavAgent>,
    pub finished: Vec<CavRecord>,
    pub log: RolloutLog,
    /// Worst audited post-step barrier value over all feasible steps so far.
    pub audit_min_barrier: f64,
    pub total_infeasible: u64,
    queues: Vec<ArrivalQueue>,
    next_id: u64,
    next_arrival_index: u64,
}

impl World {
    pub fn new(cfg: AppConfig, seed: u64) -> Self {
        let geometry = MergeGeometry::from_config(&cfg);
        let queues = vec![
            ArrivalQueue::new(Road::Main, seed, &cfg),
            ArrivalQueue::new(Road::Ramp, seed, &cfg),
        ];
        Self {
            geometry,
            time: 0.0,
            step_count: 0,
            agents: Vec::new(),
            finished: Vec::new(),
            log: RolloutLog::default(),
            audit_min_barrier: f64::INFINITY,
            total_infeasible: 0,
            queues,
            next_id: 0,
            next_arrival_index: 0,
            cfg,
        }
    }

    fn vehicle_params(&self) -> VehicleParams {
        VehicleParams { l_f: self.cfg.vehicle.l_f, l_r: self.cfg.vehicle.l_r }
    }

    fn control_bounds(&self) -> ControlBounds {
        ControlBounds {
            accel_min: self.cfg.limits.accel_min,
            accel_max: self.cfg.limits.accel_max,
            steer_min: self.cfg.limits.steer_min,
            steer_max: self.cfg.limits.steer_max,
        }
    }

    fn ellipse_params(&self) -> EllipseParams {
        EllipseParams {
            a_scale: self.cfg.mpc.ellipse_a,
            b_scale: self.cfg.mpc.ellipse_b,
            v_floor: self.cfg.mpc.ellipse_v_floor,
        }
    }

    fn make_controller(&self, road: Road) -> MpcController {
        MpcController::new(
            ControllerTheta::moderately_conservative(),
            self.cfg.mpc.horizon,
            self.cfg.mpc.dt,
            self.vehicle_params(),
            self.control_bounds(),
            self.geometry.lane_context(road, &self.cfg),
            self.ellipse_params(),
            self.cfg.mpc.varphi,
            self.cfg.mpc.delta,
        )
        .with_row_margin(self.cfg.mpc.row_margin)
        .with_steer_slew_rate(self.cfg.mpc.steer_slew_rate)
    }

    /// Place a vehicle directly (used by tests, examples, and training
    /// scenes). It participates in the crossing order as the latest arrival.
    pub fn insert_agent(&mut self, road: Road, progress: f64, speed: f64) -> u64 {
        let state = self.geometry.spawn_state(road, progress, speed);
        let id = self.next_id;
        self.next_id += 1;
        let arrival_index = self.next_arrival_index;
        self.next_arrival_index += 1;
        self.agents.push(CavAgent {
            id,
            arrival_index,
            road,
            state,
            prev_control: ControlInput::ZERO,
            controller: self.make_controller(road),
            record: CavRecord::new(id, road, self.time),
            exited: false,
            plan: None,
        });
        id
    }

    fn rearmost_progress_on(&self, road: Road) -> Option<(f64, VehicleState)> {
        self.agents
            .iter()
            .filter(|a| a.road == road)
            .map(|a| {
                let route = self.geometry.route(road);
                (route.progress(a.state.x, a.state.y), a.state)
            })
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
    }

    /// Release queued arrivals whose time has come, main road first. Only the
    /// head of each queue can enter, so deferral preserves arrival order.
    fn release_arrivals(&mut self) {
        for qi in 0..self.queues.len() {
            loop {
                let (road, due, speed) = {
                    let q = &self.queues[qi];
                    (q.road, q.next_time <= self.time + 1e-9, q.next_speed)
                };
                if !due {
                    break;
                }
                let candidate = self.geometry.spawn_state(road, 0.0, speed);
                let margin = self.cfg.scenario.spawn_margin;
                let clear_rear = match self.rearmost_progress_on(road) {
                    None => true,
                    Some((_, rear_state)) => {
                        let b = eval_barrier(
                            &BarrierSpec::RearEndEllipse(self.ellipse_params()),
                            &candidate,
                            Some(&rear_state),
                        );
                        matches!(b, Ok(v) if v >= margin)
                    }
                };
                // Also require the merging barrier against the would-be
                // crossing predecessor to start clear, so the entering
                // vehicle's constraint set is feasible at its first decision.
                let clear_merge = {
                    let mut views = self.views();
                    let route = self.geometry.route(road);
                    views.push(AgentView {
                        id: u64::MAX,
                        arrival_index: self.next_arrival_index,
                        road,
                        state: candidate,
                        progress: 0.0,
                        dist_to_merge: route.length,
                    });
                    let me = views.len() - 1;
                    match resolve_conflict(&views, me, self.cfg.scenario.conflict_policy) {
                        None => true,
                        Some(j) => {
                            let b = eval_barrier(
                                &BarrierSpec::SafeMerging(MergingParams {
                                    ego_route: *route,
                                    other_route: *self.geometry.route(road.other()),
                                    varphi: self.cfg.mpc.varphi,
                                    delta: self.cfg.mpc.delta,
                                }),
                                &candidate,
                                Some(&views[j].state),
                            );
                            matches!(b, Ok(v) if v >= margin)
                        }
                    }
                };
                if !(clear_rear && clear_merge) {
                    break;
                }
                self.insert_agent(road, 0.0, speed);
                self.queues[qi].advance();
            }
        }
    }

    fn views(&self) -> Vec<AgentView> {
        self.agents
            .iter()
            .map(|a| {
                let route = self.geometry.route(a.road);
                let progress = route.progress(a.state.x, a.state.y);
                AgentView {
                    id: a.id,
                    arrival_index: a.arrival_index,
                    road: a.road,
                    state: a.state,
                    progress,
                    dist_to_merge: route.length - progress,
                }
            })
            .collect()
    }

    fn obs_for(&self, views: &[AgentView], idx: usize) -> SceneObs {
        let agent = &self.agents[idx];
        let leader = resolve_leader(views, idx).map(|i| views[i].state);
        let conflict =
            resolve_conflict(views, idx, self.cfg.scenario.conflict_policy).map(|i| views[i].state);
        SceneObs {
            cav_id: agent.id,
            ego: agent.state,
            prev_control: agent.prev_control,
            leader,
            conflict,
            road: agent.road,
            v_des: self.cfg.mpc.v_des,
            route: *self.geometry.route(agent.road),
            other_route: *self.geometry.route(agent.road.other()),
        }
    }

    /// Observation for one vehicle against the current world state (used by
    /// training loops to close transitions without stepping).
    pub fn observe(&self, id: u64) -> Option<SceneObs> {
        let idx = self.agents.iter().position(|a| a.id == id)?;
        let views = self.views();
        Some(self.obs_for(&views, idx))
    }

    /// Best available prediction of agent `j`'s motion for a decision taken
    /// by agent `idx` this round. Vehicles replan in spawn order, so a
    /// neighbor earlier in the vector has already published a fresh plan; a
    /// later neighbor's previous plan is shifted one stage to align with the
    /// current time. A vehicle that has not planned yet yields `None` (the
    /// caller falls back to constant-speed drift).
    fn neighbor_plan(&self, j: usize, idx: usize) -> Option<Vec<VehicleState>> {
        let plan = self.agents[j].plan.as_ref()?;
        if j < idx {
            Some(plan.clone())
        } else {
            let mut shifted: Vec<VehicleState> = plan.iter().skip(1).copied().collect();
            let last = *shifted.last().unwrap_or_else(|| plan.last().unwrap());
            shifted.push(last);
            Some(shifted)
        }
    }

    /// Barriers audited for one vehicle, with the neighbor ids they bind to.
    fn assigned_barriers(
        &self,
        idx: usize,
        leader_id: Option<u64>,
        conflict_id: Option<u64>,
    ) -> Vec<(BarrierSpec, Option<u64>)> {
        let agent = &self.agents[idx];
        let (left, right) = self.geometry.edges(agent.road);
        let mut list = Vec::with_capacity(6);
        if let Some(lid) = leader_id {
            list.push((BarrierSpec::RearEndEllipse(self.ellipse_params()), Some(lid)));
        }
        if let Some(cid) = conflict_id {
            list.push((
                BarrierSpec::SafeMerging(MergingParams {
                    ego_route: *self.geometry.route(agent.road),
                    other_route: *self.geometry.route(agent.road.other()),
                    varphi: self.cfg.mpc.varphi,
                    delta: self.cfg.mpc.delta,
                }),
                Some(cid),
            ));
        }
        list.push((BarrierSpec::RoadLeft(left), None));
        list.push((BarrierSpec::RoadRight(right), None));
        list.push((BarrierSpec::SpeedMax { v_max: self.cfg.limits.v_max }, None));
        list.push((BarrierSpec::SpeedMin { v_min: self.cfg.limits.v_min }, None));
        list
    }

    /// Advance the world by one step. Returns per-vehicle outcomes in spawn
    /// order (vehicles that exited during the step are included and marked).
    pub fn step(&mut self, policy: &mut dyn ThetaPolicy) -> Vec<AgentStepInfo> {
        self.release_arrivals();
        let views = self.views();
        let dt = self.cfg.mpc.dt;

        struct Decision {
            control: ControlInput,
            feasible: bool,
            violation: f64,
            leader_id: Option<u64>,
            conflict_id: Option<u64>,
        }

        let mut decisions = Vec::with_capacity(self.agents.len());
        for idx in 0..self.agents.len() {
            let obs = self.obs_for(&views, idx);
            let leader_idx = resolve_leader(&views, idx);
            let conflict_idx = resolve_conflict(&views, idx, self.cfg.scenario.conflict_policy);
            let leader_id = leader_idx.map(|i| views[i].id);
            let conflict_id = conflict_idx.map(|i| views[i].id);
            let leader_plan = leader_idx.and_then(|j| self.neighbor_plan(j, idx));
            let conflict_plan = conflict_idx.and_then(|j| self.neighbor_plan(j, idx));
            let theta = policy.theta(&obs);

            let (left, right) = self.geometry.edges(self.agents[idx].road);
            let b_ellipse = obs.leader.as_ref().and_then(|l| {
                eval_barrier(&BarrierSpec::RearEndEllipse(self.ellipse_params()), &obs.ego, Some(l)).ok()
            });
            let b_merge = obs.conflict.as_ref().and_then(|c| {
                eval_barrier(
                    &BarrierSpec::SafeMerging(MergingParams {
                        ego_route: obs.route,
                        other_route: obs.other_route,
                        varphi: self.cfg.mpc.varphi,
                        delta: self.cfg.mpc.delta,
                    }),
                    &obs.ego,
                    Some(c),
                )
                .ok()
            });
            let b_road_left = eval_barrier(&BarrierSpec::RoadLeft(left), &obs.ego, None)
                .expect("road barrier is defined everywhere");
            let b_road_right = eval_barrier(&BarrierSpec::RoadRight(right), &obs.ego, None)
                .expect("road barrier is defined everywhere");

            let agent = &mut self.agents[idx];
            agent.controller.set_theta(theta);
            let leader_model = match (&leader_plan, &obs.leader) {
                (Some(p), _) => NeighborModel::Plan(p),
                (None, Some(s)) => NeighborModel::Drift(s),
                (None, None) => NeighborModel::None,
            };
            let conflict_model = match (&conflict_plan, &obs.conflict) {
                (Some(p), _) => NeighborModel::Plan(p),
                (None, Some(s)) => NeighborModel::Drift(s),
                (None, None) => NeighborModel::None,
            };
            let step = agent.controller.compute_control_with(&obs.ego, leader_model, conflict_model);
            agent.plan = Some(step.predicted.clone());
            agent.record.steps += 1;
            if !step.feasible {
                agent.record.infeasible_steps += 1;
            }
            agent.prev_control = step.control;
            let row = LogRow {
                step: self.step_count,
                time: self.time,
                cav_id: agent.id,
                road: agent.road,
                x: obs.ego.x,
                y: obs.ego.y,
                psi: obs.ego.psi,
                v: obs.ego.v,
                accel: step.control.accel,
                steer: step.control.steer,
                feasible: step.feasible,
                b_ellipse,
                b_merge,
                b_road_left,
                b_road_right,
                fuel_rate: fuel_rate(obs.ego.v, step.control.accel),
            };
            self.log.push(row);
            if !step.feasible {
                self.total_infeasible += 1;
            }
            decisions.push(Decision {
                control: step.control,
                feasible: step.feasible,
                violation: step.violation,
                leader_id,
                conflict_id,
            });
        }

        // Integrate everyone, accumulating effort/fuel and interpolating exits.
        let params = self.vehicle_params();
        let mut infos = Vec::with_capacity(self.agents.len());
        for (idx, d) in decisions.iter().enumerate() {
            let agent = &mut self.agents[idx];
            let route = self.geometry.route(agent.road);
            let old = agent.state;
            let s_old = route.progress(old.x, old.y);
            let new = step_rk4(&old, &d.control, &params, dt);
            let s_new = route.progress(new.x, new.y);
            agent.state = new;
            let u = d.control.accel;
            if s_new >= route.length && s_new > s_old {
                let frac = ((route.length - s_old) / (s_new - s_old)).clamp(0.0, 1.0);
                let t_exit = self.time + frac * dt;
                let v_exit = old.v + frac * (new.v - old.v);
                agent.record.effort_integral += 0.5 * u * u * frac * dt;
                agent.record.fuel_integral +=
                    frac * dt / 2.0 * (fuel_rate(old.v, u) + fuel_rate(v_exit, u));
                agent.record.exit_time = Some(t_exit);
                agent.exited = true;
            } else {
                agent.record.effort_integral += 0.5 * u * u * dt;
                agent.record.fuel_integral += dt / 2.0 * (fuel_rate(old.v, u) + fuel_rate(new.v, u));
            }
            infos.push(AgentStepInfo {
                id: agent.id,
                road: agent.road,
                control: d.control,
                feasible: d.feasible,
                violation: d.violation,
                post_state: agent.state,
                exited: agent.exited,
            });
        }

        // Audit: re-evaluate each feasible step's assigned barriers at the
        // realized next states. Speeds are floored the same way the rows were
        // built, so the audit measures exactly what the solver promised.
        for (idx, d) in decisions.iter().enumerate() {
            if !d.feasible {
                continue;
            }
            for (spec, neighbor_id) in self.assigned_barriers(idx, d.leader_id, d.conflict_id) {
                let mut ego = self.agents[idx].state;
                ego.v = ego.v.max(self.cfg.mpc.ellipse_v_floor);
                let other = neighbor_id.map(|nid| {
                    self.agents
                        .iter()
                        .find(|a| a.id == nid)
                        .expect("audit neighbor is still present at audit time")
                        .state
                });
                let b = eval_barrier(&spec, &ego, other.as_ref())
                    .unwrap_or(f64::NEG_INFINITY);
                if b < self.audit_min_barrier {
                    self.audit_min_barrier = b;
                }
            }
        }

        // Retire vehicles that crossed the merge point.
        let mut remaining = Vec::with_capacity(self.agents.len());
        for agent in self.agents.drain(..) {
            if agent.exited {
                self.finished.push(agent.record);
            } else {
                remaining.push(agent);
            }
        }
        self.agents = remaining;

        self.time += dt;
        self.step_count += 1;
        infos
    }

    /// All vehicle records: finished first, then the ones still in the zone.
    pub fn all_records(&self) -> Vec<CavRecord> {
        let mut records = self.finished.clone();
        records.extend(self.agents.iter().map(|a| a.record.clone()));
        records
    }
}

/// Outcome of a complete episode run.
pub struct EpisodeOutcome {
    pub metrics: EpisodeMetrics,
    pub log: RolloutLog,
    pub audit_min_barrier: f64,
    pub records: Vec<CavRecord>,
}

/// Run until `cav_target` vehicles have crossed the merge point or the time
/// cap is reached.
pub fn run_episode(cfg: &AppConfig, seed: u64, policy: &mut dyn ThetaPolicy) -> EpisodeOutcome {
    let mut world = World::new(cfg.clone(), seed);
    while world.finished.len() < cfg.scenario.cav_target && world.time < cfg.scenario.time_cap {
        world.step(policy);
    }
    let records = world.all_records();
    EpisodeOutcome {
        metrics: summarize(&records, world.time),
        log: world.log,
        audit_min_barrier: world.audit_min_barrier,
        records,
    }
}
