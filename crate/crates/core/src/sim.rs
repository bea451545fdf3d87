//! Fixed-step world simulator.
//!
//! Every tick runs the same stages in the same order:
//!
//! 1. ingest the hand sample and refresh the velocity estimate
//! 2. step every impedance link with the hand-velocity force
//! 3. compute formation goals from geometry and corrections
//! 4. shift goals by the potential-field avoidance offset
//! 5. run the position PID of every drone
//! 6. integrate with semi-implicit Euler (`v += a·T`, `p += v·T`)
//! 7. detect collisions, classify the formation and schedule patterns
//! 8. append the trace row
//!
//! Nothing reads the wall clock and all iteration is over ordered
//! containers, so identical inputs give bit-identical traces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apf::{avoidance_velocity, ApfError, ApfGains, Obstacle};
use crate::formation::{FormationController, FormationError, HandState, Point};
use crate::geom::{centroid, Vec2};
use crate::hand_trace::{resample, HandTrace};
use crate::scenario::Scenario;
use crate::tactile::{FormationReference, TactileEngine, TactileError};
use crate::trace::{
    EventKind, Penetration, Separation, TraceEvent, TraceLog, TraceMeta, TraceRow, SMOOTHING_WINDOW,
};

/// Gains of one axis group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisGains {
    pub kp: f64,
    pub kd: f64,
    pub ki: f64,
}

/// Position PID producing a bounded acceleration.
///
/// Flight-firmware defaults (xy: kp 40, kd 20, ki 2; z: kp 5000, kd 6000,
/// ki 3500) are in firmware units and do not transfer to a point mass; the
/// defaults here are tuned for the point-mass model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub xy: AxisGains,
    pub z: AxisGains,
    /// Acceleration magnitude cap, m/s².
    pub max_accel: f64,
    /// Per-axis bound on the integrated error, m·s.
    pub integral_limit: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        let g = AxisGains {
            kp: 8.0,
            kd: 5.0,
            ki: 0.4,
        };
        Self {
            xy: g,
            z: g,
            max_accel: 4.0,
            integral_limit: 0.05,
        }
    }
}

impl PidGains {
    pub fn zero() -> Self {
        let g = AxisGains {
            kp: 0.0,
            kd: 0.0,
            ki: 0.0,
        };
        Self {
            xy: g,
            z: g,
            ..Self::default()
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.xy, self.z]
            .iter()
            .flat_map(|g| [g.kp, g.kd, g.ki])
            .all(|v| v >= 0.0 && v.is_finite())
            && self.max_accel > 0.0
            && self.integral_limit > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleLimits {
    /// Speed cap of every drone, m/s.
    pub max_speed: f64,
    /// Drone-drone distance below which a collision is logged, m.
    pub min_separation: f64,
}

impl Default for VehicleLimits {
    fn default() -> Self {
        Self {
            max_speed: 1.0,
            min_separation: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApfConfig {
    pub enabled: bool,
    #[serde(default)]
    pub gains: ApfGains<f64>,
}

impl Default for ApfConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            gains: ApfGains::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub id: usize,
    pub position: Point,
    pub velocity: Point,
    pub integral: Point,
    /// Tracking error of the previous tick, for the derivative term.
    pub prev_error: Option<Point>,
}

impl DroneState {
    pub fn at_rest(id: usize, position: Point) -> Self {
        Self {
            id,
            position,
            velocity: Point::zero(),
            integral: Point::zero(),
            prev_error: None,
        }
    }
}

/// PID acceleration toward `goal`. Updates the drone's integrator and
/// stored error; the derivative is the difference of successive errors.
pub fn pid_track(drone: &mut DroneState, goal: Point, gains: &PidGains, dt: f64) -> Point {
    let error = goal - drone.position;
    let d_error = match drone.prev_error {
        Some(prev) => (error - prev) / dt,
        None => Point::zero(),
    };
    drone.prev_error = Some(error);
    let lim = gains.integral_limit;
    drone.integral = (drone.integral + error * dt).map(|v| v.clamp(-lim, lim));
    let axis = |g: &AxisGains, e: f64, de: f64, i: f64| g.kp * e + g.kd * de + g.ki * i;
    let accel = Point::new(
        axis(&gains.xy, error.x, d_error.x, drone.integral.x),
        axis(&gains.xy, error.y, d_error.y, drone.integral.y),
        axis(&gains.z, error.z, d_error.z, drone.integral.z),
    );
    accel.clamp_norm(gains.max_accel)
}

/// Semi-implicit Euler with a speed cap.
pub fn integrate(drone: &mut DroneState, accel: Point, dt: f64, max_speed: f64) {
    drone.velocity = (drone.velocity + accel * dt).clamp_norm(max_speed);
    drone.position += drone.velocity * dt;
}

/// Pipeline stage, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    HandInput,
    Impedance,
    Goals,
    Avoidance,
    Pid,
    Integration,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite value at stage {stage:?}{}", .drone.map(|d| format!(" (drone {d})")).unwrap_or_default())]
    NonFinite { stage: Stage, drone: Option<usize> },
    #[error(transparent)]
    Formation(#[from] FormationError),
    #[error(transparent)]
    Tactile(#[from] TactileError),
    #[error("invalid scenario:\n{0}")]
    Scenario(String),
}

/// Avoidance velocity at `point`; inside a safety zone it is the speed cap
/// pointing radially out of the penetrated zone.
fn goal_avoidance_velocity(
    point: Vec2<f64>,
    target: Vec2<f64>,
    obstacles: &[Obstacle<f64>],
    gains: &ApfGains<f64>,
) -> Vec2<f64> {
    match avoidance_velocity(point, target, obstacles, gains) {
        Ok(v) => v,
        Err(ApfError::Penetration { obstacle }) => {
            let out = point - obstacles[obstacle].center;
            let n = out.norm();
            let dir = if n > 0.0 { out / n } else { Vec2::new(1.0, 0.0) };
            dir * gains.max_speed
        }
    }
}

/// Read-only view of the world between ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub tick: u64,
    pub time: f64,
    pub hand: Point,
    pub hand_velocity: Point,
    pub drones: Vec<DroneState>,
    pub goals: Vec<Point>,
    pub row: Option<TraceRow>,
}

/// The single stepped object.
#[derive(Debug, Clone)]
pub struct World {
    scenario: Scenario,
    tick: u64,
    hand: HandState,
    drones: Vec<DroneState>,
    goals: Vec<Point>,
    avoidance: Vec<Vec2<f64>>,
    controller: FormationController,
    tactile: TactileEngine,
    trace: TraceLog,
}

impl World {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        Self::with_source(scenario, "headless", None)
    }

    pub fn with_source(scenario: Scenario, source: &str, seed: Option<u64>) -> Result<Self, SimError> {
        let violations = scenario.violations();
        if !violations.is_empty() {
            return Err(SimError::Scenario(crate::error::join_violations(&violations)));
        }
        let dt = scenario.sample_time;
        let controller = FormationController::new(scenario.formation.clone(), dt)?;
        let reference = FormationReference::from_spec(&scenario.formation)?;
        let tactile = TactileEngine::new(reference.clone(), scenario.classifier, scenario.tactile, dt);
        let start = scenario.start.hand;
        let hand = HandState::at(0.0, start, scenario.estimator);
        let slots = scenario.formation.default_slots(start);
        let drones = slots
            .iter()
            .enumerate()
            .map(|(i, p)| DroneState::at_rest(i, *p))
            .collect();
        let meta = TraceMeta {
            scenario: scenario.name.clone(),
            scenario_hash: scenario.hash(),
            sample_time: dt,
            drone_count: scenario.formation.drone_count(),
            link_count: scenario.formation.links.len(),
            outline: reference.outline.clone(),
            default_area: reference.area,
            smoothing_window: SMOOTHING_WINDOW,
            seed,
            parameters: scenario.parameters_json(),
            source: source.to_string(),
        };
        let n = slots.len();
        Ok(Self {
            tick: 0,
            hand,
            drones,
            goals: slots,
            avoidance: vec![Vec2::zero(); n],
            controller,
            tactile,
            trace: TraceLog::new(meta),
            scenario,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.scenario.sample_time
    }

    pub fn hand(&self) -> &HandState {
        &self.hand
    }

    pub fn drones(&self) -> &[DroneState] {
        &self.drones
    }

    pub fn goals(&self) -> &[Point] {
        &self.goals
    }

    pub fn positions(&self) -> Vec<Point> {
        self.drones.iter().map(|d| d.position).collect()
    }

    pub fn centroid(&self) -> Point {
        centroid(&self.positions())
    }

    pub fn corrections(&self) -> &[Point] {
        self.controller.corrections()
    }

    pub fn tactile(&self) -> &TactileEngine {
        &self.tactile
    }

    pub fn trace(&self) -> &TraceLog {
        &self.trace
    }

    pub fn into_trace(self) -> TraceLog {
        self.trace
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            tick: self.tick,
            time: self.time(),
            hand: self.hand.position,
            hand_velocity: self.hand.velocity,
            drones: self.drones.clone(),
            goals: self.goals.clone(),
            row: self.trace.rows.last().cloned(),
        }
    }

    /// Appends a scenario marker event at the current tick.
    pub fn mark(&mut self, name: &str) {
        self.trace.events.push(TraceEvent {
            tick: self.tick,
            t: self.time(),
            kind: EventKind::Marker { name: name.to_string() },
        });
    }

    /// Advances one tick with the hand at `hand_sample`; returns the events
    /// raised during the tick.
    pub fn simulate_tick(&mut self, hand_sample: Point) -> Result<Vec<TraceEvent>, SimError> {
        let dt = self.scenario.sample_time;
        let tick = self.tick + 1;
        let t = tick as f64 * dt;
        let finite = |ok: bool, stage, drone| {
            if ok {
                Ok(())
            } else {
                Err(SimError::NonFinite { stage, drone })
            }
        };

        // 1. hand
        finite(hand_sample.is_finite(), Stage::HandInput, None)?;
        let estimate = self.hand.ingest(t, hand_sample)?;
        finite(estimate.velocity.is_finite(), Stage::HandInput, None)?;

        // 2. impedance links
        let corrections = self.controller.update_links(estimate.velocity).to_vec();
        finite(corrections.iter().all(|c| c.is_finite()), Stage::Impedance, None)?;

        // 3. goals from actual positions
        let positions = self.positions();
        let goal_set = self.controller.compute_goals(hand_sample, &positions);
        for (i, g) in goal_set.goals.iter().enumerate() {
            finite(g.is_finite(), Stage::Goals, Some(i))?;
        }

        // 4. avoidance offset of each goal point
        let apf = self.scenario.apf;
        let obstacles = &self.scenario.obstacles;
        let mut goals = goal_set.goals;
        if apf.enabled && !obstacles.is_empty() {
            for (i, goal) in goals.iter_mut().enumerate() {
                let target = goal.xy();
                let offset = self.avoidance[i];
                let v = goal_avoidance_velocity(target + offset, target, obstacles, &apf.gains);
                let next = offset + v * dt;
                finite(next.is_finite(), Stage::Avoidance, Some(i))?;
                self.avoidance[i] = next;
                if next != Vec2::zero() {
                    goal.x += next.x;
                    goal.y += next.y;
                }
            }
        }

        // 5-6. control and integration
        let pid = self.scenario.pid;
        let max_speed = self.scenario.vehicle.max_speed;
        for (drone, goal) in self.drones.iter_mut().zip(&goals) {
            let accel = pid_track(drone, *goal, &pid, dt);
            finite(accel.is_finite(), Stage::Pid, Some(drone.id))?;
            integrate(drone, accel, dt, max_speed);
            finite(
                drone.position.is_finite() && drone.velocity.is_finite(),
                Stage::Integration,
                Some(drone.id),
            )?;
        }
        self.goals = goals;
        self.tick = tick;

        // 7. events
        let mut events = Vec::new();
        let positions = self.positions();
        if let Some(kind) = self.collision_event(&positions) {
            events.push(TraceEvent { tick, t, kind });
        }
        let from = self.tactile.label();
        let update = self
            .tactile
            .update(tick, &positions, hand_sample, estimate.velocity);
        if update.label_changed {
            events.push(TraceEvent {
                tick,
                t,
                kind: EventKind::FormationState {
                    from,
                    to: update.state.label,
                },
            });
        }
        if let Some(ev) = update.ended {
            events.push(TraceEvent {
                tick,
                t,
                kind: EventKind::PatternEnd { pattern: ev.id },
            });
        }
        if let Some(ev) = update.started {
            events.push(TraceEvent {
                tick,
                t,
                kind: EventKind::PatternStart {
                    pattern: ev.id,
                    end_tick: ev.end_tick,
                    trigger: ev.trigger,
                },
            });
        }

        // 8. trace
        self.trace.rows.push(TraceRow {
            tick,
            t,
            hand: hand_sample,
            hand_velocity: estimate.velocity,
            goals: self.goals.clone(),
            positions,
            velocities: self.drones.iter().map(|d| d.velocity).collect(),
            corrections,
            label: update.state.label,
            com_offset: update.displacement,
            pattern: update.active,
        });
        self.trace.events.extend(events.iter().cloned());
        Ok(events)
    }

    fn collision_event(&self, positions: &[Point]) -> Option<EventKind> {
        let d_min = self.scenario.vehicle.min_separation;
        let mut separations = Vec::new();
        for a in 0..positions.len() {
            for b in a + 1..positions.len() {
                let distance = (positions[a] - positions[b]).norm();
                if distance < d_min {
                    separations.push(Separation { a, b, distance });
                }
            }
        }
        let mut penetrations = Vec::new();
        for (drone, p) in positions.iter().enumerate() {
            for (obstacle, o) in self.scenario.obstacles.iter().enumerate() {
                let clearance = o.clearance(p.xy());
                if clearance < 0.0 {
                    penetrations.push(Penetration {
                        drone,
                        obstacle,
                        clearance,
                    });
                }
            }
        }
        if separations.is_empty() && penetrations.is_empty() {
            None
        } else {
            Some(EventKind::Collision {
                separations,
                penetrations,
            })
        }
    }
}

/// Number of ticks a headless run covers when none is given: the scenario
/// duration if set, else the trace span, else zero.
pub fn default_ticks(scenario: &Scenario, trace: &HandTrace) -> u64 {
    let span = scenario.duration_s.or_else(|| trace.end_time()).unwrap_or(0.0);
    (span / scenario.sample_time - 1e-9).ceil().max(0.0) as u64
}

/// Replays `hand_trace` through a fresh world for `ticks` ticks.
pub fn run_scenario(scenario: &Scenario, hand_trace: &HandTrace, ticks: Option<u64>) -> Result<TraceLog, SimError> {
    run_scenario_seeded(scenario, hand_trace, ticks, None)
}

pub fn run_scenario_seeded(
    scenario: &Scenario,
    hand_trace: &HandTrace,
    ticks: Option<u64>,
    seed: Option<u64>,
) -> Result<TraceLog, SimError> {
    let ticks = ticks.unwrap_or_else(|| default_ticks(scenario, hand_trace));
    let mut world = World::with_source(scenario.clone(), "headless", seed)?;
    let samples = resample(hand_trace, scenario.sample_time, ticks, scenario.start.hand);
    let mut finished = false;
    for sample in samples {
        world.simulate_tick(sample)?;
        if !finished && scenario.finish.is_some_and(|f| f.contains(world.centroid().xy())) {
            finished = true;
            world.mark("finish");
        }
    }
    Ok(world.into_trace())
}
