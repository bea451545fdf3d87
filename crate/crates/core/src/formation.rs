//! Formation geometry, the directed impedance-link graph and hand tracking.
//!
//! A drone's goal is a geometric part (an anchor point plus a fixed offset)
//! composed with an impedance part (the sum of the saturated corrections of
//! every link that targets the drone). Anchors reference *actual* drone
//! positions, so lag propagates down the graph.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{join_violations, Violation};
use crate::geom::{Axis, Vec3};
use crate::impedance::{external_force, ImpedanceParams, LinkDynamics, SaturationLimits};

pub type Point = Vec3<f64>;

/// Default scaling of hand velocity into link force, N·s/m.
pub const DEFAULT_VELOCITY_GAIN: f64 = -7.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormationError {
    #[error("invalid formation:\n{}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("hand sample at t={t} is not after the previous sample at t={previous}")]
    NonMonotonicSample { t: f64, previous: f64 },
    #[error("non-finite hand sample at t={0}")]
    NonFiniteSample(f64),
}

/// Where a drone's geometric slot hangs from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Anchor {
    Hand,
    Drone { index: usize },
    Midpoint { a: usize, b: usize },
}

/// Source end of an impedance link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Hand,
    Drone(usize),
}

/// How the summed corrections of a drone enter its goal along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionRule {
    /// Goal gets the signed sum.
    Signed,
    /// Goal moves by the magnitude of the sum toward the negative axis.
    AwayNegative,
    /// Goal moves by the magnitude of the sum toward the positive axis.
    AwayPositive,
}

impl CorrectionRule {
    pub fn apply(self, sum: f64) -> f64 {
        match self {
            CorrectionRule::Signed => sum,
            CorrectionRule::AwayNegative => -sum.abs(),
            CorrectionRule::AwayPositive => sum.abs(),
        }
    }
}

fn default_axis_rules() -> [CorrectionRule; 3] {
    [
        CorrectionRule::AwayNegative,
        CorrectionRule::Signed,
        CorrectionRule::Signed,
    ]
}

fn default_velocity_gain() -> f64 {
    DEFAULT_VELOCITY_GAIN
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneSlot {
    pub anchor: Anchor,
    pub offset: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub source: Node,
    pub target: usize,
    pub params: ImpedanceParams<f64>,
    pub limits: SaturationLimits<f64>,
}

/// Data-driven formation: slots, link graph and forcing gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationSpec {
    pub drones: Vec<DroneSlot>,
    pub links: Vec<LinkSpec>,
    #[serde(default = "default_velocity_gain")]
    pub velocity_gain: f64,
    #[serde(default = "default_axis_rules")]
    pub axis_rules: [CorrectionRule; 3],
    /// Vertex order used for polygon area; defaults to drone order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outline: Option<Vec<usize>>,
}

impl FormationSpec {
    pub fn drone_count(&self) -> usize {
        self.drones.len()
    }

    pub fn outline(&self) -> Vec<usize> {
        self.outline
            .clone()
            .unwrap_or_else(|| (0..self.drones.len()).collect())
    }

    /// Checks indices, link-graph shape and anchor resolvability. Every
    /// problem is reported, not just the first.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.drones.len();
        if n == 0 {
            out.push(Violation::new("/formation/drones", "at least one drone is required"));
        }
        if !self.velocity_gain.is_finite() {
            out.push(Violation::new("/formation/velocity_gain", "must be finite"));
        }
        for (i, slot) in self.drones.iter().enumerate() {
            let path = format!("/formation/drones/{i}");
            if !slot.offset.is_finite() {
                out.push(Violation::new(format!("{path}/offset"), "offset must be finite"));
            }
            let refs: Vec<usize> = match slot.anchor {
                Anchor::Hand => vec![],
                Anchor::Drone { index } => vec![index],
                Anchor::Midpoint { a, b } => vec![a, b],
            };
            for r in refs {
                if r >= n {
                    out.push(Violation::new(
                        format!("{path}/anchor"),
                        format!("references drone {r} but only {n} drones exist"),
                    ));
                } else if r == i {
                    out.push(Violation::new(format!("{path}/anchor"), "drone anchors to itself"));
                }
            }
        }
        if out.is_empty() && self.anchor_order().is_none() {
            out.push(Violation::new(
                "/formation/drones",
                "anchor references form a cycle; every slot must resolve back to the hand",
            ));
        }
        for (k, link) in self.links.iter().enumerate() {
            let path = format!("/formation/links/{k}");
            if link.target >= n {
                out.push(Violation::new(
                    format!("{path}/target"),
                    format!("drone {} does not exist", link.target),
                ));
            }
            if let Node::Drone(s) = link.source {
                if s >= n {
                    out.push(Violation::new(format!("{path}/source"), format!("drone {s} does not exist")));
                } else if s == link.target {
                    out.push(Violation::new(format!("{path}/source"), "self-loop link"));
                }
            }
            if !link.limits.is_valid() {
                out.push(Violation::new(format!("{path}/limits"), "limits must be non-negative"));
            }
        }
        if let Some(outline) = &self.outline {
            let mut seen = vec![false; n];
            for &v in outline {
                if v >= n || std::mem::replace(&mut seen[v], true) {
                    out.push(Violation::new(
                        "/formation/outline",
                        format!("vertex {v} is out of range or repeated"),
                    ));
                }
            }
        }
        let indices_ok = out.iter().all(|v| !v.path.starts_with("/formation/links"));
        if indices_ok && n > 0 {
            out.extend(self.link_graph_violations());
        }
        out
    }

    fn link_graph_violations(&self) -> Vec<Violation> {
        let n = self.drones.len();
        let mut out = Vec::new();
        // Kahn's algorithm over drones; hand is the implicit root.
        let mut indegree = vec![0usize; n];
        for link in &self.links {
            if matches!(link.source, Node::Drone(_)) {
                indegree[link.target] += 1;
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut visited = 0;
        while let Some(d) = queue.pop_front() {
            visited += 1;
            for link in &self.links {
                if link.source == Node::Drone(d) {
                    indegree[link.target] -= 1;
                    if indegree[link.target] == 0 {
                        queue.push_back(link.target);
                    }
                }
            }
        }
        if visited != n {
            out.push(Violation::new("/formation/links", "link graph contains a cycle"));
        }
        let mut reached = vec![false; n];
        let mut frontier: Vec<usize> = self
            .links
            .iter()
            .filter(|l| l.source == Node::Hand)
            .map(|l| l.target)
            .collect();
        while let Some(d) = frontier.pop() {
            if std::mem::replace(&mut reached[d], true) {
                continue;
            }
            frontier.extend(
                self.links
                    .iter()
                    .filter(|l| l.source == Node::Drone(d))
                    .map(|l| l.target),
            );
        }
        for (i, r) in reached.iter().enumerate() {
            if !r {
                out.push(Violation::new(
                    "/formation/links",
                    format!("drone {i} is unreachable from the hand"),
                ));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), FormationError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(FormationError::Invalid(v))
        }
    }

    /// Order in which slots can be resolved from the hand, or `None` if the
    /// anchors are cyclic.
    pub fn anchor_order(&self) -> Option<Vec<usize>> {
        let n = self.drones.len();
        let mut resolved = vec![false; n];
        let mut order = Vec::with_capacity(n);
        while order.len() < n {
            let before = order.len();
            for (i, slot) in self.drones.iter().enumerate() {
                if resolved[i] {
                    continue;
                }
                let ready = match slot.anchor {
                    Anchor::Hand => true,
                    Anchor::Drone { index } => index < n && resolved[index],
                    Anchor::Midpoint { a, b } => a < n && b < n && resolved[a] && resolved[b],
                };
                if ready {
                    resolved[i] = true;
                    order.push(i);
                }
            }
            if order.len() == before {
                return None;
            }
        }
        Some(order)
    }

    /// Geometric slots with every correction zero and every drone sitting
    /// in its own slot.
    pub fn default_slots(&self, hand: Point) -> Vec<Point> {
        let order = self.anchor_order().expect("validated formation");
        let mut slots = vec![Point::zero(); self.drones.len()];
        for i in order {
            slots[i] = geometric_part(&self.drones[i], hand, &slots);
        }
        slots
    }

    /// The four-drone rhombus: drone 0 trails the hand, drones 1 and 2 hang
    /// off drone 0 to either side, drone 3 trails the midpoint of 1 and 2.
    pub fn rhombus(spacing: f64, params: ImpedanceParams<f64>, limit: f64) -> Self {
        let s = spacing;
        let limits = SaturationLimits::uniform(limit);
        let link = |source, target| LinkSpec {
            source,
            target,
            params,
            limits,
        };
        Self {
            drones: vec![
                DroneSlot { anchor: Anchor::Hand, offset: Vec3::new(-s, 0.0, 0.0) },
                DroneSlot { anchor: Anchor::Drone { index: 0 }, offset: Vec3::new(-s, s, 0.0) },
                DroneSlot { anchor: Anchor::Drone { index: 0 }, offset: Vec3::new(-s, -s, 0.0) },
                DroneSlot { anchor: Anchor::Midpoint { a: 1, b: 2 }, offset: Vec3::new(-s, 0.0, 0.0) },
            ],
            links: vec![
                link(Node::Hand, 0),
                link(Node::Drone(0), 1),
                link(Node::Drone(0), 2),
                link(Node::Drone(1), 3),
                link(Node::Drone(2), 3),
            ],
            velocity_gain: DEFAULT_VELOCITY_GAIN,
            axis_rules: default_axis_rules(),
            outline: Some(vec![0, 1, 3, 2]),
        }
    }

    /// Equilateral triangle of side `side` trailing the hand by `lead`.
    pub fn triangle(side: f64, lead: f64, params: ImpedanceParams<f64>, limit: f64) -> Self {
        let limits = SaturationLimits::uniform(limit);
        let link = |source, target| LinkSpec {
            source,
            target,
            params,
            limits,
        };
        let back = -side * 3f64.sqrt() / 2.0;
        Self {
            drones: vec![
                DroneSlot { anchor: Anchor::Hand, offset: Vec3::new(-lead, 0.0, 0.0) },
                DroneSlot { anchor: Anchor::Drone { index: 0 }, offset: Vec3::new(back, side / 2.0, 0.0) },
                DroneSlot { anchor: Anchor::Drone { index: 0 }, offset: Vec3::new(back, -side / 2.0, 0.0) },
            ],
            links: vec![link(Node::Hand, 0), link(Node::Drone(0), 1), link(Node::Drone(0), 2)],
            velocity_gain: DEFAULT_VELOCITY_GAIN,
            axis_rules: default_axis_rules(),
            outline: None,
        }
    }
}

fn geometric_part(slot: &DroneSlot, hand: Point, positions: &[Point]) -> Point {
    let anchor = match slot.anchor {
        Anchor::Hand => hand,
        Anchor::Drone { index } => positions[index],
        Anchor::Midpoint { a, b } => (positions[a] + positions[b]) / 2.0,
    };
    anchor + slot.offset
}

/// Per-drone goals plus the per-link corrections that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalSet {
    pub goals: Vec<Point>,
    pub corrections: Vec<Point>,
}

/// Goal of every drone: geometric part composed with the summed impedance
/// corrections of its incoming links under the per-axis rules.
pub fn compute_goals(
    spec: &FormationSpec,
    hand: Point,
    drone_positions: &[Point],
    corrections: &[Point],
) -> GoalSet {
    let goals = spec
        .drones
        .iter()
        .enumerate()
        .map(|(i, slot)| {
            let sum = spec
                .links
                .iter()
                .zip(corrections)
                .filter(|(l, _)| l.target == i)
                .fold(Point::zero(), |acc, (_, c)| acc + *c);
            let mut goal = geometric_part(slot, hand, drone_positions);
            for axis in Axis::ALL {
                goal[axis] += spec.axis_rules[axis.index()].apply(sum[axis]);
            }
            goal
        })
        .collect();
    GoalSet {
        goals,
        corrections: corrections.to_vec(),
    }
}

/// Steps every link with `F = K_v·v_h` per axis and returns the saturated
/// corrections in link order.
pub fn update_links(
    links: &mut [LinkDynamics<f64>],
    velocity_gain: f64,
    hand_velocity: Point,
) -> Vec<Point> {
    let force = hand_velocity.map(|v| external_force(v, velocity_gain));
    links.iter_mut().map(|l| l.advance(force)).collect()
}

/// Owns the link states of one formation.
#[derive(Debug, Clone)]
pub struct FormationController {
    spec: FormationSpec,
    links: Vec<LinkDynamics<f64>>,
    corrections: Vec<Point>,
}

impl FormationController {
    pub fn new(spec: FormationSpec, sample_time: f64) -> Result<Self, FormationError> {
        spec.validate()?;
        let links = spec
            .links
            .iter()
            .enumerate()
            .map(|(k, l)| {
                LinkDynamics::new(l.params, l.limits, sample_time).map_err(|e| {
                    FormationError::Invalid(vec![Violation::new(
                        format!("/formation/links/{k}"),
                        e.to_string(),
                    )])
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let corrections = vec![Point::zero(); links.len()];
        Ok(Self {
            spec,
            links,
            corrections,
        })
    }

    pub fn spec(&self) -> &FormationSpec {
        &self.spec
    }

    pub fn links(&self) -> &[LinkDynamics<f64>] {
        &self.links
    }

    pub fn corrections(&self) -> &[Point] {
        &self.corrections
    }

    pub fn update_links(&mut self, hand_velocity: Point) -> &[Point] {
        self.corrections = update_links(&mut self.links, self.spec.velocity_gain, hand_velocity);
        &self.corrections
    }

    pub fn compute_goals(&self, hand: Point, drone_positions: &[Point]) -> GoalSet {
        compute_goals(&self.spec, hand, drone_positions, &self.corrections)
    }

    pub fn reset(&mut self) {
        self.links.iter_mut().for_each(LinkDynamics::reset);
        self.corrections.iter_mut().for_each(|c| *c = Point::zero());
    }
}

/// Hand-velocity filter settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Samples spanned by the backward difference.
    pub window: usize,
    /// Exponential smoothing weight of the newest raw estimate.
    pub smoothing: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            window: 6,
            smoothing: 0.5,
        }
    }
}

impl EstimatorConfig {
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.window < 2 {
            v.push(Violation::new("/estimator/window", "window must span at least 2 samples"));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            v.push(Violation::new("/estimator/smoothing", "smoothing must lie in (0, 1]"));
        }
        v
    }
}

/// Raw backward difference across the last `window` samples. `None` when
/// fewer than two samples are available.
pub fn estimate_hand_velocity(history: &[(f64, Point)], window: usize) -> Option<Point> {
    if history.len() < 2 {
        return None;
    }
    let span = window.max(2).min(history.len());
    let (t1, p1) = history[history.len() - 1];
    let (t0, p0) = history[history.len() - span];
    Some((p1 - p0) / (t1 - t0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityEstimate {
    pub velocity: Point,
    /// Set until two samples have been seen.
    pub cold: bool,
}

/// Tracked hand: latest position, filtered velocity and sample history.
#[derive(Debug, Clone, PartialEq)]
pub struct HandState {
    pub position: Point,
    pub velocity: Point,
    history: VecDeque<(f64, Point)>,
    config: EstimatorConfig,
    warm: bool,
}

impl HandState {
    /// Hand at rest with no history.
    pub fn new(position: Point, config: EstimatorConfig) -> Self {
        Self {
            position,
            velocity: Point::zero(),
            history: VecDeque::with_capacity(config.window),
            config,
            warm: false,
        }
    }

    /// Hand at rest with one sample at `t`.
    pub fn at(t: f64, position: Point, config: EstimatorConfig) -> Self {
        let mut s = Self::new(position, config);
        s.history.push_back((t, position));
        s
    }

    pub fn history(&self) -> impl Iterator<Item = &(f64, Point)> {
        self.history.iter()
    }

    /// Records a sample and refreshes the filtered velocity.
    pub fn ingest(&mut self, t: f64, position: Point) -> Result<VelocityEstimate, FormationError> {
        if !t.is_finite() || !position.is_finite() {
            return Err(FormationError::NonFiniteSample(t));
        }
        if let Some(&(prev, _)) = self.history.back() {
            if t <= prev {
                return Err(FormationError::NonMonotonicSample { t, previous: prev });
            }
        }
        if self.history.len() == self.config.window {
            self.history.pop_front();
        }
        self.history.push_back((t, position));
        self.position = position;
        let samples: Vec<_> = self.history.iter().copied().collect();
        let Some(raw) = estimate_hand_velocity(&samples, self.config.window) else {
            return Ok(VelocityEstimate {
                velocity: Point::zero(),
                cold: true,
            });
        };
        self.velocity = if self.warm {
            let a = self.config.smoothing;
            raw * a + self.velocity * (1.0 - a)
        } else {
            self.warm = true;
            raw
        };
        Ok(VelocityEstimate {
            velocity: self.velocity,
            cold: false,
        })
    }
}
