//! Formation-state classification, centroid displacement and vibrotactile
//! pattern timelines for a five-finger glove.
//!
//! Fingers are numbered 1..=5 from thumb to little finger of the right
//! hand seen from the dorsal side. Intensity levels are vibration
//! frequencies: 150 Hz (low), 200 Hz (mid), 250 Hz (high); 0 means off.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Violation;
use crate::formation::{FormationSpec, Point};
use crate::geom::{centroid, polygon_area, Vec2};

pub const LOW_HZ: u16 = 150;
pub const MID_HZ: u16 = 200;
pub const HIGH_HZ: u16 = 250;
pub const SHORT_MS: u32 = 200;
pub const LONG_MS: u32 = 300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TactileError {
    #[error("unknown pattern id `{0}`")]
    UnknownPattern(String),
    #[error("degenerate default formation: {0}")]
    DegenerateReference(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FormationLabel {
    Contracted,
    Regular,
    Extended,
}

impl FormationLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            FormationLabel::Contracted => "contracted",
            FormationLabel::Regular => "regular",
            FormationLabel::Extended => "extended",
        }
    }
}

impl fmt::Display for FormationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FormationLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "contracted" => Ok(Self::Contracted),
            "regular" => Ok(Self::Regular),
            "extended" => Ok(Self::Extended),
            other => Err(format!("unknown formation label `{other}`")),
        }
    }
}

/// Classifier thresholds: entry at `1 ± threshold`, exit once every
/// measure is back within `1 ± (threshold - hysteresis)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierThresholds {
    pub threshold: f64,
    pub hysteresis: f64,
}

impl Default for ClassifierThresholds {
    fn default() -> Self {
        Self {
            threshold: 0.10,
            hysteresis: 0.02,
        }
    }
}

/// Default geometry the classifier and displacement compare against.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationReference {
    /// `(i, j, default distance)` for every drone pair `i < j`.
    pub pairs: Vec<(usize, usize, f64)>,
    /// Default polygon area over `outline`; `None` below three drones.
    pub area: Option<f64>,
    pub outline: Vec<usize>,
    /// Default centroid relative to the hand.
    pub centroid_offset: Point,
}

impl FormationReference {
    pub fn from_spec(spec: &FormationSpec) -> Result<Self, TactileError> {
        let slots = spec.default_slots(Point::zero());
        let mut pairs = Vec::new();
        for i in 0..slots.len() {
            for j in i + 1..slots.len() {
                let d = (slots[i] - slots[j]).norm();
                if !(d > 0.0) {
                    return Err(TactileError::DegenerateReference(format!(
                        "drones {i} and {j} share a default slot"
                    )));
                }
                pairs.push((i, j, d));
            }
        }
        let outline = spec.outline();
        let area = if outline.len() >= 3 {
            let a = outline_area(&slots, &outline);
            if !(a > 0.0) {
                return Err(TactileError::DegenerateReference(
                    "default formation has zero area".into(),
                ));
            }
            Some(a)
        } else {
            None
        };
        Ok(Self {
            pairs,
            area,
            outline,
            centroid_offset: centroid(&slots),
        })
    }

    pub fn area_of(&self, positions: &[Point]) -> Option<f64> {
        self.area.map(|_| outline_area(positions, &self.outline))
    }
}

/// Planar shoelace area of `positions` visited in `outline` order.
pub fn outline_area(positions: &[Point], outline: &[usize]) -> f64 {
    let pts: Vec<Vec2<f64>> = outline.iter().map(|&i| positions[i].xy()).collect();
    polygon_area(&pts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationStateLabel {
    pub label: FormationLabel,
    pub area: Option<f64>,
    pub area_ratio: Option<f64>,
    pub pair_ratios: Vec<f64>,
}

/// Extended if the area or any pairwise distance exceeds `(1+θ)` of its
/// default, Contracted if any falls below `(1-θ)`; contraction wins when
/// both fire. A label is kept while its measure stays past the narrower
/// `θ - hysteresis` band.
pub fn classify_formation_state(
    positions: &[Point],
    reference: &FormationReference,
    thresholds: &ClassifierThresholds,
    previous: FormationLabel,
) -> FormationStateLabel {
    let pair_ratios: Vec<f64> = reference
        .pairs
        .iter()
        .map(|&(i, j, d)| (positions[i] - positions[j]).norm() / d)
        .collect();
    let area = reference.area_of(positions);
    let area_ratio = area.zip(reference.area).map(|(a, d)| a / d);
    let ratios = || pair_ratios.iter().copied().chain(area_ratio);
    let enter = thresholds.threshold;
    let hold = thresholds.threshold - thresholds.hysteresis;
    let below = |band: f64| ratios().any(|r| r < 1.0 - band);
    let above = |band: f64| ratios().any(|r| r > 1.0 + band);

    let label = if below(enter) {
        FormationLabel::Contracted
    } else if above(enter) {
        FormationLabel::Extended
    } else if previous == FormationLabel::Contracted && below(hold) {
        FormationLabel::Contracted
    } else if previous == FormationLabel::Extended && above(hold) {
        FormationLabel::Extended
    } else {
        FormationLabel::Regular
    };
    FormationStateLabel {
        label,
        area,
        area_ratio,
        pair_ratios,
    }
}

/// Side of the motion direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn of(offset: f64) -> Option<Side> {
        if offset > 0.0 {
            Some(Side::Right)
        } else if offset < 0.0 {
            Some(Side::Left)
        } else {
            None
        }
    }
}

/// Signed lateral offset of the centroid from the reference centroid,
/// positive to the right of `direction` (unit or not; only its heading
/// matters).
pub fn com_displacement(positions: &[Point], reference_centroid: Point, direction: Vec2<f64>) -> f64 {
    let unit = direction / direction.norm();
    let shift = (centroid(positions) - reference_centroid).xy();
    shift.cross(unit)
}

/// Keeps the last heading whose speed exceeded the motion threshold.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HeadingTracker {
    heading: Option<Vec2<f64>>,
}

impl HeadingTracker {
    pub fn update(&mut self, velocity: Vec2<f64>, min_speed: f64) -> Option<Vec2<f64>> {
        let speed = velocity.norm();
        if speed > min_speed {
            self.heading = Some(velocity / speed);
        }
        self.heading
    }

    pub fn heading(&self) -> Option<Vec2<f64>> {
        self.heading
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PatternId {
    EI,
    ED,
    RI,
    RD,
    CI,
    CD,
    R,
    L,
    CR,
    CL,
    ER,
    EL,
}

impl PatternId {
    pub const ALL: [PatternId; 12] = [
        PatternId::EI,
        PatternId::ED,
        PatternId::RI,
        PatternId::RD,
        PatternId::CI,
        PatternId::CD,
        PatternId::R,
        PatternId::L,
        PatternId::CR,
        PatternId::CL,
        PatternId::ER,
        PatternId::EL,
    ];

    /// The eight-pattern state library.
    pub const LIBRARY: [PatternId; 8] = [
        PatternId::EI,
        PatternId::ED,
        PatternId::RI,
        PatternId::RD,
        PatternId::CI,
        PatternId::CD,
        PatternId::R,
        PatternId::L,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PatternId::EI => "EI",
            PatternId::ED => "ED",
            PatternId::RI => "RI",
            PatternId::RD => "RD",
            PatternId::CI => "CI",
            PatternId::CD => "CD",
            PatternId::R => "R",
            PatternId::L => "L",
            PatternId::CR => "CR",
            PatternId::CL => "CL",
            PatternId::ER => "ER",
            PatternId::EL => "EL",
        }
    }
}

impl fmt::Display for PatternId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatternId {
    type Err = TactileError;
    fn from_str(s: &str) -> Result<Self, TactileError> {
        PatternId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| TactileError::UnknownPattern(s.to_string()))
    }
}

/// One stage of a pattern: per-finger frequency (0 = off) held for `duration_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub intensities: [u16; 5],
    pub duration_ms: u32,
}

impl Frame {
    fn fingers(fingers: &[usize], hz: u16, duration_ms: u32) -> Self {
        let mut intensities = [0; 5];
        for &f in fingers {
            intensities[f - 1] = hz;
        }
        Self {
            intensities,
            duration_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TactilePattern {
    pub id: PatternId,
    pub frames: Vec<Frame>,
}

impl TactilePattern {
    pub fn duration_ms(&self) -> u32 {
        self.frames.iter().map(|f| f.duration_ms).sum()
    }

    /// Finger intensities `elapsed_ms` after the start; all zero once over.
    pub fn intensities_at(&self, elapsed_ms: f64) -> [u16; 5] {
        let mut start = 0.0;
        for f in &self.frames {
            let end = start + f64::from(f.duration_ms);
            if elapsed_ms >= start && elapsed_ms < end {
                return f.intensities;
            }
            start = end;
        }
        [0; 5]
    }

    /// Line-oriented device format: `frame,finger,frequency_hz,duration_ms`,
    /// one line per active finger.
    pub fn to_device_lines(&self) -> String {
        let mut out = format!("# pattern {}\n", self.id);
        for (k, frame) in self.frames.iter().enumerate() {
            for (finger, hz) in frame.intensities.iter().enumerate() {
                if *hz > 0 {
                    out.push_str(&format!("{k},{},{hz},{}\n", finger + 1, frame.duration_ms));
                }
            }
        }
        out
    }
}

fn reversed(id: PatternId, mut frames: Vec<Frame>) -> TactilePattern {
    frames.reverse();
    TactilePattern { id, frames }
}

/// Golden timeline for every pattern id.
pub fn encode_pattern(id: PatternId) -> TactilePattern {
    use PatternId::*;
    let f = Frame::fingers;
    let outward = |low: (u16, u32), mid: (u16, u32), high: (u16, u32)| {
        vec![f(&[3], low.0, low.1), f(&[2, 4], mid.0, mid.1), f(&[1, 5], high.0, high.1)]
    };
    let extended = || outward((LOW_HZ, SHORT_MS), (MID_HZ, SHORT_MS), (HIGH_HZ, LONG_MS));
    let regular = || outward((MID_HZ, SHORT_MS), (MID_HZ, SHORT_MS), (MID_HZ, SHORT_MS));
    let contracted = || outward((HIGH_HZ, LONG_MS), (MID_HZ, SHORT_MS), (LOW_HZ, SHORT_MS));
    let sweep = || (1..=5).map(|k| f(&[k], MID_HZ, SHORT_MS)).collect::<Vec<_>>();
    let middle = || (2..=4).map(|k| f(&[k], MID_HZ, SHORT_MS)).collect::<Vec<_>>();
    let frames = match id {
        EI => extended(),
        ED => return reversed(id, extended()),
        RI => regular(),
        RD => return reversed(id, regular()),
        CI => contracted(),
        CD => return reversed(id, contracted()),
        R => sweep(),
        L => return reversed(id, sweep()),
        CR => middle(),
        CL => return reversed(id, middle()),
        ER => vec![f(&[5], HIGH_HZ, LONG_MS)],
        EL => vec![f(&[1], HIGH_HZ, LONG_MS)],
    };
    TactilePattern { id, frames }
}

/// Parses a pattern id and encodes it.
pub fn encode_pattern_str(id: &str) -> Result<TactilePattern, TactileError> {
    Ok(encode_pattern(id.parse()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TactileConfig {
    /// Lateral offsets below this magnitude reuse the last side, m.
    pub deadband: f64,
    /// Quiet time after each pattern, ms.
    pub cooldown_ms: f64,
    /// Hand speed below which the heading is held, m/s.
    pub motion_epsilon: f64,
}

impl Default for TactileConfig {
    fn default() -> Self {
        Self {
            deadband: 0.05,
            cooldown_ms: 300.0,
            motion_epsilon: 0.05,
        }
    }
}

/// Side used for guidance: the displacement's own side outside the dead
/// band, otherwise the last side seen outside it.
pub fn guidance_side(displacement: Option<f64>, last_side: Option<Side>, deadband: f64) -> Option<Side> {
    match displacement {
        Some(d) if d.abs() >= deadband => Side::of(d),
        Some(_) => last_side,
        None => None,
    }
}

/// Pattern for a formation state and centroid side. Contraction points
/// the operator toward the displacement; extension points away from it.
pub fn select_pattern(label: FormationLabel, side: Option<Side>) -> Option<PatternId> {
    match (label, side?) {
        (FormationLabel::Regular, _) => None,
        (FormationLabel::Contracted, Side::Right) => Some(PatternId::CR),
        (FormationLabel::Contracted, Side::Left) => Some(PatternId::CL),
        (FormationLabel::Extended, Side::Right) => Some(PatternId::EL),
        (FormationLabel::Extended, Side::Left) => Some(PatternId::ER),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerSnapshot {
    pub label: FormationLabel,
    pub side: Side,
    pub displacement: f64,
}

/// One pattern playback: ticks `[start_tick, end_tick)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternEvent {
    pub id: PatternId,
    pub start_tick: u64,
    pub end_tick: u64,
    pub trigger: TriggerSnapshot,
}

/// Result of one engine update.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileUpdate {
    pub state: FormationStateLabel,
    pub label_changed: bool,
    pub displacement: Option<f64>,
    pub started: Option<PatternEvent>,
    pub ended: Option<PatternEvent>,
    pub active: Option<PatternId>,
}

fn ticks_for(ms: f64, sample_time: f64) -> u64 {
    let ticks = ms / 1000.0 / sample_time;
    (ticks - 1e-9).ceil().max(0.0) as u64
}

/// Tick-driven classifier and single-glove pattern scheduler.
#[derive(Debug, Clone)]
pub struct TactileEngine {
    reference: FormationReference,
    thresholds: ClassifierThresholds,
    config: TactileConfig,
    sample_time: f64,
    label: FormationLabel,
    heading: HeadingTracker,
    last_side: Option<Side>,
    playing: Option<PatternEvent>,
    quiet_until: u64,
}

impl TactileEngine {
    pub fn new(
        reference: FormationReference,
        thresholds: ClassifierThresholds,
        config: TactileConfig,
        sample_time: f64,
    ) -> Self {
        Self {
            reference,
            thresholds,
            config,
            sample_time,
            label: FormationLabel::Regular,
            heading: HeadingTracker::default(),
            last_side: None,
            playing: None,
            quiet_until: 0,
        }
    }

    pub fn reference(&self) -> &FormationReference {
        &self.reference
    }

    pub fn label(&self) -> FormationLabel {
        self.label
    }

    pub fn active(&self) -> Option<&PatternEvent> {
        self.playing.as_ref()
    }

    /// Intensities the glove plays at `tick`.
    pub fn intensities_at(&self, tick: u64) -> [u16; 5] {
        match &self.playing {
            Some(ev) if tick >= ev.start_tick && tick < ev.end_tick => {
                let elapsed = (tick - ev.start_tick) as f64 * self.sample_time * 1000.0;
                encode_pattern(ev.id).intensities_at(elapsed)
            }
            _ => [0; 5],
        }
    }

    pub fn update(
        &mut self,
        tick: u64,
        positions: &[Point],
        hand: Point,
        hand_velocity: Point,
    ) -> TactileUpdate {
        let state = classify_formation_state(positions, &self.reference, &self.thresholds, self.label);
        let label_changed = state.label != self.label;
        self.label = state.label;

        let displacement = self
            .heading
            .update(hand_velocity.xy(), self.config.motion_epsilon)
            .map(|dir| com_displacement(positions, hand + self.reference.centroid_offset, dir));
        let side = guidance_side(displacement, self.last_side, self.config.deadband);
        if let Some(d) = displacement {
            if d.abs() >= self.config.deadband {
                self.last_side = Side::of(d);
            }
        }

        let mut ended = None;
        if let Some(ev) = self.playing {
            if tick >= ev.end_tick {
                ended = Some(ev);
                self.playing = None;
            }
        }

        let mut started = None;
        if self.playing.is_none() && tick >= self.quiet_until {
            if let (Some(id), Some(side)) = (select_pattern(state.label, side), side) {
                let duration = f64::from(encode_pattern(id).duration_ms());
                let end_tick = tick + ticks_for(duration, self.sample_time).max(1);
                let ev = PatternEvent {
                    id,
                    start_tick: tick,
                    end_tick,
                    trigger: TriggerSnapshot {
                        label: state.label,
                        side,
                        displacement: displacement.unwrap_or(0.0),
                    },
                };
                self.quiet_until = end_tick + ticks_for(self.config.cooldown_ms, self.sample_time);
                self.playing = Some(ev);
                started = Some(ev);
            }
        }

        TactileUpdate {
            state,
            label_changed,
            displacement,
            started,
            ended,
            active: self.playing.map(|e| e.id),
        }
    }
}

/// Reports tactile configuration problems.
pub fn config_violations(t: &ClassifierThresholds, c: &TactileConfig) -> Vec<Violation> {
    let mut v = Vec::new();
    if !(t.threshold > 0.0 && t.threshold < 1.0) {
        v.push(Violation::new("/classifier/threshold", "must lie in (0, 1)"));
    }
    if !(t.hysteresis >= 0.0 && t.hysteresis < t.threshold) {
        v.push(Violation::new("/classifier/hysteresis", "must lie in [0, threshold)"));
    }
    if !(c.deadband >= 0.0) {
        v.push(Violation::new("/tactile/deadband", "must be non-negative"));
    }
    if !(c.cooldown_ms >= 0.0) {
        v.push(Violation::new("/tactile/cooldown_ms", "must be non-negative"));
    }
    if !(c.motion_epsilon > 0.0) {
        v.push(Violation::new("/tactile/motion_epsilon", "must be positive"));
    }
    v
}
