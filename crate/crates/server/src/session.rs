//! Transport-free session: one world, one operator, message in, frames out.

use swarmlink::hand_trace::HandSample;
use swarmlink::metrics::{compute_run_metrics, REPORT_NOTE};
use swarmlink::scenario::preset;
use swarmlink::tactile::encode_pattern;
use swarmlink::trace::{EventKind, TraceEvent};
use swarmlink::{HandTrace, Point, Scenario, SimError, TraceLog, World};

use crate::protocol::{
    ClientMessage, ControlAction, DroneView, ErrorCode, FinishView, Mode, ServerMessage, XY,
};

pub const DEFAULT_DECIMATION: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Running,
    Paused,
    Finished,
    Halted,
}

#[derive(Debug)]
pub struct Session {
    scenario: Scenario,
    world: World,
    mode: Mode,
    phase: Phase,
    decimation: u32,
    pose: Option<(f64, f64)>,
    hand_log: Vec<HandSample>,
    pending: Vec<TraceEvent>,
}

fn new_world(scenario: &Scenario) -> Result<World, SimError> {
    World::with_source(scenario.clone(), "live", None)
}

impl Session {
    pub fn new(scenario: Scenario, mode: Mode) -> Result<Self, SimError> {
        let world = new_world(&scenario)?;
        let start = scenario.start.hand;
        Ok(Self {
            scenario,
            world,
            mode,
            phase: Phase::Idle,
            decimation: DEFAULT_DECIMATION,
            pose: None,
            hand_log: vec![HandSample { t: 0.0, position: start }],
            pending: Vec::new(),
        })
    }

    pub fn with_decimation(mut self, every: u32) -> Self {
        self.decimation = every.max(1);
        self
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn trace(&self) -> &TraceLog {
        self.world.trace()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_running(&self) -> bool {
        self.phase == Phase::Running
    }

    /// Hand samples the world consumed, one per tick at `t = k·dt`, led by
    /// the start pose at `t = 0`.
    pub fn hand_trace(&self) -> HandTrace {
        HandTrace::new(self.hand_log.clone()).expect("ticks are increasing")
    }

    pub fn pause(&mut self) {
        if self.phase == Phase::Running {
            self.phase = Phase::Paused;
        }
    }

    pub fn scenario_frame(&self) -> ServerMessage {
        let visual = self.mode == Mode::Visual;
        ServerMessage::Scenario {
            name: self.scenario.name.clone(),
            hash: self.scenario.hash(),
            mode: self.mode,
            running: self.is_running(),
            sample_time: self.scenario.sample_time,
            decimation: self.decimation,
            workspace_size: self.scenario.workspace_size,
            obstacles: visual.then(|| self.scenario.obstacles.clone()),
            finish: self.scenario.finish.filter(|_| visual).map(|f| FinishView {
                center: f.center,
                radius: f.radius,
            }),
        }
    }

    fn reset_with(&mut self, scenario: Scenario) -> Result<(), SimError> {
        self.world = new_world(&scenario)?;
        self.hand_log = vec![HandSample {
            t: 0.0,
            position: scenario.start.hand,
        }];
        self.scenario = scenario;
        self.phase = Phase::Idle;
        self.pose = None;
        self.pending.clear();
        Ok(())
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        match msg {
            ClientMessage::HandPose { x, y, .. } => {
                self.pose = Some((x, y));
                Vec::new()
            }
            ClientMessage::Control { action } => match action {
                ControlAction::Start => match self.phase {
                    Phase::Idle | Phase::Paused => {
                        self.phase = Phase::Running;
                        vec![self.scenario_frame()]
                    }
                    Phase::Running => Vec::new(),
                    Phase::Finished | Phase::Halted => vec![ServerMessage::error(
                        ErrorCode::SimHalted,
                        "session is over; send reset first",
                    )],
                },
                ControlAction::Pause => {
                    self.pause();
                    vec![self.scenario_frame()]
                }
                ControlAction::Reset => {
                    let scenario = self.scenario.clone();
                    self.reset_with(scenario).expect("scenario already validated");
                    vec![self.scenario_frame()]
                }
                ControlAction::SetMode { mode } => {
                    self.mode = mode;
                    vec![self.scenario_frame()]
                }
                ControlAction::LoadScenario { name } => match preset(&name) {
                    Ok(s) => match self.reset_with(s) {
                        Ok(()) => vec![self.scenario_frame()],
                        Err(e) => vec![ServerMessage::error(ErrorCode::InvalidValue, e.to_string())],
                    },
                    Err(e) => vec![ServerMessage::error(ErrorCode::UnknownScenario, e.to_string())],
                },
            },
        }
    }

    /// Parses and handles one text frame.
    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMessage> {
        match crate::protocol::parse_client(text) {
            Ok(msg) => self.handle(msg),
            Err(err) => vec![err],
        }
    }

    fn finish_due(&self) -> bool {
        let centroid = self.world.centroid().xy();
        match (self.scenario.finish, self.scenario.duration_s) {
            (Some(f), _) => f.contains(centroid),
            (None, Some(d)) => self.world.time() >= d - 1e-9,
            (None, None) => false,
        }
    }

    fn state_frame(&mut self) -> ServerMessage {
        let visual = self.mode == Mode::Visual;
        let hand = self.world.hand().position;
        let drones = visual.then(|| {
            self.world
                .drones()
                .iter()
                .zip(self.world.goals())
                .map(|(d, g)| DroneView {
                    id: d.id,
                    x: d.position.x,
                    y: d.position.y,
                    gx: g.x,
                    gy: g.y,
                })
                .collect()
        });
        let centroid = visual.then(|| {
            let c = self.world.centroid();
            XY { x: c.x, y: c.y }
        });
        ServerMessage::State {
            tick: self.world.tick(),
            t_sim: self.world.time(),
            drones,
            centroid,
            hand: XY { x: hand.x, y: hand.y },
            formation_label: visual.then(|| self.world.tactile().label()),
            active_pattern: self.world.tactile().active().map(|p| p.id),
            events: std::mem::take(&mut self.pending),
        }
    }

    /// Advances one tick if running. Consumes only the newest pose.
    pub fn tick(&mut self) -> Vec<ServerMessage> {
        if self.phase != Phase::Running {
            return Vec::new();
        }
        let start = self.scenario.start.hand;
        let last = self.hand_log.last().map(|s| s.position).unwrap_or(start);
        let sample = match self.pose.take() {
            Some((x, y)) => Point::new(x, y, start.z),
            None => last,
        };
        let mut out = Vec::new();
        let events = match self.world.simulate_tick(sample) {
            Ok(ev) => ev,
            Err(e) => {
                self.phase = Phase::Halted;
                out.push(ServerMessage::error(ErrorCode::SimHalted, e.to_string()));
                return out;
            }
        };
        self.hand_log.push(HandSample {
            t: self.world.time(),
            position: sample,
        });
        for ev in &events {
            if let EventKind::PatternStart { pattern, .. } = ev.kind {
                out.push(ServerMessage::Pattern {
                    tick: ev.tick,
                    id: pattern,
                    timeline: encode_pattern(pattern),
                });
            }
        }
        self.pending.extend(events);

        let finished = self.finish_due();
        if finished {
            self.world.mark("finish");
            if let Some(ev) = self.world.trace().events.last() {
                self.pending.push(ev.clone());
            }
        }
        if finished || self.world.tick().is_multiple_of(u64::from(self.decimation)) {
            out.push(self.state_frame());
        }
        if finished {
            self.phase = Phase::Finished;
            out.push(ServerMessage::MetricsSummary {
                note: REPORT_NOTE.to_string(),
                metrics: compute_run_metrics(self.world.trace()).ok(),
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(name: &str) -> Session {
        Session::new(preset(name).unwrap(), Mode::Visual).unwrap()
    }

    fn start(s: &mut Session) {
        s.handle(ClientMessage::Control { action: ControlAction::Start });
    }

    #[test]
    fn idle_session_does_not_step() {
        let mut s = session("rhombus-4");
        assert!(s.tick().is_empty());
        assert_eq!(s.world().tick(), 0);
    }

    #[test]
    fn state_frames_follow_decimation() {
        let mut s = session("rhombus-4");
        start(&mut s);
        let ticks: Vec<u64> = (0..10)
            .flat_map(|_| s.tick())
            .filter_map(|m| match m {
                ServerMessage::State { tick, .. } => Some(tick),
                _ => None,
            })
            .collect();
        assert_eq!(ticks, vec![2, 4, 6, 8, 10]);
    }

    #[test]
    fn only_the_newest_pose_is_consumed() {
        let mut s = session("rhombus-4");
        start(&mut s);
        for x in [0.1, 0.2, 0.3] {
            s.handle(ClientMessage::HandPose { t_client: 0.0, x, y: 0.0 });
        }
        s.tick();
        s.tick();
        let hand = s.hand_trace();
        let xs: Vec<f64> = hand.samples().iter().map(|h| h.position.x).collect();
        assert_eq!(xs, vec![0.0, 0.3, 0.3]);
        assert_eq!(hand.samples()[1].position.z, s.scenario().start.hand.z);
    }

    #[test]
    fn idle_hand_holds_and_drones_stay() {
        let mut s = session("rhombus-4");
        start(&mut s);
        for _ in 0..60 {
            s.tick();
        }
        let row = s.trace().rows.last().unwrap();
        assert_eq!(row.hand_velocity, Point::zero());
        for (p, g) in row.positions.iter().zip(&row.goals) {
            assert!((*p - *g).norm() < 1e-12);
        }
    }

    #[test]
    fn blind_frames_withhold_positions() {
        let mut s = session("triangle-3-avoidance");
        let frames = s.handle(ClientMessage::Control {
            action: ControlAction::SetMode { mode: Mode::Blind },
        });
        match &frames[0] {
            ServerMessage::Scenario { obstacles, finish, .. } => {
                assert!(obstacles.is_none() && finish.is_none());
            }
            other => panic!("{other:?}"),
        }
        start(&mut s);
        s.tick();
        match s.tick().pop().unwrap() {
            ServerMessage::State { drones, centroid, formation_label, .. } => {
                assert!(drones.is_none() && centroid.is_none() && formation_label.is_none());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_scenario_is_reported() {
        let mut s = session("rhombus-4");
        let out = s.handle_text(r#"{"type":"control","action":"load_scenario","name":"moon"}"#);
        assert!(matches!(out[0], ServerMessage::Error { code: ErrorCode::UnknownScenario, .. }));
        assert_eq!(s.scenario().name, "rhombus-4");
    }

    #[test]
    fn pause_stops_the_clock() {
        let mut s = session("rhombus-4");
        start(&mut s);
        s.tick();
        s.handle(ClientMessage::Control { action: ControlAction::Pause });
        s.tick();
        assert_eq!(s.world().tick(), 1);
        start(&mut s);
        s.tick();
        assert_eq!(s.world().tick(), 2);
    }

    #[test]
    fn reaching_the_finish_ends_the_run() {
        let mut scenario = preset("rhombus-4").unwrap();
        scenario.duration_s = Some(0.1);
        let mut s = Session::new(scenario, Mode::Visual).unwrap();
        start(&mut s);
        let frames: Vec<ServerMessage> = (0..10).flat_map(|_| s.tick()).collect();
        assert_eq!(s.phase(), Phase::Finished);
        assert_eq!(s.world().tick(), 6);
        assert!(matches!(frames.last(), Some(ServerMessage::MetricsSummary { metrics: Some(_), .. })));
        let out = s.handle(ClientMessage::Control { action: ControlAction::Start });
        assert!(matches!(out[0], ServerMessage::Error { code: ErrorCode::SimHalted, .. }));
    }
}
