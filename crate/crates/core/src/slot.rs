//! Per-slot realization of positions, fading and data sizes.

use crate::mobility::{step_rwp, ChannelSample, RwpState};
use crate::rng::{stream_rng, uniform_in, Stream};
use crate::scenario::{Point, Scenario};
use rand_distr::{Distribution, Exp1};

#[derive(Debug, Clone, PartialEq)]
pub struct SlotState {
    pub tau: usize,
    pub frame: usize,
    pub positions: Vec<Point>,
    /// Walk state per PT; unused when positions come from a trace.
    pub rwp: Vec<RwpState>,
    /// `|h|²` indexed `[pt][es]`.
    pub fading: Vec<Vec<f64>>,
    /// `S_i(τ)` in bits.
    pub personalized: Vec<f64>,
    /// `λ_i(τ)` in bits.
    pub task: Vec<f64>,
    /// `D_i(t)` in bits, fixed within a frame.
    pub knowledge: Vec<f64>,
}

impl SlotState {
    pub fn is_frame_start(&self, k: usize) -> bool {
        self.tau.is_multiple_of(k)
    }

    pub fn num_pts(&self) -> usize {
        self.positions.len()
    }

    pub fn distance(&self, sc: &Scenario, i: usize, m: usize) -> f64 {
        self.positions[i].distance(&sc.es_positions[m])
    }

    pub fn channel(&self, sc: &Scenario, i: usize, m: usize) -> ChannelSample {
        ChannelSample::new(sc, self.distance(sc, i, m), self.fading[i][m])
    }

    /// Closest ES, ties to the lowest index.
    pub fn nearest_es(&self, sc: &Scenario, i: usize) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for m in 0..sc.num_ess {
            let d = self.distance(sc, i, m);
            if d < best_d {
                best_d = d;
                best = m;
            }
        }
        best
    }
}

fn draw_sizes(sc: &Scenario, tau: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = stream_rng(sc.seed, Stream::DataSizes, tau as u64);
    let mut s = Vec::with_capacity(sc.num_pts);
    let mut l = Vec::with_capacity(sc.num_pts);
    for _ in 0..sc.num_pts {
        s.push(uniform_in(&mut rng, sc.personalized_bits.low, sc.personalized_bits.high));
        l.push(uniform_in(&mut rng, sc.task_bits.low, sc.task_bits.high));
    }
    (s, l)
}

fn draw_knowledge(sc: &Scenario, frame: usize) -> Vec<f64> {
    let mut rng = stream_rng(sc.seed, Stream::Knowledge, frame as u64);
    (0..sc.num_pts).map(|_| uniform_in(&mut rng, sc.knowledge_bits.low, sc.knowledge_bits.high)).collect()
}

fn draw_fading(sc: &Scenario, tau: usize) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(sc.seed, Stream::Fading, tau as u64);
    (0..sc.num_pts).map(|_| (0..sc.num_ess).map(|_| Exp1.sample(&mut rng)).collect()).collect()
}

/// Draws slot `prev.tau + 1`, or slot 0 when `prev` is `None`.
///
/// Every stream is keyed by the seed and the slot (or frame) index, so the
/// same slot always gets the same numbers regardless of call history.
pub fn draw_slot(sc: &Scenario, prev: Option<&SlotState>) -> SlotState {
    let tau = prev.map_or(0, |p| p.tau + 1);
    let k = sc.slots_per_frame;
    let frame = tau / k;

    let (positions, rwp) = match (&sc.pt_trace, prev) {
        (Some(trace), _) => {
            let pos = (0..sc.num_pts).map(|i| trace.position(i, tau)).collect();
            let idle = RwpState { waypoint: Point::default(), speed: 0.0 };
            (pos, vec![idle; sc.num_pts])
        }
        (None, None) => {
            let mut rng = stream_rng(sc.seed, Stream::InitialPositions, 0);
            let mut pos = Vec::with_capacity(sc.num_pts);
            let mut st = Vec::with_capacity(sc.num_pts);
            for _ in 0..sc.num_pts {
                pos.push(Point::new(uniform_in(&mut rng, 0.0, sc.area_side), uniform_in(&mut rng, 0.0, sc.area_side)));
                st.push(RwpState::draw(&mut rng, sc.area_side, sc.rwp_speed));
            }
            (pos, st)
        }
        (None, Some(p)) => {
            let mut rng = stream_rng(sc.seed, Stream::Mobility, tau as u64);
            let mut pos = Vec::with_capacity(sc.num_pts);
            let mut st = Vec::with_capacity(sc.num_pts);
            for i in 0..sc.num_pts {
                let (q, s) =
                    step_rwp(p.positions[i], p.rwp[i], sc.slot_duration, sc.area_side, sc.rwp_speed, &mut rng);
                pos.push(q);
                st.push(s);
            }
            (pos, st)
        }
    };

    let knowledge = match prev {
        Some(p) if !tau.is_multiple_of(k) => p.knowledge.clone(),
        _ => draw_knowledge(sc, frame),
    };
    let (personalized, task) = draw_sizes(sc, tau);
    SlotState { tau, frame, positions, rwp, fading: draw_fading(sc, tau), personalized, task, knowledge }
}

/// Iterator over the `T·K` slots of a scenario.
pub struct SlotGenerator<'a> {
    sc: &'a Scenario,
    last: Option<SlotState>,
}

impl<'a> SlotGenerator<'a> {
    pub fn new(sc: &'a Scenario) -> Self {
        SlotGenerator { sc, last: None }
    }
}

impl Iterator for SlotGenerator<'_> {
    type Item = SlotState;

    fn next(&mut self) -> Option<SlotState> {
        if self.last.as_ref().is_some_and(|s| s.tau + 1 >= self.sc.total_slots()) {
            return None;
        }
        let s = draw_slot(self.sc, self.last.as_ref());
        self.last = Some(s.clone());
        Some(s)
    }
}
