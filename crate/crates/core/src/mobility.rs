//! Random-waypoint movement and the PT to ES uplink model.

use crate::rng::uniform_in;
use crate::scenario::{PathlossSign, Point, Range, Scenario};
use rand::Rng;

/// Current leg of a random-waypoint walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwpState {
    pub waypoint: Point,
    pub speed: f64,
}

impl RwpState {
    pub fn draw<R: Rng>(rng: &mut R, side: f64, speed: Range) -> RwpState {
        RwpState {
            waypoint: Point::new(uniform_in(rng, 0.0, side), uniform_in(rng, 0.0, side)),
            speed: uniform_in(rng, speed.low, speed.high),
        }
    }
}

/// Advances one PT by `dt` seconds toward its waypoint.
///
/// A PT that reaches its waypoint stops there for the rest of the step and
/// draws a new waypoint and speed (zero pause time).
pub fn step_rwp<R: Rng>(
    position: Point,
    state: RwpState,
    dt: f64,
    side: f64,
    speed: Range,
    rng: &mut R,
) -> (Point, RwpState) {
    if dt <= 0.0 {
        return (position, state);
    }
    let dist = position.distance(&state.waypoint);
    let reach = state.speed * dt;
    if reach >= dist {
        return (state.waypoint, RwpState::draw(rng, side, speed));
    }
    let w = reach / dist;
    let p = Point::new(
        (position.x + w * (state.waypoint.x - position.x)).clamp(0.0, side),
        (position.y + w * (state.waypoint.y - position.y)).clamp(0.0, side),
    );
    (p, state)
}

/// Link state of one PT and ES pair in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSample {
    pub distance: f64,
    pub fading_power: f64,
    pub path_gain: f64,
    /// Full-band SNR `g·p·|h|²/(N0·B)`; the share `b` divides it later.
    pub snr: f64,
}

pub fn path_gain(sc: &Scenario, distance: f64) -> f64 {
    let d = distance.max(sc.min_distance);
    match sc.pathloss_sign {
        PathlossSign::Physical => d.powf(-sc.pathloss_exp),
        PathlossSign::Literal => d.powf(sc.pathloss_exp),
    }
}

impl ChannelSample {
    pub fn new(sc: &Scenario, distance: f64, fading_power: f64) -> ChannelSample {
        let g = path_gain(sc, distance);
        ChannelSample {
            distance,
            fading_power,
            path_gain: g,
            snr: g * sc.tx_power_pt * fading_power / (sc.noise_psd * sc.bandwidth_per_es),
        }
    }
}

/// Rate with share `b` of bandwidth `bandwidth` and full-band SNR `snr`.
pub fn rate_from_snr(bandwidth: f64, snr: f64, b: f64) -> f64 {
    if b <= 0.0 {
        return 0.0;
    }
    b * bandwidth * (snr / b).ln_1p() / std::f64::consts::LN_2
}

/// Uplink rate in bit/s; zero without association.
pub fn uplink_rate(sc: &Scenario, channel: &ChannelSample, associated: bool, b: f64) -> f64 {
    if !associated {
        return 0.0;
    }
    rate_from_snr(sc.bandwidth_per_es, channel.snr, b)
}
