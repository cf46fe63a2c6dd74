//! Synthetic massive-MIMO channel records.
//!
//! The received tensor follows `Y_f = H_f ⊙ Γ_f + N_f` with the RF-chain response
//! `Γ_f(m, t) = d_m exp(j(φ_m - t η_{m,f}))`. The propagation channel `H` is a
//! sum of plane-wave paths observed by a half-wavelength planar array (4 rows,
//! antennas numbered row-wise from the upper-left corner) across `F` equally
//! spaced subcarriers:
//!
//! `H(t, f, m) = Σ_p g_p(t) · exp(jπ(c_m sin az_p cos el_p + r_m sin el_p)) · exp(-j2π f Δf τ_p(t))`
//!
//! Static paths (the diffuse room response and, in line of sight, one dominant
//! path with Rician factor `K`) never change. The activity adds "event" paths
//! whose dynamics depend on the class:
//!
//! * `A1` static: the event path is present but frozen.
//! * `A2` periodic: sinusoidal gain and phase modulation, period 0.5-2 s.
//! * `A3` random: three paths whose phases follow independent random walks.
//! * `A4` rotate + shift: constant Doppler rotation while swaying back and forth
//!   (delay, azimuth and array footprint oscillate with a 1-2.5 s period).
//! * `A5` rotate: constant Doppler rotation only.
//!
//! Every random draw comes from seeded ChaCha streams, so a record is a pure
//! function of its [`SimConfig`] and [`ActivityKind`].

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::io;
use crate::rng::{derive_seed, seeded};
use crate::tensor::{ComplexTensor3, FrobeniusNorm, RealMatrix, C64};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActivityKind {
    #[serde(rename = "A1_static")]
    A1Static,
    #[serde(rename = "A2_periodic")]
    A2Periodic,
    #[serde(rename = "A3_random")]
    A3Random,
    #[serde(rename = "A4_rotate_shift")]
    A4RotateShift,
    #[serde(rename = "A5_rotate")]
    A5Rotate,
}

impl ActivityKind {
    pub const ALL: [ActivityKind; 5] = [
        ActivityKind::A1Static,
        ActivityKind::A2Periodic,
        ActivityKind::A3Random,
        ActivityKind::A4RotateShift,
        ActivityKind::A5Rotate,
    ];

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Option<Self> {
        Self::ALL.get(label).copied()
    }

    pub fn short_name(self) -> &'static str {
        ["A1", "A2", "A3", "A4", "A5"][self.label()]
    }

    pub fn name(self) -> &'static str {
        ["A1_static", "A2_periodic", "A3_random", "A4_rotate_shift", "A5_rotate"][self.label()]
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s || k.short_name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "LOS")]
    Los,
    #[serde(rename = "NLOS")]
    Nlos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Snapshots `T`.
    #[serde(rename = "T")]
    pub snapshots: usize,
    /// Subcarriers `F`.
    #[serde(rename = "F")]
    pub subcarriers: usize,
    /// Antennas `M`.
    #[serde(rename = "M")]
    pub antennas: usize,
    /// Seconds between snapshots.
    #[serde(default = "defaults::snapshot_interval")]
    pub snapshot_interval: f64,
    #[serde(default = "defaults::carrier_hz")]
    pub carrier_hz: f64,
    /// Total sounded bandwidth; subcarrier spacing is `bandwidth_hz / F`.
    #[serde(default = "defaults::bandwidth_hz")]
    pub bandwidth_hz: f64,
    pub scenario: Scenario,
    /// SNR of a line-of-sight link. Both scenarios share one noise floor, so a
    /// non-line-of-sight record, missing the dominant path, sits [`SimConfig::effective_snr_db`] lower.
    pub snr_db: f64,
    #[serde(default)]
    pub frame_loss_prob: f64,
    pub seed: u64,
    #[serde(default = "defaults::diffuse_paths")]
    pub diffuse_paths: usize,
    /// Dominant-path power over the diffuse sum, line-of-sight only.
    #[serde(default = "defaults::rician_k_db")]
    pub rician_k_db: f64,
    /// Power of one event path relative to the total static power.
    #[serde(default = "defaults::event_power_db")]
    pub event_power_db: f64,
    /// Optional slow power ramp (dB across the whole record) on the event paths;
    /// used to inject a deliberate early/late drift.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_ramp_db: Option<f64>,
    /// Seed of the room (static paths) and the receiver hardware (RF chains).
    /// Records of one campaign share it; `None` draws both from `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_seed: Option<u64>,
}

mod defaults {
    pub fn snapshot_interval() -> f64 {
        0.01
    }
    pub fn carrier_hz() -> f64 {
        3.7e9
    }
    pub fn bandwidth_hz() -> f64 {
        20e6
    }
    pub fn diffuse_paths() -> usize {
        8
    }
    pub fn rician_k_db() -> f64 {
        10.0
    }
    pub fn event_power_db() -> f64 {
        -6.0
    }
}

impl SimConfig {
    /// A configuration with the measurement-campaign record shape
    /// (`T = 3000`, `F = 100`, `M = 100`) and default impairments.
    pub fn new(snapshots: usize, subcarriers: usize, antennas: usize, scenario: Scenario, seed: u64) -> Self {
        Self {
            snapshots,
            subcarriers,
            antennas,
            snapshot_interval: defaults::snapshot_interval(),
            carrier_hz: defaults::carrier_hz(),
            bandwidth_hz: defaults::bandwidth_hz(),
            scenario,
            snr_db: 20.0,
            frame_loss_prob: 0.0,
            seed,
            diffuse_paths: defaults::diffuse_paths(),
            rician_k_db: defaults::rician_k_db(),
            event_power_db: defaults::event_power_db(),
            event_ramp_db: None,
            room_seed: None,
        }
    }

    /// SNR actually applied to the record: `snr_db` in line of sight, and
    /// `snr_db - 10 log10(1 + K)` without the dominant path.
    pub fn effective_snr_db(&self) -> f64 {
        match self.scenario {
            Scenario::Los => self.snr_db,
            Scenario::Nlos if self.diffuse_paths == 0 => self.snr_db,
            Scenario::Nlos => self.snr_db - 10.0 * (1.0 + 10f64.powf(self.rician_k_db / 10.0)).log10(),
        }
    }

    fn room(&self) -> u64 {
        self.room_seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.snapshots == 0 || self.subcarriers == 0 || self.antennas == 0 {
            return Err(Error::Config("T, F and M must all be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.frame_loss_prob) {
            return Err(Error::Config(format!(
                "frame_loss_prob must lie in [0, 0.5), got {}",
                self.frame_loss_prob
            )));
        }
        let positive = [
            ("snapshot_interval", self.snapshot_interval),
            ("carrier_hz", self.carrier_hz),
            ("bandwidth_hz", self.bandwidth_hz),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.snr_db.is_finite() || !self.rician_k_db.is_finite() || !self.event_power_db.is_finite() {
            return Err(Error::Config("snr_db, rician_k_db and event_power_db must be finite".into()));
        }
        if self.event_ramp_db.is_some_and(|r| !r.is_finite()) {
            return Err(Error::Config("event_ramp_db must be finite".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.snapshots, self.subcarriers, self.antennas]
    }

    fn subcarrier_spacing(&self) -> f64 {
        self.bandwidth_hz / self.subcarriers as f64
    }
}

/// Position of antenna `m` as (row, column) in half-wavelength units.
/// Arrays whose size is a multiple of four are 4-row planar arrays numbered
/// row-wise; other sizes are uniform linear arrays.
pub fn antenna_position(m: usize, antennas: usize) -> (usize, usize) {
    let (_, cols) = grid_shape(antennas);
    (m / cols, m % cols)
}

/// `(rows, columns)` of the array layout used by [`antenna_position`].
pub fn grid_shape(antennas: usize) -> (usize, usize) {
    if antennas % 4 == 0 {
        (4, antennas / 4)
    } else {
        (1, antennas)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationPath {
    pub gain: C64,
    pub delay_s: f64,
    pub azimuth: f64,
    pub elevation: f64,
}

impl PropagationPath {
    fn draw(rng: &mut ChaCha8Rng, power: f64, delay_s: f64) -> Self {
        Self {
            gain: C64::from_polar(power.sqrt(), rng.random_range(0.0..TAU)),
            delay_s,
            azimuth: rng.random_range(-PI / 2.0..PI / 2.0),
            elevation: rng.random_range(-0.4..0.4),
        }
    }
}

/// Time behaviour of the event paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventDynamics {
    Static,
    Periodic {
        period_snapshots: f64,
        depth: f64,
        phase_swing: f64,
        offset: f64,
    },
    RandomWalk {
        step_std: Vec<f64>,
        walk_seed: u64,
    },
    /// Rotation gives the Doppler term. The shifting variant also sways back and
    /// forth: delay, azimuth and footprint column follow `sin(2π t / sway_period_s + sway_phase)`.
    Rotating {
        doppler_hz: f64,
        delay_swing_s: f64,
        azimuth_swing: f64,
        sway_period_s: f64,
        sway_phase: f64,
    },
}

impl EventDynamics {
    /// Sway position in [-1, 1] at `secs`; zero for events that stay put.
    fn sway(&self, secs: f64) -> f64 {
        match self {
            EventDynamics::Rotating { sway_period_s, sway_phase, .. } if *sway_period_s > 0.0 => {
                (TAU * secs / sway_period_s + sway_phase).sin()
            }
            _ => 0.0,
        }
    }
}

/// Region of the array the person is close to, in antenna-grid units. Antenna
/// `(row, col)` is weighted by `exp(-(row - centre_row)² / (2 width_rows²) - (col - centre_col(t))² / (2 width_cols²))`,
/// and the column centre moves by `sway_cols` times the event's sway position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub centre_row: f64,
    pub centre_col: f64,
    pub width_rows: f64,
    pub width_cols: f64,
    pub sway_cols: f64,
}

impl Footprint {
    fn weights(&self, positions: &[(f64, f64)], sway: f64) -> Vec<f64> {
        let col = self.centre_col + self.sway_cols * sway;
        positions
            .iter()
            .map(|&(r, c)| {
                let dr = (r - self.centre_row) / self.width_rows;
                let dc = (c - col) / self.width_cols;
                (-0.5 * (dr * dr + dc * dc)).exp()
            })
            .collect()
    }
}

/// All random quantities of one record's propagation channel.
///
/// Event paths reach the array through the footprint weights. In line of sight
/// the person also shadows the dominant path (the first static path): its gain
/// at an antenna is scaled by `1 - blockage_depth · s(t) · weight`, with `s(t)`
/// the activity's own time signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub static_paths: Vec<PropagationPath>,
    pub event_paths: Vec<PropagationPath>,
    pub dynamics: EventDynamics,
    pub footprint: Footprint,
    pub blockage_depth: Option<f64>,
}

impl Scene {
    pub fn draw(cfg: &SimConfig, kind: ActivityKind) -> Result<Self> {
        cfg.validate()?;
        let mut room = seeded(derive_seed(cfg.room(), 6));
        Ok(Self::draw_from(cfg, kind, &mut room, &mut seeded(derive_seed(cfg.seed, 1))))
    }

    fn draw_from(cfg: &SimConfig, kind: ActivityKind, room: &mut ChaCha8Rng, rng: &mut ChaCha8Rng) -> Self {
        let p = cfg.diffuse_paths;
        let delays: Vec<f64> = (0..p).map(|_| room.random_range(30e-9..300e-9)).collect();
        let raw: Vec<f64> = delays
            .iter()
            .map(|&d| (-d / 100e-9).exp() * room.random_range(0.5..1.5))
            .collect();
        let total: f64 = raw.iter().sum();
        let mut static_paths: Vec<PropagationPath> = raw
            .iter()
            .zip(&delays)
            .map(|(&w, &d)| PropagationPath::draw(room, w / total, d))
            .collect();
        let mut static_power = if p > 0 { 1.0 } else { 0.0 };
        if cfg.scenario == Scenario::Los {
            let k = 10f64.powf(cfg.rician_k_db / 10.0);
            let delay = room.random_range(10e-9..30e-9);
            let los = PropagationPath::draw(room, if p > 0 { k } else { 1.0 }, delay);
            static_power += los.gain.norm_sqr();
            static_paths.insert(0, los);
        }
        let event_power = 10f64.powf(cfg.event_power_db / 10.0) * static_power.max(1.0);
        let n_event = if kind == ActivityKind::A3Random { 3 } else { 1 };
        let event_paths = (0..n_event)
            .map(|_| {
                let delay = rng.random_range(20e-9..120e-9);
                PropagationPath::draw(rng, event_power, delay)
            })
            .collect();
        let sign = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let dt = cfg.snapshot_interval;
        let dynamics = match kind {
            ActivityKind::A1Static => EventDynamics::Static,
            ActivityKind::A2Periodic => EventDynamics::Periodic {
                period_snapshots: rng.random_range(0.5..2.0) / dt,
                depth: rng.random_range(0.5..0.9),
                phase_swing: rng.random_range(0.5..2.0),
                offset: rng.random_range(0.0..TAU),
            },
            ActivityKind::A3Random => EventDynamics::RandomWalk {
                step_std: (0..n_event).map(|_| rng.random_range(0.7..1.2)).collect(),
                walk_seed: rng.random(),
            },
            ActivityKind::A4RotateShift => EventDynamics::Rotating {
                doppler_hz: sign(rng) * rng.random_range(3.0..15.0),
                delay_swing_s: sign(rng) * rng.random_range(10e-9..40e-9),
                azimuth_swing: sign(rng) * rng.random_range(0.1..0.4),
                sway_period_s: rng.random_range(1.0..2.5),
                sway_phase: rng.random_range(0.0..TAU),
            },
            ActivityKind::A5Rotate => EventDynamics::Rotating {
                doppler_hz: sign(rng) * rng.random_range(3.0..15.0),
                delay_swing_s: 0.0,
                azimuth_swing: 0.0,
                sway_period_s: 0.0,
                sway_phase: 0.0,
            },
        };
        let (rows, cols) = grid_shape(cfg.antennas);
        let (rows, cols) = (rows as f64, cols as f64);
        let moving = kind == ActivityKind::A4RotateShift;
        let footprint = Footprint {
            centre_row: rng.random_range(-0.5..rows - 0.5),
            centre_col: rng.random_range(-0.5..cols - 0.5),
            width_rows: rng.random_range(0.6..1.2),
            width_cols: rng.random_range(0.15..0.35) * cols,
            sway_cols: if moving { sign(rng) * rng.random_range(0.2..0.5) * cols } else { 0.0 },
        };
        let blockage_depth = (cfg.scenario == Scenario::Los).then(|| rng.random_range(0.3..0.6));
        Self { static_paths, event_paths, dynamics, footprint, blockage_depth }
    }

    /// Time signature `s(t)` in [-1, 1] that drives the line-of-sight shadowing.
    fn signature(&self, t: usize, secs: f64, walks: &[Vec<f64>]) -> f64 {
        match &self.dynamics {
            EventDynamics::Static => 0.0,
            EventDynamics::Periodic { period_snapshots, offset, .. } => (TAU * t as f64 / period_snapshots + offset).sin(),
            EventDynamics::RandomWalk { .. } => walks[0][t].cos(),
            EventDynamics::Rotating { doppler_hz, .. } => (TAU * doppler_hz * secs).cos(),
        }
    }

    /// Evaluates the channel on the configured time/frequency/antenna grid.
    pub fn render(&self, cfg: &SimConfig) -> Result<ComplexTensor3> {
        cfg.validate()?;
        let [t_len, f_len, m_len] = cfg.dims();
        let df = cfg.subcarrier_spacing();
        let steer = |az: f64, el: f64| -> Vec<C64> {
            (0..m_len)
                .map(|m| {
                    let (row, col) = antenna_position(m, m_len);
                    C64::from_polar(1.0, PI * (col as f64 * az.sin() * el.cos() + row as f64 * el.sin()))
                })
                .collect()
        };
        let freq = |tau: f64| -> Vec<C64> {
            (0..f_len).map(|f| C64::from_polar(1.0, -TAU * f as f64 * df * tau)).collect()
        };
        let mut static_fm = vec![C64::new(0.0, 0.0); f_len * m_len];
        let mut los_fm = Vec::new();
        for (idx, p) in self.static_paths.iter().enumerate() {
            let a = steer(p.azimuth, p.elevation);
            let b = freq(p.delay_s);
            for (m, &am) in a.iter().enumerate() {
                for (f, &bf) in b.iter().enumerate() {
                    static_fm[f + f_len * m] += p.gain * am * bf;
                }
            }
            if idx == 0 && self.blockage_depth.is_some() {
                los_fm = static_fm.clone();
            }
        }
        let positions: Vec<(f64, f64)> = (0..m_len)
            .map(|m| {
                let (r, c) = antenna_position(m, m_len);
                (r as f64, c as f64)
            })
            .collect();

        // Per-snapshot complex gain multiplier of every event path.
        let mut walks: Vec<Vec<f64>> = Vec::new();
        if let EventDynamics::RandomWalk { step_std, walk_seed } = &self.dynamics {
            let mut rng = seeded(*walk_seed);
            walks = step_std
                .iter()
                .map(|&s| {
                    let mut phase = 0.0;
                    (0..t_len)
                        .map(|_| {
                            let cur = phase;
                            phase += s * rng.sample::<f64, _>(StandardNormal);
                            cur
                        })
                        .collect()
                })
                .collect();
        }        let ramp = |t: usize| -> f64 {
            match cfg.event_ramp_db {
                Some(db) if t_len > 1 => 10f64.powf(db * (t as f64 / (t_len - 1) as f64 - 0.5) / 20.0),
                _ => 1.0,
            }
        };

        let static_geometry: Vec<(Vec<C64>, Vec<C64>)> = self
            .event_paths
            .iter()
            .map(|p| (steer(p.azimuth, p.elevation), freq(p.delay_s)))
            .collect();

        let mut data = vec![C64::new(0.0, 0.0); t_len * f_len * m_len];
        let mut event_fm = vec![C64::new(0.0, 0.0); f_len * m_len];
        for t in 0..t_len {
            let secs = t as f64 * cfg.snapshot_interval;
            let sway = self.dynamics.sway(secs);
            event_fm.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            let weights = self.footprint.weights(&positions, sway);
            for (idx, p) in self.event_paths.iter().enumerate() {
                let (gain, moved) = match &self.dynamics {
                    EventDynamics::Static => (p.gain, None),
                    EventDynamics::Periodic { period_snapshots, depth, phase_swing, offset } => {
                        let s = (TAU * t as f64 / period_snapshots + offset).sin();
                        (p.gain * (1.0 + depth * s) * C64::from_polar(1.0, phase_swing * s), None)
                    }
                    EventDynamics::RandomWalk { .. } => (p.gain * C64::from_polar(1.0, walks[idx][t]), None),
                    EventDynamics::Rotating { doppler_hz, delay_swing_s, azimuth_swing, .. } => {
                        let g = p.gain * C64::from_polar(1.0, TAU * doppler_hz * secs);
                        if *delay_swing_s != 0.0 || *azimuth_swing != 0.0 {
                            let geometry = (
                                steer(p.azimuth + azimuth_swing * sway, p.elevation),
                                freq(p.delay_s + delay_swing_s * sway),
                            );
                            (g, Some(geometry))
                        } else {
                            (g, None)
                        }
                    }
                };
                let gain = gain * ramp(t);
                let (a, b) = match &moved {
                    Some((a, b)) => (a, b),
                    None => (&static_geometry[idx].0, &static_geometry[idx].1),
                };
                for (m, &am) in a.iter().enumerate() {
                    let gm = gain * am * weights[m];
                    for (f, &bf) in b.iter().enumerate() {
                        event_fm[f + f_len * m] += gm * bf;
                    }
                }
            }
            let shadow = self.blockage_depth.map(|d| d * self.signature(t, secs, &walks));
            for m in 0..m_len {
                for f in 0..f_len {
                    let i = f + f_len * m;
                    let mut v = static_fm[i] + event_fm[i];
                    if let Some(s) = shadow {
                        v -= los_fm[i] * (s * weights[m]);
                    }
                    data[t + t_len * i] = v;
                }
            }
        }
        ComplexTensor3::from_vec([t_len, f_len, m_len], data)
    }
}

/// Noise-free propagation channel `H` as a `T x F x M` tensor.
pub fn generate_channel(cfg: &SimConfig, kind: ActivityKind) -> Result<ComplexTensor3> {
    Scene::draw(cfg, kind)?.render(cfg)
}

/// Per-RF-chain amplitude `d_m`, initial phase `φ_m` and CFO `η_{m,f}` (rad/snapshot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfChainModel {
    pub d: Vec<f64>,
    pub phi: Vec<f64>,
    /// `M x F`.
    pub eta: RealMatrix,
}

impl RfChainModel {
    pub fn identity(antennas: usize, subcarriers: usize) -> Result<Self> {
        Ok(Self {
            d: vec![1.0; antennas],
            phi: vec![0.0; antennas],
            eta: RealMatrix::zeros(antennas, subcarriers)?,
        })
    }

    /// Draws `d ~ U[0.8, 1.2]`, `φ ~ U[0, 2π)`, `η ~ U[-0.01, 0.01]`.
    pub fn draw(antennas: usize, subcarriers: usize, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let d = (0..antennas).map(|_| rng.random_range(0.8..1.2)).collect();
        let phi = (0..antennas).map(|_| rng.random_range(0.0..TAU)).collect();
        let eta = RealMatrix::from_fn(antennas, subcarriers, |_, _| rng.random_range(-0.01..0.01))?;
        Ok(Self { d, phi, eta })
    }
}

/// `out(t, f, m) = h(t, f, m) · d_m · exp(j(φ_m - t η_{m,f}))`, `t` counted from 0.
pub fn apply_rf_chain(h: &ComplexTensor3, rf: &RfChainModel) -> Result<ComplexTensor3> {
    apply_rf_chain_from(h, rf, 0)
}

/// As [`apply_rf_chain`] with the snapshot index counted from `start`, i.e. for a
/// recording that begins `start` snapshots after the RF clocks started.
pub fn apply_rf_chain_from(h: &ComplexTensor3, rf: &RfChainModel, start: u64) -> Result<ComplexTensor3> {
    let [t_len, f_len, m_len] = h.dims();
    if rf.d.len() != m_len || rf.phi.len() != m_len || rf.eta.shape() != (m_len, f_len) {
        return Err(Error::contract(format!(
            "RF model for {} antennas x {} subcarriers does not match tensor {:?}",
            rf.d.len(),
            rf.eta.cols(),
            h.dims()
        )));
    }
    if rf.d.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::contract("RF amplitudes d_m must be positive"));
    }
    let mut data = h.data().to_vec();
    for m in 0..m_len {
        for f in 0..f_len {
            let eta = rf.eta.get(m, f);
            let base = t_len * (f + f_len * m);
            for (t, v) in data[base..base + t_len].iter_mut().enumerate() {
                *v *= C64::from_polar(rf.d[m], rf.phi[m] - (start + t as u64) as f64 * eta);
            }
        }
    }
    ComplexTensor3::from_vec(h.dims(), data)
}

/// Adds circularly-symmetric complex Gaussian noise at `snr_db` relative to the
/// mean entry power of `y`.
pub fn add_noise(y: &ComplexTensor3, snr_db: f64, seed: u64) -> Result<ComplexTensor3> {
    let power = y.frobenius_norm().powi(2) / y.len() as f64;
    if !(power > 0.0) {
        return Err(Error::contract("cannot set an SNR on a zero-power signal"));
    }
    if !snr_db.is_finite() {
        return Err(Error::contract("snr_db must be finite"));
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    let mut rng = seeded(seed);
    let data = y
        .data()
        .iter()
        .map(|&v| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            v + C64::new(sigma * re, sigma * im)
        })
        .collect();
    ComplexTensor3::from_vec(y.dims(), data)
}

/// Drops each interior snapshot (never the first or last) independently with
/// probability `p`; lost snapshots are zeroed and flagged in the mask.
pub fn inject_frame_loss(y: &ComplexTensor3, p: f64, seed: u64) -> Result<(ComplexTensor3, Vec<bool>)> {
    if !(0.0..0.5).contains(&p) {
        return Err(Error::contract(format!("frame loss probability must lie in [0, 0.5), got {p}")));
    }
    let t_len = y.dims()[0];
    let mut rng = seeded(seed);
    let mut mask = vec![false; t_len];
    if t_len > 2 && p > 0.0 {
        for lost in &mut mask[1..t_len - 1] {
            *lost = rng.random_bool(p);
        }
    }
    let mut data = y.data().to_vec();
    for fiber in data.chunks_exact_mut(t_len) {
        for (v, &lost) in fiber.iter_mut().zip(&mask) {
            if lost {
                *v = C64::new(0.0, 0.0);
            }
        }
    }
    Ok((ComplexTensor3::from_vec(y.dims(), data)?, mask))
}

/// One simulated experiment: the received tensor plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRecord {
    pub tensor: ComplexTensor3,
    /// `true` marks a lost snapshot.
    pub mask: Vec<bool>,
    pub label: ActivityKind,
    pub manifest: SimConfig,
}

/// Full generative chain: channel, RF impairments, noise, frame loss.
pub fn simulate_record(cfg: &SimConfig, kind: ActivityKind) -> Result<SimulatedRecord> {
    cfg.validate()?;
    let h = generate_channel(cfg, kind)?;
    let rf = RfChainModel::draw(cfg.antennas, cfg.subcarriers, derive_seed(cfg.room(), 2))?;
    // Recordings start at an arbitrary point of the RF clocks, so the CFO phases
    // of different subcarriers are not aligned at the first snapshot.
    let start = seeded(derive_seed(cfg.seed, 5)).random_range(0..1_000_000u64);
    let y = apply_rf_chain_from(&h, &rf, start)?;
    let y = add_noise(&y, cfg.effective_snr_db(), derive_seed(cfg.seed, 3))?;
    let (tensor, mask) = inject_frame_loss(&y, cfg.frame_loss_prob, derive_seed(cfg.seed, 4))?;
    Ok(SimulatedRecord { tensor, mask, label: kind, manifest: cfg.clone() })
}

/// Alternating run lengths of the mask, starting with a run of present snapshots.
pub fn mask_to_rle(mask: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0;
    for &m in mask {
        if m == current {
            len += 1;
        } else {
            runs.push(len);
            current = m;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

pub fn mask_from_rle(runs: &[usize]) -> Vec<bool> {
    runs.iter()
        .enumerate()
        .flat_map(|(i, &n)| std::iter::repeat_n(i % 2 == 1, n))
        .collect()
}

/// JSON sidecar written next to every record's tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSidecar {
    pub dims: [usize; 3],
    pub scenario: Scenario,
    pub activity: ActivityKind,
    pub label: usize,
    pub seed: u64,
    pub snr_db: f64,
    pub frame_loss_prob: f64,
    pub mask_rle: Vec<usize>,
    pub config: SimConfig,
}

impl SimulatedRecord {
    pub fn sidecar(&self) -> RecordSidecar {
        RecordSidecar {
            dims: self.tensor.dims(),
            scenario: self.manifest.scenario,
            activity: self.label,
            label: self.label.label(),
            seed: self.manifest.seed,
            snr_db: self.manifest.snr_db,
            frame_loss_prob: self.manifest.frame_loss_prob,
            mask_rle: mask_to_rle(&self.mask),
            config: self.manifest.clone(),
        }
    }

    /// Writes `<stem>.mmt3` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        io::save_complex(&dir.join(format!("{stem}.mmt3")), &self.tensor)?;
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let side: RecordSidecar = serde_json::from_slice(&fs::read(dir.join(format!("{stem}.json")))?)
            .map_err(|e| Error::Format(format!("{stem}.json: {e}")))?;
        let tensor = io::load_complex(&dir.join(format!("{stem}.mmt3")))?;
        let mask = mask_from_rle(&side.mask_rle);
        if tensor.dims() != side.dims || mask.len() != side.dims[0] || side.config.dims() != side.dims {
            return Err(Error::Format(format!("{stem}: sidecar does not match tensor")));
        }
        Ok(Self { tensor, mask, label: side.activity, manifest: side.config })
    }
}
