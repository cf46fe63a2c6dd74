//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each call simulates one short record in the browser and returns flat
//! `Float64Array`s that the page draws on a canvas.

use mimo_sense::channel::{simulate_record, ActivityKind, Scenario, SimConfig, SimulatedRecord};
use mimo_sense::cp::{cp_als, sorted_weights, AlsConfig};
use mimo_sense::features::{amp_phase_tensors, corr_per_subcarrier};
use mimo_sense::preprocess::interpolate_lost_frames;
use mimo_sense::tensor::{ComplexTensor3, FrobeniusNorm};
use wasm_bindgen::prelude::*;

fn js_err(e: mimo_sense::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn record(activity: &str, los: bool, seed: u64, snapshots: usize, subcarriers: usize, antennas: usize) -> Result<SimulatedRecord, JsError> {
    let kind = ActivityKind::parse(activity).ok_or_else(|| JsError::new(&format!("unknown activity {activity}")))?;
    let scenario = if los { Scenario::Los } else { Scenario::Nlos };
    let cfg = SimConfig::new(snapshots, subcarriers, antennas, scenario, seed);
    simulate_record(&cfg, kind).map_err(js_err)
}

fn repaired(rec: &SimulatedRecord) -> Result<ComplexTensor3, JsError> {
    interpolate_lost_frames(&rec.tensor, &rec.mask).map_err(js_err)
}

/// `|h(t, f, m)|` of subcarrier `f`, laid out `t + snapshots · m` (time along x, antenna along y).
#[wasm_bindgen]
pub fn amplitude_map(
    activity: &str,
    los: bool,
    seed: u64,
    snapshots: usize,
    subcarriers: usize,
    antennas: usize,
    f: usize,
) -> Result<Vec<f64>, JsError> {
    if f >= subcarriers {
        return Err(JsError::new("subcarrier index out of range"));
    }
    let g = repaired(&record(activity, los, seed, snapshots, subcarriers, antennas)?)?;
    let mut out = Vec::with_capacity(snapshots * antennas);
    for m in 0..antennas {
        for t in 0..snapshots {
            out.push(g.get(t, f, m).norm());
        }
    }
    Ok(out)
}

/// Descending CP weights of the normalized amplitude tensor `|g| / ||g||`.
#[wasm_bindgen]
pub fn cp_spectrum(
    activity: &str,
    los: bool,
    seed: u64,
    snapshots: usize,
    subcarriers: usize,
    antennas: usize,
    r_max: usize,
) -> Result<Vec<f64>, JsError> {
    let g = repaired(&record(activity, los, seed, snapshots, subcarriers, antennas)?)?;
    let norm = g.frobenius_norm();
    if norm == 0.0 {
        return Ok(vec![0.0; r_max]);
    }
    let amp = g.map(|z| z.norm() / norm);
    let cfg = AlsConfig { r_max, max_iters: 30, ..AlsConfig::default() };
    let model = cp_als(&amp, &cfg).map_err(js_err)?;
    let mut w = sorted_weights(&model).map_err(js_err)?;
    w.resize(r_max, 0.0);
    Ok(w)
}

/// Antenna-by-antenna correlation amplitude at subcarrier `f`, row-major `antennas × antennas`.
#[wasm_bindgen]
pub fn antenna_correlation(
    activity: &str,
    los: bool,
    seed: u64,
    snapshots: usize,
    subcarriers: usize,
    antennas: usize,
    f: usize,
) -> Result<Vec<f64>, JsError> {
    if f >= subcarriers {
        return Err(JsError::new("subcarrier index out of range"));
    }
    let g = repaired(&record(activity, los, seed, snapshots, subcarriers, antennas)?)?;
    let (_, c_tw_f) = corr_per_subcarrier(&g);
    let (amp, _) = amp_phase_tensors(&c_tw_f);
    let mut out = Vec::with_capacity(antennas * antennas);
    for i in 0..antennas {
        for j in 0..antennas {
            out.push(amp.get(i, j, f));
        }
    }
    Ok(out)
}

/// Activity identifiers accepted by the other functions.
#[wasm_bindgen]
pub fn activities() -> Vec<String> {
    ActivityKind::ALL.iter().map(|k| k.name().to_string()).collect()
}
