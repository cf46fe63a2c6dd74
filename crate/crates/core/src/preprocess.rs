//! Frame-loss repair and time windowing.

use crate::channel::ActivityKind;
use crate::tensor::{ComplexTensor3, C64};
use crate::{Error, Result};

/// A record cut into `k_count = floor(T / T_w)` equal windows; trailing
/// snapshots that do not fill a window are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedRecord {
    pub windows: Vec<ComplexTensor3>,
    pub label: ActivityKind,
    pub k_count: usize,
}

/// Replaces every lost snapshot (`mask[t] == true`) by linear interpolation
/// between the nearest present snapshots, separately on real and imaginary parts.
pub fn interpolate_lost_frames(t: &ComplexTensor3, mask: &[bool]) -> Result<ComplexTensor3> {
    let t_len = t.dims()[0];
    if mask.len() != t_len {
        return Err(Error::contract(format!("mask has {} entries for {t_len} snapshots", mask.len())));
    }
    if mask[0] || mask[t_len - 1] {
        return Err(Error::contract("first and last snapshots must be present"));
    }
    // (previous present, next present, weight of next) for each lost snapshot.
    let mut plan = Vec::new();
    let mut prev = 0;
    let mut i = 1;
    while i < t_len {
        if mask[i] {
            let mut next = i;
            while mask[next] {
                next += 1;
            }
            for lost in i..next {
                plan.push((lost, prev, next, (lost - prev) as f64 / (next - prev) as f64));
            }
            i = next;
        } else {
            prev = i;
            i += 1;
        }
    }
    let mut data = t.data().to_vec();
    for fiber in data.chunks_exact_mut(t_len) {
        for &(lost, a, b, w) in &plan {
            let (za, zb) = (fiber[a], fiber[b]);
            fiber[lost] = C64::new(za.re + w * (zb.re - za.re), za.im + w * (zb.im - za.im));
        }
    }
    ComplexTensor3::from_vec(t.dims(), data)
}

/// Splits along time into non-overlapping windows `[k·t_w, (k+1)·t_w)`.
pub fn segment(t: &ComplexTensor3, t_w: usize, label: ActivityKind) -> Result<WindowedRecord> {
    let t_len = t.dims()[0];
    if t_w == 0 || t_w > t_len {
        return Err(Error::contract(format!("window length {t_w} must lie in 1..={t_len}")));
    }
    let k_count = t_len / t_w;
    let windows = (0..k_count).map(|k| t.slice_mode1(k * t_w, t_w)).collect::<Result<_>>()?;
    Ok(WindowedRecord { windows, label, k_count })
}
