//! CP-weight features of one time window.
//!
//! A window `G` (`T_w x F x M`) yields six complex correlation tensors, each a
//! stack of Gram matrices over one of the three axes:
//!
//! | tensor   | slice over | slice                        | dims          |
//! |----------|------------|------------------------------|---------------|
//! | `c_f_m`  | antenna m  | `G_m G_m^H` (time x time)    | `T_w x T_w x M` |
//! | `c_tw_m` | antenna m  | `G_m^H G_m` (freq x freq)    | `F x F x M`     |
//! | `c_m_f`  | carrier f  | `G_f G_f^H` (time x time)    | `T_w x T_w x F` |
//! | `c_tw_f` | carrier f  | `G_f^H G_f` (ant x ant)      | `M x M x F`     |
//! | `c_m_tw` | snapshot t | `G_t G_t^H` (freq x freq)    | `F x F x T_w`   |
//! | `c_f_tw` | snapshot t | `G_t^H G_t` (ant x ant)      | `M x M x T_w`   |
//!
//! Every correlation tensor gives five real tensors (normalized amplitude,
//! normalized unwrapped phase, and the real part, imaginary part and magnitude of
//! the slice-normalized tensor). Together with the raw amplitude `|G|` that is 31
//! real tensors; the sorted CP weights of each are the features, in the order of
//! [`FEATURE_NAMES`].

use std::f64::consts::{PI, TAU};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ActivityKind;
use crate::cp::{cp_als, sorted_weights, AlsConfig};
use crate::io::{read_f64, read_u64};
use crate::rng::derive_seed;
use crate::tensor::{ComplexTensor3, FrobeniusNorm, RealTensor3, C64};
use crate::{Error, Result};

pub const FEATURE_COUNT: usize = 31;

/// Feature index `i` (0-based) holds the weights of tensor `FEATURE_NAMES[i]`.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "abs_g",
    "c_f_m.amp", "c_f_m.phase", "c_f_m.re", "c_f_m.im", "c_f_m.norm_amp",
    "c_tw_m.amp", "c_tw_m.phase", "c_tw_m.re", "c_tw_m.im", "c_tw_m.norm_amp",
    "c_m_f.amp", "c_m_f.phase", "c_m_f.re", "c_m_f.im", "c_m_f.norm_amp",
    "c_tw_f.amp", "c_tw_f.phase", "c_tw_f.re", "c_tw_f.im", "c_tw_f.norm_amp",
    "c_m_tw.amp", "c_m_tw.phase", "c_m_tw.re", "c_m_tw.im", "c_m_tw.norm_amp",
    "c_f_tw.amp", "c_f_tw.phase", "c_f_tw.re", "c_f_tw.im", "c_f_tw.norm_amp",
];

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSet {
    pub c_f_m: ComplexTensor3,
    pub c_tw_m: ComplexTensor3,
    pub c_m_f: ComplexTensor3,
    pub c_tw_f: ComplexTensor3,
    pub c_m_tw: ComplexTensor3,
    pub c_f_tw: ComplexTensor3,
}

impl CorrelationSet {
    pub fn new(g: &ComplexTensor3) -> Self {
        let (c_f_m, c_tw_m) = corr_per_antenna(g);
        let (c_m_f, c_tw_f) = corr_per_subcarrier(g);
        let (c_m_tw, c_f_tw) = corr_per_time(g);
        Self { c_f_m, c_tw_m, c_m_f, c_tw_f, c_m_tw, c_f_tw }
    }

    /// Members in feature-group order.
    pub fn members(&self) -> [&ComplexTensor3; 6] {
        [&self.c_f_m, &self.c_tw_m, &self.c_m_f, &self.c_tw_f, &self.c_m_tw, &self.c_f_tw]
    }
}

/// Stack of `slices` Gram matrices `A_s A_s^H`, with `A_s` given entrywise by
/// `get(row, inner, s)`. Only the upper triangle is summed; the lower one is its
/// conjugate mirror so every slice is exactly Hermitian.
fn gram_stack(rows: usize, inner: usize, slices: usize, get: impl Fn(usize, usize, usize) -> C64) -> ComplexTensor3 {
    let zero = C64::new(0.0, 0.0);
    let mut out = vec![zero; rows * rows * slices];
    let mut buf = vec![zero; rows * inner];
    for s in 0..slices {
        for r in 0..rows {
            for k in 0..inner {
                buf[r * inner + k] = get(r, k, s);
            }
        }
        let slice = &mut out[s * rows * rows..(s + 1) * rows * rows];
        for i in 0..rows {
            let a = &buf[i * inner..(i + 1) * inner];
            for j in i..rows {
                let b = &buf[j * inner..(j + 1) * inner];
                let mut acc = zero;
                for (x, y) in a.iter().zip(b) {
                    acc += x * y.conj();
                }
                slice[i + rows * j] = acc;
                slice[j + rows * i] = acc.conj();
            }
        }
    }
    ComplexTensor3::from_vec_unchecked([rows, rows, slices], out)
}

/// `(c_f_m, c_tw_m)`: per antenna, the time-time and frequency-frequency Gram matrices.
pub fn corr_per_antenna(g: &ComplexTensor3) -> (ComplexTensor3, ComplexTensor3) {
    let [tw, f, m] = g.dims();
    (
        gram_stack(tw, f, m, |t, fi, s| g.get(t, fi, s)),
        gram_stack(f, tw, m, |fi, t, s| g.get(t, fi, s).conj()),
    )
}

/// `(c_m_f, c_tw_f)`: per subcarrier, the time-time and antenna-antenna Gram matrices.
pub fn corr_per_subcarrier(g: &ComplexTensor3) -> (ComplexTensor3, ComplexTensor3) {
    let [tw, f, m] = g.dims();
    (
        gram_stack(tw, m, f, |t, mi, s| g.get(t, s, mi)),
        gram_stack(m, tw, f, |mi, t, s| g.get(t, s, mi).conj()),
    )
}

/// `(c_m_tw, c_f_tw)`: per snapshot, the frequency-frequency and antenna-antenna Gram matrices.
pub fn corr_per_time(g: &ComplexTensor3) -> (ComplexTensor3, ComplexTensor3) {
    let [tw, f, m] = g.dims();
    (
        gram_stack(f, m, tw, |fi, mi, s| g.get(s, fi, mi)),
        gram_stack(m, f, tw, |mi, fi, s| g.get(s, fi, mi).conj()),
    )
}

fn wrap_correction(d: f64) -> f64 {
    if d.abs() < PI {
        return 0.0;
    }
    let mut dd = (d + PI).rem_euclid(TAU) - PI;
    if dd == -PI && d > 0.0 {
        dd = PI;
    }
    dd - d
}

/// Removes 2π jumps larger than π between consecutive entries.
pub fn unwrap_1d(values: &mut [f64]) {
    let mut offset = 0.0;
    for i in 1..values.len() {
        let raw_prev = values[i - 1] - offset;
        let d = values[i] - raw_prev;
        offset += wrap_correction(d);
        values[i] += offset;
    }
}

/// Unwraps a `rows x cols` column-major slice: every row along its columns, then
/// the first column downwards, shifting each row by its first entry's correction.
fn unwrap_slice(p: &mut [f64], rows: usize, cols: usize) {
    let mut row = vec![0.0; cols];
    let mut first = vec![0.0; rows];
    for i in 0..rows {
        for j in 0..cols {
            row[j] = p[i + rows * j];
        }
        unwrap_1d(&mut row);
        for j in 0..cols {
            p[i + rows * j] = row[j];
        }
        first[i] = row[0];
    }
    let before = first.clone();
    unwrap_1d(&mut first);
    for i in 0..rows {
        let shift = first[i] - before[i];
        if shift != 0.0 {
            for j in 0..cols {
                p[i + rows * j] += shift;
            }
        }
    }
}

fn normalize_slices(data: &mut [f64], slice_len: usize) {
    for s in data.chunks_exact_mut(slice_len) {
        let n = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            s.iter_mut().for_each(|v| *v /= n);
        } else {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Slice-normalized amplitude and unwrapped phase. Zero-norm slices become zero.
pub fn amp_phase_tensors(c: &ComplexTensor3) -> (RealTensor3, RealTensor3) {
    let [rows, cols, _] = c.dims();
    let slice_len = rows * cols;
    let mut amp: Vec<f64> = c.data().iter().map(|z| z.norm()).collect();
    let mut phase: Vec<f64> = c.data().iter().map(|z| z.arg()).collect();
    for (a, p) in amp.chunks_exact(slice_len).zip(phase.chunks_exact_mut(slice_len)) {
        if a.iter().all(|&v| v == 0.0) {
            p.iter_mut().for_each(|v| *v = 0.0);
        } else {
            unwrap_slice(p, rows, cols);
        }
    }
    normalize_slices(&mut amp, slice_len);
    normalize_slices(&mut phase, slice_len);
    (
        RealTensor3::from_vec_unchecked(c.dims(), amp),
        RealTensor3::from_vec_unchecked(c.dims(), phase),
    )
}

/// `(re, im, amp)` of the tensor after dividing every slice by its Frobenius norm.
pub fn normalized_complex(c: &ComplexTensor3) -> (RealTensor3, RealTensor3, RealTensor3) {
    let [rows, cols, _] = c.dims();
    let slice_len = rows * cols;
    let mut re = Vec::with_capacity(c.len());
    let mut im = Vec::with_capacity(c.len());
    let mut amp = Vec::with_capacity(c.len());
    for s in c.data().chunks_exact(slice_len) {
        let n = s.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for z in s {
            let w = if n > 0.0 { z / n } else { C64::new(0.0, 0.0) };
            re.push(w.re);
            im.push(w.im);
            amp.push(w.norm());
        }
    }
    (
        RealTensor3::from_vec_unchecked(c.dims(), re),
        RealTensor3::from_vec_unchecked(c.dims(), im),
        RealTensor3::from_vec_unchecked(c.dims(), amp),
    )
}

/// The 31 real tensors in feature order.
pub fn real_tensors(g: &ComplexTensor3) -> Vec<RealTensor3> {
    let corr = CorrelationSet::new(g);
    let mut out = Vec::with_capacity(FEATURE_COUNT);
    out.push(g.abs());
    for c in corr.members() {
        let (a, p) = amp_phase_tensors(c);
        let (re, im, n) = normalized_complex(c);
        out.extend([a, p, re, im, n]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowStatus {
    Valid,
    /// The window is identically zero; all weights are zero.
    Degenerate,
    /// A decomposition failed numerically; the window must not be used.
    Invalid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    /// 31 descending weight vectors of length `r_max`.
    pub lambdas: Vec<Vec<f64>>,
    pub window_id: u64,
    pub label: Option<ActivityKind>,
    pub status: WindowStatus,
}

impl FeatureSet {
    pub fn r_max(&self) -> usize {
        self.lambdas.first().map_or(0, Vec::len)
    }
}

/// CP-decomposes the 31 real tensors of a window at rank `als.r_max` (capped per
/// tensor by its rank bound and zero-padded back to `r_max`).
pub fn extract_features(g: &ComplexTensor3, als: &AlsConfig) -> Result<FeatureSet> {
    als.validate()?;
    let r_max = als.r_max;
    let blank = FeatureSet {
        lambdas: vec![vec![0.0; r_max]; FEATURE_COUNT],
        window_id: 0,
        label: None,
        status: WindowStatus::Degenerate,
    };
    if g.frobenius_norm() == 0.0 {
        return Ok(blank);
    }
    let tensors = real_tensors(g);
    let mut lambdas: Vec<Vec<f64>> = Vec::with_capacity(FEATURE_COUNT);
    for (i, t) in tensors.iter().enumerate() {
        // |C|/||C|| and |C/||C||| agree up to rounding; decompose that tensor once.
        if i > 0 && i % 5 == 0 && same_within(t, &tensors[i - 4], 1e-12) {
            lambdas.push(lambdas[i - 4].clone());
            continue;
        }
        let cfg = AlsConfig { seed: derive_seed(als.seed, i as u64), ..*als };
        let weights = cp_als(t, &cfg).and_then(|m| sorted_weights(&m));
        match weights {
            Ok(mut w) => {
                w.resize(r_max, 0.0);
                lambdas.push(w);
            }
            Err(e @ (Error::Numeric(_) | Error::Invariant(_))) => {
                log::warn!("feature {} ({}) failed: {e}; window marked invalid", i + 1, FEATURE_NAMES[i]);
                return Ok(FeatureSet { status: WindowStatus::Invalid, ..blank });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(FeatureSet { lambdas, window_id: 0, label: None, status: WindowStatus::Valid })
}

fn same_within(a: &RealTensor3, b: &RealTensor3, tol: f64) -> bool {
    a.dims() == b.dims() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
}

/// Concatenates the feature vectors in order, skipping each vector's largest
/// weight when `drop_largest` is set.
pub fn assemble_input(fs: &FeatureSet, drop_largest: bool) -> Result<Vec<f64>> {
    let r_max = fs.r_max();
    if fs.lambdas.len() != FEATURE_COUNT || fs.lambdas.iter().any(|l| l.len() != r_max) {
        return Err(Error::contract("feature vectors must be 31 vectors of equal length"));
    }
    let skip = usize::from(drop_largest);
    Ok(fs.lambdas.iter().flat_map(|l| l.iter().skip(skip).copied()).collect())
}

pub fn input_width(r_max: usize, drop_largest: bool) -> usize {
    FEATURE_COUNT * (r_max - usize::from(drop_largest))
}

const TABLE_MAGIC: &[u8; 4] = b"MMFS";

/// Column layout written next to every feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub format: String,
    pub version: u32,
    pub r_max: usize,
    pub rows: usize,
    pub features: Vec<String>,
    pub labels: Vec<String>,
    pub binary_layout: String,
}

/// All windows of a dataset, ordered by `window_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub r_max: usize,
    pub rows: Vec<FeatureSet>,
}

impl FeatureTable {
    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            format: "mimo-sense features".into(),
            version: 1,
            r_max: self.r_max,
            rows: self.rows.len(),
            features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            labels: ActivityKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            binary_layout: "\"MMFS\", u64 rows, u64 r_max, then per row: u64 window_id, u64 label, \
                            31*r_max f64 weights (feature-major); all little-endian"
                .into(),
        }
    }

    fn check_rows(&self) -> Result<()> {
        for row in &self.rows {
            if row.label.is_none() || row.lambdas.len() != FEATURE_COUNT || row.r_max() != self.r_max {
                return Err(Error::contract(format!("window {} is not a labelled 31 x {} row", row.window_id, self.r_max)));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        self.check_rows()?;
        write!(w, "window_id,label")?;
        for name in FEATURE_NAMES {
            for r in 1..=self.r_max {
                write!(w, ",{name}[{r}]")?;
            }
        }
        writeln!(w)?;
        for row in &self.rows {
            write!(w, "{},{}", row.window_id, row.label.map_or("", |l| l.name()))?;
            for v in row.lambdas.iter().flatten() {
                write!(w, ",{v:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        self.check_rows()?;
        w.write_all(TABLE_MAGIC)?;
        w.write_all(&(self.rows.len() as u64).to_le_bytes())?;
        w.write_all(&(self.r_max as u64).to_le_bytes())?;
        for row in &self.rows {
            w.write_all(&row.window_id.to_le_bytes())?;
            w.write_all(&(row.label.map_or(0, |l| l.label()) as u64).to_le_bytes())?;
            for v in row.lambdas.iter().flatten() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let fmt = |e: Error| match e {
            Error::Io(io) => Error::Format(format!("truncated feature table: {io}")),
            other => other,
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| Error::Format(format!("truncated feature table: {e}")))?;
        if &magic != TABLE_MAGIC {
            return Err(Error::Format(format!("bad feature-table magic {magic:?}")));
        }
        let n = read_u64(r).map_err(fmt)? as usize;
        let r_max = read_u64(r).map_err(fmt)? as usize;
        if r_max == 0 {
            return Err(Error::Format("feature table with r_max 0".into()));
        }
        let mut rows = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let window_id = read_u64(r).map_err(fmt)?;
            let label = read_u64(r).map_err(fmt)? as usize;
            let label = ActivityKind::from_label(label)
                .ok_or_else(|| Error::Format(format!("window {window_id}: unknown label {label}")))?;
            let mut lambdas = Vec::with_capacity(FEATURE_COUNT);
            for _ in 0..FEATURE_COUNT {
                let v = (0..r_max).map(|_| read_f64(r)).collect::<Result<Vec<_>>>().map_err(fmt)?;
                lambdas.push(v);
            }
            rows.push(FeatureSet { lambdas, window_id, label: Some(label), status: WindowStatus::Valid });
        }
        Ok(Self { r_max, rows })
    }

    /// Writes `features.csv`, `features.bin` and `features.schema.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut csv = BufWriter::new(File::create(dir.join("features.csv"))?);
        self.write_csv(&mut csv)?;
        csv.flush()?;
        let mut bin = BufWriter::new(File::create(dir.join("features.bin"))?);
        self.write_binary(&mut bin)?;
        bin.flush()?;
        fs::write(dir.join("features.schema.json"), serde_json::to_string_pretty(&self.schema())? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::read_binary(&mut BufReader::new(File::open(dir.join("features.bin"))?))
    }
}
