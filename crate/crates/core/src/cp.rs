//! CP (CANDECOMP/PARAFAC) decomposition of real third-order tensors by
//! alternating least squares.
//!
//! A tensor is approximated as `Σ_l λ_l x_l ∘ y_l ∘ z_l` with unit-norm factor
//! columns. Each sweep solves the three linear least-squares problems
//! `min ||T_(n) - A (C ⊙ B)^T||` in turn through the normal equations
//! `A (C^T C * B^T B) = T_(n) (C ⊙ B)`. The right-hand side (the "MTTKRP") is
//! computed straight from the tensor buffer without materialising the
//! Khatri-Rao product.
//!
//! `Y` and `Z` start as seeded Gaussian matrices pushed through two steps of
//! orthogonal power iteration on `T_(n) T_(n)^T`, which puts the start inside
//! the dominant mode subspace. The start is a smooth function of the tensor, so
//! rounding-level input changes give rounding-level output changes.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::seeded;
use crate::tensor::{Dims, FrobeniusNorm, RealMatrix, RealTensor3};
use crate::{Error, Result};

/// Relative residual below which the cheap Gram-based residual formula loses
/// too many digits to cancellation; the residual is then summed explicitly.
const EXACT_RESIDUAL_BELOW: f64 = 1e-2;

const POWER_STEPS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlsConfig {
    pub r_max: usize,
    pub max_iters: usize,
    /// Stop once the relative change of the fit error between sweeps drops below this.
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self { r_max: 10, max_iters: 100, rel_tol: 1e-6, seed: 0 }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_max == 0 {
            return Err(Error::Config("r_max must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::Config(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        Ok(())
    }
}

/// Per-run record of what the solver did.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlsDiagnostics {
    /// Relative fit error after every sweep.
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// The input was the zero tensor; weights are all zero.
    pub degenerate: bool,
    /// Normal-equation solves that needed the ridge term.
    pub regularized_solves: usize,
    pub requested_rank: usize,
    pub effective_rank: usize,
    /// The requested rank exceeds at least one tensor dimension.
    pub rank_exceeds_dimension: bool,
}

impl AlsDiagnostics {
    pub fn sweeps(&self) -> usize {
        self.residuals.len()
    }
}

/// Weights plus unit-column factor matrices `X` (d1 x r), `Y` (d2 x r), `Z` (d3 x r).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpModel {
    lambda: Vec<f64>,
    x: RealMatrix,
    y: RealMatrix,
    z: RealMatrix,
    pub diagnostics: AlsDiagnostics,
}

impl CpModel {
    /// Assembles a model from explicit parts. Only shapes are checked; call
    /// [`CpModel::finalize`] to normalise and sort.
    pub fn new(lambda: Vec<f64>, x: RealMatrix, y: RealMatrix, z: RealMatrix) -> Result<Self> {
        let r = lambda.len();
        if r == 0 || x.cols() != r || y.cols() != r || z.cols() != r {
            return Err(Error::contract(format!(
                "rank {r} does not match factor columns {}/{}/{}",
                x.cols(),
                y.cols(),
                z.cols()
            )));
        }
        Ok(Self { lambda, x, y, z, diagnostics: AlsDiagnostics::default() })
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn x(&self) -> &RealMatrix {
        &self.x
    }

    pub fn y(&self) -> &RealMatrix {
        &self.y
    }

    pub fn z(&self) -> &RealMatrix {
        &self.z
    }

    pub fn dims(&self) -> Dims {
        [self.x.rows(), self.y.rows(), self.z.rows()]
    }

    /// Normalises every factor column to unit length (absorbing the norms into
    /// `lambda`), makes weights nonnegative by flipping the sign of the `x`
    /// column, and sorts components by descending weight (stable).
    pub fn finalize(self) -> Self {
        let r = self.rank();
        let mut factors = [
            RowMajor::from_matrix(&self.x),
            RowMajor::from_matrix(&self.y),
            RowMajor::from_matrix(&self.z),
        ];
        let mut lambda = self.lambda;
        for f in &mut factors {
            let norms = f.normalize_columns();
            for (w, n) in lambda.iter_mut().zip(norms) {
                *w *= n;
            }
        }
        for (l, w) in lambda.iter_mut().enumerate() {
            if *w < 0.0 {
                *w = -*w;
                factors[0].negate_column(l);
            }
        }
        let order = descending_order(&lambda);
        let lambda = order.iter().map(|&l| lambda[l]).collect();
        let [x, y, z] = factors.map(|f| f.permuted(&order).into_matrix());
        debug_assert_eq!(x.cols(), r);
        Self { lambda, x, y, z, diagnostics: self.diagnostics }
    }
}

fn descending_order(lambda: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lambda.len()).collect();
    order.sort_by(|&a, &b| lambda[b].total_cmp(&lambda[a]));
    order
}

/// Weak upper bound on CP rank: `min(d1 d2, d1 d3, d2 d3)`.
pub fn rank_upper_bound(dims: Dims) -> usize {
    let [a, b, c] = dims;
    (a * b).min(a * c).min(b * c)
}

/// Row-major `n x r` working buffer; rows are contiguous so the inner loops run over `r`.
#[derive(Debug, Clone)]
struct RowMajor {
    n: usize,
    r: usize,
    data: Vec<f64>,
}

impl RowMajor {
    fn random(n: usize, r: usize, rng: &mut impl Rng) -> Self {
        let data = (0..n * r).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut m = Self { n, r, data };
        m.normalize_columns();
        m
    }

    fn from_matrix(m: &RealMatrix) -> Self {
        let (n, r) = m.shape();
        let mut data = vec![0.0; n * r];
        for l in 0..r {
            for (i, &v) in m.column(l).iter().enumerate() {
                data[i * r + l] = v;
            }
        }
        Self { n, r, data }
    }

    fn into_matrix(self) -> RealMatrix {
        let (n, r) = (self.n, self.r);
        RealMatrix::from_fn(n, r, |i, l| self.data[i * r + l]).expect("positive shape")
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.r..(i + 1) * self.r]
    }

    fn gram(&self) -> Vec<f64> {
        let r = self.r;
        let mut g = vec![0.0; r * r];
        for i in 0..self.n {
            let row = self.row(i);
            for a in 0..r {
                let va = row[a];
                for b in a..r {
                    g[a * r + b] += va * row[b];
                }
            }
        }
        for a in 0..r {
            for b in 0..a {
                g[a * r + b] = g[b * r + a];
            }
        }
        g
    }

    /// Scales columns to unit norm and returns the original norms. All-zero
    /// columns are replaced by a unit basis vector and report norm 0.
    fn normalize_columns(&mut self) -> Vec<f64> {
        let r = self.r;
        let mut norms = vec![0.0; r];
        for i in 0..self.n {
            for (l, nrm) in norms.iter_mut().enumerate() {
                *nrm += self.data[i * r + l].powi(2);
            }
        }
        for (l, nrm) in norms.iter_mut().enumerate() {
            *nrm = nrm.sqrt();
            if *nrm > 0.0 {
                let inv = 1.0 / *nrm;
                for i in 0..self.n {
                    self.data[i * r + l] *= inv;
                }
            } else {
                self.data[(l % self.n) * r + l] = 1.0;
            }
        }
        norms
    }

    fn negate_column(&mut self, l: usize) {
        for i in 0..self.n {
            self.data[i * self.r + l] = -self.data[i * self.r + l];
        }
    }

    fn permuted(&self, order: &[usize]) -> Self {
        let r = self.r;
        let mut data = vec![0.0; self.n * r];
        for i in 0..self.n {
            for (dst, &src) in order.iter().enumerate() {
                data[i * r + dst] = self.data[i * r + src];
            }
        }
        Self { n: self.n, r, data }
    }
}

/// `T_(2) T_(2)^T`, `d2 x d2` row-major.
fn mode2_gram(t: &RealTensor3) -> Vec<f64> {
    let [d1, d2, d3] = t.dims();
    let data = t.data();
    let mut g = vec![0.0; d2 * d2];
    for k in 0..d3 {
        let slab = &data[k * d1 * d2..(k + 1) * d1 * d2];
        for a in 0..d2 {
            let ca = &slab[a * d1..(a + 1) * d1];
            for b in a..d2 {
                let cb = &slab[b * d1..(b + 1) * d1];
                g[a * d2 + b] += ca.iter().zip(cb).map(|(u, v)| u * v).sum::<f64>();
            }
        }
    }
    symmetrize(&mut g, d2);
    g
}

/// `T_(3) T_(3)^T`, `d3 x d3` row-major.
fn mode3_gram(t: &RealTensor3) -> Vec<f64> {
    let [d1, d2, d3] = t.dims();
    let s = d1 * d2;
    let data = t.data();
    let mut g = vec![0.0; d3 * d3];
    for a in 0..d3 {
        let ca = &data[a * s..(a + 1) * s];
        for b in a..d3 {
            let cb = &data[b * s..(b + 1) * s];
            g[a * d3 + b] = ca.iter().zip(cb).map(|(u, v)| u * v).sum::<f64>();
        }
    }
    symmetrize(&mut g, d3);
    g
}

fn symmetrize(g: &mut [f64], n: usize) {
    for a in 0..n {
        for b in 0..a {
            g[a * n + b] = g[b * n + a];
        }
    }
}

/// Replaces the columns of `f` by an orthonormal basis of `G^q f`. Columns that
/// vanish (the range of `G` is smaller than `f`) keep their old values.
fn power_start(g: &[f64], f: &mut RowMajor) {
    let (n, r) = (f.n, f.r);
    let mut q: Vec<Vec<f64>> = (0..r).map(|l| (0..n).map(|i| f.data[i * r + l]).collect()).collect();
    let g_scale = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if g_scale == 0.0 {
        return;
    }
    for _ in 0..POWER_STEPS {
        q = q.iter().map(|c| sym_mul(g, n, c).into_iter().map(|v| v / g_scale).collect()).collect();
        orthonormalize(&mut q);
    }
    for (l, c) in q.iter().enumerate() {
        if c.iter().any(|&v| v != 0.0) {
            for (i, &v) in c.iter().enumerate() {
                f.data[i * r + l] = v;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sym_mul(a: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    (0..n).map(|i| dot(&a[i * n..(i + 1) * n], x)).collect()
}

/// Modified Gram-Schmidt, twice. Dependent columns become zero.
fn orthonormalize(q: &mut [Vec<f64>]) {
    for _ in 0..2 {
        for j in 0..q.len() {
            let (done, rest) = q.split_at_mut(j);
            let c = &mut rest[0];
            for p in done.iter() {
                let d = dot(p, c);
                c.iter_mut().zip(p).for_each(|(x, y)| *x -= d * y);
            }
            let nrm = dot(c, c).sqrt();
            let scale = if nrm > 1e-12 { 1.0 / nrm } else { 0.0 };
            c.iter_mut().for_each(|x| *x *= scale);
        }
    }
}

/// Mode-1 MTTKRP: `out[i, l] = Σ_{j,k} t[i,j,k] y[j,l] z[k,l]`.
fn mttkrp_mode1(t: &RealTensor3, y: &RowMajor, z: &RowMajor) -> RowMajor {
    let [d1, d2, d3] = t.dims();
    let r = y.r;
    let mut out = vec![0.0; d1 * r];
    let mut w = vec![0.0; r];
    let data = t.data();
    for k in 0..d3 {
        let zk = z.row(k);
        for j in 0..d2 {
            let yj = y.row(j);
            for l in 0..r {
                w[l] = yj[l] * zk[l];
            }
            let fiber = &data[d1 * (j + d2 * k)..d1 * (j + d2 * k + 1)];
            for (row, &tv) in out.chunks_exact_mut(r).zip(fiber) {
                for (o, &wl) in row.iter_mut().zip(&w) {
                    *o += tv * wl;
                }
            }
        }
    }
    RowMajor { n: d1, r, data: out }
}

/// Partial contraction `w[(j,k), l] = Σ_i t[i,j,k] x[i,l]`, shared by the mode-2
/// and mode-3 updates of one sweep (both see the same, freshly updated `x`).
fn contract_mode1(t: &RealTensor3, x: &RowMajor) -> Vec<f64> {
    let [d1, d2, d3] = t.dims();
    let r = x.r;
    let mut out = vec![0.0; d2 * d3 * r];
    for (fiber, acc) in t.data().chunks_exact(d1).zip(out.chunks_exact_mut(r)) {
        for (xi, &tv) in x.data.chunks_exact(r).zip(fiber) {
            for (a, &xv) in acc.iter_mut().zip(xi) {
                *a += tv * xv;
            }
        }
    }
    out
}

/// Mode-2 MTTKRP from the partial contraction: `out[j,l] = Σ_k w[(j,k),l] z[k,l]`.
fn mttkrp_mode2(w: &[f64], d2: usize, d3: usize, z: &RowMajor) -> RowMajor {
    let r = z.r;
    let mut out = vec![0.0; d2 * r];
    for k in 0..d3 {
        let zk = z.row(k);
        for j in 0..d2 {
            let wjk = &w[(j + d2 * k) * r..(j + d2 * k + 1) * r];
            for l in 0..r {
                out[j * r + l] += wjk[l] * zk[l];
            }
        }
    }
    RowMajor { n: d2, r, data: out }
}

/// Mode-3 MTTKRP from the partial contraction: `out[k,l] = Σ_j w[(j,k),l] y[j,l]`.
fn mttkrp_mode3(w: &[f64], d2: usize, d3: usize, y: &RowMajor) -> RowMajor {
    let r = y.r;
    let mut out = vec![0.0; d3 * r];
    for k in 0..d3 {
        for j in 0..d2 {
            let yj = y.row(j);
            let wjk = &w[(j + d2 * k) * r..(j + d2 * k + 1) * r];
            for l in 0..r {
                out[k * r + l] += wjk[l] * yj[l];
            }
        }
    }
    RowMajor { n: d3, r, data: out }
}

/// In-place Cholesky factorisation of an `r x r` row-major SPD matrix (lower
/// triangle). Returns `false` when a pivot is not safely positive.
fn cholesky(a: &mut [f64], r: usize) -> bool {
    let scale = (0..r).map(|i| a[i * r + i].abs()).fold(0.0, f64::max);
    for j in 0..r {
        let mut d = a[j * r + j];
        for p in 0..j {
            d -= a[j * r + p] * a[j * r + p];
        }
        if !(d.is_finite() && d > 1e-13 * scale) {
            return false;
        }
        let d = d.sqrt();
        a[j * r + j] = d;
        for i in j + 1..r {
            let mut s = a[i * r + j];
            for p in 0..j {
                s -= a[i * r + p] * a[j * r + p];
            }
            a[i * r + j] = s / d;
        }
    }
    true
}

/// Solves `A G = M` row by row given the Cholesky factor of `G` (stored lower).
fn cholesky_solve_rows(chol: &[f64], m: &mut RowMajor) {
    let r = m.r;
    for row in m.data.chunks_exact_mut(r) {
        for i in 0..r {
            let mut s = row[i];
            for p in 0..i {
                s -= chol[i * r + p] * row[p];
            }
            row[i] = s / chol[i * r + i];
        }
        for i in (0..r).rev() {
            let mut s = row[i];
            for p in i + 1..r {
                s -= chol[p * r + i] * row[p];
            }
            row[i] = s / chol[i * r + i];
        }
    }
}

/// Solves the normal equations `A G = M`; adds the ridge `1e-10 * trace(G)` when
/// `G` is singular or badly conditioned. Returns whether the ridge was used.
fn solve_normal_equations(gram: &[f64], m: &mut RowMajor) -> bool {
    let r = m.r;
    let mut chol = gram.to_vec();
    if cholesky(&mut chol, r) {
        cholesky_solve_rows(&chol, m);
        return false;
    }
    let trace: f64 = (0..r).map(|i| gram[i * r + i]).sum();
    let mut ridge = 1e-10 * trace;
    if !(ridge > 0.0) {
        ridge = f64::MIN_POSITIVE;
    }
    loop {
        chol.copy_from_slice(gram);
        for i in 0..r {
            chol[i * r + i] += ridge;
        }
        if cholesky(&mut chol, r) {
            cholesky_solve_rows(&chol, m);
            return true;
        }
        ridge *= 10.0;
    }
}

fn hadamard_in_place(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x *= y;
    }
}

/// `Σ_{ijk} (t - Σ_l λ_l x y z)^2`, summed explicitly.
fn exact_residual_sq(t: &RealTensor3, lambda: &[f64], f: &[RowMajor; 3]) -> f64 {
    let [d1, d2, d3] = t.dims();
    let r = lambda.len();
    let data = t.data();
    let mut w = vec![0.0; r];
    let mut total = 0.0;
    for k in 0..d3 {
        let zk = f[2].row(k);
        for j in 0..d2 {
            let yj = f[1].row(j);
            for l in 0..r {
                w[l] = lambda[l] * yj[l] * zk[l];
            }
            let fiber = &data[d1 * (j + d2 * k)..d1 * (j + d2 * k + 1)];
            for (i, &tv) in fiber.iter().enumerate() {
                let xi = f[0].row(i);
                let rec: f64 = xi.iter().zip(&w).map(|(a, b)| a * b).sum();
                total += (tv - rec) * (tv - rec);
            }
        }
    }
    total
}

/// CP decomposition by alternating least squares.
///
/// The effective rank is `min(cfg.r_max, rank_upper_bound(dims))`. The zero
/// tensor yields all-zero weights and `diagnostics.degenerate = true`.
pub fn cp_als(t: &RealTensor3, cfg: &AlsConfig) -> Result<CpModel> {
    cfg.validate()?;
    let dims = t.dims();
    let [d1, d2, d3] = dims;
    let r = cfg.r_max.min(rank_upper_bound(dims));
    let mut diagnostics = AlsDiagnostics {
        requested_rank: cfg.r_max,
        effective_rank: r,
        rank_exceeds_dimension: dims.iter().any(|&d| cfg.r_max > d),
        ..AlsDiagnostics::default()
    };
    if r < cfg.r_max {
        log::debug!("cp_als: rank {} capped to bound {r} for dims {dims:?}", cfg.r_max);
    } else if diagnostics.rank_exceeds_dimension {
        log::debug!("cp_als: rank {} exceeds a dimension of {dims:?}", cfg.r_max);
    }

    let norm_t = t.frobenius_norm();
    if !norm_t.is_finite() {
        return Err(Error::Numeric("input tensor has non-finite norm".into()));
    }
    if norm_t == 0.0 {
        diagnostics.degenerate = true;
        diagnostics.converged = true;
        let unit = |n: usize| RealMatrix::from_fn(n, r, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let mut model = CpModel::new(vec![0.0; r], unit(d1)?, unit(d2)?, unit(d3)?)?;
        model.diagnostics = diagnostics;
        return Ok(model);
    }
    let norm_sq = norm_t * norm_t;

    let mut rng = seeded(cfg.seed);
    let mut f = [
        RowMajor::random(d1, r, &mut rng),
        RowMajor::random(d2, r, &mut rng),
        RowMajor::random(d3, r, &mut rng),
    ];
    // X is solved first, so only Y and Z need a starting point.
    power_start(&mode2_gram(t), &mut f[1]);
    power_start(&mode3_gram(t), &mut f[2]);
    let mut grams = [f[0].gram(), f[1].gram(), f[2].gram()];
    let mut lambda = vec![1.0; r];
    let mut prev: Option<f64> = None;

    for _ in 0..cfg.max_iters {
        // X update.
        let mut a = mttkrp_mode1(t, &f[1], &f[2]);
        let mut g = grams[1].clone();
        hadamard_in_place(&mut g, &grams[2]);
        diagnostics.regularized_solves += usize::from(solve_normal_equations(&g, &mut a));
        a.normalize_columns();
        f[0] = a;
        grams[0] = f[0].gram();

        let w = contract_mode1(t, &f[0]);

        // Y update.
        let mut a = mttkrp_mode2(&w, d2, d3, &f[2]);
        let mut g = grams[0].clone();
        hadamard_in_place(&mut g, &grams[2]);
        diagnostics.regularized_solves += usize::from(solve_normal_equations(&g, &mut a));
        a.normalize_columns();
        f[1] = a;
        grams[1] = f[1].gram();

        // Z update; its MTTKRP also gives <T, T~> for the residual.
        let m3 = mttkrp_mode3(&w, d2, d3, &f[1]);
        let mut a = m3.clone();
        let mut g = grams[0].clone();
        hadamard_in_place(&mut g, &grams[1]);
        diagnostics.regularized_solves += usize::from(solve_normal_equations(&g, &mut a));
        lambda = a.normalize_columns();
        f[2] = a;
        grams[2] = f[2].gram();

        let inner: f64 = (0..d3)
            .map(|k| {
                let (zk, mk) = (f[2].row(k), m3.row(k));
                (0..r).map(|l| lambda[l] * zk[l] * mk[l]).sum::<f64>()
            })
            .sum();
        let mut rec_sq = 0.0;
        for p in 0..r {
            for q in 0..r {
                rec_sq += lambda[p] * lambda[q] * grams[0][p * r + q] * grams[1][p * r + q] * grams[2][p * r + q];
            }
        }
        let mut resid_sq = (norm_sq - 2.0 * inner + rec_sq).max(0.0);
        if resid_sq < EXACT_RESIDUAL_BELOW * EXACT_RESIDUAL_BELOW * norm_sq {
            resid_sq = exact_residual_sq(t, &lambda, &f);
        }
        let fit = resid_sq.sqrt() / norm_t;
        if !fit.is_finite() || lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("ALS produced a non-finite residual".into()));
        }
        diagnostics.residuals.push(fit);

        if let Some(p) = prev {
            if (p - fit).abs() / p.max(1e-15) < cfg.rel_tol || fit == 0.0 {
                diagnostics.converged = true;
                break;
            }
        }
        prev = Some(fit);
    }

    let [x, y, z] = f.map(RowMajor::into_matrix);
    let mut model = CpModel::new(lambda, x, y, z)?.finalize();
    model.diagnostics = diagnostics;
    Ok(model)
}

/// Dense reconstruction `Σ_l λ_l x_l ∘ y_l ∘ z_l`.
pub fn reconstruct(m: &CpModel) -> RealTensor3 {
    let dims = m.dims();
    let [d1, d2, d3] = dims;
    let r = m.rank();
    let mut data = Vec::with_capacity(d1 * d2 * d3);
    let mut w = vec![0.0; r];
    for k in 0..d3 {
        for j in 0..d2 {
            for l in 0..r {
                w[l] = m.lambda[l] * m.y.get(j, l) * m.z.get(k, l);
            }
            for i in 0..d1 {
                data.push((0..r).map(|l| m.x.get(i, l) * w[l]).sum());
            }
        }
    }
    RealTensor3::from_vec_unchecked(dims, data)
}

/// `||t - reconstruct(m)|| / ||t||`, or the absolute residual when `t` is zero.
pub fn fit_error(m: &CpModel, t: &RealTensor3) -> Result<f64> {
    if m.dims() != t.dims() {
        return Err(Error::contract(format!(
            "model dims {:?} do not match tensor dims {:?}",
            m.dims(),
            t.dims()
        )));
    }
    let resid = t.sub(&reconstruct(m))?.frobenius_norm();
    let norm = t.frobenius_norm();
    Ok(if norm == 0.0 { resid } else { resid / norm })
}

/// The model's weights, checked to be in descending order.
pub fn sorted_weights(m: &CpModel) -> Result<Vec<f64>> {
    if m.lambda.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Invariant("CP weights are not sorted in descending order".into()));
    }
    Ok(m.lambda.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{khatri_rao, matmul, unfold, Mode};
    use rand::SeedableRng;

    #[test]
    fn power_start_spans_the_range() {
        let mut rng = seeded(5);
        let (n, rank, r) = (12, 2, 4);
        let mut u: Vec<Vec<f64>> = (0..rank).map(|_| random_unit(n, &mut rng)).collect();
        orthonormalize(&mut u);
        let g: Vec<f64> = (0..n * n).map(|e| (0..rank).map(|l| (l + 1) as f64 * u[l][e / n] * u[l][e % n]).sum()).collect();
        let mut f = RowMajor::random(n, r, &mut rng);
        let before = f.clone();
        power_start(&g, &mut f);
        let col = |m: &RowMajor, l: usize| -> Vec<f64> { (0..n).map(|i| m.data[i * r + l]).collect() };
        for l in 0..rank {
            let c = col(&f, l);
            assert!((dot(&c, &c) - 1.0).abs() < 1e-12);
            let in_range: f64 = u.iter().map(|v| dot(v, &c).powi(2)).sum();
            assert!((in_range - 1.0).abs() < 1e-10);
        }
        assert!(dot(&col(&f, 0), &col(&f, 1)).abs() < 1e-12);
        for l in rank..r {
            assert_eq!(col(&f, l), col(&before, l));
        }
    }

    fn random_unit(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let nrm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.into_iter().map(|a| a / nrm).collect()
    }

    fn column_matrix(cols: &[Vec<f64>]) -> RealMatrix {
        RealMatrix::from_fn(cols[0].len(), cols.len(), |i, l| cols[l][i]).unwrap()
    }

    /// Oracle: builds `Σ λ_l x_l ∘ y_l ∘ z_l` by brute force.
    fn build(lambda: &[f64], xs: &[Vec<f64>], ys: &[Vec<f64>], zs: &[Vec<f64>]) -> RealTensor3 {
        let dims = [xs[0].len(), ys[0].len(), zs[0].len()];
        RealTensor3::from_fn(dims, |i, j, k| {
            (0..lambda.len()).map(|l| lambda[l] * xs[l][i] * ys[l][j] * zs[l][k]).sum()
        })
        .unwrap()
    }

    #[test]
    fn rank_bound_examples() {
        assert_eq!(rank_upper_bound([200, 100, 100]), 10000);
        assert_eq!(rank_upper_bound([1, 1, 1]), 1);
        assert_eq!(rank_upper_bound([2, 3, 4]), 6);
    }

    #[test]
    fn mttkrp_matches_unfold_times_khatri_rao() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let t = RealTensor3::from_fn([3, 4, 5], |_, _, _| rng.sample(StandardNormal)).unwrap();
        let f = [RowMajor::random(3, 2, &mut rng), RowMajor::random(4, 2, &mut rng), RowMajor::random(5, 2, &mut rng)];
        let m = |rm: &RowMajor| rm.clone().into_matrix();
        let expect1 = matmul(&unfold(&t, Mode::One), &khatri_rao(&m(&f[2]), &m(&f[1])).unwrap()).unwrap();
        let expect2 = matmul(&unfold(&t, Mode::Two), &khatri_rao(&m(&f[2]), &m(&f[0])).unwrap()).unwrap();
        let expect3 = matmul(&unfold(&t, Mode::Three), &khatri_rao(&m(&f[1]), &m(&f[0])).unwrap()).unwrap();
        let w = contract_mode1(&t, &f[0]);
        let got = [
            mttkrp_mode1(&t, &f[1], &f[2]).into_matrix(),
            mttkrp_mode2(&w, 4, 5, &f[2]).into_matrix(),
            mttkrp_mode3(&w, 4, 5, &f[1]).into_matrix(),
        ];
        for (g, e) in got.iter().zip([expect1, expect2, expect3]) {
            for (a, b) in g.data().iter().zip(e.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_rank_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (x, y, z) = (random_unit(5, &mut rng), random_unit(6, &mut rng), random_unit(7, &mut rng));
        let t = build(&[7.0], &[x], &[y], &[z]);
        let cfg = AlsConfig { r_max: 1, max_iters: 100, rel_tol: 1e-12, seed: 1 };
        let m = cp_als(&t, &cfg).unwrap();
        assert!((m.lambda()[0] - 7.0).abs() < 1e-6);
        assert!(fit_error(&m, &t).unwrap() < 1e-8);
    }

    #[test]
    fn recovers_rank_three() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<_> = (0..3).map(|_| random_unit(8, &mut rng)).collect();
        let ys: Vec<_> = (0..3).map(|_| random_unit(9, &mut rng)).collect();
        let zs: Vec<_> = (0..3).map(|_| random_unit(10, &mut rng)).collect();
        let t = build(&[5.0, 3.0, 1.0], &xs, &ys, &zs);
        let cfg = AlsConfig { r_max: 3, max_iters: 500, rel_tol: 1e-10, seed: 2 };
        let m = cp_als(&t, &cfg).unwrap();
        assert!(fit_error(&m, &t).unwrap() < 1e-6);
        let w = sorted_weights(&m).unwrap();
        for (got, want) in w.iter().zip([5.0, 3.0, 1.0]) {
            assert!((got - want).abs() < 1e-4, "{w:?}");
        }
        let rec = reconstruct(&m);
        assert!(t.sub(&rec).unwrap().frobenius_norm() / t.frobenius_norm() < 1e-6);
        // Fewer components fit strictly worse.
        let m1 = cp_als(&t, &AlsConfig { r_max: 1, ..cfg }).unwrap();
        assert!(fit_error(&m1, &t).unwrap() > fit_error(&m, &t).unwrap());
    }

    #[test]
    fn residuals_never_increase() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let t = RealTensor3::from_fn([6, 7, 8], |_, _, _| rng.sample(StandardNormal)).unwrap();
        let m = cp_als(&t, &AlsConfig { r_max: 4, max_iters: 60, rel_tol: 1e-12, seed: 4 }).unwrap();
        for w in m.diagnostics.residuals.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "{:?}", m.diagnostics.residuals);
        }
    }

    #[test]
    fn factor_columns_unit_and_weights_sorted() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let t = RealTensor3::from_fn([4, 5, 6], |_, _, _| rng.sample(StandardNormal)).unwrap();
        let m = cp_als(&t, &AlsConfig { r_max: 5, ..AlsConfig::default() }).unwrap();
        for f in [m.x(), m.y(), m.z()] {
            for l in 0..f.cols() {
                let n = f.column(l).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
        assert!(m.lambda().windows(2).all(|w| w[0] >= w[1]));
        assert!(m.lambda().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_tensor_is_degenerate() {
        let t = RealTensor3::zeros([3, 3, 3]).unwrap();
        let m = cp_als(&t, &AlsConfig { r_max: 2, ..AlsConfig::default() }).unwrap();
        assert!(m.diagnostics.degenerate);
        assert_eq!(m.lambda(), &[0.0, 0.0]);
        assert_eq!(fit_error(&m, &t).unwrap(), 0.0);
    }

    #[test]
    fn rank_is_capped_at_bound() {
        let t = RealTensor3::from_fn([1, 2, 3], |i, j, k| (1 + i + j + k) as f64).unwrap();
        let m = cp_als(&t, &AlsConfig { r_max: 10, ..AlsConfig::default() }).unwrap();
        assert_eq!(m.rank(), 2);
        assert!(m.diagnostics.rank_exceeds_dimension);
    }

    #[test]
    fn reconstruct_examples() {
        let one = RealMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let m = CpModel::new(vec![1.0], one.clone(), one.clone(), one).unwrap();
        assert_eq!(reconstruct(&m).data(), &[1.0]);

        let xs = vec![vec![1.0, 2.0], vec![0.5, -1.0]];
        let ys = vec![vec![3.0, 1.0], vec![2.0, 2.0]];
        let zs = vec![vec![1.0, 0.0], vec![-1.0, 4.0]];
        let m = CpModel::new(vec![2.0, 3.0], column_matrix(&xs), column_matrix(&ys), column_matrix(&zs)).unwrap();
        assert_eq!(reconstruct(&m), build(&[2.0, 3.0], &xs, &ys, &zs));
    }

    #[test]
    fn fit_error_edges() {
        let one = |n| RealMatrix::from_fn(n, 1, |_, _| 1.0).unwrap();
        let zero_model = CpModel::new(vec![0.0], one(2), one(2), one(2)).unwrap();
        let t = RealTensor3::from_fn([2, 2, 2], |i, _, _| i as f64 + 1.0).unwrap();
        assert_eq!(fit_error(&zero_model, &t).unwrap(), 1.0);
        let wrong = RealTensor3::zeros([2, 2, 3]).unwrap();
        assert!(matches!(fit_error(&zero_model, &wrong), Err(Error::Contract(_))));
    }

    #[test]
    fn sorted_weights_checks_order() {
        let one = |n| RealMatrix::from_fn(n, 3, |_, _| 1.0).unwrap();
        let m = CpModel::new(vec![3.0, 3.0, 1.0], one(1), one(1), one(1)).unwrap();
        assert_eq!(sorted_weights(&m).unwrap(), vec![3.0, 3.0, 1.0]);
        let bad = CpModel::new(vec![1.0, 3.0, 3.0], one(1), one(1), one(1)).unwrap();
        assert!(matches!(sorted_weights(&bad), Err(Error::Invariant(_))));
    }

    #[test]
    fn finalize_flips_negative_weights() {
        let x = RealMatrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let e = RealMatrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let m = CpModel::new(vec![-1.0, 5.0], x, e.clone(), e).unwrap().finalize();
        assert_eq!(m.lambda(), &[5.0, 2.0]);
        assert_eq!(m.x().column(1), &[-1.0, 0.0]);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let t = RealTensor3::from_fn([5, 4, 3], |_, _, _| rng.sample(StandardNormal)).unwrap();
        let cfg = AlsConfig { r_max: 3, seed: 77, ..AlsConfig::default() };
        assert_eq!(cp_als(&t, &cfg).unwrap(), cp_als(&t, &cfg).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(AlsConfig { r_max: 0, ..AlsConfig::default() }.validate().is_err());
        assert!(AlsConfig { max_iters: 0, ..AlsConfig::default() }.validate().is_err());
        assert!(AlsConfig { rel_tol: 0.0, ..AlsConfig::default() }.validate().is_err());
    }
}
