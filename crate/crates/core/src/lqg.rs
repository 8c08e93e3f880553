//! Gaussian free field on the strip `R x (0, pi)`, regularized chaos measures, quantum disks
//! and their embedding into the unit disk.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64 as C;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::{child_seed, trial_rng};
use crate::error::{Result, SimError};

const CIRCLE_ANGLES: usize = 16;

/// `Q = 2 / gamma + gamma / 2`.
pub fn q_gamma(gamma: f64) -> f64 {
    2.0 / gamma + gamma / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    /// `[-K, K] x (0, pi)`.
    Strip,
    /// Square `[-1, 1]^2`; only cells centred inside the unit disk carry data.
    Disk,
}

/// Cell-centred grid field. `values[j * nx + i]` sits at `(x_i, y_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub domain: Domain,
    pub nx: usize,
    pub ny: usize,
    pub half_width: f64,
    pub hx: f64,
    pub hy: f64,
    pub delta: f64,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros_strip(nx: usize, ny: usize, half_width: f64) -> Self {
        let (hx, hy) = (2.0 * half_width / nx as f64, PI / ny as f64);
        Self { domain: Domain::Strip, nx, ny, half_width, hx, hy, delta: hx.max(hy), values: vec![0.0; nx * ny] }
    }

    pub fn zeros_disk(n: usize) -> Self {
        let h = 2.0 / n as f64;
        Self { domain: Domain::Disk, nx: n, ny: n, half_width: 1.0, hx: h, hy: h, delta: h, values: vec![0.0; n * n] }
    }

    fn y_min(&self) -> f64 {
        match self.domain {
            Domain::Strip => 0.0,
            Domain::Disk => -1.0,
        }
    }

    pub fn x_at(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.hx
    }

    pub fn y_at(&self, j: usize) -> f64 {
        self.y_min() + (j as f64 + 0.5) * self.hy
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    /// Set the regularization radius; it may not go below one cell.
    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        let cell = self.hx.max(self.hy);
        if delta < cell * (1.0 - 1e-12) {
            return Err(SimError::Resolution { requested: delta, grid: cell });
        }
        self.delta = delta;
        Ok(self)
    }

    pub fn column_mean(&self, i: usize) -> f64 {
        (0..self.ny).map(|j| self.at(i, j)).sum::<f64>() / self.ny as f64
    }

    /// Add `f(x)` to every cell of column `x`.
    pub fn add_columns(&mut self, f: &[f64]) {
        for row in self.values.chunks_mut(self.nx) {
            for (v, fi) in row.iter_mut().zip(f) {
                *v += fi;
            }
        }
    }

    pub fn shift(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v += c);
    }

    /// Bilinear interpolation between cell centres. On the strip, `y` is reflected into `[0, pi]`
    /// (free boundary); beyond the outermost centres values are held constant.
    pub fn interpolate(&self, x: f64, y: f64) -> f64 {
        let y = match self.domain {
            Domain::Strip => {
                let r = y.rem_euclid(2.0 * PI);
                if r > PI {
                    2.0 * PI - r
                } else {
                    r
                }
            }
            Domain::Disk => y,
        };
        let fx = ((x + self.half_width) / self.hx - 0.5).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((y - self.y_min()) / self.hy - 0.5).clamp(0.0, (self.ny - 1) as f64);
        let (i0, j0) = ((fx as usize).min(self.nx - 2), (fy as usize).min(self.ny - 2));
        let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
        let v = |i, j| self.at(i, j);
        (1.0 - ty) * ((1.0 - tx) * v(i0, j0) + tx * v(i0 + 1, j0)) + ty * ((1.0 - tx) * v(i0, j0 + 1) + tx * v(i0 + 1, j0 + 1))
    }

    /// Average over 16 points of the circle of radius `delta` around `(x, y)`.
    pub fn circle_average(&self, x: f64, y: f64, delta: f64) -> f64 {
        (0..CIRCLE_ANGLES)
            .map(|k| {
                let a = 2.0 * PI * (k as f64 + 0.5) / CIRCLE_ANGLES as f64;
                self.interpolate(x + delta * a.cos(), y + delta * a.sin())
            })
            .sum::<f64>()
            / CIRCLE_ANGLES as f64
    }
}

/// Tridiagonal symmetric matrix with constant off-diagonal `off`.
struct Tridiag {
    diag: Vec<f64>,
    off: f64,
}

impl Tridiag {
    /// `(1 / 2 pi) [ (hy/hx) L_x + (hx/hy) mu ]` with the Neumann path Laplacian `L_x`.
    fn mode_precision(nx: usize, hx: f64, hy: f64, mu: f64) -> Self {
        let (wx, wy) = (hy / hx, hx / hy);
        let diag = (0..nx)
            .map(|i| {
                let nbrs = if i == 0 || i == nx - 1 { 1.0 } else { 2.0 };
                (wx * nbrs + wy * mu) / (2.0 * PI)
            })
            .collect();
        Tridiag { diag, off: -wx / (2.0 * PI) }
    }

    /// Lower bidiagonal Cholesky factor: (diagonal, subdiagonal).
    fn cholesky(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.diag.len();
        let (mut l, mut s) = (vec![0.0; n], vec![0.0; n.saturating_sub(1)]);
        for i in 0..n {
            let mut d = self.diag[i];
            if i > 0 {
                s[i - 1] = self.off / l[i - 1];
                d -= s[i - 1] * s[i - 1];
            }
            if !(d > 0.0) {
                return Err(SimError::LinearAlgebra(format!("pivot {d} at row {i}")));
            }
            l[i] = d.sqrt();
        }
        Ok((l, s))
    }

    /// Diagonal of the inverse from forward and backward pivots.
    fn inverse_diagonal(&self) -> Vec<f64> {
        let n = self.diag.len();
        let mut fwd = vec![0.0; n];
        let mut bwd = vec![0.0; n];
        for i in 0..n {
            fwd[i] = self.diag[i] - if i > 0 { self.off * self.off / fwd[i - 1] } else { 0.0 };
        }
        for i in (0..n).rev() {
            bwd[i] = self.diag[i] - if i + 1 < n { self.off * self.off / bwd[i + 1] } else { 0.0 };
        }
        (0..n).map(|i| 1.0 / (fwd[i] + bwd[i] - self.diag[i])).collect()
    }
}

/// Orthonormal DCT-II vector `k` evaluated at row `j`.
fn dct_basis(k: usize, j: usize, ny: usize) -> f64 {
    if k == 0 {
        (1.0 / ny as f64).sqrt()
    } else {
        (2.0 / ny as f64).sqrt() * (PI * k as f64 * (j as f64 + 0.5) / ny as f64).cos()
    }
}

fn dct_eigenvalue(k: usize, ny: usize) -> f64 {
    4.0 * (PI * k as f64 / (2.0 * ny as f64)).sin().powi(2)
}

fn check_grid(nx: usize, ny: usize, half_width: f64) -> Result<()> {
    if nx < 8 || ny < 8 || !(half_width > 0.0) {
        return Err(SimError::InvalidParameter(format!("grid {nx} x {ny}, K = {half_width}")));
    }
    Ok(())
}

/// Lateral component of the free-boundary GFF on `[-K, K] x (0, pi)`.
///
/// Expands in the orthonormal cosine basis across the strip; mode `k >= 1` is a Gaussian along the strip
/// with tridiagonal precision from the discrete Dirichlet form `(1/2pi) sum (grad h)^2`. Mode 0 (the
/// column averages) is omitted.
pub fn sample_strip_gff(nx: usize, ny: usize, half_width: f64, seed: u64) -> Result<GridField> {
    check_grid(nx, ny, half_width)?;
    let mut field = GridField::zeros_strip(nx, ny, half_width);
    let mut rng = trial_rng(seed, 0);
    let mut a = vec![0.0; nx];
    for k in 1..ny {
        let p = Tridiag::mode_precision(nx, field.hx, field.hy, dct_eigenvalue(k, ny));
        let (l, s) = p.cholesky()?;
        // L^T a = z
        for i in (0..nx).rev() {
            let z: f64 = rng.sample(StandardNormal);
            let rhs = z - if i + 1 < nx { s[i] * a[i + 1] } else { 0.0 };
            a[i] = rhs / l[i];
        }
        for j in 0..ny {
            let c = dct_basis(k, j, ny);
            let row = &mut field.values[j * nx..(j + 1) * nx];
            for (v, ai) in row.iter_mut().zip(&a) {
                *v += c * ai;
            }
        }
    }
    Ok(field)
}

/// Per-cell variance of the lateral field from the mode decomposition.
pub fn lateral_cell_variance(nx: usize, ny: usize, half_width: f64) -> Result<Vec<f64>> {
    check_grid(nx, ny, half_width)?;
    let (hx, hy) = (2.0 * half_width / nx as f64, PI / ny as f64);
    let mut var = vec![0.0; nx * ny];
    for k in 1..ny {
        let d = Tridiag::mode_precision(nx, hx, hy, dct_eigenvalue(k, ny)).inverse_diagonal();
        for j in 0..ny {
            let c2 = dct_basis(k, j, ny).powi(2);
            for i in 0..nx {
                var[j * nx + i] += c2 * d[i];
            }
        }
    }
    Ok(var)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criticality {
    Subcritical,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChaosKind {
    BulkSubcritical,
    BulkCritical,
    BoundarySubcritical,
    BoundaryCritical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosMeasure {
    pub gamma: f64,
    pub kind: ChaosKind,
    pub delta: f64,
    pub cell_masses: Vec<f64>,
    pub total: f64,
    /// Cells whose critical density was negative and floored at zero.
    pub floored: usize,
}

impl ChaosMeasure {
    fn from_cells(gamma: f64, kind: ChaosKind, delta: f64, cells: Vec<f64>, floored: usize) -> Self {
        let total = cells.iter().sum();
        Self { gamma, kind, delta, cell_masses: cells, total, floored }
    }
}

fn check_kind(gamma: f64, crit: Criticality) -> Result<()> {
    let ok = match crit {
        Criticality::Subcritical => gamma > SQRT_2 && gamma < 2.0,
        Criticality::Critical => gamma == 2.0,
    };
    if ok {
        Ok(())
    } else {
        Err(SimError::InvalidParameter(format!("gamma = {gamma} does not match {crit:?}")))
    }
}

/// Regularized bulk density at a point with circle average `h`: multiply by cell area for a mass.
/// The critical value may be negative.
pub fn bulk_density(h: f64, gamma: f64, delta: f64, crit: Criticality) -> f64 {
    match crit {
        Criticality::Subcritical => (gamma * h).exp() * delta.powf(gamma * gamma / 2.0) / (2.0 * (2.0 - gamma)),
        Criticality::Critical => (-h + (1.0 / delta).ln()) * (2.0 * h).exp() * delta * delta,
    }
}

/// Regularized boundary density; multiply by boundary length.
pub fn boundary_density(h: f64, gamma: f64, delta: f64, crit: Criticality) -> f64 {
    match crit {
        Criticality::Subcritical => (gamma * h / 2.0).exp() * delta.powf(gamma * gamma / 4.0) / (2.0 * (2.0 - gamma)),
        Criticality::Critical => (-h / 2.0 + (1.0 / delta).ln()) * h.exp() * delta,
    }
}

fn floor_negative(v: f64, floored: &mut usize) -> f64 {
    if v < 0.0 {
        *floored += 1;
        0.0
    } else {
        v
    }
}

/// Bulk measure of every cell at the field's regularization radius. On the disk, cells centred
/// outside the unit circle get mass 0.
pub fn bulk_measure(field: &GridField, gamma: f64, crit: Criticality) -> Result<ChaosMeasure> {
    check_kind(gamma, crit)?;
    let mut floored = 0;
    let area = field.cell_area();
    let mut cells = Vec::with_capacity(field.nx * field.ny);
    for j in 0..field.ny {
        for i in 0..field.nx {
            let (x, y) = (field.x_at(i), field.y_at(j));
            if field.domain == Domain::Disk && x * x + y * y >= 1.0 {
                cells.push(0.0);
                continue;
            }
            let h = field.circle_average(x, y, field.delta);
            cells.push(floor_negative(bulk_density(h, gamma, field.delta, crit), &mut floored) * area);
        }
    }
    let kind = if crit == Criticality::Critical { ChaosKind::BulkCritical } else { ChaosKind::BulkSubcritical };
    Ok(ChaosMeasure::from_cells(gamma, kind, field.delta, cells, floored))
}

/// Circle averages of the field at the boundary points `(x_i, 0)` then `(x_i, pi)`.
/// With the free-boundary reflection these are semicircle averages.
pub fn boundary_averages(field: &GridField) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * field.nx);
    for y in [0.0, PI] {
        for i in 0..field.nx {
            out.push(field.circle_average(field.x_at(i), y, field.delta));
        }
    }
    out
}

/// Boundary measure of the `2 nx` boundary segments of the strip (bottom row first).
pub fn boundary_measure(field: &GridField, gamma: f64, crit: Criticality) -> Result<ChaosMeasure> {
    check_kind(gamma, crit)?;
    if field.domain != Domain::Strip {
        return Err(SimError::InvalidParameter("boundary measure is implemented on the strip".into()));
    }
    let mut floored = 0;
    let cells = boundary_averages(field)
        .into_iter()
        .map(|h| floor_negative(boundary_density(h, gamma, field.delta, crit), &mut floored) * field.hx)
        .collect();
    let kind = if crit == Criticality::Critical { ChaosKind::BoundaryCritical } else { ChaosKind::BoundarySubcritical };
    Ok(ChaosMeasure::from_cells(gamma, kind, field.delta, cells, floored))
}

fn criticality(gamma: f64) -> Criticality {
    if gamma == 2.0 {
        Criticality::Critical
    } else {
        Criticality::Subcritical
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    /// Entrance point `-iota` of the conditioned diffusion.
    pub iota: f64,
    pub max_step: f64,
    /// Euler step is at most `rel_step * x^2` near the barrier.
    pub rel_step: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self { iota: 1e-3, max_step: 1e-2, rel_step: 1e-2 }
    }
}

/// One side of the profile at increasing times `s` (all `>= 0`).
///
/// `gamma < 2`: `B_{2s} - a s` conditioned negative via its Doob transform, drift `-a coth(a|x|/2)`.
/// `gamma = 2`: `-sqrt 2` times the modulus of a 3d Brownian motion, sampled exactly.
pub fn sample_profile_side<R: Rng>(gamma: f64, times: &[f64], cfg: &ProfileConfig, rng: &mut R) -> Result<Vec<f64>> {
    if !(gamma > SQRT_2 && gamma <= 2.0) {
        return Err(SimError::InvalidParameter(format!("gamma = {gamma} outside (sqrt 2, 2]")));
    }
    let mut out = Vec::with_capacity(times.len());
    if gamma == 2.0 {
        let (mut w, mut t) = ([0.0f64; 3], 0.0);
        for &s in times {
            let sd = (s - t).max(0.0).sqrt();
            for c in &mut w {
                *c += sd * rng.sample::<f64, _>(StandardNormal);
            }
            t = s;
            out.push(-SQRT_2 * (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt());
        }
        return Ok(out);
    }
    let a = 2.0 / gamma - gamma / 2.0;
    let (mut x, mut t) = (-cfg.iota, 0.0f64);
    for &s in times {
        while t < s {
            let dt = (s - t).min(cfg.max_step).min(cfg.rel_step * x * x).max(1e-14);
            let drift = -a / (a * x.abs() / 2.0).tanh();
            let z: f64 = rng.sample(StandardNormal);
            x += drift * dt + (2.0 * dt).sqrt() * z;
            if x >= 0.0 {
                x = -x.max(cfg.iota * 1e-3);
            }
            t += dt;
        }
        out.push(x);
    }
    Ok(out)
}

/// Profile at every column centre of a strip grid: independent sides glued at 0.
pub fn sample_disk_profile(gamma: f64, nx: usize, half_width: f64, seed: u64, cfg: &ProfileConfig) -> Result<Vec<f64>> {
    let mut rng = trial_rng(seed, 0);
    let hx = 2.0 * half_width / nx as f64;
    let xs: Vec<f64> = (0..nx).map(|i| -half_width + (i as f64 + 0.5) * hx).collect();
    let right: Vec<f64> = xs.iter().copied().filter(|&x| x >= 0.0).collect();
    let left: Vec<f64> = xs.iter().rev().copied().filter(|&x| x < 0.0).map(|x| -x).collect();
    let r = sample_profile_side(gamma, &right, cfg, &mut rng)?;
    let l = sample_profile_side(gamma, &left, cfg, &mut rng)?;
    let mut out: Vec<f64> = l.into_iter().rev().collect();
    out.extend(r);
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiskConfig {
    /// Columns; 0 picks roughly square cells.
    pub nx: usize,
    pub ny: usize,
    #[serde(rename = "K")]
    pub half_width: f64,
    /// Regularization radius in cells.
    pub delta_cells: f64,
    pub profile: ProfileConfig,
    /// Resolution of the disk grid used by the embedding.
    pub disk_resolution: usize,
}

impl Default for DiskConfig {
    fn default() -> Self {
        Self { nx: 0, ny: 16, half_width: 20.0, delta_cells: 1.0, profile: ProfileConfig::default(), disk_resolution: 64 }
    }
}

impl DiskConfig {
    pub fn columns(&self) -> usize {
        if self.nx > 0 {
            self.nx
        } else {
            ((2.0 * self.half_width * self.ny as f64 / PI).round() as usize).max(8)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumDiskSample {
    /// Normalized field.
    pub field: GridField,
    pub gamma: f64,
    /// Boundary length after normalization.
    pub boundary_length: f64,
    /// Boundary length before normalization.
    pub raw_boundary_length: f64,
    pub area: f64,
    pub shift: f64,
    pub importance_weight: f64,
    pub bulk: ChaosMeasure,
}

/// Smallest `c` with critical boundary length 1 after adding `c` (the increasing branch).
fn critical_shift(avgs: &[f64], delta: f64, hx: f64) -> Result<f64> {
    let nu = |c: f64| -> f64 { avgs.iter().map(|&h| boundary_density(h + c, 2.0, delta, Criticality::Critical).max(0.0) * hx).sum() };
    let mut lo = 0.0;
    let mut hi = 0.0;
    if nu(0.0) >= 1.0 {
        while nu(lo) >= 1.0 {
            lo -= 1.0;
            if lo < -1e3 {
                return Err(SimError::DegenerateSample(nu(0.0)));
            }
        }
        hi = lo + 1.0;
    } else {
        let mut prev = nu(0.0);
        loop {
            hi += 0.25;
            let v = nu(hi);
            if v >= 1.0 {
                break;
            }
            if v <= prev || hi > 1e3 {
                return Err(SimError::DegenerateSample(prev));
            }
            lo = hi;
            prev = v;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if nu(mid) >= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(hi)
}

/// Unit-boundary-length quantum disk on the strip.
///
/// Field = profile + lateral GFF. For `gamma < 2` it is shifted by `-(2/gamma) log nu` and carries the
/// importance weight `nu^{4/gamma^2 - 1}`. For `gamma = 2` the shift solves `nu = 1` exactly.
pub fn sample_quantum_disk(gamma: f64, cfg: &DiskConfig, seed: u64) -> Result<QuantumDiskSample> {
    let crit = criticality(gamma);
    check_kind(gamma, crit)?;
    let nx = cfg.columns();
    let mut field = sample_strip_gff(nx, cfg.ny, cfg.half_width, child_seed(seed, 0))?;
    let cell = field.hx.max(field.hy);
    field = field.with_delta(cfg.delta_cells * cell)?;
    let profile = sample_disk_profile(gamma, nx, cfg.half_width, child_seed(seed, 1), &cfg.profile)?;
    field.add_columns(&profile);

    let raw = boundary_measure(&field, gamma, crit)?.total;
    if !(raw > 1e-300 && raw.is_finite()) {
        return Err(SimError::DegenerateSample(raw));
    }
    let (shift, weight) = match crit {
        Criticality::Subcritical => (-(2.0 / gamma) * raw.ln(), raw.powf(4.0 / (gamma * gamma) - 1.0)),
        Criticality::Critical => (critical_shift(&boundary_averages(&field), field.delta, field.hx)?, 1.0),
    };
    field.shift(shift);
    let boundary_length = boundary_measure(&field, gamma, crit)?.total;
    let bulk = bulk_measure(&field, gamma, crit)?;
    Ok(QuantumDiskSample {
        field,
        gamma,
        boundary_length,
        raw_boundary_length: raw,
        area: bulk.total,
        shift,
        importance_weight: weight,
        bulk,
    })
}

/// Conformal map from the strip to the unit disk sending `z0` to 0 with positive derivative:
/// `phi(z) = i e^{-i y0} (e^z - w0) / (e^z - conj w0)`, `w0 = e^{z0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripToDisk {
    pub z0: C,
}

impl StripToDisk {
    fn rot(&self) -> C {
        C::i() * C::from_polar(1.0, -self.z0.im)
    }

    pub fn map(&self, z: C) -> C {
        let w0 = self.z0.exp();
        let u = z.exp();
        self.rot() * (u - w0) / (u - w0.conj())
    }

    pub fn derivative(&self, z: C) -> C {
        let w0 = self.z0.exp();
        let u = z.exp();
        self.rot() * u * (w0.conj() - w0) * -1.0 / ((u - w0.conj()) * (u - w0.conj()))
    }

    pub fn inverse(&self, w: C) -> C {
        let w0 = self.z0.exp();
        let v = w / self.rot();
        ((w0 - w0.conj() * v) / (C::new(1.0, 0.0) - v)).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiskEmbedding {
    pub z0: C,
    /// Field on the disk: `h(psi(w)) + Q log |psi'(w)|`, zero outside the unit circle.
    pub field: GridField,
    /// Images of the strip cell centres and their bulk masses (pushforward).
    pub points: Vec<C>,
    pub masses: Vec<f64>,
    /// Rejected draws that landed within two cells of the strip boundary.
    pub resamples: usize,
}

impl DiskEmbedding {
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Mass of the annulus `{ |w| > 1 - delta }`.
    pub fn mass_near_boundary(&self, delta: f64) -> f64 {
        self.points.iter().zip(&self.masses).filter(|(p, _)| p.norm() > 1.0 - delta).map(|(_, m)| m).sum()
    }
}

/// Map the disk to the unit disk around a point drawn from its bulk measure.
pub fn embed_disk(sample: &QuantumDiskSample, seed: u64, resolution: usize) -> Result<DiskEmbedding> {
    let f = &sample.field;
    let masses = &sample.bulk.cell_masses;
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(SimError::DegenerateSample(total));
    }
    let mut rng = trial_rng(seed, 0);
    let mut resamples = 0;
    let cell = loop {
        let mut u = rng.random::<f64>() * total;
        let mut idx = masses.len() - 1;
        for (k, m) in masses.iter().enumerate() {
            if u < *m {
                idx = k;
                break;
            }
            u -= m;
        }
        let j = idx / f.nx;
        if j >= 2 && j + 2 < f.ny {
            break idx;
        }
        resamples += 1;
        if resamples > 10_000 {
            return Err(SimError::DegenerateSample(total));
        }
    };
    let z0 = C::new(f.x_at(cell % f.nx), f.y_at(cell / f.nx));
    let phi = StripToDisk { z0 };
    let q = q_gamma(sample.gamma);

    let mut disk = GridField::zeros_disk(resolution);
    for j in 0..resolution {
        for i in 0..resolution {
            let w = C::new(disk.x_at(i), disk.y_at(j));
            if w.norm() >= 1.0 {
                continue;
            }
            let z = phi.inverse(w);
            disk.values[j * resolution + i] = f.interpolate(z.re, z.im) - q * phi.derivative(z).norm().ln();
        }
    }
    let points = (0..f.ny).flat_map(|j| (0..f.nx).map(move |i| (i, j))).map(|(i, j)| phi.map(C::new(f.x_at(i), f.y_at(j)))).collect();
    Ok(DiskEmbedding { z0, field: disk, points, masses: masses.clone(), resamples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_at_two() {
        assert_eq!(q_gamma(2.0), 2.0);
    }

    #[test]
    fn columns_have_zero_mean() {
        let f = sample_strip_gff(64, 16, 5.0, 1).unwrap();
        for i in 0..64 {
            assert!(f.column_mean(i).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_small_grids() {
        assert!(sample_strip_gff(4, 16, 1.0, 0).is_err());
    }

    #[test]
    fn interpolation_reproduces_linear_functions() {
        let mut f = GridField::zeros_strip(32, 16, 4.0);
        for j in 0..16 {
            for i in 0..32 {
                f.values[j * 32 + i] = 2.0 * f.x_at(i) - f.y_at(j);
            }
        }
        let (x, y) = (0.37, 1.3);
        assert!((f.interpolate(x, y) - (2.0 * x - y)).abs() < 1e-12);
        // a circle average of a linear function is its centre value
        assert!((f.circle_average(x, y, 0.2) - (2.0 * x - y)).abs() < 1e-12);
    }

    #[test]
    fn zero_field_totals() {
        let f = GridField::zeros_strip(40, 10, 3.0);
        let g = 1.8;
        let d = f.delta;
        let bulk = bulk_measure(&f, g, Criticality::Subcritical).unwrap();
        let expect = d.powf(g * g / 2.0) / (2.0 * 0.2) * 6.0 * PI;
        assert!((bulk.total / expect - 1.0).abs() < 1e-12);
        let bdry = boundary_measure(&f, g, Criticality::Subcritical).unwrap();
        let expect = d.powf(g * g / 4.0) / (2.0 * 0.2) * 12.0;
        assert!((bdry.total / expect - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_shift_scales_masses() {
        let mut f = sample_strip_gff(40, 10, 3.0, 4).unwrap();
        let g = 1.7;
        let b0 = bulk_measure(&f, g, Criticality::Subcritical).unwrap();
        let n0 = boundary_measure(&f, g, Criticality::Subcritical).unwrap();
        f.shift(0.3);
        let b1 = bulk_measure(&f, g, Criticality::Subcritical).unwrap();
        let n1 = boundary_measure(&f, g, Criticality::Subcritical).unwrap();
        for (a, b) in b0.cell_masses.iter().zip(&b1.cell_masses) {
            assert!((b / a - (g * 0.3).exp()).abs() < 1e-9);
        }
        assert!((n1.total / n0.total - (g * 0.3 / 2.0).exp()).abs() < 1e-9);
    }

    #[test]
    fn kind_mismatch_rejected() {
        let f = GridField::zeros_strip(16, 8, 1.0);
        assert!(bulk_measure(&f, 1.9, Criticality::Critical).is_err());
        assert!(bulk_measure(&f, 2.0, Criticality::Subcritical).is_err());
        assert!(f.clone().with_delta(f.hx.max(f.hy) / 2.0).is_err());
    }

    #[test]
    fn profile_negative_and_critical_second_moment() {
        let cfg = ProfileConfig::default();
        let mut rng = trial_rng(1, 0);
        let v = sample_profile_side(1.8, &[0.1, 1.0, 5.0], &cfg, &mut rng).unwrap();
        assert!(v.iter().all(|&x| x < 0.0));
        let n = 20_000;
        let m2 = (0..n).map(|_| sample_profile_side(2.0, &[1.0], &cfg, &mut rng).unwrap()[0].powi(2)).sum::<f64>() / n as f64;
        // E = 6, sd of the mean = sqrt(Var(2 chi^2_3)) / sqrt(n) = sqrt(24 / n)
        assert!((m2 - 6.0).abs() < 4.0 * (24.0 / n as f64).sqrt(), "{m2}");
    }

    #[test]
    fn unit_boundary_length_after_normalization() {
        let cfg = DiskConfig { ny: 8, half_width: 6.0, ..Default::default() };
        for gamma in [1.8, 2.0] {
            for seed in 0..5 {
                let s = sample_quantum_disk(gamma, &cfg, seed).unwrap();
                assert!((s.boundary_length - 1.0).abs() < 1e-6, "{gamma} {}", s.boundary_length);
                if gamma == 2.0 {
                    assert_eq!(s.importance_weight, 1.0);
                }
            }
        }
    }

    #[test]
    fn strip_map_properties() {
        let phi = StripToDisk { z0: C::new(0.3, 1.1) };
        assert!(phi.map(phi.z0).norm() < 1e-12);
        let d = phi.derivative(phi.z0);
        assert!(d.im.abs() < 1e-12 && d.re > 0.0);
        let z = C::new(-1.2, 2.5);
        assert!((phi.inverse(phi.map(z)) - z).norm() < 1e-10);
        assert!((phi.map(C::new(0.7, 0.0)).norm() - 1.0).abs() < 1e-12);
        let h = 1e-6;
        let fd = (phi.map(z + h) - phi.map(z - h)) / (2.0 * h);
        assert!((fd - phi.derivative(z)).norm() < 1e-6);
    }

    #[test]
    fn embedding_preserves_mass() {
        let cfg = DiskConfig { ny: 8, half_width: 6.0, ..Default::default() };
        let s = sample_quantum_disk(2.0, &cfg, 3).unwrap();
        let e = embed_disk(&s, 9, 32).unwrap();
        assert_eq!(e.total_mass(), s.bulk.total);
        assert!(e.points.iter().all(|p| p.norm() <= 1.0 + 1e-12));
        assert!(e.field.values.iter().all(|v| v.is_finite()));
    }
}
