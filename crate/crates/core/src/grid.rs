//! Uniform lattices, cell-average projection of data, grid functions and the
//! piecewise-constant / piecewise-linear-in-time interpolants.
//!
//! Nodes are `x_β = hβ` for multi-indices with `|β_i| ≤ K_i`. The cell of a
//! node is the half-open box `x_β + h(-1/2, 1/2]^N`; grid functions are
//! extended by zero outside the box.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{GpmeError, Result};
use crate::quadrature::{compensated_sum, gauss_legendre_5, GL5_NODES, GL5_WEIGHTS};

/// Below this many nodes loops stay sequential.
pub(crate) const PAR_MIN_LEN: usize = 512;

/// Shortest round-trip decimal rendering used by every writer.
pub fn format_float(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    h: f64,
    half_nodes: Vec<usize>,
    strides: Vec<usize>,
}

impl UniformGrid {
    /// Lattice of spacing `h` covering `[-half_extent, half_extent]` on every
    /// axis (the outermost node is the largest multiple of `h` not beyond
    /// `half_extent`).
    pub fn new(dim: usize, h: f64, half_extent: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(GpmeError::config("h", format!("spacing must be positive, got {h}")));
        }
        if !(half_extent.is_finite() && half_extent >= 0.0) {
            return Err(GpmeError::config(
                "half_extent",
                format!("half extent must be non-negative, got {half_extent}"),
            ));
        }
        let k = (half_extent / h + 1e-9).floor() as usize;
        Self::with_half_nodes(h, vec![k; dim])
    }

    pub fn with_half_nodes(h: f64, half_nodes: Vec<usize>) -> Result<Self> {
        if half_nodes.is_empty() {
            return Err(GpmeError::config("dimension", "dimension must be positive"));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(GpmeError::config("h", format!("spacing must be positive, got {h}")));
        }
        let n = half_nodes.len();
        let mut strides = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * (2 * half_nodes[i + 1] + 1);
        }
        Ok(Self {
            h,
            half_nodes,
            strides,
        })
    }

    pub fn dim(&self) -> usize {
        self.half_nodes.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn half_nodes(&self) -> &[usize] {
        &self.half_nodes
    }

    /// Number of nodes along `axis`.
    pub fn axis_len(&self, axis: usize) -> usize {
        2 * self.half_nodes[axis] + 1
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Coordinate of the outermost node on `axis`.
    pub fn half_extent(&self, axis: usize) -> f64 {
        self.half_nodes[axis] as f64 * self.h
    }

    pub fn node_count(&self) -> usize {
        (0..self.dim()).map(|a| self.axis_len(a)).product()
    }

    /// `h^N`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim() as i32)
    }

    pub fn contains(&self, beta: &[i64]) -> bool {
        beta.iter()
            .zip(&self.half_nodes)
            .all(|(&b, &k)| b.unsigned_abs() as usize <= k)
    }

    pub fn index_of(&self, beta: &[i64]) -> Option<usize> {
        if beta.len() != self.dim() || !self.contains(beta) {
            return None;
        }
        Some(
            beta.iter()
                .zip(&self.half_nodes)
                .zip(&self.strides)
                .map(|((&b, &k), &s)| (b + k as i64) as usize * s)
                .sum(),
        )
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<i64> {
        let mut beta = vec![0i64; self.dim()];
        for a in 0..self.dim() {
            let s = self.strides[a];
            beta[a] = (idx / s) as i64 - self.half_nodes[a] as i64;
            idx %= s;
        }
        beta
    }

    /// Coordinate of the node with linear index `idx` along `axis`.
    pub fn coord(&self, idx: usize, axis: usize) -> f64 {
        let i = (idx / self.strides[axis]) % self.axis_len(axis);
        (i as f64 - self.half_nodes[axis] as f64) * self.h
    }

    pub fn node_point(&self, idx: usize) -> Vec<f64> {
        (0..self.dim()).map(|a| self.coord(idx, a)).collect()
    }

    /// Euclidean norm of the node position.
    pub fn node_radius(&self, idx: usize) -> f64 {
        (0..self.dim())
            .map(|a| self.coord(idx, a).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Node whose cell `x_β + h(-1/2, 1/2]^N` contains `x`, if inside the box.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        let beta: Vec<i64> = x.iter().map(|&xi| (xi / self.h - 0.5).ceil() as i64).collect();
        self.index_of(&beta)
    }

    /// Same spacing and same box.
    pub fn same_lattice(&self, other: &UniformGrid) -> bool {
        self.h == other.h && self.half_nodes == other.half_nodes
    }
}

/// Knots `0 = t_0 < t_1 < ... < t_J = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.first() != Some(&0.0) {
            return Err(GpmeError::config("time_grid", "first knot must be 0"));
        }
        for w in knots.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(GpmeError::config(
                    "time_grid",
                    format!("knots must be strictly increasing, got {} then {}", w[0], w[1]),
                ));
            }
        }
        Ok(Self { knots })
    }

    /// `steps` uniform steps over [0, T].
    pub fn uniform(final_time: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Ok(Self { knots: vec![0.0] });
        }
        if !(final_time > 0.0 && final_time.is_finite()) {
            return Err(GpmeError::config("final_time", "final time must be positive"));
        }
        let dt = final_time / steps as f64;
        let mut knots: Vec<f64> = (0..steps).map(|j| j as f64 * dt).collect();
        knots.push(final_time);
        Self::new(knots)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of steps `J`.
    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    /// `Δt_j = t_j - t_{j-1}` for `j ≥ 1`.
    pub fn dt(&self, j: usize) -> f64 {
        self.knots[j] - self.knots[j - 1]
    }

    pub fn max_step(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn final_time(&self) -> f64 {
        *self.knots.last().expect("at least one knot")
    }

    /// Index `j ≥ 1` with `t ∈ (t_{j-1}, t_j]`, or 0 for `t = 0`.
    pub fn locate(&self, t: f64) -> Result<usize> {
        let tf = self.final_time();
        if !(0.0..=tf).contains(&t) {
            return Err(GpmeError::Domain(format!("time {t} outside [0, {tf}]")));
        }
        if t == 0.0 {
            return Ok(0);
        }
        Ok(self.knots.partition_point(|&k| k < t))
    }
}

/// Real values on every node of a grid, zero outside the box.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: UniformGrid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: &UniformGrid) -> Self {
        Self {
            values: vec![0.0; grid.node_count()],
            grid: grid.clone(),
        }
    }

    pub fn from_values(grid: &UniformGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(GpmeError::InvalidInput(format!(
                "expected {} values, got {}",
                grid.node_count(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GpmeError::InvalidInput(format!(
                "non-finite value at node {:?}",
                grid.multi_index(i)
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    /// Nodal sampling `U_β = f(x_β)`.
    pub fn from_nodal<F: Fn(&[f64]) -> f64 + Sync>(grid: &UniformGrid, f: F) -> Result<Self> {
        let values: Vec<f64> = (0..grid.node_count())
            .into_par_iter()
            .with_min_len(PAR_MIN_LEN)
            .map(|i| f(&grid.node_point(i)))
            .collect();
        Self::from_values(grid, values)
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, beta: &[i64]) -> f64 {
        self.grid.index_of(beta).map_or(0.0, |i| self.values[i])
    }

    /// Value of the cell-constant interpolant at `x`.
    pub fn value_at_point(&self, x: &[f64]) -> f64 {
        self.grid.locate(x).map_or(0.0, |i| self.values[i])
    }

    pub fn map<F: Fn(f64) -> f64 + Sync>(&self, f: F) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `h^N Σ U_β`.
    pub fn mass(&self) -> f64 {
        self.grid.cell_volume() * compensated_sum(self.values.iter().copied())
    }

    pub fn lr_norm(&self, r: f64) -> f64 {
        discrete_lr_norm(self, r)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with header `beta_1,...,beta_N,value`, lexicographic node order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (1..=self.grid.dim()).map(|i| format!("beta_{i}")).collect();
        writeln!(out, "{},value", header.join(","))?;
        for (i, v) in self.values.iter().enumerate() {
            let beta = self.grid.multi_index(i);
            for b in &beta {
                write!(out, "{b},")?;
            }
            writeln!(out, "{}", format_float(*v))?;
        }
        Ok(())
    }

    /// Reads the CSV layout of [`GridFunction::write_csv`] back onto `grid`.
    pub fn read_csv<R: BufRead>(grid: &UniformGrid, input: R) -> Result<Self> {
        let mut values = vec![0.0; grid.node_count()];
        let mut seen = vec![false; grid.node_count()];
        for (lineno, line) in input.lines().enumerate().skip(1) {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            let bad = || GpmeError::InvalidInput(format!("malformed CSV row {}", lineno + 1));
            if parts.len() != grid.dim() + 1 {
                return Err(bad());
            }
            let beta: Vec<i64> = parts[..grid.dim()]
                .iter()
                .map(|s| s.trim().parse::<i64>().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            let v: f64 = parts[grid.dim()].trim().parse().map_err(|_| bad())?;
            let idx = grid.index_of(&beta).ok_or_else(bad)?;
            values[idx] = v;
            seen[idx] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(GpmeError::InvalidInput("CSV does not cover every node".into()));
        }
        Self::from_values(grid, values)
    }
}

/// `‖Ū‖_{L^r}` of the cell-constant interpolant: `(h^N Σ|U_β|^r)^{1/r}`;
/// `r = ∞` gives `max |U_β|`.
pub fn discrete_lr_norm(u: &GridFunction, r: f64) -> f64 {
    assert!(r >= 1.0, "L^r norm needs r >= 1, got {r}");
    if r.is_infinite() {
        return u.max_abs();
    }
    let s = compensated_sum(u.values.iter().map(|v| v.abs().powf(r)));
    (u.grid.cell_volume() * s).powf(1.0 / r)
}

/// Pointwise function descriptor used for initial data, exact solutions and
/// test functions. Symbolic classes are integrated over cells in closed form.
#[derive(Clone)]
pub enum SpatialField {
    Zero,
    Constant(f64),
    Affine {
        offset: f64,
        slope: Vec<f64>,
    },
    /// `amplitude · exp(-|x - center|² / (2σ²))`.
    Gaussian {
        amplitude: f64,
        center: Vec<f64>,
        sigma: f64,
    },
    /// Self-similar source solution of `u_t = Δ(|u|^{m-1}u)` at `time`.
    Barenblatt {
        dim: usize,
        m: f64,
        time: f64,
        constant: f64,
    },
    /// `value` on the box `(lower, upper]`.
    Indicator {
        lower: Vec<f64>,
        upper: Vec<f64>,
        value: f64,
    },
    /// Poisson kernel `c_N t / (t² + |x|²)^{(N+1)/2}`.
    PoissonKernel {
        dim: usize,
        time: f64,
    },
    /// Arbitrary function; in 1D cells are split at `breakpoints`.
    Custom {
        f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        breakpoints: Vec<f64>,
    },
}

impl fmt::Debug for SpatialField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpatialField::Zero => write!(f, "Zero"),
            SpatialField::Constant(c) => write!(f, "Constant({c})"),
            SpatialField::Affine { offset, slope } => write!(f, "Affine({offset}, {slope:?})"),
            SpatialField::Gaussian { amplitude, center, sigma } => {
                write!(f, "Gaussian({amplitude}, {center:?}, {sigma})")
            }
            SpatialField::Barenblatt { dim, m, time, constant } => {
                write!(f, "Barenblatt(N={dim}, m={m}, t={time}, C={constant})")
            }
            SpatialField::Indicator { lower, upper, value } => {
                write!(f, "Indicator({lower:?}, {upper:?}, {value})")
            }
            SpatialField::PoissonKernel { dim, time } => write!(f, "PoissonKernel(N={dim}, t={time})"),
            SpatialField::Custom { breakpoints, .. } => write!(f, "Custom({breakpoints:?})"),
        }
    }
}

fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// Surface area of the unit sphere in `R^N`.
pub fn unit_sphere_area(dim: usize) -> f64 {
    let n = dim as f64;
    2.0 * std::f64::consts::PI.powf(n / 2.0) / gamma(n / 2.0)
}

impl SpatialField {
    /// Heat kernel `(4πat)^{-N/2} exp(-|x|²/(4at))` as a Gaussian descriptor.
    pub fn heat_kernel(dim: usize, time: f64, diffusivity: f64) -> Self {
        let s2 = 2.0 * diffusivity * time;
        SpatialField::Gaussian {
            amplitude: (4.0 * std::f64::consts::PI * diffusivity * time).powf(-(dim as f64) / 2.0),
            center: vec![0.0; dim],
            sigma: s2.sqrt(),
        }
    }

    pub fn custom<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        SpatialField::Custom {
            f: Arc::new(f),
            breakpoints: Vec::new(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            SpatialField::Zero => 0.0,
            SpatialField::Constant(c) => *c,
            SpatialField::Affine { offset, slope } => {
                offset + slope.iter().zip(x).map(|(s, xi)| s * xi).sum::<f64>()
            }
            SpatialField::Gaussian { amplitude, center, sigma } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum();
                amplitude * (-r2 / (2.0 * sigma * sigma)).exp()
            }
            SpatialField::Barenblatt { dim, m, time, constant } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                barenblatt_value(*dim, *m, *time, *constant, r2)
            }
            SpatialField::Indicator { lower, upper, value } => {
                let inside = x
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(xi, (lo, hi))| *xi > *lo && *xi <= *hi);
                if inside {
                    *value
                } else {
                    0.0
                }
            }
            SpatialField::PoissonKernel { dim, time } => {
                let n = *dim as f64;
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let c = gamma((n + 1.0) / 2.0) / std::f64::consts::PI.powf((n + 1.0) / 2.0);
                c * time / (time * time + r2).powf((n + 1.0) / 2.0)
            }
            SpatialField::Custom { f, .. } => f(x),
        }
    }

    /// Average of the field over the cell centred at `center` with side `h`.
    pub fn cell_average(&self, center: &[f64], h: f64) -> f64 {
        let dim = center.len();
        match self {
            SpatialField::Zero => 0.0,
            SpatialField::Constant(c) => *c,
            SpatialField::Affine { .. } => self.eval(center),
            SpatialField::Gaussian { amplitude, center: c, sigma } => {
                let s = sigma * std::f64::consts::SQRT_2;
                let mut prod = *amplitude;
                for (xi, ci) in center.iter().zip(c) {
                    let a = (xi - 0.5 * h - ci) / s;
                    let b = (xi + 0.5 * h - ci) / s;
                    prod *= 0.5 * s * std::f64::consts::PI.sqrt() * erf_diff(a, b) / h;
                }
                prod
            }
            SpatialField::Indicator { lower, upper, value } => {
                let mut frac = 1.0;
                for (xi, (lo, hi)) in center.iter().zip(lower.iter().zip(upper)) {
                    let a = (xi - 0.5 * h).max(*lo);
                    let b = (xi + 0.5 * h).min(*hi);
                    frac *= ((b - a).max(0.0)) / h;
                }
                value * frac
            }
            SpatialField::PoissonKernel { dim: 1, time } => {
                let a = center[0] - 0.5 * h;
                let b = center[0] + 0.5 * h;
                ((b / time).atan() - (a / time).atan()) / (std::f64::consts::PI * h)
            }
            SpatialField::Barenblatt { dim: 1, m, time, constant } if *m == 2.0 => {
                // t^{-1/3} (C - x²/(12 t^{2/3}))_+ integrated exactly.
                let k = 1.0 / 3.0;
                let a = 1.0 / (12.0 * time.powf(2.0 * k));
                let edge = (constant / a).sqrt();
                let lo = (center[0] - 0.5 * h).max(-edge);
                let hi = (center[0] + 0.5 * h).min(edge);
                if hi <= lo {
                    return 0.0;
                }
                let prim = |x: f64| constant * x - a * x * x * x / 3.0;
                time.powf(-k) * (prim(hi) - prim(lo)) / h
            }
            SpatialField::Barenblatt { dim: 1, m, time, constant } if *m > 1.0 => {
                let edge = barenblatt_support_radius(1, *m, *time, *constant);
                let lo = center[0] - 0.5 * h;
                let hi = center[0] + 0.5 * h;
                let f = |x: f64| self.eval(&[x]);
                let mut pts = vec![lo];
                for e in [-edge, edge] {
                    if e > lo && e < hi {
                        pts.push(e);
                    }
                }
                pts.push(hi);
                pts.windows(2).map(|w| composite_gl5(&f, w[0], w[1], 4)).sum::<f64>() / h
            }
            SpatialField::Custom { f, breakpoints } if dim == 1 => {
                let lo = center[0] - 0.5 * h;
                let hi = center[0] + 0.5 * h;
                let mut pts = vec![lo];
                pts.extend(breakpoints.iter().copied().filter(|&b| b > lo && b < hi));
                pts.push(hi);
                let g = |x: f64| f(&[x]);
                pts.windows(2).map(|w| gauss_legendre_5(g, w[0], w[1])).sum::<f64>() / h
            }
            _ => tensor_gl5_average(|x| self.eval(x), center, h, 2),
        }
    }

    /// Axis-aligned box outside of which the field is (numerically) zero.
    pub fn support_bounds(&self, dim: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            SpatialField::Zero => Some((vec![0.0; dim], vec![0.0; dim])),
            SpatialField::Gaussian { center, sigma, .. } => Some((
                center.iter().map(|c| c - 40.0 * sigma).collect(),
                center.iter().map(|c| c + 40.0 * sigma).collect(),
            )),
            SpatialField::Indicator { lower, upper, .. } => Some((lower.clone(), upper.clone())),
            SpatialField::Barenblatt { dim: d, m, time, constant } if *m > 1.0 => {
                let r = barenblatt_support_radius(*d, *m, *time, *constant);
                Some((vec![-r; dim], vec![r; dim]))
            }
            _ => None,
        }
    }

    /// Discontinuities and kinks of a 1D field, used to split quadrature.
    pub fn breakpoints_1d(&self) -> Vec<f64> {
        match self {
            SpatialField::Indicator { lower, upper, .. } => vec![lower[0], upper[0]],
            SpatialField::Barenblatt { m, time, constant, .. } if *m > 1.0 => {
                let r = barenblatt_support_radius(1, *m, *time, *constant);
                vec![-r, r]
            }
            SpatialField::Custom { breakpoints, .. } => breakpoints.clone(),
            _ => Vec::new(),
        }
    }
}

fn erf_diff(a: f64, b: f64) -> f64 {
    // erf(b) - erf(a) without cancellation in the far tails.
    if a > 0.0 {
        libm::erfc(a) - libm::erfc(b)
    } else if b < 0.0 {
        libm::erfc(-b) - libm::erfc(-a)
    } else {
        libm::erf(b) - libm::erf(a)
    }
}

fn composite_gl5<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, pieces: usize) -> f64 {
    let w = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| gauss_legendre_5(f, a + i as f64 * w, a + (i + 1) as f64 * w))
        .sum()
}

/// Tensor-product Gauss-Legendre average over a cube, each axis split into
/// `sub` pieces.
pub(crate) fn tensor_gl5_average<F: Fn(&[f64]) -> f64>(f: F, center: &[f64], h: f64, sub: usize) -> f64 {
    let dim = center.len();
    let per_axis = 5 * sub;
    let total = per_axis.pow(dim as u32);
    let piece = h / sub as f64;
    let mut point = vec![0.0; dim];
    let mut acc = 0.0;
    for flat in 0..total {
        let mut rem = flat;
        let mut weight = 1.0;
        for a in 0..dim {
            let q = rem % per_axis;
            rem /= per_axis;
            let (s, node) = (q / 5, q % 5);
            let lo = center[a] - 0.5 * h + s as f64 * piece;
            point[a] = lo + 0.5 * piece * (1.0 + GL5_NODES[node]);
            weight *= 0.5 * GL5_WEIGHTS[node] / sub as f64;
        }
        acc += weight * f(&point);
    }
    acc
}

fn barenblatt_exponents(dim: usize, m: f64) -> (f64, f64) {
    let n = dim as f64;
    let k = n / (n * (m - 1.0) + 2.0);
    let kappa = k * (m - 1.0).abs() / (2.0 * m * n);
    (k, kappa)
}

/// Barenblatt profile at squared radius `r2`.
pub fn barenblatt_value(dim: usize, m: f64, time: f64, constant: f64, r2: f64) -> f64 {
    let n = dim as f64;
    if m == 1.0 {
        return (4.0 * std::f64::consts::PI * time).powf(-n / 2.0) * (-r2 / (4.0 * time)).exp();
    }
    let (k, kappa) = barenblatt_exponents(dim, m);
    let xi2 = r2 * time.powf(-2.0 * k / n);
    if m > 1.0 {
        let base = (constant - kappa * xi2).max(0.0);
        time.powf(-k) * base.powf(1.0 / (m - 1.0))
    } else {
        time.powf(-k) * (constant + kappa * xi2).powf(-1.0 / (1.0 - m))
    }
}

/// Radius of the support of the slow-diffusion Barenblatt profile.
pub fn barenblatt_support_radius(dim: usize, m: f64, time: f64, constant: f64) -> f64 {
    let (k, kappa) = barenblatt_exponents(dim, m);
    (constant / kappa).sqrt() * time.powf(k / dim as f64)
}

/// Time dependence of a separable source.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeProfile {
    /// `Σ c_k t^k`.
    Polynomial(Vec<f64>),
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Polynomial(c) => c.iter().rev().fold(0.0, |acc, ck| acc * t + ck),
        }
    }

    /// Exact `∫_a^b`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            TimeProfile::Polynomial(c) => c
                .iter()
                .enumerate()
                .map(|(k, ck)| {
                    let p = (k + 1) as i32;
                    ck * (b.powi(p) - a.powi(p)) / (k + 1) as f64
                })
                .sum(),
        }
    }
}

/// Space-time source descriptor.
#[derive(Clone)]
pub enum SpaceTimeField {
    Zero,
    Constant(f64),
    Separable {
        space: SpatialField,
        time: TimeProfile,
    },
    Custom(Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for SpaceTimeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceTimeField::Zero => write!(f, "Zero"),
            SpaceTimeField::Constant(c) => write!(f, "Constant({c})"),
            SpaceTimeField::Separable { space, time } => write!(f, "Separable({space:?}, {time:?})"),
            SpaceTimeField::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl SpaceTimeField {
    pub fn is_zero(&self) -> bool {
        matches!(self, SpaceTimeField::Zero)
    }

    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        match self {
            SpaceTimeField::Zero => 0.0,
            SpaceTimeField::Constant(c) => *c,
            SpaceTimeField::Separable { space, time } => space.eval(x) * time.eval(t),
            SpaceTimeField::Custom(f) => f(x, t),
        }
    }
}

/// `U_β = h^{-N} ∫_{x_β + R_h} f`.
pub fn project_cell_average(f: &SpatialField, grid: &UniformGrid) -> Result<GridFunction> {
    let h = grid.h();
    let values: Vec<f64> = (0..grid.node_count())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|i| f.cell_average(&grid.node_point(i), h))
        .collect();
    GridFunction::from_values(grid, values)
        .map_err(|e| GpmeError::InvalidInput(format!("projection of {f:?}: {e}")))
}

/// `G^j_β = (h^N Δt_j)^{-1} ∫_{t_{j-1}}^{t_j} ∫_{x_β + R_h} g` for `j = 1..J`.
pub fn project_source(g: &SpaceTimeField, grid: &UniformGrid, time: &TimeGrid) -> Result<Vec<GridFunction>> {
    (1..=time.steps())
        .map(|j| project_source_step(g, grid, time.knots()[j - 1], time.knots()[j]))
        .collect()
}

/// Source average over one slab `(t0, t1]`.
pub fn project_source_step(g: &SpaceTimeField, grid: &UniformGrid, t0: f64, t1: f64) -> Result<GridFunction> {
    let dt = t1 - t0;
    match g {
        SpaceTimeField::Zero => Ok(GridFunction::zeros(grid)),
        SpaceTimeField::Constant(c) => {
            if !c.is_finite() {
                return Err(GpmeError::InvalidInput("non-finite source constant".into()));
            }
            GridFunction::from_values(grid, vec![*c; grid.node_count()])
        }
        SpaceTimeField::Separable { space, time } => {
            let factor = time.integral(t0, t1) / dt;
            let base = project_cell_average(space, grid)?;
            GridFunction::from_values(grid, base.values().iter().map(|v| v * factor).collect())
        }
        SpaceTimeField::Custom(f) => {
            let h = grid.h();
            let values: Vec<f64> = (0..grid.node_count())
                .into_par_iter()
                .with_min_len(PAR_MIN_LEN)
                .map(|i| {
                    let c = grid.node_point(i);
                    let mut acc = 0.0;
                    for (tn, tw) in GL5_NODES.iter().zip(GL5_WEIGHTS.iter()) {
                        let t = t0 + 0.5 * dt * (1.0 + tn);
                        acc += 0.5 * tw * tensor_gl5_average(|x| f(x, t), &c, h, 1);
                    }
                    acc
                })
                .collect();
            GridFunction::from_values(grid, values)
        }
    }
}

/// Time-integrated source information needed by the tail diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSummary {
    /// `Σ_j Δt_j |G^j_β|` per node.
    pub abs_time_integral: GridFunction,
    /// `Σ_j Δt_j ‖G^j‖_∞`.
    pub sup_time_integral: f64,
}

impl SourceSummary {
    pub fn empty(grid: &UniformGrid) -> Self {
        Self {
            abs_time_integral: GridFunction::zeros(grid),
            sup_time_integral: 0.0,
        }
    }

    pub fn accumulate(&mut self, g: &GridFunction, dt: f64) {
        let vals: Vec<f64> = self
            .abs_time_integral
            .values()
            .iter()
            .zip(g.values())
            .map(|(a, v)| a + dt * v.abs())
            .collect();
        self.abs_time_integral = GridFunction {
            grid: self.abs_time_integral.grid.clone(),
            values: vals,
        };
        self.sup_time_integral += dt * g.max_abs();
    }
}

/// Saved fields `U^j` on the knots of `time_grid`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    time_grid: TimeGrid,
    fields: Vec<GridFunction>,
    sources: SourceSummary,
}

impl Trajectory {
    pub fn new(time_grid: TimeGrid, fields: Vec<GridFunction>, sources: SourceSummary) -> Result<Self> {
        if fields.len() != time_grid.knots().len() {
            return Err(GpmeError::InvalidInput(format!(
                "{} fields for {} knots",
                fields.len(),
                time_grid.knots().len()
            )));
        }
        let grid = fields[0].grid();
        if fields.iter().any(|f| !f.grid().same_lattice(grid)) {
            return Err(GpmeError::InvalidInput("fields live on different grids".into()));
        }
        Ok(Self {
            time_grid,
            fields,
            sources,
        })
    }

    pub fn grid(&self) -> &UniformGrid {
        self.fields[0].grid()
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn fields(&self) -> &[GridFunction] {
        &self.fields
    }

    pub fn sources(&self) -> &SourceSummary {
        &self.sources
    }

    pub fn initial(&self) -> &GridFunction {
        &self.fields[0]
    }

    pub fn last(&self) -> &GridFunction {
        self.fields.last().expect("non-empty")
    }

    pub fn final_time(&self) -> f64 {
        self.time_grid.final_time()
    }

    /// The interpolant at time `t` as a grid function.
    pub fn field_at(&self, t: f64) -> Result<GridFunction> {
        let j = self.time_grid.locate(t)?;
        if j == 0 {
            return Ok(self.fields[0].clone());
        }
        let k = self.time_grid.knots();
        let theta = (t - k[j - 1]) / (k[j] - k[j - 1]);
        let a = &self.fields[j - 1];
        let b = &self.fields[j];
        Ok(GridFunction {
            grid: a.grid.clone(),
            values: a
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| x + theta * (y - x))
                .collect(),
        })
    }
}

/// Space-time interpolant: piecewise constant in space, linear in time.
pub fn eval_spacetime_interpolant(traj: &Trajectory, x: &[f64], t: f64) -> Result<f64> {
    let j = traj.time_grid.locate(t)?;
    if j == 0 {
        return Ok(traj.fields[0].value_at_point(x));
    }
    let k = traj.time_grid.knots();
    let theta = (t - k[j - 1]) / (k[j] - k[j - 1]);
    let a = traj.fields[j - 1].value_at_point(x);
    let b = traj.fields[j].value_at_point(x);
    Ok(a + theta * (b - a))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(h: f64, l: f64) -> UniformGrid {
        UniformGrid::new(1, h, l).unwrap()
    }

    #[test]
    fn constant_projects_to_constant() {
        let g = line(0.25, 2.0);
        let u = project_cell_average(&SpatialField::Constant(1.0), &g).unwrap();
        assert!(u.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn affine_projects_to_node_values() {
        let g = line(0.1, 1.0);
        let f = SpatialField::Affine { offset: 0.0, slope: vec![1.0] };
        let u = project_cell_average(&f, &g).unwrap();
        for (i, v) in u.values().iter().enumerate() {
            assert!((v - g.coord(i, 0)).abs() < 1e-15);
        }
    }

    #[test]
    fn half_line_indicator_cell_zero() {
        let g = line(1.0, 3.0);
        let f = SpatialField::Indicator { lower: vec![0.0], upper: vec![1e9], value: 1.0 };
        let u = project_cell_average(&f, &g).unwrap();
        assert_eq!(u.at(&[0]), 0.5);
        assert_eq!(u.at(&[1]), 1.0);
        assert_eq!(u.at(&[-1]), 0.0);
    }

    #[test]
    fn non_finite_samples_are_rejected() {
        let g = line(0.5, 1.0);
        let f = SpatialField::custom(|x| if x[0] > 0.3 { f64::NAN } else { 0.0 });
        assert!(matches!(project_cell_average(&f, &g), Err(GpmeError::InvalidInput(_))));
    }

    #[test]
    fn gaussian_closed_form_matches_quadrature() {
        let g = UniformGrid::new(2, 0.3, 1.5).unwrap();
        let f = SpatialField::Gaussian { amplitude: 2.0, center: vec![0.1, -0.2], sigma: 0.4 };
        let u = project_cell_average(&f, &g).unwrap();
        for i in 0..g.node_count() {
            let q = tensor_gl5_average(|x| f.eval(x), &g.node_point(i), 0.3, 6);
            assert!((u.values()[i] - q).abs() < 1e-10);
        }
    }

    #[test]
    fn barenblatt_m2_closed_form_matches_quadrature() {
        let f = SpatialField::Barenblatt { dim: 1, m: 2.0, time: 0.3, constant: 0.7 };
        let edge = barenblatt_support_radius(1, 2.0, 0.3, 0.7);
        for c in [-edge, -0.4, 0.0, 0.05, edge - 0.01] {
            let exact = f.cell_average(&[c], 0.1);
            let q = crate::quadrature::integrate_piecewise(
                |x| f.eval(&[x]),
                &[c - 0.05, (c - 0.05).max(-edge).min(c + 0.05), (c + 0.05).min(edge).max(c - 0.05), c + 0.05],
                1e-14,
                1e-14,
            )
            .unwrap()
                / 0.1;
            assert!((exact - q).abs() < 1e-12, "{c}: {exact} vs {q}");
        }
    }

    #[test]
    fn poisson_kernel_projection_has_unit_mass_in_limit() {
        let g = line(0.05, 200.0);
        let u = project_cell_average(&SpatialField::PoissonKernel { dim: 1, time: 1.0 }, &g).unwrap();
        let tail = 2.0 * (0.5 - (200.025f64).atan() / std::f64::consts::PI);
        assert!((u.mass() + tail - 1.0).abs() < 1e-12);
    }

    #[test]
    fn source_time_average() {
        let g = line(0.5, 1.0);
        let time = TimeGrid::new(vec![0.0, 1.0]).unwrap();
        let src = SpaceTimeField::Separable {
            space: SpatialField::Constant(1.0),
            time: TimeProfile::Polynomial(vec![0.0, 1.0]),
        };
        let gs = project_source(&src, &g, &time).unwrap();
        assert!(gs[0].values().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let cst = project_source(&SpaceTimeField::Constant(3.0), &g, &time).unwrap();
        assert!(cst[0].values().iter().all(|&v| v == 3.0));
        let zero = project_source(&SpaceTimeField::Zero, &g, &time).unwrap();
        assert!(zero[0].values().iter().all(|&v| v == 0.0));
        let custom = SpaceTimeField::Custom(Arc::new(|_x: &[f64], t: f64| t));
        let gc = project_source(&custom, &g, &time).unwrap();
        assert!(gc[0].values().iter().all(|&v| (v - 0.5).abs() < 1e-14));
    }

    #[test]
    fn norms() {
        let g = line(1.0, 2.0);
        let mut vals = vec![0.0; 5];
        vals[2] = 3.0;
        let u = GridFunction::from_values(&g, vals).unwrap();
        assert_eq!(discrete_lr_norm(&u, 1.0), 3.0);
        assert_eq!(discrete_lr_norm(&GridFunction::zeros(&g), 2.0), 0.0);
        let g2 = UniformGrid::with_half_nodes(0.5, vec![0]).unwrap();
        let one = GridFunction::from_values(&g2, vec![1.0]).unwrap();
        // Two unit cells of width 0.5.
        let g3 = UniformGrid::with_half_nodes(0.5, vec![1]).unwrap();
        let two = GridFunction::from_values(&g3, vec![1.0, 1.0, 0.0]).unwrap();
        assert!((discrete_lr_norm(&two, 2.0) - 1.0).abs() < 1e-15);
        assert_eq!(discrete_lr_norm(&one, f64::INFINITY), 1.0);
    }

    #[test]
    fn locate_uses_half_open_cells() {
        let g = line(1.0, 2.0);
        assert_eq!(g.locate(&[0.5]), g.index_of(&[0]));
        assert_eq!(g.locate(&[0.5000001]), g.index_of(&[1]));
        assert_eq!(g.locate(&[-0.5]), g.index_of(&[-1]));
        assert_eq!(g.locate(&[2.6]), None);
    }

    #[test]
    fn multi_index_roundtrip_is_lexicographic() {
        let g = UniformGrid::with_half_nodes(1.0, vec![1, 2]).unwrap();
        assert_eq!(g.multi_index(0), vec![-1, -2]);
        assert_eq!(g.multi_index(1), vec![-1, -1]);
        for i in 0..g.node_count() {
            assert_eq!(g.index_of(&g.multi_index(i)), Some(i));
        }
    }

    fn small_traj() -> Trajectory {
        let g = line(1.0, 2.0);
        let u0 = GridFunction::from_values(&g, vec![0.0, 1.0, 2.0, 1.0, 0.0]).unwrap();
        let u1 = GridFunction::from_values(&g, vec![0.0, 3.0, 4.0, 3.0, 0.0]).unwrap();
        Trajectory::new(TimeGrid::new(vec![0.0, 0.5]).unwrap(), vec![u0, u1], SourceSummary::empty(&g)).unwrap()
    }

    #[test]
    fn interpolant_knots_midpoints_and_outside() {
        let tr = small_traj();
        assert_eq!(eval_spacetime_interpolant(&tr, &[0.0], 0.0).unwrap(), 2.0);
        assert_eq!(eval_spacetime_interpolant(&tr, &[0.0], 0.5).unwrap(), 4.0);
        assert_eq!(eval_spacetime_interpolant(&tr, &[1.2], 0.25).unwrap(), 2.0);
        assert_eq!(eval_spacetime_interpolant(&tr, &[7.0], 0.25).unwrap(), 0.0);
        assert!(matches!(eval_spacetime_interpolant(&tr, &[0.0], 0.6), Err(GpmeError::Domain(_))));
    }

    #[test]
    fn csv_roundtrip_and_header() {
        let g = UniformGrid::with_half_nodes(0.5, vec![1, 1]).unwrap();
        let u = GridFunction::from_nodal(&g, |x| x[0] - 2.0 * x[1] + 0.1).unwrap();
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("beta_1,beta_2,value\n-1,-1,"));
        let back = GridFunction::read_csv(&g, std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, u);
    }
}
