//! Discrete diffusion operators `ℒʰ[ψ]_β = Σ_γ (ψ(x_β + z_γ) - ψ(x_β)) ω_γ`.
//!
//! Stencils come either from the finite-difference Laplacian or from a
//! symmetric radial Lévy measure, quadratured cell by cell. The module also
//! carries the moment-condition checkers used to certify uniform bounds on the
//! weights across spacings.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{GpmeError, Result};
use crate::grid::{unit_sphere_area, GridFunction, SpatialField, UniformGrid, PAR_MIN_LEN};
use crate::quadrature::{compensated_sum, integrate_piecewise};

/// A singular shell `coefficient · |r - radius|^{-exponent}` added to a
/// custom radial density. Integrable across the shell only for exponent < 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingularShell {
    pub radius: f64,
    pub exponent: f64,
    pub coefficient: f64,
}

/// Radial profile of a symmetric Lévy density.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureKind {
    /// `|z|^{-(N+α)}`.
    Fractional { alpha: f64 },
    /// `|z|^{-(N+β)}` on `|z| ≤ 1`, `|z|^{-(N+α)}` beyond.
    Split { beta: f64, alpha: f64 },
    /// Piecewise-linear table `(r, ρ)`, constant below the first radius and
    /// zero beyond the last, plus optional singular shells.
    Custom {
        points: Vec<(f64, f64)>,
        shells: Vec<SingularShell>,
    },
}

/// Nonnegative symmetric radial measure `dμ = scale · ρ(|z|) dz`, optionally
/// restricted to `|z| ≤ truncation`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSpec {
    pub kind: MeasureKind,
    pub dim: usize,
    pub scale: f64,
    pub truncation: Option<f64>,
}

/// How a measure is turned into lattice weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// `ω_γ = μ(z_γ + R_h)`.
    #[default]
    CellMass,
    /// `ω_γ = ρ(|z_γ|) h^N`.
    Midpoint,
}

/// Normalising constant of `-(-Δ)^{α/2}` for the density `|z|^{-(N+α)}`.
pub fn fractional_laplacian_constant(dim: usize, alpha: f64) -> f64 {
    let n = dim as f64;
    alpha * 2f64.powf(alpha - 1.0) * libm::tgamma((n + alpha) / 2.0)
        / (std::f64::consts::PI.powf(n / 2.0) * libm::tgamma(1.0 - alpha / 2.0))
}

impl MeasureSpec {
    pub fn fractional(dim: usize, alpha: f64) -> Result<Self> {
        Self::new(MeasureKind::Fractional { alpha }, dim, 1.0, None)
    }

    /// Density scaled so that `ℒ^μ = -(-Δ)^{α/2}`.
    pub fn fractional_laplacian(dim: usize, alpha: f64) -> Result<Self> {
        Self::new(
            MeasureKind::Fractional { alpha },
            dim,
            fractional_laplacian_constant(dim, alpha),
            None,
        )
    }

    pub fn new(kind: MeasureKind, dim: usize, scale: f64, truncation: Option<f64>) -> Result<Self> {
        let in_range = |x: f64| x > 0.0 && x < 2.0;
        match &kind {
            MeasureKind::Fractional { alpha } if !in_range(*alpha) => {
                return Err(GpmeError::config("alpha", format!("alpha must lie in (0, 2), got {alpha}")))
            }
            MeasureKind::Split { beta, alpha } if !in_range(*alpha) || !in_range(*beta) => {
                return Err(GpmeError::config(
                    "alpha",
                    format!("alpha and beta must lie in (0, 2), got {alpha}, {beta}"),
                ))
            }
            MeasureKind::Custom { points, shells } => {
                if points.is_empty() {
                    return Err(GpmeError::config("points", "custom density needs at least one point"));
                }
                for w in points.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        return Err(GpmeError::config("points", "radii must be strictly increasing"));
                    }
                }
                if points.iter().any(|p| !(p.0 > 0.0) || !(p.1 >= 0.0) || !p.1.is_finite()) {
                    return Err(GpmeError::config("points", "radii must be positive and densities finite, nonnegative"));
                }
                if shells.iter().any(|s| !(s.radius > 0.0) || !(s.coefficient >= 0.0) || !(s.exponent > 0.0)) {
                    return Err(GpmeError::config("shells", "shells need positive radius and exponent, nonnegative coefficient"));
                }
            }
            _ => {}
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(GpmeError::config("scale", "scale must be positive"));
        }
        if dim == 0 {
            return Err(GpmeError::config("dimension", "dimension must be positive"));
        }
        if let Some(t) = truncation {
            if !(t > 0.0) {
                return Err(GpmeError::config("truncation", "truncation radius must be positive"));
            }
        }
        Ok(Self {
            kind,
            dim,
            scale,
            truncation,
        })
    }

    /// Tail exponent α for power-law measures.
    pub fn tail_alpha(&self) -> Option<f64> {
        match self.kind {
            MeasureKind::Fractional { alpha } | MeasureKind::Split { alpha, .. } => Some(alpha),
            MeasureKind::Custom { .. } => None,
        }
    }

    /// Density `scale · ρ(r)` (per unit volume) at radius `r > 0`.
    pub fn density(&self, r: f64) -> f64 {
        if let Some(t) = self.truncation {
            if r > t {
                return 0.0;
            }
        }
        let n = self.dim as f64;
        let base = match &self.kind {
            MeasureKind::Fractional { alpha } => r.powf(-(n + alpha)),
            MeasureKind::Split { beta, alpha } => {
                if r <= 1.0 {
                    r.powf(-(n + beta))
                } else {
                    r.powf(-(n + alpha))
                }
            }
            MeasureKind::Custom { points, shells } => {
                let table = if r <= points[0].0 {
                    points[0].1
                } else if r > points[points.len() - 1].0 {
                    0.0
                } else {
                    let k = points.partition_point(|p| p.0 < r);
                    let (r0, p0) = points[k - 1];
                    let (r1, p1) = points[k];
                    p0 + (p1 - p0) * (r - r0) / (r1 - r0)
                };
                table
                    + shells
                        .iter()
                        .map(|s| s.coefficient * (r - s.radius).abs().powf(-s.exponent))
                        .sum::<f64>()
            }
        };
        self.scale * base
    }

    fn sphere(&self) -> f64 {
        unit_sphere_area(self.dim)
    }

    /// `∫_{a < |z| ≤ b} |z|^k dμ(z)`; `b` may be infinite. Returns `∞` when
    /// the moment diverges.
    pub fn radial_moment(&self, k: f64, a: f64, b: f64) -> Result<f64> {
        let b = self.truncation.map_or(b, |t| b.min(t));
        if !(b > a) {
            return Ok(0.0);
        }
        let power = |s: f64, lo: f64, hi: f64| -> f64 {
            let e = k - s;
            if hi.is_infinite() {
                if e < 0.0 {
                    -lo.powf(e) / e
                } else {
                    f64::INFINITY
                }
            } else if e.abs() < 1e-14 {
                (hi / lo).ln()
            } else {
                (hi.powf(e) - lo.powf(e)) / e
            }
        };
        let base = match &self.kind {
            MeasureKind::Fractional { alpha } => power(*alpha, a, b),
            MeasureKind::Split { beta, alpha } => {
                let mut acc = 0.0;
                if a < 1.0 {
                    acc += power(*beta, a, b.min(1.0));
                }
                if b > 1.0 {
                    acc += power(*alpha, a.max(1.0), b);
                }
                acc
            }
            MeasureKind::Custom { points, shells } => {
                let n = self.dim as f64;
                let hi = b.min(points[points.len() - 1].0);
                let mut acc = 0.0;
                if hi > a {
                    let mut bps = vec![a];
                    bps.extend(points.iter().map(|p| p.0).filter(|&r| r > a && r < hi));
                    bps.push(hi);
                    let table = MeasureSpec {
                        kind: MeasureKind::Custom {
                            points: points.clone(),
                            shells: Vec::new(),
                        },
                        dim: self.dim,
                        scale: 1.0,
                        truncation: None,
                    };
                    acc += integrate_piecewise(
                        |r| r.powf(k + n - 1.0) * table.density(r),
                        &bps,
                        1e-14,
                        1e-12,
                    )?;
                }
                for s in shells {
                    if s.radius > a && s.radius < b && s.exponent >= 1.0 {
                        return Ok(f64::INFINITY);
                    }
                    let upper = if b.is_infinite() {
                        if s.exponent > k + n {
                            (s.radius + 1.0) * 1e6
                        } else {
                            return Ok(f64::INFINITY);
                        }
                    } else {
                        b
                    };
                    let mut bps = vec![a];
                    if s.radius > a && s.radius < upper {
                        bps.push(s.radius);
                    }
                    bps.push(upper);
                    acc += integrate_piecewise(
                        |r| s.coefficient * r.powf(k + n - 1.0) * (r - s.radius).abs().powf(-s.exponent),
                        &bps,
                        1e-13,
                        1e-10,
                    )?;
                }
                acc
            }
        };
        Ok(self.scale * self.sphere() * base)
    }

    /// `μ(z_γ + R_h)` for a lattice offset `γ ≠ 0`.
    pub fn cell_mass(&self, gamma: &[i64], h: f64) -> Result<f64> {
        self.check_cell_integrable(gamma, h)?;
        if self.dim == 1 {
            let c = (gamma[0].abs() as f64) * h;
            return self.radial_moment(0.0, c - 0.5 * h, c + 0.5 * h).map(|m| 0.5 * m);
        }
        let center: Vec<f64> = gamma.iter().map(|&g| g as f64 * h).collect();
        let near = gamma.iter().map(|g| g.abs()).max().unwrap_or(0) <= 2;
        let sub = if near { 8 } else { 2 };
        let avg = crate::grid::tensor_gl5_average(
            |z| {
                let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                self.density(r)
            },
            &center,
            h,
            sub,
        );
        let mass = avg * h.powi(self.dim as i32);
        if !mass.is_finite() {
            return Err(GpmeError::NonIntegrable {
                cell: gamma.to_vec(),
                message: "quadrature produced a non-finite mass".into(),
            });
        }
        Ok(mass)
    }

    fn check_cell_integrable(&self, gamma: &[i64], h: f64) -> Result<()> {
        if let MeasureKind::Custom { shells, .. } = &self.kind {
            // Radial range covered by the cell.
            let mut rmin2 = 0.0;
            let mut rmax2 = 0.0;
            for &g in gamma {
                let lo = (g as f64 - 0.5) * h;
                let hi = (g as f64 + 0.5) * h;
                let near = if lo <= 0.0 && hi >= 0.0 { 0.0 } else { lo.abs().min(hi.abs()) };
                rmin2 += near * near;
                rmax2 += lo.abs().max(hi.abs()).powi(2);
            }
            let (rmin, rmax) = (rmin2.sqrt(), rmax2.sqrt());
            for s in shells {
                if s.exponent >= 1.0 && s.radius >= rmin && s.radius <= rmax {
                    return Err(GpmeError::NonIntegrable {
                        cell: gamma.to_vec(),
                        message: format!(
                            "shell at radius {} with exponent {} is not integrable",
                            s.radius, s.exponent
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Mass of a measure beyond the stored support of a stencil.
#[derive(Debug, Clone, PartialEq)]
pub struct TailRemainder {
    /// Radius beyond which the measure is not represented by stored offsets.
    pub inner_radius: f64,
    pub measure: MeasureSpec,
}

impl TailRemainder {
    /// `∫_{max(a, inner) < |z| ≤ b} |z|^k dμ`.
    pub fn moment(&self, k: f64, a: f64, b: f64) -> Result<f64> {
        self.measure.radial_moment(k, a.max(self.inner_radius), b)
    }
}

/// Symmetric nonnegative weights on lattice offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedStencil {
    dim: usize,
    h: f64,
    offsets: Vec<i64>,
    weights: Vec<f64>,
    total_weight: f64,
    tail: Option<TailRemainder>,
    tail_mass: f64,
}

impl WeightedStencil {
    /// Builds a stencil, validating symmetry, nonnegativity and `γ ≠ 0`.
    /// Entries are sorted lexicographically by offset.
    pub fn new(dim: usize, h: f64, mut entries: Vec<(Vec<i64>, f64)>) -> Result<Self> {
        if !(h > 0.0) {
            return Err(GpmeError::config("h", "spacing must be positive"));
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(GpmeError::InvalidInput(format!("duplicate offset {:?}", w[0].0)));
            }
        }
        for (g, w) in &entries {
            if g.len() != dim {
                return Err(GpmeError::InvalidInput(format!("offset {g:?} has wrong dimension")));
            }
            if g.iter().all(|&x| x == 0) {
                return Err(GpmeError::InvalidInput("offset 0 is not allowed".into()));
            }
            if !(w.is_finite() && *w >= 0.0) {
                return Err(GpmeError::InvalidInput(format!("weight {w} at {g:?} is not a finite nonnegative number")));
            }
            let neg: Vec<i64> = g.iter().map(|x| -x).collect();
            match entries.binary_search_by(|e| e.0.cmp(&neg)) {
                Ok(k) if entries[k].1 == *w => {}
                _ => {
                    return Err(GpmeError::InvalidInput(format!("stencil is not symmetric at offset {g:?}")));
                }
            }
        }
        let weights: Vec<f64> = entries.iter().map(|e| e.1).collect();
        let offsets: Vec<i64> = entries.into_iter().flat_map(|e| e.0).collect();
        Ok(Self {
            dim,
            h,
            total_weight: compensated_sum(weights.iter().copied()),
            offsets,
            weights,
            tail: None,
            tail_mass: 0.0,
        })
    }

    fn with_tail(mut self, tail: TailRemainder) -> Result<Self> {
        self.tail_mass = tail.moment(0.0, 0.0, f64::INFINITY)?;
        self.tail = Some(tail);
        Ok(self)
    }

    pub fn empty(dim: usize, h: f64) -> Self {
        Self::new(dim, h, Vec::new()).expect("empty stencil is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn offset(&self, k: usize) -> &[i64] {
        &self.offsets[k * self.dim..(k + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[i64], f64)> + '_ {
        (0..self.len()).map(move |k| (self.offset(k), self.weights[k]))
    }

    /// `|z_γ|` for entry `k`.
    pub fn offset_length(&self, k: usize) -> f64 {
        self.h * self.offset(k).iter().map(|&g| (g * g) as f64).sum::<f64>().sqrt()
    }

    /// `Σ ω_γ` over stored offsets.
    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Measure mass beyond the stored support (zero for finite stencils).
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn tail(&self) -> Option<&TailRemainder> {
        self.tail.as_ref()
    }

    /// Largest stored `|z_γ|`.
    pub fn radius(&self) -> f64 {
        (0..self.len()).map(|k| self.offset_length(k)).fold(0.0, f64::max)
    }

    /// Sum of two stencils on the same lattice; the tail of `self` is kept.
    pub fn merged(&self, other: &WeightedStencil) -> Result<Self> {
        if self.dim != other.dim || self.h != other.h {
            return Err(GpmeError::config("operator", "cannot merge stencils with different lattices"));
        }
        let mut map: std::collections::BTreeMap<Vec<i64>, f64> = std::collections::BTreeMap::new();
        for (g, w) in self.entries().chain(other.entries()) {
            *map.entry(g.to_vec()).or_insert(0.0) += w;
        }
        let merged = Self::new(self.dim, self.h, map.into_iter().collect())?;
        match self.tail.clone().or_else(|| other.tail.clone()) {
            Some(t) => merged.with_tail(t),
            None => Ok(merged),
        }
    }

    /// CSV `gamma_1,...,gamma_N,weight`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|i| format!("gamma_{i}")).collect();
        writeln!(out, "{},weight", header.join(","))?;
        for (g, w) in self.entries() {
            for x in g {
                write!(out, "{x},")?;
            }
            writeln!(out, "{}", crate::grid::format_float(w))?;
        }
        Ok(())
    }
}

/// `Δ_h`: offsets `±h e_i` with weight `1/h²`.
pub fn laplacian_stencil(grid: &UniformGrid) -> WeightedStencil {
    let dim = grid.dim();
    let w = 1.0 / (grid.h() * grid.h());
    let mut entries = Vec::with_capacity(2 * dim);
    for i in 0..dim {
        for s in [-1i64, 1] {
            let mut g = vec![0i64; dim];
            g[i] = s;
            entries.push((g, w));
        }
    }
    WeightedStencil::new(dim, grid.h(), entries).expect("Laplacian stencil is valid")
}

/// Lattice weights `ω_γ = μ(z_γ + R_h)` for `0 < |z_γ| ≤ support_radius`.
/// The mass beyond the stored offsets is kept analytically as a tail.
pub fn measure_stencil(measure: &MeasureSpec, grid: &UniformGrid, support_radius: f64) -> Result<WeightedStencil> {
    measure_stencil_with_rule(measure, grid, support_radius, WeightRule::CellMass)
}

pub fn measure_stencil_with_rule(
    measure: &MeasureSpec,
    grid: &UniformGrid,
    support_radius: f64,
    rule: WeightRule,
) -> Result<WeightedStencil> {
    let h = grid.h();
    let dim = grid.dim();
    if measure.dim != dim {
        return Err(GpmeError::config("operator.measure", "measure dimension differs from grid dimension"));
    }
    if !(support_radius >= h) {
        return Err(GpmeError::config(
            "operator.support_radius",
            format!("support radius {support_radius} must be at least h = {h}"),
        ));
    }
    let kmax = (support_radius / h + 1e-9).floor() as i64;
    let mut offsets = Vec::new();
    let mut gamma = vec![-kmax; dim];
    loop {
        let r2: i64 = gamma.iter().map(|g| g * g).sum();
        if r2 > 0 && (r2 as f64).sqrt() <= kmax as f64 + 1e-9 {
            offsets.push(gamma.clone());
        }
        let mut a = dim;
        loop {
            if a == 0 {
                break;
            }
            a -= 1;
            if gamma[a] < kmax {
                gamma[a] += 1;
                for g in gamma.iter_mut().skip(a + 1) {
                    *g = -kmax;
                }
                a = usize::MAX;
                break;
            }
        }
        if a != usize::MAX {
            break;
        }
    }
    let weights: Vec<Result<f64>> = offsets
        .par_iter()
        .map(|g| match rule {
            WeightRule::CellMass => measure.cell_mass(g, h),
            WeightRule::Midpoint => {
                measure.check_cell_integrable(g, h)?;
                let r = h * g.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
                Ok(measure.density(r) * h.powi(dim as i32))
            }
        })
        .collect();
    let mut entries = Vec::with_capacity(offsets.len());
    let mut zero_positive = Vec::new();
    for (g, w) in offsets.into_iter().zip(weights) {
        let w = w?;
        if w > 0.0 {
            entries.push((g, w));
        } else {
            zero_positive.push(g);
        }
    }
    // Symmetrise exactly: in N ≥ 2 the per-cell quadrature of γ and -γ sees
    // mirrored nodes and may differ in the last bits.
    let lookup: std::collections::BTreeMap<Vec<i64>, f64> = entries.iter().cloned().collect();
    let entries: Vec<(Vec<i64>, f64)> = entries
        .into_iter()
        .map(|(g, w)| {
            let neg: Vec<i64> = g.iter().map(|x| -x).collect();
            let wn = lookup.get(&neg).copied().unwrap_or(w);
            (g, 0.5 * (w + wn))
        })
        .collect();
    let stencil = WeightedStencil::new(dim, h, entries)?;
    let inner = if dim == 1 {
        (kmax as f64 + 0.5) * h
    } else {
        support_radius + 0.5 * h
    };
    stencil.with_tail(TailRemainder {
        inner_radius: inner,
        measure: measure.clone(),
    })
}

/// `c Δ + ℒ^μ` with `c ∈ {0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    pub local: bool,
    pub measure: Option<MeasureSpec>,
    /// Stored stencil radius; defaults to the box diameter.
    pub support_radius: Option<f64>,
    pub weight_rule: WeightRule,
}

impl OperatorSpec {
    pub fn laplacian() -> Self {
        Self {
            local: true,
            measure: None,
            support_radius: None,
            weight_rule: WeightRule::CellMass,
        }
    }

    pub fn nonlocal(measure: MeasureSpec) -> Self {
        Self {
            local: false,
            measure: Some(measure),
            support_radius: None,
            weight_rule: WeightRule::CellMass,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !self.local && self.measure.is_none() {
            return Err(GpmeError::config(
                "problem.operator",
                "operator needs the local part, a measure, or both",
            ));
        }
        if let Some(m) = &self.measure {
            if m.dim != dim {
                return Err(GpmeError::config("problem.operator.measure", "measure dimension differs from problem dimension"));
            }
        }
        Ok(())
    }

    /// Nonlocal stencil on `grid` (none for a purely local operator).
    pub fn nonlocal_stencil(&self, grid: &UniformGrid) -> Result<Option<WeightedStencil>> {
        let Some(measure) = &self.measure else {
            return Ok(None);
        };
        let diameter = 2.0
            * (0..grid.dim())
                .map(|a| grid.half_extent(a).powi(2))
                .sum::<f64>()
                .sqrt();
        let radius = self.support_radius.unwrap_or(diameter).max(grid.h());
        measure_stencil_with_rule(measure, grid, radius, self.weight_rule).map(Some)
    }

    pub fn build(&self, grid: &UniformGrid) -> Result<DiscreteOperator> {
        self.validate(grid.dim())?;
        let stencil = self.nonlocal_stencil(grid)?;
        DiscreteOperator::new(grid, self.local, stencil.as_ref())
    }

    /// Threshold `t` such that tail control in the limit is asserted for
    /// Hölder exponents `ℓ > t`.
    pub fn holder_threshold(&self, dim: usize) -> f64 {
        let n = dim as f64;
        let local = if self.local { (n - 2.0).max(0.0) / n } else { 0.0 };
        let nonlocal = match &self.measure {
            None => 0.0,
            Some(m) => match (m.tail_alpha(), m.truncation) {
                (Some(alpha), None) => (n - alpha).max(0.0) / n,
                // Compactly supported measures satisfy the scaled tail
                // condition for every α < 2.
                _ => (n - 2.0).max(0.0) / n,
            },
        };
        local.max(nonlocal)
    }
}

/// `c Δ_h + ℒ^{ν_h}` on a fixed box with zero extension.
pub struct DiscreteOperator {
    grid: UniformGrid,
    stencil: WeightedStencil,
    /// Total weight including the tail: `Σ ω + tail`.
    diag: f64,
    /// Weight of offsets leaving the box (plus tail), per node.
    outside: Vec<f64>,
    plan: ApplyPlan,
}

enum ApplyPlan {
    Direct {
        /// Linear-index shift per stencil entry.
        deltas: Vec<isize>,
    },
    Fft {
        size: usize,
        kernel: Vec<Complex64>,
        forward: Arc<dyn Fft<f64>>,
        inverse: Arc<dyn Fft<f64>>,
    },
}

impl std::fmt::Debug for DiscreteOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteOperator")
            .field("nodes", &self.grid.node_count())
            .field("offsets", &self.stencil.len())
            .field("diag", &self.diag)
            .field("fft", &matches!(self.plan, ApplyPlan::Fft { .. }))
            .finish()
    }
}

impl DiscreteOperator {
    /// Combines the local part (`local = true` adds `Δ_h`) with an optional
    /// nonlocal stencil.
    pub fn new(grid: &UniformGrid, local: bool, stencil: Option<&WeightedStencil>) -> Result<Self> {
        let mut combined = if local {
            laplacian_stencil(grid)
        } else {
            WeightedStencil::empty(grid.dim(), grid.h())
        };
        if let Some(s) = stencil {
            if s.h() != grid.h() || s.dim() != grid.dim() {
                return Err(GpmeError::config(
                    "operator",
                    format!("stencil spacing {} does not match grid spacing {}", s.h(), grid.h()),
                ));
            }
            combined = s.merged(&combined)?;
        }
        Ok(Self::from_stencil(grid, combined))
    }

    fn from_stencil(grid: &UniformGrid, stencil: WeightedStencil) -> Self {
        let dim = grid.dim();
        let n = grid.node_count();
        let diag = stencil.total_weight() + stencil.tail_mass();
        let use_fft = dim == 1 && stencil.len() > 64 && n > 64;
        let plan = if use_fft {
            let reach = grid.axis_len(0) - 1;
            let size = (n + reach).next_power_of_two();
            let mut kernel = vec![Complex64::new(0.0, 0.0); size];
            for (g, w) in stencil.entries() {
                let k = g[0];
                if k.unsigned_abs() as usize <= reach {
                    let pos = if k >= 0 { k as usize } else { size - k.unsigned_abs() as usize };
                    kernel[pos].re += w;
                }
            }
            let mut planner = FftPlanner::new();
            let forward = planner.plan_fft_forward(size);
            let inverse = planner.plan_fft_inverse(size);
            forward.process(&mut kernel);
            ApplyPlan::Fft {
                size,
                kernel,
                forward,
                inverse,
            }
        } else {
            let strides = grid.strides();
            let deltas = stencil
                .entries()
                .map(|(g, _)| g.iter().zip(strides).map(|(&a, &s)| a as isize * s as isize).sum())
                .collect();
            ApplyPlan::Direct { deltas }
        };
        let outside = Self::outside_weights(grid, &stencil);
        Self {
            grid: grid.clone(),
            stencil,
            diag,
            outside,
            plan,
        }
    }

    fn outside_weights(grid: &UniformGrid, stencil: &WeightedStencil) -> Vec<f64> {
        let n = grid.node_count();
        let tail = stencil.tail_mass();
        if grid.dim() == 1 {
            // Prefix sums over the (sorted) offsets.
            let len = n as i64;
            let offs: Vec<i64> = stencil.entries().map(|(g, _)| g[0]).collect();
            let mut prefix = vec![0.0; offs.len() + 1];
            for (k, w) in stencil.weights().iter().enumerate() {
                prefix[k + 1] = prefix[k] + w;
            }
            (0..n)
                .map(|i| {
                    let i = i as i64;
                    let lo = offs.partition_point(|&g| g < -i);
                    let hi = offs.partition_point(|&g| g <= len - 1 - i);
                    let outside_sum = prefix[lo] + (prefix[offs.len()] - prefix[hi]);
                    outside_sum + tail
                })
                .collect()
        } else {
            (0..n)
                .into_par_iter()
                .with_min_len(PAR_MIN_LEN)
                .map(|i| {
                    let beta = grid.multi_index(i);
                    let mut acc = 0.0;
                    let mut nb = vec![0i64; beta.len()];
                    for (g, w) in stencil.entries() {
                        for a in 0..beta.len() {
                            nb[a] = beta[a] + g[a];
                        }
                        if !grid.contains(&nb) {
                            acc += w;
                        }
                    }
                    acc + tail
                })
                .collect()
        }
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    /// Combined stencil (local part merged in).
    pub fn stencil(&self) -> &WeightedStencil {
        &self.stencil
    }

    /// `W = Σ_γ ω_γ` including the tail beyond the stored support.
    pub fn diagonal_weight(&self) -> f64 {
        self.diag
    }

    /// Weight of offsets from node `i` that leave the box.
    pub fn outside_weight(&self) -> &[f64] {
        &self.outside
    }

    /// `out_β = Σ_γ ω_γ u(x_β + z_γ)` with zero extension.
    pub fn neighbor_sum(&self, u: &[f64], out: &mut [f64]) {
        match &self.plan {
            ApplyPlan::Direct { deltas } => self.direct(u, out, deltas, |acc, _ub| acc),
            ApplyPlan::Fft { .. } => self.fft_conv(u, out),
        }
    }

    /// `out = ℒʰ u` with zero extension.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        match &self.plan {
            ApplyPlan::Direct { deltas } => {
                // Σ over inside neighbours of (u_nb - u_β) ω, then outside part.
                let n = u.len();
                let dim = self.grid.dim();
                let weights = self.stencil.weights();
                let outside = &self.outside;
                let grid = &self.grid;
                let stencil = &self.stencil;
                out.par_iter_mut()
                    .with_min_len(PAR_MIN_LEN)
                    .enumerate()
                    .for_each(|(i, o)| {
                        let ub = u[i];
                        let mut acc = 0.0;
                        if dim == 1 {
                            for (k, &d) in deltas.iter().enumerate() {
                                let j = i as isize + d;
                                if j >= 0 && (j as usize) < n {
                                    acc += (u[j as usize] - ub) * weights[k];
                                }
                            }
                        } else {
                            let beta = grid.multi_index(i);
                            for (k, &d) in deltas.iter().enumerate() {
                                let g = stencil.offset(k);
                                let inside = beta
                                    .iter()
                                    .zip(g)
                                    .zip(grid.half_nodes())
                                    .all(|((b, gg), &kk)| (b + gg).unsigned_abs() as usize <= kk);
                                if inside {
                                    acc += (u[(i as isize + d) as usize] - ub) * weights[k];
                                }
                            }
                        }
                        *o = acc - outside[i] * ub;
                    });
            }
            ApplyPlan::Fft { .. } => {
                self.fft_conv(u, out);
                let diag = self.diag;
                out.par_iter_mut()
                    .with_min_len(PAR_MIN_LEN)
                    .zip(u.par_iter())
                    .for_each(|(o, &ub)| *o -= diag * ub);
            }
        }
    }

    fn direct<F: Fn(f64, f64) -> f64 + Sync>(&self, u: &[f64], out: &mut [f64], deltas: &[isize], finish: F) {
        let n = u.len();
        let dim = self.grid.dim();
        let weights = self.stencil.weights();
        let grid = &self.grid;
        let stencil = &self.stencil;
        out.par_iter_mut()
            .with_min_len(PAR_MIN_LEN)
            .enumerate()
            .for_each(|(i, o)| {
                let mut acc = 0.0;
                if dim == 1 {
                    for (k, &d) in deltas.iter().enumerate() {
                        let j = i as isize + d;
                        if j >= 0 && (j as usize) < n {
                            acc += u[j as usize] * weights[k];
                        }
                    }
                } else {
                    let beta = grid.multi_index(i);
                    for (k, &d) in deltas.iter().enumerate() {
                        let g = stencil.offset(k);
                        let inside = beta
                            .iter()
                            .zip(g)
                            .zip(grid.half_nodes())
                            .all(|((b, gg), &kk)| (b + gg).unsigned_abs() as usize <= kk);
                        if inside {
                            acc += u[(i as isize + d) as usize] * weights[k];
                        }
                    }
                }
                *o = finish(acc, u[i]);
            });
    }

    fn fft_conv(&self, u: &[f64], out: &mut [f64]) {
        let ApplyPlan::Fft {
            size,
            kernel,
            forward,
            inverse,
        } = &self.plan
        else {
            unreachable!("fft_conv called on a direct plan")
        };
        let mut buf = vec![Complex64::new(0.0, 0.0); *size];
        for (b, &v) in buf.iter_mut().zip(u) {
            b.re = v;
        }
        forward.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(kernel) {
            *b *= k;
        }
        inverse.process(&mut buf);
        let scale = 1.0 / *size as f64;
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
    }

    /// `ℒʰ U` as a grid function.
    pub fn apply_to(&self, u: &GridFunction) -> Result<GridFunction> {
        if !u.grid().same_lattice(&self.grid) {
            return Err(GpmeError::config("operator", "grid function lives on a different lattice"));
        }
        let mut out = vec![0.0; u.len()];
        self.apply(u.values(), &mut out);
        GridFunction::from_values(&self.grid, out)
    }
}

/// `c Δ_h U + Σ_γ (U(x_β + z_γ) - U(x_β)) ω_γ` with zero extension.
pub fn apply_stencil(stencil: &WeightedStencil, local: bool, u: &GridFunction) -> Result<GridFunction> {
    if stencil.h() != u.grid().h() {
        return Err(GpmeError::config(
            "operator",
            format!("stencil spacing {} does not match grid spacing {}", stencil.h(), u.grid().h()),
        ));
    }
    DiscreteOperator::new(u.grid(), local, Some(stencil))?.apply_to(u)
}

/// Which weight assumption a moment report targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentVariant {
    /// Near second moment plus far mass.
    A,
    /// Near second moment plus far first moment.
    APrime,
    /// Scaled tail quantities with exponent α, for each radius.
    ADoublePrime { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusValue {
    #[serde(rename = "R")]
    pub radius: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    /// `Σ_{h ≤ |z| ≤ 1} |z|² ω`.
    pub near_second_moment: f64,
    /// `Σ_{|z| > 1} ω`, tail included.
    pub far_mass: f64,
    /// `Σ_{|z| > 1} |z| ω`, tail included (`null` when it diverges).
    pub far_first_moment: Option<f64>,
    /// `R^{α-2} Σ_{1<|z|≤R} |z|² ω + R^α Σ_{|z|>R} ω` per radius.
    pub a_pp_values: Vec<RadiusValue>,
    pub a_pp_max: Option<f64>,
    /// Analytic mass beyond the stored offsets.
    pub tail_remainder_mass: f64,
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Moment sums of a stencil; tail mass beyond the stored support is added
/// from the generating measure.
pub fn check_moments(stencil: &WeightedStencil, variant: MomentVariant, radii: &[f64]) -> Result<MomentReport> {
    let h = stencil.h();
    let lengths: Vec<f64> = (0..stencil.len()).map(|k| stencil.offset_length(k)).collect();
    let w = stencil.weights();
    let sum_where = |pred: &dyn Fn(f64) -> bool, pow: i32| {
        compensated_sum(
            lengths
                .iter()
                .zip(w)
                .filter(|(r, _)| pred(**r))
                .map(|(r, w)| r.powi(pow) * w),
        )
    };
    let tail = |k: f64, a: f64, b: f64| -> Result<f64> {
        match stencil.tail() {
            Some(t) => t.moment(k, a, b),
            None => Ok(0.0),
        }
    };
    let eps = 1e-12 * h;
    let near = sum_where(&|r| r >= h - eps && r <= 1.0, 2) + tail(2.0, 0.0, 1.0)?;
    let far_mass = sum_where(&|r| r > 1.0, 0) + tail(0.0, 1.0, f64::INFINITY)?;
    let far_first = sum_where(&|r| r > 1.0, 1) + tail(1.0, 1.0, f64::INFINITY)?;
    let mut a_pp_values = Vec::new();
    if let MomentVariant::ADoublePrime { alpha } = variant {
        if radii.is_empty() {
            return Err(GpmeError::config("radii", "radius list must be nonempty"));
        }
        for &big_r in radii {
            if !(big_r > 1.0) {
                return Err(GpmeError::config("radii", format!("radii must exceed 1, got {big_r}")));
            }
            let inner = sum_where(&|r| r > 1.0 && r <= big_r, 2) + tail(2.0, 1.0, big_r)?;
            let outer = sum_where(&|r| r > big_r, 0) + tail(0.0, big_r, f64::INFINITY)?;
            a_pp_values.push(RadiusValue {
                radius: big_r,
                value: big_r.powf(alpha - 2.0) * inner + big_r.powf(alpha) * outer,
            });
        }
    }
    let a_pp_max = a_pp_values.iter().map(|v| v.value).reduce(f64::max);
    Ok(MomentReport {
        near_second_moment: near,
        far_mass,
        far_first_moment: finite_or_none(far_first),
        a_pp_values,
        a_pp_max,
        tail_remainder_mass: stencil.tail_mass(),
    })
}

/// Which test function to feed into `ℒ^{ν_h}[ψ](0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunctionVariant {
    /// `ψ = |x|² - 1` on `|x| ≤ 1`, `2(|x| - 1)` outside.
    APrime,
    /// `ψ = R^{α-2}|x|² - R^α` on `|x| ≤ R`, zero outside.
    ADoublePrime { alpha: f64, radius: f64 },
}

/// `ℒ^{ν_h}[ψ](0)` for the moment test functions. The value bounds
/// `Σ min(|z|², |z|) ω` (first variant) or the scaled tail quantity at `R`
/// (second variant) from above.
pub fn testfunction_moment_bound(stencil: &WeightedStencil, variant: TestFunctionVariant) -> Result<f64> {
    let lengths = (0..stencil.len()).map(|k| stencil.offset_length(k));
    let tail = |k: f64, a: f64, b: f64| -> Result<f64> {
        match stencil.tail() {
            Some(t) => t.moment(k, a, b),
            None => Ok(0.0),
        }
    };
    match variant {
        TestFunctionVariant::APrime => {
            // ψ(z) - ψ(0) = |z|² inside the unit ball, 2|z| - 1 outside.
            let inc = |r: f64| if r <= 1.0 { r * r } else { 2.0 * r - 1.0 };
            let stored = compensated_sum(lengths.zip(stencil.weights()).map(|(r, w)| inc(r) * w));
            let rem = tail(2.0, 0.0, 1.0)? + 2.0 * tail(1.0, 1.0, f64::INFINITY)? - tail(0.0, 1.0, f64::INFINITY)?;
            Ok(stored + rem)
        }
        TestFunctionVariant::ADoublePrime { alpha, radius } => {
            let inc = |r: f64| {
                if r <= radius {
                    radius.powf(alpha - 2.0) * r * r
                } else {
                    radius.powf(alpha)
                }
            };
            let stored = compensated_sum(lengths.zip(stencil.weights()).map(|(r, w)| inc(r) * w));
            let rem = radius.powf(alpha - 2.0) * tail(2.0, 0.0, radius)?
                + radius.powf(alpha) * tail(0.0, radius, f64::INFINITY)?;
            Ok(stored + rem)
        }
    }
}

/// Continuous operator `c Δ + ℒ^μ` applied to a Gaussian test function.
#[derive(Debug, Clone)]
pub struct ReferenceOperator {
    pub local: bool,
    pub measure: Option<MeasureSpec>,
}

impl ReferenceOperator {
    /// Evaluates `𝔏[ψ](x)`. Only Gaussian descriptors are supported; the
    /// nonlocal part uses adaptive radial quadrature of the second
    /// difference and is available in one dimension.
    pub fn eval(&self, psi: &SpatialField, x: &[f64]) -> Result<f64> {
        let SpatialField::Gaussian { center, sigma, .. } = psi else {
            return Err(GpmeError::InvalidInput("reference operator needs a Gaussian test function".into()));
        };
        let dim = x.len();
        let s2 = sigma * sigma;
        let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum();
        let value = psi.eval(x);
        let mut out = 0.0;
        if self.local {
            out += value * (r2 / (s2 * s2) - dim as f64 / s2);
        }
        if let Some(mu) = &self.measure {
            if dim != 1 {
                return Err(GpmeError::InvalidInput(
                    "nonlocal reference is implemented in one dimension".into(),
                ));
            }
            let u = (x[0] - center[0]) / sigma;
            let d2 = value * (u * u - 1.0) / s2;
            let d4 = value * (u.powi(4) - 6.0 * u * u + 3.0) / (s2 * s2);
            let small = 1e-3 * sigma;
            // Taylor expansion of the second difference on (0, small].
            let taylor = |r: f64| d2 * r * r + d4 * r.powi(4) / 12.0;
            let f = |r: f64| {
                let second = if r <= small {
                    taylor(r)
                } else {
                    psi.eval(&[x[0] + r]) + psi.eval(&[x[0] - r]) - 2.0 * value
                };
                second * mu.density(r)
            };
            let reach = x[0].abs() + center[0].abs() + 40.0 * sigma;
            let mut bps = vec![0.0, small, *sigma];
            if let MeasureKind::Split { .. } = mu.kind {
                bps.push(1.0);
            }
            if let Some(t) = mu.truncation {
                bps.push(t);
            }
            bps.push(reach);
            bps.retain(|&b| b <= reach);
            bps.sort_by(f64::total_cmp);
            bps.dedup();
            let body = integrate_piecewise(f, &bps, 1e-13, 1e-11)?;
            // Far field: ψ(x ± r) is negligible, only the -2ψ(x) term remains.
            let far = mu.radial_moment(0.0, reach, f64::INFINITY)?;
            out += body - value * far;
        }
        Ok(out)
    }
}

/// Discrete `L¹` distance between `ℒʰψ` at the nodes and the reference
/// operator applied to `ψ`.
pub fn consistency_error(
    stencil: &WeightedStencil,
    local: bool,
    psi: &SpatialField,
    reference: &ReferenceOperator,
    grid: &UniformGrid,
) -> Result<f64> {
    let u = GridFunction::from_nodal(grid, |x| psi.eval(x))?;
    let op = DiscreteOperator::new(grid, local, Some(stencil))?;
    let lu = op.apply_to(&u)?;
    let refs: Vec<Result<f64>> = (0..grid.node_count())
        .into_par_iter()
        .with_min_len(64)
        .map(|i| reference.eval(psi, &grid.node_point(i)))
        .collect();
    let mut diffs = Vec::with_capacity(refs.len());
    for (r, l) in refs.into_iter().zip(lu.values()) {
        diffs.push((l - r?).abs());
    }
    Ok(grid.cell_volume() * compensated_sum(diffs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(h: f64, l: f64) -> UniformGrid {
        UniformGrid::new(1, h, l).unwrap()
    }

    #[test]
    fn laplacian_weights_and_near_moment() {
        let s = laplacian_stencil(&line(0.5, 2.0));
        assert_eq!(s.len(), 2);
        assert_eq!(s.offset(0), &[-1]);
        assert_eq!(s.weights(), &[4.0, 4.0]);
        let g2 = UniformGrid::new(2, 0.25, 1.0).unwrap();
        let rep = check_moments(&laplacian_stencil(&g2), MomentVariant::A, &[]).unwrap();
        assert!((rep.near_second_moment - 4.0).abs() < 1e-14);
        assert_eq!(rep.far_mass, 0.0);
    }

    #[test]
    fn laplacian_exact_on_quadratics() {
        let g = line(0.5, 3.0);
        let u = GridFunction::from_nodal(&g, |x| x[0] * x[0]).unwrap();
        let lu = apply_stencil(&laplacian_stencil(&g), false, &u).unwrap();
        for i in 1..g.node_count() - 1 {
            assert!((lu.values()[i] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fractional_cell_mass_closed_form() {
        let mu = MeasureSpec::fractional(1, 1.0).unwrap();
        assert!((mu.cell_mass(&[1], 1.0).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!((mu.cell_mass(&[-1], 1.0).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        let s = measure_stencil(&mu, &line(1.0, 4.0), 8.0).unwrap();
        let w1 = s.entries().find(|(g, _)| g == &[1]).unwrap().1;
        assert!((w1 - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn stencils_are_symmetric_and_nonnegative() {
        let g = UniformGrid::new(2, 0.5, 2.0).unwrap();
        let mu = MeasureSpec::fractional(2, 0.7).unwrap();
        let s = measure_stencil(&mu, &g, 2.0).unwrap();
        for (gamma, w) in s.entries() {
            assert!(w >= 0.0);
            let neg: Vec<i64> = gamma.iter().map(|x| -x).collect();
            let wn = s.entries().find(|(g2, _)| *g2 == neg.as_slice()).unwrap().1;
            assert_eq!(w, wn);
        }
    }

    #[test]
    fn far_mass_below_cell_containment_bound() {
        let mu = MeasureSpec::fractional(1, 1.0).unwrap();
        let h = 0.125;
        let s = measure_stencil(&mu, &line(h, 8.0), 16.0).unwrap();
        for big_r in [1.0, 2.5, 4.0, 10.0] {
            let stored: f64 = s
                .entries()
                .filter(|(g, _)| (g[0].abs() as f64) * h > big_r)
                .map(|(_, w)| w)
                .sum();
            let bound = 2.0 / (big_r - h / 2.0);
            assert!(stored <= bound, "{big_r}: {stored} > {bound}");
        }
    }

    #[test]
    fn single_offset_direct_sum() {
        let g = UniformGrid::with_half_nodes(1.0, vec![1]).unwrap();
        let s = WeightedStencil::new(1, 1.0, vec![(vec![1], 1.0), (vec![-1], 1.0)]).unwrap();
        let u = GridFunction::from_values(&g, vec![0.0, 1.0, 0.0]).unwrap();
        let lu = apply_stencil(&s, false, &u).unwrap();
        assert_eq!(lu.values(), &[1.0, -2.0, 1.0]);
    }

    #[test]
    fn constants_vanish_away_from_the_boundary() {
        let g = line(0.1, 3.0);
        let s = WeightedStencil::new(
            1,
            0.1,
            (1..=5).flat_map(|k| [(vec![k], 1.0 / k as f64), (vec![-k], 1.0 / k as f64)]).collect(),
        )
        .unwrap();
        let u = GridFunction::from_values(&g, vec![2.5; g.node_count()]).unwrap();
        let lu = apply_stencil(&s, true, &u).unwrap();
        for i in 5..g.node_count() - 5 {
            assert_eq!(lu.values()[i], 0.0);
        }
        assert!(lu.values()[0] < 0.0);
    }

    #[test]
    fn spacing_mismatch_is_a_config_error() {
        let s = laplacian_stencil(&line(0.5, 1.0));
        let u = GridFunction::zeros(&line(0.25, 1.0));
        assert!(matches!(apply_stencil(&s, false, &u), Err(GpmeError::Config { .. })));
    }

    #[test]
    fn asymmetric_stencil_rejected() {
        let r = WeightedStencil::new(1, 1.0, vec![(vec![1], 1.0), (vec![-1], 2.0)]);
        assert!(r.is_err());
        assert!(WeightedStencil::new(1, 1.0, vec![(vec![1], 1.0)]).is_err());
        assert!(WeightedStencil::new(1, 1.0, vec![(vec![0], 1.0)]).is_err());
    }

    #[test]
    fn fft_and_direct_paths_agree() {
        let g = line(0.05, 5.0);
        let mu = MeasureSpec::fractional_laplacian(1, 0.8).unwrap();
        let s = measure_stencil(&mu, &g, 10.0).unwrap();
        let op = DiscreteOperator::new(&g, true, Some(&s)).unwrap();
        assert!(format!("{op:?}").contains("fft: true"));
        let u: Vec<f64> = (0..g.node_count()).map(|i| ((i as f64) * 0.37).sin() + 0.2).collect();
        let mut fast = vec![0.0; u.len()];
        op.apply(&u, &mut fast);
        let direct = DiscreteOperator::from_stencil_direct(&g, op.stencil().clone());
        let mut slow = vec![0.0; u.len()];
        direct.apply(&u, &mut slow);
        let scale = op.diagonal_weight();
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn a_double_prime_flat_for_fractional() {
        let mu = MeasureSpec::fractional(1, 1.0).unwrap();
        let s = measure_stencil(&mu, &line(0.125, 4.0), 32.0).unwrap();
        let rep = check_moments(&s, MomentVariant::ADoublePrime { alpha: 1.0 }, &[2.0, 4.0, 8.0, 16.0]).unwrap();
        // Continuum value 4 - 2/R.
        for v in &rep.a_pp_values {
            let cont = 4.0 - 2.0 / v.radius;
            assert!((v.value - cont).abs() < 0.1, "{v:?}");
        }
        assert!(rep.far_first_moment.is_none());
    }

    #[test]
    fn testfunction_bounds() {
        let g = UniformGrid::new(3, 0.2, 1.0).unwrap();
        let lap = laplacian_stencil(&g);
        let v = testfunction_moment_bound(&lap, TestFunctionVariant::APrime).unwrap();
        assert!((v - 6.0).abs() < 1e-12);
        let empty = WeightedStencil::empty(1, 0.1);
        assert_eq!(testfunction_moment_bound(&empty, TestFunctionVariant::APrime).unwrap(), 0.0);
        let rep = check_moments(&empty, MomentVariant::APrime, &[]).unwrap();
        assert_eq!(rep.near_second_moment + rep.far_mass + rep.far_first_moment.unwrap(), 0.0);
    }

    #[test]
    fn non_integrable_shell_reports_cell() {
        let mu = MeasureSpec::new(
            MeasureKind::Custom {
                points: vec![(0.1, 1.0), (3.0, 1.0)],
                shells: vec![SingularShell { radius: 1.3, exponent: 1.5, coefficient: 1.0 }],
            },
            1,
            1.0,
            None,
        )
        .unwrap();
        match measure_stencil(&mu, &line(0.5, 2.0), 2.0) {
            Err(GpmeError::NonIntegrable { cell, .. }) => assert_eq!(cell.iter().map(|x| x.abs()).max(), Some(3)),
            other => panic!("expected non-integrable error, got {other:?}"),
        }
    }

    #[test]
    fn split_measure_moments_match_closed_form() {
        let mu = MeasureSpec::new(MeasureKind::Split { beta: 0.5, alpha: 1.5 }, 1, 1.0, None).unwrap();
        // 2 ∫_1^R z² z^{-2.5} dz = 4(√R - 1).
        let v = mu.radial_moment(2.0, 1.0, 4.0).unwrap();
        assert!((v - 4.0).abs() < 1e-12);
        // 2 ∫_R^∞ z^{-2.5} = (4/3) R^{-1.5}.
        let t = mu.radial_moment(0.0, 4.0, f64::INFINITY).unwrap();
        assert!((t - 4.0 / 3.0 / 8.0).abs() < 1e-14);
    }

    #[test]
    fn normalised_constant_one_dimensional_alpha_one() {
        assert!((fractional_laplacian_constant(1, 1.0) - 1.0 / std::f64::consts::PI).abs() < 1e-15);
    }
}

#[cfg(test)]
impl DiscreteOperator {
    fn from_stencil_direct(grid: &UniformGrid, stencil: WeightedStencil) -> Self {
        let strides = grid.strides();
        let deltas = stencil
            .entries()
            .map(|(g, _)| g.iter().zip(strides).map(|(&a, &s)| a as isize * s as isize).sum())
            .collect();
        Self {
            grid: grid.clone(),
            diag: stencil.total_weight() + stencil.tail_mass(),
            outside: Self::outside_weights(grid, &stencil),
            stencil,
            plan: ApplyPlan::Direct { deltas },
        }
    }
}
