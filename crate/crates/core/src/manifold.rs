//! Charts, atlases, partitions of unity, gluing checks and global assembly on
//! the built-in manifolds (open interval, circle, flat torus).
//!
//! Manifold points are written in angle parameters θ ∈ [0, 2π)^d. A chart is
//! a lifted box of angles together with affine coordinates x = s·θ + o.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;

use crate::coherence::{coherence_scan, fit_exponents, CoherenceReport, ScanGrid};
use crate::diffeo::{compose_test, Diffeo};
use crate::distribution::{Distribution, OpenSetDomain};
use crate::geometry::{Bx, Point};
use crate::germ::Germ;
use crate::reconstruct::{LocalReconstruction, MollifierFamily, ReconstructOptions};
use crate::rng::uniforms;
use crate::testfn::{bump, LocalFunction, TestFunction};
use crate::{Error, QuadratureSpec, Result};

pub const TWO_PI: f64 = 2.0 * PI;
/// Number of manifold sample points used by invariant checks.
pub const SAMPLE_POINTS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub enum Manifold {
    Interval { lo: f64, hi: f64 },
    Circle,
    Torus,
}

impl Manifold {
    pub fn dim(&self) -> usize {
        match self {
            Manifold::Torus => 2,
            _ => 1,
        }
    }

    pub fn is_periodic(&self) -> bool {
        !matches!(self, Manifold::Interval { .. })
    }

    /// Uniformly spaced parameter values (a square grid on the torus).
    pub fn sample_points(&self, n: usize) -> Vec<Point> {
        match self {
            Manifold::Interval { lo, hi } => (0..n)
                .map(|i| Point::x(lo + (i as f64 + 0.5) / n as f64 * (hi - lo)))
                .collect(),
            Manifold::Circle => (0..n)
                .map(|i| Point::x(TWO_PI * i as f64 / n as f64))
                .collect(),
            Manifold::Torus => {
                let m = (n as f64).sqrt().ceil() as usize;
                let mut out = Vec::with_capacity(m * m);
                for i in 0..m {
                    for j in 0..m {
                        out.push(Point::xy(
                            TWO_PI * i as f64 / m as f64,
                            TWO_PI * j as f64 / m as f64,
                        ));
                    }
                }
                out
            }
        }
    }

    /// Lattice translations to try when lifting a parameter into a chart.
    fn periods(&self, reach: i32) -> Vec<Point> {
        let d = self.dim();
        if !self.is_periodic() {
            return vec![Point::origin(d)];
        }
        let ks: Vec<f64> = (-reach..=reach).map(|k| TWO_PI * k as f64).collect();
        if d == 1 {
            ks.iter().map(|k| Point::x(*k)).collect()
        } else {
            ks.iter()
                .flat_map(|a| ks.iter().map(move |b| Point::xy(*a, *b)))
                .collect()
        }
    }

    /// h(θ) summed over lattice translates, for h with support narrower than a period.
    pub fn periodic_eval(&self, h: &TestFunction, theta: &Point) -> f64 {
        self.periods(1).iter().map(|k| h.eval(&(*theta + *k))).sum()
    }
}

/// A lifted box of angles with coordinates x = scale·θ + offset.
#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub lift: Bx,
    pub scale: f64,
    pub offset: Point,
    pub label: String,
}

impl Chart {
    pub fn new(lift: Bx, scale: f64, offset: Point, label: &str) -> Result<Chart> {
        if !(scale > 0.0) {
            return Err(Error::Config(format!(
                "chart {label}: scale must be positive"
            )));
        }
        if lift.is_empty() || offset.dim() != lift.dim() {
            return Err(Error::Config(format!("chart {label}: malformed lift box")));
        }
        Ok(Chart {
            lift,
            scale,
            offset,
            label: label.to_string(),
        })
    }

    pub fn dim(&self) -> usize {
        self.lift.dim()
    }

    /// θ ↦ x on the lift.
    pub fn map(&self) -> Diffeo {
        Diffeo::affine(self.scale, self.offset)
    }

    pub fn to_coords(&self, theta: &Point) -> Point {
        self.offset + *theta * self.scale
    }

    pub fn from_coords(&self, x: &Point) -> Point {
        (*x - self.offset) * (1.0 / self.scale)
    }

    /// φ(U) as a box in chart coordinates.
    pub fn image(&self) -> Bx {
        self.lift.affine(self.offset, self.scale)
    }

    pub fn domain(&self) -> OpenSetDomain {
        OpenSetDomain::Box(self.image())
    }

    fn strictly_contains(&self, theta: &Point) -> bool {
        (0..self.dim())
            .all(|a| theta.get(a) > self.lift.lo.get(a) && theta.get(a) < self.lift.hi.get(a))
    }
}

/// One connected component of φ_i(U_i ∩ U_j), with the affine transition on it.
#[derive(Clone, Debug)]
pub struct OverlapComponent {
    pub i: usize,
    pub j: usize,
    /// The component in chart-i coordinates.
    pub region: Bx,
    /// τ_ij = φ_j ∘ φ_i^{-1} restricted to the component.
    pub map: Diffeo,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Atlas {
    pub manifold: Manifold,
    pub charts: Vec<Chart>,
    pub label: String,
}

fn arc(lo: f64, hi: f64) -> Bx {
    Bx::interval(lo, hi)
}

impl Atlas {
    pub fn new(manifold: Manifold, charts: Vec<Chart>, label: &str) -> Result<Atlas> {
        if charts.is_empty() {
            return Err(Error::Config("atlas without charts".into()));
        }
        let d = manifold.dim();
        for c in &charts {
            if c.dim() != d {
                return Err(Error::Config(format!(
                    "chart {} has the wrong dimension",
                    c.label
                )));
            }
            if manifold.is_periodic() && (0..d).any(|a| c.lift.width(a) >= TWO_PI) {
                return Err(Error::Config(format!(
                    "chart {} wraps around the manifold",
                    c.label
                )));
            }
        }
        let atlas = Atlas {
            manifold,
            charts,
            label: label.to_string(),
        };
        if let Some(p) = atlas
            .manifold
            .sample_points(SAMPLE_POINTS)
            .into_iter()
            .find(|p| (0..atlas.len()).all(|j| atlas.lift_into(j, p).is_none()))
        {
            return Err(Error::Construction(format!(
                "atlas {label} does not cover the point {p}"
            )));
        }
        Ok(atlas)
    }

    /// The whole open interval as a single chart.
    pub fn interval(lo: f64, hi: f64) -> Result<Atlas> {
        Atlas::new(
            Manifold::Interval { lo, hi },
            vec![Chart::new(arc(lo, hi), 1.0, Point::x(0.0), "interval")?],
            "interval",
        )
    }

    /// Arcs (−π/8, π + π/8) and (π − π/8, 2π + π/8) in angle coordinates.
    pub fn circle_two_arc() -> Atlas {
        let e = PI / 8.0;
        Atlas::new(
            Manifold::Circle,
            vec![
                Chart::new(arc(-e, PI + e), 1.0, Point::x(0.0), "upper").unwrap(),
                Chart::new(arc(PI - e, TWO_PI + e), 1.0, Point::x(0.0), "lower").unwrap(),
            ],
            "two-arc",
        )
        .unwrap()
    }

    /// The two-arc cover with the second arc in doubled, recentred coordinates
    /// x = 2(θ − 3π/2).
    pub fn circle_two_arc_scaled() -> Atlas {
        let e = PI / 8.0;
        Atlas::new(
            Manifold::Circle,
            vec![
                Chart::new(arc(-e, PI + e), 1.0, Point::x(0.0), "upper").unwrap(),
                Chart::new(
                    arc(PI - e, TWO_PI + e),
                    2.0,
                    Point::x(-3.0 * PI),
                    "lower-scaled",
                )
                .unwrap(),
            ],
            "two-arc-scaled",
        )
        .unwrap()
    }

    /// Three arcs of half-width 0.7π centred at 0, 2π/3, 4π/3, each in
    /// coordinates centred at its midpoint.
    pub fn circle_three_arc() -> Atlas {
        let h = 0.7 * PI;
        let charts = (0..3)
            .map(|k| {
                let m = TWO_PI * k as f64 / 3.0;
                Chart::new(arc(m - h, m + h), 1.0, Point::x(-m), &format!("arc{k}")).unwrap()
            })
            .collect();
        Atlas::new(Manifold::Circle, charts, "three-arc").unwrap()
    }

    /// Products of the two-arc cover on each axis.
    pub fn torus_four_patch() -> Atlas {
        let e = PI / 8.0;
        let arcs = [(-e, PI + e), (PI - e, TWO_PI + e)];
        let mut charts = Vec::new();
        for (a, &(lo0, hi0)) in arcs.iter().enumerate() {
            for (b, &(lo1, hi1)) in arcs.iter().enumerate() {
                let lift = Bx::new(Point::xy(lo0, lo1), Point::xy(hi0, hi1));
                charts.push(
                    Chart::new(lift, 1.0, Point::xy(0.0, 0.0), &format!("patch{a}{b}")).unwrap(),
                );
            }
        }
        Atlas::new(Manifold::Torus, charts, "four-patch").unwrap()
    }

    pub fn len(&self) -> usize {
        self.charts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.manifold.dim()
    }

    /// The lift of θ into chart j, if θ lies in U_j.
    pub fn lift_into(&self, j: usize, theta: &Point) -> Option<Point> {
        let chart = &self.charts[j];
        self.manifold
            .periods(2)
            .into_iter()
            .map(|k| *theta + k)
            .find(|t| chart.strictly_contains(t))
    }

    /// φ_j(θ).
    pub fn coords(&self, j: usize, theta: &Point) -> Option<Point> {
        self.lift_into(j, theta)
            .map(|t| self.charts[j].to_coords(&t))
    }

    pub fn overlap(&self, i: usize, j: usize) -> Vec<OverlapComponent> {
        let (ci, cj) = (&self.charts[i], &self.charts[j]);
        let ratio = cj.scale / ci.scale;
        let periods = if i == j {
            vec![Point::origin(self.dim())]
        } else {
            self.manifold.periods(2)
        };
        periods
            .into_iter()
            .filter_map(|k| {
                // θ_i ∈ lift_i ∩ (lift_j + k), θ_j = θ_i − k.
                let shifted = Bx::new(cj.lift.lo + k, cj.lift.hi + k);
                let common = ci.lift.intersect(&shifted);
                if common.is_empty() || (0..self.dim()).any(|a| common.width(a) <= 0.0) {
                    return None;
                }
                let shift = cj.offset - ci.offset * ratio - k * cj.scale;
                Some(OverlapComponent {
                    i,
                    j,
                    region: common.affine(ci.offset, ci.scale),
                    map: Diffeo::affine(ratio, shift),
                })
            })
            .collect()
    }

    /// τ_ij = φ_j ∘ φ_i^{-1} on φ_i(U_i ∩ U_j).
    pub fn transition(&self, i: usize, j: usize) -> Result<Diffeo> {
        if i >= self.len() || j >= self.len() {
            return Err(Error::Config(format!(
                "chart index out of range: ({i}, {j})"
            )));
        }
        if i == j {
            return Ok(Diffeo::identity(self.dim()));
        }
        let mut parts = self.overlap(i, j);
        match parts.len() {
            0 => Err(Error::Domain(format!(
                "charts {} and {} do not overlap",
                self.charts[i].label, self.charts[j].label
            ))),
            1 => Ok(parts.remove(0).map),
            _ => Ok(Diffeo::Piecewise(
                parts.into_iter().map(|c| (c.region, c.map)).collect(),
            )),
        }
    }

    /// max |τ_ik(x) − τ_jk(τ_ij(x))| over sample points in triple overlaps.
    pub fn cocycle_error(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        let n = self.len();
        let samples = self.manifold.sample_points(SAMPLE_POINTS);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if i == j || j == k || i == k {
                        continue;
                    }
                    for p in &samples {
                        let (Some(xi), Some(_), Some(_)) =
                            (self.coords(i, p), self.coords(j, p), self.coords(k, p))
                        else {
                            continue;
                        };
                        let direct = self.transition(i, k)?.forward(&xi);
                        let via = self
                            .transition(j, k)?
                            .forward(&self.transition(i, j)?.forward(&xi));
                        worst = worst.max(direct.dist(&via));
                    }
                }
            }
        }
        Ok(worst)
    }

    /// max |φ_j(φ_j^{-1}(x)) − x| over sample points of each chart.
    pub fn roundtrip_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, c) in self.charts.iter().enumerate() {
            for p in self.manifold.sample_points(SAMPLE_POINTS) {
                if let Some(x) = self.coords(j, &p) {
                    worst = worst.max(c.to_coords(&c.from_coords(&x)).dist(&x));
                }
            }
        }
        worst
    }
}

/// Normalised product bumps ρ_j = b_j / Σ_k b_k with supp b_j ⊂ U_j.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionOfUnity {
    pub atlas: Atlas,
    /// Centre of b_j in chart j's lift.
    pub centers: Vec<Point>,
    /// Half-widths of b_j per axis.
    pub widths: Vec<Point>,
    pub seed: Option<u64>,
}

/// Builds a partition of unity subordinate to the atlas. Without a seed the
/// bumps are centred on the charts with 95% of their half-widths; with a seed
/// the centres move by up to 2% and the widths vary in [88%, 93%].
pub fn build_pou(atlas: &Atlas, seed: Option<u64>) -> Result<PartitionOfUnity> {
    let d = atlas.dim();
    if !atlas.manifold.is_periodic() && atlas.len() > 1 {
        return Err(Error::Config(
            "partitions of unity on the interval support a single chart".into(),
        ));
    }
    let mut centers = Vec::new();
    let mut widths = Vec::new();
    for (j, c) in atlas.charts.iter().enumerate() {
        let mid = c.lift.center();
        let half = Point::new(&(0..d).map(|a| c.lift.width(a) / 2.0).collect::<Vec<_>>());
        let (shift, factor) = match seed {
            None => (Point::origin(d), Point::splat(d, 0.95)),
            Some(s) => {
                let u = uniforms(s, j as u64, 2 * d, 0.0, 1.0);
                (
                    Point::new(
                        &(0..d)
                            .map(|a| (u[a] - 0.5) * 0.04 * half.get(a))
                            .collect::<Vec<_>>(),
                    ),
                    Point::new(&(0..d).map(|a| 0.88 + 0.05 * u[d + a]).collect::<Vec<_>>()),
                )
            }
        };
        let w = half.map(|a, h| h * factor.get(a));
        for a in 0..d {
            if shift.get(a).abs() + w.get(a) >= half.get(a) {
                return Err(Error::Construction(format!(
                    "bump of chart {} leaves the chart",
                    c.label
                )));
            }
        }
        centers.push(mid + shift);
        widths.push(w);
    }
    let pou = PartitionOfUnity {
        atlas: atlas.clone(),
        centers,
        widths,
        seed,
    };
    for p in atlas.manifold.sample_points(SAMPLE_POINTS) {
        if pou.raw_weights(&p).iter().sum::<f64>() <= 0.0 {
            return Err(Error::Construction(format!(
                "partition of unity has a cover gap at {p}"
            )));
        }
    }
    Ok(pou)
}

impl PartitionOfUnity {
    fn single(&self) -> bool {
        !self.atlas.manifold.is_periodic()
    }

    /// b_j at a lift θ of chart j.
    fn bump_on_lift(&self, j: usize, theta: &Point) -> f64 {
        if self.single() {
            return 1.0;
        }
        let (c, w) = (&self.centers[j], &self.widths[j]);
        (0..theta.dim())
            .map(|a| {
                let u = (theta.get(a) - c.get(a)) / w.get(a);
                bump(u * u)
            })
            .product()
    }

    fn raw_weights(&self, theta: &Point) -> Vec<f64> {
        (0..self.atlas.len())
            .map(|j| {
                self.atlas
                    .lift_into(j, theta)
                    .map_or(0.0, |t| self.bump_on_lift(j, &t))
            })
            .collect()
    }

    /// (ρ_0(θ), …, ρ_{n−1}(θ)).
    pub fn weights(&self, theta: &Point) -> Vec<f64> {
        let raw = self.raw_weights(theta);
        let total: f64 = raw.iter().sum();
        raw.iter().map(|b| b / total).collect()
    }

    /// ρ_j at a lift θ of chart j.
    pub fn weight_on_lift(&self, j: usize, theta: &Point) -> f64 {
        let b = self.bump_on_lift(j, theta);
        if b == 0.0 {
            return 0.0;
        }
        let total: f64 = self.raw_weights(theta).iter().sum();
        b / total
    }

    /// supp ρ_j in chart j's lift.
    pub fn support_lift(&self, j: usize) -> Bx {
        if self.single() {
            return self.atlas.charts[j].lift;
        }
        Bx::new(
            self.centers[j] - self.widths[j],
            self.centers[j] + self.widths[j],
        )
    }

    /// supp ρ_j in chart j's coordinates.
    pub fn support(&self, j: usize) -> Bx {
        let c = &self.atlas.charts[j];
        self.support_lift(j).affine(c.offset, c.scale)
    }

    /// max |Σ_j ρ_j − 1| and min ρ_j over the sample points.
    pub fn check(&self) -> (f64, f64) {
        let mut err: f64 = 0.0;
        let mut min = f64::INFINITY;
        for p in self.atlas.manifold.sample_points(SAMPLE_POINTS) {
            let w = self.weights(&p);
            err = err.max((w.iter().sum::<f64>() - 1.0).abs());
            min = w.iter().copied().fold(min, f64::min);
        }
        (err, min)
    }
}

/// A germ on the manifold, given in angle parameters (periodic for the circle
/// and torus).
#[derive(Clone, Debug)]
pub struct ManifoldGerm {
    pub manifold: Manifold,
    pub base: Arc<Germ>,
}

impl ManifoldGerm {
    pub fn new(manifold: Manifold, base: Germ) -> Result<ManifoldGerm> {
        if base.dim() != manifold.dim() {
            return Err(Error::Config("germ and manifold dimensions differ".into()));
        }
        Ok(ManifoldGerm {
            manifold,
            base: Arc::new(base),
        })
    }

    /// p ↦ φ_{j*}(F_{φ_j^{-1}(p)}) on φ_j(U_j).
    pub fn chart_germ(&self, atlas: &Atlas, j: usize) -> Result<Germ> {
        let c = &atlas.charts[j];
        Germ::in_chart(
            self.base.clone(),
            1.0 / c.scale,
            c.offset * (-1.0 / c.scale),
            c.domain(),
        )
    }
}

/// (ρ_j·h) ∘ φ_j^{-1} in chart j's coordinates.
struct Localized {
    h: TestFunction,
    pou: Arc<PartitionOfUnity>,
    j: usize,
    support: Bx,
}

impl LocalFunction for Localized {
    fn eval(&self, x: &Point) -> f64 {
        if !self.support.contains(x) {
            return 0.0;
        }
        let theta = self.pou.atlas.charts[self.j].from_coords(x);
        let w = self.pou.weight_on_lift(self.j, &theta);
        if w == 0.0 {
            return 0.0;
        }
        w * self.pou.atlas.manifold.periodic_eval(&self.h, &theta)
    }

    fn support(&self) -> Bx {
        self.support
    }

    fn label(&self) -> String {
        format!("localized-{}", self.j)
    }
}

/// (ρ_j·h) ∘ φ_j^{-1}, or None when it vanishes identically.
pub fn localize(h: &TestFunction, pou: &Arc<PartitionOfUnity>, j: usize) -> Option<TestFunction> {
    let lift = pou.support_lift(j);
    let hb = h.support_box();
    let touches = pou.atlas.manifold.periods(1).iter().any(|k| {
        let shifted = Bx::new(hb.lo - *k, hb.hi - *k);
        let common = lift.intersect(&shifted);
        !common.is_empty() && (0..lift.dim()).all(|a| common.width(a) > 0.0)
    });
    if h.is_zero() || !touches {
        return None;
    }
    Some(TestFunction::custom(
        h.dim(),
        Arc::new(Localized {
            h: h.clone(),
            pou: pou.clone(),
            j,
            support: pou.support(j),
        }),
    ))
}

/// A test function g on one overlap component, in chart-i coordinates, and
/// g ∘ τ_ij^{-1} in chart-j coordinates.
#[derive(Clone, Debug)]
pub struct OverlapTest {
    pub i: usize,
    pub j: usize,
    pub id: usize,
    pub g: TestFunction,
    pub pulled: TestFunction,
}

/// `per_component` unit-height bumps on each overlap component (i < j), with
/// seeded centres and scales in [w/16, w/8] for component width w.
pub fn overlap_ensemble(
    atlas: &Atlas,
    per_component: usize,
    seed: u64,
) -> Result<Vec<OverlapTest>> {
    let d = atlas.dim();
    let mut out = Vec::new();
    let mut stream = 0u64;
    for i in 0..atlas.len() {
        for j in i + 1..atlas.len() {
            for comp in atlas.overlap(i, j) {
                let w = (0..d)
                    .map(|a| comp.region.width(a))
                    .fold(f64::INFINITY, f64::min);
                let back = comp.map.inverted();
                for _ in 0..per_component {
                    let u = uniforms(seed, stream, 1 + d, 0.0, 1.0);
                    stream += 1;
                    let lambda = w / 16.0 * (1.0 + u[0]);
                    let margin = lambda + w / 32.0;
                    let center = comp.region.lo.map(|a, lo| {
                        lo + margin + u[1 + a] * (comp.region.width(a) - 2.0 * margin)
                    });
                    let unit_height =
                        TestFunction::bump(d).scaled(std::f64::consts::E * lambda.powi(d as i32));
                    let g = unit_height.rescale(&center, lambda)?;
                    let pulled = compose_test(&g, &back)?;
                    out.push(OverlapTest {
                        i,
                        j,
                        id: out.len(),
                        g,
                        pulled,
                    });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlueRow {
    pub chart_i: usize,
    pub chart_j: usize,
    pub g_id: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub abs_diff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlueReport {
    pub passed: bool,
    pub max_discrepancy: f64,
    pub witness: Option<GlueRow>,
    pub rows: Vec<GlueRow>,
    pub tolerance: f64,
}

/// Compares T_i(g) with (τ_ij^* T_j)(g) = T_j(g ∘ τ_ij^{-1}) on the ensemble.
pub fn glue_check(
    locals: &[Arc<dyn Distribution>],
    atlas: &Atlas,
    ensemble: &[OverlapTest],
    tol: f64,
) -> Result<GlueReport> {
    if ensemble.is_empty() {
        return Err(Error::Config(
            "glue check needs a non-empty overlap ensemble".into(),
        ));
    }
    if locals.len() != atlas.len() {
        return Err(Error::Config(format!(
            "{} locals for {} charts",
            locals.len(),
            atlas.len()
        )));
    }
    let rows: Vec<GlueRow> = ensemble
        .par_iter()
        .map(|t| {
            let lhs = locals[t.i].pair(&t.g)?;
            let rhs = locals[t.j].pair(&t.pulled)?;
            Ok(GlueRow {
                chart_i: t.i,
                chart_j: t.j,
                g_id: t.id,
                lhs,
                rhs,
                abs_diff: (lhs - rhs).abs(),
            })
        })
        .collect::<Result<_>>()?;
    let mut witness: Option<GlueRow> = None;
    for r in &rows {
        if witness.as_ref().is_none_or(|w| r.abs_diff > w.abs_diff) {
            witness = Some(r.clone());
        }
    }
    let max_discrepancy = witness.as_ref().map_or(0.0, |w| w.abs_diff);
    Ok(GlueReport {
        passed: max_discrepancy <= tol,
        max_discrepancy,
        witness,
        rows,
        tolerance: tol,
    })
}

/// A chart-local distribution plus ε times a density bump: T + ε·b.
pub struct PerturbedLocal {
    pub base: Arc<dyn Distribution>,
    pub bump: TestFunction,
    pub eps: f64,
    pub spec: QuadratureSpec,
}

impl Distribution for PerturbedLocal {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn pair(&self, f: &TestFunction) -> Result<f64> {
        let extra: f64 = self
            .bump
            .weighted_nodes(&self.spec, &[], &[])
            .iter()
            .map(|(y, w)| w * f.eval(y))
            .sum();
        Ok(self.base.pair(f)? + self.eps * extra)
    }

    fn domain(&self) -> OpenSetDomain {
        self.base.domain()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalOptions {
    pub reconstruct: ReconstructOptions,
    pub glue_tolerance: f64,
    pub per_overlap: usize,
    pub scan_pairs: usize,
    pub seed: u64,
}

impl Default for GlobalOptions {
    fn default() -> Self {
        GlobalOptions {
            reconstruct: ReconstructOptions::default(),
            glue_tolerance: 1e-5,
            per_overlap: 20,
            scan_pairs: 64,
            seed: 0,
        }
    }
}

/// RF(h) = Σ_j T_j((ρ_j h) ∘ φ_j^{-1}).
#[derive(Clone)]
pub struct GlobalReconstruction {
    pub pou: Arc<PartitionOfUnity>,
    pub locals: Vec<Arc<dyn Distribution>>,
    /// Chart-level coherence fits on K_j.
    pub chart_fits: Vec<CoherenceReport>,
    pub glue: Option<GlueReport>,
}

impl std::fmt::Debug for GlobalReconstruction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GlobalReconstruction")
            .field("atlas", &self.pou.atlas.label)
            .field("chart_fits", &self.chart_fits)
            .field("glue", &self.glue.as_ref().map(|g| g.max_discrepancy))
            .finish()
    }
}

impl GlobalReconstruction {
    /// Assembly from given chart-local distributions.
    pub fn assemble(
        pou: Arc<PartitionOfUnity>,
        locals: Vec<Arc<dyn Distribution>>,
    ) -> Result<GlobalReconstruction> {
        if locals.len() != pou.atlas.len() {
            return Err(Error::Config(format!(
                "{} locals for {} charts",
                locals.len(),
                pou.atlas.len()
            )));
        }
        Ok(GlobalReconstruction {
            pou,
            locals,
            chart_fits: Vec::new(),
            glue: None,
        })
    }

    pub fn atlas(&self) -> &Atlas {
        &self.pou.atlas
    }

    /// Smallest chart-level γ̂ (+∞ when every chart table was exact).
    pub fn gamma(&self) -> f64 {
        self.chart_fits
            .iter()
            .map(|r| r.gamma)
            .fold(f64::INFINITY, f64::min)
    }
}

impl Distribution for GlobalReconstruction {
    fn dim(&self) -> usize {
        self.pou.atlas.dim()
    }

    fn pair(&self, h: &TestFunction) -> Result<f64> {
        let mut total = 0.0;
        for (j, t) in self.locals.iter().enumerate() {
            if let Some(f) = localize(h, &self.pou, j) {
                total += t.pair(&f)?;
            }
        }
        Ok(total)
    }
}

/// K_j: supp ρ_j in chart coordinates shrunk by an eighth of its largest width.
pub fn chart_compact(pou: &PartitionOfUnity, j: usize) -> Bx {
    let s = pou.support(j);
    s.inflate(-s.max_width() / 8.0)
}

/// Fits chart-level exponents, reconstructs in every chart and assembles.
/// When every chart has γ̂ > 0 the locals must pass the glue check first.
pub fn global_reconstruct(
    germ: &ManifoldGerm,
    pou: Arc<PartitionOfUnity>,
    m: Arc<MollifierFamily>,
    opts: &GlobalOptions,
) -> Result<GlobalReconstruction> {
    let atlas = pou.atlas.clone();
    if germ.manifold != atlas.manifold {
        return Err(Error::Config(
            "germ and atlas live on different manifolds".into(),
        ));
    }
    let f = TestFunction::bump(atlas.dim());
    let mut fits = Vec::new();
    let mut locals: Vec<Arc<dyn Distribution>> = Vec::new();
    for j in 0..atlas.len() {
        let cg = germ.chart_germ(&atlas, j)?;
        let grid = ScanGrid::new(chart_compact(&pou, j), opts.scan_pairs, opts.seed);
        let fit = fit_exponents(&coherence_scan(&cg, &grid, &f)?)?;
        let ropts = ReconstructOptions {
            gamma: Some(fit.gamma),
            ..opts.reconstruct.clone()
        };
        locals.push(Arc::new(LocalReconstruction::new(
            Arc::new(cg),
            m.clone(),
            ropts,
        )));
        fits.push(fit);
    }
    let mut out = GlobalReconstruction::assemble(pou, locals)?;
    out.chart_fits = fits;
    if out.gamma() > 0.0 {
        let ensemble = overlap_ensemble(&atlas, opts.per_overlap, opts.seed)?;
        let report = glue_check(&out.locals, &atlas, &ensemble, opts.glue_tolerance)?;
        if !report.passed {
            return Err(Error::Verification(format!(
                "chart reconstructions disagree on an overlap by {:e} (tolerance {:e})",
                report.max_discrepancy, opts.glue_tolerance
            )));
        }
        out.glue = Some(report);
    }
    Ok(out)
}

/// Seeded global test functions: (c₀ + c₁u₁)·bump at scale in [0.3, 0.8].
pub fn global_ensemble(manifold: &Manifold, n: usize, seed: u64) -> Vec<TestFunction> {
    let d = manifold.dim();
    (0..n)
        .map(|i| {
            let u = uniforms(seed, i as u64, 3 + d, 0.0, 1.0);
            let scale = 0.3 + 0.5 * u[0];
            let center = match manifold {
                Manifold::Interval { lo, hi } => {
                    let inner = (hi - lo - 2.0 * scale).max(0.0);
                    Point::x(lo + (hi - lo - inner) / 2.0 + u[3] * inner)
                }
                _ => Point::new(&u[3..3 + d].iter().map(|v| TWO_PI * v).collect::<Vec<_>>()),
            };
            let profile = TestFunction::poly_bump(
                d,
                vec![([0, 0], 0.5 + 0.5 * u[1]), ([1, 0], 2.0 * u[2] - 1.0)],
            );
            profile.rescale(&center, scale).expect("positive scale")
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub h_id: usize,
    pub rf_a: f64,
    pub rf_b: f64,
    pub rel_diff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub max_rel_diff: f64,
    pub rows: Vec<CompareRow>,
}

/// max over the ensemble of |a(h) − b(h)| / (1 + |a(h)|).
pub fn compare(
    a: &dyn Distribution,
    b: &dyn Distribution,
    ensemble: &[TestFunction],
) -> Result<CompareReport> {
    let rows: Vec<CompareRow> = ensemble
        .iter()
        .enumerate()
        .map(|(h_id, h)| {
            let rf_a = a.pair(h)?;
            let rf_b = b.pair(h)?;
            Ok(CompareRow {
                h_id,
                rf_a,
                rf_b,
                rel_diff: (rf_a - rf_b).abs() / (1.0 + rf_a.abs()),
            })
        })
        .collect::<Result<_>>()?;
    Ok(CompareReport {
        max_rel_diff: rows.iter().map(|r| r.rel_diff).fold(0.0, f64::max),
        rows,
    })
}

/// Reconstructs on both atlases (canonical partitions of unity) and compares.
pub fn atlas_compare(
    germ: &ManifoldGerm,
    a: &Atlas,
    b: &Atlas,
    ensemble: &[TestFunction],
    m: Arc<MollifierFamily>,
    opts: &GlobalOptions,
) -> Result<CompareReport> {
    let ra = global_reconstruct(germ, Arc::new(build_pou(a, None)?), m.clone(), opts)?;
    let rb = global_reconstruct(germ, Arc::new(build_pou(b, None)?), m, opts)?;
    compare(&ra, &rb, ensemble)
}
