//! Coherence, enhanced coherence and homogeneity scans, exponent fits,
//! recentering and restriction.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::distribution::OpenSetDomain;
use crate::geometry::{Bx, Point};
use crate::germ::Germ;
use crate::rng::{uniforms, LowDiscrepancy};
use crate::testfn::TestFunction;
use crate::{Error, QuadratureSpec, Result};

/// Values below this are treated as numerically zero by every fit.
pub const ZERO_CUTOFF: f64 = 1e-13;
/// Minimum number of usable rows per regime.
pub const MIN_ROWS: usize = 8;
/// Tolerance used when checking fitted exponents against the structural constraints.
pub const FIT_TOLERANCE: f64 = 0.05;

/// Scan points and dyadic scales over a compact box K.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGrid {
    pub k: Bx,
    pub n_pairs: usize,
    pub m_min: u32,
    pub m_max: u32,
    pub seed: u64,
    /// Explicit scan points for homogeneity scans; sampled from K when absent.
    pub points: Option<Vec<Point>>,
}

impl ScanGrid {
    pub fn new(k: Bx, n_pairs: usize, seed: u64) -> ScanGrid {
        ScanGrid {
            k,
            n_pairs,
            m_min: 3,
            m_max: 10,
            seed,
            points: None,
        }
    }

    pub fn with_scales(mut self, m_min: u32, m_max: u32) -> ScanGrid {
        self.m_min = m_min;
        self.m_max = m_max;
        self
    }

    pub fn with_points(mut self, points: Vec<Point>) -> ScanGrid {
        self.points = Some(points);
        self
    }

    pub fn dim(&self) -> usize {
        self.k.dim()
    }

    /// λ = 2^{-m}, m ∈ [m_min, m_max], capped at D_K/4 for bounded domains.
    pub fn lambdas(&self, domain: &OpenSetDomain) -> Result<Vec<f64>> {
        if self.m_min > self.m_max {
            return Err(Error::Config(format!(
                "m_min = {} exceeds m_max = {}",
                self.m_min, self.m_max
            )));
        }
        let dk = domain.d_k(&self.k);
        if dk <= 0.0 {
            return Err(Error::Domain(format!(
                "scan box {:?} is not compactly inside the domain",
                self.k
            )));
        }
        let cap = dk / 4.0;
        Ok((self.m_min..=self.m_max)
            .map(|m| 2f64.powi(-(m as i32)))
            .filter(|l| *l <= cap)
            .collect())
    }

    /// Point pairs at scale λ.
    ///
    /// Even-indexed pairs are near pairs with |p − q| = s·λ, s ∈ (1/4, 1];
    /// odd-indexed pairs are far pairs with |p − q| log-uniform in (λ, diam K].
    /// The shape parameters come from a seeded low-discrepancy sequence and do
    /// not depend on λ.
    pub fn pairs(&self, lambda: f64) -> Vec<(Point, Point)> {
        let d = self.dim();
        let seq = LowDiscrepancy::new(3, self.seed);
        let diam = self.k.diameter();
        (0..self.n_pairs)
            .map(|i| {
                let u = seq.point(i);
                let dist = if i % 2 == 0 {
                    lambda * 2f64.powf(-2.0 * u[0])
                } else {
                    let top = diam.max(lambda * 1.0000001);
                    lambda * (top / lambda).powf(1.0 - u[0]).max(1.0000001)
                };
                let dir = if d == 1 {
                    Point::x(if u[2] < 0.5 { 1.0 } else { -1.0 })
                } else {
                    let th = 2.0 * std::f64::consts::PI * u[2];
                    Point::xy(th.cos(), th.sin())
                };
                let mut delta = dir * dist;
                // Shrink far pairs that do not fit in K along some axis.
                let fit = (0..d)
                    .map(|a| {
                        let w = self.k.width(a);
                        if delta.get(a).abs() > w && delta.get(a) != 0.0 {
                            w / delta.get(a).abs()
                        } else {
                            1.0
                        }
                    })
                    .fold(1.0, f64::min);
                delta = delta * fit;
                let q = self.k.lo.map(|a, lo| {
                    let lo_q = lo + (-delta.get(a)).max(0.0);
                    let hi_q = self.k.hi.get(a) - delta.get(a).max(0.0);
                    let t = if a == 0 {
                        u[1]
                    } else {
                        (u[1] * 7.0 + u[2] * 3.0).fract()
                    };
                    lo_q + t * (hi_q - lo_q)
                });
                (q + delta, q)
            })
            .collect()
    }

    /// Scan points for homogeneity.
    pub fn scan_points(&self) -> Vec<Point> {
        if let Some(p) = &self.points {
            return p.clone();
        }
        let d = self.dim();
        let seq = LowDiscrepancy::new(d, self.seed);
        (0..self.n_pairs)
            .map(|i| {
                let u = seq.point(i);
                self.k.lo.map(|a, lo| lo + u[a] * self.k.width(a))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Near,
    Far,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Near => "NEAR",
            Regime::Far => "FAR",
        })
    }
}

/// |p − q| ≤ λ is NEAR (ties go to NEAR).
pub fn regime(p: &Point, q: &Point, lambda: f64) -> Regime {
    if p.dist(q) <= lambda {
        Regime::Near
    } else {
        Regime::Far
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceRow {
    pub p: Point,
    pub q: Point,
    pub lambda: f64,
    pub value: f64,
    pub regime: Regime,
    pub out_of_domain: bool,
}

fn check_test_function(f: &TestFunction) -> Result<()> {
    let m = f.integral(&QuadratureSpec::for_dim(f.dim()));
    if m.abs() < 1e-6 {
        return Err(Error::Config(format!(
            "scan test function has ∫f = {m:e}; need a nonzero integral"
        )));
    }
    Ok(())
}

/// One row per (p, q, λ): |(F_p − F_q)(f^λ_q)|.
pub fn coherence_scan(germ: &Germ, grid: &ScanGrid, f: &TestFunction) -> Result<Vec<CoherenceRow>> {
    if grid.n_pairs == 0 {
        return Err(Error::Config("scan grid has no point pairs".into()));
    }
    check_test_function(f)?;
    let lambdas = grid.lambdas(germ.domain())?;
    let mut jobs = Vec::new();
    for &lambda in &lambdas {
        for (p, q) in grid.pairs(lambda) {
            jobs.push((p, q, lambda));
        }
    }
    jobs.par_iter()
        .map(|&(p, q, lambda)| {
            let fl = f.rescale(&q, lambda)?;
            let value = germ.diff_pair(&p, &q, &fl)?.abs();
            Ok(CoherenceRow {
                p,
                q,
                lambda,
                value,
                regime: regime(&p, &q, lambda),
                out_of_domain: germ.domain().support_margin(&fl) < 0.0,
            })
        })
        .collect()
}

/// Ordinary least squares; returns coefficients and residual RMS.
pub fn least_squares(design: &[Vec<f64>], y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = y.len();
    let k = design.first().map(|r| r.len()).unwrap_or(0);
    if n < k || k == 0 {
        return Err(Error::InsufficientData(format!(
            "{n} rows for {k} parameters"
        )));
    }
    let x = DMatrix::from_fn(n, k, |i, j| design[i][j]);
    let yv = DVector::from_column_slice(y);
    let beta = x
        .clone()
        .svd(true, true)
        .solve(&yv, 1e-12)
        .map_err(|e| Error::InsufficientData(e.to_string()))?;
    let resid = &x * &beta - &yv;
    let rms = (resid.norm_squared() / n as f64).sqrt();
    Ok((beta.iter().copied().collect(), rms))
}

/// Fitted coherence exponents.
#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceReport {
    /// All values were numerically zero: coherent with any parameters; γ̂ = +∞.
    pub exact: bool,
    /// γ̂ from the NEAR-regime slope in λ.
    pub gamma: f64,
    /// α̂ from the FAR-regime joint fit.
    pub alpha: f64,
    /// Fitted |p − q| exponent in the FAR regime (γ − α in the bound).
    pub far_distance_exponent: f64,
    /// Smallest C with value ≤ C λ^α̂ (|p−q|+λ)^{γ̂−α̂} on every usable row.
    pub constant: f64,
    pub rms_near: f64,
    pub rms_far: f64,
    pub rows_near: usize,
    pub rows_far: usize,
    pub rows_excluded: usize,
    pub split_rule: String,
}

impl CoherenceReport {
    fn exact(excluded: usize) -> CoherenceReport {
        CoherenceReport {
            exact: true,
            gamma: f64::INFINITY,
            alpha: 0.0,
            far_distance_exponent: f64::INFINITY,
            constant: 0.0,
            rms_near: 0.0,
            rms_far: 0.0,
            rows_near: 0,
            rows_far: 0,
            rows_excluded: excluded,
            split_rule: SPLIT_RULE.into(),
        }
    }

    /// γ̂ implied by the FAR fit, α̂ + (fitted distance exponent).
    pub fn gamma_far(&self) -> f64 {
        self.alpha + self.far_distance_exponent
    }

    /// α̂ ≤ min{0, γ̂} + tol.
    pub fn satisfies_constraint(&self, tol: f64) -> bool {
        self.exact || self.alpha <= self.gamma.min(0.0) + tol
    }

    /// The bound λ^α̂ (|p−q| + λ)^{γ̂−α̂}.
    pub fn bound(&self, dist: f64, lambda: f64) -> f64 {
        lambda.powf(self.alpha) * (dist + lambda).powf(self.gamma - self.alpha)
    }
}

const SPLIT_RULE: &str = "NEAR iff |p-q| <= lambda; NEAR: ln v = g ln(lambda) + c; FAR: ln v = a ln(lambda) + e ln|p-q| + c";

/// Least-squares exponents from a coherence table.
pub fn fit_exponents(rows: &[CoherenceRow]) -> Result<CoherenceReport> {
    let usable: Vec<&CoherenceRow> = rows
        .iter()
        .filter(|r| r.value >= ZERO_CUTOFF && r.value.is_finite())
        .collect();
    let excluded = rows.len() - usable.len();
    if usable.is_empty() {
        return Ok(CoherenceReport::exact(excluded));
    }
    let near: Vec<&&CoherenceRow> = usable.iter().filter(|r| r.regime == Regime::Near).collect();
    let far: Vec<&&CoherenceRow> = usable.iter().filter(|r| r.regime == Regime::Far).collect();
    if near.len() < MIN_ROWS || far.len() < MIN_ROWS {
        return Err(Error::InsufficientData(format!(
            "need {MIN_ROWS} nonzero rows per regime, have {} NEAR and {} FAR",
            near.len(),
            far.len()
        )));
    }
    let (bn, rms_near) = least_squares(
        &near
            .iter()
            .map(|r| vec![r.lambda.ln(), 1.0])
            .collect::<Vec<_>>(),
        &near.iter().map(|r| r.value.ln()).collect::<Vec<_>>(),
    )?;
    let (bf, rms_far) = least_squares(
        &far.iter()
            .map(|r| vec![r.lambda.ln(), r.p.dist(&r.q).ln(), 1.0])
            .collect::<Vec<_>>(),
        &far.iter().map(|r| r.value.ln()).collect::<Vec<_>>(),
    )?;
    let mut report = CoherenceReport {
        exact: false,
        gamma: bn[0],
        alpha: bf[0],
        far_distance_exponent: bf[1],
        constant: 0.0,
        rms_near,
        rms_far,
        rows_near: near.len(),
        rows_far: far.len(),
        rows_excluded: excluded,
        split_rule: SPLIT_RULE.into(),
    };
    report.constant = usable
        .iter()
        .map(|r| r.value / report.bound(r.p.dist(&r.q), r.lambda))
        .fold(0.0, f64::max);
    Ok(report)
}

/// The seeded ψ ensemble: ψ_i = (c₀ + c₁u₁ + c₂u₁²)·bump in d = 1 and
/// (c₀ + c₁u₁ + c₂u₂)·bump in d = 2, coefficients uniform in [−1, 1].
pub fn psi_ensemble(dim: usize, n: usize, seed: u64) -> Vec<TestFunction> {
    (0..n)
        .map(|i| {
            let c = uniforms(seed, i as u64, 3, -1.0, 1.0);
            let terms = if dim == 1 {
                vec![([0, 0], c[0]), ([1, 0], c[1]), ([2, 0], c[2])]
            } else {
                vec![([0, 0], c[0]), ([1, 0], c[1]), ([0, 1], c[2])]
            };
            TestFunction::poly_bump(dim, terms)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnhancedRow {
    pub p: Point,
    pub q: Point,
    pub lambda: f64,
    pub psi_id: usize,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnhancedReport {
    pub order: u32,
    pub max_ratio: f64,
    pub witness: Option<EnhancedRow>,
    pub rows: Vec<EnhancedRow>,
}

impl EnhancedReport {
    pub fn passed(&self) -> bool {
        self.max_ratio.is_finite()
    }
}

/// max over the ensemble and grid of
/// |(F_p − F_q)(ψ^λ_q)| / (‖ψ‖_{C^r} λ^α̂ (|p−q| + λ)^{γ̂−α̂}).
///
/// The ratio is homogeneous of degree zero in ψ, so it is evaluated on the
/// unit-amplitude representative of each ψ; ψ and cψ give identical rows.
pub fn enhanced_check(
    germ: &Germ,
    grid: &ScanGrid,
    r: u32,
    ensemble: &[TestFunction],
    fit: &CoherenceReport,
) -> Result<EnhancedReport> {
    if ensemble.is_empty() {
        return Err(Error::Config(
            "enhanced check needs a non-empty ψ ensemble".into(),
        ));
    }
    if !fit.exact && !((r as f64) > -fit.alpha) {
        return Err(Error::Config(format!(
            "order r = {r} must exceed −α̂ = {}",
            -fit.alpha
        )));
    }
    let lambdas = grid.lambdas(germ.domain())?;
    let unit: Vec<(TestFunction, f64)> = ensemble
        .iter()
        .map(|psi| {
            let u = psi.unit();
            let norm = u.cr_norm(r);
            (u, norm)
        })
        .collect();
    let mut jobs = Vec::new();
    for &lambda in &lambdas {
        for (p, q) in grid.pairs(lambda) {
            for id in 0..unit.len() {
                jobs.push((p, q, lambda, id));
            }
        }
    }
    let rows: Vec<EnhancedRow> = jobs
        .par_iter()
        .map(|&(p, q, lambda, id)| {
            let (u, norm) = &unit[id];
            let num = if ensemble[id].amplitude() == 0.0 {
                0.0
            } else {
                germ.diff_pair(&p, &q, &u.rescale(&q, lambda)?)?.abs()
            };
            let ratio = if num == 0.0 {
                0.0
            } else if fit.exact || *norm == 0.0 {
                f64::INFINITY
            } else {
                num / (norm * fit.bound(p.dist(&q), lambda))
            };
            Ok(EnhancedRow {
                p,
                q,
                lambda,
                psi_id: id,
                ratio,
            })
        })
        .collect::<Result<_>>()?;
    let mut max_ratio = 0.0;
    let mut witness = None;
    for row in &rows {
        if row.ratio > max_ratio || (witness.is_none() && row.ratio >= max_ratio) {
            max_ratio = row.ratio;
            witness = Some(row.clone());
        }
    }
    Ok(EnhancedReport {
        order: r,
        max_ratio,
        witness,
        rows,
    })
}

/// Default reconstruction order r = max(1, ⌈−α̂⌉ + 1).
pub fn default_order(alpha: f64) -> u32 {
    if !alpha.is_finite() {
        return 1;
    }
    ((-alpha).ceil() + 1.0).max(1.0) as u32
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomogeneityRow {
    pub p: Point,
    pub lambda: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomogeneityReport {
    pub exact: bool,
    /// Fitted slope β̂ of ln|F_p(f^λ_p)| against ln λ.
    pub beta: f64,
    /// Smallest C with value ≤ C λ^β̂ on every usable row.
    pub constant: f64,
    pub rms: f64,
    pub rows_used: usize,
    pub rows: Vec<HomogeneityRow>,
}

/// |F_p(f^λ_p)| over scan points and dyadic λ, with a log–log slope fit.
pub fn homogeneity_scan(
    germ: &Germ,
    grid: &ScanGrid,
    f: &TestFunction,
) -> Result<HomogeneityReport> {
    check_test_function(f)?;
    let points = grid.scan_points();
    if points.is_empty() {
        return Err(Error::Config("homogeneity scan has no points".into()));
    }
    let lambdas = grid.lambdas(germ.domain())?;
    let jobs: Vec<(Point, f64)> = lambdas
        .iter()
        .flat_map(|&l| points.iter().map(move |p| (*p, l)))
        .collect();
    let rows: Vec<HomogeneityRow> = jobs
        .par_iter()
        .map(|&(p, lambda)| {
            let value = germ.pair(&p, &f.rescale(&p, lambda)?)?.abs();
            Ok(HomogeneityRow { p, lambda, value })
        })
        .collect::<Result<_>>()?;
    let usable: Vec<&HomogeneityRow> = rows.iter().filter(|r| r.value >= ZERO_CUTOFF).collect();
    if usable.is_empty() {
        return Ok(HomogeneityReport {
            exact: true,
            beta: f64::INFINITY,
            constant: 0.0,
            rms: 0.0,
            rows_used: 0,
            rows,
        });
    }
    let distinct = {
        let mut l: Vec<u64> = usable.iter().map(|r| r.lambda.to_bits()).collect();
        l.sort_unstable();
        l.dedup();
        l.len()
    };
    if distinct < 3 {
        return Err(Error::InsufficientData(format!(
            "nonzero values at only {distinct} scales"
        )));
    }
    let (b, rms) = least_squares(
        &usable
            .iter()
            .map(|r| vec![r.lambda.ln(), 1.0])
            .collect::<Vec<_>>(),
        &usable.iter().map(|r| r.value.ln()).collect::<Vec<_>>(),
    )?;
    let beta = b[0];
    let constant = usable
        .iter()
        .map(|r| r.value / r.lambda.powf(beta))
        .fold(0.0, f64::max);
    Ok(HomogeneityReport {
        exact: false,
        beta,
        constant,
        rms,
        rows_used: usable.len(),
        rows,
    })
}

/// Recentering: u^λ_q = ũ^{λ₁}_a with λ₁ = |q−a| + λ, ũ = u^{λ₂}_w,
/// λ₂ = λ/λ₁, w = (q−a)/λ₁. Returns (ũ, λ₁).
pub fn recenter(
    u: &TestFunction,
    q: &Point,
    a: &Point,
    lambda: f64,
) -> Result<(TestFunction, f64)> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!(
            "scale must be positive, got {lambda}"
        )));
    }
    let lambda1 = q.dist(a) + lambda;
    let lambda2 = lambda / lambda1;
    let w = (*q - *a) * (1.0 / lambda1);
    let tilde = u.rescale(&w, lambda2)?.mark_recentered();
    Ok((tilde, lambda1))
}

/// The same germ on a smaller open set V ⊆ U.
pub fn restrict(germ: &Germ, v: &OpenSetDomain) -> Result<Germ> {
    if !germ.domain().includes(v) {
        return Err(Error::Config(format!(
            "{v:?} is not contained in {:?}",
            germ.domain()
        )));
    }
    Ok(germ.clone().with_domain(v.clone()))
}

/// α̃_K: the FAR-fit α̂ on the enlarged compact K̄ = K + D_K/2, used for the
/// order threshold r > −α̃_K on open sets.
pub fn enlarged_alpha(germ: &Germ, grid: &ScanGrid, f: &TestFunction) -> Result<CoherenceReport> {
    let dk = germ.domain().d_k(&grid.k);
    if dk <= 0.0 {
        return Err(Error::Domain(
            "scan box is not compactly inside the domain".into(),
        ));
    }
    let mut enlarged = grid.clone();
    if dk.is_finite() {
        enlarged.k = grid.k.inflate(dk / 2.0);
    }
    fit_exponents(&coherence_scan(germ, &enlarged, f)?)
}
