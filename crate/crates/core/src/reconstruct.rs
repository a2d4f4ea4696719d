//! Local reconstruction by dyadic mollification, and residual diagnostics.

use std::sync::Arc;

use rayon::prelude::*;

use crate::coherence::{least_squares, ScanGrid, ZERO_CUTOFF};
use crate::distribution::{Distribution, OpenSetDomain};
use crate::geometry::Point;
use crate::germ::Germ;
use crate::testfn::TestFunction;
use crate::{Error, QuadratureSpec, Result};

/// Tolerance on ∫φ̂ − 1 checked at construction.
pub const INTEGRAL_TOLERANCE: f64 = 1e-10;
/// Tolerance on the vanishing moments of φ̌ checked at construction.
pub const MOMENT_TOLERANCE: f64 = 1e-8;

/// Moment-corrected mollifier: φ̂, φ̌ = φ̂^{1/2} − φ̂^{2}, ρ = φ̂^{2} ∗ φ̂.
#[derive(Clone, Debug)]
pub struct MollifierFamily {
    pub base: TestFunction,
    pub order: u32,
    pub base_radius: f64,
    pub scales: Vec<f64>,
    pub weights: Vec<f64>,
    pub corrected: TestFunction,
    pub difference: TestFunction,
    pub kernel: TestFunction,
}

fn multi_indices(dim: usize, max_order: u32) -> Vec<[u32; 2]> {
    let mut out = Vec::new();
    for total in 0..=max_order {
        if dim == 1 {
            out.push([total, 0]);
        } else {
            for i in 0..=total {
                out.push([total - i, i]);
            }
        }
    }
    out
}

/// Builds the family and verifies its integral, support and moment invariants.
pub fn build_mollifier(base: &TestFunction, r: u32) -> Result<MollifierFamily> {
    if r == 0 {
        return Err(Error::Config("mollifier order must be at least 1".into()));
    }
    let d = base.dim();
    let fine = QuadratureSpec::for_dim(d).doubled();
    let mass = base.integral(&fine);
    if mass.abs() < 1e-12 {
        return Err(Error::Domain(format!(
            "base test function has ∫φ = {mass:e}"
        )));
    }
    let centered = base.rescale(&Point::origin(d), 1.0)?;
    let radius = centered.support_radius();
    let scales: Vec<f64> = (0..r)
        .map(|i| 2f64.powi(-(i as i32) - 1) / (1.0 + radius))
        .collect();
    let weights: Vec<f64> = (0..scales.len())
        .map(|i| {
            (0..scales.len())
                .filter(|&k| k != i)
                .map(|k| scales[k] / (scales[k] - scales[i]))
                .product()
        })
        .collect();
    let origin = Point::origin(d);
    let terms = scales
        .iter()
        .zip(&weights)
        .map(|(l, c)| Ok((c / mass, centered.rescale(&origin, *l)?)))
        .collect::<Result<Vec<_>>>()?;
    let corrected = TestFunction::combination(terms)?;
    let difference = TestFunction::combination(vec![
        (1.0, corrected.rescale(&origin, 0.5)?),
        (-1.0, corrected.rescale(&origin, 2.0)?),
    ])?;
    let kernel = TestFunction::convolution(corrected.rescale(&origin, 2.0)?, corrected.clone())?;

    let total = corrected.integral(&fine);
    if (total - 1.0).abs() > INTEGRAL_TOLERANCE {
        return Err(Error::Construction(format!(
            "∫φ̂ = {total:.16e}, expected 1"
        )));
    }
    if corrected.support_radius() > 0.5 + 1e-12 {
        return Err(Error::Construction(format!(
            "φ̂ has support radius {} > 1/2",
            corrected.support_radius()
        )));
    }
    for k in multi_indices(d, r - 1) {
        let m = difference.moment(k, &origin, &fine);
        if m.abs() > MOMENT_TOLERANCE {
            return Err(Error::Construction(format!(
                "φ̌ moment {k:?} = {m:e} does not vanish"
            )));
        }
    }
    Ok(MollifierFamily {
        base: base.clone(),
        order: r,
        base_radius: radius,
        scales,
        weights,
        corrected,
        difference,
        kernel,
    })
}

impl MollifierFamily {
    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// ρ^ε_z.
    pub fn kernel_at(&self, z: &Point, eps: f64) -> Result<TestFunction> {
        self.kernel.rescale(z, eps)
    }

    /// |T(ρ^{ε/2}_z − ρ^ε_z) − T(φ̂^ε ∗ φ̌^ε at z)|: the telescoping defect paired against T.
    pub fn telescoping_defect(&self, t: &dyn Distribution, z: &Point, eps: f64) -> Result<f64> {
        let lhs = t.pair(&self.kernel_at(z, eps / 2.0)?)? - t.pair(&self.kernel_at(z, eps)?)?;
        let origin = Point::origin(self.dim());
        let rhs_fn = TestFunction::convolution(
            self.corrected.rescale(&origin, eps)?,
            self.difference.rescale(&origin, eps)?,
        )?
        .rescale(z, 1.0)?;
        Ok((lhs - t.pair(&rhs_fn)?).abs())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructOptions {
    pub n_max: u32,
    /// Smallest dyadic index tried.
    pub n_min: u32,
    pub tol_conv: f64,
    pub spec: QuadratureSpec,
    /// Fitted γ̂ from a prior coherence run; non-convergence is an error only when γ̂ > 0.
    pub gamma: Option<f64>,
    /// Evaluate every n up to n_max even after the increment test passes.
    pub full_sequence: bool,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        ReconstructOptions {
            n_max: 12,
            n_min: 2,
            tol_conv: 1e-7,
            spec: QuadratureSpec::default(),
            gamma: None,
            full_sequence: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceEntry {
    pub n: u32,
    pub eps: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub value: f64,
    pub converged: bool,
    pub n_star: u32,
    pub sequence: Vec<SequenceEntry>,
    /// Median ratio of successive increments.
    pub rate: Option<f64>,
    /// Aitken extrapolation from the last three terms; diagnostic only.
    pub extrapolated: Option<f64>,
}

/// R_n F(ψ) = ∫ F_z(ρ^{ε_n}_z) ψ(z) dz with ε_n = 2^{-n}·min(1, R_ψ).
pub fn reconstruct_term(
    germ: &Germ,
    m: &MollifierFamily,
    psi: &TestFunction,
    eps: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    if psi.is_zero() {
        return Ok(0.0);
    }
    let nodes = term_nodes(germ, psi, eps, spec);
    term_from_nodes(germ, m, &nodes, eps)
}

fn term_nodes(
    germ: &Germ,
    psi: &TestFunction,
    eps: f64,
    spec: &QuadratureSpec,
) -> Vec<(Point, f64)> {
    let hint = germ.frequency_hint();
    let freq = if hint.is_finite() { hint } else { 4.0 / eps };
    psi.weighted_nodes(spec, &[], &vec![freq; psi.dim()])
}

fn term_from_nodes(
    germ: &Germ,
    m: &MollifierFamily,
    nodes: &[(Point, f64)],
    eps: f64,
) -> Result<f64> {
    let values: Vec<f64> = nodes
        .par_iter()
        .map(|(z, w)| Ok(w * germ.pair(z, &m.kernel_at(z, eps)?)?))
        .collect::<Result<_>>()?;
    Ok(values.iter().sum())
}

/// Scale unit of the dyadic sequence for ψ: half the largest width of its
/// support box, capped at 1.
pub fn base_scale(psi: &TestFunction) -> f64 {
    (psi.support_box().max_width() / 2.0).min(1.0)
}

pub fn reconstruct_local(
    germ: &Germ,
    m: &MollifierFamily,
    psi: &TestFunction,
    opts: &ReconstructOptions,
) -> Result<Reconstruction> {
    if germ.dim() != m.dim() || psi.dim() != germ.dim() {
        return Err(Error::Config(
            "germ, mollifier and ψ dimensions differ".into(),
        ));
    }
    let unit = base_scale(psi);
    let margin = germ.domain().support_margin(psi);
    let eps = |n: u32| 2f64.powi(-(n as i32)) * unit;
    let reach = m.kernel.support_radius();
    let mut n0 = opts.n_min;
    while n0 < opts.n_max && reach * eps(n0) > margin {
        n0 += 1;
    }
    if reach * eps(n0) > margin || n0 >= opts.n_max {
        return Err(Error::Domain(format!(
            "supp ψ has margin {margin:e} to the domain boundary; the finest scale needs {:e}",
            reach * eps(opts.n_max)
        )));
    }
    let mut sequence = Vec::new();
    let mut n_star = None;
    let shared = if psi.is_zero() || !germ.frequency_hint().is_finite() {
        None
    } else {
        Some(term_nodes(germ, psi, 1.0, &opts.spec))
    };
    for n in n0..=opts.n_max {
        let value = match &shared {
            Some(nodes) => term_from_nodes(germ, m, nodes, eps(n))?,
            None => reconstruct_term(germ, m, psi, eps(n), &opts.spec)?,
        };
        sequence.push(SequenceEntry {
            n,
            eps: eps(n),
            value,
        });
        let k = sequence.len();
        if n_star.is_none()
            && k >= 2
            && (sequence[k - 1].value - sequence[k - 2].value).abs() < opts.tol_conv
        {
            n_star = Some(k - 2);
            if !opts.full_sequence {
                break;
            }
        }
    }
    let increments: Vec<f64> = sequence
        .windows(2)
        .map(|w| (w[1].value - w[0].value).abs())
        .collect();
    let mut ratios: Vec<f64> = increments
        .windows(2)
        .filter(|w| w[0] > 1e-14 && w[1] > 1e-14)
        .map(|w| w[1] / w[0])
        .collect();
    ratios.sort_by(f64::total_cmp);
    let rate = (!ratios.is_empty()).then(|| ratios[ratios.len() / 2]);
    let extrapolated = (sequence.len() >= 3).then(|| {
        let k = sequence.len();
        let (a, b, c) = (
            sequence[k - 3].value,
            sequence[k - 2].value,
            sequence[k - 1].value,
        );
        let denom = c - 2.0 * b + a;
        if denom.abs() < 1e-300 {
            c
        } else {
            c - (c - b) * (c - b) / denom
        }
    });
    let converged = n_star.is_some();
    if !converged && opts.gamma.is_some_and(|g| g > 0.0) {
        return Err(Error::NonConvergence {
            n_max: opts.n_max,
            last_increment: increments.last().copied().unwrap_or(f64::NAN),
        });
    }
    let idx = n_star.unwrap_or(sequence.len() - 1);
    Ok(Reconstruction {
        value: sequence[idx].value,
        converged,
        n_star: sequence[idx].n,
        sequence,
        rate,
        extrapolated,
    })
}

/// The reconstructed distribution RF on the germ's domain.
#[derive(Clone, Debug)]
pub struct LocalReconstruction {
    pub germ: Arc<Germ>,
    pub mollifier: Arc<MollifierFamily>,
    pub options: ReconstructOptions,
}

impl LocalReconstruction {
    pub fn new(
        germ: Arc<Germ>,
        mollifier: Arc<MollifierFamily>,
        options: ReconstructOptions,
    ) -> LocalReconstruction {
        LocalReconstruction {
            germ,
            mollifier,
            options,
        }
    }

    pub fn run(&self, psi: &TestFunction) -> Result<Reconstruction> {
        reconstruct_local(&self.germ, &self.mollifier, psi, &self.options)
    }
}

impl Distribution for LocalReconstruction {
    fn dim(&self) -> usize {
        self.germ.dim()
    }

    fn pair(&self, f: &TestFunction) -> Result<f64> {
        Ok(self.run(f)?.value)
    }

    fn domain(&self) -> OpenSetDomain {
        self.germ.domain().clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualRow {
    pub p: Point,
    pub lambda: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReport {
    pub rows: Vec<ResidualRow>,
    /// Fitted slope of ln residual against ln λ (NaN if fewer than three usable scales).
    pub slope: f64,
    pub rms: f64,
    /// Least-squares C in residual ≈ C(1 + |ln λ|).
    pub envelope_constant: f64,
    /// Slope of ln(residual / (1 + |ln λ|)) against ln λ.
    pub envelope_slope: f64,
}

/// |(RF − F_p)(h^λ_p)| over the grid's scan points and scales.
pub fn residual_scan(
    germ: &Germ,
    rf: &dyn Distribution,
    grid: &ScanGrid,
    h: &TestFunction,
) -> Result<ResidualReport> {
    let lambdas = grid.lambdas(germ.domain())?;
    let points = grid.scan_points();
    let mut rows = Vec::new();
    for &lambda in &lambdas {
        for p in &points {
            let hl = h.rescale(p, lambda)?;
            let residual = (rf.pair(&hl)? - germ.pair(p, &hl)?).abs();
            rows.push(ResidualRow {
                p: *p,
                lambda,
                residual,
            });
        }
    }
    let usable: Vec<&ResidualRow> = rows.iter().filter(|r| r.residual >= ZERO_CUTOFF).collect();
    let mut scales: Vec<u64> = usable.iter().map(|r| r.lambda.to_bits()).collect();
    scales.sort_unstable();
    scales.dedup();
    let (mut slope, mut rms, mut envelope_slope) = (f64::NAN, f64::NAN, f64::NAN);
    if scales.len() >= 3 {
        let x: Vec<Vec<f64>> = usable.iter().map(|r| vec![r.lambda.ln(), 1.0]).collect();
        let (b, e) = least_squares(
            &x,
            &usable.iter().map(|r| r.residual.ln()).collect::<Vec<_>>(),
        )?;
        slope = b[0];
        rms = e;
        let (b, _) = least_squares(
            &x,
            &usable
                .iter()
                .map(|r| (r.residual / (1.0 + r.lambda.ln().abs())).ln())
                .collect::<Vec<_>>(),
        )?;
        envelope_slope = b[0];
    }
    let (num, den) = rows.iter().fold((0.0, 0.0), |(n, d), r| {
        let e = 1.0 + r.lambda.ln().abs();
        (n + r.residual * e, d + e * e)
    });
    Ok(ResidualReport {
        rows,
        slope,
        rms,
        envelope_constant: if den > 0.0 { num / den } else { 0.0 },
        envelope_slope,
    })
}
