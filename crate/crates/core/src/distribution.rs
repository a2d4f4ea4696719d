//! Distributions as pairing oracles on open subsets of ℝ^d.
//!
//! Transform convention: (φ_*T)(h) := T(h ∘ φ), and χ^* := (χ^{-1})_*. A
//! density u therefore pushes forward to (u ∘ φ^{-1})·|det Dφ^{-1}|.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::diffeo::{compose_test, Diffeo};
use crate::geometry::{Bx, Point};
use crate::quadrature::QuadratureSpec;
use crate::testfn::{binom, TestFunction};
use crate::{Error, Result};

/// One term `amp · cos(freq · y − phase)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrigTerm {
    pub amp: f64,
    pub freq: Point,
    pub phase: f64,
}

/// Smooth functions with closed-form derivatives, pairings and affine changes
/// of variables.
#[derive(Clone, Debug, PartialEq)]
pub enum SmoothFn {
    /// Σ c_k (y − center)^k over multi-indices k.
    Poly {
        center: Point,
        terms: Vec<([u32; 2], f64)>,
    },
    /// Σ amp · cos(freq · y − phase).
    Trig {
        dim: usize,
        terms: Vec<TrigTerm>,
    },
    Sum(Vec<SmoothFn>),
}

fn monomial(y: &Point, k: [u32; 2]) -> f64 {
    let mut v = y.get(0).powi(k[0] as i32);
    if y.dim() > 1 {
        v *= y.get(1).powi(k[1] as i32);
    }
    v
}

impl SmoothFn {
    pub fn constant(dim: usize, c: f64) -> SmoothFn {
        SmoothFn::Poly {
            center: Point::origin(dim),
            terms: vec![([0, 0], c)],
        }
    }

    /// Σ_j coeffs[j] (y − center)^j in d = 1.
    pub fn poly_1d(center: f64, coeffs: &[f64]) -> SmoothFn {
        SmoothFn::Poly {
            center: Point::x(center),
            terms: coeffs
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(j, c)| ([j as u32, 0], *c))
                .collect(),
        }
    }

    pub fn cosine(amp: f64, freq: Point, phase: f64) -> SmoothFn {
        SmoothFn::Trig {
            dim: freq.dim(),
            terms: vec![TrigTerm { amp, freq, phase }],
        }
    }

    pub fn sine_1d(amp: f64, freq: f64) -> SmoothFn {
        SmoothFn::cosine(amp, Point::x(freq), FRAC_PI_2)
    }

    /// W(y) = Σ_{j=0}^{J} 2^{-ja} cos(2^j y − phase), scaled by `amp`.
    pub fn lacunary(a: f64, truncation: u32, phase: f64, amp: f64) -> SmoothFn {
        SmoothFn::Trig {
            dim: 1,
            terms: (0..=truncation)
                .map(|j| TrigTerm {
                    amp: amp * 2f64.powf(-(j as f64) * a),
                    freq: Point::x(2f64.powi(j as i32)),
                    phase,
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SmoothFn::Poly { center, .. } => center.dim(),
            SmoothFn::Trig { dim, .. } => *dim,
            SmoothFn::Sum(v) => v.first().map(|f| f.dim()).unwrap_or(1),
        }
    }

    pub fn eval(&self, y: &Point) -> f64 {
        match self {
            SmoothFn::Poly { center, terms } => {
                let z = *y - *center;
                terms.iter().map(|(k, c)| c * monomial(&z, *k)).sum()
            }
            SmoothFn::Trig { terms, .. } => terms
                .iter()
                .map(|t| t.amp * (t.freq.dot(y) - t.phase).cos())
                .sum(),
            SmoothFn::Sum(v) => v.iter().map(|f| f.eval(y)).sum(),
        }
    }

    /// k-th derivative in d = 1.
    pub fn derivative_1d(&self, y: f64, k: u32) -> f64 {
        match self {
            SmoothFn::Poly { center, terms } => {
                let z = y - center.get(0);
                terms
                    .iter()
                    .filter(|(e, _)| e[0] >= k)
                    .map(|(e, c)| {
                        let falling: f64 = (0..k).map(|i| (e[0] - i) as f64).product();
                        c * falling * z.powi((e[0] - k) as i32)
                    })
                    .sum()
            }
            SmoothFn::Trig { terms, .. } => terms
                .iter()
                .map(|t| {
                    let w = t.freq.get(0);
                    t.amp * w.powi(k as i32) * (w * y - t.phase + k as f64 * FRAC_PI_2).cos()
                })
                .sum(),
            SmoothFn::Sum(v) => v.iter().map(|f| f.derivative_1d(y, k)).sum(),
        }
    }

    /// The derivative as a smooth function (d = 1).
    pub fn differentiate_1d(&self) -> SmoothFn {
        match self {
            SmoothFn::Poly { center, terms } => SmoothFn::Poly {
                center: *center,
                terms: terms
                    .iter()
                    .filter(|(e, _)| e[0] > 0)
                    .map(|(e, c)| ([e[0] - 1, 0], c * e[0] as f64))
                    .collect(),
            },
            SmoothFn::Trig { dim, terms } => SmoothFn::Trig {
                dim: *dim,
                terms: terms
                    .iter()
                    .map(|t| TrigTerm {
                        amp: t.amp * t.freq.get(0),
                        freq: t.freq,
                        phase: t.phase - FRAC_PI_2,
                    })
                    .collect(),
            },
            SmoothFn::Sum(v) => SmoothFn::Sum(v.iter().map(|f| f.differentiate_1d()).collect()),
        }
    }

    pub fn max_frequency(&self) -> f64 {
        match self {
            SmoothFn::Poly { .. } => 0.0,
            SmoothFn::Trig { terms, .. } => terms.iter().map(|t| t.freq.norm()).fold(0.0, f64::max),
            SmoothFn::Sum(v) => v.iter().map(|f| f.max_frequency()).fold(0.0, f64::max),
        }
    }

    pub fn scaled(&self, c: f64) -> SmoothFn {
        match self {
            SmoothFn::Poly { center, terms } => SmoothFn::Poly {
                center: *center,
                terms: terms.iter().map(|(k, v)| (*k, v * c)).collect(),
            },
            SmoothFn::Trig { dim, terms } => SmoothFn::Trig {
                dim: *dim,
                terms: terms
                    .iter()
                    .map(|t| TrigTerm {
                        amp: t.amp * c,
                        ..*t
                    })
                    .collect(),
            },
            SmoothFn::Sum(v) => SmoothFn::Sum(v.iter().map(|f| f.scaled(c)).collect()),
        }
    }

    /// ∫ u f, exact up to the quadrature of f's own moments or Fourier transform.
    pub fn pair(&self, f: &TestFunction, spec: &QuadratureSpec) -> f64 {
        match self {
            SmoothFn::Poly { center, terms } => terms
                .iter()
                .map(|(k, c)| c * f.moment(*k, center, spec))
                .sum(),
            SmoothFn::Trig { terms, .. } => terms
                .iter()
                .map(|t| {
                    // ∫ cos(ω·y − φ) f(y) dy = Re(e^{-iφ} f̂(ω))
                    let fh = f.fourier(&t.freq, spec);
                    t.amp * (Complex64::from_polar(1.0, -t.phase) * fh).re
                })
                .sum(),
            SmoothFn::Sum(v) => v.iter().map(|g| g.pair(f, spec)).sum(),
        }
    }

    /// x ↦ factor · u((x − b) ⊘ s).
    pub fn compose_inverse_affine(&self, s: &Point, b: &Point, factor: f64) -> SmoothFn {
        match self {
            SmoothFn::Poly { center, terms } => SmoothFn::Poly {
                center: center.map(|i, c| b.get(i) + s.get(i) * c),
                terms: terms
                    .iter()
                    .map(|(k, c)| {
                        let mut m = factor * c * s.get(0).powi(-(k[0] as i32));
                        if s.dim() > 1 {
                            m *= s.get(1).powi(-(k[1] as i32));
                        }
                        (*k, m)
                    })
                    .collect(),
            },
            SmoothFn::Trig { dim, terms } => SmoothFn::Trig {
                dim: *dim,
                terms: terms
                    .iter()
                    .map(|t| {
                        let freq = t.freq.map(|i, w| w / s.get(i));
                        TrigTerm {
                            amp: factor * t.amp,
                            freq,
                            phase: t.phase + freq.dot(b),
                        }
                    })
                    .collect(),
            },
            SmoothFn::Sum(v) => SmoothFn::Sum(
                v.iter()
                    .map(|f| f.compose_inverse_affine(s, b, factor))
                    .collect(),
            ),
        }
    }

    /// Degree-k Taylor polynomial at x (d = 1).
    pub fn taylor_1d(&self, x: f64, k: u32) -> SmoothFn {
        let mut fact = 1.0;
        let mut coeffs = Vec::with_capacity(k as usize + 1);
        for j in 0..=k {
            if j > 0 {
                fact *= j as f64;
            }
            coeffs.push(self.derivative_1d(x, j) / fact);
        }
        SmoothFn::Poly {
            center: Point::x(x),
            terms: coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| ([j as u32, 0], *c))
                .collect(),
        }
    }
}

/// Re-expand Σ c_j (y − a)^j around b: returns coefficients of (y − b)^i.
pub fn recenter_poly_1d(coeffs: &[f64], a: f64, b: f64) -> Vec<f64> {
    let shift = b - a;
    let mut out = vec![0.0; coeffs.len()];
    for (j, c) in coeffs.iter().enumerate() {
        for (i, o) in out.iter_mut().enumerate().take(j + 1) {
            *o += c * binom(j as u32, i as u32) * shift.powi((j - i) as i32);
        }
    }
    out
}

/// A locally integrable function used as a density.
#[derive(Clone, Debug)]
pub enum Density {
    Smooth(SmoothFn),
    /// `value` on the box, zero elsewhere.
    Indicator {
        region: Bx,
        value: f64,
    },
    /// The pushforward of `inner` through `map`.
    Pushed {
        inner: Box<Density>,
        map: Diffeo,
    },
}

impl Density {
    pub fn dim(&self) -> usize {
        match self {
            Density::Smooth(f) => f.dim(),
            Density::Indicator { region, .. } => region.dim(),
            Density::Pushed { inner, .. } => inner.dim(),
        }
    }

    pub fn eval(&self, y: &Point) -> f64 {
        match self {
            Density::Smooth(f) => f.eval(y),
            Density::Indicator { region, value } => {
                if region.contains(y) {
                    *value
                } else {
                    0.0
                }
            }
            Density::Pushed { inner, map } => {
                let Ok(x) = map.inverse(y) else {
                    return f64::NAN;
                };
                let Ok(j) = map.jacobian_det(&x) else {
                    return f64::NAN;
                };
                inner.eval(&x) / j.abs()
            }
        }
    }

    fn breakpoints(&self) -> Vec<Vec<f64>> {
        match self {
            Density::Smooth(_) => Vec::new(),
            Density::Indicator { region, .. } => (0..region.dim())
                .map(|i| vec![region.lo.get(i), region.hi.get(i)])
                .collect(),
            Density::Pushed { inner, map } => inner
                .breakpoints()
                .iter()
                .enumerate()
                .map(|(i, br)| {
                    br.iter()
                        .map(|b| {
                            let mut p = Point::origin(inner.dim());
                            p.set(i, *b);
                            map.forward(&p).get(i)
                        })
                        .collect()
                })
                .collect(),
        }
    }

    fn max_frequency(&self) -> f64 {
        match self {
            Density::Smooth(f) => f.max_frequency(),
            Density::Indicator { .. } => 0.0,
            Density::Pushed { inner, .. } => 4.0 * inner.max_frequency(),
        }
    }

    pub fn pair(&self, f: &TestFunction, spec: &QuadratureSpec) -> f64 {
        if let Density::Smooth(u) = self {
            return u.pair(f, spec);
        }
        let w = self.max_frequency();
        f.weighted_nodes(spec, &self.breakpoints(), &vec![w; f.dim()])
            .iter()
            .map(|(y, wt)| wt * self.eval(y))
            .sum()
    }

    fn pushforward(&self, map: &Diffeo) -> Density {
        if let (Density::Smooth(u), Some((s, b))) = (self, map.as_affine()) {
            let det: f64 = s.as_slice().iter().product();
            return Density::Smooth(u.compose_inverse_affine(&s, &b, 1.0 / det.abs()));
        }
        if let (Density::Indicator { region, value }, Some((s, _))) = (self, map.as_affine()) {
            let det: f64 = s.as_slice().iter().product();
            if let Ok(img) = map.image_box(region) {
                return Density::Indicator {
                    region: img,
                    value: value / det.abs(),
                };
            }
        }
        Density::Pushed {
            inner: Box::new(self.clone()),
            map: map.clone(),
        }
    }
}

/// An open subset of ℝ^d.
#[derive(Clone, Debug, PartialEq)]
pub enum OpenSetDomain {
    Whole(usize),
    /// Interior of the box.
    Box(Bx),
    Ball {
        center: Point,
        radius: f64,
    },
}

impl OpenSetDomain {
    pub fn interval(lo: f64, hi: f64) -> OpenSetDomain {
        OpenSetDomain::Box(Bx::interval(lo, hi))
    }

    pub fn dim(&self) -> usize {
        match self {
            OpenSetDomain::Whole(d) => *d,
            OpenSetDomain::Box(b) => b.dim(),
            OpenSetDomain::Ball { center, .. } => center.dim(),
        }
    }

    /// Signed distance to ∂U, positive inside; +∞ for the whole space.
    pub fn boundary_distance(&self, p: &Point) -> f64 {
        match self {
            OpenSetDomain::Whole(_) => f64::INFINITY,
            OpenSetDomain::Box(b) => (0..b.dim())
                .map(|i| (p.get(i) - b.lo.get(i)).min(b.hi.get(i) - p.get(i)))
                .fold(f64::INFINITY, f64::min),
            OpenSetDomain::Ball { center, radius } => radius - p.dist(center),
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.boundary_distance(p) > 0.0
    }

    /// D_K = dist(∂U, K) for a compact box K; non-positive when K ⊄ U.
    pub fn d_k(&self, k: &Bx) -> f64 {
        match self {
            OpenSetDomain::Whole(_) => f64::INFINITY,
            OpenSetDomain::Box(b) => b.face_margin(k),
            OpenSetDomain::Ball { center, radius } => {
                let far = (0..(1usize << k.dim()))
                    .map(|mask| {
                        let corner =
                            k.lo.map(|i, lo| if mask >> i & 1 == 1 { k.hi.get(i) } else { lo });
                        corner.dist(center)
                    })
                    .fold(0.0, f64::max);
                radius - far
            }
        }
    }

    pub fn contains_box(&self, k: &Bx) -> bool {
        self.d_k(k) > 0.0
    }

    /// Distance from the support of f to ∂U; negative when f reaches outside U.
    pub fn support_margin(&self, f: &TestFunction) -> f64 {
        match self {
            OpenSetDomain::Whole(_) => f64::INFINITY,
            OpenSetDomain::Box(b) => b.face_margin(&f.support_box()),
            OpenSetDomain::Ball { center, radius } => {
                radius - f.center().dist(center) - f.support_radius()
            }
        }
    }

    /// Whether `other` ⊆ `self`.
    pub fn includes(&self, other: &OpenSetDomain) -> bool {
        match (self, other) {
            (OpenSetDomain::Whole(_), _) => true,
            (_, OpenSetDomain::Whole(_)) => false,
            (_, OpenSetDomain::Box(b)) => self.d_k(b) >= 0.0,
            (OpenSetDomain::Box(_), OpenSetDomain::Ball { center, radius }) => {
                self.d_k(&Bx::around(*center, *radius)) >= 0.0
            }
            (
                OpenSetDomain::Ball {
                    center: c1,
                    radius: r1,
                },
                OpenSetDomain::Ball {
                    center: c2,
                    radius: r2,
                },
            ) => c1.dist(c2) + r2 <= *r1,
        }
    }

    pub fn bounding_box(&self) -> Option<Bx> {
        match self {
            OpenSetDomain::Whole(_) => None,
            OpenSetDomain::Box(b) => Some(*b),
            OpenSetDomain::Ball { center, radius } => Some(Bx::around(*center, *radius)),
        }
    }

    /// φ(U), exact for boxes and for balls under isotropic affine maps,
    /// otherwise the bounding box of the image.
    pub fn image(&self, map: &Diffeo) -> Result<OpenSetDomain> {
        match self {
            OpenSetDomain::Whole(d) => Ok(OpenSetDomain::Whole(*d)),
            OpenSetDomain::Box(b) => Ok(OpenSetDomain::Box(map.image_box(b)?)),
            OpenSetDomain::Ball { center, radius } => match map.as_isotropic_affine() {
                Some((s, _)) => Ok(OpenSetDomain::Ball {
                    center: map.forward(center),
                    radius: s * radius,
                }),
                None => Ok(OpenSetDomain::Box(
                    map.image_box(&Bx::around(*center, *radius))?,
                )),
            },
        }
    }
}

/// Result of a pairing together with the out-of-domain diagnostic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pairing {
    pub value: f64,
    pub out_of_domain: bool,
}

/// Anything that can be paired with test functions.
pub trait Distribution: Send + Sync {
    fn dim(&self) -> usize;
    fn pair(&self, f: &TestFunction) -> Result<f64>;
    fn domain(&self) -> OpenSetDomain {
        OpenSetDomain::Whole(self.dim())
    }
    /// An upper bound on the angular frequencies of the distribution, or
    /// infinity when it is not a band-limited smooth function.
    fn frequency_hint(&self) -> f64 {
        f64::INFINITY
    }
    /// The pairing, plus a flag when supp f is not inside the domain. The
    /// value is still computed (densities are extended by zero).
    fn pair_flagged(&self, f: &TestFunction) -> Result<Pairing> {
        Ok(Pairing {
            value: self.pair(f)?,
            out_of_domain: self.domain().support_margin(f) < 0.0,
        })
    }
}

/// The lacunary series W_a(y) = Σ_{j=0}^{J} 2^{-ja} cos(2^j y − phase) or its
/// derivative Σ 2^{j(1−a)} cos(2^j y − phase + π/2).
#[derive(Clone, Debug, PartialEq)]
pub struct LacunarySeries {
    pub exponent: f64,
    pub truncation: u32,
    pub derivative: bool,
    pub phase: f64,
    pub amplitude: f64,
}

impl LacunarySeries {
    pub fn new(exponent: f64, truncation: u32, derivative: bool) -> LacunarySeries {
        LacunarySeries {
            exponent,
            truncation,
            derivative,
            phase: 0.0,
            amplitude: 1.0,
        }
    }

    pub fn as_smooth(&self) -> SmoothFn {
        let w = SmoothFn::lacunary(self.exponent, self.truncation, self.phase, self.amplitude);
        if self.derivative {
            w.differentiate_1d()
        } else {
            w
        }
    }

    /// Nominal regularity: a for the series, a − 1 for its derivative.
    pub fn regularity(&self) -> f64 {
        if self.derivative {
            self.exponent - 1.0
        } else {
            self.exponent
        }
    }
}

#[derive(Clone)]
pub enum Backing {
    Density(Density),
    DiracComb {
        locations: Vec<Point>,
        weights: Vec<f64>,
    },
    Lacunary {
        series: LacunarySeries,
        terms: SmoothFn,
    },
    Pushforward {
        inner: Arc<dyn Distribution>,
        map: Diffeo,
    },
    Combination(Vec<(f64, PairingOracle)>),
}

impl fmt::Debug for Backing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backing::Density(d) => write!(f, "Density({d:?})"),
            Backing::DiracComb { locations, weights } => {
                write!(f, "DiracComb({locations:?}, {weights:?})")
            }
            Backing::Lacunary { series, .. } => write!(f, "Lacunary({series:?})"),
            Backing::Pushforward { map, .. } => write!(f, "Pushforward(.., {map:?})"),
            Backing::Combination(v) => f.debug_list().entries(v.iter()).finish(),
        }
    }
}

/// A distribution as a functional on test functions.
#[derive(Clone, Debug)]
pub struct PairingOracle {
    dim: usize,
    backing: Backing,
    domain: OpenSetDomain,
    spec: QuadratureSpec,
}

impl PairingOracle {
    fn new(dim: usize, backing: Backing) -> PairingOracle {
        PairingOracle {
            dim,
            backing,
            domain: OpenSetDomain::Whole(dim),
            spec: QuadratureSpec::for_dim(dim),
        }
    }

    pub fn density(d: Density) -> PairingOracle {
        PairingOracle::new(d.dim(), Backing::Density(d))
    }

    pub fn smooth(u: SmoothFn) -> PairingOracle {
        PairingOracle::density(Density::Smooth(u))
    }

    pub fn indicator(region: Bx, value: f64) -> PairingOracle {
        PairingOracle::density(Density::Indicator { region, value })
    }

    pub fn zero(dim: usize) -> PairingOracle {
        PairingOracle::smooth(SmoothFn::constant(dim, 0.0))
    }

    pub fn dirac(at: Point) -> PairingOracle {
        PairingOracle::dirac_comb(vec![at], vec![1.0]).expect("one location, one weight")
    }

    pub fn dirac_comb(locations: Vec<Point>, weights: Vec<f64>) -> Result<PairingOracle> {
        if locations.len() != weights.len() || locations.is_empty() {
            return Err(Error::Config(
                "Dirac comb needs one weight per location".into(),
            ));
        }
        let dim = locations[0].dim();
        Ok(PairingOracle::new(
            dim,
            Backing::DiracComb { locations, weights },
        ))
    }

    pub fn lacunary(series: LacunarySeries) -> PairingOracle {
        let terms = series.as_smooth();
        PairingOracle::new(1, Backing::Lacunary { series, terms })
    }

    pub fn combination(terms: Vec<(f64, PairingOracle)>) -> Result<PairingOracle> {
        let dim = terms
            .first()
            .map(|(_, t)| t.dim)
            .ok_or_else(|| Error::Config("empty combination of distributions".into()))?;
        if terms.iter().any(|(_, t)| t.dim != dim) {
            return Err(Error::Config("combination of mismatched dimensions".into()));
        }
        Ok(PairingOracle::new(dim, Backing::Combination(terms)))
    }

    /// Wraps any distribution, transported through `map`.
    pub fn transported(inner: Arc<dyn Distribution>, map: Diffeo) -> Result<PairingOracle> {
        if !map.has_inverse() || !map.has_jacobian() {
            return Err(Error::Config(format!(
                "{map:?} lacks an inverse or Jacobian evaluator"
            )));
        }
        let domain = inner.domain().image(&map)?;
        let mut out = PairingOracle::new(inner.dim(), Backing::Pushforward { inner, map });
        out.domain = domain;
        Ok(out)
    }

    pub fn with_domain(mut self, domain: OpenSetDomain) -> PairingOracle {
        self.domain = domain;
        self
    }

    pub fn with_spec(mut self, spec: QuadratureSpec) -> PairingOracle {
        self.spec = spec;
        self
    }

    pub fn spec(&self) -> &QuadratureSpec {
        &self.spec
    }

    pub fn backing(&self) -> &Backing {
        &self.backing
    }

    pub fn scaled(&self, c: f64) -> PairingOracle {
        PairingOracle {
            backing: Backing::Combination(vec![(c, self.clone())]),
            ..self.clone()
        }
    }

    /// Largest angular frequency present, used to refine quadrature panels.
    pub fn max_frequency(&self) -> f64 {
        match &self.backing {
            Backing::Density(d) => d.max_frequency(),
            Backing::Lacunary { terms, .. } => terms.max_frequency(),
            Backing::Combination(v) => v.iter().map(|(_, t)| t.max_frequency()).fold(0.0, f64::max),
            _ => 0.0,
        }
    }

    fn pair_impl(&self, f: &TestFunction) -> Result<f64> {
        if f.dim() != self.dim {
            return Err(Error::Domain(format!(
                "test function of dimension {} paired with a distribution on ℝ^{}",
                f.dim(),
                self.dim
            )));
        }
        Ok(match &self.backing {
            Backing::Density(d) => d.pair(f, &self.spec),
            Backing::DiracComb { locations, weights } => locations
                .iter()
                .zip(weights)
                .map(|(y, w)| w * f.eval(y))
                .sum(),
            Backing::Lacunary { terms, .. } => terms.pair(f, &self.spec),
            Backing::Pushforward { inner, map } => inner.pair(&compose_test(f, map)?)?,
            Backing::Combination(v) => {
                let mut s = 0.0;
                for (c, t) in v {
                    s += c * t.pair_impl(f)?;
                }
                s
            }
        })
    }
}

impl Distribution for PairingOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn pair(&self, f: &TestFunction) -> Result<f64> {
        self.pair_impl(f)
    }

    fn domain(&self) -> OpenSetDomain {
        self.domain.clone()
    }

    fn frequency_hint(&self) -> f64 {
        match &self.backing {
            Backing::Density(Density::Smooth(f)) => f.max_frequency(),
            Backing::Density(_) | Backing::DiracComb { .. } => f64::INFINITY,
            Backing::Lacunary { terms, .. } => terms.max_frequency(),
            Backing::Pushforward { inner, map } => match map.as_affine() {
                Some((scale, _)) => {
                    let stretch = scale
                        .as_slice()
                        .iter()
                        .map(|s| 1.0 / s.abs())
                        .fold(0.0, f64::max);
                    inner.frequency_hint() * stretch
                }
                None => f64::INFINITY,
            },
            Backing::Combination(v) => v
                .iter()
                .map(|(_, t)| t.frequency_hint())
                .fold(0.0, f64::max),
        }
    }
}

/// φ_*T: the distribution h ↦ T(h ∘ φ) on φ(U).
pub fn pushforward_chart(t: &PairingOracle, map: &Diffeo) -> Result<PairingOracle> {
    if !map.has_inverse() || !map.has_jacobian() {
        return Err(Error::Config(format!(
            "{map:?} lacks an inverse or Jacobian evaluator"
        )));
    }
    if map.dim() != t.dim {
        return Err(Error::Config(
            "map and distribution dimensions differ".into(),
        ));
    }
    let backing = match &t.backing {
        Backing::Density(d) => Backing::Density(d.pushforward(map)),
        Backing::DiracComb { locations, weights } => Backing::DiracComb {
            locations: locations.iter().map(|y| map.forward(y)).collect(),
            weights: weights.clone(),
        },
        Backing::Lacunary { terms, .. } if map.as_affine().is_some() => {
            Backing::Density(Density::Smooth(terms.clone()).pushforward(map))
        }
        Backing::Combination(v) => Backing::Combination(
            v.iter()
                .map(|(c, s)| Ok((*c, pushforward_chart(s, map)?)))
                .collect::<Result<Vec<_>>>()?,
        ),
        Backing::Pushforward { inner, map: first } => Backing::Pushforward {
            inner: inner.clone(),
            map: first.then(map),
        },
        Backing::Lacunary { .. } => Backing::Pushforward {
            inner: Arc::new(t.clone()),
            map: map.clone(),
        },
    };
    Ok(PairingOracle {
        dim: t.dim,
        backing,
        domain: t.domain.image(map)?,
        spec: t.spec,
    })
}

/// χ^*S := (χ^{-1})_*S.
pub fn pullback_chart(s: &PairingOracle, chi: &Diffeo) -> Result<PairingOracle> {
    if !chi.has_inverse() || !chi.has_jacobian() {
        return Err(Error::Config(format!(
            "{chi:?} lacks an inverse or Jacobian evaluator"
        )));
    }
    pushforward_chart(s, &chi.inverted())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testfn::unit_integral_bump;
    use std::f64::consts::PI;

    fn q() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn indicator_pairs_to_one() {
        let t = PairingOracle::indicator(Bx::interval(0.0, 1.0), 1.0);
        let f = unit_integral_bump(1).rescale(&Point::x(0.5), 0.3).unwrap();
        assert!((t.pair(&f).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dirac_pairing() {
        let g = TestFunction::bump(1);
        let t = PairingOracle::dirac(Point::x(0.0));
        let f = g.rescale(&Point::x(0.1), 0.25).unwrap();
        let want = 4.0 * g.eval(&Point::x(-0.4));
        assert!((t.pair(&f).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn sine_near_peak() {
        let t = PairingOracle::smooth(SmoothFn::sine_1d(1.0, 1.0));
        let f = unit_integral_bump(1)
            .rescale(&Point::x(PI / 2.0), 0.01)
            .unwrap();
        assert!((t.pair(&f).unwrap() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn lacunary_derivative_terms() {
        let s = LacunarySeries::new(0.4, 12, true);
        let d = s.as_smooth();
        for &y in &[0.1, 0.7, 2.3] {
            let want: f64 = (0..=12)
                .map(|j| -(2f64.powf(j as f64 * 0.6)) * (2f64.powi(j) * y).sin())
                .sum();
            assert!((d.eval(&Point::x(y)) - want).abs() < 1e-9 * want.abs().max(1.0));
        }
        assert!((s.regularity() + 0.6).abs() < 1e-15);
    }

    #[test]
    fn trig_pairing_matches_quadrature() {
        let u = SmoothFn::lacunary(0.5, 8, 0.3, 1.0);
        let f = TestFunction::bump(1).rescale(&Point::x(0.4), 0.2).unwrap();
        let nodes = f.weighted_nodes(&q(), &[], &[u.max_frequency()]);
        let direct: f64 = nodes.iter().map(|(y, w)| w * u.eval(y)).sum();
        assert!((u.pair(&f, &q()) - direct).abs() < 1e-12);
    }

    #[test]
    fn pushforward_identity_and_translation() {
        let t = PairingOracle::smooth(SmoothFn::Sum(vec![
            SmoothFn::poly_1d(0.2, &[1.0, -0.5, 0.3]),
            SmoothFn::sine_1d(0.7, 3.0),
        ]));
        let id = pushforward_chart(&t, &Diffeo::identity(1)).unwrap();
        for i in 0..10 {
            let f = TestFunction::bump(1)
                .rescale(&Point::x(-1.0 + 0.2 * i as f64), 0.1 + 0.03 * i as f64)
                .unwrap();
            assert!((id.pair(&f).unwrap() - t.pair(&f).unwrap()).abs() < 1e-12);
        }
        let d = pushforward_chart(
            &PairingOracle::dirac(Point::x(0.0)),
            &Diffeo::translation(Point::x(1.0)),
        )
        .unwrap();
        let f = TestFunction::bump(1).rescale(&Point::x(0.8), 0.5).unwrap();
        assert_eq!(d.pair(&f).unwrap(), f.eval(&Point::x(1.0)));
    }

    #[test]
    fn pushforward_indicator_by_doubling() {
        let t = PairingOracle::indicator(Bx::interval(0.0, 1.0), 1.0);
        let p = pushforward_chart(&t, &Diffeo::affine(2.0, Point::x(0.0))).unwrap();
        let f = unit_integral_bump(1).rescale(&Point::x(1.0), 0.6).unwrap();
        assert!((p.pair(&f).unwrap() - 0.5).abs() < 1e-9);
        // The same through a non-affine code path.
        let warped = Diffeo::Compose(vec![
            Diffeo::affine(2.0, Point::x(0.0)),
            Diffeo::identity(1),
        ]);
        let r = PairingOracle::transported(Arc::new(t), warped).unwrap();
        assert!((r.pair(&f).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn pullback_inverts_pushforward() {
        let t = PairingOracle::smooth(SmoothFn::Sum(vec![
            SmoothFn::poly_1d(0.0, &[0.5, 1.0, -0.25]),
            SmoothFn::cosine(1.0, Point::x(2.0), 0.4),
        ]));
        let m = Diffeo::sine_warp(0.2, 2.0).unwrap();
        let back = pullback_chart(&pushforward_chart(&t, &m).unwrap(), &m).unwrap();
        for i in 0..10 {
            let f = TestFunction::bump(1)
                .rescale(&Point::x(-0.9 + 0.2 * i as f64), 0.15)
                .unwrap();
            assert!((back.pair(&f).unwrap() - t.pair(&f).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn pullback_by_halving() {
        let u = SmoothFn::Sum(vec![
            SmoothFn::poly_1d(0.0, &[1.0, 0.0, 1.0]),
            SmoothFn::sine_1d(1.0, 1.0),
        ]);
        let f = TestFunction::poly_bump(1, vec![([0, 0], 1.0), ([1, 0], 0.4)])
            .rescale(&Point::x(0.3), 0.4)
            .unwrap();
        // χ^*u = (u ∘ χ)·|χ'|: for χ(x) = x/2 that is u(y/2)/2, for χ(x) = 2x it is 2u(2y).
        for (s, factor) in [(0.5, 0.5), (2.0, 2.0)] {
            let chi = Diffeo::affine(s, Point::x(0.0));
            let pulled = pullback_chart(&PairingOracle::smooth(u.clone()), &chi).unwrap();
            let direct: f64 = f
                .weighted_nodes(&q(), &[], &[])
                .iter()
                .map(|(y, w)| w * factor * u.eval(&Point::x(s * y.get(0))))
                .sum();
            assert!((pulled.pair(&f).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn pushforward_composition() {
        let t = PairingOracle::smooth(SmoothFn::cosine(1.0, Point::x(1.5), 0.2));
        let phi = Diffeo::sine_warp(0.3, 1.0).unwrap();
        let psi = Diffeo::affine(0.7, Point::x(0.4));
        let two = pushforward_chart(&pushforward_chart(&t, &phi).unwrap(), &psi).unwrap();
        let one = pushforward_chart(&t, &phi.then(&psi)).unwrap();
        for i in 0..10 {
            let f = TestFunction::bump(1)
                .rescale(&Point::x(-0.5 + 0.15 * i as f64), 0.2)
                .unwrap();
            assert!((two.pair(&f).unwrap() - one.pair(&f).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn adjoint_identity() {
        let phi = Diffeo::sine_warp(0.25, 2.0).unwrap();
        let t = PairingOracle::smooth(SmoothFn::poly_1d(0.0, &[1.0, 2.0]));
        let pushed = pushforward_chart(&t, &phi).unwrap();
        let h = TestFunction::bump(1).rescale(&Point::x(0.6), 0.3).unwrap();
        let lhs = pushed.pair(&h).unwrap();
        let rhs = t.pair(&compose_test(&h, &phi).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-9);
        let dirac = PairingOracle::dirac(Point::x(0.5));
        let lhs = pushforward_chart(&dirac, &phi).unwrap().pair(&h).unwrap();
        let rhs = dirac.pair(&compose_test(&h, &phi).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn missing_inverse_is_a_configuration_error() {
        let m = Diffeo::Custom {
            dim: 1,
            forward: Arc::new(|x: &Point| *x),
            inverse: None,
            jacobian: None,
            label: "opaque".into(),
        };
        let t = PairingOracle::dirac(Point::x(0.0));
        assert!(matches!(pushforward_chart(&t, &m), Err(Error::Config(_))));
    }

    #[test]
    fn linearity_and_locality() {
        let t = PairingOracle::indicator(Bx::interval(0.0, 1.0), 2.0);
        let f1 = TestFunction::bump(1).rescale(&Point::x(0.3), 0.2).unwrap();
        let f2 = TestFunction::poly_bump(1, vec![([1, 0], 1.0)])
            .rescale(&Point::x(0.9), 0.3)
            .unwrap();
        let combo = TestFunction::combination(vec![(1.5, f1.clone()), (-0.5, f2.clone())]).unwrap();
        let lhs = t.pair(&combo).unwrap();
        let rhs = 1.5 * t.pair(&f1).unwrap() - 0.5 * t.pair(&f2).unwrap();
        assert!((lhs - rhs).abs() < 1e-9);
        let far = TestFunction::bump(1).rescale(&Point::x(3.0), 0.5).unwrap();
        assert_eq!(t.pair(&far).unwrap(), 0.0);
    }

    #[test]
    fn out_of_domain_flag() {
        let t = PairingOracle::smooth(SmoothFn::constant(1, 1.0))
            .with_domain(OpenSetDomain::interval(0.0, 1.0));
        let inside = TestFunction::bump(1).rescale(&Point::x(0.5), 0.2).unwrap();
        let edge = TestFunction::bump(1).rescale(&Point::x(0.95), 0.2).unwrap();
        assert!(!t.pair_flagged(&inside).unwrap().out_of_domain);
        let p = t.pair_flagged(&edge).unwrap();
        assert!(p.out_of_domain && p.value > 0.0);
    }

    #[test]
    fn domain_distances() {
        let u = OpenSetDomain::interval(-2.0, 2.0);
        assert!((u.d_k(&Bx::interval(-0.5, 0.5)) - 1.5).abs() < 1e-15);
        assert!(u.includes(&OpenSetDomain::interval(-1.0, 1.0)));
        assert!(!OpenSetDomain::interval(-1.0, 1.0).includes(&u));
        let b = OpenSetDomain::Ball {
            center: Point::xy(0.0, 0.0),
            radius: 1.0,
        };
        assert!((b.d_k(&Bx::square(-0.3, 0.3)) - (1.0 - 0.18f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn poly_recentering() {
        let c = [1.0, -2.0, 0.5, 0.25];
        let r = recenter_poly_1d(&c, 0.3, -0.4);
        for &y in &[-1.0, 0.0, 0.7] {
            let a: f64 = c
                .iter()
                .enumerate()
                .map(|(j, v)| v * (y - 0.3f64).powi(j as i32))
                .sum();
            let b: f64 = r
                .iter()
                .enumerate()
                .map(|(j, v)| v * (y + 0.4f64).powi(j as i32))
                .sum();
            assert!((a - b).abs() < 1e-13);
        }
    }
}
