//! Compactly supported test functions and the rescaling f ↦ f^λ_x.
//!
//! A [`TestFunction`] is a formula plus parameters: a unit-scale profile `P`
//! together with a center `x`, a scale `λ` and an amplitude `a`, evaluating to
//! `a · λ^{-d} · P((y − x)/λ)`. Rescaling only touches the parameters, so
//! nested rescalings compose without sampling error.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;

use crate::geometry::{Bx, Point};
use crate::quadrature::{nodes_box, QuadratureSpec};
use crate::{Error, Result};

/// Highest derivative order with a closed form for the one-dimensional bump.
pub const BUMP_ANALYTIC_ORDER: u32 = 8;

/// Finite-difference step for derivatives of total order ≤ 2 beyond the analytic order.
pub const FD_STEP: f64 = 1e-5;
/// Finite-difference step used once three or more orders are differenced numerically.
pub const FD_STEP_HIGH: f64 = 1e-2;

/// Grid resolution used for sup norms.
const SUP_GRID_1D: usize = 10_001;
const SUP_GRID_2D: usize = 201;

/// A user-supplied profile, evaluated in its own (unit) coordinates.
pub trait LocalFunction: Send + Sync {
    fn eval(&self, u: &Point) -> f64;
    /// A box containing the support.
    fn support(&self) -> Bx;
    /// Interior points per axis where the function may be non-smooth.
    fn breakpoints(&self) -> Vec<Vec<f64>> {
        Vec::new()
    }
    fn label(&self) -> String {
        "custom".into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestFunctionKind {
    StandardBump,
    PolynomialTimesBump,
    LinearCombination,
    Convolution,
    Composite,
    Recentered,
    Zero,
}

#[derive(Clone)]
enum Shape {
    Zero,
    Bump,
    /// Σ c_k u^k × bump, monomials in unit coordinates.
    PolyBump(Vec<([u32; 2], f64)>),
    Combination(Vec<(f64, TestFunction)>),
    Convolution(TestFunction, TestFunction),
    Custom(Arc<dyn LocalFunction>),
}

type FourierKey = ([u64; 2], u32, usize);
type MomentKey = ([u32; 2], u32, usize);

struct Profile {
    dim: usize,
    shape: Shape,
    radius: f64,
    support: Bx,
    breaks: Vec<Vec<f64>>,
    fourier: Mutex<HashMap<FourierKey, Complex64>>,
    moments: Mutex<HashMap<MomentKey, f64>>,
    sups: Mutex<HashMap<[u32; 2], f64>>,
}

/// A smooth compactly supported function on ℝ^d, d ∈ {1, 2}.
#[derive(Clone)]
pub struct TestFunction {
    center: Point,
    scale: f64,
    amplitude: f64,
    recentered: bool,
    profile: Arc<Profile>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("kind", &self.kind())
            .field("center", &self.center)
            .field("scale", &self.scale)
            .field("amplitude", &self.amplitude)
            .finish()
    }
}

fn check_dim(dim: usize) {
    assert!(
        dim == 1 || dim == 2,
        "only dimensions 1 and 2 are supported"
    );
}

fn corner_radius(b: &Bx) -> f64 {
    let d = b.dim();
    let mut r2 = 0.0;
    for i in 0..d {
        let m = b.lo.get(i).abs().max(b.hi.get(i).abs());
        r2 += m * m;
    }
    r2.sqrt()
}

impl Profile {
    fn new(dim: usize, shape: Shape) -> Profile {
        let unit = Bx::around(Point::origin(dim), 1.0);
        let (radius, support, breaks) = match &shape {
            Shape::Zero | Shape::Bump | Shape::PolyBump(_) => (1.0, unit, Vec::new()),
            Shape::Combination(terms) => {
                let mut bx: Option<Bx> = None;
                let mut radius: f64 = 0.0;
                let mut breaks = vec![Vec::new(); dim];
                for (_, t) in terms {
                    let tb = t.support_box();
                    bx = Some(bx.map_or(tb, |b| b.union(&tb)));
                    radius = radius.max(t.center.norm() + t.support_radius());
                    for (i, br) in breaks.iter_mut().enumerate() {
                        br.push(tb.lo.get(i));
                        br.push(tb.hi.get(i));
                    }
                }
                (radius, bx.unwrap_or(unit), breaks)
            }
            Shape::Convolution(a, b) => {
                let (ba, bb) = (a.support_box(), b.support_box());
                let bx = Bx::new(ba.lo + bb.lo, ba.hi + bb.hi);
                let radius = (a.center + b.center).norm() + a.support_radius() + b.support_radius();
                (radius, bx, Vec::new())
            }
            Shape::Custom(c) => {
                let b = c.support();
                (corner_radius(&b), b, c.breakpoints())
            }
        };
        Profile {
            dim,
            shape,
            radius,
            support,
            breaks,
            fourier: Mutex::new(HashMap::new()),
            moments: Mutex::new(HashMap::new()),
            sups: Mutex::new(HashMap::new()),
        }
    }

    fn analytic_order(&self) -> u32 {
        match &self.shape {
            Shape::Zero => u32::MAX,
            Shape::Bump | Shape::PolyBump(_) => {
                if self.dim == 1 {
                    BUMP_ANALYTIC_ORDER
                } else {
                    0
                }
            }
            Shape::Combination(terms) => terms
                .iter()
                .map(|(_, t)| t.derivative_order_available())
                .min()
                .unwrap_or(u32::MAX),
            Shape::Convolution(_, _) | Shape::Custom(_) => 0,
        }
    }

    fn eval(&self, u: &Point) -> f64 {
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::Bump => bump(u.norm_sq()),
            Shape::PolyBump(terms) => {
                let b = bump(u.norm_sq());
                if b == 0.0 {
                    return 0.0;
                }
                b * poly_eval(terms, u)
            }
            Shape::Combination(terms) => terms.iter().map(|(c, t)| c * t.eval(u)).sum(),
            Shape::Convolution(a, b) => {
                // (a ∗ b)(u) = ∫ a(w) b(u − w) dw over supp a ∩ (u − supp b).
                let (ba, bb) = (a.support_box(), b.support_box());
                let shifted = Bx::new(*u - bb.hi, *u - bb.lo);
                let region = ba.intersect(&shifted);
                if region.is_empty() {
                    return 0.0;
                }
                let mut spec = QuadratureSpec::for_dim(self.dim).doubled();
                let size = 0.5 * ba.max_width().max(bb.max_width());
                if size < 1.0 {
                    let per_unit = (spec.panels_per_unit_support as f64 / size).ceil() as u32;
                    spec.panels_per_unit_support = per_unit.next_power_of_two();
                }
                let mut breaks = a.profile_breaks_real();
                breaks.resize(self.dim, Vec::new());
                for (i, br) in b.profile_breaks_real().into_iter().enumerate() {
                    breaks[i].extend(br.into_iter().map(|v| u.get(i) - v));
                }
                nodes_box(&region, &breaks, &[], &spec)
                    .iter()
                    .map(|(w, wt)| wt * a.eval(w) * b.eval(&(*u - *w)))
                    .sum()
            }
            Shape::Custom(c) => c.eval(u),
        }
    }

    /// ∂^k P(u), analytic where possible.
    fn eval_derivative(&self, u: &Point, k: [u32; 2]) -> f64 {
        let order = k[0] + k[1];
        if order == 0 {
            return self.eval(u);
        }
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::Bump if self.dim == 1 && order <= BUMP_ANALYTIC_ORDER => {
                bump_derivative_1d(u.get(0), order)
            }
            Shape::PolyBump(terms) if self.dim == 1 && order <= BUMP_ANALYTIC_ORDER => {
                // Leibniz rule on p · ψ.
                let x = u.get(0);
                if x.abs() >= 1.0 {
                    return 0.0;
                }
                let mut s = 0.0;
                for i in 0..=order {
                    let dp = poly_derivative_1d(terms, x, i);
                    if dp != 0.0 {
                        s += binom(order, i) * dp * bump_derivative_1d(x, order - i);
                    }
                }
                s
            }
            Shape::Combination(terms) if order <= self.analytic_order() => {
                terms.iter().map(|(c, t)| c * t.eval_derivative(u, k)).sum()
            }
            _ => {
                let avail = self.analytic_order();
                fd_derivative(
                    &|p: &Point, kk: [u32; 2]| self.eval_derivative(p, kk),
                    u,
                    k,
                    avail,
                )
            }
        }
    }

    fn node_set(&self, spec: &QuadratureSpec, freq: &[f64]) -> Vec<(Point, f64)> {
        nodes_box(&self.support, &self.breaks, freq, spec)
            .into_iter()
            .filter_map(|(u, w)| {
                let v = self.eval(&u);
                (v != 0.0).then_some((u, w * v))
            })
            .collect()
    }

    /// ∫ P(u) e^{i κ·u} du.
    fn fourier(&self, kappa: &Point, spec: &QuadratureSpec) -> Complex64 {
        match &self.shape {
            Shape::Zero => Complex64::new(0.0, 0.0),
            _ => {
                let key = (
                    [
                        kappa.get(0).to_bits(),
                        if self.dim > 1 {
                            kappa.get(1).to_bits()
                        } else {
                            0
                        },
                    ],
                    spec.panels_per_unit_support,
                    spec.nodes_per_panel,
                );
                if let Some(v) = self.fourier.lock().unwrap().get(&key) {
                    return *v;
                }
                let v = match &self.shape {
                    Shape::Combination(terms) => {
                        terms.iter().map(|(c, t)| t.fourier(kappa, spec) * *c).sum()
                    }
                    Shape::Convolution(a, b) => a.fourier(kappa, spec) * b.fourier(kappa, spec),
                    _ => {
                        let freq: Vec<f64> = kappa.as_slice().to_vec();
                        self.node_set(spec, &freq)
                            .iter()
                            .map(|(u, w)| Complex64::from_polar(*w, kappa.dot(u)))
                            .sum()
                    }
                };
                self.fourier.lock().unwrap().insert(key, v);
                v
            }
        }
    }

    /// ∫ u^k P(u) du.
    fn moment(&self, k: [u32; 2], spec: &QuadratureSpec) -> f64 {
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::Combination(terms) => terms
                .iter()
                .map(|(c, t)| c * t.moment(k, &Point::origin(self.dim), spec))
                .sum(),
            Shape::Convolution(a, b) => {
                let o = Point::origin(self.dim);
                let mut s = 0.0;
                for i0 in 0..=k[0] {
                    for i1 in 0..=k[1] {
                        let c = binom(k[0], i0) * binom(k[1], i1);
                        s += c
                            * a.moment([i0, i1], &o, spec)
                            * b.moment([k[0] - i0, k[1] - i1], &o, spec);
                    }
                }
                s
            }
            _ => {
                let key = (k, spec.panels_per_unit_support, spec.nodes_per_panel);
                if let Some(v) = self.moments.lock().unwrap().get(&key) {
                    return *v;
                }
                let v = self
                    .node_set(spec, &[])
                    .iter()
                    .map(|(u, w)| w * monomial(u, k))
                    .sum();
                self.moments.lock().unwrap().insert(key, v);
                v
            }
        }
    }

    /// sup |∂^k P| over a uniform grid of the support box.
    fn sup_derivative(&self, k: [u32; 2]) -> f64 {
        if let Shape::Zero = self.shape {
            return 0.0;
        }
        if let Some(v) = self.sups.lock().unwrap().get(&k) {
            return *v;
        }
        let b = self.support;
        let v = if self.dim == 1 {
            let n = SUP_GRID_1D;
            let (lo, hi) = (b.lo.get(0), b.hi.get(0));
            (0..n)
                .map(|i| {
                    let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                    self.eval_derivative(&Point::x(x), k).abs()
                })
                .fold(0.0, f64::max)
        } else {
            let n = SUP_GRID_2D;
            let mut m: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let p = Point::xy(
                        b.lo.get(0) + b.width(0) * i as f64 / (n - 1) as f64,
                        b.lo.get(1) + b.width(1) * j as f64 / (n - 1) as f64,
                    );
                    m = m.max(self.eval_derivative(&p, k).abs());
                }
            }
            m
        };
        self.sups.lock().unwrap().insert(k, v);
        v
    }
}

/// Standard bump as a function of |u|²: exp(−1/(1−|u|²)) inside the unit ball.
#[inline]
pub fn bump(r2: f64) -> f64 {
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

/// Polynomials Q_k with ψ^{(k)}(u) = ψ(u) Q_k(u) / (1 − u²)^{2k}, as coefficient vectors.
fn bump_polys() -> &'static Vec<Vec<f64>> {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| {
        let mut out: Vec<Vec<f64>> = vec![vec![1.0]];
        for k in 0..BUMP_ANALYTIC_ORDER as usize {
            let q = &out[k];
            // Q_{k+1} = (1 − u²)² Q_k' + (4k u (1 − u²) − 2u) Q_k
            let mut next = vec![0.0; q.len() + 3];
            let dq: Vec<f64> = q
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| c * i as f64)
                .collect();
            let t2 = [1.0, 0.0, -2.0, 0.0, 1.0];
            for (i, c) in dq.iter().enumerate() {
                for (j, t) in t2.iter().enumerate() {
                    next[i + j] += c * t;
                }
            }
            let kk = k as f64;
            let lin = [0.0, 4.0 * kk - 2.0, 0.0, -4.0 * kk];
            for (i, c) in q.iter().enumerate() {
                for (j, t) in lin.iter().enumerate() {
                    next[i + j] += c * t;
                }
            }
            while next.len() > 1 && *next.last().unwrap() == 0.0 {
                next.pop();
            }
            out.push(next);
        }
        out
    })
}

fn bump_derivative_1d(x: f64, k: u32) -> f64 {
    let t = 1.0 - x * x;
    if t <= 0.0 {
        return 0.0;
    }
    if k == 0 {
        return (-1.0 / t).exp();
    }
    let q = &bump_polys()[k as usize];
    let qv = q.iter().rev().fold(0.0, |acc, c| acc * x + c);
    (-1.0 / t - 2.0 * k as f64 * t.ln()).exp() * qv
}

fn monomial(u: &Point, k: [u32; 2]) -> f64 {
    let mut v = u.get(0).powi(k[0] as i32);
    if u.dim() > 1 {
        v *= u.get(1).powi(k[1] as i32);
    }
    v
}

fn poly_eval(terms: &[([u32; 2], f64)], u: &Point) -> f64 {
    terms.iter().map(|(k, c)| c * monomial(u, *k)).sum()
}

fn poly_derivative_1d(terms: &[([u32; 2], f64)], x: f64, order: u32) -> f64 {
    terms
        .iter()
        .filter(|(k, _)| k[0] >= order)
        .map(|(k, c)| {
            let falling: f64 = (0..order).map(|i| (k[0] - i) as f64).product();
            c * falling * x.powi((k[0] - order) as i32)
        })
        .sum()
}

/// Binomial coefficient as f64.
pub fn binom(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Fourth-order central stencils for the first four derivatives.
fn stencil(order: u32) -> (&'static [(i32, f64)], f64) {
    match order {
        1 => (&[(-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)], 12.0),
        2 => (
            &[(-2, -1.0), (-1, 16.0), (0, -30.0), (1, 16.0), (2, -1.0)],
            12.0,
        ),
        3 => (
            &[
                (-3, 1.0),
                (-2, -8.0),
                (-1, 13.0),
                (1, -13.0),
                (2, 8.0),
                (3, -1.0),
            ],
            8.0,
        ),
        4 => (
            &[
                (-3, -1.0),
                (-2, 12.0),
                (-1, -39.0),
                (0, 56.0),
                (1, -39.0),
                (2, 12.0),
                (3, -1.0),
            ],
            6.0,
        ),
        _ => unreachable!(),
    }
}

/// ∂^k f(u) where `f(p, j)` supplies exact derivatives up to total order `avail`;
/// the remaining orders are differenced numerically, axis by axis.
fn fd_derivative(f: &dyn Fn(&Point, [u32; 2]) -> f64, u: &Point, k: [u32; 2], avail: u32) -> f64 {
    let total = k[0] + k[1];
    if total <= avail {
        return f(u, k);
    }
    let numeric = total - avail;
    let h = if numeric >= 3 { FD_STEP_HIGH } else { FD_STEP };
    // Difference along the axis carrying the most orders; keep the rest exact if possible.
    let axis = if k[0] >= k[1] { 0 } else { 1 };
    let m = k[axis].min(numeric).min(4);
    let mut inner = k;
    inner[axis] -= m;
    let (st, den) = stencil(m);
    let mut s = 0.0;
    for &(off, c) in st {
        let mut p = *u;
        p.set(axis, u.get(axis) + off as f64 * h);
        s += c * fd_derivative(f, &p, inner, avail);
    }
    s / (den * h.powi(m as i32))
}

impl TestFunction {
    fn from_shape(dim: usize, shape: Shape) -> TestFunction {
        check_dim(dim);
        TestFunction {
            center: Point::origin(dim),
            scale: 1.0,
            amplitude: 1.0,
            recentered: false,
            profile: Arc::new(Profile::new(dim, shape)),
        }
    }

    /// The standard bump ψ(u) = exp(−1/(1−|u|²)) on the unit ball.
    pub fn bump(dim: usize) -> TestFunction {
        TestFunction::from_shape(dim, Shape::Bump)
    }

    /// The identically zero function.
    pub fn zero(dim: usize) -> TestFunction {
        TestFunction::from_shape(dim, Shape::Zero)
    }

    /// Σ c_k u^k × standard bump, with monomials given by exponent pairs
    /// (the second exponent is ignored in d = 1).
    pub fn poly_bump(dim: usize, terms: Vec<([u32; 2], f64)>) -> TestFunction {
        let terms = terms
            .into_iter()
            .map(|(k, c)| (if dim == 1 { [k[0], 0] } else { k }, c))
            .collect();
        TestFunction::from_shape(dim, Shape::PolyBump(terms))
    }

    /// Σ c_i f_i as a single unit-scale profile.
    pub fn combination(terms: Vec<(f64, TestFunction)>) -> Result<TestFunction> {
        let dim = terms
            .first()
            .map(|(_, t)| t.dim())
            .ok_or_else(|| Error::Config("empty linear combination".into()))?;
        if terms.iter().any(|(_, t)| t.dim() != dim) {
            return Err(Error::Config(
                "mixed dimensions in linear combination".into(),
            ));
        }
        Ok(TestFunction::from_shape(dim, Shape::Combination(terms)))
    }

    /// The convolution a ∗ b as a unit-scale profile.
    pub fn convolution(a: TestFunction, b: TestFunction) -> Result<TestFunction> {
        if a.dim() != b.dim() {
            return Err(Error::Config("convolution of mismatched dimensions".into()));
        }
        Ok(TestFunction::from_shape(a.dim(), Shape::Convolution(a, b)))
    }

    /// Wrap an arbitrary smooth compactly supported function.
    pub fn custom(dim: usize, f: Arc<dyn LocalFunction>) -> TestFunction {
        TestFunction::from_shape(dim, Shape::Custom(f))
    }

    pub fn dim(&self) -> usize {
        self.profile.dim
    }

    pub fn center(&self) -> Point {
        self.center
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn kind(&self) -> TestFunctionKind {
        if self.recentered {
            return TestFunctionKind::Recentered;
        }
        match &self.profile.shape {
            Shape::Zero => TestFunctionKind::Zero,
            Shape::Bump => TestFunctionKind::StandardBump,
            Shape::PolyBump(_) => TestFunctionKind::PolynomialTimesBump,
            Shape::Combination(_) => TestFunctionKind::LinearCombination,
            Shape::Convolution(_, _) => TestFunctionKind::Convolution,
            Shape::Custom(_) => TestFunctionKind::Composite,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.amplitude == 0.0 || matches!(self.profile.shape, Shape::Zero)
    }

    /// Radius R_f of the profile; the support lies in B(center, scale·R_f).
    pub fn profile_radius(&self) -> f64 {
        self.profile.radius
    }

    /// λ·R_f.
    pub fn support_radius(&self) -> f64 {
        self.scale * self.profile.radius
    }

    /// A box containing the support, in ambient coordinates.
    pub fn support_box(&self) -> Bx {
        self.profile.support.affine(self.center, self.scale)
    }

    fn profile_breaks_real(&self) -> Vec<Vec<f64>> {
        self.profile
            .breaks
            .iter()
            .enumerate()
            .map(|(i, br)| {
                br.iter()
                    .map(|b| self.center.get(i) + self.scale * b)
                    .collect()
            })
            .collect()
    }

    pub fn derivative_order_available(&self) -> u32 {
        self.profile.analytic_order()
    }

    #[inline]
    fn to_unit(&self, y: &Point) -> Point {
        (*y - self.center) * (1.0 / self.scale)
    }

    fn norm_factor(&self) -> f64 {
        self.amplitude * self.scale.powi(-(self.dim() as i32))
    }

    /// f(y).
    pub fn eval(&self, y: &Point) -> f64 {
        debug_assert_eq!(y.dim(), self.dim());
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let u = self.to_unit(y);
        if u.norm() > self.profile.radius {
            return 0.0;
        }
        self.norm_factor() * self.profile.eval(&u)
    }

    /// ∂^k f(y) for a multi-index k (second entry ignored in d = 1).
    pub fn eval_derivative(&self, y: &Point, k: [u32; 2]) -> f64 {
        let k = if self.dim() == 1 { [k[0], 0] } else { k };
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let u = self.to_unit(y);
        let order = (k[0] + k[1]) as i32;
        self.norm_factor() * self.scale.powi(-order) * self.profile.eval_derivative(&u, k)
    }

    /// f^λ_x(y) = λ^{-d} f((y − x)/λ), composed algebraically with the current
    /// center and scale.
    pub fn rescale(&self, x: &Point, lambda: f64) -> Result<TestFunction> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Domain(format!(
                "scale must be positive, got {lambda}"
            )));
        }
        if x.dim() != self.dim() {
            return Err(Error::Domain("center has the wrong dimension".into()));
        }
        Ok(TestFunction {
            center: *x + self.center * lambda,
            scale: lambda * self.scale,
            amplitude: self.amplitude,
            recentered: self.recentered,
            profile: self.profile.clone(),
        })
    }

    /// The unit-scale representative: same profile, center 0, scale 1, amplitude 1.
    pub fn unit(&self) -> TestFunction {
        TestFunction {
            center: Point::origin(self.dim()),
            scale: 1.0,
            amplitude: 1.0,
            recentered: false,
            profile: self.profile.clone(),
        }
    }

    /// c · f.
    pub fn scaled(&self, c: f64) -> TestFunction {
        TestFunction {
            amplitude: self.amplitude * c,
            ..self.clone()
        }
    }

    pub(crate) fn mark_recentered(mut self) -> TestFunction {
        self.recentered = true;
        self
    }

    /// Whether `other` shares the unit profile of `self` (so it differs only
    /// in center, scale and amplitude).
    pub fn same_profile(&self, other: &TestFunction) -> bool {
        Arc::ptr_eq(&self.profile, &other.profile)
    }

    /// f ∘ A for A(y) = s·y + b with s > 0, expressed without loss of precision.
    pub fn compose_affine(&self, s: f64, b: &Point) -> Result<TestFunction> {
        if !(s > 0.0) {
            return Err(Error::Domain(format!(
                "affine factor must be positive, got {s}"
            )));
        }
        Ok(TestFunction {
            center: (self.center - *b) * (1.0 / s),
            scale: self.scale / s,
            amplitude: self.amplitude * s.powi(-(self.dim() as i32)),
            recentered: self.recentered,
            profile: self.profile.clone(),
        })
    }

    /// max_{|k| ≤ r} sup |∂^k f|.
    pub fn cr_norm(&self, r: u32) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let d = self.dim() as i32;
        let mut best: f64 = 0.0;
        for k0 in 0..=r {
            let k1_max = if self.dim() == 1 { 0 } else { r - k0 };
            for k1 in 0..=k1_max {
                let order = (k0 + k1) as i32;
                let s = self.amplitude.abs()
                    * self.scale.powi(-order - d)
                    * self.profile.sup_derivative([k0, k1]);
                best = best.max(s);
            }
        }
        best
    }

    /// ∫ f.
    pub fn integral(&self, spec: &QuadratureSpec) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        self.amplitude * self.profile.moment([0, 0], spec)
    }

    /// ∫ (y − a)^k f(y) dy.
    pub fn moment(&self, k: [u32; 2], about: &Point, spec: &QuadratureSpec) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let k = if self.dim() == 1 { [k[0], 0] } else { k };
        let shift = self.center - *about;
        let mut s = 0.0;
        for i0 in 0..=k[0] {
            for i1 in 0..=k[1] {
                let mut c = binom(k[0], i0) * shift.get(0).powi((k[0] - i0) as i32);
                if self.dim() > 1 {
                    c *= binom(k[1], i1) * shift.get(1).powi((k[1] - i1) as i32);
                }
                if c == 0.0 {
                    continue;
                }
                s += c * self.scale.powi((i0 + i1) as i32) * self.profile.moment([i0, i1], spec);
            }
        }
        self.amplitude * s
    }

    /// f̂(ω) = ∫ f(y) e^{iω·y} dy.
    pub fn fourier(&self, omega: &Point, spec: &QuadratureSpec) -> Complex64 {
        if self.is_zero() {
            return Complex64::new(0.0, 0.0);
        }
        let kappa = *omega * self.scale;
        let phase = Complex64::from_polar(self.amplitude, omega.dot(&self.center));
        phase * self.profile.fourier(&kappa, spec)
    }

    /// Points y_i and weights w_i with ∫ f·u ≈ Σ w_i u(y_i) for smooth u.
    ///
    /// `breaks` are ambient-coordinate points per axis where u may be
    /// discontinuous, `freq` the largest angular frequency per axis of u.
    pub fn weighted_nodes(
        &self,
        spec: &QuadratureSpec,
        breaks: &[Vec<f64>],
        freq: &[f64],
    ) -> Vec<(Point, f64)> {
        if self.is_zero() {
            return Vec::new();
        }
        if let Shape::Convolution(a, b) = &self.profile.shape {
            let na = a.weighted_nodes(spec, &[], freq);
            let nb = b.weighted_nodes(spec, &[], freq);
            let mut out = Vec::with_capacity(na.len() * nb.len());
            for (pa, wa) in &na {
                for (pb, wb) in &nb {
                    out.push((
                        self.center + (*pa + *pb) * self.scale,
                        self.amplitude * wa * wb,
                    ));
                }
            }
            return out;
        }
        let d = self.dim();
        let mut unit_breaks = self.profile.breaks.clone();
        unit_breaks.resize(d, Vec::new());
        for (i, br) in breaks.iter().enumerate().take(d) {
            unit_breaks[i].extend(br.iter().map(|b| (b - self.center.get(i)) / self.scale));
        }
        let unit_freq: Vec<f64> = (0..d)
            .map(|i| freq.get(i).copied().unwrap_or(0.0) * self.scale)
            .collect();
        nodes_box(&self.profile.support, &unit_breaks, &unit_freq, spec)
            .into_iter()
            .filter_map(|(u, w)| {
                let v = self.profile.eval(&u);
                (v != 0.0).then(|| (self.center + u * self.scale, self.amplitude * w * v))
            })
            .collect()
    }
}

/// A constant-coefficient rescaling of the standard bump normalized to ∫ = 1.
pub fn unit_integral_bump(dim: usize) -> TestFunction {
    let b = TestFunction::bump(dim);
    let m = b.integral(&QuadratureSpec::for_dim(dim));
    b.scaled(1.0 / m)
}
