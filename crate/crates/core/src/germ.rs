//! Germs of distributions p ↦ F_p.

use std::fmt;
use std::sync::Arc;

use crate::diffeo::Diffeo;
use crate::distribution::{
    recenter_poly_1d, Distribution, LacunarySeries, OpenSetDomain, PairingOracle, SmoothFn,
};
use crate::geometry::Point;
use crate::testfn::TestFunction;
use crate::{Error, Result};

/// Nominal exponents (γ, α, β) carried as metadata; experiments re-estimate them.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Exponents {
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

#[derive(Clone)]
pub enum GermKind {
    /// F_p = t for every p.
    Constant(Arc<dyn Distribution>),
    /// F_x = degree-k Taylor polynomial of g at x, as a density (d = 1).
    Taylor { g: SmoothFn, order: u32 },
    /// F_x = g(x)·ξ.
    Young { g: SmoothFn, xi: PairingOracle },
    /// Pointwise sum in p.
    Sum(Vec<Germ>),
    /// The germ `base` seen through the affine chart θ = scale·x + offset:
    /// F_x = φ_*(base_{θ(x)}) with φ(θ) = (θ − offset)/scale.
    Chart {
        base: Arc<Germ>,
        scale: f64,
        offset: Point,
    },
}

/// A family p ↦ F_p over an open set, with nominal exponents.
#[derive(Clone)]
pub struct Germ {
    dim: usize,
    domain: OpenSetDomain,
    kind: GermKind,
    nominal: Exponents,
    label: String,
}

impl fmt::Debug for Germ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Germ")
            .field("label", &self.label)
            .field("domain", &self.domain)
            .field("nominal", &self.nominal)
            .finish()
    }
}

struct SumOf(Vec<Arc<dyn Distribution>>);

impl Distribution for SumOf {
    fn dim(&self) -> usize {
        self.0.first().map(|d| d.dim()).unwrap_or(1)
    }
    fn pair(&self, f: &TestFunction) -> Result<f64> {
        let mut s = 0.0;
        for d in &self.0 {
            s += d.pair(f)?;
        }
        Ok(s)
    }
    fn frequency_hint(&self) -> f64 {
        self.0
            .iter()
            .map(|d| d.frequency_hint())
            .fold(0.0, f64::max)
    }
}

/// F_p := t for all p.
pub fn make_constant(t: PairingOracle) -> Germ {
    make_constant_dyn(Arc::new(t), "constant")
}

pub fn make_constant_dyn(t: Arc<dyn Distribution>, label: &str) -> Germ {
    Germ {
        dim: t.dim(),
        domain: t.domain(),
        kind: GermKind::Constant(t),
        nominal: Exponents {
            gamma: Some(f64::INFINITY),
            alpha: None,
            beta: None,
        },
        label: label.to_string(),
    }
}

/// Taylor germ of order k of a one-dimensional smooth function.
pub fn make_taylor(g: SmoothFn, k: u32) -> Result<Germ> {
    if g.dim() != 1 {
        return Err(Error::Config(
            "Taylor germs are implemented in d = 1".into(),
        ));
    }
    if k > 20 {
        return Err(Error::Config(format!(
            "Taylor order {k} exceeds the supported 20"
        )));
    }
    Ok(Germ {
        dim: 1,
        domain: OpenSetDomain::Whole(1),
        kind: GermKind::Taylor { g, order: k },
        nominal: Exponents {
            gamma: Some(k as f64 + 1.0),
            alpha: Some(0.0),
            beta: Some(0.0),
        },
        label: format!("taylor-{k}"),
    })
}

/// F_x := g(x)·ξ with g of Hölder exponent `beta_g` and ξ the derivative of a
/// lacunary series of exponent a.
pub fn make_young(g: SmoothFn, beta_g: f64, xi: LacunarySeries) -> Result<Germ> {
    if !(beta_g > 0.0 && beta_g < 1.0) {
        return Err(Error::Config(format!(
            "Hölder exponent of g must lie in (0, 1), got {beta_g}"
        )));
    }
    if !(xi.exponent > 0.0 && xi.exponent < 1.0) || !xi.derivative {
        return Err(Error::Config(
            "ξ must be the derivative of a lacunary series with exponent in (0, 1)".into(),
        ));
    }
    if g.dim() != 1 {
        return Err(Error::Config("Young germs are implemented in d = 1".into()));
    }
    let reg = xi.regularity();
    Ok(Germ {
        dim: 1,
        domain: OpenSetDomain::Whole(1),
        kind: GermKind::Young {
            g,
            xi: PairingOracle::lacunary(xi),
        },
        nominal: Exponents {
            gamma: Some(beta_g + reg),
            alpha: Some(reg),
            beta: Some(reg),
        },
        label: format!("young-{beta_g}-{}", reg + 1.0),
    })
}

/// The Hölder-type generator g(y) = W_β(y) = Σ_{j=0}^{J} 2^{-jβ} cos(2^j y) used for Young germs.
pub fn holder_generator(beta: f64, truncation: u32) -> SmoothFn {
    SmoothFn::lacunary(beta, truncation, 0.0, 1.0)
}

/// Σ_{j=0}^{J} 2^{-jβ} sin(2^j y). Paired with the lacunary derivative
/// −Σ 2^{j(1−a)} sin(2^j y), the product g·ξ has a mean Σ −2^{j(1−a−β)}/2 that
/// grows with J when a + β < 1.
pub fn resonant_generator(beta: f64, truncation: u32) -> SmoothFn {
    SmoothFn::lacunary(beta, truncation, std::f64::consts::FRAC_PI_2, 1.0)
}

impl Germ {
    /// Pointwise sum of germs on the intersection of their domains (the first
    /// germ's domain is kept; all must share the dimension).
    pub fn sum(parts: Vec<Germ>) -> Result<Germ> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("empty germ sum".into()))?;
        if parts.iter().any(|g| g.dim != first.dim) {
            return Err(Error::Config("germ sum of mismatched dimensions".into()));
        }
        let min = |f: fn(&Exponents) -> Option<f64>| {
            parts
                .iter()
                .map(|g| f(&g.nominal))
                .try_fold(f64::INFINITY, |acc, v| v.map(|v| acc.min(v)))
        };
        Ok(Germ {
            dim: first.dim,
            domain: first.domain.clone(),
            nominal: Exponents {
                gamma: min(|e| e.gamma),
                alpha: min(|e| e.alpha),
                beta: min(|e| e.beta),
            },
            label: parts
                .iter()
                .map(|g| g.label.as_str())
                .collect::<Vec<_>>()
                .join("+"),
            kind: GermKind::Sum(parts),
        })
    }

    /// The germ in the chart x with θ = scale·x + offset, on `domain` (chart coordinates).
    pub fn in_chart(
        base: Arc<Germ>,
        scale: f64,
        offset: Point,
        domain: OpenSetDomain,
    ) -> Result<Germ> {
        if !(scale > 0.0) {
            return Err(Error::Config("chart scale must be positive".into()));
        }
        Ok(Germ {
            dim: base.dim,
            nominal: base.nominal,
            label: format!("{}@chart", base.label),
            kind: GermKind::Chart {
                base,
                scale,
                offset,
            },
            domain,
        })
    }

    pub fn with_domain(mut self, domain: OpenSetDomain) -> Germ {
        self.domain = domain;
        self
    }

    pub fn with_label(mut self, label: &str) -> Germ {
        self.label = label.to_string();
        self
    }

    pub fn with_nominal(mut self, nominal: Exponents) -> Germ {
        self.nominal = nominal;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &OpenSetDomain {
        &self.domain
    }

    pub fn kind(&self) -> &GermKind {
        &self.kind
    }

    pub fn nominal(&self) -> Exponents {
        self.nominal
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Upper bound on the angular frequency of p ↦ F_p(f_p) for translated
    /// test functions; infinite when unknown.
    pub fn frequency_hint(&self) -> f64 {
        match &self.kind {
            GermKind::Constant(t) => t.frequency_hint(),
            GermKind::Taylor { g, .. } => g.max_frequency(),
            GermKind::Young { g, xi } => g.max_frequency() + xi.frequency_hint(),
            GermKind::Sum(parts) => parts.iter().map(|g| g.frequency_hint()).fold(0.0, f64::max),
            GermKind::Chart { base, scale, .. } => base.frequency_hint() * scale,
        }
    }

    fn check_point(&self, p: &Point) -> Result<()> {
        if p.dim() != self.dim {
            return Err(Error::Domain(format!("point {p} has the wrong dimension")));
        }
        if !self.domain.contains(p) {
            return Err(Error::Domain(format!(
                "point {p} lies outside the germ's domain"
            )));
        }
        Ok(())
    }

    /// The distribution F_p.
    pub fn eval(&self, p: &Point) -> Result<Arc<dyn Distribution>> {
        self.check_point(p)?;
        self.eval_unchecked(p)
    }

    fn eval_unchecked(&self, p: &Point) -> Result<Arc<dyn Distribution>> {
        Ok(match &self.kind {
            GermKind::Constant(t) => t.clone(),
            GermKind::Taylor { g, order } => {
                Arc::new(PairingOracle::smooth(g.taylor_1d(p.get(0), *order)))
            }
            GermKind::Young { g, xi } => Arc::new(xi.scaled(g.eval(p))),
            GermKind::Sum(parts) => Arc::new(SumOf(
                parts
                    .iter()
                    .map(|g| g.eval_unchecked(p))
                    .collect::<Result<Vec<_>>>()?,
            )),
            GermKind::Chart {
                base,
                scale,
                offset,
            } => {
                let theta = *offset + *p * *scale;
                let inner = base.eval_unchecked(&theta)?;
                let to_chart = Diffeo::affine(1.0 / scale, *offset * (-1.0 / scale));
                Arc::new(PairingOracle::transported(inner, to_chart)?)
            }
        })
    }

    /// germ_pair: F_p(f).
    pub fn pair(&self, p: &Point, f: &TestFunction) -> Result<f64> {
        self.check_point(p)?;
        self.pair_unchecked(p, f)
    }

    fn pair_unchecked(&self, p: &Point, f: &TestFunction) -> Result<f64> {
        match &self.kind {
            GermKind::Constant(t) => t.pair(f),
            GermKind::Taylor { g, order } => {
                let spec = crate::QuadratureSpec::default();
                Ok(g.taylor_1d(p.get(0), *order).pair(f, &spec))
            }
            GermKind::Young { g, xi } => Ok(g.eval(p) * xi.pair(f)?),
            GermKind::Sum(parts) => {
                let mut s = 0.0;
                for g in parts {
                    s += g.pair_unchecked(p, f)?;
                }
                Ok(s)
            }
            GermKind::Chart {
                base,
                scale,
                offset,
            } => {
                // (φ_*F_θ)(f) = F_θ(f ∘ φ), φ(θ) = (θ − offset)/scale.
                let theta = *offset + *p * *scale;
                let pulled = f.compose_affine(1.0 / scale, &(*offset * (-1.0 / scale)))?;
                base.pair_unchecked(&theta, &pulled)
            }
        }
    }

    /// (F_p − F_q)(f), arranged to avoid needless cancellation.
    pub fn diff_pair(&self, p: &Point, q: &Point, f: &TestFunction) -> Result<f64> {
        self.check_point(p)?;
        self.check_point(q)?;
        self.diff_unchecked(p, q, f)
    }

    fn diff_unchecked(&self, p: &Point, q: &Point, f: &TestFunction) -> Result<f64> {
        match &self.kind {
            GermKind::Constant(_) => Ok(0.0),
            GermKind::Taylor { g, order } => {
                let c = f.center().get(0);
                let coeffs = |x: f64| {
                    let SmoothFn::Poly { terms, .. } = g.taylor_1d(x, *order) else {
                        unreachable!()
                    };
                    let raw: Vec<f64> = terms.iter().map(|(_, v)| *v).collect();
                    recenter_poly_1d(&raw, x, c)
                };
                let (a, b) = (coeffs(p.get(0)), coeffs(q.get(0)));
                let spec = crate::QuadratureSpec::default();
                let at = Point::x(c);
                Ok(a.iter()
                    .zip(&b)
                    .enumerate()
                    .map(|(j, (x, y))| (x - y) * f.moment([j as u32, 0], &at, &spec))
                    .sum())
            }
            GermKind::Young { g, xi } => Ok((g.eval(p) - g.eval(q)) * xi.pair(f)?),
            GermKind::Sum(parts) => {
                let mut s = 0.0;
                for g in parts {
                    s += g.diff_unchecked(p, q, f)?;
                }
                Ok(s)
            }
            GermKind::Chart {
                base,
                scale,
                offset,
            } => {
                let tp = *offset + *p * *scale;
                let tq = *offset + *q * *scale;
                let pulled = f.compose_affine(1.0 / scale, &(*offset * (-1.0 / scale)))?;
                base.diff_unchecked(&tp, &tq, &pulled)
            }
        }
    }
}
