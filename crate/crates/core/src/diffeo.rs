//! Coordinate changes between open subsets of ℝ^d.
//!
//! Maps are axis-separable and monotone per axis (affine maps, sine warps and
//! piecewise combinations of these), which covers every transition map of the
//! built-in atlases and keeps images of boxes computable from their corners.

use std::fmt;
use std::sync::Arc;

use crate::geometry::{Bx, Point};
use crate::testfn::{LocalFunction, TestFunction};
use crate::{Error, Result};

type PointMap = Arc<dyn Fn(&Point) -> Point + Send + Sync>;
type ScalarMap = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;

/// A diffeomorphism descriptor with forward, inverse and Jacobian evaluators.
#[derive(Clone)]
pub enum Diffeo {
    Identity(usize),
    /// y = scale ⊙ x + shift, every scale entry nonzero.
    Affine {
        scale: Point,
        shift: Point,
    },
    /// y = x + amp · sin(freq · x) in d = 1, with |amp · freq| < 1.
    SineWarp {
        amp: f64,
        freq: f64,
    },
    /// Different maps on disjoint source boxes (transition maps of arc atlases).
    Piecewise(Vec<(Bx, Diffeo)>),
    /// Apply the maps left to right.
    Compose(Vec<Diffeo>),
    Inverse(Box<Diffeo>),
    /// User-supplied evaluators; the inverse and Jacobian are optional.
    Custom {
        dim: usize,
        forward: PointMap,
        inverse: Option<PointMap>,
        jacobian: Option<ScalarMap>,
        label: String,
    },
}

impl fmt::Debug for Diffeo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diffeo::Identity(d) => write!(f, "Identity({d})"),
            Diffeo::Affine { scale, shift } => write!(f, "Affine({scale:?}·x + {shift:?})"),
            Diffeo::SineWarp { amp, freq } => write!(f, "SineWarp(x + {amp} sin({freq} x))"),
            Diffeo::Piecewise(p) => f
                .debug_list()
                .entries(p.iter().map(|(b, m)| (b, m)))
                .finish(),
            Diffeo::Compose(v) => write!(f, "Compose({v:?})"),
            Diffeo::Inverse(m) => write!(f, "Inverse({m:?})"),
            Diffeo::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

impl Diffeo {
    pub fn identity(dim: usize) -> Diffeo {
        Diffeo::Identity(dim)
    }

    /// Isotropic affine map y = s·x + b.
    pub fn affine(s: f64, shift: Point) -> Diffeo {
        Diffeo::Affine {
            scale: Point::splat(shift.dim(), s),
            shift,
        }
    }

    pub fn translation(shift: Point) -> Diffeo {
        Diffeo::affine(1.0, shift)
    }

    pub fn sine_warp(amp: f64, freq: f64) -> Result<Diffeo> {
        if !((amp * freq).abs() < 1.0) {
            return Err(Error::Domain(format!(
                "x + {amp} sin({freq} x) is not monotone (|amp·freq| must be < 1)"
            )));
        }
        Ok(Diffeo::SineWarp { amp, freq })
    }

    pub fn dim(&self) -> usize {
        match self {
            Diffeo::Identity(d) => *d,
            Diffeo::Affine { shift, .. } => shift.dim(),
            Diffeo::SineWarp { .. } => 1,
            Diffeo::Piecewise(p) => p.first().map(|(b, _)| b.dim()).unwrap_or(1),
            Diffeo::Compose(v) => v.first().map(|m| m.dim()).unwrap_or(1),
            Diffeo::Inverse(m) => m.dim(),
            Diffeo::Custom { dim, .. } => *dim,
        }
    }

    pub fn has_inverse(&self) -> bool {
        match self {
            Diffeo::Custom { inverse, .. } => inverse.is_some(),
            Diffeo::Piecewise(p) => p.iter().all(|(_, m)| m.has_inverse()),
            Diffeo::Compose(v) => v.iter().all(|m| m.has_inverse()),
            Diffeo::Inverse(m) => m.has_inverse() && m.has_jacobian(),
            _ => true,
        }
    }

    pub fn has_jacobian(&self) -> bool {
        match self {
            Diffeo::Custom { jacobian, .. } => jacobian.is_some(),
            Diffeo::Piecewise(p) => p.iter().all(|(_, m)| m.has_jacobian()),
            Diffeo::Compose(v) => v.iter().all(|m| m.has_jacobian()),
            Diffeo::Inverse(m) => m.has_inverse() && m.has_jacobian(),
            _ => true,
        }
    }

    fn piece_for<'a>(pieces: &'a [(Bx, Diffeo)], x: &Point) -> Option<&'a Diffeo> {
        pieces.iter().find(|(b, _)| b.contains(x)).map(|(_, m)| m)
    }

    /// φ(x). Points outside every piece of a piecewise map use the nearest piece.
    pub fn forward(&self, x: &Point) -> Point {
        match self {
            Diffeo::Identity(_) => *x,
            Diffeo::Affine { scale, shift } => x.map(|i, v| scale.get(i) * v + shift.get(i)),
            Diffeo::SineWarp { amp, freq } => Point::x(x.get(0) + amp * (freq * x.get(0)).sin()),
            Diffeo::Piecewise(p) => match Diffeo::piece_for(p, x) {
                Some(m) => m.forward(x),
                None => nearest_piece(p, x).forward(x),
            },
            Diffeo::Compose(v) => v.iter().fold(*x, |acc, m| m.forward(&acc)),
            Diffeo::Inverse(m) => m
                .inverse(x)
                .unwrap_or_else(|_| Point::splat(x.dim(), f64::NAN)),
            Diffeo::Custom { forward, .. } => forward(x),
        }
    }

    /// φ^{-1}(y).
    pub fn inverse(&self, y: &Point) -> Result<Point> {
        match self {
            Diffeo::Identity(_) => Ok(*y),
            Diffeo::Affine { scale, shift } => Ok(y.map(|i, v| (v - shift.get(i)) / scale.get(i))),
            Diffeo::SineWarp { amp, freq } => {
                // Newton on x + a sin(bx) = y; the map is monotone so this converges.
                let target = y.get(0);
                let mut x = target;
                for _ in 0..100 {
                    let g = x + amp * (freq * x).sin() - target;
                    let dg = 1.0 + amp * freq * (freq * x).cos();
                    let step = g / dg;
                    x -= step;
                    if step.abs() < 1e-16 * (1.0 + x.abs()) {
                        break;
                    }
                }
                Ok(Point::x(x))
            }
            Diffeo::Piecewise(p) => {
                for (b, m) in p {
                    if m.image_box(b)?.contains(y) {
                        return m.inverse(y);
                    }
                }
                let mut best: Option<(f64, &Diffeo)> = None;
                for (b, m) in p {
                    let ib = m.image_box(b)?;
                    let d = ib.center().dist(y) - 0.5 * ib.diameter();
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, m));
                    }
                }
                best.ok_or_else(|| Error::Config("empty piecewise map".into()))?
                    .1
                    .inverse(y)
            }
            Diffeo::Compose(v) => v.iter().rev().try_fold(*y, |acc, m| m.inverse(&acc)),
            Diffeo::Inverse(m) => Ok(m.forward(y)),
            Diffeo::Custom { inverse, label, .. } => inverse
                .as_ref()
                .map(|f| f(y))
                .ok_or_else(|| Error::Config(format!("map `{label}` has no inverse evaluator"))),
        }
    }

    /// det Dφ(x).
    pub fn jacobian_det(&self, x: &Point) -> Result<f64> {
        match self {
            Diffeo::Identity(_) => Ok(1.0),
            Diffeo::Affine { scale, .. } => Ok(scale.as_slice().iter().product()),
            Diffeo::SineWarp { amp, freq } => Ok(1.0 + amp * freq * (freq * x.get(0)).cos()),
            Diffeo::Piecewise(p) => match Diffeo::piece_for(p, x) {
                Some(m) => m.jacobian_det(x),
                None => nearest_piece(p, x).jacobian_det(x),
            },
            Diffeo::Compose(v) => {
                let mut acc = *x;
                let mut det = 1.0;
                for m in v {
                    det *= m.jacobian_det(&acc)?;
                    acc = m.forward(&acc);
                }
                Ok(det)
            }
            Diffeo::Inverse(m) => {
                let pre = m.inverse(x)?;
                Ok(1.0 / m.jacobian_det(&pre)?)
            }
            Diffeo::Custom {
                jacobian, label, ..
            } => jacobian
                .as_ref()
                .map(|f| f(x))
                .ok_or_else(|| Error::Config(format!("map `{label}` has no Jacobian evaluator"))),
        }
    }

    /// The inverse map as a descriptor.
    pub fn inverted(&self) -> Diffeo {
        match self {
            Diffeo::Identity(d) => Diffeo::Identity(*d),
            Diffeo::Affine { scale, shift } => Diffeo::Affine {
                scale: scale.map(|_, s| 1.0 / s),
                shift: shift.map(|i, b| -b / scale.get(i)),
            },
            Diffeo::Compose(v) => Diffeo::Compose(v.iter().rev().map(|m| m.inverted()).collect()),
            Diffeo::Inverse(m) => (**m).clone(),
            other => Diffeo::Inverse(Box::new(other.clone())),
        }
    }

    /// `next ∘ self`, simplified when both are affine.
    pub fn then(&self, next: &Diffeo) -> Diffeo {
        match (self.as_affine(), next.as_affine()) {
            (Some((s1, b1)), Some((s2, b2))) => Diffeo::Affine {
                scale: s1.map(|i, v| v * s2.get(i)),
                shift: b1.map(|i, v| s2.get(i) * v + b2.get(i)),
            },
            _ => Diffeo::Compose(vec![self.clone(), next.clone()]),
        }
    }

    /// Per-axis (scale, shift) when the map is globally affine.
    pub fn as_affine(&self) -> Option<(Point, Point)> {
        match self {
            Diffeo::Identity(d) => Some((Point::splat(*d, 1.0), Point::origin(*d))),
            Diffeo::Affine { scale, shift } => Some((*scale, *shift)),
            Diffeo::Compose(v) => {
                let mut acc = Diffeo::Identity(self.dim()).as_affine()?;
                for m in v {
                    let (s, b) = m.as_affine()?;
                    acc = (
                        acc.0.map(|i, v| v * s.get(i)),
                        acc.1.map(|i, v| s.get(i) * v + b.get(i)),
                    );
                }
                Some(acc)
            }
            Diffeo::Inverse(m) => m.inverted_affine(),
            _ => None,
        }
    }

    fn inverted_affine(&self) -> Option<(Point, Point)> {
        let (s, b) = self.as_affine()?;
        Some((s.map(|_, v| 1.0 / v), b.map(|i, v| -v / s.get(i))))
    }

    /// (s, b) when the map is x ↦ s·x + b with a single s > 0.
    pub fn as_isotropic_affine(&self) -> Option<(f64, Point)> {
        let (s, b) = self.as_affine()?;
        let s0 = s.get(0);
        (s0 > 0.0 && s.as_slice().iter().all(|v| *v == s0)).then_some((s0, b))
    }

    /// Smallest box containing φ(b).
    pub fn image_box(&self, b: &Bx) -> Result<Bx> {
        match self {
            Diffeo::Piecewise(p) => {
                let mut acc: Option<Bx> = None;
                for (pb, m) in p {
                    let part = pb.intersect(b);
                    if part.is_empty() {
                        continue;
                    }
                    let ib = m.image_box(&part)?;
                    acc = Some(acc.map_or(ib, |a| a.union(&ib)));
                }
                acc.ok_or_else(|| Error::Domain("box lies outside every piece of the map".into()))
            }
            Diffeo::Compose(v) => v.iter().try_fold(*b, |acc, m| m.image_box(&acc)),
            Diffeo::Inverse(m) => m.preimage_box(b),
            _ => {
                let a = self.forward(&b.lo);
                let c = self.forward(&b.hi);
                Ok(Bx::new(
                    a.map(|i, v| v.min(c.get(i))),
                    a.map(|i, v| v.max(c.get(i))),
                ))
            }
        }
    }

    /// Smallest box containing φ^{-1}(b).
    pub fn preimage_box(&self, b: &Bx) -> Result<Bx> {
        match self {
            Diffeo::Piecewise(p) => {
                let mut acc: Option<Bx> = None;
                for (pb, m) in p {
                    let img = m.image_box(pb)?.intersect(b);
                    if img.is_empty() {
                        continue;
                    }
                    let pre = m.preimage_box(&img)?.intersect(pb);
                    acc = Some(acc.map_or(pre, |a| a.union(&pre)));
                }
                acc.ok_or_else(|| Error::Domain("box lies outside the image of the map".into()))
            }
            Diffeo::Compose(v) => v.iter().rev().try_fold(*b, |acc, m| m.preimage_box(&acc)),
            Diffeo::Inverse(m) => m.image_box(b),
            _ => {
                let a = self.inverse(&b.lo)?;
                let c = self.inverse(&b.hi)?;
                Ok(Bx::new(
                    a.map(|i, v| v.min(c.get(i))),
                    a.map(|i, v| v.max(c.get(i))),
                ))
            }
        }
    }

    /// Largest |φ(φ^{-1}(y)) − y| over the given points.
    pub fn roundtrip_error(&self, points: &[Point]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for y in points {
            let x = self.inverse(y)?;
            worst = worst.max(self.forward(&x).dist(y));
        }
        Ok(worst)
    }
}

fn nearest_piece<'a>(pieces: &'a [(Bx, Diffeo)], x: &Point) -> &'a Diffeo {
    pieces
        .iter()
        .min_by(|(a, _), (b, _)| {
            let da = a.center().dist(x) - 0.5 * a.diameter();
            let db = b.center().dist(x) - 0.5 * b.diameter();
            da.total_cmp(&db)
        })
        .map(|(_, m)| m)
        .expect("piecewise map has at least one piece")
}

struct Composed {
    h: TestFunction,
    map: Diffeo,
    support: Bx,
}

impl LocalFunction for Composed {
    fn eval(&self, u: &Point) -> f64 {
        if !self.support.contains(u) {
            return 0.0;
        }
        self.h.eval(&self.map.forward(u))
    }
    fn support(&self) -> Bx {
        self.support
    }
    fn label(&self) -> String {
        format!("composite with {:?}", self.map)
    }
}

/// h ∘ φ as a test function. Isotropic affine maps with positive factor keep
/// the analytic representation; everything else becomes a composite.
pub fn compose_test(h: &TestFunction, map: &Diffeo) -> Result<TestFunction> {
    if let Some((s, b)) = map.as_isotropic_affine() {
        return h.compose_affine(s, &b);
    }
    let support = map.preimage_box(&h.support_box())?;
    Ok(TestFunction::custom(
        h.dim(),
        Arc::new(Composed {
            h: h.clone(),
            map: map.clone(),
            support,
        }),
    ))
}
