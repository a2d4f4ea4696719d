//! Points and axis-aligned boxes in ℝ¹ and ℝ².

use std::fmt;
use std::ops::{Add, Mul, Sub};

/// Largest supported dimension.
pub const MAX_DIM: usize = 2;

/// A point of ℝ^d for d ∈ {1, 2}. Unused coordinates are kept at zero.
#[derive(Clone, Copy, PartialEq)]
pub struct Point {
    coords: [f64; MAX_DIM],
    dim: usize,
}

impl Point {
    pub fn new(coords: &[f64]) -> Self {
        assert!(
            (1..=MAX_DIM).contains(&coords.len()),
            "only dimensions 1 and 2 are supported"
        );
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Point {
            coords: c,
            dim: coords.len(),
        }
    }

    pub fn x(x: f64) -> Self {
        Point {
            coords: [x, 0.0],
            dim: 1,
        }
    }

    pub fn xy(x: f64, y: f64) -> Self {
        Point {
            coords: [x, y],
            dim: 2,
        }
    }

    pub fn origin(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim));
        Point {
            coords: [0.0; MAX_DIM],
            dim,
        }
    }

    pub fn splat(dim: usize, v: f64) -> Self {
        let mut p = Point::origin(dim);
        for i in 0..dim {
            p.coords[i] = v;
        }
        p
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.coords[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: f64) {
        debug_assert!(i < self.dim);
        self.coords[i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    pub fn map(&self, mut f: impl FnMut(usize, f64) -> f64) -> Point {
        let mut out = *self;
        for i in 0..self.dim {
            out.coords[i] = f(i, self.coords[i]);
        }
        out
    }

    pub fn norm_sq(&self) -> f64 {
        self.as_slice().iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (*self - *other).norm()
    }

    pub fn dot(&self, other: &Point) -> f64 {
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        debug_assert_eq!(self.dim, rhs.dim);
        self.map(|i, v| v + rhs.coords[i])
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        debug_assert_eq!(self.dim, rhs.dim);
        self.map(|i, v| v - rhs.coords[i])
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        self.map(|_, v| v * s)
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.as_slice())
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.as_slice().iter().map(|v| format!("{v}")).collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// Closed axis-aligned box `[lo, hi]`.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct Bx {
    pub lo: Point,
    pub hi: Point,
}

impl Bx {
    pub fn new(lo: Point, hi: Point) -> Self {
        assert_eq!(lo.dim(), hi.dim());
        Bx { lo, hi }
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        Bx::new(Point::x(lo), Point::x(hi))
    }

    pub fn square(lo: f64, hi: f64) -> Self {
        Bx::new(Point::xy(lo, lo), Point::xy(hi, hi))
    }

    /// Box circumscribing the ball `B(center, radius)`.
    pub fn around(center: Point, radius: f64) -> Self {
        Bx::new(center.map(|_, v| v - radius), center.map(|_, v| v + radius))
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi.get(axis) - self.lo.get(axis)
    }

    pub fn max_width(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).fold(0.0, f64::max)
    }

    pub fn center(&self) -> Point {
        (self.lo + self.hi) * 0.5
    }

    pub fn diameter(&self) -> f64 {
        self.lo.dist(&self.hi)
    }

    pub fn is_empty(&self) -> bool {
        (0..self.dim()).any(|i| self.hi.get(i) < self.lo.get(i))
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..self.dim()).all(|i| p.get(i) >= self.lo.get(i) && p.get(i) <= self.hi.get(i))
    }

    pub fn contains_box(&self, other: &Bx) -> bool {
        self.contains(&other.lo) && self.contains(&other.hi)
    }

    pub fn intersect(&self, other: &Bx) -> Bx {
        Bx::new(
            self.lo.map(|i, v| v.max(other.lo.get(i))),
            self.hi.map(|i, v| v.min(other.hi.get(i))),
        )
    }

    pub fn union(&self, other: &Bx) -> Bx {
        Bx::new(
            self.lo.map(|i, v| v.min(other.lo.get(i))),
            self.hi.map(|i, v| v.max(other.hi.get(i))),
        )
    }

    /// Grow (or shrink, for negative `by`) every face by `by`.
    pub fn inflate(&self, by: f64) -> Bx {
        Bx::new(self.lo.map(|_, v| v - by), self.hi.map(|_, v| v + by))
    }

    /// Smallest distance between the faces of `self` and an inner box `inner`.
    /// Negative when `inner` pokes out.
    pub fn face_margin(&self, inner: &Bx) -> f64 {
        (0..self.dim())
            .map(|i| (inner.lo.get(i) - self.lo.get(i)).min(self.hi.get(i) - inner.hi.get(i)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Image of the box under `x ↦ center + scale·x`.
    pub fn affine(&self, center: Point, scale: f64) -> Bx {
        let a = center + self.lo * scale;
        let b = center + self.hi * scale;
        Bx::new(a.map(|i, v| v.min(b.get(i))), a.map(|i, v| v.max(b.get(i))))
    }
}
