//! Composite Gauss–Legendre quadrature on intervals and boxes.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::legendre::GaussLegendre;

use crate::geometry::{Bx, Point};

/// Resolution of the composite rule.
///
/// Panel counts are expressed per unit length of the *unit-scale* support of a
/// test function, so a rescaled function is integrated with the same relative
/// resolution at every scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureSpec {
    pub panels_per_unit_support: u32,
    pub nodes_per_panel: usize,
    pub absolute_tolerance: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            panels_per_unit_support: 64,
            nodes_per_panel: 16,
            absolute_tolerance: 1e-9,
        }
    }
}

impl QuadratureSpec {
    /// Default resolution for dimension `dim`. Tensor rules in d = 2 use 8
    /// panels per unit length instead of 64; the bump is resolved to ~1e-13
    /// with 16 panels across its diameter.
    pub fn for_dim(dim: usize) -> Self {
        let mut q = QuadratureSpec::default();
        if dim >= 2 {
            q.panels_per_unit_support = 8;
        }
        q
    }

    /// Same rule with twice as many panels.
    pub fn doubled(&self) -> Self {
        QuadratureSpec {
            panels_per_unit_support: self.panels_per_unit_support * 2,
            ..*self
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.panels_per_unit_support == 0 || !self.panels_per_unit_support.is_power_of_two() {
            return Err(crate::Error::Config(format!(
                "panels_per_unit_support must be a power of two, got {}",
                self.panels_per_unit_support
            )));
        }
        if self.nodes_per_panel == 0 {
            return Err(crate::Error::Config(
                "nodes_per_panel must be positive".into(),
            ));
        }
        if !(self.absolute_tolerance > 0.0) {
            return Err(crate::Error::Config(
                "absolute_tolerance must be positive".into(),
            ));
        }
        Ok(())
    }

    fn panels_for(&self, len: f64, freq: f64) -> usize {
        let base = (self.panels_per_unit_support as f64 * len).ceil() as usize;
        // A panel spans at most nodes/2 radians of phase.
        let osc = (freq.abs() * len / (self.nodes_per_panel as f64 / 2.0)).ceil() as usize;
        base.max(osc).max(1)
    }
}

type Rule = Arc<Vec<(f64, f64)>>;

/// Gauss–Legendre nodes and weights on [-1, 1], cached per order.
pub fn legendre_rule(n: usize) -> Rule {
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry(n)
        .or_insert_with(|| {
            let gl = GaussLegendre::new(NonZeroUsize::new(n).expect("positive order"));
            let mut pairs: Vec<(f64, f64)> = gl.as_node_weight_pairs().to_vec();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            Arc::new(pairs)
        })
        .clone()
}

/// Nodes and weights of the composite rule on `[lo, hi]`.
///
/// The interval is first split at the `breaks` that fall strictly inside it;
/// each piece gets a panel count proportional to its length, raised if needed
/// so that a panel never spans more than nodes_per_panel/2 radians of `freq`.
pub fn nodes_1d(
    lo: f64,
    hi: f64,
    breaks: &[f64],
    freq: f64,
    spec: &QuadratureSpec,
) -> Vec<(f64, f64)> {
    if !(hi > lo) {
        return Vec::new();
    }
    let mut cuts: Vec<f64> = Vec::with_capacity(breaks.len() + 2);
    cuts.push(lo);
    cuts.extend(breaks.iter().copied().filter(|b| *b > lo && *b < hi));
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let rule = legendre_rule(spec.nodes_per_panel);
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let panels = spec.panels_for(b - a, freq);
        let h = (b - a) / panels as f64;
        for p in 0..panels {
            let pa = a + h * p as f64;
            let mid = pa + 0.5 * h;
            for &(x, wt) in rule.iter() {
                out.push((mid + 0.5 * h * x, 0.5 * h * wt));
            }
        }
    }
    out
}

/// Tensor-product nodes on a box. `breaks[axis]` and `freq[axis]` as in [`nodes_1d`].
pub fn nodes_box(
    b: &Bx,
    breaks: &[Vec<f64>],
    freq: &[f64],
    spec: &QuadratureSpec,
) -> Vec<(Point, f64)> {
    let d = b.dim();
    let empty = Vec::new();
    let axis = |i: usize| {
        nodes_1d(
            b.lo.get(i),
            b.hi.get(i),
            breaks.get(i).unwrap_or(&empty),
            freq.get(i).copied().unwrap_or(0.0),
            spec,
        )
    };
    match d {
        1 => axis(0).into_iter().map(|(x, w)| (Point::x(x), w)).collect(),
        2 => {
            let xs = axis(0);
            let ys = axis(1);
            let mut out = Vec::with_capacity(xs.len() * ys.len());
            for &(x, wx) in &xs {
                for &(y, wy) in &ys {
                    out.push((Point::xy(x, y), wx * wy));
                }
            }
            out
        }
        _ => unreachable!("dimension checked at construction"),
    }
}

/// ∫_b f over a box.
pub fn integrate_box(
    b: &Bx,
    breaks: &[Vec<f64>],
    spec: &QuadratureSpec,
    f: impl Fn(&Point) -> f64,
) -> f64 {
    nodes_box(b, breaks, &[], spec)
        .iter()
        .map(|(p, w)| w * f(p))
        .sum()
}
