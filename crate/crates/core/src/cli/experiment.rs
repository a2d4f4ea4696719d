//! Builds germs, grids and atlases from a [`Config`] and runs the requested experiments.

use std::path::PathBuf;
use std::sync::Arc;

use super::config::{Config, Kind};
use super::output::{num, point, Sink};
use crate::coherence::{
    coherence_scan, default_order, enhanced_check, fit_exponents, homogeneity_scan, psi_ensemble,
    CoherenceReport, ScanGrid, FIT_TOLERANCE,
};
use crate::distribution::{LacunarySeries, PairingOracle, SmoothFn};
use crate::germ::{
    holder_generator, make_constant, make_taylor, make_young, resonant_generator, GermKind,
};
use crate::manifold::{
    build_pou, chart_compact, compare, global_ensemble, global_reconstruct, glue_check,
    overlap_ensemble, Atlas, GlobalOptions, GlobalReconstruction, Manifold, ManifoldGerm,
    PerturbedLocal,
};
use crate::reconstruct::{
    build_mollifier, residual_scan, LocalReconstruction, MollifierFamily, ReconstructOptions,
};
use crate::testfn::unit_integral_bump;
use crate::{
    Bx, Distribution, Error, Germ, OpenSetDomain, Point, QuadratureSpec, Result, TestFunction,
};

/// Built-in demo configurations.
pub const DEMOS: &[(&str, &str)] = &[
    (
        "constant-circle",
        "experiment.kind = glue, atlas-compare
germ.kind = constant
germ.distribution = cos
domain.kind = circle
atlas.kind = two-arc
atlas.compare = three-arc
atlas.ensemble = 10
scan.seed = 0
",
    ),
    (
        "taylor-line",
        "experiment.kind = coherence, reconstruct, residual
germ.kind = taylor
germ.function = sin
germ.order = 2
domain.kind = interval
domain.lo = 1
domain.hi = 4
scan.k_lo = 2
scan.k_hi = 3
scan.n_pairs = 64
mollifier.order = 3
scan.seed = 0
",
    ),
    (
        "young-circle",
        "experiment.kind = coherence, homogeneity, residual
germ.kind = young
germ.beta = 0.7
germ.a = 0.4
domain.kind = circle
atlas.kind = two-arc
scan.k_lo = 0.5
scan.k_hi = 1.5
scan.n_pairs = 256
scan.seed = 5
mollifier.n_max = 14
",
    ),
    (
        "atlas-independence",
        "experiment.kind = atlas-compare
germ.kind = taylor
germ.function = sin
germ.order = 2
domain.kind = circle
atlas.kind = two-arc
atlas.compare = three-arc
atlas.ensemble = 10
mollifier.order = 3
scan.seed = 0
",
    ),
    (
        "nonuniqueness",
        "experiment.kind = nonuniqueness
germ.kind = young
germ.beta = 0.4
germ.a = 0.4
germ.phase = sin
domain.kind = circle
atlas.kind = two-arc-scaled
atlas.pou_seed = 1
atlas.pou_seed_b = 2
atlas.ensemble = 20
mollifier.order = 2
mollifier.n_max = 8
scan.seed = 5
",
    ),
    (
        "perturbed-glue",
        "experiment.kind = glue
germ.kind = constant
germ.distribution = cos
domain.kind = circle
atlas.kind = two-arc
atlas.perturbation = 1e-3
scan.seed = 3
",
    ),
];

pub fn demo_config(name: &str) -> Result<Config> {
    let text = DEMOS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<&str> = DEMOS.iter().map(|(n, _)| *n).collect();
            Error::Config(format!(
                "unknown demo `{name}`; available: {}",
                names.join(", ")
            ))
        })?;
    Config::parse(text)
}

/// Outcome of a completed run.
#[derive(Debug)]
pub struct RunReport {
    pub failed_checks: Vec<String>,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

enum Target {
    Local(Germ),
    OnManifold {
        germ: ManifoldGerm,
        atlas: Atlas,
        chart: usize,
    },
}

/// Everything derived from the config before any experiment runs.
pub struct Setup {
    cfg: Config,
    seed: u64,
    spec: QuadratureSpec,
    target: Target,
    local: Arc<Germ>,
    k: Bx,
    fit: Option<CoherenceReport>,
}

fn parse_atlas(name: &str) -> Result<Atlas> {
    Ok(match name {
        "two-arc" => Atlas::circle_two_arc(),
        "two-arc-scaled" => Atlas::circle_two_arc_scaled(),
        "three-arc" => Atlas::circle_three_arc(),
        "four-patch" => Atlas::torus_four_patch(),
        other => return Err(Error::Config(format!("unknown atlas `{other}`"))),
    })
}

fn build_base_germ(cfg: &Config, dim: usize, spec: &QuadratureSpec) -> Result<Germ> {
    let amp: f64 = cfg.parse_or("germ.amplitude", 1.0)?;
    let freq: f64 = cfg.parse_or("germ.frequency", 1.0)?;
    match cfg.require("germ.kind")? {
        "constant" => {
            let t = match cfg.get("germ.distribution").unwrap_or("cos") {
                "cos" => PairingOracle::smooth(SmoothFn::cosine(amp, Point::splat(dim, freq), 0.0)),
                "sin" => PairingOracle::smooth(SmoothFn::cosine(
                    amp,
                    Point::splat(dim, freq),
                    -std::f64::consts::FRAC_PI_2,
                )),
                "one" => PairingOracle::smooth(SmoothFn::constant(dim, amp)),
                "zero" => PairingOracle::zero(dim),
                "dirac" => {
                    let at: f64 = cfg.parse_or("germ.at", 0.0)?;
                    let d = PairingOracle::dirac(Point::splat(dim, at));
                    if amp == 1.0 {
                        d
                    } else {
                        d.scaled(amp)
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown germ.distribution `{other}`"
                    )))
                }
            };
            Ok(make_constant(t.with_spec(*spec)))
        }
        "taylor" => {
            if dim != 1 {
                return Err(Error::Config(
                    "taylor germs need a one-dimensional domain".into(),
                ));
            }
            let order: u32 = cfg
                .parse_opt("germ.order")?
                .ok_or_else(|| Error::Config("missing required key `germ.order`".into()))?;
            let g = match cfg.get("germ.function").unwrap_or("sin") {
                "sin" => SmoothFn::sine_1d(amp, freq),
                "cos" => SmoothFn::cosine(amp, Point::x(freq), 0.0),
                other => return Err(Error::Config(format!("unknown germ.function `{other}`"))),
            };
            make_taylor(g, order)
        }
        "young" => {
            if dim != 1 {
                return Err(Error::Config(
                    "young germs need a one-dimensional domain".into(),
                ));
            }
            let beta: f64 = cfg.parse_or("germ.beta", 0.7)?;
            let a: f64 = cfg.parse_or("germ.a", 0.4)?;
            let truncation: u32 = cfg.parse_or("germ.truncation", 12)?;
            let g = match cfg.get("germ.phase").unwrap_or("cos") {
                "cos" => holder_generator(beta, truncation),
                "sin" => resonant_generator(beta, truncation),
                other => return Err(Error::Config(format!("unknown germ.phase `{other}`"))),
            };
            make_young(g, beta, LacunarySeries::new(a, truncation, true))
        }
        other => Err(Error::Config(format!("unknown germ.kind `{other}`"))),
    }
}

fn scalar_box(cfg: &Config, dim: usize, lo_key: &str, hi_key: &str) -> Result<Option<Bx>> {
    let lo: Option<f64> = cfg.parse_opt(lo_key)?;
    let hi: Option<f64> = cfg.parse_opt(hi_key)?;
    match (lo, hi) {
        (None, None) => Ok(None),
        (Some(lo), Some(hi)) if hi > lo => Ok(Some(if dim == 1 {
            Bx::interval(lo, hi)
        } else {
            Bx::square(lo, hi)
        })),
        (Some(_), Some(_)) => Err(Error::Config(format!(
            "`{lo_key}` must be below `{hi_key}`"
        ))),
        _ => Err(Error::Config(format!(
            "`{lo_key}` and `{hi_key}` go together"
        ))),
    }
}

impl Setup {
    pub fn new(cfg: Config) -> Result<Setup> {
        cfg.kinds()?;
        let seed = cfg.seed()?;
        let domain_kind = cfg.get("domain.kind").unwrap_or("interval");
        let dim = match domain_kind {
            "box" | "torus" => 2,
            _ => 1,
        };
        let mut spec = QuadratureSpec::for_dim(dim);
        spec.panels_per_unit_support =
            cfg.parse_or("quadrature.panels", spec.panels_per_unit_support)?;
        spec.nodes_per_panel = cfg.parse_or("quadrature.nodes", spec.nodes_per_panel)?;
        spec.absolute_tolerance = cfg.parse_or("quadrature.tolerance", spec.absolute_tolerance)?;
        spec.validate()?;
        let base = build_base_germ(&cfg, dim, &spec)?;

        let target = match domain_kind {
            "interval" | "box" => {
                let b = scalar_box(&cfg, dim, "domain.lo", "domain.hi")?.ok_or_else(|| {
                    Error::Config("bounded domains need `domain.lo` and `domain.hi`".into())
                })?;
                Target::Local(base.with_domain(OpenSetDomain::Box(b)))
            }
            "whole" => Target::Local(base.with_domain(OpenSetDomain::Whole(dim))),
            "circle" | "torus" => {
                let manifold = if dim == 1 {
                    Manifold::Circle
                } else {
                    Manifold::Torus
                };
                let default_atlas = if dim == 1 { "two-arc" } else { "four-patch" };
                let atlas = parse_atlas(cfg.get("atlas.kind").unwrap_or(default_atlas))?;
                if atlas.manifold != manifold {
                    return Err(Error::Config(
                        "atlas.kind does not cover domain.kind".into(),
                    ));
                }
                let chart: usize = cfg.parse_or("atlas.chart", 0)?;
                if chart >= atlas.len() {
                    return Err(Error::Config(format!(
                        "atlas.chart = {chart} but the atlas has {} charts",
                        atlas.len()
                    )));
                }
                Target::OnManifold {
                    germ: ManifoldGerm::new(manifold, base)?,
                    atlas,
                    chart,
                }
            }
            other => return Err(Error::Config(format!("unknown domain.kind `{other}`"))),
        };
        let (local, default_k) = match &target {
            Target::Local(g) => {
                let k = match g.domain() {
                    OpenSetDomain::Box(b) => Some(b.inflate(-b.max_width() / 4.0)),
                    _ => None,
                };
                (g.clone(), k)
            }
            Target::OnManifold { germ, atlas, chart } => {
                let pou = build_pou(atlas, None)?;
                (
                    germ.chart_germ(atlas, *chart)?,
                    Some(chart_compact(&pou, *chart)),
                )
            }
        };
        let k = match scalar_box(&cfg, dim, "scan.k_lo", "scan.k_hi")? {
            Some(k) => k,
            None => default_k.ok_or_else(|| {
                Error::Config("unbounded domains need `scan.k_lo` and `scan.k_hi`".into())
            })?,
        };
        if !local.domain().contains_box(&k) {
            return Err(Error::Config(format!(
                "scan box {k:?} is not compactly inside the domain"
            )));
        }
        let kinds = cfg.kinds()?;
        let needs_manifold = kinds
            .iter()
            .any(|k| matches!(k, Kind::Glue | Kind::AtlasCompare | Kind::Nonuniqueness));
        if needs_manifold && matches!(target, Target::Local(_)) {
            return Err(Error::Config(
                "glue and atlas experiments need domain.kind = circle or torus".into(),
            ));
        }
        if kinds.contains(&Kind::AtlasCompare) {
            parse_atlas(cfg.require("atlas.compare")?)?;
        }
        Ok(Setup {
            cfg,
            seed,
            spec,
            target,
            local: Arc::new(local),
            k,
            fit: None,
        })
    }

    fn grid(&self) -> Result<ScanGrid> {
        let m_min: u32 = self.cfg.parse_or("scan.m_min", 3)?;
        let m_max: u32 = self.cfg.parse_or("scan.m_max", 10)?;
        let n_pairs: usize = self.cfg.parse_or("scan.n_pairs", 64)?;
        Ok(ScanGrid::new(self.k, n_pairs, self.seed).with_scales(m_min, m_max))
    }

    fn scan_test(&self) -> Result<TestFunction> {
        let d = self.local.dim();
        Ok(match self.cfg.get("scan.test").unwrap_or("bump") {
            "bump" => TestFunction::bump(d),
            "asymmetric" => TestFunction::poly_bump(d, vec![([0, 0], 1.0), ([1, 0], 0.5)]),
            other => return Err(Error::Config(format!("unknown scan.test `{other}`"))),
        })
    }

    fn coherence_fit(&mut self, sink: &mut Sink, write_table: bool) -> Result<CoherenceReport> {
        if let Some(f) = &self.fit {
            if !write_table {
                return Ok(f.clone());
            }
        }
        let rows = coherence_scan(&self.local, &self.grid()?, &self.scan_test()?)?;
        if write_table {
            sink.table(
                "coherence",
                "p,q,lambda,value,regime",
                rows.iter().map(|r| {
                    format!(
                        "{},{},{},{},{}",
                        point(&r.p),
                        point(&r.q),
                        num(r.lambda),
                        num(r.value),
                        r.regime
                    )
                }),
            );
        }
        let fit = fit_exponents(&rows)?;
        self.fit = Some(fit.clone());
        Ok(fit)
    }

    fn mollifier(&mut self, sink: &mut Sink) -> Result<Arc<MollifierFamily>> {
        let r = match self.cfg.get("mollifier.order").unwrap_or("AUTO") {
            "AUTO" | "auto" => default_order(self.coherence_fit(sink, false)?.alpha),
            v => v
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse `mollifier.order = {v}`")))?,
        };
        sink.line(format!("mollifier order r = {r}"));
        Ok(Arc::new(build_mollifier(
            &TestFunction::bump(self.local.dim()),
            r,
        )?))
    }

    fn reconstruct_options(&self, gamma: Option<f64>) -> Result<ReconstructOptions> {
        let d = ReconstructOptions::default();
        Ok(ReconstructOptions {
            n_min: self.cfg.parse_or("mollifier.n_min", d.n_min)?,
            n_max: self.cfg.parse_or("mollifier.n_max", d.n_max)?,
            tol_conv: self.cfg.parse_or("mollifier.tol", d.tol_conv)?,
            spec: self.spec,
            gamma,
            full_sequence: false,
        })
    }

    fn global_options(&self) -> Result<GlobalOptions> {
        let d = GlobalOptions::default();
        Ok(GlobalOptions {
            reconstruct: self.reconstruct_options(None)?,
            glue_tolerance: self.cfg.parse_or("atlas.tolerance", d.glue_tolerance)?,
            per_overlap: self.cfg.parse_or("atlas.per_overlap", d.per_overlap)?,
            scan_pairs: self.cfg.parse_or("scan.n_pairs", d.scan_pairs)?,
            seed: self.seed,
        })
    }

    fn manifold(&self) -> Result<(&ManifoldGerm, &Atlas)> {
        match &self.target {
            Target::OnManifold { germ, atlas, .. } => Ok((germ, atlas)),
            Target::Local(_) => Err(Error::Config(
                "this experiment needs domain.kind = circle or torus".into(),
            )),
        }
    }

    pub fn run(&mut self, kind: Kind, sink: &mut Sink) -> Result<()> {
        sink.line(format!("[{}]", kind_name(kind)));
        match kind {
            Kind::Coherence => self.run_coherence(sink),
            Kind::Homogeneity => self.run_homogeneity(sink),
            Kind::Enhanced => self.run_enhanced(sink),
            Kind::Reconstruct => self.run_reconstruct(sink),
            Kind::Residual => self.run_residual(sink),
            Kind::Glue => self.run_glue(sink),
            Kind::AtlasCompare => self.run_atlas_compare(sink),
            Kind::Nonuniqueness => self.run_nonuniqueness(sink),
            Kind::Demo => Err(Error::Config(
                "experiment.kind = demo cannot be combined with other kinds".into(),
            )),
        }
    }

    fn run_coherence(&mut self, sink: &mut Sink) -> Result<()> {
        let fit = self.coherence_fit(sink, true)?;
        write_fit(sink, &fit);
        sink.check(
            "alpha <= min(0, gamma)",
            fit.satisfies_constraint(FIT_TOLERANCE),
            format!("tolerance {FIT_TOLERANCE}"),
        );
        Ok(())
    }

    fn run_homogeneity(&mut self, sink: &mut Sink) -> Result<()> {
        let h = homogeneity_scan(&self.local, &self.grid()?, &self.scan_test()?)?;
        sink.table(
            "homogeneity",
            "p,lambda,value",
            h.rows
                .iter()
                .map(|r| format!("{},{},{}", point(&r.p), num(r.lambda), num(r.value))),
        );
        let fit = self.coherence_fit(sink, false)?;
        if h.exact {
            sink.line("beta = +inf (all values zero)");
        } else {
            sink.line(format!("beta = {}", num(h.beta)));
            sink.line(format!("homogeneity constant = {}", num(h.constant)));
            sink.line(format!(
                "homogeneity rms = {}  rows = {}",
                num(h.rms),
                h.rows_used
            ));
        }
        let ok = h.exact && fit.exact || !h.exact && (fit.exact || h.beta < fit.gamma);
        sink.check("beta < gamma", ok, format!("gamma = {}", num(fit.gamma)));
        Ok(())
    }

    fn run_enhanced(&mut self, sink: &mut Sink) -> Result<()> {
        let fit = self.coherence_fit(sink, false)?;
        let r = match self.cfg.parse_opt::<u32>("scan.order")? {
            Some(r) => r,
            None => default_order(fit.alpha),
        };
        let n: usize = self.cfg.parse_or("scan.ensemble", 100)?;
        let ensemble = psi_ensemble(self.local.dim(), n, self.seed);
        let rep = enhanced_check(&self.local, &self.grid()?, r, &ensemble, &fit)?;
        sink.table(
            "enhanced",
            "p,q,lambda,psi_id,ratio",
            rep.rows.iter().map(|w| {
                format!(
                    "{},{},{},{},{}",
                    point(&w.p),
                    point(&w.q),
                    num(w.lambda),
                    w.psi_id,
                    num(w.ratio)
                )
            }),
        );
        sink.line(format!("order r = {}  ensemble = {n}", rep.order));
        sink.line(format!("max ratio = {}", num(rep.max_ratio)));
        sink.check("ratio bounded", rep.passed(), "finite maximum");
        Ok(())
    }

    fn psi_for_reconstruction(&self) -> Result<Vec<TestFunction>> {
        let n: usize = self.cfg.parse_or("scan.ensemble", 8)?;
        let d = self.local.dim();
        let scale = (self.k.max_width() / 4.0).min(self.local.domain().d_k(&self.k) / 2.0);
        let centers = ScanGrid::new(self.k, n, self.seed).scan_points();
        psi_ensemble(d, n, self.seed)
            .iter()
            .zip(centers)
            .map(|(psi, c)| psi.rescale(&c, scale))
            .collect()
    }

    fn run_reconstruct(&mut self, sink: &mut Sink) -> Result<()> {
        let fit = self.coherence_fit(sink, false)?;
        let m = self.mollifier(sink)?;
        let opts = self.reconstruct_options(Some(fit.gamma))?;
        let rf = LocalReconstruction::new(self.local.clone(), m, opts);
        let mut rows = Vec::new();
        let mut unconverged = 0;
        for (id, psi) in self.psi_for_reconstruction()?.iter().enumerate() {
            let rec = rf.run(psi)?;
            for e in &rec.sequence {
                rows.push(format!("{id},{},{},{}", e.n, num(e.eps), num(e.value)));
            }
            let reference = match self.local.kind() {
                GermKind::Constant(t) => format!("  direct = {}", num(t.pair(psi)?)),
                _ => String::new(),
            };
            sink.line(format!(
                "psi {id}: value = {}  n* = {}  converged = {}{reference}",
                num(rec.value),
                rec.n_star,
                rec.converged
            ));
            if !rec.converged {
                unconverged += 1;
            }
        }
        sink.table("reconstruct", "psi_id,n,eps,value", rows);
        if fit.gamma > 0.0 {
            sink.check(
                "converged",
                unconverged == 0,
                format!("{unconverged} unconverged"),
            );
        } else {
            sink.line(format!(
                "gamma <= 0: {unconverged} sequences reported at n_max"
            ));
        }
        Ok(())
    }

    fn run_residual(&mut self, sink: &mut Sink) -> Result<()> {
        let fit = self.coherence_fit(sink, false)?;
        let m = self.mollifier(sink)?;
        let opts = self.reconstruct_options(Some(fit.gamma))?;
        let rf = LocalReconstruction::new(self.local.clone(), m, opts);
        let points: usize = self.cfg.parse_or("scan.points", 8)?;
        let mut grid = self.grid()?;
        grid.n_pairs = points;
        let h = match self.cfg.get("scan.test") {
            None => TestFunction::poly_bump(self.local.dim(), vec![([0, 0], 1.0), ([1, 0], 0.5)]),
            Some(_) => self.scan_test()?,
        };
        let rep = residual_scan(&self.local, &rf, &grid, &h)?;
        sink.table(
            "residual",
            "p,lambda,residual",
            rep.rows
                .iter()
                .map(|r| format!("{},{},{}", point(&r.p), num(r.lambda), num(r.residual))),
        );
        sink.line(format!(
            "residual slope = {}  rms = {}",
            num(rep.slope),
            num(rep.rms)
        ));
        sink.line(format!(
            "envelope C(1 + |ln lambda|): C = {}  normalized slope = {}",
            num(rep.envelope_constant),
            num(rep.envelope_slope)
        ));
        let max = rep.rows.iter().map(|r| r.residual).fold(0.0, f64::max);
        if fit.exact {
            sink.check(
                "residual vanishes",
                max <= 1e-6,
                format!("max residual {}", num(max)),
            );
        } else if rep.slope.is_nan() {
            sink.check(
                "residual vanishes",
                max <= 1e-6,
                format!("too few nonzero scales; max residual {}", num(max)),
            );
        } else {
            sink.check(
                "residual slope >= gamma - 0.3",
                rep.slope >= fit.gamma - 0.3,
                format!("gamma = {}", num(fit.gamma)),
            );
        }
        Ok(())
    }

    fn run_glue(&mut self, sink: &mut Sink) -> Result<()> {
        let gopts = self.global_options()?;
        let (germ, atlas) = self.manifold()?;
        let (germ, atlas) = (germ.clone(), atlas.clone());
        let pou = build_pou(&atlas, None)?;
        let exact = matches!(germ.base.kind(), GermKind::Constant(_));
        let mut locals: Vec<Arc<dyn Distribution>> = Vec::new();
        let mut gamma = f64::INFINITY;
        let m = if exact {
            None
        } else {
            Some(self.mollifier(sink)?)
        };
        for j in 0..atlas.len() {
            let cg = germ.chart_germ(&atlas, j)?;
            if let Some(m) = &m {
                let grid = ScanGrid::new(chart_compact(&pou, j), gopts.scan_pairs, self.seed);
                let fit = fit_exponents(&coherence_scan(
                    &cg,
                    &grid,
                    &TestFunction::bump(atlas.dim()),
                )?)?;
                sink.line(format!(
                    "chart {j}: gamma = {}  alpha = {}",
                    num(fit.gamma),
                    num(fit.alpha)
                ));
                gamma = gamma.min(fit.gamma);
                let opts = self.reconstruct_options(Some(fit.gamma))?;
                locals.push(Arc::new(LocalReconstruction::new(
                    Arc::new(cg),
                    m.clone(),
                    opts,
                )));
            } else {
                let c = atlas.charts[j].image().center();
                locals.push(cg.eval(&c)?);
            }
        }
        let eps: f64 = self.cfg.parse_or("atlas.perturbation", 0.0)?;
        if eps != 0.0 {
            let comp = atlas
                .overlap(0, 1)
                .pop()
                .ok_or_else(|| Error::Config("charts 0 and 1 do not overlap".into()))?;
            let bump = unit_integral_bump(atlas.dim())
                .rescale(&comp.region.center(), comp.region.width(0) / 32.0)?;
            locals[0] = Arc::new(PerturbedLocal {
                base: locals[0].clone(),
                bump,
                eps,
                spec: self.spec,
            });
            sink.line(format!(
                "chart 0 perturbed by {} times a unit-integral bump",
                num(eps)
            ));
        }
        let tol: f64 = self
            .cfg
            .parse_or("atlas.tolerance", if exact { 1e-9 } else { 1e-5 })?;
        let ensemble = overlap_ensemble(&atlas, gopts.per_overlap, self.seed)?;
        let rep = glue_check(&locals, &atlas, &ensemble, tol)?;
        sink.table(
            "glue",
            "chart_i,chart_j,g_id,lhs,rhs,abs_diff",
            rep.rows.iter().map(|r| {
                format!(
                    "{},{},{},{},{},{}",
                    r.chart_i,
                    r.chart_j,
                    r.g_id,
                    num(r.lhs),
                    num(r.rhs),
                    num(r.abs_diff)
                )
            }),
        );
        sink.line(format!(
            "max discrepancy = {}  tolerance = {}",
            num(rep.max_discrepancy),
            num(tol)
        ));
        if let Some(w) = &rep.witness {
            sink.line(format!(
                "witness: chart_i = {} chart_j = {} g_id = {} lhs = {} rhs = {} abs_diff = {}",
                w.chart_i,
                w.chart_j,
                w.g_id,
                num(w.lhs),
                num(w.rhs),
                num(w.abs_diff)
            ));
        }
        if gamma > 0.0 {
            sink.check("glue", rep.passed, "required because gamma > 0");
        } else {
            sink.line(format!(
                "glue {} (not required for gamma <= 0)",
                if rep.passed { "holds" } else { "fails" }
            ));
        }
        Ok(())
    }

    fn compare_table(
        &self,
        sink: &mut Sink,
        name: &str,
        a: &GlobalReconstruction,
        b: &GlobalReconstruction,
    ) -> Result<f64> {
        let (germ, _) = self.manifold()?;
        let n: usize = self.cfg.parse_or("atlas.ensemble", 20)?;
        let ensemble = global_ensemble(&germ.manifold, n, self.seed);
        let rep = compare(a, b, &ensemble)?;
        sink.table(
            name,
            "h_id,rf_a,rf_b,rel_diff",
            rep.rows.iter().map(|r| {
                format!(
                    "{},{},{},{}",
                    r.h_id,
                    num(r.rf_a),
                    num(r.rf_b),
                    num(r.rel_diff)
                )
            }),
        );
        for (label, g) in [("a", a), ("b", b)] {
            for (j, f) in g.chart_fits.iter().enumerate() {
                sink.line(format!(
                    "{label} chart {j}: gamma = {}  alpha = {}",
                    num(f.gamma),
                    num(f.alpha)
                ));
            }
        }
        sink.line(format!(
            "max relative difference = {}",
            num(rep.max_rel_diff)
        ));
        Ok(rep.max_rel_diff)
    }

    fn run_atlas_compare(&mut self, sink: &mut Sink) -> Result<()> {
        let m = self.mollifier(sink)?;
        let gopts = self.global_options()?;
        let (germ, atlas) = self.manifold()?;
        let other = parse_atlas(self.cfg.require("atlas.compare")?)?;
        let a = global_reconstruct(germ, Arc::new(build_pou(atlas, None)?), m.clone(), &gopts)?;
        let b = global_reconstruct(germ, Arc::new(build_pou(&other, None)?), m, &gopts)?;
        sink.line(format!("atlases: {} vs {}", atlas.label, other.label));
        let diff = self.compare_table(sink, "atlas_compare", &a, &b)?;
        let gamma = a.gamma().min(b.gamma());
        if gamma > 0.0 {
            let tol: f64 = self.cfg.parse_or("atlas.tolerance", 1e-5)?;
            sink.check(
                "atlas independence",
                diff <= tol,
                format!("tolerance {}", num(tol)),
            );
        } else {
            sink.line("gamma <= 0: dependence on the atlas is expected and not checked");
        }
        Ok(())
    }

    fn run_nonuniqueness(&mut self, sink: &mut Sink) -> Result<()> {
        let m = self.mollifier(sink)?;
        let gopts = self.global_options()?;
        let (germ, atlas) = self.manifold()?;
        let s1: u64 = self.cfg.parse_or("atlas.pou_seed", 1)?;
        let s2: u64 = self.cfg.parse_or("atlas.pou_seed_b", 2)?;
        let a = global_reconstruct(
            germ,
            Arc::new(build_pou(atlas, Some(s1))?),
            m.clone(),
            &gopts,
        )?;
        let b = global_reconstruct(germ, Arc::new(build_pou(atlas, Some(s2))?), m, &gopts)?;
        sink.line(format!(
            "partitions of unity: seeds {s1} and {s2} on {}",
            atlas.label
        ));
        let diff = self.compare_table(sink, "nonuniqueness", &a, &b)?;
        let gamma = a.gamma().min(b.gamma());
        if gamma > 0.0 {
            sink.check(
                "partition independence",
                diff <= 1e-5,
                "gamma > 0, tolerance 1e-5",
            );
        } else {
            sink.check(
                "partition dependence",
                diff > 1e-3,
                "gamma <= 0, separation above 1e-3",
            );
        }
        Ok(())
    }
}

fn kind_name(kind: Kind) -> &'static str {
    match kind {
        Kind::Coherence => "coherence",
        Kind::Homogeneity => "homogeneity",
        Kind::Enhanced => "enhanced",
        Kind::Reconstruct => "reconstruct",
        Kind::Residual => "residual",
        Kind::Glue => "glue",
        Kind::AtlasCompare => "atlas-compare",
        Kind::Nonuniqueness => "nonuniqueness",
        Kind::Demo => "demo",
    }
}

fn write_fit(sink: &mut Sink, fit: &CoherenceReport) {
    if fit.exact {
        sink.line("EXACT: all values zero; coherent with any parameters (gamma = +inf)");
        sink.line(format!("rows = {}", fit.rows_excluded));
        return;
    }
    sink.line(format!("gamma = {}", num(fit.gamma)));
    sink.line(format!("alpha = {}", num(fit.alpha)));
    sink.line(format!(
        "far distance exponent = {}",
        num(fit.far_distance_exponent)
    ));
    sink.line(format!("constant = {}", num(fit.constant)));
    sink.line(format!(
        "rms near = {}  rms far = {}",
        num(fit.rms_near),
        num(fit.rms_far)
    ));
    sink.line(format!(
        "rows near = {}  far = {}  excluded = {}",
        fit.rows_near, fit.rows_far, fit.rows_excluded
    ));
    sink.line(format!("split rule: {}", fit.split_rule));
}

/// Runs every experiment in the config and writes the outputs under `outdir`.
pub fn run_config(cfg: Config, outdir: PathBuf) -> Result<RunReport> {
    if cfg.kinds()? == [Kind::Demo] {
        let name = cfg.require("experiment.name")?.to_string();
        return run_config(demo_config(&name)?, outdir);
    }
    let mut sink = Sink::new(outdir, &cfg.hash(), cfg.seed_text());
    let kinds = cfg.kinds()?;
    let mut setup = Setup::new(cfg)?;
    for kind in kinds {
        setup.run(kind, &mut sink)?;
    }
    let failed: Vec<String> = sink
        .summary()
        .lines()
        .filter(|l| l.starts_with("check ") && l.contains(": FAIL"))
        .map(str::to_string)
        .collect();
    let files = sink.write()?;
    Ok(RunReport {
        failed_checks: failed,
        summary: sink.summary().to_string(),
        files,
    })
}
