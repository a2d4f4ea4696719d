//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines always
//! appear in `cargo test` output. Expected values come from closed forms or
//! from the Simpson and finite-difference oracles below, never from the
//! routines under test.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use germlab::coherence::{
    coherence_scan, default_order, enhanced_check, fit_exponents, homogeneity_scan, psi_ensemble,
    recenter, ScanGrid,
};
use germlab::distribution::{LacunarySeries, SmoothFn};
use germlab::germ::{holder_generator, make_constant, make_taylor, make_young, resonant_generator};
use germlab::manifold::{
    atlas_compare, build_pou, compare, global_ensemble, global_reconstruct, glue_check,
    overlap_ensemble, Atlas, GlobalOptions, Manifold, ManifoldGerm, PerturbedLocal,
};
use germlab::reconstruct::{
    build_mollifier, reconstruct_local, residual_scan, LocalReconstruction, ReconstructOptions,
};
use germlab::rng::uniforms;
use germlab::testfn::unit_integral_bump;
use germlab::{
    Bx, Distribution, Germ, OpenSetDomain, PairingOracle, Point, QuadratureSpec, TestFunction,
};

/// Accumulates named sub-checks of one criterion.
#[derive(Default)]
struct Checks {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }
}

// ---- oracles -------------------------------------------------------------

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + h * i as f64);
    }
    s * h / 3.0
}

fn simpson_2d(f: impl Fn(f64, f64) -> f64, b: &Bx, n: usize) -> f64 {
    let (x0, x1, y0, y1) = (b.lo.get(0), b.hi.get(0), b.lo.get(1), b.hi.get(1));
    simpson(|x| simpson(|y| f(x, y), y0, y1, n), x0, x1, n)
}

fn integral_oracle(f: &TestFunction) -> f64 {
    let b = f.support_box();
    if f.dim() == 1 {
        simpson(|x| f.eval(&Point::x(x)), b.lo.get(0), b.hi.get(0), 4000)
    } else {
        simpson_2d(|x, y| f.eval(&Point::xy(x, y)), &b, 400)
    }
}

/// ∫ u·ψ for a density u, by Simpson on supp ψ.
fn density_pairing(u: impl Fn(f64) -> f64, psi: &TestFunction) -> f64 {
    let b = psi.support_box();
    simpson(
        |x| u(x) * psi.eval(&Point::x(x)),
        b.lo.get(0),
        b.hi.get(0),
        4000,
    )
}

/// sup over a grid of |k-th derivative| by central differences, d = 1.
fn fd_sup_1d(f: &TestFunction, k: u32) -> f64 {
    let b = f.support_box();
    let (a, w) = (b.lo.get(0), b.width(0));
    let h = 1e-3 * w;
    let e = |x: f64| f.eval(&Point::x(x));
    let deriv = |x: f64| match k {
        0 => e(x),
        1 => (e(x + h) - e(x - h)) / (2.0 * h),
        2 => (e(x + h) - 2.0 * e(x) + e(x - h)) / (h * h),
        3 => {
            (e(x + 2.0 * h) - 2.0 * e(x + h) + 2.0 * e(x - h) - e(x - 2.0 * h)) / (2.0 * h * h * h)
        }
        _ => unreachable!(),
    };
    (0..=20000)
        .map(|i| deriv(a + w * i as f64 / 20000.0).abs())
        .fold(0.0, f64::max)
}

/// sup |f| on a grid over the support box.
fn fd_sup(f: &TestFunction) -> f64 {
    if f.dim() == 1 {
        return fd_sup_1d(f, 0);
    }
    fd_sups_2d(f)[0]
}

/// sup of |f|, |∂₁f|, |∂₂f| by central differences, d = 2.
fn fd_sups_2d(f: &TestFunction) -> [f64; 3] {
    let b = f.support_box();
    let h = 1e-4 * b.max_width();
    let e = |x: f64, y: f64| f.eval(&Point::xy(x, y));
    let mut out = [0.0f64; 3];
    let n = 600;
    for i in 0..=n {
        for j in 0..=n {
            let x = b.lo.get(0) + b.width(0) * i as f64 / n as f64;
            let y = b.lo.get(1) + b.width(1) * j as f64 / n as f64;
            out[0] = out[0].max(e(x, y).abs());
            out[1] = out[1].max(((e(x + h, y) - e(x - h, y)) / (2.0 * h)).abs());
            out[2] = out[2].max(((e(x, y + h) - e(x, y - h)) / (2.0 * h)).abs());
        }
    }
    out
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn asymmetric_h() -> TestFunction {
    TestFunction::poly_bump(1, vec![([0, 0], 1.0), ([1, 0], 0.5)])
}

fn young(beta: f64, a: f64) -> Germ {
    make_young(
        holder_generator(beta, 12),
        beta,
        LacunarySeries::new(a, 12, true),
    )
    .unwrap()
}

fn sine() -> SmoothFn {
    SmoothFn::sine_1d(1.0, 1.0)
}

fn cos_density() -> SmoothFn {
    SmoothFn::cosine(1.0, Point::x(1.0), 0.0)
}

// ---- criteria ------------------------------------------------------------

fn rescaling_laws(c: &mut Checks) {
    let b1 = TestFunction::bump(1);
    let p1 = TestFunction::poly_bump(1, vec![([0, 0], 1.0), ([1, 0], 0.5), ([2, 0], -0.3)]);
    let functions = vec![
        ("bump", b1.clone()),
        ("poly-bump", p1.clone()),
        (
            "combination",
            TestFunction::combination(vec![
                (2.0, b1.rescale(&Point::x(0.2), 0.5).unwrap()),
                (-1.0, p1.rescale(&Point::x(-0.1), 0.7).unwrap()),
            ])
            .unwrap(),
        ),
        (
            "convolution",
            TestFunction::convolution(
                b1.rescale(&Point::x(0.0), 0.5).unwrap(),
                p1.rescale(&Point::x(0.0), 0.4).unwrap(),
            )
            .unwrap(),
        ),
        ("bump-2d", TestFunction::bump(2)),
        (
            "poly-bump-2d",
            TestFunction::poly_bump(2, vec![([0, 0], 1.0), ([1, 0], 0.4), ([0, 1], -0.2)]),
        ),
    ];
    let mut worst_int: f64 = 0.0;
    for (i, (name, f)) in functions.iter().enumerate() {
        let d = f.dim();
        let base = integral_oracle(f);
        for (s, &lambda) in [0.7, 2f64.powi(-4), 2f64.powi(-10)].iter().enumerate() {
            let u = uniforms(17, (10 * i + s) as u64, d, -2.0, 2.0);
            let x = Point::new(&u);
            let g = f.rescale(&x, lambda).unwrap();
            let oracle = integral_oracle(&g);
            let lib = g.integral(&QuadratureSpec::for_dim(d).doubled());
            let err = (oracle - base).abs().max((lib - base).abs());
            worst_int = worst_int.max(err);
            c.check(
                err <= 1e-9,
                format!("{name}: integral changes by {err:e} at lambda {lambda}"),
            );

            let want = f.support_box().affine(x, lambda);
            let got = g.support_box();
            let tol = 1e-15 * (x.norm() + 1.0);
            let same = (0..d).all(|a| {
                (got.lo.get(a) - want.lo.get(a)).abs() <= tol
                    && (got.hi.get(a) - want.hi.get(a)).abs() <= tol
            });
            c.check(same, format!("{name}: support box {got:?} vs {want:?}"));
            c.check(
                (g.support_radius() - lambda * f.support_radius()).abs()
                    <= 1e-15 * f.support_radius(),
                format!("{name}: support radius does not scale with lambda"),
            );
            for k in 0..64 {
                let t = 2.0 * std::f64::consts::PI * k as f64 / 64.0;
                let out = if d == 1 {
                    Point::x(
                        if k % 2 == 0 {
                            want.hi.get(0)
                        } else {
                            want.lo.get(0)
                        } + (if k % 2 == 0 { 1.0 } else { -1.0 }) * 1e-9 * lambda,
                    )
                } else {
                    let r = 1.0000001 * want.max_width() / 2.0 * std::f64::consts::SQRT_2;
                    x + Point::xy(r * t.cos(), r * t.sin())
                };
                c.check(
                    g.eval(&out) == 0.0,
                    format!("{name}: nonzero outside the rescaled support"),
                );
            }
        }
    }
    c.note(format!("max integral drift {worst_int:.1e}"));

    let mut worst_cr: f64 = 0.0;
    for (name, f) in [("bump", &b1), ("poly-bump", &p1)] {
        let unit: Vec<f64> = (0..=3).map(|k| fd_sup_1d(f, k)).collect();
        for lambda in [1.0, 0.5, 2f64.powi(-4)] {
            let g = f.rescale(&Point::x(0.3), lambda).unwrap();
            let direct: Vec<f64> = (0..=3).map(|k| fd_sup_1d(&g, k)).collect();
            for r in 0..=3u32 {
                let oracle = (0..=r as usize).map(|k| direct[k]).fold(0.0, f64::max);
                let law = (0..=r as usize)
                    .map(|k| lambda.powi(-1 - k as i32) * unit[k])
                    .fold(0.0, f64::max);
                let lib = g.cr_norm(r);
                let e = rel(lib, oracle).max(rel(law, oracle));
                worst_cr = worst_cr.max(e);
                c.check(
                    e <= 0.01,
                    format!(
                        "{name}: C^{r} norm off by {:.2}% at lambda {lambda}",
                        100.0 * e
                    ),
                );
            }
        }
    }
    let f2 = TestFunction::bump(2);
    let unit = fd_sups_2d(&f2);
    for lambda in [0.5, 2f64.powi(-4)] {
        let g = f2.rescale(&Point::xy(0.3, -0.2), lambda).unwrap();
        let direct = fd_sups_2d(&g);
        for r in 0..=1u32 {
            let oracle = if r == 0 {
                direct[0]
            } else {
                direct.iter().copied().fold(0.0, f64::max)
            };
            let law = if r == 0 {
                lambda.powi(-2) * unit[0]
            } else {
                (lambda.powi(-2) * unit[0]).max(lambda.powi(-3) * unit[1].max(unit[2]))
            };
            let e = rel(g.cr_norm(r), oracle).max(rel(law, oracle));
            worst_cr = worst_cr.max(e);
            c.check(
                e <= 0.01,
                format!(
                    "bump-2d: C^{r} norm off by {:.2}% at lambda {lambda}",
                    100.0 * e
                ),
            );
        }
    }
    c.note(format!("max C^r deviation {:.3}%", 100.0 * worst_cr));
}

fn recentering_identity(c: &mut Checks) {
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let d = if i < 70 { 1 } else { 2 };
        let u = psi_ensemble(d, 1, 1000 + i).pop().unwrap();
        let r = uniforms(23, i, 2 * d + 1, 0.0, 1.0);
        let q = Point::new(&r[..d].iter().map(|v| 2.0 * v - 1.0).collect::<Vec<_>>());
        let a = Point::new(
            &r[d..2 * d]
                .iter()
                .map(|v| 2.0 * v - 1.0)
                .collect::<Vec<_>>(),
        );
        let lambda = 10f64.powf(-3.0 * r[2 * d]);
        let (tilde, lambda1) = recenter(&u, &q, &a, lambda).unwrap();
        let rhs = tilde.rescale(&a, lambda1).unwrap();
        let scale = lambda.powi(-(d as i32)) * fd_sup(&u);
        let ys = uniforms(29, i, 60 * d, -1.0, 1.0);
        for k in 0..60 {
            let off = Point::new(&ys[k * d..(k + 1) * d]);
            let y = q + off * lambda;
            let lhs = lambda.powi(-(d as i32)) * u.eval(&((y - q) * (1.0 / lambda)));
            let e = (lhs - rhs.eval(&y)).abs() / scale;
            worst = worst.max(e);
        }
    }
    c.check(
        worst <= 1e-12,
        format!("max mismatch {worst:e} relative to sup |u^lambda_q|"),
    );
    c.note(format!(
        "100 triples, max mismatch {worst:.1e} relative to sup |u^lambda_q|"
    ));
}

fn coherence_exponents(c: &mut Checks) {
    let f = TestFunction::bump(1);
    let grid = ScanGrid::new(Bx::interval(-0.5, 0.5), 64, 11);
    for (name, germ) in [
        (
            "cos density",
            make_constant(PairingOracle::smooth(cos_density())),
        ),
        ("dirac", make_constant(PairingOracle::dirac(Point::x(0.1)))),
    ] {
        let rows = coherence_scan(&germ, &grid, &f).unwrap();
        let rep = fit_exponents(&rows).unwrap();
        c.check(
            rows.iter().all(|r| r.value == 0.0),
            format!("constant {name}: nonzero row"),
        );
        c.check(rep.exact, format!("constant {name}: not EXACT"));
    }
    let mut notes = Vec::new();
    for k in 0..=2u32 {
        let germ = make_taylor(sine(), k).unwrap();
        let g = ScanGrid::new(Bx::interval(2.0, 3.0), 64, 1);
        let rep = fit_exponents(&coherence_scan(&germ, &g, &f).unwrap()).unwrap();
        let want = k as f64 + 1.0;
        c.check(
            (rep.gamma - want).abs() <= 0.3,
            format!("Taylor k={k}: gamma {} vs {want}", rep.gamma),
        );
        notes.push(format!("taylor{k} gamma {:.3}", rep.gamma));
    }
    let g = ScanGrid::new(Bx::interval(0.5, 1.5), 256, 5);
    let rep = fit_exponents(&coherence_scan(&young(0.7, 0.4), &g, &f).unwrap()).unwrap();
    c.check(
        (rep.gamma - 0.1).abs() <= 0.1,
        format!("Young gamma {} vs 0.1", rep.gamma),
    );
    c.check(
        (rep.alpha + 0.6).abs() <= 0.1,
        format!("Young alpha {} vs -0.6", rep.alpha),
    );
    notes.push(format!(
        "young gamma {:.3} alpha {:.3}",
        rep.gamma, rep.alpha
    ));
    c.note(notes.join(", "));
}

fn enhanced_coherence(c: &mut Checks) {
    let f = TestFunction::bump(1);
    let cases = [
        (
            "Taylor k=1",
            make_taylor(sine(), 1).unwrap(),
            Bx::interval(2.0, 3.0),
            64,
            1,
        ),
        ("Young", young(0.7, 0.4), Bx::interval(0.5, 1.5), 256, 5),
    ];
    let ensemble = psi_ensemble(1, 100, 41);
    for (name, germ, k, pairs, seed) in cases {
        let fit =
            fit_exponents(&coherence_scan(&germ, &ScanGrid::new(k, pairs, seed), &f).unwrap())
                .unwrap();
        let r = default_order(fit.alpha);
        let grid = ScanGrid::new(k, 8, seed).with_scales(3, 8);
        let base = enhanced_check(&germ, &grid, r, &ensemble, &fit).unwrap();
        c.check(base.passed(), format!("{name}: unbounded ratio"));
        c.check(base.max_ratio > 0.0, format!("{name}: all ratios zero"));
        for s in [-3.0, 1e-3, 250.0] {
            let scaled: Vec<TestFunction> = ensemble.iter().map(|p| p.scaled(s)).collect();
            let other = enhanced_check(&germ, &grid, r, &scaled, &fit).unwrap();
            c.check(
                other.rows == base.rows,
                format!("{name}: rows change under psi -> {s}·psi"),
            );
        }
        c.note(format!("{name}: r = {r}, max ratio {:.3}", base.max_ratio));
    }
}

fn homogeneity(c: &mut Checks) {
    let f1 = TestFunction::bump(1);
    let dirac1 = make_constant(PairingOracle::dirac(Point::x(0.2)));
    let g1 = ScanGrid::new(Bx::interval(-0.5, 0.5), 8, 1).with_points(vec![Point::x(0.2)]);
    let rep = homogeneity_scan(&dirac1, &g1, &f1).unwrap();
    c.check(
        (rep.beta + 1.0).abs() <= 0.05,
        format!("Dirac d=1 slope {}", rep.beta),
    );
    let dirac2 = make_constant(PairingOracle::dirac(Point::xy(0.1, 0.2)));
    let g2 = ScanGrid::new(Bx::square(-0.5, 0.5), 8, 1).with_points(vec![Point::xy(0.1, 0.2)]);
    let rep2 = homogeneity_scan(&dirac2, &g2, &TestFunction::bump(2)).unwrap();
    c.check(
        (rep2.beta + 2.0).abs() <= 0.05,
        format!("Dirac d=2 slope {}", rep2.beta),
    );

    let g = ScanGrid::new(Bx::interval(0.5, 1.5), 256, 5);
    let yg = young(0.7, 0.4);
    let h = homogeneity_scan(&yg, &g, &f1).unwrap();
    c.check(
        (h.beta + 0.6).abs() <= 0.1,
        format!("Young slope {} vs a-1 = -0.6", h.beta),
    );
    let fit = fit_exponents(&coherence_scan(&yg, &g, &f1).unwrap()).unwrap();
    c.check(
        h.beta < fit.gamma,
        format!("Young beta {} not below gamma {}", h.beta, fit.gamma),
    );
    for k in 0..=2u32 {
        let germ = make_taylor(sine(), k).unwrap();
        let g = ScanGrid::new(Bx::interval(2.0, 3.0), 64, 1);
        let h = homogeneity_scan(&germ, &g, &f1).unwrap();
        let fit = fit_exponents(&coherence_scan(&germ, &g, &f1).unwrap()).unwrap();
        c.check(
            h.beta < fit.gamma,
            format!(
                "Taylor k={k}: beta {} not below gamma {}",
                h.beta, fit.gamma
            ),
        );
    }
    c.note(format!(
        "dirac slopes {:.4} / {:.4}, young slope {:.3}",
        rep.beta, rep2.beta, h.beta
    ));
}

fn mollifier_invariants(c: &mut Checks) {
    let mut worst = [0.0f64; 3];
    for r in 1..=3u32 {
        let m = build_mollifier(&TestFunction::bump(1), r).unwrap();
        let rad = m.corrected.support_radius();
        let mass = simpson(|y| m.corrected.eval(&Point::x(y)), -rad, rad, 20000);
        worst[0] = worst[0].max((mass - 1.0).abs());
        c.check(
            (mass - 1.0).abs() <= 1e-10,
            format!("r={r}: integral of corrected mollifier {mass}"),
        );
        let rd = m.difference.support_radius();
        for j in 0..r {
            let mom = simpson(
                |y| y.powi(j as i32) * m.difference.eval(&Point::x(y)),
                -rd,
                rd,
                20000,
            );
            worst[1] = worst[1].max(mom.abs());
            c.check(
                mom.abs() <= 1e-8,
                format!("r={r}: moment {j} of the difference is {mom:e}"),
            );
        }
        for eps in [1.0, 0.3] {
            let o = Point::x(0.0);
            let fine = m.kernel.rescale(&o, eps / 2.0).unwrap();
            let coarse = m.kernel.rescale(&o, eps).unwrap();
            let a = m.corrected.rescale(&o, eps).unwrap();
            let b = m.difference.rescale(&o, eps).unwrap();
            let (ra, rb) = (a.support_radius(), b.support_radius());
            let reach = ra + rb;
            let scale = fine.cr_norm(0).max(1.0);
            for i in 0..=100 {
                let y = -1.05 * reach + 2.1 * reach * i as f64 / 100.0;
                let lhs = fine.eval(&Point::x(y)) - coarse.eval(&Point::x(y));
                let lo = (y - ra).max(-rb);
                let hi = (y + ra).min(rb);
                let rhs = if hi > lo {
                    simpson(
                        |s| a.eval(&Point::x(y - s)) * b.eval(&Point::x(s)),
                        lo,
                        hi,
                        4000,
                    )
                } else {
                    0.0
                };
                let e = (lhs - rhs).abs() / scale;
                worst[2] = worst[2].max(e);
                c.check(
                    e <= 1e-8,
                    format!("r={r}, eps={eps}: telescoping defect {e:e} at y={y}"),
                );
            }
        }
        for (name, t) in [
            (
                "density",
                PairingOracle::smooth(SmoothFn::Sum(vec![
                    sine(),
                    SmoothFn::poly_1d(0.0, &[0.5, 0.0, 1.0]),
                ])),
            ),
            ("dirac", PairingOracle::dirac(Point::x(0.3 + 1.0 / 128.0))),
        ] {
            for k in 0..6 {
                let d = m
                    .telescoping_defect(&t, &Point::x(0.3), 2f64.powi(-k))
                    .unwrap();
                c.check(d <= 1e-8, format!("r={r}: {name} pairing defect {d:e}"));
            }
        }
    }
    let m2 = build_mollifier(&TestFunction::bump(2), 2).unwrap();
    let b = m2.corrected.support_box();
    let mass = simpson_2d(|x, y| m2.corrected.eval(&Point::xy(x, y)), &b, 600);
    c.check(
        (mass - 1.0).abs() <= 1e-10,
        format!("d=2: integral of corrected mollifier {mass}"),
    );
    c.note(format!(
        "integral {:.1e}, moments {:.1e}, telescoping {:.1e}",
        worst[0], worst[1], worst[2]
    ));
}

fn local_reconstruction(c: &mut Checks) {
    let opts = ReconstructOptions::default();
    let psis: Vec<TestFunction> = psi_ensemble(1, 6, 77)
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.rescale(&Point::x(0.2 * i as f64), 0.3 + 0.1 * (i % 3) as f64)
                .unwrap()
        })
        .collect();
    let mut worst: f64 = 0.0;
    let cos_germ = make_constant(PairingOracle::smooth(cos_density()));
    let m1 = build_mollifier(&TestFunction::bump(1), 1).unwrap();
    for psi in &psis {
        let oracle = density_pairing(f64::cos, psi);
        let rec = reconstruct_local(&cos_germ, &m1, psi, &opts).unwrap();
        worst = worst.max((rec.value - oracle).abs());
        c.check(
            (rec.value - oracle).abs() <= 1e-6,
            format!("constant: {} vs {oracle}", rec.value),
        );
    }
    for k in 0..=2u32 {
        let germ = make_taylor(sine(), k).unwrap();
        let m = build_mollifier(&TestFunction::bump(1), k + 1).unwrap();
        for psi in &psis {
            let oracle = density_pairing(f64::sin, psi);
            let rec = reconstruct_local(&germ, &m, psi, &opts).unwrap();
            worst = worst.max((rec.value - oracle).abs());
            c.check(
                (rec.value - oracle).abs() <= 1e-6,
                format!("Taylor k={k}: {} vs {oracle}", rec.value),
            );
        }
    }
    c.note(format!("max oracle error {worst:.1e}"));

    let k = Bx::interval(0.5, 1.5);
    let f = TestFunction::bump(1);
    let mut slopes = Vec::new();
    let residual_cases = [
        ("Taylor k=1", make_taylor(sine(), 1).unwrap(), 2, 64, 1),
        ("Taylor k=2", make_taylor(sine(), 2).unwrap(), 3, 64, 1),
        (
            "Young",
            young(0.7, 0.4).with_domain(OpenSetDomain::interval(0.0, 2.0)),
            2,
            256,
            5,
        ),
    ];
    for (name, germ, r, pairs, seed) in residual_cases {
        let fit =
            fit_exponents(&coherence_scan(&germ, &ScanGrid::new(k, pairs, seed), &f).unwrap())
                .unwrap();
        let m = Arc::new(build_mollifier(&TestFunction::bump(1), r).unwrap());
        let ropts = ReconstructOptions {
            gamma: Some(fit.gamma),
            n_max: 14,
            ..Default::default()
        };
        let rf = LocalReconstruction::new(Arc::new(germ.clone()), m, ropts);
        let rep = residual_scan(&germ, &rf, &ScanGrid::new(k, 4, seed), &asymmetric_h()).unwrap();
        c.check(
            (rep.slope - fit.gamma).abs() <= 0.3,
            format!(
                "{name}: residual slope {} vs gamma {}",
                rep.slope, fit.gamma
            ),
        );
        slopes.push(format!("{name} {:.2}/{:.2}", rep.slope, fit.gamma));
    }
    c.note(format!("residual slope/gamma: {}", slopes.join(", ")));

    let other_base = TestFunction::poly_bump(1, vec![([0, 0], 1.0), ([2, 0], 0.5)]);
    let mut worst_base: f64 = 0.0;
    let base_cases = [
        ("Taylor k=2", make_taylor(sine(), 2).unwrap(), 3),
        ("Young", young(0.7, 0.4), 2),
    ];
    for (name, germ, r) in base_cases {
        let ma = build_mollifier(&TestFunction::bump(1), r).unwrap();
        let mb = build_mollifier(&other_base, r).unwrap();
        let ropts = ReconstructOptions {
            n_max: 14,
            ..Default::default()
        };
        for psi in &psis[..3] {
            let a = reconstruct_local(&germ, &ma, psi, &ropts).unwrap();
            let b = reconstruct_local(&germ, &mb, psi, &ropts).unwrap();
            let e = (a.value - b.value).abs();
            worst_base = worst_base.max(e);
            c.check(e <= 1e-5, format!("{name}: bases disagree by {e:e}"));
        }
    }
    c.note(format!("base change {worst_base:.1e}"));
}

fn gluing(c: &mut Checks) {
    for atlas in [Atlas::circle_two_arc(), Atlas::circle_three_arc()] {
        let mg = ManifoldGerm::new(
            Manifold::Circle,
            make_constant(PairingOracle::smooth(cos_density())),
        )
        .unwrap();
        let locals: Vec<Arc<dyn Distribution>> = (0..atlas.len())
            .map(|j| {
                mg.chart_germ(&atlas, j)
                    .unwrap()
                    .eval(&atlas.charts[j].image().center())
                    .unwrap()
            })
            .collect();
        let ens = overlap_ensemble(&atlas, 20, 3).unwrap();
        let rep = glue_check(&locals, &atlas, &ens, 1e-9).unwrap();
        c.check(
            rep.passed,
            format!(
                "{}: pushforward locals differ by {:e}",
                atlas.label, rep.max_discrepancy
            ),
        );

        if atlas.len() == 2 {
            let comp = atlas.overlap(0, 1).pop().unwrap();
            let bump = unit_integral_bump(1)
                .rescale(&comp.region.center(), comp.region.width(0) / 32.0)
                .unwrap();
            let eps = 1e-3;
            let mut perturbed = locals.clone();
            perturbed[0] = Arc::new(PerturbedLocal {
                base: locals[0].clone(),
                bump: bump.clone(),
                eps,
                spec: QuadratureSpec::default(),
            });
            let rep = glue_check(&perturbed, &atlas, &ens, 1e-9).unwrap();
            let sb = bump.support_box();
            let oracle = ens
                .iter()
                .filter(|t| t.i == 0)
                .map(|t| {
                    (eps * simpson(
                        |x| bump.eval(&Point::x(x)) * t.g.eval(&Point::x(x)),
                        sb.lo.get(0),
                        sb.hi.get(0),
                        4000,
                    ))
                    .abs()
                })
                .fold(0.0, f64::max);
            c.check(!rep.passed, "perturbed local passes");
            c.check(
                (rep.max_discrepancy - oracle).abs() <= 1e-9,
                format!(
                    "perturbed discrepancy {:e} vs oracle {oracle:e}",
                    rep.max_discrepancy
                ),
            );
            c.check(
                rep.max_discrepancy > 0.5 * eps && rep.max_discrepancy <= 1.01 * eps,
                format!(
                    "perturbed discrepancy {:e} not close to {eps:e}",
                    rep.max_discrepancy
                ),
            );
            c.note(format!("perturbed {:.3e}", rep.max_discrepancy));
        }
    }

    let atlas = Atlas::circle_two_arc();
    let mg = ManifoldGerm::new(Manifold::Circle, make_taylor(sine(), 2).unwrap()).unwrap();
    let m = Arc::new(build_mollifier(&TestFunction::bump(1), 3).unwrap());
    let opts = GlobalOptions::default();
    match global_reconstruct(&mg, Arc::new(build_pou(&atlas, None).unwrap()), m, &opts) {
        Ok(g) => {
            let glue = g.glue.as_ref();
            c.check(
                g.gamma() > 0.0,
                format!("Taylor circle germ fitted gamma {}", g.gamma()),
            );
            c.check(
                glue.is_some_and(|r| r.passed && r.tolerance <= 1e-5),
                "reconstructed locals not glued at 1e-5",
            );
            if let Some(r) = glue {
                c.note(format!("reconstructed locals {:.1e}", r.max_discrepancy));
            }
        }
        Err(e) => c.check(false, format!("reconstructed locals: {e}")),
    }
}

fn atlas_independence(c: &mut Checks) {
    let ensemble = global_ensemble(&Manifold::Circle, 10, 5);
    let opts = GlobalOptions::default();
    for (name, base, r) in [
        ("Taylor k=2 of sin", make_taylor(sine(), 2).unwrap(), 3),
        (
            "constant cos",
            make_constant(PairingOracle::smooth(cos_density())),
            1,
        ),
    ] {
        let mg = ManifoldGerm::new(Manifold::Circle, base).unwrap();
        let m = Arc::new(build_mollifier(&TestFunction::bump(1), r).unwrap());
        let rep = atlas_compare(
            &mg,
            &Atlas::circle_two_arc(),
            &Atlas::circle_three_arc(),
            &ensemble,
            m,
            &opts,
        )
        .unwrap();
        c.check(
            rep.max_rel_diff <= 1e-5,
            format!("{name}: two-arc vs three-arc {:e}", rep.max_rel_diff),
        );
        let oracle_err = rep
            .rows
            .iter()
            .zip(&ensemble)
            .map(|(row, h)| {
                let want = circle_pairing(&mg, h);
                (row.rf_a - want).abs().max((row.rf_b - want).abs())
            })
            .fold(0.0, f64::max);
        c.check(
            oracle_err <= 1e-5,
            format!("{name}: global quadrature oracle off by {oracle_err:e}"),
        );
        c.note(format!(
            "{name}: {:.1e} (oracle {:.1e})",
            rep.max_rel_diff, oracle_err
        ));
    }
}

/// ∫ u(θ) h(θ) dθ over the lifted support of h; u = sin for the Taylor germ, cos otherwise.
fn circle_pairing(mg: &ManifoldGerm, h: &TestFunction) -> f64 {
    let u: fn(f64) -> f64 = if mg.base.label().starts_with("taylor") {
        f64::sin
    } else {
        f64::cos
    };
    density_pairing(u, h)
}

fn nonuniqueness(c: &mut Checks) {
    let mg = ManifoldGerm::new(
        Manifold::Circle,
        make_young(
            resonant_generator(0.4, 12),
            0.4,
            LacunarySeries::new(0.4, 12, true),
        )
        .unwrap(),
    )
    .unwrap();
    let atlas = Atlas::circle_two_arc_scaled();
    let m = Arc::new(build_mollifier(&TestFunction::bump(1), 2).unwrap());
    let mut opts = GlobalOptions::default();
    opts.reconstruct.n_max = 8;
    let ensemble = global_ensemble(&Manifold::Circle, 20, 5);
    let mut separated = None;
    for (s1, s2) in [(1, 2), (3, 4), (5, 6)] {
        let a = global_reconstruct(
            &mg,
            Arc::new(build_pou(&atlas, Some(s1)).unwrap()),
            m.clone(),
            &opts,
        )
        .unwrap();
        let b = global_reconstruct(
            &mg,
            Arc::new(build_pou(&atlas, Some(s2)).unwrap()),
            m.clone(),
            &opts,
        )
        .unwrap();
        let gamma = a.gamma().max(b.gamma());
        let rep = compare(&a, &b, &ensemble).unwrap();
        c.note(format!(
            "seeds ({s1},{s2}): gamma <= {gamma:.3}, max rel diff {:.2e}",
            rep.max_rel_diff
        ));
        if gamma <= 0.0 && rep.max_rel_diff > 1e-3 {
            separated = Some(rep.max_rel_diff);
            break;
        }
    }
    c.check(
        separated.is_some(),
        "no seeded partition pair separated the assemblies by more than 1e-3",
    );

    let germ = young(0.6, 0.4).with_domain(OpenSetDomain::interval(0.0, 2.0));
    let k = Bx::interval(0.5, 1.5);
    let fit = fit_exponents(
        &coherence_scan(&germ, &ScanGrid::new(k, 256, 5), &TestFunction::bump(1)).unwrap(),
    )
    .unwrap();
    let m = Arc::new(build_mollifier(&TestFunction::bump(1), 2).unwrap());
    let ropts = ReconstructOptions {
        gamma: Some(fit.gamma),
        ..Default::default()
    };
    let rf = LocalReconstruction::new(Arc::new(germ.clone()), m, ropts);
    match residual_scan(&germ, &rf, &ScanGrid::new(k, 8, 5), &TestFunction::bump(1)) {
        Ok(rep) => {
            c.check(
                rep.envelope_constant > 0.0,
                format!("envelope constant {}", rep.envelope_constant),
            );
            c.check(
                rep.envelope_slope >= -0.1,
                format!(
                    "residual/(1+|ln lambda|) grows as lambda -> 0: slope {}",
                    rep.envelope_slope
                ),
            );
            c.note(format!(
                "gamma=0 germ (fitted {:.3}): C = {:.3e}, normalized slope {:.3}",
                fit.gamma, rep.envelope_constant, rep.envelope_slope
            ));
        }
        Err(e) => c.check(false, format!("gamma = 0 residual scan: {e}")),
    }
}

const DETERMINISM_CONFIGS: &[(&str, &str)] = &[
    (
        "local",
        "experiment.kind = coherence, homogeneity, enhanced, reconstruct, residual
germ.kind = taylor
germ.order = 1
domain.kind = interval
domain.lo = 1
domain.hi = 4
scan.k_lo = 2
scan.k_hi = 3
scan.n_pairs = 32
scan.ensemble = 6
scan.points = 4
scan.seed = 21
",
    ),
    (
        "circle",
        "experiment.kind = glue, atlas-compare
germ.kind = constant
germ.distribution = cos
domain.kind = circle
atlas.kind = two-arc
atlas.compare = three-arc
atlas.ensemble = 6
scan.seed = 22
",
    ),
    (
        "young",
        "experiment.kind = coherence, nonuniqueness
germ.kind = young
germ.beta = 0.4
germ.a = 0.4
germ.phase = sin
domain.kind = circle
atlas.kind = two-arc-scaled
atlas.ensemble = 4
scan.n_pairs = 32
mollifier.order = 2
mollifier.n_max = 6
scan.seed = 23
",
    ),
];

fn determinism(c: &mut Checks) {
    let dir = tempfile::tempdir().unwrap();
    let mut files = 0;
    for (name, text) in DETERMINISM_CONFIGS {
        let cfg = dir.path().join(format!("{name}.cfg"));
        fs::write(&cfg, text).unwrap();
        let mut codes = Vec::new();
        for threads in ["1", "4"] {
            let out = dir.path().join(format!("{name}-{threads}"));
            let status = Command::new(env!("CARGO_BIN_EXE_germlab"))
                .arg("run")
                .arg(&cfg)
                .env("GERMLAB_OUTDIR", &out)
                .env("GERMLAB_THREADS", threads)
                .output()
                .unwrap()
                .status
                .code();
            codes.push(status);
        }
        c.check(
            codes[0] == codes[1],
            format!("{name}: exit codes {codes:?}"),
        );
        c.check(
            codes[0].is_some_and(|s| s <= 1),
            format!("{name}: exit code {:?}", codes[0]),
        );
        let a = dir.path().join(format!("{name}-1"));
        let b = dir.path().join(format!("{name}-4"));
        let mut names: Vec<_> = fs::read_dir(&a)
            .map(|d| d.map(|e| e.unwrap().file_name()).collect())
            .unwrap_or_default();
        names.sort();
        c.check(!names.is_empty(), format!("{name}: no outputs"));
        for n in names {
            files += 1;
            let same = fs::read(a.join(&n)).ok() == fs::read(b.join(&n)).ok();
            c.check(
                same,
                format!(
                    "{name}: {} differs between 1 and 4 workers",
                    n.to_string_lossy()
                ),
            );
        }
    }
    c.note(format!("{files} files compared across 1 and 4 workers"));
}

fn main() {
    let criteria: [(u32, &str, f64, fn(&mut Checks)); 11] = [
        (1, "rescaling laws", 5.0, rescaling_laws),
        (2, "recentering identity", 5.0, recentering_identity),
        (3, "coherence exponents", 60.0, coherence_exponents),
        (4, "enhanced coherence", 30.0, enhanced_coherence),
        (5, "homogeneity", 30.0, homogeneity),
        (6, "mollifier invariants", 10.0, mollifier_invariants),
        (7, "local reconstruction", 120.0, local_reconstruction),
        (8, "gluing", 60.0, gluing),
        (9, "atlas independence", 120.0, atlas_independence),
        (10, "non-uniqueness for gamma <= 0", 120.0, nonuniqueness),
        (11, "determinism across worker counts", 60.0, determinism),
    ];
    let only: Vec<u32> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let mut checks = Checks::default();
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| run(&mut checks)));
        let secs = start.elapsed().as_secs_f64();
        if let Err(e) = outcome {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            checks.failures.push(format!("panicked: {msg}"));
        }
        let verdict = if checks.failures.is_empty() {
            "PASS"
        } else {
            "FAIL"
        };
        let timing = if secs > budget {
            format!("{secs:.1}s, over the {budget:.0}s budget")
        } else {
            format!("{secs:.1}s")
        };
        println!(
            "{verdict} criterion {id:>2} {name}: {} [{timing}]",
            checks.notes.join("; ")
        );
        for f in checks.failures.iter().take(5) {
            println!("     - {f}");
        }
        if checks.failures.len() > 5 {
            println!("     - ... {} more", checks.failures.len() - 5);
        }
        if !checks.failures.is_empty() {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
