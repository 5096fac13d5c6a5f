//! Acceptance checks, one line per criterion. Exits nonzero if any fails.

use predprey_core::ergodic::{
    ergodic_report, ks_distance, lyapunov_exponent, time_average, tv_proxy_series, Component,
    Edges, Functional,
};
use predprey_core::geometry::{
    c_star, sup_h, support_membership, verify_hormander, square_grid, BracketFamily, Field,
    FieldExpr, Variant, DEFAULT_SCAN_STEP, DEFAULT_Z_HI, DEFAULT_Z_LO,
};
use predprey_core::model::{Coefficients, ModelParams, NoiseMode};
use predprey_core::sim::{simulate_boundary, simulate_coupled, simulate_system, SimConfig};
use predprey_core::threshold::{jensen_bound, lambda_mc, lambda_quadrature, BoundConstants};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

struct Tally {
    failed: usize,
}

impl Tally {
    fn report(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id:>2} {name}: {detail}");
        if !pass {
            self.failed += 1;
        }
    }
}

/// E1(x) by its power series; accurate to rounding for small x.
fn exp_integral_e1(x: f64) -> f64 {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let mut sum = 0.0;
    let mut term = 1.0;
    for k in 1..200 {
        term *= -x / k as f64;
        sum += term / k as f64;
    }
    -EULER_GAMMA - x.ln() - sum
}

fn reference() -> ModelParams {
    ModelParams::reference()
}

fn threshold_oracle(t: &mut Tally) {
    let start = Instant::now();
    let p = reference();
    let est = lambda_quadrature(&p, 1e-10).unwrap();
    // Gamma(3, 2) prey law and Holling response 2x/(1+x):
    // E[2X/(1+X)] = 8 (1/2 - e^2 E1(2)).
    let oracle = -0.225 + 8.0 * (0.5 - 2f64.exp() * exp_integral_e1(2.0));
    let (mc, se) = lambda_mc(&p, 1_000_000, 2024).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = (est.lambda - oracle).abs() <= 1e-4
        && (est.lambda - mc).abs() <= 4.0 * se
        && format!("{:.6}", est.lambda) == "0.884371"
        && secs < 10.0;
    t.report(
        1,
        "threshold oracle",
        pass,
        format!(
            "quad {:.10} oracle {oracle:.10} mc {mc:.6} (se {se:.2e}) in {secs:.2}s",
            est.lambda
        ),
    );
}

fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
    loop {
        let a1 = rng.random_range(0.3..4.0);
        let raw = Coefficients {
            a1,
            b1: rng.random_range(0.1..3.0),
            c1: rng.random_range(0.1..3.0),
            a2: rng.random_range(0.01..1.0),
            b2: rng.random_range(0.1..3.0),
            c2: rng.random_range(0.05..4.0),
            m1: rng.random_range(0.2..3.0),
            m2: rng.random_range(0.2..3.0),
            m3: rng.random_range(0.0..2.0),
            alpha: rng.random_range(0.05..1.0) * (2.0 * a1).sqrt(),
            beta: rng.random_range(-1.5..1.5),
        };
        if let Ok(p) = ModelParams::new(raw) {
            if p.prey_persists() {
                return p;
            }
        }
    }
}

fn jensen_and_saturation(t: &mut Tally) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut ok = 0;
    for _ in 0..50 {
        let p = random_params(&mut rng);
        let est = lambda_quadrature(&p, 1e-10).unwrap();
        let jb = jensen_bound(&p).unwrap();
        let c = p.coef();
        worst_gap = worst_gap.max(est.lambda - jb);
        if est.lambda <= jb + 1e-9 && est.response_integral < c.c2 / c.m2 {
            ok += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    t.report(
        2,
        "Jensen and saturation bounds",
        ok == 50 && secs < 30.0,
        format!("{ok}/50 sets, max lambda - bound {worst_gap:.3e}, {secs:.2}s"),
    );
}

/// CDF of Gamma(3, 2) in closed form.
fn gamma32_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let y = 2.0 * x;
    1.0 - (-y).exp() * (1.0 + y + 0.5 * y * y)
}

fn boundary_ergodicity(t: &mut Tally) {
    let start = Instant::now();
    let p = reference();
    // The first 1% of the horizon is discarded as burn-in.
    let burn_in = 0.01;
    let per_seed: Vec<(f64, f64, f64)> = (0..8u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = SimConfig {
                thinning: 10,
                ..SimConfig::new(1e-3, 1e4, 1.0, 1.0, 300 + seed)
            };
            let phi = simulate_boundary(&p, &cfg).unwrap();
            let kept = phi.after_burn_in(burn_in);
            let m1 = time_average(&kept, &Functional::XPow(1.0)).unwrap();
            let m2 = time_average(&kept, &Functional::XPow(2.0)).unwrap();
            let xs: Vec<f64> = kept.u.iter().map(|u| u.exp()).collect();
            (m1, m2, ks_distance(&xs, gamma32_cdf))
        })
        .collect();
    let n = per_seed.len() as f64;
    let k1 = per_seed.iter().map(|s| s.0).sum::<f64>() / n;
    let k2 = per_seed.iter().map(|s| s.1).sum::<f64>() / n;
    let ks = per_seed.iter().map(|s| s.2).sum::<f64>() / n;
    let secs = start.elapsed().as_secs_f64();
    let pass = (k1 - 1.5).abs() <= 0.02 * 1.5 && (k2 - 3.0).abs() <= 0.03 * 3.0 && ks <= 0.02 && secs < 120.0;
    t.report(
        3,
        "boundary ergodicity",
        pass,
        format!("mean {k1:.4} (K1 1.5), second moment {k2:.4} (K2 3.0), KS {ks:.4}, {secs:.1}s"),
    );
}

fn extinction_rate(t: &mut Tally) {
    let p = reference().with("c2", 0.2).unwrap();
    let lambda = lambda_quadrature(&p, 1e-10).unwrap().lambda;
    let rates: Vec<f64> = (0..16u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = SimConfig {
                thinning: 10,
                ..SimConfig::new(1e-3, 1e4, 1.0, 1.0, 400 + seed)
            };
            let tr = simulate_system(&p, &cfg).unwrap();
            lyapunov_exponent(&tr.view(), Component::V, 100.0).unwrap()
        })
        .collect();
    let inside = rates
        .iter()
        .filter(|r| **r >= lambda - 0.05 && **r <= 0.01)
        .count();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    t.report(
        4,
        "extinction rate",
        inside >= 14,
        format!("{inside}/16 in [{:.4}, 0.01], mean rate {mean:.4}, lambda {lambda:.6}", lambda - 0.05),
    );
}

fn permanence_floor(t: &mut Tally) {
    let p = reference();
    let lambda = lambda_quadrature(&p, 1e-10).unwrap().lambda;
    let k = BoundConstants::from_params(&p, Some(lambda)).unwrap();
    let m_bar = k.m_bar.unwrap();
    let floor = k.box_occupation_floor().unwrap();
    let fs = [Functional::YPow(1.0)];
    let rows: Vec<(f64, f64)> = (0..16u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = SimConfig {
                thinning: 10,
                ..SimConfig::new(1e-3, 1e4, 1.0, 1.0, 500 + seed)
            };
            let tr = simulate_system(&p, &cfg).unwrap();
            let r = ergodic_report(&tr.view(), &fs, 0.5, Some(&k)).unwrap();
            (r.time_averages["y"], r.box_occupation.unwrap())
        })
        .collect();
    let y_ok = rows.iter().filter(|r| r.0 >= m_bar).count();
    let box_ok = rows.iter().filter(|r| r.1 > floor).count();
    let min_y = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let min_box = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    t.report(
        5,
        "permanence floor",
        y_ok >= 14 && box_ok >= 14,
        format!(
            "mean y >= {m_bar:.6} in {y_ok}/16 (min {min_y:.4}); box occupation > {floor:.5} in {box_ok}/16 (min {min_box:.4})"
        ),
    );
}

fn pathwise_comparison(t: &mut Tally) {
    let p = reference();
    let cfg = SimConfig {
        thinning: 100,
        ..SimConfig::new(1e-4, 100.0, 1.0, 1.0, 600)
    };
    let run = simulate_coupled(&p, &cfg).unwrap();
    let c = run.comparisons;
    let frac = c.violation_fraction();
    t.report(
        6,
        "pathwise comparison",
        frac <= 1e-3,
        format!(
            "{} of {} steps violate an ordering (fraction {frac:.2e}; x>phi {}, y>psi {}, y>ybar {})",
            c.any, c.steps, c.x_above_phi, c.y_above_psi, c.y_above_ybar
        ),
    );
}

fn tv_convergence(t: &mut Tally) {
    let p = reference();
    let xe = Edges::uniform(0.0, 6.0, 30).unwrap();
    let ye = Edges::uniform(0.0, 4.0, 20).unwrap();
    // Both starts use the same seed and trajectory id, so the same noise.
    let series: Vec<Vec<f64>> = (0..16u64)
        .into_par_iter()
        .map(|seed| {
            let base = SimConfig {
                thinning: 10,
                ..SimConfig::new(1e-3, 1e3, 0.1, 0.1, 700 + seed)
            };
            let a = simulate_system(&p, &base).unwrap();
            let b = simulate_system(&p, &SimConfig { x0: 5.0, y0: 5.0, ..base }).unwrap();
            tv_proxy_series(&a.view(), &b.view(), 2, &xe, &ye).unwrap()
        })
        .collect();
    let smaller = series.iter().filter(|s| s[1] < s[0]).count();
    let early = series.iter().map(|s| s[0]).sum::<f64>() / 16.0;
    let late = series.iter().map(|s| s[1]).sum::<f64>() / 16.0;
    t.report(
        7,
        "TV convergence proxy",
        smaller >= 12,
        format!("late window smaller in {smaller}/16 (mean early {early:.4}, late {late:.4})"),
    );
}

fn degenerate_support(t: &mut Tally) {
    let p = reference().with("beta", -0.5).unwrap();
    let tol = 1e-6;
    let cs = c_star(&p, DEFAULT_Z_LO, DEFAULT_Z_HI, DEFAULT_SCAN_STEP, tol).unwrap();
    let at = sup_h(&p, cs.value).unwrap().value;
    let below = sup_h(&p, cs.value - tol).unwrap().value;
    let defining = at <= 0.0 && below > 0.0;
    let r = p.coef().beta / p.coef().alpha;
    let fractions: Vec<f64> = (0..4u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = SimConfig {
                mode: NoiseMode::Shared,
                thinning: 10,
                ..SimConfig::new(1e-3, 1e4, 1.0, 1.0, 800 + seed)
            };
            let tr = simulate_system(&p, &cfg).unwrap();
            let d = predprey_core::geometry::ControlSetDescriptor::HalfPlane {
                slope: r,
                c_star: cs.value,
                sign_oscillation: cs.sign_oscillation,
            };
            support_membership(&tr.after_burn_in(0.5), &d, 0.05).unwrap()
        })
        .collect();
    let worst = fractions.iter().copied().fold(0.0, f64::max);
    t.report(
        8,
        "degenerate support",
        defining && worst <= 0.01,
        format!(
            "c* {:.7} (sup_h {at:.2e} at c*, {below:.2e} at c* - tol); worst outside fraction {worst:.2e} over 4 seeds",
            cs.value
        ),
    );
}

fn fd_bracket(p: &ModelParams, g: &Field, y: &Field, u: f64, v: f64) -> [f64; 2] {
    let h = 1e-6;
    let jac = |f: &Field| {
        let (up, um) = (f.eval(p, u + h, v).unwrap(), f.eval(p, u - h, v).unwrap());
        let (vp, vm) = (f.eval(p, u, v + h).unwrap(), f.eval(p, u, v - h).unwrap());
        [
            [(up[0] - um[0]) / (2.0 * h), (vp[0] - vm[0]) / (2.0 * h)],
            [(up[1] - um[1]) / (2.0 * h), (vp[1] - vm[1]) / (2.0 * h)],
        ]
    };
    let (jg, jy) = (jac(g), jac(y));
    let (gv, yv) = (g.eval(p, u, v).unwrap(), y.eval(p, u, v).unwrap());
    let mut out = [0.0; 2];
    for k in 0..2 {
        out[k] = jy[k][0] * gv[0] + jy[k][1] * gv[1] - (jg[k][0] * yv[0] + jg[k][1] * yv[1]);
    }
    out
}

fn lie_rank(t: &mut Tally) {
    let p = reference();
    let grid = square_grid(-5.0, 5.0, 21);
    let mut deficient = 0;
    for v in [Variant::Full, Variant::Ideal] {
        deficient += verify_hormander(&p, &grid, 3, v).unwrap().deficient.len();
    }
    let fam = BracketFamily::new(&p, 3, Variant::Full).unwrap();
    let (a, b) = (Field::drift(&p), Field::noise(&p));
    let mut rng = ChaCha8Rng::seed_from_u64(900);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (u, v) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        for (expr, field) in fam.exprs.iter().zip(&fam.fields) {
            let FieldExpr::Bracket(g, y) = expr else { continue };
            let gf = if **g == FieldExpr::A { &a } else { &b };
            let fd = fd_bracket(&p, gf, &y.to_field(&p).unwrap(), u, v);
            let exact = field.eval(&p, u, v).unwrap();
            for k in 0..2 {
                worst = worst.max((fd[k] - exact[k]).abs() / exact[k].abs().max(1.0));
            }
        }
    }
    t.report(
        9,
        "bracket rank",
        deficient == 0 && worst <= 1e-6,
        format!("{deficient} deficient points on 2 x 441; worst finite-difference mismatch {worst:.2e}"),
    );
}

const PARAMS: &str = "[params]\na1 = 2.0\nb1 = 1.0\nc1 = 1.0\na2 = 0.1\nb2 = 1.0\nc2 = 2.0\n\
                      m1 = 1.0\nm2 = 1.0\nm3 = 0.0\nalpha = 1.0\nbeta = 0.5\n";

fn predprey(args: &[&str], config: &Path, out: &Path, workers: &str) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_predprey"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--workers", workers])
        .env_remove("PREDPREY_WORKERS")
        .output()
        .expect("binary runs")
}

fn literature_gap(t: &mut Tally, dir: &Path) {
    let start = Instant::now();
    let cfg = dir.join("sweep.toml");
    std::fs::write(
        &cfg,
        format!("{PARAMS}[[sweep.axes]]\nname = \"b2\"\nlo = 1e-3\nhi = 10.0\nsteps = 9\nscale = \"log\"\n"),
    )
    .unwrap();
    let out = dir.join("sweep");
    let o = predprey(&["sweep"], &cfg, &out, "2");
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap_or_default();
    let lines: Vec<&str> = csv.lines().collect();
    let header_ok = lines.first() == Some(&"b2,lambda,regime,ji,lw_applicable,lw_extinct,lw_persist");
    let gap = lines
        .iter()
        .skip(1)
        .filter(|l| {
            let f: Vec<&str> = l.split(',').collect();
            f.len() == 7 && f[2] == "Coexistence" && f[3] == "no"
        })
        .count();
    let secs = start.elapsed().as_secs_f64();
    t.report(
        10,
        "coexistence beyond the literature condition",
        o.status.code() == Some(0) && header_ok && lines.len() == 10 && gap >= 1 && secs < 60.0,
        format!(
            "exit {:?}, {} rows, {gap} Coexistence rows with ji = no, {secs:.2}s",
            o.status.code(),
            lines.len().saturating_sub(1)
        ),
    );
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap()))
        .filter(|(n, _)| n != "manifest.json")
        .collect();
    v.sort();
    v
}

fn manifest_digests(dir: &Path) -> serde_json::Value {
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    m["outputs"].clone()
}

fn determinism(t: &mut Tally, dir: &Path) {
    let cfg = dir.join("det.toml");
    std::fs::write(
        &cfg,
        format!(
            "seed = 11\n{PARAMS}[sim]\ndt = 1e-3\nhorizon = 50.0\nthinning = 10\n\
             [simulate]\ntrajectories = 4\ncoupled = true\n\
             [ergodic]\ntrajectories = 16\nalt_x0 = 5.0\nalt_y0 = 5.0\n\
             [support]\ntrajectories = 4\n\
             [lie_rank]\nn = 21\n\
             [[sweep.axes]]\nname = \"b2\"\nlo = 1e-3\nhi = 10.0\nsteps = 9\nscale = \"log\"\n\
             [[sweep.axes]]\nname = \"c2\"\nvalues = [0.2, 1.0, 2.0]\n"
        ),
    )
    .unwrap();
    let shared = dir.join("det_shared.toml");
    std::fs::write(
        &shared,
        std::fs::read_to_string(&cfg).unwrap().replace("beta = 0.5", "beta = -0.5"),
    )
    .unwrap();
    let runs: [(&str, &Path); 7] = [
        ("classify", &cfg),
        ("simulate", &cfg),
        ("ergodic", &cfg),
        ("support", &cfg),
        ("support", &shared),
        ("lie-rank", &cfg),
        ("sweep", &cfg),
    ];
    let mut mismatches = Vec::new();
    let mut files = 0;
    for (i, (sub, config)) in runs.iter().enumerate() {
        let dirs: Vec<_> = ["1", "4", "1"]
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let out = dir.join(format!("det_{i}_{k}"));
                let o = predprey(&[sub], config, &out, w);
                if o.status.code() != Some(0) {
                    mismatches.push(format!("{sub} exit {:?}", o.status.code()));
                }
                out
            })
            .collect();
        let base = outputs(&dirs[0]);
        files += base.len();
        for other in &dirs[1..] {
            if outputs(other) != base || manifest_digests(other) != manifest_digests(&dirs[0]) {
                mismatches.push(format!("{sub} ({})", config.file_name().unwrap().to_string_lossy()));
            }
        }
    }
    t.report(
        11,
        "determinism",
        mismatches.is_empty() && files > 0,
        if mismatches.is_empty() {
            format!("7 runs x (1, 4, 1 workers): {files} output files byte-identical")
        } else {
            format!("differences: {}", mismatches.join(", "))
        },
    );
}

fn main() {
    let mut t = Tally { failed: 0 };
    let scratch = tempfile::tempdir().expect("temp dir");
    threshold_oracle(&mut t);
    jensen_and_saturation(&mut t);
    boundary_ergodicity(&mut t);
    extinction_rate(&mut t);
    permanence_floor(&mut t);
    pathwise_comparison(&mut t);
    tv_convergence(&mut t);
    degenerate_support(&mut t);
    lie_rank(&mut t);
    literature_gap(&mut t, scratch.path());
    determinism(&mut t, scratch.path());
    if t.failed > 0 {
        println!("{} criteria failed", t.failed);
        std::process::exit(1);
    }
    println!("all 11 criteria passed");
}
