use predprey_core::ergodic::{batch_means_stderr, box_occupation, time_average, Functional};
use predprey_core::geometry::{
    c_star, g_h, sup_h, BracketFamily, Field, FieldExpr, Variant, DEFAULT_SCAN_STEP, DEFAULT_Z_HI,
    DEFAULT_Z_LO,
};
use predprey_core::model::{Coefficients, ModelParams, NoiseMode};
use predprey_core::noise::{CounterNoise, NoiseSource};
use predprey_core::sim::{simulate_ensemble, simulate_system, simulate_with_noise, SimConfig, Trajectory};
use predprey_core::threshold::{lambda_mc, lambda_quadrature, BoundConstants};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// E1(x) = -gamma - ln x - sum_{k>=1} (-x)^k / (k k!)
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

#[test]
fn exponential_integral_oracle() {
    assert!((exp_integral_e1(2.0) - 0.048_900_510_708_061_12).abs() < 1e-15);
    // For q = 3, a = 2: int x^3 e^{-2x}/(1+x) dx = 1/2 - e^2 E1(2), and the
    // density is 4 x^2 e^{-2x}, so with c2 = 2 the intake term is 8 times it.
    let oracle = -0.225 + 8.0 * (0.5 - 2f64.exp() * exp_integral_e1(2.0));
    let est = lambda_quadrature(&ModelParams::reference(), 1e-12).unwrap();
    assert!((est.lambda - oracle).abs() < 1e-10, "{} vs {oracle}", est.lambda);
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
            beta: rng.random_range(0.05..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
        };
        if let Ok(p) = ModelParams::new(raw) {
            if p.prey_persists() {
                return p;
            }
        }
    }
}

#[test]
fn quadrature_agrees_with_monte_carlo_on_random_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);
    for i in 0..50 {
        let p = random_params(&mut rng);
        let est = lambda_quadrature(&p, 1e-10).unwrap();
        let (mc, se) = lambda_mc(&p, 1_000_000, 1000 + i).unwrap();
        assert!(
            (est.lambda - mc).abs() <= 4.0 * se,
            "set {i}: quad {} mc {mc} se {se} ({:?})",
            est.lambda,
            p.coef()
        );
    }
}

/// Sums pairs of fine-step increments so a coarse run sees the same
/// Brownian path as a run at half the step.
struct Coarsened(CounterNoise);

impl NoiseSource for Coarsened {
    fn increment(&mut self, step: u64, dt: f64) -> [f64; 2] {
        let a = self.0.increment(2 * step, dt / 2.0);
        let b = self.0.increment(2 * step + 1, dt / 2.0);
        [a[0] + b[0], a[1] + b[1]]
    }
}

#[test]
fn halving_the_step_changes_averages_less_than_sampling_error() {
    let p = ModelParams::reference();
    let fine = SimConfig {
        thinning: 20,
        ..SimConfig::new(5e-4, 1e4, 1.0, 1.0, 77)
    };
    let coarse = SimConfig {
        dt: 1e-3,
        thinning: 10,
        ..fine
    };
    let a = simulate_with_noise(&p, &fine, CounterNoise::new(77, 0, NoiseMode::Independent)).unwrap();
    let b = simulate_with_noise(
        &p,
        &coarse,
        Coarsened(CounterNoise::new(77, 0, NoiseMode::Independent)),
    )
    .unwrap();
    assert_eq!(a.len(), b.len());
    let f = Functional::XPow(1.0);
    let (ma, mb) = (
        time_average(&a.view(), &f).unwrap(),
        time_average(&b.view(), &f).unwrap(),
    );
    let xs: Vec<f64> = a.x().collect();
    let se = batch_means_stderr(&xs, 50);
    assert!((ma - mb).abs() < se, "{ma} vs {mb}, se {se}");
}

#[test]
fn thinning_barely_moves_box_occupation() {
    let p = ModelParams::reference();
    let k = BoundConstants::from_params(&p, Some(0.884_371)).unwrap();
    let (hbar, big_h) = k.default_box().unwrap();
    let base = SimConfig {
        thinning: 10,
        ..SimConfig::new(1e-3, 1e4, 1.0, 1.0, 5)
    };
    let t10 = simulate_system(&p, &base).unwrap();
    let t20 = simulate_system(&p, &SimConfig { thinning: 20, ..base }).unwrap();
    let o10 = box_occupation(&t10.after_burn_in(0.5), hbar, big_h).unwrap();
    let o20 = box_occupation(&t20.after_burn_in(0.5), hbar, big_h).unwrap();
    let kept = t10.after_burn_in(0.5);
    let y = kept.v.unwrap();
    let inside: Vec<f64> = kept
        .u
        .iter()
        .zip(y)
        .map(|(u, v)| {
            let (x, y) = (u.exp(), v.exp());
            (x <= big_h && y >= hbar && y <= big_h) as u8 as f64
        })
        .collect();
    let se = batch_means_stderr(&inside, 50).max(1e-12);
    assert!((o10 - o20).abs() < 2.0 * se.max(1.0 / inside.len() as f64), "{o10} vs {o20}");
}

#[test]
fn ensemble_matches_serial_runs() {
    let p = ModelParams::reference();
    let cfg = SimConfig::new(1e-2, 20.0, 0.5, 2.0, 9);
    let par = simulate_ensemble(&p, &cfg, 0, 6);
    for (id, t) in par.into_iter().enumerate() {
        let serial = simulate_system(&p, &SimConfig { trajectory: id as u64, ..cfg }).unwrap();
        assert_eq!(t.unwrap(), serial);
    }
}

#[test]
fn half_plane_is_forward_invariant() {
    for beta in [-0.5, -1.0] {
        let p = ModelParams::reference().with("beta", beta).unwrap();
        let cs = c_star(&p, DEFAULT_Z_LO, DEFAULT_Z_HI, DEFAULT_SCAN_STEP, 1e-9).unwrap();
        assert!(cs.value.is_finite());
        let delta = 10.0 * 1e-9;
        assert!(sup_h(&p, cs.value - delta).unwrap().value > 0.0);
        assert!(sup_h(&p, cs.value + delta).unwrap().value <= 0.0);
        for i in 0..100 {
            let u = -10.0 + 20.0 * i as f64 / 99.0;
            let (_, h) = g_h(&p, u, cs.value).unwrap();
            assert!(h <= 1e-8, "beta {beta}, u {u}: h = {h}");
        }
    }
}

fn fd_bracket(p: &ModelParams, g: &Field, y: &Field, u: f64, v: f64) -> [f64; 2] {
    let step = 1e-6;
    let jac = |f: &Field| {
        let du = (f.eval(p, u + step, v).unwrap(), f.eval(p, u - step, v).unwrap());
        let dv = (f.eval(p, u, v + step).unwrap(), f.eval(p, u, v - step).unwrap());
        [
            [(du.0[0] - du.1[0]) / (2.0 * step), (dv.0[0] - dv.1[0]) / (2.0 * step)],
            [(du.0[1] - du.1[1]) / (2.0 * step), (dv.0[1] - dv.1[1]) / (2.0 * step)],
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

#[test]
fn brackets_match_finite_differences() {
    let p = ModelParams::reference();
    let a = Field::drift(&p);
    let b = Field::noise(&p);
    let fam = BracketFamily::new(&p, 3, Variant::Full).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let (u, v) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        for (expr, field) in fam.exprs.iter().zip(&fam.fields) {
            let FieldExpr::Bracket(g, y) = expr else { continue };
            let gf = match **g {
                FieldExpr::A => &a,
                FieldExpr::B => &b,
                _ => unreachable!("right-nested family"),
            };
            let yf = y.to_field(&p).unwrap();
            let exact = field.eval(&p, u, v).unwrap();
            let fd = fd_bracket(&p, gf, &yf, u, v);
            for k in 0..2 {
                assert!(
                    (fd[k] - exact[k]).abs() <= 1e-6 * exact[k].abs().max(1.0),
                    "{expr} at ({u}, {v}): {} vs {}",
                    fd[k],
                    exact[k]
                );
            }
        }
    }
}

fn parse_csv(s: &str) -> Vec<Vec<f64>> {
    s.lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trips_exactly(
        us in proptest::collection::vec(-700.0f64..700.0, 1..40),
        shift in -5.0f64..5.0,
        dt in 1e-6f64..1.0,
    ) {
        let vs: Vec<f64> = us.iter().map(|u| u * 0.5 + shift).collect();
        let t = Trajectory::from_log_states(dt, us.clone(), Some(vs.clone()), NoiseMode::Shared);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let rows = parse_csv(std::str::from_utf8(&buf).unwrap());
        prop_assert_eq!(rows.len(), us.len());
        for (k, row) in rows.iter().enumerate() {
            prop_assert_eq!(row[0].to_bits(), t.times[k].to_bits());
            prop_assert_eq!(row[1].to_bits(), us[k].to_bits());
            prop_assert_eq!(row[2].to_bits(), vs[k].to_bits());
            prop_assert_eq!(row[3].to_bits(), us[k].exp().to_bits());
            prop_assert_eq!(row[4].to_bits(), vs[k].exp().to_bits());
        }
    }

    #[test]
    fn populations_stay_positive(seed in any::<u64>(), x0 in 1e-3f64..10.0, y0 in 1e-3f64..10.0) {
        let p = ModelParams::reference();
        let t = simulate_system(&p, &SimConfig::new(1e-2, 10.0, x0, y0, seed)).unwrap();
        prop_assert!(t.x().all(|x| x > 0.0 && x.is_finite()));
        prop_assert!(t.y().unwrap().all(|y| y > 0.0 && y.is_finite()));
    }
}
