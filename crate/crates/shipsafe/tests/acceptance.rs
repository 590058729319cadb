//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shipsafe::campaign::{run_campaign, CampaignOptions, CampaignReport, SolveHistogram};
use shipsafe::config::{PolicyKind, Settings};
use shipsafe::runner::{run_episode, EpisodeOptions, Setup};
use shipsafe_core::disturbance::{observer_gain_matrix, observer_step, DisturbanceLimits, ObserverState};
use shipsafe_core::env::replay_observer;
use shipsafe_core::env::scenario::{CaseId, CustomWorld, ScenarioSpec};
use shipsafe_core::math::wrap_angle;
use shipsafe_core::policy::{LosFollower, Policy, Replay};
use shipsafe_core::psf::NoClock;
use shipsafe_core::sensing::{
    extract_detection_points, raycast, LidarConfig, MovingShip, StaticObstacle, World,
};
use shipsafe_core::terminal::{
    boundary_sample, build_polytope, compute_equilibrium, linearize, rollout, simplified_ode, synthesize_verified,
};
use shipsafe_core::vessel::{
    build_matrices, coriolis, max_surge_speed, ControlInput, GeneralizedForce, Pose, StateVector, Velocity,
    VesselState,
};

// Pinned tolerances.
const A2_MIN_INTERVENTION: f64 = 0.30;
const A2_TIME_CAP: f64 = 600.0;
const A3_MAX_INTERVENTION: f64 = 0.01;
const A3_MAX_MEAN_DELTA: f64 = 1e-6;
const A4_MEDIAN: f64 = 10e-3;
const A4_P99: f64 = 50e-3;
const A5_SAMPLES: usize = 10_000;
const A5_HORIZON: f64 = 60.0;
const A6_SEEDS: u64 = 20;
const A6_MAX_REL_ERROR: f64 = 0.05;
const A7_RATIO: (f64, f64) = (14.0, 18.0);
const A7_SKEW: f64 = 1e-12;
const A7_STEADY_STATE: f64 = 1e-6;
const A7_JACOBIAN: f64 = 1e-6;
const A8_WORLDS: usize = 50;
const A8_MARCH_STEP: f64 = 0.01;
const A8_MAX_DISCREPANCY: f64 = 0.02;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn setup() -> Setup {
    let settings = Settings::load(None).expect("default settings");
    let terminal = synthesize_verified(&settings.terminal).expect("default terminal set");
    Setup::new(settings, terminal).expect("setup")
}

fn campaign(setup: &Setup, case: CaseId, policy: PolicyKind, episodes: usize, seed: u64, cap: Option<f64>) -> CampaignReport {
    let spec = ScenarioSpec::case(case, 0);
    let opts = EpisodeOptions {
        policy,
        psf: true,
        time_cap: cap,
        keep_records: false,
    };
    run_campaign(
        setup,
        &CampaignOptions {
            spec: &spec,
            episode: &opts,
            episodes,
            seed,
            timing: true,
            sink: None,
        },
    )
    .expect("campaign without sink")
}

fn collisions(r: &CampaignReport) -> String {
    format!(
        "{} collisions, {} failed, mean progress {:.3}",
        r.aggregate.collisions, r.aggregate.failed, r.aggregate.mean_progress
    )
}

fn a1(setup: &Setup) -> Outcome {
    let r = campaign(setup, CaseId::One, PolicyKind::LosFollower, 100, 1, None);
    outcome(
        r.aggregate.collisions == 0 && r.aggregate.failed == 0,
        format!("100 Case-1 episodes, LOS + filter: {}", collisions(&r)),
    )
}

fn a2(setup: &Setup) -> (Outcome, SolveHistogram, f64) {
    let c1 = campaign(setup, CaseId::One, PolicyKind::Adversarial, 100, 2, Some(A2_TIME_CAP));
    let c2 = campaign(setup, CaseId::Two, PolicyKind::Adversarial, 50, 3, Some(A2_TIME_CAP));
    let mut hist = SolveHistogram::default();
    let mut ticks = 0usize;
    let mut interventions = 0.0;
    let mut max = 0.0f64;
    for e in c1.episodes.iter().chain(&c2.episodes) {
        hist.merge(&e.solve_times);
        if let Some(m) = &e.metrics {
            ticks += m.ticks;
            interventions += m.intervention_rate * m.ticks as f64;
            max = max.max(m.max_solve_time);
        }
    }
    let rate = if ticks > 0 { interventions / ticks as f64 } else { 0.0 };
    let hits = c1.aggregate.collisions + c2.aggregate.collisions;
    let failed = c1.aggregate.failed + c2.aggregate.failed;
    let pass = hits == 0 && failed == 0 && rate >= A2_MIN_INTERVENTION;
    let detail = format!(
        "adversarial + filter, {A2_TIME_CAP} s cap: Case 1 {}; Case 2 {}; intervention {:.1}% of {ticks} ticks (need >= {:.0}%)",
        collisions(&c1),
        collisions(&c2),
        100.0 * rate,
        100.0 * A2_MIN_INTERVENTION
    );
    (outcome(pass, detail), hist, max)
}

fn a3(setup: &Setup) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut ticks, mut interventions, mut quiet, mut quiet_delta, mut reached) = (0usize, 0usize, 0usize, 0.0, 0);
    let episodes = 10;
    for i in 0..episodes {
        let heading: f64 = rng.gen_range(-PI..PI);
        let length = 500.0;
        let spec = ScenarioSpec {
            case: CaseId::Custom,
            seed: i,
            custom: Some(CustomWorld {
                waypoints: vec![[0.0, 0.0], [length * heading.cos(), length * heading.sin()]],
                statics: vec![],
                ships: vec![],
            }),
            ..ScenarioSpec::default()
        };
        let opts = EpisodeOptions {
            policy: PolicyKind::LosFollower,
            psf: true,
            time_cap: None,
            keep_records: true,
        };
        let r = run_episode(setup, &spec, &opts, &NoClock).expect("episode");
        reached += usize::from(r.metrics.progress > 0.99);
        for t in &r.records {
            ticks += 1;
            if t.intervened {
                interventions += 1;
            } else {
                quiet += 1;
                quiet_delta += t.delta_norm;
            }
        }
    }
    let rate = interventions as f64 / ticks.max(1) as f64;
    let mean = quiet_delta / quiet.max(1) as f64;
    outcome(
        rate <= A3_MAX_INTERVENTION && mean <= A3_MAX_MEAN_DELTA,
        format!(
            "{episodes} open-water straight paths ({reached} completed): intervention {:.3}% of {ticks} ticks, mean |delta| {mean:.2e} on quiet ticks",
            100.0 * rate
        ),
    )
}

fn a4(hist: &SolveHistogram, max: f64) -> Outcome {
    let (p50, p90, p99) = (hist.quantile(0.5), hist.quantile(0.9), hist.quantile(0.99));
    outcome(
        p50 < A4_MEDIAN && p99 < A4_P99,
        format!(
            "A2 solve times over {} ticks: p50 <= {:.2} ms, p90 <= {:.2} ms, p99 <= {:.2} ms, max {:.2} ms",
            hist.count(),
            p50 * 1e3,
            p90 * 1e3,
            p99 * 1e3,
            max * 1e3
        ),
    )
}

fn a5(setup: &Setup) -> Outcome {
    let spec = &setup.settings.terminal;
    let term = &setup.terminal;
    let eq = compute_equilibrium(&spec.params, spec.equilibrium_surge_force).unwrap();
    let poly = build_polytope(spec.d_f, &spec.state_bounds().unwrap(), &spec.inputs, &eq).unwrap();
    let p = term.p_nu_matrix();
    let k = term.gain();
    let steps = (A5_HORIZON / term.dt).round() as usize;
    let half_side = term.d_f / 2f64.sqrt();
    // Independent of the seed used during synthesis.
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce97);
    let (mut exits, mut outside_poly, mut input_clips, mut worst) = (0, 0, 0, 0.0f64);
    for _ in 0..A5_SAMPLES {
        let nu = boundary_sample(&p, &mut rng);
        let heading = rng.gen_range(-PI..PI);
        let x = StateVector::new(0.0, 0.0, 0.0, nu[0], nu[1], nu[2]);
        let u: SVector<f64, 2> = k * nu;
        if !poly.contains(&x, &u, 0.0) {
            outside_poly += 1;
        }
        let r = rollout(&setup.model, term, &spec.inputs, &nu, heading, steps);
        worst = worst.max(r.max_level);
        if r.max_level > 1.0 + 1e-9 || r.max_offset > half_side {
            exits += 1;
        }
        input_clips += usize::from(r.input_violation);
    }
    outcome(
        exits == 0 && outside_poly == 0,
        format!(
            "{A5_SAMPLES} boundary samples, {A5_HORIZON} s nonlinear rollouts: {exits} exits (max level {worst:.6}), {outside_poly} outside the polytope, {input_clips} input clips"
        ),
    )
}

fn rel_err(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn a6(setup: &Setup) -> Outcome {
    let model = setup.model;
    let inputs = setup.settings.env.inputs;
    let dt = setup.settings.env.dt;
    let gains = setup.settings.env.observer;
    let gain = observer_gain_matrix(&model.matrices, &gains).unwrap();
    let [fm, tm] = inputs.magnitude();
    let limits = DisturbanceLimits::scaled(setup.speed_max, fm, tm);
    let ticks = 1200;
    // Settling is read off the estimate alone: its change over a 10 s window
    // falls below 0.5 % of its size.
    let window = (10.0 / dt) as usize;
    let mut worst = 0.0f64;
    let mut latest_settle = 0.0f64;
    let mut unsettled = 0;
    for seed in 0..A6_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau: [f64; 3] = std::array::from_fn(|i| {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            0.5 * sign * limits.force_max[i]
        });
        let target_course: f64 = rng.gen_range(-PI..PI);
        let mut policy = LosFollower::new(setup.settings.los, inputs, setup.speed_max);
        let mut state = VesselState::new(0.0, 0.0, target_course + rng.gen_range(-0.5..0.5), 0.0, 0.0, 0.0);
        let mut obs = ObserverState {
            zeta: (-gain * state.vel.to_vector()).into(),
            estimate: [0.0; 3],
        };
        let mut history = Vec::with_capacity(ticks);
        for tick in 0..ticks {
            // Track a straight course line through the origin.
            let course = state.pose.psi + state.vel.v.atan2(state.vel.u.max(1e-3));
            let cross = -state.pose.x * target_course.sin() + state.pose.y * target_course.cos();
            let mut features = vec![0.0; 9 + 40];
            features[0] = state.vel.u;
            features[1] = state.vel.v;
            features[2] = state.vel.r;
            features[3] = cross;
            features[4] = wrap_angle(course - target_course);
            let u = policy.act(tick, &features).unwrap_or(ControlInput::ZERO);
            obs = observer_step(&obs, &state.vel, u, &model.matrices, &model.params, &gain, dt).unwrap();
            history.push(obs.estimate);
            state = model.step(&state, u, &GeneralizedForce::new(tau[0], tau[1], tau[2]), dt).unwrap();
        }
        let settled = (window..ticks).find(|&k| {
            let (a, b) = (history[k], history[k - window]);
            let size = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let change = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            size > 0.0 && change < 5e-3 * size
        });
        match settled {
            Some(k) => {
                latest_settle = latest_settle.max(k as f64 * dt);
                for e in &history[k..] {
                    worst = worst.max(rel_err(e, &tau));
                }
            }
            None => unsettled += 1,
        }
    }

    // Online estimates of filtered Case-3 episodes against an offline rerun.
    let mut mismatched = 0;
    let mut compared = 0;
    for seed in 0..A6_SEEDS {
        let opts = EpisodeOptions {
            policy: PolicyKind::LosFollower,
            psf: true,
            time_cap: Some(120.0),
            keep_records: true,
        };
        let r = run_episode(setup, &ScenarioSpec::case(CaseId::Three, seed), &opts, &NoClock).unwrap();
        let offline = replay_observer(&setup.model, &gains, &r.records, dt).unwrap();
        compared += r.records.len();
        mismatched += r
            .records
            .iter()
            .zip(&offline)
            .filter(|(rec, off)| rec.tau_hat.map(f64::to_bits) != off.map(f64::to_bits))
            .count();
    }
    outcome(
        unsettled == 0 && worst < A6_MAX_REL_ERROR && mismatched == 0,
        format!(
            "{A6_SEEDS} seeds at 50% of limits: max relative error {:.2}% after settling (latest {latest_settle:.0} s, {unsettled} unsettled); offline rerun {mismatched}/{compared} ticks differ",
            100.0 * worst
        ),
    )
}

fn a7(setup: &Setup) -> Outcome {
    let m = setup.model;
    // Order: error ratio between dt and dt/2 against a fine reference.
    let x0 = VesselState::new(0.0, 0.0, 0.3, 0.35, -0.04, 0.08).to_vector();
    let u = ControlInput::new(1.4, 0.08);
    let tau = GeneralizedForce::ZERO;
    let integrate = |dt: f64| {
        let steps = (5.0 / dt).round() as usize;
        (0..steps).fold(x0, |x, _| m.rk4(&x, u, &tau, dt))
    };
    let reference = integrate(0.5 / 128.0);
    let ratio = (integrate(0.5) - reference).norm() / (integrate(0.25) - reference).norm();

    let mat = build_matrices(&m.params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let skew = (0..10_000)
        .map(|_| {
            let vel = Velocity::new(rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let c = coriolis(&mat, &vel);
            (c + c.transpose()).abs().max()
        })
        .fold(0.0, f64::max);

    let f_max = setup.settings.env.inputs.surge_max;
    let u_max = max_surge_speed(&m.params, f_max).unwrap();
    let acc = m.dynamics_ode(
        &Velocity::new(u_max, 0.0, 0.0),
        &GeneralizedForce::new(f_max, 0.0, 0.0),
        &GeneralizedForce::ZERO,
    );
    let residual = (m.matrices.mass * acc).abs().max();

    // Each Jacobian against central differences of the function it linearizes:
    // the terminal-set model drops nonlinear damping, the filter's does not.
    // |v|v terms make the difference quotient O(h) accurate at v = 0.
    let h = 1e-7;
    let central = |f: &dyn Fn(&StateVector, ControlInput) -> StateVector, x: &StateVector, u: ControlInput| {
        let mut fa = SMatrix::<f64, 6, 6>::zeros();
        let mut fb = SMatrix::<f64, 6, 2>::zeros();
        for j in 0..6 {
            let (mut xp, mut xm) = (*x, *x);
            xp[j] += h;
            xm[j] -= h;
            fa.set_column(j, &((f(&xp, u) - f(&xm, u)) / (2.0 * h)));
        }
        for j in 0..2 {
            let (mut up, mut um) = (u, u);
            if j == 0 {
                up.surge += h;
                um.surge -= h;
            } else {
                up.yaw += h;
                um.yaw -= h;
            }
            fb.set_column(j, &((f(x, up) - f(x, um)) / (2.0 * h)));
        }
        (fa, fb)
    };
    let rel = |a: &SMatrix<f64, 6, 6>, b: &SMatrix<f64, 6, 2>, fa: &SMatrix<f64, 6, 6>, fb: &SMatrix<f64, 6, 2>| {
        ((a - fa).abs().max() / fa.abs().max()).max((b - fb).abs().max() / fb.abs().max())
    };
    let mut jac = 0.0f64;
    for thrust in [0.0, f_max] {
        let eq = compute_equilibrium(&m.params, thrust).unwrap();
        let x = StateVector::from(eq.state);
        let lin = linearize(&m, &eq);
        let (fa, fb) = central(&|x, u| simplified_ode(&m, x, u), &x, eq.input);
        jac = jac.max(rel(&lin.a, &lin.b, &fa, &fb));
        let (a, b) = m.ode_jacobian(&x);
        let (fa, fb) = central(&|x, u| m.ode(x, u, &tau), &x, eq.input);
        jac = jac.max(rel(&a, &b, &fa, &fb));
    }
    outcome(
        (A7_RATIO.0..=A7_RATIO.1).contains(&ratio) && skew <= A7_SKEW && residual <= A7_STEADY_STATE && jac <= A7_JACOBIAN,
        format!(
            "RK4 ratio {ratio:.2}, skew {skew:.1e}, steady-state residual {residual:.1e} at u_max {u_max:.4} m/s, Jacobian relative error {jac:.1e}"
        ),
    )
}

fn random_world(rng: &mut ChaCha8Rng, range: f64) -> World {
    let mut world = World::default();
    for _ in 0..rng.gen_range(3..12) {
        let d = rng.gen_range(5.0..range);
        let a = rng.gen_range(-PI..PI);
        let radius: f64 = rng.gen_range(1.0..30.0);
        if d > radius + 0.5 {
            world.statics.push(StaticObstacle {
                center: [d * a.cos(), d * a.sin()],
                radius,
            });
        }
    }
    for _ in 0..rng.gen_range(0..5) {
        let d = rng.gen_range(15.0..range);
        let a = rng.gen_range(-PI..PI);
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        world.ships.push(MovingShip {
            position: [d * a.cos(), d * a.sin()],
            velocity: v,
            heading: v[1].atan2(v[0]),
            length: rng.gen_range(3.0..12.0),
        });
    }
    world
}

fn circles(world: &World) -> Vec<([f64; 2], f64)> {
    world
        .statics
        .iter()
        .map(|o| (o.center, o.radius))
        .chain(world.ships.iter().map(|s| (s.position, s.hazard_radius())))
        .collect()
}

/// First sample along the ray that lies inside an obstacle.
fn march(origin: [f64; 2], angle: f64, shapes: &[([f64; 2], f64)], range: f64) -> f64 {
    let dir = [angle.cos(), angle.sin()];
    // Only circles the infinite ray passes near can stop the march.
    let near: Vec<_> = shapes
        .iter()
        .filter(|(c, r)| {
            let rel = [c[0] - origin[0], c[1] - origin[1]];
            let along = rel[0] * dir[0] + rel[1] * dir[1];
            let lateral = (rel[0] * dir[1] - rel[1] * dir[0]).abs();
            lateral <= *r && along + r >= 0.0
        })
        .collect();
    let n = (range / A8_MARCH_STEP).ceil() as usize;
    for i in 1..=n {
        let t = (i as f64 * A8_MARCH_STEP).min(range);
        let p = [origin[0] + t * dir[0], origin[1] + t * dir[1]];
        if near.iter().any(|(c, r)| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) <= r * r) {
            return t;
        }
    }
    range
}

fn a8() -> Outcome {
    let cfg = LidarConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst, mut worst_point, mut rays, mut points) = (0.0f64, 0.0f64, 0, 0);
    for _ in 0..A8_WORLDS {
        let world = random_world(&mut rng, cfg.range);
        let pose = Pose {
            x: 0.0,
            y: 0.0,
            psi: rng.gen_range(-PI..PI),
        };
        let shapes = circles(&world);
        let scan = raycast(&pose, &world, &cfg);
        for (i, &d) in scan.ranges.iter().enumerate() {
            let oracle = march([pose.x, pose.y], scan.angles[i] + pose.psi, &shapes, cfg.range);
            worst = worst.max((d - oracle).abs());
            rays += 1;
        }
        for p in extract_detection_points(&pose, &scan, &cfg, 5) {
            let gap = shapes
                .iter()
                .map(|(c, r)| ((p[0] - c[0]).hypot(p[1] - c[1]) - r).abs())
                .fold(f64::INFINITY, f64::min);
            worst_point = worst_point.max(gap);
            points += 1;
        }
    }
    outcome(
        worst <= A8_MAX_DISCREPANCY && worst_point <= A8_MAX_DISCREPANCY,
        format!(
            "{A8_WORLDS} worlds, {rays} rays: max |raycast - march| {worst:.4} m; {points} detection points within {worst_point:.1e} m of a boundary"
        ),
    )
}

fn a9(setup: &Setup) -> Outcome {
    // The substitute invariant: a logged episode replays bit-identically.
    let spec = ScenarioSpec::case(CaseId::Three, 9);
    let logged = run_episode(
        setup,
        &spec,
        &EpisodeOptions {
            policy: PolicyKind::Adversarial,
            psf: true,
            time_cap: Some(300.0),
            keep_records: true,
        },
        &NoClock,
    )
    .unwrap();
    let mut replay = Replay::new(logged.records.iter().map(|r| r.proposal).collect());
    let mut ep = shipsafe_core::env::Episode::from_spec(
        &spec,
        setup.model,
        Some(setup.filter().unwrap()),
        shipsafe_core::env::EnvConfig {
            max_time: 300.0,
            ..setup.settings.env.clone()
        },
    )
    .unwrap();
    let mut identical = true;
    for rec in &logged.records {
        let action = replay.act(ep.tick(), &ep.observation()).unwrap();
        identical &= ep.step(action, &NoClock).unwrap().record == *rec;
    }
    identical &= ep.done().is_some();
    outcome(
        identical,
        format!(
            "training curves and real-traffic statistics are not reproducible without a trained agent or AIS/terrain data; substituted by A1-A8 and deterministic replay ({} ticks {})",
            logged.records.len(),
            if identical { "bit-identical" } else { "DIFFER" }
        ),
    )
}

fn report(id: &str, started: Instant, o: &Outcome, all: &mut bool) {
    *all &= o.pass;
    println!(
        "{id} {} [{:.0} s] {}",
        if o.pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64(),
        o.detail
    );
}

fn main() -> ExitCode {
    // Nothing to list for `cargo test -- --list`.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    // e.g. ACCEPTANCE_ONLY=A5,A7 runs a subset.
    let only = std::env::var("ACCEPTANCE_ONLY").ok();
    let wanted = |id: &str| only.as_deref().map_or(true, |o| o.split(',').any(|x| x.trim() == id));
    let setup = setup();
    let mut all = true;
    let mut check = |id: &str, f: &mut dyn FnMut() -> Outcome| {
        if wanted(id) {
            let t = Instant::now();
            let o = f();
            report(id, t, &o, &mut all);
        }
    };
    check("A7", &mut || a7(&setup));
    check("A8", &mut || a8());
    check("A5", &mut || a5(&setup));
    check("A6", &mut || a6(&setup));
    check("A3", &mut || a3(&setup));
    check("A1", &mut || a1(&setup));
    let mut solve = None;
    check("A2", &mut || {
        let (o, hist, max) = a2(&setup);
        solve = Some((hist, max));
        o
    });
    check("A4", &mut || match &solve {
        Some((hist, max)) => a4(hist, *max),
        None => outcome(false, "needs the A2 campaign".into()),
    });
    check("A9", &mut || a9(&setup));
    if all {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
