//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p pcr-formation-cli --test acceptance`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{Matrix6x3, Vector3};
use pcr_formation::formation::{compute_ofps, ofp_exact_oracle, AgentId, FormationSpec, PositionFrame};
use pcr_formation::geometry::{align_closed_form, influence, Sim3Transform};
use pcr_formation::optimizer::{
    cost_control_effort, cost_dynamics, cost_formation, cost_obstacle, cost_swarm, cost_time,
    finite_difference_gradient, gradient_relative_error, DynamicLimits, FormationTarget, TrajectoryGradient,
};
use pcr_formation::robust::{ransac_register, RansacConfig};
use pcr_formation::sim::{ObstacleField, Sphere};
use pcr_formation::trajectory::{basis, map_gradients, BoundaryState, Minco, Piece, PolyTrajectory};
use pcr_formation::Point3;
use pcr_formation_cli::commands::{bench_ofps, compare_slender, run_scenario};
use pcr_formation_cli::ScenarioConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-s..s),
        rng.random_range(-s..s),
        rng.random_range(-s..s),
    )
}

fn random_sim3(rng: &mut ChaCha8Rng) -> Sim3Transform {
    let axis = rand_vec(rng, 1.0).try_normalize(1e-6).unwrap_or(Vector3::z());
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    Sim3Transform::from_parts(axis * angle, rand_vec(rng, 5.0), rng.random_range(0.5..2.0))
}

fn load(name: &str) -> ScenarioConfig {
    let path: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn registration_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let t = random_sim3(&mut rng);
        let src: Vec<Point3> = (0..50).map(|_| rand_vec(&mut rng, 3.0)).collect();
        let dst: Vec<Point3> = src.iter().map(|p| t.apply(p)).collect();
        let fit = align_closed_form(&src, &dst, None).map_err(|e| e.to_string())?;
        worst = worst.max(fit.max_abs_diff(&t));
    }
    check(
        worst < 1e-9,
        format!("1000 trials, worst field error {worst:.2e} (< 1e-9)"),
    )
}

fn ransac_resilience() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut exact = 0;
    for trial in 0..100 {
        let n = 40;
        let t = random_sim3(&mut rng);
        let src: Vec<Point3> = (0..n).map(|_| rand_vec(&mut rng, 4.0)).collect();
        let mut dst: Vec<Point3> = src.iter().map(|p| t.apply(p)).collect();
        let mut truth = vec![true; n];
        let mut idx: Vec<usize> = (0..n).collect();
        for k in 0..12 {
            let j = rng.random_range(k..n);
            idx.swap(k, j);
            truth[idx[k]] = false;
            dst[idx[k]] = rand_vec(&mut rng, 10.0);
        }
        let reg = ransac_register(&src, &dst, &RansacConfig::default().with_seed(trial)).map_err(|e| e.to_string())?;
        if reg.inlier_mask == truth {
            exact += 1;
        }
    }
    check(
        exact >= 99,
        format!("{exact}/100 exact inlier sets at 30% outliers (>= 99)"),
    )
}

fn median_gap(n: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut gaps = Vec::new();
    for k in 0..20 {
        let pts: Vec<Point3> = (0..n).map(|_| rand_vec(&mut rng, 5.0)).collect();
        let spec = FormationSpec::from_points("random", &pts).map_err(|e| e.to_string())?;
        let rigid = Sim3Transform::from_parts(rand_vec(&mut rng, 1.0), rand_vec(&mut rng, 5.0), 1.0);
        let actual: BTreeMap<AgentId, Point3> = spec
            .desired()
            .iter()
            .map(|(id, p)| {
                let jitter = Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                (*id, rigid.apply(&(p + jitter)))
            })
            .collect();
        for agent in spec.ids().take(5) {
            let frame = PositionFrame {
                timestamp_index: 0,
                time: 0.0,
                positions: actual
                    .iter()
                    .filter(|(id, _)| **id != agent)
                    .map(|(i, p)| (*i, *p))
                    .collect(),
            };
            let cfg = RansacConfig::default().with_seed(k);
            let relaxed = compute_ofps(agent, &spec, std::slice::from_ref(&frame), &cfg)
                .map_err(|e| e.to_string())?
                .points[0];
            let exact = ofp_exact_oracle(agent, &spec, &frame, relaxed).map_err(|e| e.to_string())?;
            gaps.push((exact - relaxed).norm());
        }
    }
    gaps.sort_by(f64::total_cmp);
    Ok(gaps[gaps.len() / 2])
}

fn relaxation_gap() -> Outcome {
    let sizes = [10, 20, 50, 100];
    let gaps = sizes
        .iter()
        .map(|&n| median_gap(n, 1000 + n as u64))
        .collect::<Result<Vec<f64>, String>>()?;
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
    let text: Vec<String> = sizes.iter().zip(&gaps).map(|(n, g)| format!("N={n}: {g:.4}")).collect();
    check(
        monotone && gaps[3] < 0.05,
        format!("median gap {} m (non-increasing, < 0.05 at N=100)", text.join(", ")),
    )
}

fn ofps_throughput() -> Outcome {
    let rows = bench_ofps(&[1000], 10, 16, 4).map_err(|e| e.to_string())?;
    let r = rows[0];
    check(
        r.t_max < 0.5 && r.failures == 0,
        format!(
            "1000 points, 16 frames: mean {:.4} s, std {:.4} s, max {:.4} s (< 0.5 s), {} failures",
            r.t_mean, r.t_std, r.t_max, r.failures
        ),
    )
}

fn scaling_trend() -> Outcome {
    let a = run_scenario(&load("cube20.toml")).map_err(|e| e.to_string())?.summary;
    let b = run_scenario(&load("cube40.toml")).map_err(|e| e.to_string())?.summary;
    let ratio = b.t_opt_mean / a.t_opt_mean;
    let ok = ratio < 4.0 && a.steady_e_dist_all < 2.0 * 0.3680 && b.steady_e_dist_all < 2.0 * 0.6065;
    check(
        ok,
        format!(
            "t_mean 20: {:.4} s, 40: {:.4} s, ratio {ratio:.2} (< 4); steady e_dist 20: {:.3e} (< 0.736), 40: {:.3e} (< 1.213)",
            a.t_opt_mean, b.t_opt_mean, a.steady_e_dist_all, b.steady_e_dist_all
        ),
    )
}

fn latency_tolerance() -> Outcome {
    const FLOOR: f64 = 1e-9;
    let mut cfg = load("cube20.toml");
    let base = run_scenario(&cfg).map_err(|e| e.to_string())?.summary;
    cfg.sim.bus_latency = 0.1;
    let late = run_scenario(&cfg).map_err(|e| e.to_string())?.summary;
    let ok = late.steady_e_dist_all < 2.0 * base.steady_e_dist_all.max(FLOOR);
    check(
        ok,
        format!(
            "cube20 steady e_dist: no latency {:.3e}, 0.1 s latency {:.3e} (< 2x, floor {FLOOR:.0e} m)",
            base.steady_e_dist_all, late.steady_e_dist_all
        ),
    )
}

fn outlier_resilience() -> Outcome {
    let mut values = Vec::new();
    for seed in 1..=5 {
        let mut cfg = load("resilience20.toml");
        cfg.seed = seed;
        let s = run_scenario(&cfg).map_err(|e| e.to_string())?.summary;
        values.push((seed, s.simulated_time, s.steady_e_dist_normal));
    }
    let ok = values.iter().all(|(_, t, e)| *t <= 30.0 && *e < 0.5);
    let text: Vec<String> = values.iter().map(|(s, _, e)| format!("seed {s}: {e:.3e}")).collect();
    check(
        ok,
        format!("normal-agent steady e_dist {} (< 0.5 within 30 s)", text.join(", ")),
    )
}

fn slender_formation() -> Outcome {
    let (report, _) = compare_slender(&load("slender24.toml"), false).map_err(|e| e.to_string())?;
    check(
        report.e_dist_steady < 0.1 && report.pcr_at_least_as_sensitive,
        format!(
            "steady e_dist {:.3e} (< 0.1); pinch/stretch ratio PCR {:.3} vs Laplacian {:.3}",
            report.e_dist_steady, report.pcr_ratio, report.laplacian_ratio
        ),
    )
}

fn random_traj(rng: &mut ChaCha8Rng, pieces: usize, start: f64, offset: Point3) -> PolyTrajectory {
    let ps = (0..pieces)
        .map(|_| {
            let mut coeffs = Matrix6x3::from_fn(|k, _| rng.random_range(-1.0..1.0) / (1.0 + k as f64));
            for d in 0..3 {
                coeffs[(0, d)] += offset[d];
            }
            Piece {
                coeffs,
                duration: rng.random_range(0.4..1.5),
            }
        })
        .collect();
    PolyTrajectory::new(ps, start).unwrap()
}

fn worst_term_error(
    seed: u64,
    mut term: impl FnMut(&mut ChaCha8Rng, &PolyTrajectory, &[usize]) -> (TrajectoryGradient, TrajectoryGradient),
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(1..6);
        let start = rng.random_range(-1.0..1.0);
        let traj = random_traj(&mut rng, m, start, Vector3::zeros());
        let kappa = vec![rng.random_range(2..8); m];
        let (analytic, fd) = term(&mut rng, &traj, &kappa);
        worst = worst.max(gradient_relative_error(&analytic, &fd, 1e-8));
    }
    worst
}

fn worst_map_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(1..8);
        let q: Vec<Point3> = (0..m - 1).map(|_| rand_vec(&mut rng, 5.0)).collect();
        let t: Vec<f64> = (0..m).map(|_| rng.random_range(0.3..2.0)).collect();
        let head = BoundaryState::new(
            rand_vec(&mut rng, 5.0),
            rand_vec(&mut rng, 1.0),
            rand_vec(&mut rng, 1.0),
        );
        let tail = BoundaryState::new(
            rand_vec(&mut rng, 5.0),
            rand_vec(&mut rng, 1.0),
            rand_vec(&mut rng, 1.0),
        );
        let fractions: Vec<(usize, f64)> = (0..m).flat_map(|i| [(i, 0.0), (i, 0.35), (i, 0.9)]).collect();
        let solve = |q: &[Point3], t: &[f64]| {
            let mut mc = Minco::new(head, tail, m);
            mc.solve(q, t).unwrap();
            let traj = mc.trajectory(0.0).unwrap();
            (mc, traj)
        };
        let cost = |q: &[Point3], t: &[f64]| -> f64 {
            let traj = solve(q, t).1;
            fractions
                .iter()
                .map(|&(i, f)| traj.pieces()[i].eval(f * t[i], 0).norm_squared())
                .sum()
        };
        let (mc, traj) = solve(&q, &t);
        let mut gc = vec![Matrix6x3::zeros(); m];
        let mut gt = vec![0.0; m];
        for &(i, f) in &fractions {
            let tau = f * t[i];
            let p = traj.pieces()[i].eval(tau, 0);
            let b = basis(tau, 0);
            for k in 0..6 {
                for d in 0..3 {
                    gc[i][(k, d)] += 2.0 * p[d] * b[k];
                }
            }
            gt[i] += 2.0 * p.dot(&traj.pieces()[i].eval(tau, 1)) * f;
        }
        let (gq, gtt) = map_gradients(&mc, &gc, &gt).unwrap();
        for i in 0..m - 1 {
            for d in 0..3 {
                let (mut qp, mut qm) = (q.clone(), q.clone());
                qp[i][d] += h;
                qm[i][d] -= h;
                let fd = (cost(&qp, &t) - cost(&qm, &t)) / (2.0 * h);
                worst = worst.max((fd - gq[i][d]).abs() / fd.abs().max(1.0));
            }
        }
        for i in 0..m {
            let (mut tp, mut tm) = (t.clone(), t.clone());
            tp[i] += h;
            tm[i] -= h;
            let fd = (cost(&q, &tp) - cost(&q, &tm)) / (2.0 * h);
            worst = worst.max((fd - gtt[i]).abs() / fd.abs().max(1.0));
        }
    }
    worst
}

fn gradient_suite() -> Outcome {
    const STEP: f64 = 1e-6;
    let samples = |t: &PolyTrajectory, kappa: &[usize]| t.sample_constraint_points_per_piece(kappa);
    let mut results = vec![
        (
            "effort",
            worst_term_error(81, |_, tr, _| {
                let g = cost_control_effort(tr, 80.0).1;
                (
                    g,
                    finite_difference_gradient(tr, STEP, |t| cost_control_effort(t, 80.0).0),
                )
            }),
        ),
        (
            "time",
            worst_term_error(82, |_, tr, _| {
                let g = cost_time(tr, 80.0).1;
                (g, finite_difference_gradient(tr, STEP, |t| cost_time(t, 80.0).0))
            }),
        ),
        (
            "formation",
            worst_term_error(83, |rng, tr, _| {
                let targets: Vec<FormationTarget> = (0..=15)
                    .map(|j| FormationTarget {
                        time: tr.start_time() + j as f64 * tr.total_duration() * 1.2 / 15.0,
                        point: rand_vec(rng, 1.0),
                    })
                    .collect();
                let g = cost_formation(tr, &targets, 300.0).unwrap().1;
                (
                    g,
                    finite_difference_gradient(tr, STEP, |t| cost_formation(t, &targets, 300.0).unwrap().0),
                )
            }),
        ),
        (
            "obstacle",
            worst_term_error(84, |rng, tr, kappa| {
                let field = ObstacleField {
                    spheres: (0..3)
                        .map(|_| {
                            let c = rand_vec(rng, 0.6);
                            Sphere {
                                center: [c.x, c.y, c.z],
                                radius: rng.random_range(0.2..0.6),
                            }
                        })
                        .collect(),
                    boxes: Vec::new(),
                };
                let g = cost_obstacle(tr, &samples(tr, kappa), &field, 0.8, 1e4).1;
                let fd =
                    finite_difference_gradient(tr, STEP, |t| cost_obstacle(t, &samples(t, kappa), &field, 0.8, 1e4).0);
                (g, fd)
            }),
        ),
        (
            "swarm",
            worst_term_error(85, |rng, tr, kappa| {
                let peers: Vec<PolyTrajectory> = (0..3)
                    .map(|_| {
                        let start = rng.random_range(-1.5..0.5);
                        let offset = rand_vec(rng, 0.5);
                        random_traj(rng, 2, start, offset)
                    })
                    .collect();
                let g = cost_swarm(tr, &samples(tr, kappa), &peers, 1.5, 1e4).1;
                let fd =
                    finite_difference_gradient(tr, STEP, |t| cost_swarm(t, &samples(t, kappa), &peers, 1.5, 1e4).0);
                (g, fd)
            }),
        ),
        (
            "dynamics",
            worst_term_error(86, |rng, tr, kappa| {
                let limits = DynamicLimits {
                    v_max: rng.random_range(0.2..1.0),
                    a_max: rng.random_range(0.4..1.5),
                };
                let g = cost_dynamics(tr, &samples(tr, kappa), &limits, 100.0).1;
                let fd =
                    finite_difference_gradient(tr, STEP, |t| cost_dynamics(t, &samples(t, kappa), &limits, 100.0).0);
                (g, fd)
            }),
        ),
    ];
    results.push(("map_gradients", worst_map_error()));
    let ok = results.iter().all(|(_, e)| *e < 1e-4);
    let text: Vec<String> = results.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    check(
        ok,
        format!(
            "worst relative error over 100 instances each: {} (< 1e-4)",
            text.join(", ")
        ),
    )
}

fn influence_and_rocket() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut identities = true;
    let mut monotone = true;
    for _ in 0..10_000 {
        let a = rand_vec(&mut rng, 10.0);
        let b = rand_vec(&mut rng, 10.0);
        let s = rng.random_range(0.1..5.0);
        let (ia, ib) = (influence(&a, s), influence(&b, s));
        identities &= ia.scale_info == a.norm_squared() && ia.rotation_info == s * s * a.norm_squared();
        let (big, small) = if a.norm() > b.norm() { (ia, ib) } else { (ib, ia) };
        if a.norm() != b.norm() {
            monotone &= big.scale_info > small.scale_info && big.rotation_info > small.rotation_info;
        }
    }
    let start = Instant::now();
    let rocket = run_scenario(&load("rocket120.toml"))
        .map_err(|e| e.to_string())?
        .summary;
    let wall = start.elapsed().as_secs_f64();
    let finite = rocket.final_e_dist_all.is_finite() && rocket.min_pair_dist.is_finite();
    check(
        identities && monotone && rocket.status == "completed" && finite,
        format!(
            "identities {identities}, monotonicity {monotone} over 1e4 pairs; rocket120 {} in {wall:.1} s wall, \
             {} agents, final e_dist {:.3}, t_mean {:.4} s",
            rocket.status, rocket.agents, rocket.final_e_dist_all, rocket.t_opt_mean
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 registration recovery", registration_recovery),
        ("2 RANSAC resilience", ransac_resilience),
        ("3 relaxation-gap decay", relaxation_gap),
        ("4 OFPS throughput", ofps_throughput),
        ("5 scaling trend", scaling_trend),
        ("5b latency tolerance", latency_tolerance),
        ("6 outlier resilience", outlier_resilience),
        ("7 slender formation", slender_formation),
        ("8 gradient suite", gradient_suite),
        ("9 influence + rocket120", influence_and_rocket),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<26} {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<26} {detail} [{secs:.1} s]");
            }
        }
    }
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
