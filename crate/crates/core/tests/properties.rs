use proptest::prelude::*;

use trackpred::agent::{AgentClass, ClassTable};
use trackpred::dataset::{
    format_trajectory_records, horizon_neighbors, occupancy_grid, parse_trajectory_text, window_samples, AgentContext,
    GridSpec, TrajectoryRecord, WindowConfig,
};
use trackpred::eval::{ade, fde, frame_distances, rmse_curve};
use trackpred::geometry::{estimate_homography, project_to_pixel, project_to_world, Homography, PixelPoint};
use trackpred::orca::{orca_constraint, solve_velocity, step_simulation, AgentDisc, OrcaHalfPlane, SimParams};
use trackpred::state::{concentration, derivative, Trajectory};
use trackpred::tracker::assign;
use trackpred::Vec2;

fn vec2(range: f64) -> impl Strategy<Value = Vec2> {
    (-range..range, -range..range).prop_map(|(x, y)| Vec2::new(x, y))
}

fn path(len: usize) -> impl Strategy<Value = Vec<Vec2>> {
    prop::collection::vec(vec2(50.0), len)
}

fn homography() -> impl Strategy<Value = Homography> {
    (
        0.02..0.2f64,
        -0.02..0.02f64,
        -20.0..20.0f64,
        -0.02..0.02f64,
        0.02..0.2f64,
        -20.0..20.0f64,
        -1e-4..1e-4f64,
        -1e-4..1e-4f64,
    )
        .prop_map(|(a, b, c, d, e, f, g, h)| Homography::from_rows([[a, b, c], [d, e, f], [g, h, 1.0]]).unwrap())
}

fn half_plane() -> impl Strategy<Value = OrcaHalfPlane> {
    (vec2(3.0), 0.0..std::f64::consts::TAU).prop_map(|(point, a)| OrcaHalfPlane {
        point,
        direction: Vec2::new(a.cos(), a.sin()),
    })
}

fn disc(id: u64) -> impl Strategy<Value = AgentDisc> {
    (vec2(20.0), vec2(3.0), 0.3..2.0f64, 0.5..3.0f64, vec2(20.0)).prop_map(move |(position, velocity, radius, pref, goal)| {
        AgentDisc {
            id,
            position,
            velocity,
            radius,
            pref_speed: pref,
            max_speed: 1.5 * pref,
            goal,
        }
    })
}

fn rigid(p: Vec2, angle: f64, shift: Vec2) -> Vec2 {
    p.rotate(angle) + shift
}

fn brute_force(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[row][j] + go(cost, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cost[0].len()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_round_trips(h in homography(), u in 0.0..1920.0f64, v in 0.0..1080.0f64) {
        let w = project_to_world(&h, PixelPoint::new(u, v)).unwrap();
        let back = project_to_pixel(&h.inverse(), w).unwrap();
        prop_assert!((back.u - u).abs() < 1e-8 && (back.v - v).abs() < 1e-8);
    }

    #[test]
    fn homography_is_recovered_from_exact_points(h in homography()) {
        let px: Vec<PixelPoint> = [(0.0, 0.0), (1900.0, 20.0), (1850.0, 1060.0), (30.0, 1000.0), (960.0, 540.0), (400.0, 700.0)]
            .into_iter()
            .map(|(u, v)| PixelPoint::new(u, v))
            .collect();
        let world: Vec<Vec2> = px.iter().map(|&p| project_to_world(&h, p).unwrap()).collect();
        let est = estimate_homography(&px, &world).unwrap();
        let norm = |m: &nalgebra::Matrix3<f64>| m / m.norm();
        let (a, b) = (norm(h.matrix()), norm(est.matrix()));
        prop_assert!((a - b).norm().min((a + b).norm()) < 1e-6);
    }

    #[test]
    fn derivative_ignores_translation(pts in path(6), shift in vec2(100.0)) {
        let t = Trajectory::new(1, AgentClass::Car, pts.iter().enumerate().map(|(i, &p)| (i as i64, p)).collect()).unwrap();
        let moved = Trajectory::new(1, AgentClass::Car, pts.iter().enumerate().map(|(i, &p)| (i as i64, p + shift)).collect()).unwrap();
        let (a, b) = (derivative(&t, 30.0).unwrap(), derivative(&moved, 30.0).unwrap());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((*x - *y).norm() < 1e-9);
        }
    }

    #[test]
    fn concentration_grows_with_the_box(pts in path(30), q in vec2(50.0), dx in 0.1..30.0f64, dy in 0.1..30.0f64, gx in 0.0..10.0f64, gy in 0.0..10.0f64) {
        let small = concentration(&pts, q, (dx, dy)).unwrap();
        let large = concentration(&pts, q, (dx + gx, dy + gy)).unwrap();
        prop_assert!(small <= large);
    }

    #[test]
    fn solver_respects_constraints_and_speed(planes in prop::collection::vec(half_plane(), 0..10), v_pref in vec2(20.0), max_speed in 1.0..20.0f64) {
        let sol = solve_velocity(&planes, v_pref, max_speed);
        prop_assert!(sol.velocity.norm() <= max_speed + 1e-9);
        if sol.feasible {
            for p in &planes {
                prop_assert!(p.permits(sol.velocity, 1e-9));
            }
        }
    }

    #[test]
    fn solver_ignores_constraint_order(planes in prop::collection::vec(half_plane(), 1..8), v_pref in vec2(10.0), max_speed in 1.0..20.0f64, rot in 0usize..8) {
        let a = solve_velocity(&planes, v_pref, max_speed);
        prop_assume!(a.feasible);
        let mut shuffled = planes.clone();
        shuffled.reverse();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        let b = solve_velocity(&shuffled, v_pref, max_speed);
        prop_assert!(b.feasible);
        prop_assert!((a.velocity - b.velocity).norm() < 1e-9, "{:?} vs {:?}", a.velocity, b.velocity);
    }

    #[test]
    fn corrections_are_reciprocal(a in disc(1), b in disc(2)) {
        let ca = orca_constraint(&a, &b, 2.0, 1.0 / 30.0);
        let cb = orca_constraint(&b, &a, 2.0, 1.0 / 30.0);
        prop_assert!((ca.correction + cb.correction).norm() < 1e-9);
    }

    #[test]
    fn simulation_is_deterministic(a in disc(1), b in disc(2), c in disc(3)) {
        let agents = vec![a, b, c];
        let params = SimParams::default();
        let mut x = agents.clone();
        let mut y = agents;
        for _ in 0..20 {
            x = step_simulation(&x, &params).unwrap();
            y = step_simulation(&y, &params).unwrap();
        }
        prop_assert_eq!(x, y);
    }

    #[test]
    fn assignment_matches_brute_force(rows in 1usize..=5, cols in 1usize..=5, seed in prop::collection::vec(0.0..100.0f64, 25)) {
        let cost: Vec<Vec<f64>> = (0..rows).map(|i| (0..cols).map(|j| seed[i * 5 + j]).collect()).collect();
        let result = assign(&cost, f64::INFINITY);
        prop_assert_eq!(result.matches.len(), rows.min(cols));
        let mut rows_seen = std::collections::BTreeSet::new();
        let mut cols_seen = std::collections::BTreeSet::new();
        for &(i, j) in &result.matches {
            prop_assert!(rows_seen.insert(i) && cols_seen.insert(j));
        }
        let total: f64 = result.matches.iter().map(|&(i, j)| cost[i][j]).sum();
        let optimum = if rows <= cols {
            brute_force(&cost)
        } else {
            let t: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| cost[i][j]).collect()).collect();
            brute_force(&t)
        };
        prop_assert!((total - optimum).abs() < 1e-9, "{total} vs {optimum}");
    }

    #[test]
    fn trajectory_text_round_trips(rows in prop::collection::vec((0i64..10_000, 1u64..500, -1e4..1e4f64, -1e4..1e4f64), 0..40)) {
        let round = |v: f64| (v * 1e6).round() / 1e6;
        let records: Vec<TrajectoryRecord> = rows
            .into_iter()
            .map(|(frame_id, vehicle_id, x, y)| TrajectoryRecord { frame_id, vehicle_id, x: round(x), y: round(y), class: None })
            .collect();
        let text = format_trajectory_records(&records);
        let parsed = parse_trajectory_text(&text).unwrap();
        prop_assert_eq!(&parsed, &records);
        prop_assert_eq!(format_trajectory_records(&parsed), text);
    }

    #[test]
    fn occupancy_grid_ignores_neighbor_order(items in prop::collection::vec((vec2(20.0), prop::collection::vec(-3.0..3.0f64, 2)), 0..12), k in 0usize..12) {
        let spec = GridSpec { rows: 5, cols: 3, cell: (2.0, 4.0), features: 2 };
        let g = occupancy_grid(items.iter().map(|(p, f)| (*p, f.as_slice())), &spec).unwrap();
        let mut rotated = items.clone();
        if !rotated.is_empty() {
            let n = rotated.len();
            rotated.rotate_left(k % n);
        }
        let h = occupancy_grid(rotated.iter().map(|(p, f)| (*p, f.as_slice())), &spec).unwrap();
        for (a, b) in g.data.iter().zip(&h.data) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn full_view_selects_everyone(pts in prop::collection::vec(vec2(1e3), 1..20), heading in -3.0..3.0f64) {
        let ctx: Vec<AgentContext> = pts
            .iter()
            .enumerate()
            .map(|(i, &p)| AgentContext { id: i as u64, class: AgentClass::Car, position: p, velocity: Vec2::ZERO, prev_velocity: Vec2::ZERO, heading })
            .collect();
        let sel = horizon_neighbors(&ctx, &ctx[0], std::f64::consts::TAU, f64::INFINITY);
        prop_assert_eq!(sel.len(), ctx.len() - 1);
    }

    #[test]
    fn metrics_are_consistent_and_rigid(pred in path(12), truth in path(12), angle in -3.2..3.2f64, shift in vec2(1e3)) {
        let d = frame_distances(&pred, &truth).unwrap();
        let a = ade(&pred, &truth).unwrap();
        let f = fde(&pred, &truth).unwrap();
        prop_assert_eq!(f, *d.last().unwrap());
        let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = d.iter().cloned().fold(0.0, f64::max);
        prop_assert!(a >= lo - 1e-12 && a <= hi + 1e-12);
        let mp: Vec<Vec2> = pred.iter().map(|&p| rigid(p, angle, shift)).collect();
        let mt: Vec<Vec2> = truth.iter().map(|&p| rigid(p, angle, shift)).collect();
        prop_assert!((ade(&mp, &mt).unwrap() - a).abs() < 1e-9);
        prop_assert!((fde(&mp, &mt).unwrap() - f).abs() < 1e-9);
        let c0 = rmse_curve(std::slice::from_ref(&pred), std::slice::from_ref(&truth), 2.0, &[1.0, 3.0, 6.0]).unwrap();
        let c1 = rmse_curve(&[mp], &[mt], 2.0, &[1.0, 3.0, 6.0]).unwrap();
        for (x, y) in c0.iter().zip(&c1) {
            prop_assert!((x.1 - y.1).abs() < 1e-9);
        }
    }

    #[test]
    fn rmse_curve_ignores_sample_order(set in prop::collection::vec((path(6), path(6)), 1..8), k in 0usize..8) {
        let (preds, truths): (Vec<_>, Vec<_>) = set.iter().cloned().unzip();
        let n = set.len();
        let mut shuffled = set.clone();
        shuffled.rotate_left(k % n);
        shuffled.reverse();
        let (p2, t2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        let a = rmse_curve(&preds, &truths, 2.0, &[0.5, 1.0, 3.0]).unwrap();
        let b = rmse_curve(&p2, &t2, 2.0, &[0.5, 1.0, 3.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.1 - y.1).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn samples_are_rotation_normalized(angle in -3.2..3.2f64, shift in vec2(500.0), wobble in prop::collection::vec(-0.3..0.3f64, 3)) {
        let cfg = WindowConfig { history_s: 1.0, future_s: 1.0, fps: 10.0, stride: 3, heading_window_s: 0.3, ..WindowConfig::default() };
        let scene: Vec<Vec<(i64, Vec2)>> = (0..3)
            .map(|k| {
                (0..30)
                    .map(|f| {
                        let t = f as f64 / 10.0;
                        let p = Vec2::new(2.0 + k as f64 * 1.5 * t, 4.0 * k as f64 + wobble[k] * t * t);
                        (f, p)
                    })
                    .collect()
            })
            .collect();
        let build = |m: &dyn Fn(Vec2) -> Vec2| {
            let trajs: Vec<Trajectory> = scene
                .iter()
                .enumerate()
                .map(|(k, pts)| Trajectory::new(k as u64 + 1, AgentClass::Car, pts.iter().map(|&(f, p)| (f, m(p))).collect()).unwrap())
                .collect();
            window_samples(&trajs, &ClassTable::default(), &cfg, 0).unwrap()
        };
        let plain = build(&|p| p);
        let moved = build(&|p| rigid(p, angle, shift));
        prop_assert!(!plain.is_empty());
        prop_assert_eq!(plain.len(), moved.len());
        for (a, b) in plain.iter().zip(&moved) {
            prop_assert_eq!(a.history.len(), cfg.history_len());
            prop_assert_eq!(a.future.len(), cfg.future_len());
            for (x, y) in a.history.iter().chain(&a.future).zip(b.history.iter().chain(&b.future)) {
                prop_assert!((*x - *y).norm() < 1e-9, "{x:?} vs {y:?}");
            }
        }
    }
}

fn frames() -> impl Strategy<Value = Vec<Vec<(f64, f64)>>> {
    prop::collection::vec(prop::collection::vec((0.0..60.0f64, 0.0..20.0f64), 0..6), 1..25)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tracker_bookkeeping_holds(frames in frames(), quiet in 1usize..40) {
        use trackpred::tracker::{BBox, Detection, Tracker, TrackerConfig};
        let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
        let mut f = 0i64;
        for dets in &frames {
            let dets: Vec<Detection> = dets
                .iter()
                .map(|&(x, y)| Detection::new(f, BBox::new(x - 1.0, y - 0.5, 2.0, 1.0), AgentClass::Car, 0.9).unwrap())
                .collect();
            tracker.track_frame(f, &dets).unwrap();
            let live = tracker.live_tracks();
            let ids: std::collections::BTreeSet<u64> = live.iter().map(|t| t.id).collect();
            prop_assert_eq!(ids.len(), live.len());
            let updated = live.iter().filter(|t| t.time_since_update == 0).count();
            prop_assert!(updated <= dets.len());
            f += 1;
        }
        let known = tracker.all_tracks().len();
        let mut live = tracker.live_tracks().len();
        for _ in 0..quiet {
            tracker.track_frame(f, &[]).unwrap();
            f += 1;
            prop_assert_eq!(tracker.all_tracks().len(), known);
            prop_assert!(tracker.live_tracks().len() <= live);
            live = tracker.live_tracks().len();
        }
    }
}
