//! Independent Dijkstra oracle for D* Lite on the same 8-connected grid.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use navstack::dstar::{Cell, DStarLite, GridGraph, PlanStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Plain Dijkstra over a boolean occupancy grid with the no-corner-cutting rule.
pub fn dijkstra(blocked: &[Vec<bool>], start: Cell, goal: Cell) -> f64 {
    let (w, h) = (blocked.len(), blocked[0].len());
    let free = |x: isize, y: isize| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && !blocked[x as usize][y as usize];
    if !free(start.0 as isize, start.1 as isize) || !free(goal.0 as isize, goal.1 as isize) {
        return f64::INFINITY;
    }
    #[derive(PartialEq)]
    struct E(f64, Cell);
    impl Eq for E {}
    impl PartialOrd for E {
        fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for E {
        fn cmp(&self, o: &Self) -> Ordering {
            o.0.total_cmp(&self.0)
        }
    }
    let mut dist = vec![vec![f64::INFINITY; h]; w];
    dist[start.0][start.1] = 0.0;
    let mut heap = BinaryHeap::from([E(0.0, start)]);
    while let Some(E(d, (x, y))) = heap.pop() {
        if d > dist[x][y] {
            continue;
        }
        if (x, y) == goal {
            return d;
        }
        for dx in -1isize..=1 {
            for dy in -1isize..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if !free(nx, ny) {
                    continue;
                }
                let step = if dx != 0 && dy != 0 {
                    if !free(nx, y as isize) || !free(x as isize, ny) {
                        continue;
                    }
                    SQRT2
                } else {
                    1.0
                };
                let nd = d + step;
                if nd < dist[nx as usize][ny as usize] {
                    dist[nx as usize][ny as usize] = nd;
                    heap.push(E(nd, (nx as usize, ny as usize)));
                }
            }
        }
    }
    f64::INFINITY
}

pub fn random_map(rng: &mut ChaCha8Rng, n: usize, density: f64, keep: &[Cell]) -> Vec<Vec<bool>> {
    let mut m = vec![vec![false; n]; n];
    for (x, col) in m.iter_mut().enumerate() {
        for (y, cell) in col.iter_mut().enumerate() {
            *cell = !keep.contains(&(x, y)) && rng.random_bool(density);
        }
    }
    m
}

pub fn graph_of(m: &[Vec<bool>]) -> GridGraph {
    let mut g = GridGraph::open(m.len(), m[0].len());
    for (x, col) in m.iter().enumerate() {
        for (y, &b) in col.iter().enumerate() {
            g.set_traversable((x, y), !b);
        }
    }
    g
}

pub fn assert_same_cost(planner: &DStarLite, status: PlanStatus, oracle: f64) {
    if oracle.is_finite() {
        assert_eq!(status, PlanStatus::Found);
        assert!((planner.path_cost() - oracle).abs() < 1e-9, "{} vs {}", planner.path_cost(), oracle);
        let path = planner.extract_path().unwrap();
        let walked: f64 = path.windows(2).map(|w| planner.graph().edge_cost(w[0], w[1])).sum();
        assert!((walked - oracle).abs() < 1e-9);
    } else {
        assert_eq!(status, PlanStatus::Unreachable);
    }
}

/// Mismatches between D* Lite and Dijkstra over `maps` random grids, each
/// followed by `batches` incremental obstacle changes while the start walks
/// along the path. Returns (checks, failures).
pub fn random_incremental_trials(seed: u64, maps: usize, n: usize, density: f64, batches: usize) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checks, mut failures) = (0, 0);
    let mut check = |p: &DStarLite, status: PlanStatus, oracle: f64| {
        checks += 1;
        let ok = if oracle.is_finite() {
            status == PlanStatus::Found && (p.path_cost() - oracle).abs() < 1e-9
        } else {
            status == PlanStatus::Unreachable
        };
        failures += usize::from(!ok);
    };
    for _ in 0..maps {
        let mut start = (rng.random_range(0..n), rng.random_range(0..n));
        let goal = loop {
            let g = (rng.random_range(0..n), rng.random_range(0..n));
            if g != start {
                break g;
            }
        };
        let mut m = random_map(&mut rng, n, density, &[start, goal]);
        let mut p = DStarLite::new(graph_of(&m), start, goal).unwrap();
        let mut status = p.compute_shortest_path();
        check(&p, status, dijkstra(&m, start, goal));
        for _ in 0..batches {
            if status == PlanStatus::Found {
                if let Ok(path) = p.extract_path() {
                    start = path[path.len().min(3) - 1];
                }
            }
            let mut changes = Vec::new();
            for _ in 0..rng.random_range(1..15) {
                let c: Cell = (rng.random_range(0..n), rng.random_range(0..n));
                if c == start || c == goal {
                    continue;
                }
                let blocked = rng.random_bool(0.7);
                m[c.0][c.1] = blocked;
                changes.push((c, !blocked));
            }
            status = p.replan(start, &changes).unwrap();
            let oracle = dijkstra(&m, start, goal);
            check(&p, status, oracle);
            // From scratch on the changed map gives the same answer.
            let mut fresh = DStarLite::new(graph_of(&m), start, goal).unwrap();
            let fresh_status = fresh.compute_shortest_path();
            check(&fresh, fresh_status, oracle);
        }
    }
    (checks, failures)
}
