//! Seeded synthetic worlds: a grid road network, SD pairs with weighted
//! normal routes, and trajectories with injected detours whose ground-truth
//! labels are known exactly.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet, VecDeque};

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::roadnet::{RoadNetwork, SegmentId, Vertex};
use crate::trajio::{Label, Trajectory, SECONDS_PER_DAY};

/// First midnight used for generated start times.
const EPOCH_DAY: i64 = 1_600_000_000 - 1_600_000_000 % SECONDS_PER_DAY;
const PAIR_ATTEMPTS: usize = 100;
const SPLICE_TRIES: usize = 30;
const WAYPOINT_TRIES: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub pairs: usize,
    /// Trajectories per SD pair and time slot.
    pub trajs_per_group: usize,
    /// Weights of the normal routes of every pair (1 to 3 entries).
    pub route_weights: Vec<f64>,
    pub anomaly_ratio: f64,
    /// Inclusive range of detour lengths, in segments.
    pub detour_len: (usize, usize),
    /// Time slots each pair is observed in.
    pub slots_used: usize,
    pub slots_per_day: usize,
    pub days: usize,
    /// Grid edges replaced by one-way chains with merge and diverge vertices.
    pub corridors: usize,
    /// Minimum grid distance between a pair's endpoints.
    pub min_pair_distance: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 16,
            height: 16,
            pairs: 50,
            trajs_per_group: 30,
            route_weights: vec![1.0],
            anomaly_ratio: 0.02,
            detour_len: (6, 14),
            slots_used: 2,
            slots_per_day: 24,
            days: 30,
            corridors: 0,
            min_pair_distance: 10,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width < 3 || self.height < 3 {
            return bad(format!("grid {}x{} is too small", self.width, self.height));
        }
        if self.pairs == 0 || self.trajs_per_group == 0 {
            return bad("pairs and trajs_per_group must be positive".into());
        }
        if !(1..=3).contains(&self.route_weights.len())
            || self.route_weights.iter().any(|&w| w.is_nan() || w <= 0.0)
            || (self.route_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "route_weights must be 1 to 3 positive weights summing to 1, got {:?}",
                self.route_weights
            ));
        }
        if !(0.0..=1.0).contains(&self.anomaly_ratio) {
            return bad(format!(
                "anomaly_ratio must lie in [0,1], got {}",
                self.anomaly_ratio
            ));
        }
        let (lo, hi) = self.detour_len;
        if lo < 2 || lo > hi {
            return bad(format!(
                "detour_len must satisfy 2 <= lo <= hi, got ({lo}, {hi})"
            ));
        }
        if self.slots_per_day == 0 || 24 % self.slots_per_day != 0 {
            return bad(format!(
                "slots_per_day must divide 24, got {}",
                self.slots_per_day
            ));
        }
        if self.slots_used == 0 || self.slots_used > self.slots_per_day {
            return bad(format!(
                "slots_used must lie in 1..={}, got {}",
                self.slots_per_day, self.slots_used
            ));
        }
        if self.days == 0 {
            return bad("days must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRecord {
    pub weight: f64,
    pub segments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetourRecord {
    pub traj: String,
    pub route: usize,
    /// Positions of the first and last detour segment in the trajectory.
    pub start_idx: usize,
    pub end_idx: usize,
    pub segments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub index: usize,
    pub source: String,
    pub destination: String,
    pub slots: Vec<usize>,
    pub attempts: usize,
    pub routes: Vec<RouteRecord>,
    pub detours: Vec<DetourRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SynthConfig,
    pub pairs: Vec<PairRecord>,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub net: RoadNetwork,
    pub trajectories: Vec<Trajectory>,
    pub manifest: Manifest,
}

/// Two consecutive partitions of the same pairs with the dominant route and
/// the detour route exchanged.
#[derive(Debug, Clone)]
pub struct DriftWorld {
    pub net: RoadNetwork,
    pub part1: Vec<Trajectory>,
    pub part2: Vec<Trajectory>,
    pub manifest: Manifest,
}

#[derive(Debug, Clone, PartialEq)]
struct Route {
    vertices: Vec<usize>,
    segments: Vec<SegmentId>,
}

impl Route {
    /// Replaces the vertices strictly between positions `i` and `j` with
    /// `detour` (a path from `vertices[i]` to `vertices[j]`).
    fn splice(&self, i: usize, j: usize, detour: &Route) -> Route {
        let mut vertices = self.vertices[..i].to_vec();
        vertices.extend(&detour.vertices);
        vertices.extend(&self.vertices[j + 1..]);
        let mut segments = self.segments[..i].to_vec();
        segments.extend(&detour.segments);
        segments.extend(&self.segments[j..]);
        Route { vertices, segments }
    }
}

struct Grid {
    net: RoadNetwork,
    // (x, y) of every vertex, for distance checks
    coords: Vec<(i64, i64)>,
}

fn build_grid(cfg: &SynthConfig) -> Result<Grid> {
    let mut r = rng::substream(cfg.seed, "net");
    let (w, h) = (cfg.width, cfg.height);
    let mut vertices = Vec::new();
    let mut coords = Vec::new();
    for y in 0..h {
        for x in 0..w {
            vertices.push(Vertex {
                id: format!("v{x}_{y}"),
                x: x as f64,
                y: y as f64,
            });
            coords.push((x as i64, y as i64));
        }
    }
    let mut edges = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let a = y * w + x;
            if x + 1 < w {
                edges.push((a, a + 1));
            }
            if y + 1 < h {
                edges.push((a, a + w));
            }
        }
    }
    let corridor: HashSet<usize> =
        index::sample(&mut r, edges.len(), cfg.corridors.min(edges.len()))
            .into_iter()
            .collect();

    let mut segs: Vec<(usize, usize)> = Vec::new();
    for (k, &(a, b)) in edges.iter().enumerate() {
        if !corridor.contains(&k) {
            segs.push((a, b));
            segs.push((b, a));
            continue;
        }
        // one-way chain a -> m1 -> m2 -> m3 -> b with the shortcuts a -> m2
        // and m1 -> b: m1 diverges, m2 merges, m3 is a plain link
        let (ax, ay) = coords[a];
        let (bx, by) = coords[b];
        let base = vertices.len();
        for t in 1..=3 {
            let f = t as f64 / 4.0;
            vertices.push(Vertex {
                id: format!("c{k}_{t}"),
                x: ax as f64 + f * (bx - ax) as f64,
                y: ay as f64 + f * (by - ay) as f64,
            });
            coords.push((ax, ay));
        }
        let (m1, m2, m3) = (base, base + 1, base + 2);
        segs.extend([
            (a, m1),
            (m1, m2),
            (a, m2),
            (m2, m3),
            (m3, b),
            (m1, b),
            (b, a),
        ]);
    }

    let records: Vec<(String, String, String, f64)> = segs
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let (va, vb) = (&vertices[a], &vertices[b]);
            let len = ((va.x - vb.x).powi(2) + (va.y - vb.y).powi(2)).sqrt() * 100.0;
            (format!("s{i}"), va.id.clone(), vb.id.clone(), len)
        })
        .collect();
    let net = RoadNetwork::from_records(vertices, records)?;
    Ok(Grid { net, coords })
}

impl Grid {
    fn to(&self, e: SegmentId) -> usize {
        self.net.segment(e).expect("generated segment").to
    }

    fn from(&self, e: SegmentId) -> usize {
        self.net.segment(e).expect("generated segment").from
    }

    fn manhattan(&self, a: usize, b: usize) -> usize {
        let (p, q) = (self.coords[a], self.coords[b]);
        ((p.0 - q.0).abs() + (p.1 - q.1).abs()) as usize
    }

    /// Cheapest path from `src` to `dst` under random segment costs, never
    /// entering `blocked`.
    fn random_path(
        &self,
        src: usize,
        dst: usize,
        blocked: &HashSet<usize>,
        r: &mut Rng,
    ) -> Option<Route> {
        let cost: Vec<u32> = (0..self.net.num_segments())
            .map(|_| r.gen_range(1..=4))
            .collect();
        let n = self.net.num_vertices();
        let mut dist = vec![u32::MAX; n];
        let mut parent: Vec<Option<SegmentId>> = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[src] = 0;
        heap.push(Reverse((0u32, src)));
        while let Some(Reverse((d, v))) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            if v == dst {
                break;
            }
            for &e in self.net.outgoing(v) {
                let u = self.to(e);
                if blocked.contains(&u) {
                    continue;
                }
                let nd = d + cost[e.index()];
                if nd < dist[u] {
                    dist[u] = nd;
                    parent[u] = Some(e);
                    heap.push(Reverse((nd, u)));
                }
            }
        }
        if dist[dst] == u32::MAX {
            return None;
        }
        Some(self.trace(src, dst, &parent))
    }

    fn trace(&self, src: usize, dst: usize, parent: &[Option<SegmentId>]) -> Route {
        let mut segments = Vec::new();
        let mut v = dst;
        while v != src {
            let e = parent[v].expect("reached vertex has a parent");
            segments.push(e);
            v = self.from(e);
        }
        segments.reverse();
        let mut vertices = vec![src];
        vertices.extend(segments.iter().map(|&e| self.to(e)));
        Route { vertices, segments }
    }

    /// Breadth-first search from `src` over vertices not in `blocked`.
    fn bfs(&self, src: usize, blocked: &HashSet<usize>) -> (Vec<usize>, Vec<Option<SegmentId>>) {
        let n = self.net.num_vertices();
        let mut dist = vec![usize::MAX; n];
        let mut parent = vec![None; n];
        let mut q = VecDeque::from([src]);
        dist[src] = 0;
        while let Some(v) = q.pop_front() {
            for &e in self.net.outgoing(v) {
                let u = self.to(e);
                if dist[u] == usize::MAX && !blocked.contains(&u) {
                    dist[u] = dist[v] + 1;
                    parent[u] = Some(e);
                    q.push_back(u);
                }
            }
        }
        (dist, parent)
    }

    /// A simple path from `u` to `v` of length within `len` that touches no
    /// vertex of `forbidden` other than its endpoints.
    fn detour(
        &self,
        u: usize,
        v: usize,
        forbidden: &HashSet<usize>,
        len: (usize, usize),
        r: &mut Rng,
    ) -> Option<Route> {
        let mut blocked: HashSet<usize> = forbidden.iter().copied().filter(|&x| x != u).collect();
        blocked.insert(v);
        let (dist, parent) = self.bfs(u, &blocked);
        let candidates: Vec<usize> = (0..dist.len())
            .filter(|&w| dist[w] >= 1 && dist[w] < len.1)
            .collect();
        for _ in 0..WAYPOINT_TRIES {
            let &w = candidates.choose(r)?;
            let first = self.trace(u, w, &parent);
            let mut blocked2: HashSet<usize> =
                forbidden.iter().copied().filter(|&x| x != v).collect();
            blocked2.extend(first.vertices.iter().copied().filter(|&x| x != w));
            let (d2, p2) = self.bfs(w, &blocked2);
            if d2[v] == usize::MAX {
                continue;
            }
            let total = first.segments.len() + d2[v];
            if total < len.0 || total > len.1 {
                continue;
            }
            let second = self.trace(w, v, &p2);
            let mut vertices = first.vertices;
            vertices.extend(&second.vertices[1..]);
            let mut segments = first.segments;
            segments.extend(second.segments);
            return Some(Route { vertices, segments });
        }
        None
    }

    /// Splices a random detour into `route`, keeping its first and last
    /// segment. Returns the new route and the detour's segment positions.
    fn splice_detour(
        &self,
        route: &Route,
        forbidden: &HashSet<usize>,
        len: (usize, usize),
        r: &mut Rng,
    ) -> Option<(Route, usize, usize)> {
        let m = route.vertices.len() - 1;
        if m < 3 {
            return None;
        }
        for _ in 0..SPLICE_TRIES {
            let i = r.gen_range(1..m - 1);
            let j = r.gen_range(i + 1..m);
            if let Some(d) = self.detour(route.vertices[i], route.vertices[j], forbidden, len, r) {
                let k = d.segments.len();
                return Some((route.splice(i, j, &d), i, i + k - 1));
            }
        }
        None
    }
}

struct PairPlan {
    routes: Vec<Route>,
    slots: Vec<usize>,
}

fn vertex_set(routes: &[Route]) -> HashSet<usize> {
    routes
        .iter()
        .flat_map(|r| r.vertices.iter().copied())
        .collect()
}

/// Endpoints plus `count` normal routes, all after the first derived as
/// detours of the first.
fn plan_pair(
    grid: &Grid,
    cfg: &SynthConfig,
    count: usize,
    taken: &HashSet<(SegmentId, SegmentId)>,
    r: &mut Rng,
) -> Option<PairPlan> {
    let n = grid.net.num_segments() as u32;
    let src = SegmentId(r.gen_range(0..n));
    let dst = SegmentId(r.gen_range(0..n));
    let (s0, s1) = (grid.from(src), grid.to(src));
    let (t1, t0) = (grid.from(dst), grid.to(dst));
    let ends: HashSet<usize> = [s0, s1, t1, t0].into_iter().collect();
    if ends.len() < 4
        || grid.manhattan(s1, t1) < cfg.min_pair_distance
        || taken.contains(&(src, dst))
    {
        return None;
    }
    let blocked: HashSet<usize> = [s0, t0].into_iter().collect();
    let mid = grid.random_path(s1, t1, &blocked, r)?;
    let mut vertices = vec![s0];
    vertices.extend(&mid.vertices);
    vertices.push(t0);
    let mut segments = vec![src];
    segments.extend(&mid.segments);
    segments.push(dst);
    let mut routes = vec![Route { vertices, segments }];
    while routes.len() < count {
        let forbidden = vertex_set(&routes);
        let (alt, _, _) = grid.splice_detour(&routes[0], &forbidden, cfg.detour_len, r)?;
        routes.push(alt);
    }
    let slots = index::sample(r, cfg.slots_per_day, cfg.slots_used).into_vec();
    Some(PairPlan { routes, slots })
}

/// Counts per route summing to `n`, by largest remainder.
fn quotas(weights: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut q: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
        fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
    });
    let mut left = n - q.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        q[i] += 1;
        left -= 1;
    }
    q
}

fn start_time(cfg: &SynthConfig, day: usize, slot: usize, r: &mut Rng) -> i64 {
    let width = SECONDS_PER_DAY / cfg.slots_per_day as i64;
    EPOCH_DAY + day as i64 * SECONDS_PER_DAY + slot as i64 * width + r.gen_range(0..width)
}

fn names(net: &RoadNetwork, segs: &[SegmentId]) -> Vec<String> {
    segs.iter()
        .map(|&s| net.segment_name(s).expect("generated segment").to_string())
        .collect()
}

fn route_records(net: &RoadNetwork, routes: &[Route], weights: &[f64]) -> Vec<RouteRecord> {
    routes
        .iter()
        .zip(weights)
        .map(|(r, &weight)| RouteRecord {
            weight,
            segments: names(net, &r.segments),
        })
        .collect()
}

/// Anomalous trajectories per (pair, slot) group, spread at random under a
/// per-group cap so no detour becomes frequent.
fn allocate_anomalies(cfg: &SynthConfig) -> Vec<Vec<usize>> {
    let groups = cfg.pairs * cfg.slots_used;
    let n = cfg.trajs_per_group;
    let total = (cfg.anomaly_ratio * (groups * n) as f64).round() as usize;
    let cap = (((cfg.anomaly_ratio + 0.05) * n as f64).floor() as usize).clamp(1, n);
    let mut counts = vec![0usize; groups];
    let mut r = rng::substream(cfg.seed, "anomalies");
    for _ in 0..total.min(groups * cap) {
        let open: Vec<usize> = (0..groups).filter(|&g| counts[g] < cap).collect();
        counts[*open.choose(&mut r).expect("capacity remains")] += 1;
    }
    counts
        .chunks(cfg.slots_used)
        .map(<[usize]>::to_vec)
        .collect()
}

struct PairOutput {
    record: PairRecord,
    trajectories: Vec<Trajectory>,
}

fn generate_pair(
    grid: &Grid,
    cfg: &SynthConfig,
    p: usize,
    anomalies: &[usize],
    taken: &HashSet<(SegmentId, SegmentId)>,
) -> Result<PairOutput> {
    for attempt in 0..PAIR_ATTEMPTS {
        let mut r = rng::substream(cfg.seed, &format!("pair/{p}/{attempt}"));
        let Some(plan) = plan_pair(grid, cfg, cfg.route_weights.len(), taken, &mut r) else {
            log::debug!("pair {p}: endpoints rejected on attempt {attempt}");
            continue;
        };
        match fill_pair(grid, cfg, p, &plan, anomalies, &mut r) {
            Some((trajectories, detours)) => {
                let first = &plan.routes[0].segments;
                return Ok(PairOutput {
                    record: PairRecord {
                        index: p,
                        source: names(&grid.net, &first[..1]).remove(0),
                        destination: names(&grid.net, &first[first.len() - 1..]).remove(0),
                        slots: plan.slots.clone(),
                        attempts: attempt + 1,
                        routes: route_records(&grid.net, &plan.routes, &cfg.route_weights),
                        detours,
                    },
                    trajectories,
                });
            }
            None => log::warn!("pair {p}: no detour available, regenerating (attempt {attempt})"),
        }
    }
    Err(Error::Config(format!(
        "pair {p}: could not place routes and detours after {PAIR_ATTEMPTS} attempts; grid too small?"
    )))
}

fn fill_pair(
    grid: &Grid,
    cfg: &SynthConfig,
    p: usize,
    plan: &PairPlan,
    anomalies: &[usize],
    r: &mut Rng,
) -> Option<(Vec<Trajectory>, Vec<DetourRecord>)> {
    let n = cfg.trajs_per_group;
    let forbidden = vertex_set(&plan.routes);
    let mut trajectories = Vec::new();
    let mut detours = Vec::new();
    for (slot_i, &slot) in plan.slots.iter().enumerate() {
        let mut assign: Vec<usize> = quotas(&cfg.route_weights, n)
            .into_iter()
            .enumerate()
            .flat_map(|(ri, q)| std::iter::repeat_n(ri, q))
            .collect();
        assign.shuffle(r);
        let anomalous: HashSet<usize> =
            index::sample(r, n, anomalies[slot_i]).into_iter().collect();
        for (k, &ri) in assign.iter().enumerate() {
            let id = format!("p{p:03}-s{slot:02}-{k:03}");
            let base = &plan.routes[ri];
            let (segments, labels) = if anomalous.contains(&k) {
                let (route, a, b) = grid.splice_detour(base, &forbidden, cfg.detour_len, r)?;
                let mut labels = vec![0; route.segments.len()];
                labels[a..=b].fill(1);
                detours.push(DetourRecord {
                    traj: id.clone(),
                    route: ri,
                    start_idx: a,
                    end_idx: b,
                    segments: names(&grid.net, &route.segments[a..=b]),
                });
                (route.segments, labels)
            } else {
                (base.segments.clone(), vec![0; base.segments.len()])
            };
            let day = r.gen_range(0..cfg.days);
            trajectories.push(Trajectory {
                id,
                start: start_time(cfg, day, slot, r),
                segments,
                labels: Some(labels),
            });
        }
    }
    Some((trajectories, detours))
}

/// Generates a world under `cfg`. Identical configs give identical worlds.
pub fn generate(cfg: &SynthConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let grid = build_grid(cfg)?;
    let anomalies = allocate_anomalies(cfg);
    let mut taken = HashSet::new();
    let mut pairs = Vec::new();
    let mut trajectories = Vec::new();
    for (p, quota) in anomalies.iter().enumerate().take(cfg.pairs) {
        let out = generate_pair(&grid, cfg, p, quota, &taken)?;
        let first = &out.trajectories[0].segments;
        taken.insert((first[0], *first.last().expect("non-empty")));
        pairs.push(out.record);
        trajectories.extend(out.trajectories);
    }
    Ok(SynthWorld {
        net: grid.net,
        trajectories,
        manifest: Manifest {
            config: cfg.clone(),
            pairs,
        },
    })
}

/// Ground truth of a trajectory on `route` measured against `normal`: 1 on
/// the segments `normal` does not use. Both routes share their ends.
fn distinct_labels(route: &Route, normal: &Route) -> Vec<Label> {
    let used: HashSet<SegmentId> = normal.segments.iter().copied().collect();
    route
        .segments
        .iter()
        .map(|s| Label::from(!used.contains(s)))
        .collect()
}

/// Two partitions over the same pairs. In the first, trajectories follow
/// route A and the anomalous share (`anomaly_ratio`, at least one per group)
/// takes route B; in the second the roles are exchanged. Both partitions
/// draw the same random choices, and every start time of the second is
/// later than every start time of the first.
pub fn drift_scenario(cfg: &SynthConfig) -> Result<DriftWorld> {
    cfg.validate()?;
    if cfg.route_weights.len() < 2 {
        return Err(Error::Config(
            "drift scenario needs at least two routes per pair".into(),
        ));
    }
    let grid = build_grid(cfg)?;
    let n = cfg.trajs_per_group;
    let per_group = if cfg.anomaly_ratio > 0.0 {
        ((cfg.anomaly_ratio * n as f64).round() as usize).clamp(1, n)
    } else {
        0
    };
    let half = (cfg.days / 2).max(1);
    let mut taken = HashSet::new();
    let (mut part1, mut part2, mut pairs) = (Vec::new(), Vec::new(), Vec::new());
    for p in 0..cfg.pairs {
        let mut plan = None;
        for attempt in 0..PAIR_ATTEMPTS {
            let mut r = rng::substream(cfg.seed, &format!("drift/{p}/{attempt}"));
            if let Some(pl) = plan_pair(&grid, cfg, 2, &taken, &mut r) {
                plan = Some((pl, r, attempt));
                break;
            }
        }
        let (plan, mut r, attempt) = plan.ok_or_else(|| {
            Error::Config(format!(
                "pair {p}: could not place two routes; grid too small?"
            ))
        })?;
        let (a, b) = (&plan.routes[0], &plan.routes[1]);
        taken.insert((a.segments[0], *a.segments.last().expect("non-empty")));
        let labels_b = distinct_labels(b, a);
        let labels_a = distinct_labels(a, b);
        let mut detours = Vec::new();
        for &slot in &plan.slots {
            let anomalous: HashSet<usize> =
                index::sample(&mut r, n, per_group).into_iter().collect();
            for k in 0..n {
                let day = r.gen_range(0..half);
                let start = start_time(cfg, day, slot, &mut r);
                let odd = anomalous.contains(&k);
                for (part, tag, normal, rare, rare_labels, route_idx) in [
                    (&mut part1, 1, a, b, &labels_b, 1usize),
                    (&mut part2, 2, b, a, &labels_a, 0usize),
                ] {
                    let id = format!("d{tag}-p{p:03}-s{slot:02}-{k:03}");
                    let (route, labels) = if odd {
                        let first = rare_labels.iter().position(|&l| l == 1).unwrap_or(0);
                        let last = rare_labels.iter().rposition(|&l| l == 1).unwrap_or(0);
                        if tag == 1 {
                            detours.push(DetourRecord {
                                traj: id.clone(),
                                route: route_idx,
                                start_idx: first,
                                end_idx: last,
                                segments: names(&grid.net, &rare.segments[first..=last]),
                            });
                        }
                        (rare, rare_labels.clone())
                    } else {
                        (normal, vec![0; normal.segments.len()])
                    };
                    let shift = if tag == 2 {
                        half as i64 * SECONDS_PER_DAY
                    } else {
                        0
                    };
                    part.push(Trajectory {
                        id,
                        start: start + shift,
                        segments: route.segments.clone(),
                        labels: Some(labels),
                    });
                }
            }
        }
        pairs.push(PairRecord {
            index: p,
            source: names(&grid.net, &a.segments[..1]).remove(0),
            destination: names(&grid.net, &a.segments[a.segments.len() - 1..]).remove(0),
            slots: plan.slots.clone(),
            attempts: attempt + 1,
            routes: route_records(&grid.net, &plan.routes, &[1.0, 1.0]),
            detours,
        });
    }
    Ok(DriftWorld {
        net: grid.net,
        part1,
        part2,
        manifest: Manifest {
            config: cfg.clone(),
            pairs,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            width: 10,
            height: 10,
            pairs: 6,
            trajs_per_group: 30,
            min_pair_distance: 6,
            detour_len: (3, 10),
            ..SynthConfig::default()
        }
    }

    #[test]
    fn quotas_sum_and_round() {
        assert_eq!(quotas(&[1.0], 7), vec![7]);
        assert_eq!(quotas(&[0.55, 0.45], 30), vec![17, 13]);
        assert_eq!(quotas(&[0.5, 0.3, 0.2], 10), vec![5, 3, 2]);
    }

    #[test]
    fn trajectories_are_valid_and_labels_consistent() {
        let w = generate(&SynthConfig {
            corridors: 8,
            anomaly_ratio: 0.05,
            ..small()
        })
        .unwrap();
        assert_eq!(w.trajectories.len(), 6 * 2 * 30);
        for t in &w.trajectories {
            t.validate(&w.net).unwrap();
            let l = t.labels.as_ref().unwrap();
            assert_eq!((l[0], l[l.len() - 1]), (0, 0));
        }
        assert!(w
            .trajectories
            .iter()
            .any(|t| t.labels.as_ref().unwrap().contains(&1)));
    }

    #[test]
    fn zero_ratio_gives_no_anomalies() {
        let w = generate(&SynthConfig {
            anomaly_ratio: 0.0,
            ..small()
        })
        .unwrap();
        assert!(w
            .trajectories
            .iter()
            .all(|t| t.labels.as_ref().unwrap().iter().all(|&l| l == 0)));
    }

    #[test]
    fn same_seed_same_world() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.trajectories, b.trajectories);
        assert_eq!(a.manifest, b.manifest);
    }

    #[test]
    fn drift_partitions_swap_roles() {
        let cfg = SynthConfig {
            route_weights: vec![0.5, 0.5],
            anomaly_ratio: 0.1,
            ..small()
        };
        let d = drift_scenario(&cfg).unwrap();
        assert_eq!(d.part1.len(), d.part2.len());
        let last1 = d.part1.iter().map(|t| t.start).max().unwrap();
        let first2 = d.part2.iter().map(|t| t.start).min().unwrap();
        assert!(last1 < first2);
        for (t1, t2) in d.part1.iter().zip(&d.part2) {
            let (l1, l2) = (t1.labels.as_ref().unwrap(), t2.labels.as_ref().unwrap());
            // a normal trip of one partition is the anomalous trip of the other
            assert_eq!(l1.contains(&1), l2.contains(&1));
            if !l1.contains(&1) {
                assert_ne!(t1.segments, t2.segments);
            }
            t1.validate(&d.net).unwrap();
            t2.validate(&d.net).unwrap();
        }
    }
}
