use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::{EdgeRecord, FeatureSchema, NodeRecord, RoadNetwork};
use crate::model::{TimeContext, TrafficState, SECONDS_PER_DAY};
use crate::nn::{tags, SeedStream};

use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// `rows × cols` lattice with two-way edges between 4-neighbors.
    Grid,
    /// Random points joined by a spanning tree plus the shortest remaining
    /// pairs, every link two-way.
    Geometric,
}

/// Parameters of a synthetic city. Persisted as `world.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub topology: Topology,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Node count for `geometric`.
    pub nodes: usize,
    /// Directed edge count for `geometric`; must be even.
    pub target_edges: usize,
    pub spacing_m: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub slots_per_day: usize,
    /// Speed limits (km/h) by road type.
    pub road_speed_limits_kph: Vec<f64>,
    /// Free-flow speed is the limit times a per-edge draw from this range.
    pub free_flow_range: [f64; 2],
    /// Per-edge rush-hour slowdown depth, drawn from this range.
    pub congestion_depth_range: [f64; 2],
    pub signal_fraction: f64,
    pub signal_delay_s: f64,
    pub plain_delay_s: f64,
    pub drivers: usize,
    /// Standard deviation of the per-driver constant bias (seconds per trip).
    pub bias_spread_s: f64,
    pub trips_per_driver_per_day: usize,
    pub min_route_edges: usize,
    pub max_route_edges: usize,
    /// Relative departure weight of the 07-09 and 17-19 hours (daytime hours
    /// weigh 1, night hours 0.2).
    pub rush_weight: f64,
    /// Observation noise standard deviation, seconds.
    pub noise_sigma_s: f64,
    /// First simulated day, as days since the unix epoch.
    pub start_day: i64,
    pub holidays: Vec<i64>,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            topology: Topology::Grid,
            grid_rows: 4,
            grid_cols: 4,
            nodes: 16,
            target_edges: 48,
            spacing_m: 400.0,
            origin_lat: 30.60,
            origin_lon: 104.00,
            slots_per_day: 48,
            road_speed_limits_kph: vec![60.0, 40.0, 30.0],
            free_flow_range: [0.8, 1.0],
            congestion_depth_range: [0.2, 0.6],
            signal_fraction: 0.4,
            signal_delay_s: 20.0,
            plain_delay_s: 4.0,
            drivers: 10,
            bias_spread_s: 0.0,
            trips_per_driver_per_day: 8,
            min_route_edges: 2,
            max_route_edges: 6,
            rush_weight: 3.0,
            noise_sigma_s: 0.0,
            // 2023-01-02, a Monday
            start_day: 19_359,
            holidays: Vec::new(),
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Spec(m));
        match self.topology {
            Topology::Grid => {
                if self.grid_rows * self.grid_cols < 2 {
                    return bad("grid needs at least two nodes".into());
                }
            }
            Topology::Geometric => {
                let n = self.nodes;
                if n < 2 {
                    return bad("geometric topology needs at least two nodes".into());
                }
                if self.target_edges % 2 != 0 {
                    return bad(format!("target_edges {} must be even (links are two-way)", self.target_edges));
                }
                if self.target_edges < 2 * (n - 1) || self.target_edges > n * (n - 1) {
                    return bad(format!(
                        "target_edges {} outside [{}, {}] for {n} connected nodes",
                        self.target_edges,
                        2 * (n - 1),
                        n * (n - 1)
                    ));
                }
            }
        }
        if self.slots_per_day == 0 {
            return bad("slots_per_day must be >= 1".into());
        }
        if self.road_speed_limits_kph.is_empty() || self.road_speed_limits_kph.iter().any(|s| !(*s > 0.0)) {
            return bad("road speed limits must be positive".into());
        }
        let [lo, hi] = self.free_flow_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad("free_flow_range must satisfy 0 < lo <= hi".into());
        }
        let [lo, hi] = self.congestion_depth_range;
        if !(0.0..1.0).contains(&lo) || !(lo..1.0).contains(&hi) {
            return bad("congestion_depth_range must satisfy 0 <= lo <= hi < 1".into());
        }
        if !(self.noise_sigma_s >= 0.0) || !(self.bias_spread_s >= 0.0) {
            return bad("noise_sigma_s and bias_spread_s must be >= 0".into());
        }
        if self.spacing_m <= 0.0 || self.signal_delay_s < 0.0 || self.plain_delay_s < 0.0 {
            return bad("spacing must be positive and delays non-negative".into());
        }
        if self.min_route_edges == 0 || self.min_route_edges > self.max_route_edges {
            return bad("route length bounds must satisfy 1 <= min <= max".into());
        }
        if !(self.rush_weight > 0.0) {
            return bad("rush_weight must be positive".into());
        }
        Ok(())
    }
}

/// A driver of the synthetic pool; one driver is one federated client.
#[derive(Clone, Debug, PartialEq)]
pub struct Driver {
    pub id: String,
    pub home: usize,
    pub bias_s: f64,
}

/// Ground truth of a synthetic world.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub spec: WorldSpec,
    pub network: RoadNetwork,
    /// Hidden seconds per edge, indexed `[slot][edge]`.
    pub edge_times: Vec<Vec<f64>>,
    /// Hidden seconds per node (slot-independent).
    pub node_times: Vec<f64>,
    pub drivers: Vec<Driver>,
}

impl World {
    /// Hidden traffic state at `ctx`'s slot.
    pub fn hidden_state(&self, ctx: TimeContext) -> TrafficState {
        TrafficState {
            ctx,
            y_edges: self.edge_times[ctx.slot].clone(),
            y_nodes: self.node_times.clone(),
        }
    }

    /// Hidden state for every slot on a Monday without holiday.
    pub fn hidden_states(&self) -> Vec<TrafficState> {
        (0..self.spec.slots_per_day)
            .map(|slot| {
                self.hidden_state(TimeContext {
                    day_of_week: 0,
                    slot,
                    is_holiday: false,
                })
            })
            .collect()
    }

    pub fn day_start(&self, day: usize) -> i64 {
        (self.spec.start_day + day as i64) * SECONDS_PER_DAY
    }
}

/// Seconds to cover `length_m` at `speed_kph` scaled by `multiplier`.
pub fn hidden_edge_time(length_m: f64, speed_kph: f64, multiplier: f64) -> f64 {
    length_m / (speed_kph / 3.6 * multiplier)
}

/// Two-peak daily speed multiplier: dips around 08:00 and 18:00.
pub fn congestion_multiplier(hour: f64, depth: f64) -> f64 {
    let bump = |center: f64, width: f64| (-((hour - center) / width).powi(2)).exp();
    (1.0 - depth * (bump(8.0, 1.0) + bump(18.0, 1.2))).max(0.1)
}

struct Link {
    a: usize,
    b: usize,
    length_m: f64,
}

pub fn generate_world(spec: &WorldSpec) -> Result<World, DataError> {
    spec.validate()?;
    let root = SeedStream::new(spec.seed).child(&[tags::WORLD]);
    let mut rng = root.rng(&[0]);
    let m_per_deg_lat = 111_320.0;
    let m_per_deg_lon = m_per_deg_lat * spec.origin_lat.to_radians().cos();

    let (coords, links) = match spec.topology {
        Topology::Grid => grid_layout(spec, &mut rng),
        Topology::Geometric => geometric_layout(spec, &mut rng),
    };
    let n = coords.len();
    let mut degree = vec![0usize; n];
    for l in &links {
        degree[l.a] += 1;
        degree[l.b] += 1;
    }
    let signal: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < spec.signal_fraction).collect();
    let nodes: Vec<NodeRecord> = coords
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| NodeRecord {
            id: i.to_string(),
            categorical: vec![usize::from(degree[i] >= 4), usize::from(signal[i]), usize::from(rng.random::<f64>() < 0.5)],
            numeric: vec![spec.origin_lat + y / m_per_deg_lat, spec.origin_lon + x / m_per_deg_lon],
        })
        .collect();

    let road_types = spec.road_speed_limits_kph.len();
    let mut edges = Vec::with_capacity(links.len() * 2);
    let mut free_flow = Vec::new();
    let mut depth = Vec::new();
    for l in &links {
        let road_type = rng.random_range(0..road_types);
        let limit = spec.road_speed_limits_kph[road_type];
        let lanes = (road_types - road_type) as f64;
        let bridge = usize::from(rng.random::<f64>() < 0.05);
        let tunnel = usize::from(bridge == 0 && rng.random::<f64>() < 0.03);
        for (from, to) in [(l.a, l.b), (l.b, l.a)] {
            let k = edges.len();
            edges.push(EdgeRecord {
                id: k.to_string(),
                from,
                to,
                categorical: vec![road_type, bridge, tunnel],
                numeric: vec![l.length_m.round(), limit, lanes, lanes * 3.5],
            });
            let [lo, hi] = spec.free_flow_range;
            free_flow.push(limit * draw(&mut rng, lo, hi));
            let [lo, hi] = spec.congestion_depth_range;
            depth.push(draw(&mut rng, lo, hi));
        }
    }
    let network = RoadNetwork::new(FeatureSchema::standard(2, road_types), nodes, edges)?;

    let k = spec.slots_per_day;
    let edge_times = (0..k)
        .map(|s| {
            let hour = (s as f64 + 0.5) * 24.0 / k as f64;
            network
                .edges()
                .iter()
                .enumerate()
                .map(|(e, rec)| hidden_edge_time(rec.length_m(), free_flow[e], congestion_multiplier(hour, depth[e])))
                .collect()
        })
        .collect();
    let node_times = signal
        .iter()
        .map(|&s| if s { spec.signal_delay_s } else { spec.plain_delay_s })
        .collect();

    let bias = Normal::new(0.0, spec.bias_spread_s).map_err(|e| DataError::Spec(e.to_string()))?;
    let mut drng = root.rng(&[1]);
    let drivers = (0..spec.drivers)
        .map(|d| Driver {
            id: format!("d{d:03}"),
            home: drng.random_range(0..n),
            bias_s: bias.sample(&mut drng),
        })
        .collect();

    Ok(World {
        spec: spec.clone(),
        network,
        edge_times,
        node_times,
        drivers,
    })
}

fn draw<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn grid_layout<R: Rng + ?Sized>(spec: &WorldSpec, rng: &mut R) -> (Vec<(f64, f64)>, Vec<Link>) {
    let (rows, cols) = (spec.grid_rows, spec.grid_cols);
    let coords = (0..rows * cols)
        .map(|i| ((i % cols) as f64 * spec.spacing_m, (i / cols) as f64 * spec.spacing_m))
        .collect();
    let mut links = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let a = r * cols + c;
            // roads are a bit longer than the straight-line spacing
            if c + 1 < cols {
                links.push(Link {
                    a,
                    b: a + 1,
                    length_m: spec.spacing_m * rng.random_range(1.0..1.3),
                });
            }
            if r + 1 < rows {
                links.push(Link {
                    a,
                    b: a + cols,
                    length_m: spec.spacing_m * rng.random_range(1.0..1.3),
                });
            }
        }
    }
    (coords, links)
}

fn geometric_layout<R: Rng + ?Sized>(spec: &WorldSpec, rng: &mut R) -> (Vec<(f64, f64)>, Vec<Link>) {
    let n = spec.nodes;
    let side = (n as f64).sqrt() * spec.spacing_m;
    let coords: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.0..side), rng.random_range(0.0..side))).collect();
    let dist = |a: usize, b: usize| {
        let (p, q) = (coords[a], coords[b]);
        ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt().max(1.0)
    };
    // Prim's spanning tree keeps every node reachable
    let mut in_tree = vec![false; n];
    let mut best = vec![(f64::INFINITY, 0usize); n];
    let mut chosen = vec![vec![false; n]; n];
    in_tree[0] = true;
    for j in 1..n {
        best[j] = (dist(0, j), 0);
    }
    let mut pairs = Vec::new();
    for _ in 1..n {
        let j = (0..n)
            .filter(|&j| !in_tree[j])
            .min_by(|&a, &b| best[a].0.total_cmp(&best[b].0).then(a.cmp(&b)))
            .expect("nodes remain");
        in_tree[j] = true;
        pairs.push((best[j].1, j));
        for k in 0..n {
            if !in_tree[k] && dist(j, k) < best[k].0 {
                best[k] = (dist(j, k), j);
            }
        }
    }
    for &(a, b) in &pairs {
        chosen[a][b] = true;
        chosen[b][a] = true;
    }
    let mut rest: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|&(a, b)| !chosen[a][b])
        .collect();
    rest.sort_by(|&(a, b), &(c, d)| dist(a, b).total_cmp(&dist(c, d)).then((a, b).cmp(&(c, d))));
    pairs.extend(rest.into_iter().take(spec.target_edges / 2 - (n - 1)));
    let links = pairs
        .into_iter()
        .map(|(a, b)| Link {
            a: a.min(b),
            b: a.max(b),
            length_m: dist(a, b) * rng.random_range(1.0..1.3),
        })
        .collect();
    (coords, links)
}
