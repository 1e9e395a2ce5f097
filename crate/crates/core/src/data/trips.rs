use std::io::{Read, Write};

use chrono::{DateTime, SecondsFormat};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::{validate_route, RoadNetwork, Route, Step};
use crate::model::SECONDS_PER_DAY;
use crate::nn::{tags, SeedStream};

use super::{DataError, World};

/// One observed trip: the route (with departure and driver) and the
/// observed travel time in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub route: Route,
    pub travel_time_s: f64,
}

impl TrajectoryRecord {
    pub fn driver_id(&self) -> &str {
        &self.route.driver_id
    }

    pub fn departure(&self) -> i64 {
        self.route.departure
    }
}

/// Departure weight of each hour of the day.
pub fn hour_weights(rush_weight: f64) -> [f64; 24] {
    let mut w = [0.0; 24];
    for (h, v) in w.iter_mut().enumerate() {
        *v = match h {
            7 | 8 | 17 | 18 => rush_weight,
            6..=22 => 1.0,
            _ => 0.2,
        };
    }
    w
}

const MAX_NOISE_REDRAWS: usize = 32;

/// Trips of every driver on simulated day `day` (0-based), sorted by
/// departure then driver.
pub fn sample_trajectories(world: &World, day: usize) -> Vec<TrajectoryRecord> {
    let spec = &world.spec;
    let net = &world.network;
    let weights = hour_weights(spec.rush_weight);
    let total: f64 = weights.iter().sum();
    let day_start = world.day_start(day);
    let noise = Normal::new(0.0, spec.noise_sigma_s).expect("sigma validated");
    let root = SeedStream::new(spec.seed).child(&[tags::TRIPS]);
    let mut out = Vec::new();
    for (d, driver) in world.drivers.iter().enumerate() {
        let mut rng = root.rng(&[day as u64, d as u64]);
        let mut departures: Vec<i64> = (0..spec.trips_per_driver_per_day)
            .map(|_| {
                let mut u = rng.random::<f64>() * total;
                let mut hour = 23;
                for (h, w) in weights.iter().enumerate() {
                    if u < *w {
                        hour = h;
                        break;
                    }
                    u -= w;
                }
                hour as i64 * 3600 + rng.random_range(0..3600)
            })
            .collect();
        departures.sort_unstable();
        let mut at = driver.home;
        for secs in departures {
            let len = rng.random_range(spec.min_route_edges..=spec.max_route_edges);
            let edges = random_walk(net, at, len, &mut rng);
            if edges.is_empty() {
                continue;
            }
            at = net.edges()[*edges.last().expect("non-empty")].to;
            let departure = day_start + secs;
            let route = Route::from_edges(net, &edges, departure, driver.id.clone());
            let slot = ((secs as u128 * spec.slots_per_day as u128) / SECONDS_PER_DAY as u128) as usize;
            let hidden: f64 = route.edges().map(|e| world.edge_times[slot][e]).sum::<f64>()
                + route.nodes().map(|v| world.node_times[v]).sum::<f64>();
            let mut y = hidden + driver.bias_s + noise.sample(&mut rng);
            for _ in 0..MAX_NOISE_REDRAWS {
                if y > 0.0 {
                    break;
                }
                y = hidden + driver.bias_s + noise.sample(&mut rng);
            }
            out.push(TrajectoryRecord {
                route,
                travel_time_s: y.max(1.0),
            });
        }
    }
    out.sort_by(|a, b| a.departure().cmp(&b.departure()).then_with(|| a.driver_id().cmp(b.driver_id())));
    out
}

/// Walk of `len` edges from `start`, avoiding immediate U-turns when another
/// exit exists.
fn random_walk<R: Rng + ?Sized>(net: &RoadNetwork, start: usize, len: usize, rng: &mut R) -> Vec<usize> {
    let mut edges: Vec<usize> = Vec::with_capacity(len);
    let mut at = start;
    for _ in 0..len {
        let out = net.out_edges(at);
        if out.is_empty() {
            break;
        }
        let came_from = edges.last().map(|&e| net.edges()[e].from);
        let forward: Vec<usize> = out.iter().copied().filter(|&e| Some(net.edges()[e].to) != came_from).collect();
        let pool = if forward.is_empty() { out } else { &forward[..] };
        let e = pool[rng.random_range(0..pool.len())];
        edges.push(e);
        at = net.edges()[e].to;
    }
    edges
}

pub const TRAJECTORY_HEADER: [&str; 4] = ["driver_id", "departure_iso8601", "travel_time_s", "path"];

fn path_string(net: &RoadNetwork, route: &Route) -> String {
    route
        .steps
        .iter()
        .map(|s| match s {
            Step::Edge(e) => format!("e{}", net.edges()[*e].id),
            Step::Node(v) => format!("v{}", net.nodes()[*v].id),
        })
        .collect::<Vec<_>>()
        .join("|")
}

pub fn write_trajectories<W: Write>(net: &RoadNetwork, records: &[TrajectoryRecord], w: W) -> Result<(), DataError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(TRAJECTORY_HEADER)?;
    for r in records {
        let when = DateTime::from_timestamp(r.departure(), 0)
            .ok_or_else(|| DataError::Spec(format!("departure {} out of range", r.departure())))?
            .to_rfc3339_opts(SecondsFormat::Secs, true);
        wr.write_record([
            r.driver_id().to_string(),
            when,
            r.travel_time_s.to_string(),
            path_string(net, &r.route),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads `trajectories.csv`, validating every route against `net`. Errors
/// carry the 1-based file line (the header is line 1).
pub fn load_trajectories<R: Read>(net: &RoadNetwork, reader: R) -> Result<Vec<TrajectoryRecord>, DataError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != TRAJECTORY_HEADER {
        return Err(DataError::Invalid {
            line: 1,
            msg: format!("expected header {}", TRAJECTORY_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let line = i + 2;
        let row = row?;
        let bad = |msg: String| DataError::Invalid { line, msg };
        if row.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", row.len())));
        }
        let departure = DateTime::parse_from_rfc3339(&row[1])
            .map_err(|e| bad(format!("departure `{}`: {e}", &row[1])))?
            .timestamp();
        let y: f64 = row[2].parse().map_err(|_| bad(format!("travel_time_s `{}` is not a number", &row[2])))?;
        if !(y > 0.0 && y.is_finite()) {
            return Err(bad(format!("travel_time_s must be positive, got {y}")));
        }
        let mut steps = Vec::new();
        for tok in row[3].split('|') {
            let step = if let Some(id) = tok.strip_prefix('e') {
                Step::Edge(net.edge_position(id).ok_or_else(|| bad(format!("unknown edge `{id}`")))?)
            } else if let Some(id) = tok.strip_prefix('v') {
                Step::Node(net.node_position(id).ok_or_else(|| bad(format!("unknown node `{id}`")))?)
            } else {
                return Err(bad(format!("path token `{tok}` must start with e or v")));
            };
            steps.push(step);
        }
        let route = Route::new(steps, departure, &row[0]);
        if let Some(v) = validate_route(net, &route).first() {
            return Err(bad(format!("invalid route: {v}")));
        }
        out.push(TrajectoryRecord { route, travel_time_s: y });
    }
    Ok(out)
}
