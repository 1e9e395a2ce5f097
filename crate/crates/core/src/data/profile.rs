use std::collections::BTreeMap;

use crate::graph::RoadNetwork;
use crate::model::{DriverProfile, SECONDS_PER_DAY};

use super::{assign_grid_cell, DataError, GridSpec, TrajectoryRecord};

/// Summarizes one driver's trips. Breaks are the longest gap between
/// consecutive trips of a day (wrapping past midnight), averaged over active
/// days; frequent regions count trip start and end cells.
pub fn extract_profile(
    trips: &[TrajectoryRecord],
    grid: &GridSpec,
    net: &RoadNetwork,
    top_k: usize,
) -> Result<DriverProfile, DataError> {
    if trips.is_empty() {
        return Err(DataError::Spec("profile needs at least one trip".into()));
    }
    let mut by_day: BTreeMap<i64, Vec<(i64, f64)>> = BTreeMap::new();
    for t in trips {
        by_day
            .entry(t.departure().div_euclid(SECONDS_PER_DAY))
            .or_default()
            .push((t.departure().rem_euclid(SECONDS_PER_DAY), t.travel_time_s));
    }
    let day = SECONDS_PER_DAY as f64;
    let (mut start_sum, mut end_sum) = (0.0, 0.0);
    for day_trips in by_day.values_mut() {
        day_trips.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let n = day_trips.len();
        let mut best: Option<(f64, f64, f64)> = None;
        for i in 0..n {
            let (dep, dur) = day_trips[i];
            let end = dep as f64 + dur;
            let next = if i + 1 < n { day_trips[i + 1].0 as f64 } else { day_trips[0].0 as f64 + day };
            let gap = next - end;
            if best.is_none_or(|(g, _, _)| gap > g) {
                best = Some((gap, end, next));
            }
        }
        let (_, s, e) = best.expect("at least one trip");
        start_sum += s.rem_euclid(day) / 3600.0;
        end_sum += e.rem_euclid(day) / 3600.0;
    }
    let days = by_day.len() as f64;

    let mut regions: BTreeMap<usize, usize> = BTreeMap::new();
    let mut edges: BTreeMap<usize, usize> = BTreeMap::new();
    let mut distance = 0.0;
    for t in trips {
        let route_edges: Vec<usize> = t.route.edges().collect();
        if let (Some(&first), Some(&last)) = (route_edges.first(), route_edges.last()) {
            for v in [net.edges()[first].from, net.edges()[last].to] {
                let node = &net.nodes()[v];
                *regions.entry(assign_grid_cell(grid, node.lat(), node.lon())?).or_default() += 1;
            }
        }
        for e in route_edges {
            *edges.entry(e).or_default() += 1;
        }
        distance += t.route.length_m(net);
    }

    Ok(DriverProfile {
        break_start_hour: start_sum / days,
        break_end_hour: end_sum / days,
        top_regions: most_frequent(&regions, top_k, grid.num_cells()),
        top_edges: most_frequent(&edges, top_k, net.num_edges()),
        avg_trip_distance_m: distance / trips.len() as f64,
        trips_per_day: trips.len() as f64 / days,
    })
}

/// Ids by descending count (ascending id on ties), padded to `k`.
fn most_frequent(counts: &BTreeMap<usize, usize>, k: usize, padding: usize) -> Vec<usize> {
    let mut v: Vec<(usize, usize)> = counts.iter().map(|(&id, &c)| (id, c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<usize> = v.into_iter().take(k).map(|(id, _)| id).collect();
    out.resize(k, padding);
    out
}
