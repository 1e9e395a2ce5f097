use std::collections::BTreeSet;
use std::io::Write;

use serde::Serialize;

use crate::graph::RoadNetwork;
use crate::model::TrafficState;

use super::HarnessError;

/// Travel times below this are raised to it before computing a speed.
pub const TRAVEL_TIME_FLOOR_S: f64 = 1.0;

/// Road-state color class from implied speed as a fraction of the limit:
/// `[0, 25%)`, `[25%, 50%)`, `[50%, 75%)`, `[75%, ∞)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    VeryCongested,
    Congested,
    Slow,
    Unblocked,
}

impl Bucket {
    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::VeryCongested => "very_congested",
            Bucket::Congested => "congested",
            Bucket::Slow => "slow",
            Bucket::Unblocked => "unblocked",
        }
    }
}

pub fn implied_speed_kph(length_m: f64, travel_time_s: f64) -> f64 {
    3.6 * length_m / travel_time_s.max(TRAVEL_TIME_FLOOR_S)
}

pub fn bucket_for(speed_kph: f64, limit_kph: f64) -> Bucket {
    if speed_kph < 0.25 * limit_kph {
        Bucket::VeryCongested
    } else if speed_kph < 0.5 * limit_kph {
        Bucket::Congested
    } else if speed_kph < 0.75 * limit_kph {
        Bucket::Slow
    } else {
        Bucket::Unblocked
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateRow {
    pub slot: usize,
    pub entity_kind: &'static str,
    pub entity_id: String,
    pub travel_time_s: f64,
    pub bucket: String,
}

/// Rows for every edge then every node of `state`. Negative travel times are
/// reported as 0. Edges outside `observed` (when given) are `unblocked`;
/// nodes carry no bucket.
pub fn state_rows(state: &TrafficState, net: &RoadNetwork, observed: Option<&BTreeSet<usize>>) -> Result<Vec<StateRow>, HarnessError> {
    if state.y_edges.len() != net.num_edges() || state.y_nodes.len() != net.num_nodes() {
        return Err(HarnessError::Export(format!(
            "state has {} edges / {} nodes, network has {} / {}",
            state.y_edges.len(),
            state.y_nodes.len(),
            net.num_edges(),
            net.num_nodes()
        )));
    }
    let slot = state.slot();
    let mut rows = Vec::with_capacity(net.num_edges() + net.num_nodes());
    for (e, (edge, &y)) in net.edges().iter().zip(&state.y_edges).enumerate() {
        let bucket = if observed.is_some_and(|o| !o.contains(&e)) {
            Bucket::Unblocked
        } else {
            bucket_for(implied_speed_kph(edge.length_m(), y), edge.speed_limit_kph())
        };
        rows.push(StateRow {
            slot,
            entity_kind: "edge",
            entity_id: edge.id.clone(),
            travel_time_s: y.max(0.0),
            bucket: bucket.as_str().to_string(),
        });
    }
    for (node, &y) in net.nodes().iter().zip(&state.y_nodes) {
        rows.push(StateRow {
            slot,
            entity_kind: "node",
            entity_id: node.id.clone(),
            travel_time_s: y.max(0.0),
            bucket: String::new(),
        });
    }
    Ok(rows)
}

/// CSV `slot,entity_kind,entity_id,travel_time_s,bucket` for each state in turn.
pub fn export_state<W: Write>(
    states: &[TrafficState],
    net: &RoadNetwork,
    observed: Option<&BTreeSet<usize>>,
    out: W,
) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["slot", "entity_kind", "entity_id", "travel_time_s", "bucket"])?;
    for state in states {
        for row in state_rows(state, net, observed)? {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}
