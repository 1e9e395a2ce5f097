//! Road network: node/edge records, dual (node-wise and line-graph) adjacency,
//! normalized Laplacians and route validation.

mod io;
mod network;
mod route;
mod sparse;

use thiserror::Error;

pub use io::{
    load_network, load_network_dir, write_edges, write_network_dir, write_nodes, VocabularyFile,
    EDGE_FIXED, NODE_FIXED,
};
pub use network::{
    CategoricalSlot, EdgeRecord, FeatureSchema, NodeRecord, RoadNetwork, EDGE_LENGTH,
    EDGE_SPEED_LIMIT,
};
pub use route::{validate_route, Route, RouteViolation, Step};
pub use sparse::{normalized_laplacian, SparseMatrix};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: unknown node `{node}`")]
    DanglingNode { line: usize, node: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: edge `{id}` is a self-loop")]
    SelfLoop { line: usize, id: String },
    #[error("adjacency matrix is not symmetric")]
    NotSymmetric,
    #[error("shape: {0}")]
    Shape(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RoadNetwork {
        let schema = FeatureSchema::standard(1, 1);
        let node = |id: &str, lat: f64| NodeRecord {
            id: id.into(),
            categorical: vec![0, 0, 0],
            numeric: vec![lat, 0.0],
        };
        let edge = |id: &str, from, to| EdgeRecord {
            id: id.into(),
            from,
            to,
            categorical: vec![0, 0, 0],
            numeric: vec![100.0, 30.0, 1.0, 3.0],
        };
        RoadNetwork::new(
            schema,
            vec![node("a", 0.0), node("b", 1.0), node("c", 2.0)],
            vec![edge("ab", 0, 1), edge("bc", 1, 2), edge("cb", 2, 1)],
        )
        .unwrap()
    }

    #[test]
    fn single_edge_route_is_valid() {
        let net = tiny();
        assert!(validate_route(&net, &Route::new(vec![Step::Edge(0)], 0, "d")).is_empty());
    }

    #[test]
    fn wrong_joining_node() {
        let net = tiny();
        let r = Route::new(vec![Step::Edge(0), Step::Node(2), Step::Edge(1)], 0, "d");
        assert_eq!(validate_route(&net, &r), vec![RouteViolation::Connectivity { step: 1 }]);
        let ok = Route::new(vec![Step::Edge(0), Step::Node(1), Step::Edge(1)], 0, "d");
        assert!(validate_route(&net, &ok).is_empty());
    }

    #[test]
    fn two_edges_without_node() {
        let net = tiny();
        let r = Route::new(vec![Step::Edge(0), Step::Edge(1)], 0, "d");
        assert_eq!(validate_route(&net, &r), vec![RouteViolation::Alternation { step: 1 }]);
    }

    #[test]
    fn direction_is_respected() {
        let net = tiny();
        // bc ends at c; ab starts at a, so c cannot join them
        let r = Route::new(vec![Step::Edge(1), Step::Node(1), Step::Edge(0)], 0, "d");
        assert_eq!(validate_route(&net, &r), vec![RouteViolation::Connectivity { step: 1 }]);
        let uturn = Route::from_edges(&net, &[1, 2], 0, "d");
        assert!(validate_route(&net, &uturn).is_empty());
    }

    #[test]
    fn other_violations() {
        let net = tiny();
        assert_eq!(validate_route(&net, &Route::new(vec![], 0, "d")), vec![RouteViolation::Empty]);
        let r = Route::new(vec![Step::Node(0)], 0, "d");
        assert_eq!(validate_route(&net, &r), vec![RouteViolation::MustStartAndEndWithEdge]);
        let r = Route::new(vec![Step::Edge(9)], 0, "d");
        assert_eq!(validate_route(&net, &r), vec![RouteViolation::UnknownEdge { step: 0, edge: 9 }]);
    }

    #[test]
    fn opposing_edges_are_line_graph_neighbors() {
        let net = tiny();
        // bc and cb share both endpoints; ab shares b with both
        assert_eq!(net.edge_adjacency().upper_pairs(), vec![(0, 1), (0, 2), (1, 2)]);
        assert!(net.edge_adjacency().diagonal_is_zero());
        assert_eq!(net.node_adjacency().upper_pairs(), vec![(0, 1), (1, 2)]);
        assert_eq!(net.out_edges(1), &[1]);
    }
}
