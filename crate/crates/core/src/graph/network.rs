use std::collections::HashMap;

use crate::nn::Tensor;

use super::{normalized_laplacian, GraphError, SparseMatrix};

/// A categorical feature column and its vocabulary size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoricalSlot {
    pub name: String,
    pub cardinality: usize,
}

/// Column layout of the node and edge tables.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSchema {
    pub node_categorical: Vec<CategoricalSlot>,
    pub node_numeric: Vec<String>,
    pub edge_categorical: Vec<CategoricalSlot>,
    pub edge_numeric: Vec<String>,
}

pub const EDGE_LENGTH: usize = 0;
pub const EDGE_SPEED_LIMIT: usize = 1;

impl FeatureSchema {
    /// The fixed columns of `nodes.csv` / `edges.csv` with the given
    /// vocabulary sizes for junction and road types.
    pub fn standard(junction_types: usize, road_types: usize) -> Self {
        let slot = |name: &str, cardinality| CategoricalSlot {
            name: name.to_string(),
            cardinality,
        };
        Self {
            node_categorical: vec![
                slot("junction_type", junction_types),
                slot("has_signal", 2),
                slot("has_crossing", 2),
            ],
            node_numeric: vec!["lat".into(), "lon".into()],
            edge_categorical: vec![
                slot("road_type", road_types),
                slot("is_bridge", 2),
                slot("is_tunnel", 2),
            ],
            edge_numeric: vec![
                "length_m".into(),
                "speed_limit_kph".into(),
                "lanes".into(),
                "width_m".into(),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeRecord {
    pub id: String,
    pub categorical: Vec<usize>,
    /// Raw values in `FeatureSchema::node_numeric` order; `lat, lon` first.
    pub numeric: Vec<f64>,
}

impl NodeRecord {
    pub fn lat(&self) -> f64 {
        self.numeric[0]
    }

    pub fn lon(&self) -> f64 {
        self.numeric[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeRecord {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub categorical: Vec<usize>,
    /// Raw values: `length_m, speed_limit_kph, lanes, width_m`, then extras.
    pub numeric: Vec<f64>,
}

impl EdgeRecord {
    pub fn length_m(&self) -> f64 {
        self.numeric[EDGE_LENGTH]
    }

    pub fn speed_limit_kph(&self) -> f64 {
        self.numeric[EDGE_SPEED_LIMIT]
    }
}

/// Directed road graph with symmetric node- and edge-level (line graph)
/// adjacency and the normalized Laplacians built from them.
///
/// Immutable once built.
#[derive(Clone, Debug)]
pub struct RoadNetwork {
    schema: FeatureSchema,
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
    node_index: HashMap<String, usize>,
    edge_index: HashMap<String, usize>,
    node_adjacency: SparseMatrix,
    edge_adjacency: SparseMatrix,
    node_laplacian: SparseMatrix,
    edge_laplacian: SparseMatrix,
    node_numeric: Tensor,
    edge_numeric: Tensor,
    out_edges: Vec<Vec<usize>>,
}

impl PartialEq for RoadNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema && self.nodes == other.nodes && self.edges == other.edges
    }
}

impl RoadNetwork {
    /// Validates records against the schema and builds adjacency structures.
    /// For records built in code, `line` in errors is the 0-based position.
    pub fn new(
        schema: FeatureSchema,
        nodes: Vec<NodeRecord>,
        edges: Vec<EdgeRecord>,
    ) -> Result<Self, GraphError> {
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if node_index.insert(n.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateId {
                    line: i,
                    id: n.id.clone(),
                });
            }
            check_features(
                i,
                &n.categorical,
                &schema.node_categorical,
                &n.numeric,
                schema.node_numeric.len(),
            )?;
        }
        let mut edge_index = HashMap::with_capacity(edges.len());
        for (i, e) in edges.iter().enumerate() {
            if edge_index.insert(e.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateId {
                    line: i,
                    id: e.id.clone(),
                });
            }
            if e.from >= nodes.len() || e.to >= nodes.len() {
                return Err(GraphError::DanglingNode {
                    line: i,
                    node: format!("#{}", e.from.max(e.to)),
                });
            }
            if e.from == e.to {
                return Err(GraphError::SelfLoop {
                    line: i,
                    id: e.id.clone(),
                });
            }
            check_features(
                i,
                &e.categorical,
                &schema.edge_categorical,
                &e.numeric,
                schema.edge_numeric.len(),
            )?;
            if !(e.length_m() > 0.0) || !(e.speed_limit_kph() > 0.0) {
                return Err(GraphError::Malformed {
                    line: i,
                    msg: format!("edge {} needs positive length and speed limit", e.id),
                });
            }
        }

        let nv = nodes.len();
        let ne = edges.len();
        let mut node_trip = Vec::new();
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); nv];
        let mut out_edges: Vec<Vec<usize>> = vec![Vec::new(); nv];
        for (k, e) in edges.iter().enumerate() {
            node_trip.push((e.from, e.to, 1.0));
            node_trip.push((e.to, e.from, 1.0));
            incident[e.from].push(k);
            incident[e.to].push(k);
            out_edges[e.from].push(k);
        }
        let node_adjacency = binarize(SparseMatrix::from_triplets(nv, node_trip));
        let mut edge_trip = Vec::new();
        for inc in &incident {
            for (a, &e1) in inc.iter().enumerate() {
                for &e2 in &inc[a + 1..] {
                    if e1 != e2 {
                        edge_trip.push((e1, e2, 1.0));
                        edge_trip.push((e2, e1, 1.0));
                    }
                }
            }
        }
        let edge_adjacency = binarize(SparseMatrix::from_triplets(ne, edge_trip));
        let node_laplacian = normalized_laplacian(&node_adjacency)?;
        let edge_laplacian = normalized_laplacian(&edge_adjacency)?;
        let node_numeric = standardize(nodes.iter().map(|n| n.numeric.as_slice()), schema.node_numeric.len());
        let edge_numeric = standardize(edges.iter().map(|e| e.numeric.as_slice()), schema.edge_numeric.len());

        Ok(Self {
            schema,
            nodes,
            edges,
            node_index,
            edge_index,
            node_adjacency,
            edge_adjacency,
            node_laplacian,
            edge_laplacian,
            node_numeric,
            edge_numeric,
            out_edges,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node_position(&self, id: &str) -> Option<usize> {
        self.node_index.get(id).copied()
    }

    pub fn edge_position(&self, id: &str) -> Option<usize> {
        self.edge_index.get(id).copied()
    }

    pub fn node_adjacency(&self) -> &SparseMatrix {
        &self.node_adjacency
    }

    pub fn edge_adjacency(&self) -> &SparseMatrix {
        &self.edge_adjacency
    }

    pub fn node_laplacian(&self) -> &SparseMatrix {
        &self.node_laplacian
    }

    pub fn edge_laplacian(&self) -> &SparseMatrix {
        &self.edge_laplacian
    }

    /// Z-scored numeric node features, `|V| × node_numeric.len()`.
    pub fn node_numeric(&self) -> &Tensor {
        &self.node_numeric
    }

    /// Z-scored numeric edge features, `|E| × edge_numeric.len()`.
    pub fn edge_numeric(&self) -> &Tensor {
        &self.edge_numeric
    }

    /// Categorical ids of slot `slot` for every edge.
    pub fn edge_slot_ids(&self, slot: usize) -> Vec<usize> {
        self.edges.iter().map(|e| e.categorical[slot]).collect()
    }

    pub fn node_slot_ids(&self, slot: usize) -> Vec<usize> {
        self.nodes.iter().map(|n| n.categorical[slot]).collect()
    }

    /// Edges leaving node `v`, in edge order.
    pub fn out_edges(&self, v: usize) -> &[usize] {
        &self.out_edges[v]
    }
}

pub(crate) fn check_features(
    line: usize,
    categorical: &[usize],
    slots: &[CategoricalSlot],
    numeric: &[f64],
    numeric_len: usize,
) -> Result<(), GraphError> {
    if categorical.len() != slots.len() || numeric.len() != numeric_len {
        return Err(GraphError::Malformed {
            line,
            msg: format!(
                "expected {} categorical and {numeric_len} numeric features, got {} and {}",
                slots.len(),
                categorical.len(),
                numeric.len()
            ),
        });
    }
    for (v, slot) in categorical.iter().zip(slots) {
        if *v >= slot.cardinality {
            return Err(GraphError::Malformed {
                line,
                msg: format!(
                    "{} = {v} outside vocabulary of size {}",
                    slot.name, slot.cardinality
                ),
            });
        }
    }
    if let Some(bad) = numeric.iter().find(|v| !v.is_finite()) {
        return Err(GraphError::Malformed {
            line,
            msg: format!("non-finite numeric feature {bad}"),
        });
    }
    Ok(())
}

fn binarize(m: SparseMatrix) -> SparseMatrix {
    let n = m.dim();
    let trip = (0..n)
        .flat_map(|i| m.row(i).map(move |(j, _)| (i, j, 1.0)).collect::<Vec<_>>())
        .collect();
    SparseMatrix::from_triplets(n, trip)
}

/// Column-wise z-score; constant columns map to zero.
fn standardize<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, width: usize) -> Tensor {
    let rows: Vec<&[f64]> = rows.collect();
    let n = rows.len();
    let mut out = Tensor::zeros(&[n, width]);
    if n == 0 {
        return out;
    }
    for c in 0..width {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(i)[c] = if sd > 0.0 { (r[c] - mean) / sd } else { 0.0 };
        }
    }
    out
}
