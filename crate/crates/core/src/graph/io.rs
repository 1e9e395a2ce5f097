//! CSV import/export of road networks plus the `key=value` vocabulary sidecar.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::network::check_features;
use super::{CategoricalSlot, EdgeRecord, FeatureSchema, GraphError, NodeRecord, RoadNetwork};

pub const NODE_FIXED: [&str; 6] = ["node_id", "lat", "lon", "junction_type", "has_signal", "has_crossing"];
pub const EDGE_FIXED: [&str; 10] = [
    "edge_id",
    "from_node",
    "to_node",
    "road_type",
    "length_m",
    "speed_limit_kph",
    "lanes",
    "width_m",
    "is_bridge",
    "is_tunnel",
];

/// Parsed vocabulary sidecar: `node.<slot>=<n>` / `edge.<slot>=<n>` lines,
/// `#` comments and blank lines ignored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VocabularyFile {
    pub node: BTreeMap<String, usize>,
    pub edge: BTreeMap<String, usize>,
}

impl VocabularyFile {
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut out = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| GraphError::Schema(format!("line {}: {msg}: `{raw}`", i + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            let card: usize = value.trim().parse().map_err(|_| bad("cardinality must be an integer"))?;
            if card == 0 {
                return Err(bad("cardinality must be positive"));
            }
            let (table, slot) = key.trim().split_once('.').ok_or_else(|| bad("key must be node.<slot> or edge.<slot>"))?;
            let map = match table {
                "node" => &mut out.node,
                "edge" => &mut out.edge,
                _ => return Err(bad("key must start with node. or edge.")),
            };
            if map.insert(slot.to_string(), card).is_some() {
                return Err(bad("duplicate key"));
            }
        }
        Ok(out)
    }

    pub fn from_schema(schema: &FeatureSchema) -> Self {
        Self {
            node: schema.node_categorical.iter().map(|s| (s.name.clone(), s.cardinality)).collect(),
            edge: schema.edge_categorical.iter().map(|s| (s.name.clone(), s.cardinality)).collect(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::from("# categorical vocabulary sizes\n");
        for (k, v) in &self.node {
            s.push_str(&format!("node.{k}={v}\n"));
        }
        for (k, v) in &self.edge {
            s.push_str(&format!("edge.{k}={v}\n"));
        }
        s
    }
}

enum Column {
    Categorical,
    Numeric,
}

fn cardinality(vocab: &BTreeMap<String, usize>, table: &str, name: &str) -> Result<usize, GraphError> {
    match vocab.get(name) {
        Some(&c) => Ok(c),
        // flags default to a binary vocabulary
        None if name.starts_with("has_") || name.starts_with("is_") => Ok(2),
        None => Err(GraphError::Schema(format!("no vocabulary declared for {table}.{name}"))),
    }
}

fn header_of<R: Read>(rdr: &mut csv::Reader<R>) -> Result<Vec<String>, GraphError> {
    Ok(rdr
        .headers()
        .map_err(|e| GraphError::Malformed { line: 1, msg: e.to_string() })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect())
}

fn check_fixed(header: &[String], fixed: &[&str], table: &str) -> Result<(), GraphError> {
    if header.len() < fixed.len() || header.iter().zip(fixed).any(|(h, f)| h != f) {
        return Err(GraphError::Malformed {
            line: 1,
            msg: format!("{table} header must start with {}", fixed.join(",")),
        });
    }
    Ok(())
}

fn parse_num(field: &str, line: usize, col: &str) -> Result<f64, GraphError> {
    field.trim().parse::<f64>().map_err(|_| GraphError::Malformed {
        line,
        msg: format!("{col}: `{field}` is not a number"),
    })
}

fn parse_cat(field: &str, line: usize, col: &str) -> Result<usize, GraphError> {
    let f = field.trim();
    match f {
        "true" => Ok(1),
        "false" => Ok(0),
        _ => f.parse::<usize>().map_err(|_| GraphError::Malformed {
            line,
            msg: format!("{col}: `{field}` is not a category id"),
        }),
    }
}

/// Reads `nodes.csv` and `edges.csv` content against a vocabulary sidecar.
///
/// Extra trailing columns are categorical when the sidecar declares them and
/// numeric otherwise. Row errors report 1-based file lines (header = 1).
pub fn load_network<N: Read, E: Read>(
    nodes_src: N,
    edges_src: E,
    vocab: &VocabularyFile,
) -> Result<RoadNetwork, GraphError> {
    let mut nodes_rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(nodes_src);
    let node_header = header_of(&mut nodes_rdr)?;
    check_fixed(&node_header, &NODE_FIXED, "nodes.csv")?;
    let mut edges_rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(edges_src);
    let edge_header = header_of(&mut edges_rdr)?;
    check_fixed(&edge_header, &EDGE_FIXED, "edges.csv")?;

    let mut schema = FeatureSchema {
        node_categorical: Vec::new(),
        node_numeric: vec!["lat".into(), "lon".into()],
        edge_categorical: Vec::new(),
        edge_numeric: vec!["length_m".into(), "speed_limit_kph".into(), "lanes".into(), "width_m".into()],
    };
    let mut node_cols = Vec::new();
    for name in ["junction_type", "has_signal", "has_crossing"] {
        schema.node_categorical.push(CategoricalSlot {
            name: name.into(),
            cardinality: cardinality(&vocab.node, "node", name)?,
        });
    }
    for name in &node_header[NODE_FIXED.len()..] {
        if let Some(&c) = vocab.node.get(name) {
            schema.node_categorical.push(CategoricalSlot { name: name.clone(), cardinality: c });
            node_cols.push(Column::Categorical);
        } else {
            schema.node_numeric.push(name.clone());
            node_cols.push(Column::Numeric);
        }
    }
    let mut edge_cols = Vec::new();
    for name in ["road_type", "is_bridge", "is_tunnel"] {
        schema.edge_categorical.push(CategoricalSlot {
            name: name.into(),
            cardinality: cardinality(&vocab.edge, "edge", name)?,
        });
    }
    for name in &edge_header[EDGE_FIXED.len()..] {
        if let Some(&c) = vocab.edge.get(name) {
            schema.edge_categorical.push(CategoricalSlot { name: name.clone(), cardinality: c });
            edge_cols.push(Column::Categorical);
        } else {
            schema.edge_numeric.push(name.clone());
            edge_cols.push(Column::Numeric);
        }
    }

    let mut nodes = Vec::new();
    let mut node_lines: HashMap<String, usize> = HashMap::new();
    for rec in nodes_rdr.records() {
        let rec = rec.map_err(|e| GraphError::Malformed {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != node_header.len() {
            return Err(GraphError::Malformed {
                line,
                msg: format!("expected {} fields, got {}", node_header.len(), rec.len()),
            });
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(GraphError::Malformed { line, msg: "empty node_id".into() });
        }
        if let Some(&first) = node_lines.get(&id) {
            return Err(GraphError::DuplicateId {
                line,
                id: format!("{id} (first seen on line {first})"),
            });
        }
        let mut categorical = Vec::new();
        let mut numeric = vec![parse_num(&rec[1], line, "lat")?, parse_num(&rec[2], line, "lon")?];
        for (k, col) in ["junction_type", "has_signal", "has_crossing"].iter().enumerate() {
            categorical.push(parse_cat(&rec[3 + k], line, col)?);
        }
        for (k, kind) in node_cols.iter().enumerate() {
            let field = &rec[NODE_FIXED.len() + k];
            let col = &node_header[NODE_FIXED.len() + k];
            match kind {
                Column::Categorical => categorical.push(parse_cat(field, line, col)?),
                Column::Numeric => numeric.push(parse_num(field, line, col)?),
            }
        }
        check_features(line, &categorical, &schema.node_categorical, &numeric, schema.node_numeric.len())?;
        node_lines.insert(id.clone(), line);
        nodes.push(NodeRecord { id, categorical, numeric });
    }
    let node_pos: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();

    let mut edges = Vec::new();
    let mut edge_lines: HashMap<String, usize> = HashMap::new();
    for rec in edges_rdr.records() {
        let rec = rec.map_err(|e| GraphError::Malformed {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != edge_header.len() {
            return Err(GraphError::Malformed {
                line,
                msg: format!("expected {} fields, got {}", edge_header.len(), rec.len()),
            });
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(GraphError::Malformed { line, msg: "empty edge_id".into() });
        }
        if let Some(&first) = edge_lines.get(&id) {
            return Err(GraphError::DuplicateId {
                line,
                id: format!("{id} (first seen on line {first})"),
            });
        }
        let resolve = |f: &str| {
            node_pos.get(f.trim()).copied().ok_or_else(|| GraphError::DanglingNode {
                line,
                node: f.trim().to_string(),
            })
        };
        let from = resolve(&rec[1])?;
        let to = resolve(&rec[2])?;
        if from == to {
            return Err(GraphError::SelfLoop { line, id });
        }
        let mut categorical = vec![parse_cat(&rec[3], line, "road_type")?];
        let mut numeric = Vec::new();
        for (k, col) in ["length_m", "speed_limit_kph", "lanes", "width_m"].iter().enumerate() {
            numeric.push(parse_num(&rec[4 + k], line, col)?);
        }
        categorical.push(parse_cat(&rec[8], line, "is_bridge")?);
        categorical.push(parse_cat(&rec[9], line, "is_tunnel")?);
        for (k, kind) in edge_cols.iter().enumerate() {
            let field = &rec[EDGE_FIXED.len() + k];
            let col = &edge_header[EDGE_FIXED.len() + k];
            match kind {
                Column::Categorical => categorical.push(parse_cat(field, line, col)?),
                Column::Numeric => numeric.push(parse_num(field, line, col)?),
            }
        }
        check_features(line, &categorical, &schema.edge_categorical, &numeric, schema.edge_numeric.len())?;
        if !(numeric[0] > 0.0) || !(numeric[1] > 0.0) {
            return Err(GraphError::Malformed {
                line,
                msg: "length_m and speed_limit_kph must be positive".into(),
            });
        }
        edge_lines.insert(id.clone(), line);
        edges.push(EdgeRecord { id, from, to, categorical, numeric });
    }
    RoadNetwork::new(schema, nodes, edges)
}

/// Loads `nodes.csv`, `edges.csv` and `schema.txt` from `dir`.
pub fn load_network_dir(dir: &Path) -> Result<RoadNetwork, GraphError> {
    let vocab = VocabularyFile::parse(&fs::read_to_string(dir.join("schema.txt"))?)?;
    load_network(
        fs::File::open(dir.join("nodes.csv"))?,
        fs::File::open(dir.join("edges.csv"))?,
        &vocab,
    )
}

/// Writes `nodes.csv` content. Numbers use shortest round-trip formatting.
pub fn write_nodes<W: Write>(net: &RoadNetwork, out: W) -> Result<(), GraphError> {
    let schema = net.schema();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = NODE_FIXED.iter().map(|s| s.to_string()).collect();
    header.extend(schema.node_categorical[3..].iter().map(|s| s.name.clone()));
    header.extend(schema.node_numeric[2..].iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for n in net.nodes() {
        let mut row = vec![n.id.clone(), n.numeric[0].to_string(), n.numeric[1].to_string()];
        row.extend(n.categorical.iter().map(usize::to_string));
        row.extend(n.numeric[2..].iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_edges<W: Write>(net: &RoadNetwork, out: W) -> Result<(), GraphError> {
    let schema = net.schema();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = EDGE_FIXED.iter().map(|s| s.to_string()).collect();
    header.extend(schema.edge_categorical[3..].iter().map(|s| s.name.clone()));
    header.extend(schema.edge_numeric[4..].iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for e in net.edges() {
        let mut row = vec![
            e.id.clone(),
            net.nodes()[e.from].id.clone(),
            net.nodes()[e.to].id.clone(),
            e.categorical[0].to_string(),
        ];
        row.extend(e.numeric[..4].iter().map(f64::to_string));
        row.push(e.categorical[1].to_string());
        row.push(e.categorical[2].to_string());
        row.extend(e.categorical[3..].iter().map(usize::to_string));
        row.extend(e.numeric[4..].iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `nodes.csv`, `edges.csv` and `schema.txt` into `dir`.
pub fn write_network_dir(net: &RoadNetwork, dir: &Path) -> Result<(), GraphError> {
    fs::create_dir_all(dir)?;
    write_nodes(net, fs::File::create(dir.join("nodes.csv"))?)?;
    write_edges(net, fs::File::create(dir.join("edges.csv"))?)?;
    fs::write(dir.join("schema.txt"), VocabularyFile::from_schema(net.schema()).render())?;
    Ok(())
}

fn csv_err(e: csv::Error) -> GraphError {
    GraphError::Malformed { line: 0, msg: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VOCAB: &str = "node.junction_type=3\nedge.road_type=4\n";

    fn load(nodes: &str, edges: &str) -> Result<RoadNetwork, GraphError> {
        load_network(nodes.as_bytes(), edges.as_bytes(), &VocabularyFile::parse(VOCAB).unwrap())
    }

    const TWO_NODES: &str = "node_id,lat,lon,junction_type,has_signal,has_crossing\n\
                             a,30.0,104.0,0,1,0\n\
                             b,30.001,104.0,1,0,0\n";

    #[test]
    fn single_edge_network() {
        let edges = "edge_id,from_node,to_node,road_type,length_m,speed_limit_kph,lanes,width_m,is_bridge,is_tunnel\n\
                     e1,a,b,2,110.5,40,2,7.5,0,0\n";
        let net = load(TWO_NODES, edges).unwrap();
        assert_eq!((net.num_nodes(), net.num_edges()), (2, 1));
        assert_eq!(net.edge_adjacency().nnz(), 0);
        assert_eq!(net.node_adjacency().nnz(), 2);
        assert_eq!(net.edges()[0].length_m(), 110.5);
    }

    #[test]
    fn triangle_edge_adjacency() {
        let nodes = "node_id,lat,lon,junction_type,has_signal,has_crossing\n\
                     a,0,0,0,0,0\nb,0,1,0,0,0\nc,1,0,0,0,0\n";
        let edges = "edge_id,from_node,to_node,road_type,length_m,speed_limit_kph,lanes,width_m,is_bridge,is_tunnel\n\
                     ab,a,b,0,100,30,1,3,0,0\nbc,b,c,0,100,30,1,3,0,0\nca,c,a,0,100,30,1,3,0,0\n";
        let net = load(nodes, edges).unwrap();
        let pairs = net.edge_adjacency().upper_pairs();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);
        assert!(net.edge_adjacency().is_symmetric());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let header = "edge_id,from_node,to_node,road_type,length_m,speed_limit_kph,lanes,width_m,is_bridge,is_tunnel\n";
        let dangling = format!("{header}e1,a,b,0,100,30,1,3,0,0\ne2,a,zz,0,100,30,1,3,0,0\n");
        match load(TWO_NODES, &dangling) {
            Err(GraphError::DanglingNode { line, node }) => assert_eq!((line, node.as_str()), (3, "zz")),
            other => panic!("{other:?}"),
        }
        let dup = format!("{header}e1,a,b,0,100,30,1,3,0,0\ne1,b,a,0,100,30,1,3,0,0\n");
        assert!(matches!(load(TWO_NODES, &dup), Err(GraphError::DuplicateId { line: 3, .. })));
        let malformed = format!("{header}e1,a,b,0,abc,30,1,3,0,0\n");
        assert!(matches!(load(TWO_NODES, &malformed), Err(GraphError::Malformed { line: 2, .. })));
        let vocab = format!("{header}e1,a,b,9,100,30,1,3,0,0\n");
        assert!(matches!(load(TWO_NODES, &vocab), Err(GraphError::Malformed { line: 2, .. })));
        let self_loop = format!("{header}e1,a,a,0,100,30,1,3,0,0\n");
        assert!(matches!(load(TWO_NODES, &self_loop), Err(GraphError::SelfLoop { line: 2, .. })));
        let zero_len = format!("{header}e1,a,b,0,0,30,1,3,0,0\n");
        assert!(matches!(load(TWO_NODES, &zero_len), Err(GraphError::Malformed { line: 2, .. })));
    }

    #[test]
    fn extra_columns_follow_the_sidecar() {
        let nodes = "node_id,lat,lon,junction_type,has_signal,has_crossing,elevation,zone\n\
                     a,0,0,0,0,0,512.5,1\nb,0,1,0,0,0,500,0\n";
        let edges = "edge_id,from_node,to_node,road_type,length_m,speed_limit_kph,lanes,width_m,is_bridge,is_tunnel\n\
                     e,a,b,0,100,30,1,3,0,0\n";
        let vocab = VocabularyFile::parse("node.junction_type=1\nnode.zone=2\nedge.road_type=1").unwrap();
        let net = load_network(nodes.as_bytes(), edges.as_bytes(), &vocab).unwrap();
        assert_eq!(net.schema().node_numeric, vec!["lat", "lon", "elevation"]);
        assert_eq!(net.schema().node_categorical.last().unwrap().name, "zone");
        assert_eq!(net.nodes()[0].numeric[2], 512.5);
    }

    #[test]
    fn sidecar_parse_errors() {
        assert!(VocabularyFile::parse("node.x").is_err());
        assert!(VocabularyFile::parse("road.x=2").is_err());
        assert!(VocabularyFile::parse("node.x=0").is_err());
        assert!(VocabularyFile::parse("node.x=2\nnode.x=3").is_err());
        assert!(load_network(TWO_NODES.as_bytes(), "".as_bytes(), &VocabularyFile::default()).is_err());
    }
}
