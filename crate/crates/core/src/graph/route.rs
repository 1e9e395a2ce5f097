use std::fmt;

use super::RoadNetwork;

/// One element of a route: an edge or node position in the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Step {
    Edge(usize),
    Node(usize),
}

/// Alternating edge/node sequence `e₁, v₁, e₂, …, e_n` with its departure
/// time (unix seconds) and driver.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Route {
    pub steps: Vec<Step>,
    pub departure: i64,
    pub driver_id: String,
}

impl Route {
    pub fn new(steps: Vec<Step>, departure: i64, driver_id: impl Into<String>) -> Self {
        Self {
            steps,
            departure,
            driver_id: driver_id.into(),
        }
    }

    /// Builds `e₁, v₁, e₂, …` from consecutive edges, inserting the joining
    /// node (`to` of each edge) between them.
    pub fn from_edges(net: &RoadNetwork, edges: &[usize], departure: i64, driver_id: impl Into<String>) -> Self {
        let mut steps = Vec::with_capacity(edges.len() * 2);
        for (i, &e) in edges.iter().enumerate() {
            if i > 0 {
                steps.push(Step::Node(net.edges()[edges[i - 1]].to));
            }
            steps.push(Step::Edge(e));
        }
        Self::new(steps, departure, driver_id)
    }

    pub fn edges(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().filter_map(|s| match s {
            Step::Edge(e) => Some(*e),
            Step::Node(_) => None,
        })
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().filter_map(|s| match s {
            Step::Node(v) => Some(*v),
            Step::Edge(_) => None,
        })
    }

    /// Sum of edge lengths in meters.
    pub fn length_m(&self, net: &RoadNetwork) -> f64 {
        self.edges().map(|e| net.edges()[e].length_m()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RouteViolation {
    Empty,
    /// First or last step is a node.
    MustStartAndEndWithEdge,
    /// Two consecutive steps of the same kind at `step`.
    Alternation { step: usize },
    UnknownEdge { step: usize, edge: usize },
    UnknownNode { step: usize, node: usize },
    /// The node at `step` is not where the previous edge ends and the next
    /// edge starts.
    Connectivity { step: usize },
}

impl fmt::Display for RouteViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RouteViolation::Empty => write!(f, "empty route"),
            RouteViolation::MustStartAndEndWithEdge => write!(f, "route must start and end with an edge"),
            RouteViolation::Alternation { step } => write!(f, "steps {} and {step} do not alternate", step - 1),
            RouteViolation::UnknownEdge { step, edge } => write!(f, "step {step}: unknown edge #{edge}"),
            RouteViolation::UnknownNode { step, node } => write!(f, "step {step}: unknown node #{node}"),
            RouteViolation::Connectivity { step } => write!(f, "step {step}: node does not join its neighboring edges"),
        }
    }
}

/// Every alternation and connectivity breach of `route`; empty means valid.
///
/// Direction matters here: an interior node must be the `to` end of the
/// preceding edge and the `from` end of the following one.
pub fn validate_route(net: &RoadNetwork, route: &Route) -> Vec<RouteViolation> {
    let steps = &route.steps;
    let mut out = Vec::new();
    if steps.is_empty() {
        out.push(RouteViolation::Empty);
        return out;
    }
    if matches!(steps[0], Step::Node(_)) || matches!(steps[steps.len() - 1], Step::Node(_)) {
        out.push(RouteViolation::MustStartAndEndWithEdge);
    }
    for (i, s) in steps.iter().enumerate() {
        match *s {
            Step::Edge(e) if e >= net.num_edges() => out.push(RouteViolation::UnknownEdge { step: i, edge: e }),
            Step::Node(v) if v >= net.num_nodes() => out.push(RouteViolation::UnknownNode { step: i, node: v }),
            _ => {}
        }
        if i > 0 && std::mem::discriminant(s) == std::mem::discriminant(&steps[i - 1]) {
            out.push(RouteViolation::Alternation { step: i });
        }
    }
    for i in 1..steps.len().saturating_sub(1) {
        if let (Step::Edge(a), Step::Node(v), Step::Edge(b)) = (steps[i - 1], steps[i], steps[i + 1]) {
            if a < net.num_edges() && b < net.num_edges() && v < net.num_nodes() {
                let (ea, eb) = (&net.edges()[a], &net.edges()[b]);
                if ea.to != v || eb.from != v {
                    out.push(RouteViolation::Connectivity { step: i });
                }
            }
        }
    }
    out
}
