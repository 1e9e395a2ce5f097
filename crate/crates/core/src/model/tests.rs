use rand::Rng;

use super::*;
use crate::graph::{EdgeRecord, FeatureSchema, NodeRecord, RoadNetwork, SparseMatrix, Step};
use crate::nn::{check_gradients, ParamSet, SeedStream, Tensor};

fn node(id: usize, lat: f64, lon: f64) -> NodeRecord {
    NodeRecord {
        id: format!("n{id}"),
        categorical: vec![id % 2, id % 2, 0],
        numeric: vec![lat, lon],
    }
}

fn edge(k: usize, from: usize, to: usize) -> EdgeRecord {
    EdgeRecord {
        id: format!("e{k}"),
        from,
        to,
        categorical: vec![k % 3, 0, k % 2],
        numeric: vec![100.0 + 37.0 * k as f64, 30.0 + 10.0 * (k % 3) as f64, 1.0 + (k % 2) as f64, 3.5],
    }
}

/// Path a→b→c→d plus d→c: four edges.
fn four_edges() -> RoadNetwork {
    let nodes = (0..4).map(|i| node(i, i as f64 * 0.01, 0.0)).collect();
    let edges = vec![edge(0, 0, 1), edge(1, 1, 2), edge(2, 2, 3), edge(3, 3, 2)];
    RoadNetwork::new(FeatureSchema::standard(2, 3), nodes, edges).unwrap()
}

/// Two-way ring over five nodes: ten edges.
fn ring() -> RoadNetwork {
    let nodes = (0..5).map(|i| node(i, (i as f64).sin(), (i as f64).cos())).collect();
    let mut edges = Vec::new();
    for i in 0..5 {
        edges.push(edge(edges.len(), i, (i + 1) % 5));
        edges.push(edge(edges.len(), (i + 1) % 5, i));
    }
    RoadNetwork::new(FeatureSchema::standard(2, 3), nodes, edges).unwrap()
}

fn small_config(k: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: 4,
        gcn_layers: 1,
        hops: 2,
        temporal_dim: 3,
        slots_per_day: k,
        holiday_dim: 2,
        output_scale_s: 1.0,
        identity_embedding: true,
    }
}

fn ctx(dow: usize, slot: usize, hol: bool) -> TimeContext {
    TimeContext {
        day_of_week: dow,
        slot,
        is_holiday: hol,
    }
}

fn zero_temporal(p: &mut ParamSet) {
    for n in ["temporal.day", "temporal.slot", "temporal.holiday", "temporal.holiday_proj"] {
        p.get_mut(n).unwrap().scale(0.0);
    }
}

#[test]
fn gcn_hop_zero_identity() {
    let l = SparseMatrix::from_dense(&Tensor::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap());
    let h = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.5, 0.0]]).unwrap();
    let (out, _) = gcn_forward(&l, &h, &Tensor::identity(2), &[1.0]).unwrap();
    assert_eq!(out, h);
}

#[test]
fn gcn_one_hop_on_path() {
    let l = SparseMatrix::from_dense(&Tensor::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap());
    let h = Tensor::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
    let w = Tensor::from_rows(&[vec![1.0]]).unwrap();
    let (out, _) = gcn_forward(&l, &h, &w, &[1.0, 1.0]).unwrap();
    assert_eq!(out.data(), &[2.0, 0.0]);
    let (zero, _) = gcn_forward(&l, &h, &w, &[0.0, 0.0]).unwrap();
    assert_eq!(zero.data(), &[0.0, 0.0]);
    let bad = Tensor::from_rows(&[vec![1.0]]).unwrap();
    assert!(matches!(gcn_forward(&l, &bad, &w, &[1.0]), Err(ModelError::Shape(_))));
}

#[test]
fn attention_closed_forms() {
    let equal = Tensor::filled(&[4, 3], 0.7);
    for a in attention_from_table(&equal, 2).unwrap() {
        assert!((a - 0.25).abs() < 1e-15);
    }
    let t = Tensor::from_rows(&[vec![1f64.ln()], vec![3f64.ln()]]).unwrap();
    assert!((attention_from_table(&t, 1).unwrap()[0] - 0.75).abs() < 1e-15);
    assert!(attention_from_table(&t, 2).is_err());
}

#[test]
fn attention_components_in_open_unit_interval() {
    let net = four_edges();
    let m = BaseModel::new(small_config(6)).unwrap();
    for seed in 0..20 {
        let p = m.init_params(&net, &mut SeedStream::new(seed).rng(&[]));
        let c = ctx((seed % 7) as usize, (seed % 6) as usize, seed % 2 == 0);
        for a in m.temporal_attention(&p, c).unwrap() {
            assert!(a > 0.0 && a < 1.0);
        }
    }
    let p = m.init_params(&net, &mut SeedStream::new(0).rng(&[]));
    assert!(matches!(m.temporal_attention(&p, ctx(0, 6, false)), Err(ModelError::InvalidContext(_))));
}

#[test]
fn day_and_holiday_shift_attention() {
    let net = four_edges();
    let m = BaseModel::new(small_config(6)).unwrap();
    let p = m.init_params(&net, &mut SeedStream::new(4).rng(&[]));
    let mon = m.temporal_attention(&p, ctx(0, 3, false)).unwrap();
    let sun = m.temporal_attention(&p, ctx(6, 3, false)).unwrap();
    let hol = m.temporal_attention(&p, ctx(0, 3, true)).unwrap();
    assert_ne!(mon, sun);
    assert_ne!(mon, hol);
}

#[test]
fn embedding_is_table_rows_without_numeric_signal() {
    let schema = FeatureSchema {
        node_categorical: vec![],
        node_numeric: vec!["lat".into(), "lon".into()],
        edge_categorical: vec![crate::graph::CategoricalSlot {
            name: "road_type".into(),
            cardinality: 3,
        }],
        edge_numeric: vec!["length_m".into(), "speed_limit_kph".into()],
    };
    let nodes = (0..3)
        .map(|i| NodeRecord {
            id: format!("n{i}"),
            categorical: vec![],
            numeric: vec![0.0, 0.0],
        })
        .collect();
    let e = |k: usize, f, t, c| EdgeRecord {
        id: format!("e{k}"),
        from: f,
        to: t,
        categorical: vec![c],
        numeric: vec![50.0, 30.0],
    };
    let net = RoadNetwork::new(schema, nodes, vec![e(0, 0, 1, 2), e(1, 1, 2, 0), e(2, 2, 0, 2)]).unwrap();
    let mut cfg = small_config(4);
    cfg.identity_embedding = false;
    let m = BaseModel::new(cfg).unwrap();
    let mut p = m.init_params(&net, &mut SeedStream::new(1).rng(&[]));
    p.get_mut("edge.num.b").unwrap().scale(0.0);
    let (he, _) = m.embed_features(&net, &p).unwrap();
    let table = p.get("edge.cat.road_type").unwrap();
    assert_eq!(he.row(0), table.row(2));
    assert_eq!(he.row(1), table.row(0));
    assert_eq!(he.row(0), he.row(2));
}

#[test]
fn zero_head_gives_zero_state() {
    let net = four_edges();
    let m = BaseModel::new(small_config(4)).unwrap();
    let mut p = m.init_params(&net, &mut SeedStream::new(2).rng(&[]));
    for n in ["edge.head.w", "edge.head.b", "node.head.w", "node.head.b"] {
        p.get_mut(n).unwrap().scale(0.0);
    }
    let s = m.traffic_state(&net, &p, ctx(1, 2, false)).unwrap();
    assert!(s.y_edges.iter().chain(&s.y_nodes).all(|&y| y == 0.0));
    assert_eq!((s.y_edges.len(), s.y_nodes.len()), (4, 4));
}

#[test]
fn ones_head_with_uniform_attention() {
    // I = K = 3 and a = 1/K per component, so Y = I/K = 1
    let net = four_edges();
    let mut cfg = small_config(3);
    cfg.temporal_dim = 3;
    let m = BaseModel::new(cfg).unwrap();
    let mut p = m.init_params(&net, &mut SeedStream::new(2).rng(&[]));
    zero_temporal(&mut p);
    p.get_mut("edge.head.w").unwrap().scale(0.0);
    p.get_mut("edge.head.b").unwrap().data_mut().fill(1.0);
    let s = m.traffic_state(&net, &p, ctx(3, 1, true)).unwrap();
    for y in &s.y_edges {
        assert!((y - 1.0).abs() < 1e-15);
    }
}

#[test]
fn output_scale_multiplies_state() {
    let net = four_edges();
    let m1 = BaseModel::new(small_config(4)).unwrap();
    let mut cfg = small_config(4);
    cfg.output_scale_s = 250.0;
    let m2 = BaseModel::new(cfg).unwrap();
    let p = m1.init_params(&net, &mut SeedStream::new(7).rng(&[]));
    let c = ctx(2, 3, false);
    let (s1, s2) = (m1.traffic_state(&net, &p, c).unwrap(), m2.traffic_state(&net, &p, c).unwrap());
    for (a, b) in s1.y_edges.iter().zip(&s2.y_edges) {
        assert!((250.0 * a - b).abs() < 1e-9);
    }
}

#[test]
fn route_sums() {
    let state = TrafficState {
        ctx: ctx(0, 5, false),
        y_edges: vec![10.0, 20.0, 30.0],
        y_nodes: vec![5.0, 6.0, 7.0],
    };
    let single = Route::new(vec![Step::Edge(2)], 0, "d");
    assert_eq!(predict_route(&state, &single, 5).unwrap(), 30.0);
    let two = Route::new(vec![Step::Edge(0), Step::Node(0), Step::Edge(1)], 0, "d");
    assert_eq!(predict_route(&state, &two, 5).unwrap(), 35.0);
    assert!(matches!(predict_route(&state, &two, 4), Err(ModelError::RouteMismatch(_))));
    let off = Route::new(vec![Step::Edge(3)], 0, "d");
    assert!(predict_route(&state, &off, 5).is_err());
}

#[test]
fn route_sum_matches_resummation_oracle() {
    let net = ring();
    let m = BaseModel::new(small_config(4)).unwrap();
    let p = m.init_params(&net, &mut SeedStream::new(11).rng(&[]));
    let state = m.traffic_state(&net, &p, ctx(4, 0, false)).unwrap();
    let mut rng = SeedStream::new(12).rng(&[]);
    for _ in 0..100 {
        let mut at = rng.random_range(0..net.num_nodes());
        let mut edges = Vec::new();
        for _ in 0..rng.random_range(1..8) {
            let out = net.out_edges(at);
            let e = out[rng.random_range(0..out.len())];
            edges.push(e);
            at = net.edges()[e].to;
        }
        let route = Route::from_edges(&net, &edges, 0, "d");
        let mut oracle = 0.0;
        for (i, &e) in edges.iter().enumerate() {
            oracle += state.y_edges[e];
            if i + 1 < edges.len() {
                oracle += state.y_nodes[net.edges()[e].to];
            }
        }
        let got = predict_route(&state, &route, 0).unwrap();
        assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
    }
}

#[test]
fn final_prediction_adds_bias() {
    assert_eq!(predict_final(100.0, 0.0), 100.0);
    assert_eq!(predict_final(100.0, -10.0), 90.0);
}

#[test]
fn constant_bias_fits_mean_residual() {
    let pm = PersonalModel::new(PersonalConfig { embed_dim: 2, top_k: 1 }, 1, 1, ProfileNormalizer::default());
    let prof = DriverProfile {
        break_start_hour: 12.0,
        break_end_hour: 13.0,
        top_regions: vec![0],
        top_edges: vec![0],
        avg_trip_distance_m: 1000.0,
        trips_per_day: 3.0,
    };
    let residuals = [5.0, 19.0, 12.0, 8.0, 16.0];
    let y_hat = [100.0; 5];
    let y: Vec<f64> = residuals.iter().map(|r| 100.0 + r).collect();
    let batch = personal_samples(&prof, &y, &y_hat).unwrap();
    let mut p = pm.zero_params();
    for _ in 0..500 {
        let (_, g) = pm.loss_and_grad(&p, &batch).unwrap();
        p = crate::nn::sgd_step(&p, &g, 0.05).unwrap();
    }
    assert!((pm.personal_bias(&prof, &p).unwrap() - 12.0).abs() < 1e-9);
}

#[test]
fn base_loss_trivial_cases() {
    let net = four_edges();
    let m = BaseModel::new(small_config(4)).unwrap();
    let mut p = m.init_params(&net, &mut SeedStream::new(5).rng(&[]));
    let r = Route::from_edges(&net, &[0, 1], 0, "d");
    let c = ctx(0, 1, false);
    assert!(matches!(m.loss_and_grad(&net, &p, &[]), Err(ModelError::EmptyBatch)));

    let y = m.predict(&net, &p, &[Sample { route: &r, ctx: c, y: 0.0 }]).unwrap()[0];
    let (loss, g) = m.loss_and_grad(&net, &p, &[Sample { route: &r, ctx: c, y }]).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(g.max_abs(), 0.0);

    for n in ["edge.head.w", "edge.head.b", "node.head.w", "node.head.b"] {
        p.get_mut(n).unwrap().scale(0.0);
    }
    let (loss, _) = m.loss_and_grad(&net, &p, &[Sample { route: &r, ctx: c, y: 3.0 }]).unwrap();
    assert_eq!(loss, 9.0);
}

#[test]
fn base_loss_matches_state_and_route_sum() {
    let net = ring();
    let m = BaseModel::new(small_config(5)).unwrap();
    let p = m.init_params(&net, &mut SeedStream::new(6).rng(&[]));
    let r1 = Route::from_edges(&net, &[0, 2, 4], 0, "a");
    let r2 = Route::from_edges(&net, &[9], 0, "b");
    let (c1, c2) = (ctx(1, 4, false), ctx(5, 0, true));
    let batch = [
        Sample { route: &r1, ctx: c1, y: 2.0 },
        Sample { route: &r2, ctx: c2, y: -1.0 },
    ];
    let (loss, _) = m.loss_and_grad(&net, &p, &batch).unwrap();
    let s1 = m.traffic_state(&net, &p, c1).unwrap();
    let s2 = m.traffic_state(&net, &p, c2).unwrap();
    let oracle = (predict_route(&s1, &r1, 4).unwrap() - 2.0).powi(2) + (predict_route(&s2, &r2, 0).unwrap() + 1.0).powi(2);
    assert!((loss - oracle).abs() < 1e-12);
}

#[test]
fn end_to_end_gradient_check() {
    let net = four_edges();
    for (seed, hops, layers) in [(0, 2, 1), (1, 1, 2), (2, 0, 1), (3, 2, 2), (4, 3, 1)] {
        let mut cfg = small_config(4);
        cfg.hops = hops;
        cfg.gcn_layers = layers;
        cfg.output_scale_s = 3.0;
        let m = BaseModel::new(cfg).unwrap();
        let p = m.init_params(&net, &mut SeedStream::new(seed).rng(&[]));
        let r1 = Route::from_edges(&net, &[0, 1, 2], 0, "a");
        let r2 = Route::from_edges(&net, &[3], 0, "b");
        let batch = [
            Sample { route: &r1, ctx: ctx(2, 1, false), y: 4.0 },
            Sample { route: &r2, ctx: ctx(6, 3, true), y: -2.0 },
            Sample { route: &r2, ctx: ctx(2, 1, false), y: 1.5 },
        ];
        let rep = check_gradients(|q| m.loss_and_grad(&net, q, &batch).map_err(ModelError::into_nn), &p, 1e-6).unwrap();
        assert!(rep.max_rel_error < 1e-4, "seed {seed}: {rep:?}");
    }
}

#[test]
fn check_params_rejects_foreign_sets() {
    let net = four_edges();
    let m = BaseModel::new(small_config(4)).unwrap();
    let p = m.init_params(&net, &mut SeedStream::new(0).rng(&[]));
    m.check_params(&net, &p).unwrap();
    let other = BaseModel::new(small_config(5)).unwrap();
    assert!(other.check_params(&net, &p).is_err());
    assert_eq!(edge_indexed_tensors(&p), vec!["edge.id".to_string(), "edge.head.b".to_string()]);
}

#[test]
fn init_is_seeded() {
    let net = four_edges();
    let m = BaseModel::new(small_config(4)).unwrap();
    let a = m.init_params(&net, &mut SeedStream::new(9).rng(&[1]));
    let b = m.init_params(&net, &mut SeedStream::new(9).rng(&[1]));
    let c = m.init_params(&net, &mut SeedStream::new(9).rng(&[2]));
    assert_eq!(a, b);
    assert_ne!(a, c);
    for (name, t) in a.iter() {
        let fan_in = match name {
            "edge.num.w" | "edge.num.b" => 4,
            "node.num.w" | "node.num.b" => 2,
            _ => continue,
        };
        assert!(t.max_abs() <= 1.0 / (fan_in as f64).sqrt());
    }
}
