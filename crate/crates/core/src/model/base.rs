//! The shared base model: feature embedding, graph convolution over the
//! node-wise and line-graph Laplacians, and the spatio-temporal cross product
//! that turns spatial factors and a temporal attention vector into per-edge
//! and per-node travel times.

use std::collections::BTreeMap;

use rand::Rng;

use crate::graph::{RoadNetwork, Route, SparseMatrix};
use crate::nn::{
    dot, embedding_backward, embedding_lookup, linear_backward, linear_forward, relu, relu_backward,
    softmax, uniform_init, Bias, GradSet, ParamSet, SeedStream, Tensor,
};

use super::{ModelConfig, ModelError, TimeContext, TrafficState};

/// Which half of the dual graph a branch runs on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Entity {
    Edge,
    Node,
}

impl Entity {
    pub fn prefix(self) -> &'static str {
        match self {
            Entity::Edge => "edge",
            Entity::Node => "node",
        }
    }
}

/// Parameter names whose leading axis is indexed by edge position.
pub fn edge_indexed_tensors(params: &ParamSet) -> Vec<String> {
    ["edge.id", "edge.head.b"]
        .into_iter()
        .filter(|n| params.contains(n))
        .map(str::to_string)
        .collect()
}

/// A route observation with its time context and observed seconds.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub route: &'a Route,
    pub ctx: TimeContext,
    pub y: f64,
}

/// Stateless description of the base model for a given network; the
/// trainable state lives in a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct BaseModel {
    config: ModelConfig,
}

struct BranchInput<'a> {
    entity: Entity,
    n: usize,
    slots: Vec<(String, Vec<usize>, usize)>,
    numeric: &'a Tensor,
    laplacian: &'a SparseMatrix,
}

/// Intermediates of one graph convolution kept for the backward pass.
pub struct LayerCache {
    /// `L^c h` for c = 0..=C.
    powers: Vec<Tensor>,
    pre: Tensor,
    act: Tensor,
}

struct BranchCache {
    layers: Vec<LayerCache>,
    /// Output of the last graph convolution (input to the head).
    hidden: Tensor,
    /// Head output `hidden · W_μ + b_μ`, one row per entity.
    z: Tensor,
}

/// Temporal table, its per-column softmax, and the attention vector at the
/// context's slot.
pub struct TemporalCache {
    pub ctx: TimeContext,
    pub table: Tensor,
    pub probs: Tensor,
    pub attention: Vec<f64>,
}

fn name(entity: Entity, rest: &str) -> String {
    format!("{}.{rest}", entity.prefix())
}

impl BaseModel {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn branch<'a>(&self, net: &'a RoadNetwork, entity: Entity) -> BranchInput<'a> {
        let schema = net.schema();
        match entity {
            Entity::Edge => BranchInput {
                entity,
                n: net.num_edges(),
                slots: schema
                    .edge_categorical
                    .iter()
                    .enumerate()
                    .map(|(k, s)| (s.name.clone(), net.edge_slot_ids(k), s.cardinality))
                    .collect(),
                numeric: net.edge_numeric(),
                laplacian: net.edge_laplacian(),
            },
            Entity::Node => BranchInput {
                entity,
                n: net.num_nodes(),
                slots: schema
                    .node_categorical
                    .iter()
                    .enumerate()
                    .map(|(k, s)| (s.name.clone(), net.node_slot_ids(k), s.cardinality))
                    .collect(),
                numeric: net.node_numeric(),
                laplacian: net.node_laplacian(),
            },
        }
    }

    /// Seeded uniform(±1/√fan_in) initialization of every tensor.
    pub fn init_params<R: Rng + ?Sized>(&self, net: &RoadNetwork, rng: &mut R) -> ParamSet {
        let c = &self.config;
        let d = c.embed_dim;
        let mut p = ParamSet::new();
        let mut put = |n: String, t: Tensor| p.insert(n, t).expect("unique parameter names");
        for entity in [Entity::Edge, Entity::Node] {
            let b = self.branch(net, entity);
            for (slot, _, vocab) in &b.slots {
                put(name(entity, &format!("cat.{slot}")), uniform_init(rng, &[*vocab, d], d));
            }
            if c.identity_embedding {
                put(name(entity, "id"), uniform_init(rng, &[b.n, d], d));
            }
            let nw = b.numeric.cols();
            put(name(entity, "num.w"), uniform_init(rng, &[nw, d], nw));
            put(name(entity, "num.b"), uniform_init(rng, &[d], nw));
            for l in 0..c.gcn_layers {
                put(name(entity, &format!("gcn.{l}.w")), uniform_init(rng, &[d, d], d));
                put(name(entity, &format!("gcn.{l}.theta")), uniform_init(rng, &[c.hops + 1], c.hops + 1));
            }
            put(name(entity, "head.w"), uniform_init(rng, &[d, c.temporal_dim], d));
            put(name(entity, "head.b"), uniform_init(rng, &[b.n], d));
        }
        let code = c.temporal_code_width();
        let i = c.temporal_dim;
        put("temporal.day".into(), uniform_init(rng, &[7, i], code));
        put("temporal.slot".into(), uniform_init(rng, &[c.slots_per_day, i], code));
        put("temporal.holiday".into(), uniform_init(rng, &[2, c.holiday_dim], c.holiday_dim));
        put("temporal.holiday_proj".into(), uniform_init(rng, &[c.holiday_dim, i], code));
        p
    }

    /// Checks that `params` has exactly the tensors this model needs for `net`.
    pub fn check_params(&self, net: &RoadNetwork, params: &ParamSet) -> Result<(), ModelError> {
        let template = self.init_params(net, &mut SeedStream::new(0).rng(&[]));
        template.ensure_congruent(params).map_err(ModelError::from)
    }

    /// Initial hidden states `h⁰` of edges and nodes: per-slot embedding
    /// lookups, the identity row, and the projected numeric features, summed.
    pub fn embed_features(&self, net: &RoadNetwork, params: &ParamSet) -> Result<(Tensor, Tensor), ModelError> {
        let e = self.embed(&self.branch(net, Entity::Edge), params)?;
        let v = self.embed(&self.branch(net, Entity::Node), params)?;
        Ok((e, v))
    }

    fn embed(&self, b: &BranchInput<'_>, params: &ParamSet) -> Result<Tensor, ModelError> {
        let w = params.get(&name(b.entity, "num.w"))?;
        let bias = params.get(&name(b.entity, "num.b"))?;
        let mut h = linear_forward(b.numeric, w, Bias::PerColumn(bias))?;
        for (slot, ids, _) in &b.slots {
            let table = params.get(&name(b.entity, &format!("cat.{slot}")))?;
            h.add_assign(&embedding_lookup(table, ids)?)?;
        }
        if self.config.identity_embedding {
            h.add_assign(params.get(&name(b.entity, "id"))?)?;
        }
        Ok(h)
    }

    fn forward_branch(&self, b: &BranchInput<'_>, params: &ParamSet) -> Result<BranchCache, ModelError> {
        let mut h = self.embed(b, params)?;
        let mut layers = Vec::with_capacity(self.config.gcn_layers);
        for l in 0..self.config.gcn_layers {
            let w = params.get(&name(b.entity, &format!("gcn.{l}.w")))?;
            let theta = params.get(&name(b.entity, &format!("gcn.{l}.theta")))?;
            let (out, cache) = gcn_forward(b.laplacian, &h, w, theta.data())?;
            layers.push(cache);
            h = out;
        }
        let z = linear_forward(
            &h,
            params.get(&name(b.entity, "head.w"))?,
            Bias::PerRow(params.get(&name(b.entity, "head.b"))?),
        )?;
        Ok(BranchCache { layers, hidden: h, z })
    }

    fn backward_branch(
        &self,
        b: &BranchInput<'_>,
        params: &ParamSet,
        cache: &BranchCache,
        dz: &Tensor,
        grads: &mut GradSet,
    ) -> Result<(), ModelError> {
        let e = b.entity;
        let head_w = params.get(&name(e, "head.w"))?;
        let head_b = params.get(&name(e, "head.b"))?;
        let g = linear_backward(&cache.hidden, head_w, Bias::PerRow(head_b), dz)?;
        grads.get_mut(&name(e, "head.w"))?.add_assign(&g.dw)?;
        grads.get_mut(&name(e, "head.b"))?.add_assign(&g.db.expect("bias present"))?;
        let mut dh = g.dx;
        for l in (0..self.config.gcn_layers).rev() {
            let w = params.get(&name(e, &format!("gcn.{l}.w")))?;
            let theta = params.get(&name(e, &format!("gcn.{l}.theta")))?;
            let lg = gcn_backward(b.laplacian, w, theta.data(), &cache.layers[l], &dh)?;
            grads.get_mut(&name(e, &format!("gcn.{l}.w")))?.add_assign(&lg.dw)?;
            grads.get_mut(&name(e, &format!("gcn.{l}.theta")))?.add_assign(&lg.dtheta)?;
            dh = lg.dh;
        }
        // embedding layer
        let w = params.get(&name(e, "num.w"))?;
        let nb = params.get(&name(e, "num.b"))?;
        let g = linear_backward(b.numeric, w, Bias::PerColumn(nb), &dh)?;
        grads.get_mut(&name(e, "num.w"))?.add_assign(&g.dw)?;
        grads.get_mut(&name(e, "num.b"))?.add_assign(&g.db.expect("bias present"))?;
        for (slot, ids, _) in &b.slots {
            embedding_backward(grads.get_mut(&name(e, &format!("cat.{slot}")))?, ids, &dh)?;
        }
        if self.config.identity_embedding {
            grads.get_mut(&name(e, "id"))?.add_assign(&dh)?;
        }
        Ok(())
    }

    /// The `K × I` temporal table for `ctx`. Row `s` holds the projected
    /// time-of-day code of slot `s`; the current slot's row additionally
    /// carries the projected day-of-week and holiday code of `ctx`.
    pub fn temporal_table(&self, params: &ParamSet, ctx: TimeContext) -> Result<Tensor, ModelError> {
        let c = &self.config;
        if ctx.slot >= c.slots_per_day || ctx.day_of_week > 6 {
            return Err(ModelError::InvalidContext(format!("{ctx:?} with K = {}", c.slots_per_day)));
        }
        let day = params.get("temporal.day")?;
        let hol = params.get("temporal.holiday")?;
        let proj = params.get("temporal.holiday_proj")?;
        let hol_code = Tensor::matrix(1, c.holiday_dim, hol.row(ctx.is_holiday as usize).to_vec())?;
        let hol_row = hol_code.matmul(proj)?;
        let mut table = params.get("temporal.slot")?.clone();
        for ((t, d), h) in table.row_mut(ctx.slot).iter_mut().zip(day.row(ctx.day_of_week)).zip(hol_row.data()) {
            *t += d + h;
        }
        Ok(table)
    }

    pub fn temporal_forward(&self, params: &ParamSet, ctx: TimeContext) -> Result<TemporalCache, ModelError> {
        let table = self.temporal_table(params, ctx)?;
        let (probs, attention) = column_softmax_at(&table, ctx.slot);
        Ok(TemporalCache {
            ctx,
            table,
            probs,
            attention,
        })
    }

    /// Attention vector `a ∈ ℝ^I` for `ctx`.
    pub fn temporal_attention(&self, params: &ParamSet, ctx: TimeContext) -> Result<Vec<f64>, ModelError> {
        Ok(self.temporal_forward(params, ctx)?.attention)
    }

    fn temporal_backward(
        &self,
        params: &ParamSet,
        cache: &TemporalCache,
        da: &[f64],
        grads: &mut GradSet,
    ) -> Result<(), ModelError> {
        let c = &self.config;
        let (k, i_dim) = (c.slots_per_day, c.temporal_dim);
        let t = cache.ctx.slot;
        // dT[s,i] = da_i · a_i · (δ_{s,t} − p[s,i])
        let mut dt = Tensor::zeros(&[k, i_dim]);
        for s in 0..k {
            for i in 0..i_dim {
                let delta = if s == t { 1.0 } else { 0.0 };
                dt.row_mut(s)[i] = da[i] * cache.attention[i] * (delta - cache.probs.at(s, i));
            }
        }
        grads.get_mut("temporal.slot")?.add_assign(&dt)?;
        let dshared = Tensor::vector(dt.row(t).to_vec());
        for (g, v) in grads
            .get_mut("temporal.day")?
            .row_mut(cache.ctx.day_of_week)
            .iter_mut()
            .zip(dshared.data())
        {
            *g += v;
        }
        let hol = params.get("temporal.holiday")?;
        let proj = params.get("temporal.holiday_proj")?;
        let h_idx = cache.ctx.is_holiday as usize;
        let code = Tensor::matrix(1, c.holiday_dim, hol.row(h_idx).to_vec())?;
        let drow = Tensor::matrix(1, i_dim, dshared.data().to_vec())?;
        grads.get_mut("temporal.holiday_proj")?.add_assign(&code.t_matmul(&drow)?)?;
        let dcode = drow.matmul_t(proj)?;
        for (g, v) in grads.get_mut("temporal.holiday")?.row_mut(h_idx).iter_mut().zip(dcode.data()) {
            *g += v;
        }
        Ok(())
    }

    /// `Y_e = scale · (h_e W_μe + b_μe) · a` and likewise for nodes.
    pub fn traffic_state(&self, net: &RoadNetwork, params: &ParamSet, ctx: TimeContext) -> Result<TrafficState, ModelError> {
        let (ze, zv) = self.spatial_factors(net, params)?;
        let a = self.temporal_attention(params, ctx)?;
        Ok(cross_product(&ze, &zv, &a, self.config.output_scale_s, ctx))
    }

    /// Traffic states for many contexts, sharing one spatial pass.
    pub fn traffic_states(
        &self,
        net: &RoadNetwork,
        params: &ParamSet,
        ctxs: &[TimeContext],
    ) -> Result<Vec<TrafficState>, ModelError> {
        let (ze, zv) = self.spatial_factors(net, params)?;
        ctxs.iter()
            .map(|&ctx| {
                let a = self.temporal_attention(params, ctx)?;
                Ok(cross_product(&ze, &zv, &a, self.config.output_scale_s, ctx))
            })
            .collect()
    }

    /// Head outputs `(z_e, z_v)`, the spatial factors of the cross product.
    pub fn spatial_factors(&self, net: &RoadNetwork, params: &ParamSet) -> Result<(Tensor, Tensor), ModelError> {
        let e = self.forward_branch(&self.branch(net, Entity::Edge), params)?;
        let v = self.forward_branch(&self.branch(net, Entity::Node), params)?;
        Ok((e.z, v.z))
    }

    /// Sum of squared errors over `batch` and its gradient w.r.t. every base
    /// parameter.
    pub fn loss_and_grad(
        &self,
        net: &RoadNetwork,
        params: &ParamSet,
        batch: &[Sample<'_>],
    ) -> Result<(f64, GradSet), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let eb = self.branch(net, Entity::Edge);
        let vb = self.branch(net, Entity::Node);
        let ec = self.forward_branch(&eb, params)?;
        let vc = self.forward_branch(&vb, params)?;
        let j = self.config.temporal_dim;
        let scale = self.config.output_scale_s;

        let mut temporal: BTreeMap<TimeContext, (TemporalCache, Vec<f64>)> = BTreeMap::new();
        let mut dze = Tensor::zeros(ec.z.shape());
        let mut dzv = Tensor::zeros(vc.z.shape());
        let mut loss = 0.0;
        for s in batch {
            if !temporal.contains_key(&s.ctx) {
                temporal.insert(s.ctx, (self.temporal_forward(params, s.ctx)?, vec![0.0; j]));
            }
            let (cache, da) = temporal.get_mut(&s.ctx).expect("inserted above");
            let factor = route_factor(s.route, &ec.z, &vc.z)?;
            let y_hat = scale * dot(&factor, &cache.attention);
            let r = y_hat - s.y;
            loss += r * r;
            let g = 2.0 * r * scale;
            for e in s.route.edges() {
                for (d, a) in dze.row_mut(e).iter_mut().zip(&cache.attention) {
                    *d += g * a;
                }
            }
            for v in s.route.nodes() {
                for (d, a) in dzv.row_mut(v).iter_mut().zip(&cache.attention) {
                    *d += g * a;
                }
            }
            for (d, f) in da.iter_mut().zip(&factor) {
                *d += g * f;
            }
        }
        let mut grads = GradSet::zeros_like(params);
        for (cache, da) in temporal.values() {
            self.temporal_backward(params, cache, da, &mut grads)?;
        }
        self.backward_branch(&eb, params, &ec, &dze, &mut grads)?;
        self.backward_branch(&vb, params, &vc, &dzv, &mut grads)?;
        Ok((loss, grads))
    }

    /// Predictions ŷ for each sample (no gradient).
    pub fn predict(&self, net: &RoadNetwork, params: &ParamSet, batch: &[Sample<'_>]) -> Result<Vec<f64>, ModelError> {
        let (ze, zv) = self.spatial_factors(net, params)?;
        let mut attn: BTreeMap<TimeContext, Vec<f64>> = BTreeMap::new();
        batch
            .iter()
            .map(|s| {
                if !attn.contains_key(&s.ctx) {
                    attn.insert(s.ctx, self.temporal_attention(params, s.ctx)?);
                }
                let factor = route_factor(s.route, &ze, &zv)?;
                Ok(self.config.output_scale_s * dot(&factor, &attn[&s.ctx]))
            })
            .collect()
    }
}

/// Σ of head rows over the route's edges and interior nodes.
fn route_factor(route: &Route, ze: &Tensor, zv: &Tensor) -> Result<Vec<f64>, ModelError> {
    let mut f = vec![0.0; ze.cols()];
    for e in route.edges() {
        if e >= ze.rows() {
            return Err(ModelError::RouteMismatch(format!("edge #{e} outside network")));
        }
        for (acc, v) in f.iter_mut().zip(ze.row(e)) {
            *acc += v;
        }
    }
    for v in route.nodes() {
        if v >= zv.rows() {
            return Err(ModelError::RouteMismatch(format!("node #{v} outside network")));
        }
        for (acc, x) in f.iter_mut().zip(zv.row(v)) {
            *acc += x;
        }
    }
    Ok(f)
}

fn cross_product(ze: &Tensor, zv: &Tensor, a: &[f64], scale: f64, ctx: TimeContext) -> TrafficState {
    TrafficState {
        ctx,
        y_edges: (0..ze.rows()).map(|e| scale * dot(ze.row(e), a)).collect(),
        y_nodes: (0..zv.rows()).map(|v| scale * dot(zv.row(v), a)).collect(),
    }
}

/// Softmax of every column of `table` over its rows, plus row `slot` of the
/// result.
pub fn column_softmax_at(table: &Tensor, slot: usize) -> (Tensor, Vec<f64>) {
    let (k, i_dim) = (table.rows(), table.cols());
    let mut probs = Tensor::zeros(&[k, i_dim]);
    for i in 0..i_dim {
        let col: Vec<f64> = (0..k).map(|s| table.at(s, i)).collect();
        for (s, p) in softmax(&col).into_iter().enumerate() {
            probs.row_mut(s)[i] = p;
        }
    }
    let attention = probs.row(slot).to_vec();
    (probs, attention)
}

/// Attention read directly off a given `K × I` table.
pub fn attention_from_table(table: &Tensor, slot: usize) -> Result<Vec<f64>, ModelError> {
    if slot >= table.rows() {
        return Err(ModelError::InvalidContext(format!("slot {slot} >= K = {}", table.rows())));
    }
    Ok(column_softmax_at(table, slot).1)
}

/// One graph convolution `σ(Σ_c θ_c L^c h) W` with σ = ReLU.
pub fn gcn_forward(
    laplacian: &SparseMatrix,
    h: &Tensor,
    w: &Tensor,
    theta: &[f64],
) -> Result<(Tensor, LayerCache), ModelError> {
    if laplacian.dim() != h.rows() {
        return Err(ModelError::Shape(format!(
            "Laplacian {} x {} vs hidden {:?}",
            laplacian.dim(),
            laplacian.dim(),
            h.shape()
        )));
    }
    if theta.is_empty() {
        return Err(ModelError::Shape("theta needs at least one coefficient".into()));
    }
    let mut powers = vec![h.clone()];
    for _ in 1..theta.len() {
        let next = laplacian.matmul_dense(powers.last().expect("non-empty"))?;
        powers.push(next);
    }
    let mut pre = Tensor::zeros(h.shape());
    for (p, &t) in powers.iter().zip(theta) {
        pre.axpy(t, p)?;
    }
    let act = relu(&pre);
    let out = act.matmul(w)?;
    Ok((out, LayerCache { powers, pre, act }))
}

pub struct GcnGrads {
    pub dh: Tensor,
    pub dw: Tensor,
    pub dtheta: Tensor,
}

pub fn gcn_backward(
    laplacian: &SparseMatrix,
    w: &Tensor,
    theta: &[f64],
    cache: &LayerCache,
    dout: &Tensor,
) -> Result<GcnGrads, ModelError> {
    let dw = cache.act.t_matmul(dout)?;
    let dact = dout.matmul_t(w)?;
    let dpre = relu_backward(&cache.pre, &dact)?;
    let dtheta = Tensor::vector(cache.powers.iter().map(|p| dot(p.data(), dpre.data())).collect());
    // L is symmetric, so (L^c)ᵀ dpre = L^c dpre
    let mut q = dpre;
    let mut dh = Tensor::zeros(q.shape());
    for (c, &t) in theta.iter().enumerate() {
        if c > 0 {
            q = laplacian.matmul_dense(&q)?;
        }
        dh.axpy(t, &q)?;
    }
    Ok(GcnGrads { dh, dw, dtheta })
}
