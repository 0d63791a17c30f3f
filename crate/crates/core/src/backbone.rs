//! Gated session-graph network (SR-GNN style) with attention readout.
//!
//! A session is turned into a directed graph over its distinct items.
//! Node states start as item embeddings, go through `steps` rounds of gated
//! propagation over the normalized in/out adjacency, and are read out as a
//! soft-attention sum over positions combined with the last click's state.
//! The readout is the session's structural intent; its dot products with
//! the item table are the backbone's scores.
//!
//! Gradients are hand-derived. `forward` returns a cache that `backward`
//! consumes, and the per-sample gradient keeps item-table rows sparse.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ItemId;
use crate::error::{ensure_finite, Error, Result};
use crate::params::ParamSet;

/// Directed item-transition graph of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionGraph {
    /// Distinct items in order of first appearance.
    pub nodes: Vec<ItemId>,
    /// `a_in[i][j] = 1/indeg(i)` for each distinct edge `j → i`.
    pub a_in: Array2<f64>,
    /// `a_out[i][j] = 1/outdeg(i)` for each distinct edge `i → j`.
    pub a_out: Array2<f64>,
    /// Node index of every sequence position.
    pub alias: Vec<usize>,
}

pub fn build_session_graph(items: &[ItemId]) -> Result<SessionGraph> {
    if items.is_empty() {
        return Err(Error::Validation("cannot build a graph from an empty session".into()));
    }
    let mut nodes: Vec<ItemId> = Vec::new();
    let mut alias = Vec::with_capacity(items.len());
    for &it in items {
        let idx = match nodes.iter().position(|&n| n == it) {
            Some(i) => i,
            None => {
                nodes.push(it);
                nodes.len() - 1
            }
        };
        alias.push(idx);
    }
    let m = nodes.len();
    let mut adj = Array2::<f64>::zeros((m, m));
    for w in alias.windows(2) {
        adj[[w[0], w[1]]] = 1.0;
    }
    let mut a_out = adj.clone();
    for mut row in a_out.rows_mut() {
        let deg = row.sum();
        if deg > 0.0 {
            row /= deg;
        }
    }
    let mut a_in = adj.t().to_owned();
    for mut row in a_in.rows_mut() {
        let deg = row.sum();
        if deg > 0.0 {
            row /= deg;
        }
    }
    Ok(SessionGraph {
        nodes,
        a_in,
        a_out,
        alias,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub d: usize,
    pub n_items: usize,
    pub steps: usize,
    pub seed: u64,
}

/// Propagation and readout weights (everything except the item table).
#[derive(Debug, Clone, PartialEq)]
pub struct GnnWeights {
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
    /// `[a_in | a_out] (2d) → [reset | update | candidate] (3d)`
    pub w_ih: Array2<f64>,
    pub b_ih: Array1<f64>,
    pub w_hh: Array2<f64>,
    pub b_hh: Array1<f64>,
    pub w_last: Array2<f64>,
    pub b_last: Array1<f64>,
    pub w_pos: Array2<f64>,
    pub b_pos: Array1<f64>,
    pub w_att: Array1<f64>,
    /// `[attended | last] (2d) → d`
    pub w_readout: Array2<f64>,
}

crate::impl_param_set!(GnnWeights {
    w_in, b_in, w_out, b_out, w_ih, b_ih, w_hh, b_hh, w_last, b_last, w_pos, b_pos, w_att,
    w_readout,
});

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    pub config: BackboneConfig,
    /// Row `id - 1` embeds item `id`.
    pub embedding: Array2<f64>,
    pub gnn: GnnWeights,
}

impl ParamSet for BackboneParams {
    fn visit(&self, f: &mut crate::params::Visitor<'_>) {
        f("embedding", self.embedding.shape(), self.embedding.as_slice().expect("standard layout"));
        self.gnn.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&'static str, &mut [f64])) {
        f("embedding", self.embedding.as_slice_mut().expect("standard layout"));
        self.gnn.visit_mut(f);
    }
    fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            embedding: Array2::zeros(self.embedding.raw_dim()),
            gnn: self.gnn.zeros_like(),
        }
    }
}

fn uniform2(rng: &mut impl Rng, r: usize, c: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-bound..bound))
}

fn uniform1(rng: &mut impl Rng, n: usize, bound: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.random_range(-bound..bound))
}

impl BackboneParams {
    /// Uniform init in `[-1/√d, 1/√d]`, seeded by `config.seed`.
    pub fn init(config: BackboneConfig) -> Result<Self> {
        if config.d == 0 || config.n_items == 0 {
            return Err(Error::Config("backbone needs d ≥ 1 and at least one item".into()));
        }
        let mut rng = crate::seed::rng(config.seed, "backbone-init");
        let d = config.d;
        let b = 1.0 / (d as f64).sqrt();
        let embedding = uniform2(&mut rng, config.n_items, d, b);
        let gnn = GnnWeights {
            w_in: uniform2(&mut rng, d, d, b),
            b_in: uniform1(&mut rng, d, b),
            w_out: uniform2(&mut rng, d, d, b),
            b_out: uniform1(&mut rng, d, b),
            w_ih: uniform2(&mut rng, 2 * d, 3 * d, b),
            b_ih: uniform1(&mut rng, 3 * d, b),
            w_hh: uniform2(&mut rng, d, 3 * d, b),
            b_hh: uniform1(&mut rng, 3 * d, b),
            w_last: uniform2(&mut rng, d, d, b),
            b_last: uniform1(&mut rng, d, b),
            w_pos: uniform2(&mut rng, d, d, b),
            b_pos: uniform1(&mut rng, d, b),
            w_att: uniform1(&mut rng, d, b),
            w_readout: uniform2(&mut rng, 2 * d, d, b),
        };
        Ok(Self {
            config,
            embedding,
            gnn,
        })
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn n_items(&self) -> usize {
        self.config.n_items
    }

    pub fn check_shapes(&self) -> Result<()> {
        let d = self.d();
        let g = &self.gnn;
        let ok = self.embedding.dim() == (self.n_items(), d)
            && g.w_in.dim() == (d, d)
            && g.w_out.dim() == (d, d)
            && g.w_ih.dim() == (2 * d, 3 * d)
            && g.w_hh.dim() == (d, 3 * d)
            && g.b_ih.len() == 3 * d
            && g.b_hh.len() == 3 * d
            && g.w_last.dim() == (d, d)
            && g.w_pos.dim() == (d, d)
            && g.w_att.len() == d
            && g.w_readout.dim() == (2 * d, d);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "backbone tensors do not match d = {d}, n_items = {}",
                self.n_items()
            )))
        }
    }
}

#[derive(Debug, Clone)]
struct GruCache {
    h: Array2<f64>,
    a: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    gh_n: Array2<f64>,
}

/// Everything `backward` needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub graph: SessionGraph,
    steps: Vec<GruCache>,
    /// Node states after propagation.
    h: Array2<f64>,
    /// States per sequence position.
    hs: Array2<f64>,
    u: Array2<f64>,
    alpha: Array1<f64>,
    readout_in: Array1<f64>,
}

/// Per-session gradient: dense propagation weights, sparse item rows.
#[derive(Debug, Clone)]
pub struct SampleGrad {
    pub gnn: GnnWeights,
    /// `(row, gradient)` for each node of the session graph.
    pub rows: Vec<(usize, Array1<f64>)>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl BackboneParams {
    fn lookup(&self, nodes: &[ItemId]) -> Result<Array2<f64>> {
        let d = self.d();
        let mut h = Array2::zeros((nodes.len(), d));
        for (i, &id) in nodes.iter().enumerate() {
            if id == 0 || id as usize > self.n_items() {
                return Err(Error::UnknownItem(id));
            }
            h.row_mut(i).assign(&self.embedding.row(id as usize - 1));
        }
        Ok(h)
    }

    fn gru_step(&self, graph: &SessionGraph, h: &Array2<f64>) -> (Array2<f64>, GruCache) {
        let d = self.d();
        let g = &self.gnn;
        let p_in = h.dot(&g.w_in) + &g.b_in;
        let p_out = h.dot(&g.w_out) + &g.b_out;
        let a_in = graph.a_in.dot(&p_in);
        let a_out = graph.a_out.dot(&p_out);
        let a = ndarray::concatenate![Axis(1), a_in, a_out];
        let gi = a.dot(&g.w_ih) + &g.b_ih;
        let gh = h.dot(&g.w_hh) + &g.b_hh;
        let r = (&gi.slice(s![.., ..d]) + &gh.slice(s![.., ..d])).mapv(sigmoid);
        let z = (&gi.slice(s![.., d..2 * d]) + &gh.slice(s![.., d..2 * d])).mapv(sigmoid);
        let gh_n = gh.slice(s![.., 2 * d..]).to_owned();
        let n = (&gi.slice(s![.., 2 * d..]) + &(&r * &gh_n)).mapv(f64::tanh);
        let h_next = &n + &(&z * &(h - &n));
        (
            h_next,
            GruCache {
                h: h.clone(),
                a,
                r,
                z,
                n,
                gh_n,
            },
        )
    }

    /// Structural intent of a session plus the cache for `backward`.
    pub fn forward(&self, items: &[ItemId]) -> Result<(Array1<f64>, ForwardCache)> {
        let graph = build_session_graph(items)?;
        self.forward_graph(graph)
    }

    pub fn forward_graph(&self, graph: SessionGraph) -> Result<(Array1<f64>, ForwardCache)> {
        let d = self.d();
        let g = &self.gnn;
        let mut h = self.lookup(&graph.nodes)?;
        let mut steps = Vec::with_capacity(self.config.steps);
        for _ in 0..self.config.steps {
            let (next, cache) = self.gru_step(&graph, &h);
            steps.push(cache);
            h = next;
        }
        let l = graph.alias.len();
        let mut hs = Array2::zeros((l, d));
        for (p, &node) in graph.alias.iter().enumerate() {
            hs.row_mut(p).assign(&h.row(node));
        }
        let last = hs.row(l - 1).to_owned();
        let q_last = last.dot(&g.w_last) + &g.b_last;
        let u = (hs.dot(&g.w_pos) + &g.b_pos + &q_last).mapv(sigmoid);
        let alpha = u.dot(&g.w_att);
        let attended = hs.t().dot(&alpha);
        let readout_in = ndarray::concatenate![Axis(0), attended, last];
        let intent = readout_in.dot(&g.w_readout);
        ensure_finite("structural intent", intent.as_slice().expect("contiguous"))?;
        Ok((
            intent,
            ForwardCache {
                graph,
                steps,
                h,
                hs,
                u,
                alpha,
                readout_in,
            },
        ))
    }

    /// Scores of every item (`scores[id - 1]`) for a session representation.
    pub fn scores(&self, session_vec: ArrayView1<f64>) -> Array1<f64> {
        self.embedding.dot(&session_vec)
    }

    /// Backbone-only scores for a session.
    pub fn score_session(&self, items: &[ItemId]) -> Result<Array1<f64>> {
        let (g, _) = self.forward(items)?;
        Ok(self.scores(g.view()))
    }

    /// Gradient of a scalar loss through the structural intent, given
    /// `d_intent = ∂L/∂intent`. Item-table gradients from scoring are not
    /// included; the caller adds those.
    pub fn backward(&self, cache: &ForwardCache, d_intent: ArrayView1<f64>) -> SampleGrad {
        let d = self.d();
        let g = &self.gnn;
        let mut grad = g.zeros_like();

        // readout
        grad.w_readout = outer(cache.readout_in.view(), d_intent);
        let d_in = g.w_readout.dot(&d_intent);
        let d_att = d_in.slice(s![..d]).to_owned();
        let mut d_last = d_in.slice(s![d..]).to_owned();

        let l = cache.hs.nrows();
        let d_alpha = cache.hs.dot(&d_att);
        let mut d_hs = outer(cache.alpha.view(), d_att.view());
        grad.w_att = cache.u.t().dot(&d_alpha);
        let d_u = outer(d_alpha.view(), g.w_att.view());
        let d_pre = &d_u * &cache.u.mapv(|v| v * (1.0 - v));
        let d_q_last = d_pre.sum_axis(Axis(0));
        let last = cache.hs.row(l - 1);
        grad.w_last = outer(last, d_q_last.view());
        grad.b_last = d_q_last.clone();
        d_last += &g.w_last.dot(&d_q_last);
        grad.w_pos = cache.hs.t().dot(&d_pre);
        grad.b_pos = d_q_last;
        d_hs += &d_pre.dot(&g.w_pos.t());
        {
            let mut row = d_hs.row_mut(l - 1);
            row += &d_last;
        }

        let mut d_h = Array2::<f64>::zeros(cache.h.raw_dim());
        for (p, &node) in cache.graph.alias.iter().enumerate() {
            let mut row = d_h.row_mut(node);
            row += &d_hs.row(p);
        }

        for step in cache.steps.iter().rev() {
            d_h = self.gru_backward(&cache.graph, step, &d_h, &mut grad);
        }

        let rows = cache
            .graph
            .nodes
            .iter()
            .enumerate()
            .map(|(i, &id)| (id as usize - 1, d_h.row(i).to_owned()))
            .collect();
        SampleGrad { gnn: grad, rows }
    }

    fn gru_backward(
        &self,
        graph: &SessionGraph,
        c: &GruCache,
        d_next: &Array2<f64>,
        grad: &mut GnnWeights,
    ) -> Array2<f64> {
        let d = self.d();
        let g = &self.gnn;
        let d_n = d_next * &c.z.mapv(|v| 1.0 - v);
        let d_z = d_next * &(&c.h - &c.n);
        let mut d_h = d_next * &c.z;

        let d_n_pre = &d_n * &c.n.mapv(|v| 1.0 - v * v);
        let d_r = &d_n_pre * &c.gh_n;
        let d_z_pre = &d_z * &c.z.mapv(|v| v * (1.0 - v));
        let d_r_pre = &d_r * &c.r.mapv(|v| v * (1.0 - v));

        let d_gi = ndarray::concatenate![Axis(1), d_r_pre, d_z_pre, d_n_pre];
        let d_gh = ndarray::concatenate![Axis(1), d_r_pre, d_z_pre, &d_n_pre * &c.r];

        grad.w_ih += &c.a.t().dot(&d_gi);
        grad.b_ih += &d_gi.sum_axis(Axis(0));
        grad.w_hh += &c.h.t().dot(&d_gh);
        grad.b_hh += &d_gh.sum_axis(Axis(0));
        let d_a = d_gi.dot(&g.w_ih.t());
        d_h += &d_gh.dot(&g.w_hh.t());

        let d_p_in = graph.a_in.t().dot(&d_a.slice(s![.., ..d]));
        let d_p_out = graph.a_out.t().dot(&d_a.slice(s![.., d..]));
        grad.w_in += &c.h.t().dot(&d_p_in);
        grad.b_in += &d_p_in.sum_axis(Axis(0));
        grad.w_out += &c.h.t().dot(&d_p_out);
        grad.b_out += &d_p_out.sum_axis(Axis(0));
        d_h += &d_p_in.dot(&g.w_in.t());
        d_h += &d_p_out.dot(&g.w_out.t());
        d_h
    }
}

pub(crate) fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, &x) in a.iter().enumerate() {
        out.row_mut(i).scaled_add(x, &b);
    }
    out
}

impl SampleGrad {
    /// Adds this sample's gradient into a dense full gradient.
    pub fn accumulate_into(&self, full: &mut BackboneParams) {
        full.gnn.add_scaled(&self.gnn, 1.0);
        for (row, g) in &self.rows {
            let mut r = full.embedding.row_mut(*row);
            r += g;
        }
    }
}

/// What the trainer needs from a session encoder: a structural intent per
/// session, an item table to score against, and a backward pass whose
/// per-sample gradients can be merged before they touch the dense
/// parameters.
pub trait Backbone: ParamSet + Send + Sync {
    type Cache: Send + Sync;
    type Grad: Send;

    fn dim(&self) -> usize;
    fn item_table(&self) -> ArrayView2<'_, f64>;
    fn item_table_mut(&mut self) -> ArrayViewMut2<'_, f64>;
    fn encode(&self, items: &[ItemId]) -> Result<(Array1<f64>, Self::Cache)>;
    fn backward(&self, cache: &Self::Cache, d_intent: ArrayView1<f64>) -> Self::Grad;
    fn merge_grad(into: &mut Self::Grad, other: Self::Grad);
    fn apply_grad(grad: &Self::Grad, dense: &mut Self);
}

impl Backbone for BackboneParams {
    type Cache = ForwardCache;
    type Grad = SampleGrad;

    fn dim(&self) -> usize {
        self.d()
    }

    fn item_table(&self) -> ArrayView2<'_, f64> {
        self.embedding.view()
    }

    fn item_table_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        self.embedding.view_mut()
    }

    fn encode(&self, items: &[ItemId]) -> Result<(Array1<f64>, ForwardCache)> {
        self.forward(items)
    }

    fn backward(&self, cache: &ForwardCache, d_intent: ArrayView1<f64>) -> SampleGrad {
        BackboneParams::backward(self, cache, d_intent)
    }

    fn merge_grad(into: &mut SampleGrad, other: SampleGrad) {
        into.gnn.add_scaled(&other.gnn, 1.0);
        into.rows.extend(other.rows);
    }

    fn apply_grad(grad: &SampleGrad, dense: &mut Self) {
        grad.accumulate_into(dense);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg(d: usize, n: usize, steps: usize) -> BackboneConfig {
        BackboneConfig {
            d,
            n_items: n,
            steps,
            seed: 11,
        }
    }

    #[test]
    fn chain_graph() {
        let g = build_session_graph(&[1, 2, 3]).unwrap();
        assert_eq!(g.nodes, vec![1, 2, 3]);
        assert_eq!(g.alias, vec![0, 1, 2]);
        assert_eq!(g.a_out[[0, 1]], 1.0);
        assert_eq!(g.a_out[[1, 2]], 1.0);
        assert_eq!(g.a_out.sum(), 2.0);
        assert_eq!(g.a_in[[1, 0]], 1.0);
        assert_eq!(g.a_in[[2, 1]], 1.0);
    }

    #[test]
    fn revisit_makes_cycle() {
        let g = build_session_graph(&[1, 2, 1]).unwrap();
        assert_eq!(g.nodes, vec![1, 2]);
        assert_eq!(g.alias, vec![0, 1, 0]);
        assert_eq!(g.a_out, ndarray::array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn out_degree_normalization() {
        let g = build_session_graph(&[1, 2, 3, 2, 4]).unwrap();
        // hand-built: node indices 1→0, 2→1, 3→2, 4→3; edges 0→1, 1→2, 2→1, 1→3
        let mut out = Array2::<f64>::zeros((4, 4));
        out[[0, 1]] = 1.0;
        out[[1, 2]] = 0.5;
        out[[1, 3]] = 0.5;
        out[[2, 1]] = 1.0;
        assert_eq!(g.a_out, out);
        // node 1 (item 2) has incoming edges from items 1 and 3
        assert_eq!(g.a_in.row(1).to_vec(), vec![0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn duplicate_edges_collapse_rows_stochastic() {
        let g = build_session_graph(&[1, 2, 1, 2, 1, 3]).unwrap();
        for r in g.a_out.rows().into_iter().chain(g.a_in.rows()) {
            let s = r.sum();
            assert!(s == 0.0 || (s - 1.0).abs() < 1e-12);
        }
        assert_eq!(g.a_out[[0, 1]], 0.5);
    }

    #[test]
    fn empty_session_rejected() {
        assert!(build_session_graph(&[]).is_err());
    }

    #[test]
    fn single_item_zero_readout_is_linear_map_of_embedding() {
        let mut p = BackboneParams::init(cfg(6, 5, 0)).unwrap();
        p.gnn.w_att.fill(0.0);
        let (g, _) = p.forward(&[3]).unwrap();
        let expected = p.embedding.row(2).dot(&p.gnn.w_readout.slice(s![6.., ..]));
        for (a, b) in g.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let scores = p.scores(g.view());
        assert_abs_diff_eq!(scores[1], p.embedding.row(1).dot(&g), epsilon = 1e-12);
    }

    #[test]
    fn output_shape_and_finiteness() {
        let p = BackboneParams::init(cfg(10, 20, 1)).unwrap();
        let (g, _) = p.forward(&[4, 9, 4, 17]).unwrap();
        assert_eq!(g.len(), 10);
        assert!(g.iter().all(|v| v.is_finite()));
        assert_eq!(p.score_session(&[4, 9]).unwrap().len(), 20);
    }

    #[test]
    fn unknown_item_is_an_error() {
        let p = BackboneParams::init(cfg(4, 3, 1)).unwrap();
        assert!(matches!(p.forward(&[1, 9]), Err(Error::UnknownItem(9))));
    }

    #[test]
    fn order_sensitive() {
        let p = BackboneParams::init(cfg(8, 10, 1)).unwrap();
        let a = p.score_session(&[1, 2, 3]).unwrap();
        let b = p.score_session(&[3, 2, 1]).unwrap();
        assert!(a.iter().zip(b.iter()).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn shape_check_catches_mismatch() {
        let mut p = BackboneParams::init(cfg(4, 3, 1)).unwrap();
        assert!(p.check_shapes().is_ok());
        p.gnn.w_in = Array2::zeros((3, 3));
        assert!(matches!(p.check_shapes(), Err(Error::Config(_))));
    }
}
