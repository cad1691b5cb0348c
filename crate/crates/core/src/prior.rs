//! Knowledge-informed prior over the latent vector.
//!
//! A small relational graph convolution network is trained on link
//! prediction over an event knowledge graph; the per-relation diagonals of
//! its DistMult edge scorer become relation embeddings, which are laid out
//! per relation segment of z-space to form the prior mean. Covariance is
//! the identity.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{config_err, invalid};
use crate::numerics::{add_outer, add_transpose_matvec, affine, dot, norm, sigmoid, softplus, SeededRng};
use crate::optim::{Adam, AdamConfig};
use crate::scorers::RelationSet;
use crate::Result;

/// Relation name of edges added by [`augment_similarity_edges`].
pub const SIMILAR_TO: &str = "SimilarTo";

/// Default cosine threshold for similarity edges.
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.9;

/// Nodes with frozen feature vectors and typed directed edges.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    feature_dim: usize,
    nodes: Vec<String>,
    node_index: BTreeMap<String, usize>,
    features: Vec<Vec<f64>>,
    relations: Vec<String>,
    edges: Vec<(usize, usize, usize)>,
    edge_set: BTreeSet<(usize, usize, usize)>,
}

impl KnowledgeGraph {
    pub fn new(feature_dim: usize) -> Result<Self> {
        if feature_dim == 0 {
            return Err(invalid!("node features must have positive dimension"));
        }
        Ok(Self {
            feature_dim,
            nodes: Vec::new(),
            node_index: BTreeMap::new(),
            features: Vec::new(),
            relations: Vec::new(),
            edges: Vec::new(),
            edge_set: BTreeSet::new(),
        })
    }

    pub fn add_node(&mut self, id: impl Into<String>, features: Vec<f64>) -> Result<usize> {
        let id = id.into();
        if features.len() != self.feature_dim {
            return Err(invalid!(
                "node {id} has {} features, graph expects {}",
                features.len(),
                self.feature_dim
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("node {id} has non-finite features"));
        }
        if self.node_index.contains_key(&id) {
            return Err(invalid!("duplicate node {id}"));
        }
        let idx = self.nodes.len();
        self.node_index.insert(id.clone(), idx);
        self.nodes.push(id);
        self.features.push(features);
        Ok(idx)
    }

    /// Adds `head --relation--> tail`. Repeated edges are ignored.
    pub fn add_edge(&mut self, head: &str, relation: &str, tail: &str) -> Result<()> {
        let h = self.node(head)?;
        let t = self.node(tail)?;
        if h == t {
            return Err(invalid!("self-loop edge {head} {relation} {tail}"));
        }
        if relation.is_empty() {
            return Err(invalid!("empty relation name"));
        }
        let r = match self.relations.iter().position(|x| x == relation) {
            Some(r) => r,
            None => {
                self.relations.push(relation.to_string());
                self.relations.len() - 1
            }
        };
        if self.edge_set.insert((h, r, t)) {
            self.edges.push((h, r, t));
        }
        Ok(())
    }

    fn node(&self, id: &str) -> Result<usize> {
        self.node_index
            .get(id)
            .copied()
            .ok_or_else(|| invalid!("edge endpoint {id} is not a node"))
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_index.get(id).copied()
    }

    pub fn features(&self, node: usize) -> &[f64] {
        &self.features[node]
    }

    /// Relation vocabulary in order of first appearance.
    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    /// `(head, relation, tail)` index triples in insertion order.
    pub fn edges(&self) -> &[(usize, usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, head: usize, relation: usize, tail: usize) -> bool {
        self.edge_set.contains(&(head, relation, tail))
    }
}

/// Cosine similarity of two non-zero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// Adds `SimilarTo` edges in both directions between every node pair whose
/// features have cosine similarity at least `threshold`.
pub fn augment_similarity_edges(g: &KnowledgeGraph, threshold: f64) -> Result<KnowledgeGraph> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid!("similarity threshold must lie in (0, 1), got {threshold}"));
    }
    if let Some(i) = (0..g.node_count()).find(|&i| norm(&g.features[i]) == 0.0) {
        return Err(invalid!("node {} has a zero feature vector", g.nodes[i]));
    }
    let mut out = g.clone();
    let n = g.node_count();
    for i in 0..n {
        for j in i + 1..n {
            if cosine(&g.features[i], &g.features[j]) >= threshold {
                out.add_edge(&g.nodes[i], SIMILAR_TO, &g.nodes[j])?;
                out.add_edge(&g.nodes[j], SIMILAR_TO, &g.nodes[i])?;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPredictionConfig {
    /// Width of both graph convolution layers and of the relation diagonals.
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for LinkPredictionConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            epochs: 200,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

/// Incoming messages of one node, grouped by message type. Types `0..R` are
/// forward relations, `R..2R` their inverses.
type Inbox = Vec<(usize, Vec<usize>)>;

#[derive(Debug, Clone, Copy)]
struct RgcnShape {
    features: usize,
    dim: usize,
    relations: usize,
}

impl RgcnShape {
    fn types(&self) -> usize {
        2 * self.relations
    }

    fn layer_len(&self, input: usize) -> usize {
        self.dim * input * (1 + self.types()) + self.dim
    }

    fn layer1(&self) -> Range<usize> {
        0..self.layer_len(self.features)
    }

    fn layer2(&self) -> Range<usize> {
        let s = self.layer1().end;
        s..s + self.layer_len(self.dim)
    }

    fn diag(&self) -> Range<usize> {
        let s = self.layer2().end;
        s..s + self.relations * self.dim
    }

    fn len(&self) -> usize {
        self.diag().end
    }
}

/// One graph convolution layer's parameters: self weight, bias, one weight
/// per message type.
struct Layer<'a> {
    params: &'a [f64],
    input: usize,
    out: usize,
}

impl Layer<'_> {
    fn self_weight(&self) -> Range<usize> {
        0..self.out * self.input
    }

    fn bias(&self) -> Range<usize> {
        let s = self.out * self.input;
        s..s + self.out
    }

    fn type_weight(&self, ty: usize) -> Range<usize> {
        let s = self.out * self.input + self.out + ty * self.out * self.input;
        s..s + self.out * self.input
    }

    fn mean_of(x: &[Vec<f64>], sources: &[usize]) -> Vec<f64> {
        let mut m = vec![0.0; x[0].len()];
        for &j in sources {
            for (a, b) in m.iter_mut().zip(&x[j]) {
                *a += b;
            }
        }
        let k = sources.len() as f64;
        m.iter_mut().for_each(|v| *v /= k);
        m
    }

    /// `out_i = W_0 x_i + b + sum_tau W_tau mean_{j in N_tau(i)} x_j`
    fn forward(&self, x: &[Vec<f64>], inbox: &[Inbox]) -> Vec<Vec<f64>> {
        x.iter()
            .zip(inbox)
            .map(|(xi, msgs)| {
                let mut o = affine(&self.params[self.self_weight()], &self.params[self.bias()], xi);
                for (ty, sources) in msgs {
                    let m = Self::mean_of(x, sources);
                    let wm = affine(&self.params[self.type_weight(*ty)], &vec![0.0; self.out], &m);
                    o.iter_mut().zip(&wm).for_each(|(a, b)| *a += b);
                }
                o
            })
            .collect()
    }

    /// Accumulates parameter gradients into `grad` (laid out like `params`)
    /// and returns input gradients when asked.
    fn backward(
        &self,
        x: &[Vec<f64>],
        inbox: &[Inbox],
        g_out: &[Vec<f64>],
        grad: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<Vec<f64>>> {
        let mut g_in = want_input.then(|| vec![vec![0.0; self.input]; x.len()]);
        for (i, (gi, msgs)) in g_out.iter().zip(inbox).enumerate() {
            add_outer(gi, &x[i], &mut grad[self.self_weight()]);
            grad[self.bias()].iter_mut().zip(gi).for_each(|(a, b)| *a += b);
            if let Some(g_in) = g_in.as_mut() {
                add_transpose_matvec(&self.params[self.self_weight()], gi, &mut g_in[i]);
            }
            for (ty, sources) in msgs {
                let m = Self::mean_of(x, sources);
                add_outer(gi, &m, &mut grad[self.type_weight(*ty)]);
                if let Some(g_in) = g_in.as_mut() {
                    let mut gm = vec![0.0; self.input];
                    add_transpose_matvec(&self.params[self.type_weight(*ty)], gi, &mut gm);
                    let k = sources.len() as f64;
                    for &j in sources {
                        g_in[j].iter_mut().zip(&gm).for_each(|(a, b)| *a += b / k);
                    }
                }
            }
        }
        g_in
    }
}

fn build_inbox(g: &KnowledgeGraph) -> Vec<Inbox> {
    let r = g.relations.len();
    let mut grouped: Vec<BTreeMap<usize, Vec<usize>>> = vec![BTreeMap::new(); g.node_count()];
    for &(h, rel, t) in &g.edges {
        grouped[t].entry(rel).or_default().push(h);
        grouped[h].entry(rel + r).or_default().push(t);
    }
    grouped.into_iter().map(|m| m.into_iter().collect()).collect()
}

struct RgcnForward {
    hidden: Vec<Vec<f64>>,
    embeddings: Vec<Vec<f64>>,
}

fn rgcn_forward(shape: RgcnShape, params: &[f64], features: &[Vec<f64>], inbox: &[Inbox]) -> RgcnForward {
    let l1 = Layer {
        params: &params[shape.layer1()],
        input: shape.features,
        out: shape.dim,
    };
    let hidden: Vec<Vec<f64>> = l1
        .forward(features, inbox)
        .into_iter()
        .map(|v| v.into_iter().map(libm::tanh).collect())
        .collect();
    let l2 = Layer {
        params: &params[shape.layer2()],
        input: shape.dim,
        out: shape.dim,
    };
    let embeddings = l2.forward(&hidden, inbox);
    RgcnForward { hidden, embeddings }
}

fn distmult(h: &[f64], diag: &[f64], t: &[f64]) -> f64 {
    h.iter().zip(diag).zip(t).map(|((a, r), b)| a * r * b).sum()
}

/// Mean binary cross-entropy over labelled triples and its gradient.
fn link_loss(
    shape: RgcnShape,
    params: &[f64],
    features: &[Vec<f64>],
    inbox: &[Inbox],
    samples: &[((usize, usize, usize), bool)],
) -> (f64, Vec<f64>) {
    let fwd = rgcn_forward(shape, params, features, inbox);
    let diag = &params[shape.diag()];
    let dim = shape.dim;
    let mut grad = vec![0.0; params.len()];
    let mut g_emb = vec![vec![0.0; dim]; features.len()];
    let scale = 1.0 / samples.len() as f64;
    let mut loss = 0.0;
    for &((h, r, t), positive) in samples {
        let rd = &diag[r * dim..(r + 1) * dim];
        let s = distmult(&fwd.embeddings[h], rd, &fwd.embeddings[t]);
        let (l, ds) = if positive {
            (softplus(-s), -sigmoid(-s))
        } else {
            (softplus(s), sigmoid(s))
        };
        loss += scale * l;
        let ds = scale * ds;
        let gd = &mut grad[shape.diag()][r * dim..(r + 1) * dim];
        for k in 0..dim {
            let (eh, et) = (fwd.embeddings[h][k], fwd.embeddings[t][k]);
            gd[k] += ds * eh * et;
            g_emb[h][k] += ds * rd[k] * et;
            g_emb[t][k] += ds * rd[k] * eh;
        }
    }
    let l2 = Layer {
        params: &params[shape.layer2()],
        input: dim,
        out: dim,
    };
    let g_hidden = l2
        .backward(&fwd.hidden, inbox, &g_emb, &mut grad[shape.layer2()], true)
        .expect("input gradient requested");
    let g_pre: Vec<Vec<f64>> = g_hidden
        .iter()
        .zip(&fwd.hidden)
        .map(|(g, a)| g.iter().zip(a).map(|(g, a)| g * (1.0 - a * a)).collect())
        .collect();
    let l1 = Layer {
        params: &params[shape.layer1()],
        input: shape.features,
        out: dim,
    };
    l1.backward(features, inbox, &g_pre, &mut grad[shape.layer1()], false);
    (loss, grad)
}

/// Trained graph encoder outputs: node embeddings and relation diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkPredictor {
    pub relations: Vec<String>,
    pub node_embeddings: Vec<Vec<f64>>,
    pub diagonals: Vec<Vec<f64>>,
}

impl LinkPredictor {
    pub fn score(&self, head: usize, relation: usize, tail: usize) -> f64 {
        distmult(
            &self.node_embeddings[head],
            &self.diagonals[relation],
            &self.node_embeddings[tail],
        )
    }

    pub fn relation_embeddings(&self) -> BTreeMap<String, Vec<f64>> {
        self.relations
            .iter()
            .cloned()
            .zip(self.diagonals.iter().cloned())
            .collect()
    }
}

fn draw_negative(n: usize, (h, r, t): (usize, usize, usize), rng: &mut SeededRng) -> (usize, usize, usize) {
    let corrupt_head = rng.uniform() < 0.5;
    let (old, other) = if corrupt_head { (h, t) } else { (t, h) };
    let mut node = rng.index(n);
    while node == old || (node == other && n > 2) {
        node = rng.index(n);
    }
    if corrupt_head {
        (node, r, t)
    } else {
        (h, r, node)
    }
}

/// Trains a two-layer relational graph convolution encoder (frozen node
/// features as input, mean aggregation over forward and inverse edges,
/// self-loop weight, tanh between layers) with a DistMult edge scorer on
/// full-batch link prediction, one corrupted triple per edge and epoch.
pub fn train_link_prediction(g: &KnowledgeGraph, config: &LinkPredictionConfig) -> Result<LinkPredictor> {
    if g.edges.is_empty() {
        return Err(invalid!("knowledge graph has no edges"));
    }
    if g.relations.iter().all(|r| r == SIMILAR_TO) {
        return Err(invalid!("knowledge graph has no relation besides {SIMILAR_TO}"));
    }
    if config.dim == 0 || config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
        return Err(config_err!("link prediction needs positive dim and learning rate"));
    }
    let shape = RgcnShape {
        features: g.feature_dim,
        dim: config.dim,
        relations: g.relations.len(),
    };
    let mut rng = SeededRng::for_component(config.seed, "link-prediction");
    let mut params = vec![0.0; shape.len()];
    for (range, fan_in) in [(shape.layer1(), shape.features), (shape.layer2(), shape.dim)] {
        let s = 1.0 / libm::sqrt(fan_in as f64);
        params[range].iter_mut().for_each(|v| *v = s * rng.standard_normal());
    }
    params[shape.diag()]
        .iter_mut()
        .for_each(|v| *v = 0.5 * rng.standard_normal());

    let inbox = build_inbox(g);
    let n = g.node_count();
    let mut adam = Adam::new(params.len(), AdamConfig::default());
    let groups = [(0..params.len(), config.learning_rate)];
    for epoch in 0..config.epochs {
        let mut samples: Vec<_> = g.edges.iter().map(|&e| (e, true)).collect();
        for &e in &g.edges {
            samples.push((draw_negative(n, e, &mut rng), false));
        }
        let (loss, grad) = link_loss(shape, &params, &g.features, &inbox, &samples);
        if !loss.is_finite() {
            return Err(crate::Error::Divergence {
                epoch,
                detail: "non-finite link prediction loss".to_string(),
            });
        }
        adam.step(&mut params, &grad, &groups)?;
    }
    let fwd = rgcn_forward(shape, &params, &g.features, &inbox);
    let diag = &params[shape.diag()];
    Ok(LinkPredictor {
        relations: g.relations.clone(),
        node_embeddings: fwd.embeddings,
        diagonals: diag.chunks(config.dim).map(|c| c.to_vec()).collect(),
    })
}

/// Where a prior mean segment came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SegmentSource {
    /// Embedding of the named knowledge-graph relation.
    KnowledgeGraph(String),
    StandardGaussian,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorSegment {
    pub relation: String,
    pub range: Range<usize>,
    pub source: SegmentSource,
}

/// `N(mean, I)` over z-space with per-relation provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    mean: Vec<f64>,
    segments: Vec<PriorSegment>,
}

impl PriorSpec {
    pub fn new(mean: Vec<f64>, segments: Vec<PriorSegment>) -> Result<Self> {
        if mean.is_empty() {
            return Err(invalid!("prior mean is empty"));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("prior mean has non-finite entries"));
        }
        if segments
            .iter()
            .any(|s| s.range.end > mean.len() || s.range.start > s.range.end)
        {
            return Err(invalid!("prior segment outside the mean vector"));
        }
        Ok(Self { mean, segments })
    }

    /// Zero-mean standard Gaussian.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim.max(1)],
            segments: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn segments(&self) -> &[PriorSegment] {
        &self.segments
    }
}

/// Length of each relation's z-segment: `floor(D_z / |relations|)`.
pub fn segment_len(relations: usize, latent_dim: usize) -> Result<usize> {
    if relations == 0 || latent_dim < relations {
        return Err(config_err!(
            "latent dimension {latent_dim} cannot hold one segment for each of {relations} relations"
        ));
    }
    Ok(latent_dim / relations)
}

/// Lays out relation embeddings per z-segment in relation-set order.
///
/// `mapping` pairs a relation-set name with a knowledge-graph relation name.
/// Mapped segments hold the embedding truncated or zero-padded to the
/// segment length; unmapped segments and any remainder of `D_z` stay zero.
pub fn assemble_prior(
    rel_embs: &BTreeMap<String, Vec<f64>>,
    mapping: &[(String, String)],
    relset: &RelationSet,
    latent_dim: usize,
) -> Result<PriorSpec> {
    let seg = segment_len(relset.len(), latent_dim)?;
    let mut lookup: BTreeMap<&str, &str> = BTreeMap::new();
    for (rel, kg) in mapping {
        if relset.index_of(rel).is_none() {
            return Err(config_err!("mapping names unknown relation {rel}"));
        }
        if !rel_embs.contains_key(kg) {
            return Err(config_err!(
                "mapping names knowledge-graph relation {kg} with no embedding"
            ));
        }
        if lookup.insert(rel, kg).is_some() {
            return Err(config_err!("relation {rel} is mapped twice"));
        }
    }
    let mut mean = vec![0.0; latent_dim];
    let mut segments = Vec::with_capacity(relset.len());
    for (r, name) in relset.names().iter().enumerate() {
        let range = r * seg..(r + 1) * seg;
        let source = match lookup.get(name.as_str()) {
            Some(kg) => {
                let emb = &rel_embs[*kg];
                for (m, v) in mean[range.clone()].iter_mut().zip(emb) {
                    *m = *v;
                }
                SegmentSource::KnowledgeGraph(kg.to_string())
            }
            None => SegmentSource::StandardGaussian,
        };
        segments.push(PriorSegment {
            relation: name.clone(),
            range,
            source,
        });
    }
    PriorSpec::new(mean, segments)
}

/// `n` draws from `N(mean, I)`.
pub fn sample_prior(spec: &PriorSpec, n: usize, rng: &mut SeededRng) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(invalid!("requested zero prior samples"));
    }
    Ok((0..n)
        .map(|_| spec.mean.iter().map(|m| m + rng.standard_normal()).collect())
        .collect())
}
