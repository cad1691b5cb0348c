//! Translational relation scorers (TransE, MuRE, MuRP, AttH) and the softmax
//! predictive distribution over a relation set.
//!
//! All scores are negated squared distances, so they are `<= 0` and reach
//! zero when the transformed head lands on the (transformed) tail.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

use crate::error::{config_err, invalid};
use crate::geometry::kernels;
use crate::numerics::{axpy, dot, sigmoid, softmax, softplus, ProbVector};
use crate::{Error, Result};

/// Curvature used by the MuRP scorer.
pub const MURP_CURVATURE: f64 = 1.0;

/// Ordered relation label set, optionally with a "no relation" class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSet {
    names: Vec<String>,
    no_relation: Option<usize>,
}

impl RelationSet {
    pub fn new<S: AsRef<str>>(names: &[S], no_relation: Option<&str>) -> Result<Self> {
        if names.is_empty() {
            return Err(config_err!("relation set must be non-empty"));
        }
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.chars().any(char::is_whitespace) {
                return Err(config_err!("invalid relation name {n:?}"));
            }
            if names[..i].contains(n) {
                return Err(config_err!("duplicate relation name {n}"));
            }
        }
        let no_relation = match no_relation {
            None => None,
            Some(name) => Some(
                names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| config_err!("no-relation class {name} not in relation set"))?,
            ),
        };
        Ok(Self { names, no_relation })
    }

    /// Before / After / Equal / Vague, with Vague as the no-relation class.
    pub fn matres() -> Self {
        Self::new(&["Before", "After", "Equal", "Vague"], Some("Vague")).expect("static set")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn no_relation(&self) -> Option<usize> {
        self.no_relation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerKind {
    TransE,
    MuRE,
    MuRP,
    AttH,
}

impl ScorerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::TransE => "transe",
            Self::MuRE => "mure",
            Self::MuRP => "murp",
            Self::AttH => "atth",
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(Self::TransE),
            "mure" => Ok(Self::MuRE),
            "murp" => Ok(Self::MuRP),
            "atth" => Ok(Self::AttH),
            other => Err(config_err!("unknown scorer {other}")),
        }
    }
}

/// Layout of the flattened relation parameters: all `W_r` diagonals, then
/// all `t_r` vectors, then (AttH only) per-relation rotation angles,
/// reflection angles, attention vector and raw curvature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub kind: ScorerKind,
    pub relations: usize,
    pub dim: usize,
}

impl ParamLayout {
    pub fn new(kind: ScorerKind, relations: usize, dim: usize) -> Result<Self> {
        if relations == 0 || dim == 0 {
            return Err(config_err!("relation count and dimension must be positive"));
        }
        if kind == ScorerKind::AttH && !dim.is_multiple_of(2) {
            return Err(config_err!("AttH needs an even relation dimension, got {dim}"));
        }
        Ok(Self { kind, relations, dim })
    }

    /// Per-relation AttH extras: `dim/2` rotations, `dim/2` reflections,
    /// `dim` attention weights and one raw curvature.
    pub fn extras_len(&self) -> usize {
        match self.kind {
            ScorerKind::AttH => 2 * self.dim + 1,
            _ => 0,
        }
    }

    /// Parameters owned by one relation.
    pub fn block_len(&self) -> usize {
        2 * self.dim + self.extras_len()
    }

    /// Total flattened length.
    pub fn len(&self) -> usize {
        self.relations * self.block_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn w_range(&self, r: usize) -> Range<usize> {
        r * self.dim..(r + 1) * self.dim
    }

    pub fn t_range(&self, r: usize) -> Range<usize> {
        let base = self.relations * self.dim;
        base + r * self.dim..base + (r + 1) * self.dim
    }

    pub fn extras_range(&self, r: usize) -> Range<usize> {
        let base = 2 * self.relations * self.dim;
        let e = self.extras_len();
        base + r * e..base + (r + 1) * e
    }

    /// Flat index of the `j`-th parameter of relation `r` in block order
    /// `[W_r; t_r; extras_r]`.
    pub fn block_index(&self, r: usize, j: usize) -> usize {
        let d = self.dim;
        if j < d {
            self.w_range(r).start + j
        } else if j < 2 * d {
            self.t_range(r).start + j - d
        } else {
            self.extras_range(r).start + j - 2 * d
        }
    }

    /// Whether flat index `i` holds a `W_r` entry (stored with a +1 offset).
    pub fn is_scaling(&self, i: usize) -> bool {
        i < self.relations * self.dim
    }
}

/// Per-relation transformation parameters for every relation of a set.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationalParams {
    layout: ParamLayout,
    raw: Vec<f64>,
    values: Vec<f64>,
}

impl TranslationalParams {
    /// Builds parameters from a raw flat vector, adding the +1 offset to
    /// every `W_r` entry so a zero raw vector is the identity transform.
    pub fn from_raw(layout: ParamLayout, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != layout.len() {
            return Err(invalid!(
                "expected {} relation parameters, got {}",
                layout.len(),
                raw.len()
            ));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("relation parameters must be finite"));
        }
        let mut values = raw.clone();
        for v in &mut values[..layout.relations * layout.dim] {
            *v += 1.0;
        }
        Ok(Self { layout, raw, values })
    }

    /// The flat vector without the `W_r` offsets.
    pub fn to_raw(&self) -> Vec<f64> {
        self.raw.clone()
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn relation(&self, r: usize) -> RelationParams<'_> {
        let l = &self.layout;
        let atth = (l.kind == ScorerKind::AttH).then(|| {
            let e = &self.values[l.extras_range(r)];
            let half = l.dim / 2;
            AttHParams {
                rotation: &e[..half],
                reflection: &e[half..l.dim],
                attention: &e[l.dim..2 * l.dim],
                curvature_raw: e[2 * l.dim],
            }
        });
        RelationParams {
            w: &self.values[l.w_range(r)],
            t: &self.values[l.t_range(r)],
            atth,
        }
    }
}

/// Borrowed view of one relation's parameters.
#[derive(Debug, Clone, Copy)]
pub struct RelationParams<'a> {
    pub w: &'a [f64],
    pub t: &'a [f64],
    pub atth: Option<AttHParams<'a>>,
}

#[derive(Debug, Clone, Copy)]
pub struct AttHParams<'a> {
    pub rotation: &'a [f64],
    pub reflection: &'a [f64],
    pub attention: &'a [f64],
    pub curvature_raw: f64,
}

impl AttHParams<'_> {
    pub fn curvature(&self) -> f64 {
        softplus(self.curvature_raw)
    }
}

/// Head and tail event vectors in scoring space.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringSpacePair {
    pub h: Vec<f64>,
    pub t: Vec<f64>,
}

impl ScoringSpacePair {
    pub fn new(h: Vec<f64>, t: Vec<f64>) -> Result<Self> {
        if h.len() != t.len() {
            return Err(invalid!("head has {} dims, tail has {}", h.len(), t.len()));
        }
        if h.iter().chain(&t).any(|v| !v.is_finite()) {
            return Err(invalid!("scoring-space vectors must be finite"));
        }
        Ok(Self { h, t })
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }
}

fn check_dims(pair: &ScoringSpacePair, parts: &[&[f64]]) -> Result<()> {
    for p in parts {
        if p.len() != pair.dim() {
            return Err(invalid!(
                "parameter of length {} for a {}-dimensional pair",
                p.len(),
                pair.dim()
            ));
        }
    }
    Ok(())
}

/// `-|h + t_r - t|^2`
pub fn score_transe(pair: &ScoringSpacePair, t_r: &[f64]) -> Result<f64> {
    check_dims(pair, &[t_r])?;
    Ok(-pair
        .h
        .iter()
        .zip(t_r)
        .zip(&pair.t)
        .map(|((h, r), t)| {
            let d = h + r - t;
            d * d
        })
        .sum::<f64>())
}

/// `-|W_r ⊙ h + t_r - t|^2`
pub fn score_mure(pair: &ScoringSpacePair, w_r: &[f64], t_r: &[f64]) -> Result<f64> {
    check_dims(pair, &[w_r, t_r])?;
    Ok(mure(&pair.h, &pair.t, w_r, t_r))
}

/// `-d_c(exp0(W_r ⊙ log0(proj h)), proj t ⊕ exp0(t_r))^2`
pub fn score_murp(pair: &ScoringSpacePair, w_r: &[f64], t_r: &[f64], c: f64) -> Result<f64> {
    check_dims(pair, &[w_r, t_r])?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid!("curvature must be positive, got {c}"));
    }
    Ok(MurpForward::new(&pair.h, &pair.t, w_r, t_r, c).score)
}

/// Attention over rotation and reflection candidates in hyperbolic space.
pub fn score_atth(pair: &ScoringSpacePair, rel: &RelationParams<'_>) -> Result<f64> {
    if !pair.dim().is_multiple_of(2) {
        return Err(config_err!("AttH needs an even dimension, got {}", pair.dim()));
    }
    let atth = rel
        .atth
        .ok_or_else(|| config_err!("AttH scoring requires rotation/reflection parameters"))?;
    check_dims(pair, &[rel.w, rel.t, atth.attention])?;
    if atth.rotation.len() * 2 != pair.dim() || atth.reflection.len() * 2 != pair.dim() {
        return Err(invalid!("AttH angle blocks do not match the pair dimension"));
    }
    Ok(AtthForward::new(&pair.h, &pair.t, rel.w, rel.t, &atth).score)
}

fn mure(h: &[f64], t: &[f64], w: &[f64], tr: &[f64]) -> f64 {
    -(0..h.len())
        .map(|i| {
            let d = w[i] * h[i] + tr[i] - t[i];
            d * d
        })
        .sum::<f64>()
}

/// Score of one relation, without dimension checks.
pub fn score(kind: ScorerKind, h: &[f64], t: &[f64], rel: &RelationParams<'_>) -> f64 {
    match kind {
        ScorerKind::TransE => -(0..h.len())
            .map(|i| {
                let d = h[i] + rel.t[i] - t[i];
                d * d
            })
            .sum::<f64>(),
        ScorerKind::MuRE => mure(h, t, rel.w, rel.t),
        ScorerKind::MuRP => MurpForward::new(h, t, rel.w, rel.t, MURP_CURVATURE).score,
        ScorerKind::AttH => {
            let atth = rel.atth.expect("AttH parameters present");
            AtthForward::new(h, t, rel.w, rel.t, &atth).score
        }
    }
}

/// Gradients of one relation score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrad {
    pub h: Vec<f64>,
    pub t: Vec<f64>,
    pub w: Vec<f64>,
    pub t_r: Vec<f64>,
    /// AttH extras in block order: rotation, reflection, attention, raw curvature.
    pub extras: Vec<f64>,
}

/// Vector-Jacobian product of [`score`] for a scalar upstream gradient `g`.
pub fn score_vjp(kind: ScorerKind, h: &[f64], t: &[f64], rel: &RelationParams<'_>, g: f64) -> ScoreGrad {
    let n = h.len();
    match kind {
        ScorerKind::TransE | ScorerKind::MuRE => {
            let mure_kind = kind == ScorerKind::MuRE;
            let mut out = ScoreGrad {
                h: vec![0.0; n],
                t: vec![0.0; n],
                w: vec![0.0; n],
                t_r: vec![0.0; n],
                extras: Vec::new(),
            };
            for i in 0..n {
                let w = if mure_kind { rel.w[i] } else { 1.0 };
                let d = w * h[i] + rel.t[i] - t[i];
                let gd = -2.0 * g * d;
                out.h[i] = gd * w;
                out.t[i] = -gd;
                out.t_r[i] = gd;
                if mure_kind {
                    out.w[i] = gd * h[i];
                }
            }
            out
        }
        ScorerKind::MuRP => MurpForward::new(h, t, rel.w, rel.t, MURP_CURVATURE).backward(g),
        ScorerKind::AttH => {
            let atth = rel.atth.expect("AttH parameters present");
            AtthForward::new(h, t, rel.w, rel.t, &atth).backward(g, &atth)
        }
    }
}

/// Scores of every relation in layout order.
pub fn relation_scores(h: &[f64], t: &[f64], params: &TranslationalParams) -> Vec<f64> {
    let layout = params.layout();
    (0..layout.relations)
        .map(|r| score(layout.kind, h, t, &params.relation(r)))
        .collect()
}

/// Softmax over per-relation scores, in relation-set order.
pub fn predict_distribution(
    pair: &ScoringSpacePair,
    params: &TranslationalParams,
    relset: &RelationSet,
) -> Result<ProbVector> {
    let layout = params.layout();
    if layout.relations != relset.len() {
        return Err(invalid!(
            "parameters cover {} relations, relation set has {}",
            layout.relations,
            relset.len()
        ));
    }
    if layout.dim != pair.dim() {
        return Err(invalid!(
            "parameters are {}-dimensional, pair is {}-dimensional",
            layout.dim,
            pair.dim()
        ));
    }
    softmax(&relation_scores(&pair.h, &pair.t, params))
}

/// Forward pass of MuRP with the intermediates kept for backpropagation.
/// `expmap0(v)`, returning `x` itself when `v` is exactly `logmap0(x)` so
/// that identity transforms are evaluated without round-off.
fn exp_of_log(v: &[f64], log_x: &[f64], x: &[f64], c: f64) -> Vec<f64> {
    if v == log_x {
        x.to_vec()
    } else {
        kernels::expmap0(v, c)
    }
}

struct MurpForward<'a> {
    h: &'a [f64],
    t: &'a [f64],
    w: &'a [f64],
    t_r: &'a [f64],
    c: f64,
    head_ball: Vec<f64>,
    head_tangent: Vec<f64>,
    scaled: Vec<f64>,
    head_mapped: Vec<f64>,
    head_out: Vec<f64>,
    tail_ball: Vec<f64>,
    trans_mapped: Vec<f64>,
    trans_ball: Vec<f64>,
    tail_sum: Vec<f64>,
    tail_out: Vec<f64>,
    score: f64,
}

impl<'a> MurpForward<'a> {
    fn new(h: &'a [f64], t: &'a [f64], w: &'a [f64], t_r: &'a [f64], c: f64) -> Self {
        let head_ball = kernels::project(h, c);
        let head_tangent = kernels::logmap0(&head_ball, c);
        let scaled: Vec<f64> = w.iter().zip(&head_tangent).map(|(a, b)| a * b).collect();
        let head_mapped = exp_of_log(&scaled, &head_tangent, &head_ball, c);
        let head_out = kernels::project(&head_mapped, c);
        let tail_ball = kernels::project(t, c);
        let trans_mapped = kernels::expmap0(t_r, c);
        let trans_ball = kernels::project(&trans_mapped, c);
        let tail_sum = kernels::mobius_add(&tail_ball, &trans_ball, c);
        let tail_out = kernels::project(&tail_sum, c);
        let score = -kernels::sq_distance(&head_out, &tail_out, c);
        Self {
            h,
            t,
            w,
            t_r,
            c,
            head_ball,
            head_tangent,
            scaled,
            head_mapped,
            head_out,
            tail_ball,
            trans_mapped,
            trans_ball,
            tail_sum,
            tail_out,
            score,
        }
    }

    fn backward(&self, g: f64) -> ScoreGrad {
        let c = self.c;
        let (g_head_out, g_tail_out, _) = kernels::sq_distance_vjp(&self.head_out, &self.tail_out, c, -g);
        // head chain
        let (g_mapped, _) = kernels::project_vjp(&self.head_mapped, c, &g_head_out);
        let (g_scaled, _) = kernels::expmap0_vjp(&self.scaled, c, &g_mapped);
        let gw: Vec<f64> = g_scaled.iter().zip(&self.head_tangent).map(|(a, b)| a * b).collect();
        let g_tangent: Vec<f64> = g_scaled.iter().zip(self.w).map(|(a, b)| a * b).collect();
        let (g_head_ball, _) = kernels::logmap0_vjp(&self.head_ball, c, &g_tangent);
        let (gh, _) = kernels::project_vjp(self.h, c, &g_head_ball);
        // tail chain
        let (g_sum, _) = kernels::project_vjp(&self.tail_sum, c, &g_tail_out);
        let (g_tail_ball, g_trans_ball, _) = kernels::mobius_add_vjp(&self.tail_ball, &self.trans_ball, c, &g_sum);
        let (gt, _) = kernels::project_vjp(self.t, c, &g_tail_ball);
        let (g_trans_mapped, _) = kernels::project_vjp(&self.trans_mapped, c, &g_trans_ball);
        let (gtr, _) = kernels::expmap0_vjp(self.t_r, c, &g_trans_mapped);
        ScoreGrad {
            h: gh,
            t: gt,
            w: gw,
            t_r: gtr,
            extras: Vec::new(),
        }
    }
}

/// Givens rotation of each coordinate pair by its angle.
fn rotate(x: &[f64], angles: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (k, theta) in angles.iter().enumerate() {
        let (s, c) = libm::sincos(*theta);
        let (a, b) = (x[2 * k], x[2 * k + 1]);
        out[2 * k] = c * a - s * b;
        out[2 * k + 1] = s * a + c * b;
    }
    out
}

/// Returns (gradient w.r.t. input, gradient w.r.t. angles).
fn rotate_vjp(x: &[f64], angles: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut ga = vec![0.0; angles.len()];
    for (k, theta) in angles.iter().enumerate() {
        let (s, c) = libm::sincos(*theta);
        let (a, b) = (x[2 * k], x[2 * k + 1]);
        let (g0, g1) = (g[2 * k], g[2 * k + 1]);
        gx[2 * k] = c * g0 + s * g1;
        gx[2 * k + 1] = -s * g0 + c * g1;
        ga[k] = g0 * (-s * a - c * b) + g1 * (c * a - s * b);
    }
    (gx, ga)
}

/// Givens reflection of each coordinate pair about the line at half its angle.
fn reflect(x: &[f64], angles: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (k, phi) in angles.iter().enumerate() {
        let (s, c) = libm::sincos(*phi);
        let (a, b) = (x[2 * k], x[2 * k + 1]);
        out[2 * k] = c * a + s * b;
        out[2 * k + 1] = s * a - c * b;
    }
    out
}

fn reflect_vjp(x: &[f64], angles: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut ga = vec![0.0; angles.len()];
    for (k, phi) in angles.iter().enumerate() {
        let (s, c) = libm::sincos(*phi);
        let (a, b) = (x[2 * k], x[2 * k + 1]);
        let (g0, g1) = (g[2 * k], g[2 * k + 1]);
        gx[2 * k] = c * g0 + s * g1;
        gx[2 * k + 1] = s * g0 - c * g1;
        ga[k] = g0 * (-s * a + c * b) + g1 * (c * a + s * b);
    }
    (gx, ga)
}

struct AtthForward<'a> {
    h: &'a [f64],
    t: &'a [f64],
    w: &'a [f64],
    t_r: &'a [f64],
    c: f64,
    head_ball: Vec<f64>,
    rotated: Vec<f64>,
    reflected: Vec<f64>,
    q_rot: Vec<f64>,
    q_ref: Vec<f64>,
    weights: [f64; 2],
    combined: Vec<f64>,
    scaled: Vec<f64>,
    head_mapped: Vec<f64>,
    head_ball_out: Vec<f64>,
    trans_mapped: Vec<f64>,
    trans_ball: Vec<f64>,
    sum: Vec<f64>,
    head_out: Vec<f64>,
    tail_out: Vec<f64>,
    score: f64,
}

impl<'a> AtthForward<'a> {
    fn new(h: &'a [f64], t: &'a [f64], w: &'a [f64], t_r: &'a [f64], p: &AttHParams<'_>) -> Self {
        let c = p.curvature();
        let head_ball = kernels::project(h, c);
        let rotated = rotate(&head_ball, p.rotation);
        let reflected = reflect(&head_ball, p.reflection);
        let q_rot = kernels::logmap0(&rotated, c);
        let q_ref = kernels::logmap0(&reflected, c);
        let (s_rot, s_ref) = (dot(p.attention, &q_rot), dot(p.attention, &q_ref));
        let m = s_rot.max(s_ref);
        let (e_rot, e_ref) = (libm::exp(s_rot - m), libm::exp(s_ref - m));
        let weights = [e_rot / (e_rot + e_ref), e_ref / (e_rot + e_ref)];
        let combined: Vec<f64> = q_rot
            .iter()
            .zip(&q_ref)
            .map(|(a, b)| weights[0] * a + weights[1] * b)
            .collect();
        let scaled: Vec<f64> = w.iter().zip(&combined).map(|(a, b)| a * b).collect();
        let head_mapped = exp_of_log(&scaled, &kernels::logmap0(&head_ball, c), &head_ball, c);
        let head_ball_out = kernels::project(&head_mapped, c);
        let trans_mapped = kernels::expmap0(t_r, c);
        let trans_ball = kernels::project(&trans_mapped, c);
        let sum = kernels::mobius_add(&head_ball_out, &trans_ball, c);
        let head_out = kernels::project(&sum, c);
        let tail_out = kernels::project(t, c);
        let score = -kernels::sq_distance(&head_out, &tail_out, c);
        Self {
            h,
            t,
            w,
            t_r,
            c,
            head_ball,
            rotated,
            reflected,
            q_rot,
            q_ref,
            weights,
            combined,
            scaled,
            head_mapped,
            head_ball_out,
            trans_mapped,
            trans_ball,
            sum,
            head_out,
            tail_out,
            score,
        }
    }

    fn backward(&self, g: f64, p: &AttHParams<'_>) -> ScoreGrad {
        let c = self.c;
        let n = self.h.len();
        let (g_head_out, g_tail_out, mut gc) = kernels::sq_distance_vjp(&self.head_out, &self.tail_out, c, -g);
        let (gt, gc_t) = kernels::project_vjp(self.t, c, &g_tail_out);
        gc += gc_t;
        let (g_sum, gc_p) = kernels::project_vjp(&self.sum, c, &g_head_out);
        gc += gc_p;
        let (g_head_ball_out, g_trans_ball, gc_m) =
            kernels::mobius_add_vjp(&self.head_ball_out, &self.trans_ball, c, &g_sum);
        gc += gc_m;
        let (g_trans_mapped, gc_p) = kernels::project_vjp(&self.trans_mapped, c, &g_trans_ball);
        gc += gc_p;
        let (gtr, gc_e) = kernels::expmap0_vjp(self.t_r, c, &g_trans_mapped);
        gc += gc_e;
        let (g_head_mapped, gc_p) = kernels::project_vjp(&self.head_mapped, c, &g_head_ball_out);
        gc += gc_p;
        let (g_scaled, gc_e) = kernels::expmap0_vjp(&self.scaled, c, &g_head_mapped);
        gc += gc_e;
        let gw: Vec<f64> = g_scaled.iter().zip(&self.combined).map(|(a, b)| a * b).collect();
        let g_combined: Vec<f64> = g_scaled.iter().zip(self.w).map(|(a, b)| a * b).collect();

        // attention
        let [a_rot, a_ref] = self.weights;
        let ga_rot = dot(&g_combined, &self.q_rot);
        let ga_ref = dot(&g_combined, &self.q_ref);
        let mean = a_rot * ga_rot + a_ref * ga_ref;
        let gs_rot = a_rot * (ga_rot - mean);
        let gs_ref = a_ref * (ga_ref - mean);
        let mut g_attention = vec![0.0; n];
        axpy(gs_rot, &self.q_rot, &mut g_attention);
        axpy(gs_ref, &self.q_ref, &mut g_attention);
        let mut g_q_rot: Vec<f64> = g_combined.iter().map(|v| a_rot * v).collect();
        axpy(gs_rot, p.attention, &mut g_q_rot);
        let mut g_q_ref: Vec<f64> = g_combined.iter().map(|v| a_ref * v).collect();
        axpy(gs_ref, p.attention, &mut g_q_ref);

        let (g_rotated, gc_l) = kernels::logmap0_vjp(&self.rotated, c, &g_q_rot);
        gc += gc_l;
        let (g_reflected, gc_l) = kernels::logmap0_vjp(&self.reflected, c, &g_q_ref);
        gc += gc_l;
        let (mut g_head_ball, g_rotation) = rotate_vjp(&self.head_ball, p.rotation, &g_rotated);
        let (g_hb_ref, g_reflection) = reflect_vjp(&self.head_ball, p.reflection, &g_reflected);
        axpy(1.0, &g_hb_ref, &mut g_head_ball);
        let (gh, gc_p) = kernels::project_vjp(self.h, c, &g_head_ball);
        gc += gc_p;

        let mut extras = Vec::with_capacity(2 * n + 1);
        extras.extend(g_rotation);
        extras.extend(g_reflection);
        extras.extend(g_attention);
        extras.push(gc * sigmoid(p.curvature_raw));
        ScoreGrad {
            h: gh,
            t: gt,
            w: gw,
            t_r: gtr,
            extras,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, GRAD_CHECK_EPS, GRAD_CHECK_TOL};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pair(h: &[f64], t: &[f64]) -> ScoringSpacePair {
        ScoringSpacePair::new(h.to_vec(), t.to_vec()).unwrap()
    }

    #[test]
    fn transe_examples() {
        assert_eq!(score_transe(&pair(&[1.0, 0.0], &[1.0, 1.0]), &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(
            score_transe(&pair(&[1.0, 0.0], &[1.0, 0.0]), &[0.0, 1.0]).unwrap(),
            -1.0
        );
        assert!(score_transe(&pair(&[1.0, 0.0], &[1.0, 0.0]), &[0.0]).is_err());
    }

    #[test]
    fn mure_examples() {
        let p = pair(&[0.3, -0.2], &[0.3, -0.2]);
        assert_eq!(score_mure(&p, &[1.0, 1.0], &[0.0, 0.0]).unwrap(), 0.0);
        let p = pair(&[1.0, 2.0], &[2.0, 2.0]);
        assert_eq!(score_mure(&p, &[2.0, 0.5], &[0.0, 1.0]).unwrap(), 0.0);
        let p = pair(&[1.0, 2.0], &[3.0, 2.0]);
        assert_eq!(score_mure(&p, &[2.0, 0.5], &[0.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn murp_identity_fixed_point() {
        let p = pair(&[0.2, -0.1, 0.3], &[0.2, -0.1, 0.3]);
        let s = score_murp(&p, &[1.0; 3], &[0.0; 3], 1.0).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn murp_matches_geometry_composition() {
        use crate::geometry::{expmap0, logmap0, mobius_add, poincare_distance, project_to_ball};
        let (h, t) = ([0.3, -0.2, 0.1], [-0.1, 0.25, 0.2]);
        let (w, tr) = ([1.2, 0.7, -0.4], [0.05, -0.1, 0.2]);
        let head = logmap0(&project_to_ball(&h, 1.0).unwrap()).unwrap();
        let scaled: Vec<f64> = head.iter().zip(&w).map(|(a, b)| a * b).collect();
        let lhs = expmap0(&scaled, 1.0).unwrap();
        let rhs = mobius_add(&project_to_ball(&t, 1.0).unwrap(), &expmap0(&tr, 1.0).unwrap()).unwrap();
        let d = poincare_distance(&lhs, &rhs).unwrap();
        let s = score_murp(&pair(&h, &t), &w, &tr, 1.0).unwrap();
        assert_abs_diff_eq!(s, -d * d, epsilon = 1e-14);
    }

    fn atth_block(dim: usize, rot: f64, refl: f64, att: f64, c_raw: f64) -> Vec<f64> {
        let mut e = vec![rot; dim / 2];
        e.extend(vec![refl; dim / 2]);
        e.extend(vec![att; dim]);
        e.push(c_raw);
        e
    }

    #[test]
    fn atth_identity_on_reflection_axis() {
        // zero reflection angle fixes the first coordinate of each pair
        let h = [0.2, 0.0, -0.3, 0.0];
        let e = atth_block(4, 0.0, 0.0, 0.0, 0.3);
        let rel = RelationParams {
            w: &[1.0; 4],
            t: &[0.0; 4],
            atth: Some(AttHParams {
                rotation: &e[..2],
                reflection: &e[2..4],
                attention: &e[4..8],
                curvature_raw: e[8],
            }),
        };
        let s = score_atth(&pair(&h, &h), &rel).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn atth_rotation_by_pi_negates() {
        let out = rotate(&[0.3, -0.7], &[core::f64::consts::PI]);
        assert_abs_diff_eq!(out[0], -0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 0.7, epsilon = 1e-15);
    }

    #[test]
    fn atth_rejects_odd_dimension() {
        assert!(ParamLayout::new(ScorerKind::AttH, 2, 3).is_err());
        let rel = RelationParams {
            w: &[1.0; 3],
            t: &[0.0; 3],
            atth: None,
        };
        assert!(matches!(
            score_atth(&pair(&[0.0; 3], &[0.0; 3]), &rel),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn prediction_distribution_cases() {
        let relset = RelationSet::matres();
        let layout = ParamLayout::new(ScorerKind::TransE, 4, 2).unwrap();
        let params = TranslationalParams::from_raw(layout, vec![0.0; layout.len()]).unwrap();
        let p = predict_distribution(&pair(&[0.1, 0.2], &[0.3, 0.4]), &params, &relset).unwrap();
        for v in p.iter() {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-15);
        }
        let wrong = RelationSet::new(&["A", "B"], None).unwrap();
        assert!(predict_distribution(&pair(&[0.1, 0.2], &[0.3, 0.4]), &params, &wrong).is_err());

        // t_r chosen so TransE scores are exactly -1, -2, -3, -4 with h = t = 0
        let mut raw = vec![0.0; layout.len()];
        for r in 0..4 {
            raw[layout.t_range(r).start] = libm::sqrt((r + 1) as f64);
        }
        let params = TranslationalParams::from_raw(layout, raw).unwrap();
        let p = predict_distribution(&pair(&[0.0, 0.0], &[0.0, 0.0]), &params, &relset).unwrap();
        // e^{-k} / sum_j e^{-j}, mpmath at 30 digits
        let expected = [
            0.643_914_259_887_972_3,
            0.236_882_818_089_910_13,
            0.087_144_318_742_032_57,
            0.032_058_603_280_084_99,
        ];
        for (a, b) in p.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }

        let mut raw = vec![0.0; layout.len()];
        for r in 1..4 {
            raw[layout.t_range(r).start] = 1e3;
        }
        let params = TranslationalParams::from_raw(layout, raw).unwrap();
        let p = predict_distribution(&pair(&[0.0, 0.0], &[0.0, 0.0]), &params, &relset).unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn raw_layout_round_trip() {
        let layout = ParamLayout::new(ScorerKind::AttH, 3, 4).unwrap();
        assert_eq!(layout.len(), 3 * (8 + 9));
        let raw: Vec<f64> = (0..layout.len()).map(|i| i as f64 * 0.01).collect();
        let params = TranslationalParams::from_raw(layout, raw.clone()).unwrap();
        assert_eq!(params.relation(1).w[0], raw[4] + 1.0);
        assert_eq!(
            params.relation(2).atth.unwrap().curvature_raw,
            raw[layout.extras_range(2).end - 1]
        );
        assert_eq!(params.to_raw(), raw);
    }

    fn vec_in(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(lo..hi, n)
    }

    /// Flattens (h, t, w, t_r, extras) and checks the score VJP against
    /// central differences.
    fn check_score_gradient(kind: ScorerKind, h: &[f64], t: &[f64], block: &[f64]) -> f64 {
        let n = h.len();
        let mut x = h.to_vec();
        x.extend(t);
        x.extend(block);
        let view = |x: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
            (x[..n].to_vec(), x[n..2 * n].to_vec(), x[2 * n..].to_vec())
        };
        let rel_of = |b: &[f64]| -> TranslationalParams {
            let layout = ParamLayout::new(kind, 1, n).unwrap();
            let mut raw = b.to_vec();
            for v in &mut raw[..n] {
                *v -= 1.0;
            }
            TranslationalParams::from_raw(layout, raw).unwrap()
        };
        let f = |x: &[f64]| {
            let (h, t, b) = view(x);
            score(kind, &h, &t, &rel_of(&b).relation(0))
        };
        let (h0, t0, b0) = view(&x);
        let params = rel_of(&b0);
        let g = score_vjp(kind, &h0, &t0, &params.relation(0), 1.0);
        let mut analytic = g.h;
        analytic.extend(g.t);
        analytic.extend(if kind == ScorerKind::TransE { vec![0.0; n] } else { g.w });
        analytic.extend(g.t_r);
        analytic.extend(g.extras);
        grad_check(f, &analytic, &x, GRAD_CHECK_EPS).unwrap()
    }

    proptest! {
        #[test]
        fn mure_with_unit_scaling_is_transe(h in vec_in(5, -3.0, 3.0), t in vec_in(5, -3.0, 3.0), tr in vec_in(5, -3.0, 3.0)) {
            let p = pair(&h, &t);
            prop_assert_eq!(score_mure(&p, &[1.0; 5], &tr).unwrap(), score_transe(&p, &tr).unwrap());
        }

        #[test]
        fn scores_are_non_positive_and_shift_invariant(
            h in vec_in(4, -0.4, 0.4), t in vec_in(4, -0.4, 0.4),
            block in vec_in(17, -0.5, 0.5), shift in vec_in(4, -2.0, 2.0),
        ) {
            let layout = ParamLayout::new(ScorerKind::AttH, 1, 4).unwrap();
            let params = TranslationalParams::from_raw(layout, block.clone()).unwrap();
            for kind in [ScorerKind::TransE, ScorerKind::MuRE, ScorerKind::MuRP, ScorerKind::AttH] {
                prop_assert!(score(kind, &h, &t, &params.relation(0)) <= 0.0);
            }
            let hs: Vec<f64> = h.iter().zip(&shift).map(|(a, b)| a + b).collect();
            let ts: Vec<f64> = t.iter().zip(&shift).map(|(a, b)| a + b).collect();
            let a = score_transe(&pair(&h, &t), &block[4..8]).unwrap();
            let b = score_transe(&pair(&hs, &ts), &block[4..8]).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn euclidean_score_gradients(h in vec_in(4, -2.0, 2.0), t in vec_in(4, -2.0, 2.0), b in vec_in(8, -2.0, 2.0)) {
            for kind in [ScorerKind::TransE, ScorerKind::MuRE] {
                let e = check_score_gradient(kind, &h, &t, &b);
                prop_assert!(e < GRAD_CHECK_TOL, "{} {}", kind, e);
            }
        }

        #[test]
        fn murp_score_gradients(h in vec_in(4, -0.25, 0.25), t in vec_in(4, -0.25, 0.25),
                                w in vec_in(4, 0.5, 1.5), tr in vec_in(4, -0.25, 0.25)) {
            let mut b = w;
            b.extend(tr);
            let e = check_score_gradient(ScorerKind::MuRP, &h, &t, &b);
            prop_assert!(e < GRAD_CHECK_TOL, "murp {}", e);
        }

        #[test]
        fn atth_score_gradients(h in vec_in(4, -0.25, 0.25), t in vec_in(4, -0.25, 0.25),
                                w in vec_in(4, 0.5, 1.5), rest in vec_in(13, -0.5, 0.5)) {
            let mut b = w;
            b.extend(rest);
            let e = check_score_gradient(ScorerKind::AttH, &h, &t, &b);
            prop_assert!(e < GRAD_CHECK_TOL, "atth {}", e);
        }
    }
}
