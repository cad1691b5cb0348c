//! Event-pair representations: embedding providers (precomputed vectors or
//! a trainable lookup table), pair concatenation and the affine projection
//! into scoring space.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::invalid;
use crate::numerics::{add_outer, add_transpose_matvec, affine, SeededRng};
use crate::scorers::RelationSet;
use crate::{Error, Result};

/// Key under which the head trigger vector of instance `id` is stored.
pub fn head_key(id: &str) -> String {
    format!("{id}:head")
}

/// Key under which the tail trigger vector of instance `id` is stored.
pub fn tail_key(id: &str) -> String {
    format!("{id}:tail")
}

/// One classification example with its trigger embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EventPairInstance {
    pub id: String,
    pub head: Vec<f64>,
    pub tail: Vec<f64>,
    /// Index of the gold relation in the relation set.
    pub label: usize,
    pub text: Option<String>,
}

impl EventPairInstance {
    pub fn new(
        id: impl Into<String>,
        head: Vec<f64>,
        tail: Vec<f64>,
        label: &str,
        relset: &RelationSet,
    ) -> Result<Self> {
        let id = id.into();
        if head.len() != tail.len() {
            return Err(invalid!("instance {id}: head and tail dimensions differ"));
        }
        if head.iter().chain(&tail).any(|v| !v.is_finite()) {
            return Err(invalid!("instance {id}: non-finite embedding"));
        }
        let label = relset
            .index_of(label)
            .ok_or_else(|| invalid!("instance {id}: unknown relation {label}"))?;
        Ok(Self {
            id,
            head,
            tail,
            label,
            text: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.head.len()
    }
}

/// `[head; tail]`, head first.
pub fn pair_representation(inst: &EventPairInstance) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * inst.dim());
    v.extend_from_slice(&inst.head);
    v.extend_from_slice(&inst.tail);
    v
}

/// Vectors keyed by `instanceid:head` / `instanceid:tail`, produced by an
/// external encoder.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrecomputedEmbeddings {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl PrecomputedEmbeddings {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid!("embedding dimension must be positive"));
        }
        Ok(Self {
            dim,
            entries: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let key = key.into();
        if vector.len() != self.dim {
            return Err(invalid!(
                "vector for {key} has {} entries, expected {}",
                vector.len(),
                self.dim
            ));
        }
        if self.entries.contains_key(&key) {
            return Err(invalid!("duplicate embedding key {key}"));
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Trainable table of vectors, initialized from `N(0, 0.1^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    dim: usize,
    index: BTreeMap<String, usize>,
    table: Vec<f64>,
    trainable: bool,
}

impl LookupTable {
    pub fn new<S: AsRef<str>>(keys: &[S], dim: usize, trainable: bool, rng: &mut SeededRng) -> Result<Self> {
        if dim == 0 {
            return Err(invalid!("embedding dimension must be positive"));
        }
        let mut index = BTreeMap::new();
        for k in keys {
            let next = index.len();
            if index.insert(String::from(k.as_ref()), next).is_some() {
                return Err(invalid!("duplicate lookup key {}", k.as_ref()));
            }
        }
        let table = (0..index.len() * dim).map(|_| 0.1 * rng.standard_normal()).collect();
        Ok(Self {
            dim,
            index,
            table,
            trainable,
        })
    }

    /// Rebuilds a table from stored rows (row order follows `keys`).
    pub fn from_rows(keys: Vec<String>, dim: usize, table: Vec<f64>, trainable: bool) -> Result<Self> {
        if table.len() != keys.len() * dim {
            return Err(invalid!("lookup table size does not match its keys"));
        }
        let mut index = BTreeMap::new();
        for (i, k) in keys.into_iter().enumerate() {
            if index.insert(k.clone(), i).is_some() {
                return Err(invalid!("duplicate lookup key {k}"));
            }
        }
        Ok(Self {
            dim,
            index,
            table,
            trainable,
        })
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    /// Keys in row order.
    pub fn keys(&self) -> Vec<String> {
        let mut keys: Vec<(usize, &String)> = self.index.iter().map(|(k, i)| (*i, k)).collect();
        keys.sort();
        keys.into_iter().map(|(_, k)| k.clone()).collect()
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn row_index(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.table[row * self.dim..(row + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingProvider {
    Precomputed(PrecomputedEmbeddings),
    Lookup(LookupTable),
}

impl EmbeddingProvider {
    pub fn dim(&self) -> usize {
        match self {
            Self::Precomputed(p) => p.dim,
            Self::Lookup(l) => l.dim,
        }
    }

    pub fn get(&self, key: &str) -> Result<&[f64]> {
        match self {
            Self::Precomputed(p) => p.entries.get(key).map(Vec::as_slice),
            Self::Lookup(l) => l.index.get(key).map(|&i| &l.table[i * l.dim..(i + 1) * l.dim]),
        }
        .ok_or_else(|| Error::NotFound(format!("embedding key {key}")))
    }

    /// Joins a labelled pair with its head and tail vectors.
    pub fn instance(&self, id: &str, label: usize, text: Option<&str>) -> Result<EventPairInstance> {
        Ok(EventPairInstance {
            id: String::from(id),
            head: self.get(&head_key(id))?.to_vec(),
            tail: self.get(&tail_key(id))?.to_vec(),
            label,
            text: text.map(String::from),
        })
    }

    pub fn trainable(&self) -> bool {
        matches!(self, Self::Lookup(l) if l.trainable)
    }
}

/// Affine map `d -> d_r` borrowed from a parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct Projection<'a> {
    pub weight: &'a [f64],
    pub bias: &'a [f64],
}

impl Projection<'_> {
    pub fn in_dim(&self) -> usize {
        self.weight.len() / self.bias.len().max(1)
    }

    pub fn out_dim(&self) -> usize {
        self.bias.len()
    }

    /// Accumulates the VJP for input `v` and upstream gradient `g` into
    /// `grad_weight`, `grad_bias` and `grad_input`.
    pub fn backward(
        &self,
        v: &[f64],
        g: &[f64],
        grad_weight: &mut [f64],
        grad_bias: &mut [f64],
        grad_input: &mut [f64],
    ) {
        add_outer(g, v, grad_weight);
        for (b, gi) in grad_bias.iter_mut().zip(g) {
            *b += gi;
        }
        add_transpose_matvec(self.weight, g, grad_input);
    }
}

/// Affine projection of an event vector into scoring space.
pub fn project_to_scoring_space(v: &[f64], proj: &Projection<'_>) -> Result<Vec<f64>> {
    if proj.out_dim() == 0 || proj.weight.len() != proj.out_dim() * v.len() {
        return Err(invalid!(
            "projection of shape {}x{} cannot map a {}-vector",
            proj.out_dim(),
            proj.in_dim(),
            v.len()
        ));
    }
    Ok(affine(proj.weight, proj.bias, v))
}

/// Validates a gold label name against the relation set.
pub fn label_index(label: &str, relset: &RelationSet) -> Result<usize> {
    relset
        .index_of(label)
        .ok_or_else(|| invalid!("unknown relation label {label}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, GRAD_CHECK_EPS, GRAD_CHECK_TOL};
    use alloc::vec;

    fn instance(h: &[f64], t: &[f64]) -> EventPairInstance {
        EventPairInstance::new("e1", h.to_vec(), t.to_vec(), "Before", &RelationSet::matres()).unwrap()
    }

    #[test]
    fn pair_layout_is_head_first() {
        assert_eq!(
            pair_representation(&instance(&[1.0, 2.0], &[3.0, 4.0])),
            vec![1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(pair_representation(&instance(&[0.0; 3], &[0.0; 3])), vec![0.0; 6]);
        let a = pair_representation(&instance(&[1.0, 2.0], &[3.0, 4.0]));
        let b = pair_representation(&instance(&[3.0, 4.0], &[1.0, 2.0]));
        assert_ne!(a, b);
    }

    #[test]
    fn unknown_label_rejected() {
        let err = EventPairInstance::new("x", vec![0.0], vec![0.0], "Maybe", &RelationSet::matres());
        assert!(err.is_err());
    }

    #[test]
    fn precomputed_lookup_and_missing_key() {
        let mut p = PrecomputedEmbeddings::new(4).unwrap();
        p.insert("a:head", vec![1.0; 4]).unwrap();
        p.insert("a:tail", vec![2.0; 4]).unwrap();
        assert!(p.insert("a:tail", vec![2.0; 4]).is_err());
        assert!(p.insert("b:tail", vec![2.0; 3]).is_err());
        let provider = EmbeddingProvider::Precomputed(p);
        assert_eq!(provider.dim(), 4);
        assert_eq!(provider.get("a:tail").unwrap(), &[2.0; 4]);
        match provider.get("zz:head") {
            Err(Error::NotFound(msg)) => assert!(msg.contains("zz:head")),
            other => panic!("unexpected {other:?}"),
        }
        let inst = provider.instance("a", 1, None).unwrap();
        assert_eq!(inst.head, vec![1.0; 4]);
        assert_eq!(inst.label, 1);
    }

    #[test]
    fn lookup_table_is_seeded_and_repeatable() {
        let keys = ["a:head", "a:tail"];
        let t1 = LookupTable::new(&keys, 3, true, &mut SeededRng::new(5)).unwrap();
        let t2 = LookupTable::new(&keys, 3, true, &mut SeededRng::new(5)).unwrap();
        assert_eq!(t1, t2);
        let p = EmbeddingProvider::Lookup(t1.clone());
        assert_eq!(p.get("a:tail").unwrap(), p.get("a:tail").unwrap());
        assert!(p.trainable());
        let rebuilt = LookupTable::from_rows(t1.keys(), 3, t1.table().to_vec(), true).unwrap();
        assert_eq!(rebuilt, t1);
    }

    #[test]
    fn projection_identity_zero_and_gradient() {
        let ident = [1.0, 0.0, 0.0, 1.0];
        let zeros = [0.0; 2];
        let p = Projection {
            weight: &ident,
            bias: &zeros,
        };
        assert_eq!(project_to_scoring_space(&[0.3, -0.2], &p).unwrap(), vec![0.3, -0.2]);
        let z = [0.0; 4];
        let p0 = Projection {
            weight: &z,
            bias: &zeros,
        };
        assert_eq!(project_to_scoring_space(&[0.3, -0.2], &p0).unwrap(), vec![0.0, 0.0]);
        assert!(project_to_scoring_space(&[0.3], &p).is_err());

        // d = 3 -> d_r = 2, loss = g . (W v + b)
        let v = [0.4, -1.1, 0.7];
        let g = [0.3, -0.8];
        let mut x = vec![0.2, -0.5, 0.9, 1.3, 0.1, -0.7];
        x.extend([0.05, -0.02]);
        let f = |x: &[f64]| {
            let p = Projection {
                weight: &x[..6],
                bias: &x[6..],
            };
            crate::numerics::dot(&g, &project_to_scoring_space(&v, &p).unwrap())
        };
        let p = Projection {
            weight: &x[..6],
            bias: &x[6..],
        };
        let (mut gw, mut gb, mut gv) = (vec![0.0; 6], vec![0.0; 2], vec![0.0; 3]);
        p.backward(&v, &g, &mut gw, &mut gb, &mut gv);
        gw.extend(gb);
        assert!(grad_check(f, &gw, &x, GRAD_CHECK_EPS).unwrap() < GRAD_CHECK_TOL);
    }
}
