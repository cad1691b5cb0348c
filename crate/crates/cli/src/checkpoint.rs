//! Versioned text checkpoint. Floats are written in shortest round-trip
//! exponent form, so a write/read cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use bayestrans_core::encoder::LookupTable;
use bayestrans_core::scorers::RelationSet;
use bayestrans_core::train::{Checkpoint, EpochRecord, RngState};
use bayestrans_core::variational::{AnnealSchedule, Block, Model, ModelConfig, PosteriorMode};

use crate::error::{CliError, Result};
use crate::formats::{read_text, write_text};

pub const CHECKPOINT_HEADER: &str = "bayestrans-checkpoint 1";

fn values(out: &mut String, vs: &[f64]) {
    for v in vs {
        let _ = write!(out, " {v:e}");
    }
}

pub fn write_checkpoint(ck: &Checkpoint) -> String {
    let c = ck.model.config();
    let mut out = format!("{CHECKPOINT_HEADER}\nscorer {}\nrelations", c.scorer);
    for r in c.relset.names() {
        let _ = write!(out, " {r}");
    }
    let none = c.relset.no_relation().map_or("-", |i| c.relset.name(i));
    let _ = writeln!(out, "\nno_relation {none}");
    let _ = writeln!(out, "input_dim {}", c.input_dim);
    let _ = writeln!(out, "relation_dim {}", c.relation_dim);
    let _ = writeln!(out, "latent_dim {}", c.latent_dim);
    let _ = writeln!(out, "hidden_dim {}", c.hidden_dim);
    let _ = writeln!(out, "dropout {:e}", c.dropout);
    match c.posterior {
        PosteriorMode::Learned => out.push_str("posterior learned\n"),
        PosteriorMode::Pinned(s) => {
            let _ = writeln!(out, "posterior pinned {s:e}");
        }
    }
    match c.kernel_scale {
        None => out.push_str("kernel_scale auto\n"),
        Some(k) => {
            let _ = writeln!(out, "kernel_scale {k:e}");
        }
    }
    let _ = writeln!(out, "init_sigma {:e}", c.init_sigma);
    let a = &ck.anneal;
    let _ = writeln!(out, "anneal {:e} {:e} {}", a.start, a.end, a.epochs);
    match ck.best_epoch {
        Some(e) => {
            let _ = writeln!(out, "best_epoch {e}");
        }
        None => out.push_str("best_epoch none\n"),
    }
    let _ = writeln!(out, "best_dev_f1 {:e}", ck.best_dev_f1);
    let _ = writeln!(out, "epochs_run {}", ck.epochs_run);
    for h in &ck.history {
        let _ = writeln!(
            out,
            "history {} {:e} {:e} {:e} {:e} {:e}",
            h.epoch, h.lambda, h.loss, h.nll, h.mmd, h.dev_f1
        );
    }
    for r in &ck.rng {
        let _ = writeln!(out, "rng {} {} {}", r.component, r.seed, r.position);
    }
    for b in Block::ALL {
        let vs = ck.model.block(b);
        let _ = write!(out, "block {} {}", b.name(), vs.len());
        values(&mut out, vs);
        out.push('\n');
    }
    if let Some(l) = &ck.lookup {
        let keys = l.keys();
        let dim = l.table().len() / keys.len().max(1);
        let _ = writeln!(out, "lookup {dim} {} {}", keys.len(), u8::from(l.trainable()));
        for (i, k) in keys.iter().enumerate() {
            let _ = write!(out, "row {k}");
            values(&mut out, &l.table()[i * dim..(i + 1) * dim]);
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    iter: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    what: &'a str,
}

impl<'a> Lines<'a> {
    fn err(&self, lineno: usize, msg: impl std::fmt::Display) -> CliError {
        CliError::Input(format!("{} line {lineno}: {msg}", self.what))
    }

    fn peek_key(&mut self) -> Option<&'a str> {
        self.iter.peek().and_then(|(_, l)| l.split_whitespace().next())
    }

    /// Next line, which must start with `key`; returns its remaining tokens.
    fn expect(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, line) = self
            .iter
            .next()
            .ok_or_else(|| CliError::Input(format!("{}: truncated, expected {key}", self.what)))?;
        let mut tokens = line.split_whitespace();
        if tokens.next() != Some(key) {
            return Err(self.err(n + 1, format!("expected {key}")));
        }
        Ok((n + 1, tokens.collect()))
    }

    fn single(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (n, t) = self.expect(key)?;
        match t[..] {
            [v] => Ok((n, v)),
            _ => Err(self.err(n, format!("{key} takes one value"))),
        }
    }

    fn parse<T: std::str::FromStr>(&self, n: usize, token: &str) -> Result<T> {
        token
            .parse()
            .map_err(|_| self.err(n, format!("cannot parse {token:?}")))
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (n, v) = self.single(key)?;
        self.parse(n, v)
    }

    fn floats(&self, n: usize, tokens: &[&str]) -> Result<Vec<f64>> {
        tokens.iter().map(|t| self.parse(n, t)).collect()
    }
}

pub fn parse_checkpoint(text: &str, what: &str) -> Result<Checkpoint> {
    let mut lines = Lines {
        iter: text.lines().enumerate().peekable(),
        what,
    };
    match lines.iter.next() {
        Some((_, h)) if h.trim() == CHECKPOINT_HEADER => {}
        _ => {
            return Err(CliError::Input(format!(
                "{what}: expected header `{CHECKPOINT_HEADER}`"
            )))
        }
    }
    let (n, scorer) = lines.single("scorer")?;
    let scorer = scorer.parse().map_err(|_| lines.err(n, "unknown scorer"))?;
    let (_, names) = lines.expect("relations")?;
    let (_, none) = lines.single("no_relation")?;
    let relset = RelationSet::new(&names, (none != "-").then_some(none))?;
    let input_dim = lines.number("input_dim")?;
    let relation_dim = lines.number("relation_dim")?;
    let latent_dim = lines.number("latent_dim")?;
    let mut config = ModelConfig::new(relset, scorer, input_dim, relation_dim, latent_dim);
    config.hidden_dim = lines.number("hidden_dim")?;
    config.dropout = lines.number("dropout")?;
    let (n, post) = lines.expect("posterior")?;
    config.posterior = match post[..] {
        ["learned"] => PosteriorMode::Learned,
        ["pinned", s] => PosteriorMode::Pinned(lines.parse(n, s)?),
        _ => return Err(lines.err(n, "expected learned or pinned SIGMA")),
    };
    let (n, k) = lines.single("kernel_scale")?;
    config.kernel_scale = if k == "auto" { None } else { Some(lines.parse(n, k)?) };
    config.init_sigma = lines.number("init_sigma")?;
    let (n, a) = lines.expect("anneal")?;
    let anneal = match a[..] {
        [s, e, k] => AnnealSchedule {
            start: lines.parse(n, s)?,
            end: lines.parse(n, e)?,
            epochs: lines.parse(n, k)?,
        },
        _ => return Err(lines.err(n, "anneal takes start end epochs")),
    };
    let (n, b) = lines.single("best_epoch")?;
    let best_epoch = if b == "none" { None } else { Some(lines.parse(n, b)?) };
    let best_dev_f1 = lines.number("best_dev_f1")?;
    let epochs_run = lines.number("epochs_run")?;
    let mut history = Vec::new();
    while lines.peek_key() == Some("history") {
        let (n, t) = lines.expect("history")?;
        if t.len() != 6 {
            return Err(lines.err(n, "history takes 6 values"));
        }
        let f = lines.floats(n, &t[1..])?;
        history.push(EpochRecord {
            epoch: lines.parse(n, t[0])?,
            lambda: f[0],
            loss: f[1],
            nll: f[2],
            mmd: f[3],
            dev_f1: f[4],
        });
    }
    let mut rng = Vec::new();
    while lines.peek_key() == Some("rng") {
        let (n, t) = lines.expect("rng")?;
        match t[..] {
            [c, s, p] => rng.push(RngState {
                component: c.to_string(),
                seed: lines.parse(n, s)?,
                position: lines.parse(n, p)?,
            }),
            _ => return Err(lines.err(n, "rng takes component seed position")),
        }
    }
    let mut params = Vec::new();
    for b in Block::ALL {
        let (n, t) = lines.expect("block")?;
        if t.len() < 2 || t[0] != b.name() {
            return Err(lines.err(n, format!("expected block {}", b.name())));
        }
        let len: usize = lines.parse(n, t[1])?;
        if t.len() != len + 2 {
            return Err(lines.err(
                n,
                format!("block {} declares {len} values, has {}", b.name(), t.len() - 2),
            ));
        }
        params.extend(lines.floats(n, &t[2..])?);
    }
    let model = Model::from_params(config, params)?;
    let lookup = if lines.peek_key() == Some("lookup") {
        let (n, t) = lines.expect("lookup")?;
        let (dim, rows, trainable): (usize, usize, u8) = match t[..] {
            [d, r, tr] => (lines.parse(n, d)?, lines.parse(n, r)?, lines.parse(n, tr)?),
            _ => return Err(lines.err(n, "lookup takes dim rows trainable")),
        };
        let mut keys = Vec::with_capacity(rows);
        let mut table = Vec::with_capacity(rows * dim);
        for _ in 0..rows {
            let (n, t) = lines.expect("row")?;
            if t.len() != dim + 1 {
                return Err(lines.err(n, format!("row needs a key and {dim} values")));
            }
            keys.push(t[0].to_string());
            table.extend(lines.floats(n, &t[1..])?);
        }
        Some(LookupTable::from_rows(keys, dim, table, trainable == 1)?)
    } else {
        None
    };
    lines.expect("end")?;
    Ok(Checkpoint {
        model,
        lookup,
        anneal,
        best_epoch,
        best_dev_f1,
        epochs_run,
        history,
        rng,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_text(path, &write_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    parse_checkpoint(&read_text(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use bayestrans_core::numerics::SeededRng;
    use bayestrans_core::scorers::ScorerKind;

    fn checkpoint(scorer: ScorerKind, lookup: bool) -> Checkpoint {
        let mut cfg = ModelConfig::new(RelationSet::matres(), scorer, 3, 2, 8);
        cfg.kernel_scale = Some(0.3);
        cfg.posterior = PosteriorMode::Pinned(1e-6);
        let mut rng = SeededRng::new(9);
        let model = Model::init(cfg, &mut rng).unwrap();
        let lookup = lookup.then(|| LookupTable::new(&["a:head", "a:tail"], 3, true, &mut rng).unwrap());
        Checkpoint {
            model,
            lookup,
            anneal: AnnealSchedule::default(),
            best_epoch: Some(1),
            best_dev_f1: 100.0 / 3.0,
            epochs_run: 2,
            history: vec![EpochRecord {
                epoch: 1,
                lambda: 0.01,
                loss: 1.0 / 7.0,
                nll: 0.1,
                mmd: -1e-310,
                dev_f1: 100.0 / 3.0,
            }],
            rng: vec![RngState {
                component: "sample".into(),
                seed: u64::MAX,
                position: u128::MAX >> 60,
            }],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for (scorer, lookup) in [(ScorerKind::MuRE, false), (ScorerKind::AttH, true)] {
            let ck = checkpoint(scorer, lookup);
            let text = write_checkpoint(&ck);
            let back = parse_checkpoint(&text, "ck").unwrap();
            assert_eq!(back, ck);
            assert_eq!(write_checkpoint(&back), text);
        }
    }

    #[test]
    fn truncated_or_altered_files_fail() {
        let text = write_checkpoint(&checkpoint(ScorerKind::TransE, false));
        assert!(parse_checkpoint(&text[..text.len() / 2], "ck").is_err());
        assert!(parse_checkpoint(&text.replace("block hidden.weight", "block hidden.bias"), "ck").is_err());
        assert!(parse_checkpoint(
            &text.replacen("bayestrans-checkpoint 1", "bayestrans-checkpoint 2", 1),
            "ck"
        )
        .is_err());
    }
}
