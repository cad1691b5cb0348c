//! Plain-text file formats: keyed vector files, knowledge-graph triples,
//! prior files and metric reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use bayestrans_core::encoder::PrecomputedEmbeddings;
use bayestrans_core::metrics::MetricsReport;
use bayestrans_core::prior::{KnowledgeGraph, PriorSegment, PriorSpec, SegmentSource};
use bayestrans_core::scorers::RelationSet;

use crate::error::{CliError, Result};

pub const PRIOR_HEADER: &str = "bayestrans-prior 1";

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn line_err(what: &str, lineno: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{what} line {lineno}: {msg}"))
}

fn parse_f64(token: &str, what: &str, lineno: usize) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| line_err(what, lineno, format!("cannot parse number {token:?}")))?;
    if !v.is_finite() {
        return Err(line_err(what, lineno, format!("non-finite value {token}")));
    }
    Ok(v)
}

/// Writes `v` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_values(out: &mut String, values: &[f64]) {
    for v in values {
        out.push(' ');
        out.push_str(&fmt_f64(*v));
    }
}

/// `(key, vector)` rows in file order.
pub type KeyedRows = Vec<(String, Vec<f64>)>;

/// Parses a `#dim D` file of `key v_1 ... v_D` rows.
pub fn parse_keyed_vectors(text: &str, what: &str) -> Result<(usize, KeyedRows)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::Input(format!("{what}: empty file")))?;
    let dim: usize = header
        .trim()
        .strip_prefix("#dim")
        .and_then(|d| d.trim().parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| line_err(what, 1, "expected header `#dim D`"))?;
    let mut rows = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (n, line) in lines {
        let lineno = n + 1;
        let mut tokens = line.split_whitespace();
        let key = tokens.next().expect("non-blank line has a token");
        let values = tokens
            .map(|t| parse_f64(t, what, lineno))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(line_err(
                what,
                lineno,
                format!("{key} has {} values, expected {dim}", values.len()),
            ));
        }
        if !seen.insert(key.to_string()) {
            return Err(line_err(what, lineno, format!("duplicate key {key}")));
        }
        rows.push((key.to_string(), values));
    }
    Ok((dim, rows))
}

pub fn write_keyed_vectors<'a>(dim: usize, rows: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> String {
    let mut out = format!("#dim {dim}\n");
    for (key, values) in rows {
        out.push_str(key);
        push_values(&mut out, values);
        out.push('\n');
    }
    out
}

pub fn load_precomputed(path: &Path) -> Result<PrecomputedEmbeddings> {
    let what = path.display().to_string();
    let (dim, rows) = parse_keyed_vectors(&read_text(path)?, &what)?;
    let mut emb = PrecomputedEmbeddings::new(dim)?;
    for (key, values) in rows {
        emb.insert(key, values)?;
    }
    Ok(emb)
}

pub fn write_embeddings(emb: &PrecomputedEmbeddings) -> String {
    let dim = emb.iter().next().map_or(1, |(_, v)| v.len());
    write_keyed_vectors(dim, emb.iter())
}

/// Parses `head \t relation \t tail` lines; blank and `#` lines are skipped.
pub fn parse_triples(text: &str, what: &str) -> Result<Vec<(String, String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        match fields[..] {
            [h, r, t] if !h.is_empty() && !r.is_empty() && !t.is_empty() => {
                out.push((h.to_string(), r.to_string(), t.to_string()))
            }
            _ => return Err(line_err(what, n + 1, "expected head<TAB>relation<TAB>tail")),
        }
    }
    Ok(out)
}

/// Builds a graph from a node feature file and a triple file.
pub fn load_graph(features: &Path, triples: &Path) -> Result<KnowledgeGraph> {
    let what = features.display().to_string();
    let (dim, nodes) = parse_keyed_vectors(&read_text(features)?, &what)?;
    let edges = parse_triples(&read_text(triples)?, &triples.display().to_string())?;
    let mut g = KnowledgeGraph::new(dim)?;
    for (id, f) in nodes {
        g.add_node(id, f)?;
    }
    for (h, r, t) in &edges {
        g.add_edge(h, r, t)?;
    }
    Ok(g)
}

/// Contents of a prior file.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorFile {
    pub relations: Vec<String>,
    /// Relation-set name to knowledge-graph relation name.
    pub mapping: Vec<(String, String)>,
    pub spec: PriorSpec,
}

impl PriorFile {
    /// Checks that the prior was built for `relset` and latent dimension `dz`.
    pub fn check(&self, relset: &RelationSet, dz: usize) -> Result<()> {
        if self.relations != relset.names() {
            return Err(CliError::Config(format!(
                "prior was built for relations {:?}, the model uses {:?}",
                self.relations,
                relset.names()
            )));
        }
        if self.spec.dim() != dz {
            return Err(CliError::Config(format!(
                "prior has latent dimension {}, the model uses {dz}",
                self.spec.dim()
            )));
        }
        Ok(())
    }
}

pub fn write_prior(prior: &PriorFile) -> String {
    let spec = &prior.spec;
    let mut out = format!("{PRIOR_HEADER}\nlatent_dim {}\nrelations", spec.dim());
    for r in &prior.relations {
        out.push(' ');
        out.push_str(r);
    }
    out.push('\n');
    for (rel, kg) in &prior.mapping {
        let _ = writeln!(out, "map {rel} {kg}");
    }
    let mut covered = 0;
    for seg in spec.segments() {
        let source = match &seg.source {
            SegmentSource::KnowledgeGraph(kg) => format!("kg {kg}"),
            SegmentSource::StandardGaussian => "standard".to_string(),
        };
        let _ = write!(
            out,
            "segment {} {} {} {source}",
            seg.relation, seg.range.start, seg.range.end
        );
        push_values(&mut out, &spec.mean()[seg.range.clone()]);
        out.push('\n');
        covered = covered.max(seg.range.end);
    }
    if covered < spec.dim() {
        let _ = write!(out, "remainder {covered} {}", spec.dim());
        push_values(&mut out, &spec.mean()[covered..]);
        out.push('\n');
    }
    out
}

pub fn parse_prior(text: &str, what: &str) -> Result<PriorFile> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == PRIOR_HEADER => {}
        _ => return Err(line_err(what, 1, format!("expected header `{PRIOR_HEADER}`"))),
    }
    let mut dim = None;
    let mut relations = Vec::new();
    let mut mapping = Vec::new();
    let mut segments = Vec::new();
    let mut mean = Vec::new();
    for (n, line) in lines {
        let lineno = n + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let range = |a: &str, b: &str| -> Result<std::ops::Range<usize>> {
            let (a, b) = (a.parse::<usize>(), b.parse::<usize>());
            match (a, b, dim) {
                (Ok(a), Ok(b), Some(d)) if a <= b && b <= d => Ok(a..b),
                _ => Err(line_err(what, lineno, "bad segment range")),
            }
        };
        match tokens[..] {
            ["latent_dim", d] => {
                let d: usize = d.parse().map_err(|_| line_err(what, lineno, "bad latent_dim"))?;
                dim = Some(d);
                mean = vec![0.0; d];
            }
            ["relations", ref names @ ..] => relations = names.iter().map(|s| s.to_string()).collect(),
            ["map", rel, kg] => mapping.push((rel.to_string(), kg.to_string())),
            ["segment", rel, a, b, ref rest @ ..] => {
                let r = range(a, b)?;
                let (source, values) = match rest {
                    ["kg", kg, values @ ..] => (SegmentSource::KnowledgeGraph(kg.to_string()), values),
                    ["standard", values @ ..] => (SegmentSource::StandardGaussian, values),
                    _ => return Err(line_err(what, lineno, "expected segment source kg NAME or standard")),
                };
                fill(&mut mean, r.clone(), values, what, lineno)?;
                segments.push(PriorSegment {
                    relation: rel.to_string(),
                    range: r,
                    source,
                });
            }
            ["remainder", a, b, ref values @ ..] => {
                let r = range(a, b)?;
                fill(&mut mean, r, values, what, lineno)?;
            }
            _ => return Err(line_err(what, lineno, "unrecognized line")),
        }
    }
    if dim.is_none() {
        return Err(CliError::Input(format!("{what}: missing latent_dim")));
    }
    Ok(PriorFile {
        relations,
        mapping,
        spec: PriorSpec::new(mean, segments)?,
    })
}

fn fill(mean: &mut [f64], r: std::ops::Range<usize>, values: &[&str], what: &str, lineno: usize) -> Result<()> {
    if values.len() != r.len() {
        return Err(line_err(
            what,
            lineno,
            format!("expected {} values, found {}", r.len(), values.len()),
        ));
    }
    for (m, t) in mean[r].iter_mut().zip(values) {
        *m = parse_f64(t, what, lineno)?;
    }
    Ok(())
}

pub fn load_prior(path: &Path) -> Result<PriorFile> {
    parse_prior(&read_text(path)?, &path.display().to_string())
}

/// One `name=value` line per metric, scores with 4 decimals.
pub fn metrics_kv(report: &MetricsReport) -> String {
    let mut out = String::new();
    let instances: usize = report.classes.iter().map(|c| c.gold).sum();
    let _ = writeln!(out, "convention={}", report.convention);
    let _ = writeln!(out, "instances={instances}");
    let _ = writeln!(out, "precision={:.4}", report.precision);
    let _ = writeln!(out, "recall={:.4}", report.recall);
    let _ = writeln!(out, "f1={:.4}", report.f1);
    let _ = writeln!(out, "micro_f1={:.4}", report.micro_f1);
    for c in &report.classes {
        let _ = writeln!(out, "class.{}.precision={:.4}", c.name, c.precision);
        let _ = writeln!(out, "class.{}.recall={:.4}", c.name, c.recall);
        let _ = writeln!(out, "class.{}.f1={:.4}", c.name, c.f1);
        let _ = writeln!(out, "class.{}.gold={}", c.name, c.gold);
        let _ = writeln!(out, "class.{}.predicted={}", c.name, c.predicted);
        let _ = writeln!(out, "class.{}.flagged={}", c.name, u8::from(c.flagged));
    }
    for (g, row) in report.confusion.iter().enumerate() {
        for (p, n) in row.iter().enumerate() {
            let _ = writeln!(
                out,
                "confusion.{}.{}={n}",
                report.classes[g].name, report.classes[p].name
            );
        }
    }
    out
}

pub fn parse_metrics_kv(text: &str) -> Result<BTreeMap<String, String>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| line_err("metrics", n + 1, "expected name=value"))
        })
        .collect()
}

/// Human-readable summary, per-class table and confusion matrix.
pub fn metrics_table(report: &MetricsReport, split: &str) -> String {
    let mut out = String::new();
    let instances: usize = report.classes.iter().map(|c| c.gold).sum();
    let _ = writeln!(
        out,
        "split {split}, {instances} instances, {} convention",
        report.convention
    );
    let _ = writeln!(
        out,
        "precision {:6.2}  recall {:6.2}  F1 {:6.2}  micro-F1 {:6.2}\n",
        report.precision, report.recall, report.f1, report.micro_f1
    );
    let width = report.classes.iter().map(|c| c.name.len()).max().unwrap_or(0).max(5);
    let _ = writeln!(
        out,
        "{:width$}  {:>9}  {:>7}  {:>7}  {:>6}  {:>6}",
        "class", "precision", "recall", "F1", "gold", "pred"
    );
    for c in &report.classes {
        let _ = writeln!(
            out,
            "{:width$}  {:9.2}  {:7.2}  {:7.2}  {:6}  {:6}{}",
            c.name,
            c.precision,
            c.recall,
            c.f1,
            c.gold,
            c.predicted,
            if c.flagged { "  *" } else { "" }
        );
    }
    if report.classes.iter().any(|c| c.flagged) {
        out.push_str("* zero denominator, reported as 0\n");
    }
    let _ = write!(out, "\nconfusion (rows gold, columns predicted)\n{:width$}", "");
    for c in &report.classes {
        let _ = write!(out, "  {:>w$}", c.name, w = c.name.len().max(6));
    }
    out.push('\n');
    for (c, row) in report.classes.iter().zip(&report.confusion) {
        let _ = write!(out, "{:width$}", c.name);
        for (p, n) in report.classes.iter().zip(row) {
            let _ = write!(out, "  {:>w$}", n, w = p.name.len().max(6));
        }
        out.push('\n');
    }
    for w in &report.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use bayestrans_core::metrics::{compute_metrics, Convention};
    use bayestrans_core::prior::assemble_prior;

    #[test]
    fn keyed_vectors_parse_and_report_lines() {
        let (dim, rows) = parse_keyed_vectors("#dim 2\na:head 1 2\n\na:tail 3 -4.5e-1\n", "f").unwrap();
        assert_eq!(dim, 2);
        assert_eq!(rows[1], ("a:tail".to_string(), vec![3.0, -0.45]));
        let err = parse_keyed_vectors("#dim 2\nx 1 2\ny 1\n", "f").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = parse_keyed_vectors("#dim 2\nx 1 2\nx 1 2\n", "f").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        assert!(parse_keyed_vectors("x 1 2\n", "f").is_err());
        assert!(parse_keyed_vectors("#dim 1\nx nan\n", "f").is_err());
    }

    #[test]
    fn triples_need_three_fields() {
        let t = parse_triples("# kg\na\tIsBefore\tb\n\nb\tIsAfter\ta\n", "kg").unwrap();
        assert_eq!(t.len(), 2);
        let err = parse_triples("a\tIsBefore\n", "kg").unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn prior_file_round_trips_exactly() {
        let rs = RelationSet::matres();
        let embs: BTreeMap<String, Vec<f64>> = [
            ("IsBefore".to_string(), vec![0.1, 1.0 / 3.0, -2e-300]),
            ("IsAfter".to_string(), vec![std::f64::consts::PI, -1.0, 5.0]),
        ]
        .into();
        let mapping = vec![
            ("Before".to_string(), "IsBefore".to_string()),
            ("After".to_string(), "IsAfter".to_string()),
        ];
        let spec = assemble_prior(&embs, &mapping, &rs, 14).unwrap();
        let file = PriorFile {
            relations: rs.names().to_vec(),
            mapping,
            spec,
        };
        let text = write_prior(&file);
        let back = parse_prior(&text, "p").unwrap();
        assert_eq!(back, file);
        assert_eq!(write_prior(&back), text);
        back.check(&rs, 14).unwrap();
        assert!(back.check(&rs, 16).is_err());
        assert!(parse_prior("bayestrans-prior 2\n", "p").is_err());
    }

    #[test]
    fn metric_lines_have_four_decimals() {
        let r = compute_metrics(
            &[0, 0, 1, 3, 2, 3],
            &[0, 1, 1, 0, 3, 1],
            &RelationSet::matres(),
            Convention::Matres,
        )
        .unwrap();
        let kv = parse_metrics_kv(&metrics_kv(&r)).unwrap();
        assert_eq!(kv["precision"], "40.0000");
        assert_eq!(kv["recall"], "50.0000");
        assert_eq!(kv["f1"], "44.4444");
        assert_eq!(kv["micro_f1"], "33.3333");
        assert_eq!(kv["class.Equal.flagged"], "1");
        assert_eq!(kv["confusion.Vague.After"], "1");
        let table = metrics_table(&r, "test");
        assert!(table.contains("Equal") && table.contains('*'));
    }
}
