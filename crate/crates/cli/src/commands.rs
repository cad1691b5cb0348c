//! Subcommand implementations. Each writes its artifacts under the output
//! directory together with a `run_manifest.<command>.toml`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bayestrans_core::analysis::{
    activity_scores, mc_predict, simplex_classes, simplex_export, uncertainty as mc_uncertainty,
};
use bayestrans_core::encoder::{EmbeddingProvider, LookupTable};
use bayestrans_core::numerics::{argmax, SeededRng};
use bayestrans_core::prior::{
    assemble_prior, augment_similarity_edges, train_link_prediction, LinkPredictionConfig, PriorSpec,
};
use bayestrans_core::scorers::RelationSet;
use bayestrans_core::train::{evaluate, predict_split, Checkpoint, DatasetSplit, SplitName, Trainer};
use log::info;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::ResolvedConfig;
use crate::error::{CliError, Result};
use crate::formats::{
    load_graph, load_precomputed, load_prior, metrics_kv, metrics_table, read_text, write_prior, write_text, PriorFile,
};
use crate::svg::simplex_svg;
use crate::{CommonArgs, EvalArgs, SplitArgs, UncertaintyArgs};

struct Run {
    rc: ResolvedConfig,
    overrides: Vec<String>,
    out: PathBuf,
    written: Vec<PathBuf>,
}

impl Run {
    fn start(args: &CommonArgs, extra: &[String]) -> Result<Self> {
        let mut overrides = args.all_overrides();
        overrides.extend_from_slice(extra);
        let rc = ResolvedConfig::load(args.config.as_deref(), &overrides)?;
        Ok(Self {
            rc,
            overrides,
            out: args.out.clone(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        write_text(&path, text)?;
        self.written.push(path.clone());
        Ok(path)
    }

    fn write_csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| CliError::Runtime(format!("cannot encode {name}: {e}"));
        w.write_record(header).map_err(fail)?;
        for r in rows {
            w.write_record(r).map_err(fail)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::Runtime(format!("cannot encode {name}: {e}")))?;
        self.write(name, &String::from_utf8(bytes).expect("csv of utf-8 fields"))?;
        Ok(())
    }

    fn finish(mut self, command: &str) -> Result<Vec<PathBuf>> {
        let manifest = self.rc.manifest(command, &self.overrides, &self.out);
        self.write(&format!("run_manifest.{command}.toml"), &manifest)?;
        Ok(self.written)
    }

    /// Configured path under `key`, which must be set.
    fn required(&self, value: &str, key: &str) -> Result<PathBuf> {
        self.rc
            .path(value)
            .ok_or_else(|| CliError::Config(format!("{key} is not set")))
    }

    fn split_path(&self, split: SplitName) -> Option<PathBuf> {
        let d = &self.rc.config.data;
        self.rc.path(match split {
            SplitName::Train => &d.train,
            SplitName::Dev => &d.dev,
            SplitName::Test => &d.test,
        })
    }

    fn load_split(&self, path: &Path, name: SplitName, relset: &RelationSet) -> Result<DatasetSplit> {
        DatasetSplit::parse(&read_text(path)?, name, relset)
            .map_err(|e| CliError::Input(format!("{}: {}", path.display(), CliError::from(e))))
    }

    /// Precomputed embeddings from `data.embeddings`, or a lookup table
    /// over every id of `splits` when that path is empty.
    fn provider(&self, splits: &[&DatasetSplit]) -> Result<EmbeddingProvider> {
        let d = &self.rc.config.data;
        match self.rc.path(&d.embeddings) {
            Some(p) => Ok(EmbeddingProvider::Precomputed(load_precomputed(&p)?)),
            None => {
                let mut seen = BTreeSet::new();
                let keys: Vec<String> = splits
                    .iter()
                    .flat_map(|s| s.keys())
                    .filter(|k| seen.insert(k.clone()))
                    .collect();
                let mut rng = SeededRng::for_component(self.rc.config.seed, "lookup");
                Ok(EmbeddingProvider::Lookup(LookupTable::new(
                    &keys,
                    d.lookup_dim,
                    d.lookup_trainable,
                    &mut rng,
                )?))
            }
        }
    }

    fn prior(&self, relset: &RelationSet) -> Result<PriorSpec> {
        let dz = self.rc.config.model.latent_dim;
        match self.rc.config.prior.source.as_str() {
            "file" => {
                let path = self.required(&self.rc.config.prior.path, "prior.path")?;
                let file = load_prior(&path)?;
                file.check(relset, dz)?;
                Ok(file.spec)
            }
            _ => Ok(PriorSpec::standard(dz)),
        }
    }
}

pub fn prior_train(args: &CommonArgs) -> Result<Vec<PathBuf>> {
    let mut run = Run::start(args, &[])?;
    let c = &run.rc.config;
    let relset = c.relset()?;
    let pt = &c.prior_train;
    let features = run.required(&pt.node_features, "prior_train.node_features")?;
    let triples = run.required(&pt.kg_triples, "prior_train.kg_triples")?;
    let mut graph = load_graph(&features, &triples)?;
    if pt.augment {
        graph = augment_similarity_edges(&graph, pt.similarity_threshold)?;
    }
    info!(
        "knowledge graph: {} nodes, {} edges, {} relations",
        graph.node_count(),
        graph.edges().len(),
        graph.relations().len()
    );
    let lp = LinkPredictionConfig {
        dim: pt.dim,
        epochs: pt.epochs,
        learning_rate: pt.learning_rate,
        seed: c.seed,
    };
    let predictor = train_link_prediction(&graph, &lp)?;
    let mapping: Vec<(String, String)> = pt.mapping.iter().map(|(a, b)| (a.clone(), b.clone())).collect();
    let spec = assemble_prior(&predictor.relation_embeddings(), &mapping, &relset, c.model.latent_dim)?;
    let file = PriorFile {
        relations: relset.names().to_vec(),
        mapping,
        spec,
    };
    run.write("prior.txt", &write_prior(&file))?;
    run.finish("prior-train")
}

pub fn train(args: &CommonArgs) -> Result<Vec<PathBuf>> {
    let mut run = Run::start(args, &[])?;
    let relset = run.rc.config.relset()?;
    let train_path = run
        .split_path(SplitName::Train)
        .ok_or_else(|| CliError::Config("data.train is not set".into()))?;
    let train_split = run.load_split(&train_path, SplitName::Train, &relset)?;
    let dev_split = match run.split_path(SplitName::Dev) {
        Some(p) => run.load_split(&p, SplitName::Dev, &relset)?,
        None => DatasetSplit::new(SplitName::Dev, Vec::new())?,
    };
    let mut all = vec![&train_split, &dev_split];
    // lookup tables also cover the test ids so later commands can resolve them
    let test_split = match run.split_path(SplitName::Test) {
        Some(p) if run.rc.config.data.embeddings.is_empty() && p.exists() => {
            Some(run.load_split(&p, SplitName::Test, &relset)?)
        }
        _ => None,
    };
    all.extend(test_split.as_ref());
    let provider = run.provider(&all)?;
    let model_config = run.rc.config.model_config(provider.dim())?;
    let train_config = run.rc.config.train_config()?;
    let prior = run.prior(&relset)?;

    let mut trainer = Trainer::new(model_config, &train_config, &train_split, &dev_split, &provider, &prior)?;
    for _ in 0..train_config.epochs {
        let r = trainer.run_epoch()?;
        info!(
            "epoch {:>3}  lambda {:.4}  loss {:.5}  nll {:.5}  mmd {:.5}  dev F1 {:.2}",
            r.epoch, r.lambda, r.loss, r.nll, r.mmd, r.dev_f1
        );
    }
    let ck = trainer.finish();
    match ck.best_epoch {
        Some(e) => info!("best dev F1 {:.2} at epoch {e}", ck.best_dev_f1),
        None => info!("best dev F1 {:.2} at initialization", ck.best_dev_f1),
    }
    let path = run.out.join("checkpoint.txt");
    save_checkpoint(&path, &ck)?;
    run.written.push(path);

    let header = ["epoch", "lambda", "loss", "nll", "mmd", "dev_f1"].map(String::from);
    let rows: Vec<Vec<String>> = ck
        .history
        .iter()
        .map(|h| {
            vec![
                h.epoch.to_string(),
                h.lambda.to_string(),
                h.loss.to_string(),
                h.nll.to_string(),
                h.mmd.to_string(),
                h.dev_f1.to_string(),
            ]
        })
        .collect();
    run.write_csv("history.csv", &header, &rows)?;

    if !dev_split.is_empty() {
        let provider = ck.provider(Some(&provider))?;
        let convention = run.rc.config.convention()?;
        let prediction = run.rc.config.prediction()?;
        let report = evaluate(&ck.model, &provider, &dev_split, convention, prediction)?;
        run.write("metrics_dev.txt", &metrics_kv(&report))?;
        run.write("report_dev.txt", &metrics_table(&report, "dev"))?;
    }
    run.finish("train")
}

/// Checkpoint, its relation set, the chosen split and a provider for it.
struct Loaded {
    ck: Checkpoint,
    split_name: SplitName,
    split: DatasetSplit,
    provider: EmbeddingProvider,
}

fn load_for_split(run: &Run, args: &SplitArgs) -> Result<Loaded> {
    let ck_path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| run.out.join("checkpoint.txt"));
    let ck = load_checkpoint(&ck_path)?;
    let name_str = args.split.as_deref().unwrap_or(&run.rc.config.eval.split);
    let split_name: SplitName = name_str.parse()?;
    let path = match &args.dataset {
        Some(p) => p.clone(),
        None => run
            .split_path(split_name)
            .ok_or_else(|| CliError::Config(format!("data.{split_name} is not set")))?,
    };
    let relset = ck.model.config().relset.clone();
    let split = run.load_split(&path, split_name, &relset)?;
    if split.is_empty() {
        return Err(CliError::Input(format!("{} has no instances", path.display())));
    }
    let external = match ck.lookup {
        Some(_) => None,
        None => {
            let p = run.required(&run.rc.config.data.embeddings, "data.embeddings")?;
            Some(EmbeddingProvider::Precomputed(load_precomputed(&p)?))
        }
    };
    let provider = ck.provider(external.as_ref())?;
    Ok(Loaded {
        ck,
        split_name,
        split,
        provider,
    })
}

pub fn eval(args: &EvalArgs) -> Result<Vec<PathBuf>> {
    let extra: Vec<String> = args
        .convention
        .iter()
        .map(|c| format!("train.convention={c}"))
        .collect();
    let mut run = Run::start(&args.split.common, &extra)?;
    let l = load_for_split(&run, &args.split)?;
    let convention = run.rc.config.convention()?;
    let prediction = run.rc.config.prediction()?;
    let report = evaluate(&l.ck.model, &l.provider, &l.split, convention, prediction)?;
    let table = metrics_table(&report, l.split_name.name());
    print!("{table}");
    run.write(&format!("metrics_{}.txt", l.split_name), &metrics_kv(&report))?;
    run.write(&format!("report_{}.txt", l.split_name), &table)?;
    run.finish("eval")
}

pub fn predict(args: &SplitArgs) -> Result<Vec<PathBuf>> {
    let mut run = Run::start(&args.common, &[])?;
    let l = load_for_split(&run, args)?;
    let relset = &l.ck.model.config().relset;
    let probs = predict_split(&l.ck.model, &l.provider, &l.split, run.rc.config.prediction()?)?;
    let mut header = ["id", "gold", "predicted"].map(String::from).to_vec();
    header.extend(relset.names().iter().map(|n| format!("p_{n}")));
    let rows: Vec<Vec<String>> = l
        .split
        .items
        .iter()
        .zip(&probs)
        .map(|(it, p)| {
            let mut row = vec![
                it.id.clone(),
                relset.name(it.label).to_string(),
                relset.name(p.argmax()).to_string(),
            ];
            row.extend(p.iter().map(f64::to_string));
            row
        })
        .collect();
    run.write_csv(&format!("predictions_{}.csv", l.split_name), &header, &rows)?;
    run.finish("predict")
}

pub fn uncertainty(args: &UncertaintyArgs) -> Result<Vec<PathBuf>> {
    let mut run = Run::start(&args.split.common, &[])?;
    let l = load_for_split(&run, &args.split)?;
    let passes = args.passes.unwrap_or(run.rc.config.analysis.passes);
    if passes < 2 {
        return Err(CliError::Config(format!(
            "uncertainty needs at least 2 passes, got {passes}"
        )));
    }
    let relset = l.ck.model.config().relset.clone();
    let drop = run.rc.config.analysis.drop_class.clone();
    let kept = (!drop.is_empty())
        .then(|| simplex_classes(&relset, &drop))
        .transpose()?;
    let mut rng = SeededRng::for_component(run.rc.config.seed, "uncertainty");
    let mut unc_rows = Vec::new();
    let mut simplex_rows = Vec::new();
    let mut all_points = Vec::new();
    for inst in l.split.instances(&l.provider)? {
        let mc = mc_predict(&l.ck.model, &inst, passes, &mut rng)?;
        let u = mc_uncertainty(&mc)?;
        unc_rows.push(vec![
            inst.id.clone(),
            u.total.to_string(),
            u.model.to_string(),
            relset.name(argmax(&mc.mean())).to_string(),
            relset.name(inst.label).to_string(),
        ]);
        if kept.is_some() {
            for r in simplex_export(&mc, &relset, &drop)? {
                simplex_rows.push(vec![
                    inst.id.clone(),
                    r.pass.to_string(),
                    r.x.to_string(),
                    r.y.to_string(),
                    relset.name(r.argmax).to_string(),
                ]);
                all_points.push(r);
            }
        }
    }
    let split = l.split_name;
    let header = ["id", "total", "model", "predicted", "gold"].map(String::from);
    run.write_csv(&format!("uncertainty_{split}.csv"), &header, &unc_rows)?;
    if let Some(kept) = kept {
        let header = ["id", "pass", "x", "y", "argmax"].map(String::from);
        run.write_csv(&format!("simplex_{split}.csv"), &header, &simplex_rows)?;
        if run.rc.config.analysis.svg {
            let corners = kept.map(|k| relset.name(k));
            let svg = simplex_svg(&all_points, corners, relset.names());
            run.write(&format!("simplex_{split}.svg"), &svg)?;
        }
    }
    run.finish("uncertainty")
}

pub fn activity(args: &SplitArgs) -> Result<Vec<PathBuf>> {
    let mut run = Run::start(&args.common, &[])?;
    let l = load_for_split(&run, args)?;
    let instances = l.split.instances(&l.provider)?;
    let report = activity_scores(&l.ck.model, &instances)?;
    let header = ["dim", "activity"].map(String::from);
    let rows: Vec<Vec<String>> = report
        .values
        .iter()
        .enumerate()
        .map(|(j, v)| vec![j.to_string(), v.to_string()])
        .collect();
    let split = l.split_name;
    run.write_csv(&format!("activity_{split}.csv"), &header, &rows)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "dims={}", report.values.len());
    for (k, v) in [
        ("min", report.min),
        ("median", report.median),
        ("max", report.max),
        ("mean", report.mean),
    ] {
        let _ = writeln!(summary, "{k}={v:.6e}");
    }
    run.write(&format!("activity_summary_{split}.txt"), &summary)?;
    run.finish("activity")
}
