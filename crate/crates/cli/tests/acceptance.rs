//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use bayestrans::formats::{metrics_kv, parse_metrics_kv, read_text};
use bayestrans_core::analysis::{activity_scores, uncertainty, McPredictions};
use bayestrans_core::encoder::{project_to_scoring_space, EventPairInstance, Projection};
use bayestrans_core::geometry::{expmap0, logmap0, poincare_distance, BallPoint};
use bayestrans_core::metrics::{compute_metrics, Convention};
use bayestrans_core::numerics::{dot, grad_check, norm, softmax, ProbVector, SeededRng, GRAD_CHECK_EPS};
use bayestrans_core::prior::{assemble_prior, PriorSpec};
use bayestrans_core::scorers::{
    score, score_transe, score_vjp, AttHParams, ParamLayout, RelationParams, RelationSet, ScorerKind, ScoringSpacePair,
    TranslationalParams,
};
use bayestrans_core::synth::{generate, SyntheticConfig, SyntheticTask};
use bayestrans_core::train::{evaluate, train, DatasetSplit, LabeledPair, Prediction, SplitName, TrainConfig};
use bayestrans_core::variational::{
    batch_objective, imq_kernel, mmd, mmd_grad_x, Model, ModelConfig, ObjectiveOptions,
};

const SCORERS: [ScorerKind; 4] = [ScorerKind::TransE, ScorerKind::MuRE, ScorerKind::MuRP, ScorerKind::AttH];
const POINTS: usize = 20;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn normals(rng: &mut SeededRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.standard_normal()).collect()
}

/// Worst relative error of one scorer's VJP over `POINTS` random points.
fn scorer_gradient_error(kind: ScorerKind, rng: &mut SeededRng) -> f64 {
    let n = 4;
    let layout = ParamLayout::new(kind, 1, n).unwrap();
    let hyperbolic = matches!(kind, ScorerKind::MuRP | ScorerKind::AttH);
    let scale = if hyperbolic { 0.2 } else { 1.0 };
    let mut worst: f64 = 0.0;
    for _ in 0..POINTS {
        let mut x = normals(rng, 2 * n, scale);
        x.extend(normals(rng, layout.len(), if hyperbolic { 0.3 } else { 1.0 }));
        let f = |x: &[f64]| {
            let p = TranslationalParams::from_raw(layout, x[2 * n..].to_vec()).unwrap();
            score(kind, &x[..n], &x[n..2 * n], &p.relation(0))
        };
        let p = TranslationalParams::from_raw(layout, x[2 * n..].to_vec()).unwrap();
        let g = score_vjp(kind, &x[..n], &x[n..2 * n], &p.relation(0), 1.0);
        let mut analytic = g.h;
        analytic.extend(g.t);
        analytic.extend(if kind == ScorerKind::TransE { vec![0.0; n] } else { g.w });
        analytic.extend(g.t_r);
        analytic.extend(g.extras);
        worst = worst.max(grad_check(f, &analytic, &x, GRAD_CHECK_EPS).unwrap());
    }
    worst
}

fn random_model(kind: ScorerKind, rng: &mut SeededRng) -> Model {
    let mut cfg = ModelConfig::new(RelationSet::matres(), kind, 4, 4, 8);
    cfg.dropout = 0.0;
    let zeros = Model::zeros(cfg.clone()).unwrap();
    Model::from_params(cfg, normals(rng, zeros.params().len(), 0.3)).unwrap()
}

fn random_batch(rng: &mut SeededRng, n: usize) -> Vec<EventPairInstance> {
    (0..n)
        .map(|i| EventPairInstance {
            id: format!("b{i}"),
            head: normals(rng, 4, 0.4),
            tail: normals(rng, 4, 0.4),
            label: i % 4,
            text: None,
        })
        .collect()
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(2024);
    let mut parts = Vec::new();
    for kind in SCORERS {
        parts.push((format!("score/{kind}"), scorer_gradient_error(kind, &mut rng)));
    }

    let mut worst: f64 = 0.0;
    for i in 0..POINTS {
        let m = random_model(SCORERS[i % 4], &mut rng);
        let x = normals(&mut rng, 8, 0.5);
        let gm = normals(&mut rng, 8, 1.0);
        let gs = normals(&mut rng, 8, 1.0);
        let (gp, gx) = m.encode_posterior_vjp(&x, &gm, &gs).unwrap();
        let objective = |mm: &Model, x: &[f64]| {
            let g = mm.encode_posterior(x).unwrap();
            dot(&g.mean, &gm) + dot(&g.std, &gs)
        };
        let f = |p: &[f64]| objective(&Model::from_params(m.config().clone(), p.to_vec()).unwrap(), &x);
        worst = worst.max(grad_check(f, &gp, m.params(), GRAD_CHECK_EPS).unwrap());
        worst = worst.max(grad_check(|x: &[f64]| objective(&m, x), &gx, &x, GRAD_CHECK_EPS).unwrap());
    }
    parts.push(("posterior".into(), worst));

    let mut worst: f64 = 0.0;
    let (d, dr) = (5, 3);
    for _ in 0..POINTS {
        let x = normals(&mut rng, d * dr + dr + d, 1.0);
        let g = normals(&mut rng, dr, 1.0);
        let f = |x: &[f64]| {
            let proj = Projection {
                weight: &x[..d * dr],
                bias: &x[d * dr..d * dr + dr],
            };
            dot(&project_to_scoring_space(&x[d * dr + dr..], &proj).unwrap(), &g)
        };
        let mut analytic = vec![0.0; x.len()];
        {
            let (w, rest) = analytic.split_at_mut(d * dr);
            let (b, v) = rest.split_at_mut(dr);
            let proj = Projection {
                weight: &x[..d * dr],
                bias: &x[d * dr..d * dr + dr],
            };
            proj.backward(&x[d * dr + dr..], &g, w, b, v);
        }
        worst = worst.max(grad_check(f, &analytic, &x, GRAD_CHECK_EPS).unwrap());
    }
    parts.push(("projection".into(), worst));

    let mut worst: f64 = 0.0;
    for _ in 0..POINTS {
        let (n, m, dim, c) = (
            2 + rng.index(6),
            2 + rng.index(6),
            1 + rng.index(4),
            0.5 + 4.0 * rng.uniform(),
        );
        let x: Vec<Vec<f64>> = (0..n).map(|_| normals(&mut rng, dim, 1.0)).collect();
        let y: Vec<Vec<f64>> = (0..m).map(|_| normals(&mut rng, dim, 1.0)).collect();
        let analytic: Vec<f64> = mmd_grad_x(&x, &y, c).unwrap().concat();
        let f = |flat: &[f64]| {
            let xs: Vec<Vec<f64>> = flat.chunks(dim).map(<[f64]>::to_vec).collect();
            mmd(&xs, &y, c).unwrap()
        };
        worst = worst.max(grad_check(f, &analytic, &x.concat(), GRAD_CHECK_EPS).unwrap());
    }
    parts.push(("mmd".into(), worst));

    let mut worst: f64 = 0.0;
    for i in 0..POINTS {
        let m = random_model(SCORERS[i % 4], &mut rng);
        let batch = random_batch(&mut rng, 4);
        let prior = PriorSpec::new(normals(&mut rng, 8, 0.3), Vec::new()).unwrap();
        let opts = ObjectiveOptions {
            lambda: 0.1 + rng.uniform(),
            samples: 1 + i % 2,
            train: false,
        };
        let seed = 100 + i as u64;
        let obj = batch_objective(&m, &batch, &prior, &opts, &mut SeededRng::new(seed)).unwrap();
        let f = |p: &[f64]| {
            let mm = Model::from_params(m.config().clone(), p.to_vec()).unwrap();
            batch_objective(&mm, &batch, &prior, &opts, &mut SeededRng::new(seed))
                .unwrap()
                .loss
        };
        worst = worst.max(grad_check(f, &obj.grad, m.params(), GRAD_CHECK_EPS).unwrap());
    }
    parts.push(("objective".into(), worst));

    let secs = start.elapsed().as_secs_f64();
    let max = parts.iter().map(|p| p.1).fold(0.0, f64::max);
    let detail = parts
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(
        max < 1e-4 && secs < 60.0,
        format!("max rel err {max:.2e} in {secs:.1}s ({detail})"),
    )
}

/// Unbiased estimator written out as explicit double sums.
fn mmd_double_sum(x: &[Vec<f64>], y: &[Vec<f64>], c: f64) -> f64 {
    let (n, m) = (x.len() as f64, y.len() as f64);
    let mut xx = 0.0;
    let mut yy = 0.0;
    let mut xy = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            if i != j {
                xx += c / (c + (0..x[i].len()).map(|k| (x[i][k] - x[j][k]).powi(2)).sum::<f64>());
            }
        }
    }
    for i in 0..y.len() {
        for j in 0..y.len() {
            if i != j {
                yy += c / (c + (0..y[i].len()).map(|k| (y[i][k] - y[j][k]).powi(2)).sum::<f64>());
            }
        }
    }
    for a in x {
        for b in y {
            xy += c / (c + a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>());
        }
    }
    xx / (n * (n - 1.0)) + yy / (m * (m - 1.0)) - 2.0 * xy / (n * m)
}

fn mmd_oracle() -> Outcome {
    let mut rng = SeededRng::new(7);
    let mut worst: f64 = 0.0;
    for _ in 0..40 {
        let (n, m, dim) = (2 + rng.index(49), 2 + rng.index(49), 1 + rng.index(8));
        let c = 0.2 + 10.0 * rng.uniform();
        let x: Vec<Vec<f64>> = (0..n).map(|_| normals(&mut rng, dim, 1.0)).collect();
        let y: Vec<Vec<f64>> = (0..m).map(|_| normals(&mut rng, dim, 1.5)).collect();
        worst = worst.max((mmd(&x, &y, c).unwrap() - mmd_double_sum(&x, &y, c)).abs());
    }
    let k = imq_kernel(&[0.0, 0.0], &[1.0, 1.0], 2.0);
    let x: Vec<Vec<f64>> = (0..1000).map(|_| normals(&mut rng, 4, 1.0)).collect();
    let y: Vec<Vec<f64>> = (0..1000).map(|_| normals(&mut rng, 4, 1.0)).collect();
    let same = mmd(&x, &y, 2.0).unwrap();
    check(
        worst < 1e-12 && same.abs() < 0.05 && k == 0.5,
        format!("max |estimator - double sum| {worst:.1e}; same-distribution MMD {same:.2e}"),
    )
}

fn ball_point(rng: &mut SeededRng, max_norm: f64) -> BallPoint {
    let v = normals(rng, 3, 1.0);
    let r = max_norm * rng.uniform();
    let s = r / norm(&v).max(1e-12);
    BallPoint::new(v.iter().map(|x| x * s).collect(), 1.0).unwrap()
}

fn geometry() -> Outcome {
    let mut rng = SeededRng::new(11);
    let (mut self_d, mut sym, mut inv, mut tri_viol) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for _ in 0..1000 {
        let (x, y, z) = (
            ball_point(&mut rng, 0.95),
            ball_point(&mut rng, 0.95),
            ball_point(&mut rng, 0.95),
        );
        self_d = self_d.max(poincare_distance(&x, &x).unwrap().abs());
        let dxy = poincare_distance(&x, &y).unwrap();
        sym = sym.max((dxy - poincare_distance(&y, &x).unwrap()).abs());
        let via = poincare_distance(&x, &z).unwrap() + poincare_distance(&z, &y).unwrap();
        if dxy > via + 1e-10 {
            tri_viol += 1;
        }
        let v = normals(&mut rng, 3, 0.8);
        let back = logmap0(&expmap0(&v, 1.0).unwrap()).unwrap();
        inv = inv.max(v.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let there = expmap0(&logmap0(&x).unwrap(), 1.0).unwrap();
        inv = inv.max(
            x.coords()
                .iter()
                .zip(there.coords())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
    }
    let o = BallPoint::origin(3, 1.0).unwrap();
    let y = BallPoint::new(vec![0.3, 0.0, 0.4], 1.0).unwrap();
    let origin_err = (poincare_distance(&o, &y).unwrap() - 3f64.ln()).abs();
    check(
        self_d == 0.0 && sym < 1e-10 && tri_viol == 0 && inv < 1e-8 && origin_err < 1e-12,
        format!(
            "d(x,x) max {self_d:.1e}, asymmetry {sym:.1e}, triangle violations {tri_viol}, exp/log {inv:.1e}, |d(0,y) - ln 3| {origin_err:.1e}"
        ),
    )
}

fn scorer_degeneracies() -> Outcome {
    let mut rng = SeededRng::new(13);
    let mut mure_vs_transe: f64 = 0.0;
    let mut shift: f64 = 0.0;
    let mut nonzero = Vec::new();
    for _ in 0..200 {
        let (h, t, tr) = (
            normals(&mut rng, 6, 2.0),
            normals(&mut rng, 6, 2.0),
            normals(&mut rng, 6, 2.0),
        );
        let pair = ScoringSpacePair::new(h.clone(), t.clone()).unwrap();
        let rel = RelationParams {
            w: &[1.0; 6],
            t: &tr,
            atth: None,
        };
        let a = score(ScorerKind::MuRE, &h, &t, &rel);
        mure_vs_transe = mure_vs_transe.max((a - score_transe(&pair, &tr).unwrap()).abs());

        let s = normals(&mut rng, 5, 3.0);
        let c = 50.0 * rng.standard_normal();
        let p = softmax(&s).unwrap();
        let q = softmax(&s.iter().map(|v| v + c).collect::<Vec<_>>()).unwrap();
        shift = shift.max(p.iter().zip(q.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));

        // identity transforms: W = 1, t = 0, AttH angles 0 on the reflection axis
        let h = normals(&mut rng, 4, 0.2);
        let axis = vec![h[0], 0.0, h[2], 0.0];
        let zeros = [0.0; 4];
        let atth = AttHParams {
            rotation: &zeros[..2],
            reflection: &zeros[..2],
            attention: &zeros,
            curvature_raw: rng.standard_normal(),
        };
        for kind in SCORERS {
            let point = if kind == ScorerKind::AttH { &axis } else { &h };
            let rel = RelationParams {
                w: &[1.0; 4],
                t: &zeros,
                atth: (kind == ScorerKind::AttH).then_some(atth),
            };
            let v = score(kind, point, point, &rel);
            if v != 0.0 {
                nonzero.push(format!("{kind}={v:e}"));
            }
        }
    }
    check(
        mure_vs_transe < 1e-12 && shift < 1e-9 && nonzero.is_empty(),
        format!(
            "|MuRE(W=1) - TransE| {mure_vs_transe:.1e}, softmax shift {shift:.1e}, non-zero fixed points {:?}",
            nonzero
        ),
    )
}

fn uncertainty_laws() -> Outcome {
    let mut rng = SeededRng::new(17);
    let mut violations = 0;
    for _ in 0..1000 {
        let k = 2 + rng.index(5);
        let n = 2 + rng.index(30);
        let temp = 0.1 + 5.0 * rng.uniform();
        let rows: Vec<ProbVector> = (0..n).map(|_| softmax(&normals(&mut rng, k, temp)).unwrap()).collect();
        let u = uncertainty(&McPredictions {
            id: "r".into(),
            rows,
            seed: 0,
        })
        .unwrap();
        if !(u.model >= -1e-9 && u.model <= u.total + 1e-9 && u.total <= (k as f64).ln() + 1e-9) {
            violations += 1;
        }
    }
    let mut identical_mi: f64 = 0.0;
    for _ in 0..100 {
        let row = softmax(&normals(&mut rng, 4, 2.0)).unwrap();
        let u = uncertainty(&McPredictions {
            id: "i".into(),
            rows: vec![row; 2 + rng.index(50)],
            seed: 0,
        })
        .unwrap();
        identical_mi = identical_mi.max(u.model.abs());
    }
    let one_hot = |c: usize| ProbVector::new(if c == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).unwrap();
    let alt = uncertainty(&McPredictions {
        id: "a".into(),
        rows: (0..10).map(|i| one_hot(i % 2)).collect(),
        seed: 0,
    })
    .unwrap();
    let ln2 = 2f64.ln();
    let alt_err = (alt.total - ln2).abs().max((alt.model - ln2).abs());
    check(
        violations == 0 && identical_mi == 0.0 && alt_err < 1e-12,
        format!("{violations} violations in 1000 cases; identical-row MI {identical_mi:e}; alternating one-hot error {alt_err:.1e}"),
    )
}

fn splits(task: &SyntheticTask, train: std::ops::Range<usize>) -> (DatasetSplit, DatasetSplit, DatasetSplit) {
    let items: Vec<LabeledPair> = task
        .labels
        .iter()
        .map(|(id, l)| LabeledPair {
            id: id.clone(),
            label: *l,
            text: None,
        })
        .collect();
    (
        DatasetSplit::new(SplitName::Train, items[train].to_vec()).unwrap(),
        DatasetSplit::new(SplitName::Dev, items[1600..1800].to_vec()).unwrap(),
        DatasetSplit::new(SplitName::Test, items[1800..].to_vec()).unwrap(),
    )
}

const LATENT: usize = 128;

fn synthetic_model(task: &SyntheticTask) -> ModelConfig {
    ModelConfig::new(task.relset.clone(), ScorerKind::MuRE, 16, 16, LATENT)
}

fn synthetic_learnability() -> Outcome {
    let start = Instant::now();
    let task = generate(&SyntheticConfig::default()).unwrap();
    let (tr, dev, test) = splits(&task, 0..1600);
    let cfg = TrainConfig {
        epochs: 60,
        convention: Convention::Micro,
        ..Default::default()
    };
    let provider = task.provider();
    let ck = train(
        synthetic_model(&task),
        &cfg,
        &tr,
        &dev,
        &provider,
        &PriorSpec::standard(LATENT),
    )
    .unwrap();
    let acc = evaluate(&ck.model, &provider, &test, Convention::Micro, Prediction::Mean)
        .unwrap()
        .micro_f1;
    let secs = start.elapsed().as_secs_f64();
    check(
        acc >= 95.0 && secs < 300.0,
        format!(
            "held-out accuracy {acc:.2}% after {} epochs in {secs:.1}s",
            ck.epochs_run
        ),
    )
}

fn prior_effect() -> Outcome {
    let mut dev = [0.0f64; 2];
    let mut activity = [0.0f64; 2];
    for seed in 0..5u64 {
        let task = generate(&SyntheticConfig {
            seed,
            ..Default::default()
        })
        .unwrap();
        let (tr, dv, test) = splits(&task, 0..200);
        let provider = task.provider();
        let cfg = TrainConfig {
            convention: Convention::Micro,
            seed,
            ..Default::default()
        };
        let mapping: Vec<(String, String)> = task.relset.names().iter().map(|n| (n.clone(), n.clone())).collect();
        let informed = assemble_prior(&task.true_relation_embeddings(), &mapping, &task.relset, LATENT).unwrap();
        let test_instances = test.instances(&provider).unwrap();
        for (i, prior) in [PriorSpec::standard(LATENT), informed].iter().enumerate() {
            let ck = train(synthetic_model(&task), &cfg, &tr, &dv, &provider, prior).unwrap();
            dev[i] += evaluate(&ck.model, &provider, &dv, Convention::Micro, Prediction::Mean)
                .unwrap()
                .micro_f1
                / 5.0;
            activity[i] += activity_scores(&ck.model, &test_instances).unwrap().mean / 5.0;
        }
    }
    check(
        dev[1] >= dev[0] && activity[1] > activity[0],
        format!(
            "mean dev accuracy standard {:.2} / informed {:.2}; mean activity standard {:.4} / informed {:.4}",
            dev[0], dev[1], activity[0], activity[1]
        ),
    )
}

fn fixture_config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/config.toml")
        .display()
        .to_string()
}

fn cli(args: &[&str], out: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_bayestrans"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr).trim()))
    }
}

fn ablation_switch() -> Outcome {
    let cfg = fixture_config();
    let mut keys = Vec::new();
    let mut lambdas = Vec::new();
    let mut posteriors = Vec::new();
    for variant in ["vanilla", "bayesian"] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let set = format!("model.variant={variant}");
        cli(&["train", "--config", &cfg, "--set", &set], dir.path())?;
        cli(&["eval", "--config", &cfg, "--set", &set], dir.path())?;
        let kv = parse_metrics_kv(&read_text(&dir.path().join("metrics_test.txt")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        keys.push(kv.keys().cloned().collect::<Vec<_>>());
        let hist = read_text(&dir.path().join("history.csv")).map_err(|e| e.to_string())?;
        lambdas.push(
            hist.lines()
                .skip(1)
                .map(|l| l.split(',').nth(1).unwrap_or("").parse::<f64>().unwrap_or(f64::NAN))
                .collect::<Vec<_>>(),
        );
        let ck = read_text(&dir.path().join("checkpoint.txt")).map_err(|e| e.to_string())?;
        posteriors.push(
            ck.lines()
                .find(|l| l.starts_with("posterior "))
                .unwrap_or("")
                .to_string(),
        );
    }
    let vanilla_unregularized = lambdas[0].iter().all(|l| *l == 0.0);
    let bayes_regularized = lambdas[1].iter().any(|l| *l > 0.0);
    check(
        keys[0] == keys[1]
            && vanilla_unregularized
            && bayes_regularized
            && posteriors[0].starts_with("posterior pinned")
            && posteriors[1] == "posterior learned",
        format!(
            "both variants ran from model.variant; {} identical metric keys; vanilla lambda all 0: {vanilla_unregularized}; \
             '{}' vs '{}'",
            keys[0].len(),
            posteriors[0],
            posteriors[1]
        ),
    )
}

fn pipeline(out: &Path) -> Result<(), String> {
    let cfg = fixture_config();
    let prior = format!("prior.path={}", out.join("prior.txt").display());
    cli(&["prior-train", "--config", &cfg], out)?;
    cli(&["train", "--config", &cfg, "--prior", "file", "--set", &prior], out)?;
    cli(&["eval", "--config", &cfg], out)?;
    cli(&["uncertainty", "--config", &cfg], out)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline(a.path())?;
    pipeline(b.path())?;
    let mut compared = Vec::new();
    let mut differ = Vec::new();
    let mut names: Vec<String> = std::fs::read_dir(a.path())
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| !n.starts_with("run_manifest"))
        .collect();
    names.sort();
    for n in names {
        let (x, y) = (std::fs::read(a.path().join(&n)), std::fs::read(b.path().join(&n)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => compared.push(n),
            _ => differ.push(n),
        }
    }
    let has_all = [
        "metrics_dev.txt",
        "metrics_test.txt",
        "uncertainty_test.csv",
        "simplex_test.csv",
        "history.csv",
    ]
    .iter()
    .all(|f| compared.iter().any(|c| c == f));
    check(
        differ.is_empty() && has_all,
        format!(
            "{} identical files ({}); differing {:?}",
            compared.len(),
            compared.join(" "),
            differ
        ),
    )
}

fn metrics_oracle() -> Outcome {
    let rs = RelationSet::matres();
    let (b, a, e, v) = (0, 1, 2, 3);
    // gold B B A V E V / predicted B A A B V A:
    // non-vague predictions 5, correct non-vague 2, gold non-vague 4, correct overall 2 of 6
    let r = compute_metrics(&[b, b, a, v, e, v], &[b, a, a, b, v, a], &rs, Convention::Matres).unwrap();
    let kv = parse_metrics_kv(&metrics_kv(&r)).unwrap();
    let want = [
        ("precision", "40.0000"),
        ("recall", "50.0000"),
        ("f1", "44.4444"),
        ("micro_f1", "33.3333"),
    ];
    let matched = want.iter().all(|(k, w)| kv[*k] == *w);
    let vague = compute_metrics(&[b, a, e, v], &[v; 4], &rs, Convention::Matres).unwrap();
    let kv_v = parse_metrics_kv(&metrics_kv(&vague)).unwrap();
    let zero = ["precision", "recall", "f1"].iter().all(|k| kv_v[*k] == "0.0000");
    let equal_row = ["precision", "recall", "f1"]
        .iter()
        .all(|m| kv[&format!("class.Equal.{m}")] == "0.0000")
        && kv["class.Equal.flagged"] == "1";
    let no_nan = !metrics_kv(&vague).contains("NaN") && !metrics_kv(&r).contains("NaN");
    check(
        matched && zero && equal_row && no_nan,
        format!(
            "P/R/F1/micro = {}/{}/{}/{}; all-Vague P/R/F1 = {}/{}/{}",
            kv["precision"], kv["recall"], kv["f1"], kv["micro_f1"], kv_v["precision"], kv_v["recall"], kv_v["f1"]
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradient_correctness),
        ("mmd oracle equivalence", mmd_oracle),
        ("geometry properties", geometry),
        ("scorer degeneracies", scorer_degeneracies),
        ("uncertainty laws", uncertainty_laws),
        ("synthetic learnability", synthetic_learnability),
        ("prior effect", prior_effect),
        ("ablation switch", ablation_switch),
        ("determinism", determinism),
        ("metrics oracle", metrics_oracle),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
