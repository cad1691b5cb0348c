//! Regenerates the small data set under `tests/fixtures`.
//!
//! `cargo run -p bayestrans --example gen_fixtures [DIR]`

use std::fmt::Write as _;
use std::path::PathBuf;

use bayestrans::formats::{write_keyed_vectors, write_text};
use bayestrans_core::numerics::SeededRng;
use bayestrans_core::synth::{generate, SyntheticConfig};

const LABELS: [&str; 4] = ["Before", "After", "Equal", "Vague"];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures"));
    let task = generate(&SyntheticConfig {
        instances: 200,
        dim: 8,
        relations: 4,
        noise: 0.05,
        seed: 11,
    })?;
    let rows: Vec<(&str, &[f64])> = task.embeddings.iter().collect();
    write_text(&dir.join("embeddings.txt"), &write_keyed_vectors(8, rows))?;
    for (name, range) in [("train", 0..120), ("dev", 120..160), ("test", 160..200)] {
        let mut out = String::new();
        for (id, label) in &task.labels[range] {
            let _ = writeln!(out, "{id}\t{}", LABELS[*label]);
        }
        write_text(&dir.join(format!("{name}.tsv")), &out)?;
    }

    // two event clusters; IsBefore runs from the first into the second,
    // IsAfter back, Causes inside the first
    let mut rng = SeededRng::new(5);
    let mut features = Vec::new();
    for i in 0..12 {
        let base = if i < 6 {
            [1.0, 0.0, 0.4, 0.0]
        } else {
            [0.0, 1.0, 0.0, 0.4]
        };
        let f: Vec<f64> = base.iter().map(|b| b + 0.2 * rng.standard_normal()).collect();
        features.push((format!("event{i}"), f));
    }
    let rows: Vec<(&str, &[f64])> = features.iter().map(|(k, v)| (k.as_str(), v.as_slice())).collect();
    write_text(&dir.join("node_features.txt"), &write_keyed_vectors(4, rows))?;
    let mut triples = String::new();
    for a in 0..6 {
        for b in 6..12 {
            if (a + b) % 2 == 0 {
                let _ = writeln!(triples, "event{a}\tIsBefore\tevent{b}");
                let _ = writeln!(triples, "event{b}\tIsAfter\tevent{a}");
            }
        }
        let _ = writeln!(triples, "event{a}\tCauses\tevent{}", (a + 1) % 6);
    }
    write_text(&dir.join("kg_triples.tsv"), &triples)?;
    println!("fixtures written to {}", dir.display());
    Ok(())
}
