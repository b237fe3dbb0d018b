//! Regenerates the bundled demo fixtures under `fixtures/demo/`.
//!
//! ```text
//! cargo run -p clincot-core --example make_fixtures
//! ```

use std::path::Path;

use clincot::contracts::{FixtureBank, FixtureRecord, Variant};
use clincot::grid::ImageGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIZE: usize = 12;
const HYPOTHESES: [&str; 6] = [
    "effusion",
    "nodule",
    "consolidation",
    "cardiomegaly",
    "pneumothorax",
    "fracture",
];
const EVALUATORS: [&str; 2] = ["med42", "biomistral"];
const TIMESTEPS: usize = 3;
const VARIANTS: usize = 3;
const INPUTS: usize = 8;

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn image(rng: &mut ChaCha8Rng) -> ImageGrid {
    let tilt: f64 = rng.random_range(0.2..0.6);
    let values = (0..SIZE * SIZE)
        .map(|i| {
            let (r, c) = ((i / SIZE) as f64, (i % SIZE) as f64);
            let base = 0.2 + tilt * (r + c) / (2.0 * SIZE as f64);
            round3((base + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0))
        })
        .collect();
    ImageGrid::new(SIZE, SIZE, values).unwrap()
}

/// Sum of Gaussian blobs scaled to `peak`, or a faint map that never
/// reaches 0.5 when `cold`.
fn heatmap(rng: &mut ChaCha8Rng, cold: bool) -> ImageGrid {
    let blobs = if cold { 1 } else { rng.random_range(1..=2) };
    let centers: Vec<(f64, f64, f64, f64)> = (0..blobs)
        .map(|_| {
            (
                rng.random_range(1.0..(SIZE - 1) as f64),
                rng.random_range(1.0..(SIZE - 1) as f64),
                rng.random_range(0.9..2.2),
                rng.random_range(0.75..0.98),
            )
        })
        .collect();
    let values = (0..SIZE * SIZE)
        .map(|i| {
            let (r, c) = ((i / SIZE) as f64, (i % SIZE) as f64);
            let v: f64 = centers
                .iter()
                .map(|(cr, cc, s, p)| p * (-((r - cr).powi(2) + (c - cc).powi(2)) / (2.0 * s * s)).exp())
                .fold(0.0, f64::max);
            round3(if cold { v * 0.45 } else { v })
        })
        .collect();
    ImageGrid::new(SIZE, SIZE, values).unwrap()
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/demo");
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    std::fs::create_dir_all(root.join("images")).unwrap();

    let hyps: Vec<String> = HYPOTHESES
        .iter()
        .map(|h| format!(r#"{{"id":"{h}","heatmap":"{{input}}/{h}.txt"}}"#))
        .collect();
    std::fs::write(
        root.join("hypotheses.json"),
        format!("{{\"hypotheses\":[\n{}\n]}}\n", hyps.join(",\n")),
    )
    .unwrap();

    let mut inputs = String::new();
    for n in 1..=INPUTS {
        let id = format!("case{n:02}");
        std::fs::write(root.join(format!("images/{id}.txt")), image(&mut rng).to_matrix_string()).unwrap();
        // case01 has exactly two inert hypotheses; the rest vary
        let cold: Vec<bool> = if n == 1 {
            vec![false, true, false, false, true, false]
        } else {
            (0..HYPOTHESES.len()).map(|_| rng.random_bool(0.2)).collect()
        };
        let dir = root.join(format!("heatmaps/{id}"));
        std::fs::create_dir_all(&dir).unwrap();
        for (h, c) in HYPOTHESES.iter().zip(&cold) {
            std::fs::write(dir.join(format!("{h}.txt")), heatmap(&mut rng, *c).to_matrix_string()).unwrap();
        }
        let q: Vec<String> = (0..rng.random_range(3..=5))
            .map(|_| rng.random_range(1..64u16).to_string())
            .collect();
        inputs.push_str(&format!(
            "{{\"id\":\"{id}\",\"image\":\"{id}.txt\",\"question\":[{}]}}\n",
            q.join(",")
        ));
    }
    std::fs::write(root.join("inputs.jsonl"), inputs).unwrap();

    let mut records = Vec::new();
    for (hi, h) in HYPOTHESES.iter().enumerate() {
        let quality = 0.25 + 0.1 * hi as f64 % 0.5;
        for t in 0..TIMESTEPS {
            let variants: Vec<Variant> = (0..VARIANTS)
                .map(|v| Variant {
                    response_id: format!("{h}.t{t}.v{v}"),
                    tokens: (0..rng.random_range(3..=6)).map(|_| rng.random_range(1..64u16)).collect(),
                })
                .collect();
            for v in &variants {
                let q: f64 = (quality + rng.random_range(-0.2..0.45)).clamp(0.05, 0.95);
                for e in EVALUATORS {
                    let noise: f64 = if e == EVALUATORS[0] { 0.0 } else { rng.random_range(-0.15..0.15) };
                    records.push(FixtureRecord::Evaluation {
                        evaluator: e.into(),
                        response_id: v.response_id.clone(),
                        history_len: t,
                        score: round3((q + noise).clamp(0.0, 1.0)),
                    });
                }
            }
            records.push(FixtureRecord::Generation {
                hypothesis_id: h.to_string(),
                timestep: t,
                variants,
            });
        }
    }
    // generation records first, then evaluations, for readability
    records.sort_by_key(|r| matches!(r, FixtureRecord::Evaluation { .. }));
    std::fs::write(root.join("fixture_bank.jsonl"), FixtureBank::render(&records)).unwrap();

    std::fs::write(
        root.join("config.toml"),
        "seed = 17\n\n[paths]\nhypotheses = \"hypotheses.json\"\ninputs = \"inputs.jsonl\"\nheatmaps = \"heatmaps\"\nimages = \"images\"\nfixture_bank = \"fixture_bank.jsonl\"\noutput = \"out\"\n",
    )
    .unwrap();
    println!("wrote fixtures to {}", root.display());
}
