//! Command implementations behind the `clincot` CLI: `regions`, `pipeline`,
//! `train`, `iterate` and `verify`. Each is deterministic given its config,
//! seed and fixtures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::contracts::{FixtureBank, PolicyParams};
use crate::dpo::{self, PairLogits};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ImageGrid};
use crate::inputs::{load_inputs, InputPair};
use crate::orchestrator::{generate_round_data, run_all, Models, RoundPlan, RunOptions, RunReport};
use crate::pairs::read_dataset;
use crate::region::{extract_components, propose_region, threshold_map, ActivationMap};
use crate::scoring::consensus_weight;
use crate::storage::write_atomic;

#[derive(Debug, Clone, PartialEq)]
pub struct RegionRow {
    pub hypothesis_id: String,
    pub area: usize,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionsSummary {
    pub written: Vec<RegionRow>,
    pub skipped: Vec<String>,
}

impl RegionsSummary {
    pub fn render(&self) -> String {
        let mut out = String::from("hypothesis_id area\n");
        for r in &self.written {
            let _ = writeln!(out, "{} {}", r.hypothesis_id, r.area);
        }
        let _ = writeln!(out, "skipped: {}", self.skipped.join(" "));
        out
    }
}

/// Writes `<out_dir>/<hypothesis_id>.mask` for every hypothesis whose map
/// yields a region.
pub fn cmd_regions(
    cfg: &RunConfig,
    image: &Path,
    heatmaps: &[(String, PathBuf)],
    out_dir: &Path,
) -> Result<RegionsSummary> {
    let image = ImageGrid::read(image)?;
    let mut summary = RegionsSummary::default();
    for (id, path) in heatmaps {
        let map = ActivationMap::new(id.clone(), ImageGrid::read(path)?);
        match propose_region(&image, &map, cfg.tau, cfg.min_area) {
            Ok(p) => {
                let dest = out_dir.join(format!("{id}.mask"));
                write_atomic(&dest, p.mask.to_matrix_string().as_bytes())?;
                summary.written.push(RegionRow {
                    hypothesis_id: id.clone(),
                    area: p.component_area,
                    path: dest,
                });
            }
            Err(Error::NoRegion { .. }) => summary.skipped.push(id.clone()),
            Err(e) => return Err(e),
        }
    }
    Ok(summary)
}

fn load_policy(path: Option<&Path>) -> Result<PolicyParams> {
    match path {
        Some(p) => PolicyParams::read(p),
        None => Ok(PolicyParams::new()),
    }
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub records: usize,
    pub dataset: PathBuf,
    pub ledger: PathBuf,
    pub chains: PathBuf,
    pub skipped: usize,
}

/// One round of data generation over every configured input, without
/// training. Writes `dataset.jsonl`, `scores.log` and `chains.jsonl` under
/// the output directory.
pub fn cmd_pipeline(cfg: &RunConfig) -> Result<PipelineSummary> {
    let bank = FixtureBank::read(&cfg.paths.fixture_bank)?;
    let inputs = load_inputs(cfg)?;
    let policy = load_policy(cfg.paths.initial_policy.as_deref())?;
    let refs: Vec<&InputPair> = inputs.iter().collect();
    let data = generate_round_data(&refs, &Models::from_bank(&bank), cfg, 1, &policy)?;
    let out = &cfg.paths.output;
    let summary = PipelineSummary {
        records: data.records.len(),
        dataset: out.join("dataset.jsonl"),
        ledger: out.join("scores.log"),
        chains: out.join("chains.jsonl"),
        skipped: data.skipped.values().map(Vec::len).sum(),
    };
    write_atomic(&summary.dataset, data.dataset_text()?.as_bytes())?;
    write_atomic(&summary.ledger, data.ledger_text().as_bytes())?;
    write_atomic(&summary.chains, data.chains_text().as_bytes())?;
    Ok(summary)
}

/// Trains on a dataset file. Without an input checkpoint the policy starts
/// at zero logits. The reference is the input policy, frozen.
pub fn cmd_train(
    cfg: &RunConfig,
    dataset: &Path,
    checkpoint_in: Option<&Path>,
    checkpoint_out: &Path,
    loss_out: &Path,
) -> Result<Vec<f64>> {
    let records = read_dataset(dataset)?;
    let mut policy = load_policy(checkpoint_in)?;
    for r in &records {
        policy.ensure_row(&r.context_key, [r.winner.response_id.as_str(), r.loser.response_id.as_str()]);
    }
    let reference = policy.clone();
    let out = dpo::train_epochs(&policy, &reference, &records, &cfg.loss_config(), cfg.seed)?;
    write_atomic(checkpoint_out, out.policy.to_checkpoint_string().as_bytes())?;
    write_atomic(loss_out, dpo::render_loss_curve(&out.epoch_losses).as_bytes())?;
    Ok(out.epoch_losses)
}

/// Full `m`-round run into the configured output directory.
pub fn cmd_iterate(cfg: &RunConfig, opts: RunOptions) -> Result<RunReport> {
    let bank = FixtureBank::read(&cfg.paths.fixture_bank)?;
    let inputs = load_inputs(cfg)?;
    let initial = load_policy(cfg.paths.initial_policy.as_deref())?;
    let plan = RoundPlan::new(&inputs, cfg)?;
    run_all(
        &plan,
        &inputs,
        &initial,
        &Models::from_bank(&bank),
        cfg,
        &cfg.paths.output,
        opts,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, failures: Vec<String>, checked: usize) -> Self {
        Self {
            name,
            passed: failures.is_empty(),
            detail: if failures.is_empty() {
                format!("{checked} cases")
            } else {
                format!("{} of {checked} failed; first: {}", failures.len(), failures[0])
            },
        }
    }
}

/// Union-find labeling, used as a second route to the component structure.
fn union_find_labels(mask: &BinaryMask) -> Vec<Option<usize>> {
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let (h, w) = mask.shape();
    let bits = mask.bits();
    let mut parent: Vec<usize> = (0..bits.len()).collect();
    for i in 0..bits.len() {
        if !bits[i] {
            continue;
        }
        let (r, c) = (i / w, i % w);
        for n in [(r + 1 < h).then(|| i + w), (c + 1 < w).then(|| i + 1)].into_iter().flatten() {
            if bits[n] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, n));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    (0..bits.len()).map(|i| bits[i].then(|| find(&mut parent, i))).collect()
}

fn check_regions(inputs: &[InputPair], cfg: &RunConfig) -> Vec<CheckResult> {
    let mut comp_fail = Vec::new();
    let mut mono_fail = Vec::new();
    let mut idem_fail = Vec::new();
    let mut n = 0;
    for input in inputs {
        for map in &input.maps {
            n += 1;
            let tag = format!("{}/{}", input.id, map.hypothesis_id);
            let Ok(mask) = threshold_map(map, cfg.tau) else {
                comp_fail.push(format!("{tag}: threshold failed"));
                continue;
            };
            let labels = union_find_labels(&mask);
            let comps = extract_components(&mask);
            let mut roots: Vec<usize> = labels.iter().flatten().copied().collect();
            roots.sort_unstable();
            roots.dedup();
            let consistent = comps.len() == roots.len()
                && comps.iter().all(|c| {
                    let root = labels[c.anchor];
                    c.mask.bits().iter().zip(&labels).all(|(b, l)| *b == (*l == root && l.is_some()))
                });
            if !consistent {
                comp_fail.push(tag.clone());
            }
            let higher = (cfg.tau + 0.1).min(0.99);
            if let Ok(hm) = threshold_map(map, higher) {
                if !hm.is_subset_of(&mask) {
                    mono_fail.push(tag.clone());
                }
            }
            if let Ok(p) = propose_region(&input.image, map, cfg.tau, cfg.min_area) {
                match propose_region(&p.masked_image, map, cfg.tau, cfg.min_area) {
                    Ok(q) if q.masked_image == p.masked_image => {}
                    _ => idem_fail.push(tag),
                }
            }
        }
    }
    vec![
        CheckResult::new("components match union-find labeling", comp_fail, n),
        CheckResult::new("threshold monotone in tau", mono_fail, n),
        CheckResult::new("masking idempotent", idem_fail, n),
    ]
}

fn check_math(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sym = Vec::new();
    for _ in 0..1000 {
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        match (consensus_weight(a, b), consensus_weight(b, a)) {
            (Ok(x), Ok(y)) if x == y && x <= (a + b) / 2.0 => {}
            _ => sym.push(format!("({a}, {b})")),
        }
    }
    let mut grad = Vec::new();
    let mut naive = Vec::new();
    for case in 0..100 {
        let ids = ["w", "l", "o1", "o2"];
        let mut policy = PolicyParams::new();
        policy.ensure_row("c", ids);
        let mut reference = policy.clone();
        for id in ids {
            policy.set_logit("c", id, rng.random_range(-2.0..2.0)).expect("row exists");
            reference.set_logit("c", id, rng.random_range(-2.0..2.0)).expect("row exists");
        }
        let beta: f64 = rng.random_range(0.05..2.0);
        let delta_r: f64 = rng.random_range(0.0..1.0);
        let logits = |p: &PolicyParams| PairLogits {
            lw: p.log_prob("c", "w").expect("row exists"),
            ll: p.log_prob("c", "l").expect("row exists"),
            lw_ref: reference.log_prob("c", "w").expect("row exists"),
            ll_ref: reference.log_prob("c", "l").expect("row exists"),
            delta_r,
        };
        let an = dpo::pair_loss_grad(&logits(&policy), beta, &policy, "c", "w", "l").expect("valid pair");
        let h = 1e-5;
        let scale = an.entries.values().fold(0.0f64, |m, v| m.max(v.abs()));
        for id in ids {
            let base = policy.logit("c", id).expect("row exists");
            let mut up = policy.clone();
            up.set_logit("c", id, base + h).expect("row exists");
            let mut dn = policy.clone();
            dn.set_logit("c", id, base - h).expect("row exists");
            let fd = (dpo::pair_loss(&logits(&up), beta).expect("finite")
                - dpo::pair_loss(&logits(&dn), beta).expect("finite"))
                / (2.0 * h);
            let a = an.get("c", id);
            if (fd - a).abs() > 1e-6 * scale {
                grad.push(format!("case {case} `{id}`: analytic {a} vs fd {fd}"));
            }
        }
        let zero = PairLogits { delta_r: 0.0, ..logits(&policy) };
        if dpo::pair_loss(&zero, beta).ok().map(f64::to_bits) != dpo::dpo_loss(&zero, beta).ok().map(f64::to_bits) {
            naive.push(format!("case {case}"));
        }
    }
    let mut gumbel = Vec::new();
    let samples = 100_000;
    for i in 0..5 {
        let (rw, rl, d): (f64, f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..1.5));
        let mc = dpo::gumbel_preference_prob_mc(rw, rl, d, samples, seed + i).expect("enough samples");
        let exact = dpo::sigmoid(rw - rl - d);
        if (mc - exact).abs() > 4.0 / (samples as f64).sqrt() {
            gumbel.push(format!("({rw}, {rl}, {d}): {mc} vs {exact}"));
        }
    }
    vec![
        CheckResult::new("consensus weight symmetric and bounded", sym, 1000),
        CheckResult::new("loss gradient matches finite differences", grad, 400),
        CheckResult::new("zero margin equals plain DPO", naive, 100),
        CheckResult::new("Gumbel preference probability", gumbel, 5),
    ]
}

fn check_pipeline(inputs: &[InputPair], bank: &FixtureBank, cfg: &RunConfig) -> Result<Vec<CheckResult>> {
    let refs: Vec<&InputPair> = inputs.iter().collect();
    let models = Models::from_bank(bank);
    let policy = PolicyParams::new();
    let a = generate_round_data(&refs, &models, cfg, 1, &policy)?;
    let b = generate_round_data(&refs, &models, cfg, 1, &policy)?;
    let mut det = Vec::new();
    if a.dataset_text()? != b.dataset_text()? || a.ledger_text() != b.ledger_text() {
        det.push("reruns differ".to_string());
    }
    let mut pairs = Vec::new();
    for chain in &a.chains {
        for t in 0..chain.t() {
            let recs: Vec<_> = a
                .records
                .iter()
                .filter(|r| r.origin == chain.origin && r.timestep == t)
                .collect();
            if recs.len() > cfg.pairs_per_step {
                pairs.push(format!("{} t={t}: {} pairs", chain.origin, recs.len()));
            }
            if recs.iter().any(|r| !(r.winner.score > r.loser.score)) {
                pairs.push(format!("{} t={t}: non-strict pair", chain.origin));
            }
            if let Some(first) = recs.first() {
                if first.winner.response_id != chain.steps[t].response.response_id {
                    pairs.push(format!("{} t={t}: first winner is not the forwarded step", chain.origin));
                }
            }
        }
    }
    Ok(vec![
        CheckResult::new("pipeline deterministic", det, 1),
        CheckResult::new("pair invariants", pairs, a.records.len()),
    ])
}

/// Runs the property suite against the configured fixtures.
pub fn cmd_verify(cfg: &RunConfig) -> Result<Vec<CheckResult>> {
    let bank = FixtureBank::read(&cfg.paths.fixture_bank)?;
    let inputs = load_inputs(cfg)?;
    let mut out = check_regions(&inputs, cfg);
    out.extend(check_math(cfg.seed));
    out.extend(check_pipeline(&inputs, &bank, cfg)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn union_find_agrees_on_small_masks() {
        let mask = BinaryMask::from_rows(&[vec![1, 1, 0], vec![0, 1, 0], vec![1, 0, 1]]).unwrap();
        let labels = union_find_labels(&mask);
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[1], labels[4]);
        assert_ne!(labels[6], labels[8]);
        assert_eq!(labels[2], None);
        assert_eq!(extract_components(&mask).len(), 3);
    }

    #[test]
    fn math_checks_pass() {
        for c in check_math(5) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
