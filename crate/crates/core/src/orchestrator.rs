//! Iterative preference learning: the input set is split into `m` disjoint
//! subsets and round `i` generates preference data on subset `i` with the
//! policy produced by round `i − 1`, then trains on it.
//!
//! Run directory layout:
//!
//! ```text
//! <run>/plan.json              subsets and seed
//! <run>/initial.ckpt           policy before round 1
//! <run>/round_<i>/dataset.jsonl
//! <run>/round_<i>/policy.ckpt
//! <run>/round_<i>/scores.log
//! <run>/round_<i>/chains.jsonl
//! <run>/round_<i>/loss.dat
//! <run>/round_<i>/metrics.json
//! <run>/report.txt
//! <run>/manifest.json          config digest, seeds, lineage, checksums
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{advance_chain, generate_candidates, ReasoningChain};
use crate::config::RunConfig;
use crate::contracts::{context_key, Evaluator, FixtureBank, Generator, PolicyParams};
use crate::digest::derive_seed;
use crate::dpo::{self, render_loss_curve};
use crate::error::{Error, Result};
use crate::inputs::InputPair;
use crate::pairs::{build_pairs, render_dataset, PreferenceRecord};
use crate::region::propose_all;
use crate::scoring::{score_candidates, LookaheadScene, ScoreLedgerRecord};
use crate::storage::{file_sha256, list_files, write_atomic};

/// Generator plus the evaluators, first evaluator first.
pub struct Models<'a> {
    pub generator: &'a dyn Generator,
    pub evaluators: Vec<&'a dyn Evaluator>,
}

impl<'a> Models<'a> {
    pub fn from_bank(bank: &'a FixtureBank) -> Self {
        Self {
            generator: &bank.generator,
            evaluators: bank.evaluators.iter().map(|e| e as &dyn Evaluator).collect(),
        }
    }
}

/// Context and candidate ids offered at one timestep; the policy gets one
/// row per entry.
pub type OfferedContext = (String, Vec<String>);

#[derive(Debug, Clone)]
pub struct InputOutcome {
    pub chain: ReasoningChain,
    pub records: Vec<PreferenceRecord>,
    pub ledger: Vec<ScoreLedgerRecord>,
    pub offered: Vec<OfferedContext>,
    pub skipped: Vec<String>,
}

/// Runs regions → candidates → scoring → pairs for every timestep of one
/// input pair.
pub fn run_input(
    input: &InputPair,
    models: &Models<'_>,
    cfg: &RunConfig,
    round: usize,
    seed: u64,
) -> Result<InputOutcome> {
    let sweep = propose_all(&input.image, &input.maps, cfg.tau, cfg.min_area)
        .map_err(|e| e.in_stage("regions", &input.id))?;
    let scoring = cfg.scoring_config();
    let scene = LookaheadScene {
        image: &input.image,
        regions: &sweep.regions,
        question: &input.question,
    };
    let mut chain = ReasoningChain::new(input.id.clone());
    let mut out = InputOutcome {
        chain: chain.clone(),
        records: Vec::new(),
        ledger: Vec::new(),
        offered: Vec::new(),
        skipped: sweep.skipped.clone(),
    };
    for t in 0..cfg.timesteps {
        let step_seed = derive_seed(seed, &[b"step", &(t as u64).to_le_bytes()]);
        let mut set = generate_candidates(
            &chain,
            &input.image,
            &sweep.regions,
            &input.question,
            models.generator,
            cfg.timesteps,
            step_seed,
        )
        .map_err(|e| e.in_stage("generate", &input.id))?;
        score_candidates(&mut set, &chain, &scene, models.generator, &models.evaluators, &scoring, step_seed)
            .map_err(|e| e.in_stage("score", &input.id))?;
        out.ledger.extend(ScoreLedgerRecord::from_set(&input.id, &set)?);
        out.offered.push((
            context_key(&input.question, &chain.history_ids(), None),
            set.candidates.iter().map(|c| c.response.response_id.clone()).collect(),
        ));
        out.records.extend(
            build_pairs(&set, &chain, cfg.pairs_per_step, round, &input.question)
                .map_err(|e| e.in_stage("pairs", &input.id))?,
        );
        chain = advance_chain(&chain, &set).map_err(|e| e.in_stage("advance", &input.id))?;
    }
    out.chain = chain;
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct RoundData {
    pub records: Vec<PreferenceRecord>,
    pub ledger: Vec<ScoreLedgerRecord>,
    pub chains: Vec<ReasoningChain>,
    pub offered: Vec<OfferedContext>,
    pub skipped: BTreeMap<String, Vec<String>>,
}

impl RoundData {
    pub fn dataset_text(&self) -> Result<String> {
        render_dataset(&self.records)
    }

    pub fn ledger_text(&self) -> String {
        render_jsonl(&self.ledger)
    }

    pub fn chains_text(&self) -> String {
        let records: Vec<_> = self.chains.iter().flat_map(|c| c.dump_records()).collect();
        render_jsonl(&records)
    }
}

pub fn render_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Generation seed of a round. It folds in the policy digest so that the
/// data generated in a round depends on the current training state.
pub fn round_seed(root: u64, round: usize, policy: &PolicyParams) -> u64 {
    derive_seed(root, &[b"round", &(round as u64).to_le_bytes(), policy.digest().as_bytes()])
}

/// Generates the preference data of one round, aggregating in input order.
pub fn generate_round_data(
    inputs: &[&InputPair],
    models: &Models<'_>,
    cfg: &RunConfig,
    round: usize,
    policy: &PolicyParams,
) -> Result<RoundData> {
    let seed = round_seed(cfg.seed, round, policy);
    let mut data = RoundData::default();
    for input in inputs {
        let input_seed = derive_seed(seed, &[b"input", input.id.as_bytes()]);
        let o = run_input(input, models, cfg, round, input_seed)?;
        data.records.extend(o.records);
        data.ledger.extend(o.ledger);
        data.chains.push(o.chain);
        data.offered.extend(o.offered);
        if !o.skipped.is_empty() {
            data.skipped.insert(input.id.clone(), o.skipped);
        }
    }
    Ok(data)
}

/// Seeded shuffle, then contiguous split into `m` parts whose sizes differ
/// by at most one (larger parts first).
pub fn partition(inputs: &[String], m: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if inputs.is_empty() {
        return Err(Error::Config("cannot partition an empty input set".into()));
    }
    if m == 0 || m > inputs.len() {
        return Err(Error::Config(format!(
            "cannot split {} inputs into {m} non-empty subsets",
            inputs.len()
        )));
    }
    let mut shuffled = inputs.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b"partition"])));
    let (base, extra) = (inputs.len() / m, inputs.len() % m);
    let mut out = Vec::with_capacity(m);
    let mut rest = shuffled.as_slice();
    for i in 0..m {
        let (head, tail) = rest.split_at(base + usize::from(i < extra));
        out.push(head.to_vec());
        rest = tail;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub seed: u64,
    pub subsets: Vec<Vec<String>>,
}

impl RoundPlan {
    pub fn new(inputs: &[InputPair], cfg: &RunConfig) -> Result<Self> {
        let ids: Vec<String> = inputs.iter().map(|i| i.id.clone()).collect();
        Ok(Self {
            seed: cfg.seed,
            subsets: partition(&ids, cfg.effective_rounds(), cfg.seed)?,
        })
    }

    pub fn rounds(&self) -> usize {
        self.subsets.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub inputs: Vec<String>,
    pub records: usize,
    pub skipped_hypotheses: usize,
    pub mean_final_score: f64,
    pub mean_margin: f64,
    pub epoch_losses: Vec<f64>,
    pub input_policy: String,
    pub reference_policy: String,
    pub output_policy: String,
}

#[derive(Debug, Clone)]
pub struct RoundResult {
    pub data: RoundData,
    pub policy: PolicyParams,
    pub metrics: RoundMetrics,
}

/// Generates `𝒟_i` on `subset` with `policy`, then trains on it.
///
/// The reference policy is a snapshot of `policy` taken at the start of the
/// round, unless `cfg.pinned_reference` keeps it at `initial`.
pub fn run_round(
    round: usize,
    subset: &[&InputPair],
    policy: &PolicyParams,
    initial: &PolicyParams,
    models: &Models<'_>,
    cfg: &RunConfig,
) -> Result<RoundResult> {
    if subset.is_empty() {
        return Err(Error::Config(format!("round {round} has no inputs")));
    }
    let data = generate_round_data(subset, models, cfg, round, policy)?;
    let mut current = policy.clone();
    let mut reference = if cfg.pinned_reference { initial.clone() } else { PolicyParams::new() };
    for (ctx, ids) in &data.offered {
        current.ensure_row(ctx, ids.iter().map(String::as_str));
        if cfg.pinned_reference {
            reference.ensure_row(ctx, ids.iter().map(String::as_str));
        }
    }
    if !cfg.pinned_reference {
        reference = current.clone();
    }
    let loss_cfg = cfg.loss_config();
    let (next, epoch_losses) = if data.records.is_empty() {
        (current, Vec::new())
    } else {
        let seed = derive_seed(cfg.seed, &[b"train", &(round as u64).to_le_bytes()]);
        let out = dpo::train_epochs(&current, &reference, &data.records, &loss_cfg, seed)
            .map_err(|e| e.in_stage("train", format!("round {round}")))?;
        (out.policy, out.epoch_losses)
    };
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        if n == 0 { 0.0 } else { s / n as f64 }
    };
    let margins = data
        .records
        .iter()
        .map(|r| dpo::record_margin(r, &loss_cfg))
        .collect::<Result<Vec<_>>>()?;
    let metrics = RoundMetrics {
        round,
        inputs: subset.iter().map(|i| i.id.clone()).collect(),
        records: data.records.len(),
        skipped_hypotheses: data.skipped.values().map(Vec::len).sum(),
        mean_final_score: mean(&mut data.ledger.iter().map(|l| l.s_final)),
        mean_margin: mean(&mut margins.into_iter()),
        epoch_losses,
        input_policy: policy.digest(),
        reference_policy: reference.digest(),
        output_policy: next.digest(),
    };
    Ok(RoundResult {
        data,
        policy: next,
        metrics,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Continue after this completed round, reading its checkpoint.
    pub resume_from: Option<usize>,
    /// Stop after this round, as if interrupted.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub policy: PolicyParams,
    pub metrics: Vec<RoundMetrics>,
    pub completed_rounds: usize,
    pub run_dir: PathBuf,
}

pub fn round_dir(run_dir: &Path, round: usize) -> PathBuf {
    run_dir.join(format!("round_{round}"))
}

fn write_round(run_dir: &Path, r: &RoundResult) -> Result<()> {
    let dir = round_dir(run_dir, r.metrics.round);
    write_atomic(&dir.join("dataset.jsonl"), r.data.dataset_text()?.as_bytes())?;
    write_atomic(&dir.join("scores.log"), r.data.ledger_text().as_bytes())?;
    write_atomic(&dir.join("chains.jsonl"), r.data.chains_text().as_bytes())?;
    write_atomic(&dir.join("loss.dat"), render_loss_curve(&r.metrics.epoch_losses).as_bytes())?;
    let metrics = serde_json::to_string_pretty(&r.metrics).expect("metrics serialize") + "\n";
    write_atomic(&dir.join("metrics.json"), metrics.as_bytes())?;
    // checkpoint last: its presence marks the round complete
    write_atomic(&dir.join("policy.ckpt"), r.policy.to_checkpoint_string().as_bytes())
}

fn read_metrics(run_dir: &Path, round: usize) -> Result<RoundMetrics> {
    let path = round_dir(run_dir, round).join("metrics.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(Some(path), e.line(), e.to_string()))
}

pub fn render_report(plan: &RoundPlan, metrics: &[RoundMetrics]) -> String {
    let mut out = format!(
        "rounds: {} (completed {})\nseed: {}\n\n",
        plan.rounds(),
        metrics.len(),
        plan.seed
    );
    out.push_str("round inputs records skipped mean_s_final mean_margin epoch_losses\n");
    for m in metrics {
        let losses: Vec<String> = m.epoch_losses.iter().map(|l| format!("{l:.6}")).collect();
        let _ = writeln!(
            out,
            "{} {} {} {} {:.6} {:.6} [{}]",
            m.round,
            m.inputs.len(),
            m.records,
            m.skipped_hypotheses,
            m.mean_final_score,
            m.mean_margin,
            losses.join(", ")
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub round: usize,
    pub input_policy: String,
    pub output_policy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub seed: u64,
    pub rounds: usize,
    pub completed_rounds: usize,
    pub tau: f64,
    pub min_area: usize,
    pub connectivity: u8,
    pub lineage: Vec<LineageEntry>,
    pub artifacts: BTreeMap<String, String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn write_manifest(run_dir: &Path, plan: &RoundPlan, cfg: &RunConfig, metrics: &[RoundMetrics]) -> Result<()> {
    let mut artifacts = BTreeMap::new();
    for rel in list_files(run_dir)? {
        if rel == MANIFEST_FILE || rel.rsplit('/').next().is_some_and(|n| n.starts_with('.')) {
            continue;
        }
        artifacts.insert(rel.clone(), file_sha256(&run_dir.join(&rel))?);
    }
    let manifest = Manifest {
        config_digest: cfg.experiment_digest(),
        seed: cfg.seed,
        rounds: plan.rounds(),
        completed_rounds: metrics.len(),
        tau: cfg.tau,
        min_area: cfg.min_area,
        connectivity: 4,
        lineage: metrics
            .iter()
            .map(|m| LineageEntry {
                round: m.round,
                input_policy: m.input_policy.clone(),
                output_policy: m.output_policy.clone(),
            })
            .collect(),
        artifacts,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_atomic(&run_dir.join(MANIFEST_FILE), text.as_bytes())
}

pub fn read_manifest(run_dir: &Path) -> Result<Manifest> {
    let path = run_dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(Some(path), e.line(), e.to_string()))
}

/// Runs rounds `1..=m` in order, threading the trained policy from one round
/// into the next. Artifacts of completed rounds stay intact if a later round
/// fails.
pub fn run_all(
    plan: &RoundPlan,
    inputs: &[InputPair],
    initial: &PolicyParams,
    models: &Models<'_>,
    cfg: &RunConfig,
    run_dir: &Path,
    opts: RunOptions,
) -> Result<RunReport> {
    let by_id: BTreeMap<&str, &InputPair> = inputs.iter().map(|i| (i.id.as_str(), i)).collect();
    let plan_path = run_dir.join("plan.json");
    let plan_text = serde_json::to_string_pretty(plan).expect("plan serializes") + "\n";
    let (mut policy, mut metrics, first) = match opts.resume_from {
        None => {
            write_atomic(&plan_path, plan_text.as_bytes())?;
            write_atomic(&run_dir.join("initial.ckpt"), initial.to_checkpoint_string().as_bytes())?;
            (initial.clone(), Vec::new(), 1)
        }
        Some(done) => {
            if done == 0 || done > plan.rounds() {
                return Err(Error::Config(format!(
                    "cannot resume after round {done} of {}",
                    plan.rounds()
                )));
            }
            let stored = std::fs::read_to_string(&plan_path).map_err(|e| Error::io(&plan_path, e))?;
            if stored != plan_text {
                return Err(Error::Config(format!(
                    "{} does not match the current plan; refusing to resume",
                    plan_path.display()
                )));
            }
            let policy = PolicyParams::read(&round_dir(run_dir, done).join("policy.ckpt"))?;
            let metrics = (1..=done).map(|r| read_metrics(run_dir, r)).collect::<Result<Vec<_>>>()?;
            (policy, metrics, done + 1)
        }
    };
    let initial = if opts.resume_from.is_some() && cfg.pinned_reference {
        PolicyParams::read(&run_dir.join("initial.ckpt"))?
    } else {
        initial.clone()
    };
    let last = opts.stop_after.unwrap_or(plan.rounds()).min(plan.rounds());
    for round in first..=last {
        let subset = plan.subsets[round - 1]
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Config(format!("plan names unknown input `{id}`")))
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_round(round))?;
        let result = run_round(round, &subset, &policy, &initial, models, cfg).map_err(|e| e.in_round(round))?;
        write_round(run_dir, &result).map_err(|e| e.in_round(round))?;
        policy = result.policy;
        metrics.push(result.metrics);
        write_atomic(&run_dir.join("report.txt"), render_report(plan, &metrics).as_bytes())?;
        write_manifest(run_dir, plan, cfg, &metrics)?;
    }
    Ok(RunReport {
        policy,
        completed_rounds: metrics.len(),
        metrics,
        run_dir: run_dir.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn partition_examples() {
        let p = partition(&ids(8), 4, 1).unwrap();
        assert!(p.iter().all(|s| s.len() == 2));
        let p = partition(&ids(7), 4, 1).unwrap();
        assert_eq!(p.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 2, 1]);
        assert_eq!(p, partition(&ids(7), 4, 1).unwrap());
        let p = partition(&ids(5), 1, 9).unwrap();
        let mut all = p[0].clone();
        all.sort();
        assert_eq!(all, ids(5));
        assert!(matches!(partition(&ids(3), 4, 0), Err(Error::Config(_))));
        assert!(matches!(partition(&[], 1, 0), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_and_covering(n in 1usize..40, m_frac in 0.0f64..1.0, seed: u64) {
            let m = 1 + ((n - 1) as f64 * m_frac) as usize;
            let parts = partition(&ids(n), m, seed).unwrap();
            prop_assert_eq!(parts.len(), m);
            let mut all: Vec<String> = parts.concat();
            all.sort();
            let mut expected = ids(n);
            expected.sort();
            prop_assert_eq!(all, expected);
            let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
