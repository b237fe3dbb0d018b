//! Run configuration. Defaults follow the reference hyperparameters:
//! `T = 3` timesteps, `k = 2` pairs per step, `m = 4` rounds, `γ = 0.3`,
//! `β = 0.1`, 3 epochs at batch size 4.
//!
//! The file format is TOML; relative paths resolve against the directory of
//! the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::dpo::{self, LossConfig};
use crate::error::{Error, Result};
use crate::scoring::ScoringConfig;
use crate::{chain, pairs, region, scoring};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Drop the score margin from the loss.
    pub naive_dpo: bool,
    /// Generate all data in one pass and train once (`m = 1`).
    pub no_iteration: bool,
    /// Score without the lookahead term.
    pub gamma_zero: bool,
    /// Use only the first evaluator; `s_final = s_1`.
    pub single_evaluator: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub hypotheses: PathBuf,
    pub inputs: PathBuf,
    pub heatmaps: PathBuf,
    pub images: PathBuf,
    pub fixture_bank: PathBuf,
    pub output: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_policy: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Reasoning-chain length `T`.
    pub timesteps: usize,
    /// Preference pairs per timestep `k`.
    pub pairs_per_step: usize,
    /// Iterative rounds `m`.
    pub rounds: usize,
    pub gamma: f64,
    pub beta: f64,
    /// Slope `λ` of the margin map `g(s) = λ·s`.
    pub margin_scale: f64,
    pub tau: f64,
    pub min_area: usize,
    pub j_samples: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Keep the reference policy at the initial policy instead of
    /// re-snapshotting it each round.
    pub pinned_reference: bool,
    pub ablation: Ablations,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            timesteps: chain::DEFAULT_HORIZON,
            pairs_per_step: pairs::DEFAULT_K,
            rounds: 4,
            gamma: scoring::DEFAULT_GAMMA,
            beta: dpo::DEFAULT_BETA,
            margin_scale: dpo::DEFAULT_MARGIN_SCALE,
            tau: region::DEFAULT_TAU,
            min_area: region::DEFAULT_MIN_AREA,
            j_samples: scoring::DEFAULT_J_SAMPLES,
            batch_size: dpo::DEFAULT_BATCH_SIZE,
            epochs: dpo::DEFAULT_EPOCHS,
            learning_rate: dpo::DEFAULT_LEARNING_RATE,
            pinned_reference: false,
            ablation: Ablations::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.resolve_against(base);
        Ok(cfg)
    }

    /// Canonical TOML form; every field is written.
    pub fn to_canonical_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_canonical_string().as_bytes())
    }

    /// Digest of everything that affects results; ignores the output
    /// directory so the same experiment run in two places matches.
    pub fn experiment_digest(&self) -> String {
        let mut c = self.clone();
        c.paths.output = PathBuf::new();
        c.digest()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.timesteps == 0 {
            return fail("timesteps must be positive");
        }
        if self.pairs_per_step == 0 {
            return fail("pairs_per_step must be positive");
        }
        if self.rounds == 0 {
            return fail("rounds must be positive");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return fail("gamma must be finite and non-negative");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return fail("tau must lie in (0, 1)");
        }
        if self.min_area == 0 {
            return fail("min_area must be positive");
        }
        if self.j_samples == 0 {
            return fail("j_samples must be positive");
        }
        self.loss_config().validate()
    }

    pub fn effective_rounds(&self) -> usize {
        if self.ablation.no_iteration {
            1
        } else {
            self.rounds
        }
    }

    pub fn effective_gamma(&self) -> f64 {
        if self.ablation.gamma_zero {
            0.0
        } else {
            self.gamma
        }
    }

    pub fn scoring_config(&self) -> ScoringConfig {
        ScoringConfig {
            gamma: self.effective_gamma(),
            j_samples: self.j_samples,
            horizon: self.timesteps,
            single_evaluator: self.ablation.single_evaluator,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            beta: self.beta,
            margin_scale: self.margin_scale,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            naive_dpo: self.ablation.naive_dpo,
        }
    }
}

impl Paths {
    pub fn resolve_against(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.hypotheses);
        fix(&mut self.inputs);
        fix(&mut self.heatmaps);
        fix(&mut self.images);
        fix(&mut self.fixture_bank);
        fix(&mut self.output);
        if let Some(p) = self.initial_policy.as_mut() {
            fix(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!((c.timesteps, c.pairs_per_step, c.rounds), (3, 2, 4));
        assert_eq!((c.gamma, c.beta), (0.3, 0.1));
        assert_eq!((c.epochs, c.batch_size), (3, 4));
        assert_eq!((c.tau, c.min_area, c.j_samples, c.margin_scale), (0.5, 1, 2, 1.0));
        c.validate().unwrap();
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_or_invalid_fields_are_config_errors() {
        assert!(matches!(RunConfig::parse("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("tau = 1.0"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("beta = 0.0"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("[ablation]\nfoo = true"), Err(Error::Config(_))));
    }

    #[test]
    fn ablation_switches() {
        let c = RunConfig::parse("gamma = 0.7\n[ablation]\nno_iteration = true\ngamma_zero = true\nsingle_evaluator = true\nnaive_dpo = true").unwrap();
        assert_eq!(c.effective_rounds(), 1);
        assert_eq!(c.scoring_config().gamma, 0.0);
        assert!(c.scoring_config().single_evaluator);
        assert!(c.loss_config().naive_dpo);
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[paths]\ninputs = \"in.jsonl\"\noutput = \"/abs/out\"\n").unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.paths.inputs, dir.path().join("in.jsonl"));
        assert_eq!(c.paths.output, PathBuf::from("/abs/out"));
    }

    proptest! {
        #[test]
        fn canonical_round_trip(
            seed: u64, t in 1usize..6, k in 1usize..4, m in 1usize..6,
            gamma in 0.0f64..2.0, beta in 0.01f64..1.0, tau in 0.01f64..0.99,
            flags in prop::array::uniform4(any::<bool>()),
        ) {
            let c = RunConfig {
                seed, timesteps: t, pairs_per_step: k, rounds: m, gamma, beta, tau,
                ablation: Ablations { naive_dpo: flags[0], no_iteration: flags[1], gamma_zero: flags[2], single_evaluator: flags[3] },
                ..RunConfig::default()
            };
            let text = c.to_canonical_string();
            let back = RunConfig::parse(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.digest(), c.digest());
        }
    }
}
