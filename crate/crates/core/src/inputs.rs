//! Loading of the hypothesis set and the input image/question pairs.
//!
//! The hypothesis file is JSON listing each hypothesis and the heatmap file
//! bound to it; `{input}` in a binding is replaced by the input id and the
//! result resolves under the heatmaps directory:
//!
//! ```text
//! {"hypotheses":[{"id":"effusion","heatmap":"{input}/effusion.txt"}]}
//! ```
//!
//! The inputs file is line-delimited JSON, one pair per line, with the image
//! path relative to the images directory:
//!
//! ```text
//! {"id":"case01","image":"case01.txt","question":[4,17,9]}
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::contracts::{Token, MAX_VOCAB};
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::region::ActivationMap;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisBinding {
    pub id: String,
    pub heatmap: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisSet {
    pub hypotheses: Vec<HypothesisBinding>,
}

impl HypothesisSet {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: HypothesisSet = serde_json::from_str(&text)
            .map_err(|e| Error::parse(Some(path.to_path_buf()), e.line(), e.to_string()))?;
        if set.hypotheses.is_empty() {
            return Err(Error::Config(format!("{}: empty hypothesis set", path.display())));
        }
        let mut seen = std::collections::BTreeSet::new();
        for h in &set.hypotheses {
            if h.id.is_empty() || h.id.chars().any(char::is_whitespace) || !seen.insert(&h.id) {
                return Err(Error::Config(format!(
                    "{}: hypothesis id `{}` is empty, has whitespace or repeats",
                    path.display(),
                    h.id
                )));
            }
        }
        Ok(set)
    }

    pub fn heatmap_path(&self, heatmaps_dir: &Path, binding: &HypothesisBinding, input_id: &str) -> PathBuf {
        heatmaps_dir.join(binding.heatmap.replace("{input}", input_id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub id: String,
    pub image: String,
    pub question: Vec<Token>,
}

/// A loaded image/question pair with one activation map per hypothesis,
/// in hypothesis-set order.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPair {
    pub id: String,
    pub image: ImageGrid,
    pub question: Vec<Token>,
    pub maps: Vec<ActivationMap>,
}

pub fn read_input_specs(path: &Path) -> Result<Vec<InputSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut specs = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let spec: InputSpec = serde_json::from_str(line)
            .map_err(|e| Error::parse(Some(path.to_path_buf()), i + 1, e.to_string()))?;
        if spec.question.is_empty() || spec.question.iter().any(|t| *t >= MAX_VOCAB) {
            return Err(Error::parse(
                Some(path.to_path_buf()),
                i + 1,
                format!("input `{}` needs a non-empty question over the vocabulary", spec.id),
            ));
        }
        if !seen.insert(spec.id.clone()) {
            return Err(Error::parse(Some(path.to_path_buf()), i + 1, format!("duplicate input `{}`", spec.id)));
        }
        specs.push(spec);
    }
    Ok(specs)
}

pub fn load_input(cfg: &RunConfig, hyps: &HypothesisSet, spec: &InputSpec) -> Result<InputPair> {
    let image = ImageGrid::read(&cfg.paths.images.join(&spec.image))?;
    let maps = hyps
        .hypotheses
        .iter()
        .map(|h| {
            let grid = ImageGrid::read(&hyps.heatmap_path(&cfg.paths.heatmaps, h, &spec.id))?;
            Ok(ActivationMap::new(h.id.clone(), grid))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InputPair {
        id: spec.id.clone(),
        image,
        question: spec.question.clone(),
        maps,
    })
}

/// Loads every input listed in the config; an empty list is a config error.
pub fn load_inputs(cfg: &RunConfig) -> Result<Vec<InputPair>> {
    let hyps = HypothesisSet::read(&cfg.paths.hypotheses)?;
    let specs = read_input_specs(&cfg.paths.inputs)?;
    if specs.is_empty() {
        return Err(Error::Config(format!(
            "{}: no input pairs listed",
            cfg.paths.inputs.display()
        )));
    }
    specs.iter().map(|s| load_input(cfg, &hyps, s)).collect()
}
