//! Hypothesis-driven region proposal: threshold an activation map, label its
//! 4-connected components, and mask the image with the largest one.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ImageGrid};

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_MIN_AREA: usize = 1;

/// Activation strengths for one clinical hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    pub hypothesis_id: String,
    pub grid: ImageGrid,
}

impl ActivationMap {
    pub fn new(hypothesis_id: impl Into<String>, grid: ImageGrid) -> Self {
        Self {
            hypothesis_id: hypothesis_id.into(),
            grid,
        }
    }
}

/// One maximal 4-connected set of pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub mask: BinaryMask,
    pub area: usize,
    /// Row-major index of the first pixel of the component.
    pub anchor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionProposal {
    pub hypothesis_id: String,
    pub mask: BinaryMask,
    pub masked_image: ImageGrid,
    pub component_area: usize,
}

pub fn threshold_map(map: &ActivationMap, tau: f64) -> Result<BinaryMask> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("tau must lie in (0, 1), got {tau}")));
    }
    let (h, w) = map.grid.shape();
    BinaryMask::new(h, w, map.grid.values().iter().map(|v| *v >= tau).collect())
}

/// Labels 4-connected components, largest first. Equal areas keep row-major
/// order of their first pixel.
pub fn extract_components(mask: &BinaryMask) -> Vec<Component> {
    let (h, w) = mask.shape();
    let bits = mask.bits();
    let mut seen = vec![false; bits.len()];
    let mut queue = VecDeque::new();
    let mut out = Vec::new();

    for start in 0..bits.len() {
        if !bits[start] || seen[start] {
            continue;
        }
        let mut comp = BinaryMask::empty(h, w);
        let mut area = 0;
        seen[start] = true;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            comp.set_index(idx, true);
            area += 1;
            let (r, c) = (idx / w, idx % w);
            let mut visit = |n: usize| {
                if bits[n] && !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            };
            if r > 0 {
                visit(idx - w);
            }
            if r + 1 < h {
                visit(idx + w);
            }
            if c > 0 {
                visit(idx - 1);
            }
            if c + 1 < w {
                visit(idx + 1);
            }
        }
        out.push(Component {
            mask: comp,
            area,
            anchor: start,
        });
    }
    // stable: discovery order is anchor order
    out.sort_by_key(|c| std::cmp::Reverse(c.area));
    out
}

/// Element-wise `image ⊙ mask`.
pub fn apply_mask(image: &ImageGrid, mask: &BinaryMask) -> Result<ImageGrid> {
    if image.shape() != mask.shape() {
        return Err(Error::Shape(format!(
            "image {:?} and mask {:?} differ in shape",
            image.shape(),
            mask.shape()
        )));
    }
    let values = image
        .values()
        .iter()
        .zip(mask.bits())
        .map(|(v, keep)| if *keep { *v } else { 0.0 })
        .collect();
    ImageGrid::new(image.height(), image.width(), values)
}

pub fn propose_region(
    image: &ImageGrid,
    map: &ActivationMap,
    tau: f64,
    min_area: usize,
) -> Result<RegionProposal> {
    if image.shape() != map.grid.shape() {
        return Err(Error::Shape(format!(
            "image {:?} and activation map `{}` {:?} differ in shape",
            image.shape(),
            map.hypothesis_id,
            map.grid.shape()
        )));
    }
    if min_area == 0 {
        return Err(Error::Config("min_area must be positive".into()));
    }
    let mask = threshold_map(map, tau)?;
    // sorted by area, so the first component is the only candidate
    let best = extract_components(&mask)
        .into_iter()
        .next()
        .filter(|c| c.area >= min_area)
        .ok_or_else(|| Error::NoRegion {
            hypothesis_id: map.hypothesis_id.clone(),
        })?;
    Ok(RegionProposal {
        hypothesis_id: map.hypothesis_id.clone(),
        masked_image: apply_mask(image, &best.mask)?,
        component_area: best.area,
        mask: best.mask,
    })
}

/// Outcome of running every hypothesis of one image through
/// [`propose_region`]: surviving regions in hypothesis order plus skips.
#[derive(Debug, Clone, Default)]
pub struct RegionSweep {
    pub regions: Vec<(usize, RegionProposal)>,
    pub skipped: Vec<String>,
}

pub fn propose_all(
    image: &ImageGrid,
    maps: &[ActivationMap],
    tau: f64,
    min_area: usize,
) -> Result<RegionSweep> {
    let mut sweep = RegionSweep::default();
    for (index, map) in maps.iter().enumerate() {
        match propose_region(image, map, tau, min_area) {
            Ok(r) => sweep.regions.push((index, r)),
            Err(Error::NoRegion { hypothesis_id }) => sweep.skipped.push(hypothesis_id),
            Err(e) => return Err(e),
        }
    }
    Ok(sweep)
}
