//! Browser demo. Three operations, each a plain function returning JSON so
//! the same code runs in native tests:
//!
//! - [`label_regions`]: threshold a heatmap and label its 4-connected
//!   components, marking the one a region proposal would keep.
//! - [`consensus_surface`]: the two-evaluator consensus weight on a grid.
//! - [`preference_curves`]: margin-aware vs plain loss over the reward gap,
//!   plus a Gumbel Monte-Carlo estimate next to its logistic closed form.

use clincot::digest::{derive_seed, unit_interval};
use clincot::dpo::{dpo_loss, gumbel_preference_prob_mc, margin, pair_loss, sigmoid, PairLogits};
use clincot::grid::ImageGrid;
use clincot::region::{extract_components, threshold_map, ActivationMap};
use clincot::scoring::consensus_weight;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct RegionView {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    /// Component rank per pixel (0 = largest), `-1` below threshold.
    pub labels: Vec<i32>,
    pub areas: Vec<usize>,
    /// Rank of the kept component, if it reaches `min_area`.
    pub selected: Option<usize>,
}

pub fn label_regions(heatmap: &str, tau: f64, min_area: usize) -> Result<RegionView, String> {
    let grid = ImageGrid::parse_matrix(heatmap, None).map_err(|e| e.to_string())?;
    let (height, width) = grid.shape();
    let map = ActivationMap::new("demo", grid);
    let mask = threshold_map(&map, tau).map_err(|e| e.to_string())?;
    let comps = extract_components(&mask);
    let mut labels = vec![-1; height * width];
    for (rank, c) in comps.iter().enumerate() {
        for (i, on) in c.mask.bits().iter().enumerate() {
            if *on {
                labels[i] = rank as i32;
            }
        }
    }
    Ok(RegionView {
        height,
        width,
        values: map.grid.values().to_vec(),
        labels,
        selected: comps.first().filter(|c| c.area >= min_area.max(1)).map(|_| 0),
        areas: comps.iter().map(|c| c.area).collect(),
    })
}

/// A `size`×`size` heatmap of a few soft blobs, in matrix text form.
pub fn demo_heatmap(size: usize, seed: u64) -> String {
    let size = size.clamp(4, 64);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..4u8)
        .map(|b| {
            let u = |k: u8| unit_interval(derive_seed(seed, &[&[b, k]]));
            let s = size as f64;
            (u(0) * s, u(1) * s, 1.0 + u(2) * s / 6.0, 0.5 + 0.5 * u(3))
        })
        .collect();
    let mut values = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let v = blobs
                .iter()
                .map(|&(br, bc, rad, peak)| {
                    let d2 = (r as f64 - br).powi(2) + (c as f64 - bc).powi(2);
                    peak * (-d2 / (2.0 * rad * rad)).exp()
                })
                .fold(0.0, f64::max);
            values.push((v * 1000.0).round() / 1000.0);
        }
    }
    ImageGrid::new(size, size, values)
        .expect("values match the shape")
        .to_matrix_string()
}

#[derive(Debug, Serialize)]
pub struct Surface {
    pub n: usize,
    /// Row `i`, column `j` holds the weight at `s1 = i/(n-1)`, `s2 = j/(n-1)`.
    pub values: Vec<f64>,
}

pub fn consensus_surface(n: usize) -> Result<Surface, String> {
    let n = n.clamp(2, 256);
    let step = 1.0 / (n - 1) as f64;
    let mut values = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            values.push(consensus_weight(i as f64 * step, j as f64 * step).map_err(|e| e.to_string())?);
        }
    }
    Ok(Surface { n, values })
}

#[derive(Debug, Serialize)]
pub struct PreferenceCurves {
    pub delta_r: f64,
    pub gaps: Vec<f64>,
    pub margin_loss: Vec<f64>,
    pub plain_loss: Vec<f64>,
    pub mc_probability: f64,
    pub closed_form: f64,
}

/// Losses are evaluated at `β = 1` with the reward gap placed on the winner.
pub fn preference_curves(
    s_w: f64,
    s_l: f64,
    lambda: f64,
    r_gap: f64,
    samples: usize,
    seed: u64,
) -> Result<PreferenceCurves, String> {
    let delta_r = margin(s_w, s_l, lambda).map_err(|e| e.to_string())?;
    let gaps: Vec<f64> = (0..=120).map(|i| -6.0 + 0.1 * i as f64).collect();
    let mut margin_loss = Vec::with_capacity(gaps.len());
    let mut plain_loss = Vec::with_capacity(gaps.len());
    for &g in &gaps {
        let p = PairLogits {
            lw: g,
            ll: 0.0,
            lw_ref: 0.0,
            ll_ref: 0.0,
            delta_r,
        };
        margin_loss.push(pair_loss(&p, 1.0).map_err(|e| e.to_string())?);
        plain_loss.push(dpo_loss(&p, 1.0).map_err(|e| e.to_string())?);
    }
    let mc_probability = gumbel_preference_prob_mc(r_gap, 0.0, delta_r, samples, seed).map_err(|e| e.to_string())?;
    Ok(PreferenceCurves {
        delta_r,
        gaps,
        margin_loss,
        plain_loss,
        mc_probability,
        closed_form: sigmoid(r_gap - delta_r),
    })
}

fn to_json<T: Serialize>(v: Result<T, String>) -> Result<String, JsError> {
    v.map_err(|e| JsError::new(&e))
        .map(|v| serde_json::to_string(&v).expect("view serializes"))
}

#[wasm_bindgen(js_name = labelRegions)]
pub fn label_regions_js(heatmap: &str, tau: f64, min_area: usize) -> Result<String, JsError> {
    to_json(label_regions(heatmap, tau, min_area))
}

#[wasm_bindgen(js_name = demoHeatmap)]
pub fn demo_heatmap_js(size: usize, seed: u32) -> String {
    demo_heatmap(size, seed as u64)
}

#[wasm_bindgen(js_name = consensusSurface)]
pub fn consensus_surface_js(n: usize) -> Result<String, JsError> {
    to_json(consensus_surface(n))
}

#[wasm_bindgen(js_name = preferenceCurves)]
pub fn preference_curves_js(
    s_w: f64,
    s_l: f64,
    lambda: f64,
    r_gap: f64,
    samples: usize,
    seed: u32,
) -> Result<String, JsError> {
    to_json(preference_curves(s_w, s_l, lambda, r_gap, samples, seed as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_label_largest_first() {
        let text = "3 4\n0.9 0.9 0 0.6\n0.9 0 0 0.6\n0 0 0 0\n";
        let v = label_regions(text, 0.5, 1).unwrap();
        assert_eq!(v.areas, vec![3, 2]);
        assert_eq!(v.labels, vec![0, 0, -1, 1, 0, -1, -1, 1, -1, -1, -1, -1]);
        assert_eq!(v.selected, Some(0));
        assert_eq!(label_regions(text, 0.5, 4).unwrap().selected, None);
        assert!(label_regions(text, 1.5, 1).is_err());
        assert!(label_regions("2 2\n1 2\n", 0.5, 1).is_err());
    }

    #[test]
    fn demo_heatmap_parses_and_is_seeded() {
        let a = demo_heatmap(16, 3);
        assert_eq!(a, demo_heatmap(16, 3));
        assert_ne!(a, demo_heatmap(16, 4));
        let v = label_regions(&a, 0.5, 1).unwrap();
        assert_eq!(v.values.len(), 256);
        assert!(v.values.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn surface_diagonal_is_identity() {
        let s = consensus_surface(5).unwrap();
        for i in 0..5 {
            assert_eq!(s.values[i * 5 + i], i as f64 / 4.0);
            for j in 0..5 {
                assert_eq!(s.values[i * 5 + j], s.values[j * 5 + i]);
            }
        }
    }

    #[test]
    fn curves_shift_by_margin() {
        let c = preference_curves(0.9, 0.4, 1.0, 0.0, 20_000, 1).unwrap();
        assert!((c.delta_r - 0.5).abs() < 1e-12);
        // at gap = Δr the margin loss equals the plain loss at gap 0
        let at = |g: f64| c.gaps.iter().position(|x| (x - g).abs() < 1e-9).unwrap();
        assert!((c.margin_loss[at(0.5)] - c.plain_loss[at(0.0)]).abs() < 1e-12);
        assert!((c.mc_probability - c.closed_form).abs() < 0.02);
        assert!(preference_curves(0.4, 0.9, 1.0, 0.0, 20_000, 1).is_err());
    }
}
