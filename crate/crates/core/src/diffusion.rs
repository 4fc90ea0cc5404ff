//! Spatial diffusion of heat-source energies into a heat-map surface.
//!
//! Every patch receives `sum_l E_l * exp(-k_p * d(i, l)) / N` over the `N`
//! source patches, where `d` is the Euclidean distance between patch centers
//! in patch units.

use rayon::prelude::*;

use crate::error::{HmbError, Result};
use crate::grid::{GridSpec, HeatSourceField};
use crate::params::{Coefficient, HeatParams};

/// Diffused per-patch surface of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub params: HeatParams,
    pub clip_id: String,
}

impl HeatMap {
    pub fn new(grid: GridSpec, values: Vec<f64>, params: HeatParams, clip_id: impl Into<String>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(HmbError::GridMismatch);
        }
        Ok(HeatMap {
            grid,
            values,
            params,
            clip_id: clip_id.into(),
        })
    }

    pub fn cols(&self) -> usize {
        self.grid.cols()
    }

    pub fn rows(&self) -> usize {
        self.grid.rows()
    }

    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.grid.cols() + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Same surface with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> HeatMap {
        HeatMap {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

fn check_kp(k_p: Coefficient) -> Result<()> {
    match k_p {
        Coefficient::Finite(k) if !(k >= 0.0) || !k.is_finite() => Err(HmbError::InvalidParameter(format!(
            "spatial diffusion coefficient must be non-negative, got {k}"
        ))),
        _ => Ok(()),
    }
}

fn sources_of(field: &HeatSourceField) -> Result<Vec<(usize, usize, f64)>> {
    let sources: Vec<_> = field
        .sources()
        .into_iter()
        .map(|i| {
            let (c, r) = field.grid.col_row(i);
            (c, r, field.energies[i])
        })
        .collect();
    if sources.is_empty() {
        return Err(HmbError::NoHeatSources);
    }
    Ok(sources)
}

fn finish(field: &HeatSourceField, k_p: Coefficient, values: Vec<f64>) -> HeatMap {
    HeatMap {
        grid: field.grid,
        values,
        params: HeatParams { k_p, ..field.params },
        clip_id: String::new(),
    }
}

#[inline]
fn kernel(k_p: f64, dc: usize, dr: usize) -> f64 {
    let d2 = (dc * dc + dr * dr) as f64;
    (-k_p * d2.sqrt()).exp()
}

/// Diffuses a heat-source field.
pub fn diffuse(field: &HeatSourceField, k_p: Coefficient) -> Result<HeatMap> {
    diffuse_with_cutoff(field, k_p, None)
}

/// Like [`diffuse`], optionally skipping kernel weights below `cutoff`.
pub fn diffuse_with_cutoff(field: &HeatSourceField, k_p: Coefficient, cutoff: Option<f64>) -> Result<HeatMap> {
    check_kp(k_p)?;
    let sources = sources_of(field)?;
    let grid = field.grid;
    let n = sources.len() as f64;
    let k = match k_p {
        Coefficient::Infinite => {
            let values = field
                .energies
                .iter()
                .map(|&e| if e > 0.0 { e / n } else { 0.0 })
                .collect();
            return Ok(finish(field, k_p, values));
        }
        Coefficient::Finite(k) => k,
    };
    let (cols, rows) = (grid.cols(), grid.rows());
    // kernel depends only on |dc|, |dr|
    let table: Vec<f64> = (0..rows)
        .flat_map(|dr| (0..cols).map(move |dc| kernel(k, dc, dr)))
        .map(|w| match cutoff {
            Some(c) if w < c => 0.0,
            _ => w,
        })
        .collect();
    let mut values = vec![0.0; grid.len()];
    values.par_chunks_mut(cols).enumerate().for_each(|(r, row)| {
        for (c, out) in row.iter_mut().enumerate() {
            let mut sum = 0.0;
            for &(sc, sr, e) in &sources {
                let w = table[sr.abs_diff(r) * cols + sc.abs_diff(c)];
                if w != 0.0 {
                    sum += e * w;
                }
            }
            *out = sum / n;
        }
    });
    Ok(finish(field, k_p, values))
}

/// Literal double loop over every patch and every source patch.
pub fn diffuse_naive(field: &HeatSourceField, k_p: Coefficient) -> Result<HeatMap> {
    check_kp(k_p)?;
    let sources = sources_of(field)?;
    let grid = field.grid;
    let n = sources.len() as f64;
    let mut values = vec![0.0; grid.len()];
    for (i, out) in values.iter_mut().enumerate() {
        let (c, r) = grid.col_row(i);
        let mut sum = 0.0;
        for &(sc, sr, e) in &sources {
            match k_p {
                Coefficient::Finite(k) => {
                    let dx = c as f64 - sc as f64;
                    let dy = r as f64 - sr as f64;
                    sum += e * (-k * (dx * dx + dy * dy).sqrt()).exp();
                }
                Coefficient::Infinite => {
                    if sc == c && sr == r {
                        sum += e;
                    }
                }
            }
        }
        *out = sum / n;
    }
    Ok(finish(field, k_p, values))
}
