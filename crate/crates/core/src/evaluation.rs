//! Miss / false-alarm / total-error metrics, stratified split evaluation,
//! trajectory noise and parameter sweeps.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::HeatMap;
use crate::error::{HmbError, Result};
use crate::grid::{GridSpec, TrackPoint, Trajectory};
use crate::params::{AlignConfig, Coefficient, HeatParams};
use crate::pipeline::{Dataset, LabeledClip};
use crate::recognition::{classify_asf, classify_sf, KernelConfig};
use crate::synth::mix_seed;
use crate::training::{train, TrainConfig, TrainingSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub miss_rate: f64,
    pub fa_rate: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_label: BTreeMap<String, LabelMetrics>,
    pub ter: f64,
    /// `None` for averaged reports.
    pub split_seed: Option<u64>,
    pub params: Option<EvalConfig>,
}

impl EvalReport {
    /// Tab-separated per-label table followed by a summary line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("label\tmiss\tfa\tpositives\tnegatives\n");
        for (l, m) in &self.per_label {
            let _ = writeln!(s, "{l}\t{:.4}\t{:.4}\t{}\t{}", m.miss_rate, m.fa_rate, m.positives, m.negatives);
        }
        let _ = writeln!(s, "TER\t{:.4}", self.ter);
        s
    }
}

/// Per-label miss and false-alarm rates from a multi-class confusion.
///
/// Each prediction is `(true label, predicted label)`; `None` means the clip
/// could not be classified and counts as a miss without a false alarm.
pub fn compute_metrics(predictions: &[(String, Option<String>)], labels: &[String]) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(HmbError::NoPredictions);
    }
    let known = |l: &str| {
        if labels.iter().any(|k| k == l) {
            Ok(())
        } else {
            Err(HmbError::UnknownLabel(l.to_string()))
        }
    };
    for (t, p) in predictions {
        known(t)?;
        if let Some(p) = p {
            known(p)?;
        }
    }
    let total = predictions.len();
    let wrong = predictions.iter().filter(|(t, p)| p.as_deref() != Some(t.as_str())).count();
    let per_label = labels
        .iter()
        .map(|l| {
            let positives = predictions.iter().filter(|(t, _)| t == l).count();
            let negatives = total - positives;
            let fn_ = predictions
                .iter()
                .filter(|(t, p)| t == l && p.as_deref() != Some(l.as_str()))
                .count();
            let fp = predictions
                .iter()
                .filter(|(t, p)| t != l && p.as_deref() == Some(l.as_str()))
                .count();
            let rate = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
            (
                l.clone(),
                LabelMetrics {
                    miss_rate: rate(fn_, positives),
                    fa_rate: rate(fp, negatives),
                    positives,
                    negatives,
                },
            )
        })
        .collect();
    Ok(EvalReport {
        per_label,
        ter: wrong as f64 / total as f64,
        split_seed: None,
        params: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NoiseMode {
    /// Independent displacement per point.
    #[default]
    Iid,
    /// Slowly drifting AR(1) displacement with the same marginal spread.
    Drift,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Expected radial deviation in pixels.
    pub m: f64,
    pub seed: u64,
    pub mode: NoiseMode,
}

const DRIFT_RHO: f64 = 0.95;

/// Displaces every point by isotropic Gaussian noise whose expected radial
/// length is `m`, then clamps into the scene.
pub fn inject_noise(traj: &Trajectory, ns: &NoiseSpec, grid: &GridSpec) -> Result<Trajectory> {
    if !(ns.m >= 0.0) || !ns.m.is_finite() {
        return Err(HmbError::InvalidParameter(format!("noise strength must be >= 0, got {}", ns.m)));
    }
    if ns.m == 0.0 {
        return Ok(traj.clone());
    }
    let sigma = ns.m / (PI / 2.0).sqrt();
    let normal = Normal::new(0.0, sigma).expect("positive finite sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(ns.seed);
    let (w, h) = (grid.scene_width as f64, grid.scene_height as f64);
    let innov = (1.0 - DRIFT_RHO * DRIFT_RHO).sqrt();
    let mut state: Option<(f64, f64)> = None;
    let mut step = |rng: &mut ChaCha8Rng| -> (f64, f64) {
        let fresh = (normal.sample(rng), normal.sample(rng));
        match ns.mode {
            NoiseMode::Iid => fresh,
            NoiseMode::Drift => {
                let next = match state {
                    None => fresh,
                    Some((dx, dy)) => (DRIFT_RHO * dx + innov * fresh.0, DRIFT_RHO * dy + innov * fresh.1),
                };
                state = Some(next);
                next
            }
        }
    };
    let points = traj
        .points()
        .iter()
        .map(|p| {
            let (dx, dy) = step(&mut rng);
            TrackPoint::new(p.frame, (p.x + dx).clamp(0.0, w), (p.y + dy).clamp(0.0, h))
        })
        .collect();
    Trajectory::new(traj.object_id.clone(), points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Method {
    /// Adaptive surface fitting (nearest training surfaces vote).
    #[default]
    Asf,
    /// Surface fitting against per-label standard surfaces.
    Sf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub heat: HeatParams,
    pub align: AlignConfig,
    pub w: usize,
    /// `None` uses the width derived during training.
    pub sigma: Option<f64>,
    pub noise: NoiseSpec,
    pub method: Method,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            heat: HeatParams::default(),
            align: AlignConfig::default(),
            w: 1,
            sigma: None,
            noise: NoiseSpec::default(),
            method: Method::Asf,
        }
    }
}

/// Per-seed reports and their average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvaluation {
    pub runs: Vec<EvalReport>,
    pub average: EvalReport,
}

impl SplitEvaluation {
    /// Population variance of TER across seeds.
    pub fn ter_variance(&self) -> f64 {
        let n = self.runs.len() as f64;
        let mean = self.average.ter;
        self.runs.iter().map(|r| (r.ter - mean).powi(2)).sum::<f64>() / n
    }
}

/// Stratified split: `round(fraction * n)` of each label trains, clamped so
/// both sides keep at least one clip. Returns (train, test) clip indices.
pub fn stratified_split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(HmbError::InvalidParameter(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in dataset.clips.iter().enumerate() {
        by_label.entry(c.label.as_str()).or_default().push(i);
    }
    if by_label.is_empty() {
        return Err(HmbError::EmptyTrainSplit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (label, mut idx) in by_label {
        if idx.len() < 2 {
            return Err(HmbError::InsufficientSamples(label.to_string()));
        }
        idx.shuffle(&mut rng);
        let n = idx.len();
        let k = (train_fraction * n as f64).round() as usize;
        if k == 0 {
            return Err(HmbError::EmptyTrainSplit);
        }
        if k >= n {
            return Err(HmbError::EmptyTestSet);
        }
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

fn clip_heat_map(clip: &LabeledClip, grid: &GridSpec, cfg: &EvalConfig, noise_seed: u64) -> Result<HeatMap> {
    if cfg.noise.m == 0.0 {
        return clip.clip.heat_map(grid, &cfg.heat);
    }
    let mut noisy = clip.clip.clone();
    for (j, t) in noisy.trajectories.iter_mut().enumerate() {
        let ns = NoiseSpec {
            seed: mix_seed(noise_seed, j as u64),
            ..cfg.noise
        };
        *t = inject_noise(t, &ns, grid)?;
    }
    noisy.heat_map(grid, &cfg.heat)
}

/// Heat maps for every clip. Noise, when enabled, is drawn per clip from a
/// stream keyed by the noise seed, the split seed and the clip index.
fn dataset_heat_maps(dataset: &Dataset, cfg: &EvalConfig, split_seed: u64) -> Result<Vec<HeatMap>> {
    dataset
        .clips
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let seed = mix_seed(mix_seed(cfg.noise.seed, split_seed), i as u64);
            clip_heat_map(c, &dataset.grid, cfg, seed)
        })
        .collect()
}

fn evaluate_split(dataset: &Dataset, hms: &[HeatMap], cfg: &EvalConfig, train_fraction: f64, seed: u64) -> Result<EvalReport> {
    let (train_idx, test_idx) = stratified_split(dataset, train_fraction, seed)?;
    let ts = TrainingSet::new(
        train_idx
            .iter()
            .map(|&i| (hms[i].clone(), dataset.clips[i].label.clone()))
            .collect(),
    );
    let tc = TrainConfig {
        align: cfg.align,
        ..TrainConfig::default()
    };
    let model = train(&ts, &tc)?;
    let kc = KernelConfig {
        w: cfg.w,
        sigma: cfg.sigma.unwrap_or(model.sigma),
    };
    let predictions: Vec<(String, Option<String>)> = test_idx
        .par_iter()
        .map(|&i| {
            let truth = dataset.clips[i].label.clone();
            let result = match cfg.method {
                Method::Asf => classify_asf(&hms[i], &model, &kc),
                Method::Sf => classify_sf(&hms[i], &model),
            };
            match result {
                Ok(c) => Ok((truth, Some(c.label))),
                Err(HmbError::Unclassifiable(_)) => Ok((truth, None)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut report = compute_metrics(&predictions, &dataset.labels())?;
    report.split_seed = Some(seed);
    report.params = Some(*cfg);
    Ok(report)
}

/// Averages per-label rates and TER over several reports.
pub fn average_reports(runs: &[EvalReport]) -> Result<EvalReport> {
    let first = runs.first().ok_or(HmbError::NoPredictions)?;
    let n = runs.len() as f64;
    let per_label = first
        .per_label
        .keys()
        .map(|l| {
            let ms: Vec<&LabelMetrics> = runs.iter().filter_map(|r| r.per_label.get(l)).collect();
            let mean = |f: fn(&LabelMetrics) -> f64| ms.iter().map(|m| f(m)).sum::<f64>() / ms.len() as f64;
            (
                l.clone(),
                LabelMetrics {
                    miss_rate: mean(|m| m.miss_rate),
                    fa_rate: mean(|m| m.fa_rate),
                    positives: ms[0].positives,
                    negatives: ms[0].negatives,
                },
            )
        })
        .collect();
    Ok(EvalReport {
        per_label,
        ter: runs.iter().map(|r| r.ter).sum::<f64>() / n,
        split_seed: None,
        params: first.params,
    })
}

/// Stratified train/test evaluation repeated for each seed.
pub fn run_split_eval(dataset: &Dataset, train_fraction: f64, cfg: &EvalConfig, seeds: &[u64]) -> Result<SplitEvaluation> {
    if seeds.is_empty() {
        return Err(HmbError::InvalidParameter("at least one split seed is required".into()));
    }
    // fail fast on split problems before building heat maps
    stratified_split(dataset, train_fraction, seeds[0])?;
    let shared = if cfg.noise.m == 0.0 {
        Some(dataset_heat_maps(dataset, cfg, 0)?)
    } else {
        None
    };
    let runs: Vec<EvalReport> = seeds
        .par_iter()
        .map(|&seed| match &shared {
            Some(hms) => evaluate_split(dataset, hms, cfg, train_fraction, seed),
            None => {
                let hms = dataset_heat_maps(dataset, cfg, seed)?;
                evaluate_split(dataset, &hms, cfg, train_fraction, seed)
            }
        })
        .collect::<Result<_>>()?;
    let average = average_reports(&runs)?;
    Ok(SplitEvaluation { runs, average })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    Kt,
    Kp,
    NoiseM,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Kt => "k_t",
            SweepAxis::Kp => "k_p",
            SweepAxis::NoiseM => "m",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = HmbError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kt" | "k_t" => Ok(SweepAxis::Kt),
            "kp" | "k_p" => Ok(SweepAxis::Kp),
            "m" | "noise" | "noise-m" | "noise_m" => Ok(SweepAxis::NoiseM),
            other => Err(HmbError::InvalidParameter(format!("unknown sweep axis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: Coefficient,
    pub ter: f64,
    pub ter_variance: f64,
}

/// Runs the split evaluation once per axis value with everything else fixed.
pub fn sweep_params(
    dataset: &Dataset,
    axis: SweepAxis,
    values: &[Coefficient],
    cfg: &EvalConfig,
    train_fraction: f64,
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if values.len() < 2 {
        return Err(HmbError::InvalidParameter("a sweep needs at least two values".into()));
    }
    values
        .par_iter()
        .map(|&v| {
            let mut c = *cfg;
            match axis {
                SweepAxis::Kt => c.heat.k_t = v,
                SweepAxis::Kp => c.heat.k_p = v,
                SweepAxis::NoiseM => {
                    c.noise.m = v
                        .finite()
                        .ok_or_else(|| HmbError::InvalidParameter("noise strength must be finite".into()))?
                }
            }
            let ev = run_split_eval(dataset, train_fraction, &c, seeds)?;
            Ok(SweepRow {
                value: v,
                ter: ev.average.ter,
                ter_variance: ev.ter_variance(),
            })
        })
        .collect()
}

/// Tab-separated sweep table.
pub fn sweep_table(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut s = format!("{}\tTER\tvariance\n", axis.name());
    for r in rows {
        let _ = writeln!(s, "{}\t{:.4}\t{:.6}", r.value, r.ter, r.ter_variance);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(t: &str, q: &str) -> (String, Option<String>) {
        (t.to_string(), Some(q.to_string()))
    }

    fn labels(ls: &[&str]) -> Vec<String> {
        ls.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn three_label_confusion() {
        let mut preds = Vec::new();
        for _ in 0..2 {
            preds.push(p("A", "B"));
        }
        for _ in 0..2 {
            preds.push(p("A", "A"));
        }
        for l in ["B", "C"] {
            for _ in 0..4 {
                preds.push(p(l, l));
            }
        }
        let r = compute_metrics(&preds, &labels(&["A", "B", "C"])).unwrap();
        assert_eq!(r.per_label["A"].miss_rate, 0.5);
        assert_eq!(r.per_label["B"].fa_rate, 0.25);
        assert_eq!(r.per_label["C"].fa_rate, 0.0);
        assert_eq!(r.ter, 2.0 / 12.0);
    }

    #[test]
    fn unknown_and_empty() {
        assert!(matches!(
            compute_metrics(&[p("A", "Z")], &labels(&["A"])),
            Err(HmbError::UnknownLabel(_))
        ));
        assert!(matches!(compute_metrics(&[], &labels(&["A"])), Err(HmbError::NoPredictions)));
    }

    #[test]
    fn unclassified_counts_as_miss() {
        let preds = vec![("A".to_string(), None), p("B", "B")];
        let r = compute_metrics(&preds, &labels(&["A", "B"])).unwrap();
        assert_eq!(r.per_label["A"].miss_rate, 1.0);
        assert_eq!(r.per_label["B"].fa_rate, 0.0);
        assert_eq!(r.ter, 0.5);
    }

    #[test]
    fn noise_identity_and_clamp() {
        let grid = GridSpec::new(100, 100, 10).unwrap();
        let t = Trajectory::new(
            "a",
            vec![TrackPoint::new(0, 0.5, 99.5), TrackPoint::new(1, 50.0, 50.0)],
        )
        .unwrap();
        assert_eq!(inject_noise(&t, &NoiseSpec::default(), &grid).unwrap(), t);
        for mode in [NoiseMode::Iid, NoiseMode::Drift] {
            let ns = NoiseSpec { m: 30.0, seed: 3, mode };
            let n = inject_noise(&t, &ns, &grid).unwrap();
            assert!(n.points().iter().all(|q| grid.contains_pixel(q.x, q.y)));
        }
        assert!(inject_noise(&t, &NoiseSpec { m: -1.0, ..NoiseSpec::default() }, &grid).is_err());
    }

    #[test]
    fn sweep_axis_parsing() {
        assert_eq!("kp".parse::<SweepAxis>().unwrap(), SweepAxis::Kp);
        assert_eq!("k_t".parse::<SweepAxis>().unwrap(), SweepAxis::Kt);
        assert_eq!("m".parse::<SweepAxis>().unwrap(), SweepAxis::NoiseM);
        assert!("q".parse::<SweepAxis>().is_err());
    }
}
