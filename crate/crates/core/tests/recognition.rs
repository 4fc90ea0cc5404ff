use hmb_core::recognition::{gaussian_kernel, heatmap_distance, surface_distance};
use hmb_core::training::normalized_keypoints;
use hmb_core::synth::{generate, sub_activity_suite, ActivityKind, ActivityTemplate, SynthConfig};
use hmb_core::{
    classify_asf, classify_sf, classify_sliding, heat_map_from_trajectories, label_runs, majority_smooth, train,
    ActivityModel, GridSpec, HeatMap, HeatParams, HmbError, KernelConfig, StreamInput, SurfaceNorm, TrackPoint,
    TrainConfig, TrainingSet, Trajectory,
};

fn model_of(kinds: &[ActivityKind], per: usize, seed: u64) -> (ActivityModel, Vec<(Vec<Trajectory>, HeatMap, String)>) {
    let cfg = SynthConfig::default();
    let mut ts = TrainingSet::default();
    let mut items = Vec::new();
    for kind in kinds {
        for (i, (trajs, label)) in generate(&ActivityTemplate::builtin(*kind), &cfg, seed, per).unwrap().into_iter().enumerate() {
            let mut hm = heat_map_from_trajectories(&trajs, &cfg.grid, &HeatParams::default(), None).unwrap();
            hm.clip_id = format!("{label}-{i}");
            ts.push(hm.clone(), label.clone());
            items.push((trajs, hm, label));
        }
    }
    (train(&ts, &TrainConfig::default()).unwrap(), items)
}

#[test]
fn distance_examples() {
    let a: Vec<f64> = (0..48).map(|i| (i as f64 * 0.37).sin().abs()).collect();
    assert_eq!(surface_distance(&a, &a, SurfaceNorm::L1).unwrap(), 0.0);
    let b: Vec<f64> = a.iter().map(|v| v + 0.25).collect();
    assert!((surface_distance(&a, &b, SurfaceNorm::L1).unwrap() - 0.25 * 48.0).abs() < 1e-12);
    let l2 = surface_distance(&a, &b, SurfaceNorm::L2).unwrap();
    assert!((l2 - (48.0f64 * 0.0625).sqrt()).abs() < 1e-12);
    assert!(matches!(
        surface_distance(&a, &a[..47], SurfaceNorm::L1),
        Err(HmbError::GridMismatch)
    ));

    let g = GridSpec::new(40, 40, 10).unwrap();
    let x = HeatMap::new(g, vec![1.0; 16], HeatParams::default(), "x").unwrap();
    let y = HeatMap::new(GridSpec::new(40, 30, 10).unwrap(), vec![1.0; 12], HeatParams::default(), "y").unwrap();
    assert!(matches!(heatmap_distance(&x, &y), Err(HmbError::GridMismatch)));
}

#[test]
fn kernel_vote_by_hand() {
    // nearest three at distances 1 (A), 2 (A), 1 (B) with sigma 1
    let a = gaussian_kernel(1.0, 1.0) + gaussian_kernel(2.0, 1.0);
    let b = gaussian_kernel(1.0, 1.0);
    assert!((a - ((-0.5f64).exp() + (-2.0f64).exp())).abs() < 1e-15);
    assert!((a - 0.741_866).abs() < 1e-6 && (b - 0.606_531).abs() < 1e-6);
    assert!(a > b);
    assert_eq!(gaussian_kernel(0.0, 3.0), 1.0);
}

#[test]
fn standard_surface_fits_its_own_label() {
    let (model, _) = model_of(&[ActivityKind::Gather, ActivityKind::Separate, ActivityKind::Wait], 1, 3);
    for c in &model.clusters {
        let hm = HeatMap::new(model.grid, c.standard_surface.clone(), model.params.heat, "std").unwrap();
        let r = classify_sf(&hm, &model).unwrap();
        assert_eq!(r.label, c.label);
        let others = r.per_label_scores.iter().filter(|(l, _)| **l != c.label).map(|(_, s)| *s);
        let nearest_other = others.fold(f64::INFINITY, f64::min);
        // interpolation can split a broad peak in two; the fit is only tight when it does not
        let kps = normalized_keypoints(&hm, &model.params.align).unwrap();
        if kps.len() == c.mean_keypoints.len() {
            assert!(r.score < 0.25 * nearest_other, "{}: {} vs {nearest_other}", c.label, r.score);
        }
    }
}

#[test]
fn training_surface_scores_one_with_a_single_neighbor() {
    let (model, items) = model_of(&[ActivityKind::Gather, ActivityKind::Together], 4, 8);
    let kc = KernelConfig::for_model(&model, 1);
    for (_, hm, label) in &items {
        let r = classify_asf(hm, &model, &kc).unwrap();
        assert_eq!(&r.label, label);
        assert!((r.score - 1.0).abs() < 1e-9, "{}", r.score);
        assert!(!r.tie);
    }
}

#[test]
fn identical_surfaces_under_two_labels_tie_to_the_first() {
    let (_, items) = model_of(&[ActivityKind::Follow], 1, 4);
    let hm = items[0].1.clone();
    let ts = TrainingSet::new(vec![(hm.clone(), "B".into()), (hm.clone(), "A".into())]);
    let model = train(&ts, &TrainConfig::default()).unwrap();
    let sf = classify_sf(&hm, &model).unwrap();
    assert_eq!(sf.label, "A");
    assert!(sf.tie);
    let asf = classify_asf(&hm, &model, &KernelConfig { w: 2, sigma: 1.0 }).unwrap();
    assert_eq!(asf.label, "A");
    assert!(asf.tie);
}

#[test]
fn kernel_parameters_are_checked() {
    let (model, items) = model_of(&[ActivityKind::Gather], 2, 5);
    let hm = &items[0].1;
    for kc in [
        KernelConfig { w: 0, sigma: 1.0 },
        KernelConfig { w: 3, sigma: 1.0 },
        KernelConfig { w: 1, sigma: 0.0 },
        KernelConfig { w: 1, sigma: f64::NAN },
    ] {
        assert!(matches!(classify_asf(hm, &model, &kc), Err(HmbError::InvalidKernel(_))));
    }
}

#[test]
fn other_grids_are_refused() {
    let (model, items) = model_of(&[ActivityKind::Gather], 1, 5);
    let coarse = GridSpec::new(640, 480, 20).unwrap();
    let hm = heat_map_from_trajectories(&items[0].0, &coarse, &HeatParams::default(), None).unwrap();
    assert!(matches!(classify_sf(&hm, &model), Err(HmbError::GridMismatch)));
    let flat = HeatMap::new(model.grid, vec![0.0; model.grid.len()], model.params.heat, "flat").unwrap();
    assert!(matches!(classify_sf(&flat, &model), Err(HmbError::Unclassifiable(_))));
}

#[test]
fn one_window_over_the_whole_clip_matches_offline() {
    let (model, items) = model_of(&[ActivityKind::Gather, ActivityKind::Separate], 3, 6);
    let kc = KernelConfig::for_model(&model, 1);
    for (trajs, hm, _) in items.iter().take(2) {
        let start = trajs.iter().filter_map(|t| t.first_frame()).min().unwrap();
        let end = trajs.iter().filter_map(|t| t.last_frame()).max().unwrap();
        let len = (end - start + 1) as u32;
        let w = classify_sliding(StreamInput::Trajectories(trajs), len, len, &model, &kc).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].start_frame, w[0].end_frame), (start, end));
        let offline = classify_asf(hm, &model, &kc).unwrap();
        assert_eq!(w[0].label, offline.label);
        assert_eq!(w[0].score, offline.score);

        let err = classify_sliding(StreamInput::Trajectories(trajs), len + 1, 1, &model, &kc).unwrap_err();
        assert!(matches!(err, HmbError::WindowTooLarge { .. }));
        assert!(classify_sliding(StreamInput::Trajectories(trajs), 10, 0, &model, &kc).is_err());
    }
}

#[test]
fn windows_tile_the_stream() {
    let (model, items) = model_of(&[ActivityKind::Gather, ActivityKind::Separate], 2, 6);
    let trajs = &items[0].0;
    let start = trajs.iter().filter_map(|t| t.first_frame()).min().unwrap();
    let end = trajs.iter().filter_map(|t| t.last_frame()).max().unwrap();
    let w = classify_sliding(StreamInput::Trajectories(trajs), 10, 3, &model, &KernelConfig::for_model(&model, 1)).unwrap();
    assert_eq!(w[0].start_frame, start);
    for (i, win) in w.iter().enumerate() {
        assert_eq!(win.start_frame, start + 3 * i as i64);
        assert_eq!(win.end_frame - win.start_frame, 9);
        assert!(win.end_frame <= end);
    }
    assert!(w.last().unwrap().end_frame + 3 > end);
}

#[test]
fn stationary_people_keep_one_label() {
    let cfg = SynthConfig::default();
    let ds = sub_activity_suite(4, 12, &cfg).unwrap();
    let mut ts = TrainingSet::default();
    for lc in &ds.clips {
        ts.push(lc.clip.heat_map(&ds.grid, &HeatParams::default()).unwrap(), lc.label.clone());
    }
    let model = train(&ts, &TrainConfig::default()).unwrap();
    let still: Vec<Trajectory> = [(300.0, 240.0), (340.0, 240.0)]
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Trajectory::new(format!("p{i}"), (0..120).map(|f| TrackPoint::new(f, x, y)).collect()).unwrap())
        .collect();
    let w = classify_sliding(StreamInput::Trajectories(&still), 30, 15, &model, &KernelConfig::for_model(&model, 1)).unwrap();
    assert_eq!(w.len(), 7);
    assert!(w.iter().all(|x| x.label == w[0].label), "{w:?}");
    // identical windows up to a time shift give identical scores
    assert!(w.iter().all(|x| (x.score - w[0].score).abs() < 1e-12));
}

#[test]
fn smoothing_and_runs() {
    let raw = ["A", "A", "B", "A", "A", "C", "C", "C", "B", "C"];
    let smooth = majority_smooth(&raw, 3);
    assert_eq!(smooth, ["A", "A", "A", "A", "A", "C", "C", "C", "C", "C"]);
    assert_eq!(label_runs(&smooth), ["A", "C"]);
    // no majority among three distinct labels
    assert_eq!(majority_smooth(&["A", "B", "C"], 3), ["A", "B", "C"]);
    assert_eq!(majority_smooth(&raw, 1), raw);
    assert!(majority_smooth::<&str>(&[], 3).is_empty());
}

