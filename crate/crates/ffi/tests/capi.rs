use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use hmb_core::synth::{generate, ActivityKind, ActivityTemplate, SynthConfig};
use hmb_core::{
    classify_asf, heat_map_from_trajectories, save_model, train, GridSpec, HeatParams, KernelConfig, TrainConfig,
    TrainingSet, Trajectory,
};
use hmb_ffi::*;

fn to_points(trajs: &[Trajectory]) -> Vec<HmbPoint> {
    trajs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            t.points().iter().map(move |p| HmbPoint {
                object: i as u32,
                frame: p.frame,
                x: p.x,
                y: p.y,
            })
        })
        .collect()
}

fn last_error() -> String {
    let p = hmb_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn surface(hm: *const HmbHeatMap) -> Vec<f64> {
    let (mut cols, mut rows) = (0usize, 0usize);
    assert_eq!(hmb_heatmap_dims(hm, &mut cols, &mut rows), HmbStatus::Ok);
    let mut buf = vec![0.0; cols * rows];
    assert_eq!(hmb_heatmap_values(hm, buf.as_mut_ptr(), buf.len()), HmbStatus::Ok);
    buf
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(hmb_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn default_params_match_core() {
    let p = hmb_heat_params_default();
    assert_eq!((p.k_t, p.k_p, p.c), (0.125, 2.0, 1.0));
}

#[test]
fn heat_map_matches_core_pipeline() {
    let cfg = SynthConfig::default();
    let clips = generate(&ActivityTemplate::builtin(ActivityKind::Gather), &cfg, 3, 1).unwrap();
    let trajs = &clips[0].0;
    let expected = heat_map_from_trajectories(trajs, &cfg.grid, &HeatParams::default(), None).unwrap();

    let pts = to_points(trajs);
    let mut hm = ptr::null_mut();
    unsafe {
        let st = hmb_heatmap_from_points(640, 480, 10, pts.as_ptr(), pts.len(), ptr::null(), &mut hm);
        assert_eq!(st, HmbStatus::Ok);
        let (mut cols, mut rows) = (0, 0);
        hmb_heatmap_dims(hm, &mut cols, &mut rows);
        assert_eq!((cols, rows), (64, 48));
        assert_eq!(surface(hm), expected.values);
        hmb_heatmap_free(hm);
    }
}

#[test]
fn infinite_coefficients_cross_the_boundary() {
    let pts = [
        HmbPoint { object: 0, frame: 0, x: 15.0, y: 15.0 },
        HmbPoint { object: 0, frame: 1, x: 15.0, y: 15.0 },
    ];
    let params = HmbHeatParams {
        k_t: f64::INFINITY,
        k_p: f64::INFINITY,
        c: 1.0,
    };
    let mut hm = ptr::null_mut();
    unsafe {
        assert_eq!(
            hmb_heatmap_from_points(40, 40, 10, pts.as_ptr(), 2, &params, &mut hm),
            HmbStatus::Ok
        );
        let v = surface(hm);
        // one source patch (N = 1) keeps all of its energy C
        assert_eq!(v.iter().filter(|x| **x != 0.0).count(), 1);
        assert_eq!(v[5], 1.0);
        hmb_heatmap_free(hm);
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut hm = ptr::null_mut();
    let backwards = [
        HmbPoint { object: 0, frame: 5, x: 1.0, y: 1.0 },
        HmbPoint { object: 0, frame: 4, x: 2.0, y: 1.0 },
    ];
    unsafe {
        let st = hmb_heatmap_from_points(40, 40, 10, backwards.as_ptr(), 2, ptr::null(), &mut hm);
        assert_eq!(st, HmbStatus::InvalidArgument);
        assert!(last_error().contains("strictly increasing"));
        assert!(hm.is_null());

        let st = hmb_heatmap_from_points(40, 40, 10, ptr::null(), 0, ptr::null(), &mut hm);
        assert_eq!(st, HmbStatus::NoHeatSources);

        let st = hmb_heatmap_from_points(40, 40, 10, ptr::null(), 3, ptr::null(), &mut hm);
        assert_eq!(st, HmbStatus::NullPointer);

        let st = hmb_heatmap_from_points(40, 40, 0, backwards.as_ptr(), 1, ptr::null(), &mut hm);
        assert_eq!(st, HmbStatus::InvalidArgument);

        assert_eq!(hmb_heatmap_dims(ptr::null(), ptr::null_mut(), ptr::null_mut()), HmbStatus::NullPointer);
        hmb_heatmap_free(ptr::null_mut());
        hmb_model_free(ptr::null_mut());
        assert_eq!(hmb_model_label_count(ptr::null()), 0);
    }
}

#[test]
fn short_buffer_is_rejected() {
    let pts = [HmbPoint { object: 0, frame: 0, x: 5.0, y: 5.0 }];
    let mut hm = ptr::null_mut();
    unsafe {
        hmb_heatmap_from_points(40, 40, 10, pts.as_ptr(), 1, ptr::null(), &mut hm);
        let mut buf = [0.0; 4];
        assert_eq!(hmb_heatmap_values(hm, buf.as_mut_ptr(), 4), HmbStatus::InvalidArgument);
        hmb_heatmap_free(hm);
    }
}

#[test]
fn model_round_trip_and_classification() {
    let cfg = SynthConfig::default();
    let mut ts = TrainingSet::default();
    let mut probes = Vec::new();
    for kind in [ActivityKind::Gather, ActivityKind::Separate] {
        for (i, (trajs, label)) in generate(&ActivityTemplate::builtin(kind), &cfg, 21, 6).unwrap().into_iter().enumerate() {
            let hm = heat_map_from_trajectories(&trajs, &cfg.grid, &HeatParams::default(), None).unwrap();
            if i == 0 {
                probes.push((trajs, hm.clone()));
            }
            ts.push(hm, label);
        }
    }
    let model = train(&ts, &TrainConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&model, &path).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(hmb_model_load(cpath.as_ptr(), &mut handle), HmbStatus::Ok);
        assert_eq!(hmb_model_label_count(handle), 2);
        let labels: Vec<String> = (0..2)
            .map(|i| CStr::from_ptr(hmb_model_label(handle, i)).to_string_lossy().into_owned())
            .collect();
        assert_eq!(labels, ["Gather", "Separate"]);
        assert!(hmb_model_label(handle, 2).is_null());

        for (trajs, hm) in &probes {
            let expected = classify_asf(hm, &model, &KernelConfig::for_model(&model, 1)).unwrap();
            let pts = to_points(trajs);
            let mut h = ptr::null_mut();
            hmb_heatmap_from_points(640, 480, 10, pts.as_ptr(), pts.len(), ptr::null(), &mut h);
            let (mut idx, mut score) = (usize::MAX, f64::NAN);
            assert_eq!(hmb_classify_asf(handle, h, 1, 0.0, &mut idx, &mut score), HmbStatus::Ok);
            assert_eq!(labels[idx], expected.label);
            assert_eq!(score, expected.score);
            assert_eq!(hmb_classify_sf(handle, h, &mut idx, &mut score), HmbStatus::Ok);
            assert!(idx < 2 && score >= 0.0);
            assert_eq!(hmb_classify_asf(handle, h, 0, 0.0, &mut idx, &mut score), HmbStatus::InvalidArgument);
            hmb_heatmap_free(h);
        }

        // surfaces on another grid are refused
        let pts = to_points(&probes[0].0);
        let mut h = ptr::null_mut();
        hmb_heatmap_from_points(640, 480, 20, pts.as_ptr(), pts.len(), ptr::null(), &mut h);
        let (mut idx, mut score) = (0, 0.0);
        assert_eq!(hmb_classify_sf(handle, h, &mut idx, &mut score), HmbStatus::GridMismatch);
        hmb_heatmap_free(h);
        hmb_model_free(handle);
    }
}

#[test]
fn bad_model_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut handle = ptr::null_mut();
    let missing = CString::new(dir.path().join("none.json").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(hmb_model_load(missing.as_ptr(), &mut handle), HmbStatus::Io);
        let junk = dir.path().join("junk.json");
        std::fs::write(&junk, "{\"format\": \"something-else\", \"version\": 1}").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(hmb_model_load(junk.as_ptr(), &mut handle), HmbStatus::CorruptModel);
        assert!(last_error().contains("format"));
        assert_eq!(hmb_model_load(ptr::null(), &mut handle), HmbStatus::NullPointer);
    }
    assert!(handle.is_null());
}

#[test]
fn grid_spec_rejects_what_the_c_side_rejects() {
    assert!(GridSpec::new(640, 480, 0).is_err());
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/hmb.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["hmb_heatmap_from_points", "hmb_model_load", "hmb_classify_asf", "HMB_STATUS_GRID_MISMATCH"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-x", "c"]).arg(&header).output() else {
        eprintln!("no C compiler, syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
