use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ocstereo::dataset::save_detections;
use ocstereo::pipeline::{run_pipeline, write_synth_dataset, FrameStatus, PipelineConfig};
use ocstereo::ply::{load_ply, PlyFormat};
use ocstereo::synth::SceneConfig;

fn dataset(root: &Path, frames: usize) {
    let scene = SceneConfig {
        max_objects: 3,
        ..Default::default()
    };
    write_synth_dataset(root, &scene, frames, 21).unwrap();
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if let Ok(entries) = std::fs::read_dir(dir) {
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                out.extend(files_under(&p));
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn object_rows(run: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(run.join("objects.csv")).unwrap();
    r.records().map(|r| r.unwrap()).collect()
}

fn multiset(path: &Path) -> Vec<(u64, u64, u64, u32)> {
    let mut v: Vec<_> = load_ply(path)
        .unwrap()
        .iter()
        .map(|p| (p.position[0].to_bits(), p.position[1].to_bits(), p.position[2].to_bits(), p.instance))
        .collect();
    v.sort_unstable();
    v
}

#[test]
fn ascii_and_binary_clouds_hold_the_same_points() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataset(&data, 2);
    let mut runs = Vec::new();
    for format in [PlyFormat::BinaryLittleEndian, PlyFormat::Ascii] {
        let out = dir.path().join(format!("{format:?}"));
        let cfg = PipelineConfig {
            ply_format: format,
            ..Default::default()
        };
        run_pipeline(&data, &out, &cfg, false).unwrap();
        runs.push(out);
    }

    let rows = object_rows(&runs[0]);
    assert!(!rows.is_empty());
    let mut per_frame: BTreeMap<String, usize> = BTreeMap::new();
    for row in &rows {
        let (frame, object, points) = (&row[0], &row[1], row[10].parse::<usize>().unwrap());
        *per_frame.entry(frame.to_string()).or_default() += points;
        let rel = format!("clouds/{frame}/object_{:03}.ply", object.parse::<u32>().unwrap());
        let bin = multiset(&runs[0].join(&rel));
        assert_eq!(bin.len(), points, "{rel}");
        assert_eq!(bin, multiset(&runs[1].join(&rel)), "{rel}");
    }
    for (frame, total) in per_frame {
        let rel = format!("clouds/{frame}/frame.ply");
        let merged = multiset(&runs[0].join(&rel));
        assert_eq!(merged, multiset(&runs[1].join(&rel)));
        assert!(merged.len() <= total);
    }
    assert_eq!(
        std::fs::read(runs[0].join("objects.csv")).unwrap(),
        std::fs::read(runs[1].join("objects.csv")).unwrap()
    );
}

#[test]
fn missing_calibration_skips_the_frame_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataset(&data, 3);
    std::fs::remove_file(data.join("calib/000001.txt")).unwrap();
    let out = dir.path().join("run");
    let report = run_pipeline(&data, &out, &PipelineConfig::default(), false).unwrap();
    assert_eq!(report.frames, 3);
    assert_eq!(report.frames_ok, 2);
    assert_eq!(report.issues.len(), 1);
    assert_eq!(report.issues[0].frame, "000001");
    assert_eq!(report.issues[0].status, FrameStatus::MissingCalib);
    assert!(report.issues[0].message.contains("000001.txt"));
    let frames = std::fs::read_to_string(out.join("frames.csv")).unwrap();
    assert!(frames.lines().any(|l| l.starts_with("000001,missing_calib")), "{frames}");
    assert!(out.join("clouds/000000/frame.ply").is_file());
    assert!(out.join("clouds/000002/frame.ply").is_file());
}

#[test]
fn malformed_detection_file_fails_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataset(&data, 2);
    let bad = data.join("detection_3/000001.csv");
    std::fs::write(&bad, "class,score,x_min,y_min,x_max,y_max\nCar,high,1,2,3\n").unwrap();
    let err = run_pipeline(&data, &dir.path().join("run"), &PipelineConfig::default(), false).unwrap_err();
    assert!(err.to_string().contains(&bad.display().to_string()), "{err}");
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataset(&data, 2);
    let before = files_under(&data);
    let out = dir.path().join("run");
    let report = run_pipeline(&data, &out, &PipelineConfig::default(), true).unwrap();
    assert!(report.dry_run);
    assert_eq!(report.frames, 2);
    assert!(!out.exists());
    assert_eq!(files_under(&data), before);
}

#[test]
fn frame_without_detections_yields_empty_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataset(&data, 2);
    for side in ["detection_2", "detection_3"] {
        save_detections(&data.join(side).join("000000.csv"), &[]).unwrap();
    }
    let out = dir.path().join("run");
    let report = run_pipeline(&data, &out, &PipelineConfig::default(), false).unwrap();
    let empty = &report.frame_results[0];
    assert_eq!(empty.frame, "000000");
    assert_eq!(empty.status, FrameStatus::Ok);
    assert_eq!((empty.left_detections, empty.right_detections), (0, 0));
    assert!(empty.objects.is_empty());
    assert_eq!(empty.points, 0);

    let frames = std::fs::read_to_string(out.join("frames.csv")).unwrap();
    let row = frames.lines().find(|l| l.starts_with("000000,")).unwrap();
    assert!(row.starts_with("000000,ok,0,0,0,"), "{row}");
    assert!(object_rows(&out).iter().all(|r| &r[0] != "000000"));
    assert!(load_ply(&out.join("clouds/000000/frame.ply")).unwrap().is_empty());
    assert!(files_under(&out.join("clouds/000000")).len() == 1);
}
