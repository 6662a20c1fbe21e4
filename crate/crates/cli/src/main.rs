use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ocstereo::association::AssociationModel;
use ocstereo::dataset::{Dataset, FrameError};
use ocstereo::eval::Interpolation;
use ocstereo::imaging::save_disparity_png;
use ocstereo::local_disparity::{dominant_label, DisparityRange, InstanceMask, RoiFrame};
use ocstereo::matcher::{match_full_image, match_pair, MatcherOptions, FULL_IMAGE_RANGE};
use ocstereo::pipeline::{
    associate_frame, bench, evaluate_labels, evaluate_stereo, fit_association_model, run_pipeline,
    write_synth_dataset, BenchConfig, PipelineConfig,
};
use ocstereo::ply::{cloud_points, save_ply, PlyFormat};
use ocstereo::synth::SceneConfig;

#[derive(Parser)]
#[command(name = "ocstereo", version, about = "Object-centric stereo matching for 3D object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic stereo dataset with ground truth.
    Synth(SynthArgs),
    /// Associate left and right detections, or fit the association gate.
    Associate(AssociateArgs),
    /// Match the associated objects of one frame.
    Match(MatchArgs),
    /// Run association, matching and evaluation over a dataset.
    Pipeline(PipelineArgs),
    /// Evaluate detections.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Time the object-centric and full-image matchers on one frame.
    Bench(BenchArgs),
}

/// Matcher settings; each flag overrides the configuration file.
#[derive(Args, Default)]
struct MatcherFlags {
    #[arg(long)]
    disp_min: Option<i32>,
    #[arg(long)]
    disp_max: Option<i32>,
    #[arg(long)]
    canonical_size: Option<usize>,
    /// Census window as WIDTHxHEIGHT, e.g. 9x7.
    #[arg(long, value_parser = parse_window)]
    census_window: Option<(usize, usize)>,
    #[arg(long)]
    sgm_p1: Option<f32>,
    #[arg(long)]
    sgm_p2: Option<f32>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    confidence_min: Option<f64>,
}

fn parse_window(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    let w = w.trim().parse().map_err(|_| format!("bad width {w:?}"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height {h:?}"))?;
    Ok((w, h))
}

impl MatcherFlags {
    fn apply(&self, o: &mut MatcherOptions) -> Result<()> {
        if self.disp_min.is_some() || self.disp_max.is_some() {
            o.range = DisparityRange::new(self.disp_min.unwrap_or(o.range.min), self.disp_max.unwrap_or(o.range.max))?;
        }
        if let Some(v) = self.canonical_size {
            o.canonical_size = v;
        }
        if let Some((w, h)) = self.census_window {
            o.census = ocstereo::matcher::CensusWindow::new(w, h)?;
        }
        if let Some(v) = self.sgm_p1 {
            o.sgm.p1 = v;
        }
        if let Some(v) = self.sgm_p2 {
            o.sgm.p2 = v;
        }
        if let Some(v) = self.temperature {
            o.temperature = v;
        }
        if let Some(v) = self.confidence_min {
            o.confidence_min = v;
        }
        o.validate()?;
        Ok(())
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scene configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the fixed two-car scene.
    #[arg(long, conflicts_with = "config")]
    two_object: bool,
    /// False-positive detections per view.
    #[arg(long)]
    decoys: Option<usize>,
}

#[derive(Args)]
struct AssociateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Fit the gate model from the paired labels and write it.
    #[arg(long)]
    fit: bool,
    /// Model file to read (or write with --fit).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Pairs CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    score_threshold: Option<f64>,
    #[arg(long)]
    crop_size: Option<usize>,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    frame: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Also run the full-image matcher over the global range.
    #[arg(long)]
    full_image: bool,
    #[arg(long)]
    ascii_ply: bool,
    #[command(flatten)]
    matcher: MatcherFlags,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    score_threshold: Option<f64>,
    #[arg(long)]
    ascii_ply: bool,
    #[arg(long)]
    no_clouds: bool,
    /// Validate the inputs without writing anything.
    #[arg(long)]
    dry_run: bool,
    #[command(flatten)]
    matcher: MatcherFlags,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// 2D, BEV and 3D AP of KITTI-format result labels.
    Labels {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        results: PathBuf,
        /// Drop results whose projection misses every left detection of this dataset.
        #[arg(long)]
        consistency: Option<PathBuf>,
        #[arg(long)]
        forty_point: bool,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Stereo 2D AP of the pairs of a pipeline run.
    Stereo {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        forty_point: bool,
    },
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Report file; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    matcher: MatcherFlags,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(json: &impl serde::Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(json)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn model_at(dataset: &Dataset, path: Option<&Path>) -> Result<AssociationModel> {
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| dataset.association_model_path());
    AssociationModel::load(&path).with_context(|| "run `ocstereo associate --fit` to create a model".to_string())
}

fn interpolation(forty: bool) -> Interpolation {
    if forty {
        Interpolation::FortyPoint
    } else {
        Interpolation::ElevenPoint
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut scene = match (&a.config, a.two_object) {
        (Some(p), _) => read_json(p)?,
        (None, true) => SceneConfig::two_object(),
        (None, false) => SceneConfig::default(),
    };
    if let Some(d) = a.decoys {
        scene.decoys = d;
    }
    let summary = write_synth_dataset(&a.out, &scene, a.frames, a.seed)?;
    emit(&summary, None)
}

fn associate_cmd(a: AssociateArgs) -> Result<()> {
    let ds = Dataset::open(&a.dataset)?;
    if a.fit {
        let model = fit_association_model(&ds)?;
        let path = a.model.unwrap_or_else(|| ds.association_model_path());
        model.save(&path)?;
        eprintln!("wrote {}", path.display());
        return emit(&model, None);
    }
    let model = model_at(&ds, a.model.as_deref())?;
    let mut cfg = PipelineConfig::default().association;
    if let Some(t) = a.score_threshold {
        cfg.score_threshold = t;
    }
    if let Some(c) = a.crop_size {
        cfg.crop_size = c;
    }
    let sink: Box<dyn std::io::Write> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["frame", "left_index", "right_index", "class", "ssim"])?;
    for id in &ds.frames {
        let fd = match ds.load_frame(id) {
            Ok(fd) => fd,
            Err(FrameError::Missing(p)) => {
                eprintln!("{id}: skipped, {} not found", p.display());
                continue;
            }
            Err(FrameError::Fatal(e)) => return Err(e.into()),
        };
        for p in associate_frame(&fd, &model, &cfg).pairs {
            w.write_record([
                id.clone(),
                p.left_index.to_string(),
                p.right_index.to_string(),
                p.left.class.clone(),
                format!("{:.6}", p.ssim),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn match_cmd(a: MatchArgs) -> Result<()> {
    let ds = Dataset::open(&a.dataset)?;
    let fd = match ds.load_frame(&a.frame) {
        Ok(fd) => fd,
        Err(FrameError::Missing(p)) => bail!("{}: file not found", p.display()),
        Err(FrameError::Fatal(e)) => return Err(e.into()),
    };
    let model = model_at(&ds, a.model.as_deref())?;
    let mut opts = MatcherOptions::default();
    a.matcher.apply(&mut opts)?;
    let format = if a.ascii_ply { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let assoc = associate_frame(&fd, &model, &PipelineConfig::default().association);
    let size = opts.canonical_size;
    let mut summary = Vec::new();
    for (k, p) in assoc.pairs.iter().enumerate() {
        let id = k as u32 + 1;
        let frame = RoiFrame::new(p.left.bbox, p.right.bbox, size, size)?;
        let mask = match &fd.masks {
            Some(m) => match dominant_label(m, &p.left.bbox) {
                Some(l) => InstanceMask::from_labels(m, l, &frame, id),
                None => InstanceMask::empty(id, size, size),
            },
            None => InstanceMask::full(id, size, size),
        };
        let m = match_pair(p, &fd.left, &fd.right, &mask, &fd.rig, &opts)?;
        save_ply(&a.out.join(format!("object_{id:03}.ply")), &cloud_points(&m.cloud), format)?;
        save_disparity_png(&m.global, &a.out.join(format!("object_{id:03}_disparity.png")))
            .or_else(|e| if m.global.width() == 0 { Ok(()) } else { Err(e) })?;
        summary.push(serde_json::json!({
            "object": id,
            "class": p.left.class,
            "points": m.cloud.len(),
            "median_depth": m.cloud.median_depth(),
            "cost_volume_cells": m.cost_volume_cells,
            "timings": m.timings,
        }));
    }
    if a.full_image {
        let full = match_full_image(&fd.left, &fd.right, FULL_IMAGE_RANGE, &opts)?;
        save_disparity_png(&full.disparity, &a.out.join("full_image_disparity.png"))?;
        summary.push(serde_json::json!({
            "full_image": true,
            "cost_volume_cells": full.cost_volume_cells,
            "timings": full.timings,
        }));
    }
    emit(&summary, None)
}

fn pipeline_cmd(a: PipelineArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    a.matcher.apply(&mut cfg.matcher)?;
    if let Some(m) = a.model {
        cfg.association_model = Some(m);
    }
    if let Some(t) = a.threads {
        cfg.threads = Some(t);
    }
    if let Some(t) = a.score_threshold {
        cfg.association.score_threshold = t;
    }
    if a.ascii_ply {
        cfg.ply_format = PlyFormat::Ascii;
    }
    if a.no_clouds {
        cfg.write_clouds = false;
    }
    let report = run_pipeline(&a.dataset, &a.out, &cfg, a.dry_run)?;
    for issue in &report.issues {
        eprintln!("{}: {}", issue.frame, issue.message);
    }
    emit(&report, None)
}

fn eval_cmd(c: EvalCommand) -> Result<()> {
    match c {
        EvalCommand::Labels {
            gt,
            results,
            consistency,
            forty_point,
            csv: csv_out,
        } => {
            let ds = consistency.as_deref().map(Dataset::open).transpose()?;
            let rows = evaluate_labels(&gt, &results, interpolation(forty_point), ds.as_ref())?;
            if let Some(p) = csv_out {
                let mut w = csv::Writer::from_path(&p).with_context(|| format!("creating {}", p.display()))?;
                w.write_record(["class", "overlap", "threshold", "difficulty", "ap", "tp", "fp", "gt"])?;
                for r in &rows {
                    w.write_record([
                        r.class.clone(),
                        format!("{:?}", r.overlap),
                        format!("{:.2}", r.threshold),
                        format!("{:?}", r.difficulty),
                        r.report.ap.map(|v| format!("{v:.4}")).unwrap_or_default(),
                        r.report.true_positives.to_string(),
                        r.report.false_positives.to_string(),
                        r.report.ground_truth.to_string(),
                    ])?;
                }
                w.flush()?;
            }
            emit(&rows, None)
        }
        EvalCommand::Stereo {
            dataset,
            run,
            forty_point,
        } => {
            let ds = Dataset::open(&dataset)?;
            emit(&evaluate_stereo(&ds, &run, interpolation(forty_point))?, None)
        }
    }
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let mut cfg: BenchConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => BenchConfig::default(),
    };
    a.matcher.apply(&mut cfg.matcher)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.repeats {
        cfg.repeats = r;
    }
    emit(&bench(&cfg)?, a.out.as_deref())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::Associate(a) => associate_cmd(a),
        Command::Match(a) => match_cmd(a),
        Command::Pipeline(a) => pipeline_cmd(a),
        Command::Eval(c) => eval_cmd(c),
        Command::Bench(a) => bench_cmd(a),
    }
}
