use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use super::{
    AblateArgs, EvaluateArgs, PhantomArgs, PipelineArgs, ReportArgs, RunConfig, SelectArgs, Stage, StageError,
    EXIT_OK, EXIT_PARTIAL,
};
use crate::centerline::CenterlineTree;
use crate::contours::{load_annotations, Annotation};
use crate::error::Error;
use crate::metrics::{
    aggregate_by_plane, aggregate_row, evaluate_case, read_ablation_table, read_case_dir, select_model,
    write_ablation_table, write_case_csv, write_dataset_table, write_plane_table, AblationRow, AggregateRow,
    EvalCase, EvalParams, MetricsRecord,
};
use crate::phantom::{generate, write_bundle, PhantomSpec};
use crate::reconstruction::{build_pseudolabel, PipelineConfig, Provenance, PseudoLabel};
use crate::segmenter::{protocol, segment_oracle, SegmenterBackend};
use crate::volume::{load_volume, save_volume, CrossSection, DataType, PlanePose, Volume3};
use crate::Vec3;

type CmdResult = Result<u8, StageError>;

/// Sidecar written next to every pipeline output.
#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a RunConfig,
    result: &'a Provenance,
}

/// Evaluation settings written next to every metrics table.
#[derive(Debug, Serialize)]
struct EvalRecord<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    /// Distances are measured between polygonal contours, not pixels.
    distance: &'static str,
    sample_step: f64,
    failed_radius: f64,
    failed_rule: &'static str,
    config: &'a RunConfig,
}

#[derive(Debug, Serialize)]
struct ReportRecord<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    inputs: &'a Path,
    /// Dataset name and record count.
    datasets: Vec<(&'a str, usize)>,
}

fn write_eval_record(out: &Path, command: &'static str, cfg: &RunConfig) -> crate::Result<()> {
    let record = EvalRecord {
        tool: "vesselwall",
        version: env!("CARGO_PKG_VERSION"),
        command,
        distance: "contour",
        sample_step: cfg.eval.sample_step,
        failed_radius: cfg.eval.failed_radius,
        failed_rule: "no lumen pixel within failed_radius of the plane centre after post-processing",
        config: cfg,
    };
    crate::io::write_json(&out.join("evaluation.json"), &record)
}

fn load_inputs(cfg: &RunConfig) -> Result<(Volume3, CenterlineTree), StageError> {
    let vpath = RunConfig::require(&cfg.volume, "volume").stage("arguments")?;
    let cpath = RunConfig::require(&cfg.centerline, "centerline").stage("arguments")?;
    let volume = load_volume(vpath).stage(format!("loading volume {}", vpath.display()))?;
    let tree = CenterlineTree::load(cpath).stage(format!("loading centerline {}", cpath.display()))?;
    Ok((volume, tree))
}

fn pipeline_config(a: &PipelineArgs) -> Result<RunConfig, StageError> {
    let mut cfg = RunConfig::load(a.config.as_deref()).stage("reading config")?;
    cfg.apply(a);
    cfg.validate().stage("config")?;
    Ok(cfg)
}

pub(super) fn pseudolabel(a: &PipelineArgs) -> CmdResult {
    let cfg = pipeline_config(a)?;
    let out = RunConfig::require(&cfg.out, "out").stage("arguments")?.to_path_buf();
    let (volume, tree) = load_inputs(&cfg)?;
    let pl = build_pseudolabel(&volume, &tree, &cfg.segmenter, &cfg.pipeline).stage("pseudo-label")?;
    write_pseudolabel(&pl, &cfg, &out, a.format.extension()).stage(format!("writing {}", out.display()))?;
    let failed = pl.failed_planes();
    println!(
        "pseudo-label: {} planes, {} failed; mask {}",
        pl.planes.len(),
        failed,
        out.join(format!("pseudolabel.{}", a.format.extension())).display()
    );
    Ok(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn write_pseudolabel(pl: &PseudoLabel, cfg: &RunConfig, out: &Path, ext: &str) -> crate::Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    save_volume(&pl.mask, &out.join(format!("pseudolabel.{ext}")), DataType::U8)?;
    pl.lumen_mesh.write_obj(&out.join("lumen.obj"))?;
    pl.outer_mesh.write_obj(&out.join("outer.obj"))?;
    let record = RunRecord {
        tool: "vesselwall",
        version: env!("CARGO_PKG_VERSION"),
        command: "pseudolabel",
        config: cfg,
        result: &pl.provenance,
    };
    crate::io::write_json(&out.join("provenance.json"), &record)?;
    crate::io::write_json(&out.join("planes.json"), &pl.planes)
}

/// Sample `pred` on every annotation plane and score it.
pub fn evaluate_mask(
    pred: &Volume3,
    annotations: &[(String, Annotation)],
    case_id: &str,
    params: &EvalParams,
) -> crate::Result<Vec<MetricsRecord>> {
    annotations
        .iter()
        .map(|(_, ann)| {
            let plane = pred.sample_label_plane(&ann.contours.pose, ann.size, ann.spacing)?;
            evaluate_case(&EvalCase::new(case_id, plane, ann)?, params)
        })
        .collect()
}

fn load_annotation_dir(dir: &Path) -> Result<Vec<(String, Annotation)>, StageError> {
    let anns = load_annotations(dir).stage(format!("loading annotations {}", dir.display()))?;
    if anns.is_empty() {
        return Err(StageError {
            stage: format!("loading annotations {}", dir.display()),
            source: Error::InvalidArgument("no annotation files found".into()),
        });
    }
    Ok(anns)
}

pub(super) fn evaluate(a: &EvaluateArgs) -> CmdResult {
    let mut cfg = RunConfig::load(a.config.as_deref()).stage("reading config")?;
    if a.annotations.is_some() {
        cfg.annotations.clone_from(&a.annotations);
    }
    if a.out.is_some() {
        cfg.out.clone_from(&a.out);
    }
    if let Some(r) = a.failed_radius {
        cfg.eval.failed_radius = r;
    }
    cfg.validate().stage("config")?;
    let ann_dir = RunConfig::require(&cfg.annotations, "annotations").stage("arguments")?;
    let out = RunConfig::require(&cfg.out, "out").stage("arguments")?;
    let pred = load_volume(&a.pred).stage(format!("loading mask {}", a.pred.display()))?;
    let anns = load_annotation_dir(ann_dir)?;
    let case_id = a
        .case_id
        .clone()
        .unwrap_or_else(|| a.pred.file_stem().unwrap_or_default().to_string_lossy().into_owned());
    let records = evaluate_mask(&pred, &anns, &case_id, &cfg.eval).stage("evaluation")?;
    let rows = aggregate_by_plane(&records);
    write_case_csv(&out.join("cases.csv"), &records).stage("writing cases.csv")?;
    write_plane_table(&out.join("per_plane.csv"), &rows).stage("writing per_plane.csv")?;
    write_eval_record(out, "evaluate", &cfg).stage("writing evaluation.json")?;
    let all = rows.last().expect("All planes row");
    println!("evaluated {} planes, failed {}/{}", records.len(), all.failed, all.total);
    Ok(EXIT_OK)
}

/// One cell of the ablation grid.
#[derive(Debug, Clone, Serialize)]
pub struct AblationCell {
    pub sd: f64,
    pub ba: bool,
    /// Evaluation on the sparse annotations.
    pub metrics: AggregateRow,
    pub records: Vec<MetricsRecord>,
    /// Pipeline planes whose segmentation was rejected.
    pub invalid_planes: usize,
    pub num_planes: usize,
    pub invalid_bifurcation_planes: usize,
    pub num_bifurcation_planes: usize,
    /// 3D Dice against a truth mask, when one is given.
    pub lumen_dsc: Option<f64>,
    pub wall_dsc: Option<f64>,
}

/// Build one pseudo-label with `sd`/`ba` overriding `base`, then evaluate it.
pub fn run_ablation_cell(
    volume: &Volume3,
    tree: &CenterlineTree,
    annotations: &[(String, Annotation)],
    truth: Option<&Volume3>,
    base: &RunConfig,
    sd: f64,
    ba: bool,
) -> crate::Result<AblationCell> {
    let mut pipeline: PipelineConfig = base.pipeline;
    pipeline.plan.sd = sd;
    pipeline.plan.use_bifurcation_axis = ba;
    let backend = match &base.segmenter {
        SegmenterBackend::ExternalProcess(ext) => {
            let mut ext = ext.clone();
            ext.io_dir = ext.io_dir.join(cell_name(sd, ba));
            SegmenterBackend::ExternalProcess(ext)
        }
        b => b.clone(),
    };
    let pl = build_pseudolabel(volume, tree, &backend, &pipeline)?;
    let case_id = cell_name(sd, ba);
    let records = evaluate_mask(&pl.mask, annotations, &case_id, &base.eval)?;
    let metrics = aggregate_row(case_id, &records);
    let near: Vec<_> = pl.planes.iter().filter(|p| p.near_bifurcation).collect();
    let (lumen_dsc, wall_dsc) = match truth {
        Some(t) => (Some(volume_dsc(&pl.mask, t, 1)), Some(volume_dsc(&pl.mask, t, 2))),
        None => (None, None),
    };
    Ok(AblationCell {
        sd,
        ba,
        metrics,
        records,
        invalid_planes: pl.failed_planes(),
        num_planes: pl.planes.len(),
        invalid_bifurcation_planes: near.iter().filter(|p| p.failed()).count(),
        num_bifurcation_planes: near.len(),
        lumen_dsc,
        wall_dsc,
    })
}

/// Dice of one label between `pred` (nearest-sampled) and `truth`, over
/// the truth lattice.
pub fn volume_dsc(pred: &Volume3, truth: &Volume3, label: u8) -> f64 {
    let [nx, ny, nz] = truth.dims();
    let l = f64::from(label);
    let (mut inter, mut total) = (0usize, 0usize);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let t = truth.get(i, j, k) == l;
                let p = pred.nearest(&truth.voxel_center(i, j, k)) == Some(l);
                inter += usize::from(t && p);
                total += usize::from(t) + usize::from(p);
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

fn cell_name(sd: f64, ba: bool) -> String {
    format!("sd{sd}_ba-{}", if ba { "yes" } else { "no" })
}

pub(super) fn ablate(a: &AblateArgs) -> CmdResult {
    let mut cfg = pipeline_config(&a.pipeline)?;
    if a.annotations.is_some() {
        cfg.annotations.clone_from(&a.annotations);
    }
    if let Some(r) = a.failed_radius {
        cfg.eval.failed_radius = r;
    }
    if a.jobs.is_some() {
        cfg.jobs = a.jobs;
    }
    cfg.validate().stage("config")?;
    if a.sd_grid.is_empty() || a.sd_grid.iter().any(|&s| !(s > 0.0)) {
        return Err(StageError {
            stage: "arguments".into(),
            source: Error::InvalidArgument(format!("--sd-grid needs positive values, got {:?}", a.sd_grid)),
        });
    }
    let out = RunConfig::require(&cfg.out, "out").stage("arguments")?.to_path_buf();
    let ann_dir = RunConfig::require(&cfg.annotations, "annotations").stage("arguments")?;
    let anns = load_annotation_dir(ann_dir)?;
    let (volume, tree) = load_inputs(&cfg)?;
    let truth = match &a.truth {
        Some(p) => Some(load_volume(p).stage(format!("loading truth {}", p.display()))?),
        None => None,
    };
    let ba_values: Vec<bool> = match a.pipeline.bifurcation_axis() {
        Some(v) => vec![v],
        None => vec![true, false],
    };
    let cells: Vec<(f64, bool)> = a.sd_grid.iter().flat_map(|&sd| ba_values.iter().map(move |&ba| (sd, ba))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()
        .map_err(|e| StageError { stage: "thread pool".into(), source: Error::InvalidArgument(e.to_string()) })?;
    let results: Vec<Result<AblationCell, StageError>> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|&(sd, ba)| {
                info!("ablation cell sd {sd} ba {ba}");
                run_ablation_cell(&volume, &tree, &anns, truth.as_ref(), &cfg, sd, ba)
                    .stage(format!("cell {}", cell_name(sd, ba)))
            })
            .collect()
    });
    let cells: Vec<AblationCell> = results.into_iter().collect::<Result<_, _>>()?;

    let rows: Vec<AblationRow> =
        cells.iter().map(|c| AblationRow { sd: c.sd, ba: c.ba, metrics: c.metrics.clone() }).collect();
    write_ablation_table(&out.join("ablation.csv"), &rows).stage("writing ablation.csv")?;
    write_plane_validity(&out.join("ablation_planes.csv"), &cells).stage("writing ablation_planes.csv")?;
    for c in &cells {
        write_case_csv(&out.join("cells").join(format!("{}.csv", cell_name(c.sd, c.ba))), &c.records)
            .stage("writing cell cases")?;
    }
    write_eval_record(&out, "ablate", &cfg).stage("writing evaluation.json")?;
    let selected = select_model(&rows).expect("at least one cell");
    println!(
        "selected: SD {} BA {} (failed {}/{}, wall HD {:.3})",
        selected.sd,
        if selected.ba { "yes" } else { "no" },
        selected.metrics.failed,
        selected.metrics.total,
        selected.metrics.wall_mean[1]
    );
    Ok(EXIT_OK)
}

pub const PLANE_VALIDITY_COLUMNS: [&str; 8] = [
    "SD",
    "BA",
    "Invalid Planes",
    "Num Planes",
    "Invalid Bifurcation Planes",
    "Num Bifurcation Planes",
    "Lumen DSC 3D",
    "Wall DSC 3D",
];

fn write_plane_validity(path: &Path, cells: &[AblationCell]) -> crate::Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PLANE_VALIDITY_COLUMNS)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
    for c in cells {
        w.write_record([
            format!("{}", c.sd),
            (if c.ba { "yes" } else { "no" }).to_string(),
            c.invalid_planes.to_string(),
            c.num_planes.to_string(),
            c.invalid_bifurcation_planes.to_string(),
            c.num_bifurcation_planes.to_string(),
            opt(c.lumen_dsc),
            opt(c.wall_dsc),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    crate::io::write_atomic(path, &bytes)
}

pub(super) fn select(a: &SelectArgs) -> CmdResult {
    let rows = read_ablation_table(&a.table).stage(format!("reading {}", a.table.display()))?;
    let Some(best) = select_model(&rows) else {
        return Err(StageError {
            stage: format!("reading {}", a.table.display()),
            source: Error::InvalidArgument("table has no rows".into()),
        });
    };
    println!(
        "selected: SD {} BA {} (failed {}/{}, wall HD {:.3})",
        best.sd,
        if best.ba { "yes" } else { "no" },
        best.metrics.failed,
        best.metrics.total,
        best.metrics.wall_mean[1]
    );
    Ok(EXIT_OK)
}

pub(super) fn phantom(a: &PhantomArgs) -> CmdResult {
    let mut spec: PhantomSpec = match &a.config {
        Some(p) => crate::io::read_json(p).stage(format!("reading phantom spec {}", p.display()))?,
        None => PhantomSpec::default(),
    };
    if let Some(v) = a.spacing {
        spec.spacing = v;
    }
    if let Some(v) = a.noise_sigma {
        spec.noise_sigma = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    let bundle = generate(&spec).stage("phantom")?;
    write_bundle(&bundle, &a.out).stage(format!("writing {}", a.out.display()))?;
    println!("phantom {:?} written to {}", bundle.volume.dims(), a.out.display());
    Ok(EXIT_OK)
}

pub(super) fn report(a: &ReportArgs) -> CmdResult {
    let groups = read_case_dir(&a.inputs).stage(format!("reading {}", a.inputs.display()))?;
    if groups.is_empty() {
        return Err(StageError {
            stage: format!("reading {}", a.inputs.display()),
            source: Error::InvalidArgument("no per-case CSV files".into()),
        });
    }
    let all: Vec<MetricsRecord> = groups.values().flatten().cloned().collect();
    let datasets: Vec<AggregateRow> = groups.iter().map(|(k, recs)| aggregate_row(k.clone(), recs)).collect();
    write_plane_table(&a.out.join("per_plane.csv"), &aggregate_by_plane(&all)).stage("writing per_plane.csv")?;
    write_dataset_table(&a.out.join("per_dataset.csv"), &datasets).stage("writing per_dataset.csv")?;
    let record = ReportRecord {
        tool: "vesselwall",
        version: env!("CARGO_PKG_VERSION"),
        command: "report",
        inputs: &a.inputs,
        datasets: groups.iter().map(|(k, v)| (k.as_str(), v.len())).collect(),
    };
    crate::io::write_json(&a.out.join("report.json"), &record).stage("writing report.json")?;
    println!("report over {} datasets, {} records", groups.len(), all.len());
    Ok(EXIT_OK)
}

/// Segmenter side of the exchange protocol, answered by the builtin oracle.
pub(super) fn oracle_batch(io_dir: &PathBuf) -> CmdResult {
    let stage = format!("oracle batch {}", io_dir.display());
    let items = protocol::read_request(io_dir).stage(stage.clone())?;
    let pose = PlanePose::from_normal(Vec3::zeros(), Vec3::z(), Vec3::x()).stage(stage.clone())?;
    let params = Default::default();
    for (item, pixels) in items {
        let cs = CrossSection { pose, size: (item.nu, item.nv), spacing: item.spacing_mm, pixels };
        let mask = segment_oracle(&cs, &params).stage(stage.clone())?;
        protocol::write_response_mask(io_dir, &item.id, item.nu, item.nv, mask.labels()).stage(stage.clone())?;
    }
    Ok(EXIT_OK)
}
