//! The five subcommands. Each reads its inputs, writes its artifacts
//! atomically into the output directory and returns the paths it read and
//! wrote for the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use depthlift_core::camera::{load_cameras, save_cameras, synthetic_rig, CameraSet};
use depthlift_core::dataset::{
    load_dataset, save_dataset, split_protocol, synth_generate, Dataset, Protocol,
};
use depthlift_core::depth::observe_dataset;
use depthlift_core::eval::{emit_report, evaluate_protocol, ReportFormat};
use depthlift_core::net::{fit, LiftingModel, NetConfig};
use depthlift_core::skeleton::SkeletonModel;
use depthlift_core::stats::{
    cell_table, depth_observations, significance_summary, spearman, trend_fit, write_cell_table,
    CorrelationReport, TrendFit,
};
use depthlift_core::{Error, Result};
use serde::Serialize;

use crate::config::{
    AblateConfig, EvalConfig, StatsConfig, SynthConfig, TrainCmdConfig, TrainSection,
};
use crate::manifest::{atomically, create_dir, write_atomic};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const CAMERA_DIR: &str = "cameras";
pub const MODEL_FILE: &str = "model.json";
pub const LOSS_FILE: &str = "loss_history.csv";
pub const CELLS_FILE: &str = "cells.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const TREND_FILE: &str = "trend.json";

/// Paths touched by a command.
#[derive(Debug, Default)]
pub struct Io {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Numeric(format!("cannot serialize: {e}")))
}

/// A data directory as written by `synth`.
pub fn load_data_dir(dir: &Path, io: &mut Io) -> Result<(Dataset, CameraSet)> {
    let data = dir.join(DATASET_FILE);
    let cams = dir.join(CAMERA_DIR);
    let dataset = load_dataset(&data)?;
    let cameras = load_cameras(&cams)?;
    io.inputs.extend([data, cams]);
    Ok((dataset, cameras))
}

pub fn synth(cfg: &SynthConfig, out: &Path) -> Result<Io> {
    if cfg.cameras == 0 {
        return Err(Error::Config("cameras must be at least 1".into()));
    }
    let depth_cfg = cfg.depth.model_config(cfg.seed);
    depth_cfg.validate()?;
    create_dir(out)?;
    let base = synth_generate(
        &SkeletonModel::standard(),
        cfg.subjects,
        cfg.frames_per_sequence,
        cfg.seed,
    )?;
    let cameras = synthetic_rig(cfg.cameras, cfg.seed)?;
    let ids: Vec<u8> = cameras.keys().copied().collect();
    let dataset = observe_dataset(&base.with_cameras(&ids)?, &cameras, &depth_cfg)?;

    let mut io = Io::default();
    let data = out.join(DATASET_FILE);
    atomically(&data, |p| save_dataset(&dataset, p))?;
    let cam_dir = out.join(CAMERA_DIR);
    create_dir(&cam_dir)?;
    save_cameras(&cameras, &cam_dir)?;
    io.outputs.extend([data, cam_dir]);
    log::info!(
        "wrote {} frames from {} cameras",
        dataset.frames.len(),
        ids.len()
    );
    Ok(io)
}

pub fn train(cfg: &TrainCmdConfig, data_dir: &Path, out: &Path) -> Result<Io> {
    let mut io = Io::default();
    let (dataset, cameras) = load_data_dir(data_dir, &mut io)?;
    let (train, _) = split_protocol(&dataset, cfg.protocol)?;
    let tcfg = cfg.train.train_config(cfg.seed);
    let outcome = fit(&train, &cameras, &cfg.net, &tcfg)?;
    create_dir(out)?;
    let model = out.join(MODEL_FILE);
    atomically(&model, |p| outcome.model.save(p))?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in outcome.loss_history.iter().enumerate() {
        writeln!(csv, "{},{l:.10e}", i + 1).unwrap();
    }
    let loss = out.join(LOSS_FILE);
    write_atomic(&loss, csv.as_bytes())?;
    io.outputs.extend([model, loss]);
    Ok(io)
}

/// Report file stem, e.g. `eval_p1_aligned`.
pub fn report_stem(protocol: Protocol, aligned: bool) -> String {
    let a = if aligned { "aligned" } else { "unaligned" };
    format!("eval_{}_{a}", protocol.name().to_ascii_lowercase())
}

pub fn eval(cfg: &EvalConfig, model_path: &Path, data_dir: &Path, out: &Path) -> Result<Io> {
    let mut io = Io::default();
    let model = LiftingModel::load(model_path)?;
    io.inputs.push(model_path.to_path_buf());
    let (dataset, cameras) = load_data_dir(data_dir, &mut io)?;
    let (_, test) = split_protocol(&dataset, cfg.protocol)?;
    create_dir(out)?;
    for &aligned in cfg.alignment.flags() {
        let report = evaluate_protocol(&model, &test, &cameras, cfg.protocol, aligned)?;
        log::info!(
            "{} {}: MPJPE {:.2} mm over {} frames",
            cfg.protocol,
            if aligned { "aligned" } else { "unaligned" },
            report.avg_mpjpe,
            report.n_frames
        );
        let stem = report_stem(cfg.protocol, aligned);
        for (ext, fmt) in [("csv", ReportFormat::Csv), ("json", ReportFormat::Json)] {
            let path = out.join(format!("{stem}.{ext}"));
            atomically(&path, |p| emit_report(&report, p, fmt))?;
            io.outputs.push(path);
        }
    }
    Ok(io)
}

#[derive(Debug, Serialize)]
struct SignificanceRow {
    alpha: f64,
    fraction: f64,
}

#[derive(Debug, Serialize)]
struct SkippedRow {
    camera: u8,
    action: u8,
    joint: &'static str,
    reason: String,
}

#[derive(Debug, Serialize)]
struct NormalityRejections {
    shapiro_wilk: Option<f64>,
    anderson_darling: Option<f64>,
    dagostino: Option<f64>,
}

/// Fraction of `true` among the cells where the test ran.
fn rejection_rate(outcomes: impl Iterator<Item = Option<bool>>) -> Option<f64> {
    let ran: Vec<bool> = outcomes.flatten().collect();
    (!ran.is_empty()).then(|| ran.iter().filter(|&&r| r).count() as f64 / ran.len() as f64)
}

#[derive(Debug, Serialize)]
pub struct StatsSummary {
    n_frames: usize,
    /// Spearman correlation of every (depth, z) pair in the dataset.
    pub global_spearman: f64,
    pub n_cells: usize,
    significant: Vec<SignificanceRow>,
    fraction_negative: f64,
    fraction_moderate: f64,
    /// Fraction of cells whose depth values fail each normality test at α = 0.05.
    normality_rejected: NormalityRejections,
    skipped: Vec<SkippedRow>,
}

/// Spearman correlation over all (depth, z) pairs.
pub fn global_depth_correlation(dataset: &Dataset, cameras: &CameraSet) -> Result<f64> {
    let obs = depth_observations(dataset, cameras)?;
    let d: Vec<f64> = obs.iter().flat_map(|o| o.depth).collect();
    let z: Vec<f64> = obs.iter().flat_map(|o| o.z).collect();
    Ok(spearman(&d, &z)?.statistic)
}

pub fn stats(cfg: &StatsConfig, data_dir: &Path, out: &Path) -> Result<Io> {
    let mut io = Io::default();
    let (dataset, cameras) = load_data_dir(data_dir, &mut io)?;
    let obs = depth_observations(&dataset, &cameras)?;
    let table = cell_table(&obs, cfg.seed)?;
    let reports: Vec<CorrelationReport> = table.cells.iter().map(|c| c.correlation).collect();
    let sig = significance_summary(&reports);
    let summary = StatsSummary {
        n_frames: dataset.frames.len(),
        global_spearman: global_depth_correlation(&dataset, &cameras)?,
        n_cells: sig.n_cells,
        significant: sig
            .significant
            .iter()
            .map(|&(alpha, fraction)| SignificanceRow { alpha, fraction })
            .collect(),
        fraction_negative: sig.fraction_negative,
        fraction_moderate: sig.fraction_moderate,
        normality_rejected: NormalityRejections {
            shapiro_wilk: rejection_rate(
                table
                    .cells
                    .iter()
                    .map(|c| c.normality.shapiro.map(|t| t.p_value < 0.05)),
            ),
            anderson_darling: rejection_rate(
                table
                    .cells
                    .iter()
                    .map(|c| c.normality.anderson.map(|a| a.rejects())),
            ),
            dagostino: rejection_rate(
                table
                    .cells
                    .iter()
                    .map(|c| c.normality.dagostino.map(|t| t.p_value < 0.05)),
            ),
        },
        skipped: table
            .skipped
            .iter()
            .map(|s| SkippedRow {
                camera: s.key.camera,
                action: s.key.action,
                joint: s.key.joint.name(),
                reason: s.reason.clone(),
            })
            .collect(),
    };
    log::info!(
        "{} cells, global Spearman {:.4}, {} skipped",
        summary.n_cells,
        summary.global_spearman,
        summary.skipped.len()
    );
    create_dir(out)?;
    let cells = out.join(CELLS_FILE);
    atomically(&cells, |p| write_cell_table(&table.cells, p))?;
    let sum = out.join(SUMMARY_FILE);
    write_atomic(&sum, to_json(&summary)?.as_bytes())?;
    io.outputs.extend([cells, sum]);
    Ok(io)
}

/// One trained model of the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub use_depth: bool,
    pub target_rho: Option<f64>,
    pub measured_rho: Option<f64>,
    pub mpjpe: f64,
    pub mpjpe_aligned: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationSummary {
    /// OLS fit of MPJPE against measured correlation over the depth levels.
    pub trend: Option<TrendFit>,
    /// Spearman correlation between measured correlation and MPJPE.
    pub rank_correlation: Option<f64>,
    /// The level with the lowest MPJPE.
    pub floor_label: String,
    pub floor_mpjpe: f64,
    pub baseline_2d_mpjpe: Option<f64>,
}

fn render_ablation(rows: &[AblationRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut s = String::from("label,use_depth,target_rho,measured_rho,mpjpe,mpjpe_aligned\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{:.6},{:.6}",
            r.label,
            r.use_depth,
            opt(r.target_rho),
            opt(r.measured_rho),
            r.mpjpe,
            r.mpjpe_aligned
        )
        .unwrap();
    }
    s
}

fn train_and_score(
    data: &Dataset,
    cameras: &CameraSet,
    protocol: Protocol,
    net: &NetConfig,
    train: &TrainSection,
    seed: u64,
) -> Result<(f64, f64)> {
    let (tr, te) = split_protocol(data, protocol)?;
    let model = fit(&tr, cameras, net, &train.train_config(seed))?.model;
    let raw = evaluate_protocol(&model, &te, cameras, protocol, false)?;
    let aligned = evaluate_protocol(&model, &te, cameras, protocol, true)?;
    Ok((raw.avg_mpjpe, aligned.avg_mpjpe))
}

/// Summary statistics of a finished sweep.
pub fn summarize_ablation(rows: &[AblationRow]) -> Result<AblationSummary> {
    let depth_rows: Vec<&AblationRow> = rows.iter().filter(|r| r.use_depth).collect();
    let points: Vec<(f64, f64)> = depth_rows
        .iter()
        .filter_map(|r| Some((r.measured_rho?, r.mpjpe)))
        .collect();
    let trend = if points.len() >= 2 {
        trend_fit(&points).ok()
    } else {
        None
    };
    let rank_correlation = if points.len() >= 3 {
        let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
        spearman(&x, &y).ok().map(|t| t.statistic)
    } else {
        None
    };
    let floor = depth_rows
        .iter()
        .min_by(|a, b| a.mpjpe.total_cmp(&b.mpjpe))
        .ok_or_else(|| Error::Data("sweep produced no depth rows".into()))?;
    Ok(AblationSummary {
        trend,
        rank_correlation,
        floor_label: floor.label.clone(),
        floor_mpjpe: floor.mpjpe,
        baseline_2d_mpjpe: rows.iter().find(|r| !r.use_depth).map(|r| r.mpjpe),
    })
}

pub fn ablate(cfg: &AblateConfig, data_dir: &Path, out: &Path) -> Result<Io> {
    cfg.validate()?;
    let mut io = Io::default();
    let (dataset, cameras) = load_data_dir(data_dir, &mut io)?;
    create_dir(out)?;
    let table = out.join(ABLATION_FILE);
    io.outputs.push(table.clone());
    let mut rows: Vec<AblationRow> = Vec::new();

    let mut depth_net = cfg.net.clone();
    depth_net.use_depth = true;
    for &level in &cfg.levels {
        let observed = observe_dataset(
            &dataset,
            &cameras,
            &cfg.depth.at_level(level).model_config(cfg.seed),
        )?;
        let measured = global_depth_correlation(&observed, &cameras)?;
        log::info!("level {level}: measured Spearman {measured:.4}");
        let (mpjpe, mpjpe_aligned) = train_and_score(
            &observed,
            &cameras,
            cfg.protocol,
            &depth_net,
            &cfg.train,
            cfg.seed,
        )?;
        log::info!("level {level}: MPJPE {mpjpe:.2} mm");
        rows.push(AblationRow {
            label: format!("rho={level}"),
            use_depth: true,
            target_rho: Some(level),
            measured_rho: Some(measured),
            mpjpe,
            mpjpe_aligned,
        });
        write_atomic(&table, render_ablation(&rows).as_bytes())?;
    }
    if cfg.baseline_2d {
        let mut flat = cfg.net.clone();
        flat.use_depth = false;
        let (mpjpe, mpjpe_aligned) = train_and_score(
            &dataset,
            &cameras,
            cfg.protocol,
            &flat,
            &cfg.train,
            cfg.seed,
        )?;
        log::info!("2D-only baseline: MPJPE {mpjpe:.2} mm");
        rows.push(AblationRow {
            label: "2d-only".into(),
            use_depth: false,
            target_rho: None,
            measured_rho: None,
            mpjpe,
            mpjpe_aligned,
        });
        write_atomic(&table, render_ablation(&rows).as_bytes())?;
    }
    let summary = summarize_ablation(&rows)?;
    log::info!(
        "empirical floor: {} at {:.2} mm",
        summary.floor_label,
        summary.floor_mpjpe
    );
    let trend = out.join(TREND_FILE);
    write_atomic(&trend, to_json(&summary)?.as_bytes())?;
    io.outputs.push(trend);
    Ok(io)
}
