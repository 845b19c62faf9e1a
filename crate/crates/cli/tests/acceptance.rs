//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Pass substrings as arguments to run a subset,
//! e.g. `cargo test -p depthlift-cli --test acceptance -- kendall`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use depthlift_cli::commands::{ABLATION_FILE, DATASET_FILE, TREND_FILE};
use depthlift_cli::manifest::MANIFEST_FILE;
use depthlift_core::camera::{back_project, project, CameraIntrinsics};
use depthlift_core::dataset::{load_dataset, split_protocol, Protocol};
use depthlift_core::eval::{mpjpe, procrustes_align};
use depthlift_core::net::{
    gradient_check, xavier_init, FrameInput, LiftingModel, NetConfig, NetParams, NormStats,
};
use depthlift_core::skeleton::{FrameKind, JointId, Pose3D, N_JOINTS};
use depthlift_core::stats::{
    anderson_darling, dagostino_k2, kendall_counts, kendall_tau, shapiro_wilk, spearman,
};
use nalgebra::{Rotation3, Unit, UnitQuaternion, Vector3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Check = Result<(bool, String), String>;

fn normal(rng: &mut impl Rng) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, rng)
}

fn cli(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["depthlift"];
    argv.extend_from_slice(args);
    match depthlift_cli::run(&argv) {
        0 => Ok(()),
        code => Err(format!("`depthlift {}` exited with {code}", args.join(" "))),
    }
}

fn geometry_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ks: Vec<CameraIntrinsics> = (0..8)
        .map(|_| {
            CameraIntrinsics::new(
                rng.random_range(500.0..2000.0),
                rng.random_range(500.0..2000.0),
                rng.random_range(300.0..700.0),
                rng.random_range(200.0..600.0),
            )
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let points: Vec<Vector3<f64>> = (0..100_000)
        .map(|_| {
            let z = rng.random_range(500.0..=8000.0);
            Vector3::new(
                z * rng.random_range(-0.6..0.6),
                z * rng.random_range(-0.6..0.6),
                z,
            )
        })
        .collect();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        let k = &ks[i % ks.len()];
        let px = project(p, k).map_err(|e| e.to_string())?;
        let back = back_project(&px, p.z, k).map_err(|e| e.to_string())?;
        worst = worst.max((back - p).amax());
    }
    let t = start.elapsed();
    Ok((
        worst < 1e-9 && t < Duration::from_secs(1),
        format!(
            "max |error| {worst:.2e} mm over 1e5 points in {:.3} s",
            t.as_secs_f64()
        ),
    ))
}

fn gradient_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    let (mut cancelled_worst, mut cancelled) = (0.0f64, 0);
    for trial in 0..20u64 {
        let cfg = NetConfig {
            n_joints: rng.random_range(2..=6),
            use_depth: rng.random(),
            hidden_width: rng.random_range(8..=32),
            n_residual_blocks: rng.random_range(0..=2),
            dropout_rate: 0.0,
            ..NetConfig::desk()
        };
        let mut params: NetParams<f64> = xavier_init(&cfg, trial).map_err(|e| e.to_string())?;
        for bn in params.batch_norms_mut() {
            bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
            bn.beta.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let x = Array2::from_shape_fn((8, cfg.input_dim()), |_| normal(&mut rng));
        let y = Array2::from_shape_fn((8, cfg.output_dim()), |_| normal(&mut rng));
        let g = gradient_check(&params, &x, &y, 1e-5).map_err(|e| e.to_string())?;
        worst = worst.max(g.max_rel_error);
        cancelled_worst = cancelled_worst.max(g.max_cancelled_abs_error);
        cancelled += g.n_cancelled;
        checked += g.n_checked;
        skipped += g.n_kink_skipped;
    }
    Ok((
        worst < 1e-4 && cancelled_worst < 1e-8,
        format!(
            "max relative error {worst:.2e} over {checked} entries of 20 nets; \
             {cancelled} zero-gradient biases before batch norm within {cancelled_worst:.1e} absolute; \
             {skipped} ReLU-kink entries skipped"
        ),
    ))
}

fn random_pose(rng: &mut impl Rng) -> Pose3D {
    Pose3D::new(
        std::array::from_fn(|_| {
            Vector3::new(
                300.0 * normal(rng),
                300.0 * normal(rng),
                300.0 * normal(rng),
            )
        }),
        FrameKind::Camera,
    )
}

fn random_rotation(rng: &mut impl Rng) -> Rotation3<f64> {
    let q = nalgebra::Quaternion::new(normal(rng), normal(rng), normal(rng), normal(rng));
    UnitQuaternion::from_quaternion(q).to_rotation_matrix()
}

fn procrustes_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let all = JointId::ALL;
    let err = |e: depthlift_core::Error| e.to_string();
    let mut recover_worst = 0.0f64;
    for _ in 0..1000 {
        let gt = random_pose(&mut rng);
        let r = random_rotation(&mut rng);
        let t = Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng)) * 1000.0;
        let moved = gt.map(FrameKind::Camera, |p| r * p + t);
        let a = procrustes_align(&moved, &gt).map_err(err)?;
        recover_worst = recover_worst.max(mpjpe(&a.aligned, &gt, &all).map_err(err)?);
    }
    let mut worst_det_gap = 0.0f64;
    for _ in 0..1000 {
        let gt = random_pose(&mut rng);
        let axis = Unit::new_normalize(Vector3::new(
            normal(&mut rng),
            normal(&mut rng),
            normal(&mut rng),
        ));
        let mirrored = gt.map(FrameKind::Camera, |p| {
            p - 2.0 * axis.dot(p) * axis.into_inner()
        });
        let a = procrustes_align(&mirrored, &gt).map_err(err)?;
        worst_det_gap = worst_det_gap.max((a.rotation.determinant() - 1.0).abs());
    }
    let mut violations = 0;
    let mut rms_violations = 0;
    for _ in 0..1000 {
        let gt = random_pose(&mut rng);
        let r = random_rotation(&mut rng);
        let t = Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng)) * 100.0;
        let pred = Pose3D::new(
            std::array::from_fn(|j| {
                r * gt.joints[j]
                    + t
                    + 20.0 * Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng))
            }),
            FrameKind::Camera,
        );
        let a = procrustes_align(&pred, &gt).map_err(err)?;
        if mpjpe(&a.aligned, &gt, &all).map_err(err)? > mpjpe(&pred, &gt, &all).map_err(err)? {
            violations += 1;
        }
        let noisy = Pose3D::new(
            std::array::from_fn(|j| {
                gt.joints[j]
                    + 20.0 * Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng))
            }),
            FrameKind::Camera,
        );
        let a = procrustes_align(&noisy, &gt).map_err(err)?;
        let rms = |p: &Pose3D| {
            (p.joints
                .iter()
                .zip(&gt.joints)
                .map(|(a, b)| (a - b).norm_squared())
                .sum::<f64>()
                / N_JOINTS as f64)
                .sqrt()
        };
        if rms(&a.aligned) > rms(&noisy) + 1e-9 {
            rms_violations += 1;
        }
    }
    Ok((
        recover_worst < 1e-8 && worst_det_gap < 1e-9 && violations == 0 && rms_violations == 0,
        format!(
            "recovery MPJPE max {recover_worst:.2e} mm; reflections |det R - 1| max {worst_det_gap:.1e}; \
             aligned > raw in {violations}/1000 misplaced pairs, RMS increase in {rms_violations}/1000 noise-only pairs"
        ),
    ))
}

fn kendall_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut mismatches = 0;
    let mut with_ties = 0;
    for _ in 0..200 {
        let n = rng.random_range(3..=50);
        let levels = rng.random_range(2..=10);
        let mut x: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..levels)))
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..levels)))
            .collect();
        // at least two distinct values per side keep τ_b defined
        x[0] = -1.0;
        let mut y = y;
        y[1] = -1.0;
        let (mut s, mut tx, mut ty) = (0i64, 0i64, 0i64);
        for i in 0..n {
            for j in i + 1..n {
                let dx = (x[i] - x[j]).signum() as i64 * i64::from(x[i] != x[j]);
                let dy = (y[i] - y[j]).signum() as i64 * i64::from(y[i] != y[j]);
                s += dx * dy;
                tx += i64::from(dx == 0);
                ty += i64::from(dy == 0);
            }
        }
        if tx > 0 || ty > 0 {
            with_ties += 1;
        }
        let n0 = (n * (n - 1) / 2) as i64;
        let oracle = s as f64 / ((n0 - tx) as f64 * (n0 - ty) as f64).sqrt();
        let counts = kendall_counts(&x, &y);
        let tau = kendall_tau(&x, &y).map_err(|e| e.to_string())?.statistic;
        if tau != oracle || (counts.n0, counts.x_ties, counts.y_ties, counts.s) != (n0, tx, ty, s) {
            mismatches += 1;
        }
    }
    Ok((
        mismatches == 0,
        format!("{mismatches}/200 mismatches ({with_ties} arrays with ties)"),
    ))
}

fn statistical_calibration() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let err = |e: depthlift_core::Error| e.to_string();
    let mut size = [0usize; 3];
    for _ in 0..1000 {
        let xs: Vec<f64> = (0..500).map(|_| normal(&mut rng)).collect();
        size[0] += usize::from(shapiro_wilk(&xs).map_err(err)?.p_value < 0.05);
        size[1] += usize::from(anderson_darling(&xs).map_err(err)?.rejects());
        size[2] += usize::from(dagostino_k2(&xs).map_err(err)?.p_value < 0.05);
    }
    let trials = 200;
    let mut power = [0usize; 3];
    for _ in 0..trials {
        let xs: Vec<f64> = (0..5000)
            .map(|_| if rng.random::<bool>() { 3.0 } else { -3.0 } + normal(&mut rng))
            .collect();
        power[0] += usize::from(shapiro_wilk(&xs).map_err(err)?.p_value < 0.05);
        power[1] += usize::from(anderson_darling(&xs).map_err(err)?.rejects());
        power[2] += usize::from(dagostino_k2(&xs).map_err(err)?.p_value < 0.05);
    }
    let t = start.elapsed();
    let size: Vec<f64> = size.iter().map(|&c| c as f64 / 1000.0).collect();
    let power: Vec<f64> = power.iter().map(|&c| c as f64 / trials as f64).collect();
    let ok = size.iter().all(|s| (0.03..=0.07).contains(s))
        && power.iter().all(|&p| p >= 0.99)
        && t < Duration::from_secs(120);
    Ok((
        ok,
        format!(
            "type-I error SW {:.3} AD {:.3} K2 {:.3}; bimodal power SW {:.3} AD {:.3} K2 {:.3} ({trials} trials); {:.1} s",
            size[0],
            size[1],
            size[2],
            power[0],
            power[1],
            power[2],
            t.as_secs_f64()
        ),
    ))
}

#[derive(Debug)]
struct Row {
    label: String,
    use_depth: bool,
    measured_rho: Option<f64>,
    mpjpe: f64,
}

fn read_ablation(path: &Path) -> Result<Vec<Row>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{line}: {e}"));
            Ok(Row {
                label: f[0].to_string(),
                use_depth: f[1] == "true",
                measured_rho: if f[3].is_empty() {
                    None
                } else {
                    Some(num(f[3])?)
                },
                mpjpe: num(f[4])?,
            })
        })
        .collect()
}

/// Synthesize the sweep dataset and run the ablation once; the three
/// hypothesis criteria read its outputs.
fn run_sweep(dir: &Path) -> Result<(Vec<Row>, serde_json::Value, usize), String> {
    let data = dir.join("data");
    let out = dir.join("ablate");
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let synth_cfg = dir.join("synth.toml");
    std::fs::write(
        &synth_cfg,
        "subjects = 7\nframes_per_sequence = 100\ncameras = 4\n[depth]\ntarget_spearman = 1.0\n",
    )
    .map_err(|e| e.to_string())?;
    cli(&[
        "synth",
        "--seed",
        "1",
        "--config",
        path(&synth_cfg),
        "--out",
        path(&data),
    ])?;
    let dataset = load_dataset(&data.join(DATASET_FILE)).map_err(|e| e.to_string())?;
    let n_train = split_protocol(&dataset, Protocol::P1)
        .map_err(|e| e.to_string())?
        .0
        .frames
        .len();
    cli(&[
        "ablate",
        "--seed",
        "1",
        "--data",
        path(&data),
        "--out",
        path(&out),
    ])?;
    let rows = read_ablation(&out.join(ABLATION_FILE))?;
    let trend: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join(TREND_FILE)).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    Ok((rows, trend, n_train))
}

fn path(p: &Path) -> &str {
    p.to_str().expect("temporary paths are UTF-8")
}

fn hypothesis_1(rows: &[Row], n_train: usize) -> Check {
    let perfect = rows
        .iter()
        .find(|r| r.use_depth && r.measured_rho.is_some_and(|m| m > 0.999))
        .ok_or("no perfect-depth row")?;
    let flat = rows.iter().find(|r| !r.use_depth).ok_or("no 2D-only row")?;
    let reduction = 1.0 - perfect.mpjpe / flat.mpjpe;
    Ok((
        reduction >= 0.40 && n_train >= 30_000,
        format!(
            "{n_train} train frames, 70 epochs: rho=1 MPJPE {:.2} mm vs 2D-only {:.2} mm, reduction {:.1}%",
            perfect.mpjpe,
            flat.mpjpe,
            100.0 * reduction
        ),
    ))
}

fn hypothesis_2(rows: &[Row], trend: &serde_json::Value) -> Check {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.measured_rho?, r.mpjpe)))
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
    let rho = spearman(&x, &y).map_err(|e| e.to_string())?.statistic;
    let slope = trend["trend"]["slope"]
        .as_f64()
        .ok_or("trend slope missing")?;
    let listing: Vec<String> = pts.iter().map(|(r, m)| format!("{r:.3}->{m:.2}")).collect();
    Ok((
        pts.len() == 5 && slope < 0.0 && rho <= -0.8,
        format!(
            "measured rho -> MPJPE [{}]; slope {slope:.2} mm per unit rho; Spearman {rho:.2}",
            listing.join(", ")
        ),
    ))
}

fn perfect_depth_floor(rows: &[Row], trend: &serde_json::Value) -> Check {
    let depth_rows: Vec<&Row> = rows.iter().filter(|r| r.use_depth).collect();
    let min = depth_rows
        .iter()
        .map(|r| r.mpjpe)
        .fold(f64::INFINITY, f64::min);
    let perfect = depth_rows
        .iter()
        .find(|r| r.label == "rho=1")
        .ok_or("no rho=1 row")?;
    let reported = trend["floor_label"].as_str().unwrap_or_default();
    Ok((
        perfect.mpjpe == min && reported == "rho=1",
        format!("empirical floor {:.2} mm at {reported}", perfect.mpjpe),
    ))
}

fn files_below(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != MANIFEST_FILE) {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

fn determinism(dir: &Path) -> Check {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let cfg = dir.join("cfg.toml");
    std::fs::write(
        &cfg,
        "frames_per_sequence = 16\n[depth]\ntarget_spearman = 0.7\nocclusion_prob = 0.1\n",
    )
    .map_err(|e| e.to_string())?;
    let train_cfg = dir.join("train.toml");
    std::fs::write(&train_cfg, "[train]\nepochs = 3\nbatch_size = 256\n")
        .map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let root = dir.join(run);
        let data = root.join("data");
        let model = root.join("model");
        cli(&[
            "synth",
            "--seed",
            "9",
            "--config",
            path(&cfg),
            "--out",
            path(&data),
        ])?;
        cli(&[
            "train",
            "--seed",
            "9",
            "--config",
            path(&train_cfg),
            "--data",
            path(&data),
            "--out",
            path(&model),
        ])?;
        let model_file = model.join("model.json");
        cli(&[
            "eval",
            "--model",
            path(&model_file),
            "--data",
            path(&data),
            "--out",
            path(&root.join("eval")),
        ])?;
        cli(&[
            "stats",
            "--seed",
            "9",
            "--data",
            path(&data),
            "--out",
            path(&root.join("stats")),
        ])?;
        runs.push(files_below(&root)?);
    }
    let (a, b) = (&runs[0], &runs[1]);
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let bytes: usize = a.values().map(Vec::len).sum();
    Ok((
        differing.is_empty() && a.len() == b.len() && a.len() >= 10,
        format!(
            "{} artifacts ({bytes} bytes) from synth/train/eval/stats; differing: {differing:?}",
            a.len()
        ),
    ))
}

fn latency() -> Check {
    let mut cfg = NetConfig::full();
    cfg.use_depth = true;
    let params: NetParams<f32> = xavier_init(&cfg, 3).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = Array2::from_shape_fn((64, cfg.input_dim()), |_| 500.0 * rng.random::<f64>());
    let y = Array2::from_shape_fn((64, cfg.output_dim()), |_| 300.0 * normal(&mut rng));
    let stats = NormStats::compute(&x, &y).map_err(|e| e.to_string())?;
    let model = LiftingModel { params, stats };
    let input = FrameInput {
        pixels: std::array::from_fn(|j| [400.0 + j as f64, 300.0 - j as f64]),
        depth: Some(std::array::from_fn(|j| 4000.0 + 10.0 * j as f64)),
    };
    model.predict(&input).map_err(|e| e.to_string())?;
    let mut times: Vec<f64> = (0..20)
        .map(|_| {
            let t = Instant::now();
            model
                .predict(&input)
                .map(|_| t.elapsed().as_secs_f64() * 1e3)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    times.sort_by(f64::total_cmp);
    let worst = times[times.len() - 1];
    Ok((
        worst < 50.0,
        format!(
            "full preset ({} params): median {:.2} ms, worst {worst:.2} ms over 20 single-sample calls",
            cfg.n_parameters(),
            times[times.len() / 2]
        ),
    ))
}

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let wanted =
        |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let tmp = tempfile::tempdir().expect("temporary directory");

    let mut results: Vec<(&str, Check, Duration)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Check| {
        if wanted(name) {
            let start = Instant::now();
            let r = f();
            let line = match &r {
                Ok((true, d)) => format!("PASS  {name}: {d}"),
                Ok((false, d)) => format!("FAIL  {name}: {d}"),
                Err(e) => format!("FAIL  {name}: error: {e}"),
            };
            println!("{line}  [{:.1} s]", start.elapsed().as_secs_f64());
            results.push((name, r, start.elapsed()));
        }
    };

    run("geometry_round_trip", &mut geometry_round_trip);
    run("gradient_oracle", &mut gradient_oracle);
    run("procrustes_oracle", &mut procrustes_oracle);
    run("kendall_oracle", &mut kendall_oracle);
    run("statistical_calibration", &mut statistical_calibration);

    let sweep_names = ["hypothesis_1", "hypothesis_2", "perfect_depth_floor"];
    if sweep_names.iter().any(|n| wanted(n)) {
        let start = Instant::now();
        let sweep = run_sweep(&tmp.path().join("sweep"));
        println!(
            "      sweep (synth + 6 trainings) took {:.1} s",
            start.elapsed().as_secs_f64()
        );
        let fail = |e: &String| -> Check { Err(format!("sweep failed: {e}")) };
        run("hypothesis_1", &mut || match &sweep {
            Ok((rows, _, n)) => hypothesis_1(rows, *n),
            Err(e) => fail(e),
        });
        run("hypothesis_2", &mut || match &sweep {
            Ok((rows, trend, _)) => hypothesis_2(rows, trend),
            Err(e) => fail(e),
        });
        run("perfect_depth_floor", &mut || match &sweep {
            Ok((rows, trend, _)) => perfect_depth_floor(rows, trend),
            Err(e) => fail(e),
        });
    }

    run("determinism", &mut || {
        determinism(&tmp.path().join("determinism"))
    });
    run("latency", &mut latency);

    let failed = results
        .iter()
        .filter(|(_, r, _)| !matches!(r, Ok((true, _))))
        .count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
