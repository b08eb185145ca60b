use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use stone_core::checkpoint::Checkpoint;
use stone_core::config::{BranchKind, DataConfig, RunConfig};
use stone_core::data::{
    chrono_split, load_sensor_csv, make_windows, synth_generate, Dataset, FieldPack, QueryGrid, WindowSet,
};
use stone_core::gradsuite::run_suite;
use stone_core::metrics::{comparison_csv, heatmap_csv, per_lead_profile, region_metrics, report_csv, RegionMask};
use stone_core::pipeline::{evaluate_set, forecast_set, load_data, train_branch, TrainedModel};
use stone_core::train::StopReason;
use stone_core::{Result, StoneError};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoneError + '_ {
    move |source| StoneError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn synth(seed: u64, sensors: usize, grid: &str, days: usize, cycles: f64, out: &Path) -> Result<()> {
    let (nlat, nlon) = QueryGrid::parse_dims(grid)?;
    let data = synth_generate(seed, sensors, (nlat, nlon), days, cycles)?;
    ensure_dir(out)?;
    data.sensors.write_csv(&out.join("sensors.csv"))?;
    data.fields.to_pack()?.write(&out.join("fields.stnf"))?;
    let manifest = serde_json::json!({
        "seed": seed,
        "sensors": sensors,
        "grid": [nlat, nlon],
        "days": days,
        "cycles": cycles,
        "start_date": data.sensors.dates[0].to_string(),
        "gains": data.gains,
        "driver": data.driver,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&out.join("manifest.json"), text + "\n")?;
    println!(
        "wrote {} days x {} sensors and {} field points to {}",
        days,
        sensors,
        nlat * nlon,
        out.display()
    );
    Ok(())
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    RunConfig::from_json(&text)
}

fn config_base(path: &Path) -> PathBuf {
    let parent = path.parent().unwrap_or(Path::new("."));
    let parent = if parent.as_os_str().is_empty() { Path::new(".") } else { parent };
    parent.canonicalize().unwrap_or_else(|_| parent.to_path_buf())
}

/// Rewrites relative data paths against `base` so a stored config is usable anywhere.
fn absolutize(data: &mut DataConfig, base: &Path) {
    for p in [&mut data.dir, &mut data.sensors, &mut data.fields].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

fn parse_branches(arg: Option<&str>, default: BranchKind) -> Result<Vec<BranchKind>> {
    match arg {
        None => Ok(vec![default]),
        Some("all") => Ok(BranchKind::ALL.to_vec()),
        Some(s) => BranchKind::parse(s)
            .map(|k| vec![k])
            .ok_or_else(|| StoneError::Config {
                field: "--branch".into(),
                detail: format!("`{s}` is not one of fcn, gru, lstm, transformer, all"),
            }),
    }
}

pub fn train(config: &Path, branch: Option<&str>, parallel: bool, out: &Path) -> Result<()> {
    let mut cfg = read_config(config)?;
    let base = config_base(config);
    absolutize(&mut cfg.data, &base);
    let kinds = parse_branches(branch, cfg.model.branch)?;
    let (_, prepared) = load_data(&cfg, &base)?;
    ensure_dir(out)?;
    println!(
        "windows: train {} val {} test {}",
        prepared.train.len(),
        prepared.val.len(),
        prepared.test.len()
    );

    let run = |kind: BranchKind| -> Result<(TrainedModel, f64)> {
        let start = Instant::now();
        let trained = train_branch(&cfg, kind, &prepared, |_| {})?;
        Ok((trained, start.elapsed().as_secs_f64()))
    };
    let results: Vec<Result<(TrainedModel, f64)>> = if parallel && kinds.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = kinds.iter().map(|&k| s.spawn(move || run(k))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread panicked"))
                .collect()
        })
    } else {
        kinds.iter().map(|&k| run(k)).collect()
    };

    let coords = prepared.grid.normalized();
    let mut diverged = Vec::new();
    for result in results {
        let (trained, seconds) = result?;
        let label = trained.checkpoint.label.clone();
        trained.checkpoint.save(&out.join(format!("{label}.stnc")))?;
        trained.outcome.log.write_csv(&out.join(format!("{label}_log.csv")))?;
        let stop = match &trained.outcome.stop {
            StopReason::EarlyStop => "early stop".to_string(),
            StopReason::MaxEpochs => "max epochs".to_string(),
            StopReason::Diverged { epoch, detail } => {
                diverged.push(format!("{label} at epoch {epoch}: {detail}"));
                format!("diverged at epoch {epoch}")
            }
        };
        let mut line = format!(
            "{label}: {} epochs ({stop}), best epoch {}, val loss {:.6e}, {:.1}s",
            trained.outcome.log.records.len(),
            trained.outcome.best_epoch,
            trained.outcome.best_val_loss,
            seconds
        );
        if !prepared.val.is_empty() {
            let agg = evaluate_set(&trained.checkpoint, &prepared.val, coords)?.aggregate();
            write!(
                line,
                "; val rel_l2 {:.4} rmse {:.4} mae {:.4} mape {:.4}",
                agg.rel_l2, agg.rmse, agg.mae, agg.mape
            )
            .expect("write to string");
        }
        println!("{line}");
    }
    if !diverged.is_empty() {
        return Err(StoneError::Numerical {
            context: "training".into(),
            detail: diverged.join("; "),
        });
    }
    Ok(())
}

pub struct EvalArgs<'a> {
    pub checkpoints: &'a [PathBuf],
    pub config: Option<&'a Path>,
    pub data: Option<&'a Path>,
    pub out: &'a Path,
    pub self_check: bool,
    pub region: Option<&'a str>,
}

/// Test windows for `ckpt`, normalized with the statistics it was trained with.
fn test_set(ckpt: &Checkpoint, dataset: &Dataset, split: [f64; 3]) -> Result<WindowSet> {
    let c = ckpt.model.config();
    let n = dataset.sensors.n_sensors();
    if n != c.branch.n_sensors {
        return Err(StoneError::Config {
            field: "checkpoint".into(),
            detail: format!(
                "checkpoint `{}` expects {} sensors but the dataset has {n}",
                ckpt.label, c.branch.n_sensors
            ),
        });
    }
    let windows = make_windows(&dataset.sensors, &dataset.fields, c.k_hist(), c.k_fut())?;
    let splits = chrono_split(windows, split)?;
    WindowSet::from_pairs(&splits.test, &ckpt.norm)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let checkpoints = args
        .checkpoints
        .iter()
        .map(|p| Checkpoint::load(p))
        .collect::<Result<Vec<_>>>()?;
    let (mut data_cfg, base) = match args.config {
        Some(path) => (read_config(path)?.data, config_base(path)),
        None => match checkpoints[0].run.as_ref() {
            Some(run) => (run.data.clone(), PathBuf::from(".")),
            None => (DataConfig::default(), PathBuf::from(".")),
        },
    };
    if let Some(dir) = args.data {
        data_cfg = DataConfig {
            dir: Some(dir.to_path_buf()),
            sensors: None,
            fields: None,
            synth: None,
            ..data_cfg
        };
    }
    let dataset = Dataset::from_config(&data_cfg, &base)?;
    let grid = &dataset.fields.grid;
    let region = args.region.map(|r| RegionMask::parse(r, grid)).transpose()?;

    let mut reports = Vec::new();
    let mut region_reports = Vec::new();
    for ckpt in &checkpoints {
        let set = test_set(ckpt, &dataset, data_cfg.split)?;
        let forecasts = if args.self_check {
            set.targets_raw.clone()
        } else {
            forecast_set(ckpt, &set, grid.normalized())?
        };
        reports.push(per_lead_profile(&ckpt.label, &forecasts, &set.targets_raw)?);
        if let Some(mask) = &region {
            region_reports.push(region_metrics(&ckpt.label, &forecasts, &set.targets_raw, mask)?);
        }
        let agg = reports.last().expect("just pushed").aggregate();
        println!(
            "{}: {} test windows, rel_l2 {:.4} rmse {:.4} mae {:.4} mape {:.4}",
            ckpt.label, set.len(), agg.rel_l2, agg.rmse, agg.mae, agg.mape
        );
    }

    ensure_dir(args.out)?;
    write_file(&args.out.join("report.csv"), report_csv(&reports)?)?;
    write_file(&args.out.join("heatmap.csv"), heatmap_csv(&reports)?)?;
    write_file(&args.out.join("comparison.csv"), comparison_csv(&reports)?)?;
    if !region_reports.is_empty() {
        write_file(&args.out.join("region.csv"), report_csv(&region_reports)?)?;
    }
    Ok(())
}

fn read_coords(path: &Path) -> Result<QueryGrid> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader.headers().map_err(|e| StoneError::Ingestion {
        row: 1,
        detail: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != ["lat", "lon"] {
        return Err(StoneError::Ingestion {
            row: 1,
            detail: format!("expected header `lat,lon`, found `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| StoneError::Ingestion {
            row,
            detail: e.to_string(),
        })?;
        let field = |j: usize| -> Result<f64> {
            record.get(j).and_then(|s| s.parse().ok()).ok_or_else(|| StoneError::Ingestion {
                row,
                detail: format!("`{}` is not a number", record.get(j).unwrap_or("")),
            })
        };
        points.push([field(0)?, field(1)?]);
    }
    QueryGrid::from_degrees(points)
}

pub fn forecast(
    checkpoint: &Path,
    sensors: &Path,
    coords: Option<&Path>,
    grid: Option<&str>,
    out: &Path,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let grid = match (coords, grid) {
        (Some(path), _) => read_coords(path)?,
        (None, Some(dims)) => {
            let (nlat, nlon) = QueryGrid::parse_dims(dims)?;
            QueryGrid::regular(nlat, nlon)?
        }
        (None, None) => {
            return Err(StoneError::Config {
                field: "--coords".into(),
                detail: "one of --coords or --grid is required".into(),
            })
        }
    };
    let window = load_sensor_csv(sensors)?;
    let c = ckpt.model.config();
    if window.len() != c.k_hist() {
        return Err(StoneError::Ingestion {
            row: window.len() + 1,
            detail: format!("window has {} rows, the model needs exactly {}", window.len(), c.k_hist()),
        });
    }
    if window.n_sensors() != c.branch.n_sensors {
        return Err(StoneError::Ingestion {
            row: 1,
            detail: format!(
                "window has {} sensor columns, the model needs {}",
                window.n_sensors(),
                c.branch.n_sensors
            ),
        });
    }
    if c.trunk.p != 1 {
        return Err(StoneError::Config {
            field: "model.p".into(),
            detail: format!("field pack export needs one output channel, the model has {}", c.trunk.p),
        });
    }

    let start = Instant::now();
    let fc = ckpt.model.forecast_single_pass(&window.values, &grid, &ckpt.norm)?;
    let elapsed = start.elapsed();

    let (points, k_fut) = (grid.len(), c.k_fut());
    // values are [1×P×1×K]; frames are lead-major
    let v = fc.values.data();
    let mut frames = Vec::with_capacity(points * k_fut);
    for k in 0..k_fut {
        frames.extend((0..points).map(|i| v[i * k_fut + k] as f32));
    }
    let pack = FieldPack::new(grid.degrees().to_vec(), frames)?;

    let mut text = String::from("lat,lon,lead,value\n");
    for (k, lead) in fc.lead_times.iter().enumerate() {
        for (i, [lat, lon]) in grid.degrees().iter().enumerate() {
            writeln!(text, "{lat},{lon},{lead},{}", pack.frame(k)[i]).expect("write to string");
        }
    }
    ensure_dir(out)?;
    pack.write(&out.join("forecast.stnf"))?;
    write_file(&out.join("forecast.csv"), text)?;
    println!(
        "{} leads x {points} points from `{}` in {:.3} ms",
        k_fut,
        ckpt.label,
        elapsed.as_secs_f64() * 1e3
    );
    Ok(())
}

pub fn gradcheck(seed: u64, eps: f64, tol: f64) -> Result<()> {
    let rows = run_suite(seed, eps)?;
    println!("{:<12} {:<12} {:>12}  {:<28} status", "layer", "branch", "max_rel_err", "worst_param");
    let mut failed = Vec::new();
    for row in &rows {
        let pass = row.check.passes(tol);
        println!(
            "{:<12} {:<12} {:>12.3e}  {:<28} {}",
            row.layer,
            row.branch.label(),
            row.check.max_rel_err,
            row.check.worst_param,
            match (pass, &row.check.suspect_op) {
                (true, _) => "PASS".to_string(),
                (false, Some(op)) => format!("FAIL (op {op})"),
                (false, None) => "FAIL".to_string(),
            }
        );
        if !pass {
            failed.push(format!("{}/{}", row.layer, row.branch.label()));
        }
    }
    if !failed.is_empty() {
        return Err(StoneError::Numerical {
            context: "gradcheck".into(),
            detail: format!("relative error >= {tol:e} in {}", failed.join(", ")),
        });
    }
    Ok(())
}
