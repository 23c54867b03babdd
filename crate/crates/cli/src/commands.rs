//! Subcommand implementations over the core pipeline drivers.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use afford_core::config::{ConfigError, RunConfig};
use afford_core::denoiser::{self, ModelError};
use afford_core::harness::{self, EvalOptions, TrainOptions};
use afford_core::synth::{self, DataError};

use crate::{overlay, CmdError};

fn load_config(path: &Path) -> Result<RunConfig, CmdError> {
    RunConfig::load(path).map_err(|e| match e {
        ConfigError::Io { .. } | ConfigError::Parse { .. } | ConfigError::Invalid(_) => {
            CmdError::Usage(e.to_string())
        }
    })
}

fn read_dataset(dir: &Path) -> Result<Vec<synth::SampleRecord>, CmdError> {
    // Unreadable or malformed input data is an invocation-class failure.
    synth::read_dataset(dir).map_err(|e| match e {
        DataError::Io(_)
        | DataError::CorruptManifest { .. }
        | DataError::MissingBlob { .. }
        | DataError::SizeMismatch { .. }
        | DataError::InvalidRecord { .. } => CmdError::Usage(e.to_string()),
    })
}

pub fn gen(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), CmdError> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.generator.seed = s;
    }
    let gen_cfg = cfg.generator.to_generator_config();
    let records = harness::generate_dataset(&gen_cfg)
        .map_err(|e| CmdError::Runtime(format!("generation failed: {e}")))?;
    for r in &records {
        r.validate()
            .map_err(|reason| CmdError::Runtime(format!("record {} invalid: {reason}", r.id)))?;
    }
    synth::write_dataset(&records, out)
        .map_err(|e| CmdError::Runtime(format!("writing dataset: {e}")))?;
    let with_inter = records.iter().filter(|r| r.intermediates.is_some()).count();
    let mean_mask = records.iter().map(|r| r.mask.area_fraction()).sum::<f64>() / records.len() as f64;
    println!(
        "wrote {} records to {} ({} with curation intermediates, mean mask fraction {:.4}); all invariants hold",
        records.len(),
        out.display(),
        with_inter,
        mean_mask
    );
    Ok(())
}

pub fn curate(dataset: &Path, config: Option<&Path>) -> Result<(), CmdError> {
    let cfg = match config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    let mut records = read_dataset(dataset)?;
    if records.is_empty() {
        return Err(CmdError::Usage(format!("dataset {} has no records", dataset.display())));
    }
    let summary = harness::curate_dataset(&mut records, &cfg.curate.to_curate_config());
    synth::write_dataset(&records, dataset)
        .map_err(|e| CmdError::Runtime(format!("rewriting dataset: {e}")))?;
    println!(
        "curated {}/{} records ({} robot/no-intermediate records skipped)",
        summary.succeeded, summary.attempted, summary.skipped_no_intermediates
    );
    if summary.succeeded > 0 {
        println!(
            "error vs ground truth: mean {:.3} px, mean {:.3} deg",
            summary.mean_px_err, summary.mean_rot_err_deg
        );
    }
    if summary.attempted > 0 {
        let rate = summary.succeeded as f64 / summary.attempted as f64;
        if rate < cfg.curate.min_success_rate {
            for (id, reason) in &summary.failures {
                eprintln!("record {id}: {reason}");
            }
            return Err(CmdError::Runtime(format!(
                "curation succeeded on {:.1}% of records, below the {:.1}% threshold",
                rate * 100.0,
                cfg.curate.min_success_rate * 100.0
            )));
        }
    }
    Ok(())
}

pub fn train(config: &Path, dataset: &Path, out: &Path, seed: Option<u64>) -> Result<(), CmdError> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.model.seed = s;
    }
    let records = read_dataset(dataset)?;
    if records.is_empty() {
        return Err(CmdError::Usage(format!("dataset {} has no records", dataset.display())));
    }
    let (sl, sr) = harness::build_schedules(&cfg.schedule)
        .map_err(|e| CmdError::Usage(format!("schedules: {e}")))?;
    let opts = TrainOptions::from_config(&cfg);
    let (params, rows) = harness::train_model(&records, &opts, &sl, &sr).map_err(|e| match e {
        ModelError::NonFiniteLoss { step, ref detail } => {
            CmdError::Runtime(format!("non-finite loss at step {step}: {detail}"))
        }
        other => CmdError::Runtime(other.to_string()),
    })?;
    denoiser::save_params(&params, out)
        .map_err(|e| CmdError::Runtime(format!("writing parameters: {e}")))?;

    let csv_path = loss_csv_path(out);
    let mut csv = std::fs::File::create(&csv_path)
        .map_err(|e| CmdError::Runtime(format!("creating {}: {e}", csv_path.display())))?;
    writeln!(csv, "step,train_loss,holdout_loss").map_err(io_runtime)?;
    for row in &rows {
        match row.holdout_loss {
            Some(h) => writeln!(csv, "{},{},{}", row.step, row.train_loss, h),
            None => writeln!(csv, "{},{},", row.step, row.train_loss),
        }
        .map_err(io_runtime)?;
    }
    println!(
        "trained {} steps on {} records; loss {:.4} -> {:.4}; wrote {} and {}",
        rows.len(),
        records.len(),
        rows.first().map_or(0.0, |r| r.train_loss),
        rows.last().map_or(0.0, |r| r.train_loss),
        out.display(),
        csv_path.display()
    );
    Ok(())
}

fn loss_csv_path(model_out: &Path) -> std::path::PathBuf {
    let stem = model_out.file_stem().unwrap_or_default().to_string_lossy();
    model_out.with_file_name(format!("{stem}.loss.csv"))
}

fn io_runtime(e: std::io::Error) -> CmdError {
    CmdError::Runtime(e.to_string())
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    model: &Path,
    dataset: &Path,
    out: &Path,
    config: Option<&Path>,
    oracle: bool,
    overlay_path: Option<&Path>,
    csv_path: Option<&Path>,
    seed: Option<u64>,
) -> Result<(), CmdError> {
    let cfg = match config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    let params = denoiser::load_params(model)
        .map_err(|e| CmdError::Usage(format!("loading model {}: {e}", model.display())))?;
    let records = read_dataset(dataset)?;
    if records.is_empty() {
        return Err(CmdError::Usage(format!("dataset {} has no records", dataset.display())));
    }
    // Schedules must match what the model was trained against.
    let mut sched_section = cfg.schedule.clone();
    sched_section.location.steps = params.config.n_steps;
    sched_section.rotation.steps = params.config.n_steps;
    let (sl, sr) = harness::build_schedules(&sched_section)
        .map_err(|e| CmdError::Usage(format!("schedules: {e}")))?;
    let opts = EvalOptions {
        sigma_h: cfg.eval.sigma_h,
        samples_per_scene: cfg.eval.samples_per_scene,
        seed: seed.unwrap_or(cfg.eval.seed),
        oracle,
    };
    let report = harness::evaluate_model(&params, &records, &sl, &sr, &opts).map_err(|e| match e {
        ModelError::DimensionMismatch(_) => CmdError::Runtime(e.to_string()),
        other => CmdError::Runtime(other.to_string()),
    })?;

    let json = serde_json::json!({
        "generated_at": SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        "model": model.display().to_string(),
        "dataset": dataset.display().to_string(),
        "n_records": report.n_records,
        "samples_per_scene": opts.samples_per_scene,
        "sigma_h": opts.sigma_h,
        "oracle": oracle,
        "chance_sr": report.chance_sr,
        "mean_sr": report.result.mean_sr,
        "mean_nss": report.result.mean_nss,
        "mean_dtm": report.result.mean_dtm,
        "mean_rot_err_rad": report.result.mean_rot_err,
        "median_rot_err_rad": report.result.median_rot_err,
    });
    std::fs::write(out, serde_json::to_string_pretty(&json).expect("serializable") + "\n")
        .map_err(io_runtime)?;

    let table = format!(
        "records          {:>10}\n\
         chance SR        {:>10.4}\n\
         SR               {:>10.4}\n\
         NSS              {:>10.4}\n\
         DTM              {:>10.4}\n\
         rot err (mean)   {:>9.2}°\n\
         rot err (median) {:>9.2}°\n",
        report.n_records,
        report.chance_sr,
        report.result.mean_sr,
        report.result.mean_nss,
        report.result.mean_dtm,
        report.result.mean_rot_err.to_degrees(),
        report.result.median_rot_err.to_degrees(),
    );
    print!("{table}");
    std::fs::write(out.with_extension("txt"), &table).map_err(io_runtime)?;

    if let Some(csv_out) = csv_path {
        let mut csv = String::from("sample_id,sr,nss,dtm,rot_err_rad\n");
        for row in &report.result.rows {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                row.sample_id, row.sr, row.nss, row.dtm, row.rot_err
            ));
        }
        std::fs::write(csv_out, csv).map_err(io_runtime)?;
    }

    if let Some(overlay_out) = overlay_path {
        overlay::write_overlay(&params, &records[0], &sl, &sr, &opts, overlay_out)
            .map_err(|e| CmdError::Runtime(format!("overlay: {e}")))?;
    }
    Ok(())
}
