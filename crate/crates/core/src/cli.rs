//! Command implementations behind the binary: integrate, train, evaluate
//! and the full pipeline. Each command reads one [`RunConfig`] and writes
//! its artifacts under the configured output directory with fixed names, so
//! reruns with the same config are byte-identical.

use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluator::{self, ComparisonReport, ReportMeta};
use crate::mlp::MlpNetwork;
use crate::rk45::{integrate, SolutionTable};
use crate::trainer::{
    self, predict, CollocationGrid, EpochRecord, TrainObserver, TrainedModel, TrainingCheckpoint,
    TrainingHistory,
};

pub const RK45_CSV: &str = "rk45.csv";
pub const PINN_CSV: &str = "pinn.csv";
pub const HISTORY_CSV: &str = "history.csv";
pub const CHECKPOINT_JSON: &str = "checkpoint.json";
pub const REPORT_JSON: &str = "report.json";

fn out_path(config: &RunConfig, name: &str) -> PathBuf {
    config.output.dir.join(name)
}

fn ensure_out_dir(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.output.dir)?;
    Ok(())
}

/// Integrates the configured system and writes the reference solution CSV.
pub fn cmd_integrate(config: &RunConfig) -> Result<PathBuf> {
    ensure_out_dir(config)?;
    let grid = CollocationGrid::make_grid(config.t_span, config.n_points)?;
    let started = Instant::now();
    let table = integrate(
        &config.esd_params,
        &config.initial_state,
        config.t_span,
        &config.rk45,
        grid.times(),
    )?;
    let elapsed = started.elapsed();
    let path = out_path(config, RK45_CSV);
    table.write_csv(&path)?;
    println!(
        "integrated {} grid points over [{}, {}] in {:.3}s -> {}",
        table.len(),
        config.t_span.0,
        config.t_span.1,
        elapsed.as_secs_f64(),
        path.display()
    );
    Ok(path)
}

/// Streams history rows and checkpoints to disk while training runs.
struct FileObserver {
    history: File,
    checkpoint_path: PathBuf,
    log_every: usize,
    max_epochs: usize,
}

impl TrainObserver for FileObserver {
    fn on_epoch(&mut self, record: &EpochRecord) -> Result<()> {
        self.history.write_all(TrainingHistory::csv_row(record).as_bytes())?;
        if record.epoch == 1
            || record.epoch == self.max_epochs
            || record.epoch.is_multiple_of(self.log_every)
        {
            println!(
                "epoch {:>7}  total {:.6e}  initial {:.6e}  lr {:.3e}",
                record.epoch, record.losses.total, record.losses.initial, record.lr
            );
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, ck: &TrainingCheckpoint) -> Result<()> {
        let json = serde_json::to_string(ck)?;
        std::fs::write(&self.checkpoint_path, json)?;
        Ok(())
    }
}

pub struct TrainArtifacts {
    pub model: TrainedModel,
    pub history_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub prediction_path: PathBuf,
}

/// Trains the PINN and writes history, checkpoint and the prediction CSV on
/// the configured grid. With `resume` the run continues from the stored
/// checkpoint and appends to the existing history.
pub fn cmd_train(config: &RunConfig, resume: bool) -> Result<TrainArtifacts> {
    ensure_out_dir(config)?;
    let training = config.training_config();
    let history_path = out_path(config, HISTORY_CSV);
    let checkpoint_path = out_path(config, CHECKPOINT_JSON);

    let history = if resume {
        OpenOptions::new().append(true).open(&history_path).map_err(|e| {
            Error::Config(format!(
                "cannot append to {} (was the run started here?): {e}",
                history_path.display()
            ))
        })?
    } else {
        let mut f = File::create(&history_path)?;
        writeln!(f, "{}", TrainingHistory::CSV_HEADER)?;
        f
    };
    let mut observer = FileObserver {
        history,
        checkpoint_path: checkpoint_path.clone(),
        log_every: (training.max_epochs / 20).max(1),
        max_epochs: training.max_epochs,
    };

    let started = Instant::now();
    let (model, _) = if resume {
        let text = std::fs::read_to_string(&checkpoint_path).map_err(|e| {
            Error::Config(format!("cannot read checkpoint {}: {e}", checkpoint_path.display()))
        })?;
        let ck: TrainingCheckpoint = serde_json::from_str(&text)?;
        trainer::resume_training(&config.esd_params, &training, &ck, &mut observer)?
    } else {
        trainer::train_with_observer(&config.esd_params, &training, &mut observer)?
    };
    let elapsed = started.elapsed();

    let grid = CollocationGrid::make_grid(config.t_span, config.n_points)?;
    let prediction = predict(&model, grid.times())?;
    let prediction_path = out_path(config, PINN_CSV);
    prediction.write_csv(&prediction_path)?;

    println!(
        "trained in {:.1}s: final total {:.6e}, best total {:.6e} (epoch {})",
        elapsed.as_secs_f64(),
        model.final_losses().total,
        model.best_losses().total,
        model.best_epoch()
    );
    println!("prediction -> {}", prediction_path.display());
    Ok(TrainArtifacts { model, history_path, checkpoint_path, prediction_path })
}

/// Compares two solution CSVs and writes the report JSON. When a checkpoint
/// is supplied, also prints the network's exact-tangent residual row as a
/// diagnostic.
pub fn cmd_evaluate(
    config: &RunConfig,
    reference_csv: &Path,
    candidate_csv: &Path,
    checkpoint: Option<&Path>,
) -> Result<ComparisonReport> {
    ensure_out_dir(config)?;
    let reference = SolutionTable::read_csv(reference_csv)?;
    let candidate = SolutionTable::read_csv(candidate_csv)?;
    let meta = ReportMeta {
        grid_size: reference.len(),
        t_span: config.t_span,
        reference_method: "rk45".into(),
        candidate_method: "pinn".into(),
        config_hash: config.config_hash(),
    };
    let report = evaluator::build_report(&reference, &candidate, &config.esd_params, meta)?;
    let report_path = out_path(config, REPORT_JSON);
    std::fs::write(&report_path, report.to_json_string()?)?;
    print!("{}", report.render_text());
    if let Some(ck_path) = checkpoint {
        let text = std::fs::read_to_string(ck_path)?;
        let ck: TrainingCheckpoint = serde_json::from_str(&text)?;
        let net = MlpNetwork::from_checkpoint(&ck.best_network)?;
        let exact = evaluator::residual_mse_exact_tangent(
            &net,
            candidate.times(),
            &config.esd_params,
        )?;
        println!(
            "pinn residual MSE with exact tangents: {:.9e} {:.9e} {:.9e} {:.9e}",
            exact[0], exact[1], exact[2], exact[3]
        );
    }
    println!("report -> {}", report_path.display());
    Ok(report)
}

/// integrate + train + evaluate. Returns the per-component R-squared values
/// and prints them as a single summary line.
pub fn cmd_full_run(config: &RunConfig) -> Result<[Option<f64>; 4]> {
    let rk_path = cmd_integrate(config)?;
    let artifacts = cmd_train(config, false)?;
    let report = cmd_evaluate(config, &rk_path, &artifacts.prediction_path, None)?;
    let r2 = report.metrics.to_array().map(|m| m.r_squared);
    let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.8}"));
    println!(
        "R2: x1={} x2={} x3={} x4={}",
        fmt(r2[0]),
        fmt(r2[1]),
        fmt(r2[2]),
        fmt(r2[3])
    );
    Ok(r2)
}
