//! Benchmark command line for the tracking library.
//!
//! Subcommands: `simulate` writes truth and measurement CSVs; `track` runs
//! the tracker and writes track states, a gate audit, and a metrics record;
//! `ablate` runs the gate x likelihood x TPM ablation grid; `bench`
//! measures filter and tracker throughput. Every run is reproducible from
//! its config plus seed.

mod config;
mod output;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use rayon::prelude::*;

use safe_imm::association::{GnnTracker, TrackerConfig};
use safe_imm::imm::{imm_step, Likelihood};
use safe_imm::runner::{run_tracking, RunOutput, RunSettings, TrackerKind};
use safe_imm::sim::simulate;

use config::FileConfig;
use output::Record;

#[derive(Parser)]
#[command(
    name = "safe-imm",
    about = "Multi-model tracking benchmark: simulate, track, ablate, bench",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground-truth and measurement CSV files for a scenario.
    Simulate(CommonArgs),
    /// Track a scenario and emit per-step states, a gate audit, and metrics.
    Track(CommonArgs),
    /// Run the {gate on/off} x {gaussian, student_t} x {fixed, adaptive}
    /// ablation grid over shared seeds.
    Ablate(CommonArgs),
    /// Measure filter-only and end-to-end tracking throughput.
    Bench(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config path; all values default to the benchmark when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed, overriding the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path config override, repeatable: --override gate.epsilon=0.4
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl CommonArgs {
    fn load(&self) -> Result<FileConfig> {
        FileConfig::load(self.config.as_deref(), &self.overrides, self.seed)
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Track(args) => cmd_track(&args),
        Command::Ablate(args) => cmd_ablate(&args),
        Command::Bench(args) => cmd_bench(&args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn ensure_dir(cfg: &FileConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(cfg.output_dir());
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output dir {}", dir.display()))?;
    Ok(dir)
}

fn cmd_simulate(args: &CommonArgs) -> Result<()> {
    let cfg = args.load()?;
    let dir = ensure_dir(&cfg)?;
    let scenario = cfg.scenario();
    scenario.validate()?;
    let (_, data) = simulate(&scenario)?;

    let truth_path = dir.join("truth.csv");
    let meas_path = dir.join("measurements.csv");
    // The realized trajectory is what the sensor observed and what
    // evaluation scores against.
    output::write_truth_csv(&truth_path, &data.realized, scenario.dt)?;
    output::write_measurements_csv(&meas_path, &data, scenario.dt)?;

    let detections: usize = data.frames.iter().map(|f| f.len()).sum();
    println!(
        "simulate: {} steps x {} targets, {} detections, seed {} -> {}, {}",
        scenario.steps(),
        scenario.targets.len(),
        detections,
        scenario.seed,
        truth_path.display(),
        meas_path.display()
    );
    Ok(())
}

fn aggregate_record(record: &mut Record, settings: &RunSettings, outs: &[(u64, RunOutput)]) {
    let n = outs.len() as f64;
    let targets = settings.scenario.targets.len();

    record.int("seeds", outs.len() as u64);
    record.int("frames", settings.scenario.steps() as u64);
    record.int("targets", targets as u64);

    for t in 0..targets {
        let mut rx = 0.0;
        let mut ry = 0.0;
        let mut gaps = 0u64;
        for (_, out) in outs {
            rx += out.metrics.per_target[t].rmse[0].rmse / n;
            ry += out.metrics.per_target[t].rmse[1].rmse / n;
            gaps += out.metrics.per_target[t].rmse[0].gap_frames as u64;
        }
        record.num(&format!("target_{t}_rmse_x"), rx);
        record.num(&format!("target_{t}_rmse_y"), ry);
        record.int(&format!("target_{t}_gap_frames"), gaps);
        let mut loc = 0.0;
        let mut total = 0.0;
        for (_, out) in outs {
            loc += out.metrics.per_target[t].ospa.loc / n;
            total += out.metrics.per_target[t].ospa.total / n;
        }
        record.num(&format!("target_{t}_ospa"), total);
        record.num(&format!("target_{t}_ospa_loc"), loc);
    }

    let mut ospa = 0.0;
    let mut loc = 0.0;
    let mut card = 0.0;
    let mut fired = 0u64;
    let mut compliant = 0u64;
    let mut max_excursion = 0.0f64;
    let mut max_bound = 0.0f64;
    for (_, out) in outs {
        ospa += out.metrics.ospa.total / n;
        loc += out.metrics.ospa.loc / n;
        card += out.metrics.ospa.card / n;
        fired += out.fired_steps as u64;
        compliant += out.compliant_fired_steps as u64;
        max_excursion = max_excursion.max(out.max_excursion);
        max_bound = max_bound.max(out.max_bound);
    }
    record.num("ospa_mean", ospa);
    record.num("ospa_loc", loc);
    record.num("ospa_card", card);
    record.int("fired_steps", fired);
    record.int("compliant_fired_steps", compliant);
    let compliance = if fired == 0 {
        100.0
    } else {
        100.0 * compliant as f64 / fired as f64
    };
    record.num("compliance_pct", compliance);
    record.num("max_excursion", max_excursion);
    record.num("max_bound", max_bound);
}

fn cmd_track(args: &CommonArgs) -> Result<()> {
    let cfg = args.load()?;
    let dir = ensure_dir(&cfg)?;
    let settings = cfg.settings()?;
    settings.scenario.validate()?;
    let seeds = cfg.seeds();

    let outs: Vec<(u64, RunOutput)> = seeds
        .par_iter()
        .map(|&seed| run_tracking(&settings.with_seed(seed)).map(|o| (seed, o)))
        .collect::<Result<_, _>>()?;

    for (seed, out) in &outs {
        output::write_tracks_csv(
            &dir.join(format!("tracks_seed{seed}.csv")),
            out,
            settings.scenario.dt,
        )?;
        output::write_gate_audit_csv(
            &dir.join(format!("gate_audit_seed{seed}.csv")),
            out,
            settings.scenario.dt,
        )?;
    }

    let mut record = Record::new("track");
    record.text("tracker", &cfg.tracker.kind);
    record.text("likelihood", &cfg.tracker.likelihood);
    record.text(
        "tpm",
        if cfg.tracker.adaptive_tpm {
            "adaptive"
        } else {
            "fixed"
        },
    );
    aggregate_record(&mut record, &settings, &outs);
    let metrics_path = dir.join("metrics.txt");
    record.write(&metrics_path)?;

    let fired: usize = outs.iter().map(|(_, o)| o.fired_steps).sum();
    let compliant: usize = outs.iter().map(|(_, o)| o.compliant_fired_steps).sum();
    let compliance = if fired == 0 {
        100.0
    } else {
        100.0 * compliant as f64 / fired as f64
    };
    println!(
        "track: {} seeds, {} WTA events, compliance {:.1}% -> {}",
        outs.len(),
        fired,
        compliance,
        metrics_path.display()
    );
    Ok(())
}

fn cmd_ablate(args: &CommonArgs) -> Result<()> {
    let cfg = args.load()?;
    let dir = ensure_dir(&cfg)?;
    let base = cfg.settings()?;
    base.scenario.validate()?;
    let seeds = cfg.seeds();

    struct Cell {
        gate: bool,
        likelihood: Likelihood,
        adaptive: bool,
    }
    let mut cells = Vec::new();
    for gate in [true, false] {
        for likelihood in [
            Likelihood::Gaussian,
            Likelihood::StudentT { nu: cfg.tracker.nu },
        ] {
            for adaptive in [false, true] {
                cells.push(Cell {
                    gate,
                    likelihood,
                    adaptive,
                });
            }
        }
    }

    // Every (cell, seed) pair is independent; identical seeds across cells
    // give paired comparisons.
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let results: Vec<(usize, u64, RunOutput)> = jobs
        .par_iter()
        .map(|&(ci, seed)| {
            let cell = &cells[ci];
            let mut s = base.clone();
            s.tracker = if cell.gate {
                TrackerKind::SafeImm
            } else {
                TrackerKind::MixtureOnly
            };
            s.likelihood = cell.likelihood;
            s.adaptive_tpm = cell.adaptive;
            s.nu_jam = match cell.likelihood {
                // Keep the compared dof fixed under jamming scenarios.
                Likelihood::StudentT { nu } => nu,
                Likelihood::Gaussian => base.nu_jam,
            };
            run_tracking(&s.with_seed(seed)).map(|o| (ci, seed, o))
        })
        .collect::<Result<_, _>>()?;

    let mut w = csv::Writer::from_path(dir.join("ablation.csv"))?;
    w.write_record([
        "gate",
        "likelihood",
        "tpm",
        "ospa_mean",
        "ospa_loc",
        "ospa_card",
        "worst_rmse_xy",
        "fired_steps",
        "compliance_pct",
        "max_excursion",
        "max_bound",
    ])?;

    println!(
        "{:<5} {:<10} {:<9} {:>9} {:>9} {:>10} {:>9} {:>10} {:>10}",
        "gate", "likelihood", "tpm", "ospa", "rmse_max", "fired", "compl%", "max_drift", "max_B"
    );
    for (ci, cell) in cells.iter().enumerate() {
        let rows: Vec<&RunOutput> = results
            .iter()
            .filter(|(c, _, _)| *c == ci)
            .map(|(_, _, o)| o)
            .collect();
        let n = rows.len() as f64;
        let ospa: f64 = rows.iter().map(|o| o.metrics.ospa.total).sum::<f64>() / n;
        let loc: f64 = rows.iter().map(|o| o.metrics.ospa.loc).sum::<f64>() / n;
        let card: f64 = rows.iter().map(|o| o.metrics.ospa.card).sum::<f64>() / n;
        let worst_rmse: f64 = rows
            .iter()
            .map(|o| o.metrics.worst_xy_rmse())
            .fold(0.0, f64::max);
        let fired: usize = rows.iter().map(|o| o.fired_steps).sum();
        let compliant: usize = rows.iter().map(|o| o.compliant_fired_steps).sum();
        let compliance = if fired == 0 {
            100.0
        } else {
            100.0 * compliant as f64 / fired as f64
        };
        let max_excursion = rows.iter().map(|o| o.max_excursion).fold(0.0, f64::max);
        let max_bound = rows.iter().map(|o| o.max_bound).fold(0.0, f64::max);

        let gate = if cell.gate { "on" } else { "off" };
        let likelihood = match cell.likelihood {
            Likelihood::Gaussian => "gaussian",
            Likelihood::StudentT { .. } => "student_t",
        };
        let tpm = if cell.adaptive { "adaptive" } else { "fixed" };
        w.write_record([
            gate.to_string(),
            likelihood.to_string(),
            tpm.to_string(),
            format!("{ospa:.4}"),
            format!("{loc:.4}"),
            format!("{card:.4}"),
            format!("{worst_rmse:.4}"),
            fired.to_string(),
            format!("{compliance:.1}"),
            format!("{max_excursion:.3}"),
            format!("{max_bound:.3}"),
        ])?;
        println!(
            "{gate:<5} {likelihood:<10} {tpm:<9} {ospa:>9.4} {worst_rmse:>9.4} {fired:>10} {compliance:>9.1} {max_excursion:>10.3} {max_bound:>10.3}"
        );
    }
    w.flush()?;
    println!(
        "ablate: {} cells x {} seeds -> {}",
        cells.len(),
        seeds.len(),
        dir.join("ablation.csv").display()
    );
    Ok(())
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[idx]
}

fn cmd_bench(args: &CommonArgs) -> Result<()> {
    let cfg = args.load()?;
    let dir = ensure_dir(&cfg)?;
    let settings = cfg.settings()?;
    settings.scenario.validate()?;

    // Filter-only loop: one bank, synthetic measurements, warm then timed.
    let tracker_cfg = TrackerConfig::default();
    let mut bank = {
        let mut tracker = GnnTracker::new(tracker_cfg.clone());
        let r = settings.measurement_noise();
        tracker
            .step(&[Vector3::new(0.0, 0.0, 0.0)], &r, settings.scenario.dt)
            .unwrap();
        tracker.tracks()[0].bank.clone()
    };
    let r = settings.measurement_noise();
    let z = nalgebra::DVector::from_vec(vec![0.5, 0.2, 0.0]);
    let imm_cfg = tracker_cfg.imm.clone();
    for _ in 0..2_000 {
        imm_step(&mut bank, &z, &r, settings.scenario.dt, &imm_cfg)?;
    }
    let steps = 100_000;
    let mut latencies = Vec::with_capacity(steps);
    let start = Instant::now();
    for _ in 0..steps {
        let t0 = Instant::now();
        imm_step(&mut bank, &z, &r, settings.scenario.dt, &imm_cfg)?;
        latencies.push(t0.elapsed().as_secs_f64() * 1e6);
    }
    let imm_rate = steps as f64 / start.elapsed().as_secs_f64();
    latencies.sort_by(f64::total_cmp);
    let imm_p50 = percentile(&latencies, 0.50);
    let imm_p99 = percentile(&latencies, 0.99);

    // End-to-end tracking at several scene sizes.
    let mut scaling = Vec::new();
    for &count in &[1usize, 3, 10, 30, 100] {
        let frames: Vec<Vec<Vector3<f64>>> = (0..200)
            .map(|k| {
                (0..count)
                    .map(|i| Vector3::new(1000.0 * i as f64 + k as f64, 500.0 * i as f64, 0.0))
                    .collect()
            })
            .collect();
        let mut tracker = GnnTracker::new(tracker_cfg.clone());
        for f in &frames {
            tracker.step(f, &r, settings.scenario.dt)?;
        }
        let mut frame_lat = Vec::with_capacity(frames.len());
        let mut tracker = GnnTracker::new(tracker_cfg.clone());
        let start = Instant::now();
        for f in &frames {
            let t0 = Instant::now();
            tracker.step(f, &r, settings.scenario.dt)?;
            frame_lat.push(t0.elapsed().as_secs_f64() * 1e6);
        }
        let rate = frames.len() as f64 / start.elapsed().as_secs_f64();
        frame_lat.sort_by(f64::total_cmp);
        scaling.push((
            count,
            rate,
            percentile(&frame_lat, 0.50),
            percentile(&frame_lat, 0.99),
        ));
    }

    let mut record = Record::new("bench");
    record.num("imm_steps_per_sec", imm_rate);
    record.num("imm_step_p50_us", imm_p50);
    record.num("imm_step_p99_us", imm_p99);
    for (count, rate, p50, p99) in &scaling {
        record.num(&format!("tracker_{count}_targets_fps"), *rate);
        record.num(&format!("tracker_{count}_targets_p50_us"), *p50);
        record.num(&format!("tracker_{count}_targets_p99_us"), *p99);
    }
    let path = dir.join("bench.txt");
    record.write(&path)?;
    print!("{}", record.as_str());
    println!("bench: -> {}", path.display());
    Ok(())
}
