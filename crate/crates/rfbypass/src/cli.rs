//! Command-line interface: `edit`, `sweep`, `oracle-check`, `field-info`.
//!
//! Every command loads a JSON config document, applies `--set` overrides,
//! and writes machine-diffable artifacts. CSV files carry a `# config:` echo
//! line, a header row, and 17-significant-digit floats.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bypass::{
    analytic_form_quadrature, compute_bypass, coupled_exact_oracle, dense_linear_oracle,
};
use crate::config::{parse_condition, RunConfigDocument};
use crate::editor::{edit, sample_dataset, run_sweep, EditResult, SweepSpec};
use crate::timegrid::TimeGrid;
use crate::trajectory::invert;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "rfbypass",
    about = "Trajectory-bypass editing over analytic rectified-flow fields"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Path to the JSON run configuration document.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for result artifacts.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads for sweep points; omitted means the rayon default.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Overrides `edit.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dotted-path config overrides, e.g. `--set edit.n_steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one edit; writes result.json and trajectory.csv.
    Edit(CommonArgs),
    /// Run the configured sweep; writes sweep.json and sweep.csv.
    Sweep(CommonArgs),
    /// Compare the discrete bypass against its oracles; writes oracle.csv.
    OracleCheck(CommonArgs),
    /// Print the resolved field parameters.
    FieldInfo(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Edit(c)
            | Command::Sweep(c)
            | Command::OracleCheck(c)
            | Command::FieldInfo(c) => c,
        }
    }
}

/// 17-significant-digit float formatting; round-trips through f64 parsing.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn load_document(common: &CommonArgs) -> Result<RunConfigDocument> {
    let mut overrides: Vec<(String, String)> = Vec::new();
    for raw in &common.set {
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| Error::Schema(format!("--set expects KEY=VALUE, got '{raw}'")))?;
        overrides.push((k.to_string(), v.to_string()));
    }
    if let Some(seed) = common.seed {
        overrides.push(("edit.seed".to_string(), seed.to_string()));
    }
    RunConfigDocument::load(&common.config, &overrides)
}

fn write_csv(
    path: &Path,
    config_echo: &str,
    header: &[String],
    rows: &[Vec<String>],
) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# config: {config_echo}").unwrap();
    writeln!(out, "{}", header.join(",")).unwrap();
    for row in rows {
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Schema(format!("serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn trajectory_csv(result: &EditResult) -> (Vec<String>, Vec<Vec<String>>) {
    let d = result.x0.len();
    let mut header = vec!["phase".to_string(), "step".to_string(), "t".to_string()];
    for j in 0..d {
        header.push(format!("x{j}"));
    }
    let mut rows = Vec::new();
    for (i, state) in result.inversion_states.iter().enumerate() {
        let mut row = vec![
            "inversion".to_string(),
            i.to_string(),
            fmt_float(result.times[i]),
        ];
        row.extend(state.iter().map(|v| fmt_float(*v)));
        rows.push(row);
    }
    let b = result.reconstruction_states.len() - 1;
    for (k, state) in result.reconstruction_states.iter().enumerate() {
        let step = b - k;
        let mut row = vec![
            "reconstruction".to_string(),
            step.to_string(),
            fmt_float(result.times[step]),
        ];
        row.extend(state.iter().map(|v| fmt_float(*v)));
        rows.push(row);
    }
    (header, rows)
}

fn cmd_edit(common: &CommonArgs) -> Result<()> {
    let doc = load_document(common)?;
    let spec = doc.build_field_spec()?;
    let ds = doc.dataset_section()?;
    let origin = parse_condition(&ds.origin);
    let target = parse_condition(&ds.target);
    let point = sample_dataset(&spec, &origin, &target, 1, doc.edit.seed)?
        .into_iter()
        .next()
        .unwrap();
    let result = edit(&spec, &point.x0, &origin, &target, &doc.edit)?;

    std::fs::create_dir_all(&common.out)?;
    write_json(
        &common.out.join("result.json"),
        &serde_json::json!({ "config": doc, "result": result }),
    )?;
    let (header, rows) = trajectory_csv(&result);
    write_csv(
        &common.out.join("trajectory.csv"),
        &doc.canonical_json(),
        &header,
        &rows,
    )?;
    println!(
        "edit done: fidelity={:.6} alignment={}",
        result.fidelity,
        result
            .alignment
            .map(|a| format!("{a:.6}"))
            .unwrap_or_else(|| "n/a".to_string())
    );
    Ok(())
}

fn cmd_sweep(common: &CommonArgs) -> Result<()> {
    let doc = load_document(common)?;
    let spec = doc.build_field_spec()?;
    let ds = doc.dataset_section()?;
    let axis = doc
        .sweep
        .clone()
        .ok_or_else(|| Error::Schema("config has no 'sweep' section".into()))?;
    let origin = parse_condition(&ds.origin);
    let target = parse_condition(&ds.target);
    let dataset = sample_dataset(&spec, &origin, &target, ds.count, doc.edit.seed)?;
    let sweep = SweepSpec {
        base: doc.edit.clone(),
        axis,
    };
    let report = run_sweep(&spec, &dataset, &sweep)?;

    std::fs::create_dir_all(&common.out)?;
    write_json(
        &common.out.join("sweep.json"),
        &serde_json::json!({ "config": doc, "report": report }),
    )?;
    let header = vec![
        "setting".to_string(),
        "mean_fidelity".to_string(),
        "mean_alignment".to_string(),
        "failures".to_string(),
    ];
    let rows: Vec<Vec<String>> = report
        .settings
        .iter()
        .map(|s| {
            vec![
                s.label.clone(),
                fmt_float(s.mean_fidelity),
                fmt_float(s.mean_alignment),
                s.failures.to_string(),
            ]
        })
        .collect();
    write_csv(
        &common.out.join("sweep.csv"),
        &doc.canonical_json(),
        &header,
        &rows,
    )?;
    println!("sweep done: {} settings over {} points", report.settings.len(), dataset.len());
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn cmd_oracle_check(common: &CommonArgs) -> Result<()> {
    let doc = load_document(common)?;
    let spec = doc.build_field_spec()?;
    let ds = doc.dataset_section()?;
    let oracle = doc
        .oracle
        .clone()
        .ok_or_else(|| Error::Schema("config has no 'oracle' section".into()))?;
    let origin = parse_condition(&ds.origin);
    let target = parse_condition(&ds.target);
    let x0 = match &oracle.x0 {
        Some(x) => x.clone(),
        None => {
            sample_dataset(&spec, &origin, &target, 1, doc.edit.seed)?
                .into_iter()
                .next()
                .unwrap()
                .x0
        }
    };
    let (guidance_inv, guidance_rec) = doc.edit.guidances(&origin, &target);

    let header = vec![
        "n_steps".to_string(),
        "t_b".to_string(),
        "b_discrete".to_string(),
        "b_linear_oracle".to_string(),
        "b_exact_oracle".to_string(),
        "b_quadrature".to_string(),
        "err_discrete_vs_linear".to_string(),
        "err_linear_vs_quadrature".to_string(),
        "err_exact_vs_linear".to_string(),
    ];
    let mut rows = Vec::new();
    for &n in &oracle.n_values {
        let grid = TimeGrid::new(n, doc.edit.shift)?;
        let b_index = (0..=n)
            .min_by(|a, b| {
                (grid.time(*a) - oracle.bypass_time)
                    .abs()
                    .partial_cmp(&(grid.time(*b) - oracle.bypass_time).abs())
                    .unwrap()
            })
            .unwrap();
        let t_b = grid.time(b_index);
        let record = invert(
            &spec,
            &x0,
            &grid,
            &guidance_inv,
            &guidance_rec,
            doc.edit.zeta,
            doc.edit.derivative_mode,
        )?;
        let discrete = compute_bypass(&record, b_index)?.b_star;
        let substeps = oracle.substeps_factor * n;
        let linear = dense_linear_oracle(
            &spec,
            &x0,
            &guidance_inv,
            &guidance_rec,
            t_b,
            substeps,
            doc.edit.zeta,
            doc.edit.derivative_mode,
        )?;
        let exact = coupled_exact_oracle(&spec, &x0, &guidance_inv, &guidance_rec, t_b, substeps)?;
        let quadrature = analytic_form_quadrature(
            &spec,
            &x0,
            &guidance_inv,
            &guidance_rec,
            t_b,
            oracle.outer_nodes,
            oracle.inner_nodes,
            doc.edit.zeta,
            doc.edit.derivative_mode,
        )?;
        rows.push(vec![
            n.to_string(),
            fmt_float(t_b),
            fmt_float(norm(&discrete)),
            fmt_float(norm(&linear)),
            fmt_float(norm(&exact)),
            fmt_float(norm(&quadrature)),
            fmt_float(diff_norm(&discrete, &linear)),
            fmt_float(diff_norm(&linear, &quadrature)),
            fmt_float(diff_norm(&exact, &linear)),
        ]);
    }
    std::fs::create_dir_all(&common.out)?;
    write_csv(
        &common.out.join("oracle.csv"),
        &doc.canonical_json(),
        &header,
        &rows,
    )?;
    println!("oracle check done: {} grid sizes", oracle.n_values.len());
    Ok(())
}

fn cmd_field_info(common: &CommonArgs) -> Result<()> {
    let doc = load_document(common)?;
    let spec = doc.build_field_spec()?;
    println!("dim: {}", spec.dim());
    for (id, mixture) in spec.labeled() {
        println!("condition '{id}': {} component(s)", mixture.components().len());
        for (k, c) in mixture.components().iter().enumerate() {
            println!(
                "  [{k}] weight={} mean={:?} stddev={}",
                c.weight, c.mean, c.stddev
            );
        }
    }
    let null = spec.null_mixture();
    println!("null condition: {} component(s)", null.components().len());
    for (k, c) in null.components().iter().enumerate() {
        println!(
            "  [{k}] weight={} mean={:?} stddev={}",
            c.weight, c.mean, c.stddev
        );
    }
    Ok(())
}

/// Runs one parsed command to completion.
pub fn dispatch(cli: &Cli) -> Result<()> {
    let common = cli.command.common();
    let run = || match &cli.command {
        Command::Edit(c) => cmd_edit(c),
        Command::Sweep(c) => cmd_sweep(c),
        Command::OracleCheck(c) => cmd_oracle_check(c),
        Command::FieldInfo(c) => cmd_field_info(c),
    };
    match common.jobs {
        Some(jobs) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
            pool.install(run)
        }
        None => run(),
    }
}
