//! `nsf-thinpipe`: ε-sweeps, single 1D/3D runs and the sampled inequality and
//! constitutive checks.
//!
//! Exit status: 0 on success (a sweep verdict of PASS, or UNDETERMINED with
//! `--allow-undetermined`), 1 when a check or verdict fails, 2 on errors.

mod config;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use nsf_core::harness::{self, Verdict};
use nsf_core::inequalities::{korn_suite, NodeGrid};
use nsf_core::solver1d::{init_smooth, integrate_with};
use nsf_core::solver3d::{
    build_domain, integrate3d_with, lift_initial_data, write_binary, write_csv,
};
use nsf_core::thermo::check_model;
use nsf_core::ThermoModel;

use config::{SnapshotFormat, Solve1DConfig, Solve3DConfig};

#[derive(Parser)]
#[command(name = "nsf-thinpipe", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every ε of a sweep and judge convergence to the 1D limit.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent ε cases (also capped by NSF_THREADS).
        #[arg(long)]
        jobs: Option<usize>,
        /// Exit 0 when there are too few ε to judge.
        #[arg(long)]
        allow_undetermined: bool,
    },
    /// Integrate the 1D limit problem.
    Solve1d {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Integrate the pipe problem for one ε.
    Solve3d {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Korn-type inequalities on random compliant fields of the unit cube.
    CheckInequalities {
        /// Intervals per axis.
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sampled structural checks of the constitutive model.
    CheckThermo {
        /// File with a `[thermo]` table; reference model when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
}

#[derive(serde::Deserialize, Default)]
#[serde(default)]
struct ThermoOnly {
    thermo: nsf_core::ThermoParams,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Sweep {
            config,
            out,
            jobs,
            allow_undetermined,
        } => sweep(&config, out, jobs, allow_undetermined),
        Command::Solve1d { config, out } => solve1d(config.as_deref(), &out).map(|_| true),
        Command::Solve3d { config, out } => solve3d(config.as_deref(), &out).map(|_| true),
        Command::CheckInequalities {
            n,
            count,
            seed,
            out,
        } => check_inequalities(n, count, seed, out.as_deref()),
        Command::CheckThermo { config, samples } => check_thermo(config.as_deref(), samples),
    }
}

fn sweep(
    path: &Path,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    allow_undetermined: bool,
) -> Result<bool> {
    let cfg = harness::load_config(path).with_context(|| format!("loading {}", path.display()))?;
    let out = out
        .or_else(|| cfg.sweep.out_dir.clone())
        .context("no output directory: pass --out or set sweep.out_dir")?;
    let report = harness::run_sweep(&cfg, jobs)?;
    harness::emit_report(&report, &out)?;
    print!("{}", harness::verdict_text(&report));
    Ok(match report.verdict.verdict {
        Verdict::Pass => true,
        Verdict::Undetermined => allow_undetermined,
        Verdict::Fail => false,
        Verdict::Error => anyhow::bail!("{} case(s) failed", report.failures.len()),
    })
}

fn solve1d(path: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: Solve1DConfig = config::load(path)?;
    config::check_run(cfg.run.t_final, cfg.run.outputs)?;
    let model = ThermoModel::try_from(&cfg.thermo)?;
    let s0 = init_smooth(&model, &cfg.profile, cfg.run.n)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let diag_path = out.join("diagnostics.csv");
    let mut diag = csv::Writer::from_path(&diag_path)?;
    diag.write_record(["t", "mass", "energy", "entropy_production_min"])?;
    let mut k = 0;
    let steps = integrate_with(&model, &s0, cfg.run.t_final, cfg.run.outputs, |s, d| {
        harness::write_state1d(s, &out.join(format!("snapshot_{k:04}.csv")))?;
        k += 1;
        diag.write_record([
            d.t.to_string(),
            d.mass.to_string(),
            d.energy.to_string(),
            d.entropy_production_min.to_string(),
        ])
        .map_err(|e| nsf_core::NsfError::io(&diag_path, e.into()))?;
        Ok(())
    })?;
    diag.flush()?;
    println!("{k} snapshots, {steps} steps, written to {}", out.display());
    Ok(())
}

fn solve3d(path: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: Solve3DConfig = config::load(path)?;
    config::check_run(cfg.run.t_final, cfg.run.outputs)?;
    let model = ThermoModel::try_from(&cfg.thermo)?;
    let s1 = init_smooth(&model, &cfg.profile, cfg.grid.n3)?;
    let domain = build_domain(
        cfg.grid.cross_section,
        cfg.run.epsilon,
        cfg.grid.resolution(),
    )?;
    let s0 = lift_initial_data(&model, &s1, &cfg.perturbation, domain)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let diag_path = out.join("diagnostics.csv");
    let mut diag = csv::Writer::from_path(&diag_path)?;
    diag.write_record([
        "t",
        "mass",
        "energy",
        "entropy_production_min",
        "production_integral",
    ])?;
    let mut k = 0;
    let steps = integrate3d_with(&model, &s0, cfg.run.t_final, cfg.run.outputs, |s, d| {
        match cfg.run.format {
            SnapshotFormat::Csv => write_csv(s, &out.join(format!("snapshot_{k:04}.csv")))?,
            SnapshotFormat::Binary => {
                let p = out.join(format!("snapshot_{k:04}.nsf3"));
                let f = fs::File::create(&p).map_err(|e| nsf_core::NsfError::io(&p, e))?;
                write_binary(s, BufWriter::new(f)).map_err(|e| nsf_core::NsfError::io(&p, e))?;
            }
        }
        k += 1;
        diag.write_record([
            d.t.to_string(),
            d.mass.to_string(),
            d.energy.to_string(),
            d.entropy_production_min.to_string(),
            d.production_integral.to_string(),
        ])
        .map_err(|e| nsf_core::NsfError::io(&diag_path, e.into()))?;
        Ok(())
    })?;
    diag.flush()?;
    println!("{k} snapshots, {steps} steps, written to {}", out.display());
    Ok(())
}

fn check_inequalities(n: usize, count: usize, seed: u64, out: Option<&Path>) -> Result<bool> {
    let reports = korn_suite(NodeGrid::unit_cube(n)?, count, seed)?;
    let sink: Box<dyn std::io::Write> = match out {
        Some(p) => {
            Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)
        }
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "field_id",
        "grad_sq",
        "sym_sq",
        "dev_sq",
        "mixed",
        "sym_pass",
        "dev_pass",
        "mixed_pass",
    ])?;
    for (id, r) in reports.iter().enumerate() {
        let [a, b, c] = r.holds();
        w.write_record([
            id.to_string(),
            r.grad_sq.to_string(),
            r.sym_sq.to_string(),
            r.dev_sq.to_string(),
            r.mixed.to_string(),
            a.to_string(),
            b.to_string(),
            c.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(reports.iter().all(|r| r.passed()))
}

fn check_thermo(path: Option<&Path>, samples: usize) -> Result<bool> {
    let params = config::load::<ThermoOnly>(path)?.thermo;
    let model = ThermoModel::try_from(&params)?;
    let r = check_model(&model, samples);
    println!("samples                 {}", r.samples);
    println!("max gibbs residual      {:e}", r.max_gibbs_residual);
    println!("min dp/drho             {:e}", r.min_dp_drho);
    println!("min de/dtheta           {:e}", r.min_de_dtheta);
    println!(
        "stability ratio         [{:e}, {:e}]",
        r.stability_ratio_min, r.stability_ratio_max
    );
    println!("P/Z^(5/3) monotone      {}", r.p_over_z53_monotone);
    println!(
        "P/Z^(5/3) tail, P_inf   {:e} {:e}",
        r.p_over_z53_tail, r.p_infinity
    );
    println!("max S'                  {:e}", r.max_s_prime);
    println!(
        "energy coercivity       c = {:e}, min ratio {:e}",
        r.energy_coercivity_constant, r.min_energy_coercivity_ratio
    );
    let ok = r.passed();
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}
