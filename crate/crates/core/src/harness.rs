//! ε-sweeps of the pipe problem against its one-dimensional limit: configuration,
//! runs, convergence verdicts and the files a run leaves behind.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{NsfError, Result};
use crate::profile::ProfileSpec;
use crate::relent::{scaled_norms, velocity_deviation, ScaledNormReport};
use crate::solver1d::{init_smooth, Solver1D, State1D};
use crate::solver3d::{
    build_domain, csv_err, lift_initial_data, write_binary, CrossSection, PerturbationSpec,
    Resolution, Solver3D, State3D,
};
use crate::thermo::{ThermoModel, ThermoParams};

/// Identifies the discretization in run metadata.
pub const SCHEME_VERSION: &str = "fv-central-heun/1";

/// Allowed growth between consecutive ε in a nonincreasing sequence.
pub const MONOTONE_SLACK: f64 = 1.05;
/// The smallest-ε value must be at most this fraction of the largest-ε one.
pub const DECREASE_FACTOR: f64 = 0.25;
/// Values below this are treated as zero by the verdict.
pub const VALUE_FLOOR: f64 = 1e-12;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "NSF_THREADS";

fn number_list<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum List {
        Numbers(Vec<f64>),
        Text(String),
    }
    match List::deserialize(d)? {
        List::Numbers(v) => Ok(v),
        List::Text(s) => s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| serde::de::Error::custom(format!("bad number {t:?}: {e}")))
            })
            .collect(),
    }
}

/// `[sweep]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Strictly decreasing; an array or a comma-separated string.
    #[serde(deserialize_with = "number_list")]
    pub epsilons: Vec<f64>,
    /// Velocity exponents in `[1, 2)`.
    #[serde(deserialize_with = "number_list")]
    pub r: Vec<f64>,
    pub t_final: f64,
    /// Output times after `t = 0`, equally spaced.
    pub outputs: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Write the final fields of every case.
    pub snapshots: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            epsilons: vec![0.5, 0.25, 0.125],
            r: vec![1.0, 1.5],
            t_final: 0.25,
            outputs: 50,
            seed: 0,
            out_dir: None,
            snapshots: true,
        }
    }
}

/// `[grid]` section: cross-section and cell counts, the same for every ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub cross_section: CrossSection,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        let r = Resolution::default();
        GridSection {
            cross_section: CrossSection::default(),
            n1: r.n1,
            n2: r.n2,
            n3: r.n3,
        }
    }
}

impl GridSection {
    pub fn resolution(&self) -> Resolution {
        Resolution {
            n1: self.n1,
            n2: self.n2,
            n3: self.n3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub thermo: ThermoParams,
    pub profile: ProfileSpec,
    pub perturbation: PerturbationSpec,
    pub sweep: SweepSection,
    pub grid: GridSection,
}

/// 1-based line of byte `offset`.
fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` inside `[section]` (or of the section header when `key` is
/// `None` or absent); 1 when neither appears.
fn line_of(text: &str, section: &str, key: Option<&str>) -> usize {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line
                .trim_matches(|c| c == '[' || c == ']')
                .trim()
                .to_string();
            if current == section && header.is_none() {
                header = Some(i + 1);
            }
            continue;
        }
        if let Some(k) = key {
            let in_section = current == section || current.starts_with(&format!("{section}."));
            if in_section {
                if let Some(rest) = line.strip_prefix(k) {
                    if rest.trim_start().starts_with('=') {
                        return i + 1;
                    }
                }
            }
        }
    }
    header.unwrap_or(1)
}

/// Parses and validates a sweep configuration; every error carries a line number.
pub fn parse_config(text: &str) -> Result<SweepConfig> {
    let cfg: SweepConfig = toml::from_str(text).map_err(|e| NsfError::Config {
        line: e.span().map(|s| line_at(text, s.start)).unwrap_or(1),
        msg: e.message().trim().to_string(),
    })?;
    validate(&cfg, text)?;
    Ok(cfg)
}

fn validate(cfg: &SweepConfig, text: &str) -> Result<()> {
    let err = |section: &str, key: Option<&str>, msg: String| NsfError::Config {
        line: line_of(text, section, key),
        msg,
    };
    let model =
        ThermoModel::try_from(&cfg.thermo).map_err(|e| err("thermo", None, e.to_string()))?;

    let s = &cfg.sweep;
    if s.epsilons.is_empty() {
        return Err(err(
            "sweep",
            Some("epsilons"),
            "epsilon list is empty".into(),
        ));
    }
    if let Some(e) = s.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(err(
            "sweep",
            Some("epsilons"),
            format!("epsilon {e} must be positive and finite"),
        ));
    }
    if let Some(w) = s.epsilons.windows(2).find(|w| w[1] >= w[0]) {
        return Err(err(
            "sweep",
            Some("epsilons"),
            format!(
                "epsilons must be strictly decreasing, got {} then {}",
                w[0], w[1]
            ),
        ));
    }
    if s.r.is_empty() {
        return Err(err("sweep", Some("r"), "r list is empty".into()));
    }
    if let Some(r) = s.r.iter().find(|r| !(1.0..2.0).contains(*r)) {
        return Err(err(
            "sweep",
            Some("r"),
            format!("r = {r} must lie in [1, 2)"),
        ));
    }
    if !(s.t_final > 0.0 && s.t_final.is_finite()) {
        return Err(err(
            "sweep",
            Some("t_final"),
            format!("t_final must be positive, got {}", s.t_final),
        ));
    }
    if s.outputs == 0 {
        return Err(err(
            "sweep",
            Some("outputs"),
            "outputs must be at least 1".into(),
        ));
    }

    let p = &cfg.perturbation;
    if !(p.delta >= 0.0 && p.delta.is_finite()) {
        return Err(err(
            "perturbation",
            Some("delta"),
            format!("delta must be nonnegative, got {}", p.delta),
        ));
    }
    if !(p.epsilon_exponent >= 0.0 && p.epsilon_exponent.is_finite()) {
        return Err(err(
            "perturbation",
            Some("epsilon_exponent"),
            format!(
                "epsilon_exponent must be nonnegative, got {}",
                p.epsilon_exponent
            ),
        ));
    }

    let domain = build_domain(cfg.grid.cross_section, s.epsilons[0], cfg.grid.resolution())
        .map_err(|e| err("grid", None, e.to_string()))?;
    let s1 = init_smooth(&model, &cfg.profile, cfg.grid.n3)
        .map_err(|e| err("profile", None, e.to_string()))?;
    lift_initial_data(&model, &s1, p, domain)
        .map_err(|e| err("perturbation", None, e.to_string()))?;
    Ok(())
}

pub fn load_config(path: &Path) -> Result<SweepConfig> {
    let text = fs::read_to_string(path).map_err(|e| NsfError::io(path, e))?;
    parse_config(&text)
}

/// Threads for a sweep: the smallest of `jobs`, the environment cap, the machine's
/// parallelism and the number of cases, and at least one.
pub fn thread_count(jobs: Option<usize>, env: Option<&str>, cases: usize) -> usize {
    let machine = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let env = env.and_then(|v| v.trim().parse::<usize>().ok());
    [jobs, env, Some(machine), Some(cases)]
        .into_iter()
        .flatten()
        .filter(|&n| n > 0)
        .min()
        .unwrap_or(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass,
    Fail,
    /// Fewer than two ε, so there is no trend to judge.
    Undetermined,
    /// At least one case did not finish.
    Error,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Undetermined => "UNDETERMINED",
            Verdict::Error => "ERROR",
        })
    }
}

/// Trend of one quantity across the ε list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricTrend {
    pub name: String,
    /// One value per ε, largest ε first.
    pub values: Vec<f64>,
    pub monotone: bool,
    /// `last / first`.
    pub decrease_ratio: f64,
    pub passed: bool,
}

impl MetricTrend {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        let monotone = values
            .windows(2)
            .all(|w| w[1] <= MONOTONE_SLACK * w[0] + VALUE_FLOOR);
        let (first, last) = match (values.first(), values.last()) {
            (Some(&f), Some(&l)) => (f, l),
            _ => (0.0, 0.0),
        };
        let decrease_ratio = if first > 0.0 { last / first } else { f64::NAN };
        let decreased = last <= DECREASE_FACTOR * first + VALUE_FLOOR;
        MetricTrend {
            name: name.into(),
            passed: values.len() >= 2 && monotone && decreased,
            values,
            monotone,
            decrease_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepVerdict {
    pub verdict: Verdict,
    pub metrics: Vec<MetricTrend>,
}

/// Verdict over per-ε reports ordered by decreasing ε. Uses the sup-in-time
/// density, temperature and relative-entropy values and the space-time velocity
/// norm for each `r`.
pub fn judge(reports: &[ScaledNormReport], failures: usize) -> SweepVerdict {
    let series = |f: &dyn Fn(&ScaledNormReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    let mut metrics = vec![
        MetricTrend::new("rho_sup", series(&|r| r.sup_t_density_norm)),
        MetricTrend::new("theta_sup", series(&|r| r.sup_t_temperature_norm)),
    ];
    if let Some(first) = reports.first() {
        for (i, r) in first.r_exponents.iter().enumerate() {
            metrics.push(MetricTrend::new(
                format!("u_r{r}"),
                series(&|rep| rep.velocity_norm_r[i]),
            ));
        }
    }
    metrics.push(MetricTrend::new(
        "rel_entropy_sup",
        series(&|r| r.sup_t_rel_entropy()),
    ));
    let verdict = if failures > 0 {
        Verdict::Error
    } else if reports.len() < 2 {
        Verdict::Undetermined
    } else if metrics.iter().all(|m| m.passed) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    SweepVerdict { verdict, metrics }
}

/// Outcome of one ε.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub epsilon: f64,
    pub report: ScaledNormReport,
    pub steps: usize,
    pub wall_seconds: f64,
    pub final_state: State3D,
    pub final_reference: State1D,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseFailure {
    pub epsilon: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseSummary {
    pub epsilon: f64,
    pub steps: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub scheme_version: String,
    pub crate_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub threads: usize,
    pub grid: Resolution,
    pub cross_section: CrossSection,
    /// Output times after `t = 0`; sup-in-time is the max over these and `t = 0`.
    pub outputs: usize,
    pub cases: Vec<CaseSummary>,
    pub config: SweepConfig,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    /// Completed cases, in the order of the configured ε list.
    pub cases: Vec<CaseResult>,
    pub failures: Vec<CaseFailure>,
    pub verdict: SweepVerdict,
    pub metadata: RunMetadata,
}

impl SweepReport {
    pub fn reports(&self) -> Vec<&ScaledNormReport> {
        self.cases.iter().map(|c| &c.report).collect()
    }
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Runs every ε of `config`, `jobs` at a time (further capped by `NSF_THREADS`).
/// A failing case is recorded in [`SweepReport::failures`] and the others still run.
pub fn run_sweep(config: &SweepConfig, jobs: Option<usize>) -> Result<SweepReport> {
    let model = ThermoModel::try_from(&config.thermo)?;
    let eps = &config.sweep.epsilons;
    let env = std::env::var(THREADS_ENV).ok();
    let threads = thread_count(jobs, env.as_deref(), eps.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| NsfError::InvalidParameter(format!("thread pool: {e}")))?;
    let started = unix_now();
    let results: Vec<Result<CaseResult>> = pool.install(|| {
        eps.par_iter()
            .map(|&e| run_case(&model, config, e))
            .collect()
    });

    let mut cases = Vec::new();
    let mut failures = Vec::new();
    for (r, &e) in results.into_iter().zip(eps) {
        match r {
            Ok(c) => cases.push(c),
            Err(err) => failures.push(CaseFailure {
                epsilon: e,
                message: err.to_string(),
            }),
        }
    }
    let reports: Vec<ScaledNormReport> = cases.iter().map(|c| c.report.clone()).collect();
    let verdict = judge(&reports, failures.len());
    let metadata = RunMetadata {
        scheme_version: SCHEME_VERSION.into(),
        crate_version: env!("CARGO_PKG_VERSION").into(),
        started_unix: started,
        finished_unix: unix_now(),
        threads,
        grid: config.grid.resolution(),
        cross_section: config.grid.cross_section,
        outputs: config.sweep.outputs,
        cases: cases
            .iter()
            .map(|c| CaseSummary {
                epsilon: c.epsilon,
                steps: c.steps,
                wall_seconds: c.wall_seconds,
            })
            .collect(),
        config: config.clone(),
    };
    Ok(SweepReport {
        cases,
        failures,
        verdict,
        metadata,
    })
}

/// One ε: the 3D run from lifted data and a 1D companion advanced with the same
/// steps, so the reference is available at every 3D time level.
pub fn run_case(model: &ThermoModel, config: &SweepConfig, epsilon: f64) -> Result<CaseResult> {
    let clock = Instant::now();
    let s = &config.sweep;
    let r = &s.r;
    let n3 = config.grid.n3;
    let mut s1 = init_smooth(model, &config.profile, n3)?;
    let domain = build_domain(config.grid.cross_section, epsilon, config.grid.resolution())?;
    let mut s3 = lift_initial_data(model, &s1, &config.perturbation, domain)?;
    let mut solver3 = Solver3D::new(*model, domain);
    let mut solver1 = Solver1D::new(*model, n3);

    let mut rows = vec![scaled_norms(model, &s3, &s1, r)?];
    let mut cumulative = vec![vec![0.0; r.len()]];
    let mut acc = vec![0.0; r.len()];
    let mut prev = velocity_deviation(&s3, &s1, r)?;
    let mut steps = 0;
    for k in 1..=s.outputs {
        let target = s.t_final * k as f64 / s.outputs as f64;
        while s3.time() < target {
            let remaining = target - s3.time();
            let dt = solver3.advance_stable(&mut s3, remaining)?;
            solver1.advance(&mut s1, dt, None)?;
            if dt == remaining || target - s3.time() <= 1e-9 * dt {
                s3.set_time(target);
            }
            s1.set_time(s3.time());
            let cur = velocity_deviation(&s3, &s1, r)?;
            for ((a, p), c) in acc.iter_mut().zip(&prev).zip(&cur) {
                *a += 0.5 * dt * (p + c);
            }
            prev = cur;
            steps += 1;
        }
        rows.push(scaled_norms(model, &s3, &s1, r)?);
        cumulative.push(acc.clone());
    }
    Ok(CaseResult {
        epsilon,
        report: ScaledNormReport::new(epsilon, r.clone(), rows, cumulative),
        steps,
        wall_seconds: clock.elapsed().as_secs_f64(),
        final_state: s3,
        final_reference: s1,
    })
}

/// Column names of `sweep.csv`.
pub fn csv_header(r_exponents: &[f64]) -> Vec<String> {
    let mut h = vec![
        "epsilon".to_string(),
        "time".into(),
        "rho_norm".into(),
        "theta_norm".into(),
    ];
    h.extend(r_exponents.iter().map(|r| format!("u_norm_r{r}")));
    h.extend(r_exponents.iter().map(|r| format!("u_spacetime_r{r}")));
    h.push("rel_entropy".into());
    h
}

/// Name of the snapshot directory of one ε.
pub fn case_dir_name(epsilon: f64) -> String {
    format!("eps_{epsilon}")
}

/// Writes `sweep.csv` (one row per ε and output time), `verdict.txt`,
/// `metadata.json` and, when enabled, `eps_<ε>/` snapshot directories into `dir`.
/// An existing `sweep.csv` is first moved to `sweep.csv.bak`.
pub fn emit_report(report: &SweepReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| NsfError::io(dir, e))?;
    let csv_path = dir.join("sweep.csv");
    if csv_path.exists() {
        let bak = dir.join("sweep.csv.bak");
        fs::rename(&csv_path, &bak).map_err(|e| NsfError::io(&bak, e))?;
    }
    let r = &report.metadata.config.sweep.r;
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_err(&csv_path, e))?;
    w.write_record(csv_header(r))
        .map_err(|e| csv_err(&csv_path, e))?;
    for case in &report.cases {
        let rep = &case.report;
        for (row, cum) in rep.rows.iter().zip(&rep.velocity_cumulative) {
            let mut rec = vec![
                rep.epsilon.to_string(),
                row.time.to_string(),
                row.rho_norm.to_string(),
                row.theta_norm.to_string(),
            ];
            rec.extend(row.u_norm.iter().map(|v| v.to_string()));
            rec.extend(cum.iter().map(|v| v.to_string()));
            rec.push(row.e_scaled.to_string());
            w.write_record(&rec).map_err(|e| csv_err(&csv_path, e))?;
        }
    }
    w.flush().map_err(|e| NsfError::io(&csv_path, e))?;

    let verdict_path = dir.join("verdict.txt");
    fs::write(&verdict_path, verdict_text(report)).map_err(|e| NsfError::io(&verdict_path, e))?;

    let meta_path = dir.join("metadata.json");
    let meta = serde_json::to_string_pretty(&report.metadata)
        .map_err(|e| NsfError::io(&meta_path, std::io::Error::other(e)))?;
    fs::write(&meta_path, meta).map_err(|e| NsfError::io(&meta_path, e))?;

    if report.metadata.config.sweep.snapshots {
        for case in &report.cases {
            let sub = dir.join(case_dir_name(case.epsilon));
            fs::create_dir_all(&sub).map_err(|e| NsfError::io(&sub, e))?;
            let bin = sub.join("final.nsf3");
            let file = fs::File::create(&bin).map_err(|e| NsfError::io(&bin, e))?;
            write_binary(&case.final_state, std::io::BufWriter::new(file))
                .map_err(|e| NsfError::io(&bin, e))?;
            write_state1d(&case.final_reference, &sub.join("reference_1d.csv"))?;
        }
    }
    Ok(())
}

/// Cell-centre CSV of a 1D state: `y, rho, u, theta`.
pub fn write_state1d(state: &State1D, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["y", "rho", "u", "theta"])
        .map_err(|e| csv_err(path, e))?;
    for i in 0..state.n() {
        w.write_record([
            state.cell_center(i).to_string(),
            state.rho()[i].to_string(),
            state.u()[i].to_string(),
            state.theta()[i].to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| NsfError::io(path, e))
}

/// Human-readable verdict with the per-metric series.
pub fn verdict_text(report: &SweepReport) -> String {
    let v = &report.verdict;
    let mut out = format!("verdict: {}\n", v.verdict);
    let eps: Vec<String> = report.cases.iter().map(|c| c.epsilon.to_string()).collect();
    out += &format!("epsilons: {}\n", eps.join(" "));
    out += &format!(
        "rule: each value <= {MONOTONE_SLACK} x previous, last <= {DECREASE_FACTOR} x first (values below {VALUE_FLOOR:e} count as 0)\n"
    );
    out += &format!(
        "sup in time over t = 0 and {} equally spaced outputs; velocity norms over (0, T) x pipe\n",
        report.metadata.outputs
    );
    for m in &v.metrics {
        let vals: Vec<String> = m.values.iter().map(|x| format!("{x:.6e}")).collect();
        out += &format!(
            "{:<16} {}  monotone={} last/first={:.4} {}\n",
            m.name,
            vals.join(" "),
            m.monotone,
            m.decrease_ratio,
            if m.passed { "PASS" } else { "FAIL" }
        );
    }
    for f in &report.failures {
        out += &format!("failed: epsilon {}: {}\n", f.epsilon, f.message);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, SweepConfig::default());
        assert_eq!(cfg.sweep.epsilons, vec![0.5, 0.25, 0.125]);
        assert_eq!(cfg.grid.resolution(), Resolution::default());
    }

    #[test]
    fn config_errors_carry_lines() {
        let text = "[sweep]\nt_final = 0.1\nepsilons = \"0.5,0.5\"\n";
        match parse_config(text) {
            Err(NsfError::Config { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("strictly decreasing"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        match parse_config("[sweep]\n\nr = [1.0, 2.0]\n") {
            Err(NsfError::Config { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("[1, 2)"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        match parse_config("[sweep]\nbogus = 1\n") {
            Err(NsfError::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_config("[profile.u]\nmean = 0.1\n") {
            Err(NsfError::Config { line, msg }) => {
                assert_eq!(line, 1);
                assert!(msg.contains("boundary"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_config("[thermo]\nmu0 = -1.0\n"),
            Err(NsfError::Config { line: 1, .. })
        ));
    }

    #[test]
    fn string_and_array_lists_agree() {
        let a = parse_config("[sweep]\nepsilons = [1, 0.5]\n").unwrap();
        let b = parse_config("[sweep]\nepsilons = \"1, 0.5\"\n").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn thread_count_takes_the_smallest_cap() {
        assert_eq!(thread_count(Some(1), None, 3), 1);
        assert_eq!(thread_count(None, Some("1"), 3), 1);
        assert_eq!(thread_count(Some(8), Some("junk"), 1), 1);
        assert!(thread_count(None, None, 3) >= 1);
        assert_eq!(thread_count(Some(0), None, 2).min(1), 1);
    }

    #[test]
    fn verdict_rules() {
        let pass = MetricTrend::new("a", vec![1.0, 0.5, 0.2]);
        assert!(pass.passed && pass.monotone);
        let slack = MetricTrend::new("b", vec![1.0, 1.04, 0.2]);
        assert!(slack.passed);
        let bump = MetricTrend::new("c", vec![1.0, 1.06, 0.2]);
        assert!(!bump.monotone && !bump.passed);
        let shallow = MetricTrend::new("d", vec![1.0, 0.5, 0.26]);
        assert!(shallow.monotone && !shallow.passed);
        let zeros = MetricTrend::new("e", vec![1e-30, 2e-30, 1e-30]);
        assert!(zeros.passed);
        assert!(!MetricTrend::new("f", vec![1.0]).passed);
    }

    fn tiny(delta: f64, eps: &str) -> SweepConfig {
        parse_config(&format!(
            "[sweep]\nepsilons = \"{eps}\"\nt_final = 0.01\noutputs = 2\n\
             [grid]\nn1 = 4\nn2 = 4\nn3 = 16\n[perturbation]\ndelta = {delta}\n"
        ))
        .unwrap()
    }

    #[test]
    fn unperturbed_sweep_passes_trivially() {
        let report = run_sweep(&tiny(0.0, "0.5, 0.25"), Some(1)).unwrap();
        assert_eq!(
            report.verdict.verdict,
            Verdict::Pass,
            "{}",
            verdict_text(&report)
        );
        for m in &report.verdict.metrics {
            assert!(m.values.iter().all(|v| *v < VALUE_FLOOR), "{m:?}");
        }
    }

    #[test]
    fn single_epsilon_is_undetermined_and_runs_are_deterministic() {
        let cfg = tiny(0.05, "0.5");
        let a = run_sweep(&cfg, Some(1)).unwrap();
        let b = run_sweep(&cfg, Some(1)).unwrap();
        assert_eq!(a.verdict.verdict, Verdict::Undetermined);
        assert_eq!(a.reports(), b.reports());
        assert_eq!(a.cases[0].final_state, b.cases[0].final_state);
        assert!(a.cases[0].report.velocity_norm_r[0] > 0.0);
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(0.05, "0.5,0.25");
        let report = run_sweep(&cfg, Some(1)).unwrap();
        emit_report(&report, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], csv_header(&cfg.sweep.r).join(","));
        assert_eq!(lines.len(), 1 + 2 * (cfg.sweep.outputs + 1));
        assert!(fs::read_to_string(dir.path().join("verdict.txt"))
            .unwrap()
            .starts_with("verdict: "));
        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("metadata.json")).unwrap())
                .unwrap();
        assert_eq!(meta["scheme_version"], SCHEME_VERSION);
        for c in &report.cases {
            let sub = dir.path().join(case_dir_name(c.epsilon));
            assert!(sub.join("final.nsf3").exists());
            assert!(sub.join("reference_1d.csv").exists());
        }

        let empty = SweepReport {
            cases: vec![],
            failures: vec![],
            verdict: judge(&[], 0),
            metadata: report.metadata.clone(),
        };
        emit_report(&empty, dir.path()).unwrap();
        let bak = fs::read_to_string(dir.path().join("sweep.csv.bak")).unwrap();
        assert_eq!(bak, csv);
        let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }
}
