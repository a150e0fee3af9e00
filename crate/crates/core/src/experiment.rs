//! Experiment configuration, runs and file outputs for the cruise-control study.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acc::{grade_observer, AccController, AccParams, ControllerKind, FilterParams};
use crate::error::{Error, Result};
use crate::filter::RobustnessParams;
use crate::integrate::{simulate, RunFailure, SimConfig, Trajectory};
use crate::metrics::{compare_batch, report_from_trajectory, BatchComparison, RunReport, DEFAULT_SKIP};
use crate::observer::{envelope_with_rate, error_energy, grade_from_estimate, AlphaDConvention, ObserverConfig};
use crate::road::{run_seed, RoadProfile, DEFAULT_RATE_BOUND};
use crate::svg::{self, Panel, Series};

pub const TRAJECTORY_HEADER: &str = "t,D,v,u,slack,theta,theta_hat,d_true,d_hat,h,h_de";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserverSection {
    /// Linear observer gain `p(x) = L_r·x`.
    #[serde(rename = "Lr")]
    pub lr: [f64; 2],
    pub convention: AlphaDConvention,
}

impl Default for ObserverSection {
    fn default() -> Self {
        Self {
            lr: [3.0, 3.0],
            convention: AlphaDConvention::Derived,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialState {
    #[serde(rename = "D")]
    pub gap: f64,
    pub v: f64,
}

impl Default for InitialState {
    fn default() -> Self {
        Self { gap: 80.0, v: 20.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Transient excluded from the smoothness metric (s).
    pub skip: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { skip: DEFAULT_SKIP }
    }
}

fn default_rate_bound() -> f64 {
    DEFAULT_RATE_BOUND
}

/// Road selection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RoadSpec {
    #[default]
    ThreeSection,
    /// Seeded random road; the seed comes from the experiment.
    Random {
        #[serde(default = "default_rate_bound")]
        rate_bound: f64,
    },
    Constant {
        theta: f64,
    },
    /// Knots given inline or read from a two-column file.
    Table {
        #[serde(default)]
        knots: Vec<[f64; 2]>,
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default = "default_rate_bound")]
        rate_bound: f64,
    },
}


impl RoadSpec {
    /// Builds the profile for run `index` of an experiment seeded with `seed`.
    pub fn build(&self, seed: u64, index: u64, t_end: f64) -> Result<RoadProfile> {
        match self {
            RoadSpec::ThreeSection => Ok(RoadProfile::three_section()),
            RoadSpec::Random { rate_bound } => RoadProfile::random(run_seed(seed, index), t_end, *rate_bound),
            RoadSpec::Constant { theta } => RoadProfile::constant(*theta),
            RoadSpec::Table {
                knots,
                path,
                rate_bound,
            } => match (knots.is_empty(), path) {
                (false, None) => RoadProfile::from_knots(
                    crate::road::RoadKind::Table,
                    knots.iter().map(|k| (k[0], k[1])).collect(),
                    *rate_bound,
                ),
                (true, Some(p)) => {
                    let text = fs::read_to_string(p)
                        .map_err(|e| Error::config("road.path", format!("{}: {e}", p.display())))?;
                    RoadProfile::from_table(&text, *rate_bound)
                }
                _ => Err(Error::config("road", "table roads need exactly one of `knots` or `path`")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub controller: ControllerKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub acc: AccParams,
    pub filter: FilterParams,
    pub observer: ObserverSection,
    pub initial: InitialState,
    pub sim: SimConfig,
    pub metrics: MetricsSection,
    pub road: RoadSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            controller: ControllerKind::Dopcbf,
            seed: 0,
            output_dir: PathBuf::from("out"),
            acc: AccParams::default(),
            filter: FilterParams::default(),
            observer: ObserverSection::default(),
            initial: InitialState::default(),
            sim: SimConfig::default(),
            metrics: MetricsSection::default(),
            road: RoadSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e.span().map_or_else(|| "config".to_string(), |s| field_at(text, s.start));
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    /// Checks every section before any run starts.
    pub fn validate(&self) -> Result<()> {
        self.acc.validate()?;
        self.filter.validate()?;
        self.sim.validate()?;
        let obs = self.observer_config()?;
        RobustnessParams::new(self.filter.sigma, self.filter.omega, self.filter.nu, obs.alpha_d())
            .validate(self.filter.alpha)?;
        if !self.initial.gap.is_finite() {
            return Err(Error::config("initial.D", "must be finite"));
        }
        if !(self.initial.v >= 0.0) || !self.initial.v.is_finite() {
            return Err(Error::config("initial.v", "must be finite and nonnegative"));
        }
        if !(self.metrics.skip >= 0.0) || self.metrics.skip >= self.sim.t_end {
            return Err(Error::config("metrics.skip", "must lie in [0, sim.t_end)"));
        }
        self.road.build(self.seed, 0, self.sim.t_end)?;
        Ok(())
    }

    pub fn observer_config(&self) -> Result<ObserverConfig> {
        grade_observer(
            &self.acc,
            self.observer.lr,
            self.filter.omega,
            self.filter.nu,
            self.observer.convention,
        )
    }

    pub fn controller(&self, kind: ControllerKind) -> Result<AccController> {
        AccController::new(kind, &self.acc, &self.filter, &self.observer_config()?)
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.initial.gap, self.initial.v])
    }
}

/// Best-effort dotted path of the table/key enclosing byte offset `pos`.
fn field_at(text: &str, pos: usize) -> String {
    let mut section = String::new();
    let mut key = String::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            section = trimmed.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = trimmed.split_once('=') {
            key = k.trim().to_string();
        }
        offset += line.len();
        if offset > pos {
            break;
        }
    }
    match (section.is_empty(), key.is_empty()) {
        (true, true) => "config".into(),
        (true, false) => key,
        (false, true) => section,
        (false, false) => format!("{section}.{key}"),
    }
}

/// One closed-loop run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub kind: ControllerKind,
    pub road: RoadProfile,
    pub trajectory: Trajectory,
    pub report: RunReport,
}

impl RunOutput {
    pub fn failures(&self) -> &[RunFailure] {
        &self.trajectory.failures
    }
}

pub fn run_single(cfg: &ExperimentConfig, kind: ControllerKind, road: &RoadProfile) -> Result<RunOutput> {
    let controller = cfg.controller(kind)?;
    let observer = cfg.observer_config()?;
    let acc = cfg.acc;
    let road_fn = road.clone();
    let traj = simulate(
        controller.plant(),
        &controller,
        &observer,
        move |t| DVector::from_element(1, acc.grade_disturbance(road_fn.eval(t))),
        &cfg.initial_state(),
        &cfg.sim,
    )?;
    let report = report_from_trajectory(kind.name(), &traj, cfg.sim.record_dt(), cfg.metrics.skip)?;
    Ok(RunOutput {
        kind,
        road: road.clone(),
        trajectory: traj,
        report,
    })
}

/// Largest ratio of the measured observer error energy to its envelope,
/// with the disturbance-rate bound `ω = g·max|θ̇|` of the road. Samples after
/// the first state clamp are excluded.
pub fn max_envelope_ratio(run: &RunOutput, cfg: &ExperimentConfig) -> Result<f64> {
    let obs = cfg.observer_config()?;
    let omega = cfg.acc.g * run.road.max_rate();
    let traj = &run.trajectory;
    let ve0 = error_energy(&traj.disturbances[0], &traj.estimates[0]);
    let mut worst: f64 = 0.0;
    // The bound assumes the modelled dynamics, which a state clamp breaks.
    let valid = traj.first_clamp.map_or(traj.len(), |tc| traj.times.partition_point(|&t| t < tc));
    for i in 0..valid {
        let ve = error_energy(&traj.disturbances[i], &traj.estimates[i]);
        let bound = envelope_with_rate(obs.alpha_d(), omega, obs.nu, ve0, traj.times[i])?;
        if bound > 0.0 {
            worst = worst.max(ve / bound);
        } else if ve > 0.0 {
            worst = f64::INFINITY;
        }
    }
    Ok(worst)
}

/// Paired result of one random road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRun {
    pub index: u64,
    pub seed: u64,
    pub docbf: RunOutcome,
    pub dopcbf: RunOutcome,
}

/// Report of a run, or the error that stopped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Completed(RunReport),
    Aborted(String),
}

impl RunOutcome {
    pub fn report(&self) -> Option<&RunReport> {
        match self {
            RunOutcome::Completed(r) => Some(r),
            RunOutcome::Aborted(_) => None,
        }
    }
}

fn outcome(cfg: &ExperimentConfig, kind: ControllerKind, road: &RoadProfile) -> RunOutcome {
    match run_single(cfg, kind, road) {
        Ok(r) => RunOutcome::Completed(r.report),
        Err(e) => RunOutcome::Aborted(e.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerTally {
    pub completed: usize,
    pub aborted: usize,
    pub violations: usize,
    /// Runs with at least one failed controller tick.
    pub runs_with_qp_failures: usize,
    pub worst_min_h: f64,
    pub worst_min_hde: f64,
    pub mean_rms_du: f64,
}

fn tally(outcomes: &[&RunOutcome]) -> ControllerTally {
    let reports: Vec<&RunReport> = outcomes.iter().filter_map(|o| o.report()).collect();
    let n = reports.len();
    ControllerTally {
        completed: n,
        aborted: outcomes.len() - n,
        violations: reports.iter().filter(|r| r.violation).count(),
        runs_with_qp_failures: reports.iter().filter(|r| r.qp_failures > 0).count(),
        worst_min_h: reports.iter().map(|r| r.min_h).fold(f64::INFINITY, f64::min),
        worst_min_hde: reports.iter().map(|r| r.min_hde).fold(f64::INFINITY, f64::min),
        mean_rms_du: if n == 0 {
            f64::NAN
        } else {
            reports.iter().map(|r| r.rms_du).sum::<f64>() / n as f64
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub n: u64,
    pub master_seed: u64,
    pub docbf: ControllerTally,
    pub dopcbf: ControllerTally,
    /// Smoothness improvement of the grade-parameterized controller over the worst-case one.
    pub comparison: Option<BatchComparison>,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub runs: Vec<PairedRun>,
    pub summary: BatchSummary,
}

/// Runs both observer-based controllers on `n` random roads.
///
/// Runs execute in parallel; results are ordered by run index so the output
/// does not depend on scheduling.
pub fn run_batch(cfg: &ExperimentConfig, n: u64, master_seed: u64) -> Result<BatchOutput> {
    if n == 0 {
        return Err(Error::config("n", "must be at least 1"));
    }
    let rate_bound = match cfg.road {
        RoadSpec::Random { rate_bound } => rate_bound,
        _ => DEFAULT_RATE_BOUND,
    };
    cfg.validate()?;
    let runs: Vec<PairedRun> = (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = run_seed(master_seed, i);
            let road = RoadProfile::random(seed, cfg.sim.t_end, rate_bound);
            let (docbf, dopcbf) = match road {
                Ok(r) => (
                    outcome(cfg, ControllerKind::Docbf, &r),
                    outcome(cfg, ControllerKind::Dopcbf, &r),
                ),
                Err(e) => (RunOutcome::Aborted(e.to_string()), RunOutcome::Aborted(e.to_string())),
            };
            PairedRun {
                index: i,
                seed,
                docbf,
                dopcbf,
            }
        })
        .collect();

    let paired: Vec<(RunReport, RunReport)> = runs
        .iter()
        .filter_map(|r| Some((r.docbf.report()?.clone(), r.dopcbf.report()?.clone())))
        .collect();
    let (a, b): (Vec<RunReport>, Vec<RunReport>) = paired.into_iter().unzip();
    let comparison = match compare_batch(&a, &b) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("no comparable pairs: {e}");
            None
        }
    };
    let summary = BatchSummary {
        n,
        master_seed,
        docbf: tally(&runs.iter().map(|r| &r.docbf).collect::<Vec<_>>()),
        dopcbf: tally(&runs.iter().map(|r| &r.dopcbf).collect::<Vec<_>>()),
        comparison,
    };
    Ok(BatchOutput { runs, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub min_h: f64,
    pub min_hde: f64,
    pub rms_du: f64,
    /// `ok`, or why the value was skipped.
    pub status: String,
}

/// One run per σ on the configured road with the configured controller.
pub fn sweep_sigma(cfg: &ExperimentConfig, sigmas: &[f64]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let road = cfg.road.build(cfg.seed, 0, cfg.sim.t_end)?;
    let rows = sigmas
        .par_iter()
        .map(|&sigma| {
            let mut c = cfg.clone();
            c.filter.sigma = sigma;
            let skipped = |status: String| SweepRow {
                sigma,
                min_h: f64::NAN,
                min_hde: f64::NAN,
                rms_du: f64::NAN,
                status,
            };
            if let Err(e) = c.validate() {
                log::warn!("sigma = {sigma} skipped: {e}");
                return skipped(format!("skipped: {e}"));
            }
            match run_single(&c, c.controller, &road) {
                Ok(r) => SweepRow {
                    sigma,
                    min_h: r.report.min_h,
                    min_hde: r.report.min_hde,
                    rms_du: r.report.rms_du,
                    status: if r.report.qp_failures == 0 {
                        "ok".into()
                    } else {
                        format!("qp_failures={}", r.report.qp_failures)
                    },
                },
                Err(e) => skipped(format!("aborted: {e}")),
            }
        })
        .collect();
    Ok(rows)
}

/// Trajectory as CSV with the fixed column order of [`TRAJECTORY_HEADER`].
pub fn trajectory_csv(run: &RunOutput, g: f64) -> String {
    let t = &run.trajectory;
    let mut out = String::with_capacity(t.len() * 160);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for i in 0..t.len() {
        let time = t.times[i];
        let d_hat = t.estimates[i][0];
        let b = t.barrier_values[i];
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            time,
            t.states[i][0],
            t.states[i][1],
            t.controls[i].u[0],
            t.controls[i].slack,
            run.road.eval(time),
            grade_from_estimate(d_hat, g),
            t.disturbances[i][0],
            d_hat,
            b.h,
            b.h_de
        );
    }
    out
}

pub fn trajectory_plot(run: &RunOutput, g: f64) -> String {
    let t = &run.trajectory;
    let col = |f: &dyn Fn(usize) -> f64| (0..t.len()).map(f).collect::<Vec<f64>>();
    let name = run.kind.name();
    let panels = [
        Panel::new(&format!("barrier ({name})"), "t (s)", "h")
            .with(Series::line("h", t.times.clone(), col(&|i| t.barrier_values[i].h)))
            .with(Series::line("h_de", t.times.clone(), col(&|i| t.barrier_values[i].h_de)))
            .with_reference(0.0),
        Panel::new("road grade", "t (s)", "rad")
            .with(Series::line("theta", t.times.clone(), col(&|i| run.road.eval(t.times[i]))))
            .with(Series::line(
                "theta_hat",
                t.times.clone(),
                col(&|i| grade_from_estimate(t.estimates[i][0], g)),
            )),
        Panel::new("gap", "t (s)", "D (m)").with(Series::line("D", t.times.clone(), col(&|i| t.states[i][0]))),
        Panel::new("speed", "t (s)", "v (m/s)").with(Series::line("v", t.times.clone(), col(&|i| t.states[i][1]))),
    ];
    svg::render(&panels, 900.0, 230.0)
}

#[derive(Serialize)]
struct RunFile<'a> {
    report: Option<&'a RunReport>,
    failures: &'a [RunFailure],
    error: Option<String>,
    config: &'a ExperimentConfig,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

/// Writes `trajectory.csv`, `report.json` and `plot.svg`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, run: &RunOutput) -> Result<()> {
    ensure_dir(dir)?;
    write(&dir.join("trajectory.csv"), &trajectory_csv(run, cfg.acc.g))?;
    write(
        &dir.join("report.json"),
        &to_json(&RunFile {
            report: Some(&run.report),
            failures: run.failures(),
            error: None,
            config: cfg,
        }),
    )?;
    write(&dir.join("plot.svg"), &trajectory_plot(run, cfg.acc.g))
}

/// Writes `report.json` for a run that aborted before producing a trajectory.
pub fn write_run_error(dir: &Path, cfg: &ExperimentConfig, err: &Error) -> Result<()> {
    ensure_dir(dir)?;
    write(
        &dir.join("report.json"),
        &to_json(&RunFile {
            report: None,
            failures: &[],
            error: Some(err.to_string()),
            config: cfg,
        }),
    )
}

pub fn summary_json(summary: &BatchSummary) -> String {
    to_json(summary)
}

pub fn per_run_csv(runs: &[PairedRun]) -> String {
    let mut out = String::from("index,seed,controller,status,rms_du,min_h,min_hde,violation,qp_failures\n");
    for r in runs {
        for (name, o) in [("docbf", &r.docbf), ("dopcbf", &r.dopcbf)] {
            match o {
                RunOutcome::Completed(rep) => {
                    let _ = writeln!(
                        out,
                        "{},{},{},ok,{},{},{},{},{}",
                        r.index, r.seed, name, rep.rms_du, rep.min_h, rep.min_hde, rep.violation, rep.qp_failures
                    );
                }
                RunOutcome::Aborted(msg) => {
                    let _ = writeln!(
                        out,
                        "{},{},{},aborted: {},,,,,",
                        r.index,
                        r.seed,
                        name,
                        msg.replace([',', '\n'], ";")
                    );
                }
            }
        }
    }
    out
}

pub fn write_batch(dir: &Path, out: &BatchOutput) -> Result<()> {
    ensure_dir(dir)?;
    write(&dir.join("summary.json"), &summary_json(&out.summary))?;
    write(&dir.join("per_run.csv"), &per_run_csv(&out.runs))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("sigma,min_h,min_hde,rms_du,status\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.sigma,
            r.min_h,
            r.min_hde,
            r.rms_du,
            r.status.replace([',', '\n'], ";")
        );
    }
    out
}

pub fn sweep_plot(rows: &[SweepRow]) -> String {
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.min_h.is_finite()).collect();
    let xs: Vec<f64> = ok.iter().map(|r| r.sigma.log10()).collect();
    let panels = [
        Panel::new("barrier minimum vs sigma", "log10 sigma", "m")
            .with(Series::points("min h", xs.clone(), ok.iter().map(|r| r.min_h).collect()))
            .with(Series::points("min h_de", xs.clone(), ok.iter().map(|r| r.min_hde).collect()))
            .with_reference(0.0),
        Panel::new("control smoothness vs sigma", "log10 sigma", "RMS du/dt (N/s)")
            .with(Series::points("rms du/dt", xs, ok.iter().map(|r| r.rms_du).collect())),
    ];
    svg::render(&panels, 700.0, 260.0)
}

pub fn write_sweep(dir: &Path, rows: &[SweepRow]) -> Result<()> {
    ensure_dir(dir)?;
    write(&dir.join("sweep.csv"), &sweep_csv(rows))?;
    write(&dir.join("sweep.svg"), &sweep_plot(rows))
}
