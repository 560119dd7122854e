//! Command-line front end: configuration, dispatch and reports.
//!
//! Reports are split into a `header` (version, wall time) and a `payload`
//! that is a pure function of the effective configuration and seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::availability::AvailabilityModel;
use crate::error::{Error, Result};
use crate::experiments::lower_bound::{lb_best_oblivious, lower_bound_sweep, write_sweep_csv, SearchSpace};
use crate::experiments::{empirical_poa_sweep, PoAGate};
use crate::learning::{EmpiricalDistribution, LearnerSpec, Mode};
use crate::mechanism::{BidProfile, ComposedScenario, MechValues, Mechanism};
use crate::rng;
use crate::scalar::Scalar;
use crate::sinr::SinrInstance;
use crate::smoothness::eon::{check_lemma_chain_eon, uniform_opponents, ChainOptions, WReading};
use crate::smoothness::gap::{correlation_gap, random_combination, random_dmr_valuation};
use crate::smoothness::{value_profiles, verify_smoothness, SmoothnessParams};
use crate::valuation::{SetFunction, Valuation};
use crate::DEFAULT_BUDGET;

/// Version of the payload layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Exit status of a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit status when a verification found a counterexample.
pub const EXIT_COUNTEREXAMPLE: i32 = 2;
/// Exit status for configuration and runtime errors.
pub const EXIT_ERROR: i32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    VerifySmoothness,
    CorrelationGap,
    LowerBound,
    Sinr,
    LemmaCheck,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::VerifySmoothness => "verify-smoothness",
            Experiment::CorrelationGap => "correlation-gap",
            Experiment::LowerBound => "lower-bound",
            Experiment::Sinr => "sinr",
            Experiment::LemmaCheck => "lemma-check",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Mc,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => Mode::Exact,
            ModeArg::Mc => Mode::Mc,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "admission", version, about = "Oblivious learning and smoothness checks for mechanisms with stochastic admission")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run no-regret learning and compare welfare with the optimum.
    Simulate(CommonArgs),
    /// Exhaustively check weak smoothness of one mechanism.
    VerifySmoothness(CommonArgs),
    /// Correlation gap of explicit or random DMR instances.
    CorrelationGap(CommonArgs),
    /// Best oblivious bid on the grouped-items instance.
    LowerBound(CommonArgs),
    /// Channel-access smoothness on SINR geometries.
    Sinr(CommonArgs),
    /// Numerical check of the everybody-or-nobody deviation inequalities.
    LemmaCheck(CommonArgs),
}

impl Command {
    pub fn split(&self) -> (Experiment, &CommonArgs) {
        match self {
            Command::Simulate(a) => (Experiment::Simulate, a),
            Command::VerifySmoothness(a) => (Experiment::VerifySmoothness, a),
            Command::CorrelationGap(a) => (Experiment::CorrelationGap, a),
            Command::LowerBound(a) => (Experiment::LowerBound, a),
            Command::Sinr(a) => (Experiment::Sinr, a),
            Command::LemmaCheck(a) => (Experiment::LemmaCheck, a),
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// JSON configuration; built-in defaults are used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Enumeration budget: exact mode when at most this many terms.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Directory for the report and CSV files.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Monte Carlo sample count.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Smoothness λ (verify-smoothness, lemma-check).
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu1: Option<f64>,
    #[arg(long)]
    pub mu2: Option<f64>,
    /// Comma-separated k values (lower-bound).
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// Rounds per run (simulate).
    #[arg(long)]
    pub horizon: Option<usize>,
}

/// Mechanism and valuation profiles for `verify-smoothness`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct SmoothnessSection<S> {
    pub mechanism: Mechanism<S>,
    /// Values of the top outcome; every combination is checked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<S>>,
    /// Explicit profiles (override `levels`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<Vec<MechValues<S>>>,
    pub params: SmoothnessParams<S>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields, bound = "S: Scalar")]
pub enum GapSection<S> {
    Explicit {
        valuation: Valuation<S>,
        xs: Vec<Vec<usize>>,
        alphas: Vec<S>,
    },
    /// Random monotone DMR instances; the ratio is gated at `e/(e−1)`.
    Random {
        instances: usize,
        max_factors: usize,
        max_len: usize,
        max_k: usize,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundSection {
    pub ks: Vec<usize>,
    /// Also run the unrestricted search for `k ≤ 6` and compare.
    #[serde(default)]
    pub unrestricted_check: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields, bound = "S: Scalar")]
pub enum SinrSection<S> {
    Instance {
        instance: SinrInstance<S>,
    },
    Random {
        instances: usize,
        links: usize,
        side: S,
        min_len: S,
        max_len: S,
        power: S,
        alpha_pl: S,
        beta: S,
        #[serde(default)]
        noise: S,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct LemmaSection<S> {
    pub params: SmoothnessParams<S>,
    #[serde(default)]
    pub reading: WReading,
    /// Also evaluate the other reading of `w` and report it (not gated).
    #[serde(default = "yes")]
    pub report_alternate: bool,
    /// Opponent bid profiles with weights; all profiles uniformly if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opponents: Option<Vec<(BidProfile, S)>>,
}

fn yes() -> bool {
    true
}

/// Configuration file. Sections irrelevant to the chosen subcommand are
/// ignored; missing ones fall back to built-in defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct Config<S> {
    /// When present, must name the subcommand being run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ComposedScenario<S>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learner: Option<LearnerSpec<S>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<PoAGate<S>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<SmoothnessSection<S>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<GapSection<S>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<LowerBoundSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinr: Option<SinrSection<S>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemma: Option<LemmaSection<S>>,
}

/// Parses JSON text. Malformed text yields [`Error::Parse`] with its
/// position; well-formed text with bad content yields [`Error::Validation`]
/// naming the offending path.
pub fn parse_config_str(text: &str) -> Result<Config<f64>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    match serde_path_to_error::deserialize::<_, Config<f64>>(de) {
        Ok(c) => Ok(c),
        Err(e) => {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if inner.is_data() {
                Err(Error::Validation {
                    field: if path == "." { "config".into() } else { path },
                    message: inner.to_string(),
                })
            } else {
                Err(Error::Parse {
                    line: inner.line(),
                    column: inner.column(),
                    message: inner.to_string(),
                })
            }
        }
    }
}

pub fn parse_config(path: &Path) -> Result<Config<f64>> {
    parse_config_str(&fs::read_to_string(path)?)
}

/// Two-bidder, two-item first-price scenario on the quarter grid with a
/// budget-additive and a unit-demand bidder.
pub fn default_scenario(availability: AvailabilityModel<f64>) -> Result<ComposedScenario<f64>> {
    let grid: Vec<f64> = (0..=8).map(|k| k as f64 * 0.25).collect();
    let mech = Mechanism::first_price(2, grid)?;
    let budget_additive = Valuation::set_function(
        2,
        SetFunction::BudgetAdditive {
            values: vec![2.0, 1.5],
            cap: 3.0,
        },
    )?;
    let unit_demand = Valuation::xos(
        crate::lattice::ProductLattice::boolean(2),
        vec![vec![vec![0.0, 1.5], vec![0.0, 0.0]], vec![vec![0.0, 0.0], vec![0.0, 2.0]]],
    )?;
    ComposedScenario::new(vec![mech.clone(), mech], vec![budget_additive, unit_demand], availability)
}

fn default_smoothness() -> Result<SmoothnessSection<f64>> {
    Ok(SmoothnessSection {
        mechanism: Mechanism::first_price(2, vec![0.0, 1.0, 2.0])?,
        levels: Some(vec![0.0, 2.0]),
        profiles: None,
        params: SmoothnessParams::new(0.5, 1.0, 0.0)?,
    })
}

/// Settings shared by every subcommand after merging flags and config.
#[derive(Clone, Debug)]
struct Effective {
    seed: u64,
    budget: u64,
    mode: Mode,
    samples: usize,
    out_dir: PathBuf,
}

/// Versioned report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub header: ReportHeader,
    pub payload: ReportPayload,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportHeader {
    pub artifact_version: String,
    pub wall_time_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportPayload {
    pub schema_version: u32,
    pub experiment: Experiment,
    /// Effective configuration after defaults and flag overrides.
    pub config: Value,
    pub seed: u64,
    pub mode: Mode,
    pub samples: Option<usize>,
    pub budget: u64,
    /// True when nothing was refuted.
    pub verified: bool,
    pub result: Value,
    /// Files written next to the report, relative to the output directory.
    pub files: Vec<String>,
}

/// Checks a report against the published layout.
pub fn validate_report(text: &str) -> Result<RunReport> {
    let report: RunReport = serde_json::from_str(text).map_err(|e| Error::Validation {
        field: "report".into(),
        message: e.to_string(),
    })?;
    if report.payload.schema_version != SCHEMA_VERSION {
        return Err(Error::Validation {
            field: "payload.schema_version".into(),
            message: format!("expected {SCHEMA_VERSION}, found {}", report.payload.schema_version),
        });
    }
    if !report.payload.result.is_object() {
        return Err(Error::Validation {
            field: "payload.result".into(),
            message: "must be an object".into(),
        });
    }
    Ok(report)
}

/// Report file name inside the output directory.
pub fn report_file(experiment: Experiment) -> String {
    format!("{}-report.json", experiment.name())
}

struct Outcome {
    verified: bool,
    result: Value,
    files: Vec<String>,
    samples: Option<usize>,
}

/// Runs one subcommand and writes its report; returns the report and the
/// exit status.
pub fn run(experiment: Experiment, args: &CommonArgs) -> Result<(RunReport, i32)> {
    let start = Instant::now();
    let mut config = match &args.config {
        Some(path) => parse_config(path)?,
        None => Config::default(),
    };
    if let Some(e) = config.experiment {
        if e != experiment {
            return Err(Error::Validation {
                field: "experiment".into(),
                message: format!("config is for `{}`, not `{}`", e.name(), experiment.name()),
            });
        }
    }
    config.experiment = Some(experiment);
    let seed = args.seed.or(config.seed).ok_or_else(|| Error::validation("seed", "a seed is required (config `seed` or --seed)"))?;
    config.seed = Some(seed);
    let eff = Effective {
        seed,
        budget: args
            .budget
            .or(config.budget)
            .unwrap_or(DEFAULT_BUDGET as u64),
        mode: args.mode.map(Mode::from).or(config.mode).unwrap_or(Mode::Exact),
        samples: args.samples.or(config.samples).unwrap_or(100_000),
        out_dir: args.out_dir.clone().or(config.out_dir.clone()).unwrap_or_else(|| PathBuf::from(".")),
    };
    config.budget = Some(eff.budget);
    config.mode = Some(eff.mode);
    config.samples = Some(eff.samples);
    config.out_dir = None;
    fs::create_dir_all(&eff.out_dir)?;
    let outcome = match experiment {
        Experiment::Simulate => simulate(&mut config, args, &eff)?,
        Experiment::VerifySmoothness => smoothness(&mut config, args, &eff)?,
        Experiment::CorrelationGap => gap(&mut config, &eff)?,
        Experiment::LowerBound => lower_bound(&mut config, args, &eff)?,
        Experiment::Sinr => sinr(&mut config, &eff)?,
        Experiment::LemmaCheck => lemma(&mut config, args, &eff)?,
    };
    let report = RunReport {
        header: ReportHeader {
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_ms: start.elapsed().as_millis() as u64,
        },
        payload: ReportPayload {
            schema_version: SCHEMA_VERSION,
            experiment,
            config: serde_json::to_value(&config)?,
            seed,
            mode: eff.mode,
            samples: outcome.samples,
            budget: eff.budget,
            verified: outcome.verified,
            result: outcome.result,
            files: outcome.files,
        },
    };
    let text = serde_json::to_string_pretty(&report)?;
    fs::write(eff.out_dir.join(report_file(experiment)), text + "\n")?;
    let code = if report.payload.verified { EXIT_OK } else { EXIT_COUNTEREXAMPLE };
    Ok((report, code))
}

fn simulate(config: &mut Config<f64>, args: &CommonArgs, eff: &Effective) -> Result<Outcome> {
    let scenario = match config.scenario.take() {
        Some(s) => s,
        None => default_scenario(AvailabilityModel::independent(vec![vec![0.5, 0.75], vec![0.75, 0.5]])?)?,
    };
    let learner = config.learner.take().unwrap_or_default();
    let horizon = args.horizon.or(config.horizon).unwrap_or(10_000);
    let replicates = config.replicates.unwrap_or(1).max(1);
    let gate = config.gate.take().unwrap_or_default();
    let seeds: Vec<u64> = (0..replicates).map(|r| rng::replicate_seed(eff.seed, r)).collect();
    let budget = if eff.mode == Mode::Mc { 0 } else { eff.budget as u128 };
    let reports = empirical_poa_sweep(&scenario, &learner, horizon, &seeds, &gate, budget.max(1))?;
    let trace = crate::learning::run_repeated(&scenario, &learner, horizon, seeds[0])?;
    let file = "trace.csv".to_string();
    trace.write_csv(fs::File::create(eff.out_dir.join(&file))?)?;
    let verified = reports.iter().all(|r| r.holds);
    config.scenario = Some(scenario);
    config.learner = Some(learner);
    config.horizon = Some(horizon);
    config.replicates = Some(replicates);
    config.gate = Some(gate);
    Ok(Outcome {
        verified,
        result: json!({ "replicate_seeds": seeds, "reports": reports }),
        files: vec![file],
        samples: None,
    })
}

fn override_params(params: &mut SmoothnessParams<f64>, args: &CommonArgs) -> Result<()> {
    if let Some(l) = args.lambda {
        params.lambda = l;
    }
    if let Some(m) = args.mu1 {
        params.mu1 = m;
    }
    if let Some(m) = args.mu2 {
        params.mu2 = m;
    }
    params.validate()
}

fn smoothness(config: &mut Config<f64>, args: &CommonArgs, eff: &Effective) -> Result<Outcome> {
    let mut section = match config.smoothness.take() {
        Some(s) => s,
        None => default_smoothness()?,
    };
    override_params(&mut section.params, args)?;
    let profiles = match (&section.profiles, &section.levels) {
        (Some(p), _) => p.clone(),
        (None, Some(levels)) => value_profiles(section.mechanism.bidders(), levels),
        (None, None) => {
            return Err(Error::validation("smoothness", "give `levels` or `profiles`"))
        }
    };
    let cert = verify_smoothness(&section.mechanism, &profiles, section.params, eff.budget as u128)?;
    let verified = cert.verified();
    config.smoothness = Some(section);
    Ok(Outcome {
        verified,
        result: json!({ "certificate": cert }),
        files: Vec::new(),
        samples: None,
    })
}

fn gap(config: &mut Config<f64>, eff: &Effective) -> Result<Outcome> {
    let section = config.gap.take().unwrap_or(GapSection::Random {
        instances: 1000,
        max_factors: 5,
        max_len: 3,
        max_k: 4,
    });
    let budget = if eff.mode == Mode::Mc { 0 } else { eff.budget as u128 };
    let sampled;
    let (verified, result) = match &section {
        GapSection::Explicit { valuation, xs, alphas } => {
            let r = correlation_gap(valuation, xs, alphas, budget, eff.samples, eff.seed)?;
            sampled = r.mode == Mode::Mc;
            (true, json!({ "report": r }))
        }
        GapSection::Random {
            instances,
            max_factors,
            max_len,
            max_k,
        } => {
            let bound = f64::dmr_gap();
            let mut rng = rng::draws(eff.seed);
            let mut worst = (0usize, 1.0f64);
            let mut violations = Vec::new();
            let mut modes = [0usize; 2];
            for idx in 0..*instances {
                use rand::Rng as _;
                let m = rng.gen_range(1..=(*max_factors).max(1));
                let v: Valuation<f64> = random_dmr_valuation(&mut rng, m, *max_len)?;
                let (xs, alphas) = random_combination(&mut rng, v.lattice(), *max_k);
                let r = correlation_gap(&v, &xs, &alphas, budget, eff.samples, eff.seed)?;
                modes[usize::from(r.mode == Mode::Mc)] += 1;
                if r.ratio > worst.1 {
                    worst = (idx, r.ratio);
                }
                if r.mode == Mode::Exact && r.ratio > bound + 1e-9 {
                    violations.push(json!({ "instance": idx, "ratio": r.ratio }));
                }
            }
            sampled = modes[1] > 0;
            (
                violations.is_empty(),
                json!({
                    "instances": instances,
                    "exact": modes[0],
                    "monte_carlo": modes[1],
                    "bound": bound,
                    "max_ratio": worst.1,
                    "max_ratio_instance": worst.0,
                    "violations": violations,
                }),
            )
        }
    };
    config.gap = Some(section);
    Ok(Outcome {
        verified,
        result,
        files: Vec::new(),
        samples: sampled.then_some(eff.samples),
    })
}

fn lower_bound(config: &mut Config<f64>, args: &CommonArgs, eff: &Effective) -> Result<Outcome> {
    let mut section = config.lower_bound.take().unwrap_or(LowerBoundSection {
        ks: vec![4, 9, 16, 25, 36, 49, 64],
        unrestricted_check: false,
    });
    if let Some(ks) = &args.ks {
        section.ks = ks.clone();
    }
    let rows = lower_bound_sweep::<f64>(&section.ks)?;
    let file = "lower_bound.csv".to_string();
    write_sweep_csv(&rows, fs::File::create(eff.out_dir.join(&file))?)?;
    let mut agree = true;
    if section.unrestricted_check {
        for &k in section.ks.iter().filter(|&&k| k <= 6) {
            let a = lb_best_oblivious::<f64>(k, SearchSpace::Reduced)?;
            let b = lb_best_oblivious::<f64>(k, SearchSpace::Unrestricted)?;
            agree &= (a.expected_utility - b.expected_utility).abs() <= 1e-12;
        }
    }
    let below_17 = rows.iter().all(|r| r.best_oblivious.expected_value < 17.0);
    let monotone = rows.windows(2).all(|w| w[1].ratio >= w[0].ratio);
    config.lower_bound = Some(section);
    Ok(Outcome {
        verified: agree,
        result: json!({
            "rows": rows,
            "best_value_below_17": below_17,
            "ratio_nondecreasing": monotone,
            "reduced_matches_unrestricted": agree,
        }),
        files: vec![file],
        samples: None,
    })
}

fn sinr(config: &mut Config<f64>, eff: &Effective) -> Result<Outcome> {
    let section = config.sinr.take().unwrap_or(SinrSection::Random {
        instances: 50,
        links: 8,
        side: 50.0,
        min_len: 1.0,
        max_len: 8.0,
        power: 1.0,
        alpha_pl: 3.0,
        beta: 1.5,
        noise: 1e-6,
    });
    let instances: Vec<SinrInstance<f64>> = match &section {
        SinrSection::Instance { instance } => vec![instance.clone()],
        SinrSection::Random {
            instances,
            links,
            side,
            min_len,
            max_len,
            power,
            alpha_pl,
            beta,
            noise,
        } => (0..*instances)
            .map(|r| {
                SinrInstance::random(
                    *links,
                    *side,
                    *min_len,
                    *max_len,
                    (*power, *alpha_pl, *beta, *noise),
                    rng::replicate_seed(eff.seed, r),
                )
            })
            .collect::<Result<_>>()?,
    };
    let reports = instances
        .iter()
        .map(|inst| inst.verify_channel_smoothness())
        .collect::<Result<Vec<_>>>()?;
    let verified = reports.iter().all(|r| r.holds());
    config.sinr = Some(section);
    Ok(Outcome {
        verified,
        result: json!({ "instances": reports.len(), "reports": reports }),
        files: Vec::new(),
        samples: None,
    })
}

fn lemma(config: &mut Config<f64>, args: &CommonArgs, eff: &Effective) -> Result<Outcome> {
    let scenario = match config.scenario.take() {
        Some(s) => s,
        None => default_scenario(AvailabilityModel::everybody_or_nobody(2, vec![0.5, 0.75])?)?,
    };
    let mut section = config.lemma.take().unwrap_or(LemmaSection {
        params: SmoothnessParams::new(0.5, 1.0, 0.0)?,
        reading: WReading::Constructor,
        report_alternate: true,
        opponents: None,
    });
    override_params(&mut section.params, args)?;
    let opponents = match &section.opponents {
        Some(list) => EmpiricalDistribution {
            support: list.clone(),
        },
        None => uniform_opponents(&scenario, eff.budget as u128)?,
    };
    let opts = ChainOptions {
        mode: eff.mode,
        samples: eff.samples,
        seed: eff.seed,
        reading: section.reading,
        budget: eff.budget as u128,
    };
    // Exact mode falls back to sampling when the enumeration is too large.
    let check = |reading: WReading| {
        let mut opts = ChainOptions { reading, ..opts.clone() };
        match check_lemma_chain_eon(&scenario, section.params, &opponents, &opts) {
            Err(Error::Budget { .. }) if opts.mode == Mode::Exact => {
                opts.mode = Mode::Mc;
                check_lemma_chain_eon(&scenario, section.params, &opponents, &opts)
            }
            other => other,
        }
    };
    let primary = check(section.reading)?;
    let alternate = if section.report_alternate {
        Some(check(match section.reading {
            WReading::Constructor => WReading::Recipient,
            WReading::Recipient => WReading::Constructor,
        })?)
    } else {
        None
    };
    let sampled = primary.mode == Mode::Mc || alternate.as_ref().is_some_and(|a| a.mode == Mode::Mc);
    let verified = primary.holds();
    config.scenario = Some(scenario);
    config.lemma = Some(section);
    Ok(Outcome {
        verified,
        result: json!({ "primary": primary, "alternate": alternate }),
        files: Vec::new(),
        samples: sampled.then_some(eff.samples),
    })
}

/// Entry point used by the binary; returns the process exit status.
pub fn main_with(cli: Cli) -> i32 {
    let (experiment, args) = cli.command.split();
    match run(experiment, args) {
        Ok((report, code)) => {
            match serde_json::to_string_pretty(&report) {
                Ok(text) => println!("{text}"),
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_ERROR;
                }
            }
            if code == EXIT_COUNTEREXAMPLE {
                eprintln!("{}: counterexample found", experiment.name());
            }
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let c = parse_config_str(r#"{"seed": 3}"#).unwrap();
        assert_eq!(c.seed, Some(3));
        assert!(c.scenario.is_none());
    }

    #[test]
    fn syntax_error_has_position() {
        match parse_config_str("{\n  \"seed\": 3,\n  oops\n}") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_mechanism_kind_names_the_field() {
        let text = r#"{"seed": 1, "scenario": {"mechanisms": [{"kind": "vickrey", "grid": [0, 1]}]}}"#;
        match parse_config_str(text) {
            Err(Error::Validation { field, .. }) => assert!(field.starts_with("scenario.mechanisms"), "{field}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_seed_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let args = CommonArgs {
            out_dir: Some(dir.path().to_path_buf()),
            ..CommonArgs::default()
        };
        match run(Experiment::VerifySmoothness, &args) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "seed"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn smoothness_exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let mut args = CommonArgs {
            seed: Some(1),
            out_dir: Some(dir.path().to_path_buf()),
            ..CommonArgs::default()
        };
        let (report, code) = run(Experiment::VerifySmoothness, &args).unwrap();
        assert_eq!(code, EXIT_OK);
        assert!(report.payload.verified);
        args.lambda = Some(1.0);
        args.mu1 = Some(0.0);
        let (report, code) = run(Experiment::VerifySmoothness, &args).unwrap();
        assert_eq!(code, EXIT_COUNTEREXAMPLE);
        assert_eq!(report.payload.result["certificate"]["status"]["status"], "counterexample");
        let text = fs::read_to_string(dir.path().join("verify-smoothness-report.json")).unwrap();
        validate_report(&text).unwrap();
    }

    #[test]
    fn lower_bound_csv_rows() {
        let dir = tempfile::tempdir().unwrap();
        let args = CommonArgs {
            seed: Some(1),
            out_dir: Some(dir.path().to_path_buf()),
            ks: Some(vec![2, 4, 8, 16]),
            ..CommonArgs::default()
        };
        run(Experiment::LowerBound, &args).unwrap();
        let csv = fs::read_to_string(dir.path().join("lower_bound.csv")).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("k,optValue,bestObliviousValue,ratio"));
    }
}
