//! Command-line interface and subcommand implementations.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use shapmarket::custom::{utility_matrix, utility_matrix_with, UtilityMatrix};
use shapmarket::market::{
    clear_multi_with, clear_single_with, participation_check, prepare_multi, ClearOptions, MultiSetup,
    ParticipationReport, ShapleyMethod,
};
use shapmarket::replication::{
    attack_payoff, randomized_robustness_suite, MarketKind, ReplicationScenario, RobustnessReport, SuiteOptions,
};
use shapmarket::{Coalition, GainFunction, MarketOutcome, ModelSpec};

use crate::config::{load_config, Loaded};
use crate::data::{DatasetKind, DigitSource};
use crate::experiments::{self, Common, Layout};
use crate::failure::{invalid, Failure};
use crate::properties::run_suite;
use crate::report::{num, options_hash, OutDir, Report};

#[derive(Debug, Parser)]
#[command(
    name = "shapmarket",
    version,
    about = "Collaborative machine-learning data market with replication-robust Shapley payments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clear a market where every party shares one validation task
    SimulateSingle(SimulateArgs),
    /// Clear a market where parties bring their own validation tasks
    SimulateMulti(SimulateArgs),
    /// Shapley data values and relevant training data per task
    SelectData(ConfigArgs),
    /// Train a customized model for every party and report the utility matrix
    TrainCustom(TrainCustomArgs),
    /// Compare a party's payoff with and without replicating its data
    ReplicateAttack(ReplicateArgs),
    /// Run the randomized property suites
    VerifyProperties(VerifyArgs),
    /// Run a desk-scale digit-classification experiment
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ConfigArgs {
    /// Market configuration (JSON)
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed for every random choice
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Include the characteristic value of every coalition
    #[arg(long)]
    pub audit: bool,
    /// Drop parties failing the participation criteria before clearing
    #[arg(long)]
    pub enforce_participation: bool,
    /// Permutations for sampled Shapley values above the exact cap
    #[arg(long, default_value_t = 2000)]
    pub permutations: usize,
}

#[derive(Debug, Args)]
pub struct TrainCustomArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Overrides the config's lambda
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Train every party's model on all parties' data instead of its relevant set
    #[arg(long)]
    pub all_relevant: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum MarketArg {
    Single,
    Multi,
}

impl From<MarketArg> for MarketKind {
    fn from(m: MarketArg) -> Self {
        match m {
            MarketArg::Single => MarketKind::Single,
            MarketArg::Multi => MarketKind::Multi,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ReplicateArgs {
    /// Market to attack; omit to run only the randomized suite
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Id of the replicating party
    #[arg(long)]
    pub party: Option<u32>,
    /// Largest replica count; every count from 1 up is reported
    #[arg(long, default_value_t = 1)]
    pub replicas: usize,
    #[arg(long, value_enum, default_value = "single")]
    pub market: MarketArg,
    /// Random markets for the robustness suite (0 skips it)
    #[arg(long, default_value_t = 0)]
    pub trials: usize,
    /// Use a submodular gain in the suite, outside the robustness guarantees
    #[arg(long)]
    pub submodular: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[serde(skip)]
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum GainArg {
    /// Coverage gains with exponent 1, 2 or 3
    Synthetic,
    /// Coverage gains with exponent below 1
    Submodular,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    pub gain: GainArg,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[serde(skip)]
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Figure {
    Fig1,
    Fig2a,
    Fig3,
    Fig4,
}

#[derive(Debug, Args, Serialize)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub figure: Figure,
    #[arg(long, value_enum, default_value = "synthetic")]
    pub dataset: DatasetKind,
    /// Directory holding the four MNIST IDX files
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    /// Training samples per party
    #[arg(long, default_value_t = 100)]
    pub per_party: usize,
    /// Validation samples per task digit
    #[arg(long, default_value_t = 50)]
    pub validation_per_digit: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// fig1: replica counts
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,5,10,20,50")]
    pub replicas: Vec<usize>,
    /// fig1: digits whose party replicates
    #[arg(long, value_delimiter = ',', default_value = "0,4")]
    pub replicated_digits: Vec<u32>,
    /// fig2a: digits of the restricted task
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,6,8")]
    pub subset: Vec<u32>,
    /// fig3: largest replica count
    #[arg(long, default_value_t = 4)]
    pub max_replicas: usize,
    /// fig4: which digit pairs the parties hold
    #[arg(long, value_enum, default_value = "ring")]
    pub layout: Layout,
    /// fig4: weight of the other tasks in customized training
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// fig4: accuracy slack for the post-hoc constraint check
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[serde(skip)]
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::SimulateSingle(a) => simulate(&a, MarketKind::Single),
        Command::SimulateMulti(a) => simulate(&a, MarketKind::Multi),
        Command::SelectData(a) => select_data(&a),
        Command::TrainCustom(a) => train_custom(&a),
        Command::ReplicateAttack(a) => replicate_attack(&a),
        Command::VerifyProperties(a) => verify_properties(&a),
        Command::Experiment(a) => experiment(&a),
    }
}

#[derive(Serialize)]
struct Simulation<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    participation: Option<ParticipationReport>,
    outcome: &'a MarketOutcome,
}

fn print_outcome(out: &MarketOutcome) {
    println!(
        "{:>6} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "party", "fee", "price", "share", "payout", "returned", "net"
    );
    for p in &out.parties {
        println!(
            "{:>6} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
            p.id, p.fee, p.price, p.share, p.payout, p.returned, p.net
        );
    }
    println!("pool {:.6}  total value {:.6}  refunded {}", out.pool, out.total_value, out.refunded);
    for w in &out.warnings {
        println!("warning: {w}");
    }
}

fn simulate(args: &SimulateArgs, kind: MarketKind) -> anyhow::Result<()> {
    let c = &args.common;
    let loaded = load_config(&c.config, c.seed)?;
    let mut parties = loaded.parties.clone();
    let v = match &loaded.validation {
        Some(v) => v.clone(),
        None => parties[0].validation.clone(),
    };

    let mut participation = None;
    if args.enforce_participation {
        if kind == MarketKind::Multi {
            return Err(invalid("--enforce-participation applies to single-task markets only"));
        }
        let report = participation_check(&parties, &loaded.gain, &v)?;
        for s in report.parties.iter().filter(|s| !s.eligible) {
            log::warn!("party {} excluded: {}", s.id, s.reason);
        }
        parties.retain(|p| report.eligible.contains(&p.id));
        participation = Some(report);
        if parties.is_empty() {
            return Err(invalid("no party meets the participation criteria"));
        }
    }

    let mut warnings = Vec::new();
    let method = if parties.len() > loaded.market.exact_cap {
        let msg = format!(
            "{} parties exceed the exact cap of {}; using {} sampled permutations",
            parties.len(),
            loaded.market.exact_cap,
            args.permutations
        );
        log::warn!("{msg}");
        warnings.push(msg);
        ShapleyMethod::Sampled {
            permutations: args.permutations,
            seed: c.seed,
        }
    } else {
        ShapleyMethod::Exact
    };
    let opts = ClearOptions {
        method,
        audit: args.audit,
    };
    let mut outcome = match kind {
        MarketKind::Single => clear_single_with(&parties, &v, &loaded.gain, &loaded.market, &opts)?,
        MarketKind::Multi => clear_multi_with(&parties, &loaded.gain, &loaded.market, &opts)?,
    };
    warnings.append(&mut outcome.warnings);
    outcome.warnings = warnings;

    let out = OutDir::create(&c.out)?;
    let command = match kind {
        MarketKind::Single => "simulate-single",
        MarketKind::Multi => "simulate-multi",
    };
    out.json(
        "outcome.json",
        &Report {
            command,
            config_hash: loaded.hash.clone(),
            seed: c.seed,
            result: Simulation {
                participation,
                outcome: &outcome,
            },
        },
    )?;
    print_outcome(&outcome);
    Ok(())
}

fn select_data(args: &ConfigArgs) -> anyhow::Result<()> {
    let loaded = load_config(&args.config, args.seed)?;
    let setup: MultiSetup = prepare_multi(&loaded.parties, &loaded.gain, &loaded.market)?;
    let parties = &loaded.parties;
    let mut rows = Vec::new();
    for (k, &t) in setup.tasks.distinct.iter().enumerate() {
        for (j, p) in parties.iter().enumerate() {
            rows.push(vec![
                parties[t].id.to_string(),
                p.id.to_string(),
                num(setup.values[k][j]),
                setup.selected[k].contains(j).to_string(),
            ]);
        }
    }
    let out = OutDir::create(&args.out)?;
    out.csv("selection.csv", &["task", "party", "data_value", "selected"], rows)?;
    out.json(
        "selection.json",
        &Report {
            command: "select-data",
            config_hash: loaded.hash.clone(),
            seed: args.seed,
            result: &setup,
        },
    )?;
    for (i, p) in parties.iter().enumerate() {
        let rel: Vec<String> = setup.relevance[i].members().map(|j| parties[j].id.to_string()).collect();
        println!("party {}: relevant [{}]", p.id, rel.join(", "));
    }
    Ok(())
}

fn matrix_rows(m: &UtilityMatrix) -> Vec<Vec<String>> {
    m.ids
        .iter()
        .zip(&m.matrix)
        .map(|(id, row)| std::iter::once(id.to_string()).chain(row.iter().map(|&x| num(x))).collect())
        .collect()
}

fn train_custom(args: &TrainCustomArgs) -> anyhow::Result<()> {
    let c = &args.common;
    let loaded: Loaded = load_config(&c.config, c.seed)?;
    let mut market = loaded.market;
    if let Some(l) = args.lambda {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(invalid(format!("--lambda must be non-negative, got {l}")));
        }
        market.lambda = l;
    }
    let GainFunction::ModelAccuracy { model: spec, .. } = loaded.gain else {
        return Err(invalid("train-custom needs a model-accuracy gain"));
    };
    if !matches!(spec, ModelSpec::LogisticRegression(_)) {
        return Err(invalid("train-custom needs a logistic-regression model"));
    }
    let m = loaded.parties.len();
    let matrix = if args.all_relevant {
        utility_matrix_with(
            &loaded.parties,
            &spec,
            market.lambda,
            market.epsilon,
            &vec![Coalition::grand(m); m],
        )?
    } else {
        utility_matrix(&loaded.parties, &loaded.gain, &market)?
    };
    let out = OutDir::create(&c.out)?;
    let mut header = vec!["party".to_string()];
    header.extend(matrix.ids.iter().map(|id| format!("task_{id}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv("custom.csv", &header, matrix_rows(&matrix))?;
    out.json(
        "custom.json",
        &Report {
            command: "train-custom",
            config_hash: loaded.hash.clone(),
            seed: c.seed,
            result: &matrix,
        },
    )?;
    println!("lambda {}", matrix.lambda);
    for (id, row) in matrix.ids.iter().zip(&matrix.matrix) {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.3}")).collect();
        println!("party {id}: {}", cells.join(" "));
    }
    Ok(())
}

#[derive(Serialize)]
struct AttackResult {
    target: u32,
    reports: Vec<RobustnessReport>,
}

fn replicate_attack(args: &ReplicateArgs) -> anyhow::Result<()> {
    if args.config.is_none() && args.trials == 0 {
        return Err(invalid("nothing to do: pass --config with --party, or --trials"));
    }
    let out = OutDir::create(&args.out)?;
    let kind: MarketKind = args.market.into();
    let mut failed = None;

    if let Some(path) = &args.config {
        let Some(target) = args.party else {
            return Err(invalid("--party is required with --config"));
        };
        if args.replicas == 0 {
            return Err(invalid("--replicas must be at least 1"));
        }
        let loaded = load_config(path, args.seed)?;
        let reports = (1..=args.replicas)
            .map(|k| {
                let s = ReplicationScenario::new(loaded.parties.clone(), target, k)?;
                attack_payoff(&s, &loaded.gain, &loaded.market, kind)
            })
            .collect::<shapmarket::Result<Vec<_>>>()?;
        let first = &reports[0];
        let mut rows = vec![vec![
            "0".to_string(),
            num(first.share),
            num(first.share),
            num(first.share),
            num(first.t),
            num(first.t),
        ]];
        rows.extend(reports.iter().map(|r| {
            vec![
                r.replicas.to_string(),
                num(r.share),
                num(r.share_r),
                num(r.family_share_r),
                num(r.t),
                num(r.t_r),
            ]
        }));
        out.csv("attack.csv", &["replicas", "share", "share_r", "family_share_r", "t", "t_r"], rows)?;
        out.json(
            "attack.json",
            &Report {
                command: "replicate-attack",
                config_hash: loaded.hash.clone(),
                seed: args.seed,
                result: AttackResult { target, reports: reports.clone() },
            },
        )?;
        println!("{:>8} {:>10} {:>12} {:>12} {:>8}", "replicas", "t", "t_r", "family", "robust");
        for r in &reports {
            println!(
                "{:>8} {:>10.6} {:>12.6} {:>12.6} {:>8}",
                r.replicas, r.t, r.t_r, r.family_share_r, r.verdict
            );
        }
    }

    if args.trials > 0 {
        let summary = randomized_robustness_suite(&SuiteOptions {
            trials: args.trials,
            min_parties: 2,
            max_parties: 5,
            seed: args.seed,
            kind,
            submodular: args.submodular,
        })?;
        out.json(
            "suite.json",
            &Report {
                command: "replicate-attack",
                config_hash: options_hash(args),
                seed: args.seed,
                result: &summary,
            },
        )?;
        println!(
            "suite: {} attacks, {} skipped trials, {} payoff violations, {} lemma violations{}",
            summary.attacks,
            summary.skipped,
            summary.payoff_violations,
            summary.lemma_violations,
            if summary.theorem_backed { "" } else { " (informational)" }
        );
        if summary.theorem_backed && !summary.passed() {
            failed = Some(format!(
                "{} replication attacks broke a robustness check; see suite.json",
                summary.counterexamples.len()
            ));
        }
    }
    match failed {
        Some(msg) => Err(Failure::ChecksFailed(msg).into()),
        None => Ok(()),
    }
}

fn verify_properties(args: &VerifyArgs) -> anyhow::Result<()> {
    let suite = run_suite(args.trials, args.seed, args.gain == GainArg::Submodular)?;
    let out = OutDir::create(&args.out)?;
    out.json(
        "properties.json",
        &Report {
            command: "verify-properties",
            config_hash: options_hash(args),
            seed: args.seed,
            result: &suite,
        },
    )?;
    println!("{:<34} {:>7} {:>10} {:>12} {:>6}", "check", "cases", "violations", "max dev", "status");
    for c in &suite.checks {
        let status = match (c.passed, c.theorem_backed) {
            (true, _) => "ok",
            (false, true) => "FAIL",
            (false, false) => "info",
        };
        println!(
            "{:<34} {:>7} {:>10} {:>12.3e} {:>6}",
            c.name, c.cases, c.violations, c.max_deviation, status
        );
    }
    if suite.passed {
        Ok(())
    } else {
        Err(Failure::ChecksFailed("some theorem-backed property checks failed; see properties.json".into()).into())
    }
}

fn experiment(args: &ExperimentArgs) -> anyhow::Result<()> {
    let src = match args.dataset {
        DatasetKind::Synthetic => DigitSource::Synthetic,
        DatasetKind::Mnist => {
            let dir = args
                .mnist_dir
                .as_ref()
                .ok_or_else(|| invalid("--dataset mnist needs --mnist-dir pointing at the IDX files"))?;
            DigitSource::mnist(dir).context("loading MNIST")?
        }
    };
    let common = Common {
        per_party: args.per_party,
        validation_per_digit: args.validation_per_digit,
        seed: args.seed,
        learning_rate: args.learning_rate,
        epochs: args.epochs,
    };
    let out = OutDir::create(&args.out)?;
    let hash = options_hash(args);
    let envelope = |name: &'static str| (name, hash.clone());

    match args.figure {
        Figure::Fig1 => {
            let f = experiments::fig1(&src, &common, &args.replicated_digits, &args.replicas)?;
            let mut header = vec!["replicated_digit".to_string(), "replicas".into(), "overall_accuracy".into()];
            header.extend(f.tracked.iter().map(|d| format!("digit_{d}_accuracy")));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            let rows = f.rows.iter().map(|r| {
                let mut row = vec![r.replicated_digit.to_string(), r.replicas.to_string(), num(r.overall_accuracy)];
                row.extend(r.digit_accuracy.iter().map(|&x| num(x)));
                row
            });
            out.csv("fig1.csv", &header, rows)?;
            write_experiment(&out, envelope("fig1"), args.seed, &f)?;
            for r in &f.rows {
                println!("digit {} x{:<3} overall {:.3}", r.replicated_digit, r.replicas, r.overall_accuracy);
            }
        }
        Figure::Fig2a => {
            let pairs = experiments::random_pairs(10, crate::data::derive_seed(args.seed, 999));
            let f = experiments::fig2a(&src, &common, &pairs, &args.subset)?;
            let rows = f.rows.iter().map(|r| {
                vec![
                    r.task.clone(),
                    r.party.to_string(),
                    r.labels[0].to_string(),
                    r.labels[1].to_string(),
                    r.holds_task_label.to_string(),
                    num(r.shapley),
                ]
            });
            out.csv(
                "fig2a.csv",
                &["task", "party", "label_a", "label_b", "holds_task_label", "shapley"],
                rows,
            )?;
            write_experiment(&out, envelope("fig2a"), args.seed, &f)?;
            for r in &f.rows {
                println!("{:<7} party {:>2} {:?} {:+.4}", r.task, r.party, r.labels, r.shapley);
            }
        }
        Figure::Fig3 => {
            let f = experiments::fig3(&src, &common, &[0, 8], &[2, 8], &[0, 2, 8], args.max_replicas)?;
            let rows = f.rows.iter().map(|r| {
                vec![
                    r.replicas.to_string(),
                    r.characteristic.clone(),
                    num(r.honest_share),
                    num(r.family_share),
                ]
            });
            out.csv("fig3.csv", &["replicas", "characteristic", "honest_share", "family_share"], rows)?;
            write_experiment(&out, envelope("fig3"), args.seed, &f)?;
            for r in &f.rows {
                println!(
                    "{} replicas {}: honest {:.4} family {:.4}",
                    r.characteristic, r.replicas, r.honest_share, r.family_share
                );
            }
        }
        Figure::Fig4 => {
            let f = experiments::fig4(&src, &common, args.layout, args.lambda, args.epsilon)?;
            let mut rows = Vec::new();
            for m in [&f.customized, &f.control] {
                for (i, row) in m.matrix.iter().enumerate() {
                    for (j, &acc) in row.iter().enumerate() {
                        rows.push(vec![num(m.lambda), m.ids[i].to_string(), m.ids[j].to_string(), num(acc)]);
                    }
                }
            }
            out.csv("fig4.csv", &["lambda", "model_party", "task_party", "accuracy"], rows)?;
            write_experiment(&out, envelope("fig4"), args.seed, &f)?;
            println!(
                "lambda {}: mean diagonal {:.3}, mean off-diagonal {:.3} (control {:.3})",
                f.customized.lambda,
                mean(&f.customized.diagonal()),
                f.customized.mean_off_diagonal(),
                f.control.mean_off_diagonal()
            );
        }
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn write_experiment<T: Serialize>(out: &OutDir, (name, hash): (&'static str, String), seed: u64, result: &T) -> anyhow::Result<()> {
    out.json(
        &format!("{name}.json"),
        &Report {
            command: "experiment",
            config_hash: hash,
            seed,
            result,
        },
    )?;
    Ok(())
}
