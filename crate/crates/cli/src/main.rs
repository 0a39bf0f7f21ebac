use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dagdiff::aig::{parse_dag_to_aig, random_aig, read_dataset, write_dataset, DatasetRecord, TruthTable, NODE_LABELS};
use dagdiff::denoiser::{load_checkpoint, DenoiserParams};
use dagdiff::diffusion::LevelStructureStats;
use dagdiff::eval::{evaluate, sample_graphs, RandomWiring};
use dagdiff::graph::to_dot;
use dagdiff::mcts::{mcts_refine, MctsConfig};
use dagdiff::selftest::{run_suite, SUITES};
use dagdiff::train::{train_loop, ModelMeta, TrainConfig, TrainOutput};

#[derive(Parser)]
#[command(name = "dagdiff", version, about = "Conditional circuit generation by level-scheduled graph diffusion")]
struct Cli {
    /// Worker threads for training and evaluation.
    #[arg(long, global = true, env = "SEADAG_THREADS", default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random circuits and their level-structure statistics.
    GenData {
        #[arg(long, default_value_t = 8)]
        n_inputs: usize,
        #[arg(long, default_value_t = 2)]
        n_outputs: usize,
        #[arg(long, default_value_t = 32)]
        max_gates: usize,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dataset path; statistics go to `<stem>.stats.json` alongside.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a denoiser.
    Train {
        /// JSON training config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        /// Output directory for checkpoints and metrics.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample circuits for truth tables.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        /// Comma-separated hex columns, or a dataset file.
        #[arg(long)]
        tt: String,
        /// Needed only when a single hex digit is ambiguous.
        #[arg(long)]
        n_inputs: Option<usize>,
        #[arg(long, default_value_t = 10)]
        num: usize,
        #[arg(long)]
        out: PathBuf,
        /// Directory for one DOT file per sample.
        #[arg(long)]
        dot: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Improve a circuit towards a truth table by tree search.
    Refine {
        /// Dataset file; the first record is refined.
        #[arg(long)]
        aig: PathBuf,
        #[arg(long)]
        tt: String,
        #[arg(long)]
        n_inputs: Option<usize>,
        #[arg(long, default_value_t = 500)]
        sims: usize,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the truth table of every record as hex columns.
    Simulate {
        #[arg(long)]
        aig: PathBuf,
    },
    /// Evaluate a checkpoint on a test set.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Report JSON; the histogram CSV is written next to it.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Evaluate the random-wiring baseline instead of the model.
        #[arg(long)]
        baseline: bool,
    },
    /// Run the built-in oracle and property checks.
    Selftest {
        #[arg(long)]
        suite: Option<String>,
    },
}

/// Argument problems found after parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<dagdiff::Error>() {
        if e.is_io() {
            return 3;
        }
        if e.is_numerical() {
            return 4;
        }
        return 2;
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 3;
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if cli.threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    match cli.command {
        Command::GenData {
            n_inputs,
            n_outputs,
            max_gates,
            count,
            seed,
            out,
        } => gen_data(n_inputs, n_outputs, max_gates, count, seed, &out)?,
        Command::Train {
            config,
            data,
            val,
            out,
            epochs,
            seed,
        } => train(config.as_deref(), &data, val.as_deref(), &out, epochs, seed, cli.threads)?,
        Command::Sample {
            ckpt,
            tt,
            n_inputs,
            num,
            out,
            dot,
            seed,
        } => sample(&ckpt, &tt, n_inputs, num, &out, dot.as_deref(), seed)?,
        Command::Refine {
            aig,
            tt,
            n_inputs,
            sims,
            steps,
            seed,
            out,
        } => refine(&aig, &tt, n_inputs, sims, steps, seed, out.as_deref())?,
        Command::Simulate { aig } => simulate(&aig)?,
        Command::Eval {
            ckpt,
            test,
            k,
            report,
            seed,
            baseline,
        } => eval(&ckpt, &test, k, &report, seed, baseline, cli.threads)?,
        Command::Selftest { suite } => return selftest(suite.as_deref()),
    }
    Ok(ExitCode::SUCCESS)
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(dagdiff::Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")).into());
    }
    Ok(())
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(dagdiff::Error::io(
            p,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        )
        .into()),
        _ => Ok(()),
    }
}

pub fn stats_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("stats.json")
}

fn gen_data(n_in: usize, n_out: usize, max_gates: usize, count: usize, seed: u64, out: &Path) -> Result<()> {
    require_parent(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let (aig, tt) = random_aig(n_in, n_out, max_gates, &mut rng)?;
        records.push(DatasetRecord { dag: aig.to_dag()?, tt });
    }
    write_dataset(out, &records)?;
    let stats = LevelStructureStats::from_dags(records.iter().map(|r| &r.dag))?;
    stats.save(stats_path(out))?;
    eprintln!("wrote {count} records to {}", out.display());
    Ok(())
}

fn train(
    config: Option<&Path>,
    data: &Path,
    val: Option<&Path>,
    out: &Path,
    epochs: Option<usize>,
    seed: Option<u64>,
    threads: usize,
) -> Result<()> {
    require_file(data)?;
    if let Some(v) = val {
        require_file(v)?;
    }
    let mut cfg = match config {
        Some(p) => {
            require_file(p)?;
            TrainConfig::load(p)?
        }
        None => TrainConfig::default(),
    };
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let train_set = read_dataset(data)?;
    let val_set = match val {
        Some(v) => read_dataset(v)?,
        None => Vec::new(),
    };
    let output = TrainOutput {
        dir: Some(out.to_path_buf()),
        threads,
    };
    train_loop(&cfg, &train_set, &val_set, &output, |m| eprintln!("{}", m.csv_row()))?;
    eprintln!("checkpoint written to {}", out.join("model.ckpt").display());
    Ok(())
}

/// Hex columns (`"e"`, `"96,e8"`) or the truth tables of a dataset file.
fn parse_conditions(arg: &str, n_inputs: Option<usize>) -> Result<Vec<TruthTable>> {
    let path = Path::new(arg);
    if path.is_file() {
        return Ok(read_dataset(path)?.into_iter().map(|r| r.tt).collect());
    }
    let cols: Vec<&str> = arg.split(',').map(str::trim).collect();
    let digits = cols[0].len();
    if digits == 0 || cols.iter().any(|c| c.len() != digits) {
        return Err(usage(format!("--tt {arg:?} is neither a file nor equal-length hex columns")));
    }
    let n_in = match n_inputs {
        Some(n) => n,
        None if digits == 1 => 2,
        None => {
            let rows = digits * 4;
            if !rows.is_power_of_two() {
                return Err(usage(format!("{digits} hex digits do not describe a full truth table")));
            }
            rows.trailing_zeros() as usize
        }
    };
    Ok(vec![TruthTable::from_hex(n_in, &cols).map_err(|e| usage(e.to_string()))?])
}

fn load_model(ckpt: &Path) -> Result<(DenoiserParams, ModelMeta)> {
    require_file(ckpt)?;
    let ck = load_checkpoint(ckpt)?;
    let meta = ModelMeta::from_checkpoint(&ck)?;
    Ok((ck.params, meta))
}

fn sample(ckpt: &Path, tt: &str, n_inputs: Option<usize>, num: usize, out: &Path, dot: Option<&Path>, seed: u64) -> Result<()> {
    let conditions = parse_conditions(tt, n_inputs)?;
    require_parent(out)?;
    if let Some(d) = dot {
        std::fs::create_dir_all(d).map_err(|e| dagdiff::Error::io(d, e))?;
    }
    let (params, meta) = load_model(ckpt)?;
    let model = meta.noise_model()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for (c, cond) in conditions.iter().enumerate() {
        let dags = sample_graphs(&params, cond, &meta.level_stats, &model, num, &mut rng)?;
        for (k, dag) in dags.into_iter().enumerate() {
            if let Some(d) = dot {
                let path = d.join(format!("sample_{c:03}_{k:02}.dot"));
                std::fs::write(&path, to_dot(&dag, &NODE_LABELS)).map_err(|e| dagdiff::Error::io(&path, e))?;
            }
            records.push(DatasetRecord { dag, tt: cond.clone() });
        }
    }
    write_dataset(out, &records)?;
    eprintln!("wrote {} samples to {}", records.len(), out.display());
    Ok(())
}

fn first_record(path: &Path) -> Result<DatasetRecord> {
    require_file(path)?;
    read_dataset(path)?
        .into_iter()
        .next()
        .ok_or_else(|| usage(format!("{} holds no records", path.display())))
}

#[allow(clippy::too_many_arguments)]
fn refine(aig: &Path, tt: &str, n_inputs: Option<usize>, sims: usize, steps: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let record = first_record(aig)?;
    let cond = parse_conditions(tt, n_inputs)?.into_iter().next().context("no truth table given")?;
    if cond.n_in() != record.tt.n_in() || cond.n_out() != record.tt.n_out() {
        return Err(usage("truth table shape does not match the circuit"));
    }
    if let Some(o) = out {
        require_parent(o)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = parse_dag_to_aig(&record.dag, &mut rng);
    let cfg = MctsConfig {
        simulations: sims,
        steps,
        ..MctsConfig::default()
    };
    let result = mcts_refine(&start, &cond, &cfg, &mut rng)?;
    let refined = DatasetRecord {
        dag: result.aig.to_dag()?,
        tt: result.aig.simulate()?,
    };
    let line = serde_json::json!({
        "before": result.start_reward,
        "after": result.reward,
        "record": serde_json::from_str::<serde_json::Value>(&refined.to_json_line()?)?,
    });
    match out {
        Some(o) => std::fs::write(o, format!("{line}\n")).map_err(|e| dagdiff::Error::io(o, e))?,
        None => println!("{line}"),
    }
    eprintln!("reward {:.4} -> {:.4}", result.start_reward, result.reward);
    Ok(())
}

fn simulate(aig: &Path) -> Result<()> {
    require_file(aig)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for record in read_dataset(aig)? {
        let circuit = parse_dag_to_aig(&record.dag, &mut rng);
        println!("{}", circuit.simulate()?.to_hex().join(","));
    }
    Ok(())
}

fn eval(ckpt: &Path, test: &Path, k: usize, report: &Path, seed: u64, baseline: bool, threads: usize) -> Result<()> {
    require_file(test)?;
    require_parent(report)?;
    if k == 0 {
        return Err(usage("--k must be positive"));
    }
    let (params, meta) = load_model(ckpt)?;
    let model = meta.noise_model()?;
    let test_set = read_dataset(test)?;
    let result = if baseline {
        evaluate(&RandomWiring::from_model(&model), &test_set, k, &model, &meta.level_stats, seed, threads)?
    } else {
        evaluate(&params, &test_set, k, &model, &meta.level_stats, seed, threads)?
    };
    result.save(report)?;
    result.save_histogram_csv(report.with_extension("csv"))?;
    println!(
        "validity {:.4}  accuracy {:.4}  level_emd {:.4}",
        result.validity, result.accuracy, result.level_emd
    );
    Ok(())
}

fn selftest(suite: Option<&str>) -> Result<ExitCode> {
    let names: Vec<&str> = match suite {
        Some(s) if SUITES.contains(&s) => vec![s],
        Some(s) => return Err(usage(format!("unknown suite {s:?}; choose from {}", SUITES.join(", ")))),
        None => SUITES.to_vec(),
    };
    let mut all = true;
    for name in names {
        let out = run_suite(name)?.context("suite vanished")?;
        println!("{} {:<13} {}", if out.passed { "PASS" } else { "FAIL" }, out.name, out.detail);
        all &= out.passed;
    }
    Ok(if all { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
