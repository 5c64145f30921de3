use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use densemem::analysis::{dominant_contributions, export_memory_images, export_training_curve, votes_per_memory};
use densemem::capacity::{
    error_probability, find_k_half, k_max_at_error, k_max_no_errors, k_max_no_errors_value, run_recovery_trials_with,
    KHalfOptions, KHalfReport, TrialOptions,
};
use densemem::classifier::{
    evaluate, read_checkpoint, train_with_observer, write_checkpoint, Checkpoint, TrainConfig,
};
use densemem::data::{default_mnist_dir, load_idx_pair, split, LabeledImageSet, MnistFiles, SplitSpec};
use densemem::dynamics::{xor_solve, XorOutcome};
use densemem::{EnergyModel, Error, Result};
use serde_json::json;

use crate::args::{
    AnalyzeArgs, CapacityCommand, Cli, Command, DataArgs, EvalArgs, HistArgs, KhalfArgs, TheoryArgs, TrainArgs, XorArgs,
};

/// Whether the command's own success criterion held.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    fn create(cli: &Cli) -> Result<Self> {
        let id = cli
            .run_id
            .clone()
            .unwrap_or_else(|| format!("{}-seed{}", cli.command.name(), cli.seed));
        let path = cli.outdir.join(id);
        fs::create_dir_all(&path).map_err(|e| io_at(&path, e))?;
        Ok(RunDir { path })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.file(name);
        fs::write(&p, text).map_err(|e| io_at(&p, e))?;
        Ok(p)
    }
}

fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::File {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Appends one JSON line with the resolved arguments before any result is
/// written.
fn write_provenance(dir: &RunDir, cli: &Cli, argv: &[String]) -> Result<()> {
    let record = json!({
        "tool": "densemem",
        "version": env!("CARGO_PKG_VERSION"),
        "argv": argv,
        "resolved": cli,
        "seed": cli.seed,
        "threads": rayon::current_num_threads(),
        "unix_time": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    let p = dir.file("provenance.jsonl");
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&p)
        .map_err(|e| io_at(&p, e))?;
    writeln!(f, "{record}").map_err(|e| io_at(&p, e))
}

pub fn run(cli: &Cli, argv: &[String]) -> Result<Outcome> {
    let dir = RunDir::create(cli)?;
    write_provenance(&dir, cli, argv)?;
    match &cli.command {
        Command::Xor(a) => xor(a, &dir),
        Command::Capacity(CapacityCommand::Theory(a)) => theory(a, &dir),
        Command::Capacity(CapacityCommand::Hist(a)) => hist(a, cli.seed, &dir),
        Command::Capacity(CapacityCommand::Khalf(a)) => khalf(a, cli.seed, &dir),
        Command::Train(a) => train(a, cli.seed, &dir),
        Command::Eval(a) => eval(a, &dir),
        Command::Analyze(a) => analyze(a, &dir),
    }
}

fn xor(a: &XorArgs, dir: &RunDir) -> Result<Outcome> {
    let model = EnergyModel::new(a.power, a.kind)?;
    let mut csv = String::from("x,y,expected,output\n");
    let mut solved = 0;
    for e in densemem::data::xor_dataset() {
        let out = xor_solve(e.x, e.y, &model);
        let shown = match out {
            XorOutcome::Output(z) => z.to_string(),
            XorOutcome::Undecidable => "undecidable".to_string(),
        };
        if out == XorOutcome::Output(e.z) {
            solved += 1;
        }
        println!("x={:>2} y={:>2} -> {shown:>11} (expected {:>2})", e.x, e.y, e.z);
        writeln!(csv, "{},{},{},{shown}", e.x, e.y, e.z).unwrap();
    }
    println!("{model}: {solved}/4 rows solved");
    dir.write("xor.csv", &csv)?;
    Ok(if solved == 4 { Outcome::Pass } else { Outcome::Fail })
}

fn theory(a: &TheoryArgs, dir: &RunDir) -> Result<Outcome> {
    let mut csv = String::from("N,n,k_max_no_errors,k_max_no_errors_exact,k_max_at_error,alpha,threshold\n");
    println!("{:>6} {:>3} {:>16} {:>14} {:>10}", "N", "n", "K_no_errors", "K_at_error", "alpha");
    for &n_neurons in &a.neurons {
        for &p in &a.powers {
            let exact = k_max_no_errors_value(n_neurons, p)?;
            let rounded = k_max_no_errors(n_neurons, p)?;
            let at_err = k_max_at_error(n_neurons, p, a.threshold)?;
            let alpha = at_err as f64 / (n_neurons as f64).powi(p as i32 - 1);
            println!("{n_neurons:>6} {p:>3} {rounded:>16} {at_err:>14} {alpha:>10.5}");
            writeln!(csv, "{n_neurons},{p},{rounded},{exact:.6},{at_err},{alpha:.8},{}", a.threshold).unwrap();
        }
    }
    dir.write("theory.csv", &csv)?;
    if !a.memories.is_empty() {
        let mut perr = String::from("N,n,K,p_error\n");
        for &n_neurons in &a.neurons {
            for &p in &a.powers {
                for &k in &a.memories {
                    let pe = error_probability(n_neurons, k as f64, p)?;
                    writeln!(perr, "{n_neurons},{p},{k},{pe:.6e}").unwrap();
                }
            }
        }
        dir.write("p_error.csv", &perr)?;
    }
    Ok(Outcome::Pass)
}

fn hist(a: &HistArgs, seed: u64, dir: &RunDir) -> Result<Outcome> {
    let trials = if a.full { 10_000 } else { a.trials };
    let opts = TrialOptions {
        max_sweeps: a.max_sweeps,
        ..TrialOptions::default()
    };
    let mut summary = String::from(
        "N,K,n,kind,trials,fraction_recovered,fraction_recovered_up_to_sign,mode_overlap,non_converged\n",
    );
    for &kind in &a.kind {
        for &p in &a.powers {
            let r = run_recovery_trials_with(a.neurons, a.memories, p, kind, trials, seed, &opts)?;
            let name = format!("hist_N{}_K{}_n{}_{}.csv", a.neurons, a.memories, p, kind);
            let path = dir.file(&name);
            let f = File::create(&path).map_err(|e| io_at(&path, e))?;
            r.histogram.write_csv(BufWriter::new(f)).map_err(|e| io_at(&path, e))?;
            println!(
                "{kind}{p}: recovered {:.4} (up to sign {:.4}), mode {}, non-converged {}",
                r.fraction_recovered(),
                r.fraction_recovered_up_to_sign(),
                r.histogram.mode(),
                r.non_converged
            );
            writeln!(
                summary,
                "{},{},{p},{kind},{trials},{:.6},{:.6},{},{}",
                a.neurons,
                a.memories,
                r.fraction_recovered(),
                r.fraction_recovered_up_to_sign(),
                r.histogram.mode(),
                r.non_converged
            )
            .unwrap();
        }
    }
    dir.write("hist_summary.csv", &summary)?;
    Ok(Outcome::Pass)
}

fn khalf(a: &KhalfArgs, seed: u64, dir: &RunDir) -> Result<Outcome> {
    let opts = KHalfOptions {
        trials: a.trials,
        max_k: a.max_k,
        resolution: a.resolution,
        dynamics: TrialOptions {
            max_sweeps: a.max_sweeps,
            ..TrialOptions::default()
        },
    };
    let mut table = format!("{}\n", KHalfReport::csv_header());
    let mut path_csv = String::from("N,n,kind,K,fraction\n");
    for &kind in &a.kind {
        for &n_neurons in &a.neurons {
            let r = find_k_half(n_neurons, a.power, kind, seed, &opts)?;
            let theory = k_max_no_errors_value(n_neurons, a.power)?;
            println!(
                "{kind}{} N={n_neurons}: K_half = {}{} (fraction {:.3}), formula {theory:.1}",
                a.power,
                r.k_half,
                if r.saturated { " (search bound)" } else { "" },
                r.fraction_at_k_half
            );
            writeln!(table, "{}", r.csv_row()).unwrap();
            for (k, f) in &r.path {
                writeln!(path_csv, "{n_neurons},{},{kind},{k},{f:.6}", a.power).unwrap();
            }
        }
    }
    dir.write("khalf.csv", &table)?;
    dir.write("khalf_path.csv", &path_csv)?;
    Ok(Outcome::Pass)
}

/// Resolves a training preset name into a config.
pub fn preset(name: &str) -> Result<TrainConfig> {
    let (scale, power) = name
        .split_once("-n")
        .and_then(|(s, n)| n.parse::<u32>().ok().map(|n| (s, n)))
        .ok_or_else(|| Error::InvalidParameter(format!("unknown preset {name:?}")))?;
    let energy = EnergyModel::rectified(power)?;
    match (scale, power) {
        ("desk", 2 | 3 | 20) => Ok(TrainConfig::desk(energy)),
        ("paper", 2 | 3 | 20 | 30) => Ok(TrainConfig::paper(energy)),
        _ => Err(Error::InvalidParameter(format!(
            "unknown preset {name:?} (desk-n2, desk-n3, desk-n20, paper-n2, paper-n3, paper-n20, paper-n30)"
        ))),
    }
}

fn resolve_train_config(a: &TrainArgs, seed: u64) -> Result<TrainConfig> {
    let mut c = preset(&a.preset)?;
    if a.power.is_some() || a.kind.is_some() {
        c.energy = EnergyModel::new(a.power.unwrap_or(c.energy.power()), a.kind.unwrap_or(c.energy.kind()))?;
    }
    macro_rules! set {
        ($($field:ident <- $arg:ident),*) => {$(if let Some(v) = a.$arg { c.$field = v; })*};
    }
    set!(n_memories <- memories, loss_power <- loss_power, epochs <- epochs, eps0 <- eps0, decay <- decay,
        momentum <- momentum, t_initial <- t_initial, t_final <- t_final, anneal_epochs <- anneal_epochs,
        per_class <- per_class, init_mean <- init_mean, init_std <- init_std, framing <- framing,
        eval_every <- eval_every);
    c.seed = seed;
    c.paper_windows = !a.no_paper_windows;
    c.validate()?;
    Ok(c)
}

fn mnist_files(dir: &Option<PathBuf>) -> Result<MnistFiles> {
    let d = dir.clone().unwrap_or_else(|| default_mnist_dir(Path::new(".")));
    MnistFiles::in_dir(&d)
}

fn train(a: &TrainArgs, seed: u64, dir: &RunDir) -> Result<Outcome> {
    let cfg = resolve_train_config(a, seed)?;
    let (full_train, test) = match (&a.train_images, &a.train_labels, &a.test_images, &a.test_labels) {
        (Some(ti), Some(tl), Some(si), Some(sl)) => (load_idx_pair(ti, tl)?, load_idx_pair(si, sl)?),
        _ => mnist_files(&a.mnist_dir)?.load()?,
    };
    let spec = SplitSpec {
        train: full_train.len().checked_sub(a.validation).ok_or_else(|| {
            Error::InvalidParameter(format!("validation {} exceeds {} examples", a.validation, full_train.len()))
        })?,
        validation: a.validation,
        seed,
    };
    let (mut train_set, val) = split(&full_train, &spec)?;
    if let Some(n) = a.train_limit {
        train_set = train_set.truncated(n);
    }
    let test = match a.test_limit {
        Some(n) => test.truncated(n),
        None => test,
    };
    dir.write("train_config.json", &(serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n"))?;
    println!(
        "training {} K={} m={} on {} examples ({} validation, {} test), {} epochs",
        cfg.energy,
        cfg.n_memories,
        cfg.loss_power,
        train_set.len(),
        val.len(),
        test.len(),
        cfg.epochs
    );

    let metrics_path = dir.file("metrics.csv");
    let mut metrics_file = File::create(&metrics_path).map_err(|e| io_at(&metrics_path, e))?;
    writeln!(metrics_file, "{}", densemem::classifier::METRICS_HEADER).map_err(|e| io_at(&metrics_path, e))?;
    let val_ref = (!val.is_empty()).then_some(&val);
    let outcome = train_with_observer(&cfg, &train_set, val_ref, Some(&test), |m, _| {
        writeln!(metrics_file, "{}", m.csv_row()).map_err(|e| io_at(&metrics_path, e))?;
        let opt = |v: Option<f64>| v.map(|x| format!("{:.4}", x)).unwrap_or_else(|| "-".into());
        println!(
            "epoch {:>4}  train {:.4}  val {}  test {}  loss {:.4}  lr {:.5}  T {:.1}",
            m.epoch,
            m.train_err,
            opt(m.val_err),
            opt(m.test_err),
            m.loss,
            m.lr,
            m.temperature
        );
        Ok(())
    })?;
    write_checkpoint(
        &dir.file("model.dam"),
        &Checkpoint {
            model: outcome.model,
            loss_power: cfg.loss_power,
        },
    )?;
    let summary = export_training_curve(&outcome.metrics, a.threshold, &dir.file("curve.csv"), &dir.file("curve.json"))?;
    match summary.crossing_epoch {
        Some(e) => println!("test error first below {} at epoch {e}", a.threshold),
        None => println!("test error never fell below {}", a.threshold),
    }
    if let Some(e) = summary.final_test_err {
        println!("final test error {e:.4}");
    }
    Ok(Outcome::Pass)
}

fn load_eval_set(d: &DataArgs) -> Result<LabeledImageSet> {
    let set = match (&d.images, &d.labels) {
        (Some(i), Some(l)) => load_idx_pair(i, l)?,
        _ => {
            let f = mnist_files(&d.mnist_dir)?;
            load_idx_pair(&f.test_images, &f.test_labels)?
        }
    };
    Ok(match d.limit {
        Some(n) => set.truncated(n),
        None => set,
    })
}

fn eval(a: &EvalArgs, dir: &RunDir) -> Result<Outcome> {
    let ck = read_checkpoint(&a.checkpoint)?;
    let set = load_eval_set(&a.data)?;
    let err = evaluate(&ck.model, &set, a.readout)?;
    println!("error rate {err:.4} on {} images ({} readout)", set.len(), a.readout);
    let record = json!({ "error_rate": err, "images": set.len(), "readout": a.readout.to_string() });
    dir.write("eval.json", &(serde_json::to_string_pretty(&record).expect("json") + "\n"))?;
    Ok(Outcome::Pass)
}

fn analyze(a: &AnalyzeArgs, dir: &RunDir) -> Result<Outcome> {
    let ck = read_checkpoint(&a.checkpoint)?;
    let model = &ck.model;
    let both = !a.votes && !a.contrib;
    let mut summary = serde_json::Map::new();
    if a.votes || both {
        let h = votes_per_memory(model, a.cutoff);
        let p = dir.file("votes.csv");
        h.write_csv(BufWriter::new(File::create(&p).map_err(|e| io_at(&p, e))?))
            .map_err(|e| io_at(&p, e))?;
        println!(
            "votes (cutoff {}): mean {:.3}, single-class fraction {:.3}",
            a.cutoff,
            h.mean_votes(),
            h.single_class_fraction()
        );
        summary.insert("cutoff".into(), json!(a.cutoff));
        summary.insert("mean_votes".into(), json!(h.mean_votes()));
        summary.insert("single_class_fraction".into(), json!(h.single_class_fraction()));
    }
    if a.contrib || both {
        let set = load_eval_set(&a.data)?;
        let h = dominant_contributions(model, &set, a.band, a.channel)?;
        let p = dir.file("contributions.csv");
        h.write_csv(BufWriter::new(File::create(&p).map_err(|e| io_at(&p, e))?))
            .map_err(|e| io_at(&p, e))?;
        println!(
            "dominant contributions (band {}): single-memory fraction {:.3} over {} images",
            a.band,
            h.single_memory_fraction(),
            h.total()
        );
        summary.insert("band".into(), json!(a.band));
        summary.insert("single_memory_fraction".into(), json!(h.single_memory_fraction()));
    }
    let indices: Vec<usize> = a.export.iter().copied().filter(|&i| i < model.n_memories()).collect();
    if !indices.is_empty() {
        let written = export_memory_images(model, &indices, &dir.file("memories"))?;
        println!("wrote {} memory images", written.len() - 1);
    }
    dir.write(
        "analyze.json",
        &(serde_json::to_string_pretty(&serde_json::Value::Object(summary)).expect("json") + "\n"),
    )?;
    Ok(Outcome::Pass)
}
