//! The `mian` command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 training
//! divergence, 4 failed verification.

mod config;

pub use config::{DataConfig, RunConfig};

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::attention::HeadTrace;
use crate::cim::{IMAGE_TO_TEXT, TEXT_TO_IMAGE};
use crate::data::{generate, read_embeddings, split, type_counts, write_embeddings, NewsSample};
use crate::error::{Error, Result};
use crate::hlm::l2l_prefix;
use crate::model::{
    check_params, forward_graph, init_model, read_checkpoint, sample_loss, save_checkpoint,
    Ablation, ForwardGraph, ModelConfig, IMAGE_PREFIX, TEXT_PREFIX,
};
use crate::numerics::{grad_check, ModelParams, Session, Tape, Tensor, Var, DEFAULT_STEP};
use crate::train::{evaluate, run_ablation_suite, train_with};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "mian",
    version,
    about = "Multimodal inverse attention network for fake news detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic MIANEMB1 file.
    Synth {
        /// Run configuration; its data.* and model shape keys apply.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides data.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on a stratified split and write a checkpoint plus JSONL metrics.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// MIANEMB1 file; defaults to data.path, else synthetic data.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out_checkpoint: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
        /// Comma list of blocks to disable; overrides the config.
        #[arg(long)]
        ablation: Option<Ablation>,
    },
    /// Score a checkpoint on every sample of a data file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Without a config the architecture is read off the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ablation: Option<Ablation>,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        /// Without a config the tiny model (d=8, 2 heads, 1 layer, m=u=4)
        /// is checked.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Finite-difference step.
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
    },
    /// Dump every attention map of one sample as CSV.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sample: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ablation: Option<Ablation>,
    },
    /// Train the full model and four ablations; write a comparison table.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default configuration file.
    Defaults,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Divergence { .. } => EXIT_DIVERGED,
                _ => EXIT_USAGE,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Synth { spec, out, seed } => cmd_synth(spec.as_deref(), &out, seed),
        Command::Train {
            config,
            data,
            out_checkpoint,
            metrics,
            ablation,
        } => cmd_train(
            config.as_deref(),
            data.as_deref(),
            &out_checkpoint,
            &metrics,
            ablation,
        ),
        Command::Eval {
            checkpoint,
            data,
            metrics,
            config,
            ablation,
        } => cmd_eval(
            &checkpoint,
            &data,
            metrics.as_deref(),
            config.as_deref(),
            ablation,
        ),
        Command::Gradcheck { config, step } => cmd_gradcheck(config.as_deref(), step),
        Command::Inspect {
            checkpoint,
            data,
            sample,
            out,
            config,
            ablation,
        } => cmd_inspect(
            &checkpoint,
            &data,
            sample,
            &out,
            config.as_deref(),
            ablation,
        ),
        Command::Ablate { config, data, out } => {
            cmd_ablate(config.as_deref(), data.as_deref(), &out)
        }
        Command::Defaults => {
            print!("{}", RunConfig::default().to_text());
            Ok(EXIT_OK)
        }
    }
}

fn read_data(path: &Path) -> Result<Vec<NewsSample>> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "data file {} does not exist",
            path.display()
        )));
    }
    read_embeddings(path)
}

/// Samples from `--data`, then `data.path`, then the synthetic generator.
fn load_samples(cfg: &RunConfig, data: Option<&Path>) -> Result<Vec<NewsSample>> {
    let samples = match data.or(cfg.data.path.as_deref()) {
        Some(p) => read_data(p)?,
        None => generate(&cfg.synth_spec())?,
    };
    let first = &samples[0];
    let (m, u, d) = (first.m(), first.u(), first.d());
    let want = (cfg.model.m, cfg.model.u, cfg.model.d_model);
    if (m, u, d) != want {
        return Err(Error::Config(format!(
            "data has m={m}, u={u}, d={d} but the model expects m={}, u={}, d={}",
            want.0, want.1, want.2
        )));
    }
    Ok(samples)
}

fn print_counts(samples: &[NewsSample]) {
    for (t, n) in type_counts(samples) {
        println!("{:<17} {n}", t.name());
    }
}

pub fn cmd_synth(spec: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<i32> {
    let mut cfg = RunConfig::load(spec)?;
    if let Some(s) = seed {
        cfg.data.seed = s;
    }
    let samples = generate(&cfg.synth_spec())?;
    write_embeddings(&samples, out)?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    print_counts(&samples);
    Ok(EXIT_OK)
}

pub fn cmd_train(
    config: Option<&Path>,
    data: Option<&Path>,
    out_checkpoint: &Path,
    metrics: &Path,
    ablation: Option<Ablation>,
) -> Result<i32> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(a) = ablation {
        cfg.model.ablation = a;
    }
    let samples = load_samples(&cfg, data)?;
    let (train_set, test_set) = split(&samples, cfg.data.train_fraction, cfg.seed)?;
    let params = init_model(&cfg.model)?;

    let mut out = BufWriter::new(fs::File::create(metrics)?);
    let mut write_err = None;
    let outcome = train_with(
        &cfg.model,
        params,
        &train_set,
        &test_set,
        &cfg.train,
        |reports| {
            for r in reports {
                if let Err(e) = writeln!(out, "{}", r.to_json_line()) {
                    write_err.get_or_insert(e);
                }
                eprintln!(
                    "epoch {:>3} {:<5} loss {:.4} acc {:.4}",
                    r.epoch.unwrap_or(0),
                    r.split,
                    r.loss,
                    r.acc
                );
            }
            let _ = out.flush();
        },
    );
    if let Some(e) = write_err {
        return Err(e.into());
    }
    let outcome = outcome?;
    out.flush()?;
    save_checkpoint(&outcome.params, &cfg.model, out_checkpoint)?;
    println!(
        "{}: trained {} epochs on {} samples, checkpoint {}",
        cfg.model.ablation.variant_name(),
        cfg.train.epochs,
        train_set.len(),
        out_checkpoint.display()
    );
    Ok(EXIT_OK)
}

fn count_indexed(params: &ModelParams, path: impl Fn(usize) -> String) -> usize {
    (0..).take_while(|&i| params.contains(&path(i))).count()
}

/// Reconstructs the architecture from parameter shapes; `m` and `u` come
/// from the data.
pub fn infer_config(params: &ModelParams, m: usize, u: usize) -> Result<ModelConfig> {
    let n_layers = count_indexed(params, |l| format!("{}.Wcat", l2l_prefix(TEXT_PREFIX, l)));
    let n_heads = count_indexed(params, |h| {
        format!("{}.head{h}.Wq", l2l_prefix(TEXT_PREFIX, 0))
    });
    let d_model = params.get("clf.W1")?.rows() / 4;
    let classifier_hidden = params.get("clf.b1")?.len();
    let cfg = ModelConfig {
        d_model,
        n_heads,
        n_layers,
        m,
        u,
        classifier_hidden,
        ..ModelConfig::desk()
    };
    cfg.validate()?;
    check_params(&cfg, params)?;
    Ok(cfg)
}

/// Loads a checkpoint and the model configuration it belongs to.
fn load_model(
    checkpoint: &Path,
    samples: &[NewsSample],
    config: Option<&Path>,
    ablation: Option<Ablation>,
) -> Result<(ModelConfig, ModelParams)> {
    if !checkpoint.exists() {
        return Err(Error::Config(format!(
            "checkpoint {} does not exist",
            checkpoint.display()
        )));
    }
    let (fp, params) = read_checkpoint(checkpoint)?;
    let mut cfg = match config {
        Some(p) => RunConfig::from_file(p)?.model,
        None => infer_config(&params, samples[0].m(), samples[0].u())?,
    };
    if let Some(a) = ablation {
        cfg.ablation = a;
    }
    if fp != cfg.fingerprint() {
        return Err(Error::Fingerprint {
            expected: cfg.fingerprint(),
            found: fp,
        });
    }
    check_params(&cfg, &params)?;
    Ok((cfg, params))
}

pub fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    metrics: Option<&Path>,
    config: Option<&Path>,
    ablation: Option<Ablation>,
) -> Result<i32> {
    let samples = read_data(data)?;
    let (cfg, params) = load_model(checkpoint, &samples, config, ablation)?;
    let report = evaluate(
        &cfg,
        &params,
        &samples,
        RunConfig::default().train.threshold,
        "eval",
    )?;
    let line = report.to_json_line();
    if let Some(p) = metrics {
        fs::write(p, format!("{line}\n"))?;
    }
    println!("{line}");
    Ok(EXIT_OK)
}

pub fn cmd_gradcheck(config: Option<&Path>, step: f64) -> Result<i32> {
    let cfg = match config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig {
            model: ModelConfig::tiny(),
            ..RunConfig::default()
        },
    };
    let params = init_model(&cfg.model)?;
    let mut spec = cfg.synth_spec();
    spec.n_samples = 2;
    spec.class_mix = [0.5, 0.0, 0.0, 0.5];
    let samples = generate(&spec)?;
    let started = std::time::Instant::now();
    let report = grad_check(&params, step, |s: &mut Session| {
        let mut total: Option<Var> = None;
        for sample in &samples {
            let (l, _) = sample_loss(s, sample, &cfg.model)?;
            total = Some(match total {
                Some(t) => s.tape.add(t, l)?,
                None => l,
            });
        }
        total.ok_or_else(|| Error::Data("no samples".into()))
    })?;
    println!(
        "{:<48} {:>7} {:>12} {:>12}",
        "parameter", "entries", "max rel err", "max abs err"
    );
    for p in &report.params {
        println!(
            "{:<48} {:>7} {:>12.3e} {:>12.3e}",
            p.path, p.entries, p.max_rel_error, p.max_abs_error
        );
    }
    let worst = report.max_rel_error();
    println!(
        "max relative error {worst:.3e} over {} parameters ({:.1}s)",
        report.params.len(),
        started.elapsed().as_secs_f64()
    );
    if worst > GRADCHECK_TOL {
        for p in report.failures(GRADCHECK_TOL) {
            eprintln!("FAIL {} {:.3e}", p.path, p.max_rel_error);
        }
        return Ok(EXIT_VERIFY);
    }
    Ok(EXIT_OK)
}

fn write_csv(path: &Path, t: &Tensor) -> Result<()> {
    let mut out = String::new();
    for r in t.to_rows() {
        let cells: Vec<String> = r.iter().map(|x| x.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn push_heads(
    out: &mut Vec<(String, Tensor)>,
    tape: &Tape,
    prefix: &str,
    layers: &[Vec<HeadTrace>],
) {
    for (l, heads) in layers.iter().enumerate() {
        for (h, trace) in heads.iter().enumerate() {
            let site = format!("{prefix}.layer{l}.head{h}");
            out.push((
                format!("{site}.attention"),
                tape.value(trace.attention.weights).clone(),
            ));
            if let Some(inv) = trace.inverse {
                out.push((format!("{site}.inverse"), tape.value(inv.weights).clone()));
            }
        }
    }
}

/// Every attention map of one forward pass, named after the parameter
/// path prefix of the head or block that produced it.
pub fn attention_sites(tape: &Tape, graph: &ForwardGraph) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for (prefix, branch) in [(TEXT_PREFIX, &graph.text), (IMAGE_PREFIX, &graph.image)] {
        push_heads(&mut out, tape, &format!("{prefix}.l2l"), &branch.ll_layers);
        if let Some(lg) = &branch.lg {
            out.push((
                format!("{prefix}.l2g.attention"),
                tape.value(lg.weights).clone(),
            ));
            if let Some(inv) = lg.inv_weights {
                out.push((format!("{prefix}.l2g.inverse"), tape.value(inv).clone()));
            }
        }
    }
    push_heads(&mut out, tape, TEXT_TO_IMAGE, &graph.cim.text.layers);
    push_heads(&mut out, tape, IMAGE_TO_TEXT, &graph.cim.image.layers);
    out
}

pub fn cmd_inspect(
    checkpoint: &Path,
    data: &Path,
    index: usize,
    out: &Path,
    config: Option<&Path>,
    ablation: Option<Ablation>,
) -> Result<i32> {
    let samples = read_data(data)?;
    let sample = samples.get(index).ok_or_else(|| {
        Error::Config(format!(
            "sample {index} out of range, file holds {}",
            samples.len()
        ))
    })?;
    let (cfg, params) = load_model(checkpoint, &samples, config, ablation)?;
    let mut s = Session::forward_only(&params);
    let graph = forward_graph(&mut s, sample, &cfg)?;
    fs::create_dir_all(out)?;
    for (site, weights) in attention_sites(&s.tape, &graph) {
        let path = out.join(format!("{site}.csv"));
        write_csv(&path, &weights)?;
        println!("{}", path.display());
    }
    println!("y_hat {}", s.tape.value(graph.y_hat).data()[0]);
    Ok(EXIT_OK)
}

pub fn cmd_ablate(config: Option<&Path>, data: Option<&Path>, out: &Path) -> Result<i32> {
    let cfg = RunConfig::load(config)?;
    let samples = load_samples(&cfg, data)?;
    let (train_set, test_set) = split(&samples, cfg.data.train_fraction, cfg.seed)?;
    let table = run_ablation_suite(&train_set, &test_set, &cfg.model, &cfg.train)?;
    fs::create_dir_all(out)?;
    let md = table.to_markdown();
    fs::write(out.join("ablation.md"), &md)?;
    fs::write(out.join("ablation.json"), table.to_json())?;
    print!("{md}");
    Ok(EXIT_OK)
}
