//! `classreg` command-line front end.
//!
//! Every subcommand prints a human-readable table followed by a single line
//! of JSON on stdout (`--json` prints only the JSON). Errors go to stderr as
//! one JSON object. Exit codes: 0 ok, 1 runtime failure, 2 configuration or
//! usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use classreg::persistence::load_checkpoint;
use classreg::profiling::{compare_latency, count_flops, host_description, CostReport};
use classreg::saliency::{compute_block_saliency, export_frames, write_index, SaliencyIndex};
use classreg::synth::{generate_clip, make_split, ClipSpec};
use classreg::training::{evaluate, paired_comparison, train};
use classreg::{Error, Network, RunConfig, Tensor};

#[derive(Parser)]
#[command(name = "classreg", version, about = "3D CNNs with class-regularization blocks")]
struct Cli {
    /// Print only the JSON report.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes metrics JSONL and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Strip every class-regularization block.
        #[arg(long)]
        no_classreg: bool,
    },
    /// Paired baseline vs class-regularized runs over several seeds.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// Validation accuracy and per-block class agreement of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// `val` or `train`.
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Export per-block saliency frames for one clip as PGM images.
    Saliency {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clip_index: usize,
        /// Class index, or `auto` for each block's own selected class.
        #[arg(long, default_value = "auto")]
        class: String,
        #[arg(long)]
        out: PathBuf,
        /// Dataset override; defaults to the generator stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Analytic multiply-accumulate counts.
    Flops {
        #[arg(long)]
        config: PathBuf,
    },
    /// Median single-clip forward latency with and without blocks.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 30)]
        samples: usize,
    },
}

struct Report {
    table: String,
    json: Value,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Input(_) => 2,
        _ => 1,
    }
}

fn configure_threads() {
    #[cfg(feature = "parallel")]
    {
        let threads = std::env::var("CLASSREG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(1).max(1);
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match run(cli.command) {
        Ok(report) => {
            if !cli.json {
                print!("{}", report.table);
            }
            println!("{}", report.json);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> classreg::Result<Report> {
    match cmd {
        Command::Train { config, seed, no_classreg } => cmd_train(&config, seed, no_classreg),
        Command::Compare { config, seeds } => cmd_compare(&config, seeds),
        Command::Eval { checkpoint, config, split } => cmd_eval(&checkpoint, &config, &split),
        Command::Saliency { checkpoint, clip_index, class, out, config } => {
            cmd_saliency(&checkpoint, clip_index, &class, &out, config.as_deref())
        }
        Command::Flops { config } => cmd_flops(&config),
        Command::Bench { config, samples } => cmd_bench(&config, samples),
    }
}

fn load_config(path: &Path, no_classreg: bool) -> classreg::Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if no_classreg {
        cfg.classreg.clear();
    }
    Ok(cfg)
}

fn cmd_train(path: &Path, seed: Option<u64>, no_classreg: bool) -> classreg::Result<Report> {
    let mut cfg = load_config(path, no_classreg)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let tc = cfg.train_config()?;
    let outcome = train(&tc)?;
    let mut table = format!("{:>5} {:>8} {:>10} {:>9} {:>8}  agreement\n", "epoch", "lr", "loss", "train@1", "val@1");
    for m in &outcome.metrics {
        let agree: Vec<String> = m.block_agreement.iter().map(|a| format!("{a:.3}")).collect();
        table += &format!(
            "{:>5} {:>8.4} {:>10.5} {:>9.4} {:>8.4}  [{}]\n",
            m.epoch,
            m.lr,
            m.train_loss,
            m.train_top1,
            m.val_top1,
            agree.join(", ")
        );
    }
    let json = json!({
        "command": "train",
        "seed": tc.params.seed,
        "classreg_blocks": tc.network.classreg.len(),
        "best_epoch": outcome.best_epoch,
        "final": outcome.metrics.last(),
        "checkpoint": tc.checkpoint,
        "metrics": tc.metrics,
    });
    Ok(Report { table, json })
}

fn cmd_compare(path: &Path, seeds: usize) -> classreg::Result<Report> {
    let tc = load_config(path, false)?.train_config()?;
    let report = paired_comparison(&tc, seeds)?;
    Ok(Report { table: report.table(), json: serde_json::to_value(&report)? })
}

fn cmd_eval(checkpoint: &Path, config: &Path, split: &str) -> classreg::Result<Report> {
    let cfg = load_config(config, false)?;
    let ck = load_checkpoint(checkpoint)?;
    if ck.meta.network != cfg.network_spec() {
        return Err(Error::Config("checkpoint architecture does not match the config's network".into()));
    }
    let mut net = ck.to_network()?;
    let (train_set, val_set) = make_split(&cfg.dataset.clip_spec(), cfg.dataset.train_size, cfg.dataset.val_size)?;
    let set = match split {
        "val" => val_set,
        "train" => train_set,
        other => return Err(Error::Input(format!("unknown split '{other}' (use val or train)"))),
    };
    let rep = evaluate(&mut net, &set)?;
    let agree: Vec<String> = rep.block_agreement.iter().map(|a| format!("{a:.4}")).collect();
    let table = format!(
        "split {split}: {} clips, top-1 {:.4}, block agreement [{}]\n",
        rep.samples,
        rep.top1,
        agree.join(", ")
    );
    let mut json = serde_json::to_value(&rep)?;
    json["split"] = json!(split);
    Ok(Report { table, json })
}

fn cmd_saliency(
    checkpoint: &Path,
    clip_index: usize,
    class: &str,
    out: &Path,
    config: Option<&Path>,
) -> classreg::Result<Report> {
    let ck = load_checkpoint(checkpoint)?;
    let spec: ClipSpec = match config {
        Some(p) => load_config(p, false)?.dataset.clip_spec(),
        None => ck
            .meta
            .dataset
            .clone()
            .ok_or_else(|| Error::Config("checkpoint does not record its dataset; pass --config".into()))?,
    };
    let requested = match class {
        "auto" => None,
        c => Some(
            c.parse::<usize>().map_err(|_| Error::Input(format!("--class must be an index or 'auto', got '{c}'")))?,
        ),
    };
    let mut net: Network = ck.to_network()?;
    if net.blocks().is_empty() {
        return Err(Error::Config("model has no class-regularization blocks".into()));
    }
    let (clip, label) = generate_clip(&spec, clip_index)?;
    let geometry = spec.geometry();
    let batch = clip.reshape(&[1, geometry[0], geometry[1], geometry[2], geometry[3]])?;
    let logits = net.forward(&batch)?;
    let prediction = Tensor::argmax(logits.data());
    let mut index = SaliencyIndex::default();
    let mut table = format!("clip {clip_index}: label {label}, predicted {prediction}\n");
    for (b, (placement, block)) in net.blocks().iter().enumerate() {
        let c = requested.unwrap_or_else(|| block.selected().expect("forward ran")[0]);
        let map = compute_block_saliency(block, b, 0, c, geometry)?;
        let frames = export_frames(&map, [geometry[1], geometry[2], geometry[3]], out, "saliency")?;
        table += &format!("block {b} (after layer {placement}): class {c}, {} frames\n", frames.len());
        index.frames.extend(frames);
    }
    write_index(out, &index)?;
    let json = json!({
        "command": "saliency",
        "clip_index": clip_index,
        "label": label,
        "prediction": prediction,
        "out": out,
        "files": index.frames,
    });
    Ok(Report { table, json })
}

fn cost_table(r: &CostReport) -> String {
    let mut s = format!("{:>5} {:<16} {:>14}\n", "layer", "kind", "MACs");
    for l in &r.layers {
        s += &format!("{:>5} {:<16} {:>14}\n", l.index, l.kind, l.macs);
    }
    for b in &r.blocks {
        s += &format!("{:>5} {:<16} {:>14}\n", format!("+{}", b.placement), "classreg", b.macs);
    }
    s += &format!("total MACs without blocks {:>14}\n", r.total_macs_without);
    s += &format!("total MACs with blocks    {:>14}\n", r.total_macs_with);
    s += &format!("FLOPs without / with      {} / {}\n", r.flops_without, r.flops_with);
    s
}

fn cmd_flops(path: &Path) -> classreg::Result<Report> {
    let cfg = load_config(path, false)?;
    let report = count_flops(&cfg.network_spec(), 1)?;
    Ok(Report { table: cost_table(&report), json: serde_json::to_value(&report)? })
}

fn cmd_bench(path: &Path, samples: usize) -> classreg::Result<Report> {
    let cfg = load_config(path, false)?;
    let spec = cfg.network_spec();
    let mut report = count_flops(&spec, 1)?;
    let clip_spec = cfg.dataset.clip_spec();
    let (clip, _) = generate_clip(&clip_spec, 0)?;
    let g = clip_spec.geometry();
    let clip = clip.reshape(&[1, g[0], g[1], g[2], g[3]])?;
    let lat = compare_latency(&spec, cfg.train.seed, &clip, samples)?;
    let table = format!(
        "{}host: {}\nbaseline median {:.4} ms (IQR {:.4})\nclassreg median {:.4} ms (IQR {:.4})\nadded latency   {:+.4} ms over {} samples\n",
        cost_table(&report),
        host_description(),
        lat.baseline.median_ms,
        lat.baseline.iqr_ms,
        lat.classreg.median_ms,
        lat.classreg.iqr_ms,
        lat.added_ms,
        samples
    );
    report.latency = Some(lat);
    Ok(Report { table, json: serde_json::to_value(&report)? })
}
