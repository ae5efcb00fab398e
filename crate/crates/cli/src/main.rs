//! `dehaze`: dataset synthesis, training, inference, evaluation and gradient checks.
//!
//! Exit status: 0 on success, 1 on a runtime failure, 2 on a usage error.
//! `DEHAZE_THREADS` sizes the worker pool; `DEHAZE_DETERMINISTIC=1` pins it
//! to a single thread.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dehaze_core::checks::{run_case, run_suite, CheckResult, CASES};
use dehaze_core::haze::{invert_haze, transmission_from_depth, HazeParams, DEFAULT_T_FLOOR};
use dehaze_core::io::{
    load_corpus, load_depth, load_image, save_image, write_dataset, CorpusItem, Manifest, RunConfig,
};
use dehaze_core::metrics::{evaluate_manifest, Evaluation, RecordPair};
use dehaze_core::nn::Checkpoint;
use dehaze_core::scene::procedural_corpus;
use dehaze_core::train::{dehaze_image, train_loop};
use dehaze_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dehaze",
    version,
    about = "Single image dehazing with a conditional adversarial network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render hazy variants of a clean corpus and write a training manifest.
    Synth(SynthArgs),
    /// Train a generator (and discriminator) from a TOML run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Dehaze one PNG or every PNG in a directory.
    Dehaze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a dehazer on a manifest against the identity baseline.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck {
        /// Run a single case instead of the whole suite.
        #[arg(long)]
        op: Option<String>,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Manifest whose records carry `clean_path` and `depth_path`.
    #[arg(
        long,
        required_unless_present = "procedural",
        conflicts_with = "procedural"
    )]
    corpus: Option<PathBuf>,
    /// Generate this many procedural scenes instead of reading a corpus.
    #[arg(long)]
    procedural: Option<usize>,
    /// Side length of procedural scenes.
    #[arg(long, default_value_t = 64, requires = "procedural")]
    size: usize,
    #[arg(long, default_value_t = 3)]
    variants: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, conflicts_with = "analytic")]
    checkpoint: Option<PathBuf>,
    /// Invert the haze model with each record's true parameters.
    #[arg(long)]
    analytic: bool,
    /// Also write the full report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap exits 0 for --help/--version and 2 for usage errors
            e.exit();
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let deterministic = std::env::var("DEHAZE_DETERMINISTIC")
        .is_ok_and(|v| !matches!(v.as_str(), "" | "0" | "false"));
    let threads = match std::env::var("DEHAZE_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .map_err(|_| format!("DEHAZE_THREADS must be a positive integer, got `{v}`"))?,
        Err(_) => 0,
    };
    let threads = if deterministic { 1 } else { threads };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train { config } => train(&config),
        Command::Dehaze {
            checkpoint,
            input,
            out,
        } => dehaze(&checkpoint, &input, &out),
        Command::Eval(a) => eval(a),
        Command::Gradcheck { op } => gradcheck(op.as_deref()),
    }
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    let items = match (&a.corpus, a.procedural) {
        (Some(path), _) => {
            let (items, skipped) = load_corpus(&Manifest::load(path)?)?;
            for (name, why) in &skipped {
                log::warn!("corpus item {name} skipped: {why}");
            }
            items
        }
        (None, Some(n)) => procedural_corpus(n, a.size, a.size, a.seed)
            .into_iter()
            .enumerate()
            .map(|(i, (image, depth))| CorpusItem {
                name: format!("scene{i:04}"),
                image,
                depth,
            })
            .collect(),
        (None, None) => unreachable!("clap requires one corpus source"),
    };
    let (manifest, skipped) = write_dataset(&items, a.variants, a.seed, &a.out)?;
    for (name, why) in &skipped {
        log::warn!("{name}: {why}");
    }
    println!(
        "{} pairs from {} images -> {}",
        manifest.len(),
        items.len(),
        a.out.join("manifest.jsonl").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn train(config: &Path) -> Result<ExitCode> {
    let cfg = RunConfig::load(config)?;
    let outcome = train_loop(&cfg)?;
    if let Some(last) = outcome.log.last() {
        println!(
            "{} steps, final total loss {:.6}",
            outcome.log.len(),
            last.total
        );
    }
    if let Some(v) = outcome.validation.last() {
        println!(
            "validation: psnr {:.3} dB, ssim {:.4} (hazy input: {:.3} dB, {:.4})",
            v.psnr, v.ssim, v.baseline_psnr, v.baseline_ssim
        );
    }
    match outcome.last_checkpoint() {
        Some(p) => println!("checkpoint: {}", p.display()),
        None => println!("no checkpoint written"),
    }
    Ok(ExitCode::SUCCESS)
}

fn png_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::Io {
            path: input.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn dehaze(checkpoint: &Path, input: &Path, out: &Path) -> Result<ExitCode> {
    let gen = Checkpoint::load(checkpoint)?.generator::<f32>()?;
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let files = png_inputs(input)?;
    if files.is_empty() {
        return Err(Error::Param(format!("no PNG files in {}", input.display())));
    }
    for f in &files {
        let hazy = load_image(f)?;
        let clear = dehaze_image(&gen, &hazy)?;
        let dest = out.join(f.file_name().expect("file path"));
        save_image(&clear, &dest)?;
        println!("{} -> {}", f.display(), dest.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn analytic(manifest: &Manifest, p: &RecordPair<'_>) -> Result<dehaze_core::haze::SceneImage> {
    let r = p.record;
    let (Some(depth), Some(k), Some(beta)) = (&r.depth_path, r.k, r.beta) else {
        return Err(Error::Param(format!(
            "{} lacks depth_path, k or beta",
            r.clean_path.display()
        )));
    };
    let depth = load_depth(manifest.resolve(depth))?;
    let params = HazeParams::achromatic(k, beta);
    let t = transmission_from_depth(&depth, beta)?;
    Ok(invert_haze(&p.hazy, &t, &params, DEFAULT_T_FLOOR)?.clamped())
}

fn print_report(ev: &Evaluation) {
    println!("image\tpsnr\tssim\thazy_psnr\thazy_ssim");
    for (m, b) in ev.model.images.iter().zip(&ev.baseline.images) {
        println!(
            "{}\t{:.4}\t{:.5}\t{:.4}\t{:.5}",
            m.name, m.psnr, m.ssim, b.psnr, b.ssim
        );
    }
    println!();
    println!("images:     {}", ev.model.count);
    println!("skipped:    {}", ev.model.skipped);
    println!(
        "mean psnr:  {:.4} dB (hazy input {:.4} dB)",
        ev.model.mean_psnr, ev.baseline.mean_psnr
    );
    println!(
        "mean ssim:  {:.5} (hazy input {:.5})",
        ev.model.mean_ssim, ev.baseline.mean_ssim
    );
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let manifest = Manifest::load(&a.manifest)?;
    let ev = match (&a.checkpoint, a.analytic) {
        (Some(ck), _) => {
            let gen = Checkpoint::load(ck)?.generator::<f32>()?;
            evaluate_manifest(&manifest, |p| dehaze_image(&gen, &p.hazy))
        }
        (None, true) => evaluate_manifest(&manifest, |p| analytic(&manifest, p)),
        (None, false) => evaluate_manifest(&manifest, |p| Ok(p.hazy.clone())),
    };
    print_report(&ev);
    if let Some(path) = &a.report {
        let json = serde_json::to_string_pretty(&ev).expect("serializable report");
        fs::write(path, json).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(op: Option<&str>) -> Result<ExitCode> {
    let results: Vec<CheckResult> = match op {
        Some(name) => match run_case(name) {
            Some(r) => vec![r?],
            None => {
                eprintln!("error: unknown op `{name}`; known: {}", CASES.join(", "));
                return Ok(ExitCode::from(2));
            }
        },
        None => run_suite()?,
    };
    let mut ok = true;
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        ok &= r.passed();
        println!(
            "{:<20} {:.3e} (< {:.0e}) {status}",
            r.name, r.report.max_rel_error, r.threshold
        );
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
