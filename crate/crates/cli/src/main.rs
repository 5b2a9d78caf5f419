use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use morphfader::audio::AudioClip;
use morphfader::backend::{BackendRegistry, DiffusionBackend};
use morphfader::capture::{load_session, record_session, save_session};
use morphfader::error::{Error, Result};
use morphfader::evaluation::{
    ablation_report, load_pairs, smoothness_of_sweep, sweep_morph, sweep_weights, MorphMethod,
    PromptPair, SweepReport, DEFAULT_ALPHA_STEP,
};
use morphfader::morph::{
    parse_token_weights, run_morph, run_weighted, weights_for_tokens, ComponentMask, MorphConfig,
};

const SWEEP_MANIFEST: &str = "sweep.json";

/// Sound morphing by cross-attention interpolation in text-to-audio diffusion.
#[derive(Parser)]
#[command(name = "morphfader", version)]
struct Cli {
    /// Backend selector: `toy` or `adapter:<name>`.
    #[arg(long, global = true, env = "MORPHFADER_BACKEND", default_value = "toy")]
    backend: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Random seed for the initial noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Number of denoising steps.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a clip from a prompt, optionally recording its attention captures.
    Generate {
        #[arg(long)]
        prompt: String,
        #[command(flatten)]
        run: RunArgs,
        /// Output WAV path.
        #[arg(long)]
        out: PathBuf,
        /// Directory to write the capture session into.
        #[arg(long)]
        capture_dir: Option<PathBuf>,
        /// Pad the prompt with unconditional tokens up to this count.
        #[arg(long, default_value_t = 0)]
        pad_to: usize,
    },
    /// Morph between two recorded capture sessions.
    Morph {
        #[arg(long)]
        source_capture: PathBuf,
        #[arg(long)]
        target_capture: PathBuf,
        /// Morph position in [0, 1]; 0 is the source, 1 the target.
        #[arg(long)]
        alpha: f64,
        /// Components to inject: qkv, kv, qk, qv, q, k, v or none.
        #[arg(long, default_value = "qkv")]
        components: String,
        /// Per-token V weights, "token=value,...", applied to whichever session has the token.
        #[arg(long)]
        weights: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a morph sweep as morph_000.wav ... morph_100.wav.
    Sweep {
        #[arg(long)]
        source_prompt: String,
        #[arg(long)]
        target_prompt: String,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = DEFAULT_ALPHA_STEP)]
        alpha_step: f64,
        /// ours, mix or prompt.
        #[arg(long, default_value = "ours")]
        method: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Re-render a prompt with per-token V weights.
    Weight {
        #[arg(long)]
        prompt: String,
        #[command(flatten)]
        run: RunArgs,
        /// "token=value,..."; tokens not listed keep weight 1.
        #[arg(long, required_unless_present = "grid_token")]
        token_weights: Option<String>,
        #[arg(long, requires = "token_weights")]
        out: Option<PathBuf>,
        /// Sweep this token over the weight grid -2..3 instead.
        #[arg(long, conflicts_with = "token_weights", requires = "out_dir")]
        grid_token: Option<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Mean smoothness per component mask over a prompt-pair corpus.
    Ablate {
        /// JSON-lines file of {"source", "target", "word_type"} records.
        #[arg(long)]
        pairs: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// JSON report path; an aligned text table is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Smoothness of a rendered sweep directory.
    EvalSmoothness {
        #[arg(long)]
        sweep_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize, Deserialize)]
struct SweepManifest {
    method: MorphMethod,
    source: String,
    target: String,
    seed: u64,
    steps: usize,
    alphas: Vec<f64>,
    files: Vec<String>,
}

fn sweep_file_name(alpha: f64) -> String {
    format!("morph_{:03}.wav", (alpha * 100.0).round() as u32)
}

fn weight_file_name(w: f64) -> String {
    let w = w as i64;
    if w < 0 {
        format!("weight_m{}.wav", -w)
    } else {
        format!("weight_{w}.wav")
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn write_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    create_parent(path)?;
    clip.write_wav(path)
}

fn run(cli: Cli) -> Result<()> {
    let backend: Arc<dyn DiffusionBackend> = BackendRegistry::default().resolve(&cli.backend)?;
    let backend = backend.as_ref();
    match cli.command {
        Command::Generate {
            prompt,
            run,
            out,
            capture_dir,
            pad_to,
        } => {
            let session = record_session(backend, &prompt, run.seed, run.steps as usize, pad_to)?;
            write_wav(&session.audio, &out)?;
            if let Some(dir) = capture_dir {
                save_session(&session, dir)?;
            }
        }
        Command::Morph {
            source_capture,
            target_capture,
            alpha,
            components,
            weights,
            out,
        } => {
            let src = load_session(source_capture)?;
            let tgt = load_session(target_capture)?;
            let mut cfg = MorphConfig::new(alpha, components.parse::<ComponentMask>()?);
            if let Some(spec) = weights {
                let (sw, tw) = split_weights(
                    &parse_token_weights(&spec)?,
                    &src.token_strings,
                    &tgt.token_strings,
                )?;
                cfg.source_weights = Some(weights_for_tokens(&src.token_strings, &sw)?);
                cfg.target_weights = Some(weights_for_tokens(&tgt.token_strings, &tw)?);
            }
            write_wav(&run_morph(&src, &tgt, &cfg, backend)?, &out)?;
        }
        Command::Sweep {
            source_prompt,
            target_prompt,
            run,
            alpha_step,
            method,
            out_dir,
        } => {
            if alpha_step < 0.01 {
                return Err(Error::Range(format!(
                    "alpha step {alpha_step} is finer than the 1% file naming grid"
                )));
            }
            let method: MorphMethod = method.parse()?;
            let pair = PromptPair::new(source_prompt, target_prompt);
            let sweep = sweep_morph(
                &pair,
                run.seed,
                run.steps as usize,
                alpha_step,
                backend,
                method,
            )?;
            fs::create_dir_all(&out_dir)?;
            let mut files = Vec::with_capacity(sweep.len());
            for (alpha, clip) in &sweep {
                let name = sweep_file_name(*alpha);
                clip.write_wav(out_dir.join(&name))?;
                files.push(name);
            }
            let manifest = SweepManifest {
                method,
                source: pair.source,
                target: pair.target,
                seed: run.seed,
                steps: run.steps as usize,
                alphas: sweep.iter().map(|(a, _)| *a).collect(),
                files,
            };
            fs::write(
                out_dir.join(SWEEP_MANIFEST),
                serde_json::to_string_pretty(&manifest)?,
            )?;
        }
        Command::Weight {
            prompt,
            run,
            token_weights,
            out,
            grid_token,
            out_dir,
        } => {
            let session = record_session(backend, &prompt, run.seed, run.steps as usize, 0)?;
            if let (Some(token), Some(dir)) = (grid_token, out_dir) {
                let index = session
                    .token_strings
                    .iter()
                    .position(|t| *t == token)
                    .ok_or_else(|| Error::UnknownToken {
                        token: token.clone(),
                        valid: session.token_strings.join(", "),
                    })?;
                fs::create_dir_all(&dir)?;
                for (w, clip) in sweep_weights(&session, index, backend)? {
                    clip.write_wav(dir.join(weight_file_name(w)))?;
                }
            } else if let (Some(spec), Some(out)) = (token_weights, out) {
                let weights =
                    weights_for_tokens(&session.token_strings, &parse_token_weights(&spec)?)?;
                write_wav(&run_weighted(&session, &weights, backend)?, &out)?;
            } else {
                return Err(Error::Input(
                    "give --token-weights with --out, or --grid-token with --out-dir".into(),
                ));
            }
        }
        Command::Ablate { pairs, run, out } => {
            let pairs = load_pairs(pairs)?;
            let table = ablation_report(&pairs, run.seed, run.steps as usize, backend)?;
            create_parent(&out)?;
            table.write_json(&out)?;
            let text = table.to_text();
            fs::write(out.with_extension("txt"), &text)?;
            print!("{text}");
        }
        Command::EvalSmoothness { sweep_dir, out } => {
            let (pair, method, entries) = read_sweep_dir(&sweep_dir)?;
            let clips = entries
                .into_iter()
                .map(|(a, path)| Ok((a, AudioClip::read_wav(path)?)))
                .collect::<Result<Vec<_>>>()?;
            let report = SweepReport::new(method, pair, smoothness_of_sweep(&clips)?);
            create_parent(&out)?;
            report.write_json(&out)?;
            println!("rho = {:.6}", report.rho);
        }
    }
    Ok(())
}

type WeightList = Vec<(String, f64)>;
type SweepFiles = Vec<(f64, PathBuf)>;

/// Routes each `token=value` to the session(s) containing the token.
fn split_weights(
    all: &[(String, f64)],
    src_tokens: &[String],
    tgt_tokens: &[String],
) -> Result<(WeightList, WeightList)> {
    let (mut sw, mut tw) = (Vec::new(), Vec::new());
    for (tok, w) in all {
        let in_src = src_tokens.contains(tok);
        let in_tgt = tgt_tokens.contains(tok);
        if !in_src && !in_tgt {
            let mut valid: Vec<&str> = src_tokens
                .iter()
                .chain(tgt_tokens)
                .map(String::as_str)
                .collect();
            valid.sort_unstable();
            valid.dedup();
            return Err(Error::UnknownToken {
                token: tok.clone(),
                valid: valid.join(", "),
            });
        }
        if in_src {
            sw.push((tok.clone(), *w));
        }
        if in_tgt {
            tw.push((tok.clone(), *w));
        }
    }
    Ok((sw, tw))
}

/// Reads `sweep.json` if present, otherwise infers alphas from
/// `morph_XXX.wav` file names.
fn read_sweep_dir(dir: &Path) -> Result<(PromptPair, String, SweepFiles)> {
    let manifest_path = dir.join(SWEEP_MANIFEST);
    if manifest_path.exists() {
        let m: SweepManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        let entries = m
            .alphas
            .iter()
            .zip(&m.files)
            .map(|(a, f)| (*a, dir.join(f)))
            .collect();
        return Ok((
            PromptPair::new(m.source, m.target),
            m.method.to_string(),
            entries,
        ));
    }
    if !dir.is_dir() {
        return Err(Error::MissingFile {
            path: dir.to_path_buf(),
        });
    }
    let mut entries = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(pct) = name
            .strip_prefix("morph_")
            .and_then(|r| r.strip_suffix(".wav"))
            .and_then(|p| p.parse::<u32>().ok())
        {
            entries.push((pct as f64 / 100.0, path));
        }
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok((
        PromptPair::new("unknown", "unknown"),
        "unknown".into(),
        entries,
    ))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            ExitCode::FAILURE
        }
    }
}
