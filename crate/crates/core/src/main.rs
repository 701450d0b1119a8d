use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qtomo::denoiser::{self, load_weights, predict_batch, Samples, TrainConfig};
use qtomo::experiments::{evaluate, learning_curve, parse_fractions, reconstruct_records, write_curve_csv, LearningCurveConfig, Scenario};
use qtomo::mle::{load_estimates, save_estimates, MleConfig};
use qtomo::optics::gouy_channel;
use qtomo::povm::{load_povm, rank_one_directions, save_povm, search_sic, PovmKind, SicSearchConfig};
use qtomo::process::{reconstruct_process, simulate_process_data, ChiFile};
use qtomo::quantum::{KrausChannel, Povm, ProbDistribution, PureState};
use qtomo::rng::child_seed;
use qtomo::sampler::{generate_dataset, Dataset, DatasetConfig};
use qtomo::{Error, Result};

#[derive(Parser)]
#[command(name = "qtomo", version, about = "Quantum state tomography with a neural denoiser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a tomography dataset as JSON Lines.
    GenDataset {
        #[arg(long, default_value_t = 6)]
        dim: usize,
        #[arg(long, default_value_t = 10_500)]
        states: usize,
        /// Shots per state; 0 writes exact probabilities.
        #[arg(long, default_value_t = 10_000)]
        shots: u64,
        /// clean, gouy, gouy+smf or agnostic.
        #[arg(long, default_value = "clean")]
        spam: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Ideal POVM; a SIC is built from the seed when omitted.
        #[arg(long)]
        povm: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Construct a SIC POVM.
    BuildPovm {
        #[arg(long, default_value_t = 6)]
        dim: usize,
        #[arg(long, default_value = "sic")]
        kind: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the denoising network.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        povm: PathBuf,
        #[arg(long, default_value = "7000,1500,2000")]
        split: String,
        #[arg(long, default_value_t = 1e-3)]
        eta: f64,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 3000)]
        max_epochs: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Maximum-likelihood reconstruction of every record.
    Reconstruct {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        povm: PathBuf,
        /// Denoise frequencies with these weights first.
        #[arg(long)]
        denoise: Option<PathBuf>,
        /// Keep only the dominant eigenvector.
        #[arg(long)]
        pure: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fidelity and purity statistics against the true states.
    Evaluate {
        #[arg(long)]
        estimates: PathBuf,
        /// Denoised estimates for the same records, reported as the `_nn` columns.
        #[arg(long)]
        estimates_nn: Option<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        hist: Option<PathBuf>,
    },
    /// Process tomography of a known channel.
    ProcessTomo {
        /// `gouy:PHI1,PHI2` or `identity`.
        #[arg(long)]
        channel: String,
        /// Shots per probe; 0 selects exact mode.
        #[arg(long, default_value_t = 0)]
        shots: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        povm: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test-set scores against the fraction of training data used.
    LearningCurve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "0.1:1.0:0.1")]
        fractions: String,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        /// Trailing records held out for testing.
        #[arg(long, default_value_t = 2000)]
        test_size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_split(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidConfig(format!("split `{s}` must be three integers")))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::InvalidConfig(format!("split `{s}` must be three integers"))),
    }
}

fn parse_channel(s: &str) -> Result<KrausChannel> {
    if s == "identity" {
        return Ok(KrausChannel::identity(6));
    }
    let bad = || Error::InvalidConfig(format!("channel `{s}` must be gouy:PHI1,PHI2 or identity"));
    let phases = s.strip_prefix("gouy:").ok_or_else(bad)?;
    let v: Vec<f64> = phases
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    match v[..] {
        [a, b] => Ok(gouy_channel(a, b)),
        _ => Err(bad()),
    }
}

fn sic_or_file(path: Option<&Path>, dim: usize, seed: u64) -> Result<Povm> {
    match path {
        Some(p) => load_povm(p),
        None => Ok(search_sic(&SicSearchConfig::new(dim, child_seed(seed, "sic", 0)))?.povm),
    }
}

fn check_dim(povm: &Povm, data: &Dataset) -> Result<()> {
    match data.outcomes() {
        Some(k) if k != povm.len() => Err(Error::DimensionMismatch { expected: povm.len(), got: k }),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDataset { dim, states, shots, spam, seed, povm, out } => {
            let scenario: Scenario = spam.parse()?;
            let ideal = sic_or_file(povm.as_deref(), dim, seed)?;
            let data = generate_dataset(&DatasetConfig::new(dim, states, shots, scenario.spam(), seed), &ideal)?;
            data.save_jsonl(&out)?;
            eprintln!("wrote {} records to {}", data.len(), out.display());
        }
        Command::BuildPovm { dim, kind, seed, out } => {
            if kind != "sic" {
                return Err(Error::InvalidConfig(format!("unknown POVM kind `{kind}`")));
            }
            let frame = search_sic(&SicSearchConfig::new(dim, seed))?;
            save_povm(&out, &frame.povm, PovmKind::Sic)?;
            eprintln!("SIC d={dim}: max overlap deviation {:.2e}", frame.max_deviation);
        }
        Command::Train { data, povm, split, eta, alpha, seed, max_epochs, out, history } => {
            let povm = load_povm(&povm)?;
            let data = Dataset::load_jsonl(&data)?;
            check_dim(&povm, &data)?;
            let split = parse_split(&split)?;
            let cfg = TrainConfig { split, eta, alpha, seed, max_epochs, ..TrainConfig::default() };
            if split.0 + split.1 > data.len() {
                return Err(Error::InsufficientData(format!(
                    "split needs {} records, file has {}",
                    split.0 + split.1,
                    data.len()
                )));
            }
            let parts = data.split(&[split.0, split.1, data.len() - split.0 - split.1])?;
            let val = (split.1 > 0).then(|| Samples::from_dataset(&parts[1])).transpose()?;
            let (params, hist) = denoiser::train(&Samples::from_dataset(&parts[0])?, val.as_ref(), &cfg)?;
            denoiser::save_weights(&out, &params, Some(&cfg))?;
            if let Some(h) = history {
                hist.write_csv(&h)?;
            }
            match hist.best_val_loss() {
                Some(kl) => eprintln!("best epoch {} of {}, validation KL {kl:.6}", hist.best_epoch, hist.stopped_epoch),
                None => eprintln!("trained {} epochs without validation", hist.stopped_epoch + 1),
            }
        }
        Command::Reconstruct { data, povm, denoise, pure, out } => {
            let povm = load_povm(&povm)?;
            let data = Dataset::load_jsonl(&data)?;
            check_dim(&povm, &data)?;
            let ids: Vec<u64> = data.records.iter().map(|r| r.id).collect();
            let mut freqs: Vec<Vec<f64>> = data.records.iter().map(|r| r.noisy_freqs.clone()).collect();
            if let Some(w) = denoise {
                freqs = predict_batch(&load_weights(&w)?, &freqs)?
                    .into_iter()
                    .map(ProbDistribution::into_vec)
                    .collect();
            }
            let truths: Option<Vec<PureState>> = data.records.iter().map(|r| r.true_state.clone()).collect();
            let mle = MleConfig { enforce_pure: pure, ..MleConfig::default() };
            let est = reconstruct_records(&ids, &freqs, &povm, &mle, truths.as_deref())?;
            save_estimates(&out, &est)?;
            let unconverged = est.iter().filter(|e| !e.converged).count();
            if unconverged > 0 {
                eprintln!("{unconverged} of {} reconstructions hit max_iterations", est.len());
            }
        }
        Command::Evaluate { estimates, estimates_nn, truth, out, hist } => {
            let raw = load_estimates(&estimates)?;
            let nn = estimates_nn.map(|p| load_estimates(&p)).transpose()?;
            let report = evaluate(&raw, nn.as_deref(), &Dataset::load_jsonl(&truth)?)?;
            report.write_json(&out)?;
            if let Some(h) = hist {
                report.write_histogram_csv(&h)?;
            }
            for (name, s) in &report.summary {
                eprintln!("{name:<18} {:.4} ± {:.4}", s.mean, s.std);
            }
        }
        Command::ProcessTomo { channel, shots, seed, povm, out } => {
            let channel = parse_channel(&channel)?;
            let povm = sic_or_file(povm.as_deref(), channel.dim(), seed)?;
            let probes: Vec<PureState> = rank_one_directions(&povm)
                .into_iter()
                .map(PureState::new)
                .collect::<Result<_>>()?;
            let data = simulate_process_data(&channel, &probes, &povm, shots, child_seed(seed, "process", 0))?;
            let chi = reconstruct_process(&data)?;
            if chi.model_mismatch {
                eprintln!("warning: projection residual {:.3} exceeds 0.1", chi.projection_residual);
            }
            let file = ChiFile::new(&chi);
            if let Some(g) = &file.gouy {
                eprintln!("gouy phases {:.4} {:.4}", g.phi1, g.phi2);
            }
            file.save(&out)?;
        }
        Command::LearningCurve { data, fractions, repeats, epochs, test_size, seed, out } => {
            let data = Dataset::load_jsonl(&data)?;
            if test_size == 0 || test_size >= data.len() {
                return Err(Error::InsufficientData(format!(
                    "test size {test_size} leaves no training pool in {} records",
                    data.len()
                )));
            }
            let parts = data.split(&[data.len() - test_size, test_size])?;
            let cfg = LearningCurveConfig {
                fractions: parse_fractions(&fractions)?,
                repeats,
                epochs,
                train: TrainConfig::default(),
                seed,
            };
            let rows = learning_curve(&parts[0], &parts[1], &cfg)?;
            write_curve_csv(&out, &rows)?;
            for r in &rows {
                eprintln!("{:.2}  KL {:.5}  B {:.4}", r.fraction, r.mean_kl, r.mean_bhattacharyya);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                ExitCode::from(3)
            } else if e.is_numerical() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
