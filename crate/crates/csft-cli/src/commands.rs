use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use csft::filters::{derive_params, Filter};
use csft::hashing::audit::{self, ProbabilityAudit};
use csft::locate::{check_duration_any, sufficient_duration};
use csft::metrics::{snr_estimate, MetricsFile};
use csft::recover::{recovery_stage, substream, RecoveryConfig, TonesFile};
use csft::signal::{noise_level, random_tones, NoiseModel, Oracle, SignalFile, SignalOracle, SparseSignal, Tone};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{Domain, EvalArgs, FilterDumpArgs, GenArgs, HashStatsArgs, RecoverArgs};

/// A malformed flag value.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn open_out(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

pub fn parse_noise(spec: &str, seed: u64) -> Result<NoiseModel> {
    if spec == "none" {
        return Ok(NoiseModel::none());
    }
    let sigma = spec
        .strip_prefix("gaussian:")
        .and_then(|s| s.parse::<f64>().ok())
        .filter(|s| s.is_finite() && *s >= 0.0)
        .ok_or_else(|| UsageError(format!("noise must be `none` or `gaussian:SIGMA`, got {spec:?}")))?;
    Ok(NoiseModel::white(sigma, seed))
}

pub fn gen(args: &GenArgs) -> Result<()> {
    let noise = parse_noise(&args.noise, args.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let tones = random_tones(args.k, args.d, args.band, args.eta, &mut rng)?;
    let signal = SparseSignal::new(args.d, args.band, args.eta, args.duration, tones)?;
    write_json(&args.out, &SignalFile::from_parts(&signal, &noise))
}

/// Provenance record written next to every recovery.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_echo: RecoveryConfig,
    pub seed: u64,
    pub library_version: String,
    pub wall_time_s: f64,
    pub samples: u64,
    pub duration: f64,
    pub sampled_duration: f64,
    pub duration_violated: bool,
}

#[derive(Debug, Serialize)]
struct RecoverOutput {
    #[serde(flatten)]
    tones: TonesFile,
    duration_violated: bool,
}

fn manifest_path(args: &RecoverArgs) -> PathBuf {
    args.manifest.clone().unwrap_or_else(|| {
        let mut name = args.out.file_stem().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        args.out.with_file_name(name)
    })
}

pub fn recover(args: &RecoverArgs) -> Result<()> {
    let start = Instant::now();
    let file: SignalFile = read_json(&args.signal)?;
    let (signal, noise) = file.into_parts()?;
    let k = args.k.unwrap_or(signal.k()).max(1);
    let params = derive_params(k, signal.d, args.filter.delta, signal.band, signal.eta, &args.filter.overrides())?;
    let filter = Filter::new(params.clone())?;
    let mut cfg = RecoveryConfig::new(params, args.c_ratio, args.seed)?;
    if let Some(r) = args.rmerge {
        cfg = cfg.with_r_merge(r);
        cfg.validate()?;
    }

    let duration = signal.duration;
    let violated = match check_duration_any(&filter, &cfg.locate, duration) {
        Ok(()) => false,
        Err(e) if args.force => {
            eprintln!("warning: {e}; continuing past T");
            true
        }
        Err(e) => return Err(e.into()),
    };
    let sampled_duration = if violated { sufficient_duration(&filter, &cfg.locate, duration) } else { duration };
    let extended = SparseSignal { duration: sampled_duration, ..signal };
    let oracle = SignalOracle::new(extended, noise);

    let rec = recovery_stage(&oracle, &filter, &cfg, k)?;
    write_json(&args.out, &RecoverOutput { tones: TonesFile::new(k, &cfg, &rec.tones), duration_violated: violated })?;
    let manifest = RunManifest {
        command: "recover".into(),
        config_echo: cfg.clone(),
        seed: args.seed,
        library_version: env!("CARGO_PKG_VERSION").into(),
        wall_time_s: start.elapsed().as_secs_f64(),
        samples: oracle.samples_taken(),
        duration,
        sampled_duration,
        duration_violated: violated,
    };
    write_json(&manifest_path(args), &manifest)
}

enum Recovered {
    Tones(Box<TonesFile>),
    Signal(Vec<Tone>),
}

fn read_recovered(path: &Path) -> Result<Recovered> {
    let value: serde_json::Value = read_json(path)?;
    if value.get("config_echo").is_some() {
        let file: TonesFile = serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
        Ok(Recovered::Tones(Box::new(file)))
    } else {
        let file: SignalFile = serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
        Ok(Recovered::Signal(file.into_parts()?.0.tones))
    }
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let truth: SignalFile = read_json(&args.truth)?;
    let (signal, noise) = truth.into_parts()?;
    let recovered = read_recovered(&args.recovered)?;
    let tones = match &recovered {
        Recovered::Tones(f) => f.tones(),
        Recovered::Signal(t) => t.clone(),
    };
    if tones.iter().any(|t| t.f.len() != signal.d) {
        return Err(UsageError("recovered tones have the wrong dimension".into()).into());
    }
    let level = noise_level(&signal, &noise, args.delta);
    let mut snr = Vec::new();
    if args.snr_trials > 0 {
        let Recovered::Tones(file) = &recovered else {
            return Err(UsageError("--snr-trials needs a tones file from `recover`".into()).into());
        };
        let cfg = &file.config_echo;
        let filter = Filter::new(cfg.filter.clone())?;
        let oracle = SignalOracle::new(signal.clone(), noise.clone());
        for (i, t) in signal.tones.iter().enumerate() {
            let mut rng = substream(args.seed, u64::MAX, i as u64);
            snr.push(snr_estimate(&oracle, &filter, &cfg.locate, t, args.snr_trials, &mut rng)?);
        }
    }
    let metrics = MetricsFile::new(&signal.tones, &tones, signal.eta, signal.duration, level, snr);
    write_json(&args.out, &metrics)
}

/// Odd number of evenly spaced points on `[-r, r]`, so that 0 is included.
fn symmetric_grid(r: f64, points: usize) -> Vec<f64> {
    let n = points.max(3) | 1;
    let half = (n / 2) as f64;
    (0..n).map(|i| r * (i as f64 - half) / half).collect()
}

pub fn filter_dump(args: &FilterDumpArgs) -> Result<()> {
    let p = derive_params(args.k, args.d, args.filter.delta, args.band, args.eta, &args.filter.overrides())?;
    let filter = Filter::new(p.clone())?;
    let mut w = csv::Writer::from_writer(open_out(args.out.as_ref())?);
    match args.domain {
        Domain::Time => {
            w.write_record(["t", "G", "filt"])?;
            for t in symmetric_grid(1.05 * p.support_half_width(), args.points) {
                w.serialize((t, filter.g_time(t), filter.filt1d_time(t)))?;
            }
        }
        Domain::Freq => {
            w.write_record(["f", "G_hat", "filt_hat"])?;
            for f in symmetric_grid(p.w as f64 + 1.0, args.points) {
                w.serialize((f, filter.g_hat(f), filter.filt1d_freq(f)))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct HashStats {
    d: usize,
    #[serde(rename = "B")]
    b: usize,
    alpha: f64,
    eta: f64,
    seed: u64,
    audits: Vec<ProbabilityAudit>,
}

pub fn hash_stats(args: &HashStatsArgs) -> Result<()> {
    let p = derive_params(args.k, args.d, args.filter.delta, 1.0, args.eta, &args.filter.overrides())?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let probe = vec![0.25 * args.eta; args.d];
    let mut audits = vec![audit::large_offset(&p, &probe, args.trials, &mut rng)];
    audits.extend(audit::deterministic_collisions(&p, args.trials, &mut rng));
    audits.push(audit::split_neighbours(&p, args.trials, &mut rng));
    let stats = HashStats { d: p.d, b: p.b, alpha: p.alpha, eta: p.eta, seed: args.seed, audits };
    let mut out = open_out(args.out.as_ref())?;
    serde_json::to_writer_pretty(&mut out, &stats)?;
    writeln!(out)?;
    Ok(())
}
