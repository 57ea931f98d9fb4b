//! Command-line front end. `main.rs` only forwards to [`run`].

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{half_space_grid, HalfSpace, MicArray, DEFAULT_SOUND_SPEED};
use crate::encoders::{
    cache_key, cached_matrix, dsb_matrix, encode, ls_encoding_matrix, EncodingMatrix, DEFAULT_LAMBDA,
};
use crate::error::Error;
use crate::metrics::{evaluate, reports_to_csv, EvalInputs, HrtfSet, MetricsReport};
use crate::neural::{apply_crf, concat_vls_ref, energy_normalize, select_channel, CrfSet};
use crate::sh::{mirror_parity_signs, spherical_design, Direction, DirectionGrid, GridPreset};
use crate::signal::AmbisonicSignal;
use crate::sim::{generate_noise_dataset, simulate_random, simulate_scene, SceneMeta, SceneSpec};
use crate::spatial::{estimate_doa_on, localization_error, power_map};
use crate::stft::{Spectrogram, Stft, DEFAULT_FFT_SIZE, DEFAULT_HOP_SIZE};
use crate::wav::{read_wav, write_wav};

pub const CACHE_ENV: &str = "AMBIFORGE_CACHE";

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPUTE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "ambiforge",
    version,
    about = "Ambisonic encoding, simulation and evaluation"
)]
pub struct Cli {
    /// Worker threads for file- and scene-level parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// JSON file with default settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render scenes into microphone and ground-truth Ambisonic WAV files.
    Simulate(SimulateArgs),
    /// Encode a microphone recording to second-order Ambisonics.
    Encode(EncodeArgs),
    /// Compare estimated and reference Ambisonic signals.
    Eval(EvalArgs),
    /// Broadband spatial power map of an Ambisonic signal.
    Powermap(PowermapArgs),
    /// Direction-of-arrival estimate from the power-map peak.
    Doa(DoaArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene JSON file (template for `--noise-dataset`).
    #[arg(long, conflicts_with = "random")]
    pub scene: Option<PathBuf>,
    /// Number of random scenes to generate.
    #[arg(long)]
    pub random: Option<usize>,
    /// White-noise localization dataset of this many items.
    #[arg(long, conflicts_with = "random")]
    pub noise_dataset: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dsb,
    Ls1,
    Ls2,
    Crf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HalfSpaceArg {
    Upper,
    Lower,
    Unknown,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Multichannel microphone WAV.
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long, value_enum)]
    pub halfspace: Option<HalfSpaceArg>,
    /// Complex filter file(s): one (mics → SH) or two (mics → speakers,
    /// speakers + reference mic → SH).
    #[arg(long)]
    pub mask: Vec<PathBuf>,
    /// Array preset or geometry file.
    #[arg(long)]
    pub array: Option<String>,
    /// Steering grid for the least-squares encoders.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Estimated Ambisonic WAV, or a directory of them.
    #[arg(long)]
    pub est: PathBuf,
    /// Reference Ambisonic WAV, or a directory with matching names.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// HRTF manifest; enables the binaural metrics.
    #[arg(long)]
    pub hrtf: Option<PathBuf>,
    /// True source direction `theta_deg,phi_deg`; enables localization errors.
    #[arg(long, conflicts_with = "meta")]
    pub truth: Option<String>,
    /// Scene `meta.json`, first truth direction used.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PowermapArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub grid: Option<String>,
    /// CSV output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional 360 × 181 grayscale image.
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DoaArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, conflicts_with = "meta")]
    pub truth: Option<String>,
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Settings readable from `--config`. Missing fields keep their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct RunConfig {
    pub fft_size: usize,
    pub hop_size: usize,
    pub lambda: f64,
    pub grid: String,
    pub dsb_grid: String,
    pub map_grid: String,
    pub array: String,
    pub sound_speed: f64,
    pub order: usize,
    pub method: Option<Method>,
    pub halfspace: Option<HalfSpaceArg>,
    pub seed: u64,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            fft_size: DEFAULT_FFT_SIZE,
            hop_size: DEFAULT_HOP_SIZE,
            lambda: DEFAULT_LAMBDA,
            grid: "equiangular-5deg".into(),
            dsb_grid: "dsb-160".into(),
            map_grid: "design-50-1296".into(),
            array: "circle8-r5cm".into(),
            sound_speed: DEFAULT_SOUND_SPEED,
            order: 2,
            method: None,
            halfspace: None,
            seed: 0,
            workers: None,
        }
    }
}

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Compute(_) => EXIT_COMPUTE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Compute(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_)
            | Error::Json(_)
            | Error::Wav(_)
            | Error::Image(_)
            | Error::UnknownPreset(_)
            | Error::Parse { .. }
            | Error::Format(_) => CliError::Usage(e.to_string()),
            other => CliError::Compute(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses arguments, runs the subcommand and returns the process exit code.
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
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("ambiforge: {e}");
            e.exit_code()
        }
    }
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
    }
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> CliResult<()> {
    let config = load_config(cli.config.as_deref())?;
    let workers = cli.workers.or(config.workers);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(usage("--workers must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Compute(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, &config),
        Command::Encode(a) => cmd_encode(a, &config),
        Command::Eval(a) => cmd_eval(a, &config),
        Command::Powermap(a) => cmd_powermap(a, &config),
        Command::Doa(a) => cmd_doa(a, &config),
    })
}

pub fn cmd_simulate(a: &SimulateArgs, config: &RunConfig) -> CliResult<()> {
    let seed = a.seed.unwrap_or(config.seed);
    if let Some(n) = a.random {
        if n == 0 {
            return Err(usage("--random needs at least one scene"));
        }
        simulate_random(n, seed, &a.out)?;
        return Ok(());
    }
    if let Some(n) = a.noise_dataset {
        let mut template = match &a.scene {
            Some(p) => SceneSpec::load(p)?,
            None => SceneSpec::single(Direction::from_degrees(90.0, 0.0), seed),
        };
        if a.seed.is_some() {
            template.seed = seed;
        }
        std::fs::create_dir_all(&a.out).map_err(Error::from)?;
        generate_noise_dataset(n, &template, &a.out)?;
        return Ok(());
    }
    let Some(path) = &a.scene else {
        return Err(usage("simulate needs --scene, --random or --noise-dataset"));
    };
    let mut spec = SceneSpec::load(path)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    simulate_scene(&spec)?.write_to(&a.out)?;
    Ok(())
}

fn grid_from(name: &str) -> CliResult<DirectionGrid> {
    Ok(spherical_design(&name.parse::<GridPreset>()?)?)
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

fn ls_matrix(
    kind: &str,
    array: &MicArray,
    grid: &DirectionGrid,
    config: &RunConfig,
    lambda: f64,
    freqs: &[f64],
    fs: u32,
) -> CliResult<EncodingMatrix> {
    let key = cache_key(kind, array, grid, config.order, freqs, lambda, config.sound_speed);
    Ok(cached_matrix(cache_dir().as_deref(), &key, fs, || {
        ls_encoding_matrix(array, grid, config.order, freqs, lambda, config.sound_speed)
    })?)
}

/// Encodes a microphone spectrogram with the chosen method.
#[allow(clippy::too_many_arguments)]
pub fn encode_spectrogram(
    x: &Spectrogram,
    method: Method,
    halfspace: HalfSpaceArg,
    masks: &[CrfSet],
    array: &MicArray,
    config: &RunConfig,
    lambda: f64,
    grid_name: &str,
) -> CliResult<Spectrogram> {
    let freqs = x.bin_frequencies();
    let fs = x.sample_rate;
    match method {
        Method::Dsb => {
            let speakers = grid_from(&config.dsb_grid)?;
            let key = cache_key(
                "dsb",
                array,
                &speakers,
                config.order,
                &freqs,
                0.0,
                config.sound_speed,
            );
            let e = cached_matrix(cache_dir().as_deref(), &key, fs, || {
                dsb_matrix(array, &speakers, config.order, &freqs, config.sound_speed)
            })?;
            Ok(encode(&e, x)?)
        }
        Method::Ls1 => {
            let grid = grid_from(grid_name)?;
            let e = ls_matrix("ls1", array, &grid, config, lambda, &freqs, fs)?;
            Ok(encode(&e, x)?)
        }
        Method::Ls2 => {
            let hs = match halfspace {
                HalfSpaceArg::Upper => HalfSpace::Upper,
                HalfSpaceArg::Lower => HalfSpace::Lower,
                HalfSpaceArg::Unknown => return Err(usage("method ls2 needs --halfspace upper or lower")),
            };
            let grid = half_space_grid(&grid_from(grid_name)?, hs)?;
            let kind = if hs == HalfSpace::Upper {
                "ls2-upper"
            } else {
                "ls2-lower"
            };
            let e = ls_matrix(kind, array, &grid, config, lambda, &freqs, fs)?;
            Ok(encode(&e, x)?)
        }
        Method::Crf => {
            let reference = select_channel(x, 0)?;
            let bhat = match masks {
                [single] => apply_crf(single, x)?,
                [first, second] => {
                    let vls = apply_crf(first, x)?;
                    apply_crf(second, &concat_vls_ref(&vls, &reference)?)?
                }
                [] => return Err(usage("method crf needs --mask")),
                _ => return Err(usage("method crf takes one or two --mask files")),
            };
            let (mut b, _) = energy_normalize(&bhat, &reference)?;
            if halfspace == HalfSpaceArg::Lower {
                let signs = mirror_parity_signs(config.order);
                signs.apply_along(b.data.view_mut(), 0)?;
            }
            Ok(b)
        }
    }
}

pub fn cmd_encode(a: &EncodeArgs, config: &RunConfig) -> CliResult<()> {
    let method = a
        .method
        .or(config.method)
        .ok_or_else(|| usage("encode needs --method"))?;
    let halfspace = a.halfspace.or(config.halfspace).unwrap_or(HalfSpaceArg::Unknown);
    if method == Method::Ls2 && halfspace == HalfSpaceArg::Unknown {
        return Err(usage("method ls2 needs --halfspace upper or lower"));
    }
    if method == Method::Crf && a.mask.is_empty() {
        return Err(usage("method crf needs --mask"));
    }
    let masks = a
        .mask
        .iter()
        .map(CrfSet::load)
        .collect::<crate::Result<Vec<_>>>()?;
    let array = MicArray::load(a.array.as_deref().unwrap_or(&config.array))?;
    let mics = read_wav(&a.input)?;
    if mics.channels() != array.len() {
        return Err(CliError::Compute(format!(
            "{} has {} channels but the array has {} microphones",
            a.input.display(),
            mics.channels(),
            array.len()
        )));
    }
    let stft = Stft::new(config.fft_size, config.hop_size)?;
    let x = stft.forward(&mics)?;
    let lambda = a.lambda.unwrap_or(config.lambda);
    let grid_name = a.grid.as_deref().unwrap_or(&config.grid);
    let b = encode_spectrogram(&x, method, halfspace, &masks, &array, config, lambda, grid_name)?;
    let out = stft.inverse(&b)?;
    write_wav(&a.out, &out)?;
    Ok(())
}

fn parse_truth(truth: Option<&str>, meta: Option<&Path>) -> CliResult<Option<Direction>> {
    if let Some(t) = truth {
        let parts: Vec<&str> = t.split(',').map(str::trim).collect();
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| usage(format!("--truth expects `theta_deg,phi_deg`, got `{t}`")))?;
        if nums.len() != 2 {
            return Err(usage(format!("--truth expects `theta_deg,phi_deg`, got `{t}`")));
        }
        return Ok(Some(Direction::from_degrees(nums[0], nums[1])));
    }
    if let Some(p) = meta {
        let text = std::fs::read_to_string(p).map_err(Error::from)?;
        let meta: SceneMeta = serde_json::from_str(&text).map_err(Error::from)?;
        let first = meta
            .truth
            .first()
            .ok_or_else(|| usage(format!("{} lists no sources", p.display())))?;
        return Ok(Some(first.to_direction()));
    }
    Ok(None)
}

fn read_ambisonic(path: &Path) -> CliResult<AmbisonicSignal> {
    Ok(AmbisonicSignal::new(read_wav(path)?)?)
}

fn wav_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(Error::from)? {
            let p = entry.map_err(Error::from)?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "wav") {
                out.push(p.strip_prefix(dir).expect("under dir").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn cmd_eval(a: &EvalArgs, config: &RunConfig) -> CliResult<()> {
    let hrtf = a.hrtf.as_ref().map(HrtfSet::load_manifest).transpose()?;
    let truth = parse_truth(a.truth.as_deref(), a.meta.as_deref())?;
    let stft = Stft::new(config.fft_size, config.hop_size)?;
    let pairs: Vec<(String, PathBuf, PathBuf)> = if a.est.is_dir() {
        if !a.reference.is_dir() {
            return Err(usage("--est is a directory, so --ref must be one too"));
        }
        wav_files(&a.est)?
            .into_iter()
            .map(|rel| {
                (
                    rel.to_string_lossy().into_owned(),
                    a.est.join(&rel),
                    a.reference.join(&rel),
                )
            })
            .collect()
    } else {
        let item = a
            .est
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "item".into());
        vec![(item, a.est.clone(), a.reference.clone())]
    };
    if pairs.is_empty() {
        return Err(usage(format!("no WAV files under {}", a.est.display())));
    }
    let reports: Vec<MetricsReport> = pairs
        .par_iter()
        .map(|(item, est, reference)| {
            let est = read_ambisonic(est)?;
            let reference = read_ambisonic(reference)?;
            if est.data().dim() != reference.data().dim() {
                return Err(CliError::Compute(format!(
                    "{item}: estimate {:?} and reference {:?} differ in shape",
                    est.data().dim(),
                    reference.data().dim()
                )));
            }
            let inputs = EvalInputs {
                item,
                estimate: &est,
                reference: &reference,
                hrtf: hrtf.as_ref(),
                truth,
            };
            Ok(evaluate(&inputs, &stft)?)
        })
        .collect::<CliResult<_>>()?;
    std::fs::write(&a.out, reports_to_csv(&reports)).map_err(Error::from)?;
    Ok(())
}

fn nonzero(b: &AmbisonicSignal, path: &Path) -> CliResult<()> {
    if !(b.signal().energy() > 0.0) {
        return Err(CliError::Compute(format!("{} is silent", path.display())));
    }
    Ok(())
}

pub fn cmd_powermap(a: &PowermapArgs, config: &RunConfig) -> CliResult<()> {
    let b = read_ambisonic(&a.input)?;
    nonzero(&b, &a.input)?;
    let grid = grid_from(a.grid.as_deref().unwrap_or(&config.map_grid))?;
    let map = power_map(&b, &grid);
    map.write_csv(&a.out)?;
    if let Some(p) = &a.png {
        map.write_png(p)?;
    }
    Ok(())
}

/// Contents of the `doa` output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoaReport {
    pub theta_deg: f64,
    pub phi_deg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub az_err: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub el_err: Option<f64>,
}

pub fn cmd_doa(a: &DoaArgs, config: &RunConfig) -> CliResult<()> {
    let b = read_ambisonic(&a.input)?;
    nonzero(&b, &a.input)?;
    let grid = grid_from(a.grid.as_deref().unwrap_or(&config.map_grid))?;
    let d = estimate_doa_on(&b, &grid)?;
    let truth = parse_truth(a.truth.as_deref(), a.meta.as_deref())?;
    let errs = truth.map(|t| localization_error(&d, &t));
    let report = DoaReport {
        theta_deg: d.theta_deg(),
        phi_deg: d.phi_deg(),
        az_err: errs.map(|e| e.0),
        el_err: errs.map(|e| e.1),
    };
    std::fs::write(
        &a.out,
        serde_json::to_string_pretty(&report).map_err(Error::from)?,
    )
    .map_err(Error::from)?;
    Ok(())
}
