use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aerodepth::dataio::raster::write_raster;
use aerodepth::dataio::sample::encode_rgb_png;
use aerodepth::dataio::{list_samples, load_checkpoint, read_sample, write_sample, SparseDepthMap};
use aerodepth::degrade::{degrade_dense, CorruptionSpec, MaskSpec, PixelRect, DEFAULT_DENSITY};
use aerodepth::harness::{
    compare_models, compare_uncertainty, false_color, load_samples, write_report, CorruptionGrid, EvalModel,
};
use aerodepth::losses::LossWeights;
use aerodepth::model::{prepare_input, ModelConfig};
use aerodepth::scenegen::{generate_sample, SceneParams};
use aerodepth::trainer::{train, TrainConfig, METRICS_FILE};
use aerodepth::uncertainty::{mc_dropout_predict, summarize_uncertainty, DEFAULT_PASSES};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "aerodepth",
    version,
    about = "Aerial depth completion with an auxiliary detection pathway"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic aerial samples.
    Generate(GenerateArgs),
    /// Re-sparsify, add noise and mask a dataset.
    Degrade(DegradeArgs),
    Train(TrainArgs),
    /// Monte-Carlo dropout mean and variance for one sample.
    Uncertainty(UncertaintyArgs),
    /// Single- vs multi-task robustness and uncertainty comparison.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Debug)]
struct Size {
    width: usize,
    height: usize,
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v}: {e}"));
        Ok(Size {
            width: parse(w)?,
            height: parse(h)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct SideRange(usize, usize);

impl FromStr for SideRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v = parse_list::<usize>(s, 2)?;
        Ok(SideRange(v[0], v[1]))
    }
}

fn parse_rect(s: &str) -> Result<PixelRect, String> {
    let v = parse_list::<usize>(s, 4)?;
    Ok(PixelRect {
        x: v[0],
        y: v[1],
        w: v[2],
        h: v[3],
    })
}

fn parse_list<T: FromStr>(s: &str, n: usize) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    let v = s
        .split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| format!("{p}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated values, got {}", v.len()));
    }
    Ok(v)
}

fn parse_weights(s: &str) -> Result<LossWeights, String> {
    let v = parse_list::<f64>(s, 4)?;
    Ok(LossWeights {
        w_consistency: v[0],
        w_smoothness: v[1],
        w_detection: v[2],
        lambda: v[3],
    })
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "320x240")]
    size: Size,
    /// Fraction of pixels kept in the sparse map.
    #[arg(long, default_value_t = DEFAULT_DENSITY)]
    density: f64,
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DENSITY)]
    density: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_level: f64,
    /// Number of uniformly placed missing-value boxes.
    #[arg(long, conflicts_with_all = ["mask_rect", "mask_structures"])]
    mask_random: Option<usize>,
    /// Side range of random boxes, `MIN,MAX` pixels.
    #[arg(long, default_value = "16,48")]
    mask_size: SideRange,
    /// Explicit box `x,y,w,h`; repeatable.
    #[arg(long, value_parser = parse_rect)]
    mask_rect: Vec<PixelRect>,
    /// Mask this many ground-truth structures per sample.
    #[arg(long, conflicts_with = "mask_rect")]
    mask_structures: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Width {
    /// Reduced channel widths, practical on a CPU.
    Compact,
    /// Full-size encoder and decoder.
    Full,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, value_enum, default_value = "on")]
    multitask: Switch,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `w_c,w_s,w_d,lambda`.
    #[arg(long, value_parser = parse_weights)]
    weights: Option<LossWeights>,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long, value_enum, default_value = "compact")]
    width: Width,
}

#[derive(Args)]
struct UncertaintyArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    sample: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PASSES)]
    passes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    single: PathBuf,
    #[arg(long)]
    multi: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also run the MC-dropout comparison with this many passes.
    #[arg(long)]
    passes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Structures masked per sample in the masked cells.
    #[arg(long, default_value_t = 1)]
    mask_count: usize,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(a) => generate(a),
        Command::Degrade(a) => degrade(a),
        Command::Train(a) => run_train(a),
        Command::Uncertainty(a) => uncertainty(a),
        Command::Compare(a) => compare(a),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let params = SceneParams {
        width: a.size.width,
        height: a.size.height,
        ..SceneParams::default()
    };
    for i in 0..a.count {
        let seed = a.seed.wrapping_add(i as u64);
        let sample = generate_sample(seed, &params, a.density).with_context(|| format!("sample seed {seed}"))?;
        write_sample(&sample, &a.out.join(format!("{i:05}")))?;
    }
    println!("wrote {} samples to {}", a.count, a.out.display());
    Ok(())
}

fn degrade(a: DegradeArgs) -> Result<()> {
    let masks = if let Some(count) = a.mask_random {
        MaskSpec::Random {
            count,
            min_size: a.mask_size.0,
            max_size: a.mask_size.1,
        }
    } else if let Some(count) = a.mask_structures {
        MaskSpec::OverStructures { count }
    } else if !a.mask_rect.is_empty() {
        MaskSpec::Rects {
            rects: a.mask_rect.clone(),
        }
    } else {
        MaskSpec::None
    };
    let dirs = list_samples(&a.input)?;
    if dirs.is_empty() {
        bail!("no samples under {}", a.input.display());
    }
    for (i, dir) in dirs.iter().enumerate() {
        let mut sample = read_sample(dir)?;
        let spec = CorruptionSpec {
            density: a.density,
            noise_level: a.noise_level,
            masks: masks.clone(),
            seed: a.seed.wrapping_add(i as u64),
        };
        let (sparse, _) = degrade_dense(&sample.dense_depth, &sample.boxes, &spec)
            .with_context(|| format!("degrading {}", dir.display()))?;
        sample.sparse_depth = SparseDepthMap::new(sparse.map, a.density)?;
        sample.meta.provenance.corruption.push(spec);
        let name = dir.file_name().context("sample directory has no name")?;
        write_sample(&sample, &a.out.join(name))?;
    }
    println!("degraded {} samples into {}", dirs.len(), a.out.display());
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        base_lr: a.lr,
        multitask: matches!(a.multitask, Switch::On),
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
        weights: a.weights.unwrap_or_default(),
        ..TrainConfig::default()
    };
    let mcfg = match a.width {
        Width::Compact => ModelConfig::compact(),
        Width::Full => ModelConfig::default(),
    };
    let outcome = train(&a.data, &a.out, &cfg, &mcfg)?;
    if let Some(last) = outcome.metrics.last() {
        println!(
            "epoch {}: consistency {:.4}, smoothness {:.4}, detection {:.4}, total {:.4}",
            last.epoch, last.l_consistency, last.l_smoothness, last.l_detection, last.total
        );
    }
    println!(
        "checkpoint {} (metrics in {})",
        a.out.display(),
        a.out.join(METRICS_FILE).display()
    );
    Ok(())
}

fn uncertainty(a: UncertaintyArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let sample = read_sample(&a.sample)?;
    let input = prepare_input(&sample.rgb, &sample.sparse_depth, &ckpt.config)?;
    let umap = mc_dropout_predict(&input, &ckpt.state, &ckpt.config, a.passes, a.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_raster(&a.out.join("mean.raw"), umap.width, umap.height, &umap.mean)?;
    write_raster(&a.out.join("variance.raw"), umap.width, umap.height, &umap.variance)?;
    let png = encode_rgb_png(&false_color(&umap.variance, umap.width, umap.height)?)?;
    write_file(&a.out.join("variance.png"), &png)?;
    if !sample.boxes.is_empty() {
        let s = summarize_uncertainty(&umap, &sample.boxes)?;
        let ratio = s.ratio.map(|r| format!("{r:.4}")).unwrap_or_else(|| "n/a".into());
        println!(
            "variance inside boxes {:.6}, outside {:.6}, ratio {ratio}",
            s.inside_mean, s.outside_mean
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let single = EvalModel::load(&a.single).context("loading single-task checkpoint")?;
    let multi = EvalModel::load(&a.multi).context("loading multi-task checkpoint")?;
    let samples = load_samples(&a.data)?;
    let grid = CorruptionGrid {
        masks: MaskSpec::OverStructures { count: a.mask_count },
        seed: a.seed,
        ..CorruptionGrid::default()
    };
    let mut report = compare_models(&single, &multi, &samples, &grid)?;
    if let Some(passes) = a.passes {
        report.uncertainty = Some(compare_uncertainty(&single, &multi, &samples, passes, a.seed)?);
    }
    for c in &report.cells {
        let masked = c
            .delta
            .masked_rmse
            .map(|d| format!("{d:+.4}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "noise {:.1} masks {:<3} rmse single {:.4} multi {:.4} delta {:+.4} masked delta {masked}",
            c.noise_level,
            if c.masks_on { "on" } else { "off" },
            c.single.aggregate.rmse,
            c.multi.aggregate.rmse,
            c.delta.rmse
        );
    }
    for p in write_report(&report, &a.out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
