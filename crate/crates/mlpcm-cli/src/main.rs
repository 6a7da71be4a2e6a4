//! mlpcm command line: lossless JPEG recompression, verification, lossy
//! transcoding, training, benchmarks, and analysis reports.
//!
//! All subcommands exit 0 on success and nonzero with a diagnostic on stderr
//! otherwise.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mlpcm::analysis::{
    analyze_rho_with, bench_dir, column_entropy_report, jpeg_paths, schedule_report,
    similarity_report, BenchOptions, RhoReport, Transform,
};
use mlpcm::jpeg::{parse_jpeg, quality_tables_per_component, Subsampling};
use mlpcm::nets::{Model, Variant, ALL_VARIANTS};
use mlpcm::pipeline::{decode_file, encode_file, inspect, transcode_image, verify_file};
use mlpcm::trainer::{train_cbcr_net, train_y_net, Dataset, TrainConfig, TrainReport};

#[derive(Parser)]
#[command(name = "mlpcm", version, about = "Lossless recompression of baseline JPEG")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Report {
    Table,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NetChoice {
    Y,
    Cbcr,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MapChoice {
    /// Frequency-to-frequency cosine map.
    Freq,
    /// Per-block cosine against the central block.
    Block,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransformChoice {
    Dct,
    Identity,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SubsamplingChoice {
    #[value(name = "444")]
    S444,
    #[value(name = "420")]
    S420,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    ALL_VARIANTS
        .into_iter()
        .find(|v| v.as_str() == s)
        .ok_or_else(|| {
            let names: Vec<&str> = ALL_VARIANTS.iter().map(|v| v.as_str()).collect();
            format!("unknown variant `{s}` (one of: {})", names.join(", "))
        })
}

#[derive(Subcommand)]
enum Cmd {
    /// Losslessly recompress a JPEG file into a container.
    Encode {
        input: PathBuf,
        output: PathBuf,
        /// Model checkpoint.
        #[arg(long)]
        model: PathBuf,
    },
    /// Regenerate the exact original JPEG bytes from a container.
    Decode {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Worker threads for the parallel luma lanes.
        #[arg(long, default_value_t = 3)]
        lanes: usize,
    },
    /// Encode and decode in memory, confirming byte-exact reconstruction.
    Verify {
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 3)]
        lanes: usize,
    },
    /// Requantize through the given quality's tables, then store losslessly.
    Transcode {
        input: PathBuf,
        output: PathBuf,
        /// Target JPEG quality (1-100) for the requantization tables.
        #[arg(long)]
        qp: u8,
        #[arg(long)]
        model: PathBuf,
    },
    /// Train a model on a directory of JPEGs and save a checkpoint.
    Train {
        /// TOML training config (patch, batch, lr, qp, stages, seed).
        #[arg(long)]
        config: PathBuf,
        /// Directory of training JPEGs (uniform subsampling).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Which networks to train.
        #[arg(long, value_enum, default_value_t = NetChoice::Both)]
        net: NetChoice,
        /// Architecture for a fresh model (ignored with --resume).
        #[arg(long, value_parser = parse_variant, default_value = "full")]
        variant: Variant,
        /// Feature width for a fresh model (ignored with --resume).
        #[arg(long, default_value_t = 64)]
        m: usize,
        /// Continue from an existing checkpoint instead of a fresh init.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Loss-log prefix; writes `<prefix>.y.csv` / `<prefix>.cbcr.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Benchmark every JPEG in a directory (each row is a full round trip).
    Bench {
        dir: PathBuf,
        /// Model checkpoint; alternatively give --variant for an untrained
        /// model (structural benches).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        /// Feature width used with --variant.
        #[arg(long, default_value_t = 64)]
        m: usize,
        #[arg(long, default_value_t = 3)]
        lanes: usize,
        /// Requantize through each quality before coding, one row per
        /// (file, qp).
        #[arg(long, value_delimiter = ',')]
        qp_sweep: Vec<u8>,
        #[arg(long, value_enum, default_value_t = Report::Table)]
        report: Report,
    },
    /// Corpus and model reports.
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
    /// Print a container's geometry and section layout.
    Inspect { input: PathBuf },
}

#[derive(Subcommand)]
enum Analyze {
    /// Zero counts: quantized coefficients vs rounded inverse transform.
    Rho {
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = TransformChoice::Dct)]
        transform: TransformChoice,
        #[arg(long, value_enum, default_value_t = Report::Table)]
        report: Report,
    },
    /// Conditional luma bits per frequency column over a corpus.
    Entropy {
        dir: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = Report::Table)]
        report: Report,
    },
    /// Cosine similarity maps of the luma plane (CSV).
    Similarity {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = MapChoice::Freq)]
        map: MapChoice,
    },
    /// Per-step decode MACs, critical path, and totals for a variant.
    Schedule {
        #[arg(long, value_parser = parse_variant)]
        variant: Variant,
        #[arg(long, default_value_t = 64)]
        m: usize,
        /// Nominal image size the grids are derived from.
        #[arg(long, default_value_t = 512)]
        width: u32,
        #[arg(long, default_value_t = 512)]
        height: u32,
        #[arg(long, value_enum, default_value_t = SubsamplingChoice::S444)]
        subsampling: SubsamplingChoice,
        #[arg(long, value_enum, default_value_t = Report::Table)]
        report: Report,
    },
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn save_log(report: &TrainReport, prefix: &Path, tag: &str) -> Result<()> {
    let mut name = prefix.as_os_str().to_os_string();
    name.push(format!(".{tag}.csv"));
    let path = PathBuf::from(name);
    report.write_csv(&path).with_context(|| format!("writing {}", path.display()))?;
    println!("loss log: {}", path.display());
    Ok(())
}

/// Padded hyper grids for a nominal image, as the codec derives them.
fn nominal_grids(
    width: u32,
    height: u32,
    subsampling: Subsampling,
) -> ((usize, usize), (usize, usize)) {
    let even = |x: usize| x + x % 2;
    let padded = |x: usize| x.next_multiple_of(4);
    let (bw, bh) = ((width as usize).div_ceil(8), (height as usize).div_ceil(8));
    let y_grid = (padded(even(bh) / 2), padded(even(bw) / 2));
    let (cbw, cbh) = match subsampling {
        Subsampling::Ycbcr444 => (bw, bh),
        Subsampling::Ycbcr420 => ((width as usize).div_ceil(16), (height as usize).div_ceil(16)),
    };
    let c_grid = (padded(even(cbh)), padded(even(cbw)));
    (y_grid, c_grid)
}

fn rho_table(rows: &[(String, RhoReport)]) -> String {
    let mut out = String::new();
    let w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(4).max(4);
    out.push_str(&format!(
        "{:<w$}  {:>10}  {:>10}  {:>10}  {:>8}  {:>8}\n",
        "file", "total", "zeros_dct", "zeros_px", "frac_dct", "frac_px"
    ));
    for (name, r) in rows {
        out.push_str(&format!(
            "{name:<w$}  {:>10}  {:>10}  {:>10}  {:>8.4}  {:>8.4}\n",
            r.total,
            r.zeros_dct,
            r.zeros_pixel,
            r.dct_zero_fraction(),
            r.pixel_zero_fraction()
        ));
    }
    out
}

fn rho_csv(rows: &[(String, RhoReport)]) -> String {
    let mut out = String::from("file,transform,total,zeros_dct,zeros_pixel,frac_dct,frac_pixel\n");
    for (name, r) in rows {
        let t = match r.transform {
            Transform::Dct8x8 => "dct",
            Transform::Identity => "identity",
        };
        out.push_str(&format!(
            "{name},{t},{},{},{},{:.6},{:.6}\n",
            r.total,
            r.zeros_dct,
            r.zeros_pixel,
            r.dct_zero_fraction(),
            r.pixel_zero_fraction()
        ));
    }
    out
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Encode { input, output, model } => {
            let model = load_model(&model)?;
            let bytes = read(&input)?;
            let container = encode_file(&bytes, &model)
                .with_context(|| format!("encoding {}", input.display()))?;
            write(&output, &container)?;
            let pct = 100.0 * (1.0 - container.len() as f64 / bytes.len() as f64);
            let trend = if pct >= 0.0 { "saved" } else { "grew" };
            println!(
                "{} ({} bytes) -> {} ({} bytes, {trend} {:.2}%)",
                input.display(),
                bytes.len(),
                output.display(),
                container.len(),
                pct.abs()
            );
        }
        Cmd::Decode { input, output, model, lanes } => {
            let model = load_model(&model)?;
            let container = read(&input)?;
            let jpeg = decode_file(&container, &model, lanes)
                .with_context(|| format!("decoding {}", input.display()))?;
            write(&output, &jpeg)?;
            println!("{} -> {} ({} bytes)", input.display(), output.display(), jpeg.len());
        }
        Cmd::Verify { input, model, lanes } => {
            let model = load_model(&model)?;
            let bytes = read(&input)?;
            let ok = verify_file(&bytes, &model, lanes)
                .with_context(|| format!("verifying {}", input.display()))?;
            if !ok {
                bail!("{}: decoded bytes differ from the source file", input.display());
            }
            println!("OK bit-exact ({} bytes)", bytes.len());
        }
        Cmd::Transcode { input, output, qp, model } => {
            if !(1..=100).contains(&qp) {
                bail!("--qp {qp} out of range 1..=100");
            }
            let model = load_model(&model)?;
            let bytes = read(&input)?;
            let img =
                parse_jpeg(&bytes).with_context(|| format!("parsing {}", input.display()))?;
            let container = transcode_image(&img, &quality_tables_per_component(qp), &model)
                .with_context(|| format!("transcoding {}", input.display()))?;
            write(&output, &container)?;
            println!(
                "{} -> {} at qp {qp} ({} bytes)",
                input.display(),
                output.display(),
                container.len()
            );
        }
        Cmd::Train { config, data, out, net, variant, m, resume, log } => {
            let cfg = TrainConfig::from_path(&config)?;
            let dataset = Dataset::load(&data)?;
            println!(
                "{} images ({}), variant {variant}, m={m}",
                dataset.len(),
                match dataset.subsampling {
                    Subsampling::Ycbcr444 => "4:4:4",
                    Subsampling::Ycbcr420 => "4:2:0",
                }
            );
            let mut model = match &resume {
                Some(path) => load_model(path)?,
                None => Model::new(variant, m, cfg.seed),
            };
            if matches!(net, NetChoice::Y | NetChoice::Both) {
                let report = train_y_net(&mut model, &dataset, &cfg)?;
                println!("y net: {} steps, final bpp_y {:.4}", report.rows.len(), report.final_bpp());
                if let Some(prefix) = &log {
                    save_log(&report, prefix, "y")?;
                }
            }
            if matches!(net, NetChoice::Cbcr | NetChoice::Both) {
                let report = train_cbcr_net(&mut model, &dataset, &cfg)?;
                println!(
                    "cbcr net: {} steps, final bpp_cbcr {:.4}",
                    report.rows.len(),
                    report.final_bpp()
                );
                if let Some(prefix) = &log {
                    save_log(&report, prefix, "cbcr")?;
                }
            }
            model.save(&out).with_context(|| format!("saving {}", out.display()))?;
            println!("checkpoint: {}", out.display());
        }
        Cmd::Bench { dir, model, variant, m, lanes, qp_sweep, report } => {
            let model = match (model, variant) {
                (Some(path), None) => load_model(&path)?,
                (None, Some(v)) => Model::new(v, m, 0x6d6c_7063),
                (Some(_), Some(_)) => bail!("--model and --variant are mutually exclusive"),
                (None, None) => bail!("need --model CHECKPOINT or --variant NAME"),
            };
            let out = bench_dir(&dir, &model, &BenchOptions { lanes, qp_sweep })?;
            match report {
                Report::Csv => print!("{}", out.to_csv()),
                Report::Table => print!("{}", out.to_table()),
            }
        }
        Cmd::Analyze { what } => run_analyze(what)?,
        Cmd::Inspect { input } => {
            let container = read(&input)?;
            let info = inspect(&container)
                .with_context(|| format!("inspecting {}", input.display()))?;
            let sub = match info.subsampling {
                Subsampling::Ycbcr444 => "4:4:4",
                Subsampling::Ycbcr420 => "4:2:0",
            };
            let variant = Variant::from_code(info.variant_code)
                .map_or("unknown", |v| v.as_str());
            println!(
                "{}x{} {sub}, variant {variant}, m={}, digest {:016x}",
                info.width, info.height, info.m, info.digest
            );
            println!(
                "y blocks {}x{}, c blocks {}x{}",
                info.y_grid.0, info.y_grid.1, info.c_grid.0, info.c_grid.1
            );
            for (id, len) in &info.sections {
                println!("section {id:>2}: {len} bytes");
            }
        }
    }
    Ok(())
}

fn run_analyze(what: Analyze) -> Result<()> {
    match what {
        Analyze::Rho { inputs, transform, report } => {
            if inputs.is_empty() {
                bail!("no inputs");
            }
            let t = match transform {
                TransformChoice::Dct => Transform::Dct8x8,
                TransformChoice::Identity => Transform::Identity,
            };
            let mut rows = Vec::new();
            for path in &inputs {
                let img = parse_jpeg(&read(path)?)
                    .with_context(|| format!("parsing {}", path.display()))?;
                let name =
                    path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into());
                rows.push((name, analyze_rho_with(&img, t)));
            }
            match report {
                Report::Csv => print!("{}", rho_csv(&rows)),
                Report::Table => print!("{}", rho_table(&rows)),
            }
        }
        Analyze::Entropy { dir, model, report } => {
            let model = load_model(&model)?;
            let mut imgs = Vec::new();
            for path in jpeg_paths(&dir)? {
                imgs.push(
                    parse_jpeg(&read(&path)?)
                        .with_context(|| format!("parsing {}", path.display()))?,
                );
            }
            if imgs.is_empty() {
                bail!("no inputs in {}", dir.display());
            }
            let out = column_entropy_report(&model, &imgs);
            match report {
                Report::Csv => print!("{}", out.to_csv()),
                Report::Table => {
                    println!("{:>6}  {:>5}  {:>14}  {:>10}  {:>10}", "column", "width", "bits", "symbols", "bits/sym");
                    for j in 0..9 {
                        println!(
                            "{:>6}  {:>5}  {:>14.1}  {:>10}  {:>10.4}",
                            j + 1,
                            mlpcm::layout::COLUMN_WIDTHS[j],
                            out.bits[j],
                            out.symbols[j],
                            out.bits_per_symbol(j)
                        );
                    }
                    println!("total conditional luma bits: {:.1}", out.total_bits());
                }
            }
        }
        Analyze::Similarity { input, map } => {
            let img = parse_jpeg(&read(&input)?)
                .with_context(|| format!("parsing {}", input.display()))?;
            let r = similarity_report(&img);
            match map {
                MapChoice::Freq => print!("{}", r.freq_csv()),
                MapChoice::Block => print!("{}", r.block_csv()),
            }
        }
        Analyze::Schedule { variant, m, width, height, subsampling, report } => {
            let sub = match subsampling {
                SubsamplingChoice::S444 => Subsampling::Ycbcr444,
                SubsamplingChoice::S420 => Subsampling::Ycbcr420,
            };
            let (y_grid, c_grid) = nominal_grids(width, height, sub);
            let r = schedule_report(variant, m, y_grid, c_grid);
            match report {
                Report::Csv => print!("{}", r.to_csv()),
                Report::Table => print!("{}", r.to_table()),
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
