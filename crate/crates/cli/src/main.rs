mod overrides;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use epsr_core::imaging::{bicubic_downsample, read_manifest, synth};
use epsr_core::metrics::{evaluate_pair, niqe_fit, read_ma_scores, MetricReport, NiqeModel, NiqeParams};
use epsr_core::tradeoff::{
    assign_region, fit_curve, published_scores, rank, read_scores_file, sweep, write_sweep_csv, SweepEntry,
    TradeoffPoint,
};
use epsr_core::trainer::{echo_config, merge_json, pretrain_generator, train_gan, RunOutputs};
use epsr_core::{Image, TrainConfig};

use overrides::parse_override;

#[derive(Parser, Debug)]
#[command(name = "epsr", version, about = "Perceptual x4 super-resolution: degrade, train, evaluate and rank")]
struct Cli {
    /// JSON training config; flags and overrides take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (checkpoints/, logs/, reports/, images/).
    #[arg(long, global = true, default_value = "runs/latest")]
    out: PathBuf,
    /// Config override `key.path=value`; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Start from the CPU-sized preset.
    #[arg(long, global = true, env = "EPSR_DESK_SCALE", value_parser = parse_flag, default_value = "0")]
    desk_scale: bool,
    #[command(subcommand)]
    command: Command,
}

fn parse_flag(s: &str) -> Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" | "0" | "false" | "no" => Ok(false),
        "1" | "true" | "yes" => Ok(true),
        other => Err(format!("expected 0/1, got {other:?}")),
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes the bicubic ×scale degradation of every manifest image.
    Degrade {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 4)]
        scale: usize,
    },
    /// MSE-only generator pretraining.
    Pretrain {
        #[arg(long)]
        train_manifest: PathBuf,
    },
    /// Adversarial training, optionally from a pretrained generator.
    Train {
        #[arg(long)]
        train_manifest: PathBuf,
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Scores estimates against references with matching file stems.
    Eval {
        #[arg(long)]
        est_dir: PathBuf,
        #[arg(long)]
        ref_dir: PathBuf,
        #[arg(long)]
        niqe_model: Option<PathBuf>,
        /// CSV with `image,ma` columns.
        #[arg(long)]
        ma_scores: Option<PathBuf>,
    },
    /// Region-wise ranking of a scores CSV (bundled published scores by default).
    Rank {
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<String>,
    },
    /// GAN training per (lambda2, lambda3) grid entry from one pretrained generator.
    Sweep {
        #[arg(long)]
        train_manifest: PathBuf,
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        eval_manifest: PathBuf,
        /// Comma-separated `lambda2:lambda3` pairs.
        #[arg(long, default_value = "0.05:0.4,0.02:0.4,0.0005:0.6")]
        grid: String,
        /// Pristine NIQE model; fitted on the training images when absent.
        #[arg(long)]
        niqe_model: Option<PathBuf>,
        #[arg(long, default_value_t = 96)]
        niqe_patch: usize,
        #[arg(long)]
        ma_scores: Option<PathBuf>,
    },
    /// Perception-distortion plane data and the fitted curve for a points CSV.
    Plane {
        /// Sweep output or any CSV with `label`, `rmse` and `pi` or `pi_or_niqe`.
        #[arg(long)]
        points: PathBuf,
    },
    /// Fits a pristine NIQE model.
    NiqeFit {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 96)]
        patch: usize,
    },
    /// Writes seeded synthetic RGB images and a manifest listing them.
    Synth {
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 96)]
        size: usize,
    },
}

struct Layout {
    root: PathBuf,
}

impl Layout {
    fn new(root: &Path) -> Result<Self> {
        for d in ["checkpoints", "logs", "reports", "images"] {
            fs::create_dir_all(root.join(d)).with_context(|| format!("creating {}", root.join(d).display()))?;
        }
        Ok(Layout { root: root.to_path_buf() })
    }

    fn dir(&self, d: &str) -> PathBuf {
        self.root.join(d)
    }
}

impl Cli {
    /// Defaults < config file < `--override`s < `--seed`.
    fn train_config(&self, base: Value) -> Result<TrainConfig> {
        let mut doc = base;
        if let Some(p) = &self.config {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            merge_json(&mut doc, &file);
        }
        for o in &self.overrides {
            merge_json(&mut doc, &parse_override(o)?);
        }
        if let Some(s) = self.seed {
            merge_json(&mut doc, &json!({ "seed": s }));
        }
        Ok(TrainConfig::from_value(&doc, self.desk_scale)?)
    }

    fn echo(&self, layout: &Layout, config: Option<&TrainConfig>) -> Result<()> {
        let argv: Vec<String> = std::env::args().collect();
        let run = json!({
            "argv": argv,
            "seed": self.seed,
            "desk_scale": self.desk_scale,
            "config_file": self.config,
            "overrides": self.overrides,
        });
        fs::write(layout.root.join("run.json"), serde_json::to_string_pretty(&run)?)?;
        if let Some(c) = config {
            echo_config(c, layout.root.join("config.json"))?;
        }
        Ok(())
    }

    fn reject_config_flags(&self, command: &str) -> Result<()> {
        if self.config.is_some() || !self.overrides.is_empty() {
            bail!("{command} takes no training config; drop --config/--override");
        }
        Ok(())
    }
}

fn load_images(manifest: &Path) -> Result<Vec<Image>> {
    let paths = read_manifest(manifest)?;
    if paths.is_empty() {
        bail!("manifest {} lists no images", manifest.display());
    }
    paths
        .iter()
        .map(|p| Image::load_png(p).map_err(Into::into))
        .collect()
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn png_stems(dir: &Path) -> Result<HashMap<String, PathBuf>> {
    let mut out = HashMap::new();
    for e in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = e?.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            out.insert(stem(&p), p);
        }
    }
    Ok(out)
}

fn parse_grid(spec: &str) -> Result<Vec<SweepEntry>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (a, b) = pair
                .split_once(':')
                .with_context(|| format!("grid entry {pair:?} is not lambda2:lambda3"))?;
            Ok(SweepEntry {
                lambda2: a.trim().parse().with_context(|| format!("grid entry {pair:?}"))?,
                lambda3: b.trim().parse().with_context(|| format!("grid entry {pair:?}"))?,
            })
        })
        .collect()
}

fn read_points(path: &Path) -> Result<Vec<TradeoffPoint>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = r.headers()?.clone();
    let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h));
    let (Some(l), Some(x)) = (col(&["label"]), col(&["rmse"])) else {
        bail!("{} needs label and rmse columns", path.display());
    };
    let Some(y) = col(&["pi", "pi_or_niqe"]) else {
        bail!("{} has no \"pi\" or \"pi_or_niqe\" column", path.display());
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec[x].is_empty() || rec[y].is_empty() {
            log::warn!("skipping {} (no scores)", &rec[l]);
            continue;
        }
        out.push(TradeoffPoint::new(&rec[l], rec[x].parse()?, rec[y].parse()?));
    }
    Ok(out)
}

fn run(cli: &Cli) -> Result<bool> {
    let layout = Layout::new(&cli.out)?;
    let mut ok = true;
    match &cli.command {
        Command::Degrade { manifest, scale } => {
            cli.reject_config_flags("degrade")?;
            cli.echo(&layout, None)?;
            let paths = read_manifest(manifest)?;
            if paths.is_empty() {
                bail!("manifest {} lists no images", manifest.display());
            }
            let mut failed = 0;
            for p in &paths {
                let out = layout.dir("images").join(format!("{}_x{scale}.png", stem(p)));
                let res = Image::load_png(p)
                    .and_then(|hr| hr.crop_to_multiple(*scale))
                    .and_then(|hr| bicubic_downsample(&hr, *scale))
                    .and_then(|lr| lr.save_png(&out));
                if let Err(e) = res {
                    log::error!("{}: {e}", p.display());
                    failed += 1;
                }
            }
            log::info!("degraded {} of {} images", paths.len() - failed, paths.len());
            ok = failed == 0;
        }
        Command::Pretrain { train_manifest } => {
            let config = cli.train_config(json!({
                "weights": {"lambda1": 0.0, "lambda2": 1.0, "lambda3": 0.0},
                "d_steps_per_g": 0,
            }))?;
            cli.echo(&layout, Some(&config))?;
            let data = load_images(train_manifest)?;
            let out = RunOutputs {
                checkpoint_dir: Some(layout.dir("checkpoints")),
                log_path: Some(layout.dir("logs").join("pretrain.jsonl")),
            };
            let (_, s) = pretrain_generator(config, data, &out)?;
            println!("{}", s.final_generator.expect("checkpoint dir set").display());
        }
        Command::Train { train_manifest, pretrained } => {
            let config = cli.train_config(json!({}))?;
            cli.echo(&layout, Some(&config))?;
            if pretrained.is_none() {
                log::warn!("no --pretrained generator; adversarial training starts from random weights");
            }
            let data = load_images(train_manifest)?;
            let out = RunOutputs {
                checkpoint_dir: Some(layout.dir("checkpoints")),
                log_path: Some(layout.dir("logs").join("train.jsonl")),
            };
            let (_, s) = train_gan(config, data, pretrained.as_deref(), &out)?;
            println!("{}", s.final_generator.expect("checkpoint dir set").display());
        }
        Command::Eval { est_dir, ref_dir, niqe_model, ma_scores } => {
            cli.reject_config_flags("eval")?;
            cli.echo(&layout, None)?;
            let est = png_stems(est_dir)?;
            let refs = png_stems(ref_dir)?;
            let niqe = niqe_model.as_ref().map(NiqeModel::load).transpose()?;
            let ma = ma_scores.as_ref().map(read_ma_scores).transpose()?;
            let mut ids: Vec<&String> = refs.keys().filter(|k| est.contains_key(*k)).collect();
            ids.sort();
            let mut unmatched: Vec<&String> = refs.keys().chain(est.keys()).filter(|k| !(est.contains_key(*k) && refs.contains_key(*k))).collect();
            unmatched.sort();
            unmatched.dedup();
            let mut rows = Vec::new();
            for id in ids {
                let e = Image::load_png(&est[id])?;
                let r = Image::load_png(&refs[id])?;
                let m = ma.as_ref().and_then(|m| m.get(id.as_str()).copied());
                rows.push(evaluate_pair(id, &e, &r, niqe.as_ref(), m)?);
            }
            if rows.is_empty() {
                bail!("no matching file stems between {} and {}", est_dir.display(), ref_dir.display());
            }
            let report = MetricReport::from_rows(rows)?;
            report.write_csv(layout.dir("reports").join("metrics.csv"))?;
            report.write_json(layout.dir("reports").join("metrics.json"))?;
            println!("{}", serde_json::to_string_pretty(&report.means)?);
            if !unmatched.is_empty() {
                log::error!("unmatched stems: {}", unmatched.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "));
                ok = false;
            }
        }
        Command::Rank { scores, dataset } => {
            cli.reject_config_flags("rank")?;
            cli.echo(&layout, None)?;
            let points = match scores {
                Some(p) => read_scores_file(p, dataset.as_deref())?,
                None => published_scores(),
            };
            let table = rank(&points)?;
            print!("{table}");
            fs::write(layout.dir("reports").join("ranking.json"), serde_json::to_string_pretty(&table)?)?;
        }
        Command::Sweep {
            train_manifest,
            pretrained,
            eval_manifest,
            grid,
            niqe_model,
            niqe_patch,
            ma_scores,
        } => {
            let config = cli.train_config(json!({}))?;
            cli.echo(&layout, Some(&config))?;
            let grid = parse_grid(grid)?;
            let data = load_images(train_manifest)?;
            let eval_paths = read_manifest(eval_manifest)?;
            let eval: Vec<(String, Image)> = eval_paths
                .iter()
                .map(|p| Ok((stem(p), Image::load_png(p)?)))
                .collect::<Result<_>>()?;
            let niqe = match niqe_model {
                Some(p) => NiqeModel::load(p)?,
                None => {
                    let m = niqe_fit(&data, NiqeParams { patch_size: *niqe_patch, ..NiqeParams::default() })?;
                    m.save(layout.dir("checkpoints").join("niqe_model.bin"))?;
                    m
                }
            };
            let ma = ma_scores.as_ref().map(read_ma_scores).transpose()?;
            let points = sweep(&config, &grid, &data, pretrained, &eval, &niqe, ma.as_ref(), &layout.dir("checkpoints"));
            write_sweep_csv(&points, layout.dir("reports").join("sweep.csv"))?;
            fs::write(layout.dir("reports").join("sweep.json"), serde_json::to_string_pretty(&points)?)?;
            ok = points.iter().all(|p| p.point.is_some());
        }
        Command::Plane { points } => {
            cli.reject_config_flags("plane")?;
            cli.echo(&layout, None)?;
            let pts = read_points(points)?;
            let mut w = csv::Writer::from_path(layout.dir("reports").join("plane.csv"))?;
            w.write_record(["label", "rmse", "pi", "region"])?;
            for p in &pts {
                let region = assign_region(p.rmse)?.map_or("out_of_range".to_string(), |r| r.index().to_string());
                w.write_record([p.label.clone(), p.rmse.to_string(), p.pi.to_string(), region])?;
            }
            w.flush()?;
            let fit = fit_curve(&pts)?;
            let text = serde_json::to_string_pretty(&fit.to_json())?;
            fs::write(layout.dir("reports").join("curve.json"), &text)?;
            println!("{text}");
        }
        Command::NiqeFit { manifest, patch } => {
            cli.reject_config_flags("niqe-fit")?;
            cli.echo(&layout, None)?;
            let images = load_images(manifest)?;
            let m = niqe_fit(&images, NiqeParams { patch_size: *patch, ..NiqeParams::default() })?;
            let p = layout.dir("checkpoints").join("niqe_model.bin");
            m.save(&p)?;
            println!("{} ({} patches)", p.display(), m.patches_used);
        }
        Command::Synth { count, size } => {
            cli.reject_config_flags("synth")?;
            cli.echo(&layout, None)?;
            let seed = cli.seed.unwrap_or(0);
            let mut manifest = String::new();
            for (i, img) in synth::corpus(*count, *size, *size, seed).iter().enumerate() {
                let name = format!("synth_{i:04}.png");
                img.save_png(layout.dir("images").join(&name))?;
                manifest.push_str(&format!("{name}\n"));
            }
            let m = layout.dir("images").join("manifest.txt");
            fs::write(&m, manifest)?;
            println!("{}", m.display());
        }
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            log::error!("some outputs were not produced");
            ExitCode::from(1)
        }
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(2)
        }
    }
}
