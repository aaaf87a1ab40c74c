//! MSE pretraining and adversarial training with a D:G update ratio.

mod config;

pub use config::{lr_schedule, merge_json, TrainConfig};

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{Image, PatchSampler, SamplerState};
use crate::losses::{composite_loss, discriminator_loss_logits, FeatureExtractor};
use crate::models::{Discriminator, Generator};
use crate::tensor::{Adam, Archive, Parameter, Tensor};

/// Bumped whenever the state archive layout changes.
pub const TRAIN_STATE_VERSION: u32 = 1;

// Independent streams so that, e.g., creating a discriminator does not
// shift the patch sequence.
const SAMPLER_STREAM: u64 = 0x5a;
const G_STREAM: u64 = 0x6e;
const D_STREAM: u64 = 0xd1;

pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: u64,
    pub epoch: u64,
    pub lr: f64,
    pub l_vgg: Option<f64>,
    pub l_e: Option<f64>,
    pub l_adv: Option<f64>,
    pub l_total: f64,
    pub l_d: Option<f64>,
    pub d_real_mean: Option<f64>,
    pub d_fake_mean: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorStats {
    pub loss: f64,
    pub real_mean: f64,
    pub fake_mean: f64,
}

/// Where a run writes its log and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    pub checkpoint_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub iterations: u64,
    pub final_state: Option<PathBuf>,
    pub final_generator: Option<PathBuf>,
    pub last: Option<LogRecord>,
}

fn mean(t: &Tensor<f32>) -> f64 {
    t.data().iter().map(|&v| v as f64).sum::<f64>() / t.numel() as f64
}

fn dataset_fingerprint(images: &[Image]) -> String {
    let mut h = Sha256::new();
    for img in images {
        for d in [img.height(), img.width(), img.channels()] {
            h.update((d as u64).to_le_bytes());
        }
        for v in img.data() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

pub struct Trainer {
    config: TrainConfig,
    generator: Generator<f32>,
    discriminator: Option<Discriminator<f32>>,
    extractor: Option<FeatureExtractor<f32>>,
    sampler: PatchSampler,
    fingerprint: String,
    iteration: u64,
    g_steps: u64,
    d_steps: u64,
    last: Option<LogRecord>,
}

impl Trainer {
    /// Fresh trainer; `init` optionally supplies generator weights.
    pub fn new(config: TrainConfig, dataset: Vec<Image>, init: Option<&Archive>) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::usage("training dataset is empty"));
        }
        let fingerprint = dataset_fingerprint(&dataset);
        let sampler = PatchSampler::new(
            dataset,
            config.patch,
            config.generator.scale,
            derive_seed(config.seed, SAMPLER_STREAM),
            config.augment,
        )?;
        let mut generator = Generator::new(config.generator.clone(), derive_seed(config.seed, G_STREAM))?;
        if let Some(archive) = init {
            generator.load_weights(archive)?;
        }
        let discriminator = if config.needs_discriminator() {
            Some(Discriminator::new(
                config.discriminator.clone(),
                derive_seed(config.seed, D_STREAM),
            )?)
        } else {
            None
        };
        let extractor = if config.weights.lambda1 > 0.0 {
            Some(FeatureExtractor::build(
                config.extractor.clone(),
                config.vgg_weights.as_deref(),
            )?)
        } else {
            None
        };
        Ok(Trainer {
            config,
            generator,
            discriminator,
            extractor,
            sampler,
            fingerprint,
            iteration: 0,
            g_steps: 0,
            d_steps: 0,
            last: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator<f32> {
        &self.generator
    }

    pub fn discriminator(&self) -> Option<&Discriminator<f32>> {
        self.discriminator.as_ref()
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn generator_steps(&self) -> u64 {
        self.g_steps
    }

    pub fn discriminator_steps(&self) -> u64 {
        self.d_steps
    }

    pub fn last_record(&self) -> Option<&LogRecord> {
        self.last.as_ref()
    }

    pub fn iterations_per_epoch(&self) -> u64 {
        self.config.iterations_per_epoch(self.sampler.len())
    }

    pub fn total_iterations(&self) -> u64 {
        self.config.total_iterations(self.sampler.len())
    }

    /// 1-based epoch of the next iteration.
    pub fn epoch(&self) -> u64 {
        self.iteration / self.iterations_per_epoch() + 1
    }

    pub fn current_lr(&self) -> f64 {
        self.config.lr_at(self.epoch())
    }

    /// One discriminator update on a fresh batch, generator untracked.
    pub fn discriminator_step(&mut self) -> Result<DiscriminatorStats> {
        let lr = self.current_lr();
        let d = self
            .discriminator
            .as_mut()
            .ok_or_else(|| Error::usage("this configuration has no discriminator"))?;
        let (lr_batch, hr) = self.sampler.next_batch::<f32>(self.config.batch)?;
        let fake = self.generator.forward(&lr_batch, false)?;
        let z_real = d.logits(&hr, true)?;
        let z_fake = d.logits(&fake, true)?;
        let loss = discriminator_loss_logits(&z_real, &z_fake)?;
        loss.backward()?;
        Adam::with_lr(lr).step(d.parameters_mut())?;
        self.d_steps += 1;
        Ok(DiscriminatorStats {
            loss: loss.item()? as f64,
            real_mean: mean(&z_real.detach().sigmoid()?),
            fake_mean: mean(&z_fake.detach().sigmoid()?),
        })
    }

    /// One generator update on the composite loss with D and the
    /// extractor frozen.
    pub fn generator_step(&mut self) -> Result<crate::losses::LossBreakdown> {
        let lr = self.current_lr();
        let (lr_batch, hr) = self.sampler.next_batch::<f32>(self.config.batch)?;
        let est = self.generator.forward(&lr_batch, true)?;
        let d_logits = match (&self.discriminator, self.config.weights.lambda3 > 0.0) {
            (Some(d), true) => Some(d.logits(&est, false)?),
            _ => None,
        };
        let (loss, breakdown) = composite_loss(
            &est,
            &hr,
            d_logits.as_ref(),
            &self.config.weights,
            self.extractor.as_ref(),
        )?;
        loss.backward()?;
        Adam::with_lr(lr).step(self.generator.parameters_mut())?;
        self.g_steps += 1;
        Ok(breakdown)
    }

    /// `d_steps_per_g` discriminator updates, then one generator update.
    pub fn step(&mut self) -> Result<LogRecord> {
        let epoch = self.epoch();
        let lr = self.current_lr();
        let mut stats = Vec::with_capacity(self.config.d_steps_per_g);
        for _ in 0..self.config.d_steps_per_g {
            stats.push(self.discriminator_step()?);
        }
        let b = self.generator_step()?;
        let avg = |f: fn(&DiscriminatorStats) -> f64| {
            (!stats.is_empty()).then(|| stats.iter().map(f).sum::<f64>() / stats.len() as f64)
        };
        let record = LogRecord {
            iter: self.iteration + 1,
            epoch,
            lr,
            l_vgg: b.l_vgg,
            l_e: b.l_e,
            l_adv: b.l_adv,
            l_total: b.l_total,
            l_d: avg(|s| s.loss),
            d_real_mean: avg(|s| s.real_mean),
            d_fake_mean: avg(|s| s.fake_mean),
        };
        self.iteration += 1;
        self.last = Some(record.clone());
        Ok(record)
    }

    /// Runs to the configured length. A failure leaves previously written
    /// checkpoints untouched.
    pub fn run(&mut self, out: &RunOutputs) -> Result<RunSummary> {
        let mut log = match &out.log_path {
            Some(p) => {
                if let Some(dir) = p.parent() {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| Error::io(p, e))?;
                Some((p.clone(), BufWriter::new(f)))
            }
            None => None,
        };
        if let Some(dir) = &out.checkpoint_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let total = self.total_iterations();
        let mut final_state = None;
        while self.iteration < total {
            let record = match self.step() {
                Ok(r) => r,
                Err(e) => {
                    log::error!("training aborted at iteration {}: {e}", self.iteration + 1);
                    return Err(e);
                }
            };
            if let Some((path, w)) = log.as_mut() {
                let line = serde_json::to_string(&record).expect("record serializes");
                writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(&*path, e))?;
            }
            if record.iter % 50 == 0 || record.iter == total {
                log::info!(
                    "iter {} epoch {} lr {:.2e} loss {:.5}",
                    record.iter,
                    record.epoch,
                    record.lr,
                    record.l_total
                );
            }
            let every = self.config.checkpoint_every;
            if let Some(dir) = &out.checkpoint_dir {
                if every > 0 && self.iteration % every == 0 && self.iteration < total {
                    let p = dir.join(format!("state_iter{:08}.ckpt", self.iteration));
                    self.save_state(&p)?;
                    final_state = Some(p);
                }
            }
        }
        let mut final_generator = None;
        if let Some(dir) = &out.checkpoint_dir {
            let p = dir.join(format!("state_iter{:08}.ckpt", self.iteration));
            self.save_state(&p)?;
            final_state = Some(p);
            let g = dir.join("generator_final.ckpt");
            self.generator.save(&g)?;
            final_generator = Some(g);
        }
        Ok(RunSummary {
            iterations: self.iteration,
            final_state,
            final_generator,
            last: self.last.clone(),
        })
    }

    fn push_params(archive: &mut Archive, params: &[&Parameter<f32>], steps: &mut serde_json::Map<String, serde_json::Value>) {
        for p in params {
            let (m, v) = p.moments();
            archive.push(p.name.clone(), p.shape(), p.data());
            archive.push(format!("adam_m/{}", p.name), p.shape(), m);
            archive.push(format!("adam_v/{}", p.name), p.shape(), v);
            steps.insert(p.name.clone(), json!(p.step()));
        }
    }

    fn restore_params(archive: &Archive, params: Vec<&mut Parameter<f32>>, steps: &serde_json::Value) -> Result<()> {
        for p in params {
            let shape = p.shape().to_vec();
            let value = archive.expect::<f32>(&p.name, &shape)?;
            let m = archive.expect::<f32>(&format!("adam_m/{}", p.name), &shape)?;
            let v = archive.expect::<f32>(&format!("adam_v/{}", p.name), &shape)?;
            let step = steps
                .get(&p.name)
                .and_then(serde_json::Value::as_u64)
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer step for {}", p.name)))?;
            p.set_data(value)?;
            p.restore_state(m, v, step)?;
        }
        Ok(())
    }

    /// Everything needed to continue bit-identically.
    pub fn state_archive(&self) -> Archive {
        let mut archive = Archive::new();
        let mut steps = serde_json::Map::new();
        Self::push_params(&mut archive, &self.generator.parameters(), &mut steps);
        if let Some(d) = &self.discriminator {
            Self::push_params(&mut archive, &d.parameters(), &mut steps);
        }
        archive.metadata = json!({
            "kind": "train_state",
            "state_version": TRAIN_STATE_VERSION,
            "build": env!("CARGO_PKG_VERSION"),
            "config": self.config,
            "iteration": self.iteration,
            "g_steps": self.g_steps,
            "d_steps": self.d_steps,
            "sampler": self.sampler.state(),
            "dataset": self.fingerprint,
            "param_steps": steps,
            "last": self.last,
        });
        archive
    }

    pub fn save_state(&self, path: impl AsRef<Path>) -> Result<()> {
        self.state_archive().save(path)
    }

    /// Continues from a saved state. `config` must agree with the saved
    /// one except for run length and checkpoint cadence.
    pub fn resume(path: impl AsRef<Path>, config: TrainConfig, dataset: Vec<Image>) -> Result<Self> {
        let archive = Archive::load(path)?;
        let meta = &archive.metadata;
        let version = meta.get("state_version").and_then(|v| v.as_u64());
        if version != Some(TRAIN_STATE_VERSION as u64) {
            return Err(Error::Checkpoint(format!(
                "training state version {} does not match this build's version {}",
                version.map_or("<none>".to_string(), |v| v.to_string()),
                TRAIN_STATE_VERSION
            )));
        }
        let saved: TrainConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| Error::Checkpoint(format!("saved config: {e}")))?;
        let comparable = |c: &TrainConfig| TrainConfig {
            epochs: 0,
            max_iterations: None,
            checkpoint_every: 0,
            ..c.clone()
        };
        if saved.batch != config.batch {
            return Err(Error::Checkpoint(format!(
                "batch size {} differs from the saved run's {}",
                config.batch, saved.batch
            )));
        }
        if comparable(&saved) != comparable(&config) {
            return Err(Error::Checkpoint(
                "training config differs from the saved run beyond epochs/max_iterations/checkpoint_every".into(),
            ));
        }
        let mut t = Trainer::new(config, dataset, None)?;
        if meta["dataset"].as_str() != Some(t.fingerprint.as_str()) {
            return Err(Error::Checkpoint("dataset differs from the saved run".into()));
        }
        let steps = &meta["param_steps"];
        Self::restore_params(&archive, t.generator.parameters_mut(), steps)?;
        if let Some(d) = t.discriminator.as_mut() {
            Self::restore_params(&archive, d.parameters_mut(), steps)?;
        }
        let counter = |k: &str| {
            meta[k]
                .as_u64()
                .ok_or_else(|| Error::Checkpoint(format!("missing counter {k}")))
        };
        t.iteration = counter("iteration")?;
        t.g_steps = counter("g_steps")?;
        t.d_steps = counter("d_steps")?;
        let sampler: SamplerState = serde_json::from_value(meta["sampler"].clone())
            .map_err(|e| Error::Checkpoint(format!("sampler state: {e}")))?;
        t.sampler.restore(&sampler)?;
        t.last = serde_json::from_value(meta["last"].clone()).unwrap_or(None);
        Ok(t)
    }
}

/// MSE-only training. Rejects perceptual or adversarial weight and runs
/// without a discriminator.
pub fn pretrain_generator(
    mut config: TrainConfig,
    dataset: Vec<Image>,
    out: &RunOutputs,
) -> Result<(Trainer, RunSummary)> {
    let w = config.weights;
    if w.lambda1 != 0.0 || w.lambda3 != 0.0 || !(w.lambda2 > 0.0) {
        return Err(Error::config(
            "pretrain",
            format!(
                "pretraining needs weights (0, >0, 0), got ({}, {}, {})",
                w.lambda1, w.lambda2, w.lambda3
            ),
        ));
    }
    if config.d_steps_per_g != 0 {
        log::info!("pretraining ignores d_steps_per_g = {}", config.d_steps_per_g);
        config.d_steps_per_g = 0;
    }
    let mut t = Trainer::new(config, dataset, None)?;
    let summary = t.run(out)?;
    Ok((t, summary))
}

/// Adversarial training from a pretrained generator checkpoint.
pub fn train_gan(
    config: TrainConfig,
    dataset: Vec<Image>,
    pretrained: Option<&Path>,
    out: &RunOutputs,
) -> Result<(Trainer, RunSummary)> {
    let init = pretrained.map(Archive::load).transpose()?;
    let mut t = Trainer::new(config, dataset, init.as_ref())?;
    let summary = t.run(out)?;
    Ok((t, summary))
}

/// Reads a JSONL training log.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Parse(format!("{}: {e}", path.display()))))
        .collect()
}

/// Writes the effective config next to a run's outputs.
pub fn echo_config(config: &TrainConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    let text = serde_json::to_string_pretty(config).expect("config serializes");
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
