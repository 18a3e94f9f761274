//! The four pipeline commands: train, enhance, eval, verify (the check
//! suite itself lives in [`crate::verify`]).

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use crate::checkpoint;
use crate::config::{Overrides, RunConfig};
use crate::diffusion::{make_schedule, phase1_loss, phase2_loss, sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::imaging::{
    denormalize, load_pair, load_png, normalize, sample_patch_pair, save_png, LoadedPair,
    NormMode, PairedDataset,
};
use crate::metrics::{psnr, ssim, ImageMetrics, MetricReport};
use crate::rng::{stream, Stream};
use crate::tensor::optim::{Adam, AdamConfig};
use crate::tensor::{Tape, Tensor};
use crate::unet::DenoiserNet;

/// Training element type: single precision for speed; the verification
/// suite exercises the same code at f64.
type F = f32;

pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub final_step: u64,
    pub last_loss: f64,
}

fn build_schedule(cfg: &RunConfig) -> Result<NoiseSchedule> {
    make_schedule(
        cfg.schedule.timesteps,
        cfg.schedule.beta_start,
        cfg.schedule.beta_end,
        cfg.schedule.kind,
    )
}

/// Run `cfg.train.steps` optimization steps, continuing the step counter
/// when resuming. Writes periodic checkpoints, a frozen resolved config
/// and a plain-text metrics log under `io.checkpoint_dir`.
pub fn cmd_train(
    config_path: Option<&Path>,
    flags: &Overrides,
    resume: Option<&Path>,
    quiet: bool,
) -> Result<TrainOutcome> {
    let cfg = RunConfig::resolve(config_path, flags)?;
    let phase = cfg.train.phase;
    if phase == 2 && resume.is_none() {
        return Err(Error::Config(
            "phase 2 requires --resume with a phase-1 checkpoint".into(),
        ));
    }

    let dataset = PairedDataset::index(&cfg.data.resolved_root())?;
    let pairs: Vec<LoadedPair> = dataset
        .records
        .iter()
        .map(load_pair)
        .collect::<Result<_>>()?;

    let sched = build_schedule(&cfg)?;
    let mut init_rng = stream(cfg.train.seed, Stream::Init);
    let net: DenoiserNet<F> = DenoiserNet::init(&cfg.model, &mut init_rng);
    let params = net.params();
    let mut opt: Adam<F> = Adam::new(AdamConfig {
        lr: cfg.train.lr,
        ..AdamConfig::default()
    });

    let mut start_step: u64 = 0;
    if let Some(ckpt_path) = resume {
        let loaded = checkpoint::load::<F>(ckpt_path)?;
        if loaded.model != cfg.model {
            return Err(Error::Config(format!(
                "checkpoint model config differs from run config:\n  checkpoint: {:?}\n  config: {:?}",
                loaded.model, cfg.model
            )));
        }
        loaded.apply(&params)?;
        if phase == 2 && loaded.phase == 1 {
            // Fresh phase: new optimizer state, counter keeps going.
            start_step = loaded.step;
        } else if let Some((opt_step, moments)) = loaded.optimizer.clone() {
            start_step = loaded.step;
            opt.restore(opt_step, moments);
        } else {
            start_step = loaded.step;
        }
    }
    if phase == 2 {
        net.freeze_uncertainty();
    }

    let out_dir = cfg.io.checkpoint_dir.clone();
    cfg.save_resolved(&out_dir)?;
    let mut log = std::io::BufWriter::new(
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(out_dir.join("train.log"))?,
    );

    let mut patch_rng = stream(cfg.train.seed, Stream::Patch);
    let mut noise_rng = stream(cfg.train.seed, Stream::Noise);
    let mut t_rng = stream(cfg.train.seed, Stream::Timestep);
    let freq_cfg = cfg.freq.loss_config();

    let started = Instant::now();
    let mut last_loss = f64::NAN;
    let save_ckpt = |step: u64, opt: &Adam<F>| -> Result<PathBuf> {
        let path = out_dir.join(format!("ckpt_{step:07}.ckpt"));
        checkpoint::save(&path, &cfg.model, &cfg.schedule, &params, step, phase, Some(opt))?;
        Ok(path)
    };

    for i in 1..=cfg.train.steps {
        let step = start_step + i;
        let tape: Tape<F> = Tape::new();
        let mut batch_loss: Option<Tensor<F>> = None;
        let mut noise_acc = 0.0;
        let mut freq_acc = 0.0;
        for _ in 0..cfg.train.batch {
            let pair = &pairs[patch_rng.gen_range(0..pairs.len())];
            let (low, normal) = sample_patch_pair(pair, cfg.train.patch, &mut patch_rng)?;
            let y = normalize::<F>(&low, NormMode::Sym);
            let x0 = normalize::<F>(&normal, NormMode::Sym);
            let (loss, parts) = if phase == 1 {
                phase1_loss(&net, &x0, &y, &sched, &mut noise_rng, &mut t_rng, &tape)?
            } else {
                phase2_loss(
                    &net, &x0, &y, &sched, &freq_cfg, &mut noise_rng, &mut t_rng, &tape,
                )?
            };
            noise_acc += parts.noise;
            freq_acc += parts.freq;
            batch_loss = Some(match batch_loss {
                None => loss,
                Some(acc) => acc.add(&loss)?,
            });
        }
        let denom = cfg.train.batch as f64;
        let loss = batch_loss
            .expect("batch > 0")
            .mul_scalar(1.0f32 / denom as f32);
        last_loss = loss.item() as f64;
        crate::tensor::tape::backward(&loss)?;
        opt.step(&params);

        if step % cfg.io.log_interval == 0 || i == cfg.train.steps {
            let line = format!(
                "step {step} phase {phase} loss {last_loss:.6} noise {:.6} freq {:.6} elapsed {:.1}s",
                noise_acc / denom,
                freq_acc / denom,
                started.elapsed().as_secs_f64()
            );
            if !quiet {
                println!("{line}");
            }
            writeln!(log, "{line}")?;
        }
        if step % cfg.io.checkpoint_interval == 0 && i != cfg.train.steps {
            save_ckpt(step, &opt)?;
        }
    }
    log.flush()?;
    let final_step = start_step + cfg.train.steps;
    let path = save_ckpt(final_step, &opt)?;
    if !quiet {
        println!("final checkpoint: {}", path.display());
    }

    Ok(TrainOutcome {
        final_checkpoint: path,
        final_step,
        last_loss,
    })
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| {
            e.path()
                .extension()
                .map(|x| x.eq_ignore_ascii_case("png"))
                .unwrap_or(false)
        })
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    Ok(names)
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// Load a checkpoint and run the reverse diffusion loop over every PNG in
/// `in_dir`, writing same-named, same-sized outputs to `out_dir`.
/// Non-divisible inputs are replicate-padded, enhanced, then cropped
/// back. Per-file failures are logged and skipped; errors only if nothing
/// succeeds.
pub fn cmd_enhance(
    ckpt: &Path,
    in_dir: &Path,
    out_dir: &Path,
    seed: u64,
    stochastic: bool,
    quiet: bool,
) -> Result<usize> {
    let loaded = checkpoint::load::<F>(ckpt)?;
    let mut init_rng = stream(0, Stream::Init);
    let net: DenoiserNet<F> = DenoiserNet::init(&loaded.model, &mut init_rng);
    loaded.apply(&net.params())?;
    let sched = make_schedule(
        loaded.schedule.timesteps,
        loaded.schedule.beta_start,
        loaded.schedule.beta_end,
        loaded.schedule.kind,
    )?;

    let names = png_names(in_dir)?;
    if names.is_empty() {
        return Err(Error::Dataset(format!("no PNG files in {}", in_dir.display())));
    }
    std::fs::create_dir_all(out_dir)?;

    let div = loaded.model.divisor();
    let mut ok = 0usize;
    for name in &names {
        let run = || -> Result<()> {
            let img = load_png(&in_dir.join(name))?;
            let (h, w) = (img.height, img.width);
            let padded = img.pad_replicate(round_up(h, div), round_up(w, div));
            let y = normalize::<F>(&padded, NormMode::Sym);
            let x0_hat = sample(&net, &y, &sched, seed, stochastic)?;
            let out = denormalize(&x0_hat, NormMode::Sym).crop(0, 0, h, w);
            save_png(&out_dir.join(name), &out)
        };
        match run() {
            Ok(()) => ok += 1,
            Err(e) => eprintln!("enhance: skipping {name}: {e}"),
        }
        if !quiet {
            println!("enhanced {name}");
        }
    }
    if ok == 0 {
        return Err(Error::Dataset("all inputs failed to enhance".into()));
    }
    Ok(ok)
}

/// PSNR/SSIM of every enhanced image against its same-named reference.
/// Prints per-image rows plus the means; optionally writes the same
/// report to a file.
pub fn cmd_eval(
    enhanced_dir: &Path,
    ref_dir: &Path,
    out: Option<&Path>,
    quiet: bool,
) -> Result<MetricReport> {
    let enhanced = png_names(enhanced_dir)?;
    let reference = png_names(ref_dir)?;
    let missing_ref: Vec<&String> = enhanced.iter().filter(|n| !reference.contains(n)).collect();
    let missing_enh: Vec<&String> = reference.iter().filter(|n| !enhanced.contains(n)).collect();
    if !missing_ref.is_empty() || !missing_enh.is_empty() {
        return Err(Error::Dataset(format!(
            "unmatched files; missing references: {missing_ref:?}, missing enhanced: {missing_enh:?}"
        )));
    }
    if enhanced.is_empty() {
        return Err(Error::Dataset("no PNG pairs to evaluate".into()));
    }

    let mut rows = Vec::with_capacity(enhanced.len());
    for name in &enhanced {
        let a = load_png(&enhanced_dir.join(name))?;
        let b = load_png(&ref_dir.join(name))?;
        rows.push(ImageMetrics {
            name: name.clone(),
            psnr: psnr(&a, &b)?,
            ssim: ssim(&a, &b)?,
        });
    }
    let report = MetricReport::from_rows(rows);

    let mut text = String::new();
    for m in &report.per_image {
        text.push_str(&format!("{}\tpsnr {:.4}\tssim {:.6}\n", m.name, m.psnr, m.ssim));
    }
    text.push_str(&format!(
        "mean\tpsnr {:.4}\tssim {:.6}\t({} images)\n",
        report.mean_psnr,
        report.mean_ssim,
        report.per_image.len()
    ));
    if !quiet {
        print!("{text}");
    }
    if let Some(path) = out {
        std::fs::write(path, &text)?;
    }
    Ok(report)
}
