use std::time::Instant;

use kandiff::commands::cmd_train;
use kandiff::config::{Overrides, RunConfig};
use kandiff::imaging::write_synthetic_pairs;

#[test]
#[ignore]
fn timing() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_synthetic_pairs(&data, 4, 48, 48, 1).unwrap();

    let mut cfg = RunConfig::default();
    cfg.model.base_channels = 8;
    cfg.model.channel_mults = vec![1, 2];
    cfg.model.num_kan_blocks = 2;
    cfg.model.kan_layers_per_block = 1;
    cfg.model.time_embed_dim = 16;
    cfg.model.groups = 4;
    cfg.schedule.timesteps = 16;
    cfg.train.steps = 50;
    cfg.train.batch = 4;
    cfg.train.patch = 24;
    cfg.train.lr = 1e-3;
    cfg.data.root = data;
    cfg.io.checkpoint_dir = dir.path().join("run");
    cfg.io.log_interval = 10;
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, cfg.to_toml_string()).unwrap();

    let t0 = Instant::now();
    let out = cmd_train(Some(&path), &Overrides::default(), None, false).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "50 steps in {dt:.2}s = {:.1} ms/step, last loss {}",
        dt / 50.0 * 1000.0,
        out.last_loss
    );

    // Enhancement timing: full reverse loop on one 48x48 image.
    let t1 = Instant::now();
    let n = kandiff::commands::cmd_enhance(
        &out.final_checkpoint,
        &dir.path().join("data/low"),
        &dir.path().join("enh"),
        0,
        false,
        true,
    )
    .unwrap();
    println!("enhance {n} images in {:.2}s", t1.elapsed().as_secs_f64());
}

#[test]
#[ignore]
fn component_timing() {
    use kandiff::tensor::Tensor;
    use kandiff::unet::{DenoiserConfig, DenoiserNet};
    use kandiff::rng::{normal_vec, stream, Stream};

    let mut rng = stream(1, Stream::Init);
    let cfg = DenoiserConfig {
        base_channels: 8,
        channel_mults: vec![1, 2],
        num_kan_blocks: 2,
        kan_layers_per_block: 1,
        time_embed_dim: 16,
        groups: 4,
        ..DenoiserConfig::default()
    };
    let net: DenoiserNet<f32> = DenoiserNet::init(&cfg, &mut rng);
    let x = Tensor::from_vec(normal_vec::<f32>(&mut rng, 3 * 48 * 48), &[3, 48, 48]);
    let y = Tensor::from_vec(normal_vec::<f32>(&mut rng, 3 * 48 * 48), &[3, 48, 48]);
    for _ in 0..3 { net.forward(&x, &y, 0.5, None).unwrap(); }
    let t = std::time::Instant::now();
    for _ in 0..20 { net.forward(&x, &y, 0.5, None).unwrap(); }
    println!("forward 48x48: {:.1} ms", t.elapsed().as_secs_f64() * 50.0);

    // raw conv throughput
    let xc = Tensor::from_vec(normal_vec::<f32>(&mut rng, 16 * 48 * 48), &[16, 48, 48]);
    let k = Tensor::from_vec(normal_vec::<f32>(&mut rng, 16 * 16 * 9), &[16, 16, 3, 3]);
    let t = std::time::Instant::now();
    for _ in 0..20 { xc.conv2d(&k, 1, 1, kandiff::tensor::conv::PadMode::Replicate).unwrap(); }
    let s = t.elapsed().as_secs_f64() / 20.0;
    println!("conv 16->16 @48^2: {:.2} ms = {:.2} GFLOP/s", s * 1000.0, 2.0 * 16.0 * 16.0 * 9.0 * 2304.0 / s / 1e9);

    // KAN block
    let blk = &net;
    let _ = blk;
    let tokens = Tensor::from_vec(normal_vec::<f32>(&mut rng, 576 * 16), &[576, 16]);
    let layer: kandiff::kan::KanLayer<f32> = kandiff::kan::KanLayer::init("l", 16, 16, kandiff::kan::bspline::SplineGrid::standard(), &mut rng);
    let t = std::time::Instant::now();
    for _ in 0..20 { layer.forward(&tokens, None).unwrap(); }
    println!("kan layer 576x16: {:.2} ms", t.elapsed().as_secs_f64() * 50.0);
}

#[test]
#[ignore]
fn fwd_bwd_split() {
    use kandiff::tensor::{Tape, Tensor};
    use kandiff::unet::{DenoiserConfig, DenoiserNet};
    use kandiff::rng::{normal_vec, stream, Stream};
    use kandiff::tensor::tape::backward;

    let mut rng = stream(1, Stream::Init);
    let cfg = DenoiserConfig {
        base_channels: 8,
        channel_mults: vec![1, 2],
        num_kan_blocks: 2,
        kan_layers_per_block: 1,
        time_embed_dim: 16,
        groups: 4,
        ..DenoiserConfig::default()
    };
    let net: DenoiserNet<f32> = DenoiserNet::init(&cfg, &mut rng);
    let x = Tensor::from_vec(normal_vec::<f32>(&mut rng, 3 * 24 * 24), &[3, 24, 24]);
    let y = Tensor::from_vec(normal_vec::<f32>(&mut rng, 3 * 24 * 24), &[3, 24, 24]);
    // warmup
    for _ in 0..3 {
        let tape: Tape<f32> = Tape::new();
        let (e, u) = net.forward(&x, &y, 0.5, Some(&tape)).unwrap();
        let l = e.mul(&e).unwrap().add(&u.mul(&u).unwrap()).unwrap().mean_all();
        backward(&l).unwrap();
    }
    let t = std::time::Instant::now();
    let mut tapes = Vec::new();
    for _ in 0..20 {
        let tape: Tape<f32> = Tape::new();
        let (e, u) = net.forward(&x, &y, 0.5, Some(&tape)).unwrap();
        let l = e.mul(&e).unwrap().add(&u.mul(&u).unwrap()).unwrap().mean_all();
        tapes.push((tape, l));
    }
    let fwd = t.elapsed().as_secs_f64() / 20.0;
    let t = std::time::Instant::now();
    for (_tape, l) in &tapes {
        backward(l).unwrap();
    }
    let bwd = t.elapsed().as_secs_f64() / 20.0;
    println!("tracked fwd {:.2} ms, bwd {:.2} ms", fwd * 1000.0, bwd * 1000.0);
    let t = std::time::Instant::now();
    for _ in 0..20 { net.forward(&x, &y, 0.5, None).unwrap(); }
    println!("untracked fwd {:.2} ms", t.elapsed().as_secs_f64() * 50.0);
}

#[test]
#[ignore]
fn learning_curve() {
    use kandiff::commands::{cmd_enhance, cmd_eval, cmd_train};
    use kandiff::config::{Overrides, RunConfig};
    use kandiff::imaging::write_synthetic_pairs;

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_synthetic_pairs(&data, 4, 48, 48, 1).unwrap();

    let mut cfg = RunConfig::default();
    cfg.model.base_channels = 8;
    cfg.model.channel_mults = vec![1, 2];
    cfg.model.num_kan_blocks = 2;
    cfg.model.kan_layers_per_block = 1;
    cfg.model.time_embed_dim = 16;
    cfg.model.groups = 4;
    cfg.schedule.timesteps = 16;
    cfg.train.steps = 500;
    cfg.train.batch = 4;
    cfg.train.patch = 24;
    cfg.train.lr = 1e-3;
    cfg.data.root = data.clone();
    cfg.io.checkpoint_dir = dir.path().join("run");
    cfg.io.log_interval = 250;
    cfg.io.checkpoint_interval = 100000;
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, cfg.to_toml_string()).unwrap();

    let mut resume: Option<std::path::PathBuf> = None;
    for round in 1..=8 {
        let out = cmd_train(Some(&path), &Overrides::default(), resume.as_deref(), true).unwrap();
        let enh = dir.path().join(format!("enh{round}"));
        cmd_enhance(&out.final_checkpoint, &data.join("low"), &enh, 0, false, true).unwrap();
        let rep = cmd_eval(&enh, &data.join("high"), None, true).unwrap();
        println!(
            "step {}: loss {:.4} psnr {:.2} ssim {:.4}",
            out.final_step, out.last_loss, rep.mean_psnr, rep.mean_ssim
        );
        resume = Some(out.final_checkpoint);
    }
}

#[test]
#[ignore]
fn diagnose_sampling() {
    use kandiff::commands::cmd_train;
    use kandiff::config::{Overrides, RunConfig};
    use kandiff::imaging::*;
    use kandiff::diffusion::*;
    use kandiff::checkpoint;
    use kandiff::rng::{normal_vec, stream, Stream};
    use kandiff::tensor::Tensor;
    use kandiff::unet::DenoiserNet;
    use kandiff::metrics::psnr;

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_synthetic_pairs(&data, 4, 48, 48, 1).unwrap();

    // identity baseline
    let ds = PairedDataset::index(&data).unwrap();
    let pair = load_pair(&ds.records[0]).unwrap();
    println!("identity psnr {:.2}", psnr(&pair.low, &pair.normal).unwrap());

    let mut cfg = RunConfig::default();
    cfg.model.base_channels = 8;
    cfg.model.channel_mults = vec![1, 2];
    cfg.model.num_kan_blocks = 2;
    cfg.model.kan_layers_per_block = 1;
    cfg.model.time_embed_dim = 16;
    cfg.model.groups = 4;
    cfg.schedule.timesteps = 16;
    cfg.train.steps = 2000;
    cfg.train.batch = 4;
    cfg.train.patch = 24;
    cfg.train.lr = 1e-3;
    cfg.data.root = data.clone();
    cfg.io.checkpoint_dir = dir.path().join("run");
    cfg.io.log_interval = 1000;
    cfg.io.checkpoint_interval = 100000;
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, cfg.to_toml_string()).unwrap();
    let out = cmd_train(Some(&path), &Overrides::default(), None, true).unwrap();

    let loaded = checkpoint::load::<f32>(&out.final_checkpoint).unwrap();
    let mut irng = stream(0, Stream::Init);
    let net: DenoiserNet<f32> = DenoiserNet::init(&loaded.model, &mut irng);
    loaded.apply(&net.params()).unwrap();
    let sched = make_schedule(16, cfg.schedule.beta_start, cfg.schedule.beta_end, cfg.schedule.kind).unwrap();

    let y = normalize::<f32>(&pair.low, NormMode::Sym);
    let x0 = normalize::<f32>(&pair.normal, NormMode::Sym);
    let mut nrng = stream(9, Stream::Noise);
    for t in [1usize, 4, 8, 12, 16] {
        let eps = Tensor::from_vec(normal_vec::<f32>(&mut nrng, x0.len()), x0.shape());
        let x_t = q_sample(&x0, t, &eps, &sched).unwrap();
        let (eps_hat, _) = net.forward(&x_t, &y, sched.alpha_bar(t).unwrap(), None).unwrap();
        let mse: f32 = eps.sub(&eps_hat).unwrap().data().iter().map(|v| v * v).sum::<f32>() / eps.len() as f32;
        // one-shot x0 estimate from eps_hat
        let ab = sched.alpha_bar(t).unwrap() as f32;
        let x0_hat = x_t.sub(&eps_hat.mul_scalar((1.0 - ab).sqrt())).unwrap().mul_scalar(1.0 / ab.sqrt());
        let img = denormalize(&x0_hat, NormMode::Sym);
        println!("t={t}: eps mse {mse:.4} (var 1 baseline), x0hat psnr {:.2}", psnr(&img, &pair.normal).unwrap());
    }
    // full reverse trajectory stats
    let xs = sample(&net, &y, &sched, 0, false).unwrap();
    let img = denormalize(&xs, NormMode::Sym);
    println!("full loop psnr {:.2}", psnr(&img, &pair.normal).unwrap());
    let m: f32 = xs.data().iter().sum::<f32>() / xs.len() as f32;
    println!("sample mean {m:.3}, min {:?}, max {:?}", xs.data().iter().cloned().fold(f32::INFINITY, f32::min), xs.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max));
}

#[test]
#[ignore]
fn sampler_variants() {
    use kandiff::commands::cmd_train;
    use kandiff::config::{Overrides, RunConfig};
    use kandiff::imaging::*;
    use kandiff::diffusion::*;
    use kandiff::checkpoint;
    use kandiff::rng::{normal_vec, stream, Stream};
    use kandiff::tensor::Tensor;
    use kandiff::unet::DenoiserNet;
    use kandiff::metrics::{psnr, ssim};

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_synthetic_pairs(&data, 4, 48, 48, 1).unwrap();
    let mut cfg = RunConfig::default();
    cfg.model.base_channels = 8;
    cfg.model.channel_mults = vec![1, 2];
    cfg.model.num_kan_blocks = 2;
    cfg.model.kan_layers_per_block = 1;
    cfg.model.time_embed_dim = 16;
    cfg.model.groups = 4;
    cfg.schedule.timesteps = 16;
    cfg.train.steps = 2000;
    cfg.train.batch = 4;
    cfg.train.patch = 24;
    cfg.train.lr = 1e-3;
    cfg.data.root = data.clone();
    cfg.io.checkpoint_dir = dir.path().join("run");
    cfg.io.log_interval = 1000;
    cfg.io.checkpoint_interval = 100000;
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, cfg.to_toml_string()).unwrap();
    let out = cmd_train(Some(&path), &Overrides::default(), None, true).unwrap();

    let loaded = checkpoint::load::<f32>(&out.final_checkpoint).unwrap();
    let mut irng = stream(0, Stream::Init);
    let net: DenoiserNet<f32> = DenoiserNet::init(&loaded.model, &mut irng);
    loaded.apply(&net.params()).unwrap();
    let sched = make_schedule(16, cfg.schedule.beta_start, cfg.schedule.beta_end, cfg.schedule.kind).unwrap();

    let ds = PairedDataset::index(&data).unwrap();
    let pair = load_pair(&ds.records[0]).unwrap();
    let y = normalize::<f32>(&pair.low, NormMode::Sym);

    // variant A: ancestral stochastic
    let xa = sample(&net, &y, &sched, 0, true).unwrap();
    let ia = denormalize(&xa, NormMode::Sym);
    println!("ancestral: psnr {:.2} ssim {:.3}", psnr(&ia, &pair.normal).unwrap(), ssim(&ia, &pair.normal).unwrap());

    // variant B: deterministic with clipped x0hat posterior
    let run_clip = |stoch: bool| {
        let mut rng = stream(0, Stream::Sample);
        let n = y.len();
        let mut x = Tensor::from_vec(normal_vec::<f32>(&mut rng, n), y.shape());
        for t in (1..=sched.len()).rev() {
            let ab = sched.alpha_bar(t).unwrap() as f32;
            let abp = if t == 1 { 1.0f32 } else { sched.alpha_bar(t - 1).unwrap() as f32 };
            let alpha = sched.alpha(t).unwrap() as f32;
            let beta = 1.0 - alpha;
            let (eps_hat, _) = net.forward(&x, &y, ab as f64, None).unwrap();
            let x0_hat = x.sub(&eps_hat.mul_scalar((1.0 - ab).sqrt())).unwrap().mul_scalar(1.0 / ab.sqrt());
            let x0_clip: Vec<f32> = x0_hat.data().iter().map(|v| v.max(-1.0).min(1.0)).collect();
            let x0_clip = Tensor::from_vec(x0_clip, y.shape());
            let c0 = abp.sqrt() * beta / (1.0 - ab);
            let ct = alpha.sqrt() * (1.0 - abp) / (1.0 - ab);
            x = x0_clip.mul_scalar(c0).add(&x.mul_scalar(ct)).unwrap();
            if stoch && t > 1 {
                let sigma = beta.sqrt();
                let z = Tensor::from_vec(normal_vec::<f32>(&mut rng, n), y.shape());
                x = x.add(&z.mul_scalar(sigma)).unwrap();
            }
        }
        let clipped: Vec<f32> = x.data().iter().map(|v| v.max(-1.0).min(1.0)).collect();
        Tensor::from_vec(clipped, y.shape())
    };
    for stoch in [false, true] {
        let xb = run_clip(stoch);
        let ib = denormalize(&xb, NormMode::Sym);
        println!("clipped x0 stoch={stoch}: psnr {:.2} ssim {:.3}", psnr(&ib, &pair.normal).unwrap(), ssim(&ib, &pair.normal).unwrap());
    }
}

#[test]
#[ignore]
fn print_schedules() {
    use kandiff::diffusion::*;
    for (t_total, kind, be) in [(16, ScheduleKind::Cosine, 0.02), (8, ScheduleKind::Cosine, 0.02), (16, ScheduleKind::Linear, 0.2), (8, ScheduleKind::Linear, 0.35)] {
        let s = make_schedule(t_total, 1e-4, be, kind).unwrap();
        let abs: Vec<String> = (1..=t_total).map(|t| format!("{:.4}", s.alpha_bar(t).unwrap())).collect();
        println!("T={t_total} {kind:?} be={be}: {}", abs.join(" "));
    }
}

#[test]
#[ignore]
fn recipe_scan() {
    use kandiff::commands::cmd_train;
    use kandiff::config::{Overrides, RunConfig};
    use kandiff::imaging::*;
    use kandiff::diffusion::*;
    use kandiff::checkpoint;
    use kandiff::rng::{normal_vec, stream, Stream};
    use kandiff::tensor::Tensor;
    use kandiff::unet::DenoiserNet;
    use kandiff::metrics::{psnr, ssim};

    let base = tempfile::tempdir().unwrap();
    let data = base.path().join("data");
    write_synthetic_pairs(&data, 4, 48, 48, 1).unwrap();
    let ds = PairedDataset::index(&data).unwrap();

    let clip_sample = |net: &DenoiserNet<f32>, y: &Tensor<f32>, sched: &NoiseSchedule| {
        let mut rng = stream(0, Stream::Sample);
        let n = y.len();
        let mut x = Tensor::from_vec(normal_vec::<f32>(&mut rng, n), y.shape());
        for t in (1..=sched.len()).rev() {
            let ab = sched.alpha_bar(t).unwrap() as f32;
            let abp = if t == 1 { 1.0f32 } else { sched.alpha_bar(t - 1).unwrap() as f32 };
            let alpha = sched.alpha(t).unwrap() as f32;
            let beta = 1.0 - alpha;
            let (eps_hat, _) = net.forward(&x, y, ab as f64, None).unwrap();
            let x0_hat = x.sub(&eps_hat.mul_scalar((1.0 - ab).sqrt())).unwrap().mul_scalar(1.0 / ab.sqrt());
            let x0c: Vec<f32> = x0_hat.data().iter().map(|v| v.max(-1.0).min(1.0)).collect();
            let x0c = Tensor::from_vec(x0c, y.shape());
            let c0 = abp.sqrt() * beta / (1.0 - ab);
            let ct = alpha.sqrt() * (1.0 - abp) / (1.0 - ab);
            x = x0c.mul_scalar(c0).add(&x.mul_scalar(ct)).unwrap();
        }
        let c: Vec<f32> = x.data().iter().map(|v| v.max(-1.0).min(1.0)).collect();
        Tensor::from_vec(c, y.shape())
    };

    for (tag, t_total, kind, be, steps) in [
        ("lin16-0.45", 16usize, ScheduleKind::Linear, 0.45f64, 3000usize),
        ("lin12-0.55", 12, ScheduleKind::Linear, 0.55, 3000),
        ("lin8-0.65", 8, ScheduleKind::Linear, 0.65, 3000),
    ] {
        let mut cfg = RunConfig::default();
        cfg.model.base_channels = 8;
        cfg.model.channel_mults = vec![1, 2];
        cfg.model.num_kan_blocks = 2;
        cfg.model.kan_layers_per_block = 1;
        cfg.model.time_embed_dim = 16;
        cfg.model.groups = 4;
        cfg.schedule.timesteps = t_total;
        cfg.schedule.kind = kind;
        cfg.schedule.beta_end = be;
        cfg.train.steps = steps as u64;
        cfg.train.batch = 4;
        cfg.train.patch = 24;
        cfg.train.lr = 1e-3;
        cfg.data.root = data.clone();
        cfg.io.checkpoint_dir = base.path().join(format!("run-{tag}"));
        cfg.io.log_interval = 100000;
        cfg.io.checkpoint_interval = 100000;
        let path = base.path().join(format!("cfg-{tag}.toml"));
        std::fs::write(&path, cfg.to_toml_string()).unwrap();
        let out = cmd_train(Some(&path), &Overrides::default(), None, true).unwrap();

        let loaded = checkpoint::load::<f32>(&out.final_checkpoint).unwrap();
        let mut irng = stream(0, Stream::Init);
        let net: DenoiserNet<f32> = DenoiserNet::init(&loaded.model, &mut irng);
        loaded.apply(&net.params()).unwrap();
        let sched = make_schedule(t_total, 1e-4, be, kind).unwrap();
        println!("{tag}: abar_T {:.4} loss {:.3}", sched.alpha_bar(t_total).unwrap(), out.last_loss);
        let (mut sp, mut ss) = (0.0, 0.0);
        for rec in &ds.records {
            let pair = load_pair(rec).unwrap();
            let y = normalize::<f32>(&pair.low, NormMode::Sym);
            let img = denormalize(&clip_sample(&net, &y, &sched), NormMode::Sym);
            sp += psnr(&img, &pair.normal).unwrap();
            ss += ssim(&img, &pair.normal).unwrap();
        }
        println!("{tag}: mean psnr {:.2} ssim {:.3}", sp / 4.0, ss / 4.0);
    }
}

#[test]
#[ignore]
fn recipe_scan2() {
    use kandiff::commands::cmd_train;
    use kandiff::config::{Overrides, RunConfig};
    use kandiff::imaging::*;
    use kandiff::diffusion::*;
    use kandiff::checkpoint;
    use kandiff::rng::{normal_vec, stream, Stream};
    use kandiff::tensor::Tensor;
    use kandiff::unet::DenoiserNet;
    use kandiff::metrics::{psnr, ssim};

    let base_dir = tempfile::tempdir().unwrap();
    let data = base_dir.path().join("data");
    write_synthetic_pairs(&data, 4, 48, 48, 1).unwrap();
    let ds = PairedDataset::index(&data).unwrap();

    let clip_sample = |net: &DenoiserNet<f32>, y: &Tensor<f32>, sched: &NoiseSchedule| {
        let mut rng = stream(0, Stream::Sample);
        let n = y.len();
        let mut x = Tensor::from_vec(normal_vec::<f32>(&mut rng, n), y.shape());
        for t in (1..=sched.len()).rev() {
            let ab = sched.alpha_bar(t).unwrap() as f32;
            let abp = if t == 1 { 1.0f32 } else { sched.alpha_bar(t - 1).unwrap() as f32 };
            let alpha = sched.alpha(t).unwrap() as f32;
            let beta = 1.0 - alpha;
            let (eps_hat, _) = net.forward(&x, y, ab as f64, None).unwrap();
            let x0_hat = x.sub(&eps_hat.mul_scalar((1.0 - ab).sqrt())).unwrap().mul_scalar(1.0 / ab.sqrt());
            let x0c: Vec<f32> = x0_hat.data().iter().map(|v| v.max(-1.0).min(1.0)).collect();
            let x0c = Tensor::from_vec(x0c, y.shape());
            let c0 = abp.sqrt() * beta / (1.0 - ab);
            let ct = alpha.sqrt() * (1.0 - abp) / (1.0 - ab);
            x = x0c.mul_scalar(c0).add(&x.mul_scalar(ct)).unwrap();
        }
        let c: Vec<f32> = x.data().iter().map(|v| v.max(-1.0).min(1.0)).collect();
        Tensor::from_vec(c, y.shape())
    };

    // (tag, patch, batch, steps, base_channels, lr)
    for (tag, patch, batch, steps, bc, lr) in [
        ("p48-b2-s3000", 48usize, 2usize, 3000u64, 8usize, 1e-3f64),
        ("p24-b4-s8000", 24, 4, 8000, 8, 1e-3),
        ("p48-b2-s3000-bc12", 48, 2, 3000, 12, 1e-3),
    ] {
        let mut cfg = RunConfig::default();
        cfg.model.base_channels = bc;
        cfg.model.channel_mults = vec![1, 2];
        cfg.model.num_kan_blocks = 2;
        cfg.model.kan_layers_per_block = 1;
        cfg.model.time_embed_dim = 16;
        cfg.model.groups = 4;
        cfg.schedule.timesteps = 16;
        cfg.schedule.kind = ScheduleKind::Linear;
        cfg.schedule.beta_end = 0.45;
        cfg.train.steps = steps;
        cfg.train.batch = batch;
        cfg.train.patch = patch;
        cfg.train.lr = lr;
        cfg.data.root = data.clone();
        cfg.io.checkpoint_dir = base_dir.path().join(format!("run-{tag}"));
        cfg.io.log_interval = 100000;
        cfg.io.checkpoint_interval = 100000;
        let path = base_dir.path().join(format!("cfg-{tag}.toml"));
        std::fs::write(&path, cfg.to_toml_string()).unwrap();
        let t0 = std::time::Instant::now();
        let out = cmd_train(Some(&path), &Overrides::default(), None, true).unwrap();
        let secs = t0.elapsed().as_secs_f64();

        let loaded = checkpoint::load::<f32>(&out.final_checkpoint).unwrap();
        let mut irng = stream(0, Stream::Init);
        let net: DenoiserNet<f32> = DenoiserNet::init(&loaded.model, &mut irng);
        loaded.apply(&net.params()).unwrap();
        let sched = make_schedule(16, 1e-4, 0.45, ScheduleKind::Linear).unwrap();
        let (mut sp, mut ss) = (0.0, 0.0);
        for rec in &ds.records {
            let pair = load_pair(rec).unwrap();
            let y = normalize::<f32>(&pair.low, NormMode::Sym);
            let img = denormalize(&clip_sample(&net, &y, &sched), NormMode::Sym);
            sp += psnr(&img, &pair.normal).unwrap();
            ss += ssim(&img, &pair.normal).unwrap();
        }
        println!("{tag}: loss {:.3} train {:.0}s mean psnr {:.2} ssim {:.3}", out.last_loss, secs, sp / 4.0, ss / 4.0);
    }
}
