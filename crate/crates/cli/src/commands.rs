use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aio_core::config::KvConfig;
use aio_core::encoder::{align_pretrain, probe, AlignConfig};
use aio_core::image::{read_image, write_image, ImageFormat};
use aio_core::restorer::{Model, ModelConfig, MODEL_KEYS};
use aio_core::selftest;
use aio_core::synth::{canonical_recipes, generate_dataset, single_recipes, DatasetManifest, GenerateConfig, Sample};
use aio_core::train::{evaluate, Checkpoint, TrainConfig, TrainPair, Trainer, TRAIN_KEYS};
use aio_core::{Error, Result};

use crate::{Common, DegradeArgs, EvalArgs, PretrainArgs, RestoreArgs, SelftestArgs, TrainArgs};

const ALIGN_KEYS: &[&str] = &["align.epochs", "align.lr", "align.batch", "align.temperature", "align.crop"];
const OTHER_KEYS: &[&str] = &["per_recipe", "size", "checkpoint_every"];

/// The config file (if any) with the global seed flag folded in.
fn settings(c: &Common) -> Result<KvConfig> {
    let mut kv = match &c.config {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::new(),
    };
    let allowed: Vec<&str> = MODEL_KEYS.iter().chain(TRAIN_KEYS).chain(ALIGN_KEYS).chain(OTHER_KEYS).copied().collect();
    kv.check_keys(&allowed)?;
    if let Some(s) = c.seed {
        kv.set("seed", s);
    }
    Ok(kv)
}

fn seed(kv: &KvConfig) -> Result<u64> {
    kv.get_or("seed", 0)
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_samples(manifest: &Path) -> Result<Vec<Sample>> {
    DatasetManifest::load(manifest)?.load_samples()
}

/// Checkpointed model with per-run overrides of the non-structural settings.
fn load_model(ckpt: &Path, k: Option<usize>, uniform: bool) -> Result<Model> {
    let mut m = Checkpoint::load(ckpt)?.model;
    if let Some(k) = k {
        m.config.k = k;
    }
    if uniform {
        m.config.adaptive = false;
    }
    m.config.validate()?;
    Ok(m)
}

pub fn degrade(a: DegradeArgs) -> Result<()> {
    let kv = settings(&a.common)?;
    let size = a.size.map_or_else(|| kv.get_or("size", 96), Ok)?;
    let cfg = GenerateConfig {
        base_dir: a.base,
        recipes: if a.single { single_recipes() } else { canonical_recipes() },
        per_recipe: a.per_recipe.map_or_else(|| kv.get_or("per_recipe", 4), Ok)?,
        seed: seed(&kv)?,
        width: size,
        height: size,
        format: if a.png { ImageFormat::Png } else { ImageFormat::Ppm },
    };
    create_dir(&a.out)?;
    let m = generate_dataset(&cfg, &a.out)?;
    println!("wrote {} samples to {}", m.rows.len(), a.out.display());
    Ok(())
}

pub fn pretrain(a: PretrainArgs) -> Result<()> {
    let kv = settings(&a.common)?;
    let config = ModelConfig::from_kv(&kv)?;
    let d = AlignConfig::default();
    let crop = match a.crop {
        Some(c) => Some(c),
        None => kv.get("align.crop")?,
    };
    let cfg = AlignConfig {
        epochs: a.epochs.map_or_else(|| kv.get_or("align.epochs", d.epochs), Ok)?,
        lr: a.lr.map_or_else(|| kv.get_or("align.lr", d.lr), Ok)?,
        batch: kv.get_or("align.batch", d.batch)?,
        temperature: kv.get_or("align.temperature", d.temperature)?,
        crop,
        seed: seed(&kv)?,
    };
    let train = load_samples(&a.data)?;
    let heldout = match &a.heldout {
        Some(p) => load_samples(p)?,
        None => Vec::new(),
    };
    create_dir(&a.out)?;
    let mut model = Model::new(config, cfg.seed)?;
    let report = align_pretrain(&model.encoder, &mut model.params, &train, &heldout, &cfg)?;
    model.refresh_bank()?;
    model.freeze_encoder();

    let mut log = String::from("epoch,loss\n");
    for (i, l) in report.epoch_losses.iter().enumerate() {
        let _ = writeln!(log, "{},{l}", i + 1);
    }
    write_text(&a.out.join("align_log.csv"), &log)?;
    println!(
        "held-out contrastive loss {:.4} -> {:.4}",
        report.initial_heldout_loss, report.final_heldout_loss
    );
    if !heldout.is_empty() {
        let p = probe(&model.encoder, &model.params, &model.bank, &heldout)?;
        let table = p.to_table();
        print!("{table}");
        write_text(&a.out.join("probe.txt"), &table)?;
    }
    let ck = Checkpoint { model, optimizer: None, rng: None, epoch: 0, step: 0 };
    let path = a.out.join("encoder.ckpt");
    ck.save(&path)?;
    println!("saved {}", path.display());
    Ok(())
}

fn write_loss_log(path: &Path, t: &Trainer) -> Result<()> {
    let mut s = String::from("epoch,step,loss\n");
    for r in &t.log {
        s.push_str(&r.line());
        s.push('\n');
    }
    write_text(path, &s)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let kv = settings(&a.common)?;
    let mut cfg = TrainConfig::default();
    cfg.apply_kv(&kv)?;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.crop {
        cfg.crop = v;
    }
    let every: usize = kv.get_or("checkpoint_every", a.checkpoint_every)?;
    let data: Vec<TrainPair> = load_samples(&a.data)?.iter().map(TrainPair::from).collect();

    let mut trainer = match &a.ckpt {
        Some(p) => {
            let mut ck = Checkpoint::load(p)?;
            let mut mc = ck.model.config.clone();
            mc.apply_kv(&kv)?;
            if let Some(k) = a.k {
                mc.k = k;
            }
            if a.uniform {
                mc.adaptive = false;
            }
            ck.model = Model::from_parts(mc, ck.model.params, ck.model.bank)?;
            if ck.optimizer.is_some() {
                Trainer::resume(ck, cfg)?
            } else {
                Trainer::new(ck.model, cfg)?
            }
        }
        None => {
            eprintln!("note: no --ckpt given, the descriptor encoder is not aligned");
            let mut mc = ModelConfig::from_kv(&kv)?;
            if let Some(k) = a.k {
                mc.k = k;
            }
            if a.uniform {
                mc.adaptive = false;
            }
            Trainer::new(Model::new(mc, cfg.seed)?, cfg)?
        }
    };
    create_dir(&a.out)?;
    write_text(&a.out.join("config.txt"), &trainer.model.config.to_kv().to_text())?;
    print!("{}", trainer.model.param_counts().report());

    let log_path = a.out.join("loss.csv");
    let out = a.out.clone();
    let mut clock = Instant::now();
    let r = trainer.fit(&data, |t, mean| {
        let mut line = format!("epoch {} loss {mean:.5}", t.epoch);
        if a.timing {
            let _ = write!(line, " time {:.1}s", clock.elapsed().as_secs_f64());
            clock = Instant::now();
        }
        println!("{line}");
        write_loss_log(&log_path, t)?;
        if every > 0 && t.epoch % every as u64 == 0 {
            t.checkpoint().save(&out.join(format!("epoch_{:04}.ckpt", t.epoch)))?;
        }
        Ok(())
    });
    write_loss_log(&log_path, &trainer)?;
    r?;
    let path = a.out.join("model.ckpt");
    trainer.checkpoint().save(&path)?;
    println!("saved {}", path.display());
    Ok(())
}

fn descriptor_report(m: &Model, img: &aio_core::image::ImageBuffer) -> Result<String> {
    let d = m.describe(img)?;
    let mut s = String::from("class lambda top-k token indices\n");
    for (i, c) in m.bank.classes().iter().enumerate() {
        let idx: Vec<String> = d.selected[i].iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{} {:.6} {}", c.text(), d.weights.lambda[i], idx.join(","));
    }
    Ok(s)
}

pub fn restore(a: RestoreArgs) -> Result<()> {
    settings(&a.common)?;
    let model = load_model(&a.ckpt, a.k, false)?;
    let mut names = HashSet::new();
    for p in &a.inputs {
        let name = p.file_name().ok_or_else(|| Error::Config(format!("{} is not a file", p.display())))?;
        if !names.insert(name.to_os_string()) {
            return Err(Error::Config(format!("two inputs are named {}", name.to_string_lossy())));
        }
    }
    create_dir(&a.out)?;
    let mut timing = String::from("file,ms\n");
    let mut total = 0.0;
    for p in &a.inputs {
        let img = read_image(p)?;
        let start = Instant::now();
        let out = model.restore(&img)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        total += ms;
        let name = PathBuf::from(p.file_name().expect("checked above"));
        write_image(&out, a.out.join(&name))?;
        if a.debug_descriptors {
            let stem = name.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            write_text(&a.out.join(format!("{stem}.descriptors.txt")), &descriptor_report(&model, &img)?)?;
        }
        let _ = writeln!(timing, "{},{ms:.1}", name.display());
        if a.timing {
            println!("{} {}×{} {ms:.1} ms", name.display(), img.width(), img.height());
        }
    }
    if a.timing {
        println!("mean {:.1} ms over {} images", total / a.inputs.len() as f64, a.inputs.len());
        write_text(&a.out.join("timing.csv"), &timing)?;
    }
    println!("restored {} images into {}", a.inputs.len(), a.out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    settings(&a.common)?;
    let model = load_model(&a.ckpt, a.k, a.uniform)?;
    let mut manifest = DatasetManifest::load(&a.data)?;
    if let Some(n) = a.limit {
        manifest = manifest.take(n);
    }
    let samples = manifest.load_samples()?;
    let report = evaluate(&model, &samples)?;
    let mut text = report.to_text();
    let _ = writeln!(text, "SSIM improved on {:.1}% of images", 100.0 * report.ssim_improved_fraction());
    print!("{text}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_text(&out.join("eval.txt"), &text)?;
        write_text(&out.join("eval.json"), &report.to_json())?;
    }
    Ok(())
}

pub fn selftest(a: SelftestArgs) -> Result<()> {
    settings(&a.common)?;
    let start = Instant::now();
    let reports = selftest::run_all()?;
    let mut text = String::new();
    for r in &reports {
        let _ = writeln!(text, "{}", r.line());
    }
    let _ = writeln!(text, "finished in {:.1}s", start.elapsed().as_secs_f64());
    print!("{text}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_text(&out.join("selftest.txt"), &text)?;
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(Error::Contract(format!("{failed} self-check suites failed")));
    }
    Ok(())
}
