use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::Command;
use crate::autodiff::Checkpoint;
use crate::error::{Error, Result};
use crate::geometry::cloud::{NormalizationTransform, PointCloud};
use crate::geometry::io::{read_cloud_file, read_mesh_file, write_xyz_file};
use crate::geometry::{extract_patches, merge_patches, sample_mesh};
use crate::losses::report::{write_csv, MetricReport};
use crate::network::{output_count, Model};
use crate::trainer::{Trainer, TrainingPair, LOG_HEADER};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train {
            config,
            iterations,
            batch,
            seed,
            out,
        } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if let Some(v) = iterations {
                cfg.train.iterations = v;
            }
            if let Some(v) = batch {
                cfg.train.batch_size = v;
            }
            if let Some(v) = seed {
                cfg.train.seed = v;
            }
            if let Some(v) = out {
                cfg.model_path = v;
            }
            cmd_train(&cfg)
        }
        Command::Upsample {
            model,
            input,
            ratio,
            seed,
            out,
            config,
        } => {
            let cfg = match config {
                Some(p) => RunConfig::from_file(&p)?,
                None => RunConfig::default(),
            };
            cmd_upsample(&model, &input, ratio, seed, &out, &cfg)
        }
        Command::Eval {
            pred,
            gt,
            mesh,
            out,
        } => cmd_eval(&pred, &gt, mesh.as_deref(), out.as_deref()),
        Command::SampleSmog {
            model,
            input,
            count,
            seed,
            out,
            params,
        } => cmd_sample_smog(
            &model,
            &input,
            count,
            seed,
            out.as_deref(),
            params.as_deref(),
        ),
        Command::Inspect { model } => cmd_inspect(&model),
        Command::Init { config, seed, out } => {
            let mut cfg = match config {
                Some(p) => RunConfig::from_file(&p)?,
                None => RunConfig::default(),
            };
            if let Some(s) = seed {
                cfg.model.init_seed = s;
            }
            cfg.validate()?;
            Model::<f32>::new(cfg.model)?.save(&out)
        }
        Command::SampleMesh {
            mesh,
            count,
            seed,
            out,
        } => {
            let m = read_input(&mesh, |p| read_mesh_file(p))?;
            write_xyz_file(&out, &sample_mesh(&m, count, seed)?)
        }
    }
}

fn read_input<V>(path: &Path, read: impl Fn(&Path) -> Result<V>) -> Result<V> {
    if !path.is_file() {
        return Err(Error::InvalidArgument(format!(
            "no such file: {}",
            path.display()
        )));
    }
    read(path).map_err(|e| match e {
        Error::Io(io) => Error::InvalidArgument(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    read_input(path, |p| Model::<f32>::load(p))
}

fn require_dir(key: &str, dir: &Option<PathBuf>) -> Result<PathBuf> {
    let d = dir
        .clone()
        .ok_or_else(|| Error::Config(format!("{key} is required for training")))?;
    if !d.is_dir() {
        return Err(Error::Config(format!(
            "{key} {} is not a directory",
            d.display()
        )));
    }
    Ok(d)
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

/// Input/target pairs matched by file name.
pub fn load_dataset(cfg: &RunConfig) -> Result<Vec<TrainingPair>> {
    let inputs = require_dir("input_dir", &cfg.input_dir)?;
    let targets = require_dir("target_dir", &cfg.target_dir)?;
    let files = sorted_files(&inputs)?;
    if files.is_empty() {
        return Err(Error::Config(format!(
            "input_dir {} contains no files",
            inputs.display()
        )));
    }
    let check = |c: &PointCloud, want: usize, p: &Path| -> Result<()> {
        if want != 0 && c.len() != want {
            return Err(Error::Config(format!(
                "{} has {} points, expected {want}",
                p.display(),
                c.len()
            )));
        }
        Ok(())
    };
    let mut pairs = Vec::with_capacity(files.len());
    for f in files {
        let t = targets.join(f.file_name().expect("directory entries have names"));
        if !t.is_file() {
            return Err(Error::Config(format!(
                "no target {} for input {}",
                t.display(),
                f.display()
            )));
        }
        let (a, b) = (read_cloud_file(&f)?, read_cloud_file(&t)?);
        check(&a, cfg.input_points, &f)?;
        check(&b, cfg.target_points, &t)?;
        pairs.push(TrainingPair::new(a, b)?);
    }
    Ok(pairs)
}

fn check_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(Error::Config(format!(
            "output directory {} does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    check_parent(&cfg.model_path)?;
    let log_path = cfg.log_path();
    check_parent(&log_path)?;
    if let Some(r) = &cfg.resume {
        if !r.is_file() {
            return Err(Error::Config(format!(
                "resume checkpoint {} not found",
                r.display()
            )));
        }
    }
    let data = load_dataset(cfg)?;
    let mut trainer = match &cfg.resume {
        Some(r) => Trainer::<f32>::resume(&Checkpoint::load(r)?, cfg.train.clone())?,
        None => Trainer::new(Model::<f32>::new(cfg.model.clone())?, cfg.train.clone())?,
    };
    let mut log = if cfg.resume.is_some() && log_path.is_file() {
        BufWriter::new(OpenOptions::new().append(true).open(&log_path)?)
    } else {
        let mut w = BufWriter::new(File::create(&log_path)?);
        writeln!(w, "{LOG_HEADER}")?;
        w
    };
    let every = cfg.train.checkpoint_every;
    let result = trainer.run(&data, |t, l| {
        writeln!(log, "{}", l.csv_row())?;
        if every > 0 && t.step() % every == 0 && !t.is_finished() {
            log.flush()?;
            t.to_checkpoint().save(&cfg.model_path)?;
        }
        Ok(())
    });
    log.flush()?;
    result?;
    trainer.to_checkpoint().save(&cfg.model_path)
}

fn patch_seed(seed: u64, patch: usize) -> u64 {
    seed ^ (patch as u64)
        .wrapping_add(1)
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Upsamples by patches when the cloud exceeds `patch_size`, otherwise in one pass.
pub fn upsample_cloud(
    model: &Model<f32>,
    cloud: &PointCloud,
    ratio: f64,
    seed: u64,
    cfg: &RunConfig,
) -> Result<PointCloud> {
    let target = output_count(cloud.len(), ratio)?;
    if cloud.len() <= cfg.patch_size {
        let up = model.upsample(cloud, ratio, seed)?;
        up.warnings.iter().for_each(|w| eprintln!("warning: {w}"));
        return Ok(up.points);
    }
    let patches = extract_patches(cloud, cfg.patch_size, cfg.coverage)?;
    let mut outs = Vec::with_capacity(patches.len());
    let mut warned = false;
    for (i, p) in patches.iter().enumerate() {
        let up = model.upsample(&p.cloud, ratio, patch_seed(seed, i))?;
        if !warned && !up.warnings.is_empty() {
            up.warnings.iter().for_each(|w| eprintln!("warning: {w}"));
            warned = true;
        }
        outs.push(up.points);
    }
    let ids = vec![NormalizationTransform::identity(); outs.len()];
    merge_patches(&outs, &ids, target)
}

pub fn cmd_upsample(
    model: &Path,
    input: &Path,
    ratio: f64,
    seed: u64,
    out: &Path,
    cfg: &RunConfig,
) -> Result<()> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ratio must be positive, got {ratio}"
        )));
    }
    cfg.validate()?;
    check_parent(out)?;
    let m = load_model(model)?;
    let cloud = read_input(input, |p| read_cloud_file(p))?;
    write_xyz_file(out, &upsample_cloud(&m, &cloud, ratio, seed, cfg)?)
}

fn find_with_stem(dir: &Path, stem: &str, exts: &[&str]) -> Option<PathBuf> {
    exts.iter()
        .map(|e| dir.join(format!("{stem}.{e}")))
        .find(|p| p.is_file())
}

pub fn evaluate_paths(pred: &Path, gt: &Path, mesh: Option<&Path>) -> Result<Vec<MetricReport>> {
    if pred.is_dir() {
        if !gt.is_dir() {
            return Err(Error::InvalidArgument(format!(
                "{} is not a directory",
                gt.display()
            )));
        }
        let mut reports = Vec::new();
        for f in sorted_files(pred)? {
            let stem = f
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let g = find_with_stem(gt, &stem, &["xyz", "ply", "off"]).ok_or_else(|| {
                Error::InvalidArgument(format!("no ground truth for {stem} in {}", gt.display()))
            })?;
            let m = match mesh {
                Some(d) => Some(find_with_stem(d, &stem, &["off", "ply"]).ok_or_else(|| {
                    Error::InvalidArgument(format!("no mesh for {stem} in {}", d.display()))
                })?),
                None => None,
            };
            reports.push(evaluate_one(&stem, &f, &g, m.as_deref())?);
        }
        if reports.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} contains no files",
                pred.display()
            )));
        }
        if let Some(mean) = MetricReport::mean("mean", &reports) {
            reports.push(mean);
        }
        Ok(reports)
    } else {
        let stem = pred
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(vec![evaluate_one(&stem, pred, gt, mesh)?])
    }
}

fn evaluate_one(name: &str, pred: &Path, gt: &Path, mesh: Option<&Path>) -> Result<MetricReport> {
    let p = read_input(pred, |p| read_cloud_file(p))?;
    let g = read_input(gt, |p| read_cloud_file(p))?;
    let m = mesh
        .map(|m| read_input(m, |p| read_mesh_file(p)))
        .transpose()?;
    MetricReport::evaluate(name, &p, &g, m.as_ref())
}

pub fn cmd_eval(pred: &Path, gt: &Path, mesh: Option<&Path>, out: Option<&Path>) -> Result<()> {
    if !pred.exists() {
        return Err(Error::InvalidArgument(format!(
            "no such file: {}",
            pred.display()
        )));
    }
    let reports = evaluate_paths(pred, gt, mesh)?;
    match out {
        Some(p) => {
            check_parent(p)?;
            write_csv(BufWriter::new(File::create(p)?), &reports)
        }
        None => write_csv(io::stdout().lock(), &reports),
    }
}

pub fn cmd_sample_smog(
    model: &Path,
    input: &Path,
    count: usize,
    seed: u64,
    out: Option<&Path>,
    params: Option<&Path>,
) -> Result<()> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    let m = load_model(model)?;
    let cloud = read_input(input, |p| read_cloud_file(p))?;
    let smog = m.mixture(&cloud)?;
    let samples = m.draw_queries(&smog, count, seed)?;
    if let Some(p) = params {
        smog.write_csv(BufWriter::new(File::create(p)?))?;
    }
    let write = |mut w: Box<dyn Write>| -> Result<()> {
        writeln!(w, "x,y,z,component")?;
        for (p, c) in samples.points.iter().zip(&samples.components) {
            writeln!(w, "{},{},{},{c}", p[0], p[1], p[2])?;
        }
        w.flush()?;
        Ok(())
    };
    match out {
        Some(p) => write(Box::new(BufWriter::new(File::create(p)?))),
        None => write(Box::new(io::stdout().lock())),
    }
}

pub fn cmd_inspect(path: &Path) -> Result<()> {
    let ck = read_input(path, |p| Checkpoint::load(p))?;
    let mut out = io::stdout().lock();
    for (k, v) in &ck.header {
        writeln!(out, "{k} = {v}")?;
    }
    let (opt, model): (Vec<_>, Vec<_>) =
        ck.tensors.iter().partition(|t| t.name.starts_with("adam."));
    let scalars: usize = model.iter().map(|t| t.values.len()).sum();
    writeln!(out, "tensors = {}", model.len())?;
    writeln!(out, "parameters = {scalars}")?;
    writeln!(out, "optimizer_state = {}", !opt.is_empty())?;
    Ok(())
}
