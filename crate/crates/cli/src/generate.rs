use std::path::PathBuf;

use pathosynth::io::{load_manifest, write_sample};
use pathosynth::pipeline::{generate_sample_with_seeds, plan_batch, CotrainingSampler, SamplePlan};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::GeneratorConfig;
use crate::{CliError, GenerateArgs};

struct Job {
    batch: u64,
    subject: usize,
    batch_seed: u64,
    plan: SamplePlan,
}

#[derive(Serialize)]
struct BatchSummary<'a> {
    batch: u64,
    subject: &'a str,
    dataset: &'a str,
    batch_seed: u64,
    severities: Vec<f64>,
    dirs: Vec<PathBuf>,
}

fn resolve_config(a: &GenerateArgs) -> Result<GeneratorConfig, CliError> {
    let mut cfg = match &a.config {
        Some(p) => GeneratorConfig::load(p)?,
        None => GeneratorConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.num_batches {
        cfg.num_batches = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.sample_size {
        cfg.sample_size = v;
    }
    if let Some(v) = a.workers {
        cfg.workers = v;
    }
    if a.shared_deformation {
        cfg.generation.shared_deformation = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(a: GenerateArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&a)?;
    let manifest = load_manifest(&a.manifest)?;
    let subjects = manifest.load_subjects()?;
    let mut weights = manifest.weights();
    weights.extend(cfg.weights.clone());
    let tags: Vec<&str> = subjects.iter().map(|s| s.dataset.as_str()).collect();
    let sampler = CotrainingSampler::new(&tags, &weights, cfg.seed)?;
    let gen = cfg.gen_config();

    let n = cfg.batch_size;
    let mut jobs = Vec::new();
    for batch in 0..cfg.num_batches {
        let draw = sampler.draw(batch);
        for plan in plan_batch(n, draw.batch_seed, gen.shared_deformation) {
            jobs.push(Job {
                batch,
                subject: draw.subject,
                batch_seed: draw.batch_seed,
                plan,
            });
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let dirs = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let subject = &subjects[job.subject];
                let sample = generate_sample_with_seeds(subject, job.plan.severity, job.plan.seeds, &gen)?;
                let index = job.batch * n as u64 + job.plan.index as u64;
                write_sample(&sample, &a.out_dir, index, job.batch_seed, &gen)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    for (chunk, dirs) in jobs.chunks(n).zip(dirs.chunks(n)) {
        let subject = &subjects[chunk[0].subject];
        let summary = BatchSummary {
            batch: chunk[0].batch,
            subject: &subject.id,
            dataset: &subject.dataset,
            batch_seed: chunk[0].batch_seed,
            severities: chunk.iter().map(|j| j.plan.severity).collect(),
            dirs: dirs.to_vec(),
        };
        println!(
            "{}",
            serde_json::to_string(&summary).map_err(|e| CliError::Internal(e.to_string()))?
        );
    }
    Ok(())
}
