use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pathosynth::io::sample::{IMAGE_FILE, PATHOLOGY_FILE, TARGET_ANAT_FILE, TARGET_PATHOL_FILE};
use pathosynth::io::{read_volume, SampleMeta};
use pathosynth::metrics::{metric_dice, metric_l1, metric_psnr, metric_ssim};
use pathosynth::objectives::{Availability, LossConfig, LossReport, SynthPrediction, SynthTargets, ThresholdSegmenter};
use pathosynth::Volume;
use serde_json::json;

use crate::{CliError, InspectArgs, LossArgs, MetricKind, MetricsArgs};

pub const PRED_ANAT_FILE: &str = "pred_anat.nii.gz";
pub const PRED_PATHOL_FILE: &str = "pred_pathol.nii.gz";
const AXES: [&str; 3] = ["x", "y", "z"];

fn is_nifti(p: &Path) -> bool {
    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

fn collect_nifti(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .and_then(|rd| rd.map(|e| e.map(|e| e.path())).collect())
        .map_err(|e| CliError::Data(pathosynth::Error::from(e)))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_nifti(&p, out)?;
        } else if is_nifti(&p) {
            out.push(p);
        }
    }
    Ok(())
}

pub fn metrics(a: MetricsArgs) -> Result<(), CliError> {
    let reference = read_volume(&a.reference)?;
    let preds = if a.pred.is_dir() {
        let mut files = Vec::new();
        collect_nifti(&a.pred, &mut files)?;
        files
    } else {
        vec![a.pred.clone()]
    };
    let name = match a.metric {
        MetricKind::L1 => "l1",
        MetricKind::Psnr => "psnr",
        MetricKind::Ssim => "ssim",
        MetricKind::Dice => "dice",
    };
    for file in preds {
        let pred = read_volume(&file)?;
        let value = match a.metric {
            MetricKind::L1 => json!(metric_l1(&pred, &reference)?),
            MetricKind::Psnr => json!(metric_psnr(&pred, &reference)?),
            MetricKind::Ssim => json!(metric_ssim(&pred, &reference)?),
            MetricKind::Dice => json!(metric_dice(&pred, &reference, a.threshold)?),
        };
        println!("{}", json!({ "file": file, "metric": name, "value": value }));
    }
    Ok(())
}

/// `x:40`, `y:12`, `z:0`.
fn parse_slice(s: &str, dims: [usize; 3]) -> Result<(usize, usize), CliError> {
    let (axis, index) = s
        .split_once(':')
        .ok_or_else(|| CliError::Usage(format!("bad slice `{s}`: expected axis:index")))?;
    let axis = match axis.trim() {
        "x" | "0" => 0,
        "y" | "1" => 1,
        "z" | "2" => 2,
        other => return Err(CliError::Usage(format!("bad slice axis `{other}`"))),
    };
    let index: usize = index
        .trim()
        .parse()
        .map_err(|e| CliError::Usage(format!("bad slice index in `{s}`: {e}")))?;
    if index >= dims[axis] {
        return Err(CliError::Usage(format!(
            "slice {index} out of range for axis of length {}",
            dims[axis]
        )));
    }
    Ok((axis, index))
}

/// 8-bit binary PGM of one slice; values clamp to `[0, 1]`. The first
/// remaining axis runs left to right and the second bottom to top.
fn render_pgm(v: &Volume, axis: usize, index: usize) -> Vec<u8> {
    let dims = v.dims();
    let (u, w) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let (width, height) = (dims[u], dims[w]);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for row in (0..height).rev() {
        for col in 0..width {
            let mut p = [0usize; 3];
            p[axis] = index;
            p[u] = col;
            p[w] = row;
            let x = v.get(p[0], p[1], p[2]).clamp(0.0, 1.0);
            out.push((x * 255.0).round() as u8);
        }
    }
    out
}

pub fn inspect(a: InspectArgs) -> Result<(), CliError> {
    let file = match a.volume.as_str() {
        "image" => IMAGE_FILE,
        "pathology" => PATHOLOGY_FILE,
        "target_anat" => TARGET_ANAT_FILE,
        "target_pathol" => TARGET_PATHOL_FILE,
        other => {
            return Err(CliError::Usage(format!(
                "unknown volume `{other}` (image, pathology, target_anat, target_pathol)"
            )))
        }
    };
    let meta = SampleMeta::read(&a.sample_dir)?;
    let v = read_volume(a.sample_dir.join(file))?;
    let dims = v.dims();
    let (axis, index) = match &a.slice {
        Some(s) => parse_slice(s, dims)?,
        None => (2, dims[2] / 2),
    };
    if let Some(out) = &a.out {
        fs::File::create(out)
            .and_then(|mut f| f.write_all(&render_pgm(&v, axis, index)))
            .map_err(|e| CliError::Data(pathosynth::Error::from(e)))?;
    }
    let (min, max) = v.min_max();
    let summary = json!({
        "subject": meta.subject_id,
        "dataset": meta.dataset,
        "sample_index": meta.sample_index,
        "severity": meta.severity,
        "alpha": meta.alpha,
        "beta": meta.beta,
        "dims": meta.dims,
        "spacing": meta.spacing,
        "seeds": meta.seeds,
        "pathology_shift": {
            "direction": meta.draw.direction,
            "delta": meta.draw.delta,
            "mu_w": meta.draw.mu_w,
            "mu_g": meta.draw.mu_g,
        },
        "corruption": meta.corruption,
        "max_control_displacement_mm": meta.max_control_displacement_mm,
        "volume": a.volume,
        "slice": { "axis": AXES[axis], "index": index },
        "intensity": { "min": min, "max": max, "mean": v.mean() },
        "rendered": a.out,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::Internal(e.to_string()))?
    );
    Ok(())
}

pub fn loss(a: LossArgs) -> Result<(), CliError> {
    let mut preds = Vec::new();
    let mut anat = Vec::new();
    let mut pathol = Vec::new();
    let mut avail: Option<Availability> = None;
    for dir in &a.sample_dirs {
        let meta = SampleMeta::read(dir)?;
        let here = Availability {
            anat: meta.alpha == 1,
            pathol: meta.beta == 1,
        };
        match avail {
            None => avail = Some(here),
            Some(prev) if prev != here => {
                return Err(CliError::Usage(
                    "all samples of a batch must share target availability".into(),
                ))
            }
            Some(_) => {}
        }
        preds.push(SynthPrediction {
            anat: read_volume(dir.join(PRED_ANAT_FILE))?,
            pathol: read_volume(dir.join(PRED_PATHOL_FILE))?,
        });
        anat.push(here.anat.then(|| read_volume(dir.join(TARGET_ANAT_FILE))).transpose()?);
        pathol.push(
            here.pathol
                .then(|| read_volume(dir.join(TARGET_PATHOL_FILE)))
                .transpose()?,
        );
    }
    let targets: Vec<SynthTargets<'_>> = anat
        .iter()
        .zip(&pathol)
        .map(|(a, p)| SynthTargets {
            anat: a.as_ref(),
            pathol: p.as_ref(),
        })
        .collect();
    let seg = ThresholdSegmenter::default();
    let report = LossReport::compute(
        &preds,
        &targets,
        avail.expect("at least one sample"),
        &seg,
        &seg,
        &LossConfig::default(),
        a.iteration,
    )?;
    println!("{}", report.to_json_line());
    Ok(())
}
