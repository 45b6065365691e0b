use std::path::{Path, PathBuf};

use voxfit_cli::commands::{cmd_compare, cmd_evaluate, cmd_fit, cmd_synth, labels_rel, map_rel};
use voxfit_cli::config::PipelineConfig;
use voxfit_core::maps::{best_fit_labels, label_components, sidecar_path, Connectivity, StatMap};
use voxfit_core::metrics::Metric;
use voxfit_core::synth::{SynthSpec, EFFECT_MASK_FILE};
use voxfit_core::volume::load_nifti;

use crate::oracle::ks_uniform;
use crate::{ensure, Check};

const SEED: u64 = 2024;

fn spec(effect_sd: f64) -> SynthSpec {
    SynthSpec {
        dims: [32, 32, 32],
        n_subjects: 60,
        noise_sd: 0.05,
        effect_sd,
        effect_size: 6,
        seed: SEED,
        ..SynthSpec::default()
    }
}

fn pipeline(dir: &Path, spec: &SynthSpec, models: &[&str]) -> Result<PipelineConfig, String> {
    cmd_synth(spec, dir).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::load(&dir.join("config.toml")).map_err(|e| e.to_string())?;
    let names: Vec<String> = models.iter().map(|s| s.to_string()).collect();
    cmd_fit(&cfg, Some(&names)).map_err(|e| e.to_string())?;
    cmd_evaluate(&cfg, Some(&names), Some(&[Metric::FPvalue])).map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn load_map(cfg: &PipelineConfig, model: &str, metric: &str) -> Result<StatMap, String> {
    StatMap::load(cfg.output.dir.join(map_rel(model, metric))).map_err(|e| e.to_string())
}

pub fn a5_null_calibration() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = pipeline(tmp.path(), &spec(0.0), &["glm-poly"])?;
    let map = load_map(&cfg, "glm-poly", "f-pvalue")?;
    let mut p: Vec<f64> = map.values.iter().copied().filter(|v| !v.is_nan()).collect();
    ensure!(p.len() > 5000, "only {} voxels were scored", p.len());
    let small = p.iter().filter(|&&v| v < 0.001).count() as f64 / p.len() as f64;
    let (d, ks_p) = ks_uniform(&mut p);
    ensure!(ks_p > 0.01, "KS vs uniform rejects: D = {d:.4}, p = {ks_p:.4}");
    ensure!(small < 0.003, "fraction with p < 0.001 is {:.3}%", small * 100.0);
    Ok(format!(
        "{} voxels, KS D = {d:.4} (p = {ks_p:.3}), p<0.001 in {:.3}%",
        p.len(),
        small * 100.0
    ))
}

fn surviving(map: &StatMap) -> Vec<bool> {
    map.values.iter().map(|v| !v.is_nan()).collect()
}

pub fn a6_pipeline_replication() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let effect = spec(0.05);
    ensure!((effect.snr() - 1.0).abs() < 1e-12, "SNR is {}", effect.snr());
    let cfg = pipeline(tmp.path(), &effect, &["glm-poly"])?;
    ensure!(cfg.evaluation.alpha == Some(0.001), "alpha is {:?}", cfg.evaluation.alpha);
    ensure!(cfg.evaluation.min_cluster == 27, "min cluster is {}", cfg.evaluation.min_cluster);
    let kept = surviving(&load_map(&cfg, "glm-poly", "f-pvalue.thresholded")?);
    let truth: Vec<bool> = load_nifti(tmp.path().join(EFFECT_MASK_FILE))
        .map_err(|e| e.to_string())?
        .data
        .iter()
        .map(|&v| v > 0.0)
        .collect();
    let inter = kept.iter().zip(&truth).filter(|(a, b)| **a && **b).count();
    let (nk, nt) = (kept.iter().filter(|&&v| v).count(), truth.iter().filter(|&&v| v).count());
    let dice = 2.0 * inter as f64 / (nk + nt) as f64;
    ensure!(dice >= 0.6, "Dice {dice:.3} ({nk} surviving voxels, {nt} true)");

    let null_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let null_cfg = pipeline(null_dir.path(), &spec(0.0), &["glm-poly"])?;
    let null_kept = surviving(&load_map(&null_cfg, "glm-poly", "f-pvalue.thresholded")?);
    let clusters = label_components(&null_kept, [32, 32, 32], cfg.evaluation.connectivity).sizes.len();
    ensure!(clusters == 0, "{clusters} clusters survive with zero effect");
    Ok(format!("Dice {dice:.3} ({nk} surviving / {nt} true voxels), 0 clusters without effect"))
}

fn compare_run(dir: &Path) -> Result<(PipelineConfig, Vec<u8>, Vec<u8>), String> {
    let models = ["glm-poly", "svr-poly", "svr-rbf"];
    let cfg = pipeline(dir, &spec(0.05), &models)?;
    let names: Vec<String> = models.iter().map(|s| s.to_string()).collect();
    cmd_compare(&cfg, Some(&names), Some(Metric::FPvalue)).map_err(|e| e.to_string())?;
    let rel = labels_rel("f-pvalue");
    let path: PathBuf = cfg.output.dir.join(&rel);
    let image = std::fs::read(&path).map_err(|e| e.to_string())?;
    let sidecar = std::fs::read(sidecar_path(&path)).map_err(|e| e.to_string())?;
    Ok((cfg, image, sidecar))
}

pub fn a7_best_fit_labels() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (cfg, img_a, side_a) = compare_run(a.path())?;
    let (_, img_b, side_b) = compare_run(b.path())?;
    ensure!(img_a == img_b, "label images differ between runs");
    ensure!(side_a == side_b, "label sidecars differ between runs");

    let models = ["glm-poly", "svr-poly", "svr-rbf"];
    let legend: Vec<String> = models.iter().map(|s| s.to_string()).collect();
    let maps = models
        .iter()
        .map(|m| load_map(&cfg, m, "f-pvalue"))
        .collect::<Result<Vec<_>, _>>()?;
    let eval = &cfg.evaluation;
    let alpha = eval.alpha.unwrap();
    let reference = best_fit_labels(&maps, &legend, Some(alpha), eval.min_cluster, eval.connectivity)
        .map_err(|e| e.to_string())?;
    let raw = best_fit_labels(&maps, &legend, None, 1, Connectivity::Six).map_err(|e| e.to_string())?;
    let transforms: [(&str, fn(f64) -> f64); 3] = [
        ("p²", |p| p * p),
        ("√p", f64::sqrt),
        ("(e^p−1)/(e−1)", |p| p.exp_m1() / 1f64.exp_m1()),
    ];
    for (name, g) in transforms {
        let warped: Vec<StatMap> = maps
            .iter()
            .map(|m| {
                let mut w = m.clone();
                w.values = m.values.iter().map(|&v| g(v)).collect();
                w
            })
            .collect();
        let thr = best_fit_labels(&warped, &legend, Some(g(alpha)), eval.min_cluster, eval.connectivity)
            .map_err(|e| e.to_string())?;
        ensure!(thr.labels == reference.labels, "thresholded labels change under {name}");
        let plain = best_fit_labels(&warped, &legend, None, 1, Connectivity::Six).map_err(|e| e.to_string())?;
        ensure!(plain.labels == raw.labels, "argmax labels change under {name}");
    }
    let counts = reference.counts();
    Ok(format!(
        "byte-identical over 2 runs; invariant under 3 monotone maps; label counts {:?}",
        &counts[1..]
    ))
}
