use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxfit_core::design::{build_design, DesignMatrix, DesignSpec, Term};
use voxfit_core::fit::{fit_voxel, Kernel, ModelSpec, SvrHyper};
use voxfit_core::maps::{z_transform, Provenance, StatMap};
use voxfit_core::metrics::{prss, vnprss, Polarity, PrssParams};
use voxfit_core::search::{grid_search, weighted_error, HyperAxis, HyperGrid, Sampling, SearchSettings};
use voxfit_core::volume::{CovariateTable, ObservationVolume, VolumeGeometry};

use crate::{ensure, Check};

pub fn a9_scores() -> Check {
    let geometry = VolumeGeometry::new([1, 1, 1], [1.0; 3]).map_err(|e| e.to_string())?;
    let one = StatMap::new(geometry, vec![0.001], "f-pvalue", Polarity::LowerBetter, Provenance::default())
        .map_err(|e| e.to_string())?;
    let z = z_transform(&one).values[0];
    ensure!((z - 3.0902).abs() <= 1e-3, "z(0.001) = {z}");

    let n = 10_000;
    let geometry = VolumeGeometry::new([n, 1, 1], [1.0; 3]).map_err(|e| e.to_string())?;
    let grid: Vec<f64> = (1..=n).map(|i| i as f64 / (n + 1) as f64).collect();
    let map = StatMap::new(geometry, grid, "f-pvalue", Polarity::LowerBetter, Provenance::default())
        .map_err(|e| e.to_string())?;
    let zs = z_transform(&map).values;
    ensure!(zs.windows(2).all(|w| w[1] < w[0]), "z is not strictly decreasing on the grid");

    let mut rng = ChaCha8Rng::seed_from_u64(0xA9);
    let points = 100;
    let t: Vec<f64> = (0..points).map(|i| i as f64 * 2.0 * std::f64::consts::PI / (points - 1) as f64).collect();
    let y: Vec<f64> = t.iter().map(|v| v.sin() + rng.random_range(-0.2..0.2)).collect();
    let sine: Vec<f64> = t.iter().map(|v| v.sin()).collect();
    let mean = y.iter().sum::<f64>() / points as f64;
    let flat = vec![mean; points];
    let rss: f64 = y.iter().zip(&sine).map(|(a, b)| (a - b) * (a - b)).sum();
    let zero = PrssParams { penalty_weight: 0.0, grid_points: points };
    let p0 = prss(&y, &sine, &t, &sine, &zero).map_err(|e| e.to_string())?.value;
    ensure!(p0 == rss, "PRSS(λ=0) = {p0} but RSS = {rss}");

    // heavy penalty: plain PRSS prefers the flat curve
    let heavy = PrssParams { penalty_weight: 50.0, grid_points: points };
    let p_sine = prss(&y, &sine, &t, &sine, &heavy).map_err(|e| e.to_string())?;
    let p_flat = prss(&y, &flat, &t, &flat, &heavy).map_err(|e| e.to_string())?;
    ensure!(p_flat.value < p_sine.value, "setup: PRSS does not favour the flat fit");
    let v_sine = vnprss(p_sine.value, &sine);
    let v_flat = vnprss(p_flat.value, &flat);
    ensure!(v_sine.polarity.better(v_sine.value, v_flat.value), "VN-PRSS ranks flat {} vs sine {}", v_flat.value, v_sine.value);
    let near: Vec<f64> = t.iter().map(|v| mean + 1e-3 * v.sin()).collect();
    let p_near = prss(&y, &near, &t, &near, &heavy).map_err(|e| e.to_string())?;
    let v_near = vnprss(p_near.value, &near);
    ensure!(!v_near.flat && v_sine.polarity.better(v_sine.value, v_near.value), "VN-PRSS prefers a near-flat curve");
    Ok(format!(
        "z(0.001) = {z:.5}, monotone on 10⁴ points, PRSS(0) = RSS, VN-PRSS sine {:.3} < near-flat {:.3e} < flat",
        v_sine.value, v_near.value
    ))
}

fn cohort(n: usize, seed: u64) -> Result<DesignMatrix, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = CovariateTable::new(
        (0..n).map(|i| format!("s{i}")).collect(),
        vec![
            ("age".into(), (0..n).map(|_| rng.random_range(55.0..85.0)).collect()),
            ("index".into(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()),
        ],
    )
    .map_err(|e| e.to_string())?;
    let spec = DesignSpec {
        correctors: vec![Term::new("age", 2)],
        predictors: vec![Term::new("index", 3)],
        standardize: true,
    };
    build_design(&table, &spec).map_err(|e| e.to_string())
}

fn volume(design: &DesignMatrix, noise: f64, seed: u64, scale_voxel: Option<(usize, f64)>) -> Result<ObservationVolume, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = design.n_subjects();
    let geometry = VolumeGeometry::new([4, 4, 4], [1.0; 3]).map_err(|e| e.to_string())?;
    let idx = &design.predictor_terms[0].raw;
    let mut data = Vec::with_capacity(64 * n);
    for v in 0..64 {
        let amp = 0.2 + 0.01 * v as f64;
        let s = match scale_voxel {
            Some((sv, s)) if sv == v => s,
            _ => 1.0,
        };
        for &x in idx {
            data.push(s * (amp * (x * x * x - 0.5 * x) + noise * rng.random_range(-1.0..1.0)));
        }
    }
    ObservationVolume::new(geometry, n, data, Some(vec![true; 64])).map_err(|e| e.to_string())
}

pub fn a10_grid_search() -> Check {
    let design = cohort(40, 10)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xA10);
    let y: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
    let base = fit_voxel(&design, &y, ModelSpec::Glm).map_err(|e| e.to_string())?;
    let w0 = weighted_error(base.rss_full, &y);
    for s in [1e-4, 0.3, 7.0, 1e5] {
        let ys: Vec<f64> = y.iter().map(|v| v * s).collect();
        let m = fit_voxel(&design, &ys, ModelSpec::Glm).map_err(|e| e.to_string())?;
        let w = weighted_error(m.rss_full, &ys);
        ensure!((w - w0).abs() <= 1e-6 * w0, "scale {s}: weighted error {w} vs {w0}");
    }

    let empty = HyperGrid { axes: vec![], seed: 0 };
    let settings = SearchSettings { var_min: 0.0, m: 64, n_iters: 2, seed: 3, ..SearchSettings::default() };
    let plain = volume(&design, 0.1, 1, None)?;
    let scaled = volume(&design, 0.1, 1, Some((17, 250.0)))?;
    let a = grid_search(&plain, &design, ModelSpec::Glm, &empty, &settings).map_err(|e| e.to_string())?;
    let b = grid_search(&scaled, &design, ModelSpec::Glm, &empty, &settings).map_err(|e| e.to_string())?;
    ensure!((a.scores[0] - b.scores[0]).abs() <= 1e-6 * a.scores[0], "search score moved under voxel scaling: {} vs {}", a.scores[0], b.scores[0]);

    let svr = ModelSpec::Svr { kernel: Kernel::Rbf { gamma: 0.5 }, hyper: SvrHyper { epsilon: 0.1, c: 1.0 } };
    let grid = HyperGrid {
        axes: vec![
            HyperAxis { name: "epsilon".into(), min: 0.01, max: 0.5, count: 3, sampling: Sampling::Logarithmic },
            HyperAxis { name: "c".into(), min: 0.1, max: 10.0, count: 2, sampling: Sampling::RandomUniform },
        ],
        seed: 9,
    };
    let settings = SearchSettings { var_min: 1e-4, m: 20, n_iters: 3, seed: 42, ..SearchSettings::default() };
    let r1 = grid_search(&plain, &design, svr, &grid, &settings).map_err(|e| e.to_string())?;
    let r2 = grid_search(&plain, &design, svr, &grid, &settings).map_err(|e| e.to_string())?;
    let bits = |r: &voxfit_core::search::GridSearchResult| r.scores.iter().map(|s| s.to_bits()).collect::<Vec<_>>();
    ensure!(bits(&r1) == bits(&r2) && r1.voxel_subsets == r2.voxel_subsets && r1.best == r2.best, "seeded search is not reproducible");
    ensure!(
        serde_json::to_string(&r1).map_err(|e| e.to_string())? == serde_json::to_string(&r2).map_err(|e| e.to_string())?,
        "serialized search results differ"
    );

    let clean = volume(&design, 0.005, 2, None)?;
    let two = HyperGrid {
        axes: vec![HyperAxis { name: "epsilon".into(), min: 0.005, max: 2.0, count: 2, sampling: Sampling::Linear }],
        seed: 0,
    };
    let settings = SearchSettings { var_min: 1e-6, m: 30, n_iters: 2, seed: 5, ..SearchSettings::default() };
    let r = grid_search(&clean, &design, svr, &two, &settings).map_err(|e| e.to_string())?;
    ensure!(r.best == 0, "ε = 2 beat ε = 0.005: scores {:?}", r.scores);
    Ok(format!(
        "weighted error scale-invariant, seeded search bit-identical, small ε wins ({:.3} vs {:.3})",
        r.scores[0], r.scores[1]
    ))
}
