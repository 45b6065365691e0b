use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use voxfit_core::fit::{
    gam_fit, gam_predict, glm_fit, svr_fit, svr_fit_with_kernel, svr_predict, GamOptions, Kernel, KernelMatrix,
    SmoOptions, SmootherSpec, SvrHyper,
};

use crate::oracle::{exact_normal_equations, svr_projected_gradient};
use crate::{ensure, Check};

pub fn a1_ols_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1);
    let n = 50;
    let mut worst: f64 = 0.0;
    for inst in 0..100 {
        let p = 1 + inst % 8;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut r: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                r[0] = 1.0;
                if p > 2 {
                    // mild collinearity
                    r[2] = 0.8 * r[1] + 0.2 * r[2];
                }
                r
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0 + 1.0).collect();
        let x = DMatrix::from_fn(n, p, |r, c| rows[r][c]);
        let ours = glm_fit(&x, &y).map_err(|e| e.to_string())?.coefficients;
        let exact = exact_normal_equations(&rows, &y);
        let num = ours.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den = exact.iter().map(|b| b * b).sum::<f64>().sqrt();
        let rel = num / den;
        ensure!(rel <= 1e-8, "instance {inst} (p={p}): relative error {rel:e}");
        worst = worst.max(rel);
    }
    Ok(format!("100 instances, max relative error {worst:.1e}"))
}

pub fn a2_svr_qp_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA2);
    let (mut worst_obj, mut worst_pred, mut worst_kkt) = (0.0f64, 0.0f64, 0.0f64);
    for inst in 0..25 {
        let n = rng.random_range(5..=15);
        let dim = 1 + inst % 2;
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| r.iter().map(|v: &f64| v.sin()).sum::<f64>() + rng.random_range(-0.3..0.3))
            .collect();
        let kernel = Kernel::Rbf { gamma: rng.random_range(0.2..2.0) };
        let hyper = SvrHyper { epsilon: rng.random_range(0.01..0.3), c: [0.1, 1.0, 10.0][inst % 3] };
        let km = KernelMatrix::new(kernel, x.clone()).map_err(|e| e.to_string())?;
        let ours = svr_fit_with_kernel(&km, &y, hyper, SmoOptions::default()).map_err(|e| e.to_string())?;

        let k: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| km.get(i, j)).collect()).collect();
        let (beta, bias, obj) = svr_projected_gradient(&k, &y, hyper.epsilon, hyper.c);
        let d_obj = (ours.objective - obj).abs();
        ensure!(d_obj <= 1e-4, "instance {inst}: objective {} vs oracle {obj} (diff {d_obj:e})", ours.objective);
        worst_obj = worst_obj.max(d_obj);

        let probe: Vec<Vec<f64>> = x
            .iter()
            .cloned()
            .chain((0..10).map(|_| (0..dim).map(|_| rng.random_range(-2.5..2.5)).collect()))
            .collect();
        let pred = svr_predict(&ours, &probe).map_err(|e| e.to_string())?;
        for (row, p) in probe.iter().zip(&pred) {
            let q = bias + x.iter().zip(&beta).map(|(xi, b)| b * kernel.eval(xi, row)).sum::<f64>();
            let d = (p - q).abs();
            ensure!(d <= 1e-4, "instance {inst}: prediction {p} vs oracle {q}");
            worst_pred = worst_pred.max(d);
        }

        let c = hyper.c;
        let tol = 1e-3 * c;
        let sum: f64 = ours.dual_coeffs.iter().sum();
        ensure!(sum.abs() <= 1e-10 * c.max(1.0), "instance {inst}: Σβ = {sum:e}");
        for (i, (&b, &f)) in ours.dual_coeffs.iter().zip(&pred[..n]).enumerate() {
            let r = y[i] - f;
            ensure!(b.abs() <= c, "instance {inst}: |β_{i}| = {} > C", b.abs());
            let wrong_side = if r * b < 0.0 { r.abs() } else { 0.0 };
            let violation = if b == 0.0 {
                (r.abs() - hyper.epsilon).max(0.0)
            } else if b.abs() < c {
                (r.abs() - hyper.epsilon).abs().max(wrong_side)
            } else {
                (hyper.epsilon - r.abs()).max(0.0).max(wrong_side)
            };
            ensure!(violation <= tol, "instance {inst}: KKT violation {violation:e} at point {i} (β={b}, r={r})");
            worst_kkt = worst_kkt.max(violation / c);
        }
    }
    Ok(format!(
        "25 instances, max |Δobj| {worst_obj:.1e}, max |Δpred| {worst_pred:.1e}, max KKT {worst_kkt:.1e}·C"
    ))
}

pub fn a3_svr_trivial_limits() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA3);
    let x: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let probe: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
    let kernels = [
        Kernel::Rbf { gamma: 0.7 },
        Kernel::Polynomial { gamma: 1.0, degree: 3, coef0: 1.0 },
    ];
    for kernel in kernels {
        let flat = vec![2.5; 20];
        let p = svr_fit(&x, &flat, SvrHyper { epsilon: 0.1, c: 1.0 }, kernel).map_err(|e| e.to_string())?;
        ensure!(p.support.is_empty(), "constant target kept {} support vectors", p.support.len());
        let pred = svr_predict(&p, &probe).map_err(|e| e.to_string())?;
        ensure!(pred.iter().all(|&v| v == 2.5), "constant target predicted {:?}", &pred[..3]);

        let y: Vec<f64> = x.iter().map(|r| r[0] * 0.4 + r[1].sin() * 0.3).collect();
        let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let eps = (hi - lo) / 2.0 + 0.01;
        let p = svr_fit(&x, &y, SvrHyper { epsilon: eps, c: 5.0 }, kernel).map_err(|e| e.to_string())?;
        ensure!(p.support.is_empty(), "ε covering the data kept {} support vectors", p.support.len());
        let pred = svr_predict(&p, &probe).map_err(|e| e.to_string())?;
        ensure!(pred.iter().all(|&v| v == pred[0]), "large-ε prediction is not constant");
        ensure!(y.iter().all(|v| (v - pred[0]).abs() <= eps), "large-ε constant leaves the tube");
    }
    Ok("constant target and ε ≥ half-range: 0 support vectors, constant prediction, both kernels".into())
}

pub fn a4_backfitting_linear() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA4);
    let (mut worst_fit, mut worst_mean) = (0.0f64, 0.0f64);
    for inst in 0..20 {
        let n = rng.random_range(20..80);
        let k = 1 + inst % 4;
        let base: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let inputs: Vec<Vec<f64>> = (0..k)
            .map(|_| base.iter().map(|b| 0.5 * b + rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|t| inputs.iter().enumerate().map(|(j, x)| (j as f64 - 1.0) * x[t]).sum::<f64>() + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let opts = GamOptions { tol: 1e-13, max_iter: 100_000 };
        let params = gam_fit(&inputs, &y, &vec![SmootherSpec::Polynomial { degree: 1 }; k], opts)
            .map_err(|e| e.to_string())?;
        ensure!(params.converged, "instance {inst}: backfitting did not converge");
        let fitted = gam_predict(&params, &inputs).map_err(|e| e.to_string())?;

        let x = DMatrix::from_fn(n, k + 1, |r, c| if c == 0 { 1.0 } else { inputs[c - 1][r] });
        let yv = DVector::from_column_slice(&y);
        let qr = x.clone().qr();
        let beta = qr.r().solve_upper_triangular(&(qr.q().transpose() * &yv)).ok_or("singular")?;
        let ols = &x * beta;
        for (a, b) in fitted.iter().zip(ols.iter()) {
            let d = (a - b).abs();
            ensure!(d <= 1e-6, "instance {inst}: fitted {a} vs OLS {b}");
            worst_fit = worst_fit.max(d);
        }
        for (comp, xi) in params.components.iter().zip(&inputs) {
            let mean = comp.evaluate_many(xi).iter().sum::<f64>() / n as f64;
            ensure!(mean.abs() < 1e-8, "instance {inst}: component mean {mean:e}");
            worst_mean = worst_mean.max(mean.abs());
        }
    }
    Ok(format!("20 instances, max |Δfit| {worst_fit:.1e}, max |mean f_i| {worst_mean:.1e}"))
}
