//! Independent reference solvers used by the checks.

use num::rational::BigRational;
use num::{One, ToPrimitive, Zero};

/// Solves `XᵀX β = Xᵀy` exactly in rational arithmetic.
pub fn exact_normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let q = |v: f64| BigRational::from_float(v).expect("finite");
    let xr: Vec<Vec<BigRational>> = x.iter().map(|r| r.iter().map(|&v| q(v)).collect()).collect();
    let yr: Vec<BigRational> = y.iter().map(|&v| q(v)).collect();
    let mut a = vec![vec![BigRational::zero(); p + 1]; p];
    for (row, yv) in xr.iter().zip(&yr) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += &row[i] * &row[j];
            }
            a[i][p] += &row[i] * yv;
        }
    }
    for col in 0..p {
        let pivot = (col..p).find(|&r| !a[r][col].is_zero()).expect("full rank");
        a.swap(col, pivot);
        let inv = BigRational::one() / &a[col][col];
        for j in col..=p {
            a[col][j] = &a[col][j] * &inv;
        }
        for r in 0..p {
            if r != col && !a[r][col].is_zero() {
                let factor = a[r][col].clone();
                for j in col..=p {
                    let delta = &factor * &a[col][j];
                    a[r][j] -= delta;
                }
            }
        }
    }
    a.iter().map(|row| row[p].to_f64().unwrap_or(f64::NAN)).collect()
}

/// ε-SVR dual over `z = (α, α*)` solved by FISTA with adaptive restart,
/// projecting onto `{0 ≤ z ≤ C, Σα − Σα* = 0}` by bisection on the
/// equality multiplier. Returns `(β, bias, objective)`.
pub fn svr_projected_gradient(k: &[Vec<f64>], y: &[f64], eps: f64, c: f64) -> (Vec<f64>, f64, f64) {
    let n = y.len();
    let lambda_max = {
        let mut v = vec![1.0; n];
        let mut lam = 0.0;
        for _ in 0..500 {
            let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i][j] * v[j]).sum()).collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            lam = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.iter().map(|x| x / norm).collect();
        }
        lam
    };
    let step = 1.0 / (2.0 * lambda_max * 1.01);
    let beta_of = |z: &[f64]| -> Vec<f64> { (0..n).map(|i| z[i] - z[n + i]).collect() };
    let kb = |b: &[f64]| -> Vec<f64> { (0..n).map(|i| (0..n).map(|j| k[i][j] * b[j]).sum()).collect() };
    let objective = |z: &[f64]| -> f64 {
        let b = beta_of(z);
        let f = kb(&b);
        0.5 * b.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() + eps * z.iter().sum::<f64>()
            - y.iter().zip(&b).map(|(a, b)| a * b).sum::<f64>()
    };
    let project = |v: &[f64]| -> Vec<f64> {
        let at = |lam: f64| -> (Vec<f64>, f64) {
            let z: Vec<f64> = (0..2 * n)
                .map(|i| {
                    let s = if i < n { 1.0 } else { -1.0 };
                    (v[i] - lam * s).clamp(0.0, c)
                })
                .collect();
            let h = z[..n].iter().sum::<f64>() - z[n..].iter().sum::<f64>();
            (z, h)
        };
        let bound = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c;
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if at(mid).1 > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * bound {
                break;
            }
        }
        at(0.5 * (lo + hi)).0
    };
    let mut z = vec![0.0; 2 * n];
    let mut w = z.clone();
    let mut t = 1.0f64;
    let mut last = objective(&z);
    for _ in 0..400_000 {
        let b = beta_of(&w);
        let f = kb(&b);
        let grad: Vec<f64> = (0..2 * n)
            .map(|i| if i < n { f[i] - y[i] + eps } else { -(f[i - n] - y[i - n]) + eps })
            .collect();
        let trial: Vec<f64> = w.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
        let next = project(&trial);
        let obj = objective(&next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let moved = next.iter().zip(&z).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if moved < 1e-13 * c.max(1.0) {
            z = next;
            break;
        }
        if obj > last && t == 1.0 {
            // a plain projected step no longer descends
            break;
        }
        if obj > last {
            // restart momentum
            t = 1.0;
            w = z.clone();
            continue;
        }
        w = next.iter().zip(&z).map(|(a, b)| a + (t - 1.0) / t_next * (a - b)).collect();
        z = next;
        t = t_next;
        last = obj;
    }
    let beta = beta_of(&z);
    let f = kb(&beta);
    let tol = 1e-7 * c;
    let (mut lb, mut ub) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..n {
        let r = y[i] - f[i];
        let (a, s) = (z[i], z[n + i]);
        if a > tol && a < c - tol {
            sum += r - eps;
            count += 1;
        } else if s > tol && s < c - tol {
            sum += r + eps;
            count += 1;
        } else {
            if a >= c - tol {
                ub = ub.min(r - eps);
            } else if s >= c - tol {
                lb = lb.max(r + eps);
            } else {
                lb = lb.max(r - eps);
                ub = ub.min(r + eps);
            }
        }
    }
    let bias = if count > 0 { sum / count as f64 } else { 0.5 * (lb + ub) };
    (beta, bias, objective(&z))
}

/// Component labels by recursive depth-first flood fill, ids in order of
/// each component's lowest linear index.
pub fn flood_fill_labels(present: &[bool], dims: [usize; 3], max_l1: i64) -> Vec<u32> {
    fn fill(v: usize, id: u32, present: &[bool], dims: [usize; 3], max_l1: i64, labels: &mut [u32]) {
        labels[v] = id;
        let [d0, d1, d2] = dims;
        let (i, j, k) = ((v % d0) as i64, ((v / d0) % d1) as i64, (v / (d0 * d1)) as i64);
        for dk in -1..=1i64 {
            for dj in -1..=1i64 {
                for di in -1..=1i64 {
                    let l1 = di.abs() + dj.abs() + dk.abs();
                    if l1 == 0 || l1 > max_l1 {
                        continue;
                    }
                    let (x, y, z) = (i + di, j + dj, k + dk);
                    if x < 0 || y < 0 || z < 0 || x >= d0 as i64 || y >= d1 as i64 || z >= d2 as i64 {
                        continue;
                    }
                    let u = x as usize + d0 * (y as usize + d1 * z as usize);
                    if present[u] && labels[u] == 0 {
                        fill(u, id, present, dims, max_l1, labels);
                    }
                }
            }
        }
    }
    let mut labels = vec![0; present.len()];
    let mut next = 0;
    for v in 0..present.len() {
        if present[v] && labels[v] == 0 {
            next += 1;
            fill(v, next, present, dims, max_l1, &mut labels);
        }
    }
    labels
}

/// Asymptotic Kolmogorov–Smirnov p-value against U(0, 1), with the
/// small-sample correction of the test statistic.
pub fn ks_uniform(sample: &mut [f64]) -> (f64, f64) {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    let d = sample
        .iter()
        .enumerate()
        .map(|(i, &u)| ((i as f64 + 1.0) / n - u).max(u - i as f64 / n))
        .fold(0.0, f64::max);
    let sq = n.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    let mut p = 0.0;
    for k in 1..=200 {
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}
