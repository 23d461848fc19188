use std::collections::HashMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AttributionMethod, AttributionResult};
use crate::error::{Error, Result};
use crate::schema::{Dataset, Record};
use crate::synth::{binomial, shapley_from_coalition_values};

pub const DEFAULT_D_MAX: usize = 12;
/// Coalition bitmasks are `u128`.
pub const SAMPLED_D_MAX: usize = 128;
const RESAMPLE_ATTEMPTS: u64 = 5;

fn check_inputs(background: &Dataset, x: &Record) -> Result<usize> {
    if background.is_empty() {
        return Err(Error::arg("background set is empty"));
    }
    let d = background.schema.len();
    if x.values.len() != d {
        return Err(Error::SchemaMismatch(format!(
            "record has {} values, background has {d} features",
            x.values.len()
        )));
    }
    Ok(d)
}

/// Mean score over the background with coalition members taken from `x`.
fn coalition_value<F>(score_fn: &F, background: &Dataset, x: &Record, member: impl Fn(usize) -> bool) -> Result<f64>
where
    F: Fn(&[Record]) -> Result<Vec<f64>>,
{
    let rows: Vec<Record> = background
        .records
        .iter()
        .map(|b| {
            let values = b
                .values
                .iter()
                .zip(&x.values)
                .enumerate()
                .map(|(i, (&bv, &xv))| if member(i) { xv } else { bv })
                .collect();
            Record::new(values, b.label)
        })
        .collect();
    let scores = score_fn(&rows)?;
    if scores.len() != rows.len() {
        return Err(Error::arg("score function returned the wrong number of scores"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn names(ds: &Dataset) -> Vec<String> {
    ds.schema.features.iter().map(|f| f.name.clone()).collect()
}

/// Interventional Shapley values by enumerating all `2^d` coalitions.
/// `score_fn` maps a batch of records to scores.
pub fn exact_shapley<F>(score_fn: &F, background: &Dataset, x: &Record, d_max: usize) -> Result<AttributionResult>
where
    F: Fn(&[Record]) -> Result<Vec<f64>>,
{
    let d = check_inputs(background, x)?;
    if d > d_max || d >= usize::BITS as usize - 1 {
        return Err(Error::Capability(format!(
            "exact Shapley enumerates 2^{d} coalitions; limit is d <= {d_max}"
        )));
    }
    let values = (0..1usize << d)
        .map(|mask| coalition_value(score_fn, background, x, |i| mask >> i & 1 == 1))
        .collect::<Result<Vec<f64>>>()?;
    Ok(AttributionResult {
        feature_names: names(background),
        values: shapley_from_coalition_values(d, &values),
        method: AttributionMethod::ExactShapley,
        baseline: format!("interventional, mean over {} background rows", background.len()),
    })
}

/// Kernel weight of a coalition of size `s` out of `d`.
fn kernel_weight(d: usize, s: usize) -> f64 {
    (d - 1) as f64 / (binomial(d, s) * (s * (d - s)) as f64)
}

/// Kernel-weighted least-squares Shapley estimate with the efficiency
/// constraint imposed exactly. When `n_coalitions >= 2^d` every coalition is
/// used with its kernel weight, which reproduces the exact values.
pub fn sampled_shapley<F>(
    score_fn: &F,
    background: &Dataset,
    x: &Record,
    n_coalitions: usize,
    seed: u64,
) -> Result<AttributionResult>
where
    F: Fn(&[Record]) -> Result<Vec<f64>>,
{
    let d = check_inputs(background, x)?;
    if n_coalitions < 2 * d + 2 {
        return Err(Error::arg(format!(
            "need at least {} coalitions for {d} features, got {n_coalitions}",
            2 * d + 2
        )));
    }
    if d > SAMPLED_D_MAX {
        return Err(Error::Capability(format!("sampled Shapley supports d <= {SAMPLED_D_MAX}")));
    }
    let mut cache: HashMap<u128, f64> = HashMap::new();
    let mut value = |mask: u128| -> Result<f64> {
        if let Some(&v) = cache.get(&mask) {
            return Ok(v);
        }
        let v = coalition_value(score_fn, background, x, |i| mask >> i & 1 == 1)?;
        cache.insert(mask, v);
        Ok(v)
    };
    let full: u128 = if d == 128 { u128::MAX } else { (1u128 << d) - 1 };
    let v0 = value(0)?;
    let delta = value(full)? - v0;
    let result = |values: Vec<f64>, desc: String| AttributionResult {
        feature_names: names(background),
        values,
        method: AttributionMethod::SampledShapley,
        baseline: format!("interventional, mean over {} background rows; {desc}", background.len()),
    };
    if d == 1 {
        return Ok(result(vec![delta], "single feature".into()));
    }

    let exhaustive = d < 64 && n_coalitions as u128 >= 1u128 << d;
    for attempt in 0..RESAMPLE_ATTEMPTS {
        let design: Vec<(u128, f64)> = if exhaustive {
            (1..full)
                .map(|m| (m, kernel_weight(d, m.count_ones() as usize)))
                .collect()
        } else {
            sample_coalitions(d, n_coalitions - 2, seed.wrapping_add(attempt))
        };
        let rows = design
            .iter()
            .map(|&(m, w)| Ok((m, w, value(m)? - v0)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(phi) = constrained_fit(d, &rows, delta) {
            let desc = if exhaustive {
                "all coalitions".to_string()
            } else {
                format!("{} sampled coalitions, seed {}", n_coalitions, seed.wrapping_add(attempt))
            };
            return Ok(result(phi, desc));
        }
        if exhaustive {
            break;
        }
    }
    Err(Error::Numeric(format!(
        "kernel Shapley design stayed degenerate after {RESAMPLE_ATTEMPTS} attempts"
    )))
}

/// Paired sampling: sizes drawn in proportion to the total kernel mass of
/// each size, members uniform, each draw followed by its complement.
fn sample_coalitions(d: usize, count: usize, seed: u64) -> Vec<(u128, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size_mass: Vec<f64> = (1..d).map(|s| 1.0 / (s * (d - s)) as f64).collect();
    let total: f64 = size_mass.iter().sum();
    let full: u128 = if d == 128 { u128::MAX } else { (1u128 << d) - 1 };
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut u = rng.gen::<f64>() * total;
        let mut s = d - 1;
        for (k, m) in size_mass.iter().enumerate() {
            if u < *m {
                s = k + 1;
                break;
            }
            u -= m;
        }
        let mask = sample(&mut rng, d, s)
            .into_iter()
            .fold(0u128, |acc, i| acc | 1u128 << i);
        out.push((mask, 1.0));
        if out.len() < count {
            out.push((full & !mask, 1.0));
        }
    }
    out
}

/// Minimizes `sum_k w_k (y_k - sum_{i in S_k} phi_i)^2` subject to
/// `sum_i phi_i = delta` by eliminating the last coordinate. `None` when the
/// normal equations are singular.
fn constrained_fit(d: usize, rows: &[(u128, f64, f64)], delta: f64) -> Option<Vec<f64>> {
    let m = d - 1;
    let mut ata = vec![0.0; m * m];
    let mut atb = vec![0.0; m];
    let mut a = vec![0.0; m];
    for &(mask, w, y) in rows {
        let last = (mask >> (d - 1) & 1) as f64;
        for (i, ai) in a.iter_mut().enumerate() {
            *ai = (mask >> i & 1) as f64 - last;
        }
        let t = y - last * delta;
        for i in 0..m {
            if a[i] == 0.0 {
                continue;
            }
            atb[i] += w * a[i] * t;
            for j in 0..m {
                ata[i * m + j] += w * a[i] * a[j];
            }
        }
    }
    let mut phi = solve(ata, atb, m)?;
    let rest: f64 = phi.iter().sum();
    phi.push(delta - rest);
    Some(phi)
}

/// Gaussian elimination with partial pivoting on an `m x m` system.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>, m: usize) -> Option<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..m {
        let pivot = (col..m).max_by(|&i, &j| a[i * m + col].abs().total_cmp(&a[j * m + col].abs()))?;
        if a[pivot * m + col].abs() <= 1e-12 * scale {
            return None;
        }
        if pivot != col {
            for k in 0..m {
                a.swap(pivot * m + k, col * m + k);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..m {
            let f = a[row * m + col] / a[col * m + col];
            if f == 0.0 {
                continue;
            }
            for k in col..m {
                a[row * m + k] -= f * a[col * m + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; m];
    for row in (0..m).rev() {
        let s: f64 = (row + 1..m).map(|k| a[row * m + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * m + row];
    }
    Some(x)
}
