use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{backward, forward_loss, LossTarget, Network};
use super::params::ParamSet;
use super::tape::{Mode, Tape, Var};
use crate::error::{Error, Result};

/// Models with more entries than this are checked on a seeded subsample.
pub const FULL_CHECK_LIMIT: usize = 2000;
pub const SUBSAMPLE_SIZE: usize = 400;
/// Tenfold step reductions tried when a stencil straddles a kink.
pub const MAX_STEP_SHRINKS: usize = 3;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Worst entry found by a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Times a step was cut tenfold because its stencil crossed a kink.
    pub shrunk_steps: usize,
}

/// Maximum relative error between reverse-mode gradients and extrapolated
/// central differences of an arbitrary scalar built on an eval-mode tape.
pub fn finite_diff_check_fn<F>(params: &ParamSet, eps: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    Ok(finite_diff_report(params, eps, build)?.max_relative_error)
}

/// Like [`finite_diff_check_fn`] but reports where the worst entry is.
pub fn finite_diff_report<F>(params: &ParamSet, eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::arg(format!("eps must be in (0, 1e-2], got {eps}")));
    }
    let (grads, base) = {
        let mut tape = Tape::new(params, Mode::Eval, 0);
        let root = build(&mut tape)?;
        let pattern = tape.kink_pattern();
        (tape.gradients(root)?, pattern)
    };
    let eval = |p: &ParamSet| -> Result<(f64, bool)> {
        let mut tape = Tape::new(p, Mode::Eval, 0);
        let root = build(&mut tape)?;
        Ok((tape.value(root).data[0], tape.kink_pattern() == base))
    };

    let entries: Vec<(usize, usize)> = params
        .params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.value.len()).map(move |k| (pi, k)))
        .collect();
    let chosen: Vec<(usize, usize)> = if entries.len() > FULL_CHECK_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut idx = sample(&mut rng, entries.len(), SUBSAMPLE_SIZE).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| entries[i]).collect()
    } else {
        entries
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        param: String::new(),
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: chosen.len(),
        shrunk_steps: 0,
    };
    for (pi, k) in chosen {
        let orig = work.params[pi].value.data[k];
        let mut central = |h: f64| -> Result<(f64, bool)> {
            work.params[pi].value.data[k] = orig + h;
            let (plus, same_plus) = eval(&work)?;
            work.params[pi].value.data[k] = orig - h;
            let (minus, same_minus) = eval(&work)?;
            work.params[pi].value.data[k] = orig;
            Ok(((plus - minus) / (2.0 * h), same_plus && same_minus))
        };
        // Richardson: (4 D(h/2) - D(h)) / 3 cancels the h^2 error term, so a
        // step large enough to keep roundoff small stays accurate. A step
        // whose stencil crosses a kink is invalid and is retried smaller.
        let mut h = eps;
        let mut numeric = f64::NAN;
        for attempt in 0..=MAX_STEP_SHRINKS {
            let (wide, clean_wide) = central(h)?;
            let (narrow, clean_narrow) = central(h / 2.0)?;
            numeric = (4.0 * narrow - wide) / 3.0;
            if clean_wide && clean_narrow {
                break;
            }
            if attempt < MAX_STEP_SHRINKS {
                report.shrunk_steps += 1;
                h /= 10.0;
            }
        }
        let analytic = grads.grads[pi].data[k];
        let err = relative_error(analytic, numeric);
        if err > report.max_relative_error || report.param.is_empty() {
            report.max_relative_error = err;
            report.param = work.params[pi].name.clone();
            report.index = k;
            report.analytic = analytic;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

/// Gradient check of the full weighted-BCE objective for `net`, with dropout
/// disabled.
pub fn finite_diff_check<N: Network + ?Sized>(
    net: &N,
    params: &ParamSet,
    batch: &N::Batch,
    target: LossTarget<'_>,
    eps: f64,
) -> Result<f64> {
    // cross-check the public forward/backward pair against the tape path
    let (_, mut cache) = forward_loss(net, params, batch, target, Mode::Eval, 0)?;
    backward(&mut cache)?;
    finite_diff_check_fn(params, eps, |tape| {
        let logits = net.logits(tape, batch)?;
        tape.weighted_bce(logits, target.labels, target.pos_weight)
    })
}
