use super::params::{GradSet, ParamSet};
use super::tape::{Mode, Tape, Var};
use crate::error::{Error, Result};

/// A differentiable architecture: builds logits for a batch on a tape whose
/// parameters come from the caller's [`ParamSet`].
pub trait Network {
    type Batch: ?Sized;

    /// One logit per batch element, shaped `n x 1`.
    fn logits(&self, tape: &mut Tape<'_>, batch: &Self::Batch) -> Result<Var>;
}

/// Labels and class weighting that accompany a batch through the loss.
#[derive(Debug, Clone, Copy)]
pub struct LossTarget<'a> {
    pub labels: &'a [f64],
    pub pos_weight: f64,
}

/// Forward state needed by [`backward`]; consumed on first use.
pub struct Cache<'p> {
    tape: Tape<'p>,
    loss: Var,
    consumed: bool,
}

impl<'p> Cache<'p> {
    pub fn tape(&self) -> &Tape<'p> {
        &self.tape
    }
}

pub fn forward_loss<'p, N: Network + ?Sized>(
    net: &N,
    params: &'p ParamSet,
    batch: &N::Batch,
    target: LossTarget<'_>,
    mode: Mode,
    dropout_seed: u64,
) -> Result<(f64, Cache<'p>)> {
    if target.labels.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    let mut tape = Tape::new(params, mode, dropout_seed);
    let logits = net.logits(&mut tape, batch)?;
    let loss = tape.weighted_bce(logits, target.labels, target.pos_weight)?;
    let value = tape.value(loss).data[0];
    Ok((
        value,
        Cache {
            tape,
            loss,
            consumed: false,
        },
    ))
}

pub fn backward(cache: &mut Cache<'_>) -> Result<GradSet> {
    if cache.consumed {
        return Err(Error::Usage("backward called twice on the same forward cache".into()));
    }
    cache.consumed = true;
    cache.tape.gradients(cache.loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::matrix::Matrix;
    use crate::diff::params::ParamId;

    /// Logits are a single trainable scalar per batch element.
    struct Direct(ParamId);

    impl Network for Direct {
        type Batch = ();
        fn logits(&self, tape: &mut Tape<'_>, _: &()) -> Result<Var> {
            Ok(tape.param(self.0))
        }
    }

    fn direct(logits: Vec<f64>) -> (ParamSet, Direct) {
        let mut ps = ParamSet::new(0);
        let n = logits.len();
        let id = ps.add_value("z", Matrix::from_vec(n, 1, logits));
        (ps, Direct(id))
    }

    fn loss_of(logits: Vec<f64>, labels: &[f64], w: f64) -> f64 {
        let (ps, net) = direct(logits);
        let target = LossTarget { labels, pos_weight: w };
        forward_loss(&net, &ps, &(), target, Mode::Eval, 0).unwrap().0
    }

    #[test]
    fn perfect_fit_has_negligible_loss() {
        assert!(loss_of(vec![40.0, -40.0, 40.0], &[1.0, 0.0, 1.0], 1.0) <= 1e-6);
    }

    #[test]
    fn closed_form_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((loss_of(vec![0.0], &[1.0], 1.0) - ln2).abs() < 1e-15);
        assert!((loss_of(vec![0.0], &[1.0], 2.0) - 2.0 * ln2).abs() < 1e-15);
    }

    #[test]
    fn logit_gradient_identity() {
        let z = 0.8;
        let p = 1.0 / (1.0 + (-z as f64).exp());
        for (y, w) in [(1.0, 2.5), (0.0, 2.5)] {
            let (ps, net) = direct(vec![z]);
            let labels = [y];
            let target = LossTarget { labels: &labels, pos_weight: w };
            let (_, mut cache) = forward_loss(&net, &ps, &(), target, Mode::Eval, 0).unwrap();
            let g = backward(&mut cache).unwrap();
            let expected = if y == 1.0 { w * (p - 1.0) } else { p };
            assert!((g.grads[0].data[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn cache_reuse_is_a_usage_error() {
        let (ps, net) = direct(vec![0.1, 0.2]);
        let labels = [1.0, 0.0];
        let target = LossTarget { labels: &labels, pos_weight: 1.0 };
        let (_, mut cache) = forward_loss(&net, &ps, &(), target, Mode::Eval, 0).unwrap();
        backward(&mut cache).unwrap();
        assert!(matches!(backward(&mut cache), Err(Error::Usage(_))));
    }
}
