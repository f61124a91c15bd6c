//! Fitting `θ_org` (and the retrain-gold model) by mini-batch SGD on mean NLL.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use unlearn_core::model::{grad_nll, Model, ModelKind};
use unlearn_core::optim::sgd_step;
use unlearn_core::rng::{stream, Stage};
use unlearn_core::{Error, Result, TokenSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSpec {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once the epoch-over-epoch NLL improvement (nats per token) falls below this.
    pub tol: f64,
    pub init_scale: f64,
}

impl PretrainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || !(self.tol >= 0.0) || !(self.init_scale >= 0.0) {
            return Err(Error::Usage("pretrain: lr > 0, batch_size >= 1, tol >= 0, init_scale >= 0 required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    /// Per-token NLL on the training set before training and after each epoch.
    pub nll: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
}

fn per_token(model: &Model<f64>, data: &[TokenSequence], tokens: f64) -> Result<f64> {
    Ok(model.mean_nll(data)? * data.len() as f64 / tokens)
}

/// True when the last three epochs each raised the NLL.
pub fn rising_three(nll: &[f64]) -> bool {
    nll.len() >= 4 && nll[nll.len() - 4..].windows(2).all(|w| w[1] > w[0])
}

/// Trains from a seeded random initialisation. `stream_salt` separates the
/// original and gold runs so they do not share mini-batch order.
pub fn pretrain(
    data: &[TokenSequence],
    kind: ModelKind,
    vocab: usize,
    spec: &PretrainSpec,
    seed: u64,
    stream_salt: u64,
) -> Result<(Model<f64>, PretrainLog)> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::Usage("pretrain: training set is empty".into()));
    }
    let mut rng = stream(seed ^ stream_salt.wrapping_mul(0x9E37_79B9_7F4A_7C15), Stage::Pretrain);
    let mut model = Model::random(kind, vocab, spec.init_scale, &mut rng)?;
    let tokens = data.iter().map(TokenSequence::len).sum::<usize>() as f64;
    let mut log = PretrainLog { nll: vec![per_token(&model, data, tokens)?], epochs: 0, converged: false };
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..spec.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(spec.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| data[i].clone()).collect();
            let g = grad_nll(&model, &batch)?;
            let next = sgd_step(model.params(), &g, spec.lr).map_err(|e| e.at_step(epoch))?;
            model = model.with_params(next)?;
        }
        let nll = per_token(&model, data, tokens)?;
        let prev = *log.nll.last().expect("initial value");
        log.nll.push(nll);
        log.epochs = epoch + 1;
        if !nll.is_finite() {
            return Err(Error::Numeric { step: Some(epoch), msg: "pretraining NLL is not finite".into() });
        }
        if rising_three(&log.nll) {
            return Err(Error::Numeric {
                step: Some(epoch),
                msg: format!("pretraining diverged: NLL rose for 3 consecutive epochs (last values {:?})", &log.nll[log.nll.len() - 4..]),
            });
        }
        if prev - nll < spec.tol && nll <= prev {
            log.converged = true;
            break;
        }
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_corpus, CorpusSpec};
    use unlearn_core::Split;

    fn spec() -> PretrainSpec {
        PretrainSpec { lr: 0.1, batch_size: 8, max_epochs: 30, tol: 1e-4, init_scale: 0.01 }
    }

    fn data() -> Vec<TokenSequence> {
        let cs = CorpusSpec {
            vocab_size: 6,
            n_profiles: 20,
            seqs_per_profile: 4,
            seq_len: 8,
            forget_fraction: 0.1,
            profile_concentration: 1.0,
            base_concentration: 1.0,
            holdout_fraction: 0.1,
        };
        gen_corpus(&cs, 0).unwrap().dataset.subset(Split::Retain)
    }

    #[test]
    fn zero_epochs_returns_init() {
        let s = PretrainSpec { max_epochs: 0, ..spec() };
        let (m, log) = pretrain(&data(), ModelKind::TabularBigram, 6, &s, 1, 0).unwrap();
        let init = Model::<f64>::random(ModelKind::TabularBigram, 6, 0.01, &mut stream(1, Stage::Pretrain)).unwrap();
        assert_eq!(m, init);
        assert_eq!(log.nll.len(), 1);
    }

    #[test]
    fn nll_non_increasing_tabular() {
        let (_, log) = pretrain(&data(), ModelKind::TabularBigram, 6, &spec(), 2, 0).unwrap();
        assert!(log.nll.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", log.nll);
    }

    #[test]
    fn divergence_rule() {
        assert!(rising_three(&[1.0, 0.5, 0.6, 0.7, 0.8]));
        assert!(!rising_three(&[1.0, 0.6, 0.7, 0.65, 0.8]));
        assert!(!rising_three(&[1.0, 2.0, 3.0]));
    }
}
