//! Tiny autoregressive token models with exact analytic gradients.
//!
//! Both model kinds condition on the previous token only; the first token of a
//! sequence is conditioned on a dedicated BOS context (index `V`). Every loss
//! therefore reduces to per-context logit gradients, which are accumulated over
//! a batch once and then pushed through the architecture a single time.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};
use crate::vector::{Grad, Layout, Params};

/// A non-empty sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn new(tokens: Vec<u32>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::usage("token sequence must be non-empty"));
        }
        Ok(TokenSequence(tokens))
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// `(context, next)` pairs with the BOS context `vocab` for the first token.
    pub fn transitions(&self, vocab: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        std::iter::once(vocab)
            .chain(self.0.iter().map(|&t| t as usize))
            .zip(self.0.iter().map(|&t| t as usize))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Unlearn,
    Retain,
    Holdout,
}

impl Split {
    pub fn as_u8(self) -> u8 {
        match self {
            Split::Unlearn => 0,
            Split::Retain => 1,
            Split::Holdout => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Split::Unlearn),
            1 => Some(Split::Retain),
            2 => Some(Split::Holdout),
            _ => None,
        }
    }
}

/// Sequences tagged as unlearn / retain / holdout. Each sequence carries exactly one
/// tag, so the unlearn and retain sets are disjoint by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenDataset {
    vocab_size: usize,
    sequences: Vec<TokenSequence>,
    splits: Vec<Split>,
}

impl TokenDataset {
    pub fn new(vocab_size: usize, sequences: Vec<TokenSequence>, splits: Vec<Split>) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::usage("vocabulary must be non-empty"));
        }
        if sequences.len() != splits.len() {
            return Err(Error::usage("one split tag per sequence is required"));
        }
        for (i, s) in sequences.iter().enumerate() {
            if let Some(&t) = s.tokens().iter().find(|&&t| t as usize >= vocab_size) {
                return Err(Error::Domain(format!(
                    "sequence {i} has token {t} outside vocabulary of size {vocab_size}"
                )));
            }
        }
        Ok(TokenDataset { vocab_size, sequences, splits })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn sequences(&self) -> &[TokenSequence] {
        &self.sequences
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Sequences carrying `split`, in dataset order.
    pub fn subset(&self, split: Split) -> Vec<TokenSequence> {
        self.sequences
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == split)
            .map(|(seq, _)| seq.clone())
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// `(V+1) x V` table of logits, one row per context.
    TabularBigram,
    /// Embedding (width `hidden_dim`), one tanh hidden layer, linear output.
    MlpLm { hidden_dim: usize },
}

impl ModelKind {
    pub fn code(self) -> u32 {
        match self {
            ModelKind::TabularBigram => 0,
            ModelKind::MlpLm { .. } => 1,
        }
    }

    pub fn hidden_dim(self) -> usize {
        match self {
            ModelKind::TabularBigram => 0,
            ModelKind::MlpLm { hidden_dim } => hidden_dim,
        }
    }

    pub fn layout(self, vocab: usize) -> Layout {
        let ctx = vocab + 1;
        match self {
            ModelKind::TabularBigram => Layout::contiguous([("logits", ctx * vocab)]),
            ModelKind::MlpLm { hidden_dim: h } => Layout::contiguous([
                ("embedding", ctx * h),
                ("w_hidden", h * h),
                ("b_hidden", h),
                ("w_out", vocab * h),
                ("b_out", vocab),
            ]),
        }
    }
}

/// A model architecture together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    kind: ModelKind,
    vocab_size: usize,
    params: Params<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(kind: ModelKind, vocab_size: usize, params: Params<T>) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::usage("vocabulary must be non-empty"));
        }
        if let ModelKind::MlpLm { hidden_dim: 0 } = kind {
            return Err(Error::usage("MLP hidden_dim must be positive"));
        }
        let layout = kind.layout(vocab_size);
        if params.layout().as_ref() != &layout {
            return Err(Error::usage("parameter layout does not match model architecture"));
        }
        Ok(Model { kind, vocab_size, params })
    }

    /// All-zero parameters. For the tabular model this is the uniform model.
    pub fn zeros(kind: ModelKind, vocab_size: usize) -> Result<Self> {
        let layout = Arc::new(kind.layout(vocab_size));
        Self::new(kind, vocab_size, Params::zeros(layout))
    }

    /// Parameters drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(kind: ModelKind, vocab_size: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let layout = Arc::new(kind.layout(vocab_size));
        let values = (0..layout.len()).map(|_| T::lit(rng.random_range(-scale..=scale))).collect();
        Self::new(kind, vocab_size, Params::new(layout, values)?)
    }

    /// Same architecture, different parameters.
    pub fn with_params(&self, params: Params<T>) -> Result<Self> {
        Self::new(self.kind, self.vocab_size, params)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn into_params(self) -> Params<T> {
        self.params
    }

    pub fn bos(&self) -> usize {
        self.vocab_size
    }

    fn n_contexts(&self) -> usize {
        self.vocab_size + 1
    }

    fn check_seq(&self, seq: &TokenSequence) -> Result<()> {
        match seq.tokens().iter().find(|&&t| t as usize >= self.vocab_size) {
            None => Ok(()),
            Some(t) => Err(Error::Domain(format!(
                "token {t} outside vocabulary of size {}",
                self.vocab_size
            ))),
        }
    }

    pub(crate) fn check_batch(&self, batch: &[TokenSequence]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::usage("batch must be non-empty"));
        }
        batch.iter().try_for_each(|s| self.check_seq(s))
    }

    /// Hidden activations for one context (MLP only).
    fn hidden(&self, ctx: usize, h: usize) -> (Vec<T>, Vec<T>) {
        let p = self.params.as_slice();
        let emb = &p[ctx * h..(ctx + 1) * h];
        let w1 = &p[self.n_contexts() * h..][..h * h];
        let b1 = &p[self.n_contexts() * h + h * h..][..h];
        let act = (0..h).map(|k| (scalar::dot(&w1[k * h..(k + 1) * h], emb) + b1[k]).tanh()).collect();
        (emb.to_vec(), act)
    }

    /// Logits for context `ctx` (`ctx == V` is BOS).
    pub fn logits(&self, ctx: usize) -> Vec<T> {
        let v = self.vocab_size;
        let p = self.params.as_slice();
        match self.kind {
            ModelKind::TabularBigram => p[ctx * v..(ctx + 1) * v].to_vec(),
            ModelKind::MlpLm { hidden_dim: h } => {
                let (_, act) = self.hidden(ctx, h);
                let base = self.n_contexts() * h + h * h + h;
                let w2 = &p[base..base + v * h];
                let b2 = &p[base + v * h..base + v * h + v];
                (0..v).map(|j| scalar::dot(&w2[j * h..(j + 1) * h], &act) + b2[j]).collect()
            }
        }
    }

    /// Next-token distribution for context `ctx`.
    pub fn next_token_dist(&self, ctx: usize) -> Vec<T> {
        let logits = self.logits(ctx);
        let mut out = vec![T::zero(); logits.len()];
        scalar::softmax_into(&logits, &mut out);
        out
    }

    /// Row-major `(V+1) x V` table of `log p(next | ctx)`.
    pub fn log_prob_table(&self) -> Vec<T> {
        let v = self.vocab_size;
        let mut table = Vec::with_capacity(self.n_contexts() * v);
        for ctx in 0..self.n_contexts() {
            let logits = self.logits(ctx);
            let lse = scalar::log_sum_exp(&logits);
            table.extend(logits.iter().map(|&l| l - lse));
        }
        table
    }

    /// `Σ_i log p(s_i | s_{i-1})`, with the first token conditioned on BOS.
    pub fn log_prob(&self, seq: &TokenSequence) -> Result<T> {
        self.check_seq(seq)?;
        let table = self.log_prob_table();
        Ok(self.log_prob_with(&table, seq))
    }

    pub(crate) fn log_prob_with(&self, table: &[T], seq: &TokenSequence) -> T {
        let v = self.vocab_size;
        seq.transitions(v).fold(T::zero(), |acc, (c, n)| acc + table[c * v + n])
    }

    /// Per-sequence log-probabilities, in batch order.
    pub fn seq_log_probs(&self, batch: &[TokenSequence]) -> Result<Vec<T>> {
        batch.iter().try_for_each(|s| self.check_seq(s))?;
        let table = self.log_prob_table();
        Ok(batch.iter().map(|s| self.log_prob_with(&table, s)).collect())
    }

    /// Mean per-sequence NLL. The sum runs over values in ascending order so the
    /// result does not depend on batch order.
    pub fn mean_nll(&self, batch: &[TokenSequence]) -> Result<T> {
        self.check_batch(batch)?;
        let mut lps = self.seq_log_probs(batch)?;
        lps.sort_by(|a, b| a.partial_cmp(b).expect("finite log-probabilities"));
        let total = lps.iter().fold(T::zero(), |acc, &x| acc + x);
        Ok(-total / T::from_usize_lossy(batch.len()))
    }

    /// `Σ_i w_i ∇ log p(s_i)`, accumulated in batch order.
    pub fn weighted_log_prob_grad(&self, batch: &[TokenSequence], weights: &[T]) -> Result<Grad<T>> {
        self.check_batch(batch)?;
        if weights.len() != batch.len() {
            return Err(Error::usage("one weight per sequence is required"));
        }
        let v = self.vocab_size;
        let probs = self.prob_table();
        let mut dlogits = vec![T::zero(); self.n_contexts() * v];
        for (seq, &w) in batch.iter().zip(weights) {
            for (c, n) in seq.transitions(v) {
                let row = &mut dlogits[c * v..(c + 1) * v];
                for (j, d) in row.iter_mut().enumerate() {
                    *d = *d - w * probs[c * v + j];
                }
                row[n] = row[n] + w;
            }
        }
        Ok(self.backprop(&dlogits))
    }

    /// Row-major `(V+1) x V` table of next-token probabilities.
    pub fn prob_table(&self) -> Vec<T> {
        self.log_prob_table().into_iter().map(|x| x.exp()).collect()
    }

    /// Chain rule from per-context logit gradients to parameter gradients.
    pub fn backprop(&self, dlogits: &[T]) -> Grad<T> {
        let v = self.vocab_size;
        let layout = self.params.layout().clone();
        match self.kind {
            ModelKind::TabularBigram => Grad::from_parts_unchecked(layout, dlogits.to_vec()),
            ModelKind::MlpLm { hidden_dim: h } => {
                let p = self.params.as_slice();
                let nc = self.n_contexts();
                let off_w1 = nc * h;
                let off_b1 = off_w1 + h * h;
                let off_w2 = off_b1 + h;
                let off_b2 = off_w2 + v * h;
                let w1 = &p[off_w1..off_b1];
                let w2 = &p[off_w2..off_b2];
                let mut g = vec![T::zero(); p.len()];
                for ctx in 0..nc {
                    let dl = &dlogits[ctx * v..(ctx + 1) * v];
                    if dl.iter().all(|d| d.is_zero()) {
                        continue;
                    }
                    let (emb, act) = self.hidden(ctx, h);
                    let mut dh = vec![T::zero(); h];
                    for (j, &d) in dl.iter().enumerate() {
                        g[off_b2 + j] = g[off_b2 + j] + d;
                        for k in 0..h {
                            g[off_w2 + j * h + k] = g[off_w2 + j * h + k] + d * act[k];
                            dh[k] = dh[k] + d * w2[j * h + k];
                        }
                    }
                    for k in 0..h {
                        let dz = dh[k] * (T::one() - act[k] * act[k]);
                        g[off_b1 + k] = g[off_b1 + k] + dz;
                        for m in 0..h {
                            g[off_w1 + k * h + m] = g[off_w1 + k * h + m] + dz * emb[m];
                            g[ctx * h + m] = g[ctx * h + m] + dz * w1[k * h + m];
                        }
                    }
                }
                Grad::from_parts_unchecked(layout, g)
            }
        }
    }
}

/// Exact gradient of the mean per-sequence NLL, `-(1/m) Σ log p(s)`.
pub fn grad_nll<T: Scalar>(model: &Model<T>, batch: &[TokenSequence]) -> Result<Grad<T>> {
    model.check_batch(batch)?;
    let w = -T::one() / T::from_usize_lossy(batch.len());
    model.weighted_log_prob_grad(batch, &vec![w; batch.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(t: &[u32]) -> TokenSequence {
        TokenSequence::new(t.to_vec()).unwrap()
    }

    #[test]
    fn uniform_tabular_log_prob() {
        let m = Model::<f64>::zeros(ModelKind::TabularBigram, 4).unwrap();
        let lp = m.log_prob(&seq(&[0, 1, 2])).unwrap();
        assert!((lp - 3.0 * (0.25f64).ln()).abs() < 1e-12);
        assert!((lp + 4.158883).abs() < 1e-6);
    }

    #[test]
    fn bos_row_softmax_by_hand() {
        let mut p = Model::<f64>::zeros(ModelKind::TabularBigram, 4).unwrap().into_params().into_vec();
        p[4 * 4] = 1.0; // BOS row is the last one
        let layout = Arc::new(ModelKind::TabularBigram.layout(4));
        let m = Model::new(ModelKind::TabularBigram, 4, Params::new(layout, p).unwrap()).unwrap();
        let e = std::f64::consts::E;
        let want = (e / (e + 3.0)).ln();
        assert!((m.log_prob(&seq(&[0])).unwrap() - want).abs() < 1e-12);
        assert!((want + 0.743668).abs() < 1e-6);
    }

    #[test]
    fn deterministic_row_gives_zero() {
        let mut p = vec![-1000.0f64; 6 * 5];
        // BOS -> 2, 2 -> 2
        p[5 * 5 + 2] = 0.0;
        p[2 * 5 + 2] = 0.0;
        let layout = Arc::new(ModelKind::TabularBigram.layout(5));
        let m = Model::new(ModelKind::TabularBigram, 5, Params::new(layout, p).unwrap()).unwrap();
        assert!(m.log_prob(&seq(&[2, 2, 2])).unwrap().abs() < 1e-12);
    }

    #[test]
    fn out_of_range_token_is_domain_error() {
        let m = Model::<f64>::zeros(ModelKind::TabularBigram, 4).unwrap();
        assert!(matches!(m.log_prob(&seq(&[4])), Err(Error::Domain(_))));
        assert!(TokenSequence::new(vec![]).is_err());
    }

    #[test]
    fn uniform_gradient_pattern() {
        // Mean NLL gradient on a uniform table: (softmax - onehot) / m on visited rows.
        let m = Model::<f64>::zeros(ModelKind::TabularBigram, 4).unwrap();
        let g = grad_nll(&m, &[seq(&[1, 3])]).unwrap();
        let g = g.as_slice();
        let row = |c: usize| &g[c * 4..(c + 1) * 4];
        assert_eq!(row(4), &[0.25, -0.75, 0.25, 0.25]);
        assert_eq!(row(1), &[0.25, 0.25, 0.25, -0.75]);
        assert!(row(0).iter().chain(row(2)).chain(row(3)).all(|&x| x == 0.0));
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Model::<f64>::random(ModelKind::MlpLm { hidden_dim: 3 }, 5, 0.5, &mut rng).unwrap();
        let b = vec![seq(&[0, 1, 4]), seq(&[3, 3])];
        let mut bb = b.clone();
        bb.extend(b.clone());
        let g1 = grad_nll(&m, &b).unwrap();
        let g2 = grad_nll(&m, &bb).unwrap();
        for (x, y) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn distributions_normalised() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in [ModelKind::TabularBigram, ModelKind::MlpLm { hidden_dim: 4 }] {
            let m = Model::<f64>::random(kind, 6, 3.0, &mut rng).unwrap();
            for ctx in 0..=6 {
                let s: f64 = m.next_token_dist(ctx).iter().sum();
                assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn mean_nll_is_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Model::<f64>::random(ModelKind::TabularBigram, 5, 2.0, &mut rng).unwrap();
        let b: Vec<_> = (0..7u32).map(|i| seq(&[i % 5, (i * 3) % 5, (i + 1) % 5])).collect();
        let mut r = b.clone();
        r.reverse();
        assert_eq!(m.mean_nll(&b).unwrap().to_bits(), m.mean_nll(&r).unwrap().to_bits());
    }
}
