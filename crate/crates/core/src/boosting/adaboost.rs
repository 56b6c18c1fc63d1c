//! AdaBoost over decision stumps.
//!
//! Each round picks the stump with the smallest weighted training error over
//! every feature and every midpoint between consecutive distinct values of
//! that feature. Ties go to the smallest `(feature_index, threshold)`.
//! Examples are put into a canonical order before training, so the result
//! does not depend on the order in which they were supplied.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::stump::{Label, LabeledExample, Stump, StumpEnsemble, TrainingMeta};
use super::BoostError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StumpMode {
    /// Per-branch outputs `½ ln((W₊ + ε) / (W₋ + ε))`.
    ConfidenceRated,
    /// Outputs `±α` with `α = ½ ln((1 − err + ε) / (err + ε))`.
    Discrete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaBoostConfig {
    pub rounds: usize,
    pub seed: u64,
    pub mode: StumpMode,
    /// Smoothing `ε`; `None` means `1 / (2n)`.
    pub smoothing: Option<f64>,
}

impl Default for AdaBoostConfig {
    fn default() -> Self {
        Self {
            rounds: 200,
            seed: 0,
            mode: StumpMode::ConfidenceRated,
            smoothing: None,
        }
    }
}

impl AdaBoostConfig {
    pub fn with_rounds(rounds: usize) -> Self {
        Self {
            rounds,
            ..Self::default()
        }
    }
}

/// A candidate split with its branch weight sums.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitCandidate {
    pub feature_index: usize,
    pub threshold: f64,
    pub error: f64,
    pub left_pos: f64,
    pub left_neg: f64,
    pub right_pos: f64,
    pub right_neg: f64,
}

#[inline]
fn split_error(mode: StumpMode, lp: f64, ln: f64, rp: f64, rn: f64) -> f64 {
    match mode {
        StumpMode::ConfidenceRated => lp.min(ln) + rp.min(rn),
        StumpMode::Discrete => (lp + rn).min(ln + rp),
    }
}

#[inline]
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let t = a + (b - a) / 2.0;
    if t <= a {
        b
    } else {
        t
    }
}

/// Column-major training data in canonical example order, with each
/// feature's examples pre-sorted by value.
pub struct Booster {
    n: usize,
    dim: usize,
    columns: Vec<Vec<f64>>,
    sorted: Vec<Vec<u32>>,
    labels: Vec<Label>,
    prior: Vec<f64>,
    weights: Vec<f64>,
    margins: Vec<f64>,
    mode: StumpMode,
    smoothing: f64,
}

fn canonical_cmp(a: &LabeledExample, b: &LabeledExample) -> Ordering {
    for (x, y) in a.features.iter().zip(&b.features) {
        match x.total_cmp(y) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    a.label
        .cmp(&b.label)
        .then_with(|| a.weight.total_cmp(&b.weight))
}

impl Booster {
    pub fn new(examples: &[LabeledExample], mode: StumpMode, smoothing: Option<f64>) -> Result<Self, BoostError> {
        let Some(first) = examples.first() else {
            return Err(BoostError::NoExamples);
        };
        let dim = first.features.len();
        for e in examples {
            if e.features.len() != dim {
                return Err(BoostError::Dimensionality {
                    expected: dim,
                    got: e.features.len(),
                });
            }
            if e.features.iter().any(|v| !v.is_finite()) {
                return Err(BoostError::NonFiniteFeature);
            }
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(BoostError::InvalidWeight(e.weight));
            }
        }
        let has_pos = examples.iter().any(|e| e.label == Label::Positive);
        let has_neg = examples.iter().any(|e| e.label == Label::Negative);
        if !(has_pos && has_neg) {
            return Err(BoostError::SingleClass);
        }

        let mut canon: Vec<&LabeledExample> = examples.iter().collect();
        canon.sort_by(|a, b| canonical_cmp(a, b));
        let n = canon.len();
        let columns: Vec<Vec<f64>> = (0..dim).map(|j| canon.iter().map(|e| e.features[j]).collect()).collect();
        let sorted = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        let labels: Vec<Label> = canon.iter().map(|e| e.label).collect();
        let total: f64 = canon.iter().map(|e| e.weight).sum();
        let prior: Vec<f64> = canon.iter().map(|e| e.weight / total).collect();
        Ok(Self {
            n,
            dim,
            columns,
            sorted,
            labels,
            weights: prior.clone(),
            prior,
            margins: vec![0.0; n],
            mode,
            smoothing: smoothing.unwrap_or(1.0 / (2.0 * n as f64)),
        })
    }

    pub fn dimensionality(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Weighted exponential loss of the current additive model.
    pub fn loss(&self) -> f64 {
        self.prior
            .iter()
            .zip(&self.margins)
            .map(|(w, m)| w * (-m).exp())
            .sum()
    }

    /// Fraction (prior-weighted) of examples with non-positive margin.
    pub fn training_error(&self) -> f64 {
        self.prior
            .iter()
            .zip(&self.margins)
            .filter(|(_, &m)| m <= 0.0)
            .map(|(w, _)| w)
            .sum()
    }

    /// Best split under the current weights.
    pub fn best_split(&self) -> Option<SplitCandidate> {
        let (mut tot_p, mut tot_n) = (0.0, 0.0);
        for (w, l) in self.weights.iter().zip(&self.labels) {
            match l {
                Label::Positive => tot_p += w,
                Label::Negative => tot_n += w,
            }
        }
        let mut best: Option<SplitCandidate> = None;
        for j in 0..self.dim {
            let col = &self.columns[j];
            let order = &self.sorted[j];
            let (mut lp, mut ln) = (0.0, 0.0);
            for k in 0..self.n - 1 {
                let i = order[k] as usize;
                match self.labels[i] {
                    Label::Positive => lp += self.weights[i],
                    Label::Negative => ln += self.weights[i],
                }
                let v = col[i];
                let next = col[order[k + 1] as usize];
                if v == next {
                    continue;
                }
                let rp = tot_p - lp;
                let rn = tot_n - ln;
                let err = split_error(self.mode, lp, ln, rp, rn);
                if best.is_none_or(|b| err < b.error) {
                    best = Some(SplitCandidate {
                        feature_index: j,
                        threshold: midpoint(v, next),
                        error: err,
                        left_pos: lp,
                        left_neg: ln,
                        right_pos: rp,
                        right_neg: rn,
                    });
                }
            }
        }
        best
    }

    pub fn stump_for(&self, c: &SplitCandidate) -> Stump {
        let eps = self.smoothing;
        let (left, right) = match self.mode {
            StumpMode::ConfidenceRated => (
                0.5 * ((c.left_pos + eps) / (c.left_neg + eps)).ln(),
                0.5 * ((c.right_pos + eps) / (c.right_neg + eps)).ln(),
            ),
            StumpMode::Discrete => {
                let alpha = 0.5 * ((1.0 - c.error + eps) / (c.error + eps)).ln();
                // Polarity +1 predicts positive on the right branch.
                if c.left_pos + c.right_neg <= c.left_neg + c.right_pos {
                    (-alpha, alpha)
                } else {
                    (alpha, -alpha)
                }
            }
        };
        Stump {
            feature_index: c.feature_index,
            threshold: c.threshold,
            left,
            right,
        }
    }

    /// Add `stump` to the model and reweight. Returns the normalizer `Z`.
    pub fn apply(&mut self, stump: &Stump) -> f64 {
        let col = &self.columns[stump.feature_index];
        for i in 0..self.n {
            let h = if col[i] < stump.threshold { stump.left } else { stump.right };
            let y = self.labels[i].sign();
            self.margins[i] += y * h;
            self.weights[i] *= (-y * h).exp();
        }
        let z: f64 = self.weights.iter().sum();
        self.weights.iter_mut().for_each(|w| *w /= z);
        z
    }
}

/// Smallest candidate error at which a round is still informative.
const UNINFORMATIVE: f64 = 0.5 - 1e-12;

pub fn train_adaboost(examples: &[LabeledExample], cfg: &AdaBoostConfig) -> Result<StumpEnsemble, BoostError> {
    if cfg.rounds == 0 {
        return Err(BoostError::ZeroRounds);
    }
    let mut booster = Booster::new(examples, cfg.mode, cfg.smoothing)?;
    let mut model = StumpEnsemble::empty(booster.dimensionality());
    let mut meta = TrainingMeta {
        rounds_requested: cfg.rounds,
        seed: cfg.seed,
        loss_trace: vec![booster.loss()],
        ..TrainingMeta::default()
    };
    for round in 0..cfg.rounds {
        let Some(best) = booster.best_split() else {
            meta.halted = Some(format!("round {}: no feature has two distinct values", round + 1));
            break;
        };
        if best.error >= UNINFORMATIVE {
            meta.halted = Some(format!(
                "round {}: best weighted error {:.6} is not below 0.5",
                round + 1,
                best.error
            ));
            break;
        }
        let stump = booster.stump_for(&best);
        let z = booster.apply(&stump);
        model.stumps.push(stump);
        meta.round_errors.push(best.error);
        meta.round_normalizers.push(z);
        meta.loss_trace.push(booster.loss());
    }
    if model.stumps.is_empty() {
        if let Some(reason) = meta.halted.take() {
            return Err(BoostError::NoInformativeStump(reason));
        }
    }
    model.training = meta;
    Ok(model)
}

/// Classic bound `∏ 2√(εₜ(1 − εₜ))` on the training error.
pub fn classic_error_bound(meta: &TrainingMeta) -> f64 {
    meta.round_errors
        .iter()
        .map(|&e| 2.0 * (e * (1.0 - e)).max(0.0).sqrt())
        .product()
}

/// Prior-weighted training error of `model` on `examples` (weights
/// normalized), counting a zero score as a mistake.
pub fn weighted_training_error(model: &StumpEnsemble, examples: &[LabeledExample]) -> f64 {
    let total: f64 = examples.iter().map(|e| e.weight).sum();
    examples
        .iter()
        .filter(|e| e.label.sign() * model.score_unchecked(&e.features) <= 0.0)
        .map(|e| e.weight)
        .sum::<f64>()
        / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ex(f: Vec<f64>, pos: bool) -> LabeledExample {
        LabeledExample::new(f, Label::from_bool(pos))
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<LabeledExample> {
        let mut v: Vec<LabeledExample> = (0..n)
            .map(|_| {
                let f: Vec<f64> = (0..d).map(|_| (rng.random_range(0..12) as f64) / 4.0).collect();
                let s = f[0] - f[1] + rng.random_range(-1.0..1.0);
                ex(f, s > 0.0)
            })
            .collect();
        // make sure both classes exist
        v[0].label = Label::Positive;
        v[1].label = Label::Negative;
        v
    }

    /// Exhaustive stump search straight from the definition.
    fn brute_force_error(examples: &[LabeledExample], mode: StumpMode) -> f64 {
        let total: f64 = examples.iter().map(|e| e.weight).sum();
        let d = examples[0].features.len();
        let mut best = f64::INFINITY;
        for j in 0..d {
            let mut vals: Vec<f64> = examples.iter().map(|e| e.features[j]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (mut lp, mut ln, mut rp, mut rn) = (0.0, 0.0, 0.0, 0.0);
                for e in examples {
                    let wt = e.weight / total;
                    match (e.features[j] < t, e.label) {
                        (true, Label::Positive) => lp += wt,
                        (true, Label::Negative) => ln += wt,
                        (false, Label::Positive) => rp += wt,
                        (false, Label::Negative) => rn += wt,
                    }
                }
                best = best.min(split_error(mode, lp, ln, rp, rn));
            }
        }
        best
    }

    #[test]
    fn separable_single_feature() {
        let data = vec![ex(vec![0.0], false), ex(vec![1.0], true)];
        let m = train_adaboost(&data, &AdaBoostConfig::with_rounds(1)).unwrap();
        assert_eq!(m.stumps.len(), 1);
        assert_eq!(weighted_training_error(&m, &data), 0.0);
        assert_eq!(m.stumps[0].threshold, 0.5);
    }

    #[test]
    fn picks_the_informative_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let data: Vec<_> = (0..40)
            .map(|i| {
                let y = i % 2 == 0;
                ex(vec![rng.random::<f64>(), if y { 1.0 } else { 0.0 }], y)
            })
            .collect();
        let m = train_adaboost(&data, &AdaBoostConfig::with_rounds(1)).unwrap();
        assert_eq!(m.stumps[0].feature_index, 1);
        assert_eq!(m.training.round_errors[0], 0.0);
    }

    #[test]
    fn round_one_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for mode in [StumpMode::ConfidenceRated, StumpMode::Discrete] {
            for _ in 0..10 {
                let data = random_dataset(&mut rng, 40, 5);
                let b = Booster::new(&data, mode, None).unwrap();
                let got = b.best_split().unwrap().error;
                let want = brute_force_error(&data, mode);
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let data = vec![ex(vec![0.0], true), ex(vec![1.0], true)];
        assert!(matches!(train_adaboost(&data, &AdaBoostConfig::default()), Err(BoostError::SingleClass)));
        let data = vec![ex(vec![0.0], true), ex(vec![1.0], false)];
        assert!(matches!(train_adaboost(&data, &AdaBoostConfig::with_rounds(0)), Err(BoostError::ZeroRounds)));
        let data = vec![ex(vec![1.0], true), ex(vec![1.0], false)];
        assert!(matches!(
            train_adaboost(&data, &AdaBoostConfig::default()),
            Err(BoostError::NoInformativeStump(_))
        ));
    }

    #[test]
    fn halts_when_nothing_left_to_learn() {
        // Unsmoothed discrete boosting balances the only split after one round.
        let data = vec![ex(vec![0.0], true), ex(vec![0.0], false), ex(vec![1.0], true)];
        let cfg = AdaBoostConfig {
            rounds: 50,
            mode: StumpMode::Discrete,
            smoothing: Some(0.0),
            ..AdaBoostConfig::default()
        };
        let m = train_adaboost(&data, &cfg).unwrap();
        assert_eq!(m.stumps.len(), 1);
        assert!(m.training.halted.as_deref().unwrap().contains("round 2"));
    }

    #[test]
    fn weights_stay_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let data = random_dataset(&mut rng, 60, 4);
        let mut b = Booster::new(&data, StumpMode::ConfidenceRated, None).unwrap();
        for _ in 0..25 {
            let c = b.best_split().unwrap();
            let s = b.stump_for(&c);
            b.apply(&s);
            let sum: f64 = b.weights().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn sign_replay_matches_margins() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let data = random_dataset(&mut rng, 50, 3);
        let m = train_adaboost(&data, &AdaBoostConfig::with_rounds(20)).unwrap();
        // Replay the stumps one by one and compare with the full score.
        for e in &data {
            let mut f = 0.0;
            for s in &m.stumps {
                f += s.eval(&e.features);
            }
            assert_eq!(f.signum(), m.score(&e.features).unwrap().signum());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn loss_non_increasing_and_bounded(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = random_dataset(&mut rng, 50, 4);
            let m = train_adaboost(&data, &AdaBoostConfig::with_rounds(30)).unwrap();
            for w in m.training.loss_trace.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
            let err = weighted_training_error(&m, &data);
            let z: f64 = m.training.round_normalizers.iter().product();
            prop_assert!(err <= z + 1e-12);
            prop_assert!(err <= classic_error_bound(&m.training) + 1e-12);
        }

        #[test]
        fn example_order_is_irrelevant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = random_dataset(&mut rng, 40, 3);
            let mut shuffled = data.clone();
            shuffled.shuffle(&mut rng);
            let a = train_adaboost(&data, &AdaBoostConfig::with_rounds(15)).unwrap();
            let b = train_adaboost(&shuffled, &AdaBoostConfig::with_rounds(15)).unwrap();
            prop_assert_eq!(a.stumps, b.stumps);
        }
    }
}
