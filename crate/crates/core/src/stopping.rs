//! Early stopping: pseudo-validation masks, output-variance trackers and the
//! patience automaton behind the hybrid stop rule.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

/// A train/validation split of the pixel grid. The two masks are complements.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub train: Array2<bool>,
    pub val: Array2<bool>,
    pub fraction: f64,
    pub seed: u64,
    pub fold_index: Option<usize>,
}

impl MaskSet {
    fn from_val(val: Array2<bool>, fraction: f64, seed: u64, fold_index: Option<usize>) -> Self {
        MaskSet {
            train: val.mapv(|v| !v),
            val,
            fraction,
            seed,
            fold_index,
        }
    }

    pub fn val_count(&self) -> usize {
        self.val.iter().filter(|&&v| v).count()
    }

    pub fn train_count(&self) -> usize {
        self.train.iter().filter(|&&v| v).count()
    }
}

/// Holds out exactly `round(fraction · rows · cols)` pixels chosen uniformly.
pub fn make_random_mask(rows: usize, cols: usize, fraction: f64, seed: u64) -> Result<MaskSet> {
    if !(fraction > 0.0 && fraction < 0.5) {
        return Err(Error::BadFraction(fraction));
    }
    let total = rows * cols;
    let n_val = (fraction * total as f64).round() as usize;
    if n_val == 0 {
        return Err(Error::EmptyMask);
    }
    let mut rng = stream(seed, Domain::Mask, 0);
    let picked = rand::seq::index::sample(&mut rng, total, n_val);
    let mut val = Array2::from_elem((rows, cols), false);
    for i in picked {
        val[[i / cols, i % cols]] = true;
    }
    Ok(MaskSet::from_val(val, fraction, seed, None))
}

/// Splits the pixels into `k` folds of sizes differing by at most one; fold
/// `f`'s mask validates on fold `f` and trains on the rest.
pub fn make_kfold_masks(rows: usize, cols: usize, k: usize, seed: u64) -> Result<Vec<MaskSet>> {
    let total = rows * cols;
    if k < 2 || k > total {
        return Err(Error::BadK { k, total });
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut stream(seed, Domain::Mask, 1));
    let mut folds = vec![Array2::from_elem((rows, cols), false); k];
    for (pos, &i) in order.iter().enumerate() {
        folds[pos % k][[i / cols, i % cols]] = true;
    }
    Ok(folds
        .into_iter()
        .enumerate()
        .map(|(f, val)| MaskSet::from_val(val, 1.0 / k as f64, seed, Some(f)))
        .collect())
}

/// Mean squared error over the held-out pixels.
pub fn pseudo_val_loss(out: ArrayView2<f64>, target: ArrayView2<f64>, mask: &MaskSet) -> Result<f64> {
    if out.dim() != target.dim() || out.dim() != mask.val.dim() {
        return Err(Error::shape("output, target and mask must share a shape"));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for ((o, t), &m) in out.iter().zip(target.iter()).zip(mask.val.iter()) {
        if m {
            sum += (o - t).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMode {
    /// Variance over a ring of the last `window` outputs.
    Wmv,
    /// Squared deviation from an exponential running average.
    Emv,
}

/// Tracks how much successive network outputs still move.
#[derive(Debug, Clone)]
pub struct VarianceTracker {
    mode: VarianceMode,
    window: usize,
    average: Option<Vec<f64>>,
    ring: VecDeque<Vec<f64>>,
    last: f64,
}

impl VarianceTracker {
    pub fn new(mode: VarianceMode, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::BadParams("variance window must be at least 1".into()));
        }
        Ok(VarianceTracker {
            mode,
            window,
            average: None,
            ring: VecDeque::with_capacity(window),
            last: 0.0,
        })
    }

    pub fn last(&self) -> f64 {
        self.last
    }

    /// Feeds one output and returns the current variance estimate.
    ///
    /// EMV compares the output with the running average *before* folding it
    /// in, so `window = 1` yields the one-step deviation and the first
    /// observation yields 0.
    pub fn update(&mut self, output: &[f64]) -> f64 {
        let v = match self.mode {
            VarianceMode::Emv => match &mut self.average {
                None => {
                    self.average = Some(output.to_vec());
                    0.0
                }
                Some(avg) => {
                    let n = output.len() as f64;
                    let var = output.iter().zip(avg.iter()).map(|(o, a)| (o - a).powi(2)).sum::<f64>() / n;
                    let inv = 1.0 / self.window as f64;
                    for (a, &o) in avg.iter_mut().zip(output) {
                        *a = (1.0 - inv) * *a + inv * o;
                    }
                    var
                }
            },
            VarianceMode::Wmv => {
                if self.ring.len() == self.window {
                    self.ring.pop_front();
                }
                self.ring.push_back(output.to_vec());
                ring_variance(&self.ring)
            }
        };
        self.last = v;
        v
    }
}

/// Per-pixel sample variance across the stored outputs, averaged over pixels.
fn ring_variance(ring: &VecDeque<Vec<f64>>) -> f64 {
    let m = ring.len();
    if m < 2 {
        return 0.0;
    }
    let n = ring[0].len();
    let mut total = 0.0;
    for i in 0..n {
        let mean = ring.iter().map(|o| o[i]).sum::<f64>() / m as f64;
        total += ring.iter().map(|o| (o[i] - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    }
    total / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HybridRule {
    /// Stop once both criteria are stale.
    Both,
    /// Stop once either criterion is stale.
    Either,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsConfig {
    pub enabled: bool,
    pub mode: VarianceMode,
    /// Variance window in iterations.
    pub window: usize,
    /// Stale evaluations tolerated by each criterion.
    pub patience: usize,
    /// PVL counts as improved when it drops below `best · (1 − this)`.
    pub min_rel_improvement: f64,
    pub rule: HybridRule,
}

impl Default for EsConfig {
    fn default() -> Self {
        EsConfig {
            enabled: true,
            mode: VarianceMode::Emv,
            window: 100,
            patience: 50,
            min_rel_improvement: 1e-4,
            rule: HybridRule::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopTrigger {
    Hybrid,
    MaxIters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop(StopTrigger),
}

/// Outcome of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub decision: Decision,
    /// The PVL improved: the caller should snapshot the current output.
    pub snapshot: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopReport {
    /// Iteration of the best pseudo-validation loss.
    pub best_iter: usize,
    pub stop_iter: usize,
    pub trigger: StopTrigger,
    /// Iteration where the variance peaked.
    pub emv_peak_iter: Option<usize>,
    /// `|best_iter − emv_peak_iter| / max(best_iter, 1)`.
    pub relative_gap: Option<f64>,
    pub best_pvl: f64,
    pub max_var: f64,
    pub evaluations: usize,
}

/// The patience automaton. A pure function of the `(variance, pvl)` sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct StopState {
    pub cfg: EsConfig,
    pub max_var: f64,
    pub var_counter: usize,
    pub emv_peak_iter: Option<usize>,
    pub best_pvl: f64,
    pub best_iter: usize,
    pub pvl_counter: usize,
    pub evaluations: usize,
    pub last_iter: usize,
}

impl StopState {
    pub fn new(cfg: EsConfig) -> Self {
        StopState {
            cfg,
            max_var: f64::NEG_INFINITY,
            var_counter: 0,
            emv_peak_iter: None,
            best_pvl: f64::INFINITY,
            best_iter: 0,
            pvl_counter: 0,
            evaluations: 0,
            last_iter: 0,
        }
    }

    /// Registers one evaluation. Stops on the hybrid rule (when enabled) or
    /// once `iteration` reaches `max_iters`.
    pub fn patience_step(&mut self, variance: f64, pvl: f64, iteration: usize, max_iters: usize) -> StepOutcome {
        let p = self.cfg.patience;
        self.evaluations += 1;
        self.last_iter = iteration;

        if variance > self.max_var {
            self.max_var = variance;
            self.var_counter = 0;
            self.emv_peak_iter = Some(iteration);
        } else {
            self.var_counter = (self.var_counter + 1).min(p);
        }

        let snapshot = pvl < self.best_pvl * (1.0 - self.cfg.min_rel_improvement) || self.best_pvl.is_infinite();
        if snapshot {
            self.best_pvl = pvl;
            self.best_iter = iteration;
            self.pvl_counter = 0;
        } else {
            self.pvl_counter = (self.pvl_counter + 1).min(p);
        }

        let decision = if self.cfg.enabled && self.hybrid_fires() {
            Decision::Stop(StopTrigger::Hybrid)
        } else if iteration >= max_iters {
            Decision::Stop(StopTrigger::MaxIters)
        } else {
            Decision::Continue
        };
        StepOutcome { decision, snapshot }
    }

    pub fn pvl_stale(&self) -> bool {
        self.evaluations > 0 && self.pvl_counter >= self.cfg.patience
    }

    pub fn variance_stale(&self) -> bool {
        self.emv_peak_iter.is_some() && self.var_counter >= self.cfg.patience
    }

    pub fn hybrid_fires(&self) -> bool {
        match self.cfg.rule {
            HybridRule::Both => self.pvl_stale() && self.variance_stale(),
            HybridRule::Either => self.pvl_stale() || self.variance_stale(),
        }
    }

    pub fn report(&self, trigger: StopTrigger) -> StopReport {
        hybrid_decision(self, trigger)
    }
}

/// Summarizes the automaton after it stopped.
pub fn hybrid_decision(state: &StopState, trigger: StopTrigger) -> StopReport {
    let relative_gap = state
        .emv_peak_iter
        .map(|e| (state.best_iter as f64 - e as f64).abs() / (state.best_iter.max(1) as f64));
    StopReport {
        best_iter: state.best_iter,
        stop_iter: state.last_iter,
        trigger,
        emv_peak_iter: state.emv_peak_iter,
        relative_gap,
        best_pvl: state.best_pvl,
        max_var: state.max_var,
        evaluations: state.evaluations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn random_mask_counts() {
        let m = make_random_mask(100, 100, 0.05, 3).unwrap();
        assert_eq!(m.val_count(), 500);
        assert_eq!(m.train_count(), 9500);
        assert_eq!(make_random_mask(100, 100, 0.05, 3).unwrap(), m);
        assert_ne!(make_random_mask(100, 100, 0.05, 4).unwrap().val, m.val);
        assert!(matches!(make_random_mask(10, 10, 0.5, 0), Err(Error::BadFraction(_))));
        assert!(matches!(make_random_mask(10, 10, 0.0, 0), Err(Error::BadFraction(_))));
    }

    #[test]
    fn kfold_partition() {
        let folds = make_kfold_masks(4, 4, 4, 1).unwrap();
        let mut cover = Array2::<usize>::zeros((4, 4));
        for f in &folds {
            assert_eq!(f.val_count(), 4);
            for ((i, &v), &t) in f.val.indexed_iter().zip(f.train.iter()) {
                assert_ne!(v, t);
                cover[i] += v as usize;
            }
        }
        assert!(cover.iter().all(|&c| c == 1));
        assert_eq!(make_kfold_masks(4, 4, 4, 1).unwrap(), folds);
        assert!(matches!(make_kfold_masks(2, 2, 5, 0), Err(Error::BadK { .. })));
        assert!(matches!(make_kfold_masks(2, 2, 1, 0), Err(Error::BadK { .. })));

        let sizes: Vec<usize> = make_kfold_masks(7, 5, 8, 2).unwrap().iter().map(MaskSet::val_count).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn pvl_cases() {
        let val = array![[false, true], [false, false]];
        let mask = MaskSet::from_val(val, 0.25, 0, None);
        let t = array![[0.1, 0.2], [0.3, 0.4]];
        assert_eq!(pseudo_val_loss(t.view(), t.view(), &mask).unwrap(), 0.0);
        let mut o = t.clone();
        o[[0, 0]] = 5.0;
        assert_eq!(pseudo_val_loss(o.view(), t.view(), &mask).unwrap(), 0.0);
        o[[0, 1]] = 0.4;
        assert!((pseudo_val_loss(o.view(), t.view(), &mask).unwrap() - 0.04).abs() < 1e-15);
        let empty = MaskSet::from_val(Array2::from_elem((2, 2), false), 0.1, 0, None);
        assert!(matches!(pseudo_val_loss(t.view(), t.view(), &empty), Err(Error::EmptyMask)));
    }

    #[test]
    fn variance_trackers() {
        let mut emv = VarianceTracker::new(VarianceMode::Emv, 10).unwrap();
        for _ in 0..50 {
            emv.update(&[0.3, 0.7]);
        }
        assert!(emv.last() < 1e-30);

        let (a, b) = ([0.0, 1.0, 2.0], [1.0, 1.0, 0.0]);
        let mut wmv = VarianceTracker::new(VarianceMode::Wmv, 2).unwrap();
        assert_eq!(wmv.update(&a), 0.0);
        let expect = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2) / 2.0).sum::<f64>() / 3.0;
        for i in 0..6 {
            let v = wmv.update(if i % 2 == 0 { &b } else { &a });
            assert!((v - expect).abs() < 1e-15);
        }

        let mut one = VarianceTracker::new(VarianceMode::Emv, 1).unwrap();
        assert_eq!(one.update(&a), 0.0);
        let step = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 3.0;
        assert_eq!(one.update(&b), step);
        assert_eq!(one.update(&b), 0.0);
    }

    fn cfg(patience: usize) -> EsConfig {
        EsConfig {
            patience,
            ..EsConfig::default()
        }
    }

    #[test]
    fn first_variance_always_improves() {
        let mut s = StopState::new(cfg(3));
        s.patience_step(-5.0, 1.0, 10, 100);
        assert_eq!(s.emv_peak_iter, Some(10));
        assert_eq!(s.var_counter, 0);
    }

    #[test]
    fn improving_pvl_never_stops_early() {
        let mut s = StopState::new(cfg(2));
        let mut pvl = 1.0;
        for it in 1..=100 {
            pvl *= 0.9;
            let out = s.patience_step(1.0, pvl, it, 100);
            if it < 100 {
                assert_eq!(out.decision, Decision::Continue);
            } else {
                assert_eq!(out.decision, Decision::Stop(StopTrigger::MaxIters));
            }
        }
    }

    #[test]
    fn stops_patience_checks_after_later_peak() {
        let patience = 4;
        let mut s = StopState::new(cfg(patience));
        // Variance peaks at check 3, PVL bottoms out at check 6.
        let var = [1.0, 2.0, 3.0, 2.5, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let pvl = [9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 4.5, 4.5, 4.5, 4.5, 4.5, 4.5];
        let mut stopped = None;
        for (i, (&v, &p)) in var.iter().zip(&pvl).enumerate() {
            let check = i + 1;
            let out = s.patience_step(v, p, check * 10, 1000);
            assert!(s.var_counter <= patience && s.pvl_counter <= patience);
            if let Decision::Stop(t) = out.decision {
                assert_eq!(t, StopTrigger::Hybrid);
                stopped = Some(check);
                break;
            }
        }
        assert_eq!(stopped, Some(6 + patience));
        let r = s.report(StopTrigger::Hybrid);
        assert_eq!((r.best_iter, r.emv_peak_iter, r.stop_iter), (60, Some(30), 100));
        assert_eq!(r.relative_gap, Some(0.5));
    }

    #[test]
    fn conjunction_waits_for_both() {
        let mut s = StopState::new(cfg(2));
        s.patience_step(1.0, 1.0, 1, 100);
        for it in 2..20 {
            // PVL stale, variance keeps climbing.
            let out = s.patience_step(it as f64, 1.0, it, 100);
            assert_eq!(out.decision, Decision::Continue);
        }
        let mut either = StopState::new(EsConfig {
            rule: HybridRule::Either,
            ..cfg(2)
        });
        either.patience_step(1.0, 1.0, 1, 100);
        either.patience_step(2.0, 1.0, 2, 100);
        let out = either.patience_step(3.0, 1.0, 3, 100);
        assert_eq!(out.decision, Decision::Stop(StopTrigger::Hybrid));
    }

    #[test]
    fn disabled_runs_to_cap() {
        let mut s = StopState::new(EsConfig {
            enabled: false,
            ..cfg(1)
        });
        for it in 1..10 {
            assert_eq!(s.patience_step(0.0, 1.0, it, 10).decision, Decision::Continue);
        }
        assert!(s.hybrid_fires());
        assert_eq!(
            s.patience_step(0.0, 1.0, 10, 10).decision,
            Decision::Stop(StopTrigger::MaxIters)
        );
    }
}
