//! Training loop: Adam on B-scan mini-batches, plateau learning-rate
//! schedule driven by validation Dice, best-epoch model selection.

use crate::bayes::mc_predict_stack;
use crate::data::Volume;
use crate::engine::{adam_step, softmax_cross_entropy, AdamConfig, Mode, Tensor};
use crate::error::{Error, Result};
use crate::metrics::{dice_counts, dice_from_counts};
use crate::model::{bunet_loss, build_network, ArchitectureSpec, Network, Variant};
use crate::postprocess::{otsu_threshold, SegmentationMask};
use crate::rng::RngState;
use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Channels of the first encoder block (64 at full width).
    pub base_width: usize,
    pub lr0: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub plateau_window: usize,
    pub plateau_min_improvement: f64,
    pub lr_factor: f64,
    pub seed: u64,
    /// Noise draws per pixel in the aleatoric loss (BU-Net only).
    pub noise_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::U2Net,
            base_width: 64,
            lr0: 1e-4,
            batch_size: 2,
            weight_decay: 5e-4,
            max_epochs: 160,
            plateau_window: 15,
            plateau_min_improvement: 1e-4,
            lr_factor: 0.5,
            seed: 0,
            noise_samples: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base_width", self.base_width as f64),
            ("lr0", self.lr0),
            ("batch_size", self.batch_size as f64),
            ("max_epochs", self.max_epochs as f64),
            ("plateau_window", self.plateau_window as f64),
            ("plateau_min_improvement", self.plateau_min_improvement),
            ("noise_samples", self.noise_samples as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::invalid(format!(
                "lr_factor must be in (0, 1), got {}",
                self.lr_factor
            )));
        }
        Ok(())
    }

    pub fn architecture(&self) -> ArchitectureSpec {
        ArchitectureSpec::with_base_width(self.variant, self.base_width)
    }

    /// Every field as `key=value`, in declaration order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "arch={}", self.variant);
        let _ = writeln!(s, "base_width={}", self.base_width);
        let _ = writeln!(s, "lr0={}", self.lr0);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "weight_decay={}", self.weight_decay);
        let _ = writeln!(s, "max_epochs={}", self.max_epochs);
        let _ = writeln!(s, "plateau_window={}", self.plateau_window);
        let _ = writeln!(s, "plateau_min_improvement={}", self.plateau_min_improvement);
        let _ = writeln!(s, "lr_factor={}", self.lr_factor);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "noise_samples={}", self.noise_samples);
        s
    }
}

/// Per-epoch record. Entry `e` of `lr` is the rate used during epoch `e`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub loss: Vec<f64>,
    pub val_dice: Vec<f64>,
    pub lr: Vec<f64>,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.val_dice.len()
    }

    /// Epoch of the highest validation Dice, first one on ties.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &d) in self.val_dice.iter().enumerate() {
            if best.is_none_or(|b| d > self.val_dice[b]) {
                best = Some(i);
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,val_dice,lr\n");
        for e in 0..self.epochs() {
            let _ = writeln!(s, "{},{},{},{}", e + 1, self.loss[e], self.val_dice[e], self.lr[e]);
        }
        s
    }
}

/// Learning rate for the next epoch.
///
/// Once at least `plateau_window` epochs have run at the current rate, the
/// best validation Dice inside the window is compared with the best before
/// it; an improvement below `plateau_min_improvement` multiplies the rate by
/// `lr_factor`. Epochs at the new rate start a fresh window.
pub fn plateau_scheduler(history: &TrainHistory, config: &TrainConfig) -> f64 {
    let Some(&current) = history.lr.last() else {
        return config.lr0;
    };
    let since_change = history.lr.iter().rev().take_while(|&&lr| lr == current).count();
    let n = history.val_dice.len();
    let window = config.plateau_window;
    if since_change < window || n <= window {
        return current;
    }
    let max = |s: &[f64]| s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let improvement = max(&history.val_dice[n - window..]) - max(&history.val_dice[..n - window]);
    if improvement < config.plateau_min_improvement {
        current * config.lr_factor
    } else {
        current
    }
}

/// Foreground probability maps `[B, H, W]` of a deterministic eval-mode
/// pass over every B-scan of a volume.
pub fn eval_probability(net: &Network, image: &Tensor) -> Result<Tensor> {
    if net.mode() != Mode::Eval {
        return Err(Error::invalid("eval_probability needs the network in eval mode"));
    }
    Ok(mc_predict_stack(net, image, 1, &RngState::new(0), 1)?.0)
}

/// Dice of per-B-scan Otsu masks pooled over one volume.
pub fn volume_dice(prob: &Tensor, truth: &Tensor) -> Result<f64> {
    if prob.shape() != truth.shape() || prob.shape().len() != 3 {
        return Err(Error::shape(format!(
            "probabilities {:?} vs truth {:?}",
            prob.shape(),
            truth.shape()
        )));
    }
    let (mut inter, mut total) = (0, 0);
    for b in 0..prob.shape()[0] {
        let pred = otsu_threshold(&prob.index_axis0(b)?)?;
        let gt = SegmentationMask::from_binary(&truth.index_axis0(b)?)?;
        let (i, t) = dice_counts(&pred, &gt)?;
        inter += i;
        total += t;
    }
    Ok(dice_from_counts(inter, total))
}

/// Mean volume-level Dice over `volumes` with eval-mode predictions. The
/// network's mode is restored afterwards.
pub fn validation_dice(net: &mut Network, volumes: &[Volume]) -> Result<f64> {
    if volumes.is_empty() {
        return Err(Error::invalid("validation split is empty"));
    }
    let mode = net.mode();
    net.set_mode(Mode::Eval);
    let result = volumes
        .iter()
        .map(|v| volume_dice(&eval_probability(net, &v.image)?, &v.mask))
        .collect::<Result<Vec<f64>>>();
    net.set_mode(mode);
    let dice = result?;
    Ok(dice.iter().sum::<f64>() / dice.len() as f64)
}

/// Progress record passed to the epoch callback.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_dice: f64,
    pub lr: f64,
    pub best: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Network of the best validation epoch, in eval mode.
    pub best: Network,
    /// Network after the last epoch, in eval mode.
    pub last: Network,
    pub history: TrainHistory,
}

/// Trains a fresh network. All randomness (initialisation, epoch order,
/// dropout, aleatoric noise) derives from `config.seed`.
pub fn train(config: &TrainConfig, train_set: &[Volume], val_set: &[Volume]) -> Result<TrainOutcome> {
    train_with(config, train_set, val_set, |_| {})
}

pub fn train_with(
    config: &TrainConfig,
    train_set: &[Volume],
    val_set: &[Volume],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if val_set.is_empty() {
        return Err(Error::invalid("validation split is empty"));
    }
    let shape = train_set[0].image.shape()[1..].to_vec();
    for v in train_set.iter().chain(val_set) {
        if v.image.shape()[1..] != shape[..] {
            return Err(Error::shape(format!(
                "volume {} has B-scans {:?}, expected {:?}",
                v.id,
                &v.image.shape()[1..],
                shape
            )));
        }
    }
    let (h, w) = (shape[0], shape[1]);
    let plane = h * w;

    let root = RngState::new(config.seed);
    let mut net = build_network(config.architecture(), &mut root.derive(0))?;
    let order_rng = root.derive(1);
    let mut noise_rng = root.derive(2);

    let items: Vec<(usize, usize)> = train_set
        .iter()
        .enumerate()
        .flat_map(|(v, vol)| (0..vol.bscans()).map(move |b| (v, b)))
        .collect();

    let mut history = TrainHistory::default();
    let mut best: Option<Network> = None;
    let mut lr = config.lr0;
    let mut step = 0u64;
    for epoch in 0..config.max_epochs {
        net.set_mode(Mode::Train);
        let mut order = items.clone();
        order_rng.stream(epoch as u64).shuffle(&mut order);
        let adam = AdamConfig {
            lr: lr as f32,
            weight_decay: config.weight_decay as f32,
            ..AdamConfig::default()
        };
        let mut loss_sum = 0.0;
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let n = batch.len();
            let mut x = Vec::with_capacity(n * plane);
            let mut t = Vec::with_capacity(n * plane);
            for &(v, b) in batch {
                let range = b * plane..(b + 1) * plane;
                x.extend_from_slice(&train_set[v].image.data()[range.clone()]);
                t.extend_from_slice(&train_set[v].mask.data()[range]);
            }
            let x = Tensor::new(&[n, 1, h, w], x)?;
            let t = Tensor::new(&[n, h, w], t)?;
            let (out, tape) = net.forward_with_tape(&x, &mut noise_rng)?;
            let (loss, grad) = if config.variant == Variant::BUNet {
                bunet_loss(&out, &t, config.noise_samples, &mut noise_rng)?
            } else {
                softmax_cross_entropy(&out, &t)?
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss diverged at epoch {} batch {} (lr {lr})",
                    epoch + 1,
                    bi + 1
                )));
            }
            loss_sum += loss * n as f64;
            net.backward(tape, &grad)?;
            step += 1;
            adam_step(net.parameters_mut(), &adam, step);
        }
        let val = validation_dice(&mut net, val_set)?;
        history.loss.push(loss_sum / items.len() as f64);
        history.val_dice.push(val);
        history.lr.push(lr);
        let is_best = history.best_epoch() == Some(epoch);
        if is_best {
            let mut snapshot = net.clone();
            snapshot.set_mode(Mode::Eval);
            best = Some(snapshot);
        }
        on_epoch(&EpochLog {
            epoch: epoch + 1,
            loss: history.loss[epoch],
            val_dice: val,
            lr,
            best: is_best,
        });
        lr = plateau_scheduler(&history, config);
    }
    net.set_mode(Mode::Eval);
    Ok(TrainOutcome {
        best: best.expect("at least one epoch"),
        last: net,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_volume, Disease, GeneratorParams, Geometry};
    use proptest::prelude::*;

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    fn hist(dice: &[f64], lr: f64) -> TrainHistory {
        TrainHistory {
            loss: vec![0.0; dice.len()],
            val_dice: dice.to_vec(),
            lr: vec![lr; dice.len()],
        }
    }

    #[test]
    fn defaults() {
        let c = cfg();
        assert_eq!(c.lr0, 1e-4);
        assert_eq!(c.batch_size, 2);
        assert_eq!(c.weight_decay, 5e-4);
        assert_eq!(c.max_epochs, 160);
        assert_eq!(c.plateau_window, 15);
        assert_eq!(c.plateau_min_improvement, 1e-4);
        assert_eq!(c.lr_factor, 0.5);
    }

    #[test]
    fn flat_dice_halves() {
        assert_eq!(plateau_scheduler(&hist(&[0.7; 16], 1e-4), &cfg()), 0.5e-4);
        // Fifteen epochs leave nothing before the window to compare with.
        assert_eq!(plateau_scheduler(&hist(&[0.7; 15], 1e-4), &cfg()), 1e-4);
    }

    #[test]
    fn slow_improvement_keeps_rate() {
        let dice: Vec<f64> = (0..16).map(|i| 0.7 + 5e-5 * i as f64).collect();
        assert_eq!(plateau_scheduler(&hist(&dice, 1e-4), &cfg()), 1e-4);
    }

    #[test]
    fn two_plateaus_quarter_the_rate() {
        let c = cfg();
        let mut h = TrainHistory::default();
        let mut lr = c.lr0;
        for _ in 0..31 {
            h.loss.push(0.0);
            h.val_dice.push(0.7);
            h.lr.push(lr);
            lr = plateau_scheduler(&h, &c);
        }
        assert_eq!(lr, c.lr0 * 0.25);
        assert_eq!(h.lr.iter().filter(|&&l| l == c.lr0).count(), 16);
        assert_eq!(h.lr.iter().filter(|&&l| l == c.lr0 * 0.5).count(), 15);
    }

    #[test]
    fn best_epoch_first_on_ties() {
        let h = hist(&[0.5, 0.8, 0.8, 0.6], 1.0);
        assert_eq!(h.best_epoch(), Some(1));
        assert_eq!(TrainHistory::default().best_epoch(), None);
        assert!(h.to_csv().starts_with("epoch,loss,val_dice,lr\n1,0,0.5,1\n"));
    }

    proptest! {
        #[test]
        fn rates_are_halvings_and_non_increasing(dice in proptest::collection::vec(0.0f64..1.0, 1..80)) {
            let c = cfg();
            let mut h = TrainHistory::default();
            let mut lr = c.lr0;
            for d in dice {
                h.loss.push(0.0);
                h.val_dice.push(d);
                h.lr.push(lr);
                lr = plateau_scheduler(&h, &c);
            }
            h.lr.push(lr);
            for pair in h.lr.windows(2) {
                prop_assert!(pair[1] <= pair[0]);
            }
            for &l in &h.lr {
                let k = (c.lr0 / l).log2().round() as i32;
                prop_assert_eq!(l, c.lr0 * 0.5f64.powi(k));
            }
        }

        #[test]
        fn steady_gains_never_reduce(step in 1e-3f64..1e-2, epochs in 16usize..60) {
            let dice: Vec<f64> = (0..epochs).map(|i| 0.1 + step * i as f64).collect();
            let c = cfg();
            let mut h = TrainHistory::default();
            for d in dice {
                h.loss.push(0.0);
                h.val_dice.push(d);
                h.lr.push(c.lr0);
                prop_assert_eq!(plateau_scheduler(&h, &c), c.lr0);
            }
        }
    }

    fn tiny_volumes(n: usize, seed: u64) -> Vec<Volume> {
        let g = Geometry {
            bscans: 2,
            rows: 16,
            cols: 16,
        };
        let p = GeneratorParams::new(g, Disease::Rvo);
        (0..n)
            .map(|i| generate_volume(&format!("v{i}"), &p, &mut RngState::new(seed + i as u64)).unwrap())
            .collect()
    }

    #[test]
    fn training_is_bit_reproducible() {
        let data = tiny_volumes(3, 1);
        let c = TrainConfig {
            base_width: 2,
            max_epochs: 2,
            seed: 11,
            ..cfg()
        };
        let a = train(&c, &data[..2], &data[2..]).unwrap();
        let b = train(&c, &data[..2], &data[2..]).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best, b.best);
        assert!(a.history.loss.iter().all(|l| l.is_finite()));
        let bunet = TrainConfig {
            variant: Variant::BUNet,
            noise_samples: 2,
            ..c
        };
        let x = train(&bunet, &data[..2], &data[2..]).unwrap();
        let y = train(&bunet, &data[..2], &data[2..]).unwrap();
        assert_eq!(x.history, y.history);
    }

    #[test]
    fn empty_splits_are_errors() {
        let data = tiny_volumes(1, 1);
        assert!(train(&cfg(), &[], &data).is_err());
        assert!(train(&cfg(), &data, &[]).is_err());
    }

    #[test]
    fn oracle_predictions_score_one() {
        let data = tiny_volumes(2, 5);
        for v in &data {
            assert_eq!(volume_dice(&v.mask, &v.mask).unwrap(), 1.0);
        }
    }

    #[test]
    fn validation_is_deterministic_and_keeps_mode() {
        let data = tiny_volumes(2, 2);
        let mut net = build_network(ArchitectureSpec::with_base_width(Variant::U2Net, 2), &mut RngState::new(1)).unwrap();
        net.set_mode(Mode::McSample);
        let a = validation_dice(&mut net, &data).unwrap();
        let b = validation_dice(&mut net, &data).unwrap();
        assert_eq!(a, b);
        assert_eq!(net.mode(), Mode::McSample);
        assert!(validation_dice(&mut net, &[]).is_err());
    }
}
