//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any criterion fails.
//!
//! Criteria 4, 5, 6 and 8 share one desk-scale experiment per seed.

use std::collections::{BTreeSet, HashSet};
use std::time::Instant;

use uncertseg::bayes::mc_predict;
use uncertseg::data::{decode_tensor, encode_tensor, encode_pgm, Geometry};
use uncertseg::engine::{
    batchnorm_backward, batchnorm_train, concat_channels, conv2d, conv2d_backward, dropout,
    leaky_relu, leaky_relu_backward, maxpool2, maxpool2_backward, softmax_cross_entropy,
    split_channels, upsample_nearest2, upsample_nearest2_backward, Mode, Tensor,
};
use uncertseg::experiment::{build_corpus, run_experiment, ExperimentConfig, ExperimentResult};
use uncertseg::metrics::{dice, linear_fit, pr_auc};
use uncertseg::model::{
    build_network, bunet_loss, load_checkpoint, save_checkpoint, ArchitectureSpec, Variant,
};
use uncertseg::postprocess::{otsu_threshold, SegmentationMask};
use uncertseg::train::{plateau_scheduler, train, TrainConfig, TrainHistory};
use uncertseg::data::{CorpusParams, Split};
use uncertseg::RngState;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// Criterion 1: finite-difference gradient checks.

fn random_tensor(shape: &[usize], rng: &mut RngState, scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| (rng.range_f64(-1.0, 1.0) * scale) as f32)
}

/// `sum(r * y)` in f64, the scalar the checks differentiate.
fn project(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Norm-wise relative error between an analytic gradient and central
/// differences of `f` at `x`.
fn gradient_error(x: &Tensor, analytic: &Tensor, h: f32, mut f: impl FnMut(&Tensor) -> f64) -> f64 {
    let (mut diff, mut na, mut nf) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let step = plus.data()[i] as f64 - minus.data()[i] as f64;
        let fd = (f(&plus) - f(&minus)) / step;
        let an = analytic.data()[i] as f64;
        diff += (fd - an) * (fd - an);
        na += an * an;
        nf += fd * fd;
    }
    let scale = na.sqrt().max(nf.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

/// Values spaced at least `gap` apart in random order, so max pooling and
/// leaky ReLU stay away from ties and kinks under small perturbations.
fn separated_tensor(shape: &[usize], rng: &mut RngState, gap: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0 + 0.5) * gap).collect();
    rng.shuffle(&mut vals);
    Tensor::new(shape, vals).unwrap()
}

fn criterion_gradients() -> Outcome {
    const INSTANCES: u64 = 10;
    const TOL: f64 = 1e-3;
    const EPS: f32 = 1e-3;
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, err: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(entry) => entry.1 = entry.1.max(err),
        None => worst.push((name, err)),
    };

    for inst in 0..INSTANCES {
        let mut rng = RngState::new(1000 + inst);

        // conv2d with respect to input, weight and bias.
        let (k, pad) = if inst % 2 == 0 { (3, 1) } else { (1, 0) };
        let x = random_tensor(&[2, 2, 5, 4], &mut rng, 1.0);
        let wgt = random_tensor(&[3, 2, k, k], &mut rng, 0.5);
        let b = random_tensor(&[3], &mut rng, 0.5);
        let y = conv2d(&x, &wgt, &b, pad).unwrap();
        let r = random_tensor(y.shape(), &mut rng, 1.0);
        let g = conv2d_backward(&x, &wgt, &r, pad).unwrap();
        record("conv2d/input", gradient_error(&x, &g.input, EPS, |t| project(&conv2d(t, &wgt, &b, pad).unwrap(), &r)));
        record("conv2d/weight", gradient_error(&wgt, &g.weight, EPS, |t| project(&conv2d(&x, t, &b, pad).unwrap(), &r)));
        record("conv2d/bias", gradient_error(&b, &g.bias, EPS, |t| project(&conv2d(&x, &wgt, t, pad).unwrap(), &r)));

        // maxpool2
        let x = separated_tensor(&[2, 2, 4, 6], &mut rng, 0.1);
        let p = maxpool2(&x).unwrap();
        let r = random_tensor(p.output.shape(), &mut rng, 1.0);
        let gx = maxpool2_backward(x.shape(), &p.argmax, &r).unwrap();
        record("maxpool2", gradient_error(&x, &gx, EPS, |t| project(&maxpool2(t).unwrap().output, &r)));

        // upsample_nearest2
        let x = random_tensor(&[1, 3, 3, 2], &mut rng, 1.0);
        let r = random_tensor(&[1, 3, 6, 4], &mut rng, 1.0);
        let gx = upsample_nearest2_backward(&r).unwrap();
        record("upsample2", gradient_error(&x, &gx, EPS, |t| project(&upsample_nearest2(t).unwrap(), &r)));

        // batch norm (train mode) with respect to input, gamma and beta.
        let x = random_tensor(&[2, 3, 3, 3], &mut rng, 1.0);
        let gamma = Tensor::from_fn(&[3], |_| rng.range_f64(0.5, 1.5) as f32);
        let beta = random_tensor(&[3], &mut rng, 0.5);
        let (y, cache, _) = batchnorm_train(&x, &gamma, &beta, 1e-5).unwrap();
        let r = random_tensor(y.shape(), &mut rng, 1.0);
        let g = batchnorm_backward(&cache, &gamma, &r).unwrap();
        let bn = |x: &Tensor, gm: &Tensor, bt: &Tensor| project(&batchnorm_train(x, gm, bt, 1e-5).unwrap().0, &r);
        record("batchnorm/input", gradient_error(&x, &g.input, EPS, |t| bn(t, &gamma, &beta)));
        record("batchnorm/gamma", gradient_error(&gamma, &g.gamma, EPS, |t| bn(&x, t, &beta)));
        record("batchnorm/beta", gradient_error(&beta, &g.beta, EPS, |t| bn(&x, &gamma, t)));

        // leaky ReLU
        let x = separated_tensor(&[1, 2, 3, 4], &mut rng, 0.1);
        let r = random_tensor(x.shape(), &mut rng, 1.0);
        let gx = leaky_relu_backward(&x, &r, 0.01);
        record("leaky_relu", gradient_error(&x, &gx, EPS, |t| project(&leaky_relu(t, 0.01), &r)));

        // dropout with a fixed mask (same stream for every evaluation)
        let x = random_tensor(&[2, 2, 3, 3], &mut rng, 1.0);
        let r = random_tensor(x.shape(), &mut rng, 1.0);
        let seed = rng.next_u64();
        let (_, mask) = dropout(&x, 0.3, &mut RngState::new(seed), true).unwrap();
        let gx = mask.unwrap().apply(&r);
        record("dropout", gradient_error(&x, &gx, EPS, |t| {
            project(&dropout(t, 0.3, &mut RngState::new(seed), true).unwrap().0, &r)
        }));

        // skip concatenation
        let a = random_tensor(&[2, 2, 2, 2], &mut rng, 1.0);
        let bb = random_tensor(&[2, 3, 2, 2], &mut rng, 1.0);
        let r = random_tensor(&[2, 5, 2, 2], &mut rng, 1.0);
        let (ga, gb) = split_channels(&r, 2).unwrap();
        record("concat/first", gradient_error(&a, &ga, EPS, |t| project(&concat_channels(t, &bb).unwrap(), &r)));
        record("concat/second", gradient_error(&bb, &gb, EPS, |t| project(&concat_channels(&a, t).unwrap(), &r)));

        // softmax cross entropy
        let logits = random_tensor(&[2, 2, 3, 3], &mut rng, 3.0);
        let target = Tensor::from_fn(&[2, 3, 3], |_| rng.below(2) as f32);
        let (_, g) = softmax_cross_entropy(&logits, &target).unwrap();
        record("cross_entropy", gradient_error(&logits, &g, EPS, |t| softmax_cross_entropy(t, &target).unwrap().0));

        // aleatoric loss with a fixed noise stream
        let out = random_tensor(&[1, 3, 2, 3], &mut rng, 1.0);
        let target = Tensor::from_fn(&[1, 2, 3], |_| rng.below(2) as f32);
        let seed = rng.next_u64();
        let (_, g) = bunet_loss(&out, &target, 4, &mut RngState::new(seed)).unwrap();
        record("bunet_loss", gradient_error(&out, &g, EPS, |t| {
            bunet_loss(t, &target, 4, &mut RngState::new(seed)).unwrap().0
        }));
    }
    let failing: Vec<String> = worst
        .iter()
        .filter(|(_, e)| !(*e <= TOL))
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect();
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    outcome(
        failing.is_empty(),
        format!(
            "{} checks x {INSTANCES} instances, worst relative error {max:.2e}{}",
            worst.len(),
            if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 2: metrics against brute-force oracles.

fn oracle_dice(a: &[bool], b: &[bool]) -> f64 {
    let sa: HashSet<usize> = (0..a.len()).filter(|&i| a[i]).collect();
    let sb: HashSet<usize> = (0..b.len()).filter(|&i| b[i]).collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    2.0 * sa.intersection(&sb).count() as f64 / (sa.len() + sb.len()) as f64
}

/// Average precision by enumerating every distinct score as a threshold
/// (`score >= t` is positive), highest threshold first.
fn oracle_ap(scores: &[f32], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f32> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let predicted: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = predicted.iter().filter(|&&i| labels[i]).count() as f64;
        let recall = tp / positives;
        let precision = tp / predicted.len() as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Exact OLS on integer data: slope, intercept and R² as ratios of i128.
fn oracle_ols(x: &[i64], y: &[i64]) -> (f64, f64, f64) {
    let n = x.len() as i128;
    let sx: i128 = x.iter().map(|&v| v as i128).sum();
    let sy: i128 = y.iter().map(|&v| v as i128).sum();
    let sxx: i128 = x.iter().map(|&v| (v as i128).pow(2)).sum();
    let syy: i128 = y.iter().map(|&v| (v as i128).pow(2)).sum();
    let sxy: i128 = x.iter().zip(y).map(|(&a, &b)| a as i128 * b as i128).sum();
    let dxx = n * sxx - sx * sx;
    let dyy = n * syy - sy * sy;
    let dxy = n * sxy - sx * sy;
    let slope = dxy as f64 / dxx as f64;
    let intercept = (sy * sxx - sx * sxy) as f64 / dxx as f64;
    let r2 = if dyy == 0 {
        0.0
    } else {
        (dxy * dxy) as f64 / (dxx as f64 * dyy as f64)
    };
    (slope, intercept, r2)
}

/// Otsu by direct enumeration of the 255 split points over the raw values,
/// comparing between-class variances by exact cross-multiplication.
fn oracle_otsu(values: &[f32]) -> (Vec<bool>, f32) {
    let bin = |v: f32| -> i64 {
        // Bin k covers (k/256, (k+1)/256]; zero belongs to bin 0.
        let mut k = 0i64;
        while k < 255 && v as f64 > (k + 1) as f64 / 256.0 {
            k += 1;
        }
        k
    };
    let bins: Vec<i64> = values.iter().map(|&v| bin(v)).collect();
    let mut best: Option<(i64, u128, u128)> = None;
    for k in 0..255i64 {
        let (mut n0, mut n1, mut s0, mut s1) = (0i128, 0i128, 0i128, 0i128);
        for &b in &bins {
            if b <= k {
                n0 += 1;
                s0 += b as i128;
            } else {
                n1 += 1;
                s1 += b as i128;
            }
        }
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let d = (s0 * n1 - s1 * n0).unsigned_abs();
        let num = d * d;
        let den = (n0 * n1) as u128;
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((k, num, den));
        }
    }
    match best {
        Some((k, _, _)) => {
            let t = (k + 1) as f32 / 256.0;
            (values.iter().map(|&v| v > t).collect(), t)
        }
        None => (vec![false; values.len()], values.iter().copied().fold(f32::MIN, f32::max)),
    }
}

fn criterion_metric_oracles() -> Outcome {
    const INSTANCES: u64 = 200;
    let mut failures = Vec::new();
    let (mut worst_ap, mut worst_ols) = (0.0f64, 0.0f64);
    for inst in 0..INSTANCES {
        let mut rng = RngState::new(2000 + inst);
        let (h, w) = (1 + rng.below(6) as usize, 1 + rng.below(6) as usize);

        // Dice
        let pa = rng.uniform_f64();
        let pb = rng.uniform_f64();
        let a: Vec<bool> = (0..h * w).map(|_| rng.bernoulli(pa)).collect();
        let b: Vec<bool> = (0..h * w).map(|_| rng.bernoulli(pb)).collect();
        let to_mask = |m: &[bool]| {
            SegmentationMask::from_binary(&Tensor::from_fn(&[h, w], |i| m[i] as u8 as f32)).unwrap()
        };
        let d = dice(&to_mask(&a), &to_mask(&b)).unwrap();
        if d != oracle_dice(&a, &b) {
            failures.push(format!("dice instance {inst}"));
        }

        // PR AUC on up to 12 points with coarse scores to force ties.
        let n = 1 + rng.below(12) as usize;
        let levels = 1 + rng.below(6);
        let scores: Vec<f32> = (0..n).map(|_| rng.below(levels) as f32 / levels as f32).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
        labels[rng.below(n as u64) as usize] = true;
        let ap = pr_auc(&scores, &labels).unwrap().1;
        let err = (ap - oracle_ap(&scores, &labels)).abs();
        worst_ap = worst_ap.max(err);
        if err > 1e-9 {
            failures.push(format!("pr_auc instance {inst}"));
        }

        // OLS on integer data
        let n = 3 + rng.below(10) as usize;
        let x: Vec<i64> = (0..n).map(|_| rng.below(101) as i64 - 50).collect();
        let y: Vec<i64> = (0..n).map(|_| rng.below(101) as i64 - 50).collect();
        if x.iter().all(|&v| v == x[0]) {
            continue;
        }
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let fit = linear_fit(&xf, &yf).unwrap();
        let (s, i, r2) = oracle_ols(&x, &y);
        let err = (fit.slope - s).abs().max((fit.intercept - i).abs()).max((fit.r_squared - r2).abs());
        worst_ols = worst_ols.max(err);
        if err > 1e-9 {
            failures.push(format!("linear_fit instance {inst}"));
        }

        // Otsu on maps mixing a few clusters with uniform noise.
        let (h, w) = (2 + rng.below(8) as usize, 2 + rng.below(8) as usize);
        let centers: Vec<f64> = (0..1 + rng.below(3)).map(|_| rng.uniform_f64()).collect();
        let values: Vec<f32> = (0..h * w)
            .map(|_| {
                if rng.bernoulli(0.2) {
                    rng.uniform_f32()
                } else {
                    let c = centers[rng.below(centers.len() as u64) as usize];
                    (c + 0.05 * rng.range_f64(-1.0, 1.0)).clamp(0.0, 1.0) as f32
                }
            })
            .collect();
        let mask = otsu_threshold(&Tensor::new(&[h, w], values.clone()).unwrap()).unwrap();
        let (expected, t) = oracle_otsu(&values);
        let got: Vec<bool> = mask.data.iter().map(|&v| v != 0).collect();
        if got != expected || mask.threshold != t {
            failures.push(format!("otsu instance {inst}"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{INSTANCES} instances each; dice and otsu exact, max |AUC err| {worst_ap:.1e}, max |OLS err| {worst_ols:.1e}{}",
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 3: MC sampling.

fn criterion_mc_sampling() -> Outcome {
    let geometry = Geometry {
        bscans: 4,
        rows: 32,
        cols: 32,
    };
    let corpus = build_corpus(&CorpusParams::new(12, geometry), 31).unwrap();
    let config = TrainConfig {
        variant: Variant::U2Net,
        base_width: 4,
        max_epochs: 8,
        lr0: 1e-3,
        seed: 31,
        ..TrainConfig::default()
    };
    let out = train(&config, &corpus.split(Split::Train), &corpus.split(Split::Val)).unwrap();
    let bscan = corpus.split(Split::TestA)[0].image.index_axis0(0).unwrap();

    let mut no_dropout = out.best.clone();
    no_dropout.set_dropout_plan(&[0.0; 9]).unwrap();
    no_dropout.set_mode(Mode::McSample);
    let zero_std = [1usize, 5, 20].iter().all(|&t| {
        mc_predict(&no_dropout, &bscan, t, &RngState::new(t as u64))
            .unwrap()
            .epistemic_std
            .data()
            .iter()
            .all(|&s| s == 0.0)
    });

    let mut half = out.best;
    let plan: Vec<f32> = half.spec().dropout_plan.iter().map(|&p| if p > 0.0 { 0.5 } else { 0.0 }).collect();
    half.set_dropout_plan(&plan).unwrap();
    half.set_mode(Mode::McSample);
    let a = mc_predict(&half, &bscan, 1000, &RngState::new(101)).unwrap();
    let b = mc_predict(&half, &bscan, 1000, &RngState::new(202)).unwrap();
    let max_diff = a
        .mean_prob
        .data()
        .iter()
        .zip(b.mean_prob.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max);
    let max_std = a.epistemic_std.max();
    outcome(
        zero_std && max_diff <= 0.05 && max_std > 0.0,
        format!(
            "zero-rate std identically 0: {zero_std}; two T=1000 runs at p=0.5 differ by at most {max_diff:.4} (max std {max_std:.3})"
        ),
    )
}

// ---------------------------------------------------------------------------
// Criteria 4, 5, 6, 8: desk-scale experiment over five seeds.

fn criterion_reproduction(results: &[ExperimentResult]) -> Outcome {
    let mut wins = 0;
    let mut rows = Vec::new();
    for r in results {
        let dice = r.u2net.dice_mean;
        let (u2, un) = (r.u2net.disruption_auc, r.unet.disruption_auc);
        let ok = dice >= 0.80 && matches!((u2, un), (Some(a), Some(b)) if a > b);
        wins += ok as usize;
        rows.push(format!(
            "seed {} dice {:.4} dAUC {:.4} vs {:.4}",
            r.seed,
            dice,
            u2.unwrap_or(f64::NAN),
            un.unwrap_or(f64::NAN)
        ));
    }
    outcome(wins >= 4, format!("{wins}/5 seeds [{}]", rows.join("; ")))
}

fn criterion_uncertainty_correlation(results: &[ExperimentResult]) -> Outcome {
    let mut wins = 0;
    let mut rows = Vec::new();
    for r in results {
        match r.u2net.fit {
            Some(f) => {
                let ok = f.slope < 0.0 && f.r_squared >= 0.3;
                wins += ok as usize;
                rows.push(format!("seed {} slope {:.3} R2 {:.3}", r.seed, f.slope, f.r_squared));
            }
            None => rows.push(format!("seed {} no fit", r.seed)),
        }
    }
    outcome(wins >= 4, format!("{wins}/5 seeds [{}]", rows.join("; ")))
}

fn criterion_boundary(results: &[ExperimentResult]) -> Outcome {
    let mut all = true;
    let mut rows = Vec::new();
    for r in results {
        for (name, (b, i)) in [("u2net", r.u2net_boundary), ("unet", r.unet_boundary)] {
            all &= b > i;
            rows.push(format!("seed {} {name} {b:.4}>{i:.4}", r.seed));
        }
    }
    outcome(all, rows.join("; "))
}

fn criterion_sweep(results: &[ExperimentResult]) -> Outcome {
    let mut wins = 0;
    let mut rows = Vec::new();
    for r in results {
        let at = |t: usize| r.sweep.iter().find(|s| s.samples == t).map(|s| s.photoreceptor_auc);
        let complete = [1, 2, 5, 10, 20, 50].iter().all(|&t| at(t).is_some());
        let (a1, a20) = (at(1).unwrap_or(f64::NAN), at(20).unwrap_or(f64::NAN));
        wins += (complete && a20 >= a1) as usize;
        rows.push(format!("seed {} T1 {a1:.5} T20 {a20:.5}", r.seed));
    }
    outcome(wins >= 4, format!("{wins}/5 seeds [{}]", rows.join("; ")))
}

// ---------------------------------------------------------------------------
// Criterion 7: plateau scheduler and reproducible training.

fn criterion_scheduler() -> Outcome {
    let cfg = TrainConfig::default();
    let hist = |dice: &[f64], lr: f64| TrainHistory {
        loss: vec![0.0; dice.len()],
        val_dice: dice.to_vec(),
        lr: vec![lr; dice.len()],
    };
    let flat = plateau_scheduler(&hist(&[0.7; 16], cfg.lr0), &cfg) == cfg.lr0 * 0.5;
    let slow: Vec<f64> = (0..16).map(|i| 0.7 + 5e-5 * i as f64).collect();
    let improving = plateau_scheduler(&hist(&slow, cfg.lr0), &cfg) == cfg.lr0;
    let mut h = TrainHistory::default();
    let mut lr = cfg.lr0;
    for _ in 0..31 {
        h.loss.push(0.0);
        h.val_dice.push(0.7);
        h.lr.push(lr);
        lr = plateau_scheduler(&h, &cfg);
    }
    let twice = lr == cfg.lr0 * 0.25;

    let geometry = Geometry {
        bscans: 2,
        rows: 16,
        cols: 32,
    };
    let corpus = build_corpus(&CorpusParams::new(8, geometry), 77).unwrap();
    let config = TrainConfig {
        base_width: 4,
        max_epochs: 3,
        seed: 77,
        ..TrainConfig::default()
    };
    let (tr, va) = (corpus.split(Split::Train), corpus.split(Split::Val));
    let a = train(&config, &tr, &va).unwrap();
    let b = train(&config, &tr, &va).unwrap();
    let reproducible = a.history == b.history && a.best == b.best && a.last == b.last;
    outcome(
        flat && improving && twice && reproducible,
        format!("flat halves: {flat}; slow gain keeps lr: {improving}; two plateaus quarter lr: {twice}; bit-reproducible training: {reproducible}"),
    )
}

// ---------------------------------------------------------------------------
// Criterion 9: file formats.

/// Strict reading of the binary PGM layout: "P5", whitespace, width,
/// whitespace, height, whitespace, maxval (< 65536), exactly one whitespace
/// byte, then width*height bytes when maxval < 256. Comments may appear in
/// the header.
fn validate_p5(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), String> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("magic".into());
    }
    let mut pos = 2;
    let mut fields = Vec::new();
    while fields.len() < 3 {
        let start = pos;
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        if pos == start {
            return Err("missing whitespace".into());
        }
        let digits = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[digits..pos]).map_err(|e| e.to_string())?;
        fields.push(text.parse::<usize>().map_err(|_| format!("bad field {text:?}"))?);
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing whitespace after maxval".into());
    }
    pos += 1;
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if w == 0 || h == 0 || maxval == 0 || maxval >= 65536 {
        return Err("bad header values".into());
    }
    if maxval >= 256 {
        return Err("expected 8-bit samples".into());
    }
    let pixels = &bytes[pos..];
    if pixels.len() != w * h {
        return Err(format!("raster has {} bytes, expected {}", pixels.len(), w * h));
    }
    if pixels.iter().any(|&p| p as usize > maxval) {
        return Err("sample above maxval".into());
    }
    Ok((w, h, pixels.to_vec()))
}

fn criterion_formats() -> Outcome {
    let mut rng = RngState::new(9);
    let mut tensor_ok = true;
    for i in 0..50 {
        let ndim = 1 + rng.below(4) as usize;
        let shape: Vec<usize> = (0..ndim).map(|_| 1 + rng.below(5) as usize).collect();
        let mut t = Tensor::from_fn(&shape, |_| f32::from_bits(rng.next_u32()));
        if i == 0 {
            let special = [0.0, -0.0, f32::INFINITY, f32::MIN_POSITIVE / 2.0, f32::NAN];
            for (v, s) in t.data_mut().iter_mut().zip(special) {
                *v = s;
            }
        }
        let bytes = encode_tensor(&t).unwrap();
        let back = decode_tensor(&bytes, std::path::Path::new("mem")).unwrap();
        let same_bits = back.shape() == t.shape()
            && back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        tensor_ok &= same_bits && encode_tensor(&back).unwrap() == bytes;
    }
    let mut bad_magic = encode_tensor(&Tensor::zeros(&[2, 3])).unwrap();
    let size_ok = bad_magic.len() == 38;
    bad_magic[..4].copy_from_slice(b"XXXX");
    let rejects = decode_tensor(&bad_magic, std::path::Path::new("mem")).is_err();

    let dir = tempfile::tempdir().unwrap();
    let mut checkpoint_ok = true;
    for (i, v) in [Variant::UNet, Variant::U2Net, Variant::BUNet].into_iter().enumerate() {
        let net = build_network(ArchitectureSpec::with_base_width(v, 2), &mut RngState::new(i as u64)).unwrap();
        let first = dir.path().join(format!("{v}-a"));
        let second = dir.path().join(format!("{v}-b"));
        save_checkpoint(&net, &first).unwrap();
        let loaded = load_checkpoint(&first).unwrap();
        save_checkpoint(&loaded, &second).unwrap();
        let files = |p: &std::path::Path| -> BTreeSet<String> {
            std::fs::read_dir(p).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect()
        };
        checkpoint_ok &= files(&first) == files(&second);
        for f in files(&first) {
            checkpoint_ok &= std::fs::read(first.join(&f)).unwrap() == std::fs::read(second.join(&f)).unwrap();
        }
        let params_equal = net.named_parameters().iter().zip(loaded.named_parameters()).all(|((_, a), (_, b))| {
            a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
        checkpoint_ok &= params_equal;
    }

    let mut pgm_ok = true;
    for _ in 0..20 {
        let (h, w) = (1 + rng.below(9) as usize, 1 + rng.below(9) as usize);
        let img = Tensor::from_fn(&[h, w], |_| rng.uniform_f32());
        let bytes = encode_pgm(&img).unwrap();
        match validate_p5(&bytes) {
            Ok((pw, ph, px)) => {
                pgm_ok &= pw == w && ph == h;
                pgm_ok &= px.iter().zip(img.data()).all(|(&p, &v)| p as f64 == (255.0 * v as f64 + 0.5).floor());
            }
            Err(_) => pgm_ok = false,
        }
    }
    let edge = Tensor::new(&[1, 3], vec![0.0, 0.5, 1.0]).unwrap();
    pgm_ok &= validate_p5(&encode_pgm(&edge).unwrap()).map(|r| r.2) == Ok(vec![0, 128, 255]);
    outcome(
        tensor_ok && size_ok && rejects && checkpoint_ok && pgm_ok,
        format!(
            "tensor round trip bit-identical: {tensor_ok}; 2x3 file 38 bytes: {size_ok}; bad magic rejected: {rejects}; checkpoint save/load/save identical: {checkpoint_ok}; PGM valid P5: {pgm_ok}"
        ),
    )
}

fn main() {
    // Optional criterion numbers on the command line restrict the run.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| only.is_empty() || only.contains(&n);
    let mut lines: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut run = |n: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        if !wanted(n) {
            return;
        }
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {n} [{name}]: {} ({secs:.1}s) {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        lines.push((n, name, o, secs));
    };
    run(1, "gradient suite", &criterion_gradients);
    run(2, "metric oracles", &criterion_metric_oracles);
    run(3, "MC sampling", &criterion_mc_sampling);
    run(7, "plateau scheduler", &criterion_scheduler);
    run(9, "format conformance", &criterion_formats);

    if ![4, 5, 6, 8].iter().any(|&n| wanted(n)) {
        return finish(lines);
    }
    let start = Instant::now();
    let results: Vec<ExperimentResult> = SEEDS
        .iter()
        .map(|&seed| {
            let seed_start = Instant::now();
            let r = run_experiment(&ExperimentConfig::desk(seed), |_| {}).expect("experiment");
            println!("  experiment seed {seed} finished in {:.0}s", seed_start.elapsed().as_secs_f64());
            r
        })
        .collect();
    let per_seed = start.elapsed().as_secs_f64() / SEEDS.len() as f64;
    let timed = |o: Outcome| {
        let within = per_seed < 30.0 * 60.0;
        outcome(o.pass && within, format!("{} ; {per_seed:.0}s per seed", o.detail))
    };
    run(4, "end-to-end reproduction", &|| timed(criterion_reproduction(&results)));
    run(5, "uncertainty correlation", &|| criterion_uncertainty_correlation(&results));
    run(6, "boundary uncertainty", &|| criterion_boundary(&results));
    run(8, "T-sweep", &|| criterion_sweep(&results));

    finish(lines);
}

fn finish(mut lines: Vec<(usize, &str, Outcome, f64)>) {
    lines.sort_by_key(|l| l.0);
    println!();
    println!("acceptance summary");
    for (n, name, o, _) in &lines {
        println!("  criterion {n} [{name}]: {}", if o.pass { "PASS" } else { "FAIL" });
    }
    if lines.iter().any(|l| !l.2.pass) {
        std::process::exit(1);
    }
}
