//! Monte-Carlo dropout inference.
//!
//! Sample `i` of a prediction seeded with `rng` runs with `rng.stream(i)`, so
//! results do not depend on how samples are distributed over threads. The
//! per-pixel statistics are accumulated in sample order with Welford's
//! recurrence in f64.

use crate::engine::{class_probability, Mode, Tensor};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::rng::RngState;

/// Foreground class index.
pub const FOREGROUND: usize = 1;

/// Mean foreground probability and epistemic standard deviation of one
/// B-scan, both `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct McResult {
    pub mean_prob: Tensor,
    pub epistemic_std: Tensor,
    pub samples: usize,
}

/// Running per-pixel mean and population variance.
#[derive(Clone, Debug)]
pub struct McAccumulator {
    shape: Vec<usize>,
    mean: Vec<f64>,
    m2: Vec<f64>,
    count: usize,
}

impl McAccumulator {
    pub fn new(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        McAccumulator {
            shape: shape.to_vec(),
            mean: vec![0.0; n],
            m2: vec![0.0; n],
            count: 0,
        }
    }

    pub fn push(&mut self, prob: &Tensor) -> Result<()> {
        if prob.len() != self.mean.len() {
            return Err(Error::shape("MC sample size changed between draws"));
        }
        self.count += 1;
        let k = self.count as f64;
        for ((m, s), &p) in self.mean.iter_mut().zip(&mut self.m2).zip(prob.data()) {
            let x = p as f64;
            let delta = x - *m;
            *m += delta / k;
            *s += delta * (x - *m);
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn result(&self) -> Result<McResult> {
        if self.count == 0 {
            return Err(Error::invalid("no MC samples accumulated"));
        }
        let k = self.count as f64;
        let mean = self.mean.iter().map(|&m| m.clamp(0.0, 1.0) as f32).collect();
        let std = self.m2.iter().map(|&s| (s.max(0.0) / k).sqrt() as f32).collect();
        Ok(McResult {
            mean_prob: Tensor::new(&self.shape, mean)?,
            epistemic_std: Tensor::new(&self.shape, std)?,
            samples: self.count,
        })
    }
}

fn as_batch(bscan: &Tensor) -> Result<Tensor> {
    match *bscan.shape() {
        [h, w] | [1, h, w] | [1, 1, h, w] => bscan.clone().reshape(&[1, 1, h, w]),
        _ => Err(Error::shape(format!(
            "expected a single B-scan [1, H, W], got {:?}",
            bscan.shape()
        ))),
    }
}

/// Foreground probability `[H, W]` of one stochastic pass.
pub fn sample_probability(net: &Network, batch: &Tensor, rng: &mut RngState) -> Result<Tensor> {
    let (_, _, h, w) = batch.dims4()?;
    let logits = net.infer(batch, rng)?;
    let classes = net.spec().classes();
    class_probability(&logits, FOREGROUND, classes)?.reshape(&[h, w])
}

fn check_mode(net: &Network) -> Result<()> {
    if net.mode() == Mode::Train {
        return Err(Error::invalid(
            "MC prediction needs the network in mc-sample (or eval) mode",
        ));
    }
    Ok(())
}

/// Runs `samples` stochastic passes over one B-scan.
pub fn mc_predict(net: &Network, bscan: &Tensor, samples: usize, rng: &RngState) -> Result<McResult> {
    mc_predict_threaded(net, bscan, samples, rng, 1)
}

/// [`mc_predict`] with the passes spread over `threads` workers. The result
/// is bit-identical for any thread count.
pub fn mc_predict_threaded(
    net: &Network,
    bscan: &Tensor,
    samples: usize,
    rng: &RngState,
    threads: usize,
) -> Result<McResult> {
    if samples < 1 {
        return Err(Error::invalid("number of MC samples must be at least 1"));
    }
    check_mode(net)?;
    let batch = as_batch(bscan)?;
    let (_, _, h, w) = batch.dims4()?;
    let mut acc = McAccumulator::new(&[h, w]);
    let threads = threads.clamp(1, samples);
    if threads == 1 {
        for i in 0..samples {
            acc.push(&sample_probability(net, &batch, &mut rng.stream(i as u64))?)?;
        }
        return acc.result();
    }
    let chunk = samples.div_ceil(threads);
    let maps: Vec<Result<Vec<Tensor>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let batch = &batch;
                scope.spawn(move || {
                    (t * chunk..((t + 1) * chunk).min(samples))
                        .map(|i| sample_probability(net, batch, &mut rng.stream(i as u64)))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("MC worker panicked"))
            .collect()
    });
    for part in maps {
        for m in part? {
            acc.push(&m)?;
        }
    }
    acc.result()
}

/// One pass of `max(ts)` samples, snapshotting the statistics after each
/// sample count in `ts`. Snapshot `t` equals `mc_predict(.., t, rng)`.
pub fn mc_sweep(net: &Network, bscan: &Tensor, ts: &[usize], rng: &RngState) -> Result<Vec<McResult>> {
    check_mode(net)?;
    if ts.is_empty() || ts.contains(&0) {
        return Err(Error::invalid("sweep sample counts must be positive"));
    }
    let batch = as_batch(bscan)?;
    let (_, _, h, w) = batch.dims4()?;
    let max_t = *ts.iter().max().expect("non-empty");
    let mut acc = McAccumulator::new(&[h, w]);
    let mut snaps: Vec<Option<McResult>> = vec![None; ts.len()];
    for i in 0..max_t {
        acc.push(&sample_probability(net, &batch, &mut rng.stream(i as u64))?)?;
        for (slot, &t) in snaps.iter_mut().zip(ts) {
            if t == i + 1 {
                *slot = Some(acc.result()?);
            }
        }
    }
    Ok(snaps.into_iter().map(|s| s.expect("snapshot taken")).collect())
}

/// MC prediction for every B-scan of a `[B, H, W]` stack. B-scan `b` uses
/// `rng.derive(b)` as its root.
pub fn mc_predict_stack(
    net: &Network,
    images: &Tensor,
    samples: usize,
    rng: &RngState,
    threads: usize,
) -> Result<(Tensor, Tensor)> {
    let shape = images.shape();
    if shape.len() != 3 {
        return Err(Error::shape(format!("expected [B, H, W], got {shape:?}")));
    }
    let mut means = Vec::with_capacity(shape[0]);
    let mut stds = Vec::with_capacity(shape[0]);
    for b in 0..shape[0] {
        let r = mc_predict_threaded(net, &images.index_axis0(b)?, samples, &rng.derive(b as u64), threads)?;
        means.push(r.mean_prob);
        stds.push(r.epistemic_std);
    }
    Ok((Tensor::stack(&means)?, Tensor::stack(&stds)?))
}

/// Divides a map by its maximum; an all-zero map is returned unchanged.
pub fn normalize_uncertainty(map: &Tensor) -> Tensor {
    let max = map.max();
    if max <= 0.0 || !max.is_finite() {
        return map.clone();
    }
    let mut out = map.clone();
    for v in out.data_mut() {
        *v /= max;
    }
    out
}

/// Mean over every pixel of every map.
pub fn mean_uncertainty(maps: &[Tensor]) -> Result<f64> {
    let n: usize = maps.iter().map(Tensor::len).sum();
    if maps.is_empty() || n == 0 {
        return Err(Error::invalid("mean uncertainty of an empty map list"));
    }
    Ok(maps.iter().map(Tensor::sum).sum::<f64>() / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchitectureSpec, Variant};

    fn net(seed: u64, mode: Mode) -> Network {
        let mut n = Network::build(
            ArchitectureSpec::with_base_width(Variant::U2Net, 2),
            &mut RngState::new(seed),
        )
        .unwrap();
        n.set_mode(mode);
        n
    }

    fn scan() -> Tensor {
        Tensor::from_fn(&[1, 16, 16], |i| ((i * 7) % 13) as f32 / 13.0)
    }

    #[test]
    fn single_sample_has_zero_std() {
        let r = mc_predict(&net(1, Mode::McSample), &scan(), 1, &RngState::new(3)).unwrap();
        assert!(r.epistemic_std.data().iter().all(|&s| s == 0.0));
        assert_eq!(r.samples, 1);
    }

    #[test]
    fn no_dropout_means_zero_std() {
        let mut n = net(1, Mode::McSample);
        n.set_dropout_plan(&[0.0; 9]).unwrap();
        let r = mc_predict(&n, &scan(), 7, &RngState::new(3)).unwrap();
        assert!(r.epistemic_std.data().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn bounds_hold() {
        let r = mc_predict(&net(2, Mode::McSample), &scan(), 8, &RngState::new(4)).unwrap();
        assert!(r.mean_prob.data().iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(r.epistemic_std.data().iter().all(|s| (0.0..=0.5).contains(s)));
        assert!(r.epistemic_std.data().iter().any(|&s| s > 0.0));
    }

    #[test]
    fn threads_do_not_change_results() {
        let n = net(3, Mode::McSample);
        let a = mc_predict_threaded(&n, &scan(), 9, &RngState::new(5), 1).unwrap();
        let b = mc_predict_threaded(&n, &scan(), 9, &RngState::new(5), 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_snapshots_match_direct_runs() {
        let n = net(4, Mode::McSample);
        let rng = RngState::new(6);
        let snaps = mc_sweep(&n, &scan(), &[1, 3, 5], &rng).unwrap();
        for (snap, t) in snaps.iter().zip([1, 3, 5]) {
            assert_eq!(*snap, mc_predict(&n, &scan(), t, &rng).unwrap());
        }
    }

    #[test]
    fn rejects_zero_samples_and_train_mode() {
        assert!(mc_predict(&net(1, Mode::McSample), &scan(), 0, &RngState::new(0)).is_err());
        assert!(mc_predict(&net(1, Mode::Train), &scan(), 2, &RngState::new(0)).is_err());
    }

    #[test]
    fn normalization() {
        let m = Tensor::new(&[2, 2], vec![0.05, 0.2, 0.1, 0.0]).unwrap();
        let n = normalize_uncertainty(&m);
        assert_eq!(n.max(), 1.0);
        assert_eq!(n.data()[1], 1.0);
        let z = Tensor::zeros(&[3, 3]);
        assert_eq!(normalize_uncertainty(&z), z);
    }

    #[test]
    fn mean_uncertainty_rules() {
        let a = Tensor::full(&[2, 2], 0.3);
        assert!((mean_uncertainty(std::slice::from_ref(&a)).unwrap() - 0.3).abs() < 1e-7);
        let b = Tensor::full(&[2, 2], 0.1);
        assert!((mean_uncertainty(&[a, b]).unwrap() - 0.2).abs() < 1e-7);
        assert!(mean_uncertainty(&[]).is_err());
    }
}
