use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Pixel-wise softmax cross entropy averaged over every pixel in the batch.
///
/// `logits` is `[N, C, H, W]`; `target` is `[N, H, W]` holding class indices
/// stored as floats. Returns the loss (accumulated in f64) and its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let (n, c, h, w) = logits.dims4()?;
    if target.shape() != [n, h, w] {
        return Err(Error::shape(format!(
            "cross entropy: logits {:?} vs target {:?}",
            logits.shape(),
            target.shape()
        )));
    }
    let plane = h * w;
    let count = (n * plane) as f64;
    let x = logits.data();
    let mut grad = vec![0.0f32; x.len()];
    let mut total = 0.0f64;
    let mut probs = vec![0.0f64; c];
    for b in 0..n {
        for p in 0..plane {
            let t = target.data()[b * plane + p];
            let class = t as usize;
            if t != class as f32 || class >= c {
                return Err(Error::invalid(format!(
                    "cross entropy target {t} is not a class index below {c}"
                )));
            }
            let at = |ch: usize| (b * c + ch) * plane + p;
            let max = (0..c).map(|ch| x[at(ch)] as f64).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (ch, pr) in probs.iter_mut().enumerate() {
                *pr = (x[at(ch)] as f64 - max).exp();
                z += *pr;
            }
            total += z.ln() + max - x[at(class)] as f64;
            for (ch, pr) in probs.iter().enumerate() {
                let onehot = if ch == class { 1.0 } else { 0.0 };
                grad[at(ch)] = ((pr / z - onehot) / count) as f32;
            }
        }
    }
    let loss = total / count;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross entropy loss".into()));
    }
    Ok((loss, Tensor::new(logits.shape(), grad)?))
}

/// Softmax probability of `class` at every pixel: `[N, C, H, W]` to
/// `[N, H, W]`.
pub fn class_probability(logits: &Tensor, class: usize, classes: usize) -> Result<Tensor> {
    let (n, c, h, w) = logits.dims4()?;
    if class >= classes || classes > c {
        return Err(Error::shape(format!(
            "class {class} of {classes} requested from {c} channels"
        )));
    }
    let plane = h * w;
    let x = logits.data();
    let mut out = vec![0.0f32; n * plane];
    for b in 0..n {
        for p in 0..plane {
            let at = |ch: usize| (b * c + ch) * plane + p;
            let max = (0..classes).map(|ch| x[at(ch)]).fold(f32::NEG_INFINITY, f32::max);
            let z: f64 = (0..classes).map(|ch| ((x[at(ch)] - max) as f64).exp()).sum();
            out[b * plane + p] = (((x[at(class)] - max) as f64).exp() / z) as f32;
        }
    }
    Tensor::new(&[n, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_logits_give_ln2() {
        let logits = Tensor::full(&[1, 2, 3, 3], 0.7);
        let target = Tensor::from_fn(&[1, 3, 3], |i| (i % 2) as f32);
        let (loss, _) = softmax_cross_entropy(&logits, &target).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_goes_to_zero() {
        let target = Tensor::full(&[1, 1, 1], 1.0);
        let mut prev = f64::INFINITY;
        for gap in [5.0f32, 10.0, 20.0] {
            let logits = Tensor::new(&[1, 2, 1, 1], vec![0.0, gap]).unwrap();
            let (loss, _) = softmax_cross_entropy(&logits, &target).unwrap();
            assert!(loss >= 0.0 && loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-8);
    }

    #[test]
    fn rejects_non_binary_target() {
        let logits = Tensor::zeros(&[1, 2, 1, 1]);
        let target = Tensor::full(&[1, 1, 1], 0.5);
        assert!(softmax_cross_entropy(&logits, &target).is_err());
    }

    #[test]
    fn huge_logits_stay_finite() {
        let logits = Tensor::new(&[1, 2, 1, 1], vec![1e30, -1e30]).unwrap();
        let target = Tensor::full(&[1, 1, 1], 0.0);
        let (loss, g) = softmax_cross_entropy(&logits, &target).unwrap();
        assert_eq!(loss, 0.0);
        g.check_finite("grad").unwrap();
    }

    #[test]
    fn probabilities_sum_to_one() {
        let logits = Tensor::from_fn(&[1, 2, 2, 2], |i| i as f32 - 3.0);
        let p0 = class_probability(&logits, 0, 2).unwrap();
        let p1 = class_probability(&logits, 1, 2).unwrap();
        for (a, b) in p0.data().iter().zip(p1.data()) {
            assert!((a + b - 1.0).abs() < 1e-6);
        }
    }
}
