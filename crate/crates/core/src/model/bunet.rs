//! Aleatoric loss of the BU-Net: the two class logits are perturbed with
//! Gaussian noise whose variance is predicted by a third output channel.

use crate::engine::{softmax_cross_entropy, Tensor};
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Loss and gradient for a `[N, 3, H, W]` output: channels 0 and 1 are class
/// logits, channel 2 is `log V`.
///
/// Each of `noise_samples` draws adds `sqrt(V) * eps` (independent standard
/// normal `eps` per pixel and per class) to the logits; the loss is the mean
/// cross entropy over draws. Gradients reach both the logits and `log V`.
pub fn bunet_loss(
    output: &Tensor,
    target: &Tensor,
    noise_samples: usize,
    rng: &mut RngState,
) -> Result<(f64, Tensor)> {
    let (n, c, h, w) = output.dims4()?;
    if c != 3 {
        return Err(Error::shape(format!(
            "aleatoric loss needs 3 output channels, got {c}"
        )));
    }
    if noise_samples == 0 {
        return Err(Error::invalid("noise_samples must be at least 1"));
    }
    let plane = h * w;
    let at = |b: usize, ch: usize, p: usize| (b * c + ch) * plane + p;
    let out = output.data();
    let sigma: Vec<f32> = (0..n * plane)
        .map(|i| {
            let (b, p) = (i / plane, i % plane);
            (0.5 * out[at(b, 2, p)]).exp()
        })
        .collect();

    let inv_s = 1.0 / noise_samples as f64;
    let mut total = 0.0f64;
    let mut grad = vec![0.0f64; out.len()];
    let mut noisy = Tensor::zeros(&[n, 2, h, w]);
    let mut eps = vec![0.0f32; n * 2 * plane];
    for _ in 0..noise_samples {
        for (i, e) in eps.iter_mut().enumerate() {
            let (b, ch, p) = (i / (2 * plane), (i / plane) % 2, i % plane);
            *e = rng.normal() as f32;
            noisy.data_mut()[i] = out[at(b, ch, p)] + sigma[b * plane + p] * *e;
        }
        let (loss, g) = softmax_cross_entropy(&noisy, target)?;
        total += loss;
        for (i, (&gi, &e)) in g.data().iter().zip(&eps).enumerate() {
            let (b, ch, p) = (i / (2 * plane), (i / plane) % 2, i % plane);
            grad[at(b, ch, p)] += gi as f64 * inv_s;
            // d/d(log V) of sigma * eps is 0.5 * sigma * eps.
            grad[at(b, 2, p)] += gi as f64 * e as f64 * 0.5 * sigma[b * plane + p] as f64 * inv_s;
        }
    }
    let grad = Tensor::new(output.shape(), grad.into_iter().map(|v| v as f32).collect())?;
    Ok((total * inv_s, grad))
}
