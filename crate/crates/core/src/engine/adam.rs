use super::param::Parameter;

/// Adam hyper-parameters. Weight decay is the classic L2 form: it is added to
/// the gradient before the moment updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based). Gradients are
/// zeroed afterwards.
pub fn adam_step<'a>(params: impl IntoIterator<Item = &'a mut Parameter>, cfg: &AdamConfig, t: u64) {
    assert!(t >= 1, "adam step index is 1-based");
    let c1 = (1.0 - (cfg.beta1 as f64).powi(t as i32)) as f32;
    let c2 = (1.0 - (cfg.beta2 as f64).powi(t as i32)) as f32;
    for p in params {
        let Parameter { value, grad, m, v } = p;
        let it = value
            .data_mut()
            .iter_mut()
            .zip(grad.data_mut())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((w, g), (mi, vi)) in it {
            let gt = *g + cfg.weight_decay * *w;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gt;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gt * gt;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            *g = 0.0;
        }
    }
}
