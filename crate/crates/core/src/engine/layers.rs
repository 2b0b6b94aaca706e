//! Parameterised layers built on the functional ops.

use super::conv::{conv2d, conv2d_backward};
use super::ops::{batchnorm_backward, batchnorm_eval, batchnorm_train, BatchNormCache, BatchStats};
use super::param::Parameter;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Execution mode of a network.
///
/// | mode       | dropout  | batch norm         |
/// |------------|----------|--------------------|
/// | `Train`    | active   | batch statistics   |
/// | `Eval`     | inactive | running statistics |
/// | `McSample` | active   | running statistics |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
    McSample,
}

impl Mode {
    pub fn dropout_active(self) -> bool {
        matches!(self, Mode::Train | Mode::McSample)
    }

    pub fn uses_batch_stats(self) -> bool {
        self == Mode::Train
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: Parameter,
    pub bias: Parameter,
    pub padding: usize,
}

impl Conv2d {
    /// He (fan-in) normal weights, zero bias.
    pub fn new(cin: usize, cout: usize, k: usize, rng: &mut RngState) -> Self {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let weight = Tensor::from_fn(&[cout, cin, k, k], |_| (rng.normal() * std) as f32);
        Conv2d {
            weight: Parameter::new(weight),
            bias: Parameter::new(Tensor::zeros(&[cout])),
            padding: (k - 1) / 2,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight.value, &self.bias.value, self.padding)
    }

    /// Accumulates parameter gradients; returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let g = conv2d_backward(x, &self.weight.value, grad_out, self.padding)?;
        self.weight.accumulate(&g.weight);
        self.bias.accumulate(&g.bias);
        Ok(g.input)
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn parameters(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
    pub momentum: f32,
}

impl BatchNorm2d {
    pub fn new(channels: usize, eps: f32, momentum: f32) -> Self {
        BatchNorm2d {
            gamma: Parameter::new(Tensor::full(&[channels], 1.0)),
            beta: Parameter::new(Tensor::zeros(&[channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps,
            momentum,
        }
    }

    /// Train-mode pass. The running statistics are *not* updated here; call
    /// [`BatchNorm2d::update_running`] with the returned stats.
    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, BatchNormCache, BatchStats)> {
        batchnorm_train(x, &self.gamma.value, &self.beta.value, self.eps)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        batchnorm_eval(
            x,
            &self.gamma.value,
            &self.beta.value,
            &self.running_mean,
            &self.running_var,
            self.eps,
        )
    }

    /// Exponential moving average; the variance is stored unbiased.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        let unbias = stats.count as f32 / (stats.count as f32 - 1.0);
        for c in 0..self.running_mean.len() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * stats.mean[c];
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * stats.var[c] * unbias;
        }
    }

    pub fn backward(&mut self, cache: Option<&BatchNormCache>, grad_out: &Tensor) -> Result<Tensor> {
        let cache = cache.ok_or_else(|| {
            Error::invalid("batchnorm backward is only defined for train-mode passes")
        })?;
        let g = batchnorm_backward(cache, &self.gamma.value, grad_out)?;
        self.gamma.accumulate(&g.gamma);
        self.beta.accumulate(&g.beta);
        Ok(g.input)
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    pub fn parameters(&self) -> [&Parameter; 2] {
        [&self.gamma, &self.beta]
    }
}
