use super::spec::{ArchitectureSpec, DECODER_BLOCKS, ENCODER_BLOCKS, SPATIAL_MULTIPLE};
use crate::engine::{
    concat_channels, dropout, leaky_relu, leaky_relu_backward, maxpool2, maxpool2_backward,
    split_channels, upsample_nearest2, upsample_nearest2_backward, BatchNorm2d, BatchNormCache,
    BatchStats, Conv2d, DropoutMask, Mode, Parameter, Tensor,
};
use crate::error::{Error, Result};
use crate::rng::RngState;

/// `[conv3x3 -> batch norm -> leaky ReLU] x 2`, then optional dropout.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub conv_a: Conv2d,
    pub bn_a: BatchNorm2d,
    pub conv_b: Conv2d,
    pub bn_b: BatchNorm2d,
    pub dropout: f32,
}

#[derive(Debug)]
struct BlockTape {
    input: Tensor,
    bn_a: Option<BatchNormCache>,
    pre_act_a: Tensor,
    act_a: Tensor,
    bn_b: Option<BatchNormCache>,
    pre_act_b: Tensor,
    mask: Option<DropoutMask>,
}

struct BlockOutput {
    output: Tensor,
    tape: Option<BlockTape>,
    stats: Vec<BatchStats>,
}

impl ConvBlock {
    fn new(cin: usize, cout: usize, dropout: f32, spec: &ArchitectureSpec, rng: &mut RngState) -> Self {
        ConvBlock {
            conv_a: Conv2d::new(cin, cout, 3, rng),
            bn_a: BatchNorm2d::new(cout, spec.bn_eps, spec.bn_momentum),
            conv_b: Conv2d::new(cout, cout, 3, rng),
            bn_b: BatchNorm2d::new(cout, spec.bn_eps, spec.bn_momentum),
            dropout,
        }
    }

    fn norm(
        bn: &BatchNorm2d,
        x: &Tensor,
        mode: Mode,
        stats: &mut Vec<BatchStats>,
    ) -> Result<(Tensor, Option<BatchNormCache>)> {
        if mode.uses_batch_stats() {
            let (y, cache, s) = bn.forward_train(x)?;
            stats.push(s);
            Ok((y, Some(cache)))
        } else {
            Ok((bn.forward_eval(x)?, None))
        }
    }

    fn forward(
        &self,
        x: &Tensor,
        mode: Mode,
        slope: f32,
        rng: &mut RngState,
        record: bool,
    ) -> Result<BlockOutput> {
        let mut stats = Vec::with_capacity(2);
        let za = self.conv_a.forward(x)?;
        let (ya, cache_a) = Self::norm(&self.bn_a, &za, mode, &mut stats)?;
        drop(za);
        let ha = leaky_relu(&ya, slope);
        let zb = self.conv_b.forward(&ha)?;
        let (yb, cache_b) = Self::norm(&self.bn_b, &zb, mode, &mut stats)?;
        drop(zb);
        let hb = leaky_relu(&yb, slope);
        let (output, mask) = if self.dropout > 0.0 {
            dropout(&hb, self.dropout, rng, mode.dropout_active())?
        } else {
            (hb, None)
        };
        let tape = record.then(|| BlockTape {
            input: x.clone(),
            bn_a: cache_a,
            pre_act_a: ya,
            act_a: ha,
            bn_b: cache_b,
            pre_act_b: yb,
            mask,
        });
        Ok(BlockOutput {
            output,
            tape,
            stats,
        })
    }

    fn backward(&mut self, tape: BlockTape, grad_out: &Tensor, slope: f32) -> Result<Tensor> {
        let g = match &tape.mask {
            Some(mask) => mask.apply(grad_out),
            None => grad_out.clone(),
        };
        let g = leaky_relu_backward(&tape.pre_act_b, &g, slope);
        let g = self.bn_b.backward(tape.bn_b.as_ref(), &g)?;
        let g = self.conv_b.backward(&tape.act_a, &g)?;
        let g = leaky_relu_backward(&tape.pre_act_a, &g, slope);
        let g = self.bn_a.backward(tape.bn_a.as_ref(), &g)?;
        self.conv_a.backward(&tape.input, &g)
    }

    fn batch_norms_mut(&mut self) -> [&mut BatchNorm2d; 2] {
        [&mut self.bn_a, &mut self.bn_b]
    }

    fn named_parameters<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Parameter)>) {
        let [w, b] = self.conv_a.parameters();
        out.push((format!("{prefix}.conv_a.weight"), w));
        out.push((format!("{prefix}.conv_a.bias"), b));
        let [g, be] = self.bn_a.parameters();
        out.push((format!("{prefix}.bn_a.gamma"), g));
        out.push((format!("{prefix}.bn_a.beta"), be));
        let [w, b] = self.conv_b.parameters();
        out.push((format!("{prefix}.conv_b.weight"), w));
        out.push((format!("{prefix}.conv_b.bias"), b));
        let [g, be] = self.bn_b.parameters();
        out.push((format!("{prefix}.bn_b.gamma"), g));
        out.push((format!("{prefix}.bn_b.beta"), be));
    }

    fn parameters_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Parameter>) {
        out.extend(self.conv_a.parameters_mut());
        out.extend(self.bn_a.parameters_mut());
        out.extend(self.conv_b.parameters_mut());
        out.extend(self.bn_b.parameters_mut());
    }
}

/// Everything the backward pass needs from a recorded forward pass.
#[derive(Debug)]
pub struct Tape {
    encoder: Vec<BlockTape>,
    /// Input shape and argmax of each pooling step.
    pools: Vec<(Vec<usize>, Vec<u32>)>,
    decoder: Vec<BlockTape>,
    head_input: Tensor,
}

/// Encoder-decoder segmentation network with skip connections.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: ArchitectureSpec,
    encoder: Vec<ConvBlock>,
    decoder: Vec<ConvBlock>,
    head: Conv2d,
    mode: Mode,
}

impl Network {
    /// Builds a freshly initialised network; bit-reproducible for a seed.
    pub fn build(spec: ArchitectureSpec, rng: &mut RngState) -> Result<Self> {
        spec.validate()?;
        let mut encoder = Vec::with_capacity(ENCODER_BLOCKS);
        let mut cin = spec.input_channels;
        for (i, &c) in spec.encoder_channels.iter().enumerate() {
            encoder.push(ConvBlock::new(cin, c, spec.dropout_plan[i], &spec, rng));
            cin = c;
        }
        let mut decoder = Vec::with_capacity(DECODER_BLOCKS);
        for (j, &c) in spec.decoder_channels.iter().enumerate() {
            let skip = spec.encoder_channels[ENCODER_BLOCKS - 2 - j];
            let rate = spec.dropout_plan[ENCODER_BLOCKS + j];
            decoder.push(ConvBlock::new(skip + cin, c, rate, &spec, rng));
            cin = c;
        }
        let head = Conv2d::new(cin, spec.output_channels, 1, rng);
        Ok(Network {
            spec,
            encoder,
            decoder,
            head,
            mode: Mode::Train,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Overrides the dropout rate of every block (`plan` has one entry per
    /// block, encoder first).
    pub fn set_dropout_plan(&mut self, plan: &[f32]) -> Result<()> {
        let mut spec = self.spec.clone();
        spec.dropout_plan = plan.to_vec();
        spec.validate()?;
        for (block, &p) in self.encoder.iter_mut().chain(self.decoder.iter_mut()).zip(plan) {
            block.dropout = p;
        }
        self.spec = spec;
        Ok(())
    }

    /// Total number of trainable scalars.
    pub fn count_parameters(&self) -> usize {
        self.named_parameters().iter().map(|(_, p)| p.len()).sum()
    }

    /// Trainable parameters in a fixed order with stable names.
    pub fn named_parameters(&self) -> Vec<(String, &Parameter)> {
        let mut out = Vec::new();
        for (i, b) in self.encoder.iter().enumerate() {
            b.named_parameters(&format!("enc{i}"), &mut out);
        }
        for (j, b) in self.decoder.iter().enumerate() {
            b.named_parameters(&format!("dec{j}"), &mut out);
        }
        let [w, b] = self.head.parameters();
        out.push(("head.weight".into(), w));
        out.push(("head.bias".into(), b));
        out
    }

    /// Same order as [`Network::named_parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for b in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            b.parameters_mut(&mut out);
        }
        out.extend(self.head.parameters_mut());
        out
    }

    fn batch_norms(&self) -> Vec<(String, &BatchNorm2d)> {
        let mut out = Vec::new();
        for (prefix, blocks) in [("enc", &self.encoder), ("dec", &self.decoder)] {
            for (i, b) in blocks.iter().enumerate() {
                out.push((format!("{prefix}{i}.bn_a"), &b.bn_a));
                out.push((format!("{prefix}{i}.bn_b"), &b.bn_b));
            }
        }
        out
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|b| b.batch_norms_mut())
            .collect()
    }

    /// Running statistics of every batch-norm layer, in a fixed order.
    pub fn named_buffers(&self) -> Vec<(String, &[f32])> {
        let mut out = Vec::new();
        for (name, bn) in self.batch_norms() {
            out.push((format!("{name}.running_mean"), bn.running_mean.as_slice()));
            out.push((format!("{name}.running_var"), bn.running_var.as_slice()));
        }
        out
    }

    /// Mutable view of the buffers in [`Network::named_buffers`] order.
    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = Vec::new();
        for bn in self.batch_norms_mut() {
            out.push(&mut bn.running_mean);
            out.push(&mut bn.running_var);
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.spec.input_channels {
            return Err(Error::shape(format!(
                "network expects {} input channel(s), got {c}",
                self.spec.input_channels
            )));
        }
        if h % SPATIAL_MULTIPLE != 0 || w % SPATIAL_MULTIPLE != 0 {
            let up = |v: usize| v.div_ceil(SPATIAL_MULTIPLE) * SPATIAL_MULTIPLE;
            return Err(Error::shape(format!(
                "input {h}x{w} is not divisible by {SPATIAL_MULTIPLE}; pad it to {}x{}",
                up(h),
                up(w)
            )));
        }
        Ok(())
    }

    fn run(
        &self,
        x: &Tensor,
        mode: Mode,
        rng: &mut RngState,
        record: bool,
    ) -> Result<(Tensor, Option<Tape>, Vec<BatchStats>)> {
        self.check_input(x)?;
        let slope = self.spec.leaky_slope;
        let mut stats = Vec::new();
        let mut enc_tapes = Vec::new();
        let mut pools = Vec::new();
        let mut skips = Vec::with_capacity(ENCODER_BLOCKS - 1);
        let mut h = x.clone();
        for (i, block) in self.encoder.iter().enumerate() {
            let out = block.forward(&h, mode, slope, rng, record)?;
            stats.extend(out.stats);
            enc_tapes.extend(out.tape);
            if i + 1 < ENCODER_BLOCKS {
                let pooled = maxpool2(&out.output)?;
                if record {
                    pools.push((out.output.shape().to_vec(), pooled.argmax));
                }
                skips.push(out.output);
                h = pooled.output;
            } else {
                h = out.output;
            }
        }
        let mut dec_tapes = Vec::new();
        for (j, block) in self.decoder.iter().enumerate() {
            let up = upsample_nearest2(&h)?;
            let merged = concat_channels(&skips[ENCODER_BLOCKS - 2 - j], &up)?;
            drop(up);
            let out = block.forward(&merged, mode, slope, rng, record)?;
            stats.extend(out.stats);
            dec_tapes.extend(out.tape);
            h = out.output;
        }
        let logits = self.head.forward(&h)?;
        let tape = record.then(|| Tape {
            encoder: enc_tapes,
            pools,
            decoder: dec_tapes,
            head_input: h,
        });
        Ok((logits, tape, stats))
    }

    fn apply_stats(&mut self, stats: &[BatchStats]) {
        for (bn, s) in self.batch_norms_mut().into_iter().zip(stats) {
            bn.update_running(s);
        }
    }

    /// Forward pass in the current mode, returning logits `[N, C, H, W]`
    /// (no softmax). In train mode the batch-norm running statistics are
    /// updated.
    pub fn forward(&mut self, x: &Tensor, rng: &mut RngState) -> Result<Tensor> {
        let (logits, _, stats) = self.run(x, self.mode, rng, false)?;
        if self.mode == Mode::Train {
            self.apply_stats(&stats);
        }
        Ok(logits)
    }

    /// Read-only forward pass for eval and MC-sample modes.
    pub fn infer(&self, x: &Tensor, rng: &mut RngState) -> Result<Tensor> {
        if self.mode == Mode::Train {
            return Err(Error::invalid(
                "infer() needs eval or mc-sample mode; use forward() for training",
            ));
        }
        Ok(self.run(x, self.mode, rng, false)?.0)
    }

    /// Train-mode forward pass that records what [`Network::backward`] needs.
    pub fn forward_with_tape(&mut self, x: &Tensor, rng: &mut RngState) -> Result<(Tensor, Tape)> {
        if self.mode != Mode::Train {
            return Err(Error::invalid("gradients are only available in train mode"));
        }
        let (logits, tape, stats) = self.run(x, Mode::Train, rng, true)?;
        self.apply_stats(&stats);
        Ok((logits, tape.expect("tape recorded")))
    }

    /// Accumulates parameter gradients for `grad_logits` and returns the
    /// gradient with respect to the input.
    pub fn backward(&mut self, tape: Tape, grad_logits: &Tensor) -> Result<Tensor> {
        let slope = self.spec.leaky_slope;
        let Tape {
            mut encoder,
            mut pools,
            mut decoder,
            head_input,
        } = tape;
        let mut g = self.head.backward(&head_input, grad_logits)?;
        drop(head_input);
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; ENCODER_BLOCKS - 1];
        for j in (0..DECODER_BLOCKS).rev() {
            let block_tape = decoder.pop().expect("decoder tape");
            let g_merged = self.decoder[j].backward(block_tape, &g, slope)?;
            let skip_idx = ENCODER_BLOCKS - 2 - j;
            let (g_skip, g_up) = split_channels(&g_merged, self.spec.encoder_channels[skip_idx])?;
            skip_grads[skip_idx] = Some(g_skip);
            g = upsample_nearest2_backward(&g_up)?;
        }
        for i in (0..ENCODER_BLOCKS).rev() {
            if i + 1 < ENCODER_BLOCKS {
                let (shape, argmax) = pools.pop().expect("pool tape");
                g = maxpool2_backward(&shape, &argmax, &g)?;
                let skip = skip_grads[i].take().expect("skip gradient");
                for (a, b) in g.data_mut().iter_mut().zip(skip.data()) {
                    *a += *b;
                }
            }
            let block_tape = encoder.pop().expect("encoder tape");
            g = self.encoder[i].backward(block_tape, &g, slope)?;
        }
        Ok(g)
    }
}
