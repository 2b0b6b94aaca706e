//! End-to-end synthetic experiment: generate a corpus, train U2-Net and the
//! single-site U-Net baseline identically, evaluate both on test A and sweep
//! the MC sample count on validation data.

use crate::bayes::{mc_predict_stack, mc_sweep};
use crate::data::{
    generate_corpus, make_splits, CorpusParams, Disease, Geometry, Split, SplitCounts, SplitManifest,
    Volume,
};
use crate::engine::{Mode, Tensor};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, pr_auc, EvalReport, SweepRow, VolumeOutcome};
use crate::model::{Network, Variant};
use crate::postprocess::{disruption_labels, disruption_scores, SegmentationMask};
use crate::rng::RngState;
use crate::train::{eval_probability, train_with, EpochLog, TrainConfig, TrainHistory};
use std::collections::BTreeMap;

/// Sample counts of the T-sweep.
pub const SWEEP_T: [usize; 6] = [1, 2, 5, 10, 20, 50];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub volumes: usize,
    pub geometry: Geometry,
    pub train: TrainConfig,
    /// MC samples for test-set evaluation.
    pub samples: usize,
    pub sweep: Vec<usize>,
    pub threads: usize,
}

impl ExperimentConfig {
    /// Desk-scale settings used by the acceptance suite.
    pub fn desk(seed: u64) -> Self {
        ExperimentConfig {
            volumes: 60,
            geometry: Geometry {
                bscans: 8,
                rows: 64,
                cols: 64,
            },
            train: TrainConfig {
                base_width: 8,
                max_epochs: 20,
                lr0: 1e-3,
                seed,
                ..TrainConfig::default()
            },
            samples: 10,
            sweep: SWEEP_T.to_vec(),
            threads: 1,
        }
    }
}

/// Generated corpus with its split.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub volumes: Vec<Volume>,
    pub manifest: SplitManifest,
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<Volume> {
        let by_id: BTreeMap<&str, &Volume> = self.volumes.iter().map(|v| (v.id.as_str(), v)).collect();
        self.manifest
            .ids(split)
            .iter()
            .map(|id| by_id[id.as_str()].clone())
            .collect()
    }
}

/// Split counts for a corpus: the default proportions scaled to its size.
pub fn corpus_split_counts(params: &CorpusParams) -> SplitCounts {
    let ga: usize = params
        .counts
        .iter()
        .filter(|(d, _)| *d == Disease::LateAmdGa)
        .map(|(_, n)| n)
        .sum();
    SplitCounts::scaled(params.total() - ga, ga)
}

/// Generates and splits a corpus. Volumes draw from `seed`'s stream 0, the
/// split from stream 1.
pub fn build_corpus(params: &CorpusParams, seed: u64) -> Result<Corpus> {
    let rng = RngState::new(seed);
    let volumes = generate_corpus(params, &rng.derive(0))?;
    let pairs: Vec<_> = volumes.iter().map(|v| (v.id.clone(), v.disease)).collect();
    let manifest = make_splits(&pairs, corpus_split_counts(params), &mut rng.derive(1))?;
    Ok(Corpus { volumes, manifest })
}

/// Predictions for every volume: `samples` MC passes per B-scan in
/// mc-sample mode, a single deterministic pass (zero std) in eval mode.
pub fn predict_volumes(
    net: &Network,
    volumes: &[Volume],
    samples: usize,
    rng: &RngState,
    threads: usize,
) -> Result<Vec<VolumeOutcome>> {
    volumes
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (mean_prob, epistemic_std) = if net.mode() == Mode::Eval {
                let p = eval_probability(net, &v.image)?;
                let z = Tensor::zeros(p.shape());
                (p, z)
            } else {
                mc_predict_stack(net, &v.image, samples, &rng.derive(i as u64), threads)?
            };
            Ok(VolumeOutcome {
                id: v.id.clone(),
                mean_prob,
                epistemic_std,
                truth: v.mask.clone(),
            })
        })
        .collect()
}

/// Photoreceptor and disruption AUC at each sample count, from one pass of
/// `max(ts)` samples per B-scan.
pub fn sweep_auc(net: &Network, volumes: &[Volume], ts: &[usize], rng: &RngState) -> Result<Vec<SweepRow>> {
    let mut pixel: Vec<(Vec<f32>, Vec<bool>)> = vec![(Vec::new(), Vec::new()); ts.len()];
    let mut cols: Vec<(Vec<f32>, Vec<bool>)> = vec![(Vec::new(), Vec::new()); ts.len()];
    for (i, v) in volumes.iter().enumerate() {
        let vr = rng.derive(i as u64);
        for b in 0..v.bscans() {
            let img = v.image.index_axis0(b)?;
            let truth = SegmentationMask::from_binary(&v.mask.index_axis0(b)?)?;
            let labels: Vec<bool> = truth.data.iter().map(|&x| x != 0).collect();
            let col_labels = disruption_labels(&truth);
            let snaps = mc_sweep(net, &img, ts, &vr.derive(b as u64))?;
            for (k, s) in snaps.iter().enumerate() {
                pixel[k].0.extend_from_slice(s.mean_prob.data());
                pixel[k].1.extend_from_slice(&labels);
                cols[k].0.extend(disruption_scores(&s.mean_prob)?);
                cols[k].1.extend_from_slice(&col_labels);
            }
        }
    }
    ts.iter()
        .enumerate()
        .map(|(k, &t)| {
            let disruption = if cols[k].1.iter().any(|&l| l) {
                Some(pr_auc(&cols[k].0, &cols[k].1)?.1)
            } else {
                None
            };
            Ok(SweepRow {
                samples: t,
                photoreceptor_auc: pr_auc(&pixel[k].0, &pixel[k].1)?.1,
                disruption_auc: disruption,
            })
        })
        .collect()
}

/// Mean epistemic std on layer-edge pixels (layer pixels with a background
/// 4-neighbour) and on interior layer pixels at least two pixels from every
/// edge pixel, i.e. with no background in their 5×5 neighbourhood. Pixels
/// outside the image count as layer so the band is not cut at the borders.
/// Pooled over outcomes.
pub fn boundary_interior_uncertainty(outcomes: &[VolumeOutcome]) -> Result<(f64, f64)> {
    let (mut sb, mut nb, mut si, mut ni) = (0.0f64, 0usize, 0.0f64, 0usize);
    for o in outcomes {
        let (bs, h, w) = match *o.truth.shape() {
            [b, h, w] => (b, h, w),
            _ => return Err(Error::shape("truth must be [B, H, W]")),
        };
        let t = o.truth.data();
        let s = o.epistemic_std.data();
        for b in 0..bs {
            let at = |r: isize, c: isize| -> bool {
                r < 0
                    || c < 0
                    || r >= h as isize
                    || c >= w as isize
                    || t[(b * h + r as usize) * w + c as usize] != 0.0
            };
            for r in 0..h as isize {
                for c in 0..w as isize {
                    if !at(r, c) {
                        continue;
                    }
                    let idx = (b * h + r as usize) * w + c as usize;
                    let edge = !at(r - 1, c) || !at(r + 1, c) || !at(r, c - 1) || !at(r, c + 1);
                    let deep = (-2..=2).all(|dr| (-2..=2).all(|dc| at(r + dr, c + dc)));
                    if edge {
                        sb += s[idx] as f64;
                        nb += 1;
                    } else if deep {
                        si += s[idx] as f64;
                        ni += 1;
                    }
                }
            }
        }
    }
    if nb == 0 || ni == 0 {
        return Err(Error::invalid("no boundary or interior layer pixels to compare"));
    }
    Ok((sb / nb as f64, si / ni as f64))
}

/// Everything one seed of the experiment produces.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub seed: u64,
    pub u2net_history: TrainHistory,
    pub unet_history: TrainHistory,
    /// U2-Net with MC sampling on test A.
    pub u2net: EvalReport,
    /// Single-site U-Net, deterministic, on test A.
    pub unet: EvalReport,
    /// (boundary, interior) mean std under MC sampling on test A.
    pub u2net_boundary: (f64, f64),
    pub unet_boundary: (f64, f64),
    /// U2-Net AUCs on the validation split per sample count.
    pub sweep: Vec<SweepRow>,
}

pub fn run_experiment(cfg: &ExperimentConfig, mut log: impl FnMut(&str)) -> Result<ExperimentResult> {
    let seed = cfg.train.seed;
    let corpus = build_corpus(&CorpusParams::new(cfg.volumes, cfg.geometry), seed)?;
    let train_set = corpus.split(Split::Train);
    let val_set = corpus.split(Split::Val);
    let test_a = corpus.split(Split::TestA);
    let eval_rng = RngState::new(seed).derive(3);

    let mut fit = |variant: Variant| -> Result<(Network, TrainHistory)> {
        let c = TrainConfig {
            variant,
            ..cfg.train.clone()
        };
        let out = train_with(&c, &train_set, &val_set, |e: &EpochLog| {
            log(&format!(
                "seed {seed} {variant} epoch {} loss {:.4} val_dice {:.4} lr {:e}",
                e.epoch, e.loss, e.val_dice, e.lr
            ))
        })?;
        Ok((out.best, out.history))
    };
    let (mut u2, u2_hist) = fit(Variant::U2Net)?;
    let (mut unet, unet_hist) = fit(Variant::UNet)?;

    u2.set_mode(Mode::McSample);
    let u2_out = predict_volumes(&u2, &test_a, cfg.samples, &eval_rng, cfg.threads)?;
    let u2_report = evaluate(&u2_out)?;
    let u2_boundary = boundary_interior_uncertainty(&u2_out)?;

    unet.set_mode(Mode::Eval);
    let unet_report = evaluate(&predict_volumes(&unet, &test_a, 1, &eval_rng, cfg.threads)?)?;
    unet.set_mode(Mode::McSample);
    let unet_mc = predict_volumes(&unet, &test_a, cfg.samples, &eval_rng, cfg.threads)?;
    let unet_boundary = boundary_interior_uncertainty(&unet_mc)?;

    let sweep = sweep_auc(&u2, &val_set, &cfg.sweep, &eval_rng.derive(1))?;
    Ok(ExperimentResult {
        seed,
        u2net_history: u2_hist,
        unet_history: unet_hist,
        u2net: u2_report,
        unet: unet_report,
        u2net_boundary: u2_boundary,
        unet_boundary,
        sweep,
    })
}
