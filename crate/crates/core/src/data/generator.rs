//! Synthetic OCT-like B-scans with an exact photoreceptor-band mask.
//!
//! Rendering uses only additions, multiplications and divisions on values
//! drawn from [`RngState`], so a seed gives the same volume on every
//! IEEE-754 platform.

use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::model::SPATIAL_MULTIPLE;
use crate::postprocess::{disruption_labels, SegmentationMask};
use crate::rng::RngState;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Disease {
    Dme,
    Rvo,
    EarlyAmd,
    LateAmdGa,
}

impl Disease {
    pub const ALL: [Disease; 4] = [Disease::Dme, Disease::Rvo, Disease::EarlyAmd, Disease::LateAmdGa];

    pub fn name(self) -> &'static str {
        match self {
            Disease::Dme => "DME",
            Disease::Rvo => "RVO",
            Disease::EarlyAmd => "earlyAMD",
            Disease::LateAmdGa => "lateAMD-GA",
        }
    }
}

impl fmt::Display for Disease {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Disease {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Disease::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown disease tag {s:?}")))
    }
}

/// Volume size: `bscans` images of `rows` × `cols`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub bscans: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Geometry {
    /// Parses `ROWSxCOLS`.
    pub fn parse_image(s: &str, bscans: usize) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::invalid(format!("geometry {s:?} is not ROWSxCOLS")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("geometry {s:?} is not ROWSxCOLS")))
        };
        Ok(Geometry {
            bscans,
            rows: parse(r)?,
            cols: parse(c)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.bscans == 0 {
            return Err(Error::invalid("a volume needs at least one B-scan"));
        }
        if self.rows == 0
            || self.cols == 0
            || !self.rows.is_multiple_of(SPATIAL_MULTIPLE)
            || !self.cols.is_multiple_of(SPATIAL_MULTIPLE)
        {
            return Err(Error::invalid(format!(
                "B-scan size {}x{} must be a positive multiple of {SPATIAL_MULTIPLE}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub geometry: Geometry,
    /// Band thickness range in pixels.
    pub band_thickness: (f64, f64),
    /// Expected fraction of disrupted A-scans per B-scan.
    pub disruption_rate: f64,
    /// Expected fraction of A-scans under a vessel shadow.
    pub shadow_rate: f64,
    /// Mean speckle strength; each volume draws its own level around it.
    pub noise_level: f64,
    pub disease: Disease,
    /// Label vessel-shadow columns as disrupted (their mask is removed).
    /// Off by default: shadowed columns keep the layer.
    pub shadows_are_disruptions: bool,
}

impl GeneratorParams {
    /// Desk-scale defaults for `geometry`: thickness scales with the row
    /// count.
    pub fn new(geometry: Geometry, disease: Disease) -> Self {
        let r = geometry.rows as f64;
        GeneratorParams {
            geometry,
            band_thickness: ((r / 16.0).max(2.0), (r / 8.0).max(3.0)),
            disruption_rate: 0.08,
            shadow_rate: 0.06,
            noise_level: 0.25,
            disease,
            shadows_are_disruptions: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let (lo, hi) = self.band_thickness;
        if !(2.0..=self.geometry.rows as f64 / 2.0).contains(&lo) || hi < lo || hi > self.geometry.rows as f64 / 2.0 {
            return Err(Error::invalid(format!(
                "band thickness range {lo}..{hi} must satisfy 2 <= min <= max <= rows/2"
            )));
        }
        if !(0.0..1.0).contains(&self.disruption_rate) {
            return Err(Error::invalid(format!(
                "disruption rate must be in [0, 1), got {}",
                self.disruption_rate
            )));
        }
        if !(0.0..1.0).contains(&self.shadow_rate) {
            return Err(Error::invalid(format!(
                "shadow rate must be in [0, 1), got {}",
                self.shadow_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::invalid(format!(
                "noise level must be in [0, 1], got {}",
                self.noise_level
            )));
        }
        Ok(())
    }
}

/// One generated volume. Tensors are `[B, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub id: String,
    pub disease: Disease,
    pub image: Tensor,
    pub mask: Tensor,
    /// Per B-scan, whether each A-scan is disrupted (empty mask column).
    pub disrupted_columns: Vec<Vec<bool>>,
    /// Speckle strength actually used.
    pub noise: f64,
    /// Band contrast actually used.
    pub contrast: f64,
}

impl Volume {
    pub fn bscans(&self) -> usize {
        self.image.shape()[0]
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Smooth random curve over `n` columns: knots every `spacing` columns,
/// blended with smoothstep.
fn smooth_curve(n: usize, spacing: usize, lo: f64, hi: f64, rng: &mut RngState) -> Vec<f64> {
    let spacing = spacing.max(1);
    let knots: Vec<f64> = (0..n / spacing + 2).map(|_| rng.range_f64(lo, hi)).collect();
    (0..n)
        .map(|c| {
            let k = c / spacing;
            let t = (c % spacing) as f64 / spacing as f64;
            let s = smoothstep(t);
            knots[k] * (1.0 - s) + knots[k + 1] * s
        })
        .collect()
}

/// Compact smooth bump, 1 at the centre and 0 beyond `radius`.
fn bump(d: f64, radius: f64) -> f64 {
    let x = d / radius;
    if x.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - x * x;
        q * q
    }
}

fn binomial(n: usize, p: f64, rng: &mut RngState) -> usize {
    (0..n).filter(|_| rng.bernoulli(p)).count()
}

/// Number of trials up to the first success, `p` per trial.
fn geometric(p: f64, rng: &mut RngState) -> usize {
    let mut k = 1;
    while !rng.bernoulli(p) {
        k += 1;
    }
    k
}

/// Places `total` disrupted columns among `width` as separated contiguous
/// runs with geometric lengths (mean `mean_run`), uniformly over the valid
/// arrangements of the chosen run lengths.
pub(crate) fn disruption_runs(width: usize, total: usize, mean_run: f64, rng: &mut RngState) -> Vec<bool> {
    let mut out = vec![false; width];
    if total == 0 {
        return out;
    }
    let mut runs = Vec::new();
    let mut left = total;
    while left > 0 {
        let len = geometric(1.0 / mean_run, rng).min(left);
        runs.push(len);
        left -= len;
    }
    // Runs need a gap between them; merge until they fit.
    while runs.len() > 1 && total + runs.len() - 1 > width {
        let last = runs.pop().unwrap_or(0);
        runs[0] += last;
    }
    let r = runs.len();
    let free = width - total - (r - 1);
    // Stars and bars: r bar positions among free + r slots.
    let mut slots: Vec<usize> = (0..free + r).collect();
    for i in 0..r {
        let j = i + rng.below((slots.len() - i) as u64) as usize;
        slots.swap(i, j);
    }
    let mut bars = slots[..r].to_vec();
    bars.sort_unstable();
    let mut col = 0;
    let mut prev = 0;
    for (i, (&bar, &len)) in bars.iter().zip(&runs).enumerate() {
        let gap = bar - prev + if i == 0 { 0 } else { 1 };
        prev = bar + 1;
        col += gap;
        out[col..col + len].iter_mut().for_each(|v| *v = true);
        col += len;
    }
    out
}

/// Renders one volume.
pub fn generate_volume(id: &str, params: &GeneratorParams, rng: &mut RngState) -> Result<Volume> {
    params.validate()?;
    let Geometry { bscans, rows, cols } = params.geometry;
    let (h, w) = (rows as f64, cols as f64);
    let noise = params.noise_level * rng.range_f64(0.4, 1.6);
    let contrast = rng.range_f64(0.45, 1.0);
    let base_center = h * rng.range_f64(0.5, 0.62);
    let mut image = Vec::with_capacity(bscans * rows * cols);
    let mut mask = Vec::with_capacity(bscans * rows * cols);
    let mut disrupted_columns = Vec::with_capacity(bscans);

    for _ in 0..bscans {
        let spacing = (cols / 4).max(4);
        let mut center = smooth_curve(cols, spacing, base_center - 0.06 * h, base_center + 0.06 * h, rng);
        let thickness = smooth_curve(cols, spacing, params.band_thickness.0, params.band_thickness.1, rng);
        let ilm = smooth_curve(cols, spacing, 0.12 * h, 0.25 * h, rng);

        if params.disease == Disease::EarlyAmd {
            for _ in 0..1 + rng.below(3) as usize {
                let c0 = rng.range_f64(0.0, w);
                let radius = rng.range_f64(w / 40.0 + 3.0, w / 16.0 + 4.0);
                let height = rng.range_f64(0.02, 0.05) * h;
                for (c, v) in center.iter_mut().enumerate() {
                    *v -= height * bump(c as f64 + 0.5 - c0, radius);
                }
            }
        }

        let mean_run = (w / 32.0).max(2.0);
        let count = binomial(cols, params.disruption_rate, rng);
        let mut disrupted = disruption_runs(cols, count, mean_run, rng);
        let mut atrophy = vec![false; cols];
        if params.disease == Disease::LateAmdGa {
            for _ in 0..1 + rng.below(2) as usize {
                let len = (w * rng.range_f64(1.0 / 16.0, 1.0 / 6.0)) as usize;
                let start = rng.below((cols - len.min(cols - 1)) as u64) as usize;
                for c in start..(start + len).min(cols) {
                    disrupted[c] = true;
                    atrophy[c] = true;
                }
            }
        }

        // Columns next to a disruption keep a thinner, fainter layer that
        // fades out over `taper` columns.
        let taper = mean_run.ceil() as usize;
        let mut fade = vec![1.0f64; cols];
        for c in (0..cols).filter(|&c| !disrupted[c]) {
            let lo = c.saturating_sub(taper);
            let hi = (c + taper).min(cols - 1);
            if let Some(d) = (lo..=hi).filter(|&k| disrupted[k]).map(|k| k.abs_diff(c)).min() {
                fade[c] = d as f64 / (taper + 1) as f64;
            }
        }

        let mut shadow = vec![1.0f64; cols];
        let mean_width = 3.0;
        for _ in 0..binomial(cols, params.shadow_rate / mean_width, rng) {
            let c0 = rng.below(cols as u64) as usize;
            let width = 2 + rng.below(3) as usize;
            let factor = rng.range_f64(0.25, 0.55);
            for c in c0..(c0 + width).min(cols) {
                shadow[c] = shadow[c].min(factor);
            }
        }

        let mut cysts = Vec::new();
        if matches!(params.disease, Disease::Dme | Disease::Rvo) {
            for _ in 0..rng.below(4) as usize + 1 {
                let c0 = rng.range_f64(0.0, w);
                let ci = (c0 as usize).min(cols - 1);
                let ry = rng.range_f64(0.025, 0.06) * h;
                let rx = ry * rng.range_f64(1.0, 2.5);
                let top = ilm[ci] + ry + 1.0;
                let bottom = center[ci] - thickness[ci] / 2.0 - ry - 1.0;
                if bottom > top {
                    cysts.push((rng.range_f64(top, bottom), c0, ry, rx));
                }
            }
        }

        let mut plane_mask = vec![0.0f32; rows * cols];
        for r in 0..rows {
            let y = r as f64 + 0.5;
            for c in 0..cols {
                let x = c as f64 + 0.5;
                let half = thickness[c] * (0.5 + 0.5 * fade[c]) / 2.0;
                let d = (y - center[c]).abs();
                let unlabeled = disrupted[c] || (params.shadows_are_disruptions && shadow[c] < 1.0);
                let in_band = d < half && !unlabeled;
                // Soft edge: profile 0.5 exactly at the mask boundary.
                let edge = 1.2;
                let profile = if disrupted[c] {
                    0.12 * smoothstep((half - d) / edge + 0.5)
                } else {
                    (0.3 + 0.7 * fade[c]) * smoothstep((half - d) / edge + 0.5)
                };
                let below = y > center[c] + half;
                let mut v = if y < ilm[c] {
                    0.04
                } else if !below {
                    0.22 + 0.06 * ((r * 7 + c * 3) % 5) as f64 / 5.0 * smoothstep((y - ilm[c]) / 4.0)
                } else {
                    let rpe = bump(y - (center[c] + half + 2.0), 2.5);
                    let choroid = if atrophy[c] { 0.55 } else { 0.26 };
                    choroid + 0.35 * rpe * if atrophy[c] { 0.3 } else { 1.0 }
                };
                v += (0.9 * contrast) * profile;
                for &(cy, cx, ry, rx) in &cysts {
                    let (dy, dx) = ((y - cy) / ry, (x - cx) / rx);
                    let e = dy * dy + dx * dx;
                    if e < 1.0 {
                        v *= 0.15 + 0.85 * e * e;
                    }
                }
                if y >= ilm[c] {
                    v *= shadow[c];
                }
                v *= 1.0 + noise * rng.approx_normal();
                v += 0.03 * rng.approx_normal();
                image.push(v.clamp(0.0, 1.0) as f32);
                if in_band {
                    plane_mask[r * cols + c] = 1.0;
                }
            }
        }
        let m = SegmentationMask::from_binary(&Tensor::new(&[rows, cols], plane_mask.clone())?)?;
        disrupted_columns.push(disruption_labels(&m));
        mask.extend(plane_mask);
    }

    Ok(Volume {
        id: id.to_string(),
        disease: params.disease,
        image: Tensor::new(&[bscans, rows, cols], image)?,
        mask: Tensor::new(&[bscans, rows, cols], mask)?,
        disrupted_columns,
        noise,
        contrast,
    })
}

/// Disease mix of a generated corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusParams {
    pub counts: Vec<(Disease, usize)>,
    pub geometry: Geometry,
    pub band_thickness: Option<(f64, f64)>,
    pub disruption_rate: f64,
    pub shadow_rate: f64,
    pub noise_level: f64,
    pub shadows_are_disruptions: bool,
}

impl CorpusParams {
    /// `volumes` split as 16 DME : 24 RVO : 10 early AMD : 10 GA.
    pub fn new(volumes: usize, geometry: Geometry) -> Self {
        let ga = (volumes + 3) / 6;
        let rest = volumes - ga;
        let dme = (rest * 16 + 25) / 50;
        let amd = (rest * 10 + 25) / 50;
        let defaults = GeneratorParams::new(geometry, Disease::Dme);
        CorpusParams {
            counts: vec![
                (Disease::Dme, dme),
                (Disease::Rvo, rest - dme - amd),
                (Disease::EarlyAmd, amd),
                (Disease::LateAmdGa, ga),
            ],
            geometry,
            band_thickness: None,
            disruption_rate: defaults.disruption_rate,
            shadow_rate: defaults.shadow_rate,
            noise_level: defaults.noise_level,
            shadows_are_disruptions: false,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|(_, n)| n).sum()
    }

    pub fn volume_params(&self, disease: Disease) -> GeneratorParams {
        let mut p = GeneratorParams::new(self.geometry, disease);
        if let Some(t) = self.band_thickness {
            p.band_thickness = t;
        }
        p.disruption_rate = self.disruption_rate;
        p.shadow_rate = self.shadow_rate;
        p.noise_level = self.noise_level;
        p.shadows_are_disruptions = self.shadows_are_disruptions;
        p
    }
}

pub fn volume_id(index: usize) -> String {
    format!("vol{index:03}")
}

/// Generates every volume of a corpus. Volume `i` draws from
/// `rng.derive(i)`, so volumes are independent of each other.
pub fn generate_corpus(params: &CorpusParams, rng: &RngState) -> Result<Vec<Volume>> {
    let mut out = Vec::with_capacity(params.total());
    for (disease, n) in &params.counts {
        for _ in 0..*n {
            let i = out.len();
            let mut r = rng.derive(i as u64);
            out.push(generate_volume(&volume_id(i), &params.volume_params(*disease), &mut r)?);
        }
    }
    Ok(out)
}
