//! On-disk dataset layout:
//!
//! ```text
//! <root>/generator.txt            generator parameters
//! <root>/manifest.txt             split manifest
//! <root>/volumes/<id>.image.tnsr  [B, H, W] intensities
//! <root>/volumes/<id>.mask.tnsr   [B, H, W] binary masks
//! <root>/volumes/<id>.meta.txt    disease, noise, contrast
//! ```

use super::format::{create_dir, load_tensor, parse_key_values, read_text, save_tensor, write_text};
use super::generator::{CorpusParams, Disease, Volume};
use super::splits::{Split, SplitManifest};
use crate::error::{Error, Result};
use crate::postprocess::{disruption_labels, SegmentationMask};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const GENERATOR_FILE: &str = "generator.txt";
pub const VOLUME_DIR: &str = "volumes";

pub fn generator_text(params: &CorpusParams, seed: u64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed={seed}");
    let g = params.geometry;
    let _ = writeln!(s, "bscans={}", g.bscans);
    let _ = writeln!(s, "geometry={}x{}", g.rows, g.cols);
    let t = params.volume_params(Disease::Dme).band_thickness;
    let _ = writeln!(s, "band_thickness={},{}", t.0, t.1);
    let _ = writeln!(s, "disruption_rate={}", params.disruption_rate);
    let _ = writeln!(s, "shadow_rate={}", params.shadow_rate);
    let _ = writeln!(s, "noise_level={}", params.noise_level);
    let _ = writeln!(s, "shadows_are_disruptions={}", params.shadows_are_disruptions);
    for (d, n) in &params.counts {
        let _ = writeln!(s, "volumes.{}={n}", d.name());
    }
    s
}

fn volume_path(root: &Path, id: &str, suffix: &str) -> PathBuf {
    root.join(VOLUME_DIR).join(format!("{id}.{suffix}"))
}

/// Writes volumes, manifest and generator log under `root`.
pub fn write_dataset(
    root: &Path,
    volumes: &[Volume],
    manifest: &SplitManifest,
    generator: &str,
) -> Result<()> {
    create_dir(&root.join(VOLUME_DIR))?;
    for v in volumes {
        save_tensor(volume_path(root, &v.id, "image.tnsr"), &v.image)?;
        save_tensor(volume_path(root, &v.id, "mask.tnsr"), &v.mask)?;
        let meta = format!(
            "id={}\ndisease={}\nnoise={}\ncontrast={}\n",
            v.id, v.disease, v.noise, v.contrast
        );
        write_text(&volume_path(root, &v.id, "meta.txt"), &meta)?;
    }
    write_text(&root.join(MANIFEST_FILE), &manifest.to_text())?;
    write_text(&root.join(GENERATOR_FILE), generator)
}

/// A dataset directory with its manifest loaded.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: SplitManifest,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(Error::invalid(format!(
                "{} is not a dataset (missing {MANIFEST_FILE})",
                root.display()
            )));
        }
        let manifest = SplitManifest::parse(&read_text(&path)?, &path)?;
        Ok(Dataset { root, manifest })
    }

    pub fn ids(&self, split: Split) -> &[String] {
        self.manifest.ids(split)
    }

    pub fn load_volume(&self, id: &str) -> Result<Volume> {
        let image = load_tensor(volume_path(&self.root, id, "image.tnsr"))?;
        let mask = load_tensor(volume_path(&self.root, id, "mask.tnsr"))?;
        if image.shape() != mask.shape() || image.shape().len() != 3 {
            return Err(Error::format(
                volume_path(&self.root, id, "mask.tnsr"),
                format!("image {:?} and mask {:?} disagree", image.shape(), mask.shape()),
            ));
        }
        let meta_path = volume_path(&self.root, id, "meta.txt");
        let meta: BTreeMap<String, String> = parse_key_values(&read_text(&meta_path)?, &meta_path)?;
        let field = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::format(&meta_path, format!("missing {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            field(k)?
                .parse()
                .map_err(|_| Error::format(&meta_path, format!("bad {k}")))
        };
        let mut disrupted_columns = Vec::with_capacity(mask.shape()[0]);
        for b in 0..mask.shape()[0] {
            disrupted_columns.push(disruption_labels(&SegmentationMask::from_binary(&mask.index_axis0(b)?)?));
        }
        Ok(Volume {
            id: id.to_string(),
            disease: field("disease")?.parse()?,
            noise: num("noise")?,
            contrast: num("contrast")?,
            image,
            mask,
            disrupted_columns,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Volume>> {
        self.ids(split).iter().map(|id| self.load_volume(id)).collect()
    }
}
