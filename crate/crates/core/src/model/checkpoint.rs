//! Checkpoint directories: `manifest.txt` plus one tensor container per
//! parameter and per batch-norm running statistic.
//!
//! The manifest is `key=value` text. Architecture keys come first, then one
//! `entry=<index> <name> <kind>` line per file in load order; each entry is
//! stored as `<index>_<name>.tnsr`.

use super::network::Network;
use super::spec::{ArchitectureSpec, Variant};
use crate::data::format::{create_dir, load_tensor, read_text, save_tensor, write_text};
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::rng::RngState;
use std::fmt::Write as _;
use std::path::Path;

pub const MANIFEST: &str = "manifest.txt";

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn manifest_text(net: &Network) -> String {
    let s = net.spec();
    let mut out = String::new();
    let _ = writeln!(out, "format=uncertseg-checkpoint");
    let _ = writeln!(out, "version=1");
    let _ = writeln!(out, "variant={}", s.variant);
    let _ = writeln!(out, "encoder_channels={}", join(&s.encoder_channels));
    let _ = writeln!(out, "decoder_channels={}", join(&s.decoder_channels));
    let _ = writeln!(out, "input_channels={}", s.input_channels);
    let _ = writeln!(out, "output_channels={}", s.output_channels);
    let _ = writeln!(out, "leaky_slope={}", s.leaky_slope);
    let _ = writeln!(out, "bn_eps={}", s.bn_eps);
    let _ = writeln!(out, "bn_momentum={}", s.bn_momentum);
    let _ = writeln!(out, "dropout_plan={}", join(&s.dropout_plan));
    let _ = writeln!(out, "dropout_sites={}", s.dropout_sites().len());
    let _ = writeln!(out, "parameter_count={}", net.count_parameters());
    for (i, name) in entry_names(net).iter().enumerate() {
        let kind = if name.contains(".running_") { "buffer" } else { "param" };
        let _ = writeln!(out, "entry={i:03} {name} {kind}");
    }
    out
}

fn entry_names(net: &Network) -> Vec<String> {
    net.named_parameters()
        .into_iter()
        .map(|(n, _)| n)
        .chain(net.named_buffers().into_iter().map(|(n, _)| n))
        .collect()
}

/// Writes `net` into directory `dir` (created if needed).
pub fn save_checkpoint(net: &Network, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    write_text(&dir.join(MANIFEST), &manifest_text(net))?;
    let mut index = 0usize;
    for (name, p) in net.named_parameters() {
        save_tensor(dir.join(format!("{index:03}_{name}.tnsr")), &p.value)?;
        index += 1;
    }
    for (name, buf) in net.named_buffers() {
        let t = Tensor::new(&[buf.len()], buf.to_vec())?;
        save_tensor(dir.join(format!("{index:03}_{name}.tnsr")), &t)?;
        index += 1;
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(value: &str, key: &str, path: &Path) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|_| Error::format(path, format!("bad value in {key}: {v:?}")))
        })
        .collect()
}

fn spec_from_manifest(text: &str, path: &Path) -> Result<(ArchitectureSpec, Vec<String>)> {
    let mut spec = ArchitectureSpec::new(Variant::U2Net);
    let mut entries = Vec::new();
    let mut seen_format = false;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("bad manifest line {line:?}")))?;
        let num = |v: &str| {
            v.parse::<f32>()
                .map_err(|_| Error::format(path, format!("bad number for {key}: {v:?}")))
        };
        let int = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::format(path, format!("bad integer for {key}: {v:?}")))
        };
        match key {
            "format" => {
                if value != "uncertseg-checkpoint" {
                    return Err(Error::format(path, format!("not a checkpoint: {value}")));
                }
                seen_format = true;
            }
            "version" => {
                if value != "1" {
                    return Err(Error::format(path, format!("unsupported version {value}")));
                }
            }
            "variant" => spec.variant = value.parse()?,
            "encoder_channels" => spec.encoder_channels = parse_list(value, key, path)?,
            "decoder_channels" => spec.decoder_channels = parse_list(value, key, path)?,
            "input_channels" => spec.input_channels = int(value)?,
            "output_channels" => spec.output_channels = int(value)?,
            "leaky_slope" => spec.leaky_slope = num(value)?,
            "bn_eps" => spec.bn_eps = num(value)?,
            "bn_momentum" => spec.bn_momentum = num(value)?,
            "dropout_plan" => spec.dropout_plan = parse_list(value, key, path)?,
            "dropout_sites" | "parameter_count" => {}
            "entry" => {
                let mut parts = value.split_whitespace();
                let (idx, name) = (parts.next(), parts.next());
                match (idx, name) {
                    (Some(idx), Some(name)) if int(idx)? == entries.len() => {
                        entries.push(name.to_string())
                    }
                    _ => return Err(Error::format(path, format!("bad entry line {value:?}"))),
                }
            }
            other => return Err(Error::format(path, format!("unknown key {other:?}"))),
        }
    }
    if !seen_format {
        return Err(Error::format(path, "missing format line"));
    }
    spec.validate()?;
    Ok((spec, entries))
}

/// Reads the architecture recorded in a checkpoint without loading weights.
pub fn read_checkpoint_spec(dir: impl AsRef<Path>) -> Result<ArchitectureSpec> {
    let path = dir.as_ref().join(MANIFEST);
    Ok(spec_from_manifest(&read_text(&path)?, &path)?.0)
}

/// Loads a checkpoint written by [`save_checkpoint`]. The network is
/// returned in eval mode.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Network> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST);
    let (spec, entries) = spec_from_manifest(&read_text(&mpath)?, &mpath)?;
    let mut net = Network::build(spec, &mut RngState::new(0))?;
    let expected = entry_names(&net);
    if entries != expected {
        return Err(Error::format(&mpath, "entry list does not match the architecture"));
    }
    let n_params = net.named_parameters().len();
    let mut tensors = Vec::with_capacity(entries.len());
    for (i, name) in entries.iter().enumerate() {
        tensors.push(load_tensor(dir.join(format!("{i:03}_{name}.tnsr")))?);
    }
    let (params, buffers) = tensors.split_at(n_params);
    for ((p, t), name) in net.parameters_mut().into_iter().zip(params).zip(&entries) {
        if p.shape() != t.shape() {
            return Err(Error::format(
                dir.join(format!("{name}.tnsr")),
                format!("shape {:?}, expected {:?}", t.shape(), p.shape()),
            ));
        }
        p.value = t.clone();
    }
    for ((b, t), name) in net.buffers_mut().into_iter().zip(buffers).zip(&entries[n_params..]) {
        if t.shape() != [b.len()] {
            return Err(Error::format(
                dir.join(format!("{name}.tnsr")),
                format!("buffer shape {:?}, expected [{}]", t.shape(), b.len()),
            ));
        }
        b.copy_from_slice(t.data());
    }
    net.set_mode(crate::engine::Mode::Eval);
    Ok(net)
}
