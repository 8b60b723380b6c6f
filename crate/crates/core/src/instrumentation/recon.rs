use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sire_tensor::Tensor;

use super::metrics::write_text;
use crate::netgraph::{Mode, Network};
use crate::{Error, Result};

/// Encodes a `[C, H, W]` image in `[0, 1]` as binary PGM (one channel) or
/// PPM (three channels), maxval 255. Values are clamped first.
pub fn encode_pnm(chw: &[f32], c: usize, h: usize, w: usize) -> Result<Vec<u8>> {
    if chw.len() != c * h * w {
        return Err(Error::Data(format!("{} values for a {c}x{h}x{w} image", chw.len())));
    }
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::Data(format!("cannot encode {c}-channel image as PGM/PPM"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let byte = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..c {
            out.push(byte(chw[ch * plane + p]));
        }
    }
    Ok(out)
}

pub fn write_pnm(path: &Path, chw: &[f32], c: usize, h: usize, w: usize) -> Result<()> {
    let bytes = encode_pnm(chw, c, h, w)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reconstruction error of one image under one auto-encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconReport {
    pub image: usize,
    pub ae: usize,
    pub mse: f64,
    pub path: PathBuf,
}

/// Writes each image and its reconstruction by every auto-encoder
/// (`img<id>_input` and `img<id>_ae<i>`, `.pgm` or `.ppm`) plus an `mse.txt`
/// sidecar. `ids` name the images in file names and must match the batch.
pub fn dump_reconstructions(
    net: &mut Network,
    images: &Tensor<f32>,
    ids: &[usize],
    out_dir: impl AsRef<Path>,
) -> Result<Vec<ReconReport>> {
    let out_dir = out_dir.as_ref();
    if net.graph.ae_indices().is_empty() {
        return Err(Error::Graph("network has no auto-encoders to reconstruct with".into()));
    }
    let [n, c, h, w] = images.dims4();
    if ids.len() != n {
        return Err(Error::Data(format!("{} ids for {n} images", ids.len())));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let out = net.forward(images, Mode::Eval)?;
    let ext = if c == 1 { "pgm" } else { "ppm" };
    let plane = c * h * w;
    let mut reports = Vec::new();
    let mut sidecar = String::from("image ae mse\n");
    for (k, &id) in ids.iter().enumerate() {
        let input = &images.data()[k * plane..(k + 1) * plane];
        write_pnm(&out_dir.join(format!("img{id}_input.{ext}")), input, c, h, w)?;
        for (&ae, recon) in &out.recons {
            let r = &recon.data()[k * plane..(k + 1) * plane];
            let path = out_dir.join(format!("img{id}_ae{ae}.{ext}"));
            write_pnm(&path, r, c, h, w)?;
            let mse = r
                .iter()
                .zip(input)
                .map(|(&a, &b)| f64::from(a - b).powi(2))
                .sum::<f64>()
                / plane as f64;
            writeln!(sidecar, "{id} {ae} {mse:e}").unwrap();
            reports.push(ReconReport {
                image: id,
                ae,
                mse,
                path,
            });
        }
    }
    write_text(&out_dir.join("mse.txt"), &sidecar)?;
    Ok(reports)
}
