//! File-exchange protocol for external 2D segmenters.
//!
//! Request (written by us into `io_dir`):
//! - `batch.json`: `[{"id": "00000", "nu", "nv", "spacing_mm", "window": [lo, hi]}, ...]`
//! - `{id}_img.pgm`: binary `P5`, maxval 65535, big-endian samples, rows
//!   ordered by `v` then `u`, intensities mapped affinely from `[lo, hi]`
//!   to `[0, 65535]`.
//!
//! The command is run as `{command} {io_dir}` and must exit 0.
//!
//! Response: `{id}_mask.pgm`, binary `P5`, maxval 255, values in {0, 1, 2}.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::LabelMask2D;
use crate::error::{Error, IoContext, Result};
use crate::volume::CrossSection;

pub const MANIFEST: &str = "batch.json";
const LOCK_FILE: &str = ".vesselwall.lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub id: String,
    pub nu: usize,
    pub nv: usize,
    pub spacing_mm: f64,
    pub window: [f64; 2],
}

pub fn item_id(k: usize) -> String {
    format!("{k:05}")
}

pub fn image_path(io_dir: &Path, id: &str) -> PathBuf {
    io_dir.join(format!("{id}_img.pgm"))
}

pub fn mask_path(io_dir: &Path, id: &str) -> PathBuf {
    io_dir.join(format!("{id}_mask.pgm"))
}

/// Encode a binary PGM. Samples must fit `maxval`.
pub fn encode_pgm(width: usize, height: usize, maxval: u16, samples: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    if maxval < 256 {
        out.extend(samples.iter().map(|&s| s as u8));
    } else {
        for s in samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    }
    out
}

/// Decode a binary PGM into `(width, height, maxval, samples)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, u16, Vec<u16>)> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::Format(format!("expected binary PGM (P5), found {:?}", fields[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM header field {s:?}")))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = w * h * bps;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Format(format!("PGM raster truncated: need {need} bytes")))?;
    let samples: Vec<u16> = if bps == 1 {
        raster.iter().map(|&b| b as u16).collect()
    } else {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    if let Some(s) = samples.iter().find(|&&s| s as usize > maxval) {
        return Err(Error::Format(format!("PGM sample {s} exceeds maxval {maxval}")));
    }
    Ok((w, h, maxval as u16, samples))
}

fn window_of(pixels: &[f64]) -> [f64; 2] {
    let lo = pixels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [lo, hi]
}

fn quantize(x: f64, window: [f64; 2]) -> u16 {
    let [lo, hi] = window;
    if hi <= lo {
        return 0;
    }
    ((x - lo) / (hi - lo) * 65535.0).round().clamp(0.0, 65535.0) as u16
}

/// Inverse of the window mapping.
pub fn dequantize(q: u16, window: [f64; 2]) -> f64 {
    let [lo, hi] = window;
    if hi <= lo {
        return lo;
    }
    lo + q as f64 / 65535.0 * (hi - lo)
}

/// The image an external segmenter actually sees for `cs`, mapped back to
/// intensities.
pub fn quantized_view(cs: &CrossSection) -> CrossSection {
    let window = window_of(&cs.pixels);
    CrossSection {
        pixels: cs.pixels.iter().map(|&x| dequantize(quantize(x, window), window)).collect(),
        ..cs.clone()
    }
}

fn clear_previous(io_dir: &Path) -> Result<()> {
    for entry in fs::read_dir(io_dir).at(io_dir)? {
        let path = entry.at(io_dir)?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name == MANIFEST || name.ends_with("_img.pgm") || name.ends_with("_mask.pgm") {
            fs::remove_file(&path).at(&path)?;
        }
    }
    Ok(())
}

/// Write the request files for `sections` into `io_dir`.
pub fn write_request(io_dir: &Path, sections: &[CrossSection]) -> Result<Vec<BatchItem>> {
    fs::create_dir_all(io_dir).at(io_dir)?;
    clear_previous(io_dir)?;
    let mut items = Vec::with_capacity(sections.len());
    for (k, cs) in sections.iter().enumerate() {
        let id = item_id(k);
        let window = window_of(&cs.pixels);
        let samples: Vec<u16> = cs.pixels.iter().map(|&x| quantize(x, window)).collect();
        let path = image_path(io_dir, &id);
        fs::write(&path, encode_pgm(cs.size.0, cs.size.1, 65535, &samples)).at(&path)?;
        items.push(BatchItem {
            id,
            nu: cs.size.0,
            nv: cs.size.1,
            spacing_mm: cs.spacing,
            window,
        });
    }
    crate::io::write_json(&io_dir.join(MANIFEST), &items)?;
    Ok(items)
}

/// Read a request back: manifest items with their dequantized images
/// (row-major, `u` fastest). This is the segmenter side of the protocol.
pub fn read_request(io_dir: &Path) -> Result<Vec<(BatchItem, Vec<f64>)>> {
    let manifest = io_dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest).at(&manifest)?;
    let items: Vec<BatchItem> = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest.display())))?;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        if item.id.len() != 5 || !item.id.bytes().all(|b| b.is_ascii_digit()) || !seen.insert(item.id.clone()) {
            return Err(Error::Format(format!("bad or duplicate item id {:?}", item.id)));
        }
        let path = image_path(io_dir, &item.id);
        let (w, h, maxval, samples) = decode_pgm(&fs::read(&path).at(&path)?)?;
        if (w, h) != (item.nu, item.nv) || maxval != 65535 {
            return Err(Error::Format(format!(
                "{}: {w}x{h} maxval {maxval}, manifest says {}x{} maxval 65535",
                path.display(),
                item.nu,
                item.nv
            )));
        }
        let pixels = samples.iter().map(|&q| dequantize(q, item.window)).collect();
        out.push((item, pixels));
    }
    Ok(out)
}

pub fn write_response_mask(io_dir: &Path, id: &str, nu: usize, nv: usize, labels: &[u8]) -> Result<()> {
    let samples: Vec<u16> = labels.iter().map(|&l| l as u16).collect();
    let path = mask_path(io_dir, id);
    fs::write(&path, encode_pgm(nu, nv, 255, &samples)).at(&path)
}

fn read_response(io_dir: &Path, items: &[BatchItem], sections: &[CrossSection]) -> Result<Vec<LabelMask2D>> {
    items
        .iter()
        .zip(sections)
        .map(|(item, cs)| {
            let path = mask_path(io_dir, &item.id);
            let bytes = fs::read(&path).map_err(|e| {
                Error::Segmenter(format!("missing response {}: {e}", path.display()))
            })?;
            let (w, h, maxval, samples) =
                decode_pgm(&bytes).map_err(|e| Error::Segmenter(format!("{}: {e}", path.display())))?;
            if (w, h) != (item.nu, item.nv) || maxval != 255 {
                return Err(Error::Segmenter(format!(
                    "{}: got {w}x{h} maxval {maxval}, expected {}x{} maxval 255",
                    path.display(),
                    item.nu,
                    item.nv
                )));
            }
            if let Some(bad) = samples.iter().find(|&&s| s > 2) {
                return Err(Error::Segmenter(format!("{}: label {bad} not in {{0,1,2}}", path.display())));
            }
            LabelMask2D::new(cs.pose, cs.size, cs.spacing, samples.into_iter().map(|s| s as u8).collect())
        })
        .collect()
}

/// Exclusive use of an exchange directory for one invocation.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(io_dir: &Path) -> Result<Self> {
        fs::create_dir_all(io_dir).at(io_dir)?;
        let path = io_dir.join(LOCK_FILE);
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::Segmenter(format!("exchange directory {} is busy: {e}", io_dir.display())))?;
        Ok(Self(path))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Write the batch, run `{command} {io_dir}`, and read all masks back.
pub fn run_batch(command: &str, io_dir: &Path, timeout: Duration, sections: &[CrossSection]) -> Result<Vec<LabelMask2D>> {
    if sections.is_empty() {
        return Ok(Vec::new());
    }
    let _lock = DirLock::acquire(io_dir)?;
    let items = write_request(io_dir, sections)?;
    let mut parts = command.split_whitespace();
    let program = parts
        .next()
        .ok_or_else(|| Error::Segmenter("empty segmenter command".into()))?;
    let mut child = Command::new(program)
        .args(parts)
        .arg(io_dir)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::Segmenter(format!("cannot start {program:?}: {e}")))?;
    let started = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if started.elapsed() > timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Segmenter(format!(
                    "{program:?} timed out after {:.0} s",
                    timeout.as_secs_f64()
                )));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => return Err(Error::Segmenter(format!("waiting for {program:?}: {e}"))),
        }
    };
    if !status.success() {
        let mut stderr = String::new();
        if let Some(mut pipe) = child.stderr.take() {
            use std::io::Read;
            let _ = pipe.read_to_string(&mut stderr);
        }
        return Err(Error::Segmenter(format!(
            "{program:?} exited with {status}: {}",
            stderr.trim()
        )));
    }
    read_response(io_dir, &items, sections)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_layout() {
        let bytes = encode_pgm(3, 2, 65535, &[0, 1, 256, 65535, 7, 8]);
        assert!(bytes.starts_with(b"P5\n3 2\n65535\n"));
        assert_eq!(&bytes[13..17], &[0, 0, 0, 1]);
        let (w, h, m, s) = decode_pgm(&bytes).unwrap();
        assert_eq!((w, h, m), (3, 2, 65535));
        assert_eq!(s, vec![0, 1, 256, 65535, 7, 8]);

        let mask = encode_pgm(2, 1, 255, &[2, 1]);
        assert_eq!(mask, b"P5\n2 1\n255\n\x02\x01");
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00").is_err());
    }

    #[test]
    fn window_mapping_endpoints() {
        let w = [400.0, 1000.0];
        assert_eq!(quantize(400.0, w), 0);
        assert_eq!(quantize(1000.0, w), 65535);
        assert_eq!(dequantize(65535, w), 1000.0);
        assert_eq!(quantize(5.0, [5.0, 5.0]), 0);
    }
}
