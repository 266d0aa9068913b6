//! Plain PGM (P2, ASCII) import/export for 2D signals.
//!
//! Pixel values are scaled to 0..=255; the true dynamic range is recorded in
//! a JSON sidecar next to the image so the original floats can be recovered.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Dynamic-range sidecar stored as `<image>.json`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PgmSidecar {
    pub height: usize,
    pub width: usize,
    pub min: f64,
    pub max: f64,
}

fn sidecar_path(pgm: &Path) -> PathBuf {
    let mut p = pgm.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Renders a row-major signal as a P2 PGM string plus its sidecar.
pub fn encode(signal: &[f64], height: usize, width: usize) -> Result<(String, PgmSidecar)> {
    if signal.len() != height * width {
        return Err(CoreError::DimensionMismatch {
            expected: height * width,
            got: signal.len(),
        });
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite { context: "pgm signal" });
    }
    let min = signal.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = signal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in signal.chunks(width) {
        let line: Vec<String> = row
            .iter()
            .map(|&v| {
                let p = if span > 0.0 {
                    ((v - min) / span * 255.0).round() as i64
                } else {
                    0
                };
                p.clamp(0, 255).to_string()
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok((
        out,
        PgmSidecar {
            height,
            width,
            min,
            max,
        },
    ))
}

/// Writes the image and its sidecar next to each other.
pub fn write(path: &Path, signal: &[f64], height: usize, width: usize) -> Result<()> {
    let (body, sidecar) = encode(signal, height, width)?;
    std::fs::write(path, body)?;
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Reads an image written by [`write`], restoring the recorded dynamic range.
pub fn read(path: &Path) -> Result<(Vec<f64>, PgmSidecar)> {
    let body = std::fs::read_to_string(path)?;
    let sidecar: PgmSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)
        .map_err(|e| CoreError::Format(format!("sidecar: {e}")))?;
    let pixels = parse_p2(&body)?;
    if pixels.len() != sidecar.height * sidecar.width {
        return Err(CoreError::Format(format!(
            "pixel count {} does not match sidecar {}x{}",
            pixels.len(),
            sidecar.height,
            sidecar.width
        )));
    }
    let span = sidecar.max - sidecar.min;
    let values = pixels
        .iter()
        .map(|&p| sidecar.min + p as f64 / 255.0 * span)
        .collect();
    Ok((values, sidecar))
}

fn parse_p2(body: &str) -> Result<Vec<u16>> {
    let mut tokens = body
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(|l| l.split_whitespace());
    if tokens.next() != Some("P2") {
        return Err(CoreError::Format("not a P2 PGM".into()));
    }
    let dims: Vec<usize> = tokens
        .by_ref()
        .take(3)
        .map(|t| t.parse::<usize>().map_err(|e| CoreError::Format(e.to_string())))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(CoreError::Format("truncated PGM header".into()));
    }
    let (w, h, maxval) = (dims[0], dims[1], dims[2]);
    if maxval != 255 {
        return Err(CoreError::Format(format!("unsupported maxval {maxval}")));
    }
    let pixels: Vec<u16> = tokens
        .map(|t| t.parse::<u16>().map_err(|e| CoreError::Format(e.to_string())))
        .collect::<Result<_>>()?;
    if pixels.len() != w * h {
        return Err(CoreError::Format(format!(
            "expected {} pixels, found {}",
            w * h,
            pixels.len()
        )));
    }
    Ok(pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_layout() {
        let (body, sidecar) = encode(&[0.0, 0.5, 1.0, 0.25], 2, 2).unwrap();
        assert!(body.starts_with("P2\n2 2\n255\n"));
        assert_eq!(sidecar.min, 0.0);
        assert_eq!(sidecar.max, 1.0);
        let lines: Vec<&str> = body.lines().collect();
        assert_eq!(lines[3], "0 128");
        assert_eq!(lines[4], "255 64");
    }

    #[test]
    fn constant_signal_encodes_to_zero() {
        let (body, sidecar) = encode(&[3.0; 4], 2, 2).unwrap();
        assert!(body.contains("0 0"));
        assert_eq!(sidecar.min, 3.0);
        assert_eq!(sidecar.max, 3.0);
    }

    #[test]
    fn file_round_trip_recovers_range() {
        let dir = std::env::temp_dir().join(format!("flair-pgm-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("test.pgm");
        let signal: Vec<f64> = (0..12).map(|i| -1.0 + i as f64 * 0.3).collect();
        write(&path, &signal, 3, 4).unwrap();
        let (back, sidecar) = read(&path).unwrap();
        assert_eq!(sidecar.height, 3);
        assert_eq!(sidecar.width, 4);
        let span = sidecar.max - sidecar.min;
        for (a, b) in signal.iter().zip(&back) {
            assert!((a - b).abs() <= span / 255.0, "{a} vs {b}");
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
