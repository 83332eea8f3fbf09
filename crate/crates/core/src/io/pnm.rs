//! Binary PGM (P5) and PPM (P6) with 8- or 16-bit samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::ImageGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct Pnm {
    pub grid: ImageGrid,
    pub channels: usize,
    pub maxval: u16,
    /// Interleaved samples, `channels` per pixel.
    pub samples: Vec<u16>,
}

fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    (i < bytes.len()).then_some((tokens, i + 1))
}

pub fn is_pnm(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == b'P' && (bytes[1] == b'5' || bytes[1] == b'6')
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Pnm> {
    let bad = |m: &str| Error::format(path, m);
    let (tokens, offset) = header_tokens(bytes, 4).ok_or_else(|| bad("truncated PNM header"))?;
    let channels = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(bad(&format!("unsupported PNM magic `{other}`"))),
    };
    let num = |t: &str| {
        t.parse::<usize>()
            .map_err(|_| bad(&format!("bad header field `{t}`")))
    };
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(bad(&format!("maxval {maxval} outside 1..=65535")));
    }
    let grid = ImageGrid::new(w, h).map_err(|_| bad("empty image"))?;
    let wide = maxval > 255;
    let n = grid.len() * channels;
    let need = if wide { 2 * n } else { n };
    let raster = &bytes[offset..];
    if raster.len() < need {
        return Err(bad(&format!(
            "raster has {} bytes, expected {need}",
            raster.len()
        )));
    }
    let samples = if wide {
        raster[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raster[..n].iter().map(|&b| b as u16).collect()
    };
    Ok(Pnm {
        grid,
        channels,
        maxval: maxval as u16,
        samples,
    })
}

pub fn encode(pnm: &Pnm) -> Vec<u8> {
    let magic = if pnm.channels == 3 { "P6" } else { "P5" };
    let mut out = format!(
        "{magic}\n{} {}\n{}\n",
        pnm.grid.width(),
        pnm.grid.height(),
        pnm.maxval
    )
    .into_bytes();
    if pnm.maxval > 255 {
        for s in &pnm.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(pnm.samples.iter().map(|&s| s as u8));
    }
    out
}
