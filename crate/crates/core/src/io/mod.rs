//! File formats: masks (PGM/PNG), response maps (PGM/PNG/CSV), colour
//! images (PPM/PGM/PNG), JSON manifests, run reports and SVG plots.

mod manifest;
mod pnm;
mod report;
mod svg;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{ColorImage, ScalarField};
use crate::mask::{AgreementMap, BinaryMask, ImageGrid};
use pnm::Pnm;

pub use manifest::{
    AnnotationEntry, LoadedStack, NamedEntry, NamedList, StackManifest, MANIFEST_VERSION,
};
pub use report::{sha256_file, InputDigest, RunReport, REPORT_SCHEMA};
pub use svg::plot_curves;

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decoded raster: grid, channel count, maxval and interleaved samples.
fn read_raster(path: &Path) -> Result<Pnm> {
    let bytes = read_bytes(path)?;
    if pnm::is_pnm(&bytes) {
        return pnm::decode(path, &bytes);
    }
    if !bytes.starts_with(PNG_SIGNATURE) {
        return Err(Error::format(path, "neither PNM (P5/P6) nor PNG"));
    }
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let grid = ImageGrid::new(img.width() as usize, img.height() as usize)
        .map_err(|_| Error::format(path, "empty image"))?;
    let color = img.color();
    let wide = color.bytes_per_pixel() / color.channel_count() > 1;
    let (channels, maxval, samples) = match (color.has_color(), wide) {
        (false, false) => (
            1,
            255,
            img.into_luma8()
                .into_raw()
                .into_iter()
                .map(u16::from)
                .collect(),
        ),
        (false, true) => (1, 65535, img.into_luma16().into_raw()),
        (true, false) => (
            3,
            255,
            img.into_rgb8()
                .into_raw()
                .into_iter()
                .map(u16::from)
                .collect(),
        ),
        (true, true) => (3, 65535, img.into_rgb16().into_raw()),
    };
    Ok(Pnm {
        grid,
        channels,
        maxval,
        samples,
    })
}

fn single_channel(path: &Path, raster: Pnm) -> Result<Pnm> {
    if raster.channels != 1 {
        return Err(Error::format(path, "expected a single-channel image"));
    }
    Ok(raster)
}

/// Load a mask; any nonzero sample is foreground.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let r = single_channel(path, read_raster(path)?)?;
    let data: Vec<u8> = r.samples.iter().map(|&s| u8::from(s != 0)).collect();
    BinaryMask::from_vec(r.grid, data)
}

fn is_png_path(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Write a mask as 0/255, PNG when the extension is `.png`, PGM otherwise.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let grid = mask.grid();
    let samples: Vec<u8> = mask.as_slice().iter().map(|&v| v * 255).collect();
    if is_png_path(path) {
        let mut bytes = Vec::new();
        image::GrayImage::from_raw(grid.width() as u32, grid.height() as u32, samples)
            .expect("grid-sized buffer")
            .write_to(
                &mut std::io::Cursor::new(&mut bytes),
                image::ImageFormat::Png,
            )
            .map_err(|e| Error::format(path, e.to_string()))?;
        return write_bytes(path, &bytes);
    }
    let pnm = Pnm {
        grid,
        channels: 1,
        maxval: 255,
        samples: samples.into_iter().map(u16::from).collect(),
    };
    write_bytes(path, &pnm::encode(&pnm))
}

/// Agreement counts as a PGM whose maxval is the number of annotators.
pub fn write_agreement(path: &Path, agreement: &AgreementMap) -> Result<()> {
    let pnm = Pnm {
        grid: agreement.grid(),
        channels: 1,
        maxval: agreement.n_annotators().max(1) as u16,
        samples: agreement.counts().to_vec(),
    };
    write_bytes(path, &pnm::encode(&pnm))
}

fn is_csv_path(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Load a response map normalized to [0, 1]. Images are divided by their
/// maxval; CSV files (`W,H` header, then one value per line in raster
/// order) are min-max scaled.
pub fn read_response(path: &Path) -> Result<ScalarField> {
    if !is_csv_path(path) {
        let r = single_channel(path, read_raster(path)?)?;
        let m = r.maxval as f64;
        return ScalarField::new(r.grid, r.samples.iter().map(|&s| s as f64 / m).collect());
    }
    let text =
        String::from_utf8(read_bytes(path)?).map_err(|_| Error::format(path, "not UTF-8"))?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty file"))?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(path, format!("header `{header}` is not `W,H`")))?;
    let [w, h] = dims[..] else {
        return Err(Error::format(
            path,
            format!("header `{header}` is not `W,H`"),
        ));
    };
    let grid = ImageGrid::new(w, h).map_err(|_| Error::format(path, "empty grid"))?;
    let values: Vec<f64> = lines
        .enumerate()
        .map(|(k, l)| {
            l.parse::<f64>()
                .map_err(|_| Error::format(path, format!("value {} `{l}` is not a number", k + 1)))
        })
        .collect::<Result<_>>()?;
    if values.len() != grid.len() {
        return Err(Error::format(
            path,
            format!(
                "expected {} values for {grid}, found {}",
                grid.len(),
                values.len()
            ),
        ));
    }
    Ok(ScalarField::new(grid, values)?.normalized())
}

/// Response map in the CSV layout read by [`read_response`].
pub fn response_csv(field: &ScalarField) -> String {
    let mut out = format!("{},{}\n", field.grid().width(), field.grid().height());
    for v in field.values() {
        out.push_str(&format!("{v}\n"));
    }
    out
}

/// Load a colour image with channels on a 0-255 scale. Single-channel
/// images load as grayscale.
pub fn read_color(path: &Path) -> Result<ColorImage> {
    let r = read_raster(path)?;
    let scale = 255.0 / r.maxval as f64;
    let plane = |c: usize| -> Vec<f64> {
        r.samples
            .iter()
            .skip(c)
            .step_by(r.channels)
            .map(|&s| s as f64 * scale)
            .collect()
    };
    if r.channels == 1 {
        ColorImage::gray(r.grid, plane(0))
    } else {
        ColorImage::rgb(r.grid, plane(0), plane(1), plane(2))
    }
}

/// Write the RGB channels of an image as an 8-bit PPM.
pub fn write_color(path: &Path, img: &ColorImage) -> Result<()> {
    let get = |n: &str| img.channel(n).ok_or_else(|| Error::Channel(n.into()));
    let (r, g, b) = (get("R")?, get("G")?, get("B")?);
    let q = |v: f64| v.round().clamp(0.0, 255.0) as u16;
    let samples = (0..img.grid().len())
        .flat_map(|i| [q(r[i]), q(g[i]), q(b[i])])
        .collect();
    let pnm = Pnm {
        grid: img.grid(),
        channels: 3,
        maxval: 255,
        samples,
    };
    write_bytes(path, &pnm::encode(&pnm))
}
