//! Image-derived features and their correlation with annotator agreement.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::mask::{AgreementMap, ImageGrid};
use crate::morph::max_filter;

/// Significance level used when flagging correlations (99% confidence).
pub const SIGNIFICANCE_ALPHA: f64 = 0.01;

/// Intensity weights applied to R, G and B.
pub const INTENSITY_WEIGHTS: [f64; 3] = [0.2989, 0.5870, 0.1140];

/// A finite real value per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: ImageGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: ImageGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::dims(grid.len(), values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let (x, y) = grid.coords(i);
            return Err(Error::NonFinite { x, y });
        }
        Ok(ScalarField { grid, values })
    }

    pub fn from_fn(grid: ImageGrid, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for y in 0..grid.height() {
            for x in 0..grid.width() {
                values.push(f(x, y));
            }
        }
        ScalarField::new(grid, values)
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[self.grid.index(x, y)]
    }

    /// Affinely rescale to [0, 1]; a constant field maps to zeros.
    pub fn normalized(&self) -> ScalarField {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        let values = if span > 0.0 {
            self.values.iter().map(|&v| (v - lo) / span).collect()
        } else {
            vec![0.0; self.values.len()]
        };
        ScalarField {
            grid: self.grid,
            values,
        }
    }
}

/// Named per-pixel channel planes sharing one grid.
///
/// Colour images use the channel names `R`, `G`, `B` (and optionally `NIR`);
/// a grey-scale image has the single channel `I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    grid: ImageGrid,
    channels: Vec<(String, Vec<f64>)>,
}

impl ColorImage {
    pub fn new(grid: ImageGrid) -> Self {
        ColorImage {
            grid,
            channels: Vec::new(),
        }
    }

    pub fn rgb(grid: ImageGrid, r: Vec<f64>, g: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        ColorImage::new(grid)
            .with_channel("R", r)?
            .with_channel("G", g)?
            .with_channel("B", b)
    }

    pub fn gray(grid: ImageGrid, values: Vec<f64>) -> Result<Self> {
        ColorImage::new(grid).with_channel("I", values)
    }

    pub fn with_channel(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.grid.len() {
            return Err(Error::dims(self.grid.len(), values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let (x, y) = self.grid.coords(i);
            return Err(Error::NonFinite { x, y });
        }
        if self.channels.iter().any(|(n, _)| n == name) {
            return Err(Error::Argument(format!("duplicate channel `{name}`")));
        }
        self.channels.push((name.to_string(), values));
        Ok(self)
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn channels(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.channels
            .iter()
            .map(|(n, v)| (n.as_str(), v.as_slice()))
    }

    pub fn is_grayscale(&self) -> bool {
        self.channels.len() == 1 && self.channels[0].0 == "I"
    }

    fn rgb_planes(&self) -> Result<[&[f64]; 3]> {
        let get = |n: &str| self.channel(n).ok_or_else(|| Error::Channel(n.to_string()));
        Ok([get("R")?, get("G")?, get("B")?])
    }
}

/// Weighted intensity `0.2989 R + 0.5870 G + 0.1140 B`; the `I` plane of a
/// grey-scale image is returned unchanged.
pub fn to_intensity(img: &ColorImage) -> Result<ScalarField> {
    if img.is_grayscale() {
        return ScalarField::new(img.grid(), img.channels[0].1.clone());
    }
    let [r, g, b] = img.rgb_planes()?;
    let [wr, wg, wb] = INTENSITY_WEIGHTS;
    let values = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| wr * r + wg * g + wb * b)
        .collect();
    ScalarField::new(img.grid(), values)
}

/// CIELAB L* (sRGB primaries, D65 white) of an 8-bit RGB image, in [0, 100].
/// For a grey-scale image the intensity plane is used as lightness.
pub fn lightness(img: &ColorImage) -> Result<ScalarField> {
    if img.is_grayscale() {
        return to_intensity(img);
    }
    let [r, g, b] = img.rgb_planes()?;
    let values = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| srgb_lightness(r, g, b))
        .collect();
    ScalarField::new(img.grid(), values)
}

fn srgb_to_linear(c: f64) -> f64 {
    let c = (c / 255.0).clamp(0.0, 1.0);
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_lightness(r: f64, g: f64, b: f64) -> f64 {
    // relative luminance against the D65 white (Yn = 1)
    let y =
        0.212671 * srgb_to_linear(r) + 0.715160 * srgb_to_linear(g) + 0.072169 * srgb_to_linear(b);
    let y = y.clamp(0.0, 1.0);
    const EPS: f64 = 216.0 / 24389.0;
    const KAPPA: f64 = 24389.0 / 27.0;
    if y > EPS {
        116.0 * y.cbrt() - 16.0
    } else {
        KAPPA * y
    }
}

/// Local Michelson contrast `(max - min) / (max + min)` over an odd square
/// window, 0 where `max + min = 0`.
pub fn michelson_contrast(lightness: &ScalarField, window: usize) -> Result<ScalarField> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Argument(format!(
            "window must be odd and positive, got {window}"
        )));
    }
    if let Some(i) = lightness.values().iter().position(|&v| v < 0.0) {
        let (x, y) = lightness.grid().coords(i);
        return Err(Error::Domain(format!("negative lightness at ({x}, {y})")));
    }
    let grid = lightness.grid();
    let r = window / 2;
    let hi = max_filter(grid, lightness.values(), r);
    let lo = crate::morph::min_filter(grid, lightness.values(), r);
    let values = hi
        .iter()
        .zip(&lo)
        .map(|(&mx, &mn)| {
            if mx + mn > 0.0 {
                (mx - mn) / (mx + mn)
            } else {
                0.0
            }
        })
        .collect();
    ScalarField::new(grid, values)
}

/// Pearson's r with its two-tailed p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

impl CorrelationResult {
    pub fn is_significant(&self) -> bool {
        self.p < SIGNIFICANCE_ALPHA
    }
}

/// Pearson correlation with a t-test on `n - 2` degrees of freedom.
///
/// The p-value is evaluated as `I_{1-r^2}((n-2)/2, 1/2)`, which equals the
/// two-tailed t-distribution tail without cancellation for `|r|` near one.
/// A constant sample on either side makes r undefined.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult> {
    if xs.len() != ys.len() {
        return Err(Error::dims(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::Argument(format!("need at least 3 samples, got {n}")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        let which = match (sxx == 0.0, syy == 0.0) {
            (true, true) => "both samples are constant",
            (true, false) => "first sample is constant",
            _ => "second sample is constant",
        };
        return Err(Error::UndefinedCorrelation(which.into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(CorrelationResult {
        r,
        p: correlation_p_value(r, n),
        n,
    })
}

pub(crate) fn correlation_p_value(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let x = (1.0 - r * r).max(0.0);
    if x == 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// One line of the feature/agreement table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub feature: String,
    pub correlation: Option<CorrelationResult>,
    pub significant: bool,
    /// Set when the correlation is undefined (e.g. a constant channel).
    pub undefined: Option<String>,
}

impl FeatureRow {
    fn from_result(feature: &str, res: Result<CorrelationResult>) -> Result<FeatureRow> {
        match res {
            Ok(c) => Ok(FeatureRow {
                feature: feature.to_string(),
                significant: c.is_significant(),
                correlation: Some(c),
                undefined: None,
            }),
            Err(Error::UndefinedCorrelation(why)) => Ok(FeatureRow {
                feature: feature.to_string(),
                correlation: None,
                significant: false,
                undefined: Some(why),
            }),
            Err(e) => Err(e),
        }
    }
}

/// Correlate intensity, local contrast and every channel with agreement over
/// the ROI. Contrast is paired with the 3x3 maximum of the agreement map.
pub fn feature_agreement_report(
    img: &ColorImage,
    agreement: &AgreementMap,
) -> Result<Vec<FeatureRow>> {
    let grid = img.grid();
    grid.check(&agreement.grid())?;
    let roi: Vec<usize> = (0..grid.len()).filter(|&i| agreement.in_roi(i)).collect();
    let sample = |v: &[f64]| roi.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let raw: Vec<f64> = agreement.counts().iter().map(|&c| c as f64).collect();
    let local_max: Vec<f64> = max_filter(grid, agreement.counts(), 1)
        .into_iter()
        .map(|c| c as f64)
        .collect();
    let raw_s = sample(&raw);
    let max_s = sample(&local_max);

    let mut rows = Vec::new();
    let intensity = to_intensity(img)?;
    rows.push(FeatureRow::from_result(
        "intensity",
        pearson(&sample(intensity.values()), &raw_s),
    )?);
    let contrast = michelson_contrast(&lightness(img)?, 3)?;
    rows.push(FeatureRow::from_result(
        "contrast",
        pearson(&sample(contrast.values()), &max_s),
    )?);
    if !img.is_grayscale() {
        for (name, plane) in img.channels() {
            rows.push(FeatureRow::from_result(
                name,
                pearson(&sample(plane), &raw_s),
            )?);
        }
    }
    Ok(rows)
}
