//! Seeded synthetic scenes with a known gold standard, and annotators that
//! observe it through a morphological bias followed by independent
//! per-pixel flips.
//!
//! All randomness comes from ChaCha8 seeded with a `u64`; sub-streams use
//! [`derive_seed`], so a cohort is identical on every platform.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ColorImage, ScalarField};
use crate::mask::{Annotation, AnnotationStack, BinaryMask, ImageGrid};
use crate::morph::{apply_bias, thin};

/// Seed of the `index`-th sub-stream of `base`: SplitMix64 applied to
/// `base + (index + 1) * 0x9E3779B97F4A7C15`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    /// One-pixel-wide polylines.
    Linear,
    /// Blobs built from overlapping discs.
    Areal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub geometry: Geometry,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Number of polylines or blobs; chosen from the size when absent.
    pub objects: Option<usize>,
    /// Typical disc radius of areal blobs, in pixels.
    pub blob_radius: f64,
    /// Intensity step between object and background, in [0, 1].
    pub contrast: f64,
    /// Standard deviation of the rendering noise, in [0, 1] units.
    pub noise: f64,
}

impl SceneSpec {
    pub fn new(geometry: Geometry, width: usize, height: usize, seed: u64) -> Self {
        SceneSpec {
            geometry,
            width,
            height,
            seed,
            objects: None,
            blob_radius: 10.0,
            contrast: 0.3,
            noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldScene {
    pub spec: SceneSpec,
    pub gold: BinaryMask,
    pub image: ColorImage,
}

impl GoldScene {
    pub fn grid(&self) -> ImageGrid {
        self.gold.grid()
    }
}

/// Sensitivity `p`, specificity `q` and morphological bias of one simulated
/// annotator. Positive bias dilates the gold, negative erodes it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaterProfile {
    pub p: f64,
    pub q: f64,
    pub dilate_bias: i32,
    pub seed: u64,
}

impl RaterProfile {
    pub fn new(p: f64, q: f64, dilate_bias: i32, seed: u64) -> Result<Self> {
        let profile = RaterProfile {
            p,
            q,
            dilate_bias,
            seed,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v <= 1.0;
        if !ok(self.p) || !ok(self.q) {
            return Err(Error::Argument(format!(
                "sensitivity and specificity must lie in (0, 1], got {} and {}",
                self.p, self.q
            )));
        }
        Ok(())
    }
}

fn draw_segment(mask: &mut BinaryMask, (x0, y0): (i64, i64), (x1, y1): (i64, i64)) {
    let (w, h) = (mask.grid().width() as i64, mask.grid().height() as i64);
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            mask.set(x as usize, y as usize, true);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn linear_gold(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> BinaryMask {
    let grid = ImageGrid::new(spec.width, spec.height).expect("checked size");
    let mut mask = BinaryMask::empty(grid);
    let count = spec
        .objects
        .unwrap_or_else(|| (spec.width.min(spec.height) / 40).max(2));
    let step = spec.width.min(spec.height) as f64 / 5.0;
    for _ in 0..count {
        let mut x = rng.gen_range(0.1..0.9) * spec.width as f64;
        let mut y = rng.gen_range(0.1..0.9) * spec.height as f64;
        let mut heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let vertices = rng.gen_range(3..=6);
        for _ in 0..vertices {
            heading += rng.gen_range(-0.6..0.6);
            let len = step * rng.gen_range(0.5..1.0);
            let nx = (x + len * heading.cos()).clamp(1.0, spec.width as f64 - 2.0);
            let ny = (y + len * heading.sin()).clamp(1.0, spec.height as f64 - 2.0);
            draw_segment(
                &mut mask,
                (x.round() as i64, y.round() as i64),
                (nx.round() as i64, ny.round() as i64),
            );
            x = nx;
            y = ny;
        }
    }
    thin(&mask)
}

fn areal_gold(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> BinaryMask {
    let grid = ImageGrid::new(spec.width, spec.height).expect("checked size");
    let r = spec.blob_radius;
    let count = spec.objects.unwrap_or_else(|| {
        let target = 0.04 * (spec.width * spec.height) as f64;
        ((target / (2.0 * std::f64::consts::PI * r * r)).round() as usize).max(1)
    });
    let mut discs = Vec::new();
    for _ in 0..count {
        let cx = rng.gen_range(r..(spec.width as f64 - r).max(r + 1.0));
        let cy = rng.gen_range(r..(spec.height as f64 - r).max(r + 1.0));
        for _ in 0..rng.gen_range(2..=4) {
            let ox = cx + rng.gen_range(-r..r);
            let oy = cy + rng.gen_range(-r..r);
            let rad = r * rng.gen_range(0.6..1.0);
            discs.push((ox, oy, rad));
        }
    }
    BinaryMask::from_fn(grid, |x, y| {
        discs.iter().any(|&(cx, cy, rad)| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            dx * dx + dy * dy <= rad * rad
        })
    })
}

fn render(spec: &SceneSpec, gold: &BinaryMask, rng: &mut ChaCha8Rng) -> ColorImage {
    let grid = gold.grid();
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite sigma");
    let sign = match spec.geometry {
        Geometry::Linear => -1.0,
        Geometry::Areal => 1.0,
    };
    let tint = [1.0, 0.9, 0.8];
    let mut channels = [Vec::new(), Vec::new(), Vec::new()];
    for i in 0..grid.len() {
        let (x, _) = grid.coords(i);
        let base = 0.45 + 0.1 * x as f64 / grid.width() as f64;
        let level = if gold.at(i) {
            base + sign * spec.contrast
        } else {
            base
        };
        for (c, ch) in channels.iter_mut().enumerate() {
            let v = level * tint[c] + noise.sample(rng);
            ch.push((v.clamp(0.0, 1.0) * 255.0).round());
        }
    }
    let [r, g, b] = channels;
    ColorImage::rgb(grid, r, g, b).expect("equal channel sizes")
}

/// Deterministic scene for `spec`.
pub fn make_scene(spec: &SceneSpec) -> Result<GoldScene> {
    if spec.width < 32 || spec.height < 32 {
        return Err(Error::Argument(format!(
            "scenes need at least 32x32 pixels, got {}x{}",
            spec.width, spec.height
        )));
    }
    if !(spec.blob_radius >= 1.0) || !(0.0..=1.0).contains(&spec.contrast) || !(spec.noise >= 0.0) {
        return Err(Error::Argument(
            "blob radius >= 1, contrast in [0, 1] and noise >= 0 required".into(),
        ));
    }
    let mut shapes = rng(derive_seed(spec.seed, 0));
    let gold = match spec.geometry {
        Geometry::Linear => linear_gold(spec, &mut shapes),
        Geometry::Areal => areal_gold(spec, &mut shapes),
    };
    if gold.is_empty() {
        return Err(Error::EmptyAnnotation);
    }
    let image = render(spec, &gold, &mut rng(derive_seed(spec.seed, 1)));
    Ok(GoldScene {
        spec: *spec,
        gold,
        image,
    })
}

/// Bias the gold morphologically, then flip positives with probability
/// `1 - p` and negatives with probability `1 - q`. One uniform draw is
/// made per pixel in raster order.
pub fn sample_annotation(gold: &BinaryMask, profile: &RaterProfile) -> Result<BinaryMask> {
    profile.validate()?;
    let biased = apply_bias(gold, profile.dilate_bias);
    let mut rng = rng(profile.seed);
    let data = biased
        .as_slice()
        .iter()
        .map(|&v| {
            let u: f64 = rng.gen();
            match v {
                1 => u8::from(u < profile.p),
                _ => u8::from(u >= profile.q),
            }
        })
        .collect();
    BinaryMask::from_vec(gold.grid(), data)
}

/// Annotators `A1..AN` for the given profiles.
pub fn sample_cohort(
    gold: &BinaryMask,
    profiles: &[RaterProfile],
    roi: Option<BinaryMask>,
) -> Result<AnnotationStack> {
    let annotators = profiles
        .iter()
        .enumerate()
        .map(|(j, p)| {
            Ok(Annotation {
                id: format!("A{}", j + 1),
                mask: sample_annotation(gold, p)?,
            })
        })
        .collect::<Result<_>>()?;
    AnnotationStack::new(annotators, roi)
}

/// Fraction of ROI pixels where `mask` and `gold` differ.
pub fn true_error(mask: &BinaryMask, gold: &BinaryMask, roi: Option<&BinaryMask>) -> Result<f64> {
    mask.grid().check(&gold.grid())?;
    if let Some(r) = roi {
        mask.grid().check(&r.grid())?;
    }
    let mut total = 0usize;
    let mut wrong = 0usize;
    for i in 0..mask.grid().len() {
        if roi.is_some_and(|r| !r.at(i)) {
            continue;
        }
        total += 1;
        wrong += usize::from(mask.at(i) != gold.at(i));
    }
    if total == 0 {
        return Err(Error::Argument("the ROI is empty".into()));
    }
    Ok(wrong as f64 / total as f64)
}

fn gaussian_blur(grid: ImageGrid, data: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let k = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-k..=k)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let (w, h) = (grid.width() as isize, grid.height() as isize);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (t, wt) in weights.iter().enumerate() {
                    let d = t as isize - k;
                    let (sx, sy) = if horizontal { (x + d, y) } else { (x, y + d) };
                    if (0..w).contains(&sx) && (0..h).contains(&sy) {
                        acc += wt * src[(sy * w + sx) as usize];
                        norm += wt;
                    }
                }
                out[(y * w + x) as usize] = acc / norm;
            }
        }
        out
    };
    pass(&pass(data, true), false)
}

/// A detector whose response is the gold, morphologically biased by `bias`,
/// blurred with `blur` and corrupted by Gaussian noise of standard deviation
/// `noise`. The response falls off across object borders; a negative bias
/// gives a conservative detector that fires most strongly on interiors.
pub fn noisy_detector(
    gold: &BinaryMask,
    bias: i32,
    blur: f64,
    noise: f64,
    seed: u64,
) -> Result<ScalarField> {
    if !(blur >= 0.0) || !(noise >= 0.0) {
        return Err(Error::Argument(
            "blur and noise must be non-negative".into(),
        ));
    }
    let grid = gold.grid();
    let base: Vec<f64> = apply_bias(gold, bias)
        .as_slice()
        .iter()
        .map(|&v| v as f64)
        .collect();
    let mut values = gaussian_blur(grid, &base, blur);
    let normal = Normal::new(0.0, noise).expect("finite sigma");
    let mut rng = rng(seed);
    for v in &mut values {
        *v += normal.sample(&mut rng);
    }
    ScalarField::new(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morph::label_components;

    #[test]
    fn scenes_are_reproducible() {
        for geometry in [Geometry::Linear, Geometry::Areal] {
            let spec = SceneSpec::new(geometry, 96, 64, 17);
            assert_eq!(make_scene(&spec).unwrap(), make_scene(&spec).unwrap());
            let other = SceneSpec { seed: 18, ..spec };
            assert_ne!(
                make_scene(&spec).unwrap().gold,
                make_scene(&other).unwrap().gold
            );
        }
    }

    #[test]
    fn linear_gold_is_its_own_skeleton() {
        for seed in 0..20 {
            let scene = make_scene(&SceneSpec::new(Geometry::Linear, 128, 128, seed)).unwrap();
            assert_eq!(thin(&scene.gold), scene.gold);
            assert!(label_components(&scene.gold).1 >= 1);
        }
    }

    #[test]
    fn areal_positive_fraction_in_skew_band() {
        for seed in 0..20 {
            let scene = make_scene(&SceneSpec::new(Geometry::Areal, 256, 256, seed)).unwrap();
            let frac = scene.gold.count() as f64 / scene.grid().len() as f64;
            let phi = frac / (1.0 - frac);
            assert!((0.01..=0.1).contains(&phi), "seed {seed}: phi {phi}");
        }
    }

    #[test]
    fn small_scenes_are_rejected() {
        assert!(make_scene(&SceneSpec::new(Geometry::Areal, 31, 64, 0)).is_err());
    }

    #[test]
    fn perfect_profile_copies_gold() {
        let scene = make_scene(&SceneSpec::new(Geometry::Areal, 64, 64, 3)).unwrap();
        let p = RaterProfile::new(1.0, 1.0, 0, 9).unwrap();
        assert_eq!(sample_annotation(&scene.gold, &p).unwrap(), scene.gold);
    }

    #[test]
    fn profile_bounds() {
        assert!(RaterProfile::new(0.0, 0.9, 0, 1).is_err());
        assert!(RaterProfile::new(0.9, 1.1, 0, 1).is_err());
        assert!(RaterProfile::new(1.0, 1.0, -2, 1).is_ok());
    }

    #[test]
    fn empirical_sensitivity_concentrates() {
        let grid = ImageGrid::new(400, 250).unwrap();
        let gold = BinaryMask::from_fn(grid, |x, _| x < 200);
        let p = RaterProfile::new(0.9, 0.99, 0, 5).unwrap();
        let m = sample_annotation(&gold, &p).unwrap();
        let hits = (0..grid.len()).filter(|&i| gold.at(i) && m.at(i)).count();
        let sens = hits as f64 / gold.count() as f64;
        assert!((sens - 0.9).abs() < 0.01, "{sens}");
    }

    #[test]
    fn true_error_counts_mismatches() {
        let grid = ImageGrid::new(10, 10).unwrap();
        let gold = BinaryMask::from_fn(grid, |x, y| x + y < 8);
        assert_eq!(true_error(&gold, &gold, None).unwrap(), 0.0);
        assert_eq!(true_error(&gold.complement(), &gold, None).unwrap(), 1.0);
        let mut one = gold.clone();
        one.set(9, 9, true);
        assert_eq!(true_error(&one, &gold, None).unwrap(), 0.01);
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    #[test]
    fn detector_peaks_inside_objects() {
        let scene = make_scene(&SceneSpec::new(Geometry::Areal, 64, 64, 2)).unwrap();
        let resp = noisy_detector(&scene.gold, 0, 1.5, 0.0, 1).unwrap();
        let inside: f64 = (0..4096)
            .filter(|&i| scene.gold.at(i))
            .map(|i| resp.values()[i])
            .sum::<f64>()
            / scene.gold.count() as f64;
        let outside: f64 = (0..4096)
            .filter(|&i| !scene.gold.at(i))
            .map(|i| resp.values()[i])
            .sum::<f64>()
            / (4096 - scene.gold.count()) as f64;
        assert!(inside > 0.5 && outside < 0.2);
    }
}
