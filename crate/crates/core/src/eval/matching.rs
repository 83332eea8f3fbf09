//! Exact and distance-tolerant matching of detections to ground truth.
//!
//! A [`Matcher`] reduces a response/GT pair to two sorted score lists, so
//! the counts at any threshold are two binary searches:
//!
//! * each GT pixel is covered at `theta` when some ROI pixel within the
//!   radius responds at least `theta`, so its cover score is the maximum
//!   response in that disk;
//! * a detection farther than the radius from every GT pixel is a false
//!   positive.
//!
//! Matching never crosses the border of a sub-image extent.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::OperatingPoint;
use crate::error::{Error, Result};
use crate::features::ScalarField;
use crate::mask::{BinaryMask, ImageGrid};

/// Rectangle of a composite image, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extent {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Extent {
    pub fn whole(grid: ImageGrid) -> Self {
        Extent {
            x: 0,
            y: 0,
            width: grid.width(),
            height: grid.height(),
        }
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }
}

/// Matching radius in pixels; zero means exact pixel matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchTolerance {
    radius: f64,
}

impl MatchTolerance {
    pub fn exact() -> Self {
        MatchTolerance { radius: 0.0 }
    }

    pub fn lenient(radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::Argument(format!(
                "match radius must be non-negative, got {radius}"
            )));
        }
        Ok(MatchTolerance { radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn is_exact(&self) -> bool {
        self.radius == 0.0
    }

    pub fn mode(&self) -> &'static str {
        if self.is_exact() {
            "exact"
        } else {
            "lenient-distance"
        }
    }

    /// Offsets of the closed disk of this radius.
    fn disk(&self) -> Vec<(isize, isize)> {
        let r2 = self.radius * self.radius;
        let k = self.radius.floor() as isize;
        let mut out = Vec::new();
        for dy in -k..=k {
            for dx in -k..=k {
                if ((dx * dx + dy * dy) as f64) <= r2 {
                    out.push((dx, dy));
                }
            }
        }
        out
    }
}

/// Tolerance as given on the command line: `exact`, `px:R` (fixed radius)
/// or `diag:F` (fraction of each extent's diagonal).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ToleranceSpec {
    #[default]
    Exact,
    Pixels(f64),
    Diagonal(f64),
}

impl ToleranceSpec {
    pub fn resolve(&self, extent: &Extent) -> Result<MatchTolerance> {
        match *self {
            ToleranceSpec::Exact => Ok(MatchTolerance::exact()),
            ToleranceSpec::Pixels(r) => MatchTolerance::lenient(r),
            ToleranceSpec::Diagonal(f) => MatchTolerance::lenient(f * extent.diagonal()),
        }
    }
}

impl FromStr for ToleranceSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let num = |v: &str| {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite() && *x >= 0.0)
                .ok_or_else(|| format!("`{v}` is not a non-negative number"))
        };
        match s.split_once(':') {
            None if s == "exact" => Ok(ToleranceSpec::Exact),
            Some(("px", v)) => num(v).map(ToleranceSpec::Pixels),
            Some(("diag", v)) => num(v).map(ToleranceSpec::Diagonal),
            _ => Err(format!(
                "tolerance must be `exact`, `px:R` or `diag:F`, got `{s}`"
            )),
        }
    }
}

impl fmt::Display for ToleranceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ToleranceSpec::Exact => f.write_str("exact"),
            ToleranceSpec::Pixels(r) => write!(f, "px:{r}"),
            ToleranceSpec::Diagonal(v) => write!(f, "diag:{v}"),
        }
    }
}

impl Serialize for ToleranceSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ToleranceSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Extents with their resolved tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchPlan {
    grid: ImageGrid,
    regions: Vec<(Extent, MatchTolerance)>,
}

impl MatchPlan {
    pub fn whole(grid: ImageGrid, tol: MatchTolerance) -> Self {
        MatchPlan {
            grid,
            regions: vec![(Extent::whole(grid), tol)],
        }
    }

    /// Extents must tile the grid without overlap.
    pub fn new(grid: ImageGrid, extents: Option<&[Extent]>, spec: ToleranceSpec) -> Result<Self> {
        let extents = match extents {
            Some(e) if !e.is_empty() => e.to_vec(),
            _ => vec![Extent::whole(grid)],
        };
        let mut owner = vec![false; grid.len()];
        for e in &extents {
            if e.width == 0
                || e.height == 0
                || e.x + e.width > grid.width()
                || e.y + e.height > grid.height()
            {
                return Err(Error::Argument(format!(
                    "extent {}x{}+{}+{} does not fit the {grid} grid",
                    e.width, e.height, e.x, e.y
                )));
            }
            for y in e.y..e.y + e.height {
                for x in e.x..e.x + e.width {
                    let i = grid.index(x, y);
                    if owner[i] {
                        return Err(Error::Argument(format!(
                            "extents overlap at pixel ({x}, {y})"
                        )));
                    }
                    owner[i] = true;
                }
            }
        }
        if let Some(i) = owner.iter().position(|o| !o) {
            let (x, y) = grid.coords(i);
            return Err(Error::Argument(format!(
                "extents leave pixel ({x}, {y}) uncovered"
            )));
        }
        let regions = extents
            .into_iter()
            .map(|e| Ok((e, spec.resolve(&e)?)))
            .collect::<Result<_>>()?;
        Ok(MatchPlan { grid, regions })
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn regions(&self) -> &[(Extent, MatchTolerance)] {
        &self.regions
    }
}

/// Squared Euclidean distance from every pixel to the nearest feature
/// pixel; infinite when there is none.
pub fn squared_distance_transform(width: usize, height: usize, feature: &[bool]) -> Vec<f64> {
    assert_eq!(feature.len(), width * height);
    let mut grid: Vec<f64> = feature
        .iter()
        .map(|&f| if f { 0.0 } else { f64::INFINITY })
        .collect();
    let mut col = vec![0.0; height];
    let mut out = vec![0.0; height.max(width)];
    for x in 0..width {
        for y in 0..height {
            col[y] = grid[y * width + x];
        }
        dt_1d(&col, &mut out[..height]);
        for y in 0..height {
            grid[y * width + x] = out[y];
        }
    }
    let mut row = vec![0.0; width];
    for y in 0..height {
        row.copy_from_slice(&grid[y * width..(y + 1) * width]);
        dt_1d(&row, &mut out[..width]);
        grid[y * width..(y + 1) * width].copy_from_slice(&out[..width]);
    }
    grid
}

/// Lower envelope of parabolas rooted at `(q, f[q])`.
fn dt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let sites: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        d.iter_mut().for_each(|v| *v = f64::INFINITY);
        return;
    }
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    let inter = |q: usize, p: usize| {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
    };
    for &q in &sites {
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = inter(q, p);
                    if s <= *z.last().expect("one boundary per site") {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    z.push(f64::INFINITY);
    let mut k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *out = dq * dq + f[v[k]];
    }
}

/// Precomputed matching of one response against one ground truth.
#[derive(Debug, Clone)]
pub struct Matcher {
    positives: u64,
    negatives: u64,
    /// Cover score of every GT pixel, ascending.
    cover: Vec<f64>,
    /// Responses of pixels too far from every GT pixel, ascending.
    unmatched: Vec<f64>,
    /// All evaluated responses, ascending.
    responses: Vec<f64>,
}

impl Matcher {
    pub fn new(
        resp: &ScalarField,
        gt: &BinaryMask,
        roi: Option<&BinaryMask>,
        plan: &MatchPlan,
    ) -> Result<Self> {
        let grid = plan.grid();
        grid.check(&resp.grid())?;
        grid.check(&gt.grid())?;
        if let Some(r) = roi {
            grid.check(&r.grid())?;
        }
        let in_roi = |i: usize| roi.is_none_or(|r| r.at(i));
        let values = resp.values();

        let parts: Vec<(u64, u64, Vec<f64>, Vec<f64>)> = plan
            .regions()
            .par_iter()
            .map(|(e, tol)| {
                let local = |lx: usize, ly: usize| grid.index(e.x + lx, e.y + ly);
                let feature: Vec<bool> = (0..e.width * e.height)
                    .map(|k| {
                        let i = local(k % e.width, k / e.width);
                        gt.at(i) && in_roi(i)
                    })
                    .collect();
                let r2 = tol.radius() * tol.radius();
                let dist = squared_distance_transform(e.width, e.height, &feature);
                let disk = tol.disk();
                let mut pos = 0;
                let mut neg = 0;
                let mut cover = Vec::new();
                let mut unmatched = Vec::new();
                for ly in 0..e.height {
                    for lx in 0..e.width {
                        let k = ly * e.width + lx;
                        let i = local(lx, ly);
                        if !in_roi(i) {
                            continue;
                        }
                        if dist[k] > r2 {
                            unmatched.push(values[i]);
                        }
                        if !feature[k] {
                            neg += 1;
                            continue;
                        }
                        pos += 1;
                        let mut best = f64::NEG_INFINITY;
                        for &(dx, dy) in &disk {
                            let (nx, ny) = (lx as isize + dx, ly as isize + dy);
                            if nx < 0 || ny < 0 || nx >= e.width as isize || ny >= e.height as isize
                            {
                                continue;
                            }
                            let j = local(nx as usize, ny as usize);
                            if in_roi(j) {
                                best = best.max(values[j]);
                            }
                        }
                        cover.push(best);
                    }
                }
                (pos, neg, cover, unmatched)
            })
            .collect();

        let mut m = Matcher {
            positives: 0,
            negatives: 0,
            cover: Vec::new(),
            unmatched: Vec::new(),
            responses: (0..grid.len())
                .filter(|&i| in_roi(i))
                .map(|i| values[i])
                .collect(),
        };
        for (p, n, c, u) in parts {
            m.positives += p;
            m.negatives += n;
            m.cover.extend(c);
            m.unmatched.extend(u);
        }
        m.cover.sort_by(f64::total_cmp);
        m.unmatched.sort_by(f64::total_cmp);
        m.responses.sort_by(f64::total_cmp);
        Ok(m)
    }

    /// Number of GT pixels, `N_p`.
    pub fn positives(&self) -> u64 {
        self.positives
    }

    /// Number of evaluated non-GT pixels, `N_n`.
    pub fn negatives(&self) -> u64 {
        self.negatives
    }

    /// Evaluated responses in ascending order.
    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn point(&self, theta: f64) -> OperatingPoint {
        let at_least = |v: &[f64]| (v.len() - v.partition_point(|&s| s < theta)) as u64;
        let tp = at_least(&self.cover);
        let fp = at_least(&self.unmatched);
        OperatingPoint {
            theta,
            tp,
            fp,
            fn_: self.positives - tp,
            tn: self.negatives - fp,
        }
    }
}

/// Counts of `resp >= theta` against `gt` over the ROI.
pub fn confusion_at(
    resp: &ScalarField,
    gt: &BinaryMask,
    theta: f64,
    tol: MatchTolerance,
    roi: Option<&BinaryMask>,
) -> Result<OperatingPoint> {
    let plan = MatchPlan::whole(gt.grid(), tol);
    Ok(Matcher::new(resp, gt, roi, &plan)?.point(theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raters::Confusion;

    fn field(w: usize, h: usize, v: &[f64]) -> ScalarField {
        ScalarField::new(ImageGrid::new(w, h).unwrap(), v.to_vec()).unwrap()
    }

    fn mask(w: usize, h: usize, bits: &[u8]) -> BinaryMask {
        BinaryMask::from_vec(ImageGrid::new(w, h).unwrap(), bits.to_vec()).unwrap()
    }

    #[test]
    fn exact_mode_is_pixel_confusion() {
        let resp = field(4, 1, &[0.9, 0.2, 0.7, 0.1]);
        let gt = mask(4, 1, &[1, 1, 0, 0]);
        let p = confusion_at(&resp, &gt, 0.5, MatchTolerance::exact(), None).unwrap();
        let det = mask(4, 1, &[1, 0, 1, 0]);
        let c = Confusion::between(&det, &gt, None).unwrap();
        assert_eq!((p.tp, p.fp, p.fn_, p.tn), (c.tp, c.fp, c.fn_, c.tn));
    }

    #[test]
    fn one_pixel_offset_matches_at_radius_one() {
        let resp = field(3, 1, &[0.0, 1.0, 0.0]);
        let gt = mask(3, 1, &[1, 0, 0]);
        let p = confusion_at(&resp, &gt, 0.5, MatchTolerance::lenient(1.0).unwrap(), None).unwrap();
        assert_eq!((p.tp, p.fp, p.fn_), (1, 0, 0));
        let p = confusion_at(&resp, &gt, 0.5, MatchTolerance::exact(), None).unwrap();
        assert_eq!((p.tp, p.fp, p.fn_), (0, 1, 1));
    }

    #[test]
    fn extents_stop_matching_at_borders() {
        let resp = field(4, 1, &[0.0, 0.0, 1.0, 0.0]);
        let gt = mask(4, 1, &[0, 1, 0, 0]);
        let grid = gt.grid();
        let halves = [
            Extent {
                x: 0,
                y: 0,
                width: 2,
                height: 1,
            },
            Extent {
                x: 2,
                y: 0,
                width: 2,
                height: 1,
            },
        ];
        let joint = MatchPlan::new(grid, None, ToleranceSpec::Pixels(1.0)).unwrap();
        let split = MatchPlan::new(grid, Some(&halves), ToleranceSpec::Pixels(1.0)).unwrap();
        let a = Matcher::new(&resp, &gt, None, &joint).unwrap().point(0.5);
        let b = Matcher::new(&resp, &gt, None, &split).unwrap().point(0.5);
        assert_eq!((a.tp, a.fp), (1, 0));
        assert_eq!((b.tp, b.fp), (0, 1));
    }

    #[test]
    fn extents_must_tile() {
        let g = ImageGrid::new(4, 2).unwrap();
        let overlap = [
            Extent {
                x: 0,
                y: 0,
                width: 3,
                height: 2,
            },
            Extent {
                x: 2,
                y: 0,
                width: 2,
                height: 2,
            },
        ];
        assert!(MatchPlan::new(g, Some(&overlap), ToleranceSpec::Exact).is_err());
        let gap = [Extent {
            x: 0,
            y: 0,
            width: 3,
            height: 2,
        }];
        assert!(MatchPlan::new(g, Some(&gap), ToleranceSpec::Exact).is_err());
        let outside = [Extent {
            x: 0,
            y: 0,
            width: 5,
            height: 2,
        }];
        assert!(MatchPlan::new(g, Some(&outside), ToleranceSpec::Exact).is_err());
    }

    #[test]
    fn tolerance_spec_round_trips() {
        for s in ["exact", "px:2.5", "diag:0.0075"] {
            let t: ToleranceSpec = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        assert!("px:-1".parse::<ToleranceSpec>().is_err());
        assert!("near".parse::<ToleranceSpec>().is_err());
        let e = Extent {
            x: 0,
            y: 0,
            width: 300,
            height: 400,
        };
        let r = ToleranceSpec::Diagonal(0.0075)
            .resolve(&e)
            .unwrap()
            .radius();
        assert!((r - 3.75).abs() < 1e-12);
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let (w, h) = (7, 5);
        let feature: Vec<bool> = (0..w * h).map(|i| i % 11 == 3 || i == 20).collect();
        let d = squared_distance_transform(w, h, &feature);
        for i in 0..w * h {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let best = (0..w * h)
                .filter(|&j| feature[j])
                .map(|j| {
                    let (u, v) = ((j % w) as f64, (j / w) as f64);
                    (x - u).powi(2) + (y - v).powi(2)
                })
                .fold(f64::INFINITY, f64::min);
            assert_eq!(d[i], best);
        }
        assert!(squared_distance_transform(3, 1, &[false; 3])
            .iter()
            .all(|v| v.is_infinite()));
    }
}
