//! Pixel-grid foundation: binary masks, annotation stacks and the per-pixel
//! agreement map derived from them.
//!
//! All masks are stored one byte per pixel in row-major order. When a stack
//! carries a region of interest, every statistic in this module is restricted
//! to the ROI pixels (including the normaliser of the Smyth bound).

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width and height of a pixel grid. Both are at least one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageGrid {
    width: usize,
    height: usize,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!(
                "grid must be at least 1x1, got {width}x{height}"
            )));
        }
        Ok(ImageGrid { width, height })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i % self.width, i / self.width)
    }

    /// Length of the image diagonal in pixels.
    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }

    pub(crate) fn check(&self, other: &ImageGrid) -> Result<()> {
        if self != other {
            return Err(Error::dims(self, other));
        }
        Ok(())
    }
}

impl fmt::Display for ImageGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Per-pixel object (1) / background (0) labelling.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    grid: ImageGrid,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn empty(grid: ImageGrid) -> Self {
        BinaryMask {
            grid,
            data: vec![0; grid.len()],
        }
    }

    pub fn full(grid: ImageGrid) -> Self {
        BinaryMask {
            grid,
            data: vec![1; grid.len()],
        }
    }

    /// Build from strict 0/1 values.
    pub fn from_vec(grid: ImageGrid, data: Vec<u8>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::dims(
                format!("{} pixels", grid.len()),
                format!("{} pixels", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            let (x, y) = grid.coords(i);
            return Err(Error::Domain(format!(
                "mask value {} at ({x}, {y}) is not 0 or 1",
                data[i]
            )));
        }
        Ok(BinaryMask { grid, data })
    }

    /// Build from arbitrary bytes; any nonzero byte becomes 1.
    pub fn from_nonzero(grid: ImageGrid, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != grid.len() {
            return Err(Error::dims(
                format!("{} pixels", grid.len()),
                format!("{} pixels", bytes.len()),
            ));
        }
        Ok(BinaryMask {
            grid,
            data: bytes.iter().map(|&b| (b != 0) as u8).collect(),
        })
    }

    pub fn from_fn(grid: ImageGrid, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for y in 0..grid.height() {
            for x in 0..grid.width() {
                data.push(f(x, y) as u8);
            }
        }
        BinaryMask { grid, data }
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[self.grid.index(x, y)] != 0
    }

    #[inline]
    pub fn at(&self, i: usize) -> bool {
        self.data[i] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        let i = self.grid.index(x, y);
        self.data[i] = value as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.grid == other.grid && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            grid: self.grid,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(u8, u8) -> u8) -> Result<BinaryMask> {
        self.grid.check(&other.grid)?;
        Ok(BinaryMask {
            grid: self.grid,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Zero every pixel outside `roi`.
    pub fn restrict(&self, roi: Option<&BinaryMask>) -> Result<BinaryMask> {
        match roi {
            Some(r) => self.intersection(r),
            None => Ok(self.clone()),
        }
    }
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryMask({}, {} set)", self.grid, self.count())?;
        if self.grid.len() <= 64 {
            for row in self.data.chunks(self.grid.width()) {
                f.write_str("\n  ")?;
                for &v in row {
                    f.write_str(if v != 0 { "#" } else { "." })?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: String,
    pub mask: BinaryMask,
}

/// N aligned annotations of one image plus an optional region of interest.
#[derive(Debug, Clone)]
pub struct AnnotationStack {
    grid: ImageGrid,
    annotators: Vec<Annotation>,
    roi: Option<BinaryMask>,
}

impl AnnotationStack {
    pub fn new(annotators: Vec<Annotation>, roi: Option<BinaryMask>) -> Result<Self> {
        let first = annotators
            .first()
            .ok_or_else(|| Error::Argument("a stack needs at least one annotator".into()))?;
        let grid = first.mask.grid();
        if annotators.len() > u16::MAX as usize {
            return Err(Error::Argument(format!(
                "at most {} annotators are supported",
                u16::MAX
            )));
        }
        let mut seen = HashSet::new();
        for a in &annotators {
            if !seen.insert(a.id.as_str()) {
                return Err(Error::Argument(format!(
                    "duplicate annotator id `{}`",
                    a.id
                )));
            }
            grid.check(&a.mask.grid())?;
        }
        if let Some(r) = &roi {
            grid.check(&r.grid())?;
        }
        Ok(AnnotationStack {
            grid,
            annotators,
            roi,
        })
    }

    /// Convenience constructor from `(id, mask)` pairs without an ROI.
    pub fn from_masks<S: Into<String>>(
        masks: impl IntoIterator<Item = (S, BinaryMask)>,
    ) -> Result<Self> {
        let annotators = masks
            .into_iter()
            .map(|(id, mask)| Annotation {
                id: id.into(),
                mask,
            })
            .collect();
        AnnotationStack::new(annotators, None)
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.annotators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotators.is_empty()
    }

    pub fn annotators(&self) -> &[Annotation] {
        &self.annotators
    }

    pub fn ids(&self) -> Vec<&str> {
        self.annotators.iter().map(|a| a.id.as_str()).collect()
    }

    pub fn roi(&self) -> Option<&BinaryMask> {
        self.roi.as_ref()
    }

    #[inline]
    pub fn in_roi(&self, i: usize) -> bool {
        self.roi.as_ref().is_none_or(|r| r.at(i))
    }

    /// Number of pixels taking part in the analysis.
    pub fn roi_pixels(&self) -> usize {
        self.roi.as_ref().map_or(self.grid.len(), BinaryMask::count)
    }

    /// A new stack holding only the annotators whose ids are in `keep`,
    /// in their original order.
    pub fn retain_ids(&self, keep: &[&str]) -> Result<AnnotationStack> {
        let annotators: Vec<Annotation> = self
            .annotators
            .iter()
            .filter(|a| keep.contains(&a.id.as_str()))
            .cloned()
            .collect();
        AnnotationStack::new(annotators, self.roi.clone())
    }

    /// True when every annotator marks exactly the same ROI pixels.
    pub fn is_unanimous(&self) -> bool {
        let first = &self.annotators[0].mask;
        self.annotators[1..]
            .iter()
            .all(|a| (0..self.grid.len()).all(|i| !self.in_roi(i) || a.mask.at(i) == first.at(i)))
    }
}

/// Per-pixel count of annotators marking the pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct AgreementMap {
    grid: ImageGrid,
    counts: Vec<u16>,
    n_annotators: usize,
    roi: Option<BinaryMask>,
}

impl AgreementMap {
    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn counts(&self) -> &[u16] {
        &self.counts
    }

    pub fn n_annotators(&self) -> usize {
        self.n_annotators
    }

    pub fn roi(&self) -> Option<&BinaryMask> {
        self.roi.as_ref()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.counts[self.grid.index(x, y)]
    }

    #[inline]
    pub fn in_roi(&self, i: usize) -> bool {
        self.roi.as_ref().is_none_or(|r| r.at(i))
    }

    pub fn roi_pixels(&self) -> usize {
        self.roi.as_ref().map_or(self.grid.len(), BinaryMask::count)
    }

    /// The marked set `C = {A > 0}`.
    pub fn marked(&self) -> BinaryMask {
        self.at_least(1)
    }

    /// The level set `{A >= n}`.
    pub fn at_least(&self, n: u16) -> BinaryMask {
        BinaryMask {
            grid: self.grid,
            data: self.counts.iter().map(|&c| (c >= n) as u8).collect(),
        }
    }

    /// Build directly from counts; used by tests and the C interface.
    pub fn from_counts(
        grid: ImageGrid,
        counts: Vec<u16>,
        n_annotators: usize,
        roi: Option<BinaryMask>,
    ) -> Result<Self> {
        if counts.len() != grid.len() {
            return Err(Error::dims(grid.len(), counts.len()));
        }
        if n_annotators == 0 {
            return Err(Error::Argument("n_annotators must be at least 1".into()));
        }
        if let Some(r) = &roi {
            grid.check(&r.grid())?;
        }
        let mut counts = counts;
        for (i, c) in counts.iter_mut().enumerate() {
            if *c as usize > n_annotators {
                return Err(Error::Domain(format!(
                    "count {c} exceeds annotator count {n_annotators}"
                )));
            }
            if roi.as_ref().is_some_and(|r| !r.at(i)) {
                *c = 0;
            }
        }
        Ok(AgreementMap {
            grid,
            counts,
            n_annotators,
            roi,
        })
    }
}

/// Consensus threshold `tau` in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusParams {
    tau: f64,
}

impl ConsensusParams {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Argument(format!(
                "tau must lie in (0, 1], got {tau}"
            )));
        }
        Ok(ConsensusParams { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Count annotators per pixel; pixels outside the ROI get zero.
pub fn agreement_map(stack: &AnnotationStack) -> AgreementMap {
    let grid = stack.grid();
    let width = grid.width();
    let mut counts = vec![0u16; grid.len()];
    counts
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| {
            let base = y * width;
            for a in stack.annotators() {
                let m = &a.mask.as_slice()[base..base + width];
                for (c, &v) in row.iter_mut().zip(m) {
                    *c += v as u16;
                }
            }
            if let Some(roi) = stack.roi() {
                let r = &roi.as_slice()[base..base + width];
                for (c, &v) in row.iter_mut().zip(r) {
                    if v == 0 {
                        *c = 0;
                    }
                }
            }
        });
    AgreementMap {
        grid,
        counts,
        n_annotators: stack.len(),
        roi: stack.roi().cloned(),
    }
}

/// `|{A >= n}| / |{A > 0}|`.
pub fn agreement_fraction(agreement: &AgreementMap, n: usize) -> Result<f64> {
    let total = agreement.n_annotators();
    if n < 1 || n > total {
        return Err(Error::Argument(format!(
            "n must lie in 1..={total}, got {n}"
        )));
    }
    let mut marked = 0usize;
    let mut reached = 0usize;
    for &c in agreement.counts() {
        marked += (c > 0) as usize;
        reached += (c as usize >= n) as usize;
    }
    if marked == 0 {
        return Err(Error::EmptyAnnotation);
    }
    Ok(reached as f64 / marked as f64)
}

/// `(n, fraction)` for every `n` in `1..=N`.
pub fn agreement_curve(agreement: &AgreementMap) -> Result<Vec<(usize, f64)>> {
    let n = agreement.n_annotators();
    let mut hist = vec![0usize; n + 1];
    for &c in agreement.counts() {
        hist[c as usize] += 1;
    }
    let marked: usize = hist[1..].iter().sum();
    if marked == 0 {
        return Err(Error::EmptyAnnotation);
    }
    let mut out = Vec::with_capacity(n);
    let mut reached = marked;
    for level in 1..=n {
        out.push((level, reached as f64 / marked as f64));
        reached -= hist[level];
    }
    Ok(out)
}

/// Smyth's lower bound on the mean annotator error rate:
/// `(1 / (P N)) * sum(N - max(A, N - A))` where `P` is the number of ROI
/// pixels (all pixels without an ROI).
pub fn smyth_bound(agreement: &AgreementMap) -> f64 {
    let n = agreement.n_annotators() as u64;
    let mut sum = 0u64;
    for (i, &c) in agreement.counts().iter().enumerate() {
        if agreement.in_roi(i) {
            let a = c as u64;
            sum += n - a.max(n - a);
        }
    }
    let pixels = agreement.roi_pixels() as u64;
    if pixels == 0 {
        return 0.0;
    }
    sum as f64 / (pixels * n) as f64
}

/// Consensus mask: 1 where `A / N >= tau`.
pub fn threshold_consensus(agreement: &AgreementMap, params: ConsensusParams) -> BinaryMask {
    let n = agreement.n_annotators() as f64;
    let tau = params.tau();
    BinaryMask {
        grid: agreement.grid(),
        data: agreement
            .counts()
            .iter()
            .map(|&c| (c as f64 / n >= tau) as u8)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(bits: &str) -> BinaryMask {
        let grid = ImageGrid::new(bits.len(), 1).unwrap();
        BinaryMask::from_vec(grid, bits.bytes().map(|b| b - b'0').collect()).unwrap()
    }

    fn stack(rows: &[&str]) -> AnnotationStack {
        AnnotationStack::from_masks(
            rows.iter()
                .enumerate()
                .map(|(i, r)| (format!("A{}", i + 1), row(r))),
        )
        .unwrap()
    }

    #[test]
    fn agreement_counts_by_hand() {
        let a = agreement_map(&stack(&["1100", "0110", "0100"]));
        assert_eq!(a.counts(), &[1, 3, 1, 0]);
    }

    #[test]
    fn agreement_unanimous_and_empty() {
        let a = agreement_map(&stack(&["1", "1", "1"]));
        assert_eq!(a.counts(), &[3]);
        let a = agreement_map(&stack(&["0000"]));
        assert!(a.counts().iter().all(|&c| c == 0));
    }

    #[test]
    fn roi_zeroes_counts_and_normaliser() {
        let grid = ImageGrid::new(4, 1).unwrap();
        let s = AnnotationStack::new(
            vec![
                Annotation {
                    id: "a".into(),
                    mask: row("1111"),
                },
                Annotation {
                    id: "b".into(),
                    mask: row("0011"),
                },
            ],
            Some(BinaryMask::from_vec(grid, vec![0, 1, 1, 0]).unwrap()),
        )
        .unwrap();
        let a = agreement_map(&s);
        assert_eq!(a.counts(), &[0, 1, 2, 0]);
        // one disagreeing pixel out of two ROI pixels, N = 2
        assert_eq!(smyth_bound(&a), 1.0 / 4.0);
    }

    #[test]
    fn fraction_examples() {
        let grid = ImageGrid::new(3, 1).unwrap();
        let a = AgreementMap::from_counts(grid, vec![3, 2, 1], 3, None).unwrap();
        assert_eq!(agreement_fraction(&a, 1).unwrap(), 1.0);
        assert_eq!(agreement_fraction(&a, 2).unwrap(), 2.0 / 3.0);
        assert_eq!(agreement_fraction(&a, 3).unwrap(), 1.0 / 3.0);
        let curve = agreement_curve(&a).unwrap();
        assert_eq!(curve, vec![(1, 1.0), (2, 2.0 / 3.0), (3, 1.0 / 3.0)]);
    }

    #[test]
    fn fraction_errors() {
        let a = agreement_map(&stack(&["00", "00"]));
        assert!(matches!(
            agreement_fraction(&a, 1),
            Err(Error::EmptyAnnotation)
        ));
        let a = agreement_map(&stack(&["10", "00"]));
        assert!(matches!(agreement_fraction(&a, 0), Err(Error::Argument(_))));
        assert!(matches!(agreement_fraction(&a, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn smyth_examples() {
        assert_eq!(
            smyth_bound(&agreement_map(&stack(&["1010", "1010", "1010"]))),
            0.0
        );
        assert_eq!(smyth_bound(&agreement_map(&stack(&["1010", "0101"]))), 0.5);
        let grid = ImageGrid::new(4, 1).unwrap();
        let a = AgreementMap::from_counts(grid, vec![3, 2, 1, 0], 3, None).unwrap();
        assert!((smyth_bound(&a) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn consensus_examples() {
        let s = stack(&["1100", "0110"]);
        let a = agreement_map(&s);
        let half = threshold_consensus(&a, ConsensusParams::new(0.5).unwrap());
        assert_eq!(
            half,
            s.annotators()[0]
                .mask
                .union(&s.annotators()[1].mask)
                .unwrap()
        );
        let all = threshold_consensus(&a, ConsensusParams::new(1.0).unwrap());
        assert_eq!(all, row("0100"));

        let grid = ImageGrid::new(1, 1).unwrap();
        let a = AgreementMap::from_counts(grid, vec![2], 4, None).unwrap();
        assert!(threshold_consensus(&a, ConsensusParams::new(0.5).unwrap()).get(0, 0));
    }

    #[test]
    fn consensus_param_range() {
        assert!(ConsensusParams::new(0.0).is_err());
        assert!(ConsensusParams::new(1.0000001).is_err());
        assert!(ConsensusParams::new(f64::NAN).is_err());
        assert!(ConsensusParams::new(1.0).is_ok());
    }

    #[test]
    fn stack_validation() {
        assert!(AnnotationStack::from_masks(Vec::<(String, BinaryMask)>::new()).is_err());
        assert!(AnnotationStack::from_masks([("a", row("10")), ("a", row("01"))]).is_err());
        assert!(matches!(
            AnnotationStack::from_masks([("a", row("10")), ("b", row("011"))]),
            Err(Error::Dimension { .. })
        ));
        assert!(BinaryMask::from_vec(ImageGrid::new(2, 1).unwrap(), vec![0, 2]).is_err());
    }

    #[test]
    fn unanimity() {
        assert!(stack(&["0110", "0110"]).is_unanimous());
        assert!(!stack(&["0110", "0111"]).is_unanimous());
    }
}
