//! Binary morphology and window filters.
//!
//! Windows are clipped at the image border (they shrink) rather than padded.

use std::sync::OnceLock;

use crate::mask::{BinaryMask, ImageGrid};

/// Sliding max over a `(2r+1) x (2r+1)` window, clipped at the borders.
pub fn max_filter<T: Copy + PartialOrd>(grid: ImageGrid, data: &[T], radius: usize) -> Vec<T> {
    separable(grid, data, radius, |a, b| if b > a { b } else { a })
}

/// Sliding min over a `(2r+1) x (2r+1)` window, clipped at the borders.
pub fn min_filter<T: Copy + PartialOrd>(grid: ImageGrid, data: &[T], radius: usize) -> Vec<T> {
    separable(grid, data, radius, |a, b| if b < a { b } else { a })
}

fn separable<T: Copy>(
    grid: ImageGrid,
    data: &[T],
    radius: usize,
    pick: impl Fn(T, T) -> T,
) -> Vec<T> {
    assert_eq!(data.len(), grid.len());
    if radius == 0 {
        return data.to_vec();
    }
    let (w, h) = (grid.width(), grid.height());
    let mut rows = data.to_vec();
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            let mut acc = data[y * w + lo];
            for xx in lo + 1..=hi {
                acc = pick(acc, data[y * w + xx]);
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = rows.clone();
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            let mut acc = rows[lo * w + x];
            for yy in lo + 1..=hi {
                acc = pick(acc, rows[yy * w + x]);
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Dilation by a 3x3 square, repeated `steps` times.
pub fn dilate(mask: &BinaryMask, steps: usize) -> BinaryMask {
    let grid = mask.grid();
    let mut data = mask.as_slice().to_vec();
    for _ in 0..steps {
        data = max_filter(grid, &data, 1);
    }
    BinaryMask::from_vec(grid, data).expect("dilation preserves 0/1")
}

/// Erosion by a 3x3 square, repeated `steps` times. Pixels beyond the image
/// border do not count as background.
pub fn erode(mask: &BinaryMask, steps: usize) -> BinaryMask {
    let grid = mask.grid();
    let mut data = mask.as_slice().to_vec();
    for _ in 0..steps {
        data = min_filter(grid, &data, 1);
    }
    BinaryMask::from_vec(grid, data).expect("erosion preserves 0/1")
}

/// Dilate for positive `bias`, erode for negative.
pub fn apply_bias(mask: &BinaryMask, bias: i32) -> BinaryMask {
    match bias {
        0 => mask.clone(),
        b if b > 0 => dilate(mask, b as usize),
        b => erode(mask, b.unsigned_abs() as usize),
    }
}

// Neighbour bit order, clockwise from north.
const OFFSETS: [(i64, i64); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];
const NORTH: usize = 0;
const EAST: usize = 2;
const SOUTH: usize = 4;
const WEST: usize = 6;

/// Whether deleting the centre pixel preserves topology, for 8-connected
/// foreground and 4-connected background, indexed by neighbourhood bits.
fn simple_table() -> &'static [bool; 256] {
    static TABLE: OnceLock<[bool; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [false; 256];
        for (code, slot) in t.iter_mut().enumerate() {
            let fg = |k: usize| code & (1 << k) != 0;
            let fg_components = components(fg, |a, b| chebyshev(a, b) == 1, |_| true);
            let bg_components = components(
                |k| !fg(k),
                |a, b| manhattan(a, b) == 1,
                // only background components touching the centre 4-wise count
                |k| k % 2 == 0,
            );
            *slot = fg_components == 1 && bg_components == 1;
        }
        t
    })
}

fn chebyshev(a: usize, b: usize) -> i64 {
    let (pa, pb) = (OFFSETS[a], OFFSETS[b]);
    (pa.0 - pb.0).abs().max((pa.1 - pb.1).abs())
}

fn manhattan(a: usize, b: usize) -> i64 {
    let (pa, pb) = (OFFSETS[a], OFFSETS[b]);
    (pa.0 - pb.0).abs() + (pa.1 - pb.1).abs()
}

fn components(
    member: impl Fn(usize) -> bool,
    adjacent: impl Fn(usize, usize) -> bool,
    counts: impl Fn(usize) -> bool,
) -> usize {
    let mut label = [usize::MAX; 8];
    let mut n = 0;
    for start in 0..8 {
        if !member(start) || label[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        label[start] = n;
        while let Some(k) = stack.pop() {
            for j in 0..8 {
                if member(j) && label[j] == usize::MAX && adjacent(k, j) {
                    label[j] = n;
                    stack.push(j);
                }
            }
        }
        n += 1;
    }
    (0..n)
        .filter(|&c| (0..8).any(|k| label[k] == c && counts(k)))
        .count()
}

fn neighbourhood(data: &[u8], w: usize, h: usize, x: usize, y: usize) -> u8 {
    let mut code = 0u8;
    for (k, &(dx, dy)) in OFFSETS.iter().enumerate() {
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        if nx >= 0
            && ny >= 0
            && (nx as usize) < w
            && (ny as usize) < h
            && data[ny as usize * w + nx as usize] != 0
        {
            code |= 1 << k;
        }
    }
    code
}

/// Topology-preserving thinning to one-pixel-wide curves.
///
/// Border pixels are peeled in four directional sub-passes; a pixel is deleted
/// only if it is simple in the current image and has at least two foreground
/// neighbours, so end points and isolated pixels survive. The result is a
/// subset of the input and a fixed point of the operator.
pub fn thin(mask: &BinaryMask) -> BinaryMask {
    let grid = mask.grid();
    let (w, h) = (grid.width(), grid.height());
    let table = simple_table();
    let mut data = mask.as_slice().to_vec();
    let deletable = |data: &[u8], x: usize, y: usize, dir: usize| -> bool {
        let code = neighbourhood(data, w, h, x, y);
        code & (1 << dir) == 0 && code.count_ones() >= 2 && table[code as usize]
    };
    loop {
        let mut changed = false;
        for dir in [NORTH, SOUTH, EAST, WEST] {
            let candidates: Vec<usize> = (0..data.len())
                .filter(|&i| data[i] != 0 && deletable(&data, i % w, i / w, dir))
                .collect();
            for i in candidates {
                if deletable(&data, i % w, i / w, dir) {
                    data[i] = 0;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    BinaryMask::from_vec(grid, data).expect("thinning preserves 0/1")
}

/// 8-connected component labels (0 = background, components numbered from 1).
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, u32) {
    let grid = mask.grid();
    let (w, h) = (grid.width(), grid.height());
    let mut labels = vec![0u32; grid.len()];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..grid.len() {
        if !mask.at(start) || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            for &(dx, dy) in &OFFSETS {
                let nx = x as i64 + dx;
                let ny = y as i64 + dy;
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.at(j) && labels[j] == 0 {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
    }
    (labels, next)
}
