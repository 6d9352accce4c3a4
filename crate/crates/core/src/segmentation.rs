//! Connected components of foreground classes and their geometry.
//!
//! Components use 8-connectivity, matching the 8-neighborhood that defines the
//! inner/boundary split. A pixel is *inner* when all eight neighbors exist in
//! the image and belong to the same segment; image-border pixels are therefore
//! always boundary, which keeps every segment's boundary non-empty.

use crate::error::{Error, Result};
use crate::tensor::LabelMap;

/// One connected component: its class, sorted pixel set, inner/boundary
/// partition and geometric center.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    class_id: u16,
    pixels: Vec<(u32, u32)>,
    inner: Vec<(u32, u32)>,
    boundary: Vec<(u32, u32)>,
    center: (f64, f64),
}

impl Segment {
    /// Builds a segment from an arbitrary pixel collection. Pixels are sorted
    /// row-major and deduplicated; the inner/boundary split and center are
    /// computed here so all invariants hold by construction.
    pub fn new(class_id: u16, mut pixels: Vec<(u32, u32)>, height: u32, width: u32) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::validation("segment must contain at least one pixel"));
        }
        pixels.sort_unstable();
        pixels.dedup();
        for &(r, c) in &pixels {
            if r >= height || c >= width {
                return Err(Error::validation(format!(
                    "segment pixel ({r}, {c}) outside {height}x{width} image"
                )));
            }
        }
        let (inner, boundary) = inner_boundary_split(&pixels, height, width)?;
        let center = geometric_center(&pixels)?;
        Ok(Segment { class_id, pixels, inner, boundary, center })
    }

    pub fn class_id(&self) -> u16 {
        self.class_id
    }

    pub fn pixels(&self) -> &[(u32, u32)] {
        &self.pixels
    }

    pub fn inner(&self) -> &[(u32, u32)] {
        &self.inner
    }

    pub fn boundary(&self) -> &[(u32, u32)] {
        &self.boundary
    }

    pub fn size(&self) -> usize {
        self.pixels.len()
    }

    pub fn inner_size(&self) -> usize {
        self.inner.len()
    }

    pub fn boundary_size(&self) -> usize {
        self.boundary.len()
    }

    /// (mean row, mean col).
    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    /// First pixel in row-major order; used for deterministic ordering.
    pub fn first_pixel(&self) -> (u32, u32) {
        self.pixels[0]
    }

    /// True if the sorted pixel list contains the coordinate.
    pub fn contains(&self, pixel: (u32, u32)) -> bool {
        self.pixels.binary_search(&pixel).is_ok()
    }
}

const NEIGHBORS_8: [(i64, i64); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

pub type PixelList = Vec<(u32, u32)>;

/// Splits a pixel set into inner pixels (all eight in-image neighbors are
/// members) and boundary pixels (the rest). Expects the slice sorted row-major.
pub fn inner_boundary_split(
    pixels: &[(u32, u32)],
    height: u32,
    width: u32,
) -> Result<(PixelList, PixelList)> {
    if pixels.is_empty() {
        return Err(Error::validation("cannot split an empty segment"));
    }
    let mut inner = Vec::new();
    let mut boundary = Vec::new();
    for &(r, c) in pixels {
        let is_inner = NEIGHBORS_8.iter().all(|&(dr, dc)| {
            let nr = r as i64 + dr;
            let nc = c as i64 + dc;
            nr >= 0
                && nc >= 0
                && nr < height as i64
                && nc < width as i64
                && pixels.binary_search(&(nr as u32, nc as u32)).is_ok()
        });
        if is_inner {
            inner.push((r, c));
        } else {
            boundary.push((r, c));
        }
    }
    Ok((inner, boundary))
}

/// Arithmetic mean of the (row, col) coordinates.
pub fn geometric_center(pixels: &[(u32, u32)]) -> Result<(f64, f64)> {
    if pixels.is_empty() {
        return Err(Error::validation("cannot take the center of an empty segment"));
    }
    let mut row_sum = 0.0f64;
    let mut col_sum = 0.0f64;
    for &(r, c) in pixels {
        row_sum += r as f64;
        col_sum += c as f64;
    }
    let n = pixels.len() as f64;
    Ok((row_sum / n, col_sum / n))
}

/// Extracts the maximal 8-connected components of equal-class pixels for the
/// given classes. Pixels with labels outside `classes` (including any ignore
/// label) never join a segment. The result is ordered by
/// (class id, first pixel in row-major order).
pub fn connected_components(labels: &LabelMap, classes: &[u16]) -> Vec<Segment> {
    if classes.is_empty() {
        return Vec::new();
    }
    let height = labels.height();
    let width = labels.width();
    let mut wanted = [false; u16::MAX as usize + 1];
    for &c in classes {
        wanted[c as usize] = true;
    }
    let values = labels.values();
    let npix = values.len();
    let mut visited = vec![false; npix];
    let mut segments = Vec::new();
    let mut stack = Vec::new();
    for start in 0..npix {
        if visited[start] || !wanted[values[start] as usize] {
            continue;
        }
        let class_id = values[start];
        let mut pixels = Vec::new();
        visited[start] = true;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let r = (idx / width as usize) as u32;
            let c = (idx % width as usize) as u32;
            pixels.push((r, c));
            for &(dr, dc) in &NEIGHBORS_8 {
                let nr = r as i64 + dr;
                let nc = c as i64 + dc;
                if nr < 0 || nc < 0 || nr >= height as i64 || nc >= width as i64 {
                    continue;
                }
                let nidx = nr as usize * width as usize + nc as usize;
                if !visited[nidx] && values[nidx] == class_id {
                    visited[nidx] = true;
                    stack.push(nidx);
                }
            }
        }
        // Scan order guarantees the seed is the component's row-major minimum.
        segments.push(Segment::new(class_id, pixels, height, width).expect("non-empty component"));
    }
    segments.sort_by_key(|s| (s.class_id(), s.first_pixel()));
    segments
}
