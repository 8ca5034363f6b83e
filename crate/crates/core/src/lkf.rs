//! Detection and measurement of linear kinematic features (LKFs): narrow
//! bands of concentrated shear deformation.  The pipeline regrids element
//! shear onto 2 km pixels, band-passes the log field, binarizes at a
//! quantile, gates out single-pixel-wide responses, thins to skeletons, and
//! splits them into simple polyline segments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Staggering};

/// Shear deformation resampled on square pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationImage {
    /// Pixels along x.
    pub nx: usize,
    /// Pixels along y.
    pub ny: usize,
    /// Pixel edge length (km).
    pub pixel_km: f64,
    /// Row-major values, nonnegative (1/s).
    pub data: Vec<f64>,
}

impl DeformationImage {
    pub fn new(nx: usize, ny: usize, pixel_km: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(Error::FieldLength {
                name: "image",
                got: data.len(),
                expected: nx * ny,
            });
        }
        Ok(DeformationImage {
            nx,
            ny,
            pixel_km,
            data,
        })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nx + i]
    }
}

/// Knobs of the detection pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    /// Values are clamped up to this before taking log10 (1/s).
    pub log_floor: f64,
    /// Band-pass scales in pixels: (ridge width, background).
    pub dog_sigmas: (f64, f64),
    /// Binarization quantile over the positive band-pass responses.
    pub threshold_quantile: f64,
    /// Minimum band-pass contrast (log10 units) for a pixel to count as
    /// feature at all.  The band-pass of log values is invariant under
    /// rescaling the field, so this absolute floor keeps scale invariance
    /// while suppressing background-noise responses that the quantile alone
    /// would keep (it always retains a fixed fraction of the noise).
    pub min_response: f64,
    /// Segments with fewer pixels than this are discarded.
    pub min_length_px: usize,
    /// Components must contain a solid square of this edge to survive.
    pub min_width_px: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            log_floor: 1e-12,
            dog_sigmas: (1.0, 5.0),
            threshold_quantile: 0.85,
            // ~12% local contrast; an order of magnitude above the band-pass
            // response of percent-level background noise, several below a
            // ridge standing 10x over its surroundings.
            min_response: 0.05,
            min_length_px: 10,
            min_width_px: 2,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.log_floor > 0.0) {
            return Err(Error::InvalidParameter {
                name: "log_floor",
                value: self.log_floor,
                reason: "must be positive".into(),
            });
        }
        if !(self.dog_sigmas.0 > 0.0 && self.dog_sigmas.1 > self.dog_sigmas.0) {
            return Err(Error::InvalidParameter {
                name: "dog_sigmas",
                value: self.dog_sigmas.1,
                reason: "need 0 < small < large".into(),
            });
        }
        if !(self.threshold_quantile > 0.0 && self.threshold_quantile < 1.0) {
            return Err(Error::InvalidParameter {
                name: "threshold_quantile",
                value: self.threshold_quantile,
                reason: "must lie in (0, 1)".into(),
            });
        }
        if !(self.min_response >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "min_response",
                value: self.min_response,
                reason: "must be non-negative".into(),
            });
        }
        if self.min_width_px < 2 {
            return Err(Error::InvalidParameter {
                name: "min_width_px",
                value: self.min_width_px as f64,
                reason: "features must be wider than one pixel".into(),
            });
        }
        Ok(())
    }
}

/// One detected feature: a simple 8-connected pixel polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct LkfSegment {
    /// Ordered (i, j) pixel coordinates.
    pub pixels: Vec<(u32, u32)>,
    /// Step-metric length (km).
    pub length_km: f64,
    /// Mean shear deformation over the pixels (1/s).
    pub mean_intensity: f64,
}

/// Count and total length of a segment list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LkfStats {
    pub count: usize,
    pub total_length_km: f64,
}

/// Resample an element-wise shear field onto square pixels of `pixel_km`
/// by nearest-element (containing-element) sampling at pixel centers.
pub fn regrid_shear(
    grid: &Grid,
    staggering: Staggering,
    shear: &[f64],
    pixel_km: f64,
) -> Result<DeformationImage> {
    let px = pixel_km * 1e3;
    let (lx, ly) = (grid.lx(), grid.ly());
    let nx = lx / px;
    let ny = ly / px;
    if (nx - nx.round()).abs() > 1e-9 || (ny - ny.round()).abs() > 1e-9 {
        return Err(Error::NonDivisibleDomain { l: lx, h: px });
    }
    let (nx, ny) = (nx.round() as usize, ny.round() as usize);
    let mut data = vec![0.0; nx * ny];
    match staggering {
        Staggering::B | Staggering::Cd1 => {
            // One strain element per cell, in cell order.
            if shear.len() != grid.n_cells() {
                return Err(Error::FieldLength {
                    name: "shear",
                    got: shear.len(),
                    expected: grid.n_cells(),
                });
            }
            for j in 0..ny {
                for i in 0..nx {
                    let x = (i as f64 + 0.5) * px;
                    let y = (j as f64 + 0.5) * px;
                    data[j * nx + i] = shear[grid.cell_of_point(x, y)];
                }
            }
        }
        Staggering::Cd2 => {
            let dm = grid.diamond_mesh()?;
            if shear.len() != dm.elems.len() {
                return Err(Error::FieldLength {
                    name: "shear",
                    got: shear.len(),
                    expected: dm.elems.len(),
                });
            }
            for j in 0..ny {
                for i in 0..nx {
                    let x = (i as f64 + 0.5) * px;
                    let y = (j as f64 + 0.5) * px;
                    data[j * nx + i] = shear[dm.elem_of_point(x, y)];
                }
            }
        }
    }
    DeformationImage::new(nx, ny, pixel_km, data)
}

/// Reflect an out-of-range index back into [0, n) (mirror at the border).
#[inline]
fn reflect(mut k: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if k < 0 {
            k = -k - 1;
        } else if k >= n {
            k = 2 * n - 1 - k;
        } else {
            return k as usize;
        }
    }
}

/// Separable Gaussian blur with mirror padding; the kernel is normalized so
/// constants are preserved exactly.
pub fn gaussian_blur(data: &[f64], nx: usize, ny: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for k in -radius..=radius {
        kernel.push((-0.5 * (k as f64 / sigma).powi(2)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= sum;
    }

    let mut tmp = vec![0.0; data.len()];
    for j in 0..ny {
        for i in 0..nx {
            let mut acc = 0.0;
            for (kk, &w) in kernel.iter().enumerate() {
                let ii = reflect(i as isize + kk as isize - radius, nx);
                acc += w * data[j * nx + ii];
            }
            tmp[j * nx + i] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for j in 0..ny {
        for i in 0..nx {
            let mut acc = 0.0;
            for (kk, &w) in kernel.iter().enumerate() {
                let jj = reflect(j as isize + kk as isize - radius, ny);
                acc += w * tmp[jj * nx + i];
            }
            out[j * nx + i] = acc;
        }
    }
    out
}

/// Difference-of-Gaussians band-pass of the log10 field.
pub fn dog_response(image: &DeformationImage, p: &DetectorParams) -> Vec<f64> {
    let log: Vec<f64> = image
        .data
        .iter()
        .map(|&v| v.max(p.log_floor).log10())
        .collect();
    let small = gaussian_blur(&log, image.nx, image.ny, p.dog_sigmas.0);
    let large = gaussian_blur(&log, image.nx, image.ny, p.dog_sigmas.1);
    small
        .iter()
        .zip(&large)
        .map(|(s, l)| s - l)
        .collect()
}

/// Rounding-noise floor for band-pass responses: blurring a constant
/// reproduces it only to machine precision, so anything this small is not a
/// response at all.  Keeps truly featureless images feature-free.
fn response_floor(log: &[f64]) -> f64 {
    let scale = log.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    1e-12 * scale.max(1.0)
}

/// Linear-interpolation quantile of an unsorted sample.
fn quantile(values: &mut Vec<f64>, q: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < values.len() {
        values[lo] * (1.0 - frac) + values[lo + 1] * frac
    } else {
        values[lo]
    }
}

/// 8-connected component labels over a mask; label 0 means background.
fn label_components(mask: &[bool], nx: usize, ny: usize) -> (Vec<u32>, u32) {
    let mut labels = vec![0u32; mask.len()];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (i, j) = (p % nx, p / nx);
            for (di, dj) in NEIGHBORS_8 {
                let (ii, jj) = (i as isize + di, j as isize + dj);
                if ii < 0 || jj < 0 || ii >= nx as isize || jj >= ny as isize {
                    continue;
                }
                let q = jj as usize * nx + ii as usize;
                if mask[q] && labels[q] == 0 {
                    labels[q] = next;
                    stack.push(q);
                }
            }
        }
    }
    (labels, next)
}

/// Axis neighbors first so path tracing prefers straight continuation.
const NEIGHBORS_8: [(isize, isize); 8] = [
    (0, -1),
    (1, 0),
    (0, 1),
    (-1, 0),
    (1, -1),
    (1, 1),
    (-1, 1),
    (-1, -1),
];

/// Drop components whose feature is nowhere `w` pixels wide.  Width is
/// measured at half maximum on the unsmoothed band-pass `raw` (the detection
/// smoothing inflates even a single-pixel line to a multi-pixel response): a
/// component survives only if the pixels reaching half its peak response
/// hold a solid `w`×`w` square somewhere.
fn width_gate(mask: &mut [bool], raw: &[f64], dog: &[f64], nx: usize, ny: usize, w: usize) {
    let (labels, n_labels) = label_components(mask, nx, ny);
    let mut peak = vec![f64::NEG_INFINITY; n_labels as usize + 1];
    for (p, &m) in mask.iter().enumerate() {
        if m {
            let l = labels[p] as usize;
            peak[l] = peak[l].max(dog[p]);
        }
    }
    let mut wide = vec![false; n_labels as usize + 1];
    for j in 0..ny.saturating_sub(w - 1) {
        'pos: for i in 0..nx.saturating_sub(w - 1) {
            let label = labels[j * nx + i] as usize;
            if label == 0 {
                continue;
            }
            let half = 0.5 * peak[label];
            for dj in 0..w {
                for di in 0..w {
                    let p = (j + dj) * nx + (i + di);
                    if !mask[p] || raw[p] < half {
                        continue 'pos;
                    }
                }
            }
            wide[label] = true;
        }
    }
    for (p, m) in mask.iter_mut().enumerate() {
        if *m && !wide[labels[p] as usize] {
            *m = false;
        }
    }
}

/// Morphological thinning to a 1-pixel skeleton (Zhang–Suen).
fn thin(mask: &mut [bool], nx: usize, ny: usize) {
    let get = |m: &[bool], i: isize, j: isize| -> bool {
        if i < 0 || j < 0 || i >= nx as isize || j >= ny as isize {
            false
        } else {
            m[j as usize * nx + i as usize]
        }
    };
    let mut kill = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            kill.clear();
            for j in 0..ny as isize {
                for i in 0..nx as isize {
                    if !get(mask, i, j) {
                        continue;
                    }
                    // Clockwise ring starting north.
                    let ring = [
                        get(mask, i, j - 1),
                        get(mask, i + 1, j - 1),
                        get(mask, i + 1, j),
                        get(mask, i + 1, j + 1),
                        get(mask, i, j + 1),
                        get(mask, i - 1, j + 1),
                        get(mask, i - 1, j),
                        get(mask, i - 1, j - 1),
                    ];
                    let b = ring.iter().filter(|&&x| x).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8)
                        .filter(|&k| !ring[k] && ring[(k + 1) % 8])
                        .count();
                    if a != 1 {
                        continue;
                    }
                    let (n, e, s, w) = (ring[0], ring[2], ring[4], ring[6]);
                    let ok = if pass == 0 {
                        !(n && e && s) && !(e && s && w)
                    } else {
                        !(n && e && w) && !(n && s && w)
                    };
                    if ok {
                        kill.push((j * nx as isize + i) as usize);
                    }
                }
            }
            if !kill.is_empty() {
                changed = true;
                for &p in &kill {
                    mask[p] = false;
                }
            }
        }
        if !changed {
            return;
        }
    }
}

/// Step-metric length of a pixel polyline: each move contributes the pixel
/// edge (axis) or its diagonal, and the head pixel counts as one more step
/// in the direction of the first move (so an n-pixel straight run measures
/// n pixel edges).
pub fn polyline_length_km(pixels: &[(u32, u32)], pixel_km: f64) -> f64 {
    if pixels.len() < 2 {
        return pixel_km * (pixels.len() as f64);
    }
    let metric = |a: (u32, u32), b: (u32, u32)| -> f64 {
        if a.0 != b.0 && a.1 != b.1 {
            pixel_km * std::f64::consts::SQRT_2
        } else {
            pixel_km
        }
    };
    let mut total = metric(pixels[0], pixels[1]);
    for pair in pixels.windows(2) {
        total += metric(pair[0], pair[1]);
    }
    total
}

/// Run the full detection pipeline on a deformation image.
pub fn detect(image: &DeformationImage, p: &DetectorParams) -> Result<Vec<LkfSegment>> {
    p.validate()?;
    let (nx, ny) = (image.nx, image.ny);
    let log: Vec<f64> = image
        .data
        .iter()
        .map(|&v| v.max(p.log_floor).log10())
        .collect();
    let small = gaussian_blur(&log, nx, ny, p.dog_sigmas.0);
    let large = gaussian_blur(&log, nx, ny, p.dog_sigmas.1);
    let dog: Vec<f64> = small.iter().zip(&large).map(|(s, l)| s - l).collect();
    let floor = response_floor(&log);

    let mut positive: Vec<f64> = dog.iter().cloned().filter(|&v| v > floor).collect();
    if positive.is_empty() {
        return Ok(Vec::new());
    }
    let threshold = quantile(&mut positive, p.threshold_quantile).max(p.min_response);
    let mut mask: Vec<bool> = dog.iter().map(|&v| v > floor && v >= threshold).collect();
    // Unsmoothed band-pass, for the width-at-half-maximum measurement.
    let raw: Vec<f64> = log.iter().zip(&large).map(|(v, l)| v - l).collect();

    width_gate(&mut mask, &raw, &dog, nx, ny, p.min_width_px);
    thin(&mut mask, nx, ny);

    // Split at junction pixels: remove everything with 3+ skeleton neighbors.
    let neighbor_count = |m: &[bool], i: usize, j: usize| -> usize {
        NEIGHBORS_8
            .iter()
            .filter(|(di, dj)| {
                let (ii, jj) = (i as isize + di, j as isize + dj);
                ii >= 0
                    && jj >= 0
                    && ii < nx as isize
                    && jj < ny as isize
                    && m[jj as usize * nx + ii as usize]
            })
            .count()
    };
    let skeleton = mask.clone();
    let mut junction = vec![false; mask.len()];
    for j in 0..ny {
        for i in 0..nx {
            if skeleton[j * nx + i] && neighbor_count(&skeleton, i, j) >= 3 {
                mask[j * nx + i] = false;
                junction[j * nx + i] = true;
            }
        }
    }

    // Trace the remaining chains into ordered polylines: open paths from
    // their endpoints first, then whatever closed loops are left.
    let mut visited = vec![false; mask.len()];
    let mut segments = Vec::new();
    let trace = |start: usize, mask: &[bool], visited: &mut [bool]| -> Vec<(u32, u32)> {
        let mut path = vec![(start % nx, start / nx)];
        visited[start] = true;
        loop {
            let (i, j) = *path.last().unwrap();
            let mut next = None;
            for (di, dj) in NEIGHBORS_8 {
                let (ii, jj) = (i as isize + di, j as isize + dj);
                if ii < 0 || jj < 0 || ii >= nx as isize || jj >= ny as isize {
                    continue;
                }
                let q = jj as usize * nx + ii as usize;
                if mask[q] && !visited[q] {
                    next = Some(q);
                    break;
                }
            }
            match next {
                Some(q) => {
                    visited[q] = true;
                    path.push((q % nx, q / nx));
                }
                None => break,
            }
        }
        path.iter().map(|&(i, j)| (i as u32, j as u32)).collect()
    };
    for pass in 0..2 {
        for start in 0..mask.len() {
            if !mask[start] || visited[start] {
                continue;
            }
            let (i, j) = (start % nx, start / nx);
            if pass == 0 && neighbor_count(&mask, i, j) > 1 {
                continue;
            }
            let mut pixels = trace(start, &mask, &mut visited);
            // A cut at a junction leaves the junction pixel on every branch
            // meeting there, so reattach it to any end it touches.
            let junction_by = |p: (u32, u32), exclude: Option<(u32, u32)>| -> Option<(u32, u32)> {
                NEIGHBORS_8.iter().find_map(|(di, dj)| {
                    let (ii, jj) = (p.0 as isize + di, p.1 as isize + dj);
                    if ii < 0 || jj < 0 || ii >= nx as isize || jj >= ny as isize {
                        return None;
                    }
                    let q = (ii as u32, jj as u32);
                    (junction[jj as usize * nx + ii as usize] && Some(q) != exclude).then_some(q)
                })
            };
            let head = junction_by(pixels[0], None);
            if let Some(h) = head {
                pixels.insert(0, h);
            }
            if let Some(t) = junction_by(*pixels.last().unwrap(), head) {
                pixels.push(t);
            }
            if pixels.len() < p.min_length_px {
                continue;
            }
            let mean = pixels
                .iter()
                .map(|&(i, j)| image.at(i as usize, j as usize))
                .sum::<f64>()
                / pixels.len() as f64;
            segments.push(LkfSegment {
                length_km: polyline_length_km(&pixels, image.pixel_km),
                pixels,
                mean_intensity: mean,
            });
        }
    }
    Ok(segments)
}

/// Aggregate count and total length.
pub fn lkf_stats(segments: &[LkfSegment]) -> LkfStats {
    LkfStats {
        count: segments.len(),
        total_length_km: segments.iter().map(|s| s.length_km).sum(),
    }
}

/// Detection stats plus how the count moves when the binarization quantile
/// shifts by ±0.05 (clamped inside (0, 1)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub quantile: f64,
    pub count: usize,
    pub total_length_km: f64,
    pub quantile_minus: f64,
    pub count_minus: usize,
    pub quantile_plus: f64,
    pub count_plus: usize,
    /// Largest |count shift| across the two perturbed quantiles.
    pub count_sensitivity: usize,
}

/// Run detection at the configured quantile and at ±0.05 around it.
pub fn detect_with_sensitivity(
    image: &DeformationImage,
    p: &DetectorParams,
) -> Result<(Vec<LkfSegment>, SensitivityReport)> {
    let segments = detect(image, p)?;
    let stats = lkf_stats(&segments);
    let sweep = |quantile: f64| -> Result<usize> {
        let swept = DetectorParams {
            threshold_quantile: quantile,
            ..p.clone()
        };
        Ok(detect(image, &swept)?.len())
    };
    // Halve the distance to the interval ends when ±0.05 would leave (0, 1).
    let q = p.threshold_quantile;
    let quantile_minus = if q - 0.05 > 0.0 { q - 0.05 } else { q / 2.0 };
    let quantile_plus = if q + 0.05 < 1.0 {
        q + 0.05
    } else {
        (1.0 + q) / 2.0
    };
    let count_minus = sweep(quantile_minus)?;
    let count_plus = sweep(quantile_plus)?;
    let report = SensitivityReport {
        quantile: q,
        count: stats.count,
        total_length_km: stats.total_length_km,
        quantile_minus,
        count_minus,
        quantile_plus,
        count_plus,
        count_sensitivity: count_minus
            .abs_diff(stats.count)
            .max(count_plus.abs_diff(stats.count)),
    };
    Ok((segments, report))
}
