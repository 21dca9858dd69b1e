//! Multi-scale pyramids and centre-aligned window groups.
//!
//! A window group is anchored at a bottom-level `W x W` window. Level `k`
//! of the group covers the `d_k * W` square centred on that window and is
//! resampled to `W x W`. Parts of an extent that fall outside the image are
//! filled by mirror reflection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::MaskRaster;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PyramidError {
    #[error("invalid pyramid config: {0}")]
    InvalidConfig(String),
    #[error("window-too-large: window {window} exceeds image {width}x{height}")]
    WindowTooLarge { window: usize, width: usize, height: usize },
    #[error("incomplete-coverage: no prediction for window group {0}")]
    IncompleteCoverage(usize),
    #[error("window group {index}: expected {window}x{window} patch, got {width}x{height}")]
    PatchSize { index: usize, window: usize, width: usize, height: usize },
    #[error("window group {0} is not part of the plan")]
    UnknownGroup(usize),
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    BufferSize { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyramidConfig {
    pub rates: Vec<usize>,
    pub window: usize,
    pub stride: usize,
}

impl PyramidConfig {
    pub fn new(rates: Vec<usize>, window: usize, stride: usize) -> Result<Self, PyramidError> {
        let cfg = Self { rates, window, stride };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PyramidError> {
        if self.rates.first() != Some(&1) {
            return Err(PyramidError::InvalidConfig("first rate must be 1".into()));
        }
        if self.rates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PyramidError::InvalidConfig(format!("rates {:?} are not strictly increasing", self.rates)));
        }
        if self.window == 0 {
            return Err(PyramidError::InvalidConfig("window must be positive".into()));
        }
        if self.stride == 0 || self.stride > self.window {
            return Err(PyramidError::InvalidConfig(format!(
                "stride {} must be in 1..={}",
                self.stride, self.window
            )));
        }
        Ok(())
    }
}

/// Interleaved 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRaster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageRaster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, PyramidError> {
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(PyramidError::BufferSize {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }
}

/// Rasters that can be stacked into a pyramid and cut into patches.
pub trait PixelGrid: Sized + Send + Sync {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn channels(&self) -> usize;
    fn bytes(&self) -> &[u8];
    fn from_bytes(width: usize, height: usize, channels: usize, bytes: Vec<u8>) -> Self;
    /// Reduces by an integer factor; the result is `ceil(w/rate) x ceil(h/rate)`.
    fn downsample(&self, rate: usize) -> Self;
}

impl PixelGrid for ImageRaster {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn bytes(&self) -> &[u8] {
        &self.data
    }

    fn from_bytes(width: usize, height: usize, channels: usize, bytes: Vec<u8>) -> Self {
        Self::new(width, height, channels, bytes).expect("buffer sized by caller")
    }

    /// Area average over each block, rounded to nearest. Partial blocks at
    /// the right and bottom average only the pixels they contain.
    fn downsample(&self, rate: usize) -> Self {
        let (ow, oh, c) = (self.width.div_ceil(rate), self.height.div_ceil(rate), self.channels);
        let mut out = vec![0u8; ow * oh * c];
        out.par_chunks_mut(ow * c).enumerate().for_each(|(oy, row)| {
            let y0 = oy * rate;
            let y1 = (y0 + rate).min(self.height);
            let mut sums = vec![0u64; c];
            for ox in 0..ow {
                let x0 = ox * rate;
                let x1 = (x0 + rate).min(self.width);
                sums.fill(0);
                for y in y0..y1 {
                    for x in x0..x1 {
                        for (s, &v) in sums.iter_mut().zip(self.pixel(x, y)) {
                            *s += u64::from(v);
                        }
                    }
                }
                let n = ((y1 - y0) * (x1 - x0)) as u64;
                for (k, s) in sums.iter().enumerate() {
                    row[ox * c + k] = ((s + n / 2) / n) as u8;
                }
            }
        });
        Self {
            width: ow,
            height: oh,
            channels: c,
            data: out,
        }
    }
}

impl PixelGrid for MaskRaster {
    fn width(&self) -> usize {
        MaskRaster::width(self)
    }

    fn height(&self) -> usize {
        MaskRaster::height(self)
    }

    fn channels(&self) -> usize {
        1
    }

    fn bytes(&self) -> &[u8] {
        self.labels()
    }

    fn from_bytes(width: usize, height: usize, _channels: usize, bytes: Vec<u8>) -> Self {
        MaskRaster::from_labels(width, height, bytes).expect("buffer sized by caller")
    }

    /// Majority vote over each block; ties go to the smallest label.
    fn downsample(&self, rate: usize) -> Self {
        let (w, h) = (MaskRaster::width(self), MaskRaster::height(self));
        let (ow, oh) = (w.div_ceil(rate), h.div_ceil(rate));
        let mut out = vec![0u8; ow * oh];
        out.par_chunks_mut(ow).enumerate().for_each(|(oy, row)| {
            let y0 = oy * rate;
            let y1 = (y0 + rate).min(h);
            let mut votes = [0u32; 256];
            for (ox, cell) in row.iter_mut().enumerate() {
                let x0 = ox * rate;
                let x1 = (x0 + rate).min(w);
                votes.fill(0);
                for y in y0..y1 {
                    for &v in &self.row(y)[x0..x1] {
                        votes[v as usize] += 1;
                    }
                }
                let mut best = 0;
                for (label, &n) in votes.iter().enumerate() {
                    if n > votes[best] {
                        best = label;
                    }
                }
                *cell = best as u8;
            }
        });
        MaskRaster::from_labels(ow, oh, out).expect("sized above")
    }
}

/// Level `k` is the source reduced by `rates[k]`; level 0 is a copy.
pub fn build_pyramid<T: PixelGrid + Clone>(source: &T, rates: &[usize]) -> Vec<T> {
    rates
        .iter()
        .map(|&r| if r == 1 { source.clone() } else { source.downsample(r) })
        .collect()
}

/// Half-open rectangle in bottom-level pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Extent {
    pub fn centre(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn side(&self) -> f64 {
        self.x1 - self.x0
    }

    fn clamp(&self, width: usize, height: usize) -> Extent {
        Extent {
            x0: self.x0.max(0.0),
            y0: self.y0.max(0.0),
            x1: self.x1.min(width as f64),
            y1: self.y1.min(height as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelExtent {
    pub rate: usize,
    /// Centred `rate * W` square.
    pub extent: Extent,
    /// Part of `extent` inside the image; the rest is reflected.
    pub valid: Extent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowGeometry {
    /// Position in row-major anchor order.
    pub index: usize,
    /// Bottom-level top-left pixel `(x, y)`.
    pub anchor: (usize, usize),
    pub levels: Vec<LevelExtent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub width: usize,
    pub height: usize,
    pub config: PyramidConfig,
    pub groups: Vec<WindowGeometry>,
}

/// Window groups with their patches, level 0 first.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowGroup<T> {
    pub geometry: WindowGeometry,
    pub patches: Vec<T>,
}

// Anchors every `stride`, plus a final one flush with the far border.
fn axis_anchors(len: usize, window: usize, stride: usize) -> Vec<usize> {
    let last = len - window;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Window geometry for a `width x height` bottom level.
pub fn plan_windows(width: usize, height: usize, config: &PyramidConfig) -> Result<WindowPlan, PyramidError> {
    config.validate()?;
    let w = config.window;
    if w > width || w > height {
        return Err(PyramidError::WindowTooLarge {
            window: w,
            width,
            height,
        });
    }
    let xs = axis_anchors(width, w, config.stride);
    let ys = axis_anchors(height, w, config.stride);
    let mut groups = Vec::with_capacity(xs.len() * ys.len());
    for &ay in &ys {
        for &ax in &xs {
            let cx = ax as f64 + w as f64 / 2.0;
            let cy = ay as f64 + w as f64 / 2.0;
            let levels = config
                .rates
                .iter()
                .map(|&d| {
                    let half = (d * w) as f64 / 2.0;
                    let extent = Extent {
                        x0: cx - half,
                        y0: cy - half,
                        x1: cx + half,
                        y1: cy + half,
                    };
                    LevelExtent {
                        rate: d,
                        extent,
                        valid: extent.clamp(width, height),
                    }
                })
                .collect();
            groups.push(WindowGeometry {
                index: groups.len(),
                anchor: (ax, ay),
                levels,
            });
        }
    }
    Ok(WindowPlan {
        width,
        height,
        config: config.clone(),
        groups,
    })
}

/// Mirror index into `[0, n)` without repeating the edge sample.
pub fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

/// Samples the `W x W` patch of `level` (reduced by `rate`) covering
/// `extent`. Pixel `u` takes the level pixel whose cell contains the centre
/// of the `u`-th `rate`-wide sub-cell of the extent.
pub fn extract_patch<T: PixelGrid>(level: &T, rate: usize, extent: &Extent, window: usize) -> T {
    let c = level.channels();
    let (lw, lh) = (level.width(), level.height());
    let src = level.bytes();
    let d = rate as f64;
    let col: Vec<usize> = (0..window)
        .map(|u| reflect_index((extent.x0 / d + u as f64 + 0.5).floor() as i64, lw))
        .collect();
    let mut out = vec![0u8; window * window * c];
    for (v, row) in out.chunks_mut(window * c).enumerate() {
        let ly = reflect_index((extent.y0 / d + v as f64 + 0.5).floor() as i64, lh);
        let src_row = &src[ly * lw * c..(ly + 1) * lw * c];
        if c == 1 {
            for (dst, &lx) in row.iter_mut().zip(&col) {
                *dst = src_row[lx];
            }
        } else {
            for (u, &lx) in col.iter().enumerate() {
                row[u * c..(u + 1) * c].copy_from_slice(&src_row[lx * c..(lx + 1) * c]);
            }
        }
    }
    T::from_bytes(window, window, c, out)
}

/// Patches of one group, level 0 first.
pub fn slice_group<T: PixelGrid>(pyramid: &[T], geometry: &WindowGeometry, window: usize) -> Vec<T> {
    geometry
        .levels
        .iter()
        .zip(pyramid)
        .map(|(l, level)| extract_patch(level, l.rate, &l.extent, window))
        .collect()
}

/// Plans and cuts every window group of `pyramid` (as built by
/// [`build_pyramid`] with `config.rates`).
pub fn slice_windows<T: PixelGrid>(pyramid: &[T], config: &PyramidConfig) -> Result<Vec<WindowGroup<T>>, PyramidError> {
    let base = pyramid
        .first()
        .ok_or_else(|| PyramidError::InvalidConfig("empty pyramid".into()))?;
    if pyramid.len() != config.rates.len() {
        return Err(PyramidError::InvalidConfig(format!(
            "pyramid has {} levels for {} rates",
            pyramid.len(),
            config.rates.len()
        )));
    }
    let plan = plan_windows(base.width(), base.height(), config)?;
    Ok(plan
        .groups
        .into_par_iter()
        .map(|geometry| WindowGroup {
            patches: slice_group(pyramid, &geometry, config.window),
            geometry,
        })
        .collect())
}

/// Writes per-group bottom-level masks back at their anchors. Groups are
/// applied in plan order, so later groups overwrite earlier ones where
/// windows overlap. Every planned group needs exactly one mask.
pub fn stitch(plan: &WindowPlan, masks: &[(usize, MaskRaster)]) -> Result<MaskRaster, PyramidError> {
    let w = plan.config.window;
    let mut by_group: Vec<Option<&MaskRaster>> = vec![None; plan.groups.len()];
    for (index, mask) in masks {
        let slot = by_group.get_mut(*index).ok_or(PyramidError::UnknownGroup(*index))?;
        if mask.width() != w || mask.height() != w {
            return Err(PyramidError::PatchSize {
                index: *index,
                window: w,
                width: mask.width(),
                height: mask.height(),
            });
        }
        *slot = Some(mask);
    }
    let mut out = MaskRaster::new(plan.width, plan.height);
    for (g, mask) in plan.groups.iter().zip(&by_group) {
        let mask = mask.ok_or(PyramidError::IncompleteCoverage(g.index))?;
        let (ax, ay) = g.anchor;
        let stride = plan.width;
        let labels = out.labels_mut();
        for y in 0..w {
            let dst = (ay + y) * stride + ax;
            labels[dst..dst + w].copy_from_slice(mask.row(y));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_mask(w: usize, h: usize, seed: u64) -> MaskRaster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MaskRaster::from_labels(w, h, (0..w * h).map(|_| rng.gen_range(0..4)).collect()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(PyramidConfig::new(vec![1, 3, 6], 100, 100).is_ok());
        assert!(PyramidConfig::new(vec![2, 3], 100, 100).is_err());
        assert!(PyramidConfig::new(vec![1, 3, 3], 100, 100).is_err());
        assert!(PyramidConfig::new(vec![1], 0, 1).is_err());
        assert!(PyramidConfig::new(vec![1], 10, 11).is_err());
        assert!(PyramidConfig::new(vec![1], 10, 0).is_err());
    }

    #[test]
    fn pyramid_sizes_and_constants() {
        let img = ImageRaster::new(100, 100, 3, vec![77; 30000]).unwrap();
        assert_eq!(build_pyramid(&img, &[1]), vec![img.clone()]);
        let p = build_pyramid(&img, &[1, 5, 7]);
        assert_eq!((p[1].width(), p[1].height()), (20, 20));
        assert_eq!((p[2].width(), p[2].height()), (15, 15));
        assert!(p.iter().all(|l| l.data().iter().all(|&v| v == 77)));
    }

    #[test]
    fn area_average_and_majority() {
        let img = ImageRaster::new(2, 2, 1, vec![0, 10, 20, 31]).unwrap();
        assert_eq!(img.downsample(2).data(), &[15]);
        let m = MaskRaster::from_labels(3, 2, vec![2, 1, 5, 1, 2, 5]).unwrap();
        let d = m.downsample(2);
        // 2-2 tie between labels 1 and 2 goes to 1; the partial column keeps 5
        assert_eq!(d.labels(), &[1, 5]);
    }

    #[test]
    fn spec_grid_example() {
        let cfg = PyramidConfig::new(vec![1, 5, 10], 1000, 1000).unwrap();
        let plan = plan_windows(10_000, 10_000, &cfg).unwrap();
        assert_eq!(plan.groups.len(), 100);
        let g = plan.groups.iter().find(|g| g.anchor == (4000, 4000)).unwrap();
        assert_eq!(g.index, 44);
        let l2 = g.levels[1].extent;
        assert_eq!((l2.x0, l2.y0, l2.x1, l2.y1), (2000.0, 2000.0, 7000.0, 7000.0));
        for l in &g.levels {
            assert_eq!(l.extent.centre(), (4500.0, 4500.0));
            assert_eq!(l.extent.side(), (l.rate * 1000) as f64);
        }
        // corner group: upper levels clamped
        let c = &plan.groups[0];
        assert_eq!(c.levels[2].valid, Extent { x0: 0.0, y0: 0.0, x1: 5500.0, y1: 5500.0 });
    }

    #[test]
    fn anchors_clamp_to_border() {
        assert_eq!(axis_anchors(25, 10, 10), vec![0, 10, 15]);
        assert_eq!(axis_anchors(20, 10, 10), vec![0, 10]);
        assert_eq!(axis_anchors(10, 10, 3), vec![0]);
        assert_eq!(axis_anchors(14, 10, 3), vec![0, 3, 4]);
        let cfg = PyramidConfig::new(vec![1], 30, 30).unwrap();
        assert_eq!(
            plan_windows(20, 50, &cfg),
            Err(PyramidError::WindowTooLarge {
                window: 30,
                width: 20,
                height: 50
            })
        );
    }

    #[test]
    fn reflect_matches_mirror() {
        let n = 4;
        // ... 2 1 | 0 1 2 3 | 2 1 0 1 ...
        let got: Vec<usize> = (-3..8).map(|i| reflect_index(i, n)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn corner_patches_are_full_size() {
        let m = random_mask(60, 40, 1);
        let cfg = PyramidConfig::new(vec![1, 3], 20, 20).unwrap();
        let pyr = build_pyramid(&m, &cfg.rates);
        let groups = slice_windows(&pyr, &cfg).unwrap();
        assert_eq!(groups.len(), 6);
        for g in &groups {
            assert!(g.patches.iter().all(|p| p.width() == 20 && p.height() == 20));
        }
        // bottom patch is a plain crop
        let g = &groups[4];
        assert_eq!(g.geometry.anchor, (20, 20));
        assert_eq!(g.patches[0].get(0, 0), m.get(20, 20));
        assert_eq!(g.patches[0].get(19, 19), m.get(39, 39));
        // upper patch centre maps to the level pixel under the window centre
        let lvl = &pyr[1];
        assert_eq!(g.patches[1].get(10, 10), lvl.get(30 / 3, 30 / 3));
        assert_eq!(g.patches[1].get(0, 0), lvl.get(0, 0));
        // corner group: extent starts at -20, first sample -7 mirrors to 7
        let c = &groups[0];
        assert_eq!(c.patches[1].get(0, 0), lvl.get(7, 7));
        assert_eq!(c.patches[1].get(6, 0), lvl.get(1, 7));
        assert_eq!(c.patches[1].get(7, 0), lvl.get(0, 7));
    }

    #[test]
    fn stitch_round_trip_and_errors() {
        let m = random_mask(55, 47, 2);
        for stride in [20, 10, 7] {
            let cfg = PyramidConfig::new(vec![1, 2], 20, stride).unwrap();
            let pyr = build_pyramid(&m, &cfg.rates);
            let groups = slice_windows(&pyr, &cfg).unwrap();
            let plan = plan_windows(55, 47, &cfg).unwrap();
            let masks: Vec<(usize, MaskRaster)> =
                groups.into_iter().map(|g| (g.geometry.index, g.patches.into_iter().next().unwrap())).collect();
            assert_eq!(stitch(&plan, &masks).unwrap(), m);
            let partial = &masks[1..];
            assert_eq!(stitch(&plan, partial), Err(PyramidError::IncompleteCoverage(0)));
        }
    }

    #[test]
    fn later_groups_win_overlaps() {
        let cfg = PyramidConfig::new(vec![1], 4, 2).unwrap();
        let plan = plan_windows(6, 4, &cfg).unwrap();
        assert_eq!(plan.groups.len(), 2);
        let masks = vec![
            (1, MaskRaster::from_labels(4, 4, vec![2; 16]).unwrap()),
            (0, MaskRaster::from_labels(4, 4, vec![1; 16]).unwrap()),
        ];
        let out = stitch(&plan, &masks).unwrap();
        assert_eq!(out.row(0), &[1, 1, 2, 2, 2, 2]);
    }

    proptest! {
        #[test]
        fn interior_groups_are_centre_aligned(
            w in 8usize..60, extra_w in 0usize..200, extra_h in 0usize..200, stride_frac in 0.1f64..1.0,
            r2 in 2usize..5, r3 in 5usize..9,
        ) {
            let stride = ((w as f64 * stride_frac) as usize).max(1);
            let cfg = PyramidConfig::new(vec![1, r2, r3], w, stride).unwrap();
            let plan = plan_windows(w + extra_w, w + extra_h, &cfg).unwrap();
            for g in &plan.groups {
                let base = g.levels[0].extent;
                prop_assert_eq!(base.x0, g.anchor.0 as f64);
                for l in &g.levels {
                    prop_assert_eq!(l.extent.centre(), base.centre());
                    prop_assert_eq!(l.extent.side(), (l.rate * w) as f64);
                }
            }
        }

        #[test]
        fn random_rasters_stitch_back(w in 20usize..80, h in 20usize..80, win in 5usize..20, s in 1usize..20, seed in 0u64..1000) {
            let stride = s.min(win);
            let m = random_mask(w, h, seed);
            let cfg = PyramidConfig::new(vec![1], win, stride).unwrap();
            let plan = plan_windows(w, h, &cfg).unwrap();
            let pyr = build_pyramid(&m, &cfg.rates);
            let masks: Vec<(usize, MaskRaster)> = plan
                .groups
                .iter()
                .map(|g| (g.index, slice_group(&pyr, g, win).remove(0)))
                .collect();
            prop_assert_eq!(stitch(&plan, &masks).unwrap(), m);
        }
    }
}
