//! Copy-move / splice forgeries and pseudo-pair construction.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::base::BaseKind;
use super::image::{Image, Mask};
use crate::error::{CoreError, Result};

/// Placement attempts before giving up.
pub const MAX_TRIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Edd,
    Idd,
    Cstd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Blend {
    Hard,
    /// Linear alpha ramp over `width` destination pixels inward from the patch edge.
    Feathered(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub scale: f64,
    pub rotation_deg: f64,
    pub hflip: bool,
    pub vflip: bool,
    pub noise_sigma: f64,
    pub blend: Blend,
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        AugmentationSpec {
            scale: 1.0,
            rotation_deg: 0.0,
            hflip: false,
            vflip: false,
            noise_sigma: 0.0,
            blend: Blend::Hard,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.5..=2.0).contains(&self.scale)
            && (0.0..360.0).contains(&self.rotation_deg)
            && (0.0..=0.05).contains(&self.noise_sigma)
            && match self.blend {
                Blend::Hard => true,
                Blend::Feathered(w) => w > 0.0 && w.is_finite(),
            };
        if ok {
            Ok(())
        } else {
            Err(CoreError::BadParameter(format!("augmentation out of range: {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(ranges: &AugmentRanges, rng: &mut R) -> Self {
        let scale = if ranges.scale.0 < ranges.scale.1 { rng.random_range(ranges.scale.0..=ranges.scale.1) } else { ranges.scale.0 };
        let rotation_deg = if ranges.rotate { rng.random_range(0.0..360.0) } else { 0.0 };
        let hflip = rng.random_bool(ranges.flip_prob);
        let vflip = rng.random_bool(ranges.flip_prob);
        let noise_sigma = if ranges.max_noise_sigma > 0.0 { rng.random_range(0.0..=ranges.max_noise_sigma) } else { 0.0 };
        let blend = if rng.random_bool(ranges.feather_prob) { Blend::Feathered(ranges.feather_width) } else { Blend::Hard };
        AugmentationSpec {
            scale,
            rotation_deg,
            hflip,
            vflip,
            noise_sigma,
            blend,
        }
    }
}

/// Sampling ranges for [`AugmentationSpec::sample`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentRanges {
    pub scale: (f64, f64),
    pub rotate: bool,
    pub flip_prob: f64,
    pub max_noise_sigma: f64,
    pub feather_prob: f64,
    pub feather_width: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            scale: (0.5, 2.0),
            rotate: true,
            flip_prob: 0.5,
            max_noise_sigma: 0.05,
            feather_prob: 0.5,
            feather_width: 3.0,
        }
    }
}

impl AugmentRanges {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale;
        let ok = 0.5 <= lo
            && lo <= hi
            && hi <= 2.0
            && (0.0..=1.0).contains(&self.flip_prob)
            && (0.0..=0.05).contains(&self.max_noise_sigma)
            && (0.0..=1.0).contains(&self.feather_prob)
            && self.feather_width > 0.0;
        if ok {
            Ok(())
        } else {
            Err(CoreError::Config(format!("augmentation ranges out of bounds: {self:?}")))
        }
    }
}

/// Source patch side length as a fraction of the image side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PasteOptions {
    pub min_frac: f64,
    pub max_frac: f64,
}

impl Default for PasteOptions {
    fn default() -> Self {
        PasteOptions { min_frac: 0.15, max_frac: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.width * self.height
    }

    fn within(&self, r: &Region) -> bool {
        self.x >= r.x0 && self.y >= r.y0 && self.x + self.width <= r.x1 && self.y + self.height <= r.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitAxis {
    /// Left and right halves.
    Vertical,
    /// Top and bottom halves.
    Horizontal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub axis: SplitAxis,
    /// Column (vertical) or row (horizontal) where the second half begins.
    pub at: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub task: Task,
    pub seed: u64,
    pub index: u64,
    pub pristine: bool,
    pub kinds: Vec<BaseKind>,
    pub source_rect: Option<Rect>,
    /// Bounding box of the transformed patch in the destination frame.
    pub dest_rect: Option<Rect>,
    pub augmentation: Option<AugmentationSpec>,
    pub seam: Option<usize>,
    pub split: Option<Split>,
}

impl Provenance {
    fn new(task: Task, kinds: Vec<BaseKind>) -> Self {
        Provenance {
            task,
            seed: 0,
            index: 0,
            pristine: true,
            kinds,
            source_rect: None,
            dest_rect: None,
            augmentation: None,
            seam: None,
            split: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgerySample {
    pub img1: Image,
    pub img2: Image,
    pub mask1: Mask,
    pub mask2: Mask,
    pub provenance: Provenance,
}

impl ForgerySample {
    pub fn task(&self) -> Task {
        self.provenance.task
    }
}

/// Half-open pixel region `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy)]
struct Region {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Region {
    fn whole(img: &Image) -> Self {
        Region {
            x0: 0,
            y0: 0,
            x1: img.width,
            y1: img.height,
        }
    }
}

/// Maps destination points back into the source frame.
struct Transform {
    src_cx: f64,
    src_cy: f64,
    dst_cx: f64,
    dst_cy: f64,
    cos: f64,
    sin: f64,
    scale: f64,
    hflip: bool,
    vflip: bool,
}

impl Transform {
    fn new(src: &Rect, spec: &AugmentationSpec) -> Self {
        let (sin, cos) = spec.rotation_deg.to_radians().sin_cos();
        // Snap exact quarter turns so axis-aligned pastes stay pixel-exact.
        let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else if (v.abs() - 1.0).abs() < 1e-12 { v.signum() } else { v };
        Transform {
            src_cx: src.x as f64 + src.width as f64 / 2.0,
            src_cy: src.y as f64 + src.height as f64 / 2.0,
            dst_cx: 0.0,
            dst_cy: 0.0,
            cos: snap(cos),
            sin: snap(sin),
            scale: spec.scale,
            hflip: spec.hflip,
            vflip: spec.vflip,
        }
    }

    /// Half-extents of the transformed patch.
    fn extents(&self, src: &Rect) -> (f64, f64) {
        let (hw, hh) = (src.width as f64 / 2.0, src.height as f64 / 2.0);
        (
            self.scale * (self.cos.abs() * hw + self.sin.abs() * hh),
            self.scale * (self.sin.abs() * hw + self.cos.abs() * hh),
        )
    }

    fn source_point(&self, px: usize, py: usize) -> (f64, f64) {
        let dx = px as f64 + 0.5 - self.dst_cx;
        let dy = py as f64 + 0.5 - self.dst_cy;
        let mut ux = (self.cos * dx + self.sin * dy) / self.scale;
        let mut uy = (-self.sin * dx + self.cos * dy) / self.scale;
        if self.hflip {
            ux = -ux;
        }
        if self.vflip {
            uy = -uy;
        }
        (self.src_cx + ux, self.src_cy + uy)
    }
}

fn sample_pixel(img: &Image, c: usize, qx: f64, qy: f64) -> f64 {
    let fx = (qx - 0.5).clamp(0.0, (img.width - 1) as f64);
    let fy = (qy - 0.5).clamp(0.0, (img.height - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    (1.0 - ty) * ((1.0 - tx) * img.get(c, y0, x0) + tx * img.get(c, y0, x1)) + ty * ((1.0 - tx) * img.get(c, y1, x0) + tx * img.get(c, y1, x1))
}

/// Pastes the augmented `src_rect` of `src` into `dst` with the patch bounding box at
/// `dst_tl`. Returns the rasterized destination mask and the bounding box.
fn paste<R: Rng + ?Sized>(src: &Image, src_rect: &Rect, dst: &mut Image, dst_tl: (usize, usize), spec: &AugmentationSpec, rng: &mut R) -> (Mask, Rect) {
    let mut tf = Transform::new(src_rect, spec);
    let (ex, ey) = tf.extents(src_rect);
    tf.dst_cx = dst_tl.0 as f64 + ex;
    tf.dst_cy = dst_tl.1 as f64 + ey;
    let bbox = Rect {
        x: dst_tl.0,
        y: dst_tl.1,
        width: ((2.0 * ex).ceil() as usize).min(dst.width - dst_tl.0),
        height: ((2.0 * ey).ceil() as usize).min(dst.height - dst_tl.1),
    };
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("validated sigma"));
    let (rx0, ry0) = (src_rect.x as f64, src_rect.y as f64);
    let (rx1, ry1) = (rx0 + src_rect.width as f64, ry0 + src_rect.height as f64);
    let mut mask = Mask::new(dst.height, dst.width);
    for py in bbox.y..bbox.y + bbox.height {
        for px in bbox.x..bbox.x + bbox.width {
            let (qx, qy) = tf.source_point(px, py);
            if !(qx >= rx0 && qx < rx1 && qy >= ry0 && qy < ry1) {
                continue;
            }
            mask.set(py, px, true);
            let alpha = match spec.blend {
                Blend::Hard => 1.0,
                Blend::Feathered(w) => {
                    let edge = (qx - rx0).min(rx1 - qx).min(qy - ry0).min(ry1 - qy) * spec.scale;
                    (edge / w).clamp(0.0, 1.0)
                }
            };
            let grid_aligned = (qx - 0.5).fract() == 0.0 && (qy - 0.5).fract() == 0.0;
            for c in 0..dst.channels {
                if alpha == 1.0 && noise.is_none() && grid_aligned {
                    dst.set_raw(c, py, px, src.raw(c, (qy - 0.5) as usize, (qx - 0.5) as usize));
                    continue;
                }
                let mut v = sample_pixel(src, c, qx, qy);
                if let Some(n) = &noise {
                    v += n.sample(rng);
                }
                let out = alpha * v + (1.0 - alpha) * dst.get(c, py, px);
                dst.set(c, py, px, out);
            }
        }
    }
    (mask, bbox)
}

/// Draws a source rect inside `src_region` and a destination top-left inside `dst_region`.
fn place<R: Rng + ?Sized>(spec: &AugmentationSpec, opts: &PasteOptions, side: usize, src_region: Region, dst_region: Region, rng: &mut R) -> Option<(Rect, (usize, usize))> {
    let side_len = |rng: &mut R| {
        let f = if opts.min_frac < opts.max_frac { rng.random_range(opts.min_frac..=opts.max_frac) } else { opts.min_frac };
        ((f * side as f64).round() as usize).max(2)
    };
    for _ in 0..MAX_TRIES {
        let (w, h) = (side_len(rng), side_len(rng));
        if src_region.x0 + w > src_region.x1 || src_region.y0 + h > src_region.y1 {
            continue;
        }
        let src = Rect {
            x: rng.random_range(src_region.x0..=src_region.x1 - w),
            y: rng.random_range(src_region.y0..=src_region.y1 - h),
            width: w,
            height: h,
        };
        let (ex, ey) = Transform::new(&src, spec).extents(&src);
        let (bw, bh) = ((2.0 * ex).ceil() as usize, (2.0 * ey).ceil() as usize);
        if dst_region.x0 + bw > dst_region.x1 || dst_region.y0 + bh > dst_region.y1 {
            continue;
        }
        let tl = (rng.random_range(dst_region.x0..=dst_region.x1 - bw), rng.random_range(dst_region.y0..=dst_region.y1 - bh));
        return Some((src, tl));
    }
    None
}

/// Splice: a patch of `base1` is augmented and pasted into `base2`.
pub fn synth_edd<R: Rng + ?Sized>(base1: &Image, base2: &Image, spec: &AugmentationSpec, opts: &PasteOptions, rng: &mut R) -> Result<ForgerySample> {
    if base1.height != base2.height || base1.width != base2.width {
        return Err(CoreError::BadParameter("edd bases must have equal size".into()));
    }
    spec.validate()?;
    let side = base1.height.min(base1.width);
    let (src, tl) = place(spec, opts, side, Region::whole(base1), Region::whole(base2), rng).ok_or(CoreError::PatchDoesNotFit(MAX_TRIES))?;
    let mut img2 = base2.clone();
    let (mask2, bbox) = paste(base1, &src, &mut img2, tl, spec, rng);
    let mut mask1 = Mask::new(base1.height, base1.width);
    mask1.fill_rect(src.x, src.y, src.width, src.height);
    let mut provenance = Provenance::new(Task::Edd, Vec::new());
    provenance.pristine = false;
    provenance.source_rect = Some(src);
    provenance.dest_rect = Some(bbox);
    provenance.augmentation = Some(*spec);
    Ok(ForgerySample {
        img1: base1.clone(),
        img2,
        mask1,
        mask2,
        provenance,
    })
}

/// Two unrelated images with empty masks.
pub fn pristine_pair(img1: &Image, img2: &Image, task: Task) -> ForgerySample {
    ForgerySample {
        img1: img1.clone(),
        img2: img2.clone(),
        mask1: Mask::new(img1.height, img1.width),
        mask2: Mask::new(img2.height, img2.width),
        provenance: Provenance::new(task, Vec::new()),
    }
}

fn halves(axis: SplitAxis, height: usize, width: usize) -> Result<(Split, Region, Region)> {
    let (len, other) = match axis {
        SplitAxis::Vertical => (width, height),
        SplitAxis::Horizontal => (height, width),
    };
    if len < 4 || len % 2 != 0 || other == 0 {
        return Err(CoreError::BadParameter(format!("cannot split {height}x{width} image into equal halves along {axis:?}")));
    }
    let at = len / 2;
    let (a, b) = match axis {
        SplitAxis::Vertical => (Region { x0: 0, y0: 0, x1: at, y1: height }, Region { x0: at, y0: 0, x1: width, y1: height }),
        SplitAxis::Horizontal => (Region { x0: 0, y0: 0, x1: width, y1: at }, Region { x0: 0, y0: at, x1: width, y1: height }),
    };
    Ok((Split { axis, at }, a, b))
}

/// Cuts an image and its mask into the two halves of a pseudo-pair.
pub fn split_pair(img: &Image, mask: &Mask, split: Split) -> (Image, Image, Mask, Mask) {
    match split.axis {
        SplitAxis::Vertical => {
            let (w1, w2) = (split.at, img.width - split.at);
            (
                img.crop(0, 0, w1, img.height),
                img.crop(split.at, 0, w2, img.height),
                mask.crop(0, 0, w1, img.height),
                mask.crop(split.at, 0, w2, img.height),
            )
        }
        SplitAxis::Horizontal => {
            let (h1, h2) = (split.at, img.height - split.at);
            (
                img.crop(0, 0, img.width, h1),
                img.crop(0, split.at, img.width, h2),
                mask.crop(0, 0, img.width, h1),
                mask.crop(0, split.at, img.width, h2),
            )
        }
    }
}

/// Inverse of [`split_pair`] for the images.
pub fn merge_pair(img1: &Image, img2: &Image, axis: SplitAxis) -> Result<Image> {
    match axis {
        SplitAxis::Vertical => Image::hconcat(img1, img2),
        SplitAxis::Horizontal => Image::vconcat(img1, img2),
    }
}

/// Internal copy-move inside `base`, then a split into halves so that the source and
/// destination land in different halves.
pub fn synth_idd_pseudo_pair<R: Rng + ?Sized>(base: &Image, spec: &AugmentationSpec, opts: &PasteOptions, axis: SplitAxis, rng: &mut R) -> Result<ForgerySample> {
    spec.validate()?;
    let (split, a, b) = halves(axis, base.height, base.width)?;
    let side = (a.x1 - a.x0).min(a.y1 - a.y0);
    let (src_region, dst_region) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
    let (src, tl) = place(spec, opts, side, src_region, dst_region, rng).ok_or(CoreError::CannotSeparate(MAX_TRIES))?;
    let mut forged = base.clone();
    let (dest_mask, bbox) = paste(base, &src, &mut forged, tl, spec, rng);
    debug_assert!(src.within(&src_region) && bbox.within(&dst_region));
    let mut full = dest_mask;
    full.fill_rect(src.x, src.y, src.width, src.height);
    let (img1, img2, mask1, mask2) = split_pair(&forged, &full, split);
    let mut provenance = Provenance::new(Task::Idd, Vec::new());
    provenance.pristine = false;
    provenance.source_rect = Some(src);
    provenance.dest_rect = Some(bbox);
    provenance.augmentation = Some(*spec);
    provenance.split = Some(split);
    Ok(ForgerySample {
        img1,
        img2,
        mask1,
        mask2,
        provenance,
    })
}

/// Unforged single image split into a pseudo-pair.
pub fn pristine_pseudo_pair(base: &Image, task: Task, axis: SplitAxis) -> Result<ForgerySample> {
    let (split, _, _) = halves(axis, base.height, base.width)?;
    let (img1, img2, mask1, mask2) = split_pair(base, &Mask::new(base.height, base.width), split);
    let mut provenance = Provenance::new(task, Vec::new());
    provenance.split = Some(split);
    Ok(ForgerySample {
        img1,
        img2,
        mask1,
        mask2,
        provenance,
    })
}

/// Columns covered by a band of `band_width` centered on `seam`.
fn band_columns(seam: usize, band_width: usize) -> (usize, usize) {
    let start = seam - band_width / 2;
    (start, start + band_width)
}

/// Stitched composite: columns left of the seam come from `base_a`, the rest from `base_b`.
/// The pseudo-pair split is at the middle column, with the seam band inside one half.
pub fn synth_cstd<R: Rng + ?Sized>(base_a: &Image, base_b: &Image, band_width: usize, rng: &mut R) -> Result<ForgerySample> {
    if base_a.height != base_b.height || base_a.width != base_b.width || base_a.channels != base_b.channels {
        return Err(CoreError::BadParameter("cstd bases must have equal size".into()));
    }
    let width = base_a.width;
    let (split, _, _) = halves(SplitAxis::Vertical, base_a.height, width)?;
    let half = split.at;
    if band_width == 0 {
        return Err(CoreError::BadParameter("band width must be positive".into()));
    }
    // Seam band [seam - bw/2, seam - bw/2 + bw) must stay inside one half and leave a
    // column of each base on either side.
    let lo_off = band_width / 2 + 1;
    let hi_off = band_width - band_width / 2;
    let candidates: Vec<usize> = (0..width)
        .filter(|&c| {
            let inside = |start: usize, end: usize| c >= start + lo_off && c + hi_off < end;
            inside(0, half) || inside(half, width)
        })
        .collect();
    if candidates.is_empty() {
        return Err(CoreError::BadParameter(format!("band width {band_width} does not fit a half of width {half}")));
    }
    let seam = candidates[rng.random_range(0..candidates.len())];
    let composite = Image::from_fn(base_a.channels, base_a.height, width, |c, y, x| if x < seam { base_a.get(c, y, x) } else { base_b.get(c, y, x) });
    let (c0, c1) = band_columns(seam, band_width);
    let mut mask = Mask::new(base_a.height, width);
    mask.fill_rect(c0, 0, c1 - c0, base_a.height);
    let (img1, img2, mask1, mask2) = split_pair(&composite, &mask, split);
    let mut provenance = Provenance::new(Task::Cstd, Vec::new());
    provenance.pristine = false;
    provenance.seam = Some(seam);
    provenance.split = Some(split);
    Ok(ForgerySample {
        img1,
        img2,
        mask1,
        mask2,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::base::base_image;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bases(seed: u64) -> (Image, Image, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = base_image(BaseKind::BlobTexture, 48, 48, &mut rng);
        let b = base_image(BaseKind::BlobTexture, 48, 48, &mut rng);
        (a, b, rng)
    }

    #[test]
    fn identity_paste_copies_bytes() {
        for seed in 0..20 {
            let (a, b, mut rng) = bases(seed);
            let s = synth_edd(&a, &b, &AugmentationSpec::identity(), &PasteOptions::default(), &mut rng).unwrap();
            let src = s.provenance.source_rect.unwrap();
            let dst = s.provenance.dest_rect.unwrap();
            assert_eq!((src.width, src.height), (dst.width, dst.height));
            assert_eq!(s.mask2.area(), src.area());
            for c in 0..3 {
                for y in 0..src.height {
                    for x in 0..src.width {
                        assert_eq!(s.img2.raw(c, dst.y + y, dst.x + x), a.raw(c, src.y + y, src.x + x));
                    }
                }
            }
        }
    }

    #[test]
    fn flips_and_quarter_turns_stay_exact() {
        let (a, b, mut rng) = bases(3);
        let spec = AugmentationSpec {
            rotation_deg: 90.0,
            hflip: true,
            ..AugmentationSpec::identity()
        };
        let s = synth_edd(&a, &b, &spec, &PasteOptions::default(), &mut rng).unwrap();
        let src = s.provenance.source_rect.unwrap();
        assert_eq!(s.mask2.area(), src.area());
        let mut src_bytes: Vec<u8> = (0..src.height).flat_map(|y| (0..src.width).map(move |x| (y, x))).map(|(y, x)| a.raw(0, src.y + y, src.x + x)).collect();
        let mut dst_bytes: Vec<u8> = (0..48).flat_map(|y| (0..48).map(move |x| (y, x))).filter(|&(y, x)| s.mask2.get(y, x)).map(|(y, x)| s.img2.raw(0, y, x)).collect();
        src_bytes.sort_unstable();
        dst_bytes.sort_unstable();
        assert_eq!(src_bytes, dst_bytes);
    }

    #[test]
    fn impossible_patch_is_rejected() {
        let (a, b, mut rng) = bases(0);
        let spec = AugmentationSpec {
            scale: 2.0,
            rotation_deg: 45.0,
            ..AugmentationSpec::identity()
        };
        let opts = PasteOptions { min_frac: 0.9, max_frac: 0.9 };
        assert!(matches!(synth_edd(&a, &b, &spec, &opts, &mut rng), Err(CoreError::PatchDoesNotFit(MAX_TRIES))));
    }

    #[test]
    fn cstd_band_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = base_image(BaseKind::Gradient, 16, 32, &mut rng);
        let s = synth_cstd(&a, &a, 3, &mut rng).unwrap();
        let seam = s.provenance.seam.unwrap();
        let (full, _) = (Image::hconcat(&s.img1, &s.img2).unwrap(), ());
        assert_eq!(full, a);
        let mut m = Mask::new(16, 32);
        m.fill_rect(seam - 1, 0, 3, 16);
        let (_, _, m1, m2) = split_pair(&a, &m, Split { axis: SplitAxis::Vertical, at: 16 });
        assert_eq!((s.mask1.clone(), s.mask2.clone()), (m1, m2));
        assert!(s.mask1.is_empty() ^ s.mask2.is_empty());
    }
}
