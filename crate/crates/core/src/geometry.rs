//! Mask geometry: contours, exact distance transform, boundary bands, and the
//! spatial side of the input pipeline (crop/flip, 6-channel assembly).

use rand::Rng;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, ScalarField, TensorField};

/// Foreground pixels adjacent (4-connectivity) to background, in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContourSet {
    width: usize,
    height: usize,
    points: Vec<(usize, usize)>,
}

impl ContourSet {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// `(row, col)` coordinates.
    pub fn points(&self) -> &[(usize, usize)] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn to_mask(&self) -> BinaryMask {
        let mut mask = BinaryMask::filled(self.width, self.height, false)
            .expect("contour dims come from a valid mask");
        for &(r, c) in &self.points {
            mask.set(r, c, true);
        }
        mask
    }
}

/// Inner boundary of the foreground. Pixels outside the image are not
/// treated as background, so foreground touching the border is not contour
/// unless it also has an in-bounds background neighbor.
pub fn extract_contour(mask: &BinaryMask) -> ContourSet {
    let (w, h) = mask.dims();
    let mut points = Vec::new();
    for row in 0..h {
        for col in 0..w {
            if !mask.get(row, col) {
                continue;
            }
            let bg = |r: usize, c: usize| !mask.get(r, c);
            let touches_bg = (row > 0 && bg(row - 1, col))
                || (row + 1 < h && bg(row + 1, col))
                || (col > 0 && bg(row, col - 1))
                || (col + 1 < w && bg(row, col + 1));
            if touches_bg {
                points.push((row, col));
            }
        }
    }
    ContourSet {
        width: w,
        height: h,
        points,
    }
}

/// Exact Euclidean distance from every pixel to the nearest contour point.
///
/// Meijster's separable algorithm on integer squared distances; the only
/// floating-point step is the final square root.
pub fn distance_transform(contour: &ContourSet) -> Result<ScalarField<f64>> {
    let sq = squared_distance_transform(contour)?;
    Ok(sq.map(|d| (d as f64).sqrt()))
}

/// Squared distances as exact integers.
pub fn squared_distance_transform(contour: &ContourSet) -> Result<ScalarField<i64>> {
    if contour.is_empty() {
        return Err(Error::EmptyContour);
    }
    let (w, h) = contour.dims();
    let inf = (w + h) as i64;

    let mut feature = vec![false; w * h];
    for &(r, c) in contour.points() {
        feature[r * w + c] = true;
    }

    // Column pass: vertical distance to the nearest feature in the same column.
    let mut g = vec![inf; w * h];
    for col in 0..w {
        if feature[col] {
            g[col] = 0;
        }
        for row in 1..h {
            let i = row * w + col;
            g[i] = if feature[i] { 0 } else { (g[i - w] + 1).min(inf) };
        }
        for row in (0..h.saturating_sub(1)).rev() {
            let i = row * w + col;
            if g[i + w] < g[i] {
                g[i] = g[i + w] + 1;
            }
        }
    }

    // Row pass: lower envelope of parabolas.
    let mut out = vec![0i64; w * h];
    let mut s = vec![0usize; w];
    let mut t = vec![0i64; w];
    for row in 0..h {
        let gr = &g[row * w..(row + 1) * w];
        let f = |x: i64, i: usize| (x - i as i64).pow(2) + gr[i].pow(2);
        let sep = |i: usize, u: usize| {
            let (i64_, u64_) = (i as i64, u as i64);
            (u64_ * u64_ - i64_ * i64_ + gr[u].pow(2) - gr[i].pow(2)).div_euclid(2 * (u64_ - i64_))
        };
        let mut q: isize = 0;
        s[0] = 0;
        t[0] = 0;
        for u in 1..w {
            while q >= 0 && f(t[q as usize], s[q as usize]) > f(t[q as usize], u) {
                q -= 1;
            }
            if q < 0 {
                q = 0;
                s[0] = u;
            } else {
                let next = 1 + sep(s[q as usize], u);
                if next < w as i64 {
                    q += 1;
                    s[q as usize] = u;
                    t[q as usize] = next;
                }
            }
        }
        for u in (0..w).rev() {
            out[row * w + u] = f(u as i64, s[q as usize]);
            if u as i64 == t[q as usize] {
                q -= 1;
            }
        }
    }
    ScalarField::new(w, h, out)
}

/// The contour dilated to a total width of `width_px` pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct BandMask {
    width_px: u32,
    members: BinaryMask,
    distances: Option<ScalarField<f64>>,
}

impl BandMask {
    /// Empty band (degenerate mask with no contour).
    pub fn empty(width: usize, height: usize, width_px: u32) -> Result<Self> {
        Ok(BandMask {
            width_px,
            members: BinaryMask::filled(width, height, false)?,
            distances: None,
        })
    }

    /// Contour, distance transform and band in one call.
    pub fn from_mask(mask: &BinaryMask, width_px: u32) -> BandMask {
        let contour = extract_contour(mask);
        match distance_transform(&contour) {
            Ok(distances) => make_band(&contour, &distances, width_px)
                .expect("distance field built from this contour"),
            Err(_) => BandMask::empty(mask.width(), mask.height(), width_px)
                .expect("mask dims are valid"),
        }
    }

    pub fn width_px(&self) -> u32 {
        self.width_px
    }

    /// Euclidean inclusion radius, half the total width.
    pub fn radius(&self) -> f64 {
        band_radius(self.width_px)
    }

    pub fn members(&self) -> &BinaryMask {
        &self.members
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.members.get(row, col)
    }

    /// Distance to the nearest contour pixel; `None` when the contour is empty.
    pub fn distances(&self) -> Option<&ScalarField<f64>> {
        self.distances.as_ref()
    }

    pub fn distance(&self, row: usize, col: usize) -> Option<f64> {
        self.distances.as_ref().map(|d| d.get(row, col))
    }

    pub fn is_empty(&self) -> bool {
        self.members.count_foreground() == 0
    }

    pub fn count(&self) -> usize {
        self.members.count_foreground()
    }
}

pub fn band_radius(width_px: u32) -> f64 {
    f64::from(width_px) / 2.0
}

/// Band membership: `d <= width_px / 2`.
pub fn make_band(
    contour: &ContourSet,
    distances: &ScalarField<f64>,
    width_px: u32,
) -> Result<BandMask> {
    let (w, h) = contour.dims();
    if distances.dims() != (w, h) {
        return Err(Error::dims("distance field", (w, h), distances.dims()));
    }
    if contour.is_empty() {
        return BandMask::empty(w, h, width_px);
    }
    let radius = band_radius(width_px);
    let members = BinaryMask::new(w, h, distances.data().iter().map(|&d| d <= radius).collect())?;
    Ok(BandMask {
        width_px,
        members,
        distances: Some(distances.clone()),
    })
}

// ---------------------------------------------------------------------------
// Augmentation

/// A square crop followed by an optional horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropFlip {
    pub top: usize,
    pub left: usize,
    pub size: usize,
    pub flip: bool,
}

impl CropFlip {
    pub fn identity(width: usize, height: usize) -> Result<Self> {
        if width != height {
            return Err(Error::Dimensions(format!(
                "identity crop needs a square raster, got {width}x{height}"
            )));
        }
        Ok(CropFlip {
            top: 0,
            left: 0,
            size: width,
            flip: false,
        })
    }

    /// Source `(row, col)` for output pixel `(row, col)`.
    pub fn source(&self, row: usize, col: usize) -> (usize, usize) {
        let c = if self.flip { self.size - 1 - col } else { col };
        (self.top + row, self.left + c)
    }

    pub fn apply<S: Spatial>(&self, raster: &S) -> Result<S> {
        let (w, h) = raster.spatial_dims();
        if self.top + self.size > h || self.left + self.size > w {
            return Err(Error::Dimensions(format!(
                "crop {}x{} at ({}, {}) exceeds {w}x{h}",
                self.size, self.size, self.top, self.left
            )));
        }
        Ok(raster.remap(self.size, self.size, |r, c| self.source(r, c)))
    }
}

/// Rasters that can be spatially resampled pixel-for-pixel.
pub trait Spatial: Sized {
    fn spatial_dims(&self) -> (usize, usize);

    /// Builds a `width x height` raster whose pixel `(r, c)` is taken from
    /// `source(r, c)` of `self`.
    fn remap(
        &self,
        width: usize,
        height: usize,
        source: impl Fn(usize, usize) -> (usize, usize),
    ) -> Self;
}

impl Spatial for BinaryMask {
    fn spatial_dims(&self) -> (usize, usize) {
        self.dims()
    }

    fn remap(&self, width: usize, height: usize, source: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        BinaryMask::from_fn(width, height, |r, c| {
            let (sr, sc) = source(r, c);
            self.get(sr, sc)
        })
        .expect("non-empty remap")
    }
}

impl<T: Copy> Spatial for ScalarField<T> {
    fn spatial_dims(&self) -> (usize, usize) {
        self.dims()
    }

    fn remap(&self, width: usize, height: usize, source: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        ScalarField::from_fn(width, height, |r, c| {
            let (sr, sc) = source(r, c);
            self.get(sr, sc)
        })
        .expect("non-empty remap")
    }
}

impl<T: Copy> Spatial for TensorField<T> {
    fn spatial_dims(&self) -> (usize, usize) {
        self.dims()
    }

    fn remap(&self, width: usize, height: usize, source: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut data = Vec::with_capacity(width * height * self.channels());
        for ch in 0..self.channels() {
            for r in 0..height {
                for c in 0..width {
                    let (sr, sc) = source(r, c);
                    data.push(self.get(ch, sr, sc));
                }
            }
        }
        TensorField::new(width, height, self.channels(), data).expect("non-empty remap")
    }
}

/// Draws a crop offset uniformly over valid positions, then the flip decision.
pub fn sample_crop_flip(
    width: usize,
    height: usize,
    crop: usize,
    flip_prob: f64,
    rng: &mut impl Rng,
) -> Result<CropFlip> {
    if crop == 0 || crop > width.min(height) {
        return Err(Error::param(
            "crop",
            format!("crop {crop} must be in 1..={} for a {width}x{height} image", width.min(height)),
        ));
    }
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(Error::param("flip_prob", format!("{flip_prob} is not in [0, 1]")));
    }
    let top = rng.random_range(0..=height - crop);
    let left = rng.random_range(0..=width - crop);
    let flip = rng.random_bool(flip_prob);
    Ok(CropFlip {
        top,
        left,
        size: crop,
        flip,
    })
}

/// Applies one random crop/flip identically to an image and its labels.
pub fn augment_pair<A: Spatial, B: Spatial>(
    image: &A,
    labels: &B,
    crop: usize,
    flip_prob: f64,
    rng: &mut impl Rng,
) -> Result<(A, B, CropFlip)> {
    let (w, h) = image.spatial_dims();
    if labels.spatial_dims() != (w, h) {
        return Err(Error::dims("labels", (w, h), labels.spatial_dims()));
    }
    let t = sample_crop_flip(w, h, crop, flip_prob, rng)?;
    Ok((t.apply(image)?, t.apply(labels)?, t))
}

/// `[R, G, B, x, y, mean mask]` with `x = col / (w - 1)` and `y = row / (h - 1)`
/// (0 for single-column / single-row images).
pub fn assemble_input(rgb: &TensorField<f32>, mean_mask: &ScalarField<f64>) -> Result<TensorField<f32>> {
    if rgb.channels() != 3 {
        return Err(Error::Dimensions(format!(
            "expected a 3-channel image, found {} channels",
            rgb.channels()
        )));
    }
    let (w, h) = rgb.dims();
    if mean_mask.dims() != (w, h) {
        return Err(Error::dims("mean mask", (w, h), mean_mask.dims()));
    }
    let norm = |i: usize, n: usize| if n > 1 { i as f32 / (n - 1) as f32 } else { 0.0 };
    let mut data = Vec::with_capacity(6 * w * h);
    data.extend_from_slice(rgb.data());
    for _row in 0..h {
        data.extend((0..w).map(|col| norm(col, w)));
    }
    for row in 0..h {
        data.extend(std::iter::repeat_n(norm(row, h), w));
    }
    data.extend(mean_mask.data().iter().map(|&m| m as f32));
    TensorField::new(w, h, 6, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use proptest::prelude::*;

    fn row_mask() -> BinaryMask {
        BinaryMask::from_fn(7, 1, |_, c| c <= 3).unwrap()
    }

    /// Independent oracle: scan every pixel's 4-neighborhood.
    fn contour_oracle(mask: &BinaryMask) -> Vec<(usize, usize)> {
        let (w, h) = mask.dims();
        let mut out = Vec::new();
        for r in 0..h as isize {
            for c in 0..w as isize {
                if !mask.get(r as usize, c as usize) {
                    continue;
                }
                let hit = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dr, dc)| {
                    let (nr, nc) = (r + dr, c + dc);
                    nr >= 0
                        && nc >= 0
                        && (nr as usize) < h
                        && (nc as usize) < w
                        && !mask.get(nr as usize, nc as usize)
                });
                if hit {
                    out.push((r as usize, c as usize));
                }
            }
        }
        out
    }

    /// Independent oracle: all-pairs minimum over contour points.
    fn edt_oracle(contour: &ContourSet) -> Vec<f64> {
        let (w, h) = contour.dims();
        let mut out = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                let best = contour
                    .points()
                    .iter()
                    .map(|&(pr, pc)| {
                        let dr = r as i64 - pr as i64;
                        let dc = c as i64 - pc as i64;
                        dr * dr + dc * dc
                    })
                    .min()
                    .unwrap();
                out.push((best as f64).sqrt());
            }
        }
        out
    }

    #[test]
    fn all_foreground_has_no_contour() {
        let mask = BinaryMask::filled(4, 3, true).unwrap();
        assert!(extract_contour(&mask).is_empty());
        assert!(matches!(
            distance_transform(&extract_contour(&mask)),
            Err(Error::EmptyContour)
        ));
    }

    #[test]
    fn centered_square_contour() {
        let mask = BinaryMask::from_fn(5, 5, |r, c| (1..=3).contains(&r) && (1..=3).contains(&c)).unwrap();
        let contour = extract_contour(&mask);
        assert_eq!(contour.points(), contour_oracle(&mask).as_slice());
        assert_eq!(contour.len(), 8);
        assert!(!contour.points().contains(&(2, 2)));
    }

    #[test]
    fn row_contour() {
        let contour = extract_contour(&row_mask());
        assert_eq!(contour.points(), &[(0, 3)]);
    }

    #[test]
    fn border_is_not_background() {
        // Foreground bottom half touches the image edge but only the top row
        // of it borders background.
        let mask = BinaryMask::from_fn(4, 4, |r, _| r >= 2).unwrap();
        let contour = extract_contour(&mask);
        assert_eq!(contour.points(), &[(2, 0), (2, 1), (2, 2), (2, 3)]);
    }

    #[test]
    fn single_point_distance() {
        let contour = ContourSet {
            width: 3,
            height: 3,
            points: vec![(0, 0)],
        };
        let d = distance_transform(&contour).unwrap();
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(2, 2), 8f64.sqrt());
    }

    #[test]
    fn band_on_row() {
        let mask = row_mask();
        let band = BandMask::from_mask(&mask, 2);
        let members: Vec<_> = (0..7).filter(|&c| band.contains(0, c)).collect();
        assert_eq!(members, vec![2, 3, 4]);
        let d: Vec<_> = members.iter().map(|&c| band.distance(0, c).unwrap()).collect();
        assert_eq!(d, vec![1.0, 0.0, 1.0]);

        let zero = BandMask::from_mask(&mask, 0);
        assert_eq!(zero.members(), &extract_contour(&mask).to_mask());
    }

    #[test]
    fn straight_edge_band_is_eleven_wide() {
        let mask = BinaryMask::from_fn(30, 6, |_, c| c < 15).unwrap();
        let band = BandMask::from_mask(&mask, 10);
        for r in 0..6 {
            let cols: Vec<_> = (0..30).filter(|&c| band.contains(r, c)).collect();
            assert_eq!(cols, (9..=19).collect::<Vec<_>>());
        }
    }

    #[test]
    fn empty_contour_gives_empty_band() {
        let band = BandMask::from_mask(&BinaryMask::filled(3, 3, false).unwrap(), 10);
        assert!(band.is_empty());
        assert!(band.distances().is_none());
    }

    #[test]
    fn identity_augmentation() {
        let img = TensorField::new(3, 3, 1, (0..9).map(|v| v as f32).collect()).unwrap();
        let mask = BinaryMask::from_fn(3, 3, |r, c| r == c).unwrap();
        let mut rng = seeded_rng(1);
        let (a, b, t) = augment_pair(&img, &mask, 3, 0.0, &mut rng).unwrap();
        assert_eq!(a, img);
        assert_eq!(b, mask);
        assert!(!t.flip);
    }

    #[test]
    fn double_flip_is_identity() {
        let img = TensorField::new(4, 4, 2, (0..32).map(|v| v as f32).collect()).unwrap();
        let t = CropFlip {
            top: 0,
            left: 0,
            size: 4,
            flip: true,
        };
        let once = t.apply(&img).unwrap();
        assert_ne!(once, img);
        assert_eq!(t.apply(&once).unwrap(), img);
    }

    #[test]
    fn augmentation_is_seeded() {
        let img = TensorField::new(8, 8, 1, (0..64).map(|v| v as f32).collect()).unwrap();
        let mask = BinaryMask::from_fn(8, 8, |r, c| r > c).unwrap();
        let run = |seed| augment_pair(&img, &mask, 4, 0.5, &mut seeded_rng(seed)).unwrap();
        let (a1, b1, t1) = run(11);
        let (a2, b2, t2) = run(11);
        assert_eq!((a1, b1, t1), (a2, b2, t2));
    }

    #[test]
    fn augmentation_rejects_bad_crop() {
        let img = TensorField::filled(4, 3, 1, 0.0f32).unwrap();
        let mask = BinaryMask::filled(4, 3, false).unwrap();
        assert!(augment_pair(&img, &mask, 4, 0.5, &mut seeded_rng(0)).is_err());
        assert!(augment_pair(&img, &mask, 2, 1.5, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn input_assembly_channels() {
        let rgb = TensorField::filled(3, 2, 3, 0.25f32).unwrap();
        let mean = ScalarField::filled(3, 2, 0.5).unwrap();
        let x = assemble_input(&rgb, &mean).unwrap();
        assert_eq!(x.channels(), 6);
        assert_eq!((x.get(3, 0, 0), x.get(4, 0, 0)), (0.0, 0.0));
        assert_eq!((x.get(3, 1, 2), x.get(4, 1, 2)), (1.0, 1.0));
        assert_eq!(&x.channel(3)[..3], &[0.0, 0.5, 1.0]);
        assert!(x.channel(5).iter().all(|&v| v == 0.5));
        assert!(x.channel(0).iter().all(|&v| v == 0.25));

        let thin = assemble_input(
            &TensorField::filled(1, 1, 3, 0.0f32).unwrap(),
            &ScalarField::filled(1, 1, 0.0).unwrap(),
        )
        .unwrap();
        assert_eq!((thin.get(3, 0, 0), thin.get(4, 0, 0)), (0.0, 0.0));

        assert!(assemble_input(&rgb, &ScalarField::filled(2, 2, 0.0).unwrap()).is_err());
        assert!(assemble_input(&TensorField::filled(3, 2, 1, 0.0f32).unwrap(), &mean).is_err());
    }

    fn arb_mask(max: usize) -> impl Strategy<Value = BinaryMask> {
        (1..=max, 1..=max).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), w * h)
                .prop_map(move |d| BinaryMask::new(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn contour_matches_oracle(mask in arb_mask(16)) {
            let got = extract_contour(&mask);
            prop_assert_eq!(got.points().to_vec(), contour_oracle(&mask));
        }

        #[test]
        fn edt_is_exact(mask in arb_mask(20)) {
            let contour = extract_contour(&mask);
            prop_assume!(!contour.is_empty());
            let d = distance_transform(&contour).unwrap();
            prop_assert_eq!(d.data().to_vec(), edt_oracle(&contour));
        }

        #[test]
        fn complement_contour_is_disjoint(mask in arb_mask(16)) {
            let fg = extract_contour(&mask);
            let bg = extract_contour(&mask.complement());
            for p in bg.points() {
                prop_assert!(!mask.get(p.0, p.1));
                prop_assert!(!fg.points().contains(p));
            }
        }

        #[test]
        fn band_monotone_in_width(mask in arb_mask(16), p1 in 0u32..12, extra in 0u32..8) {
            let small = BandMask::from_mask(&mask, p1);
            let large = BandMask::from_mask(&mask, p1 + extra);
            for (a, b) in small.members().data().iter().zip(large.members().data()) {
                prop_assert!(!a || *b);
            }
            prop_assert_eq!(small.is_empty(), extract_contour(&mask).is_empty());
        }

        #[test]
        fn augmentation_keeps_correspondence(seed in any::<u64>(), crop in 1usize..=6) {
            // Encode the source coordinate in both rasters and check they travel together.
            let img = TensorField::new(6, 6, 1, (0..36).map(|v| v as f32).collect()).unwrap();
            let labels = ScalarField::from_fn(6, 6, |r, c| (r * 6 + c) as f32).unwrap();
            let (a, b, _) = augment_pair(&img, &labels, crop, 0.5, &mut seeded_rng(seed)).unwrap();
            prop_assert_eq!(a.channel(0), b.data());
        }
    }
}
