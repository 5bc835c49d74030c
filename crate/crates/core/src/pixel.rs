//! Raster frames, their relational pixel-tuple view, and the image kernels
//! backing the data-reduction operators (crop, downscale, greyscale, color
//! fraction).
//!
//! All kernels are pure functions over immutable frames. Downscale is an
//! exact block mean (rounded half-up) so that it coincides with a relational
//! GROUP BY over the pixel-tuple view, and so that crop/downscale commutation
//! is exactly testable on block-aligned regions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PixelError {
    #[error("region {0:?} out of bounds for {1}x{2} frame")]
    RegionOutOfBounds(Region, u32, u32),
    #[error("downscale factor {factor} does not divide {width}x{height}")]
    FactorMismatch { factor: u32, width: u32, height: u32 },
    #[error("downscale factor must be >= 1")]
    ZeroFactor,
}

/// 8-bit RGB pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Rgb(pub u8, pub u8, pub u8);

/// Half-open pixel rectangle: rows `[row_start, row_end)`, cols `[col_start, col_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub row_start: u32,
    pub row_end: u32,
    pub col_start: u32,
    pub col_end: u32,
}

impl Region {
    pub fn new(row_start: u32, row_end: u32, col_start: u32, col_end: u32) -> Self {
        Region { row_start, row_end, col_start, col_end }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Region { row_start: 0, row_end: height, col_start: 0, col_end: width }
    }

    pub fn height(&self) -> u32 {
        self.row_end.saturating_sub(self.row_start)
    }

    pub fn width(&self) -> u32 {
        self.col_end.saturating_sub(self.col_start)
    }

    pub fn pixels(&self) -> u64 {
        self.height() as u64 * self.width() as u64
    }

    pub fn is_valid_within(&self, width: u32, height: u32) -> bool {
        self.row_start < self.row_end
            && self.col_start < self.col_end
            && self.row_end <= height
            && self.col_end <= width
    }

    /// Scales every bound by `b` (used when commuting a crop past a downscale).
    pub fn scaled(&self, b: u32) -> Region {
        Region {
            row_start: self.row_start * b,
            row_end: self.row_end * b,
            col_start: self.col_start * b,
            col_end: self.col_end * b,
        }
    }

    /// Rounds bounds outward to multiples of `b`, clamped to the frame.
    pub fn aligned_outward(&self, b: u32, width: u32, height: u32) -> Region {
        let down = |v: u32| (v / b) * b;
        let up = |v: u32, max: u32| (v.div_ceil(b) * b).min(max);
        Region {
            row_start: down(self.row_start),
            row_end: up(self.row_end, height),
            col_start: down(self.col_start),
            col_end: up(self.col_end, width),
        }
    }

    pub fn is_block_aligned(&self, b: u32) -> bool {
        self.row_start % b == 0
            && self.row_end % b == 0
            && self.col_start % b == 0
            && self.col_end % b == 0
    }
}

/// One video frame: row-major RGB raster plus stream position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub frame_id: u64,
    /// Simulated event time in milliseconds.
    pub event_time_ms: u64,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Rgb>,
}

/// Relational view of one pixel; `(row_id, column_id)` is the composite key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PixelTuple {
    pub row_id: u32,
    pub column_id: u32,
    pub red: u8,
    pub green: u8,
    pub blue: u8,
}

impl Frame {
    pub fn filled(frame_id: u64, event_time_ms: u64, width: u32, height: u32, color: Rgb) -> Self {
        Frame {
            frame_id,
            event_time_ms,
            width,
            height,
            pixels: vec![color; (width * height) as usize],
        }
    }

    pub fn pixel(&self, row: u32, col: u32) -> Rgb {
        self.pixels[(row * self.width + col) as usize]
    }

    pub fn set_pixel(&mut self, row: u32, col: u32, c: Rgb) {
        self.pixels[(row * self.width + col) as usize] = c;
    }

    /// Paints an axis-aligned rectangle, clamped to the frame bounds.
    pub fn fill_rect(&mut self, region: Region, color: Rgb) {
        let r1 = region.row_end.min(self.height);
        let c1 = region.col_end.min(self.width);
        for r in region.row_start.min(self.height)..r1 {
            let base = (r * self.width) as usize;
            for c in region.col_start.min(self.width)..c1 {
                self.pixels[base + c as usize] = color;
            }
        }
    }

    pub fn pixel_count(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    /// Serializes as binary PPM (P6). Debug path only.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 3);
        for p in &self.pixels {
            out.extend_from_slice(&[p.0, p.1, p.2]);
        }
        out
    }
}

/// Integer mean of `sum` over `n` samples, rounding .5 up.
fn mean_half_up(sum: u32, n: u32) -> u8 {
    ((2 * sum + n) / (2 * n)) as u8
}

pub fn crop(frame: &Frame, region: Region) -> Result<Frame, PixelError> {
    if !region.is_valid_within(frame.width, frame.height) {
        return Err(PixelError::RegionOutOfBounds(region, frame.width, frame.height));
    }
    let (w, h) = (region.width(), region.height());
    let mut pixels = Vec::with_capacity((w * h) as usize);
    for r in region.row_start..region.row_end {
        let base = (r * frame.width) as usize;
        pixels.extend_from_slice(
            &frame.pixels[base + region.col_start as usize..base + region.col_end as usize],
        );
    }
    Ok(Frame {
        frame_id: frame.frame_id,
        event_time_ms: frame.event_time_ms,
        width: w,
        height: h,
        pixels,
    })
}

/// Block-mean downscale by integer factor `b`; `b` must divide both dimensions.
/// Equivalent to GROUP BY (row_id div b, column_id div b) with AVG per channel
/// over the pixel-tuple view.
pub fn downscale(frame: &Frame, b: u32) -> Result<Frame, PixelError> {
    if b == 0 {
        return Err(PixelError::ZeroFactor);
    }
    if b == 1 {
        return Ok(frame.clone());
    }
    if frame.width % b != 0 || frame.height % b != 0 {
        return Err(PixelError::FactorMismatch { factor: b, width: frame.width, height: frame.height });
    }
    let (ow, oh) = (frame.width / b, frame.height / b);
    let mut pixels = Vec::with_capacity((ow * oh) as usize);
    let n = b * b;
    for out_r in 0..oh {
        for out_c in 0..ow {
            let (mut sr, mut sg, mut sb) = (0u32, 0u32, 0u32);
            for r in out_r * b..(out_r + 1) * b {
                let base = (r * frame.width) as usize;
                for c in out_c * b..(out_c + 1) * b {
                    let p = frame.pixels[base + c as usize];
                    sr += p.0 as u32;
                    sg += p.1 as u32;
                    sb += p.2 as u32;
                }
            }
            pixels.push(Rgb(mean_half_up(sr, n), mean_half_up(sg, n), mean_half_up(sb, n)));
        }
    }
    Ok(Frame {
        frame_id: frame.frame_id,
        event_time_ms: frame.event_time_ms,
        width: ow,
        height: oh,
        pixels,
    })
}

/// Luma conversion, result replicated into all three channels.
pub fn greyscale(frame: &Frame) -> Frame {
    let pixels = frame
        .pixels
        .iter()
        .map(|p| {
            let y = (0.299 * p.0 as f64 + 0.587 * p.1 as f64 + 0.114 * p.2 as f64).round() as u8;
            Rgb(y, y, y)
        })
        .collect();
    Frame { pixels, ..frame.clone() }
}

/// Chromatic pixel classes a cheap pre-filter can count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorClass {
    Red,
    Blue,
}

impl ColorClass {
    pub fn matches(&self, p: Rgb) -> bool {
        match self {
            // Dominant-channel rule: the channel must double both others and
            // clear an absolute floor, so greys and dark pixels never match.
            ColorClass::Red => {
                p.0 as u16 >= 2 * p.1 as u16 && p.0 as u16 >= 2 * p.2 as u16 && p.0 >= 100
            }
            ColorClass::Blue => {
                p.2 as u16 >= 2 * p.0 as u16 && p.2 as u16 >= 2 * p.1 as u16 && p.2 >= 100
            }
        }
    }
}

/// Fraction of pixels classified into `class`, in [0, 1].
pub fn color_fraction(frame: &Frame, class: ColorClass) -> f64 {
    if frame.pixels.is_empty() {
        return 0.0;
    }
    let hits = frame.pixels.iter().filter(|p| class.matches(**p)).count();
    hits as f64 / frame.pixels.len() as f64
}

/// Fraction of red-ish pixels (the cheap classifier behind the pre-filter).
pub fn red_fraction(frame: &Frame) -> f64 {
    color_fraction(frame, ColorClass::Red)
}

pub fn to_pixel_tuples(frame: &Frame) -> Vec<PixelTuple> {
    let mut out = Vec::with_capacity(frame.pixels.len());
    for r in 0..frame.height {
        for c in 0..frame.width {
            let p = frame.pixel(r, c);
            out.push(PixelTuple { row_id: r, column_id: c, red: p.0, green: p.1, blue: p.2 });
        }
    }
    out
}

/// Rebuilds a frame from its tuple view. Tuples may arrive in any order;
/// every (row, col) in the grid must be present exactly once.
pub fn from_pixel_tuples(
    frame_id: u64,
    event_time_ms: u64,
    width: u32,
    height: u32,
    tuples: &[PixelTuple],
) -> Option<Frame> {
    if tuples.len() as u64 != width as u64 * height as u64 {
        return None;
    }
    let mut frame = Frame::filled(frame_id, event_time_ms, width, height, Rgb(0, 0, 0));
    let mut seen = vec![false; tuples.len()];
    for t in tuples {
        if t.row_id >= height || t.column_id >= width {
            return None;
        }
        let idx = (t.row_id * width + t.column_id) as usize;
        if seen[idx] {
            return None;
        }
        seen[idx] = true;
        frame.set_pixel(t.row_id, t.column_id, Rgb(t.red, t.green, t.blue));
    }
    Some(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn random_frame(rng: &mut ChaCha8Rng, width: u32, height: u32) -> Frame {
        let pixels = (0..width * height)
            .map(|_| Rgb(rng.gen::<u8>(), rng.gen::<u8>(), rng.gen::<u8>()))
            .collect();
        Frame { frame_id: 0, event_time_ms: 0, width, height, pixels }
    }

    /// Independent oracle: relational GROUP BY (row div b, col div b) with
    /// per-channel AVG over the tuple view.
    fn downscale_oracle(frame: &Frame, b: u32) -> Vec<PixelTuple> {
        let mut groups: BTreeMap<(u32, u32), (u32, u32, u32, u32)> = BTreeMap::new();
        for t in to_pixel_tuples(frame) {
            let e = groups.entry((t.row_id / b, t.column_id / b)).or_insert((0, 0, 0, 0));
            e.0 += t.red as u32;
            e.1 += t.green as u32;
            e.2 += t.blue as u32;
            e.3 += 1;
        }
        groups
            .into_iter()
            .map(|((r, c), (sr, sg, sb, n))| PixelTuple {
                row_id: r,
                column_id: c,
                red: mean_half_up(sr, n),
                green: mean_half_up(sg, n),
                blue: mean_half_up(sb, n),
            })
            .collect()
    }

    #[test]
    fn crop_full_frame_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_frame(&mut rng, 8, 6);
        let out = crop(&f, Region::full(8, 6)).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn crop_bottom_half_of_4x4() {
        let mut f = Frame::filled(0, 0, 4, 4, Rgb(1, 1, 1));
        f.fill_rect(Region::new(2, 4, 0, 4), Rgb(9, 9, 9));
        let out = crop(&f, Region::new(2, 4, 0, 4)).unwrap();
        assert_eq!(out.width, 4);
        assert_eq!(out.height, 2);
        assert!(out.pixels.iter().all(|p| *p == Rgb(9, 9, 9)));
    }

    #[test]
    fn crop_out_of_bounds_rejected() {
        let f = Frame::filled(0, 0, 4, 4, Rgb(0, 0, 0));
        assert!(crop(&f, Region::new(0, 5, 0, 4)).is_err());
        assert!(crop(&f, Region::new(2, 2, 0, 4)).is_err());
    }

    #[test]
    fn downscale_identity_at_factor_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_frame(&mut rng, 6, 6);
        assert_eq!(downscale(&f, 1).unwrap(), f);
    }

    #[test]
    fn downscale_rounds_half_up() {
        // Reds {0,0,0,255}: mean 63.75 -> 64.
        let mut f = Frame::filled(0, 0, 2, 2, Rgb(0, 0, 0));
        f.set_pixel(1, 1, Rgb(255, 0, 0));
        let out = downscale(&f, 2).unwrap();
        assert_eq!(out.pixels, vec![Rgb(64, 0, 0)]);
    }

    #[test]
    fn downscale_requires_divisibility() {
        let f = Frame::filled(0, 0, 6, 6, Rgb(0, 0, 0));
        assert_eq!(
            downscale(&f, 4),
            Err(PixelError::FactorMismatch { factor: 4, width: 6, height: 6 })
        );
    }

    #[test]
    fn downscale_matches_relational_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let f = random_frame(&mut rng, 16, 16);
            for b in [2u32, 4] {
                let fast = to_pixel_tuples(&downscale(&f, b).unwrap());
                let slow = downscale_oracle(&f, b);
                assert_eq!(fast, slow);
            }
        }
    }

    #[test]
    fn crop_downscale_commute_on_aligned_regions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let f = random_frame(&mut rng, 32, 24);
            for b in [2u32, 4] {
                // Random block-aligned region in downscaled coordinates.
                let oh = 24 / b;
                let ow = 32 / b;
                let r0 = rng.gen_range(0..oh - 1);
                let r1 = rng.gen_range(r0 + 1..=oh);
                let c0 = rng.gen_range(0..ow - 1);
                let c1 = rng.gen_range(c0 + 1..=ow);
                let region = Region::new(r0, r1, c0, c1);
                let a = crop(&downscale(&f, b).unwrap(), region).unwrap();
                let b_path = downscale(&crop(&f, region.scaled(b)).unwrap(), b).unwrap();
                assert_eq!(a.pixels, b_path.pixels);
            }
        }
    }

    #[test]
    fn repeated_downscale_within_rounding_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let f = random_frame(&mut rng, 16, 16);
            let twice = downscale(&downscale(&f, 2).unwrap(), 2).unwrap();
            let once = downscale(&f, 4).unwrap();
            for (a, b) in twice.pixels.iter().zip(once.pixels.iter()) {
                assert!((a.0 as i16 - b.0 as i16).abs() <= 1);
                assert!((a.1 as i16 - b.1 as i16).abs() <= 1);
                assert!((a.2 as i16 - b.2 as i16).abs() <= 1);
            }
        }
    }

    #[test]
    fn greyscale_fixed_points_and_coefficients() {
        let grey = Frame::filled(0, 0, 3, 3, Rgb(77, 77, 77));
        assert_eq!(greyscale(&grey), grey);
        let red = Frame::filled(0, 0, 1, 1, Rgb(255, 0, 0));
        assert_eq!(greyscale(&red).pixels[0], Rgb(76, 76, 76));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let f = random_frame(&mut rng, 8, 8);
            let g = greyscale(&f);
            assert_eq!(greyscale(&g), g);
        }
    }

    #[test]
    fn greyscale_destroys_red_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let mut f = random_frame(&mut rng, 8, 8);
            f.fill_rect(Region::new(0, 4, 0, 4), Rgb(220, 30, 20));
            assert_eq!(red_fraction(&greyscale(&f)), 0.0);
        }
    }

    #[test]
    fn red_fraction_counts_exactly() {
        let black = Frame::filled(0, 0, 4, 4, Rgb(0, 0, 0));
        assert_eq!(red_fraction(&black), 0.0);
        let mut f = Frame::filled(0, 0, 4, 4, Rgb(0, 0, 0));
        f.fill_rect(Region::new(0, 2, 0, 2), Rgb(255, 0, 0));
        assert_eq!(red_fraction(&f), 0.25);
    }

    #[test]
    fn tuple_view_roundtrip() {
        let red = Frame::filled(3, 10, 1, 1, Rgb(255, 0, 0));
        assert_eq!(
            to_pixel_tuples(&red),
            vec![PixelTuple { row_id: 0, column_id: 0, red: 255, green: 0, blue: 0 }]
        );
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let f = random_frame(&mut rng, 9, 5);
            let tuples = to_pixel_tuples(&f);
            assert_eq!(tuples.len() as u64, f.pixel_count());
            let back = from_pixel_tuples(f.frame_id, f.event_time_ms, 9, 5, &tuples).unwrap();
            assert_eq!(back, f);
        }
    }

    #[test]
    fn crop_idempotent_relative_to_rebased_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_frame(&mut rng, 12, 12);
        let region = Region::new(3, 9, 2, 10);
        let once = crop(&f, region).unwrap();
        let again = crop(&once, Region::full(once.width, once.height)).unwrap();
        assert_eq!(once, again);
    }
}
