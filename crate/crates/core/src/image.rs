//! Grayscale images, the IDX container, and the two digit augmentations:
//! random resize-and-crop, and a small random rotation followed by the same
//! resize-and-crop.
//!
//! Sampling uses bilinear interpolation with half-pixel centers. Byte
//! outputs are rounded half away from zero and clamped to `0..=255`.

use std::io::Read;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
/// Side length of the digit images and of every augmented output.
pub const SIDE: usize = 28;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || width * height != pixels.len() {
            return Err(Error::Data(format!(
                "{width}x{height} image cannot hold {} pixels",
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major pixel bytes.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }
}

/// Contents of one IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxData {
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<u8>,
    },
    Labels(Vec<u8>),
}

impl IdxData {
    pub fn len(&self) -> usize {
        match self {
            IdxData::Images { count, .. } => *count,
            IdxData::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_images(self) -> Result<Vec<GrayImage>> {
        match self {
            IdxData::Images { rows, cols, pixels, .. } => pixels
                .chunks_exact(rows * cols)
                .map(|p| GrayImage::new(cols, rows, p.to_vec()))
                .collect(),
            IdxData::Labels(_) => Err(Error::Data("expected an image file, found labels".into())),
        }
    }

    pub fn into_labels(self) -> Result<Vec<u8>> {
        match self {
            IdxData::Labels(l) => Ok(l),
            IdxData::Images { .. } => Err(Error::Data("expected a label file, found images".into())),
        }
    }
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::parse(bytes.len(), format!("stream ends before the {what} field")))
}

/// Parses an IDX image or label file. Gzip input (leading `1f 8b`) is
/// decompressed first; offsets in errors then refer to the decompressed
/// stream.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut raw = Vec::new();
        flate2::read::GzDecoder::new(bytes)
            .read_to_end(&mut raw)
            .map_err(|e| Error::parse(0, format!("gzip stream: {e}")))?;
        return parse_idx(&raw);
    }
    let magic = read_u32(bytes, 0, "magic")?;
    let count = read_u32(bytes, 4, "item count")? as usize;
    let (header, item) = match magic {
        IMAGE_MAGIC => {
            let rows = read_u32(bytes, 8, "row count")? as usize;
            let cols = read_u32(bytes, 12, "column count")? as usize;
            (16, rows * cols)
        }
        LABEL_MAGIC => (8, 1),
        other => return Err(Error::parse(0, format!("unknown IDX magic {other}"))),
    };
    let expected = count
        .checked_mul(item)
        .and_then(|n| n.checked_add(header))
        .ok_or_else(|| Error::parse(4, "item count overflows"))?;
    if bytes.len() < expected {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated: header announces {count} items, needing {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::parse(
            expected,
            format!("{} trailing bytes after {count} items", bytes.len() - expected),
        ));
    }
    let body = bytes[header..].to_vec();
    Ok(if magic == IMAGE_MAGIC {
        IdxData::Images {
            count,
            rows: read_u32(bytes, 8, "row count")? as usize,
            cols: read_u32(bytes, 12, "column count")? as usize,
            pixels: body,
        }
    } else {
        IdxData::Labels(body)
    })
}

pub fn read_idx_file(path: &Path) -> Result<IdxData> {
    parse_idx(&std::fs::read(path)?)
}

fn to_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn source_coord(dst: usize, scale: f64, src_len: usize) -> (usize, usize, f64) {
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resize to `width x height`, kept in floating point.
pub fn resize_bilinear(img: &GrayImage, width: usize, height: usize) -> Vec<f64> {
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = source_coord(y, sy, img.height);
        for x in 0..width {
            let (x0, x1, fx) = source_coord(x, sx, img.width);
            let top = img.get(x0, y0) as f64 * (1.0 - fx) + img.get(x1, y0) as f64 * fx;
            let bottom = img.get(x0, y1) as f64 * (1.0 - fx) + img.get(x1, y1) as f64 * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Parameters of one resize-and-crop draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResizeCrop {
    pub size: usize,
    pub dx: usize,
    pub dy: usize,
}

impl ResizeCrop {
    /// `size` uniform in `29..=32`, offsets uniform in `0..=size-28`.
    pub fn draw(seed: u64) -> Self {
        let mut rng = rng::stream(seed, Domain::Augment, 0);
        let size = rng.gen_range(SIDE + 1..=SIDE + 4);
        let dx = rng.gen_range(0..=size - SIDE);
        let dy = rng.gen_range(0..=size - SIDE);
        ResizeCrop { size, dx, dy }
    }

    pub fn apply(&self, img: &GrayImage) -> Result<GrayImage> {
        if self.size < SIDE || self.dx + SIDE > self.size || self.dy + SIDE > self.size {
            return Err(Error::config(format!("crop {self:?} does not fit")));
        }
        let big = resize_bilinear(img, self.size, self.size);
        let mut pixels = Vec::with_capacity(SIDE * SIDE);
        for y in 0..SIDE {
            let row = (y + self.dy) * self.size + self.dx;
            pixels.extend(big[row..row + SIDE].iter().map(|&v| to_byte(v)));
        }
        GrayImage::new(SIDE, SIDE, pixels)
    }
}

fn check_digit(img: &GrayImage) -> Result<()> {
    if img.width != SIDE || img.height != SIDE {
        return Err(Error::Data(format!(
            "augmentations expect {SIDE}x{SIDE} images, got {}x{}",
            img.width, img.height
        )));
    }
    Ok(())
}

pub fn augment_resize_crop(img: &GrayImage, seed: u64) -> Result<GrayImage> {
    check_digit(img)?;
    ResizeCrop::draw(seed).apply(img)
}

/// Rotation by `degrees` about the image center (clockwise on screen, as
/// rows grow downward); samples falling outside the image read as 0.
pub fn rotate(img: &GrayImage, degrees: f64) -> GrayImage {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let fetch = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= img.width as i64 || y >= img.height as i64 {
            0.0
        } else {
            img.get(x as usize, y as usize) as f64
        }
    };
    let mut out = GrayImage::filled(img.width, img.height, 0);
    for y in 0..img.height {
        for x in 0..img.width {
            // Inverse map: rotate the destination offset back by -degrees.
            let (ox, oy) = (x as f64 - cx, y as f64 - cy);
            let sx = cos * ox + sin * oy + cx;
            let sy = -sin * ox + cos * oy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let top = fetch(x0, y0) * (1.0 - fx) + fetch(x0 + 1, y0) * fx;
            let bottom = fetch(x0, y0 + 1) * (1.0 - fx) + fetch(x0 + 1, y0 + 1) * fx;
            out.set(x, y, to_byte(top * (1.0 - fy) + bottom * fy));
        }
    }
    out
}

/// Rotation angle in degrees, uniform in `[-10, 10]`.
pub fn draw_rotation(seed: u64) -> f64 {
    rng::stream(seed, Domain::Rotation, 0).gen_range(-10.0..=10.0)
}

pub fn augment_rotate_resize_crop(img: &GrayImage, seed: u64) -> Result<GrayImage> {
    check_digit(img)?;
    ResizeCrop::draw(seed).apply(&rotate(img, draw_rotation(seed)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augmentation {
    ResizeCrop,
    RotateResizeCrop,
}

impl Augmentation {
    pub fn apply(self, img: &GrayImage, seed: u64) -> Result<GrayImage> {
        match self {
            Augmentation::ResizeCrop => augment_resize_crop(img, seed),
            Augmentation::RotateResizeCrop => augment_rotate_resize_crop(img, seed),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Augmentation::ResizeCrop => "resize_crop",
            Augmentation::RotateResizeCrop => "rotate_resize_crop",
        }
    }
}

impl std::str::FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resize_crop" => Ok(Augmentation::ResizeCrop),
            "rotate_resize_crop" => Ok(Augmentation::RotateResizeCrop),
            _ => Err(Error::config(format!("unknown augmentation `{s}`"))),
        }
    }
}

/// Row-major pixels scaled into `[0, 1]`.
pub fn flatten_normalize(img: &GrayImage) -> Vec<f64> {
    img.pixels.iter().map(|&p| p as f64 / 255.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn idx_images(count: u32, rows: u32, cols: u32, body: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IMAGE_MAGIC, count, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(body);
        v
    }

    fn test_image(seed: u64) -> GrayImage {
        let mut rng = rng::stream(seed, Domain::Subset, 0);
        GrayImage::new(SIDE, SIDE, (0..SIDE * SIDE).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn parses_black_image() {
        let data = parse_idx(&idx_images(1, 28, 28, &[0; 784])).unwrap();
        let images = data.into_images().unwrap();
        assert_eq!(images.len(), 1);
        assert!(images[0].pixels().iter().all(|&p| p == 0));
    }

    #[test]
    fn parses_labels() {
        let mut v = LABEL_MAGIC.to_be_bytes().to_vec();
        v.extend_from_slice(&2u32.to_be_bytes());
        v.extend_from_slice(&[3, 7]);
        assert_eq!(parse_idx(&v).unwrap(), IdxData::Labels(vec![3, 7]));
    }

    #[test]
    fn parses_gzip() {
        use flate2::{write::GzEncoder, Compression};
        use std::io::Write;
        let raw = idx_images(2, 2, 3, &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12]);
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(parse_idx(&gz).unwrap(), parse_idx(&raw).unwrap());
        let imgs = parse_idx(&gz).unwrap().into_images().unwrap();
        assert_eq!((imgs[1].width(), imgs[1].height()), (3, 2));
        assert_eq!(imgs[1].get(0, 1), 10);
    }

    #[test]
    fn rejects_malformed_streams() {
        let mut bad_magic = idx_images(1, 1, 1, &[0]);
        bad_magic[3] = 0x04;
        assert!(matches!(parse_idx(&bad_magic), Err(Error::Parse { offset: 0, .. })));

        let short = idx_images(2, 2, 2, &[0; 7]);
        assert!(matches!(parse_idx(&short), Err(Error::Parse { offset: 23, .. })));

        let long = idx_images(1, 2, 2, &[0; 5]);
        assert!(matches!(parse_idx(&long), Err(Error::Parse { offset: 20, .. })));

        assert!(matches!(parse_idx(&[0, 0, 8]), Err(Error::Parse { offset: 3, .. })));
        assert!(matches!(parse_idx(&[0x1f, 0x8b, 1, 2]), Err(Error::Parse { .. })));
    }

    #[test]
    fn resize_crop_matches_direct_interpolation() {
        let img = test_image(3);
        let out = ResizeCrop { size: 29, dx: 0, dy: 0 }.apply(&img).unwrap();
        let scale = 28.0 / 29.0;
        for y in 0..SIDE {
            for x in 0..SIDE {
                // Direct evaluation of the bilinear surface at the pixel center.
                let sx = ((x as f64 + 0.5) * scale - 0.5).max(0.0);
                let sy = ((y as f64 + 0.5) * scale - 0.5).max(0.0);
                let (x0, y0) = (sx as usize, sy as usize);
                let (x1, y1) = ((x0 + 1).min(27), (y0 + 1).min(27));
                let (ax, ay) = (sx - x0 as f64, sy - y0 as f64);
                let p = |i: usize, j: usize| img.get(i, j) as f64;
                let want = p(x0, y0) * (1.0 - ax) * (1.0 - ay)
                    + p(x1, y0) * ax * (1.0 - ay)
                    + p(x0, y1) * (1.0 - ax) * ay
                    + p(x1, y1) * ax * ay;
                assert!((out.get(x, y) as f64 - want).abs() <= 1.0, "({x},{y})");
            }
        }
    }

    #[test]
    fn draws_cover_the_allowed_ranges() {
        let mut sizes = [false; 4];
        for seed in 0..400 {
            let d = ResizeCrop::draw(seed);
            assert!((29..=32).contains(&d.size));
            assert!(d.dx <= d.size - 28 && d.dy <= d.size - 28);
            sizes[d.size - 29] = true;
            let b = draw_rotation(seed);
            assert!((-10.0..=10.0).contains(&b));
        }
        assert!(sizes.iter().all(|&s| s));
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = test_image(5);
        assert_eq!(rotate(&img, 0.0), img);
        let seed = 17;
        let direct = augment_resize_crop(&img, seed).unwrap();
        let via = ResizeCrop::draw(seed).apply(&rotate(&img, 0.0)).unwrap();
        assert_eq!(direct, via);
    }

    #[test]
    fn rotating_a_constant_image_fades_only_the_corners() {
        let img = GrayImage::filled(SIDE, SIDE, 200);
        let out = rotate(&img, 10.0);
        let c = 13.5;
        for y in 0..SIDE {
            for x in 0..SIDE {
                let r = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
                if r <= 12.5 {
                    assert!((out.get(x, y) as i32 - 200).abs() <= 1, "({x},{y})");
                }
            }
        }
        for (x, y) in [(0, 0), (27, 0), (0, 27), (27, 27)] {
            assert!(out.get(x, y) < 150, "corner ({x},{y}) = {}", out.get(x, y));
        }
    }

    #[test]
    fn half_turn_maps_a_point_to_its_mirror() {
        let mut img = GrayImage::filled(SIDE, SIDE, 0);
        img.set(5, 9, 255);
        let out = rotate(&img, 180.0);
        let (mut bx, mut by, mut best) = (0, 0, 0);
        for y in 0..SIDE {
            for x in 0..SIDE {
                if out.get(x, y) > best {
                    (bx, by, best) = (x, y, out.get(x, y));
                }
            }
        }
        assert!((bx as i64 - 22).abs() <= 1 && (by as i64 - 18).abs() <= 1);
    }

    #[test]
    fn normalization() {
        assert!(flatten_normalize(&GrayImage::filled(28, 28, 0)).iter().all(|&v| v == 0.0));
        assert!(flatten_normalize(&GrayImage::filled(28, 28, 255)).iter().all(|&v| v == 1.0));
        let mut img = GrayImage::filled(28, 28, 0);
        img.set(0, 0, 128);
        let v = flatten_normalize(&img);
        assert_eq!(v[0], 128.0 / 255.0);
        assert!(v[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_non_digit_sizes() {
        let img = GrayImage::filled(20, 28, 3);
        assert!(augment_resize_crop(&img, 0).is_err());
        assert!(GrayImage::new(2, 2, vec![0; 3]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn constant_images_stay_constant(v in 0u8..=255, seed in 0u64..10_000) {
            let img = GrayImage::filled(SIDE, SIDE, v);
            prop_assert_eq!(augment_resize_crop(&img, seed).unwrap(), img);
        }

        #[test]
        fn outputs_stay_within_input_range(seed in 0u64..10_000) {
            let img = test_image(seed);
            let lo = *img.pixels().iter().min().unwrap();
            let hi = *img.pixels().iter().max().unwrap();
            let out = augment_resize_crop(&img, seed).unwrap();
            prop_assert!(out.pixels().iter().all(|&p| p >= lo && p <= hi));
            let rot = augment_rotate_resize_crop(&img, seed).unwrap();
            prop_assert_eq!(rot.clone(), augment_rotate_resize_crop(&img, seed).unwrap());
            prop_assert!(flatten_normalize(&rot).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
