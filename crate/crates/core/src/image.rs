//! Raster containers, decoding, and the Gaussian/bilinear kernels shared by
//! the keypoint detector and the patch embedder.
//!
//! All pixel values are `f32` in `[0, 1]`, stored row-major. RGB data is
//! interleaved (`r, g, b, r, g, b, ...`).

use std::cell::Cell;
use std::fs;
use std::io::{self, Read};
use std::path::Path;

use thiserror::Error;

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("decode error at byte {offset}: {reason}")]
    Decode { offset: usize, reason: String },
    #[error("invalid parameter: {0}")]
    Param(String),
}

impl ImageError {
    fn decode(offset: usize, reason: impl Into<String>) -> Self {
        ImageError::Decode {
            offset,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Wraps a row-major buffer. Values are not clamped; callers that need the
    /// `[0, 1]` invariant should use [`GrayImage::from_fn`] or clamp first.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::Param(format!(
                "buffer of {} values does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel lookup with clamp-to-border replication.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xc, yc)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Rotates by 90 degrees clockwise. Pixel `(x, y)` moves to `(h - 1 - y, x)`.
    pub fn rotate90(&self) -> GrayImage {
        let (w, h) = (self.width, self.height);
        let mut out = GrayImage::new(h, w);
        for y in 0..h {
            for x in 0..w {
                out.set(h - 1 - y, x, self.get(x, y));
            }
        }
        out
    }

    /// Quantizes to 8 bits, rounding to nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if data.len() != 3 * width * height {
            return Err(ImageError::Param(format!(
                "buffer of {} values does not match 3x{width}x{height}",
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    /// Replicates a gray raster into all three channels.
    pub fn from_gray(gray: &GrayImage) -> Self {
        let data = gray.data.iter().flat_map(|&v| [v, v, v]).collect();
        RgbImage {
            width: gray.width,
            height: gray.height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Per-channel mean over the whole image.
    pub fn channel_mean(&self) -> [f32; 3] {
        let mut acc = [0.0f64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                acc[c] += px[c] as f64;
            }
        }
        let n = (self.width * self.height).max(1) as f64;
        acc.map(|s| (s / n) as f32)
    }

    fn channel(&self, c: usize) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().skip(c).step_by(3).copied().collect(),
        }
    }

    fn from_channels(channels: [GrayImage; 3]) -> Self {
        let (w, h) = (channels[0].width, channels[0].height);
        let mut data = Vec::with_capacity(3 * w * h);
        for i in 0..w * h {
            for ch in &channels {
                data.push(ch.data[i]);
            }
        }
        RgbImage {
            width: w,
            height: h,
            data,
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }
}

#[inline]
fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads a PNG or binary PPM (P6) file, sniffing the format from its magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage, ImageError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<RgbImage, ImageError> {
    const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";
    if bytes.starts_with(PNG_MAGIC) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else {
        Err(ImageError::decode(0, "unsupported format (expected PNG or P6 PPM)"))
    }
}

/// Binary PPM (P6) with maxval up to 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, ImageError> {
    let mut cur = PnmCursor { bytes, pos: 0 };
    if !bytes.starts_with(b"P6") {
        return Err(ImageError::decode(0, "missing P6 magic"));
    }
    cur.pos = 2;
    let width = cur.header_int()?;
    let height = cur.header_int()?;
    let maxval = cur.header_int()?;
    if width == 0 || height == 0 {
        return Err(ImageError::decode(cur.pos, "zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::decode(
            cur.pos,
            format!("unsupported maxval {maxval} (8-bit only)"),
        ));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(ImageError::decode(cur.pos, "expected whitespace after maxval")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| ImageError::decode(cur.pos, "dimension overflow"))?;
    let body = &bytes[cur.pos..];
    if body.len() < need {
        return Err(ImageError::decode(
            bytes.len(),
            format!("truncated body: {} of {need} bytes", body.len()),
        ));
    }
    let scale = maxval as f32;
    let data = body[..need].iter().map(|&b| b as f32 / scale).collect();
    RgbImage::from_vec(width, height, data)
}

struct PnmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PnmCursor<'_> {
    fn skip_ws_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn header_int(&mut self) -> Result<usize, ImageError> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::decode(start, "expected a header integer"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::decode(start, "header integer out of range"))
    }
}

/// Tracks how many bytes the PNG decoder has pulled, so failures can report
/// an offset.
struct CountingReader<'a> {
    inner: &'a [u8],
    pos: &'a Cell<usize>,
}

impl CountingReader<'_> {
    fn advance(&self, n: usize) {
        self.pos.set((self.pos.get() + n).min(self.inner.len()));
    }
}

impl Read for CountingReader<'_> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let p = self.pos.get();
        let n = buf.len().min(self.inner.len() - p);
        buf[..n].copy_from_slice(&self.inner[p..p + n]);
        self.advance(n);
        Ok(n)
    }
}

impl io::BufRead for CountingReader<'_> {
    fn fill_buf(&mut self) -> io::Result<&[u8]> {
        Ok(&self.inner[self.pos.get()..])
    }

    fn consume(&mut self, amt: usize) {
        self.advance(amt);
    }
}

impl io::Seek for CountingReader<'_> {
    fn seek(&mut self, pos: io::SeekFrom) -> io::Result<u64> {
        let next = match pos {
            io::SeekFrom::Start(p) => p as i64,
            io::SeekFrom::Current(d) => self.pos.get() as i64 + d,
            io::SeekFrom::End(d) => self.inner.len() as i64 + d,
        };
        if next < 0 {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "negative seek"));
        }
        self.pos.set((next as usize).min(self.inner.len()));
        Ok(self.pos.get() as u64)
    }
}

/// 8-bit PNG in gray, gray+alpha, RGB, RGBA, or palette form. Alpha is dropped.
pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, ImageError> {
    let consumed = Cell::new(0);
    let fail = |e: png::DecodingError| ImageError::decode(consumed.get(), e.to_string());
    let mut decoder = png::Decoder::new(CountingReader {
        inner: bytes,
        pos: &consumed,
    });
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(fail)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::decode(consumed.get(), "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(fail)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(ImageError::decode(consumed.get(), "palette was not expanded"));
        }
    };
    let mut data = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * channels];
        for px in row.chunks_exact(channels) {
            let rgb = if channels < 3 {
                [px[0]; 3]
            } else {
                [px[0], px[1], px[2]]
            };
            data.extend(rgb.iter().map(|&b| b as f32 / 255.0));
        }
    }
    RgbImage::from_vec(w, h, data)
}

pub fn encode_png_rgb(img: &RgbImage) -> Vec<u8> {
    encode_png(img.width, img.height, png::ColorType::Rgb, &img.to_u8())
}

pub fn encode_png_gray(img: &GrayImage) -> Vec<u8> {
    encode_png(img.width, img.height, png::ColorType::Grayscale, &img.to_u8())
}

fn encode_png(width: usize, height: usize, color: png::ColorType, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer
            .write_image_data(pixels)
            .expect("in-memory PNG body");
    }
    out
}

/// Binary PPM (P6, maxval 255).
pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_u8());
    out
}

/// Binary PGM (P5, maxval 255).
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_u8());
    out
}

pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let [wr, wg, wb] = LUMA_WEIGHTS;
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| (wr * p[0] + wg * p[1] + wb * p[2]).clamp(0.0, 1.0))
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Normalized 1-D Gaussian taps of radius `ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f32>, ImageError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(ImageError::Param(format!("sigma must be positive, got {sigma}")));
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    Ok(taps.iter().map(|t| (t / total) as f32).collect())
}

/// Separable Gaussian blur with clamp-to-border replication.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage, ImageError> {
    let kernel = gaussian_kernel(sigma)?;
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (img.width, img.height);
    if w == 0 || h == 0 {
        return Ok(img.clone());
    }

    let mut tmp = GrayImage::new(w, h);
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0f32;
            for (k, &wt) in kernel.iter().enumerate() {
                let sx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += wt * row[sx];
            }
            tmp.data[y * w + x] = acc;
        }
    }

    let mut out = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for (k, &wt) in kernel.iter().enumerate() {
                let sy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                acc += wt * tmp.data[sy * w + x];
            }
            out.data[y * w + x] = acc;
        }
    }
    Ok(out)
}

/// Bilinear resampling with half-pixel center alignment: output pixel `i`
/// samples source coordinate `(i + 0.5) * src / dst - 0.5`, clamped to the
/// image.
pub fn resize_bilinear(img: &GrayImage, new_w: usize, new_h: usize) -> Result<GrayImage, ImageError> {
    if new_w == 0 || new_h == 0 {
        return Err(ImageError::Param(format!(
            "target dimensions must be positive, got {new_w}x{new_h}"
        )));
    }
    if img.width == 0 || img.height == 0 {
        return Err(ImageError::Param("cannot resize an empty image".into()));
    }
    if new_w == img.width && new_h == img.height {
        return Ok(img.clone());
    }
    let xs = axis_taps(img.width, new_w);
    let ys = axis_taps(img.height, new_h);
    let mut out = GrayImage::new(new_w, new_h);
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
            let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
            out.set(ox, oy, top * (1.0 - fy) + bottom * fy);
        }
    }
    Ok(out)
}

fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, (s - i0 as f64) as f32)
        })
        .collect()
}

pub fn resize_rgb(img: &RgbImage, new_w: usize, new_h: usize) -> Result<RgbImage, ImageError> {
    let channels = [
        resize_bilinear(&img.channel(0), new_w, new_h)?,
        resize_bilinear(&img.channel(1), new_w, new_h)?,
        resize_bilinear(&img.channel(2), new_w, new_h)?,
    ];
    Ok(RgbImage::from_channels(channels))
}

/// Center-crops to the target aspect ratio, then resizes to `width x height`.
pub fn fit_to_resolution(img: &RgbImage, width: usize, height: usize) -> Result<RgbImage, ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::Param("target resolution must be positive".into()));
    }
    if img.width == width && img.height == height {
        return Ok(img.clone());
    }
    // largest crop with aspect width:height
    let (sw, sh) = (img.width, img.height);
    let (cw, ch) = if sw * height > sh * width {
        ((sh * width / height).max(1), sh)
    } else {
        (sw, (sw * height / width).max(1))
    };
    let (x0, y0) = ((sw - cw) / 2, (sh - ch) / 2);
    let mut cropped = RgbImage::new(cw, ch);
    for y in 0..ch {
        for x in 0..cw {
            cropped.set_pixel(x, y, img.pixel(x0 + x, y0 + y));
        }
    }
    resize_rgb(&cropped, width, height)
}
