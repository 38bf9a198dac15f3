//! SIFT keypoint detection: Gaussian scale space, difference-of-Gaussian
//! pyramid, 26-neighbour extrema, quadratic subpixel refinement, and the
//! contrast / edge-response filters.
//!
//! Only keypoint locations and scales are produced. There is no orientation
//! assignment and no descriptor.
//!
//! Coordinates use pixel-index units (pixel `i` has its center at `i`). Octaves
//! are built by half-pixel-aligned 2x downsampling, so octave coordinate `u`
//! maps back to base coordinate `(u + 0.5) * 2^o - 0.5`.

use std::cmp::Ordering;

use crate::image::{gaussian_blur, resize_bilinear, GrayImage};

/// Smallest dimension an octave may have after downsampling.
pub const MIN_OCTAVE_DIM: usize = 16;
/// Refinement steps before an unconverged site is dropped.
pub const MAX_REFINE_STEPS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SiftParams {
    /// Upper bound on octaves; the image size may allow fewer.
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub base_sigma: f64,
    pub assumed_input_blur: f64,
    pub contrast_threshold: f64,
    pub edge_ratio: f64,
    pub upsample_first_octave: bool,
}

impl Default for SiftParams {
    fn default() -> Self {
        SiftParams {
            octaves: 4,
            scales_per_octave: 3,
            base_sigma: 1.6,
            assumed_input_blur: 0.5,
            contrast_threshold: 0.03,
            edge_ratio: 10.0,
            upsample_first_octave: false,
        }
    }
}

impl SiftParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.scales_per_octave < 1 {
            return Err("scales_per_octave must be at least 1".into());
        }
        if !(self.base_sigma > self.assumed_input_blur) || self.assumed_input_blur < 0.0 {
            return Err(format!(
                "base_sigma ({}) must exceed assumed_input_blur ({})",
                self.base_sigma, self.assumed_input_blur
            ));
        }
        if !(self.contrast_threshold > 0.0) {
            return Err("contrast_threshold must be positive".into());
        }
        if !(self.edge_ratio > 1.0) {
            return Err("edge_ratio must exceed 1".into());
        }
        Ok(())
    }

    /// Octave-relative sigma of Gaussian level `i`.
    pub fn level_sigma(&self, i: usize) -> f64 {
        self.base_sigma * 2f64.powf(i as f64 / self.scales_per_octave as f64)
    }

    /// Number of octaves that fit an image of the given size. An octave is
    /// kept only while its 2x-downsampled successor would still be at least
    /// [`MIN_OCTAVE_DIM`] pixels on its short side.
    pub fn octave_count(&self, width: usize, height: usize) -> usize {
        let mut dim = width.min(height);
        if self.upsample_first_octave {
            dim *= 2;
        }
        let mut n = 0;
        while n < self.octaves && dim.div_ceil(2) >= MIN_OCTAVE_DIM {
            n += 1;
            dim = dim.div_ceil(2);
        }
        n
    }

    /// Exponent `e` such that octave `o` has pixel pitch `2^e` in base units.
    fn octave_exponent(&self, o: usize) -> i32 {
        o as i32 - i32::from(self.upsample_first_octave)
    }
}

#[derive(Debug, Clone)]
pub struct Octave {
    /// Power of two mapping this octave's pixels to base pixels (-1 when the
    /// first octave is upsampled).
    pub exponent: i32,
    pub levels: Vec<GrayImage>,
    /// Octave-relative blur of each level.
    pub sigmas: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ScaleSpace {
    pub base_width: usize,
    pub base_height: usize,
    pub octaves: Vec<Octave>,
}

#[derive(Debug, Clone)]
pub struct DogOctave {
    pub exponent: i32,
    pub levels: Vec<GrayImage>,
}

#[derive(Debug, Clone)]
pub struct DogPyramid {
    pub base_width: usize,
    pub base_height: usize,
    pub octaves: Vec<DogOctave>,
}

/// Integer location of a strict 26-neighbour extremum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExtremumSite {
    pub octave: usize,
    pub level: usize,
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    /// Subpixel position in base-image pixels.
    pub x: f64,
    pub y: f64,
    /// Blur scale in base-image pixels.
    pub sigma: f64,
    /// Octave exponent (see [`Octave::exponent`]).
    pub octave: i32,
    /// DoG level the refinement converged on.
    pub level: usize,
    /// Interpolated DoG value at the extremum.
    pub response: f64,
}

pub fn build_scale_space(img: &GrayImage, params: &SiftParams) -> ScaleSpace {
    let s = params.scales_per_octave;
    let n_levels = s + 3;
    let sigmas: Vec<f64> = (0..n_levels).map(|i| params.level_sigma(i)).collect();
    let n_oct = params.octave_count(img.width(), img.height());
    let mut octaves: Vec<Octave> = Vec::with_capacity(n_oct);

    for o in 0..n_oct {
        let seed = if o == 0 {
            let (base, input_blur) = if params.upsample_first_octave {
                let up = resize_bilinear(img, img.width() * 2, img.height() * 2)
                    .expect("non-empty image");
                (up, params.assumed_input_blur * 2.0)
            } else {
                (img.clone(), params.assumed_input_blur)
            };
            let inc = (sigmas[0].powi(2) - input_blur.powi(2)).sqrt();
            blur(&base, inc)
        } else {
            let prev = &octaves[o - 1].levels[s];
            resize_bilinear(prev, prev.width().div_ceil(2), prev.height().div_ceil(2))
                .expect("non-empty image")
        };

        let mut levels = Vec::with_capacity(n_levels);
        levels.push(seed);
        for i in 1..n_levels {
            let inc = (sigmas[i].powi(2) - sigmas[i - 1].powi(2)).sqrt();
            let next = blur(&levels[i - 1], inc);
            levels.push(next);
        }
        octaves.push(Octave {
            exponent: params.octave_exponent(o),
            levels,
            sigmas: sigmas.clone(),
        });
    }

    ScaleSpace {
        base_width: img.width(),
        base_height: img.height(),
        octaves,
    }
}

fn blur(img: &GrayImage, sigma: f64) -> GrayImage {
    gaussian_blur(img, sigma).expect("scale increments are positive")
}

pub fn build_dog(ss: &ScaleSpace) -> DogPyramid {
    let octaves = ss
        .octaves
        .iter()
        .map(|oct| DogOctave {
            exponent: oct.exponent,
            levels: oct
                .levels
                .windows(2)
                .map(|pair| subtract(&pair[1], &pair[0]))
                .collect(),
        })
        .collect();
    DogPyramid {
        base_width: ss.base_width,
        base_height: ss.base_height,
        octaves,
    }
}

fn subtract(a: &GrayImage, b: &GrayImage) -> GrayImage {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    GrayImage::from_vec(a.width(), a.height(), data).expect("matching dimensions")
}

/// Strict extrema against all 26 neighbours. Border pixels and the first and
/// last DoG level of each octave are never tested.
pub fn detect_extrema(dog: &DogPyramid) -> Vec<ExtremumSite> {
    let mut sites = Vec::new();
    for (o, oct) in dog.octaves.iter().enumerate() {
        let n = oct.levels.len();
        if n < 3 {
            continue;
        }
        let (w, h) = (oct.levels[0].width(), oct.levels[0].height());
        if w < 3 || h < 3 {
            continue;
        }
        for level in 1..n - 1 {
            let (below, cur, above) = (&oct.levels[level - 1], &oct.levels[level], &oct.levels[level + 1]);
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let v = cur.get(x, y);
                    if is_strict_extremum(v, x, y, [below, cur, above]) {
                        sites.push(ExtremumSite { octave: o, level, x, y });
                    }
                }
            }
        }
    }
    sites
}

fn is_strict_extremum(v: f32, x: usize, y: usize, stack: [&GrayImage; 3]) -> bool {
    let mut is_max = true;
    let mut is_min = true;
    for (k, img) in stack.iter().enumerate() {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if k == 1 && xx == x && yy == y {
                    continue;
                }
                let u = img.get(xx, yy);
                is_max &= v > u;
                is_min &= v < u;
                if !is_max && !is_min {
                    return false;
                }
            }
        }
    }
    is_max || is_min
}

/// Finite-difference derivatives of the DoG stack at an integer site.
#[derive(Debug, Clone, Copy)]
pub struct LocalFit {
    pub value: f64,
    /// d/dx, d/dy, d/ds
    pub gradient: [f64; 3],
    pub hessian: [[f64; 3]; 3],
}

impl LocalFit {
    pub fn at(oct: &DogOctave, level: usize, x: usize, y: usize) -> Self {
        let d = |l: usize, dx: isize, dy: isize| -> f64 {
            oct.levels[l].get((x as isize + dx) as usize, (y as isize + dy) as usize) as f64
        };
        let v = d(level, 0, 0);
        let dx = 0.5 * (d(level, 1, 0) - d(level, -1, 0));
        let dy = 0.5 * (d(level, 0, 1) - d(level, 0, -1));
        let ds = 0.5 * (d(level + 1, 0, 0) - d(level - 1, 0, 0));
        let dxx = d(level, 1, 0) + d(level, -1, 0) - 2.0 * v;
        let dyy = d(level, 0, 1) + d(level, 0, -1) - 2.0 * v;
        let dss = d(level + 1, 0, 0) + d(level - 1, 0, 0) - 2.0 * v;
        let dxy = 0.25 * (d(level, 1, 1) - d(level, -1, 1) - d(level, 1, -1) + d(level, -1, -1));
        let dxs = 0.25
            * (d(level + 1, 1, 0) - d(level + 1, -1, 0) - d(level - 1, 1, 0) + d(level - 1, -1, 0));
        let dys = 0.25
            * (d(level + 1, 0, 1) - d(level + 1, 0, -1) - d(level - 1, 0, 1) + d(level - 1, 0, -1));
        LocalFit {
            value: v,
            gradient: [dx, dy, ds],
            hessian: [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]],
        }
    }

    /// Offset `-H^{-1} g` of the quadratic's stationary point, or `None` when
    /// the Hessian is singular.
    pub fn offset(&self) -> Option<[f64; 3]> {
        let g = self.gradient;
        solve3(&self.hessian, &[-g[0], -g[1], -g[2]])
    }

    /// Spatial Hessian `(trace, det)`.
    pub fn spatial_trace_det(&self) -> (f64, f64) {
        let h = &self.hessian;
        (h[0][0] + h[1][1], h[0][0] * h[1][1] - h[0][1] * h[0][1])
    }
}

/// Edge-response test on the spatial Hessian: keep iff `det > 0` and
/// `trace^2 / det < (r + 1)^2 / r`.
pub fn passes_edge_test(trace: f64, det: f64, edge_ratio: f64) -> bool {
    det > 0.0 && trace * trace / det < (edge_ratio + 1.0).powi(2) / edge_ratio
}

fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if !d.is_finite() || d.abs() <= 1e-12 * scale.powi(3) || scale == 0.0 {
        return None;
    }
    // Cramer's rule
    let mut out = [0.0; 3];
    for (col, slot) in out.iter_mut().enumerate() {
        let mut m = *a;
        for row in 0..3 {
            m[row][col] = b[row];
        }
        *slot = det(&m) / d;
    }
    Some(out)
}

pub fn refine_and_filter(sites: &[ExtremumSite], dog: &DogPyramid, params: &SiftParams) -> Vec<Keypoint> {
    sites
        .iter()
        .filter_map(|site| refine_site(site, dog, params))
        .collect()
}

fn refine_site(site: &ExtremumSite, dog: &DogPyramid, params: &SiftParams) -> Option<Keypoint> {
    let oct = &dog.octaves[site.octave];
    let s = params.scales_per_octave;
    let (w, h) = (oct.levels[0].width(), oct.levels[0].height());
    let n_levels = oct.levels.len();
    let (mut x, mut y, mut level) = (site.x, site.y, site.level);

    let mut converged = None;
    for _ in 0..MAX_REFINE_STEPS {
        let fit = LocalFit::at(oct, level, x, y);
        let off = fit.offset()?;
        if off.iter().all(|c| c.abs() <= 0.5) {
            converged = Some((fit, off));
            break;
        }
        if off.iter().any(|c| c.abs() > (w.max(h) as f64)) {
            return None;
        }
        let nx = x as f64 + off[0].round();
        let ny = y as f64 + off[1].round();
        let nl = level as f64 + off[2].round();
        if nx < 1.0 || ny < 1.0 || nl < 1.0 || nx > (w - 2) as f64 || ny > (h - 2) as f64 || nl > (n_levels - 2) as f64 {
            return None;
        }
        (x, y, level) = (nx as usize, ny as usize, nl as usize);
    }
    let (fit, off) = converged?;

    let g = fit.gradient;
    let response = fit.value + 0.5 * (g[0] * off[0] + g[1] * off[1] + g[2] * off[2]);
    if response.abs() < params.contrast_threshold {
        return None;
    }
    let (tr, det) = fit.spatial_trace_det();
    if !passes_edge_test(tr, det, params.edge_ratio) {
        return None;
    }

    let pitch = 2f64.powi(oct.exponent);
    let bx = (x as f64 + off[0] + 0.5) * pitch - 0.5;
    let by = (y as f64 + off[1] + 0.5) * pitch - 0.5;
    if !(bx >= 0.0 && by >= 0.0 && bx < dog.base_width as f64 && by < dog.base_height as f64) {
        return None;
    }
    let sigma = params.base_sigma * 2f64.powf((level as f64 + off[2]) / s as f64) * pitch;
    Some(Keypoint {
        x: bx,
        y: by,
        sigma,
        octave: oct.exponent,
        level,
        response,
    })
}

/// Full detector. Output is sorted by `(y, x, sigma)`.
pub fn detect_keypoints(img: &GrayImage, params: &SiftParams) -> Vec<Keypoint> {
    let ss = build_scale_space(img, params);
    let dog = build_dog(&ss);
    let sites = detect_extrema(&dog);
    let mut kps = refine_and_filter(&sites, &dog, params);
    kps.sort_by(keypoint_order);
    kps
}

pub fn keypoint_order(a: &Keypoint, b: &Keypoint) -> Ordering {
    a.y.total_cmp(&b.y)
        .then(a.x.total_cmp(&b.x))
        .then(a.sigma.total_cmp(&b.sigma))
}

/// Tab-separated `x y sigma response`, one keypoint per line.
pub fn keypoints_to_tsv(kps: &[Keypoint]) -> String {
    let mut out = String::new();
    for k in kps {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", k.x, k.y, k.sigma, k.response));
    }
    out
}
