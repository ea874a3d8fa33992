//! Dense photometric alignment of two images under a homography.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::EvalError;
use crate::model::{BlockEval, ResidualModel};

/// Gray-scale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Bilinear sample with its exact derivative inside the cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub dx: f64,
    pub dy: f64,
    /// Index of the grid cell the point falls in.
    pub cell: u64,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert!(width >= 2 && height >= 2, "images must be at least 2×2");
        assert_eq!(data.len(), width * height, "pixel count does not match the size");
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Bilinear interpolation at `(x, y)`, `None` outside the pixel grid.
    pub fn sample(&self, x: f64, y: f64) -> Option<Sample> {
        if !self.contains(x, y) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width - 2);
        let y0 = (y.floor() as usize).min(self.height - 2);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let v00 = self.get(x0, y0);
        let v10 = self.get(x0 + 1, y0);
        let v01 = self.get(x0, y0 + 1);
        let v11 = self.get(x0 + 1, y0 + 1);
        let top = (1.0 - fx) * v00 + fx * v10;
        let bottom = (1.0 - fx) * v01 + fx * v11;
        Some(Sample {
            value: (1.0 - fy) * top + fy * bottom,
            dx: (1.0 - fy) * (v10 - v00) + fy * (v11 - v01),
            dy: bottom - top,
            cell: (y0 * self.width + x0) as u64,
        })
    }

    /// Sample with coordinates clamped to the grid.
    pub fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        self.sample(x, y).expect("clamped point is inside").value
    }

    /// Central-difference gradients on the grid, one-sided at the border.
    pub fn gradient(&self) -> (Image, Image) {
        let (w, h) = (self.width, self.height);
        let gx = Image::from_fn(w, h, |x, y| {
            let (a, b) = (x.saturating_sub(1), (x + 1).min(w - 1));
            (self.get(b, y) - self.get(a, y)) / (b - a) as f64
        });
        let gy = Image::from_fn(w, h, |x, y| {
            let (a, b) = (y.saturating_sub(1), (y + 1).min(h - 1));
            (self.get(x, b) - self.get(x, a)) / (b - a) as f64
        });
        (gx, gy)
    }

    /// Separable Gaussian blur, borders clamped.
    pub fn gaussian_blur(&self, sigma: f64) -> Image {
        let radius = (3.0 * sigma).ceil() as isize;
        let mut kernel: Vec<f64> = (-radius..=radius)
            .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let sum: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|v| *v /= sum);
        let (w, h) = (self.width as isize, self.height as isize);
        let conv = |img: &Image, horizontal: bool| {
            Image::from_fn(img.width, img.height, |x, y| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(k, c)| {
                        let o = k as isize - radius;
                        let (sx, sy) = if horizontal {
                            ((x as isize + o).clamp(0, w - 1), y as isize)
                        } else {
                            (x as isize, (y as isize + o).clamp(0, h - 1))
                        };
                        c * img.get(sx as usize, sy as usize)
                    })
                    .sum()
            })
        };
        conv(&conv(self, true), false)
    }
}

/// Homography with `h₃₃ = 1` acting on normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct HomographyParams {
    pub matrix: Matrix3<f64>,
}

impl HomographyParams {
    pub fn identity() -> Self {
        Self { matrix: Matrix3::identity() }
    }

    /// Row-major entries `h₁₁ … h₃₂`.
    pub fn from_vector(v: [f64; 8]) -> Self {
        Self {
            matrix: Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], 1.0),
        }
    }

    pub fn to_vector(&self) -> [f64; 8] {
        let m = &self.matrix;
        [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)]]
    }

    pub fn is_valid(&self) -> bool {
        self.matrix.iter().all(|v| v.is_finite()) && self.matrix.determinant().abs() > 1e-12
    }

    /// `H · (I + Σ Δ_k E_k)` rescaled to `h₃₃ = 1`, where `E_k` selects the
    /// `k`-th free entry.
    pub fn compose(&self, delta: &[f64]) -> Self {
        let mut g = Matrix3::identity();
        for (k, &v) in delta.iter().enumerate().take(8) {
            g[(k / 3, k % 3)] += v;
        }
        let m = self.matrix * g;
        Self { matrix: m / m[(2, 2)] }
    }

    /// Applies the homography to a normalized point.
    pub fn apply(&self, u: [f64; 2]) -> [f64; 2] {
        let p = self.matrix * Vector3::new(u[0], u[1], 1.0);
        [p.x / p.z, p.y / p.z]
    }

    pub fn inverse(&self) -> Option<Self> {
        let inv = self.matrix.try_inverse()?;
        Some(Self { matrix: inv / inv[(2, 2)] })
    }

    /// Random homography near the identity: a similarity with rotation and
    /// translation of order `magnitude`, plus affine and projective terms of
    /// a tenth of it.
    pub fn random_near_identity<R: Rng + ?Sized>(magnitude: f64, rng: &mut R) -> Self {
        let mut v = |s: f64| rng.random_range(-s..=s) * magnitude;
        let angle = v(1.0);
        let scale = 1.0 + v(0.5);
        let (tx, ty) = (v(1.0), v(1.0));
        let (a, b) = (v(0.1), v(0.1));
        let (p, q) = (v(0.1), v(0.1));
        let (c, s) = (angle.cos() * scale, angle.sin() * scale);
        Self::from_vector([c + a, -s, tx, s, c + b, ty, p, q])
    }
}

/// How residual Jacobians are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    /// Average of the source-image gradient and the warped target-image
    /// gradient (both from central differences), chained through the warp.
    Esm,
    /// Exact derivative of the bilinearly interpolated target image.
    Exact,
}

/// Pixel-to-normalized coordinate frame `u = (x − c) / s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub cx: f64,
    pub cy: f64,
    pub scale: f64,
}

impl Frame {
    pub fn for_image(width: usize, height: usize) -> Self {
        Self {
            cx: (width - 1) as f64 / 2.0,
            cy: (height - 1) as f64 / 2.0,
            scale: width.max(height) as f64 / 2.0,
        }
    }

    pub fn normalize(&self, x: [f64; 2]) -> [f64; 2] {
        [(x[0] - self.cx) / self.scale, (x[1] - self.cy) / self.scale]
    }

    pub fn to_pixel(&self, u: [f64; 2]) -> [f64; 2] {
        [u[0] * self.scale + self.cx, u[1] * self.scale + self.cy]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub source: Image,
    pub target: Image,
}

struct SamplePoint {
    pixel: [f64; 2],
    u: [f64; 2],
    intensity: f64,
    grad: [f64; 2],
}

/// Residuals `r(x) = I₁(x) − I₂(w(x; H))` over a grid of source pixels.
pub struct HomographyModel {
    target: Image,
    target_gx: Image,
    target_gy: Image,
    frame: Frame,
    points: Vec<SamplePoint>,
    mode: JacobianMode,
}

impl HomographyModel {
    /// Samples every `stride`-th pixel of the source at least `margin` pixels
    /// away from the border.
    pub fn new(pair: &ImagePair, margin: usize, stride: usize, mode: JacobianMode) -> Self {
        assert_eq!(
            (pair.source.width(), pair.source.height()),
            (pair.target.width(), pair.target.height()),
            "images must have the same size"
        );
        assert!(stride >= 1, "stride must be positive");
        let (w, h) = (pair.source.width(), pair.source.height());
        let frame = Frame::for_image(w, h);
        let (sgx, sgy) = pair.source.gradient();
        let (target_gx, target_gy) = pair.target.gradient();
        let mut points = Vec::new();
        for y in (margin..h.saturating_sub(margin)).step_by(stride) {
            for x in (margin..w.saturating_sub(margin)).step_by(stride) {
                let pixel = [x as f64, y as f64];
                points.push(SamplePoint {
                    pixel,
                    u: frame.normalize(pixel),
                    intensity: pair.source.get(x, y),
                    grad: [sgx.get(x, y), sgy.get(x, y)],
                });
            }
        }
        Self {
            target: pair.target.clone(),
            target_gx,
            target_gy,
            frame,
            points,
            mode,
        }
    }

    pub fn with_mode(mut self, mode: JacobianMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    /// Source pixel of residual `index`.
    pub fn pixel(&self, index: usize) -> [f64; 2] {
        self.points[index].pixel
    }

    fn point(&self, index: usize) -> Result<&SamplePoint, EvalError> {
        self.points.get(index).ok_or(EvalError::OutOfRange {
            index,
            len: self.points.len(),
        })
    }

    /// Warped pixel in the target and the homogeneous point `H ũ`.
    fn warp(&self, params: &HomographyParams, u: [f64; 2]) -> ([f64; 2], Vector3<f64>) {
        let p = params.matrix * Vector3::new(u[0], u[1], 1.0);
        (self.frame.to_pixel([p.x / p.z, p.y / p.z]), p)
    }
}

impl ResidualModel for HomographyModel {
    type Params = HomographyParams;

    fn num_residuals(&self) -> usize {
        self.points.len()
    }

    fn residual_dim(&self) -> usize {
        1
    }

    fn tangent_dim(&self) -> usize {
        8
    }

    fn retract(&self, params: &HomographyParams, delta: &[f64]) -> HomographyParams {
        params.compose(delta)
    }

    fn residual(&self, index: usize, params: &HomographyParams, residual: &mut [f64]) -> Result<BlockEval, EvalError> {
        let pt = self.point(index)?;
        let (y, _) = self.warp(params, pt.u);
        match self.target.sample(y[0], y[1]) {
            Some(s) => {
                let r = pt.intensity - s.value;
                residual[0] = r;
                Ok(BlockEval::active(r * r))
            }
            None => {
                residual[0] = 0.0;
                Ok(BlockEval::excluded())
            }
        }
    }

    fn linearize(
        &self,
        index: usize,
        params: &HomographyParams,
        residual: &mut [f64],
        jacobian: &mut [f64],
    ) -> Result<BlockEval, EvalError> {
        let pt = self.point(index)?;
        let (y, p) = self.warp(params, pt.u);
        let Some(s) = self.target.sample(y[0], y[1]) else {
            residual[0] = 0.0;
            jacobian[..8].fill(0.0);
            return Ok(BlockEval::excluded());
        };
        let r = pt.intensity - s.value;
        residual[0] = r;

        // M = scale · Dπ(p) · H, so that ∂y/∂Δ_k = ũ_col · M[:, row]
        let (w0, w1) = (p.x / p.z, p.y / p.z);
        let sc = self.frame.scale / p.z;
        let h = &params.matrix;
        let mut m = [[0.0; 3]; 2];
        for c in 0..3 {
            m[0][c] = sc * (h[(0, c)] - w0 * h[(2, c)]);
            m[1][c] = sc * (h[(1, c)] - w1 * h[(2, c)]);
        }
        let ut = [pt.u[0], pt.u[1], 1.0];
        let g2 = match self.mode {
            JacobianMode::Exact => [s.dx, s.dy],
            JacobianMode::Esm => [
                self.target_gx.sample(y[0], y[1]).map_or(0.0, |v| v.value),
                self.target_gy.sample(y[0], y[1]).map_or(0.0, |v| v.value),
            ],
        };
        for (k, jk) in jacobian.iter_mut().enumerate().take(8) {
            let (row, col) = (k / 3, k % 3);
            let dy = [ut[col] * m[0][row], ut[col] * m[1][row]];
            let target_term = g2[0] * dy[0] + g2[1] * dy[1];
            *jk = match self.mode {
                JacobianMode::Exact => -target_term,
                JacobianMode::Esm => {
                    // derivative of π((I + Δ_k E_k) ũ) in normalized source coordinates
                    let e_row = [(row == 0) as u8 as f64, (row == 1) as u8 as f64, (row == 2) as u8 as f64];
                    let jg = [
                        ut[col] * (e_row[0] - pt.u[0] * e_row[2]),
                        ut[col] * (e_row[1] - pt.u[1] * e_row[2]),
                    ];
                    let source_term = self.frame.scale * (pt.grad[0] * jg[0] + pt.grad[1] * jg[1]);
                    -0.5 * (source_term + target_term)
                }
            };
        }
        Ok(BlockEval::active(r * r))
    }

    fn smooth_piece(&self, index: usize, params: &HomographyParams) -> u64 {
        let Ok(pt) = self.point(index) else { return u64::MAX };
        let (y, _) = self.warp(params, pt.u);
        self.target.sample(y[0], y[1]).map_or(u64::MAX, |s| s.cell)
    }
}

/// Options for [`generate_homography_instance`].
#[derive(Debug, Clone, PartialEq)]
pub struct HomographyGenerator {
    pub width: usize,
    pub height: usize,
    /// Standard deviation of the additive intensity noise on the target.
    pub noise: f64,
    /// Standard deviation of the Gaussian smoothing of the texture, pixels.
    pub texture_sigma: f64,
}

impl Default for HomographyGenerator {
    fn default() -> Self {
        Self {
            width: 96,
            height: 96,
            noise: 0.0,
            texture_sigma: 2.0,
        }
    }
}

/// Smoothed uniform noise rescaled to `[0, 1]`.
pub fn random_texture<R: Rng + ?Sized>(width: usize, height: usize, sigma: f64, rng: &mut R) -> Image {
    let data = (0..width * height).map(|_| rng.random::<f64>()).collect();
    let blurred = Image::new(width, height, data).gaussian_blur(sigma);
    let (lo, hi) = blurred
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    Image::new(width, height, blurred.data().iter().map(|v| (v - lo) / span).collect())
}

/// Rounds coordinates within `1e-9` of a grid point onto it.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// `I₂(y) = I₁(w⁻¹(y)) + noise`, so that `I₂(w(x)) ≈ I₁(x)`. Points mapped
/// outside the source use clamped coordinates; intensities are clipped to
/// `[0, 1]`.
pub fn warp_image(source: &Image, truth: &HomographyParams) -> Image {
    let frame = Frame::for_image(source.width(), source.height());
    let inv = truth.inverse().expect("ground-truth homography is invertible");
    Image::from_fn(source.width(), source.height(), |x, y| {
        let u = frame.normalize([x as f64, y as f64]);
        let q = frame.to_pixel(inv.apply(u));
        source.sample_clamped(snap(q[0]), snap(q[1]))
    })
}

pub fn generate_homography_instance(seed: u64, truth: &HomographyParams, options: &HomographyGenerator) -> ImagePair {
    assert!(truth.is_valid(), "ground-truth homography must be invertible");
    assert!(options.width >= 16 && options.height >= 16, "images must be at least 16×16");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = random_texture(options.width, options.height, options.texture_sigma, &mut rng);
    let mut target = warp_image(&source, truth);
    if options.noise > 0.0 {
        let normal = Normal::new(0.0, options.noise).expect("finite noise level");
        let noisy = target
            .data()
            .iter()
            .map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
            .collect();
        target = Image::new(options.width, options.height, noisy);
    }
    ImagePair { source, target }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_jacobian, total_cost};

    fn ramp(w: usize) -> Image {
        Image::from_fn(w, w, |x, _| x as f64 / w as f64)
    }

    #[test]
    fn bilinear_reproduces_grid_and_linear_functions() {
        let img = Image::from_fn(8, 6, |x, y| 0.3 * x as f64 - 0.2 * y as f64 + 1.0);
        let s = img.sample(2.25, 3.5).unwrap();
        assert!((s.value - (0.3 * 2.25 - 0.7 + 1.0)).abs() < 1e-15);
        assert!((s.dx - 0.3).abs() < 1e-15 && (s.dy + 0.2).abs() < 1e-15);
        assert_eq!(img.sample(7.0, 5.0).unwrap().value, img.get(7, 5));
        assert!(img.sample(7.01, 0.0).is_none() && img.sample(-0.01, 0.0).is_none());
    }

    #[test]
    fn identical_images_give_zero_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = random_texture(32, 32, 2.0, &mut rng);
        let pair = ImagePair { source: img.clone(), target: img };
        let m = HomographyModel::new(&pair, 2, 1, JacobianMode::Esm);
        assert_eq!(total_cost(&m, &HomographyParams::identity()).unwrap(), 0.0);
    }

    #[test]
    fn translation_on_a_ramp() {
        let w = 40;
        let pair = ImagePair { source: ramp(w), target: ramp(w) };
        let frame = Frame::for_image(w, w);
        let shift_px = 1.5;
        let h = HomographyParams::from_vector([1.0, 0.0, shift_px / frame.scale, 0.0, 1.0, 0.0, 0.0, 0.0]);
        for mode in [JacobianMode::Esm, JacobianMode::Exact] {
            let m = HomographyModel::new(&pair, 4, 3, mode);
            let mut r = [0.0];
            let mut j = [0.0; 8];
            let mut first: Option<[f64; 8]> = None;
            for i in 0..m.num_residuals() {
                assert!(m.linearize(i, &h, &mut r, &mut j).unwrap().active);
                assert!((r[0].abs() - shift_px / w as f64).abs() < 1e-12);
                // J_k for translation entry is −(1/W)·scale
                assert!((j[2] + frame.scale / w as f64).abs() < 1e-12, "{j:?}");
                if mode == JacobianMode::Esm {
                    // constant on the ramp for the translation-only columns
                    let f = *first.get_or_insert(j);
                    assert!((f[2] - j[2]).abs() < 1e-12 && (f[5] - j[5]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn out_of_bounds_points_are_excluded() {
        let pair = ImagePair { source: ramp(20), target: ramp(20) };
        let m = HomographyModel::new(&pair, 0, 1, JacobianMode::Esm);
        let far = HomographyParams::from_vector([1.0, 0.0, 0.5, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let mut r = [0.0];
        let active = (0..m.num_residuals())
            .filter(|&i| m.residual(i, &far, &mut r).unwrap().active)
            .count();
        assert!(active > 0 && active < m.num_residuals());
    }

    #[test]
    fn exact_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth = HomographyParams::random_near_identity(0.05, &mut rng);
        let pair = generate_homography_instance(3, &truth, &HomographyGenerator { width: 48, height: 48, ..Default::default() });
        let m = HomographyModel::new(&pair, 6, 1, JacobianMode::Exact);
        let at = HomographyParams::random_near_identity(0.03, &mut rng);
        let idx: Vec<usize> = (0..m.num_residuals()).step_by(m.num_residuals() / 100).take(100).collect();
        let check = check_jacobian(&m, &at, &idx, 1e-7).unwrap();
        assert!(check.max_rel_error <= 1e-5, "{check:?}");
        assert!(check.compared > check.skipped);
    }

    #[test]
    fn identity_without_noise_reproduces_source() {
        let pair = generate_homography_instance(5, &HomographyParams::identity(), &HomographyGenerator::default());
        assert_eq!(pair.source, pair.target);
    }

    #[test]
    fn texture_gradients_are_bounded_and_generation_is_deterministic() {
        let g = HomographyGenerator { noise: 0.01, ..Default::default() };
        let h = HomographyParams::from_vector([1.0, 0.02, 0.03, -0.02, 1.0, 0.0, 0.01, 0.0]);
        let a = generate_homography_instance(11, &h, &g);
        let b = generate_homography_instance(11, &h, &g);
        assert_eq!(a, b);
        let (gx, gy) = a.source.gradient();
        let max = gx.data().iter().chain(gy.data()).fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max > 0.0 && max < 0.5, "max gradient {max}");
    }

    #[test]
    fn compose_keeps_normalization() {
        let h = HomographyParams::from_vector([1.1, 0.1, 0.2, -0.1, 0.9, 0.05, 0.02, -0.01]);
        let c = h.compose(&[0.01, -0.02, 0.03, 0.0, 0.01, 0.0, 0.005, 0.002]);
        assert_eq!(c.matrix[(2, 2)], 1.0);
        assert_eq!(h.compose(&[0.0; 8]), h);
        let inv = h.inverse().unwrap();
        let u = [0.3, -0.2];
        let back = inv.apply(h.apply(u));
        assert!((back[0] - u[0]).abs() < 1e-14 && (back[1] - u[1]).abs() < 1e-14);
    }
}
