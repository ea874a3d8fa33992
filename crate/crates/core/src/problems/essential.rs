//! Essential-matrix refinement with the Sampson error.

use nalgebra::{Matrix3, Unit, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::EvalError;
use crate::model::{BlockEval, ResidualModel};

use super::so3::{hat, random_rotation, random_rotation_with_angle, random_unit_vector, rotate_right, sphere_basis, sphere_retract};

/// Denominators below this make a pair's residual invalid.
pub const SAMPSON_MIN_DENOMINATOR: f64 = 1e-15;

/// A pair of calibrated image points `(x₁, x₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub x1: [f64; 2],
    pub x2: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
    /// Ground-truth inlier flags, when known.
    pub inliers: Option<Vec<bool>>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Relative pose `(R, t)` with `‖t‖ = 1`; `E = [t]ₓ R`.
#[derive(Debug, Clone, PartialEq)]
pub struct EssentialParams {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Unit<Vector3<f64>>,
}

impl EssentialParams {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation: Unit::new_normalize(translation),
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        hat(&self.translation) * self.rotation.to_rotation_matrix().into_inner()
    }

    /// Uniform random rotation and translation direction.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            rotation: random_rotation(rng),
            translation: random_unit_vector(rng),
        }
    }

    /// Applies a 5-dim update `(ω, u)`.
    pub fn retract(&self, delta: &[f64]) -> Self {
        Self {
            rotation: rotate_right(&self.rotation, &Vector3::new(delta[0], delta[1], delta[2])),
            translation: sphere_retract(&self.translation, [delta[3], delta[4]]),
        }
    }

    /// Random perturbation: rotation by `angle` about a random axis and a
    /// translation move by `angle` in a random tangent direction.
    pub fn perturbed<R: Rng + ?Sized>(&self, angle: f64, rng: &mut R) -> Self {
        let rotation = self.rotation * random_rotation_with_angle(rng, angle);
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        Self {
            rotation,
            translation: sphere_retract(&self.translation, [angle * phi.cos(), angle * phi.sin()]),
        }
    }
}

fn homogeneous(x: [f64; 2]) -> Vector3<f64> {
    Vector3::new(x[0], x[1], 1.0)
}

/// Sampson residual `x₂ᵀEx₁ / √((Ex₁)₁² + (Ex₁)₂² + (Eᵀx₂)₁² + (Eᵀx₂)₂²)`
/// for homogeneous points, or `None` when the denominator is degenerate.
pub fn sampson_residual(e: &Matrix3<f64>, x1: &Vector3<f64>, x2: &Vector3<f64>) -> Option<f64> {
    let a = e * x1;
    let b = e.transpose() * x2;
    let den = (a.x * a.x + a.y * a.y + b.x * b.x + b.y * b.y).sqrt();
    (den >= SAMPSON_MIN_DENOMINATOR).then(|| x2.dot(&a) / den)
}

/// Sampson residuals of a correspondence set as a function of `(R, t)`.
#[derive(Debug, Clone)]
pub struct EssentialModel {
    pairs: Vec<Correspondence>,
}

impl EssentialModel {
    pub fn new(set: &CorrespondenceSet) -> Self {
        Self { pairs: set.pairs.clone() }
    }

    pub fn from_pairs(pairs: Vec<Correspondence>) -> Self {
        Self { pairs }
    }

    pub fn pairs(&self) -> &[Correspondence] {
        &self.pairs
    }

    fn pair(&self, index: usize) -> Result<&Correspondence, EvalError> {
        self.pairs.get(index).ok_or(EvalError::OutOfRange {
            index,
            len: self.pairs.len(),
        })
    }
}

impl ResidualModel for EssentialModel {
    type Params = EssentialParams;

    fn num_residuals(&self) -> usize {
        self.pairs.len()
    }

    fn residual_dim(&self) -> usize {
        1
    }

    fn tangent_dim(&self) -> usize {
        5
    }

    fn retract(&self, params: &EssentialParams, delta: &[f64]) -> EssentialParams {
        params.retract(delta)
    }

    fn residual(&self, index: usize, params: &EssentialParams, residual: &mut [f64]) -> Result<BlockEval, EvalError> {
        let p = self.pair(index)?;
        match sampson_residual(&params.matrix(), &homogeneous(p.x1), &homogeneous(p.x2)) {
            Some(r) if r.is_finite() => {
                residual[0] = r;
                Ok(BlockEval::active(r * r))
            }
            Some(_) => Err(EvalError::NonFinite { index }),
            None => {
                residual[0] = 0.0;
                Ok(BlockEval::excluded())
            }
        }
    }

    fn linearize(
        &self,
        index: usize,
        params: &EssentialParams,
        residual: &mut [f64],
        jacobian: &mut [f64],
    ) -> Result<BlockEval, EvalError> {
        let p = self.pair(index)?;
        let (x1, x2) = (homogeneous(p.x1), homogeneous(p.x2));
        let rot = params.rotation.to_rotation_matrix().into_inner();
        let tx = hat(&params.translation);
        let e = tx * rot;
        let a = e * x1;
        let b = e.transpose() * x2;
        let den = (a.x * a.x + a.y * a.y + b.x * b.x + b.y * b.y).sqrt();
        if !(den >= SAMPSON_MIN_DENOMINATOR) {
            residual[0] = 0.0;
            jacobian[..5].fill(0.0);
            return Ok(BlockEval::excluded());
        }
        let num = x2.dot(&a);
        let r = num / den;
        if !r.is_finite() {
            return Err(EvalError::NonFinite { index });
        }
        residual[0] = r;

        let (b1, b2) = sphere_basis(&params.translation);
        let unit = [Vector3::x(), Vector3::y(), Vector3::z()];
        for k in 0..5 {
            let de = if k < 3 {
                tx * rot * hat(&unit[k])
            } else {
                hat(if k == 3 { &b1 } else { &b2 }) * rot
            };
            let da = de * x1;
            let db = de.transpose() * x2;
            let dnum = x2.dot(&da);
            let dden = (a.x * da.x + a.y * da.y + b.x * db.x + b.y * db.y) / den;
            jacobian[k] = dnum / den - num * dden / (den * den);
        }
        Ok(BlockEval::active(r * r))
    }
}

/// Synthetic two-view instance with known pose.
#[derive(Debug, Clone)]
pub struct EssentialInstance {
    pub correspondences: CorrespondenceSet,
    pub ground_truth: EssentialParams,
    pub noise: f64,
}

/// Options for [`generate_essential_instance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialGenerator {
    pub num_points: usize,
    /// Standard deviation of the Gaussian noise on the second view's
    /// normalized coordinates.
    pub noise: f64,
    pub outlier_fraction: f64,
    /// Largest relative rotation angle in radians.
    pub max_rotation: f64,
}

impl Default for EssentialGenerator {
    fn default() -> Self {
        Self {
            num_points: 2000,
            noise: 5e-4,
            outlier_fraction: 0.0,
            max_rotation: 0.5,
        }
    }
}

/// Points in the box `[−1, 1]² × [3, 6]` of the first camera, seen by a
/// second camera at `(R, t)` with a random rotation of at most
/// `max_rotation` and a uniformly random unit translation. Exactly
/// `round(outlier_fraction · N)` pairs get a uniformly random second point.
pub fn generate_essential_instance(seed: u64, options: &EssentialGenerator) -> EssentialInstance {
    let n = options.num_points;
    assert!(n >= 8, "at least 8 correspondences are required, got {n}");
    assert!(options.noise >= 0.0, "noise must be non-negative");
    assert!(
        (0.0..1.0).contains(&options.outlier_fraction),
        "outlier fraction must be in [0, 1)"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = rng.random_range(0.0..=options.max_rotation);
    let rotation = random_rotation_with_angle(&mut rng, angle);
    let translation = random_unit_vector(&mut rng);
    let rot = rotation.to_rotation_matrix();
    let noise = Normal::new(0.0, options.noise).expect("finite noise level");

    let mut pairs = Vec::with_capacity(n);
    while pairs.len() < n {
        let x = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(3.0..6.0),
        );
        let y = rot * x + translation.as_ref();
        if y.z < 0.5 {
            continue;
        }
        let x1 = [x.x / x.z, x.y / x.z];
        let x2 = [y.x / y.z + noise.sample(&mut rng), y.y / y.z + noise.sample(&mut rng)];
        pairs.push(Correspondence { x1, x2 });
    }

    let outliers = (options.outlier_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut inliers = vec![true; n];
    for &i in &order[..outliers] {
        inliers[i] = false;
        pairs[i].x2 = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
    }

    EssentialInstance {
        correspondences: CorrespondenceSet {
            pairs,
            inliers: Some(inliers),
        },
        ground_truth: EssentialParams { rotation, translation },
        noise: options.noise,
    }
}
