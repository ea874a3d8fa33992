//! Weak-perspective bundle adjustment with points eliminated by variable
//! projection.

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::EvalError;
use crate::model::{BlockEval, ResidualModel};

use super::so3::{hat, random_rotation_with_angle, rotate_right};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }
}

/// `π(R X + t)` with the fixed depth `x̃`: the first two camera-frame
/// coordinates divided by `x̃`.
pub fn weak_perspective_project(camera: &Camera, x: &Vector3<f64>, depth: f64) -> Vector2<f64> {
    let p = camera.transform(x);
    Vector2::new(p.x / depth, p.y / depth)
}

/// Per-point system `r_i = A_i X + c_i` with `A_i = R_i[0..2, :] / x̃` and
/// `c_i = t_i[0..2] / x̃ − m_i`.
fn point_system(cameras: &[Camera], observations: &[Vector2<f64>], depth: f64) -> Vec<(nalgebra::Matrix2x3<f64>, Vector2<f64>)> {
    cameras
        .iter()
        .zip(observations)
        .map(|(cam, m)| {
            let r = cam.rotation.to_rotation_matrix().into_inner();
            let a = r.fixed_rows::<2>(0) / depth;
            let c = cam.translation.fixed_rows::<2>(0) / depth - m;
            (a.into_owned(), c)
        })
        .collect()
}

/// Solves `X = argmin Σ_i ‖π(R_i X + t_i) − m_i‖²` via its 3×3 normal
/// equations. Fails with [`EvalError::Invalid`] when the normal matrix is
/// rank deficient (fewer than two independent views).
pub fn varpro_point_solve(
    cameras: &[Camera],
    observations: &[Vector2<f64>],
    depth: f64,
    index: usize,
) -> Result<(Vector3<f64>, Matrix3<f64>), EvalError> {
    let sys = point_system(cameras, observations, depth);
    let mut n = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (a, c) in &sys {
        n += a.transpose() * a;
        rhs -= a.transpose() * c;
    }
    let eig = n.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 1e-12 * hi) {
        return Err(EvalError::Invalid {
            index,
            reason: "point is underdetermined by its observations".into(),
        });
    }
    let x = n
        .cholesky()
        .ok_or_else(|| EvalError::Invalid {
            index,
            reason: "point normal matrix is not positive definite".into(),
        })?
        .solve(&rhs);
    Ok((x, n))
}

/// Cameras `1..C` are free; camera 0 is held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct BaParams {
    pub cameras: Vec<Camera>,
}

impl BaParams {
    /// Updates camera `l ≥ 1` by `R ← R exp(ω)`, `t ← t + δt` with
    /// `(ω, δt)` at offset `6(l − 1)`.
    pub fn retract(&self, delta: &[f64]) -> Self {
        let mut cameras = self.cameras.clone();
        for (l, cam) in cameras.iter_mut().enumerate().skip(1) {
            let o = 6 * (l - 1);
            cam.rotation = rotate_right(&cam.rotation, &Vector3::new(delta[o], delta[o + 1], delta[o + 2]));
            cam.translation += Vector3::new(delta[o + 3], delta[o + 4], delta[o + 5]);
        }
        Self { cameras }
    }

    /// Rotates every free camera by `angle` about a random axis and shifts
    /// it by `angle` in a random direction.
    pub fn perturbed<R: Rng + ?Sized>(&self, angle: f64, rng: &mut R) -> Self {
        let mut cameras = self.cameras.clone();
        for cam in cameras.iter_mut().skip(1) {
            cam.rotation *= random_rotation_with_angle(rng, angle);
            cam.translation += super::so3::random_unit_vector(rng).into_inner() * angle;
        }
        Self { cameras }
    }
}

/// Every point observed by every camera.
#[derive(Debug, Clone, PartialEq)]
pub struct BaInstance {
    pub num_cameras: usize,
    /// `observations[j][i]` is point `j` seen by camera `i`.
    pub observations: Vec<Vec<Vector2<f64>>>,
    /// Fixed per-point depths `x̃_j`.
    pub depths: Vec<f64>,
}

impl BaInstance {
    pub fn num_points(&self) -> usize {
        self.observations.len()
    }
}

/// Reprojection residuals over camera parameters only. Block `j·C + i` is
/// the residual of point `j` in camera `i`, with `X_j` re-solved in closed
/// form from the current cameras at every evaluation.
#[derive(Debug, Clone)]
pub struct BaModel {
    instance: BaInstance,
}

impl BaModel {
    pub fn new(instance: BaInstance) -> Self {
        assert!(instance.num_cameras >= 1, "at least one camera is required");
        assert!(instance.depths.iter().all(|&d| d > 0.0), "depths must be positive");
        assert!(
            instance.observations.iter().all(|o| o.len() == instance.num_cameras),
            "every point must be observed by every camera"
        );
        Self { instance }
    }

    pub fn instance(&self) -> &BaInstance {
        &self.instance
    }

    /// Closed-form points for the given cameras.
    pub fn solve_points(&self, params: &BaParams) -> Result<Vec<Vector3<f64>>, EvalError> {
        let c = self.instance.num_cameras;
        (0..self.instance.num_points())
            .map(|j| {
                varpro_point_solve(&params.cameras, &self.instance.observations[j], self.instance.depths[j], j * c)
                    .map(|(x, _)| x)
            })
            .collect()
    }

    /// Total cost with the points held at `points` instead of re-solved.
    pub fn cost_with_points(&self, params: &BaParams, points: &[Vector3<f64>]) -> f64 {
        let inst = &self.instance;
        let mut total = 0.0;
        for (j, x) in points.iter().enumerate() {
            for (i, cam) in params.cameras.iter().enumerate() {
                let r = weak_perspective_project(cam, x, inst.depths[j]) - inst.observations[j][i];
                total += r.norm_squared();
            }
        }
        total
    }

    fn locate(&self, index: usize) -> Result<(usize, usize), EvalError> {
        let c = self.instance.num_cameras;
        let n = c * self.instance.num_points();
        if index >= n {
            return Err(EvalError::OutOfRange { index, len: n });
        }
        Ok((index % c, index / c))
    }

    fn check(&self, params: &BaParams, index: usize) -> Result<(), EvalError> {
        if params.cameras.len() != self.instance.num_cameras {
            return Err(EvalError::Invalid {
                index,
                reason: format!(
                    "{} cameras given, instance has {}",
                    params.cameras.len(),
                    self.instance.num_cameras
                ),
            });
        }
        Ok(())
    }
}

impl ResidualModel for BaModel {
    type Params = BaParams;

    fn num_residuals(&self) -> usize {
        self.instance.num_cameras * self.instance.num_points()
    }

    fn residual_dim(&self) -> usize {
        2
    }

    fn tangent_dim(&self) -> usize {
        6 * (self.instance.num_cameras - 1)
    }

    fn retract(&self, params: &BaParams, delta: &[f64]) -> BaParams {
        params.retract(delta)
    }

    fn residual(&self, index: usize, params: &BaParams, residual: &mut [f64]) -> Result<BlockEval, EvalError> {
        self.check(params, index)?;
        let (i, j) = self.locate(index)?;
        let inst = &self.instance;
        let (x, _) = varpro_point_solve(&params.cameras, &inst.observations[j], inst.depths[j], index)?;
        let r = weak_perspective_project(&params.cameras[i], &x, inst.depths[j]) - inst.observations[j][i];
        residual[..2].copy_from_slice(r.as_slice());
        let cost = r.norm_squared();
        if !cost.is_finite() {
            return Err(EvalError::NonFinite { index });
        }
        Ok(BlockEval::active(cost))
    }

    fn linearize(
        &self,
        index: usize,
        params: &BaParams,
        residual: &mut [f64],
        jacobian: &mut [f64],
    ) -> Result<BlockEval, EvalError> {
        self.check(params, index)?;
        let (i, j) = self.locate(index)?;
        let inst = &self.instance;
        let depth = inst.depths[j];
        let obs = &inst.observations[j];
        let (x, n) = varpro_point_solve(&params.cameras, obs, depth, index)?;
        let sys = point_system(&params.cameras, obs, depth);
        let r_i = sys[i].0 * x + sys[i].1;
        residual[..2].copy_from_slice(r_i.as_slice());
        let cost = r_i.norm_squared();
        if !cost.is_finite() {
            return Err(EvalError::NonFinite { index });
        }

        let n_chol = n.cholesky().expect("checked by the point solve");
        let d = self.tangent_dim();
        jacobian[..2 * d].fill(0.0);
        let unit = [Vector3::x(), Vector3::y(), Vector3::z()];
        for l in 1..inst.num_cameras {
            let rot = params.cameras[l].rotation.to_rotation_matrix().into_inner();
            let (a_l, c_l) = &sys[l];
            let r_l = a_l * x + c_l;
            for k in 0..6 {
                // dA_l and dc_l for this coordinate
                let (da, dc) = if k < 3 {
                    let drot = rot * hat(&unit[k]);
                    ((drot.fixed_rows::<2>(0) / depth).into_owned(), Vector2::zeros())
                } else {
                    (nalgebra::Matrix2x3::zeros(), unit[k - 3].fixed_rows::<2>(0) / depth)
                };
                let dr_l = da * x + dc;
                let dx = -n_chol.solve(&(da.transpose() * r_l + a_l.transpose() * dr_l));
                let mut dr = sys[i].0 * dx;
                if i == l {
                    dr += dr_l;
                }
                let col = 6 * (l - 1) + k;
                jacobian[col] = dr.x;
                jacobian[d + col] = dr.y;
            }
        }
        Ok(BlockEval::active(cost))
    }
}

/// Options for [`generate_ba_instance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaGenerator {
    pub num_cameras: usize,
    pub num_points: usize,
    /// Standard deviation of the observation noise.
    pub noise: f64,
    /// Distance of the point cloud from the cameras.
    pub distance: f64,
    /// Largest camera rotation about the cloud, radians.
    pub max_rotation: f64,
}

impl Default for BaGenerator {
    fn default() -> Self {
        Self {
            num_cameras: 3,
            num_points: 100,
            noise: 1e-3,
            distance: 5.0,
            max_rotation: 0.4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaProblem {
    pub instance: BaInstance,
    pub ground_truth: BaParams,
    pub points: Vec<Vector3<f64>>,
}

/// Points in a unit cube centred `distance` ahead of camera 0 (the identity);
/// the other cameras look at the cube centre from rotated viewpoints. Depths
/// `x̃_j` are the true depths in camera 0 and observations follow the
/// weak-perspective model with those depths.
pub fn generate_ba_instance(seed: u64, options: &BaGenerator) -> BaProblem {
    assert!(options.num_cameras >= 2, "at least two cameras are required");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centre = Vector3::new(0.0, 0.0, options.distance);
    let mut cameras = vec![Camera::identity()];
    for _ in 1..options.num_cameras {
        let angle = rng.random_range(0.3 * options.max_rotation..=options.max_rotation);
        let rotation = random_rotation_with_angle(&mut rng, angle);
        let offset = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.0);
        cameras.push(Camera {
            rotation,
            translation: centre + offset - rotation * centre,
        });
    }
    let points: Vec<Vector3<f64>> = (0..options.num_points)
        .map(|_| centre + Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let depths: Vec<f64> = points.iter().map(|x| x.z).collect();
    let noise = Normal::new(0.0, options.noise).expect("finite noise level");
    let observations = points
        .iter()
        .zip(&depths)
        .map(|(x, &d)| {
            cameras
                .iter()
                .map(|cam| {
                    weak_perspective_project(cam, x, d)
                        + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))
                })
                .collect()
        })
        .collect();
    BaProblem {
        instance: BaInstance {
            num_cameras: options.num_cameras,
            observations,
            depths,
        },
        ground_truth: BaParams { cameras },
        points,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_jacobian, total_cost};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn projection_examples() {
        let p = weak_perspective_project(&Camera::identity(), &Vector3::new(1.0, 2.0, 5.0), 5.0);
        assert_eq!(p, Vector2::new(0.2, 0.4));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cam = Camera {
            rotation: random_rotation_with_angle(&mut rng, 0.3),
            translation: Vector3::new(0.1, -0.2, 4.0),
        };
        let x1 = Vector3::new(0.3, 0.2, 1.0);
        let x2 = Vector3::new(-0.5, 0.7, 0.1);
        let depth = 4.5;
        // affine in X: π(X1 + X2) − π(0) = (π(X1) − π(0)) + (π(X2) − π(0))
        let o = weak_perspective_project(&cam, &Vector3::zeros(), depth);
        let lhs = weak_perspective_project(&cam, &(x1 + x2), depth) - o;
        let rhs = weak_perspective_project(&cam, &x1, depth) - o + weak_perspective_project(&cam, &x2, depth) - o;
        assert!((lhs - rhs).norm() < 1e-15);
        // agrees with perspective when the depth is exact
        let p = cam.transform(&x1);
        let wp = weak_perspective_project(&cam, &x1, p.z);
        assert!((wp - Vector2::new(p.x / p.z, p.y / p.z)).norm() < 1e-15);
    }

    #[test]
    fn point_solve_recovers_exact_points() {
        let prob = generate_ba_instance(2, &BaGenerator { noise: 0.0, ..Default::default() });
        for (j, x) in prob.points.iter().enumerate() {
            let (est, _) = varpro_point_solve(&prob.ground_truth.cameras, &prob.instance.observations[j], prob.instance.depths[j], j).unwrap();
            assert!((est - x).norm() <= 1e-10 * x.norm());
        }
    }

    #[test]
    fn single_camera_is_underdetermined() {
        let err = varpro_point_solve(&[Camera::identity()], &[Vector2::new(0.1, 0.2)], 5.0, 0).unwrap_err();
        assert!(matches!(err, EvalError::Invalid { .. }));
    }

    #[test]
    fn point_solve_matches_stacked_least_squares() {
        let prob = generate_ba_instance(3, &BaGenerator { num_cameras: 5, noise: 1e-2, ..Default::default() });
        let cams = &prob.ground_truth.cameras;
        for j in 0..10 {
            let depth = prob.instance.depths[j];
            let obs = &prob.instance.observations[j];
            let (x, _) = varpro_point_solve(cams, obs, depth, j).unwrap();
            let a = DMatrix::from_fn(2 * cams.len(), 3, |row, col| {
                cams[row / 2].rotation.to_rotation_matrix()[(row % 2, col)] / depth
            });
            let b = DVector::from_fn(2 * cams.len(), |row, _| obs[row / 2][row % 2] - cams[row / 2].translation[row % 2] / depth);
            let dense = a.svd(true, true).solve(&b, 1e-14).unwrap();
            let rel = (DVector::from_column_slice(x.as_slice()) - &dense).norm() / dense.norm();
            assert!(rel <= 1e-10, "point {j}: {rel}");
        }
    }

    #[test]
    fn ground_truth_cost_is_zero_without_noise() {
        let prob = generate_ba_instance(4, &BaGenerator { noise: 0.0, ..Default::default() });
        let m = BaModel::new(prob.instance);
        assert!(total_cost(&m, &prob.ground_truth).unwrap() < 1e-24);
    }

    #[test]
    fn re_solving_points_never_increases_cost() {
        let prob = generate_ba_instance(5, &BaGenerator::default());
        let m = BaModel::new(prob.instance.clone());
        let stale = m.solve_points(&prob.ground_truth).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let moved = prob.ground_truth.perturbed(0.05, &mut rng);
            let fresh = total_cost(&m, &moved).unwrap();
            assert!(fresh <= m.cost_with_points(&moved, &stale) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let prob = generate_ba_instance(7, &BaGenerator { num_cameras: 4, num_points: 30, noise: 1e-2, ..Default::default() });
        let m = BaModel::new(prob.instance);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let at = prob.ground_truth.perturbed(0.05, &mut rng);
        let idx: Vec<usize> = (0..m.num_residuals()).collect();
        let check = check_jacobian(&m, &at, &idx, 1e-6).unwrap();
        assert!(check.max_rel_error <= 1e-5, "{check:?}");
        assert_eq!(m.tangent_dim(), 18);
    }
}
