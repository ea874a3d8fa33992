//! Rotation and unit-sphere helpers.

use nalgebra::{Matrix3, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// `[v]ₓ`, so that `[v]ₓ w = v × w`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `R · exp([ω]ₓ)`, renormalized.
pub fn rotate_right(r: &UnitQuaternion<f64>, omega: &Vector3<f64>) -> UnitQuaternion<f64> {
    let mut q = r * UnitQuaternion::from_scaled_axis(*omega);
    q.renormalize();
    q
}

/// Orthonormal basis `(b1, b2)` of the tangent plane at `t`, chosen
/// deterministically from `t`.
pub fn sphere_basis(t: &Unit<Vector3<f64>>) -> (Vector3<f64>, Vector3<f64>) {
    let axis = if t.x.abs() <= t.y.abs() && t.x.abs() <= t.z.abs() {
        Vector3::x()
    } else if t.y.abs() <= t.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let b1 = axis.cross(t).normalize();
    let b2 = t.cross(&b1);
    (b1, b2)
}

/// Moves `t` along the great circle in direction `u0 b1 + u1 b2`.
pub fn sphere_retract(t: &Unit<Vector3<f64>>, u: [f64; 2]) -> Unit<Vector3<f64>> {
    let (b1, b2) = sphere_basis(t);
    let v = b1 * u[0] + b2 * u[1];
    let angle = v.norm();
    if angle == 0.0 {
        return *t;
    }
    Unit::new_normalize(t.as_ref() * angle.cos() + v * (angle.sin() / angle))
}

/// Uniformly distributed rotation (Shoemake's method).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = nalgebra::Quaternion::new(
        b * (tau * u3).cos(),
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
    );
    UnitQuaternion::new_normalize(q)
}

/// Uniformly distributed point on the unit sphere.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Unit<Vector3<f64>> {
    loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-9 {
            return Unit::new_unchecked(v / n);
        }
    }
}

/// Rotation by `angle` about a uniformly random axis.
pub fn random_rotation_with_angle<R: Rng + ?Sized>(rng: &mut R, angle: f64) -> UnitQuaternion<f64> {
    let axis = random_unit_vector(rng);
    UnitQuaternion::from_axis_angle(&axis, angle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hat_is_cross_product() {
        let v = Vector3::new(0.3, -1.2, 2.0);
        let w = Vector3::new(-0.7, 0.1, 0.4);
        assert!((hat(&v) * w - v.cross(&w)).norm() < 1e-15);
    }

    #[test]
    fn basis_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let t = random_unit_vector(&mut rng);
            let (b1, b2) = sphere_basis(&t);
            assert!(b1.dot(&t).abs() < 1e-14 && b2.dot(&t).abs() < 1e-14 && b1.dot(&b2).abs() < 1e-14);
            assert!((b1.norm() - 1.0).abs() < 1e-14 && (b2.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn chained_updates_stay_on_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut r = random_rotation(&mut rng);
        let mut t = random_unit_vector(&mut rng);
        for _ in 0..10_000 {
            let w = Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
            r = rotate_right(&r, &w);
            t = sphere_retract(&t, [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]);
        }
        let m = r.to_rotation_matrix().into_inner();
        assert!((m.transpose() * m - Matrix3::identity()).amax() < 1e-12);
        assert!((m.determinant() - 1.0).abs() < 1e-12);
        assert!((t.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_step_has_unit_speed() {
        let t = Unit::new_normalize(Vector3::new(0.2, 0.5, -0.8));
        let (b1, _) = sphere_basis(&t);
        let h = 1e-7;
        let moved = sphere_retract(&t, [h, 0.0]);
        assert!(((moved.as_ref() - t.as_ref()) / h - b1).norm() < 1e-6);
    }
}
