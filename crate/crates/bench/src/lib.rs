//! Shared fixtures for the benchmarks.

use problm::problems::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture<M: problm::ResidualModel> {
    pub model: M,
    pub start: M::Params,
}

/// Noisy two-view instance of `n` correspondences, started 0.1 rad from the
/// true pose.
pub fn essential(n: usize, seed: u64) -> Fixture<EssentialModel> {
    let opts = EssentialGenerator {
        num_points: n,
        ..Default::default()
    };
    let inst = generate_essential_instance(seed, &opts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    Fixture {
        model: EssentialModel::new(&inst.correspondences),
        start: inst.ground_truth.perturbed(0.1, &mut rng),
    }
}

/// Square image pair related by a small random warp, started at the identity.
pub fn homography(size: usize, seed: u64) -> Fixture<HomographyModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = HomographyParams::random_near_identity(0.05, &mut rng);
    let opts = HomographyGenerator {
        width: size,
        height: size,
        ..Default::default()
    };
    let pair = generate_homography_instance(seed, &truth, &opts);
    Fixture {
        model: HomographyModel::new(&pair, 4, 1, JacobianMode::Esm),
        start: HomographyParams::identity(),
    }
}

/// Weak-perspective BA with `cameras` views of `points` points, cameras
/// perturbed by 0.05.
pub fn bundle_adjustment(cameras: usize, points: usize, seed: u64) -> Fixture<BaModel> {
    let opts = BaGenerator {
        num_cameras: cameras,
        num_points: points,
        ..Default::default()
    };
    let prob = generate_ba_instance(seed, &opts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    Fixture {
        start: prob.ground_truth.perturbed(0.05, &mut rng),
        model: BaModel::new(prob.instance),
    }
}
