//! Residual models and synthetic instance generators.

pub mod ba;
pub mod essential;
pub mod homography;
pub mod so3;

pub use ba::{generate_ba_instance, varpro_point_solve, weak_perspective_project, BaGenerator, BaInstance, BaModel, BaParams, BaProblem, Camera};
pub use essential::{
    generate_essential_instance, sampson_residual, Correspondence, CorrespondenceSet, EssentialGenerator, EssentialInstance,
    EssentialModel, EssentialParams,
};
pub use homography::{
    generate_homography_instance, random_texture, Frame, HomographyGenerator, HomographyModel, HomographyParams, Image, ImagePair,
    JacobianMode,
};
