//! Camera model, rigid poses, rasters and point clouds shared by every stage.

mod align;
mod camera;
mod cloud;
mod image;
mod normals;
mod pose;
pub mod spatial;

pub use align::rigid_align;
pub use camera::{backproject_pixel, project_point, Intrinsics};
pub use cloud::{depth_to_cloud, LabeledPointCloud};
pub use image::{ColorImage, DepthImage, Image, LabelImage, NormalImage};
pub(crate) use normals::positions_tree;
pub use normals::{
    estimate_normals, plane_normal, NeighborSearch, Orientation, DEFAULT_NORMAL_NEIGHBORS,
};
pub use pose::{nearest_rotation, transform_point, Direction, RigidPose};

/// Color and depth captured together by one camera.
#[derive(Clone, Debug)]
pub struct RgbdFrame {
    pub color: ColorImage,
    pub depth: DepthImage,
    pub intrinsics: Intrinsics,
}

impl RgbdFrame {
    pub fn new(
        color: ColorImage,
        depth: DepthImage,
        intrinsics: Intrinsics,
    ) -> crate::Result<Self> {
        if !color.same_dims(&depth) || depth.dims() != (intrinsics.width, intrinsics.height) {
            return Err(crate::Error::InvalidInput(
                "RGBD frame rasters must match the intrinsics size".into(),
            ));
        }
        Ok(RgbdFrame {
            color,
            depth,
            intrinsics,
        })
    }
}
