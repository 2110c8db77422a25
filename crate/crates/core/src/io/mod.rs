//! Readers and writers for everything that crosses the disk boundary.

mod config;
mod ply;
mod raster;
mod sfm;

pub use config::{RegistrationMethod, RunConfig};
pub use ply::{
    decode_ply, encode_ply, label_color, read_labeled_ply, write_labeled_ply, PlyData, PlyFormat,
    BACKGROUND_COLOR, LABEL_PALETTE,
};
pub use raster::{
    read_color_image, read_depth_image, read_label_image, read_normal_image, write_color_image,
    write_depth_image, write_label_image, write_normal_image, MAX_DEPTH_M,
};
pub use sfm::{
    parse_sfm_cameras, parse_sfm_images, parse_sfm_points3d, read_sfm_model, write_sfm_cameras,
    write_sfm_images, write_sfm_model, write_sfm_points3d, SfmModel, SfmView,
};
