//! File formats: PLY clouds, 16-bit PNG images, pose/intrinsics text files,
//! and the scene directory layout.

mod ply;
mod png16;
mod scene;

pub use ply::{load_ply, save_ply};
pub use png16::{depth_from_u16, depth_to_u16, load_png16, load_png16_or_8, save_png16};
pub use scene::{
    frame_stems, instances_to_range_json, load_depth_png, load_instances_txt, load_intrinsics,
    load_pose_txt, load_scene, save_depth_png, save_instances_txt, save_intrinsics, save_pose_txt,
    SceneData, ScenePaths,
};
