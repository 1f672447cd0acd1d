//! Differentiable surfel rasterizer.

mod camera;
mod geom;
mod image;
mod render;

pub use camera::Camera;
pub use geom::{build_geom, intersect, intersect_params, setup_posed, splat_setup, Hit, SplatGeom, SplatParams, PARALLEL_EPS};
pub use image::{linear_to_srgb, load_mask_png, normals_to_rgb, save_float_raw, save_mask_png, srgb_to_linear, RgbImage};
pub use render::{
    backward_params, render, render_backward, render_params, ImageGrads, PosedSplatGrad, RenderOutput, ALPHA_EPS,
    LOWPASS_SIGMA, MIN_TRANSMITTANCE, NEAR_PLANE, RHO_CUTOFF, TILE,
};
