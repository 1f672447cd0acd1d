use serde::{Deserialize, Serialize};

use super::{marching_cubes, TriMesh, TsdfVolume};
use crate::deform::PosedSplat;
use crate::error::{Error, Result};
use crate::math::vec::{self, Vec3};
use crate::raster::{render, Camera};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    /// Samples along the longest axis of the volume.
    pub resolution: usize,
    pub views: usize,
    /// Side of the square depth renders, in pixels.
    pub image_size: usize,
    /// Truncation distance in voxels.
    pub truncation_voxels: f64,
    /// Empty voxels kept around the splat bounds on each side.
    pub margin_voxels: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            resolution: 64,
            views: 36,
            image_size: 128,
            truncation_voxels: 3.0,
            margin_voxels: 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExtractReport {
    pub mesh: TriMesh,
    pub volume: TsdfVolume,
    pub cameras: Vec<Camera>,
}

/// `count` square cameras spread evenly over a sphere around `center`
/// (Fibonacci lattice), each fitting a ball of `radius` into its image.
pub fn fibonacci_cameras(center: Vec3, radius: f64, count: usize, size: usize) -> Result<Vec<Camera>> {
    if count == 0 || size == 0 || !(radius > 0.0) {
        return Err(Error::InvalidInput("need at least one view, a positive image size and radius".into()));
    }
    let dist = 2.5 * radius;
    let half_angle = (radius / dist).asin();
    let f = 0.95 * (size as f64 / 2.0) / half_angle.tan();
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let y = 1.0 - (2 * i + 1) as f64 / count as f64;
            let r = (1.0 - y * y).sqrt();
            let a = golden * i as f64;
            let dir = [r * a.sin(), y, r * a.cos()];
            Camera::look_at(vec::add(center, vec::scale(dir, dist)), center, [0.0, 1.0, 0.0], f, f, size, size)
        })
        .collect()
}

/// Meshes posed splats: renders depth and alpha from cameras around them,
/// fuses the views into a TSDF volume and runs marching cubes. Samples
/// never observed in front of a surface are taken as inside, and the outer
/// layer as outside, so the mesh is closed.
pub fn extract_avatar_mesh(splats: &[PosedSplat], cfg: &ExtractConfig) -> Result<ExtractReport> {
    if splats.is_empty() {
        return Err(Error::InvalidInput("no splats to mesh".into()));
    }
    if cfg.resolution < 2 * cfg.margin_voxels + 4 {
        return Err(Error::InvalidInput(format!("resolution {} is too small", cfg.resolution)));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut reach: f64 = 0.0;
    for s in splats {
        for d in 0..3 {
            lo[d] = lo[d].min(s.center[d]);
            hi[d] = hi[d].max(s.center[d]);
        }
        reach = reach.max(3.0 * s.scale[0].max(s.scale[1]));
    }
    let lo = lo.map(|x| x - reach);
    let hi = hi.map(|x| x + reach);
    let extent = (0..3).map(|d| hi[d] - lo[d]).fold(0.0, f64::max);
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(Error::Degenerate("splats have no spatial extent".into()));
    }
    let m = cfg.margin_voxels;
    let h = extent / (cfg.resolution - 1 - 2 * m) as f64;
    let dims: [usize; 3] = std::array::from_fn(|d| ((((hi[d] - lo[d]) / h).ceil() as usize) + 1 + 2 * m).min(cfg.resolution).max(2));
    let center = vec::scale(vec::add(lo, hi), 0.5);
    let origin: Vec3 = std::array::from_fn(|d| center[d] - 0.5 * h * (dims[d] - 1) as f64);
    let mut volume = TsdfVolume::new(origin, h, dims, cfg.truncation_voxels * h)?;
    let radius = 0.5 * h * vec::norm(dims.map(|n| (n - 1) as f64));
    let cameras = fibonacci_cameras(center, radius, cfg.views, cfg.image_size)?;
    for cam in &cameras {
        let out = render(splats, cam)?;
        volume.integrate(cam, &out.depth, &out.alpha)?;
    }
    volume.fill_unobserved(-1.0);
    volume.seal_boundary();
    let mesh = marching_cubes(&volume, 0.0);
    Ok(ExtractReport { mesh, volume, cameras })
}
