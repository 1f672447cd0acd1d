use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::vec::{self, Mat3, Vec3};

/// Pinhole camera in the OpenCV convention: +x right, +y down, +z forward.
/// Pixel `(i, j)` has its centre at `(i + 0.5, j + 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRepr", into = "CameraRepr")]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Rotation block of the world→camera transform.
    pub rot: Mat3,
    pub trans: Vec3,
    pub width: usize,
    pub height: usize,
}

#[derive(Serialize, Deserialize)]
struct CameraRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// Row-major 4×4.
    world_to_camera: [[f64; 4]; 4],
    width: usize,
    height: usize,
}

impl TryFrom<CameraRepr> for Camera {
    type Error = Error;
    fn try_from(r: CameraRepr) -> Result<Self> {
        let m = r.world_to_camera;
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidInput("world_to_camera last row must be (0, 0, 0, 1)".into()));
        }
        let cam = Camera {
            fx: r.fx,
            fy: r.fy,
            cx: r.cx,
            cy: r.cy,
            rot: std::array::from_fn(|i| [m[i][0], m[i][1], m[i][2]]),
            trans: [m[0][3], m[1][3], m[2][3]],
            width: r.width,
            height: r.height,
        };
        cam.validate()?;
        Ok(cam)
    }
}

impl From<Camera> for CameraRepr {
    fn from(c: Camera) -> Self {
        CameraRepr {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            world_to_camera: c.world_to_camera(),
            width: c.width,
            height: c.height,
        }
    }
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("image size must be positive".into()));
        }
        let rtr = vec::mat_mul(&vec::transpose(&self.rot), &self.rot);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                if (rtr[i][j] - want).abs() > 1e-5 {
                    return Err(Error::InvalidInput("world_to_camera rotation is not orthonormal".into()));
                }
            }
        }
        if (vec::det(&self.rot) - 1.0).abs() > 1e-5 {
            return Err(Error::InvalidInput("world_to_camera rotation is a reflection".into()));
        }
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .chain(self.rot.iter().flatten())
            .chain(self.trans.iter())
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite("camera parameters".into()));
        }
        Ok(())
    }

    pub fn world_to_camera(&self) -> [[f64; 4]; 4] {
        let r = self.rot;
        let t = self.trans;
        [
            [r[0][0], r[0][1], r[0][2], t[0]],
            [r[1][0], r[1][1], r[1][2], t[1]],
            [r[2][0], r[2][1], r[2][2], t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vec3 {
        vec::scale(vec::mat_t_vec(&self.rot, self.trans), -1.0)
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        vec::add(vec::mat_vec(&self.rot, p), self.trans)
    }

    /// Direction of a world vector in the camera frame.
    pub fn dir_to_camera(&self, d: Vec3) -> Vec3 {
        vec::mat_vec(&self.rot, d)
    }

    pub fn project(&self, pc: Vec3) -> [f64; 2] {
        [self.fx * pc[0] / pc[2] + self.cx, self.fy * pc[1] / pc[2] + self.cy]
    }

    /// Unnormalised camera-frame ray through image point `(x, y)`, with unit z.
    pub fn ray(&self, x: f64, y: f64) -> Vec3 {
        [(x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0]
    }

    /// Camera at `eye` looking at `target`, image "up" along `up` as far as possible.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fx: f64, fy: f64, width: usize, height: usize) -> Result<Self> {
        let z = vec::sub(target, eye);
        if vec::norm(z) < 1e-12 {
            return Err(Error::InvalidInput("camera eye and target coincide".into()));
        }
        let z = vec::normalize(z);
        // image x is forward × up; image y (down) is then z × x
        let x = vec::cross(z, up);
        if vec::norm(x) < 1e-9 {
            return Err(Error::InvalidInput("up vector is parallel to the viewing direction".into()));
        }
        let x = vec::normalize(x);
        let y = vec::cross(z, x);
        let rot = [x, y, z];
        let trans = vec::scale(vec::mat_vec(&rot, eye), -1.0);
        let cam = Camera {
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rot,
            trans,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Cameras on a horizontal circle around `target`, all looking at it.
    pub fn orbit(target: Vec3, radius: f64, height_offset: f64, count: usize, phase: f64, fx: f64, width: usize, height: usize) -> Result<Vec<Self>> {
        (0..count)
            .map(|i| {
                let a = phase + std::f64::consts::TAU * i as f64 / count as f64;
                let eye = [target[0] + radius * a.sin(), target[1] + height_offset, target[2] + radius * a.cos()];
                Camera::look_at(eye, target, [0.0, 1.0, 0.0], fx, fx, width, height)
            })
            .collect()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}
