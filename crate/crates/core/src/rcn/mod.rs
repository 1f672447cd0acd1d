//! Rotation compensation network.
//!
//! For every splat the network predicts a unit quaternion that is composed
//! on top of the skinned rotation. A local branch sees the splat's
//! embedding `(u, v, d, f_k, q)` where `f_k` is a learned per-triangle
//! feature; a global branch sees the full pose vector. Both feed a small
//! decoder whose last layer starts at zero, so an untrained network outputs
//! the identity.

mod io;

pub use io::{load_rcn, save_rcn, RCN_FORMAT_VERSION};

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::Quat;
use crate::splat::SplatEmbedding;

pub const EMBED_DIM: usize = 256;
pub const THETA_DIM: usize = 72;
pub const GEO_IN: usize = 3 + EMBED_DIM + 4;
pub const GEO_HIDDEN: usize = 256;
pub const GEO_OUT: usize = 128;
pub const POSE_HIDDEN: usize = 128;
pub const POSE_OUT: usize = 64;
pub const DEC_HIDDEN: usize = 128;

/// Affine layer `y = W x + b` with `W` stored output-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    /// Uniform `±1/sqrt(fan_in)` for weights and biases.
    fn random(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (fan_in as f64).sqrt();
        Dense {
            w: Array2::from_shape_simple_fn((fan_out, fan_in), || rng.gen_range(-k..k)),
            b: Array1::from_shape_simple_fn(fan_out, || rng.gen_range(-k..k)),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            w: Array2::zeros((fan_out, fan_in)),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.w.nrows()
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Accumulates parameter gradients into `g` and returns the input gradient.
    fn backward(&self, x: &Array2<f64>, gy: &Array2<f64>, g: &mut Dense) -> Array2<f64> {
        g.w += &gy.t().dot(x);
        g.b += &gy.sum_axis(Axis(0));
        gy.dot(&self.w)
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s + x * s * (1.0 - s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RcnParams {
    /// One feature row per mesh face.
    pub tri_embed: Array2<f64>,
    pub geo1: Dense,
    pub geo2: Dense,
    pub pose1: Dense,
    pub pose2: Dense,
    pub dec1: Dense,
    pub dec2: Dense,
}

/// Tensor names in storage order.
pub const TENSOR_NAMES: [&str; 13] = [
    "tri_embed", "geo1.w", "geo1.b", "geo2.w", "geo2.b", "pose1.w", "pose1.b", "pose2.w", "pose2.b", "dec1.w", "dec1.b",
    "dec2.w", "dec2.b",
];

impl RcnParams {
    pub fn new(face_count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // unit variance
        let e = 3f64.sqrt();
        let tri_embed = Array2::from_shape_simple_fn((face_count, EMBED_DIM), || rng.gen_range(-e..e));
        RcnParams {
            tri_embed,
            geo1: Dense::random(GEO_IN, GEO_HIDDEN, &mut rng),
            geo2: Dense::random(GEO_HIDDEN, GEO_OUT, &mut rng),
            pose1: Dense::random(THETA_DIM, POSE_HIDDEN, &mut rng),
            pose2: Dense::random(POSE_HIDDEN, POSE_OUT, &mut rng),
            dec1: Dense::random(GEO_OUT + POSE_OUT, DEC_HIDDEN, &mut rng),
            dec2: Dense::zeros(DEC_HIDDEN, 4),
        }
        .rounded()
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        RcnParams {
            tri_embed: Array2::zeros(self.tri_embed.raw_dim()),
            geo1: Dense::zeros(GEO_IN, GEO_HIDDEN),
            geo2: Dense::zeros(GEO_HIDDEN, GEO_OUT),
            pose1: Dense::zeros(THETA_DIM, POSE_HIDDEN),
            pose2: Dense::zeros(POSE_HIDDEN, POSE_OUT),
            dec1: Dense::zeros(GEO_OUT + POSE_OUT, DEC_HIDDEN),
            dec2: Dense::zeros(DEC_HIDDEN, 4),
        }
    }

    /// Every value rounded to the nearest `f32`, the precision they are
    /// stored at.
    pub fn rounded(mut self) -> Self {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x = *x as f32 as f64;
            }
        }
        self
    }

    pub fn face_count(&self) -> usize {
        self.tri_embed.nrows()
    }

    /// Tensor shapes in storage order.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let d = |l: &Dense| [vec![l.fan_out(), l.fan_in()], vec![l.fan_out()]];
        let mut out = vec![vec![self.face_count(), EMBED_DIM]];
        for l in [&self.geo1, &self.geo2, &self.pose1, &self.pose2, &self.dec1, &self.dec2] {
            out.extend(d(l));
        }
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.tri_embed.as_slice().expect("standard layout")];
        for l in [&self.geo1, &self.geo2, &self.pose1, &self.pose2, &self.dec1, &self.dec2] {
            out.push(l.w.as_slice().expect("standard layout"));
            out.push(l.b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.tri_embed.as_slice_mut().expect("standard layout")];
        for l in [
            &mut self.geo1,
            &mut self.geo2,
            &mut self.pose1,
            &mut self.pose2,
            &mut self.dec1,
            &mut self.dec2,
        ] {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn value_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let want = RcnParams::zeros_like(self).shapes();
        if self.shapes() != want {
            return Err(Error::Dimension("RCN tensor shapes".into()));
        }
        if self.tensors().iter().any(|t| t.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("RCN parameters".into()));
        }
        Ok(())
    }
}

/// Per-splat network input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RcnInput {
    pub face: u32,
    pub u: f64,
    pub v: f64,
    pub d: f64,
    pub q: [f64; 4],
}

impl From<&SplatEmbedding> for RcnInput {
    fn from(e: &SplatEmbedding) -> Self {
        RcnInput {
            face: e.face,
            u: e.u,
            v: e.v,
            d: e.d,
            q: e.rot.to_array(),
        }
    }
}

/// Activations kept from the forward pass.
#[derive(Clone, Debug)]
pub struct RcnCache {
    faces: Vec<u32>,
    x_geo: Array2<f64>,
    geo_pre1: Array2<f64>,
    geo_h1: Array2<f64>,
    geo_pre2: Array2<f64>,
    x_pose: Array2<f64>,
    pose_pre1: Array2<f64>,
    pose_h1: Array2<f64>,
    pose_pre2: Array2<f64>,
    x_dec: Array2<f64>,
    dec_pre1: Array2<f64>,
    dec_h1: Array2<f64>,
    /// Decoder output plus the identity, before normalisation.
    shifted: Array2<f64>,
}

fn act(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(silu)
}

/// Theta padded with zeros (or checked) to [`THETA_DIM`] entries.
pub fn pad_theta(theta: &[f64]) -> Result<Vec<f64>> {
    if theta.len() > THETA_DIM {
        return Err(Error::Dimension(format!("pose vector has {} entries, at most {THETA_DIM}", theta.len())));
    }
    let mut t = theta.to_vec();
    t.resize(THETA_DIM, 0.0);
    Ok(t)
}

/// Compensation quaternions for a batch of splats under pose `theta`
/// (axis-angle, at most 72 entries, zero-padded).
pub fn rcn_forward(params: &RcnParams, inputs: &[RcnInput], theta: &[f64]) -> Result<(Vec<Quat>, RcnCache)> {
    let n = inputs.len();
    let theta = pad_theta(theta)?;
    let fc = params.face_count();
    let mut x_geo = Array2::zeros((n, GEO_IN));
    for (i, inp) in inputs.iter().enumerate() {
        if inp.face as usize >= fc {
            return Err(Error::InvalidInput(format!("face {} outside the {fc}-row embedding table", inp.face)));
        }
        let mut row = x_geo.row_mut(i);
        row[0] = inp.u;
        row[1] = inp.v;
        row[2] = inp.d;
        row.slice_mut(s![3..3 + EMBED_DIM]).assign(&params.tri_embed.row(inp.face as usize));
        for k in 0..4 {
            row[3 + EMBED_DIM + k] = inp.q[k];
        }
    }
    let geo_pre1 = params.geo1.forward(&x_geo);
    let geo_h1 = act(&geo_pre1);
    let geo_pre2 = params.geo2.forward(&geo_h1);

    let x_pose = Array2::from_shape_vec((1, THETA_DIM), theta).expect("shape");
    let pose_pre1 = params.pose1.forward(&x_pose);
    let pose_h1 = act(&pose_pre1);
    let pose_pre2 = params.pose2.forward(&pose_h1);

    let mut x_dec = Array2::zeros((n, GEO_OUT + POSE_OUT));
    x_dec.slice_mut(s![.., ..GEO_OUT]).assign(&act(&geo_pre2));
    x_dec
        .slice_mut(s![.., GEO_OUT..])
        .assign(&act(&pose_pre2).broadcast((n, POSE_OUT)).expect("broadcast"));
    let dec_pre1 = params.dec1.forward(&x_dec);
    let dec_h1 = act(&dec_pre1);
    let mut shifted = params.dec2.forward(&dec_h1);
    shifted.column_mut(0).mapv_inplace(|x| x + 1.0);

    let mut out = Vec::with_capacity(n);
    for (i, row) in shifted.rows().into_iter().enumerate() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::NonFinite(format!("compensation of splat {i}")));
        }
        out.push(Quat::new(row[0] / norm, row[1] / norm, row[2] / norm, row[3] / norm));
    }
    let cache = RcnCache {
        faces: inputs.iter().map(|i| i.face).collect(),
        x_geo,
        geo_pre1,
        geo_h1,
        geo_pre2,
        x_pose,
        pose_pre1,
        pose_h1,
        pose_pre2,
        x_dec,
        dec_pre1,
        dec_h1,
        shifted,
    };
    Ok((out, cache))
}

/// Parameter gradients plus gradients with respect to each splat's
/// `(u, v, d, qw, qx, qy, qz)` input.
#[derive(Clone, Debug)]
pub struct RcnGrads {
    pub params: RcnParams,
    pub inputs: Vec<[f64; 7]>,
}

pub fn rcn_backward(params: &RcnParams, cache: &RcnCache, upstream: &[[f64; 4]]) -> Result<RcnGrads> {
    let n = cache.faces.len();
    if upstream.len() != n {
        return Err(Error::Dimension(format!("{} upstream gradients for {n} outputs", upstream.len())));
    }
    let mut g = params.zeros_like();
    // through q = r / |r|
    let mut g_shift = Array2::zeros((n, 4));
    for i in 0..n {
        let r = cache.shifted.row(i);
        let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        let y: Vec<f64> = r.iter().map(|x| x / norm).collect();
        let dot: f64 = (0..4).map(|k| y[k] * upstream[i][k]).sum();
        for k in 0..4 {
            g_shift[[i, k]] = (upstream[i][k] - y[k] * dot) / norm;
        }
    }
    let g_dec_h1 = params.dec2.backward(&cache.dec_h1, &g_shift, &mut g.dec2);
    let g_dec_pre1 = g_dec_h1 * cache.dec_pre1.mapv(silu_grad);
    let g_x_dec = params.dec1.backward(&cache.x_dec, &g_dec_pre1, &mut g.dec1);

    let g_geo_pre2 = g_x_dec.slice(s![.., ..GEO_OUT]).to_owned() * cache.geo_pre2.mapv(silu_grad);
    let g_pose_feat = g_x_dec.slice(s![.., GEO_OUT..]).sum_axis(Axis(0)).insert_axis(Axis(0));
    let g_pose_pre2 = g_pose_feat * cache.pose_pre2.mapv(silu_grad);
    let g_pose_h1 = params.pose2.backward(&cache.pose_h1, &g_pose_pre2, &mut g.pose2);
    let g_pose_pre1 = g_pose_h1 * cache.pose_pre1.mapv(silu_grad);
    params.pose1.backward(&cache.x_pose, &g_pose_pre1, &mut g.pose1);

    let g_geo_h1 = params.geo2.backward(&cache.geo_h1, &g_geo_pre2, &mut g.geo2);
    let g_geo_pre1 = g_geo_h1 * cache.geo_pre1.mapv(silu_grad);
    let g_x_geo = params.geo1.backward(&cache.x_geo, &g_geo_pre1, &mut g.geo1);

    let mut inputs = Vec::with_capacity(n);
    for (i, &f) in cache.faces.iter().enumerate() {
        let row = g_x_geo.row(i);
        let mut e = g.tri_embed.row_mut(f as usize);
        e += &row.slice(s![3..3 + EMBED_DIM]);
        let q = 3 + EMBED_DIM;
        inputs.push([row[0], row[1], row[2], row[q], row[q + 1], row[q + 2], row[q + 3]]);
    }
    Ok(RcnGrads { params: g, inputs })
}
