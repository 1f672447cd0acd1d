//! Tile-based front-to-back blending of surfels and its reverse pass.
//!
//! Every splat contributes `w = α·exp(-ρ)` with
//! `ρ = min((u² + v²)/2, |x - μ|² / (2·0.7²))`: the first term is the
//! surfel's own Gaussian at the ray hit, the second an image-space low-pass
//! around the projected centre so that distant or edge-on splats keep a
//! footprint of about a pixel. Contributions with `ρ > 4.5` are skipped.
//!
//! Each contribution blends the feature `(rgb, normal, depth, 1)`; the last
//! channel is the alpha. Depth is the hit depth on the surfel branch and the
//! centre depth on the low-pass branch, and is normalised by alpha on output.

use rayon::prelude::*;

use super::geom::{intersect_params, setup_posed, SplatParams};
use super::Camera;
use crate::deform::PosedSplat;
use crate::error::{Error, Result};
use crate::math::vec::{self, Vec3};

pub const TILE: usize = 16;
pub const LOWPASS_SIGMA: f64 = 0.7;
pub const RHO_CUTOFF: f64 = 4.5;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
pub const NEAR_PLANE: f64 = 0.01;
pub const ALPHA_EPS: f64 = 1e-6;
const FEATURES: usize = 8;

/// Rendered buffers, row-major. The colour and normal buffers hold three
/// values per pixel.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub color: Vec<f64>,
    pub alpha: Vec<f64>,
    pub depth: Vec<f64>,
    pub normal: Vec<f64>,
    /// Transmittance left after the last blended contribution.
    pub transmittance: Vec<f64>,
    pub(crate) trace: Option<Trace>,
}

impl RenderOutput {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Forgets the blending trace; backward is no longer possible.
    pub fn strip_trace(&mut self) {
        self.trace = None;
    }

    pub fn has_trace(&self) -> bool {
        self.trace.is_some()
    }

    /// Recorded contributions at pixel `(px, py)`, front to back, as
    /// `(splat index, blending weight T·w, camera-frame normal)`.
    pub fn pixel_contributions(&self, cam: &Camera, px: usize, py: usize) -> Result<Vec<(usize, f64, Vec3)>> {
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("render output carries no trace".into()))?;
        if px >= self.width || py >= self.height {
            return Err(Error::InvalidInput(format!("pixel ({px}, {py}) outside the image")));
        }
        let tx = self.width.div_ceil(TILE);
        let tile = (py / TILE) * tx + px / TILE;
        let (x0, y0, x1, _) = tile_rect(tile, cam);
        let tt = &trace.tiles[tile];
        let (start, end) = tt.ranges[(py - y0) * (x1 - x0) + (px - x0)];
        let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
        Ok(tt.recs[start as usize..end as usize]
            .iter()
            .map(|rec| {
                let s = tt.list[rec.local as usize] as usize;
                let p = &trace.params[s];
                let c = evaluate(p, trace.centers_px[s], cam, x, y).expect("recorded contribution re-evaluates");
                (s, rec.t_before * c.w, p.n)
            })
            .collect())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Trace {
    params: Vec<SplatParams<f64>>,
    centers_px: Vec<[f64; 2]>,
    tiles: Vec<TileTrace>,
    depth_sum: Vec<f64>,
}

#[derive(Clone, Debug)]
struct TileTrace {
    /// Splats overlapping this tile, front to back.
    list: Vec<u32>,
    /// Per pixel of the tile (row-major within the tile), a range into `recs`.
    ranges: Vec<(u32, u32)>,
    recs: Vec<Rec>,
}

#[derive(Clone, Copy, Debug)]
struct Rec {
    /// Position in the tile's splat list.
    local: u32,
    /// Transmittance in front of this contribution.
    t_before: f64,
}

/// Upstream gradients for each output buffer; an empty vector means zero.
#[derive(Clone, Debug, Default)]
pub struct ImageGrads {
    pub color: Vec<f64>,
    pub alpha: Vec<f64>,
    pub depth: Vec<f64>,
    pub normal: Vec<f64>,
}

impl ImageGrads {
    pub fn zeros(pixels: usize) -> Self {
        ImageGrads {
            color: vec![0.0; 3 * pixels],
            alpha: vec![0.0; pixels],
            depth: vec![0.0; pixels],
            normal: vec![0.0; 3 * pixels],
        }
    }
}

enum Branch {
    Surface { u: f64, v: f64, denom: f64, r: Vec3 },
    Lowpass,
}

struct Contrib {
    w: f64,
    g: f64,
    depth: f64,
    branch: Branch,
}

#[inline]
fn evaluate(p: &SplatParams<f64>, mu: [f64; 2], cam: &Camera, x: f64, y: f64) -> Option<Contrib> {
    let dx = x - mu[0];
    let dy = y - mu[1];
    let rho2 = (dx * dx + dy * dy) / (2.0 * LOWPASS_SIGMA * LOWPASS_SIGMA);
    let hit = intersect_params(p, cam.ray(x, y));
    let (rho, depth, branch) = match hit {
        Some(h) if 0.5 * (h.u * h.u + h.v * h.v) <= rho2 => (
            0.5 * (h.u * h.u + h.v * h.v),
            h.t,
            Branch::Surface {
                u: h.u,
                v: h.v,
                denom: h.denom,
                r: h.r,
            },
        ),
        _ => (rho2, p.pc[2], Branch::Lowpass),
    };
    if rho > RHO_CUTOFF {
        return None;
    }
    let g = (-rho).exp();
    Some(Contrib {
        w: p.opacity * g,
        g,
        depth,
        branch,
    })
}

#[inline]
fn feature(p: &SplatParams<f64>, depth: f64) -> [f64; FEATURES] {
    [p.color[0], p.color[1], p.color[2], p.n[0], p.n[1], p.n[2], depth, 1.0]
}

/// Conservative pixel bounding box `[x0, y0, x1, y1)` of a splat's support.
fn pixel_bbox(p: &SplatParams<f64>, mu: [f64; 2], cam: &Camera) -> Option<[usize; 4]> {
    let lp = 3.0 * LOWPASS_SIGMA;
    let (mut x0, mut y0, mut x1, mut y1) = (mu[0] - lp, mu[1] - lp, mu[0] + lp, mu[1] + lp);
    let ea = vec::scale(p.a, 3.0 * p.su);
    let eb = vec::scale(p.b, 3.0 * p.sv);
    let corners = [
        vec::add(vec::add(p.pc, ea), eb),
        vec::add(vec::sub(p.pc, ea), eb),
        vec::sub(vec::add(p.pc, ea), eb),
        vec::sub(vec::sub(p.pc, ea), eb),
    ];
    if corners.iter().any(|c| c[2] <= 1e-9) {
        // support reaches behind the camera: no useful bound
        x0 = 0.0;
        y0 = 0.0;
        x1 = cam.width as f64;
        y1 = cam.height as f64;
    } else {
        for c in corners {
            let q = cam.project(c);
            x0 = x0.min(q[0]);
            y0 = y0.min(q[1]);
            x1 = x1.max(q[0]);
            y1 = y1.max(q[1]);
        }
    }
    // pixel i is sampled at i + 0.5
    let lo = |v: f64| (v - 0.5).ceil().max(0.0);
    let hi = |v: f64, n: usize| ((v - 0.5).floor() + 1.0).min(n as f64);
    let bx0 = lo(x0);
    let by0 = lo(y0);
    let bx1 = hi(x1, cam.width);
    let by1 = hi(y1, cam.height);
    if !(bx0 < bx1 && by0 < by1) {
        return None;
    }
    Some([bx0 as usize, by0 as usize, bx1 as usize, by1 as usize])
}

struct Prepared {
    params: Vec<SplatParams<f64>>,
    centers_px: Vec<[f64; 2]>,
    tile_lists: Vec<Vec<u32>>,
}

fn tiles_x(cam: &Camera) -> usize {
    cam.width.div_ceil(TILE)
}

fn tiles_y(cam: &Camera) -> usize {
    cam.height.div_ceil(TILE)
}

fn prepare(params: Vec<SplatParams<f64>>, cam: &Camera) -> Result<Prepared> {
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("splat {i} parameters")));
    }
    let centers_px: Vec<[f64; 2]> = params.iter().map(|p| cam.project(p.pc)).collect();
    let mut order: Vec<u32> = (0..params.len() as u32)
        .filter(|&i| params[i as usize].pc[2] > NEAR_PLANE)
        .collect();
    order.sort_by(|&a, &b| {
        params[a as usize].pc[2]
            .total_cmp(&params[b as usize].pc[2])
            .then(a.cmp(&b))
    });
    let (tx, ty) = (tiles_x(cam), tiles_y(cam));
    let mut tile_lists = vec![Vec::new(); tx * ty];
    for &i in &order {
        let Some([x0, y0, x1, y1]) = pixel_bbox(&params[i as usize], centers_px[i as usize], cam) else {
            continue;
        };
        for ty_ in y0 / TILE..=(y1 - 1) / TILE {
            for tx_ in x0 / TILE..=(x1 - 1) / TILE {
                tile_lists[ty_ * tx + tx_].push(i);
            }
        }
    }
    Ok(Prepared {
        params,
        centers_px,
        tile_lists,
    })
}

struct TileOut {
    color: Vec<f64>,
    alpha: Vec<f64>,
    depth_sum: Vec<f64>,
    normal: Vec<f64>,
    transmittance: Vec<f64>,
    trace: TileTrace,
}

fn tile_rect(tile: usize, cam: &Camera) -> (usize, usize, usize, usize) {
    let tx = tiles_x(cam);
    let x0 = (tile % tx) * TILE;
    let y0 = (tile / tx) * TILE;
    (x0, y0, (x0 + TILE).min(cam.width), (y0 + TILE).min(cam.height))
}

fn render_tile(prep: &Prepared, cam: &Camera, tile: usize, record: bool) -> TileOut {
    let (x0, y0, x1, y1) = tile_rect(tile, cam);
    let n = (x1 - x0) * (y1 - y0);
    let list = &prep.tile_lists[tile];
    let mut out = TileOut {
        color: vec![0.0; 3 * n],
        alpha: vec![0.0; n],
        depth_sum: vec![0.0; n],
        normal: vec![0.0; 3 * n],
        transmittance: vec![1.0; n],
        trace: TileTrace {
            list: if record { list.clone() } else { Vec::new() },
            ranges: Vec::with_capacity(if record { n } else { 0 }),
            recs: Vec::new(),
        },
    };
    let mut k = 0;
    for py in y0..y1 {
        for px in x0..x1 {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let start = out.trace.recs.len() as u32;
            let mut t = 1.0;
            let mut acc = [0.0; FEATURES];
            for (local, &s) in list.iter().enumerate() {
                let p = &prep.params[s as usize];
                let Some(c) = evaluate(p, prep.centers_px[s as usize], cam, x, y) else {
                    continue;
                };
                let f = feature(p, c.depth);
                let tw = t * c.w;
                for (a, fv) in acc.iter_mut().zip(f) {
                    *a += tw * fv;
                }
                if record {
                    out.trace.recs.push(Rec {
                        local: local as u32,
                        t_before: t,
                    });
                }
                t *= 1.0 - c.w;
                if t < MIN_TRANSMITTANCE {
                    break;
                }
            }
            if record {
                out.trace.ranges.push((start, out.trace.recs.len() as u32));
            }
            out.color[3 * k..3 * k + 3].copy_from_slice(&acc[0..3]);
            out.normal[3 * k..3 * k + 3].copy_from_slice(&acc[3..6]);
            out.depth_sum[k] = acc[6];
            out.alpha[k] = acc[7];
            out.transmittance[k] = t;
            k += 1;
        }
    }
    out
}

/// Renders camera-frame splat parameters. With `record` set, the blending
/// trace needed by [`backward_params`] is kept.
pub fn render_params(params: Vec<SplatParams<f64>>, cam: &Camera, record: bool) -> Result<RenderOutput> {
    cam.validate()?;
    let prep = prepare(params, cam)?;
    let ntiles = prep.tile_lists.len();
    let tiles: Vec<TileOut> = (0..ntiles)
        .into_par_iter()
        .map(|t| render_tile(&prep, cam, t, record))
        .collect();
    let np = cam.pixel_count();
    let mut color = vec![0.0; 3 * np];
    let mut alpha = vec![0.0; np];
    let mut depth_sum = vec![0.0; np];
    let mut normal = vec![0.0; 3 * np];
    let mut transmittance = vec![1.0; np];
    for (tile, out) in tiles.iter().enumerate() {
        let (x0, y0, x1, y1) = tile_rect(tile, cam);
        let mut k = 0;
        for py in y0..y1 {
            for px in x0..x1 {
                let i = py * cam.width + px;
                color[3 * i..3 * i + 3].copy_from_slice(&out.color[3 * k..3 * k + 3]);
                normal[3 * i..3 * i + 3].copy_from_slice(&out.normal[3 * k..3 * k + 3]);
                alpha[i] = out.alpha[k];
                depth_sum[i] = out.depth_sum[k];
                transmittance[i] = out.transmittance[k];
                k += 1;
            }
        }
    }
    let depth = depth_sum
        .iter()
        .zip(&alpha)
        .map(|(d, a)| d / a.max(ALPHA_EPS))
        .collect();
    let trace = record.then(|| Trace {
        params: prep.params,
        centers_px: prep.centers_px,
        tiles: tiles.into_iter().map(|t| t.trace).collect(),
        depth_sum,
    });
    Ok(RenderOutput {
        width: cam.width,
        height: cam.height,
        color,
        alpha,
        depth,
        normal,
        transmittance,
        trace,
    })
}

/// Renders posed splats, keeping the trace for [`render_backward`].
pub fn render(splats: &[PosedSplat], cam: &Camera) -> Result<RenderOutput> {
    render_params(splats.iter().map(|s| setup_posed(s, cam)).collect(), cam, true)
}

fn check_len(name: &str, v: &[f64], want: usize) -> Result<()> {
    if !v.is_empty() && v.len() != want {
        return Err(Error::Dimension(format!("{name} gradient has {} values, expected {want}", v.len())));
    }
    Ok(())
}

/// Gradient of the loss with respect to every splat's camera-frame
/// parameters, given gradients on the output buffers.
pub fn backward_params(out: &RenderOutput, cam: &Camera, up: &ImageGrads) -> Result<Vec<SplatParams<f64>>> {
    let trace = out
        .trace
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("render output carries no trace".into()))?;
    let np = out.pixel_count();
    check_len("colour", &up.color, 3 * np)?;
    check_len("alpha", &up.alpha, np)?;
    check_len("depth", &up.depth, np)?;
    check_len("normal", &up.normal, 3 * np)?;
    let get = |v: &[f64], i: usize| if v.is_empty() { 0.0 } else { v[i] };

    let sigma2 = LOWPASS_SIGMA * LOWPASS_SIGMA;
    let tile_grads: Vec<Vec<(u32, SplatParams<f64>)>> = trace
        .tiles
        .par_iter()
        .enumerate()
        .map(|(tile, tt)| {
            let mut local = vec![SplatParams::zero(); tt.list.len()];
            let mut touched = vec![false; tt.list.len()];
            let (x0, y0, x1, _) = tile_rect(tile, cam);
            let tw = x1 - x0;
            for (k, &(start, end)) in tt.ranges.iter().enumerate() {
                if start == end {
                    continue;
                }
                let px = x0 + k % tw;
                let py = y0 + k / tw;
                let i = py * cam.width + px;
                let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
                let a_out = out.alpha[i];
                let gd = get(&up.depth, i);
                let mut g = [0.0; FEATURES];
                for c in 0..3 {
                    g[c] = get(&up.color, 3 * i + c);
                    g[3 + c] = get(&up.normal, 3 * i + c);
                }
                g[6] = gd / a_out.max(ALPHA_EPS);
                g[7] = get(&up.alpha, i);
                if a_out > ALPHA_EPS {
                    g[7] -= gd * trace.depth_sum[i] / (a_out * a_out);
                }
                if g.iter().all(|v| *v == 0.0) {
                    continue;
                }
                // g · (blended features behind the current contribution)
                let mut g_rest = 0.0;
                for rec in tt.recs[start as usize..end as usize].iter().rev() {
                    let s = tt.list[rec.local as usize] as usize;
                    let p = &trace.params[s];
                    let mu = trace.centers_px[s];
                    let c = evaluate(p, mu, cam, x, y).expect("recorded contribution re-evaluates");
                    let f = feature(p, c.depth);
                    let gf: f64 = g.iter().zip(f).map(|(a, b)| a * b).sum();
                    let t = rec.t_before;
                    let dw = t * (gf - g_rest);
                    g_rest = c.w * gf + (1.0 - c.w) * g_rest;

                    let tw_ = t * c.w;
                    let gs = &mut local[rec.local as usize];
                    touched[rec.local as usize] = true;
                    for ch in 0..3 {
                        gs.color[ch] += tw_ * g[ch];
                        gs.n[ch] += tw_ * g[3 + ch];
                    }
                    let g_depth = tw_ * g[6];
                    gs.opacity += dw * c.g;
                    let drho = -dw * c.w;
                    match c.branch {
                        Branch::Surface { u, v, denom, r } => {
                            let gu = drho * u;
                            let gv = drho * v;
                            let d = cam.ray(x, y);
                            let gr = vec::add(vec::scale(p.a, gu / p.su), vec::scale(p.b, gv / p.sv));
                            let gt_total = g_depth + vec::dot(gr, d);
                            for ax in 0..3 {
                                gs.pc[ax] += -gr[ax] + gt_total * p.n[ax] / denom;
                                gs.n[ax] += -gt_total * r[ax] / denom;
                                gs.a[ax] += gu * r[ax] / p.su;
                                gs.b[ax] += gv * r[ax] / p.sv;
                            }
                            gs.su += -gu * u / p.su;
                            gs.sv += -gv * v / p.sv;
                        }
                        Branch::Lowpass => {
                            let gmx = drho * -(x - mu[0]) / sigma2;
                            let gmy = drho * -(y - mu[1]) / sigma2;
                            let z = p.pc[2];
                            gs.pc[0] += gmx * cam.fx / z;
                            gs.pc[1] += gmy * cam.fy / z;
                            gs.pc[2] += -gmx * cam.fx * p.pc[0] / (z * z) - gmy * cam.fy * p.pc[1] / (z * z) + g_depth;
                        }
                    }
                }
            }
            tt.list
                .iter()
                .zip(local)
                .zip(touched)
                .filter(|(_, t)| *t)
                .map(|((&s, g), _)| (s, g))
                .collect()
        })
        .collect();

    let mut grads = vec![SplatParams::zero(); trace.params.len()];
    for tile in &tile_grads {
        for (s, g) in tile {
            grads[*s as usize].add_assign(g);
        }
    }
    Ok(grads)
}

/// Gradients with respect to the fields of each posed splat.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosedSplatGrad {
    pub center: Vec3,
    pub rot: [f64; 4],
    pub scale: [f64; 2],
    pub opacity: f64,
    pub sh: [[f64; 3]; 9],
}

pub fn render_backward(
    splats: &[PosedSplat],
    cam: &Camera,
    out: &RenderOutput,
    up: &ImageGrads,
) -> Result<Vec<PosedSplatGrad>> {
    use crate::math::tape::GradTape;
    let pg = backward_params(out, cam, up)?;
    if pg.len() != splats.len() {
        return Err(Error::Dimension("render output belongs to a different splat list".into()));
    }
    Ok(splats
        .par_iter()
        .zip(pg.par_iter())
        .map_init(GradTape::new, |tape, (s, g)| {
            tape.clear();
            let center = tape.vars(s.center);
            let rot = tape.vars(s.rot.to_array());
            let scale = tape.vars(s.scale);
            let opacity = tape.var(s.opacity);
            let sh = s.sh.coeffs.map(|c| tape.vars(c));
            let p = super::geom::splat_setup(center, rot, scale, &sh, opacity, cam);
            let adj = tape.backward(&p.zip_grad(g));
            PosedSplatGrad {
                center: adj.of_all(&center),
                rot: adj.of_all(&rot),
                scale: adj.of_all(&scale),
                opacity: adj.of(opacity),
                sh: sh.map(|c| adj.of_all(&c)),
            }
        })
        .collect())
}
