//! Poses the mini arm, prints joint and vertex motion, and carries a few
//! embedded splats along with the surface.
//!
//! cargo run --release --example skinning -- [elbow angle in radians]

use std::sync::Arc;

use surfel_avatar::body::{joint_tri_set, make_mini_body, Body, MiniBodySpec};
use surfel_avatar::deform::deform_avatar;
use surfel_avatar::math::{Quat, ShCoeffs};
use surfel_avatar::splat::{AvatarModel, SplatEmbedding};

fn main() -> anyhow::Result<()> {
    let angle: f64 = std::env::args().nth(1).map_or(Ok(1.2), |a| a.parse())?;
    let body = Arc::new(Body::new(make_mini_body(&MiniBodySpec::arm(), 0)?)?);
    let b = &body.bundle;

    let mut pose = b.rest_pose();
    pose.theta[1] = [0.0, 0.0, angle];
    let posed = body.pose(&pose)?;
    let tip = (0..b.vertex_count())
        .max_by(|&i, &j| b.rest_vertices[i][0].total_cmp(&b.rest_vertices[j][0]))
        .expect("non-empty mesh");
    println!("elbow bent by {angle:.2} rad");
    println!("tip vertex {tip}: rest {:.3?} -> posed {:.3?}", b.rest_vertices[tip], posed.vertices[tip]);

    let splats: Vec<SplatEmbedding> = [0, b.face_count() / 2, b.face_count() - 1]
        .into_iter()
        .map(|f| SplatEmbedding {
            face: f as u32,
            u: 1.0 / 3.0,
            v: 1.0 / 3.0,
            d: 0.005,
            scale: [0.01, 0.01],
            rot: Quat::IDENTITY,
            opacity: 0.8,
            sh: ShCoeffs::from_rgb([0.7, 0.5, 0.4]),
        })
        .collect();
    let model = AvatarModel {
        body: body.clone(),
        splats,
        joint_set: joint_tri_set(b, 0.05)?,
        joint_radius: 0.05,
        beta: vec![],
    };
    let rest = deform_avatar(&model, &body.pose(&b.rest_pose())?, None)?;
    let bent = deform_avatar(&model, &posed, None)?;
    for (r, p) in rest.iter().zip(&bent) {
        println!("splat on face {}: {:.3?} -> {:.3?}", model.splats[r.source].face, r.center, p.center);
    }
    Ok(())
}
