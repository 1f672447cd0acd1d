use std::collections::HashMap;

use super::{TrainState, SPLAT_PARAMS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PruneReport {
    pub removed: usize,
    pub remaining: usize,
    pub stabilized: bool,
}

/// Removes splats whose opacity fell below the configured threshold. Every
/// joint-set face keeps at least its most opaque splat, and the avatar is
/// never emptied. Also updates the stabilisation flag: the count is stable
/// when it changed by less than the tolerance over the last window.
pub fn density_control(state: &mut TrainState) -> PruneReport {
    let cfg = &state.config;
    let splats = &state.model.splats;
    let mut keep: Vec<bool> = splats.iter().map(|s| s.opacity >= cfg.prune_opacity).collect();
    let mut best: HashMap<u32, usize> = HashMap::new();
    for (i, s) in splats.iter().enumerate() {
        if state.model.joint_set.contains(s.face as usize) {
            let b = best.entry(s.face).or_insert(i);
            if s.opacity > splats[*b].opacity {
                *b = i;
            }
        }
    }
    let mut covered: HashMap<u32, bool> = HashMap::new();
    for (i, s) in splats.iter().enumerate() {
        if keep[i] {
            covered.insert(s.face, true);
        }
    }
    for (face, i) in &best {
        if !covered.contains_key(face) {
            keep[*i] = true;
        }
    }
    if !keep.iter().any(|k| *k) {
        let top = (0..splats.len())
            .max_by(|&a, &b| splats[a].opacity.total_cmp(&splats[b].opacity).then(b.cmp(&a)))
            .unwrap_or(0);
        keep[top] = true;
    }
    let removed = keep.iter().filter(|k| !**k).count();
    if removed > 0 {
        let mut it = keep.iter();
        state.model.splats.retain(|_| *it.next().expect("one flag per splat"));
        state.splat_adam.retain_rows(SPLAT_PARAMS, &keep);
    }
    let now = state.iteration;
    let count = state.model.len();
    state.count_history.push((now, count));
    let window = state.config.stabilization_window;
    state.stabilized = state
        .count_history
        .iter()
        .rev()
        .find(|(it, _)| it + window <= now)
        .is_some_and(|&(_, past)| (count as f64 - past as f64).abs() <= state.config.stabilization_tolerance * past as f64);
    PruneReport {
        removed,
        remaining: count,
        stabilized: state.stabilized,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{joint_tri_set, make_mini_body, Body, MiniBodySpec};
    use crate::train::TrainConfig;
    use std::sync::Arc;

    fn state() -> TrainState {
        let body = Arc::new(Body::new(make_mini_body(&MiniBodySpec::arm(), 0).unwrap()).unwrap());
        let cfg = TrainConfig {
            splats: 50,
            joint_radius: 0.05,
            stabilization_window: 1000,
            ..TrainConfig::default()
        };
        TrainState::new(cfg, body, vec![]).unwrap()
    }

    #[test]
    fn opaque_splats_are_kept() {
        let mut s = state();
        let r = density_control(&mut s);
        assert_eq!(r.removed, 0);
        assert_eq!(s.model.len(), 50);
    }

    #[test]
    fn transparent_splat_is_removed() {
        let mut s = state();
        let i = (0..50).find(|&i| !s.model.joint_set.contains(s.model.splats[i].face as usize)).unwrap();
        s.model.splats[i].opacity = 0.001;
        let marked = s.model.splats[i];
        let r = density_control(&mut s);
        assert_eq!(r.removed, 1);
        assert!(!s.model.splats.contains(&marked));
        assert_eq!(s.splat_adam.len(), 49 * SPLAT_PARAMS);
    }

    #[test]
    fn joint_faces_keep_one_splat() {
        let mut s = state();
        for e in &mut s.model.splats {
            e.opacity = 0.0;
        }
        density_control(&mut s);
        let js = joint_tri_set(&s.model.body.bundle, 0.05).unwrap();
        assert!(!js.is_empty());
        for &f in js.members() {
            assert!(s.model.splats.iter().any(|e| e.face == f));
        }
        assert_eq!(s.model.len(), js.len());
    }

    #[test]
    fn constant_count_stabilizes() {
        let mut s = state();
        s.iteration = 500;
        assert!(!density_control(&mut s).stabilized);
        s.iteration = 1000;
        assert!(density_control(&mut s).stabilized);
    }
}
