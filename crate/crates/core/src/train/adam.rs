/// Adam moments for a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected step; `lr(i)` gives the rate of parameter `i`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], h: AdamHyper, lr: impl Fn(usize) -> f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let c1 = 1.0 - h.beta1.powi(self.step as i32);
        let c2 = 1.0 - h.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = h.beta1 * self.m[i] + (1.0 - h.beta1) * g;
            self.v[i] = h.beta2 * self.v[i] + (1.0 - h.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr(i) * mh / (vh.sqrt() + h.eps);
        }
    }

    /// Keeps the moments of the rows (of `width` values) where `keep` is set.
    pub fn retain_rows(&mut self, width: usize, keep: &[bool]) {
        for buf in [&mut self.m, &mut self.v] {
            let old = std::mem::take(buf);
            *buf = old
                .chunks_exact(width)
                .zip(keep)
                .filter(|(_, k)| **k)
                .flat_map(|(r, _)| r.iter().copied())
                .collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const H: AdamHyper = AdamHyper {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    #[test]
    fn first_step_moves_by_the_learning_rate() {
        let mut a = Adam::new(2);
        let mut p = [1.0, 1.0];
        a.update(&mut p, &[0.5, -3.0], H, |_| 0.01);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut a = Adam::new(3);
        let mut p = [0.1, 0.2, 0.3];
        for _ in 0..10 {
            a.update(&mut p, &[0.0; 3], H, |_| 1.0);
        }
        assert_eq!(p, [0.1, 0.2, 0.3]);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut a = Adam::new(1);
        let mut p = [3.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0)];
            a.update(&mut p, &g, H, |_| 0.01);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn retain_rows_drops_moments() {
        let mut a = Adam::new(6);
        a.m = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        a.retain_rows(2, &[true, false, true]);
        assert_eq!(a.m, vec![1.0, 2.0, 5.0, 6.0]);
        assert_eq!(a.v.len(), 4);
    }
}
