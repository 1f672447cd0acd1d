//! Real spherical harmonics over bands 0–2 (nine coefficients per channel).

use serde::{Deserialize, Serialize};

use super::tape::Real;
use super::vec::Vec3;

pub const SH_COEFFS: usize = 9;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];

/// Offset added to the DC response so that all-zero coefficients give mid grey.
pub const SH_DC_OFFSET: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShCoeffs {
    /// `coeffs[k][c]`: basis function `k`, colour channel `c`.
    pub coeffs: [[f64; 3]; SH_COEFFS],
}

impl Default for ShCoeffs {
    fn default() -> Self {
        ShCoeffs {
            coeffs: [[0.0; 3]; SH_COEFFS],
        }
    }
}

impl ShCoeffs {
    /// Coefficients whose view-independent colour is `rgb`.
    pub fn from_rgb(rgb: Vec3) -> Self {
        let mut sh = ShCoeffs::default();
        sh.coeffs[0] = rgb.map(|c| (c - SH_DC_OFFSET) / SH_C0);
        sh
    }

    pub fn eval(&self, dir: Vec3) -> Vec3 {
        sh_eval(&self.coeffs, dir)
    }

    pub fn flat(&self) -> [f64; 27] {
        std::array::from_fn(|i| self.coeffs[i / 3][i % 3])
    }

    pub fn from_flat(f: &[f64]) -> Self {
        let mut sh = ShCoeffs::default();
        for (i, v) in f.iter().take(27).enumerate() {
            sh.coeffs[i / 3][i % 3] = *v;
        }
        sh
    }
}

/// Basis values at unit direction `d`.
pub fn sh_basis<S: Real>(d: [S; 3]) -> [S; SH_COEFFS] {
    let [x, y, z] = d;
    [
        S::cst(SH_C0),
        -(y * SH_C1),
        z * SH_C1,
        -(x * SH_C1),
        x * y * SH_C2[0],
        y * z * SH_C2[1],
        (z * z * 2.0 - x * x - y * y) * SH_C2[2],
        x * z * SH_C2[3],
        (x * x - y * y) * SH_C2[4],
    ]
}

/// RGB response toward `dir`, offset by [`SH_DC_OFFSET`] and clamped at zero.
pub fn sh_eval<S: Real>(coeffs: &[[S; 3]; SH_COEFFS], dir: [S; 3]) -> [S; 3] {
    let basis = sh_basis(dir);
    std::array::from_fn(|c| {
        let mut acc = S::cst(SH_DC_OFFSET);
        for k in 0..SH_COEFFS {
            acc = acc + basis[k] * coeffs[k][c];
        }
        acc.relu()
    })
}
