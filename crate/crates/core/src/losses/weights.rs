use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::geometry::square_side;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalLossWeights {
    pub unwrap: f64,
    pub wrap: f64,
    pub cycle: f64,
    pub diff: f64,
    pub tri: f64,
}

impl Default for GlobalLossWeights {
    fn default() -> Self {
        GlobalLossWeights {
            unwrap: 0.01,
            wrap: 1.0,
            cycle: 0.01,
            diff: 0.01,
            tri: 0.001,
        }
    }
}

impl GlobalLossWeights {
    pub fn from_slice(w: &[f64]) -> Option<Self> {
        match *w {
            [unwrap, wrap, cycle, diff, tri] if w.iter().all(|x| *x >= 0.0 && x.is_finite()) => Some(GlobalLossWeights {
                unwrap,
                wrap,
                cycle,
                diff,
                tri,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartLossWeights {
    pub unwrap: f64,
    pub cycle: f64,
    pub tri: f64,
}

impl Default for ChartLossWeights {
    fn default() -> Self {
        ChartLossWeights {
            unwrap: 0.01,
            cycle: 10.0,
            tri: 1.0,
        }
    }
}

impl ChartLossWeights {
    pub fn from_slice(w: &[f64]) -> Option<Self> {
        match *w {
            [unwrap, cycle, tri] if w.iter().all(|x| *x >= 0.0 && x.is_finite()) => Some(ChartLossWeights { unwrap, cycle, tri }),
            _ => None,
        }
    }
}

/// Coefficients of the thresholds that scale with the current UV layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCoefs {
    /// `eps = eps_coef * L / sqrt(V)`
    pub eps_coef: f64,
    /// `tau >= tau_coef * L`
    pub tau_coef: f64,
    /// `tau >= tau_spacing_coef * L / sqrt(V)`; keeps the seam threshold above
    /// the sampling pitch of coarse inputs. Zero disables it.
    pub tau_spacing_coef: f64,
}

impl Default for ThresholdCoefs {
    fn default() -> Self {
        ThresholdCoefs {
            eps_coef: 0.2,
            tau_coef: 0.02,
            tau_spacing_coef: 3.0,
        }
    }
}

/// Thresholds derived from the live UV coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicThresholds {
    /// Side of the square bounding box of the UV points.
    pub side: f64,
    /// Minimum neighbor distance enforced by the unwrapping hinge.
    pub eps: f64,
    /// Seam threshold on the largest UV gap to 3D neighbors.
    pub tau: f64,
}

impl DynamicThresholds {
    pub fn from_uv(uv: ArrayView2<f64>, coefs: &ThresholdCoefs) -> Self {
        let side = square_side(uv);
        Self::from_side(side, uv.nrows(), coefs)
    }

    pub fn from_side(side: f64, count: usize, coefs: &ThresholdCoefs) -> Self {
        let pitch = side / (count.max(1) as f64).sqrt();
        DynamicThresholds {
            side,
            eps: coefs.eps_coef * pitch,
            tau: (coefs.tau_coef * side).max(coefs.tau_spacing_coef * pitch),
        }
    }
}
