//! Four-way partition of the pixel grid from RoI and RoA masks.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segregation::{BinaryMask, MaskKind};

/// The four disjoint regions by utility (in RoI) and vulnerability (in RoA).
#[derive(Debug, Clone)]
pub struct RegionPartition {
    /// In RoI and in RoA.
    pub uv: BinaryMask,
    /// In RoI, not in RoA.
    pub u_vbar: BinaryMask,
    /// Not in RoI, in RoA. The region the defense targets.
    pub ubar_v: BinaryMask,
    /// In neither.
    pub ubar_vbar: BinaryMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub counts: [usize; 4],
    pub fractions: [f64; 4],
    pub total: usize,
}

/// uv = roi ∧ roa; u_vbar = roi ∧ ¬roa; ubar_v = ¬roi ∧ roa;
/// ubar_vbar = ¬roi ∧ ¬roa.
pub fn partition(roi: &BinaryMask, roa: &BinaryMask) -> Result<RegionPartition> {
    if roi.dim() != roa.dim() {
        return Err(Error::Validation(format!(
            "RoI dims {:?} differ from RoA dims {:?}",
            roi.dim(),
            roa.dim()
        )));
    }
    let region = |f: &dyn Fn(bool, bool) -> bool| BinaryMask {
        bits: Array2::from_shape_fn(roi.dim(), |idx| f(roi.bits[idx], roa.bits[idx])),
        kind: MaskKind::Region,
    };
    Ok(RegionPartition {
        uv: region(&|u, v| u && v),
        u_vbar: region(&|u, v| u && !v),
        ubar_v: region(&|u, v| !u && v),
        ubar_vbar: region(&|u, v| !u && !v),
    })
}

/// Per-region pixel counts and fractions; counts sum to H·W.
pub fn region_stats(p: &RegionPartition) -> RegionStats {
    let counts = [
        p.uv.count(),
        p.u_vbar.count(),
        p.ubar_v.count(),
        p.ubar_vbar.count(),
    ];
    let (h, w) = p.uv.dim();
    let total = h * w;
    let fractions = counts.map(|c| c as f64 / total as f64);
    RegionStats {
        counts,
        fractions,
        total,
    }
}
