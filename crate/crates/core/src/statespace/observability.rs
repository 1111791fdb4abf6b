use nalgebra::DMatrix;

use super::LinearGaussianModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservabilityReport {
    pub rank: usize,
    pub observable: bool,
}

/// Rank of the observability matrix of the noise-augmented pair
/// `F̃ = blockdiag(F, I_{n_z})`, `H̃ = (H  I_{n_z})`, which must reach
/// `n_x + n_z` for the observation-noise law to be identifiable.
///
/// Uses the matrices at `t = 1`; intended for time-invariant models.
pub fn observability_rank(model: &LinearGaussianModel) -> ObservabilityReport {
    let dims = model.dims();
    let (nx, nz) = (dims.n_x, dims.n_z);
    let n = nx + nz;
    let mut f_aug = DMatrix::<f64>::zeros(n, n);
    f_aug.view_mut((0, 0), (nx, nx)).copy_from(model.f_mat(1));
    for i in 0..nz {
        f_aug[(nx + i, nx + i)] = 1.0;
    }
    let mut h_aug = DMatrix::<f64>::zeros(nz, n);
    h_aug.view_mut((0, 0), (nz, nx)).copy_from(model.h_mat(1));
    for i in 0..nz {
        h_aug[(i, nx + i)] = 1.0;
    }

    let mut stacked = DMatrix::<f64>::zeros(nz * n, n);
    let mut block = h_aug;
    for k in 0..n {
        stacked.view_mut((k * nz, 0), (nz, n)).copy_from(&block);
        block = &block * &f_aug;
    }
    let sv = stacked.singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    let rank = if smax == 0.0 {
        0
    } else {
        sv.iter().filter(|&&s| s > 1e-10 * smax).count()
    };
    ObservabilityReport {
        rank,
        observable: rank == n,
    }
}
