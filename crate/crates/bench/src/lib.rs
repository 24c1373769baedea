//! Fixtures shared by the benchmarks.

use obscorr::fem::DiffusionSettings;
use obscorr::{CorrelationModel, DiffusionOperator, Result, TrackMesh};

/// Along-track mesh of `p` nodes with mean spacing `h` km and a deterministic
/// ±30% jitter.
pub fn jittered_track(p: usize, h: f64) -> Result<TrackMesh> {
    let mut x = 0.0;
    let positions = (0..p)
        .map(|i| {
            let here = x;
            let jitter = 0.3 * (((i * 7919) % 101) as f64 / 50.0 - 1.0);
            x += h * (1.0 + jitter);
            here
        })
        .collect();
    TrackMesh::from_positions(positions)
}

/// Calibrated, unnormalised operator on a jittered track.
pub fn operator(p: usize, h: f64, m: u32, rho: f64) -> Result<DiffusionOperator> {
    let mesh = jittered_track(p, h)?;
    let model = CorrelationModel::new(m, rho)?;
    DiffusionOperator::unnormalized(&mesh, &model, &DiffusionSettings::default())
}
