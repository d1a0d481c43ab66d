//! Point sets on the unit cube: scrambled Sobol sequences and tensor grids.

use crate::space::InputPoint;

/// Largest dimension supported by the Sobol tables.
pub const MAX_SOBOL_DIM: usize = sobol_burley::NUM_DIMENSIONS as usize;

/// First `n` points of an Owen-scrambled Sobol sequence in `[0,1)^d`.
/// Different `seed` values give independent scramblings.
pub fn sobol(n: usize, d: usize, seed: u64) -> Vec<InputPoint> {
    assert!(d >= 1 && d <= MAX_SOBOL_DIM, "Sobol dimension {d} unsupported");
    assert!(n <= u32::MAX as usize);
    let seed = (seed ^ (seed >> 32)) as u32;
    (0..n as u32)
        .map(|i| {
            let coords = (0..d as u32).map(|k| f64::from(sobol_burley::sample(i, k, seed))).collect();
            InputPoint::from_vec_unchecked(coords)
        })
        .collect()
}

/// Full tensor grid with `per_dim` evenly spaced nodes per axis including
/// both endpoints; the first coordinate varies slowest.
pub fn tensor_grid(per_dim: usize, d: usize) -> Vec<InputPoint> {
    assert!(per_dim >= 2 && d >= 1);
    let nodes: Vec<f64> = (0..per_dim).map(|i| i as f64 / (per_dim - 1) as f64).collect();
    let total = per_dim.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            let mut coords = vec![0.0; d];
            for k in (0..d).rev() {
                coords[k] = nodes[idx % per_dim];
                idx /= per_dim;
            }
            InputPoint::from_vec_unchecked(coords)
        })
        .collect()
}

/// Dense search grid over the unit cube: 201 nodes per axis for d ≤ 2,
/// otherwise 2^14 scrambled Sobol points.
pub fn dense_grid(d: usize) -> Vec<InputPoint> {
    if d <= 2 {
        tensor_grid(201, d)
    } else {
        sobol(1 << 14, d, 0x5eed)
    }
}
