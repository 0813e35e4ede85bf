//! Deterministic low-discrepancy samples of balls.

use nalgebra::DVector;

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// `count` points of the Halton sequence in `[0,1)^dim`, starting at
/// `offset + 1` (index 0 maps to the corner and is skipped).
pub fn halton(dim: usize, count: usize, offset: u64) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "Halton sampling supports up to {} dimensions", PRIMES.len());
    (0..count as u64)
        .map(|k| (0..dim).map(|d| radical_inverse(offset + k + 1, PRIMES[d])).collect())
        .collect()
}

/// Samples of the closed ball `B_radius(0) ⊂ ℝ^dim`: the origin, Halton
/// points accepted from the enclosing cube, and their radial projections
/// onto the sphere. The point set for radius `ρ` is exactly `ρ/R` times the
/// set for radius `R`, so estimates of suprema of ray-monotone quantities
/// are monotone in the radius.
pub fn ball_points(dim: usize, radius: f64, count: usize, offset: u64) -> Vec<DVector<f64>> {
    let mut pts = Vec::with_capacity(count.max(1));
    pts.push(DVector::zeros(dim));
    if count <= 1 {
        return pts;
    }
    if dim == 1 {
        pts.push(DVector::from_element(1, -radius));
        pts.push(DVector::from_element(1, radius));
        let rest = count.saturating_sub(3);
        for h in halton(1, rest, offset) {
            pts.push(DVector::from_element(1, radius * (2.0 * h[0] - 1.0)));
        }
        pts.truncate(count);
        return pts;
    }
    let interior = (count - 1) / 2;
    let mut k = offset;
    let mut accepted = Vec::with_capacity(interior);
    while accepted.len() < interior {
        let batch = halton(dim, 64, k);
        k += 64;
        for h in batch {
            let v = DVector::from_iterator(dim, h.iter().map(|x| 2.0 * x - 1.0));
            let n = v.norm();
            if n <= 1.0 && n > 1e-12 {
                accepted.push(v);
                if accepted.len() == interior {
                    break;
                }
            }
        }
    }
    for v in &accepted {
        pts.push(v * radius);
    }
    for v in &accepted {
        if pts.len() >= count {
            break;
        }
        pts.push(v / v.norm() * radius);
    }
    pts
}
