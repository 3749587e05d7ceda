//! Mean-face layout for the 49-point scheme, in unit-square coordinates
//! (x to the right, y down), and its horizontal-flip index mapping.

use crate::geometry::N_LANDMARKS;

/// Points in 1-based order: entry `k - 1` is landmark `k`.
pub const FACE_TEMPLATE: [[f64; 2]; N_LANDMARKS] = [
    // brows
    [0.25, 0.30],
    [0.31, 0.29],
    [0.37, 0.30],
    [0.43, 0.32],
    [0.57, 0.32],
    [0.63, 0.30],
    [0.69, 0.29],
    [0.75, 0.30],
    [0.80, 0.33],
    // nose bridge
    [0.50, 0.40],
    [0.50, 0.46],
    [0.50, 0.52],
    [0.50, 0.58],
    // nose bottom
    [0.42, 0.62],
    [0.46, 0.635],
    [0.50, 0.645],
    [0.54, 0.635],
    [0.58, 0.62],
    // right eye
    [0.27, 0.41],
    [0.31, 0.39],
    [0.37, 0.39],
    [0.41, 0.41],
    [0.37, 0.43],
    [0.31, 0.43],
    // left eye
    [0.59, 0.41],
    [0.63, 0.39],
    [0.69, 0.39],
    [0.73, 0.41],
    [0.69, 0.43],
    [0.63, 0.43],
    // outer lip
    [0.38, 0.76],
    [0.42, 0.73],
    [0.46, 0.715],
    [0.50, 0.72],
    [0.54, 0.715],
    [0.58, 0.73],
    [0.62, 0.76],
    [0.58, 0.79],
    [0.54, 0.805],
    [0.50, 0.81],
    [0.46, 0.805],
    [0.42, 0.79],
    // inner lip
    [0.45, 0.75],
    [0.50, 0.748],
    [0.55, 0.75],
    [0.55, 0.77],
    [0.50, 0.772],
    [0.45, 0.77],
    // outer end of the right brow
    [0.20, 0.33],
];

/// Left/right landmark pairs (1-based) swapped by a horizontal flip.
pub const FLIP_PAIRS: [[usize; 2]; 20] = [
    [49, 9],
    [1, 8],
    [2, 7],
    [3, 6],
    [4, 5],
    [14, 18],
    [15, 17],
    [19, 28],
    [20, 27],
    [21, 26],
    [22, 25],
    [23, 30],
    [24, 29],
    [31, 37],
    [32, 36],
    [33, 35],
    [38, 42],
    [39, 41],
    [43, 45],
    [46, 48],
];

/// 0-based permutation built from 1-based pairs; unlisted points map to
/// themselves. Returns `None` if an index is out of range or repeated.
pub fn flip_permutation(pairs: &[[usize; 2]], n: usize) -> Option<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut seen = vec![false; n];
    for &[a, b] in pairs {
        if a == 0 || b == 0 || a > n || b > n || a == b || seen[a - 1] || seen[b - 1] {
            return None;
        }
        seen[a - 1] = true;
        seen[b - 1] = true;
        perm[a - 1] = b - 1;
        perm[b - 1] = a - 1;
    }
    Some(perm)
}

/// Template scaled to a `size × size` image, flattened `x1, y1, x2, y2, ...`.
pub fn template_pixels(size: usize) -> Vec<f64> {
    FACE_TEMPLATE
        .iter()
        .flat_map(|p| [p[0] * size as f64, p[1] * size as f64])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_is_mirror_symmetric_under_the_flip() {
        let perm = flip_permutation(&FLIP_PAIRS, N_LANDMARKS).unwrap();
        for (i, &j) in perm.iter().enumerate() {
            let (p, q) = (FACE_TEMPLATE[i], FACE_TEMPLATE[j]);
            assert!((p[0] - (1.0 - q[0])).abs() < 1e-12, "landmark {}", i + 1);
            assert!((p[1] - q[1]).abs() < 1e-12, "landmark {}", i + 1);
        }
    }

    #[test]
    fn permutation_is_an_involution() {
        let perm = flip_permutation(&FLIP_PAIRS, N_LANDMARKS).unwrap();
        for i in 0..N_LANDMARKS {
            assert_eq!(perm[perm[i]], i);
        }
        assert!(flip_permutation(&[[1, 2], [2, 3]], N_LANDMARKS).is_none());
    }
}
