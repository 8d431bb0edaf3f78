//! Textual description of spatial features.
//!
//! The map-screen plane that encodes buildings is reduced to a structure
//! count via 4-connected component labeling, then rendered as the
//! "Army Units/Buildings" prompt line. Counting uses a union-find pass;
//! the tests cross-check it against an independent flood-fill oracle.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::{SpatialFeatures, SPATIAL_SIZE};

/// Which plane holds buildings and the activity threshold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DescriberConfig {
    pub building_plane: usize,
    pub threshold: f32,
}

impl Default for DescriberConfig {
    fn default() -> Self {
        Self {
            building_plane: 0,
            threshold: 0.5,
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[rb] = ra;
        }
    }
}

/// Count 4-connected components of cells strictly above `threshold`.
pub fn count_structures(plane: ArrayView2<'_, f32>, threshold: f32) -> Result<usize> {
    let (rows, cols) = plane.dim();
    if rows != SPATIAL_SIZE || cols != SPATIAL_SIZE {
        return Err(Error::ShapeMismatch {
            expected: format!("{SPATIAL_SIZE}x{SPATIAL_SIZE}"),
            got: format!("{rows}x{cols}"),
        });
    }
    if !threshold.is_finite() {
        return Err(Error::NonFiniteInput);
    }

    let active = |r: usize, c: usize| plane[[r, c]] > threshold;
    let idx = |r: usize, c: usize| r * cols + c;
    let mut uf = UnionFind::new(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            if !active(r, c) {
                continue;
            }
            if r > 0 && active(r - 1, c) {
                uf.union(idx(r - 1, c), idx(r, c));
            }
            if c > 0 && active(r, c - 1) {
                uf.union(idx(r, c - 1), idx(r, c));
            }
        }
    }

    let mut count = 0;
    for r in 0..rows {
        for c in 0..cols {
            if active(r, c) && uf.find(idx(r, c)) == idx(r, c) {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// Render the building count of the configured plane as prompt text:
/// "no buildings" or "<n> buildings".
pub fn describe(spatial: &SpatialFeatures, config: &DescriberConfig) -> Result<String> {
    let plane = spatial.plane(config.building_plane)?;
    let count = count_structures(plane, config.threshold)?;
    Ok(if count == 0 {
        "no buildings".to_string()
    } else {
        format!("{count} buildings")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn plane_with_blocks(blocks: &[(usize, usize)]) -> Array2<f32> {
        let mut plane = Array2::zeros((SPATIAL_SIZE, SPATIAL_SIZE));
        for &(r, c) in blocks {
            for dr in 0..2 {
                for dc in 0..2 {
                    plane[[r + dr, c + dc]] = 1.0;
                }
            }
        }
        plane
    }

    /// Independent oracle: explicit stack-based flood fill.
    fn flood_fill_count(plane: &Array2<f32>, threshold: f32) -> usize {
        let (rows, cols) = plane.dim();
        let mut seen = vec![vec![false; cols]; rows];
        let mut count = 0;
        for r in 0..rows {
            for c in 0..cols {
                if seen[r][c] || plane[[r, c]] <= threshold {
                    continue;
                }
                count += 1;
                let mut stack = vec![(r, c)];
                while let Some((y, x)) = stack.pop() {
                    if seen[y][x] || plane[[y, x]] <= threshold {
                        continue;
                    }
                    seen[y][x] = true;
                    if y > 0 {
                        stack.push((y - 1, x));
                    }
                    if y + 1 < rows {
                        stack.push((y + 1, x));
                    }
                    if x > 0 {
                        stack.push((y, x - 1));
                    }
                    if x + 1 < cols {
                        stack.push((y, x + 1));
                    }
                }
            }
        }
        count
    }

    #[test]
    fn empty_plane_counts_zero() {
        let plane = Array2::zeros((SPATIAL_SIZE, SPATIAL_SIZE));
        assert_eq!(count_structures(plane.view(), 0.5).unwrap(), 0);
    }

    #[test]
    fn two_disjoint_blocks_count_two() {
        let plane = plane_with_blocks(&[(0, 0), (10, 10)]);
        assert_eq!(count_structures(plane.view(), 0.5).unwrap(), 2);
        assert_eq!(flood_fill_count(&plane, 0.5), 2);
    }

    #[test]
    fn diagonal_touch_stays_separate_under_4_connectivity() {
        // Second block touches the first corner-to-corner at (2, 2).
        let plane = plane_with_blocks(&[(0, 0), (2, 2)]);
        assert_eq!(count_structures(plane.view(), 0.5).unwrap(), 2);
        assert_eq!(flood_fill_count(&plane, 0.5), 2);
    }

    #[test]
    fn edge_adjacent_blocks_merge() {
        let plane = plane_with_blocks(&[(0, 0), (0, 2)]);
        assert_eq!(count_structures(plane.view(), 0.5).unwrap(), 1);
        assert_eq!(flood_fill_count(&plane, 0.5), 1);
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let plane = Array2::<f32>::zeros((32, 64));
        assert!(matches!(
            count_structures(plane.view(), 0.5),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn translation_invariance_of_disjoint_components() {
        let a = plane_with_blocks(&[(0, 0), (20, 20), (40, 8)]);
        let b = plane_with_blocks(&[(5, 30), (50, 50), (12, 3)]);
        assert_eq!(
            count_structures(a.view(), 0.5).unwrap(),
            count_structures(b.view(), 0.5).unwrap()
        );
    }

    #[test]
    fn describe_renders_counts() {
        let mut spatial = SpatialFeatures::zeros();
        let cfg = DescriberConfig::default();
        assert_eq!(describe(&spatial, &cfg).unwrap(), "no buildings");

        let blocks = plane_with_blocks(&[(0, 0), (6, 6), (12, 12), (20, 20), (30, 30)]);
        spatial.plane_mut(0).assign(&blocks);
        assert_eq!(describe(&spatial, &cfg).unwrap(), "5 buildings");
        assert_eq!(describe(&spatial, &cfg).unwrap(), "5 buildings");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn sparse_plane() -> impl Strategy<Value = Array2<f32>> {
            prop::collection::vec((0usize..SPATIAL_SIZE, 0usize..SPATIAL_SIZE, 0.0f32..1.0), 0..200)
                .prop_map(|cells| {
                    let mut plane = Array2::zeros((SPATIAL_SIZE, SPATIAL_SIZE));
                    for (r, c, v) in cells {
                        plane[[r, c]] = v;
                    }
                    plane
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn union_find_agrees_with_flood_fill(plane in sparse_plane(), threshold in 0.0f32..1.0) {
                prop_assert_eq!(
                    count_structures(plane.view(), threshold).unwrap(),
                    flood_fill_count(&plane, threshold)
                );
            }

            #[test]
            fn lowering_threshold_only_grows_the_active_set(plane in sparse_plane()) {
                // The count itself may move either way (merges vs new
                // cells); the active-cell set must be monotone.
                let high: Vec<bool> = plane.iter().map(|&v| v > 0.6).collect();
                let low: Vec<bool> = plane.iter().map(|&v| v > 0.3).collect();
                for (h, l) in high.iter().zip(&low) {
                    prop_assert!(!h || *l);
                }
                // And both counts still agree with the oracle.
                prop_assert_eq!(
                    count_structures(plane.view(), 0.6).unwrap(),
                    flood_fill_count(&plane, 0.6)
                );
                prop_assert_eq!(
                    count_structures(plane.view(), 0.3).unwrap(),
                    flood_fill_count(&plane, 0.3)
                );
            }
        }
    }
}
