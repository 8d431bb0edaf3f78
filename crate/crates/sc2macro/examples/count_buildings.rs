//! Count structures on a map plane with 4-connected component labeling
//! and render the prompt line the describer produces.
//!
//! ```bash
//! cargo run --example count_buildings
//! ```

use ndarray::Array2;
use sc2macro::replay::{SpatialFeatures, SPATIAL_SIZE};
use sc2macro::spatial::{count_structures, describe, DescriberConfig};

fn main() -> sc2macro::Result<()> {
    let mut plane = Array2::<f32>::zeros((SPATIAL_SIZE, SPATIAL_SIZE));
    // Three separate 2x2 structures, one of them only diagonally adjacent
    // to a fourth: diagonal contact does not merge under 4-connectivity.
    for (r, c) in [(4, 4), (4, 10), (20, 20), (22, 22)] {
        for dr in 0..2 {
            for dc in 0..2 {
                plane[[r + dr, c + dc]] = 1.0;
            }
        }
    }
    let count = count_structures(plane.view(), 0.5)?;
    println!("components above threshold 0.5: {count}");

    let mut spatial = SpatialFeatures::zeros();
    spatial.plane_mut(0).assign(&plane);
    let cfg = DescriberConfig::default();
    println!("describer says: {:?}", describe(&spatial, &cfg)?);

    let empty = SpatialFeatures::zeros();
    println!("empty plane says: {:?}", describe(&empty, &cfg)?);
    Ok(())
}
