use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxfit_core::maps::{cluster_filter, label_components, Connectivity, Provenance, StatMap};
use voxfit_core::metrics::Polarity;
use voxfit_core::volume::VolumeGeometry;

use crate::oracle::flood_fill_labels;
use crate::{ensure, Check};

fn compare_all() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA8);
    let conns = [(Connectivity::Six, 1), (Connectivity::Eighteen, 2), (Connectivity::TwentySix, 3)];
    let mut components = 0usize;
    for inst in 0..100 {
        let dims = if inst == 0 {
            [32, 32, 32]
        } else {
            [rng.random_range(1..=32), rng.random_range(1..=32), rng.random_range(1..=32)]
        };
        let n: usize = dims.iter().product();
        let density = rng.random_range(0.05..0.7);
        let present: Vec<bool> = (0..n).map(|_| rng.random_bool(density)).collect();
        for (conn, l1) in conns {
            let oracle = flood_fill_labels(&present, dims, l1);
            let ours = label_components(&present, dims, conn);
            ensure!(ours.labels == oracle, "instance {inst} {dims:?}: labels differ at connectivity {}", conn.neighbours());
            let n_comp = oracle.iter().copied().max().unwrap_or(0) as usize;
            let mut sizes = vec![0usize; n_comp];
            for &l in oracle.iter().filter(|&&l| l > 0) {
                sizes[l as usize - 1] += 1;
            }
            ensure!(ours.sizes == sizes, "instance {inst}: sizes differ");
            components += n_comp;

            let min = rng.random_range(1..30);
            let geometry = VolumeGeometry::new(dims, [1.0; 3]).map_err(|e| e.to_string())?;
            let values: Vec<f64> = present.iter().map(|&p| if p { 0.01 } else { f64::NAN }).collect();
            let map = StatMap::new(geometry, values, "f-pvalue", Polarity::LowerBetter, Provenance::default())
                .map_err(|e| e.to_string())?;
            let kept = cluster_filter(&map, min, conn).map_err(|e| e.to_string())?;
            for (v, &l) in oracle.iter().enumerate() {
                let expect = l > 0 && sizes[l as usize - 1] >= min;
                ensure!(!kept.values[v].is_nan() == expect, "instance {inst}: filter disagrees at voxel {v}");
            }
        }
    }
    Ok(format!("100 volumes × 3 connectivities, {components} components matched exactly"))
}

pub fn a8_flood_fill_oracle() -> Check {
    // the recursive oracle can go 32³ frames deep
    std::thread::Builder::new()
        .stack_size(1 << 30)
        .spawn(compare_all)
        .map_err(|e| e.to_string())?
        .join()
        .map_err(|_| "oracle thread panicked".to_string())?
}
