use voxfit_core::volume::{load_nifti, save_nifti, NiftiDataType, VolumeGeometry, WriteOptions};

use crate::{ensure, Check};

fn patch_f32(bytes: &mut [u8], at: usize, v: f32, little: bool) {
    let b = if little { v.to_le_bytes() } else { v.to_be_bytes() };
    bytes[at..at + 4].copy_from_slice(&b);
}

pub fn a11_round_trip() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let affine = [
        [-1.5, 0.0, 0.0, 90.0],
        [0.0, 2.0, 0.25, -126.0],
        [0.0, 0.0, 2.5, -72.0],
        [0.0, 0.0, 0.0, 1.0],
    ];
    let g = VolumeGeometry::with_affine([5, 4, 3], affine).map_err(|e| e.to_string())?;
    let n = g.n_voxels() * 2;
    let mut cases = 0;
    for dt in [NiftiDataType::Float32, NiftiDataType::Float64, NiftiDataType::Int16] {
        let data: Vec<f64> = (0..n)
            .map(|i| {
                let v = (i as f64 * 0.37).sin() * 3000.0 - 7.0;
                match dt {
                    NiftiDataType::Float32 => v as f32 as f64,
                    NiftiDataType::Int16 => v.round(),
                    _ => v + 1e-9 * i as f64,
                }
            })
            .collect();
        for little in [true, false] {
            for ext in ["nii", "nii.gz"] {
                let path = tmp.path().join(format!("{dt:?}-{little}.{ext}"));
                let opts = WriteOptions { datatype: dt, little_endian: little, descrip: "acceptance".into() };
                save_nifti(&path, &g, &data, &opts).map_err(|e| e.to_string())?;
                let back = load_nifti(&path).map_err(|e| e.to_string())?;
                ensure!(back.data == data, "{dt:?} little={little} {ext}: data differs");
                ensure!(back.n_volumes == 2, "{dt:?}: {} volumes", back.n_volumes);
                ensure!(back.geometry == g, "{dt:?} little={little}: geometry {:?}", back.geometry);
                cases += 1;
            }

            let path = tmp.path().join(format!("scaled-{dt:?}-{little}.nii"));
            let opts = WriteOptions { datatype: dt, little_endian: little, descrip: String::new() };
            save_nifti(&path, &g, &data, &opts).map_err(|e| e.to_string())?;
            let mut bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
            patch_f32(&mut bytes, 112, 0.25, little);
            patch_f32(&mut bytes, 116, -3.0, little);
            std::fs::write(&path, &bytes).map_err(|e| e.to_string())?;
            let back = load_nifti(&path).map_err(|e| e.to_string())?;
            for (a, b) in back.data.iter().zip(&data) {
                let expect = b * 0.25 - 3.0;
                ensure!((a - expect).abs() <= 1e-12 * expect.abs().max(1.0), "{dt:?}: scaled {a} vs {expect}");
            }
        }
    }
    Ok(format!("{cases} round trips exact (f32/f64/i16, both byte orders, raw and gzip); slope/intercept applied"))
}
