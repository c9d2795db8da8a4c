mod common;

use fastwalk_core::fast::SpectralPack;
use fastwalk_core::image::LabelMap;
use fastwalk_core::phantom::{make_phantom, PhantomKind};
use fastwalk_core::registration::{
    expected_displacement, register, similarity_priors, warp_labels, DisplacementField, DisplacementGrid, NoClock,
    RegisterOptions,
};

fn grid() -> DisplacementGrid {
    DisplacementGrid::new(&[7, 7], 1).unwrap()
}

#[test]
fn self_registration_stays_put() {
    let ph = make_phantom(PhantomKind::ShiftedPair, &[32, 32], 11, 0.02).unwrap();
    let reg = register::<SpectralPack>(&ph.image, &ph.image, None, &grid(), &RegisterOptions::default(), &NoClock).unwrap();
    assert!(reg.displacement.max_norm() <= 0.25, "{}", reg.displacement.max_norm());
    assert_eq!(reg.report.method, "basic");
}

#[test]
fn known_shift_is_recovered_on_the_interior() {
    let ph = make_phantom(PhantomKind::ShiftedPair, &[32, 32], 12, 0.02).unwrap();
    let (moving, _) = ph.moving.clone().unwrap();
    let reg = register::<SpectralPack>(&ph.image, &moving, None, &grid(), &RegisterOptions::default(), &NoClock).unwrap();
    let truth = ph.ground_truth_field().unwrap();
    let err = reg.displacement.mean_endpoint_error(&truth, 3).unwrap();
    assert!(err <= 0.5, "mean endpoint error {err}");
}

#[test]
fn constant_shift_unwarps_labels() {
    let ph = make_phantom(PhantomKind::ShiftedPair, &[32, 32], 13, 0.0).unwrap();
    let (_, moving_labels) = ph.moving.clone().unwrap();
    let truth = ph.ground_truth_field().unwrap();
    let warped = warp_labels(&moving_labels, &truth).unwrap();
    let shift = ph.shift.clone().unwrap();
    let margin = shift.iter().map(|s| s.unsigned_abs() as usize).max().unwrap();
    for y in margin..32 - margin {
        for x in margin..32 - margin {
            let i = y * 32 + x;
            assert_eq!(warped.labels()[i], ph.labels.labels()[i], "voxel ({x},{y})");
        }
    }
}

#[test]
fn zero_field_warp_is_identity() {
    let labels = LabelMap::new(&[4, 3], (0..12).map(|i| (i % 3) as u16).collect()).unwrap();
    let zero = DisplacementField::zeros(&[4, 3]).unwrap();
    assert_eq!(warp_labels(&labels, &zero).unwrap(), labels);
}

#[test]
fn heavy_prior_weight_returns_the_prior_displacement() {
    let ph = make_phantom(PhantomKind::ShiftedPair, &[16, 16], 14, 0.02).unwrap();
    let (moving, _) = ph.moving.clone().unwrap();
    let g = DisplacementGrid::new(&[5, 5], 1).unwrap();
    let opts = RegisterOptions { gamma: 1e7, ..RegisterOptions::default() };
    let reg = register::<SpectralPack>(&ph.image, &moving, None, &g, &opts, &NoClock).unwrap();
    let priors = similarity_priors(&ph.image, &moving, &g, opts.patch_radius).unwrap();
    let want = expected_displacement(&priors, &g).unwrap();
    let worst = reg
        .displacement
        .data()
        .iter()
        .zip(want.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-3, "{worst}");
}

#[test]
fn shifted_patch_difference_picks_the_shift_label() {
    let ph = make_phantom(PhantomKind::ShiftedPair, &[24, 24], 15, 0.0).unwrap();
    let (moving, _) = ph.moving.clone().unwrap();
    let g = grid();
    let shift = ph.shift.clone().unwrap();
    let label = g.label_of(&shift[..2]).unwrap();
    let p = similarity_priors(&ph.image, &moving, &g, 2).unwrap();
    // Brute force: the label with the smallest patch difference is the shift.
    let margin = 3 + 2;
    for y in margin..24 - margin {
        for x in margin..24 - margin {
            let row = p.row(y * 24 + x);
            let best = (0..g.k()).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap();
            assert_eq!(best, label, "voxel ({x},{y})");
        }
    }
}
