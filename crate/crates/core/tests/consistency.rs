use csbeam::beamformers::cb;
use csbeam::geometry::{make_grid, subsample_sensors, spiral_array, Extent, Position};
use csbeam::signal_sim::{estimate_csm, synthesize, to_snapshots, vectorize_csm, CrossSpectralMatrix, Source, SourceScene, TimeSeries, Window};
use csbeam::wave_model::{lift_steering_matrix, steering_matrix, DEFAULT_SPEED_OF_SOUND, C64};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const FS: f64 = 48_000.0;
const BLOCK: usize = 480;

#[test]
fn estimated_csm_matches_lifted_column() {
    let array = subsample_sensors(&spiral_array(56, 7, 0.5).unwrap(), 10, 42).unwrap();
    let grid = make_grid(Extent::new(-1.0, 1.0, -1.0, 1.0), 21, 21, 1.0).unwrap();
    let k = grid.nearest(&Position::new(0.2, -0.3, 1.0));
    let scene = SourceScene::new(vec![Source::tone(grid.point(k), 5000.0, 1.0)]).unwrap();
    // 100 blocks without overlap
    let ts = synthesize(&scene, &array, FS, 100.0 * BLOCK as f64 / FS, DEFAULT_SPEED_OF_SOUND, 0).unwrap();
    let snaps = to_snapshots(&ts, BLOCK, 5000.0, Window::Rectangular, 0.0).unwrap();
    assert_eq!(snaps.len(), 100);
    let r = vectorize_csm(&estimate_csm(&snaps));
    let g = steering_matrix(&array, &grid, 5000.0, DEFAULT_SPEED_OF_SOUND).unwrap();
    let lifted = lift_steering_matrix(&g);
    let column = lifted.entries().column(k).into_owned();
    assert!((&r - column).norm() / r.norm() < 1e-3);
}

#[test]
fn cb_recovers_unit_power_from_exact_csm() {
    let array = spiral_array(56, 7, 0.5).unwrap();
    let grid = make_grid(Extent::new(-1.0, 1.0, -1.0, 1.0), 21, 21, 1.0).unwrap();
    let g = steering_matrix(&array, &grid, 5000.0, DEFAULT_SPEED_OF_SOUND).unwrap();
    for k in [0, 220, 333] {
        let gk = g.column(k);
        let csm = CrossSpectralMatrix::from_entries(&gk * gk.adjoint(), 1, 5000.0).unwrap();
        let map = cb(&csm, &g).unwrap();
        assert!((map.values()[k] - 1.0).abs() < 1e-3);
        assert_eq!(map.argmax(), k);
    }
}

fn white_noise(channels: usize, len: usize, seed: u64) -> TimeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..channels)
        .map(|_| (0..len).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect())
        .collect();
    TimeSeries::new(data, FS).unwrap()
}

fn mean_csm_error(blocks: usize) -> f64 {
    let m = 4;
    let seeds = 40;
    let mut total = 0.0;
    for seed in 0..seeds {
        let ts = white_noise(m, blocks * BLOCK, seed);
        let snaps = to_snapshots(&ts, BLOCK, 5000.0, Window::Rectangular, 0.0).unwrap();
        let expected = DMatrix::<C64>::identity(m, m) * C64::from(snaps.bin_noise_variance(1.0));
        total += (estimate_csm(&snaps).entries() - expected).norm();
    }
    total / seeds as f64
}

#[test]
fn csm_noise_decays_as_inverse_root_block_count() {
    // 16x more blocks -> 4x less Frobenius error
    let ratio = mean_csm_error(16) / mean_csm_error(256);
    assert!((ratio - 4.0).abs() < 0.6, "ratio {ratio}");
}
