mod common;

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tramnav::estimation::{
    iekf_update, predict, IekfConfig, LinearModel, MeasurementBlock, StateEstimate, StateMatrix,
    StateVector, TransitionModel, CLOCK_BIAS, CLOCK_DRIFT, POS, VEL,
};
use tramnav::frames::{
    ecef_cov_to_enu, ecef_to_geodetic, enu_rotation, enu_to_ecef_vector, geodetic_to_ecef,
    GeodeticPosition,
};
use tramnav::gnss::{
    doppler_jacobian_row, doppler_predict, iono_free_pseudorange, line_of_sight,
    measurement_variance, pseudorange_block, pseudorange_jacobian_row, pseudorange_predict,
    CorrectedObservation,
};
use tramnav::io::{format_float, load_initial_state, write_initial_state};
use tramnav::mixing::{mix, mix_epoch, predicted_measurement_variance};
use tramnav::track::{soft_constraint_measurement, SoftConstraintConfig, TrackMap, DEFAULT_CELL_SIZE};

use common::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn linear_block<R: Rng>(rng: &mut R, m: usize) -> MeasurementBlock {
    MeasurementBlock::linear(
        "linear",
        random_vector(rng, m, 50.0),
        random_spd(rng, m, 4.0, 0.3),
        LinearModel::with_offset(random_jacobian(rng, m), random_vector(rng, m, 5.0)).unwrap(),
    )
    .unwrap()
}

fn min_eigenvalue(p: &StateMatrix) -> f64 {
    p.symmetric_eigenvalues().min()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn line_searched_cost_never_increases(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = r.random_range(4..=8);
        let site = random_geometry(&mut r).site;
        let truth = geodetic_to_ecef(&site);
        let sats: Vec<_> = (0..m)
            .map(|_| {
                let az: f64 = r.random_range(0.0..std::f64::consts::TAU);
                let el: f64 = r.random_range(0.2..1.5);
                truth + enu_to_ecef_vector(&Vector3::new(az.sin() * el.cos(), az.cos() * el.cos(), el.sin()), &site) * 2.0e7
            })
            .collect();
        let values: Vec<f64> = sats.iter().map(|s| (truth - s).norm() + r.random_range(-10.0..10.0)).collect();
        let mut mean = StateVector::zeros();
        mean.fixed_rows_mut::<3>(POS).copy_from(&(truth + Vector3::from_fn(|_, _| r.random_range(-5000.0..5000.0))));
        let prior = StateEstimate::new(mean, random_state_matrix(&mut r, 1.0e4, 1.0)).unwrap();
        let block = pseudorange_block(sats, values, &vec![5.0; m]).unwrap();
        let (_, diag) = iekf_update(&prior, &[block], &IekfConfig::default()).unwrap();
        prop_assert_eq!(diag.costs.len(), diag.iterations + 1);
        for w in diag.costs.windows(2) {
            prop_assert!(w[1] <= w[0], "cost rose from {} to {}", w[0], w[1]);
        }
    }

    #[test]
    fn affine_update_matches_kalman_oracle(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = r.random_range(1..=12);
        let x = random_state(&mut r, 100.0);
        let p = random_state_matrix(&mut r, 30.0, 0.5);
        let block = linear_block(&mut r, m);
        let h = block.jacobian(&x).unwrap();
        let hd = DMatrix::from_column_slice(m, 8, h.as_slice());
        let offset = block.predict(&StateVector::zeros()).unwrap();
        let (xo, po) = kalman_oracle(&x, &p, &hd, &offset, &block.covariance, &block.values);
        let prior = StateEstimate::new(x, p).unwrap();
        let (post, diag) = iekf_update(&prior, &[block], &IekfConfig::default()).unwrap();
        prop_assert!(diag.converged);
        prop_assert!(diag.iterations <= 2);
        prop_assert_eq!(diag.alphas[0], 1.0);
        prop_assert!(relative_error(post.mean.as_slice(), xo.as_slice()) < 1e-9);
        prop_assert!(relative_error(post.covariance.as_slice(), po.as_slice()) < 1e-9);
    }

    #[test]
    fn posterior_covariance_stays_psd(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_state_matrix(&mut r, 100.0, 0.01);
        let prior = StateEstimate::new(random_state(&mut r, 10.0), p).unwrap();
        let blocks: Vec<_> = (0..r.random_range(1..=3)).map(|_| {
            let m = r.random_range(1..=6);
            linear_block(&mut r, m)
        }).collect();
        let (post, _) = iekf_update(&prior, &blocks, &IekfConfig::default()).unwrap();
        prop_assert!(min_eigenvalue(&post.covariance) >= -1e-9 * post.covariance.trace());
        prop_assert_eq!(post.covariance, post.covariance.transpose());
    }

    #[test]
    fn block_order_does_not_matter(seed in any::<u64>()) {
        let mut r = rng(seed);
        let prior = StateEstimate::new(random_state(&mut r, 10.0), random_state_matrix(&mut r, 20.0, 0.5)).unwrap();
        let blocks: Vec<_> = (0..3).map(|_| {
            let m = r.random_range(1..=4);
            linear_block(&mut r, m)
        }).collect();
        let reversed: Vec<_> = blocks.iter().rev().cloned().collect();
        let rotated = vec![blocks[1].clone(), blocks[2].clone(), blocks[0].clone()];
        let config = IekfConfig::default();
        let (a, _) = iekf_update(&prior, &blocks, &config).unwrap();
        for other in [reversed, rotated] {
            let (b, _) = iekf_update(&prior, &other, &config).unwrap();
            prop_assert!(relative_error(b.mean.as_slice(), a.mean.as_slice()) < 1e-9);
            prop_assert!(relative_error(b.covariance.as_slice(), a.covariance.as_slice()) < 1e-9);
        }
    }

    #[test]
    fn orthogonal_transition_preserves_trace(seed in any::<u64>()) {
        let mut r = rng(seed);
        let q = random_spd(&mut r, 8, 1.0, 0.1).symmetric_eigen().eigenvectors;
        let model = TransitionModel {
            transition_matrix: StateMatrix::from_column_slice(q.as_slice()),
            process_noise: StateMatrix::zeros(),
            dt: 1.0,
        };
        let prior = StateEstimate::new(random_state(&mut r, 10.0), random_state_matrix(&mut r, 50.0, 0.5)).unwrap();
        let next = predict(&prior, &model).unwrap();
        let (a, b) = (prior.covariance.trace(), next.covariance.trace());
        prop_assert!((a - b).abs() <= 1e-9 * a);
    }

    #[test]
    fn observation_jacobians_match_finite_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_geometry(&mut r);
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(POS).copy_from(&g.receiver);
        x.fixed_rows_mut::<3>(VEL).copy_from(&Vector3::from_fn(|_, _| r.random_range(-30.0..30.0)));
        x[CLOCK_BIAS] = r.random_range(-1e4..1e4);
        x[CLOCK_DRIFT] = r.random_range(-5.0..5.0);
        let steps = [1.0, 1.0, 1.0, 1e-3, 1e-3, 1e-3, 1e-3, 1e-3];
        let fd = |f: &dyn Fn(&StateVector) -> f64, j: usize| {
            let mut e = StateVector::zeros();
            e[j] = steps[j];
            (f(&(x + e)) - f(&(x - e))) / (2.0 * steps[j])
        };
        let pr = pseudorange_jacobian_row(&x, &g.satellite).unwrap();
        let dr = doppler_jacobian_row(&x, &g.satellite, &g.sat_velocity).unwrap();
        let fp = |y: &StateVector| pseudorange_predict(y, &g.satellite).unwrap();
        let fdop = |y: &StateVector| doppler_predict(y, &g.satellite, &g.sat_velocity).unwrap();
        for (row, f) in [(pr, &fp as &dyn Fn(&StateVector) -> f64), (dr, &fdop)] {
            for group in [0..3, 3..6, 6..7, 7..8] {
                let scale = row[group.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
                let diff = group.clone().map(|j| (row[j] - fd(f, j)).powi(2)).sum::<f64>().sqrt();
                prop_assert!(diff <= 1e-4 * scale.max(1e-12), "group {:?}: {} vs scale {}", group, diff, scale);
            }
        }
    }

    #[test]
    fn variance_decreases_with_elevation(cn0 in 0.0..60.0f64, e1 in 0.01..FRAC_PI_2, e2 in 0.01..FRAC_PI_2) {
        prop_assume!((e1 - e2).abs() > 1e-6);
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(measurement_variance(cn0, hi).unwrap() < measurement_variance(cn0, lo).unwrap());
    }

    #[test]
    fn variance_decreases_with_cn0(c1 in 10.0..=50.0f64, c2 in 10.0..=50.0f64, el in 0.05..=FRAC_PI_2) {
        prop_assume!((c1 - c2).abs() > 1e-6);
        let (lo, hi) = if c1 < c2 { (c1, c2) } else { (c2, c1) };
        prop_assert!(measurement_variance(hi, el).unwrap() < measurement_variance(lo, el).unwrap());
    }

    #[test]
    fn iono_free_removes_inverse_square_delay(
        rho in 2.0e7..2.6e7f64,
        k in 0.0..5.0e19f64,
        f1 in 1.1e9..1.6e9f64,
        ratio in 1.05..1.5f64,
    ) {
        let f2 = f1 / ratio;
        let out = iono_free_pseudorange(rho + k / (f1 * f1), rho + k / (f2 * f2), f1, f2).unwrap();
        prop_assert!((out - rho).abs() < 1e-9 * rho.max(1.0) + 1e-6, "{} vs {}", out, rho);
    }

    #[test]
    fn line_of_sight_is_translation_invariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_geometry(&mut r);
        let shift = Vector3::from_fn(|_, _| r.random_range(-1.0e6..1.0e6));
        let a = line_of_sight(&g.receiver, &g.satellite).unwrap();
        let b = line_of_sight(&(g.receiver + shift), &(g.satellite + shift)).unwrap();
        prop_assert!((a - b).norm() < 1e-9);
        prop_assert!((a.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mixed_mean_is_a_convex_combination(
        zm in -1e3..1e3f64, zp in -1e3..1e3f64, rm in 1e-3..1e3f64, rp in 1e-3..1e3f64,
    ) {
        let m = mix(zm, rm, zp, rp).unwrap();
        let slack = 1e-12 * (zm.abs() + zp.abs() + 1.0);
        prop_assert!(m.mean >= zm.min(zp) - slack && m.mean <= zm.max(zp) + slack);
        prop_assert!((m.weight_measurement + m.weight_prediction - 1.0).abs() < 1e-15);
        // second moment of the two-component mixture about its own mean
        let second = m.weight_measurement * (rm + zm * zm) + m.weight_prediction * (rp + zp * zp);
        let variance = second - m.mean * m.mean;
        prop_assert!((m.variance - variance).abs() <= 1e-9 * (second.abs() + 1.0));
        let floor = m.weight_measurement * rm + m.weight_prediction * rp;
        prop_assert!(m.variance >= floor * (1.0 - 1e-12));
        if zm != zp {
            prop_assert!(m.variance > floor);
        }
    }

    #[test]
    fn agreeing_measurement_is_not_inflated(z in -1e7..1e7f64, rm in 1e-3..1e3f64, rp in 1e-3..1e3f64) {
        let m = mix(z, rm, z, rp).unwrap();
        prop_assert_eq!(m.mean, z);
        prop_assert!(m.variance <= rm.max(rp) * (1.0 + 1e-12));
    }

    #[test]
    fn trust_limits(zm in -1e3..1e3f64, zp in -1e3..1e3f64, r in 1e-2..1e2f64) {
        let sure = mix(zm, 1e-4, zp, r).unwrap();
        prop_assert!(sure.weight_measurement > 1.0 - 1e-2 / r.max(1e-2));
        prop_assert!((sure.mean - zm).abs() <= (zm - zp).abs() * 1e-4 / r * 1.01);
        let vague = mix(zm, 1e12, zp, r).unwrap();
        prop_assert!(vague.weight_measurement < 1e-9);
        prop_assert!((vague.mean - zp).abs() <= (zm - zp).abs() * 1e-9 + 1e-12);
    }

    #[test]
    fn geodetic_round_trip(lat in -90.0..=90.0f64, lon in -180.0..=180.0f64, h in -100.0..=10_000.0f64) {
        let g = GeodeticPosition::from_degrees(lat, lon, h).unwrap();
        let p = geodetic_to_ecef(&g);
        let back = ecef_to_geodetic(&p).unwrap();
        prop_assert!((geodetic_to_ecef(&back) - p).norm() < 1e-6);
        prop_assert!((back.height - h).abs() < 1e-6);
    }

    #[test]
    fn enu_rotation_is_proper(lat in -90.0..=90.0f64, lon in -180.0..=180.0f64) {
        let t = enu_rotation(&GeodeticPosition::from_degrees(lat, lon, 0.0).unwrap());
        prop_assert!((t * t.transpose() - Matrix3::identity()).amax() < 1e-12);
        prop_assert!((t.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_rotation_keeps_spectrum(seed in any::<u64>(), lat in -90.0..=90.0f64, lon in -180.0..=180.0f64) {
        let mut r = rng(seed);
        let s = random_spd(&mut r, 3, 100.0, 0.1);
        let s = Matrix3::from_column_slice(s.as_slice());
        let e = ecef_cov_to_enu(&s, &GeodeticPosition::from_degrees(lat, lon, 0.0).unwrap()).unwrap();
        prop_assert!((e.trace() - s.trace()).abs() <= 1e-9 * s.trace());
        let mut a: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
        let mut b: Vec<f64> = e.symmetric_eigenvalues().iter().copied().collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * a[2]);
        }
    }

    #[test]
    fn floats_round_trip_through_text(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn index_matches_exhaustive_scan(seed in any::<u64>(), radius in 5.0..300.0f64) {
        let mut r = rng(seed);
        let extent = 1500.0;
        let (map, site) = random_track_map(&mut r, 8, 40, extent);
        for _ in 0..50 {
            let q = random_query(&mut r, &site, extent, 300.0);
            let a = map.nearest_projection(&q, radius);
            let b = map.nearest_projection_exhaustive(&q, radius);
            match (a, b) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    prop_assert_eq!(a.segment_id, b.segment_id);
                    prop_assert!((a.point - b.point).norm() <= 1e-9);
                    prop_assert!((a.distance - b.distance).abs() <= 1e-9);
                }
                (a, b) => prop_assert!(false, "index {:?} vs scan {:?}", a, b),
            }
        }
    }

    #[test]
    fn soft_constraint_only_attracts(seed in any::<u64>()) {
        let mut r = rng(seed);
        let site = GeodeticPosition::from_degrees(r.random_range(-60.0..60.0), r.random_range(-180.0..180.0), 0.0).unwrap();
        let base = geodetic_to_ecef(&site);
        let heading: f64 = r.random_range(0.0..std::f64::consts::TAU);
        let dir = enu_to_ecef_vector(&Vector3::new(heading.sin(), heading.cos(), 0.0), &site);
        let line: Vec<_> = (-50..=50).map(|k| base + dir * (k as f64 * 20.0)).collect();
        let map = TrackMap::build(vec![line], DEFAULT_CELL_SIZE).unwrap();
        let offset = Vector3::new(r.random_range(-60.0..60.0), r.random_range(-60.0..60.0), r.random_range(-20.0..20.0));
        let mut mean = random_state(&mut r, 5.0);
        mean.fixed_rows_mut::<3>(POS).copy_from(&(base + enu_to_ecef_vector(&offset, &site)));
        let prior = StateEstimate::new(mean, random_state_matrix(&mut r, 100.0, 1.0)).unwrap();
        let config = SoftConstraintConfig::default();
        let block = soft_constraint_measurement(&prior, &map, &config);
        prop_assume!(block.is_some());
        let (post, _) = iekf_update(&prior, &[block.unwrap()], &IekfConfig::default()).unwrap();
        let before = map.distance_to_track(&prior.position());
        let after = map.distance_to_track(&post.position());
        prop_assert!(after <= before + 1e-9, "distance grew from {} to {}", before, after);
    }

    #[test]
    fn exact_agreement_makes_mixing_a_no_op(seed in any::<u64>()) {
        let mut r = rng(seed);
        let site = random_geometry(&mut r).site;
        let receiver = geodetic_to_ecef(&site);
        let mut mean = random_state(&mut r, 5.0);
        mean.fixed_rows_mut::<3>(POS).copy_from(&receiver);
        let prior = StateEstimate::new(mean, random_state_matrix(&mut r, 20.0, 0.5)).unwrap();
        let observations: Vec<CorrectedObservation> = (0..r.random_range(4..=7))
            .map(|i| {
                let az: f64 = r.random_range(0.0..std::f64::consts::TAU);
                let el: f64 = r.random_range(0.2..1.5);
                let sat = receiver + enu_to_ecef_vector(&Vector3::new(az.sin() * el.cos(), az.cos() * el.cos(), el.sin()), &site) * 2.0e7;
                let los = line_of_sight(&receiver, &sat).unwrap();
                CorrectedObservation {
                    sat_id: format!("S{i}"),
                    sat_position: sat,
                    sat_velocity: Vector3::zeros(),
                    corrected_pseudorange: pseudorange_predict(&prior.mean, &sat).unwrap(),
                    range_rate: None,
                    variance: predicted_measurement_variance(&los, &prior.covariance).unwrap(),
                    elevation: el,
                    line_of_sight: los,
                }
            })
            .collect();
        let mixed = mix_epoch(&observations, &prior).unwrap();
        let sats: Vec<_> = observations.iter().map(|o| o.sat_position).collect();
        let raw = pseudorange_block(
            sats.clone(),
            observations.iter().map(|o| o.corrected_pseudorange).collect(),
            &observations.iter().map(|o| o.variance).collect::<Vec<_>>(),
        ).unwrap();
        let blended = pseudorange_block(
            sats,
            mixed.iter().map(|m| m.mean).collect(),
            &mixed.iter().map(|m| m.variance).collect::<Vec<_>>(),
        ).unwrap();
        for (m, o) in mixed.iter().zip(&observations) {
            prop_assert_eq!(m.mean, o.corrected_pseudorange);
            prop_assert!((m.variance - o.variance).abs() <= 1e-12 * o.variance);
        }
        let config = IekfConfig::default();
        let (a, _) = iekf_update(&prior, &[raw], &config).unwrap();
        let (b, _) = iekf_update(&prior, &[blended], &config).unwrap();
        prop_assert!(relative_error(b.mean.as_slice(), a.mean.as_slice()) < 1e-12);
        prop_assert!(relative_error(b.covariance.as_slice(), a.covariance.as_slice()) < 1e-9);
    }

    #[test]
    fn initial_state_file_round_trips(seed in any::<u64>()) {
        let mut r = rng(seed);
        let estimate = StateEstimate::new(random_state(&mut r, 1e7), random_state_matrix(&mut r, 1e3, 1e-3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.json");
        write_initial_state(&path, &estimate).unwrap();
        let back = load_initial_state(&path).unwrap();
        prop_assert_eq!(back.mean, estimate.mean);
        prop_assert_eq!(back.covariance, estimate.covariance);
    }
}

#[test]
fn constraint_covariance_spectrum_is_the_configured_sigmas() {
    let mut r = rng(11);
    let config = SoftConstraintConfig::default();
    for _ in 0..100 {
        let (map, site) = random_track_map(&mut r, 3, 20, 500.0);
        let q = random_query(&mut r, &site, 500.0, 0.0);
        let Some(block) = soft_constraint_measurement(
            &StateEstimate::new(
                {
                    let mut m = StateVector::zeros();
                    m.fixed_rows_mut::<3>(POS).copy_from(&q);
                    m
                },
                StateMatrix::identity(),
            )
            .unwrap(),
            &map,
            &config,
        ) else {
            continue;
        };
        let mut eig: Vec<f64> = block.covariance.clone().symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        let mut want = [
            config.cross_track_sigma.powi(2),
            config.vertical_sigma.powi(2),
            config.along_track_sigma.powi(2),
        ];
        want.sort_by(f64::total_cmp);
        for (a, b) in eig.iter().zip(want) {
            assert!((a - b).abs() <= 1e-9 * b, "{eig:?} vs {want:?}");
        }
    }
}
