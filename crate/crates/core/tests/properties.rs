//! Property tests: grid-format round-trips are bit-exact for arbitrary
//! fields, and the bathtub maximizer dominates every feasible mask.

use heatpack::design::bathtub_max;
use heatpack::grid::{BoxDomain, FieldValues, GridField};
use proptest::prelude::*;

fn finite_f64() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e12..1e12f64,
        -1.0..1.0f64,
        Just(0.0),
        Just(1.0e-300),
        Just(-2.2250738585072014e-308),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_round_trip_is_bit_exact(values in prop::collection::vec(finite_f64(), 1..48)) {
        let n = values.len();
        let dom = BoxDomain::new(vec![-1.25], vec![3.5]).unwrap();
        let field = GridField {
            domain: dom,
            res: vec![n],
            values: FieldValues::Real(values.clone()),
        };
        let back = GridField::read_text(&field.write_text()).unwrap();
        let rv = back.real();
        for (a, b) in values.iter().zip(rv) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        // re-serialization is byte-identical
        prop_assert_eq!(field.write_text(), back.write_text());
    }

    #[test]
    fn bathtub_dominates_random_feasible_masks(
        phi_vals in prop::collection::vec(0.0..10.0f64, 12),
        raw_mask in prop::collection::vec(0.0..1.0f64, 12),
        m in 0.05..0.95f64,
    ) {
        let dom = BoxDomain::new(vec![0.0], vec![1.0]).unwrap();
        let phi = GridField {
            domain: dom.clone(),
            res: vec![12],
            values: FieldValues::Real(phi_vals.clone()),
        };
        let tub = bathtub_max(&phi, m).unwrap();
        let vol = phi.cell_volume();
        let best: f64 = tub.mask.real().iter().zip(&phi_vals).map(|(a, p)| a * p).sum();

        // project the random mask onto the budget by scaling
        let budget = m * dom.volume() / vol;
        let total: f64 = raw_mask.iter().sum();
        if total > 0.0 {
            let scale = (budget / total).min(1.0);
            let a: Vec<f64> = raw_mask.iter().map(|v| v * scale).collect();
            let mass: f64 = a.iter().sum();
            prop_assume!(mass <= budget + 1e-12);
            let v: f64 = a.iter().zip(&phi_vals).map(|(ai, p)| ai * p).sum();
            prop_assert!(v <= best + 1e-9 * best.abs().max(1.0));
        }
    }
}

mod cross_checks {
    use heatpack::grid::{BoxDomain, FieldValues, GridField, ObservationSet};
    use heatpack::oracle::fd_solve;
    use heatpack::packet::{superpose, superpose_grid, Frame, FrameParams, HeatPacket, TruncationMode};
    use heatpack::BumpSpec;
    use nalgebra::DMatrix;
    use num_complex::Complex64;

    /// Synthetic narrow-packet frame whose superposition vanishes at the
    /// boundary of (-2, 2) to FD precision.
    fn narrow_frame() -> Frame {
        let set: Vec<Vec<i64>> = (-2i64..=2).map(|n| vec![n]).collect();
        let coefficients = vec![
            Complex64::new(0.4, 0.1),
            Complex64::new(-0.2, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(-0.2, 0.0),
            Complex64::new(0.4, -0.1),
        ];
        Frame {
            bump: BumpSpec::new(0.1, vec![0.0], 0.5),
            params: FrameParams {
                sigma: 0.25,
                lattice_l: 0.5,
                epsilon: 1e-3,
                eta: 0.1,
                k: 1,
                mode: TruncationMode::Box,
                set,
            },
            coefficients,
            measured_error: f64::NAN,
        }
    }

    #[test]
    fn superpose_evolution_matches_fd_oracle() {
        // free packet evolution vs the Dirichlet FD solve of the t = 0
        // superposition: interior agreement at small t
        let frame = narrow_frame();
        let dom = BoxDomain::new(vec![-2.0], vec![2.0]).unwrap();
        let res = [512usize];
        let t = 0.01;
        let at0 = superpose_grid(&frame, 0.0, &dom, &res).unwrap();
        let re0 = GridField {
            domain: dom.clone(),
            res: res.to_vec(),
            values: FieldValues::Real(at0.iter().map(|z| z.re).collect()),
        };
        let im0 = GridField {
            domain: dom.clone(),
            res: res.to_vec(),
            values: FieldValues::Real(at0.iter().map(|z| z.im).collect()),
        };
        let sol_re = fd_solve(&re0, t, &[t]).unwrap();
        let sol_im = fd_solve(&im0, t, &[t]).unwrap();
        let proto = GridField::zeros(dom.clone(), res.to_vec()).unwrap();
        let mut worst = 0.0f64;
        for (i, x) in proto.cell_centers().enumerate() {
            if dom.distance_to_boundary(&x) < 0.25 {
                continue;
            }
            let free = superpose(&frame, t, &x);
            let fd = Complex64::new(
                sol_re.snapshots[0].1.real()[i],
                sol_im.snapshots[0].1.real()[i],
            );
            worst = worst.max((free - fd).norm());
        }
        assert!(worst < 5e-4, "interior mismatch {worst}");
    }

    #[test]
    fn gramian_operator_norm_bounded_by_time_sup() {
        // G <= T * sup_t (spatial Gram) in operator norm, on a 5-index pencil
        let frame = narrow_frame();
        let dom = BoxDomain::new(vec![-2.0], vec![2.0]).unwrap();
        let omega = ObservationSet::half_space(dom.clone(), vec![128], 0, 0.0).unwrap();
        let t_end = 0.05;
        let packets: Vec<HeatPacket> =
            frame.params.set.iter().map(|n| frame.packet(n)).collect();
        let pencil = heatpack::gramian::assemble_pencil(
            &packets,
            &frame.params.set,
            &omega,
            &dom,
            &[128],
            t_end,
        )
        .unwrap();
        let g_max = pencil
            .g
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        // spatial Gram at sampled times by cell quadrature over the mask
        let mask = omega.mask().unwrap();
        let vol = mask.cell_volume();
        let mut sup_spatial = 0.0f64;
        for k in 0..=10 {
            let t = t_end * k as f64 / 10.0;
            let mut s = DMatrix::<Complex64>::zeros(5, 5);
            for (i, pi) in packets.iter().enumerate() {
                for (j, pj) in packets.iter().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (c, x) in mask.cell_centers().enumerate() {
                        if mask.real()[c] > 0.0 {
                            acc += pi.value(t, &x) * pj.value(t, &x).conj()
                                * mask.real()[c]
                                * vol;
                        }
                    }
                    s[(i, j)] = acc;
                }
            }
            let lam = s
                .symmetric_eigenvalues()
                .iter()
                .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            sup_spatial = sup_spatial.max(lam);
        }
        assert!(
            g_max <= t_end * sup_spatial * (1.0 + 1e-6),
            "{} vs {}",
            g_max,
            t_end * sup_spatial
        );
    }
}
