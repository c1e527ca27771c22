use proptest::prelude::*;

use ibmls_core::config::parse_config;
use ibmls_core::coupling::build_stencil;
use ibmls_core::grid::Grid;
use ibmls_core::kernel::{Kernel, KernelKind};
use ibmls_core::mls::{generating_weights, shift_cvs, shift_ncvs};

const KINDS: [KernelKind; 6] = [
    KernelKind::ThreePoint,
    KernelKind::PeskinFour,
    KernelKind::Rbf,
    KernelKind::CubicSplineTwo,
    KernelKind::SplineFive,
    KernelKind::SplineSix,
];

proptest! {
    #[test]
    fn kernels_are_even_and_compact(k in 0usize..6, r in -4.0f64..4.0) {
        let kernel = Kernel::new(KINDS[k]).unwrap();
        prop_assert_eq!(kernel.eval1d(r), kernel.eval1d(-r));
        if r.abs() >= kernel.half_support() {
            prop_assert_eq!(kernel.eval1d(r), 0.0);
        }
    }

    #[test]
    fn moment_kernels_partition_unity(k in 1usize..3, alpha in 0.0f64..1.0) {
        let kind = [KernelKind::PeskinFour, KernelKind::SplineFive, KernelKind::SplineSix][k];
        let kernel = Kernel::new(kind).unwrap();
        let s: f64 = (-4..=4).map(|j| kernel.eval1d(j as f64 - alpha)).sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_plane_weights_reproduce_and_shift(
        x in -0.4f64..0.4,
        y in -0.4f64..0.4,
        theta in 0.0f64..std::f64::consts::TAU,
    ) {
        let g = Grid::new(&[32, 32], &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let k = Kernel::new(KernelKind::PeskinFour).unwrap();
        let mut st = build_stencil([x, y, 0.0], &g, &k, None, [false; 3]);
        let n = [theta.cos(), theta.sin()];
        st.mask = st.points.iter().map(|p| (p[0] - x) * n[0] + (p[1] - y) * n[1] >= 0.0).collect();
        let gw = generating_weights(&st, 0).unwrap();
        let sum: f64 = gw.psi.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        for shifted in [shift_cvs(&gw, &st.mask).unwrap(), shift_ncvs(&gw, &st.mask).unwrap()] {
            let pm = shifted.psi_m.unwrap();
            prop_assert!((pm.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (v, h) in pm.iter().zip(&st.mask) {
                prop_assert!(*v >= 0.0);
                if !h {
                    prop_assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn config_rejects_nonpositive_cfl(cfl in -10.0f64..=0.0) {
        let text = format!("case = \"taylor_green_cylinder\"\ntime.cfl = {cfl:?}");
        prop_assert!(parse_config(&text).is_err());
    }

    #[test]
    fn config_accepts_positive_cfl(cfl in 1e-3f64..1.0) {
        let text = format!("case = \"taylor_green_cylinder\"\n[time]\ncfl = {cfl:?}");
        prop_assert_eq!(parse_config(&text).unwrap().params.cfl, cfl);
    }
}
