//! Property-based checks of conservation laws and symmetries across modules.

use proptest::prelude::*;

use semiclab::crossing::{fit_cosine, transfer_probability};
use semiclab::experiments::coherent_state_1d;
use semiclab::field::WaveField;
use semiclab::grid::SpatialGrid;
use semiclab::potential::{PotentialSpec, ScalarShape};
use semiclab::propagate::{HamiltonianSpec, Nonlinearity, Propagator};
use semiclab::scattering::{
    fourier_on_grid, inverse_fourier_on_grid, nls_scattering, quadrant_masses, self_dual_grid, NlsScatteringOptions,
    Profile,
};
use semiclab::scenarios::ScenarioConfig;
use semiclab::wigner::{density_moment, husimi, wigner_slice, XSelection};
use semiclab::C64;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(cases(12))]

    #[test]
    fn strang_conserves_mass(x0 in -1.0f64..1.0, xi0 in -0.8f64..0.8, a4 in 0.0f64..0.5, g in 0.0f64..2.0) {
        let eps = 0.02;
        let grid = SpatialGrid::new(1, 512, 4.0).unwrap();
        let spec = HamiltonianSpec {
            potential: PotentialSpec::Scalar(ScalarShape::Quartic { a2: 1.0, a4 }),
            nonlinearity: Some(Nonlinearity::with_strength(1.0, 1.0, g).unwrap()),
        };
        let prop = Propagator::new(&grid, eps, eps / 10.0, &spec).unwrap();
        let mut f = coherent_state_1d(grid, eps, x0, xi0);
        let m0 = f.mass();
        prop.run(&mut f, 0.0, 200, |_| false, |_, _, _| Ok(())).unwrap();
        prop_assert!((f.mass() - m0).abs() <= 1e-10 * m0);
    }

    #[test]
    fn wigner_moment_equals_density(c1 in -1.0f64..1.0, c2 in -1.0f64..1.0, w in 0.3f64..0.7, p in -0.5f64..0.5) {
        let eps = 0.1;
        let grid = SpatialGrid::new(1, 512, 8.0).unwrap();
        let f = WaveField::from_fn(grid, |x| {
            let a = (-(x[0] - c1).powi(2) / (2.0 * w * w)).exp();
            let b = 0.5 * (-(x[0] - c2).powi(2) / (w * w)).exp();
            C64::from_polar(a, p * x[0] / eps) + C64::new(b, 0.0)
        });
        let d = wigner_slice(&f, eps, &XSelection::All).unwrap();
        for (m, r) in density_moment(&d).iter().zip(f.density()) {
            prop_assert!((m - r).abs() <= 1e-12);
        }
    }

    #[test]
    fn husimi_is_nonnegative(c in -1.0f64..1.0, s in 0.2f64..0.8, theta in 0.0f64..6.28) {
        let eps = 0.05;
        let grid = SpatialGrid::new(1, 256, 4.0).unwrap();
        let f = WaveField::from_fn(grid, |x| {
            C64::new((-(x[0] - c).powi(2) / (2.0 * s * s)).exp(), 0.0)
                - C64::from_polar(1.0, theta) * (-(x[0] + c).powi(2) / (2.0 * s * s)).exp()
        });
        let h = husimi(&f, eps).unwrap();
        prop_assert!(h.min() >= -1e-12, "{}", h.min());
    }

    #[test]
    fn transfer_probability_is_even_and_bounded(eta in -5.0f64..5.0, v in 0.2f64..3.0) {
        let t = transfer_probability(eta, v).unwrap();
        prop_assert!((0.0..=1.0).contains(&t));
        prop_assert!((t - transfer_probability(-eta, v).unwrap()).abs() <= 1e-15);
    }

    #[test]
    fn cosine_fit_recovers_parameters(a in -2.0f64..2.0, b in 0.1f64..1.0, phi0 in -3.0f64..3.0) {
        let phis: Vec<f64> = (0..8).map(|k| k as f64 * std::f64::consts::PI / 4.0).collect();
        let v: Vec<f64> = phis.iter().map(|p| a + b * (phi0 - p).cos()).collect();
        let f = fit_cosine(&phis, &v).unwrap();
        prop_assert!((f.a - a).abs() <= 1e-10 && (f.b - b).abs() <= 1e-10 && f.rms <= 1e-10);
        let d = (f.phi0 - phi0).rem_euclid(2.0 * std::f64::consts::PI);
        prop_assert!(d.min(2.0 * std::f64::consts::PI - d) <= 1e-9);
    }

    #[test]
    fn quadrant_masses_partition_the_mass(x0 in -3.0f64..3.0, xi0 in -2.0f64..2.0) {
        let grid = SpatialGrid::new(1, 1024, 20.0).unwrap();
        let f = coherent_state_1d(grid, 1.0, x0, xi0);
        let q = quadrant_masses(&f);
        prop_assert!(q.iter().all(|v| *v >= -1e-14));
        prop_assert!((q.iter().sum::<f64>() - f.mass()).abs() <= 1e-10);
    }

    #[test]
    fn self_dual_fourier_is_unitary_and_invertible(amp in 0.1f64..2.0, chirp in -1.0f64..1.0, quartic in -0.5f64..0.5) {
        let g = self_dual_grid(256).unwrap();
        let a = Profile { amplitude: amp, width: 1.0, chirp, quartic }.sample(&g);
        let fa = fourier_on_grid(&a).unwrap();
        prop_assert!((fa.mass() - a.mass()).abs() <= 1e-10 * a.mass());
        prop_assert!(inverse_fourier_on_grid(&fa).unwrap().distance(&a) <= 1e-10);
    }

    #[test]
    fn override_roundtrip(eps in 1e-3f64..1e-1, seed in 0u64..1000) {
        let c = ScenarioConfig::from_json(
            r#"{"scenario": "harmonic-refocus"}"#,
            &[format!("params.eps={eps:e}"), format!("seed={seed}")],
        ).unwrap();
        prop_assert_eq!(c.params["eps"].as_f64().unwrap(), eps);
        prop_assert_eq!(c.seed, seed);
    }
}

proptest! {
    #![proptest_config(cases(4))]

    #[test]
    fn nls_scattering_preserves_norm_and_gauge(amp in 0.2f64..0.8, theta in 0.0f64..6.28) {
        let g = self_dual_grid(128).unwrap();
        let psi = Profile::gaussian(amp).sample(&g);
        let opts = NlsScatteringOptions::default();
        let s = nls_scattering(&psi, &opts).unwrap();
        prop_assert!((s.output.norm() - psi.norm()).abs() <= 1e-6 * psi.norm());
        let rot = C64::from_polar(1.0, theta);
        let sr = nls_scattering(&psi.scaled(rot), &opts).unwrap();
        prop_assert!(sr.output.distance(&s.output.scaled(rot)) <= 1e-7);
    }
}
