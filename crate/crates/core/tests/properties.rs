use dskg::evolution::{solve_desitter_direct, wave_energy, wave_state, DirectSolveConfig};
use dskg::experiment::parse_config;
use dskg::field::{random_bandlimited, PeriodicGrid, SpectralField};
use dskg::kernels::{kernel_e, kernel_k1, KernelArgs, ModelParams};
use dskg::specfun::{hyp2f1, hyp2f1_direct, hyp2f1_transformed, HypParams};
use dskg::transform::{linear_solution, LinearProblem, QuadratureSpec};
use dskg::verify::fit_log_linear;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rel(got: C64, want: C64) -> f64 {
    (got - want).norm() / want.norm().max(1e-300)
}

fn cplx(re: std::ops::Range<f64>, im: std::ops::Range<f64>) -> impl Strategy<Value = C64> {
    (re, im).prop_map(|(a, b)| C64::new(a, b))
}

fn field(d: usize, npts: usize, kmax: f64, seed: u64) -> SpectralField {
    random_bandlimited(
        PeriodicGrid::new(d, npts).unwrap(),
        kmax,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hyp2f1_is_one_at_origin(a in cplx(-3.0..3.0, -2.0..2.0), b in cplx(-3.0..3.0, -2.0..2.0), c in cplx(0.2..4.0, -2.0..2.0)) {
        let v = hyp2f1(&HypParams::new(a, b, c, 0.0)).unwrap().value;
        prop_assert_eq!(v, C64::new(1.0, 0.0));
    }

    #[test]
    fn hyp2f1_symmetric_in_numerator(
        a in cplx(-2.0..2.0, -1.0..1.0),
        b in cplx(-2.0..2.0, -1.0..1.0),
        c in cplx(0.3..3.0, -1.0..1.0),
        z in 0.0f64..0.95,
    ) {
        let x = hyp2f1(&HypParams::new(a, b, c, z)).unwrap().value;
        let y = hyp2f1(&HypParams::new(b, a, c, z)).unwrap().value;
        prop_assert!(rel(x, y) <= 1e-12 || (x - y).norm() <= 1e-14, "{} vs {}", x, y);
    }

    #[test]
    fn branches_agree_mid_interval(
        a in cplx(-1.5..1.5, -1.0..1.0),
        b in cplx(-1.5..1.5, -1.0..1.0),
        c in cplx(0.3..3.0, -1.0..1.0),
        z in 0.45f64..0.55,
    ) {
        let s = c - a - b;
        prop_assume!((s.re - s.re.round()).abs() > 0.05 || s.im.abs() > 0.05);
        let p = HypParams::new(a, b, c, z);
        let d = hyp2f1_direct(&p).unwrap().value;
        let t = hyp2f1_transformed(&p).unwrap().value;
        prop_assert!(rel(t, d) <= 1e-9, "{} vs {}", t, d);
    }

    #[test]
    fn contiguous_derivative(a in cplx(-1.0..1.0, -0.5..0.5), b in cplx(-1.0..1.0, -0.5..0.5), z in 0.05f64..0.8) {
        let one = C64::new(1.0, 0.0);
        let h = 1e-5;
        let f = |z: f64| hyp2f1(&HypParams::new(a, b, one, z)).unwrap().value;
        let fd = (f(z + h) - f(z - h)) / (2.0 * h);
        let exact = a * b * hyp2f1(&HypParams::new(a + one, b + one, C64::new(2.0, 0.0), z)).unwrap().value;
        prop_assert!((fd - exact).norm() <= 1e-6 * (1.0 + exact.norm()), "{} vs {}", fd, exact);
    }

    #[test]
    fn kernel_conjugation(m in cplx(0.1..2.5, 0.0..1.0), frac in 0.0f64..0.999, t0 in 0.0f64..2.0, dt in 0.05f64..6.0) {
        let t = t0 + dt;
        let r = frac * ((-t0).exp() - (-t).exp());
        let e = kernel_e(KernelArgs { r, t, t0 }, m).unwrap();
        let ec = kernel_e(KernelArgs { r, t, t0 }, m.conj()).unwrap();
        prop_assert!((e.conj() - ec).norm() <= 1e-12 * e.norm().max(1.0));
        let z = frac * -(-dt).exp_m1();
        prop_assert_eq!(kernel_k1(z, dt, m).unwrap(), kernel_e(KernelArgs { r: z, t: dt, t0: 0.0 }, m).unwrap());
    }

    #[test]
    fn kernel_light_cone_edge(m in cplx(0.1..2.5, 0.0..0.5), b in 0.0f64..3.0, dt in 0.01f64..8.0) {
        let t = b + dt;
        let r = (-b).exp() - (-t).exp();
        let e = kernel_e(KernelArgs { r, t, t0: b }, m).unwrap();
        prop_assert!(rel(e, C64::new(0.5 * (0.5 * (b + t)).exp(), 0.0)) <= 1e-8);
    }

    #[test]
    fn parseval_and_monotone_norms(seed in any::<u64>(), d in 1usize..=2, kmax in 1.0f64..10.0) {
        let f = field(d, 32, kmax, seed);
        let p = f.l2_norm_physical();
        prop_assert!((p - f.sobolev_norm(0.0)).abs() <= 1e-12 * p);
        let norms: Vec<f64> = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0].iter().map(|&s| f.sobolev_norm(s)).collect();
        prop_assert!(norms.windows(2).all(|w| w[1] >= w[0]));
        let back = f.to_physical().to_spectral();
        let err = back.sub(&f).unwrap().sobolev_norm(0.0);
        prop_assert!(err <= 1e-12 * p);
    }

    #[test]
    fn product_constant_is_bounded(s1 in any::<u64>(), s2 in any::<u64>(), kmax in 1.0f64..8.0) {
        // H^1 on the circle is an algebra
        let (f, g) = (field(1, 64, kmax, s1), field(1, 64, kmax, s2));
        let c = f.mul(&g).unwrap().sobolev_norm(1.0) / (f.sobolev_norm(1.0) * g.sobolev_norm(1.0));
        prop_assert!(c.is_finite() && c < 2.0, "{}", c);
    }

    #[test]
    fn wave_energy_conserved(seed in any::<u64>(), r in 0.0f64..=1.0) {
        let (v0, v1) = (field(2, 16, 6.0, seed), field(2, 16, 6.0, seed ^ 1));
        let (a, ar) = wave_state(&v0, &v1, 0.0).unwrap();
        let (b, br) = wave_state(&v0, &v1, r).unwrap();
        let (e0, e1) = (wave_energy(&a, &ar), wave_energy(&b, &br));
        prop_assert!((e1 - e0).abs() <= 1e-10 * e0);
    }

    #[test]
    fn linear_solution_is_additive(s1 in any::<u64>(), s2 in any::<u64>(), m in 0.2f64..1.4, t in 0.5f64..3.0) {
        let params = ModelParams::from_eff_mass(3, C64::new(m, 0.0), 1.0);
        let quad = QuadratureSpec::uniform(24);
        let (f0, f1, g0, g1) = (field(1, 16, 5.0, s1), field(1, 16, 5.0, s1 ^ 7), field(1, 16, 5.0, s2), field(1, 16, 5.0, s2 ^ 7));
        let solve = |a: &SpectralField, b: &SpectralField| {
            linear_solution(&LinearProblem::new(params, a.clone(), b.clone()).with_quad(quad), t).unwrap()
        };
        let sum = solve(&f0.add(&g0).unwrap(), &f1.add(&g1).unwrap());
        let parts = solve(&f0, &f1).add(&solve(&g0, &g1)).unwrap();
        prop_assert!(sum.sub(&parts).unwrap().sobolev_norm(1.0) <= 1e-12 * sum.sobolev_norm(1.0));
    }

    #[test]
    fn fit_recovers_exponentials(rate in -3.0f64..3.0, amp in 1e-6f64..1e6) {
        let times: Vec<f64> = (0..=40).map(|i| 0.25 * i as f64).collect();
        let norms: Vec<f64> = times.iter().map(|t| amp * (-rate * t).exp()).collect();
        let fit = fit_log_linear(&times, &norms, (2.0, 8.0)).unwrap();
        prop_assert!((fit.slope + rate).abs() <= 1e-9 && fit.samples == 25);
        prop_assert!(fit.r_squared > 0.999_999 || rate.abs() < 1e-6);
    }

    #[test]
    fn config_round_trips(n in 1u32..5, m in 0.05f64..2.0, im in -1.0f64..1.0, seed in any::<u64>(), npts_log in 4u32..9) {
        let text = format!(
            r#"{{"model": {{"n": {n}, "M": [{m}, {im}]}}, "grid": {{"npts": {}}}, "run": "solve_linear", "seed": {seed}}}"#,
            1usize << npts_log
        );
        let c = parse_config(&text).unwrap();
        let back = parse_config(&serde_json::to_string(&c).unwrap()).unwrap();
        prop_assert_eq!(back.hash(), c.hash());
        prop_assert_eq!(&back, &c);
        let p = c.params().unwrap();
        let want = 0.25 * (n * n) as f64 - C64::new(m, im) * C64::new(m, im);
        prop_assert!((p.mass_sq - want).norm() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn massive_solutions_decay(seed in any::<u64>(), m in 0.1f64..1.45) {
        // m^2 = 9/4 - M^2 > 0
        let params = ModelParams::from_eff_mass(3, C64::new(m, 0.0), 1.0);
        let psi0 = field(1, 32, 6.0, seed);
        let psi1 = field(1, 32, 6.0, seed ^ 3);
        let cfg = DirectSolveConfig { output_times: vec![0.0, 6.0], ..DirectSolveConfig::new(params, 6.0) };
        let sol = solve_desitter_direct(&psi0, &psi1, &cfg).unwrap();
        let n = &sol.trajectory.hs_norms;
        prop_assert!(n[1] < n[0], "{:?}", n);
    }

    #[test]
    fn direct_solver_refines_consistently(seed in any::<u64>(), m in 0.2f64..2.0) {
        let params = ModelParams::from_eff_mass(3, C64::new(m, 0.0), 1.0);
        let psi0 = field(1, 32, 6.0, seed);
        let psi1 = SpectralField::zeros(*psi0.grid());
        let run = |rtol: f64| {
            let cfg = DirectSolveConfig { rtol, atol: rtol * 1e-4, output_times: vec![0.0, 4.0], ..DirectSolveConfig::new(params, 4.0) };
            *solve_desitter_direct(&psi0, &psi1, &cfg).unwrap().trajectory.hs_norms.last().unwrap()
        };
        let (coarse, fine) = (run(1e-8), run(5e-9));
        prop_assert!((coarse - fine).abs() <= 5e-7 * fine, "{} vs {}", coarse, fine);
    }
}
