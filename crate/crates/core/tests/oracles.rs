//! Golden values checked against independent reference computations.

use std::sync::Arc;

use wdp::convolution::{
    b_process, fubini_check, sample_convolution, ConvolutionPlan, CovariationGrid, FubiniIntegrand, KernelSpec,
};
use wdp::decompose::{graversen_rao_mn, natural_decomposition_convolution, ConvolutionOracle};
use wdp::estimators::{pre_qv, s_n_total, FnPath};
use wdp::grid::{dyadic, pathological_pi};
use wdp::mc::{run_ensemble, EnsembleConfig};
use wdp::pathology::{Sawtooth, SawtoothVariant};
use wdp::paths::{frozen_beta, simulate_driver, splitmix64, DriverSpec};
use wdp::quad::integrate;
use wdp::SamplePath;

/// `∫_s^t u^α (u-s)^{α-1} du` by composite Simpson after `u = s + v^{1/α}`.
fn fractional_inner_simpson(alpha: f64, s: f64, t: f64, n: usize) -> f64 {
    let top = (t - s).powf(alpha);
    let h = top / n as f64;
    let g = |v: f64| (s + v.powf(1.0 / alpha)).powf(alpha) / alpha;
    let mut acc = g(0.0) + g(top);
    for i in 1..n {
        acc += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

#[test]
fn fractional_kernel_matches_simpson_reference() {
    for &(hurst, c) in &[(0.75, 1.0), (0.6, 2.0), (0.9, 0.5)] {
        let k = KernelSpec::<f64>::fractional(hurst, c).unwrap();
        let alpha = hurst - 0.5;
        for &(t, s) in &[(1.0f64, 0.25f64), (1.0, 0.9), (0.5, 0.01), (2.0, 1.5)] {
            let reference = c * s.powf(-alpha) * fractional_inner_simpson(alpha, s, t, 200_000);
            let got = k.eval(t, s).unwrap();
            assert!((got - reference).abs() < 1e-8 * reference.abs().max(1.0), "H={hurst} t={t} s={s}: {got} vs {reference}");
        }
    }
}

#[test]
fn fractional_kernel_golden() {
    let k = KernelSpec::<f64>::fractional(0.75, 1.0).unwrap();
    assert!((k.eval(1.0, 0.25).unwrap() - 4.107_089_556_811_8).abs() < 1e-8);
}

#[test]
fn quadrature_of_endpoint_singularity() {
    // ∫_0^1 x^{-1/2} dx = 2 with the singular endpoint excluded by the nodes.
    let r = integrate(|x: f64| x.powf(-0.5), 0.0, 1.0, 1e-10, 0.0).unwrap();
    assert!((r.value - 2.0).abs() < 1e-8);
}

#[test]
fn splitmix_golden() {
    assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
}

/// Exact pre-QV of the `1/p` sawtooth at `t = 1` along the truncated `π_n`:
/// teeth `p < n` are resolved by the uniform head (rise over `4^{-p}`, fall over
/// `4^{-p}/2`), tooth `n` rises in one head step, then the tail visits the peaks.
fn linear_sawtooth_oracle(n: u32, cap: u32) -> f64 {
    let peak = |p: u32| 1.0 / p as f64;
    let h = 4f64.powi(-(n as i32));
    let mut head = 0.0;
    for p in 1..n {
        head += 3.0 * peak(p).powi(2) * 4f64.powi(p as i32) * h;
    }
    head += peak(n).powi(2);
    let mut tail = 0.0;
    for k in n..cap {
        tail += (peak(k + 1) - peak(k)).powi(2);
    }
    tail += peak(cap).powi(2);
    head + tail
}

#[test]
fn linear_sawtooth_pre_qv_matches_enumeration() {
    let cap = Sawtooth::max_tooth::<f64>();
    let x = FnPath(Sawtooth::new(SawtoothVariant::Linear).as_fn::<f64>());
    for n in 1..=8 {
        let pi = pathological_pi::<f64>(n, cap).unwrap();
        let got = pre_qv(&x, &pi, 1.0).unwrap();
        let want = linear_sawtooth_oracle(n, cap);
        assert!((got - want).abs() < 1e-12, "n={n}: {got} vs {want}");
    }
    let pi = pathological_pi::<f64>(1, cap).unwrap();
    assert!((pre_qv(&x, &pi, 1.0).unwrap() - 1.291_328_463_986_735_3).abs() < 1e-12);
}

#[test]
fn sqrt_sawtooth_pre_qv_golden() {
    let cap = Sawtooth::max_tooth::<f64>();
    let x = FnPath(Sawtooth::new(SawtoothVariant::Sqrt).as_fn::<f64>());
    let golden = [1.0, 0.75, 0.21875, 0.05859375, 0.0147705078125, 0.0037078857421875];
    for (n, want) in (1..).zip(golden) {
        let pi = pathological_pi::<f64>(n, cap).unwrap();
        assert!((pre_qv(&x, &pi, 0.9).unwrap() - want).abs() < 1e-15, "n={n}");
    }
}

#[test]
fn constant_kernel_is_scaled_driver() {
    let g = dyadic::<f64>(1.0, 8).unwrap();
    let l = simulate_driver(&DriverSpec::brownian(4), g.clone()).unwrap();
    let k = KernelSpec::constant(2.5);
    let plan = ConvolutionPlan::new(&k, g).unwrap();
    let x = sample_convolution(&plan, &l).unwrap();
    for (a, b) in x.values().iter().zip(l.values()) {
        assert!((a - 2.5 * b).abs() < 1e-12);
    }
    let dec = natural_decomposition_convolution(&plan, &l, &x).unwrap();
    assert!(dec.a.values().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn unit_kernel_reproduces_the_driver_exactly() {
    let g = dyadic::<f64>(1.0, 8).unwrap();
    let l = simulate_driver(&DriverSpec::<f64>::poisson(3.0, 9), g.clone()).unwrap();
    let plan = ConvolutionPlan::new(&KernelSpec::constant(1.0), g).unwrap();
    let x = sample_convolution(&plan, &l).unwrap();
    assert_eq!(x.values(), l.values());
    assert_eq!(x.jumps().len(), l.jumps().len());
}

#[test]
fn graversen_rao_on_product_kernel_matches_closed_form() {
    // For G = β(t) f(s), E[X_{t'} - X_t | F_t] = (β(t') - β(t)) Σ_{s_j < t} f(s_j) ΔL_j.
    let g = dyadic::<f64>(1.0, 10).unwrap();
    let beta = frozen_beta::<f64>(11, 12).unwrap();
    let k = KernelSpec::product_beta_f(beta.clone(), Arc::new(|_| 1.0), "f=1");
    let plan = ConvolutionPlan::new(&k, g.clone()).unwrap();
    let l = simulate_driver(&DriverSpec::brownian(5), g.clone()).unwrap();
    let x = sample_convolution(&plan, &l).unwrap();
    let oracle = ConvolutionOracle::new(&plan, &l).unwrap();
    let sub = dyadic::<f64>(1.0, 6).unwrap();
    let dec = graversen_rao_mn(&x, sub.clone(), 6, &oracle).unwrap();
    let bv = beta.values_on(&sub).unwrap();
    let lv = l.values_on(&sub).unwrap();
    let mut a = 0.0;
    for i in 0..sub.n_intervals() {
        a += (bv[i + 1] - bv[i]) * lv[i];
        assert!((dec.a.values()[i + 1] - a).abs() < 1e-12);
    }
}

#[test]
fn separable_b_process_matches_brute_force() {
    let g = dyadic::<f64>(1.0, 6).unwrap();
    let beta = frozen_beta::<f64>(3, 6).unwrap();
    let f = |s: f64| 1.0 + s;
    let k = KernelSpec::product_beta_f(beta.clone(), Arc::new(f), "1+s");
    let plan = ConvolutionPlan::new(&k, g.clone()).unwrap();
    let cg = CovariationGrid::new(&k, &plan).unwrap();
    let l = simulate_driver(&DriverSpec::brownian(8), g.clone()).unwrap();
    let got = b_process(&cg, &l, 1.0).unwrap();

    // B_1 = Σ_j Σ_l [G(.,s_j), G(.,s_l)]_1 ΔL_j ΔL_l with the j = l terms once.
    let p = g.points();
    let bv = beta.values_on(&g).unwrap();
    let lv = l.values();
    let n = p.len() - 1;
    let cov = |j: usize, l: usize| {
        let start = j.max(l);
        let mut acc = 0.0;
        for m in start..n {
            acc += (bv[m + 1] - bv[m]).powi(2);
        }
        f(p[j]) * f(p[l]) * acc
    };
    let mut want = 0.0;
    for j in 0..n {
        for m in 0..n {
            want += cov(j, m) * (lv[j + 1] - lv[j]) * (lv[m + 1] - lv[m]);
        }
    }
    assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{got} vs {want}");
}

#[test]
fn fubini_residual_is_the_diagonal() {
    let g = dyadic::<f64>(1.0, 9).unwrap();
    let beta = simulate_driver(&DriverSpec::brownian(1), g.clone()).unwrap();
    let l = simulate_driver(&DriverSpec::brownian(2), g.clone()).unwrap();
    let f = |u: f64, s: f64| u * s;
    let sep = FubiniIntegrand::Separable {
        a: Arc::new(|u| u),
        b: Arc::new(|s| s),
    };
    let gen = FubiniIntegrand::General(Arc::new(f));
    let r1 = fubini_check(&sep, &beta, &l, &g, 1.0).unwrap();
    let r2 = fubini_check(&gen, &beta, &l, &g, 1.0).unwrap();
    assert!((r1.lhs - r2.lhs).abs() < 1e-10);
    assert!((r1.rhs - r2.rhs).abs() < 1e-10);
    let p = g.points();
    let (bv, lv) = (beta.values(), l.values());
    let diag: f64 = (0..g.n_intervals())
        .map(|j| f(p[j], p[j]) * (bv[j + 1] - bv[j]) * (lv[j + 1] - lv[j]))
        .sum();
    assert!((r1.lhs - r1.rhs - diag).abs() < 1e-10);
}

#[test]
fn brownian_quadratic_sum_has_mean_one() {
    let g = dyadic::<f64>(1.0, 10).unwrap();
    let cfg = EnsembleConfig::new(17, 2000);
    let stats = run_ensemble(&["S(B,B)"], &cfg, |_, seed| {
        let b = simulate_driver(&DriverSpec::brownian(seed), g.clone())?;
        Ok(vec![s_n_total(&b, &b, &g)?])
    })
    .unwrap();
    assert!(stats[0].within(1.0, 3.0), "{:?}", stats[0]);
}

#[test]
fn poisson_quadratic_sum_counts_jumps() {
    // Off the jump cells the compensated increments are -λ h, so
    // S^n = Σ (1 - λh)^2 over jump cells + λ² h² over the rest.
    let g = dyadic::<f64>(1.0, 12).unwrap();
    let l: SamplePath<f64> = simulate_driver(&DriverSpec::poisson(2.0, 21), g.clone()).unwrap();
    let n_jumps: f64 = l.jumps().iter().map(|j| j.dx * j.dx).sum();
    let got = s_n_total(&l, &l, &g).unwrap();
    assert!((got - n_jumps).abs() < 2.0 * n_jumps * 2.0 / 4096.0 + 4.0 / 4096.0, "{got} vs {n_jumps}");
}
