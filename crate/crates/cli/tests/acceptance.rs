//! Acceptance criteria, one PASS/FAIL line each. Seeds are fixed up front.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use serde_json::json;

use wdp::convolution::{
    audit_hypotheses, fubini_check, sample_convolution, AuditConfig, ConvolutionPlan, FubiniIntegrand, KernelSpec,
};
use wdp::decompose::{graversen_rao_mn, natural_decomposition_convolution, orthogonality_test, ConvolutionOracle};
use wdp::estimators::{energy_estimate, pre_qv, s_n_total, FnPath};
use wdp::grid::{dyadic, pathological_pi, Subdivision, SubdivisionSequence};
use wdp::ito::{gamma_c2, qv_of_transform, TransformSpec};
use wdp::mc::{collect_samples, convergence_table, median, EnsembleConfig, LevelRow};
use wdp::pathology::{build_alternating, neighbor_bound, Sawtooth, SawtoothVariant};
use wdp::paths::{derive_seed, frozen_beta, simulate_driver, DriverSpec, JumpCompensator};
use wdp::SamplePath;

const MASTER: u64 = 20_240_601;
const BETA_SEED: u64 = 1;
const K: f64 = 3.0;

type Outcome = (bool, String);

fn levels(range: std::ops::RangeInclusive<u32>) -> SubdivisionSequence<f64> {
    SubdivisionSequence::dyadic_levels(1.0, &range.collect::<Vec<_>>()).unwrap()
}

fn rows(seq: &SubdivisionSequence<f64>, stats: &[(f64, f64)]) -> Vec<LevelRow> {
    seq.levels()
        .iter()
        .zip(stats)
        .map(|(l, &(mean, se))| LevelRow {
            level: l.index,
            mesh: l.sub.mesh(),
            mean,
            se,
        })
        .collect()
}

fn fmt_means(r: &[LevelRow]) -> String {
    r.iter().map(|r| format!("{}:{:.3e}", r.level, r.mean)).collect::<Vec<_>>().join(" ")
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let a = build_alternating::<f64>(20).unwrap();
    let mut max_err: f64 = 0.0;
    for (k, s) in a.s_table().into_iter().skip(1) {
        let want = if k % 2 == 0 { 1.0 } else { 2.0 };
        max_err = max_err.max((s - want).abs());
    }
    let mut violated = Vec::new();
    let mut floor_ok = true;
    for n in 1..=20 {
        let gap = a.max_neighbor_gap(n).unwrap();
        if gap > neighbor_bound(n as f64 / 2.0) {
            violated.push(n);
        }
        floor_ok &= gap <= neighbor_bound((n / 2) as f64) * (1.0 + 1e-12);
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = max_err <= 1e-9 && violated.is_empty() && secs < 2.0;
    (
        ok,
        format!(
            "max |S_k - target| = {max_err:.1e}; bound ((1+√3)/4)^(n/2) violated at n = {violated:?}; \
             exponent floor(n/2) holds at all levels: {floor_ok}; {secs:.2}s"
        ),
    )
}

fn criterion_2() -> Outcome {
    let a = build_alternating::<f64>(20).unwrap();
    let all = a.energy().unwrap().sup();
    let path = a.to_path().unwrap();
    let even = SubdivisionSequence::dyadic_levels(1.0, &(1..=10).map(|k| 2 * k).collect::<Vec<_>>()).unwrap();
    let even_sup = wdp::estimators::energy_deterministic(&path, &even).unwrap().sup();
    let ok = (all - 2.0).abs() < 1e-9 && (even_sup - 1.0).abs() < 1e-9;
    (ok, format!("sup over levels 1..20 = {all:.12}; over even levels = {even_sup:.12}"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let grid = dyadic(1.0, 12).unwrap();
    let cfg = EnsembleConfig::new(MASTER, 10_000);
    let s = collect_samples(&["S12(B,B)_1"], &cfg, |_, seed| {
        let b = simulate_driver(&DriverSpec::brownian(seed), grid.clone())?;
        Ok(vec![s_n_total(&b, &b, &grid)?])
    })
    .unwrap()
    .stats(0);
    let seq = levels(1..=12);
    let energy = energy_estimate(|_, seed| simulate_driver(&DriverSpec::brownian(seed), grid.clone()), &seq, &cfg).unwrap();
    let bad: Vec<u32> = energy
        .per_level
        .iter()
        .filter(|l| (l.mean - 1.0).abs() > K * l.se)
        .map(|l| l.level)
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let ok = s.within(1.0, K) && bad.is_empty() && secs < 60.0;
    (
        ok,
        format!(
            "mean S^12(B,B)_1 = {:.5} ± {:.1e}; energy levels outside 3 SE: {bad:?}; {secs:.1}s",
            s.mean, s.se
        ),
    )
}

/// Product kernel with `f ≡ 1`: `X_t = β(t) B_t` and its natural decomposition.
fn example2_plan(grid: Arc<Subdivision<f64>>, beta: Arc<SamplePath<f64>>) -> (KernelSpec<f64>, ConvolutionPlan<f64>) {
    let k = KernelSpec::product_beta_f(beta, Arc::new(|_| 1.0), "f=1");
    let plan = ConvolutionPlan::new(&k, grid).unwrap();
    (k, plan)
}

fn criterion_4() -> Outcome {
    let beta = frozen_beta::<f64>(BETA_SEED, 16).unwrap();
    let g12 = dyadic(1.0, 12).unwrap();
    let (_, plan12) = example2_plan(g12.clone(), beta.clone());
    let mean = collect_samples(&["S12(A,A)_1"], &EnsembleConfig::new(MASTER, 10_000), |_, seed| {
        let b = simulate_driver(&DriverSpec::brownian(seed), g12.clone())?;
        let x = sample_convolution(&plan12, &b)?;
        let d = natural_decomposition_convolution(&plan12, &b, &x)?;
        Ok(vec![s_n_total(&d.a, &d.a, &g12)?])
    })
    .unwrap()
    .stats(0);

    // Pathwise: |S^12(A,A)_1 - ∫ B² ds| against the spread 3 sqrt(2 h ∫ B⁴ ds) of
    // the level-12 sum around its limit, both integrals on the level-16 grid.
    let g16 = dyadic(1.0, 16).unwrap();
    let (_, plan16) = example2_plan(g16.clone(), beta.clone());
    let h12 = 2f64.powi(-12);
    let h16 = 2f64.powi(-16);
    let per_path = collect_samples(&["err", "int_b4"], &EnsembleConfig::new(MASTER ^ 1, 2000), |_, seed| {
        let b = simulate_driver(&DriverSpec::brownian(seed), g16.clone())?;
        let x = sample_convolution(&plan16, &b)?;
        let d = natural_decomposition_convolution(&plan16, &b, &x)?;
        let s12 = s_n_total(&d.a, &d.a, &g12)?;
        let bv = b.values();
        let int_b2: f64 = bv[..bv.len() - 1].iter().map(|v| v * v * h16).sum();
        let int_b4: f64 = bv[..bv.len() - 1].iter().map(|v| v.powi(4) * h16).sum();
        Ok(vec![(s12 - int_b2).abs(), int_b4])
    })
    .unwrap();
    let med_err = median(&per_path.column(0));
    let band = 3.0 * (2.0 * h12 * median(&per_path.column(1))).sqrt();
    let q = s_n_total(&beta, &beta, &g12).unwrap();
    let ok = mean.within(0.5, K) && mean.mean.abs() > K * mean.se && med_err < band;
    (
        ok,
        format!(
            "mean S^12(A,A)_1 = {:.5} ± {:.1e} (target 0.5; frozen β level-12 QV {q:.4}); \
             pathwise median error {med_err:.2e} vs band {band:.2e}",
            mean.mean, mean.se
        ),
    )
}

fn criterion_5() -> Outcome {
    let beta = frozen_beta::<f64>(BETA_SEED, 16).unwrap();
    let g = dyadic(1.0, 12).unwrap();
    let (_, plan) = example2_plan(g.clone(), beta);
    let seq = levels(8..=12);
    let cfg = EnsembleConfig::new(MASTER, 10_000);
    let mut ok = true;
    let mut detail = Vec::new();
    for against in ["driver B", "independent W"] {
        let r = orthogonality_test(
            |_, seed| {
                let b = simulate_driver(&DriverSpec::brownian(seed), g.clone())?;
                let x = sample_convolution(&plan, &b)?;
                let d = natural_decomposition_convolution(&plan, &b, &x)?;
                let n = if against == "driver B" {
                    b
                } else {
                    simulate_driver(&DriverSpec::brownian(derive_seed(seed, 7)), g.clone())?
                };
                Ok((d.a, n))
            },
            &seq,
            &cfg,
            K,
        )
        .unwrap();
        let pass = r.table.trend.is_decreasing() && r.deepest.ci_contains_zero(K);
        ok &= pass;
        detail.push(format!(
            "{against}: {} trend {:?}, level-12 {:.2e} ± {:.1e}",
            fmt_means(&r.table.rows),
            r.table.trend,
            r.deepest.mean,
            r.deepest.se
        ));
    }
    (ok, detail.join("; "))
}

fn criterion_6() -> Outcome {
    let beta = frozen_beta::<f64>(BETA_SEED, 16).unwrap();
    let g = dyadic(1.0, 14).unwrap();
    let (_, plan) = example2_plan(g.clone(), beta);
    let seq = levels(8..=12);
    let mut names: Vec<String> = seq.levels().iter().map(|l| format!("err{}", l.index)).collect();
    names.push("m2".into());
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let samples = collect_samples(&refs, &EnsembleConfig::new(MASTER, 2000), |_, seed| {
        let b = simulate_driver(&DriverSpec::brownian(seed), g.clone())?;
        let x = sample_convolution(&plan, &b)?;
        let d = natural_decomposition_convolution(&plan, &b, &x)?;
        let oracle = ConvolutionOracle::new(&plan, &b)?;
        let m1 = d.m.terminal();
        let mut out = Vec::new();
        for l in seq.levels() {
            let gr = graversen_rao_mn(&x, l.sub.clone(), l.index, &oracle)?;
            out.push((gr.m.terminal() - m1).powi(2));
        }
        out.push(m1 * m1);
        Ok(out)
    })
    .unwrap();
    let stats = samples.all_stats();
    let per: Vec<(f64, f64)> = stats[..5].iter().map(|s| (s.mean, s.se)).collect();
    let table = convergence_table("E|M^n_1 - M_1|^2", rows(&seq, &per), K).unwrap();
    let m2 = stats[5].mean;
    let last = table.last().mean;
    let ok = table.trend.is_decreasing() && last < 1e-2 * m2;
    (
        ok,
        format!("{} trend {:?}; level-12 {last:.2e} vs 1e-2 E|M_1|^2 = {:.2e}", fmt_means(&table.rows), table.trend, 1e-2 * m2),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let k = KernelSpec::<f64>::fractional(0.75, 1.0).unwrap();
    let g = dyadic(1.0, 12).unwrap();
    let plan = ConvolutionPlan::new(&k, g.clone()).unwrap();
    let seq = levels(8..=12);
    let names: Vec<String> = seq.levels().iter().map(|l| format!("S{}", l.index)).collect();
    let mut refs: Vec<&str> = names.iter().map(String::as_str).collect();
    refs.push("max|M|");
    let samples = collect_samples(&refs, &EnsembleConfig::new(MASTER, 1000), |_, seed| {
        let b = simulate_driver(&DriverSpec::brownian(seed), g.clone())?;
        let x = sample_convolution(&plan, &b)?;
        let d = natural_decomposition_convolution(&plan, &b, &x)?;
        let mut out: Vec<f64> = seq.levels().iter().map(|l| s_n_total(&x, &x, &l.sub)).collect::<wdp::Result<_>>()?;
        out.push(d.m.values().iter().fold(0.0f64, |a, v| a.max(v.abs())));
        Ok(out)
    })
    .unwrap();
    let stats = samples.all_stats();
    let per: Vec<(f64, f64)> = stats[..5].iter().map(|s| (s.mean, s.se)).collect();
    let table = convergence_table("S^n(X,X)_1", rows(&seq, &per), K).unwrap();
    let m_zero = samples.column(5).iter().all(|&v| v == 0.0);
    let deepest = &stats[4];
    let ci_zero = deepest.ci_contains_zero(K);
    let audit = audit_hypotheses(&k, &levels(6..=9), &AuditConfig::default()).unwrap();
    let bound_ok = audit.fractional_bound.as_ref().is_some_and(|b| b.iter().all(|r| r.holds));
    let ok = m_zero && table.trend.is_decreasing() && ci_zero && bound_ok;
    (
        ok,
        format!(
            "M ≡ 0: {m_zero}; {} trend {:?}; level-12 {:.4} ± {:.1e} (CI contains 0: {ci_zero}); \
             closed variation bound at all audited s: {bound_ok}; {:.1}s",
            fmt_means(&table.rows),
            table.trend,
            deepest.mean,
            deepest.se,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn identity_decomposition(x: &SamplePath<f64>) -> wdp::decompose::Decomposition<f64> {
    wdp::decompose::Decomposition {
        m: x.clone(),
        a: SamplePath::zeros(x.grid().clone()),
        provenance: wdp::decompose::Provenance::ClosedFormConvolution,
        diagnostics: serde_json::Value::Null,
    }
}

fn criterion_8() -> Outcome {
    let tf = TransformSpec::<f64>::square();
    let seq = levels(8..=12);
    let n = seq.levels().len();

    // (a) Brownian, working level 14.
    let g = dyadic(1.0, 14).unwrap();
    let mut names: Vec<String> = seq.levels().iter().map(|l| format!("disc{}", l.index)).collect();
    names.push("gamma12".into());
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let a = collect_samples(&refs, &EnsembleConfig::new(MASTER, 4000), |_, seed| {
        let b = simulate_driver(&DriverSpec::brownian(seed), g.clone())?;
        let dec = identity_decomposition(&b);
        let mut out = Vec::new();
        let mut gamma12 = 0.0;
        for l in seq.levels() {
            let rep = gamma_c2(&dec, &b, &tf, None, l.sub.clone())?;
            out.push(rep.discrepancy);
            gamma12 = rep.gamma.terminal();
        }
        out.push(gamma12);
        Ok(out)
    })
    .unwrap();
    let meds: Vec<f64> = (0..n).map(|i| median(&a.column(i))).collect();
    let disc_shrinks = meds.windows(2).all(|w| w[1] < w[0]);
    let gamma_a = a.stats(n);

    // (b) compensated Poisson, λ = 1.
    let g = dyadic(1.0, 12).unwrap();
    let nu = JumpCompensator::PointMass { intensity: 1.0, size: 1.0 };
    let mut names: Vec<String> = seq.levels().iter().map(|l| format!("qv{}", l.index)).collect();
    names.push("gamma12".into());
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let b = collect_samples(&refs, &EnsembleConfig::new(MASTER, 4000), |_, seed| {
        let l = simulate_driver(&DriverSpec::poisson(1.0, seed), g.clone())?;
        let dec = identity_decomposition(&l);
        let mut out: Vec<f64> = qv_of_transform(&dec, &l, &tf, Some(&nu), &seq)?.iter().map(|r| r.residual).collect();
        out.push(gamma_c2(&dec, &l, &tf, Some(&nu), g.clone())?.gamma.terminal());
        Ok(out)
    })
    .unwrap();
    let stats = b.all_stats();
    let per: Vec<(f64, f64)> = stats[..n].iter().map(|s| (s.mean, s.se)).collect();
    let qv_table = convergence_table("QV identity residual", rows(&seq, &per), K).unwrap();
    let gamma_b = &stats[n];

    let ok = gamma_a.within(1.0, K) && disc_shrinks && gamma_b.within(1.0, K) && qv_table.trend.is_decreasing();
    (
        ok,
        format!(
            "(a) Γ_1 = {:.5} ± {:.1e}, median |Γ - Γ~| {}; (b) Γ_1 = {:.6} ± {:.1e}, QV residual {} trend {:?}",
            gamma_a.mean,
            gamma_a.se,
            meds.iter().map(|m| format!("{m:.2e}")).collect::<Vec<_>>().join(" "),
            gamma_b.mean,
            gamma_b.se,
            fmt_means(&qv_table.rows),
            qv_table.trend
        ),
    )
}

fn criterion_9() -> Outcome {
    let beta = frozen_beta::<f64>(BETA_SEED, 16).unwrap();
    let g16 = dyadic(1.0, 16).unwrap();
    let seq = levels(8..=12);
    let mut ok = true;
    let mut detail = Vec::new();
    let cases: [(&str, FubiniIntegrand<f64>); 2] = [
        (
            "f=1",
            FubiniIntegrand::Separable {
                a: Arc::new(|_| 1.0),
                b: Arc::new(|_| 1.0),
            },
        ),
        (
            "f=us",
            FubiniIntegrand::Separable {
                a: Arc::new(|u| u),
                b: Arc::new(|s| s),
            },
        ),
    ];
    for (name, f) in &cases {
        let mut names: Vec<String> = seq.levels().iter().map(|l| format!("res{}", l.index)).collect();
        names.push("scale".into());
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let s = collect_samples(&refs, &EnsembleConfig::new(MASTER, 500), |_, seed| {
            let l = simulate_driver(&DriverSpec::brownian(seed), g16.clone())?;
            let mut out = Vec::new();
            let mut lhs12 = 0.0;
            for lvl in seq.levels() {
                let r = fubini_check(f, &beta, &l, &lvl.sub, 1.0)?;
                out.push(r.residual * r.residual);
                lhs12 = r.lhs;
            }
            let r16 = fubini_check(f, &beta, &l, &g16, 1.0)?;
            out.push((lhs12 - r16.lhs).powi(2));
            Ok(out)
        })
        .unwrap();
        let stats = s.all_stats();
        let rms: Vec<f64> = stats.iter().map(|s| s.mean.sqrt()).collect();
        let decreasing = rms[..5].windows(2).all(|w| w[1] < w[0]);
        let scale = rms[5];
        let pass = decreasing && rms[4] < 10.0 * scale;
        ok &= pass;
        detail.push(format!(
            "{name}: RMS residual {} ; level-12 {:.2e} vs 10 × scale {:.2e}",
            rms[..5].iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>().join(" "),
            rms[4],
            10.0 * scale
        ));
    }
    (ok, detail.join("; "))
}

fn criterion_10() -> Outcome {
    let cap = Sawtooth::max_tooth::<f64>();
    let sqrt = FnPath(Sawtooth::new(SawtoothVariant::Sqrt).as_fn::<f64>());
    let sqrt_vals: Vec<f64> = (1..=8)
        .map(|n| pre_qv(&sqrt, &pathological_pi::<f64>(n, cap).unwrap(), 0.9).unwrap())
        .collect();
    let sqrt_ok = sqrt_vals[5] < 1e-3;

    // Reference: closed-form enumeration of the affine pieces visited by π_n.
    let peak = |p: u32| 1.0 / p as f64;
    let oracle = |n: u32| {
        let h = 4f64.powi(-(n as i32));
        let head: f64 = (1..n).map(|p| 3.0 * peak(p).powi(2) * 4f64.powi(p as i32) * h).sum::<f64>() + peak(n).powi(2);
        let tail: f64 = (n..cap).map(|k| (peak(k + 1) - peak(k)).powi(2)).sum::<f64>() + peak(cap).powi(2);
        head + tail
    };
    let lin = FnPath(Sawtooth::new(SawtoothVariant::Linear).as_fn::<f64>());
    let lin_err = (1..=8)
        .map(|n| (pre_qv(&lin, &pathological_pi::<f64>(n, cap).unwrap(), 1.0).unwrap() - oracle(n)).abs())
        .fold(0.0f64, f64::max);
    let lin8 = oracle(8);
    (
        sqrt_ok && lin_err < 1e-6,
        format!(
            "sqrt variant at t=0.9, n=1..8: {}; linear variant at t=1 max |value - enumeration| = {lin_err:.1e} (n=8 value {lin8:.6})",
            sqrt_vals.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn wdp(args: &[&str], envs: &[(&str, &str)]) -> std::process::Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_wdp"));
    c.args(args).env_remove("WDP_OUTPUT_DIR").env_remove("WDP_WORKERS");
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn criterion_11() -> Outcome {
    let d = tempfile::tempdir().unwrap();
    let cfg = json!({
        "driver": { "kind": "poisson", "lambda": 2.0, "seed": MASTER },
        "kernel": { "kind": "constant", "c": 1.0 },
        "levels": [6, 7, 8],
        "n_paths": 300,
        "probes": [0.5, 1.0],
        "transform": { "name": "square" },
        "output_dir": d.path().join("first").display().to_string(),
    });
    let cfg_path = d.path().join("run.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let cfg_s = cfg_path.display().to_string();
    let mut mismatches = Vec::new();
    let runs: [&[&str]; 4] = [
        &["estimate", "--which", "qv"],
        &["estimate", "--which", "energy"],
        &["decompose"],
        &["ito"],
    ];
    for (i, args) in runs.iter().enumerate() {
        let first = d.path().join(format!("first{i}"));
        let second = d.path().join(format!("second{i}"));
        let mut a: Vec<&str> = args.to_vec();
        a.extend(["--config", &cfg_s]);
        let o1 = wdp(&a, &[("WDP_WORKERS", "1"), ("WDP_OUTPUT_DIR", &first.display().to_string())]);
        let manifest = first.join("manifest.json").display().to_string();
        let o2 = wdp(
            &["replay", &manifest],
            &[("WDP_WORKERS", "3"), ("WDP_OUTPUT_DIR", &second.display().to_string())],
        );
        if o1.status.code() != Some(0) || o2.status.code() != Some(0) {
            mismatches.push(format!("{args:?}: exit {:?}/{:?}", o1.status.code(), o2.status.code()));
            continue;
        }
        let (x, y) = (dir_bytes(&first), dir_bytes(&second));
        if x != y {
            mismatches.push(format!("{args:?}"));
        }
    }
    (
        mismatches.is_empty(),
        format!("4 subcommands replayed from their manifests with 1 vs 3 workers; mismatches: {mismatches:?}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("1 alternating function: S_k pattern and neighbour bound", criterion_1),
        ("2 alternating function: energy", criterion_2),
        ("3 Brownian quadratic sums and energy", criterion_3),
        ("4 product kernel: S^n(A,A) mean and pathwise band", criterion_4),
        ("5 product kernel: orthogonality of A", criterion_5),
        ("6 martingale approximants in L2", criterion_6),
        ("7 fractional kernel", criterion_7),
        ("8 C2 Itô decomposition", criterion_8),
        ("9 stochastic Fubini sums", criterion_9),
        ("10 sawtooth pre-QV", criterion_10),
        ("11 reproducibility", criterion_11),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let (ok, detail) = f();
        if !ok {
            failed += 1;
        }
        println!("{} criterion {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
