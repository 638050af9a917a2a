use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use wdp::convolution::{audit_hypotheses, sample_convolution, AuditConfig, ConvolutionPlan, KernelSpec};
use wdp::decompose::{graversen_rao_mn, natural_decomposition_convolution, orthogonality_test, ConvolutionOracle};
use wdp::estimators::{energy_estimate, pre_qv, s_n, s_n_total, FnPath};
use wdp::grid::{dyadic, pathological_pi, Subdivision, SubdivisionSequence};
use wdp::ito::{gamma_c1, gamma_c2, qv_of_transform, Smoothness};
use wdp::mc::{collect_samples, convergence_table, fnv1a, median, EnsembleConfig, Fingerprint, LevelRow, RunManifest};
use wdp::pathology::{build_alternating, crossing_table, Sawtooth, SawtoothVariant};
use wdp::paths::{derive_seed, simulate_driver, DriverSpec, JumpCompensator};
use wdp::SamplePath;

use crate::config::{load, DriverKind, KernelKindConfig, RunConfig};
use crate::{CliError, Command, SawtoothArg, Which};

type CliResult<T> = std::result::Result<T, CliError>;

pub fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Simulate { config } => {
            let run = Run::prepare(&config, vec!["simulate".into()])?;
            simulate(&run)
        }
        Command::Estimate { config, which, sawtooth } => {
            let mut argv = vec!["estimate".to_string(), "--which".into(), which_name(which).into()];
            if let Some(s) = sawtooth {
                argv.extend(["--sawtooth".to_string(), sawtooth_name(s).into()]);
            }
            let run = Run::prepare(&config, argv)?;
            estimate(&run, which, sawtooth)
        }
        Command::Decompose { config } => {
            let run = Run::prepare(&config, vec!["decompose".into()])?;
            decompose(&run)
        }
        Command::Ito { config } => {
            let run = Run::prepare(&config, vec!["ito".into()])?;
            ito(&run)
        }
        Command::Audit { config } => {
            let run = Run::prepare(&config, vec!["audit".into()])?;
            audit(&run)
        }
        Command::Pathology {
            alternating,
            depth,
            sawtooth,
            t,
            n_max,
            shifted,
            seed,
            output_dir,
        } => pathology(alternating, depth, sawtooth, t, n_max, shifted, seed, output_dir),
        Command::Report { dir } => report(&dir),
        Command::Replay { manifest } => replay(&manifest),
    }
}

fn which_name(w: Which) -> &'static str {
    match w {
        Which::Qv => "qv",
        Which::Cov => "cov",
        Which::Energy => "energy",
        Which::Preqv => "preqv",
    }
}

fn sawtooth_name(s: SawtoothArg) -> &'static str {
    match s {
        SawtoothArg::Sqrt => "sqrt",
        SawtoothArg::Linear => "linear",
    }
}

fn variant(s: SawtoothArg) -> SawtoothVariant {
    match s {
        SawtoothArg::Sqrt => SawtoothVariant::Sqrt,
        SawtoothArg::Linear => SawtoothVariant::Linear,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(io_err(&path))
}

fn write_with(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> wdp::Result<()>) -> CliResult<()> {
    let mut w = create(dir, name)?;
    f(&mut w)?;
    let path = dir.join(name);
    w.flush().map_err(io_err(&path))
}

fn write_json(dir: &Path, name: &str, v: &impl Serialize) -> CliResult<()> {
    write_with(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, v)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Two-column plot data with a `#` header naming the statistic.
fn write_plot(dir: &Path, name: &str, header: &str, rows: &[(f64, f64)]) -> CliResult<()> {
    write_with(dir, name, |w| {
        writeln!(w, "# {header}")?;
        for (a, b) in rows {
            writeln!(w, "{a} {b}")?;
        }
        Ok(())
    })
}

fn write_csv_rows(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    write_with(dir, name, |w| {
        writeln!(w, "{}", header.join(","))?;
        for r in rows {
            writeln!(w, "{}", r.join(","))?;
        }
        Ok(())
    })
}

fn workers_from_env() -> CliResult<Option<usize>> {
    match std::env::var("WDP_WORKERS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Usage(format!("WDP_WORKERS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

/// Shared state of a config-driven subcommand.
pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub ens: EnsembleConfig,
    pub seq: SubdivisionSequence<f64>,
    pub grid: Arc<Subdivision<f64>>,
    pub driver: DriverSpec<f64>,
    pub kernel: KernelSpec<f64>,
}

impl Run {
    /// Loads the configuration, creates the output directory and writes the
    /// manifest before any computation.
    pub fn prepare(config: &Path, command: Vec<String>) -> CliResult<Run> {
        let cfg = load(config)?;
        let out = std::env::var_os("WDP_OUTPUT_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| cfg.output_dir.clone());
        std::fs::create_dir_all(&out).map_err(io_err(&out))?;
        let mut ens = EnsembleConfig::new(cfg.master_seed(), cfg.n_paths);
        if let Some(w) = workers_from_env()? {
            ens = ens.with_workers(w);
        }
        let seq = SubdivisionSequence::dyadic_levels(1.0, &cfg.levels)?;
        let grid = dyadic(1.0, cfg.deepest_level())?;
        let beta = cfg.beta()?;
        let kernel = cfg.kernel_spec(beta.clone())?;
        let frozen = beta
            .iter()
            .map(|b| Fingerprint {
                name: "beta".into(),
                seed: cfg.kernel.beta_seed.expect("validated"),
                resolution: cfg.beta_resolution(),
                hash: fnv1a(b.values().iter().copied()),
                measured_qv: s_n_total(b, b, b.grid()).unwrap_or(f64::NAN),
            })
            .collect();
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            config: serde_json::to_value(&cfg).map_err(wdp::Error::from)?,
            master_seed: cfg.master_seed(),
            driver: serde_json::to_value(&cfg.driver).map_err(wdp::Error::from)?,
            kernel: kernel.describe(),
            levels: cfg.levels.clone(),
            n_paths: cfg.n_paths,
            frozen,
        };
        write_with(&out, "manifest.json", |w| {
            manifest.write_json(&mut *w)?;
            writeln!(w)?;
            Ok(())
        })?;
        let driver = cfg.driver_spec();
        Ok(Run {
            cfg,
            out,
            ens,
            seq,
            grid,
            driver,
            kernel,
        })
    }

    pub fn plan(&self) -> CliResult<ConvolutionPlan<f64>> {
        Ok(ConvolutionPlan::new(&self.kernel, self.grid.clone())?)
    }

    pub fn paths(&self, plan: &ConvolutionPlan<f64>, seed: u64) -> wdp::Result<(SamplePath<f64>, SamplePath<f64>)> {
        let l = simulate_driver(&self.driver.with_seed(seed), self.grid.clone())?;
        let x = sample_convolution(plan, &l)?;
        Ok((l, x))
    }

    fn level_rows(&self, means: &[(f64, f64)]) -> Vec<LevelRow> {
        self.seq
            .levels()
            .iter()
            .zip(means)
            .map(|(l, &(mean, se))| LevelRow {
                level: l.index,
                mesh: l.sub.mesh(),
                mean,
                se,
            })
            .collect()
    }

    fn k(&self) -> f64 {
        self.cfg.tolerances.verdict_se_multiplier
    }
}

fn simulate(run: &Run) -> CliResult<()> {
    let plan = run.plan()?;
    let (l, x) = run.paths(&plan, derive_seed(run.ens.master_seed, 0))?;
    write_with(&run.out, "driver.csv", |w| l.write_csv(w))?;
    write_with(&run.out, "driver_jumps.json", |w| l.write_ledger_json(w))?;
    write_with(&run.out, "x.csv", |w| x.write_csv(w))?;
    write_plot(
        &run.out,
        "x.dat",
        "X_t: t value",
        &x.grid().points().iter().copied().zip(x.values().iter().copied()).collect::<Vec<_>>(),
    )?;
    println!("wrote {} points to {}", x.len(), run.out.display());
    Ok(())
}

fn estimate(run: &Run, which: Which, sawtooth: Option<SawtoothArg>) -> CliResult<()> {
    match which {
        Which::Qv | Which::Cov => estimate_covariation(run, which),
        Which::Energy => {
            let plan = run.plan()?;
            let rep = energy_estimate(|_, seed| Ok(run.paths(&plan, seed)?.1), &run.seq, &run.ens)?;
            write_with(&run.out, "energy.csv", |w| rep.write_csv(w))?;
            write_json(&run.out, "energy.json", &rep)?;
            let rows: Vec<(f64, f64)> = rep.per_level.iter().map(|l| (l.level as f64, l.mean)).collect();
            write_plot(&run.out, "energy.dat", "energy per level: level mean", &rows)?;
            for l in &rep.per_level {
                println!("level {:>2}  mean {:.6}  se {:.2e}", l.level, l.mean, l.se);
            }
            println!("running sup {:.6}", rep.sup());
            Ok(())
        }
        Which::Preqv => estimate_preqv(run, sawtooth),
    }
}

fn estimate_covariation(run: &Run, which: Which) -> CliResult<()> {
    let plan = run.plan()?;
    let name = which_name(which);
    let probes = &run.cfg.probes;
    let mut names = Vec::new();
    for l in run.seq.levels() {
        for t in probes {
            names.push(format!("S_{}(t={t})", l.index));
        }
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let samples = collect_samples(&refs, &run.ens, |_, seed| {
        let (l, x) = run.paths(&plan, seed)?;
        let y = if which == Which::Qv { &x } else { &l };
        let mut out = Vec::with_capacity(refs.len());
        for lvl in run.seq.levels() {
            for &t in probes {
                out.push(s_n(&x, y, &lvl.sub, t)?);
            }
        }
        Ok(out)
    })?;
    let stats = samples.all_stats();
    let mut rows = Vec::new();
    for (li, l) in run.seq.levels().iter().enumerate() {
        for (pi, t) in probes.iter().enumerate() {
            let s = &stats[li * probes.len() + pi];
            rows.push(vec![
                l.index.to_string(),
                l.sub.mesh().to_string(),
                t.to_string(),
                s.mean.to_string(),
                s.se.to_string(),
                s.band.0.to_string(),
                s.band.1.to_string(),
            ]);
        }
    }
    write_csv_rows(
        &run.out,
        &format!("{name}.csv"),
        &["level", "mesh", "probe_t", "mean", "se", "band_lo", "band_hi"],
        &rows,
    )?;
    let last = probes.len() - 1;
    let per_level: Vec<(f64, f64)> = (0..run.seq.levels().len())
        .map(|li| {
            let s = &stats[li * probes.len() + last];
            (s.mean, s.se)
        })
        .collect();
    let label = if which == Which::Qv { "S^n(X,X)" } else { "S^n(X,L)" };
    let table_name = format!("{label}_{}", probes[last]);
    let table = convergence_table(&table_name, run.level_rows(&per_level), run.k()).ok();
    write_json(&run.out, &format!("{name}.json"), &json!({ "statistics": stats, "convergence": table }))?;
    let plot: Vec<(f64, f64)> = run.seq.levels().iter().zip(&per_level).map(|(l, p)| (l.sub.mesh(), p.0)).collect();
    write_plot(&run.out, &format!("{name}.dat"), &format!("{table_name}: mesh mean"), &plot)?;
    for (l, (m, se)) in run.seq.levels().iter().zip(&per_level) {
        println!("level {:>2}  {label} at t={}: {m:.6} ± {se:.2e}", l.index, probes[last]);
    }
    Ok(())
}

fn estimate_preqv(run: &Run, sawtooth: Option<SawtoothArg>) -> CliResult<()> {
    let mut rows = Vec::new();
    match sawtooth {
        Some(s) => {
            let x = FnPath(Sawtooth::new(variant(s)).as_fn::<f64>());
            let cap = Sawtooth::max_tooth::<f64>();
            for &n in &run.cfg.levels {
                let pi = pathological_pi::<f64>(n, cap)?;
                for &t in &run.cfg.probes {
                    rows.push(vec![n.to_string(), t.to_string(), pre_qv(&x, &pi, t)?.to_string()]);
                }
            }
        }
        None => {
            let plan = run.plan()?;
            let (_, x) = run.paths(&plan, derive_seed(run.ens.master_seed, 0))?;
            for l in run.seq.levels() {
                for &t in &run.cfg.probes {
                    rows.push(vec![l.index.to_string(), t.to_string(), pre_qv(&x, &l.sub, t)?.to_string()]);
                }
            }
        }
    }
    write_csv_rows(&run.out, "preqv.csv", &["n", "probe_t", "value"], &rows)?;
    let last = run.cfg.probes.last().expect("validated").to_string();
    let plot: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r[1] == last)
        .map(|r| (r[0].parse().unwrap_or(f64::NAN), r[2].parse().unwrap_or(f64::NAN)))
        .collect();
    write_plot(&run.out, "preqv.dat", &format!("pre-QV at t={last}: n value"), &plot)?;
    for r in &rows {
        println!("n {:>2}  t {}  {}", r[0], r[1], r[2]);
    }
    Ok(())
}

fn independent_brownian(seed: u64, grid: Arc<Subdivision<f64>>) -> wdp::Result<SamplePath<f64>> {
    simulate_driver(&DriverSpec::brownian(derive_seed(seed, u64::MAX - 1)), grid)
}

fn decompose(run: &Run) -> CliResult<()> {
    let plan = run.plan()?;
    let (l0, x0) = run.paths(&plan, derive_seed(run.ens.master_seed, 0))?;
    let dec = natural_decomposition_convolution(&plan, &l0, &x0)?;
    write_with(&run.out, "decomposition.csv", |w| dec.write_csv(w))?;

    // E|M^n_T - M_T|² per level, and E|M_T|² for scale.
    let mut names: Vec<String> = run.seq.levels().iter().map(|l| format!("gr_error_{}", l.index)).collect();
    names.push("m_T_squared".into());
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let samples = collect_samples(&refs, &run.ens, |_, seed| {
        let (l, x) = run.paths(&plan, seed)?;
        let nat = natural_decomposition_convolution(&plan, &l, &x)?;
        let oracle = ConvolutionOracle::new(&plan, &l)?;
        let m_t = nat.m.terminal();
        let mut out = Vec::new();
        for lvl in run.seq.levels() {
            let gr = graversen_rao_mn(&x, lvl.sub.clone(), lvl.index, &oracle)?;
            out.push((gr.m.terminal() - m_t).powi(2));
        }
        out.push(m_t * m_t);
        Ok(out)
    })?;
    let stats = samples.all_stats();
    let n = run.seq.levels().len();
    let per_level: Vec<(f64, f64)> = stats[..n].iter().map(|s| (s.mean, s.se)).collect();
    let gr_table = convergence_table("E|M^n_T - M_T|^2", run.level_rows(&per_level), run.k()).ok();
    let rows: Vec<Vec<String>> = run
        .seq
        .levels()
        .iter()
        .zip(&per_level)
        .map(|(l, (m, se))| vec![l.index.to_string(), l.sub.mesh().to_string(), m.to_string(), se.to_string()])
        .collect();
    write_csv_rows(&run.out, "gr_convergence.csv", &["level", "mesh", "mean", "se"], &rows)?;
    let plot: Vec<(f64, f64)> = run.seq.levels().iter().zip(&per_level).map(|(l, p)| (l.sub.mesh(), p.0)).collect();
    write_plot(&run.out, "gr_convergence.dat", "E|M^n_T - M_T|^2: mesh mean", &plot)?;

    let mut ortho = serde_json::Map::new();
    if run.seq.levels().len() >= 3 {
        if run.cfg.driver.kind == DriverKind::Brownian {
            let r = orthogonality_test(
                |_, seed| {
                    let (l, x) = run.paths(&plan, seed)?;
                    let d = natural_decomposition_convolution(&plan, &l, &x)?;
                    Ok((d.a, l))
                },
                &run.seq,
                &run.ens,
                run.k(),
            )?;
            ortho.insert("driver".into(), serde_json::to_value(r).map_err(wdp::Error::from)?);
        }
        let r = orthogonality_test(
            |_, seed| {
                let (l, x) = run.paths(&plan, seed)?;
                let d = natural_decomposition_convolution(&plan, &l, &x)?;
                Ok((d.a, independent_brownian(seed, run.grid.clone())?))
            },
            &run.seq,
            &run.ens,
            run.k(),
        )?;
        ortho.insert("independent".into(), serde_json::to_value(r).map_err(wdp::Error::from)?);
    }
    write_json(
        &run.out,
        "decompose.json",
        &json!({
            "provenance": dec.provenance,
            "gr_convergence": gr_table,
            "m_T_squared": stats[n],
            "orthogonality": ortho,
        }),
    )?;
    for (l, (m, se)) in run.seq.levels().iter().zip(&per_level) {
        println!("level {:>2}  E|M^n_T - M_T|^2 = {m:.3e} ± {se:.1e}", l.index);
    }
    println!("E|M_T|^2 = {:.6}", stats[n].mean);
    for (k, v) in &ortho {
        println!("orthogonality vs {k}: {}", if v["verdict"] == Value::Bool(true) { "pass" } else { "fail" });
    }
    Ok(())
}

fn jump_compensator(run: &Run) -> CliResult<Option<JumpCompensator>> {
    match run.driver.compensator() {
        JumpCompensator::Zero => Ok(None),
        JumpCompensator::PointMass { intensity, size } => match run.cfg.kernel.kind {
            KernelKindConfig::Constant => Ok(Some(JumpCompensator::PointMass {
                intensity,
                size: size * run.cfg.kernel.c.expect("validated"),
            })),
            _ => Err(CliError::Usage(
                "ito with a poisson driver needs a constant kernel (the jump law of X must be known)".into(),
            )),
        },
    }
}

fn ito(run: &Run) -> CliResult<()> {
    let tf = run
        .cfg
        .transform
        .as_ref()
        .ok_or_else(|| CliError::Config("missing key transform".into()))?
        .build()?;
    let nu = jump_compensator(run)?;
    let plan = run.plan()?;
    let c2 = tf.smoothness == Smoothness::C2;
    let levels = run.seq.levels();
    let mut names = Vec::new();
    for l in levels {
        if c2 {
            names.push(format!("gamma_{}", l.index));
            names.push(format!("discrepancy_{}", l.index));
        }
        names.push(format!("qv_residual_{}", l.index));
    }
    names.push("gamma_tilde_T".into());
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let samples = collect_samples(&refs, &run.ens, |_, seed| {
        let (l, x) = run.paths(&plan, seed)?;
        let dec = natural_decomposition_convolution(&plan, &l, &x)?;
        let qv = qv_of_transform(&dec, &x, &tf, nu.as_ref(), &run.seq)?;
        let mut out = Vec::new();
        for (lvl, q) in levels.iter().zip(&qv) {
            if c2 {
                let rep = gamma_c2(&dec, &x, &tf, nu.as_ref(), lvl.sub.clone())?;
                out.push(rep.gamma.terminal());
                out.push(rep.discrepancy);
            }
            out.push(q.residual);
        }
        out.push(gamma_c1(&dec, &x, &tf, nu.as_ref())?.terminal());
        Ok(out)
    })?;
    let stride = if c2 { 3 } else { 1 };
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (i, l) in levels.iter().enumerate() {
        let base = i * stride;
        let qv = samples.stats(base + stride - 1);
        let mut row = vec![l.index.to_string(), l.sub.mesh().to_string()];
        let mut js = json!({ "level": l.index, "qv_residual": qv });
        if c2 {
            let g = samples.stats(base);
            let disc = median(&samples.column(base + 1));
            row.extend([g.mean.to_string(), g.se.to_string(), disc.to_string()]);
            js["gamma_T"] = serde_json::to_value(&g).map_err(wdp::Error::from)?;
            js["discrepancy_median"] = json!(disc);
            println!("level {:>2}  Gamma_T {:.6} ± {:.2e}  median |Gamma - Gamma~| {disc:.3e}", l.index, g.mean, g.se);
        } else {
            row.extend([String::new(), String::new(), String::new()]);
        }
        row.extend([qv.mean.to_string(), qv.se.to_string()]);
        rows.push(row);
        summary.push(js);
    }
    write_csv_rows(
        &run.out,
        "ito.csv",
        &["level", "mesh", "gamma_mean", "gamma_se", "discrepancy_median", "qv_residual_mean", "qv_residual_se"],
        &rows,
    )?;
    let gt = samples.stats(refs.len() - 1);
    println!("Gamma~_T {:.6} ± {:.2e}", gt.mean, gt.se);
    write_json(
        &run.out,
        "ito.json",
        &json!({ "transform": tf.name, "smoothness": tf.smoothness, "levels": summary, "gamma_tilde_T": gt }),
    )?;
    let plot: Vec<(f64, f64)> = levels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.sub.mesh(), samples.stats(i * stride + stride - 1).mean))
        .collect();
    write_plot(&run.out, "ito_qv_residual.dat", "QV identity residual: mesh mean", &plot)?;

    // One path in detail.
    let (l, x) = run.paths(&plan, derive_seed(run.ens.master_seed, 0))?;
    let dec = natural_decomposition_convolution(&plan, &l, &x)?;
    if c2 {
        let rep = gamma_c2(&dec, &x, &tf, nu.as_ref(), run.grid.clone())?;
        write_with(&run.out, "ito_path.csv", |w| rep.write_csv(w))?;
    } else {
        let g = gamma_c1(&dec, &x, &tf, nu.as_ref())?;
        write_with(&run.out, "ito_path.csv", |w| g.write_csv(w))?;
    }
    Ok(())
}

fn audit(run: &Run) -> CliResult<()> {
    let rep = audit_hypotheses(&run.kernel, &run.seq, &AuditConfig::default())?;
    write_json(&run.out, "audit.json", &rep)?;
    write_with(&run.out, "audit_per_s.csv", |w| rep.write_per_s_csv(w))?;
    let rows: Vec<(f64, f64)> = rep.per_s.iter().map(|r| (r.s, r.variation)).collect();
    write_plot(&run.out, "audit_variation.dat", "|G|((s,T],s): s value", &rows)?;
    let v = serde_json::to_value(&rep).map_err(wdp::Error::from)?;
    for h in ["h0", "h1", "h2", "h3", "h4", "h5", "h6", "hc"] {
        println!("{}: {}", h.to_uppercase(), v[h]["verdict"].as_str().unwrap_or("?"));
    }
    if let Some(b) = &rep.fractional_bound {
        println!("fractional bound holds at all audited s: {}", b.iter().all(|r| r.holds));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn pathology(
    alternating: bool,
    depth: u32,
    sawtooth: Option<SawtoothArg>,
    t: f64,
    n_max: u32,
    shifted: bool,
    seed: u64,
    output_dir: Option<PathBuf>,
) -> CliResult<()> {
    if !alternating && sawtooth.is_none() && !shifted {
        return Err(CliError::Usage(
            "pathology needs one of --alternating, --sawtooth or --shifted".into(),
        ));
    }
    let out = output_dir.or_else(|| std::env::var_os("WDP_OUTPUT_DIR").map(PathBuf::from));
    if let Some(o) = &out {
        std::fs::create_dir_all(o).map_err(io_err(o))?;
    }
    if alternating {
        let a = build_alternating::<f64>(depth)?;
        let table = a.s_table();
        println!("k S_k");
        for (k, s) in &table {
            println!("{k} {s}");
        }
        if let Some(o) = &out {
            let rows: Vec<Vec<String>> = table.iter().map(|(k, s)| vec![k.to_string(), s.to_string()]).collect();
            write_csv_rows(o, "alternating_s_k.csv", &["k", "S_k"], &rows)?;
            write_with(o, "alternating.csv", |w| a.write_csv(w))?;
        }
    }
    if let Some(s) = sawtooth {
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::Usage(format!("--t must lie in [0, 1], got {t}")));
        }
        let x = FnPath(Sawtooth::new(variant(s)).as_fn::<f64>());
        let cap = Sawtooth::max_tooth::<f64>();
        let mut rows = Vec::new();
        println!("n preqv");
        for n in 1..=n_max {
            let v = pre_qv(&x, &pathological_pi::<f64>(n, cap)?, t)?;
            println!("{n} {v}");
            rows.push(vec![n.to_string(), t.to_string(), v.to_string()]);
        }
        if let Some(o) = &out {
            write_csv_rows(o, &format!("sawtooth_{}.csv", sawtooth_name(s)), &["n", "probe_t", "value"], &rows)?;
        }
    }
    if shifted {
        let levels: Vec<u32> = (6..=16).step_by(2).collect();
        let table = crossing_table::<f64>(seed, &levels, 0.25, 0.75)?;
        println!("level upcrossings");
        for r in &table {
            println!("{} {}", r.level, r.upcrossings);
        }
        if let Some(o) = &out {
            let rows: Vec<Vec<String>> =
                table.iter().map(|r| vec![r.level.to_string(), r.upcrossings.to_string()]).collect();
            write_csv_rows(o, "shifted_crossings.csv", &["level", "upcrossings"], &rows)?;
        }
    }
    Ok(())
}

fn csv_to_json(text: &str) -> Value {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let rows: Vec<Value> = lines
        .map(|l| {
            Value::Array(
                l.split(',')
                    .map(|c| c.parse::<f64>().map(|v| json!(v)).unwrap_or_else(|_| json!(c)))
                    .collect(),
            )
        })
        .collect();
    json!({ "columns": header, "rows": rows })
}

fn report(dir: &Path) -> CliResult<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            !name.starts_with("report.")
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("{} contains no run outputs", dir.display())));
    }
    let mut bundle = serde_json::Map::new();
    let mut plots = String::new();
    for p in &files {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let text = std::fs::read_to_string(p).map_err(io_err(p))?;
        let value = match p.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(wdp::Error::from)?,
            Some("csv") => csv_to_json(&text),
            Some("dat") => {
                if !plots.is_empty() {
                    plots.push_str("\n\n");
                }
                plots.push_str(&text);
                continue;
            }
            _ => continue,
        };
        bundle.insert(name, value);
    }
    write_json(dir, "report.json", &Value::Object(bundle))?;
    write_with(dir, "report.dat", |w| {
        w.write_all(plots.as_bytes())?;
        Ok(())
    })?;
    println!("bundled {} files into {}", files.len(), dir.join("report.json").display());
    Ok(())
}

fn replay(manifest: &Path) -> CliResult<()> {
    let text = std::fs::read_to_string(manifest).map_err(io_err(manifest))?;
    let m: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", manifest.display())))?;
    let mut argv: Vec<String> = vec!["wdp".into()];
    argv.extend(m.command.iter().cloned());
    argv.extend(["--config".into(), manifest.display().to_string()]);
    let cli = <crate::Cli as clap::Parser>::try_parse_from(&argv)
        .map_err(|e| CliError::Config(format!("manifest command {:?}: {e}", m.command)))?;
    if matches!(cli.command, Command::Replay { .. } | Command::Report { .. } | Command::Pathology { .. }) {
        return Err(CliError::Config("manifest command is not replayable".into()));
    }
    dispatch(cli.command)
}
