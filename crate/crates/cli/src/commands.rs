use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use wpot::bernstein_markov::{construct_bm_measure, strong_bm_scan, verify_bm_inequality, BmConstruction, BmVerdict};
use wpot::energy::{equilibrium_measure, EquilibriumOptions};
use wpot::ensembles::{partition_function, partition_table, sample_dpp, sample_mcmc, tail_bound_check};
use wpot::fekete::{fekete_points, transfinite_diameter_at, FeketeOptions, FeketeReport};
use wpot::io::Table;
use wpot::ldp::{ldp_report, rate_estimate, LdpConfig, RateOptions, TargetKind};
use wpot::measure::DiscreteMeasure;
use wpot::quadrature::{arcsine_measure, grid_measure};
use wpot::{parse_weight, CompactSetSpec, Weight};

use crate::config::{NuConstruction, RunConfig, SamplerKind};
use crate::Command;

/// Exit codes.
const OK: u8 = 0;
const CHECK_FAILED: u8 = 1;
const CONFIG_ERROR: u8 = 2;

#[derive(Debug, Serialize)]
struct CheckLine {
    name: String,
    value: f64,
    threshold: f64,
    pass: bool,
}

/// Artifacts and checks of one run.
struct Out {
    dir: PathBuf,
    files: Vec<String>,
    checks: Vec<CheckLine>,
}

impl Out {
    fn check(&mut self, name: impl Into<String>, value: f64, threshold: f64, pass: bool) {
        self.checks.push(CheckLine { name: name.into(), value, threshold, pass });
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> anyhow::Result<()> {
        std::fs::write(self.dir.join(name), contents).with_context(|| format!("writing {name}"))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn csv(&mut self, name: &str, t: &Table) -> anyhow::Result<()> {
        self.write(name, t.to_csv().as_bytes())
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> anyhow::Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }
}

/// A failure attributable to the configuration rather than the computation.
#[derive(Debug)]
struct ConfigError(anyhow::Error);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(e.into()))
}

fn is_config_error(e: &anyhow::Error) -> bool {
    use wpot::Error as E;
    e.chain().any(|c| {
        c.is::<ConfigError>()
            || matches!(
                c.downcast_ref::<E>(),
                Some(E::Syntax { .. } | E::UnknownIdentifier { .. } | E::InvalidArgument(_) | E::Geometry(_) | E::Dimension { .. })
            )
    })
}

pub fn run(command: Command, config_path: &Path, out_dir: &Path, tasks: usize, verbose: bool) -> u8 {
    if let Err(e) = std::fs::create_dir_all(out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return CONFIG_ERROR;
    }
    let mut out = Out { dir: out_dir.to_path_buf(), files: Vec::new(), checks: Vec::new() };
    let loaded = RunConfig::load(config_path);
    let (config_hash, seed) = match &loaded {
        Ok((cfg, bytes)) => (hex::encode(Sha256::digest(bytes)), cfg.seed),
        Err(_) => (std::fs::read(config_path).map(|b| hex::encode(Sha256::digest(b))).unwrap_or_default(), None),
    };
    let result = loaded.map_err(config_err).and_then(|(cfg, _)| execute(command, &cfg, config_path, tasks, &mut out));
    let (code, error) = match &result {
        Err(e) => {
            let code = if is_config_error(e) { CONFIG_ERROR } else { CHECK_FAILED };
            eprintln!("error: {e:#}");
            (code, Some(format!("{e:#}")))
        }
        Ok(()) => match out.checks.iter().find(|c| !c.pass) {
            Some(c) => {
                eprintln!("check failed: {} = {} (threshold {})", c.name, c.value, c.threshold);
                (CHECK_FAILED, None)
            }
            None => (OK, None),
        },
    };
    if verbose {
        for c in &out.checks {
            eprintln!("{} {} = {} (threshold {})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
        }
    }
    let mut files = out.files.clone();
    files.push("manifest.json".into());
    let manifest = json!({
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "tasks": tasks,
        "artifact_files": files,
        "pass": code == OK,
        "exit_code": code,
        "error": error,
        "checks": out.checks,
        "versions": {
            "wpot": wpot::VERSION,
            "wpot_cli": env!("CARGO_PKG_VERSION"),
            "config_schema": crate::config::SCHEMA_VERSION,
        },
    });
    if let Err(e) = out.json("manifest.json", &manifest) {
        eprintln!("error: {e:#}");
        return CHECK_FAILED.max(code);
    }
    code
}

fn execute(command: Command, cfg: &RunConfig, config_path: &Path, tasks: usize, out: &mut Out) -> anyhow::Result<()> {
    let q = parse_weight(&cfg.weight).map_err(config_err)?;
    match command {
        Command::Fekete => fekete(cfg, &q, out),
        Command::Tdiam => tdiam(cfg, &q, out),
        Command::Zk => {
            let ks = cfg.ks().map_err(config_err)?;
            let (nu, _) = build_nu(cfg, config_path)?;
            let rows = ks.iter().map(|&k| partition_function(&nu, &q, k)).collect::<wpot::Result<Vec<_>>>()?;
            for r in &rows {
                out.check(format!("log_z_finite_k{}", r.k), r.log_z, f64::INFINITY, r.log_z.is_finite());
            }
            out.csv("zk.csv", &partition_table(&rows))
        }
        Command::Sample => sample(cfg, &q, config_path, tasks, out),
        Command::Bm => bm(cfg, &q, config_path, out),
        Command::Equilibrium => {
            let eq = equilibrium_measure::<f64>(&cfg.set, &q, &EquilibriumOptions::default())?;
            let tol = cfg.kkt_tol.unwrap_or(1e-6);
            out.check("kkt_residual", eq.kkt_residual, tol, eq.kkt_residual < tol);
            out.csv("equilibrium.csv", &eq.density_table())?;
            out.json("equilibrium.json", &eq.to_json())
        }
        Command::Rate => rate(cfg, &q, config_path, out),
        Command::LdpVerify => {
            let (nu, _) = build_nu(cfg, config_path)?;
            let ldp = LdpConfig {
                rate: rate_options(cfg)?,
                targets: cfg.targets.clone().unwrap_or_else(|| vec![TargetKind::Equilibrium, TargetKind::Uniform]),
                equilibrium_tolerance: 0.02,
                relative_tolerance: 0.35,
            };
            let report = ldp_report(&cfg.set, &nu, &q, &ldp)?;
            for c in &report.checks {
                out.check(c.name.clone(), c.value, c.tolerance, c.pass);
            }
            for (kind, est) in &report.estimates {
                out.csv(&format!("rate_{}.csv", target_name(kind)), &est.table())?;
            }
            out.json("ldp.json", &report)
        }
    }
}

fn fekete_options(cfg: &RunConfig) -> FeketeOptions {
    FeketeOptions { restarts: cfg.restarts.unwrap_or(3), seed: cfg.seed.unwrap_or(0), ..FeketeOptions::default() }
}

fn points_table(reports: &[FeketeReport<f64>]) -> Table {
    let width = reports.first().map(|r| 2 * r.n).unwrap_or(2);
    let mut header = vec!["k".to_string(), "index".to_string()];
    for i in 0..width / 2 {
        header.push(format!("re{}", i + 1));
        header.push(format!("im{}", i + 1));
    }
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut t = Table::new(&refs);
    for r in reports {
        for (i, p) in r.config.points().iter().enumerate() {
            let mut row = vec![r.k.into(), i.into()];
            row.extend(p.to_flat().into_iter().map(Into::into));
            t.push(row);
        }
    }
    t
}

fn fekete(cfg: &RunConfig, q: &Weight, out: &mut Out) -> anyhow::Result<()> {
    let ks = cfg.ks().map_err(config_err)?;
    let opts = fekete_options(cfg);
    let reports = if ks.len() >= 2 {
        transfinite_diameter_at::<f64>(&cfg.set, q, &ks, &opts)?.reports
    } else {
        vec![fekete_points::<f64>(&cfg.set, q, ks[0], &opts)?]
    };
    let mut t = Table::new(&["k", "N_k", "log_vdm_q", "delta_qk", "normalized", "lebesgue", "converged"]);
    for r in &reports {
        t.push(vec![r.k.into(), r.n_k.into(), r.log_vdm_q.into(), r.delta_qk.into(), r.normalized.into(), r.lebesgue.into(), (r.converged as usize).into()]);
        out.check(format!("converged_k{}", r.k), r.sweeps as f64, opts.max_sweeps as f64, r.converged && r.log_vdm_q.is_finite());
    }
    out.csv("fekete.csv", &t)?;
    out.csv("points.csv", &points_table(&reports))
}

fn tdiam(cfg: &RunConfig, q: &Weight, out: &mut Out) -> anyhow::Result<()> {
    let ks = cfg.ks().map_err(config_err)?;
    let rep = transfinite_diameter_at::<f64>(&cfg.set, q, &ks, &fekete_options(cfg))?;
    let last = rep.reports.last().map(|r| r.normalized).unwrap_or(f64::NAN);
    out.check("normalized_finite", last, f64::INFINITY, last.is_finite() && last > 0.0);
    out.check("log_fit_finite", rep.log_fit, f64::INFINITY, rep.log_fit.is_finite() && rep.log_fit > 0.0);
    out.csv("tdiam.csv", &rep.table())?;
    out.json(
        "tdiam.json",
        &json!({"richardson": rep.richardson, "log_fit": rep.log_fit, "monotone": rep.monotone, "last_normalized": last}),
    )
}

fn sample(cfg: &RunConfig, q: &Weight, config_path: &Path, tasks: usize, out: &mut Out) -> anyhow::Result<()> {
    let seed = cfg.seed().map_err(config_err)?;
    let k = cfg.k().map_err(config_err)?;
    let count = cfg.samples.unwrap_or(1000);
    if cfg.eta.is_some() && cfg.delta_bar.is_none() {
        return Err(config_err(anyhow::anyhow!("`eta` needs `delta_bar`")));
    }
    let (nu, _) = build_nu(cfg, config_path)?;
    let s = match cfg.sampler {
        SamplerKind::Dpp => sample_dpp(&nu, q, k, count, seed, tasks)?,
        SamplerKind::Mcmc => sample_mcmc(&nu, q, k, count, cfg.burn_in.unwrap_or(1000), cfg.thin.unwrap_or(10), seed, tasks)?,
    };
    out.write("samples.jsonl", s.to_json_lines().as_bytes())?;
    let mut summary = json!({
        "k": k,
        "count": s.len(),
        "sampler": s.sampler,
        "acceptance_rate": s.acceptance_rate,
        "nu_id": s.nu_id,
        "q_id": s.q_id,
    });
    out.check("sample_count", s.len() as f64, count as f64, s.len() == count);
    if let (Some(eta), Some(db)) = (cfg.eta, cfg.delta_bar) {
        let tail = tail_bound_check(&s, q, eta, db)?;
        out.check("tail_bound", tail.empirical, tail.bound + 2.0 * tail.stderr, tail.passes);
        summary["tail"] = serde_json::to_value(&tail)?;
    }
    out.json("sample.json", &summary)
}

fn bm(cfg: &RunConfig, q: &Weight, config_path: &Path, out: &mut Out) -> anyhow::Result<()> {
    let ks = cfg.ks().map_err(config_err)?;
    let trials = cfg.trials.unwrap_or(0);
    let seed = if trials > 0 { cfg.seed().map_err(config_err)? } else { cfg.seed.unwrap_or(0) };
    let (nu, construction) = build_nu(cfg, config_path)?;
    let mut weights = vec![q.clone()];
    for w in &cfg.extra_weights {
        weights.push(parse_weight(w).map_err(config_err)?);
    }
    let reports = strong_bm_scan(&nu, &cfg.set, &weights, &ks, construction.as_ref())?;
    for (i, r) in reports.iter().enumerate() {
        out.csv(&format!("bm_{i}.csv"), &r.table())?;
        out.check(format!("bm_verdict_{i}"), r.tail_slope, wpot::bernstein_markov::GROWTH_SLOPE, r.verdict == BmVerdict::ConsistentWithBm);
    }
    let mut inequality = Vec::new();
    if trials > 0 {
        for &k in &ks {
            let bound = construction.as_ref().and_then(|c| c.explicit_bound(k));
            let r = verify_bm_inequality(&nu, &cfg.set, q, k, trials, seed ^ k as u64, bound)?;
            out.check(format!("bm_inequality_k{k}"), r.max_ratio, r.m_k, r.passes());
            inequality.push(r);
        }
    }
    out.json("bm.json", &json!({"scans": reports, "inequality": inequality, "nu_id": nu.id()}))
}

fn rate_options(cfg: &RunConfig) -> anyhow::Result<RateOptions> {
    Ok(RateOptions {
        ks: cfg.ks().map_err(config_err)?,
        eps: cfg.eps.context("`eps` is required").map_err(config_err)?,
        moment_degree: cfg.moment_degree.unwrap_or(2),
        samples: cfg.samples.unwrap_or(10_000),
        seed: cfg.seed().map_err(config_err)?,
        tilted: true,
        tilts: cfg.tilts.unwrap_or(4),
        restarts: cfg.restarts.unwrap_or(3),
    })
}

fn target_name(kind: &TargetKind) -> &'static str {
    match kind {
        TargetKind::Equilibrium => "equilibrium",
        TargetKind::Uniform => "uniform",
    }
}

fn rate(cfg: &RunConfig, q: &Weight, config_path: &Path, out: &mut Out) -> anyhow::Result<()> {
    let opts = rate_options(cfg)?;
    let (nu, _) = build_nu(cfg, config_path)?;
    let eq = equilibrium_measure::<f64>(&cfg.set, q, &EquilibriumOptions::default())?;
    let mut all = Vec::new();
    for kind in cfg.targets.clone().unwrap_or_else(|| vec![TargetKind::Uniform]) {
        let target = match kind {
            TargetKind::Equilibrium => eq.mu_eq.clone(),
            TargetKind::Uniform => grid_measure(eq.mu_eq.atoms(), &eq.cells, |_| 1.0)?,
        };
        let est = rate_estimate(&target, &cfg.set, &nu, q, &opts, Some(&eq))?;
        let name = target_name(&kind);
        out.check(format!("{name}_prediction_nonnegative"), est.prediction, 0.0, est.prediction >= -1e-9);
        out.check(format!("{name}_estimate_available"), est.midpoint.unwrap_or(f64::NAN), f64::INFINITY, est.midpoint.is_some());
        out.csv(&format!("rate_{name}.csv"), &est.table())?;
        all.push(json!({"target": kind, "estimate": est}));
    }
    out.json("rate.json", &all)
}

/// `nu` per the configuration, with the construction record for `bm`.
fn build_nu(cfg: &RunConfig, config_path: &Path) -> anyhow::Result<(DiscreteMeasure<f64>, Option<BmConstruction<f64>>)> {
    let spec = &cfg.set;
    match cfg.nu.construction {
        NuConstruction::Uniform => {
            let (pts, cells) = spec.discretize_with_cells::<f64>()?;
            let nu = match cells {
                Some(c) => grid_measure(&pts, &c, |_| 1.0)?,
                None => DiscreteMeasure::uniform(pts)?,
            };
            Ok((nu, None))
        }
        NuConstruction::Arcsine => match spec {
            CompactSetSpec::IntervalUnion { intervals, .. } if intervals.len() == 1 => {
                let (a, b) = intervals[0];
                Ok((arcsine_measure(a, b, cfg.nu.points.unwrap_or(200))?, None))
            }
            _ => Err(config_err(anyhow::anyhow!("`arcsine` needs a single interval"))),
        },
        NuConstruction::Bm => {
            let k_max = cfg.ks().map_err(config_err)?.into_iter().max().unwrap_or(1);
            let c = construct_bm_measure::<f64>(spec, cfg.k_max.unwrap_or(k_max).max(k_max), &fekete_options(cfg))?;
            Ok((c.measure.clone(), Some(c)))
        }
        NuConstruction::File => {
            let rel = cfg.nu.path.as_ref().context("`nu.path` is required for `file`").map_err(config_err)?;
            let path = config_path.parent().unwrap_or(Path::new(".")).join(rel);
            let v: Value = serde_json::from_slice(&std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?)
                .map_err(config_err)?;
            let (atoms, masses) = match (v.get("atoms"), v.get("masses")) {
                (Some(a), Some(m)) => (a, m),
                _ => bail!(ConfigError(anyhow::anyhow!("measure file needs `atoms` and `masses`"))),
            };
            let atoms: Vec<Vec<f64>> = serde_json::from_value(atoms.clone()).map_err(config_err)?;
            let masses: Vec<f64> = serde_json::from_value(masses.clone()).map_err(config_err)?;
            let pts = atoms.iter().map(|a| wpot::geometry::Point::from_flat(a)).collect::<wpot::Result<Vec<_>>>()?;
            Ok((DiscreteMeasure::new(pts, masses).map_err(config_err)?, None))
        }
    }
}
