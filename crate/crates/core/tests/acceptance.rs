//! Acceptance suite: one PASS/FAIL line per criterion, printed on every run.
//!
//! Runs without the libtest harness so the verdict lines always reach the
//! output. Exits nonzero when any criterion fails. Oracles (closed forms,
//! brute-force enumerations, CDFs, quadratures) live in this file and do not
//! call into the code under test.

use std::f64::consts::{LN_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wpot::bernstein_markov::{construct_bm_measure, strong_bm_scan, verify_bm_inequality};
use wpot::energy::{equilibrium_measure, monotone_weight_approximation, w_energy_identity_check, EquilibriumOptions};
use wpot::ensembles::{partition_function, sample_dpp, tail_bound_check};
use wpot::fekete::{fekete_points, log_fit, richardson, FeketeOptions};
use wpot::geometry::Point;
use wpot::ldp::{enumerate, j_functional_k, ldp_report, w_functional_k, JMode, LdpConfig, RateOptions, TargetKind};
use wpot::measure::{DiscreteMeasure, NeighborhoodSpec};
use wpot::polynomials::{log_abs_vdm, Configuration};
use wpot::quadrature::{arcsine_measure, cdf_sup_distance, cell_cdf_sup_distance, cell_measure, grid_measure};
use wpot::scalar::Cplx;
use wpot::{parse_weight, CompactSetSpec, Weight};

/// Collects verdict lines for one criterion.
struct Verdicts {
    all: bool,
}

impl Verdicts {
    fn line(&mut self, id: &str, what: &str, pass: bool, detail: String) {
        println!("{} [{id}] {what}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.all &= pass;
    }

    fn info(&self, id: &str, detail: String) {
        println!("     [{id}] {detail}");
    }
}

// ---------- oracles ----------

fn pairwise_log_vdm(xs: &[Cplx<f64>]) -> f64 {
    let mut s = 0.0;
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            s += (xs[i] - xs[j]).norm().ln();
        }
    }
    s
}

fn ln_fact(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// All `n`-subsets of `0..m`.
fn subsets(m: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(n);
    fn rec(start: usize, m: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, n, cur, out);
            cur.pop();
        }
    }
    rec(0, m, n, &mut cur, &mut out);
    out
}

/// `log Z_k = log N! + log sum_S prod m e^{-2kQ} |VDM(S)|^2` (univariate).
fn brute_log_z(xs: &[Cplx<f64>], ms: &[f64], qs: &[f64], k: usize) -> f64 {
    let n = k + 1;
    let terms: Vec<f64> = subsets(xs.len(), n)
        .iter()
        .map(|s| {
            let pts: Vec<Cplx<f64>> = s.iter().map(|&i| xs[i]).collect();
            s.iter().map(|&i| ms[i].ln() - 2.0 * k as f64 * qs[i]).sum::<f64>() + 2.0 * pairwise_log_vdm(&pts)
        })
        .collect();
    ln_fact(n) + lse(&terms)
}

fn arcsine_cdf(x: f64) -> f64 {
    if x <= -1.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        0.5 + x.asin() / PI
    }
}

fn semicircle_cdf(x: f64, r: f64) -> f64 {
    let t = (x / r).clamp(-1.0, 1.0);
    0.5 + (t * (1.0 - t * t).sqrt() + t.asin()) / PI
}

/// `I(uniform on [-1, 1])` by midpoint quadrature of the inner potential
/// `int_{-1}^{1} log|x - y| dy / 2 = ((1-x) log(1-x) + (1+x) log(1+x))/2 - 1`.
fn uniform_energy_quadrature() -> f64 {
    let m = 200_000;
    let h = 2.0 / m as f64;
    let xlogx = |t: f64| if t == 0.0 { 0.0 } else { t * t.ln() };
    let mut s = 0.0;
    for i in 0..m {
        let x = -1.0 + (i as f64 + 0.5) * h;
        s += 0.5 * (xlogx(1.0 - x) + xlogx(1.0 + x)) - 1.0;
    }
    -s * h / 2.0
}

// ---------- criteria ----------

fn c01(v: &mut Verdicts) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..=12);
        let xs: Vec<Cplx<f64>> = (0..n).map(|_| Cplx::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let cfg = Configuration::new(xs.iter().map(|&z| Point::scalar(z)).collect(), n - 1).unwrap();
        let rel = (log_abs_vdm(&cfg) - pairwise_log_vdm(&xs)).exp() - 1.0;
        worst = worst.max(rel.abs());
    }
    v.line("1", "Vandermonde vs pairwise-distance product, 200 configurations", worst < 1e-8, format!("max relative error {worst:.2e} (tol 1e-8)"));
}

fn c02(v: &mut Verdicts) {
    let spec = CompactSetSpec::unit_circle(1024);
    let q = Weight::zero();
    let opts = FeketeOptions::default();
    let mut worst: f64 = 0.0;
    let mut norm = Vec::new();
    for k in 1..=12 {
        let r = fekete_points::<f64>(&spec, &q, k, &opts).unwrap();
        let exact = ((k + 1) as f64).powf(1.0 / k as f64);
        worst = worst.max((r.delta_qk / exact - 1.0).abs());
        norm.push((k as f64, r.normalized));
    }
    v.line("2a", "circle delta^{0,k} vs (k+1)^{1/k}, k <= 12, 1024-point grid", worst < 0.005, format!("max relative error {worst:.2e} (tol 0.5%)"));
    let n12 = norm[11].1;
    v.line("2b", "circle normalized value at k = 12 within 1% of 1", (n12 - 1.0).abs() < 0.01, format!("{n12:.5} (closed form 13^(1/24) = {:.5})", 13f64.powf(1.0 / 24.0)));
    v.info("2b", format!("extrapolated limit from k = 10..12: log-aware {:.5}, polynomial Richardson {:.5}", log_fit(&norm[9..]), richardson(&norm[9..])));
}

fn c03(v: &mut Verdicts) {
    let spec = CompactSetSpec::interval(-1.0, 1.0, 200);
    let r = w_energy_identity_check::<f64>(&spec, &Weight::zero(), &[8, 16, 24, 32], &FeketeOptions::default(), &EquilibriumOptions::default())
        .unwrap();
    let oracle = (-0.5 * LN_2).exp();
    let gap = (r.fekete_estimate / oracle - 1.0).abs();
    let egap = (r.energy_estimate / oracle - 1.0).abs();
    v.line(
        "3",
        "interval: Fekete-side limit vs exp(-1/2 log 2) = 0.70711",
        gap < 0.02 && egap < 0.02,
        format!("fekete {:.5} (gap {:.2}%), energy side {:.5} (gap {:.2}%), tol 2%", r.fekete_estimate, 100.0 * gap, r.energy_estimate, 100.0 * egap),
    );
    v.info("3", format!("normalized at k = 8, 16, 24, 32: {:?}", r.normalized.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>()));
    v.info("3", format!("polynomial Richardson in 1/k: {:.5}", r.richardson));
}

fn c04(v: &mut Verdicts) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let weights = ["0", "x^2", "abs(x)/2 + y^2"];
    let mut worst: f64 = 0.0;
    for case in 0..24 {
        let k = 1 + case % 4;
        let m = rng.random_range(k + 2..=25);
        let complex = case % 2 == 1;
        let xs: Vec<Cplx<f64>> =
            (0..m).map(|_| Cplx::new(rng.random_range(-1.0..1.0), if complex { rng.random_range(-1.0..1.0) } else { 0.0 })).collect();
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let ms: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let q = parse_weight(weights[case % 3]).unwrap();
        let pts: Vec<Point<f64>> = xs.iter().map(|&z| Point::scalar(z)).collect();
        let qs: Vec<f64> = pts.iter().map(|p| q.eval(p)).collect();
        let nu = DiscreteMeasure::normalize(pts, ms.clone()).unwrap();
        let z = partition_function(&nu, &q, k).unwrap();
        let rel = (z.log_z - brute_log_z(&xs, nu.masses(), &qs, k)).exp() - 1.0;
        worst = worst.max(rel.abs());
    }
    v.line("4a", "Z_k vs brute-force enumeration, supports <= 25, N_k <= 5", worst < 1e-8, format!("max relative error {worst:.2e} over 24 cases (tol 1e-8)"));

    let nu = DiscreteMeasure::uniform(CompactSetSpec::unit_circle(1024).discretize::<f64>().unwrap()).unwrap();
    let mut pts = Vec::new();
    for k in [5usize, 10, 15] {
        let z = partition_function(&nu, &Weight::zero(), k).unwrap();
        pts.push((k as f64, z.normalized));
    }
    let z15 = pts[2].1;
    let oracle = (ln_fact(16) / 480.0).exp();
    v.line(
        "4b",
        "circle Z_15^{1/480} within 2% of 1",
        (z15 - 1.0).abs() < 0.02,
        format!("{z15:.5}; closed form (16!)^(1/480) = {oracle:.5}, agreement {:.1e}", (z15 / oracle - 1.0).abs()),
    );
    v.info("4b", format!("extrapolated limit from k = 5, 10, 15: log-aware {:.5}", log_fit(&pts)));
}

fn c05(v: &mut Verdicts) {
    let m = 20;
    let xs: Vec<Cplx<f64>> = (0..m).map(|i| Cplx::new(-1.0 + 2.0 * i as f64 / (m - 1) as f64, 0.0)).collect();
    let nu = DiscreteMeasure::uniform(xs.iter().map(|&z| Point::scalar(z)).collect()).unwrap();
    let k = 2;
    // Exact Prob_k over unordered triples.
    let triples = subsets(m, 3);
    let logs: Vec<f64> = triples.iter().map(|s| 2.0 * pairwise_log_vdm(&s.iter().map(|&i| xs[i]).collect::<Vec<_>>())).collect();
    let norm = lse(&logs);
    let mut pair = vec![vec![0.0; m]; m];
    let mut single = vec![0.0; m];
    for (s, l) in triples.iter().zip(&logs) {
        let p = (l - norm).exp();
        for a in 0..3 {
            single[s[a]] += p;
            for b in a + 1..3 {
                pair[s[a]][s[b]] += p;
            }
        }
    }
    let draws = 100_000;
    let sample = sample_dpp(&nu, &Weight::zero(), k, draws, 5, 4).unwrap();
    let mut epair = vec![vec![0.0; m]; m];
    let mut esingle = vec![0.0; m];
    for idx in &sample.indices {
        let mut s = idx.clone();
        s.sort_unstable();
        for a in 0..3 {
            esingle[s[a]] += 1.0;
            for b in a + 1..3 {
                epair[s[a]][s[b]] += 1.0;
            }
        }
    }
    // Pair distribution: three pairs per configuration.
    let mut tv = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            tv += (epair[i][j] / (3.0 * draws as f64) - pair[i][j] / 3.0).abs();
        }
    }
    tv *= 0.5;
    v.line("5a", "DPP pair frequencies vs enumerated Prob_k, 20 points, k = 2, 1e5 draws", tv < 0.03, format!("TV {tv:.4} (tol 0.03)"));
    let mut worst: f64 = 0.0;
    for i in 0..m {
        let p = single[i];
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        worst = worst.max((esingle[i] / draws as f64 - p).abs() / se);
    }
    v.line("5b", "DPP one-point marginals", worst < 3.0, format!("max deviation {worst:.2} stderr (tol 3)"));
}

fn c06(v: &mut Verdicts) {
    let nu = DiscreteMeasure::uniform(CompactSetSpec::unit_circle(256).discretize::<f64>().unwrap()).unwrap();
    let s = sample_dpp(&nu, &Weight::zero(), 8, 2000, 6, 4).unwrap();
    // Unit circle: weighted transfinite diameter 1.
    let r = tail_bound_check(&s, &Weight::zero(), 0.1, 1.0).unwrap();
    let oracle = 0.95f64.powi(144);
    let pass = r.empirical <= oracle + 2.0 * r.stderr && (r.bound / oracle - 1.0).abs() < 1e-12;
    v.line(
        "6",
        "tail bound, circle, k = 8, eta = 0.1, 2000 draws",
        pass,
        format!("empirical {:.4} +- {:.4} vs bound 0.95^144 = {oracle:.3e}", r.empirical, r.stderr),
    );
}

fn c07(v: &mut Verdicts) {
    let opts = EquilibriumOptions::default();
    let arc = equilibrium_measure::<f64>(&CompactSetSpec::interval(-1.0, 1.0, 1000), &Weight::zero(), &opts).unwrap();
    let d = cell_cdf_sup_distance(&arc.mu_eq, &arc.cells, arcsine_cdf);
    let raw = cdf_sup_distance(&arc.mu_eq, arcsine_cdf);
    v.line("7a", "arcsine CDF sup-distance, 2001 grid points", d < 0.01, format!("{d:.2e} on grid cells (atomic Kolmogorov distance {raw:.2e}), tol 0.01"));
    let f_gap = (arc.f_robin / LN_2 - 1.0).abs();
    v.line("7b", "Robin constant of [-1, 1] vs log 2", f_gap < 0.01, format!("F = {:.5} (gap {:.3}%), tol 1%", arc.f_robin, 100.0 * f_gap));

    let semi = equilibrium_measure::<f64>(&CompactSetSpec::interval(-2.0, 2.0, 500), &parse_weight("x^2").unwrap(), &opts).unwrap();
    let ds = cell_cdf_sup_distance(&semi.mu_eq, &semi.cells, |x| semicircle_cdf(x, 1.0));
    v.line("7c", "Q = x^2 on [-2, 2]: semicircle of radius 1", ds < 0.01, format!("CDF distance {ds:.2e}, tol 0.01"));
    let gue = equilibrium_measure::<f64>(&CompactSetSpec::interval(-2.0, 2.0, 500), &parse_weight("x^2/2").unwrap(), &opts).unwrap();
    let dg = cell_cdf_sup_distance(&gue.mu_eq, &gue.cells, |x| semicircle_cdf(x, 2f64.sqrt()));
    v.line("7d", "Q = x^2/2 on [-2, 2]: density sqrt(2 - x^2)/pi", dg < 0.01, format!("CDF distance {dg:.2e}, tol 0.01"));
    let kkt = arc.kkt_residual.max(semi.kkt_residual).max(gue.kkt_residual);
    v.line("7e", "KKT residuals", kkt < 1e-6, format!("max {kkt:.2e}, tol 1e-6"));
}

fn c08(v: &mut Verdicts) {
    let spec = CompactSetSpec::interval(-1.0, 1.0, 100);
    let c = construct_bm_measure::<f64>(&spec, 30, &FeketeOptions::default()).unwrap();
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for k in 1..=15 {
        let bound = c.explicit_bound(k).unwrap();
        let r = verify_bm_inequality(&c.measure, &spec, &Weight::zero(), k, 1000, 80 + k as u64, Some(bound)).unwrap();
        violations += r.explicit_violations + r.christoffel_violations;
        worst = worst.max(r.max_ratio / bound);
    }
    v.line(
        "8a",
        "constructed measure, k_max = 30: explicit inequality, 1000 polynomials per k <= 15",
        violations == 0,
        format!("{violations} violations; largest ratio / bound {worst:.3}"),
    );

    let nu = arcsine_measure::<f64>(-1.0, 1.0, 200).unwrap();
    let grid = CompactSetSpec::interval(-1.0, 1.0, 500);
    let ks: Vec<usize> = (1..=50).collect();
    let r = &strong_bm_scan(&nu, &grid, &[Weight::zero()], &ks, None).unwrap()[0];
    let root50 = r.m_k_root[49];
    v.line(
        "8b",
        "arcsine nu: M_k^{1/k} decreasing and <= 1.06 at k = 50",
        r.root_decreasing && root50 <= 1.06,
        format!("decreasing {}, M_50^(1/50) = {root50:.5}", r.root_decreasing),
    );
    let oracle_gap = r.m_k.iter().zip(&ks).map(|(m, &k)| (m / (2.0 * k as f64 + 1.0).sqrt() - 1.0).abs()).fold(0.0, f64::max);
    v.info("8b", format!("M_k vs Chebyshev closed form sqrt(2k+1): max relative gap {oracle_gap:.1e}"));
}

fn c09(v: &mut Verdicts) {
    let spec = CompactSetSpec::interval(-1.0, 1.0, 200);
    let pts = spec.discretize::<f64>().unwrap();
    let mu = cell_measure(&pts, arcsine_cdf).unwrap();
    let t = monotone_weight_approximation(&mu, &spec, 20, &EquilibriumOptions::default()).unwrap();
    let last = t.rows.last().unwrap();
    let de = (last.energy_j - LN_2).abs();
    v.line(
        "9",
        "monotone weights for arcsine mu: |F_20| < 0.01 and |I(mu_20) - log 2| < 0.01",
        last.f_j.abs() < 0.01 && de < 0.01,
        format!("F_20 = {:.5}, I(mu_20) = {:.5} (gap {de:.5})", last.f_j, last.energy_j),
    );
}

fn c10(v: &mut Verdicts) {
    let spec = CompactSetSpec::interval(-1.0, 1.0, 50);
    let (pts, cells) = spec.discretize_with_cells::<f64>().unwrap();
    let nu = grid_measure(&pts, &cells.unwrap(), |_| 1.0).unwrap();
    let cfg = LdpConfig {
        rate: RateOptions { ks: vec![4, 8, 12, 16, 20], eps: 0.1, moment_degree: 2, samples: 10_000, seed: 10, tilted: true, tilts: 4, restarts: 3 },
        targets: vec![TargetKind::Equilibrium, TargetKind::Uniform],
        equilibrium_tolerance: 0.02,
        relative_tolerance: 0.35,
    };
    let rep = ldp_report(&spec, &nu, &Weight::zero(), &cfg).unwrap();
    let oracle = 0.5 * (uniform_energy_quadrature() - LN_2);
    for (kind, est) in &rep.estimates {
        for r in &est.rows {
            v.info(
                "10",
                format!(
                    "{kind:?} k = {:2}: rate(eps) {:.5} +- {:.5}, rate(eps/2) {:.5} +- {:.5}, floor {:.1e}",
                    r.k, r.rate, r.stderr, r.rate_half, r.stderr_half, r.floor
                ),
            );
        }
        let star = est.k_star.and_then(|k| est.rows.iter().find(|r| r.k == k));
        match kind {
            TargetKind::Equilibrium => {
                let worst = star.map(|r| r.rate.abs().max(r.rate_half.abs())).unwrap_or(f64::INFINITY);
                v.line("10a", "at-equilibrium target: |rate| < 0.02 at the largest feasible k", worst < 0.02, format!("k = {:?}, max |rate| {worst:.2e}", est.k_star));
            }
            TargetKind::Uniform => {
                let mid = est.midpoint.unwrap_or(f64::NAN);
                let gap = (mid / oracle - 1.0).abs();
                v.line(
                    "10b",
                    "uniform target, eps = 0.1, degree 2: bracket midpoint within 35% of 1/2[I(unif) - log 2]",
                    gap <= 0.35,
                    format!("k = {:?}, bracket {:?}, midpoint {mid:.5} vs oracle {oracle:.5} (gap {:.1}%)", est.k_star, est.bracket, 100.0 * gap),
                );
                v.info(
                    "10b",
                    format!("grid prediction {:.5}; eps-extrapolated estimate {:?}", est.prediction, est.eps_extrapolated.map(|x| format!("{x:.5}"))),
                );
            }
        }
    }
}

fn c11(v: &mut Verdicts) {
    let spec = CompactSetSpec::interval_with_points(-1.0, 1.0, 9);
    let pts = spec.discretize::<f64>().unwrap();
    let nu = DiscreteMeasure::uniform(pts.clone()).unwrap();
    let (pts_c, cells) = spec.discretize_with_cells::<f64>().unwrap();
    let targets = [
        grid_measure(&pts_c, &cells.unwrap(), |_| 1.0).unwrap(),
        DiscreteMeasure::dirac(Point::real(0.0)),
        cell_measure(&pts, arcsine_cdf).unwrap(),
    ];
    let q = parse_weight("x^2/2").unwrap();
    let mut checks = 0;
    let mut failures = Vec::new();
    for k in 1..=3 {
        let all = enumerate(None, &nu, &q, k).unwrap();
        let z = partition_function(&nu, &q, k).unwrap();
        checks += 1;
        if (all.log_total - z.log_z).abs() > 1e-9 * z.log_z.abs().max(1.0) {
            failures.push(format!("k={k}: J(M(K)) vs Z_k"));
        }
        for (ti, t) in targets.iter().enumerate() {
            let mut prev = (0.0, 0.0);
            for eps in [0.02, 0.05, 0.1, 0.2, 0.4, 0.8, 10.0] {
                let g = NeighborhoodSpec::new(t.clone(), 2, eps).unwrap();
                let j = j_functional_k(Some(&g), &nu, &q, k, 1, 0, &JMode::Enumerate).unwrap();
                let w = w_functional_k(Some(&g), &spec, &q, k, 1, 0).unwrap();
                checks += 2;
                if j.value > w.value * (1.0 + 1e-12) {
                    failures.push(format!("k={k} target {ti} eps={eps}: J {} > W {}", j.value, w.value));
                }
                if j.value < prev.0 || w.value < prev.1 {
                    failures.push(format!("k={k} target {ti} eps={eps}: not monotone"));
                }
                prev = (j.value, w.value);
            }
        }
    }
    v.line("11", "J_k <= W_k and monotone in G, enumeration mode", failures.is_empty(), format!("{checks} checks, {} failures {:?}", failures.len(), failures));
}

fn main() {
    let criteria: [(&str, fn(&mut Verdicts)); 11] = [
        ("1", c01),
        ("2", c02),
        ("3", c03),
        ("4", c04),
        ("5", c05),
        ("6", c06),
        ("7", c07),
        ("8", c08),
        ("9", c09),
        ("10", c10),
        ("11", c11),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (id, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let t = Instant::now();
        let mut v = Verdicts { all: true };
        let ok = catch_unwind(AssertUnwindSafe(|| f(&mut v))).is_ok();
        if !ok {
            println!("FAIL [{id}] panicked");
        }
        println!("     [{id}] {:.1} s", t.elapsed().as_secs_f64());
        if !(ok && v.all) {
            failed.push(id);
        }
    }
    println!("acceptance: {} criteria failed {:?}", failed.len(), failed);
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
