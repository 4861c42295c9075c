use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use tinbc::design::{design_search, DesignCandidate, DesignError, DesignOutcome};
use tinbc::link::{
    empirical_id_check, hard_decisions, random_payloads, simulate_frame, simulate_frame_with, uncoded_ber, user_llrs,
    FrameDump, LlrMode, NoiseMode,
};
use tinbc::rate::{
    benchmark_links, berry_esseen_constant, estimate_mi_dispersion, evaluate_plan, gaussian_rates, quadrature_mi,
    shell_benchmark_links, BenchmarkMode, EstimatorSettings, RateError, RateResult, MAX_ORACLE_POINTS,
};
use tinbc::scheme::{
    order_bound_rhs, plan, verify_min_distances, OrderMatrix, PlanFile, SchemeError, SchemePlan, SubBlockLayout,
    SystemSpec,
};

use crate::config::ExperimentConfig;
use crate::output::{indexed, join, join_num, num, RunMeta, Table};

#[derive(Debug)]
pub enum Failure {
    /// Bad config, plan file or arguments. Exit code 2.
    Config(String),
    /// No admissible design. Exit code 3.
    NoDesign(String),
    /// Some validation checks failed. Exit code 1.
    Validation(usize),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<RateError> for Failure {
    fn from(e: RateError) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<tinbc::link::LinkError> for Failure {
    fn from(e: tinbc::link::LinkError) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<DesignError> for Failure {
    fn from(e: DesignError) -> Self {
        match e {
            DesignError::Rate(e) => Failure::Runtime(e.into()),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn scheme_err(what: &str) -> impl Fn(SchemeError) -> Failure + '_ {
    move |e| Failure::Config(format!("{what}: {e}"))
}

pub struct Run {
    pub config: ExperimentConfig,
    pub spec: SystemSpec,
    pub layout: SubBlockLayout,
    pub settings: EstimatorSettings,
    pub out: PathBuf,
}

impl Run {
    fn meta(&self) -> RunMeta {
        RunMeta {
            seed: self.settings.seed,
            samples: self.settings.noise_samples,
        }
    }

    fn users(&self) -> usize {
        self.layout.user_count()
    }

    /// Order matrices of the grid, or the design search result when the grid is empty.
    fn matrices_or(&self, fallback: impl FnOnce() -> Result<Vec<OrderMatrix>, Failure>) -> Result<Vec<OrderMatrix>, Failure> {
        let grid = self.config.order_matrices().map_err(|e| Failure::Config(e.to_string()))?;
        if grid.is_empty() {
            fallback()
        } else {
            Ok(grid)
        }
    }

    fn plan_for(&self, orders: &OrderMatrix) -> Result<SchemePlan, Failure> {
        plan(&self.spec, orders).map_err(scheme_err(&format!("orders {orders}")))
    }

    fn search(&self) -> Result<DesignOutcome, Failure> {
        Ok(design_search(&self.spec, &self.config.weights(), self.settings)?)
    }

    /// Weights in blocklength order.
    fn sorted_weights(&self) -> Vec<f64> {
        let w = self.config.weights();
        self.layout.user_order.iter().map(|&i| w[i]).collect()
    }
}

pub fn design(run: &Run, plan_out: Option<&Path>) -> Result<(), Failure> {
    let k = run.users();
    let mut columns: Vec<String> = ["rank", "pareto", "orders", "weighted_sum"].map(String::from).to_vec();
    columns.extend(indexed("r", k));
    columns.extend(indexed("k", k));
    columns.extend(indexed("n", k));
    columns.extend(indexed("p", k));
    columns.push("slack".into());
    let mut table = Table::create(&run.out, &run.meta(), &columns)?;

    let outcome = run.search()?;
    let list: &[DesignCandidate] = if run.config.grid.all_candidates {
        &outcome.evaluated
    } else {
        &outcome.candidates
    };
    for (rank, c) in list.iter().enumerate() {
        let mut row = vec![
            (rank + 1).to_string(),
            c.pareto.to_string(),
            c.orders.to_string(),
            num(c.weighted_sum),
        ];
        row.extend(c.rates.users.iter().map(|u| num(u.rate.rate)));
        row.extend(c.code.iter().map(|p| p.k.to_string()));
        row.extend(c.code.iter().map(|p| p.n.to_string()));
        row.extend(c.plan.powers.iter().map(|p| join_num(p, ";")));
        row.push(join_num(&c.slack, ";"));
        table.row(row)?;
    }
    table.finish()?;

    let Some(best) = outcome.candidates.first() else {
        let why = outcome.explanation.unwrap_or_else(|| "no admissible order matrix".into());
        return Err(Failure::NoDesign(why));
    };
    if let Some(path) = plan_out {
        let json = serde_json::to_string_pretty(&best.plan.to_file()).context("serializing plan")?;
        std::fs::write(path, json + "\n").with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

/// Indices of rows not dominated on the weighted users.
fn pareto_flags(rates: &[Vec<f64>], weights: &[f64]) -> Vec<bool> {
    let active: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    let dominates = |a: &[f64], b: &[f64]| {
        active.iter().all(|&i| a[i] >= b[i]) && active.iter().any(|&i| a[i] > b[i])
    };
    rates
        .par_iter()
        .map(|r| !rates.iter().any(|o| dominates(o, r)))
        .collect()
}

/// Every split of `steps` units among `parts` participants, lexicographic.
fn compositions(steps: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 0 {
        return vec![Vec::new()];
    }
    if parts == 1 {
        return vec![vec![steps]];
    }
    let mut out = Vec::new();
    for first in 0..=steps {
        for mut rest in compositions(steps - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Power matrices on the simplex grid, each active sub-block carrying the
/// full power `P`. Returns the matrix and a label per point.
fn power_grid(spec: &SystemSpec, layout: &SubBlockLayout, steps: usize) -> Vec<(Vec<Vec<f64>>, String)> {
    let k = layout.user_count();
    let per_block: Vec<Vec<Vec<usize>>> = layout
        .sub_blocks
        .iter()
        .map(|sb| {
            if sb.is_empty() {
                vec![vec![0; sb.participants.len()]]
            } else {
                compositions(steps, sb.participants.len())
            }
        })
        .collect();
    let mut out = Vec::new();
    let mut choice = vec![0usize; k];
    loop {
        let mut powers = vec![vec![0.0; k]; k];
        let mut label = Vec::with_capacity(k);
        for (j, sb) in layout.sub_blocks.iter().enumerate() {
            let split = &per_block[j][choice[j]];
            for (&u, &s) in sb.participants.iter().zip(split) {
                powers[u][j] = spec.total_power * s as f64 / steps as f64;
            }
            label.push(join(&split.iter().map(|&s| num(s as f64 / steps as f64)).collect::<Vec<_>>(), ","));
        }
        out.push((powers, label.join(";")));
        // Odometer with the last sub-block fastest.
        let mut j = k;
        loop {
            if j == 0 {
                return out;
            }
            j -= 1;
            choice[j] += 1;
            if choice[j] < per_block[j].len() {
                break;
            }
            choice[j] = 0;
        }
    }
}

pub fn rate_region(run: &Run) -> Result<(), Failure> {
    let k = run.users();
    let mut columns: Vec<String> = ["scheme", "point", "pareto"].map(String::from).to_vec();
    columns.extend(indexed("r", k));
    let mut table = Table::create(&run.out, &run.meta(), &columns)?;
    let weights = run.sorted_weights();

    let mut qam: Vec<(String, Vec<f64>)> = Vec::new();
    let grid = run.config.order_matrices().map_err(|e| Failure::Config(e.to_string()))?;
    if grid.is_empty() {
        for c in run.search()?.evaluated {
            qam.push((c.orders.to_string(), c.rates.rates()));
        }
    } else {
        let plans = grid.iter().map(|o| run.plan_for(o)).collect::<Result<Vec<_>, _>>()?;
        for (o, p) in grid.iter().zip(&plans) {
            qam.push((o.to_string(), evaluate_plan(p, run.settings)?.rates()));
        }
    }

    let users = run.layout.sorted_users(&run.spec);
    let points = power_grid(&run.spec, &run.layout, run.config.grid.power_steps);
    let mut sections = vec![("qam-tin", qam)];
    for (name, mode) in [("gaussian-tin", BenchmarkMode::Tin), ("gaussian-sic", BenchmarkMode::PerfectSic)] {
        let rows = points
            .iter()
            .map(|(powers, label)| Ok((label.clone(), gaussian_rates(&users, &run.layout, powers, mode)?)))
            .collect::<Result<Vec<_>, RateError>>()?;
        sections.push((name, rows));
    }

    for (name, rows) in sections {
        let rates: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
        let flags = pareto_flags(&rates, &weights);
        for ((label, r), flag) in rows.iter().zip(flags) {
            let mut row = vec![name.to_string(), label.clone(), flag.to_string()];
            row.extend(r.iter().map(|x| num(*x)));
            table.row(row)?;
        }
    }
    table.finish()?;
    Ok(())
}

pub fn benchmark(run: &Run) -> Result<(), Failure> {
    let columns: Vec<String> = [
        "orders",
        "user",
        "blocklength",
        "epsilon",
        "power",
        "qam_tin",
        "qam_first_order",
        "qam_dispersion",
        "gaussian_tin",
        "gaussian_sic",
        "shell",
        "berry_esseen",
    ]
    .map(String::from)
    .to_vec();
    let mut table = Table::create(&run.out, &run.meta(), &columns)?;
    let matrices = run.matrices_or(|| Ok(run.search()?.candidates.into_iter().map(|c| c.orders).collect()))?;
    let users = run.layout.sorted_users(&run.spec);
    for orders in &matrices {
        let p = run.plan_for(orders)?;
        let qam = evaluate_plan(&p, run.settings)?;
        let tin = gaussian_rates(&users, &run.layout, &p.powers, BenchmarkMode::Tin)?;
        let sic = gaussian_rates(&users, &run.layout, &p.powers, BenchmarkMode::PerfectSic)?;
        let links = benchmark_links(&users, &run.layout, &p.powers, BenchmarkMode::PerfectSic);
        for (u, ur) in qam.users.iter().enumerate() {
            let shell = match shell_benchmark_links(&links[u], &run.layout.lengths_for(u), ur.epsilon, ur.blocklength) {
                Ok(r) => num(r),
                Err(RateError::InterferencePresent(_)) => String::new(),
                Err(e) => return Err(e.into()),
            };
            let be = berry_esseen_constant(&p, u, run.settings)?;
            table.row(vec![
                orders.to_string(),
                (u + 1).to_string(),
                ur.blocklength.to_string(),
                num(ur.epsilon),
                num(p.user_power(u)),
                num(ur.rate.rate),
                num(ur.rate.first_order),
                num(ur.rate.dispersion),
                num(tin[u]),
                num(sic[u]),
                shell,
                num(be),
            ])?;
        }
    }
    table.finish()?;
    Ok(())
}

pub fn simulate(run: &Run, dump: Option<&Path>) -> Result<(), Failure> {
    let columns: Vec<String> = ["orders", "user", "llr", "frames", "bits", "errors", "ber"].map(String::from).to_vec();
    let mut table = Table::create(&run.out, &run.meta(), &columns)?;
    let matrices = run.matrices_or(|| {
        let best = run.search()?.candidates.into_iter().next();
        best.map(|c| vec![c.orders])
            .ok_or_else(|| Failure::NoDesign("no admissible order matrix to simulate".into()))
    })?;
    let sim = &run.config.simulate;
    let seed = run.settings.seed;
    let mut plans = Vec::with_capacity(matrices.len());
    for orders in &matrices {
        let p = run.plan_for(orders)?;
        for u in 0..p.user_count() {
            let ber = uncoded_ber(&p, u, sim.frames, seed, sim.llr)?;
            table.row(vec![
                orders.to_string(),
                (u + 1).to_string(),
                llr_name(sim.llr).into(),
                sim.frames.to_string(),
                ber.bits.to_string(),
                ber.errors.to_string(),
                num(ber.rate()),
            ])?;
        }
        plans.push(p);
    }
    table.finish()?;

    let dump = dump.map(Path::to_path_buf).or_else(|| sim.dump.as_ref().map(PathBuf::from));
    if let (Some(path), Some(p)) = (dump, plans.first()) {
        write_dump(&path, p, seed, sim.llr)?;
    }
    Ok(())
}

fn llr_name(mode: LlrMode) -> &'static str {
    match mode {
        LlrMode::Exact => "exact",
        LlrMode::MaxLog => "max-log",
    }
}

/// One record per user from a single frame, concatenated.
fn write_dump(path: &Path, p: &SchemePlan, seed: u64, mode: LlrMode) -> Result<(), Failure> {
    let payloads = random_payloads(p, seed, 0);
    let rx = simulate_frame(p, &payloads, seed)?;
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for (u, bits) in payloads.iter().enumerate() {
        let record = FrameDump {
            user: u as u32,
            bits: bits.clone(),
            symbols: rx.frame.per_user[u].clone(),
            y: rx.y[u].clone(),
            llrs: user_llrs(&rx, u, p, mode)?,
        };
        record.write_to(&mut w).context("writing frame dump")?;
    }
    w.flush().context("writing frame dump")?;
    Ok(())
}

struct Checks {
    table: Table,
    total: usize,
    failed: usize,
}

impl Checks {
    fn record(&mut self, check: &str, subject: &str, pass: bool, detail: String) -> Result<(), Failure> {
        self.total += 1;
        if !pass {
            self.failed += 1;
        }
        self.table.row(vec![
            check.into(),
            subject.into(),
            if pass { "pass" } else { "fail" }.into(),
            detail,
        ])?;
        Ok(())
    }
}

/// Frames used by the information-density check.
const ID_CHECK_FRAMES: usize = 64;

pub fn validate(run: &Run, plan_path: Option<&Path>) -> Result<(), Failure> {
    let columns: Vec<String> = ["check", "subject", "status", "detail"].map(String::from).to_vec();
    let table = Table::create(&run.out, &run.meta(), &columns)?;
    let mut checks = Checks {
        table,
        total: 0,
        failed: 0,
    };

    let mut plans: Vec<(String, SchemePlan)> = Vec::new();
    if let Some(path) = plan_path {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        let file: PlanFile =
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("invalid plan file {}: {e}", path.display())))?;
        let p = file.rebuild().map_err(scheme_err("plan file"))?;
        let expected = run.layout.sorted_users(&run.spec);
        let same = p.users == expected && p.total_power == run.spec.total_power;
        checks.record("plan-matches-config", "plan", same, String::new())?;
        plans.push(("plan".into(), p));
    }
    for orders in run.config.order_matrices().map_err(|e| Failure::Config(e.to_string()))? {
        plans.push((orders.to_string(), run.plan_for(&orders)?));
    }

    for j in 0..run.users() {
        let rhs = order_bound_rhs(&run.spec, &run.layout, j);
        checks.record("order-bound", &format!("sub-block {}", j + 1), !rhs.is_empty(), join(&rhs, ";"))?;
    }

    for (name, p) in &plans {
        validate_plan(&mut checks, name, p, run.settings)?;
    }

    let Checks { table, total, failed } = checks;
    table.finish()?;
    println!(
        "{}",
        serde_json::json!({ "checks": total, "failed": failed, "status": if failed == 0 { "pass" } else { "fail" } })
    );
    if failed > 0 {
        return Err(Failure::Validation(failed));
    }
    Ok(())
}

fn validate_plan(checks: &mut Checks, name: &str, p: &SchemePlan, settings: EstimatorSettings) -> Result<(), Failure> {
    let mut worst = 0.0f64;
    for sb in &p.layout.sub_blocks {
        let active = sb.participants.iter().any(|&u| p.orders.get(u, sb.index) > 0);
        let column: f64 = sb.participants.iter().map(|&u| p.powers[u][sb.index]).sum();
        let expect = if active { p.total_power } else { 0.0 };
        worst = worst.max((column - expect).abs() / p.total_power);
    }
    checks.record("power", name, worst <= 1e-9, format!("max relative error {}", num(worst)))?;

    let distances = verify_min_distances(p).map_err(|e| Failure::Runtime(e.into()))?;
    checks.record(
        "min-distance",
        name,
        distances.all_at_least(1.0 - 1e-9),
        format!("smallest {}", num(distances.smallest())),
    )?;

    let round_trip = serde_json::to_string(&p.to_file())
        .ok()
        .and_then(|s| serde_json::from_str::<PlanFile>(&s).ok())
        .and_then(|f| f.rebuild().ok())
        .is_some_and(|q| q.orders == p.orders && q.codeword_lengths == p.codeword_lengths);
    checks.record("plan-file", name, round_trip, String::new())?;

    let payloads = random_payloads(p, settings.seed, 1);
    let rx = simulate_frame_with(p, &payloads, settings.seed, NoiseMode::Silent)?;
    let mut exact = true;
    for (u, bits) in payloads.iter().enumerate() {
        exact &= hard_decisions(&user_llrs(&rx, u, p, LlrMode::Exact)?) == *bits;
    }
    checks.record("zero-noise-round-trip", name, exact, String::new())?;

    let rates: RateResult = evaluate_plan(p, settings)?;
    let nonneg = rates.users.iter().flat_map(|u| &u.sub_blocks).all(|s| s.dispersion >= 0.0);
    checks.record("dispersion-nonnegative", name, nonneg, String::new())?;

    for u in 0..p.user_count() {
        let subject = format!("{name} user {}", u + 1);
        for j in 0..=u {
            let m = p.orders.get(u, j);
            if m == 0 || p.layout.sub_blocks[j].is_empty() || !p.interferers(u, j).is_empty() || (1usize << m) > MAX_ORACLE_POINTS {
                continue;
            }
            let c = p.user_constellation(u, j);
            let stats = estimate_mi_dispersion(&c, &[], p.channel(u), settings)?;
            let oracle = quadrature_mi(&c, p.channel(u))?;
            let diff = (stats.mutual_information - oracle).abs();
            let tol = 4.0 * stats.std_err_mi + 1e-6;
            checks.record(
                "estimator-vs-quadrature",
                &format!("{subject} sub-block {}", j + 1),
                diff <= tol,
                format!("difference {} tolerance {}", num(diff), num(tol)),
            )?;
        }
        let report = empirical_id_check(p, u, ID_CHECK_FRAMES, settings.seed, settings)?;
        let worst = report
            .entries
            .iter()
            .map(|e| e.z_mean.abs().max(e.z_variance.abs()))
            .fold(0.0, f64::max);
        checks.record("information-density", &subject, report.passed(), format!("largest deviation {} sigma", num(worst)))?;
    }
    Ok(())
}
