use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use koopfit::harness::{
    compare_variants, convergence_study, eigscan, ou_replicate_source, run_batch, EstimationSetup, Variant,
    EML_BIAS, EML_RMSE, OU_THETA, OU_T_STEP,
};
use koopfit::io::{read_snapshots, write_batch_csv, write_simulation, write_snapshots, PathRecord};
use koopfit::sim::simulate_snapshots;
use koopfit::{
    BasisFamily, BasisSpec, EstimateResult, FailureRule, InitialCondition, LineSearch, ObjectiveKind,
    ObjectiveSpec, OptimizerConfig, Scheme, SdeModel, SimConfig, SnapshotData,
};
use rayon::prelude::*;
use serde_json::json;

use crate::args::{
    BasisKind, BenchArgs, CompareArgs, ConvergeArgs, EigscanArgs, EstimateArgs, EstimatorArgs, FailureArg,
    Format, OutputArgs, SchemeArg, SimulateArgs,
};

/// Exit status 2 for bad configuration, 1 for everything else.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<koopfit::Error> for Failure {
    fn from(e: koopfit::Error) -> Self {
        match e {
            koopfit::Error::InvalidArgument(_) | koopfit::Error::Ingest { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn config(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json_to(out: Option<&Path>, value: &impl serde::Serialize) -> Outcome {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<File, Failure> {
    File::create(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn basis_spec(kind: BasisKind, n: usize) -> BasisSpec {
    match kind {
        BasisKind::Rbf => BasisSpec::RbfAdaptive { n },
        BasisKind::RbfFixed => BasisSpec::RbfFixedInterval { n },
        BasisKind::Chebyshev => BasisSpec::Chebyshev { n },
        BasisKind::Legendre => BasisSpec::Legendre { n },
    }
}

fn objective_spec(kind: ObjectiveKind, trunc: Option<usize>) -> Result<ObjectiveSpec, Failure> {
    if trunc.is_some() && kind != ObjectiveKind::Frobenius {
        return Err(config("--trunc only applies to the frobenius objective"));
    }
    Ok(ObjectiveSpec {
        j_trunc: trunc,
        ..ObjectiveSpec::new(kind)
    })
}

fn setup(
    model: SdeModel,
    est: &EstimatorArgs,
    init: Vec<f64>,
    default_rule: FailureRule,
) -> Result<EstimationSetup, Failure> {
    if init.len() != model.dim_theta() {
        return Err(config(format!(
            "--init has {} values but model {model} has {} parameters",
            init.len(),
            model.dim_theta()
        )));
    }
    let kind: ObjectiveKind = est.objective.parse()?;
    let mut opt = OptimizerConfig::new(init);
    opt.max_iter = est.max_iter;
    opt.grad_tol = est.grad_tol;
    opt.fd_step = est.fd_step;
    opt.failure_rule = match est.failure_rule {
        Some(FailureArg::Abs1) => FailureRule::AbsGreaterOne,
        Some(FailureArg::None) => FailureRule::None,
        None => default_rule,
    };
    if let Some(ls) = &est.line_search {
        opt.line_search = Some(ls.parse::<LineSearch>()?);
    }
    opt.validate()?;
    let mut s = EstimationSetup::new(model, basis_spec(est.basis, est.n_basis), objective_spec(kind, est.trunc)?, opt);
    s.gmm_two_pass = est.gmm_two_pass;
    Ok(s)
}

pub fn simulate(a: &SimulateArgs) -> Outcome {
    let model: SdeModel = a.model.parse()?;
    if a.points < 2 {
        return Err(config("--T must be at least 2 (one snapshot pair)"));
    }
    let scheme = match a.scheme {
        Some(SchemeArg::Exact) => Scheme::ExactOu,
        Some(SchemeArg::Milstein) => Scheme::Milstein,
        None if model == SdeModel::OrnsteinUhlenbeck => Scheme::ExactOu,
        None => Scheme::Milstein,
    };
    let x0 = match a.x0.as_deref() {
        Some("stationary") => InitialCondition::Stationary,
        Some(v) => InitialCondition::Value(v.parse().map_err(|_| config(format!("bad --x0 '{v}'")))?),
        None if model == SdeModel::OrnsteinUhlenbeck => {
            InitialCondition::Value(a.theta.get(1).copied().ok_or_else(|| config("--theta needs 3 values for ou"))?)
        }
        None => InitialCondition::Stationary,
    };
    let internal_dt = match scheme {
        Scheme::ExactOu => a.dt,
        Scheme::Milstein => a.internal_dt.unwrap_or(a.dt),
    };
    let cfg = SimConfig {
        theta: a.theta.clone(),
        t_step: a.dt,
        n_points: a.points - 1,
        n_paths: a.paths,
        x0,
        seed: a.seed,
        scheme,
        internal_dt,
    };
    let sim = simulate_snapshots(model, &cfg)?;
    if sim.clamp_count > 0 {
        log::warn!("{} sub-steps were clamped into the state space", sim.clamp_count);
    }
    match &a.out {
        Some(p) => write_simulation(p, &sim)?,
        None => write_snapshots(io::stdout().lock(), &sim.paths)?,
    }
    Ok(())
}

fn write_records(out: &OutputArgs, records: &[PathRecord]) -> Outcome {
    match out.format {
        Format::Csv => write_batch_csv(sink(out.out.as_deref())?, records)?,
        Format::Json => {
            let rows: Vec<_> = records
                .iter()
                .map(|r| json!({ "path_id": r.path_id, "result": r.result }))
                .collect();
            write_json_to(out.out.as_deref(), &rows)?;
        }
    }
    Ok(())
}

pub fn estimate(a: &EstimateArgs) -> Outcome {
    let (paths, meta) = read_snapshots(&a.data, a.dt)?;
    let model: SdeModel = match (&a.model, &meta) {
        (Some(m), _) => m.parse()?,
        (None, Some(meta)) => meta.model,
        (None, None) => return Err(config("--model is required when the data has no sidecar")),
    };
    let s = setup(model, &a.est, a.init.clone(), FailureRule::None)?;
    let datasets = if a.pool { vec![SnapshotData::concat(&paths)?] } else { paths };

    if let [single] = datasets.as_slice() {
        let r: EstimateResult = s.estimate(single)?;
        if !r.converged {
            log::warn!("optimizer stopped without meeting the gradient tolerance");
        }
        return match a.output.format {
            Format::Json => write_json_to(a.output.out.as_deref(), &r),
            Format::Csv => write_records(&a.output, &[PathRecord { path_id: 0, result: r }]),
        };
    }
    let records: Vec<PathRecord> = datasets
        .par_iter()
        .enumerate()
        .map(|(path_id, d)| PathRecord {
            path_id,
            result: s.estimate_or_fail(d),
        })
        .collect();
    let n_fail = records.iter().filter(|r| r.result.failed).count();
    if n_fail > 0 {
        log::warn!("{n_fail} of {} paths failed", records.len());
    }
    write_records(&a.output, &records)
}

fn ou_init(init: &Option<Vec<f64>>, theta: &[f64]) -> Vec<f64> {
    init.clone().unwrap_or_else(|| theta.to_vec())
}

pub fn bench(a: &BenchArgs) -> Outcome {
    let theta = a.theta.clone().unwrap_or_else(|| OU_THETA.to_vec());
    let datasets = match &a.data {
        Some(p) => read_snapshots(p, a.dt)?.0,
        None => {
            let cfg = SimConfig::exact_ou(theta.clone(), a.dt.unwrap_or(OU_T_STEP), a.points, a.paths, a.seed);
            simulate_snapshots(SdeModel::OrnsteinUhlenbeck, &cfg)?.paths
        }
    };
    let s = setup(SdeModel::OrnsteinUhlenbeck, &a.est, ou_init(&a.init, &theta), FailureRule::AbsGreaterOne)?;
    let out = run_batch(&s, &theta, &datasets)?;
    if let Some(p) = &a.records {
        write_batch_csv(create(p)?, &out.records)?;
    }
    let st = &out.stats;
    match a.output.format {
        Format::Json => write_json_to(
            a.output.out.as_deref(),
            &json!({
                "theta_true": st.theta_true,
                "bias": st.bias,
                "rmse": st.rmse,
                "n_fail": st.n_fail,
                "n_paths": st.n_paths,
                "reference_eml": { "bias": EML_BIAS, "rmse": EML_RMSE },
            }),
        ),
        Format::Csv => {
            let mut w = sink(a.output.out.as_deref())?;
            writeln!(w, "parameter,theta_true,bias,rmse,eml_bias,eml_rmse,n_fail,n_paths")?;
            for k in 0..st.bias.len() {
                writeln!(
                    w,
                    "theta_{},{},{},{},{},{},{},{}",
                    k + 1,
                    st.theta_true[k],
                    st.bias[k],
                    st.rmse[k],
                    EML_BIAS.get(k).copied().unwrap_or(f64::NAN),
                    EML_RMSE.get(k).copied().unwrap_or(f64::NAN),
                    st.n_fail,
                    st.n_paths
                )?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

pub fn converge(a: &ConvergeArgs) -> Outcome {
    let s = setup(SdeModel::OrnsteinUhlenbeck, &a.est, ou_init(&a.init, &OU_THETA), FailureRule::AbsGreaterOne)?;
    let j: Vec<u32> = (0..=a.j_max).collect();
    let longest = a
        .base_t
        .checked_shl(a.j_max)
        .filter(|t| t >> a.j_max == a.base_t)
        .ok_or_else(|| config("--base-t · 2^j-max overflows"))?;
    let table = convergence_study(&s, &OU_THETA, a.base_t, &j, a.replicates, ou_replicate_source(longest, a.seed))?;
    for (k, f) in table.slopes.iter().enumerate() {
        log::info!("theta_{} RMSE slope {:.3} ± {:.3}", k + 1, f.slope, f.stderr);
    }
    if let Some(p) = &a.plot_data {
        table.write_plot_csv(create(p)?)?;
    }
    match a.output.format {
        Format::Json => write_json_to(a.output.out.as_deref(), &table),
        Format::Csv => Ok(table.write_plot_csv(sink(a.output.out.as_deref())?)?),
    }
}

pub fn eigscan_cmd(a: &EigscanArgs) -> Outcome {
    let family: BasisFamily = a.family.parse()?;
    let poly = family != BasisFamily::GaussianRbf;
    let n_min = a.n_min.unwrap_or(if poly { 2 } else { 4 });
    let n_max = a.n_max.unwrap_or(if poly { 16 } else { 24 });
    let j_min = a.j_min.unwrap_or(n_min);
    if n_min == 0 || j_min == 0 || n_min > n_max {
        return Err(config("need 1 ≤ n-min ≤ n-max and j-min ≥ 1"));
    }
    if a.substeps == 0 || !(a.internal_dt > 0.0) || !(a.horizon > 0.0) {
        return Err(config("horizon, internal-dt and substeps must be positive"));
    }
    let t_step = a.internal_dt * a.substeps as f64;
    let n_points = (a.horizon / t_step).round() as usize;
    let cfg = SimConfig::milstein(a.theta.clone(), a.internal_dt, a.substeps, n_points, InitialCondition::Stationary, a.seed);
    let sim = simulate_snapshots(SdeModel::BoundedMeanReversion, &cfg)?;
    let data = &sim.paths[0];
    let n: Vec<usize> = (n_min..=n_max).collect();
    let j: Vec<usize> = (j_min..=n_max).collect();
    let opt = OptimizerConfig::new(a.init.clone().unwrap_or_else(|| a.theta.clone()));
    let grid = eigscan(SdeModel::BoundedMeanReversion, &a.theta, data, family, &n, &j, &opt)?;
    log::info!(
        "{} of {} cells inside the band",
        grid.cells.iter().filter(|c| c.in_band).count(),
        grid.cells.len()
    );
    if let Some(p) = &a.plot_data {
        grid.write_plot_csv(create(p)?)?;
    }
    match a.output.format {
        Format::Json => write_json_to(a.output.out.as_deref(), &grid),
        Format::Csv => Ok(grid.write_plot_csv(sink(a.output.out.as_deref())?)?),
    }
}

fn records_path(prefix: &Path, variant: &str) -> PathBuf {
    let stem = prefix.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    prefix.with_file_name(format!("{stem}_{variant}.csv"))
}

pub fn compare(a: &CompareArgs) -> Outcome {
    if a.variants.is_empty() {
        return Err(config("--variants needs at least one objective"));
    }
    let mut variants = Vec::with_capacity(a.variants.len());
    for name in &a.variants {
        let est = EstimatorArgs {
            objective: name.clone(),
            trunc: if name == "frobenius" { a.est.trunc } else { None },
            ..a.est.clone()
        };
        variants.push(Variant {
            name: name.clone(),
            setup: setup(SdeModel::OrnsteinUhlenbeck, &est, ou_init(&a.init, &OU_THETA), FailureRule::AbsGreaterOne)?,
        });
    }
    let t = a.points.checked_shl(a.j).filter(|t| t >> a.j == a.points).ok_or_else(|| config("--points · 2^j overflows"))?;
    let cmp = compare_variants(&variants, &OU_THETA, a.paths, ou_replicate_source(t, a.seed))?;
    if let Some(prefix) = &a.records {
        for (name, recs) in cmp.names.iter().zip(&cmp.records) {
            write_batch_csv(create(&records_path(prefix, name))?, recs)?;
        }
    }
    match a.output.format {
        Format::Csv => Ok(cmp.write_csv(sink(a.output.out.as_deref())?)?),
        Format::Json => {
            let rows: Vec<_> = cmp
                .names
                .iter()
                .zip(&cmp.stats)
                .map(|(n, s)| json!({ "variant": n, "stats": s }))
                .collect();
            write_json_to(a.output.out.as_deref(), &json!({ "T": t, "variants": rows }))
        }
    }
}
