//! Monte Carlo experiments: batch bias/RMSE statistics, convergence studies,
//! `(N, J)` truncation grids and paired variant comparisons.
//!
//! All loops are parallel over independent tasks and merge results in task
//! order, so outputs are a pure function of the inputs and seeds.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisFamily, BasisSpec};
use crate::data::SnapshotData;
use crate::error::{invalid, Error, Result};
use crate::estimator::{
    classify_failure, estimate, estimate_gmm_two_pass, EstimateResult, FailureRule, OptimizerConfig,
};
use crate::io::PathRecord;
use crate::model::SdeModel;
use crate::objective::{EdmdProblem, Objective, ObjectiveKind, ObjectiveSpec};
use crate::sim::{simulate_snapshots, SimConfig};

/// Bias of the exact maximum-likelihood estimator on the reference OU study.
pub const EML_BIAS: [f64; 3] = [0.1101, -0.0006, 0.0001];
/// RMSE of the exact maximum-likelihood estimator on the reference OU study.
pub const EML_RMSE: [f64; 3] = [0.1780, 0.0227, 0.0010];
/// Estimates inside this band count as accurate in truncation grids.
pub const PLOT_BAND: (f64, f64) = (0.9, 1.1);

/// Reference OU parameters `(θ1, θ2, θ3)`.
pub const OU_THETA: [f64; 3] = [0.2, 0.08, 0.03];
/// Monthly sampling.
pub const OU_T_STEP: f64 = 1.0 / 12.0;
/// Snapshot pairs per path in the reference protocol (501 stored points).
pub const OU_N_POINTS: usize = 500;

/// How each dataset is turned into an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationSetup {
    pub model: SdeModel,
    pub basis: BasisSpec,
    pub objective: ObjectiveSpec,
    pub optimizer: OptimizerConfig,
    /// Re-estimate GMM with the moment covariance as weight.
    #[serde(default)]
    pub gmm_two_pass: bool,
}

impl EstimationSetup {
    pub fn new(model: SdeModel, basis: BasisSpec, objective: ObjectiveSpec, optimizer: OptimizerConfig) -> Self {
        Self {
            model,
            basis,
            objective,
            optimizer,
            gmm_two_pass: false,
        }
    }

    /// OU reference protocol: adaptive RBFs, Frobenius objective, started
    /// at the true parameters, failure rule on.
    pub fn ou_reference(n_basis: usize) -> Self {
        Self::new(
            SdeModel::OrnsteinUhlenbeck,
            BasisSpec::RbfAdaptive { n: n_basis },
            ObjectiveSpec::frobenius(),
            OptimizerConfig::new(OU_THETA.to_vec()).with_failure_rule(FailureRule::AbsGreaterOne),
        )
    }

    pub fn with_objective(mut self, objective: ObjectiveSpec) -> Self {
        self.objective = objective;
        self
    }

    /// Estimates one dataset.
    pub fn estimate(&self, data: &SnapshotData) -> Result<EstimateResult> {
        let basis = self.basis.build(data)?;
        let problem = EdmdProblem::new(self.model, &basis, data)?;
        if self.objective.kind == ObjectiveKind::Gmm && self.gmm_two_pass {
            return Ok(estimate_gmm_two_pass(&problem, &self.optimizer)?.0);
        }
        estimate(&Objective::new(&problem, &self.objective)?, &self.optimizer)
    }

    /// Like [`estimate`](Self::estimate) but turns errors into a failed
    /// record with NaN parameters.
    pub fn estimate_or_fail(&self, data: &SnapshotData) -> EstimateResult {
        self.estimate(data).unwrap_or_else(|e| {
            log::warn!("estimation failed: {e}");
            EstimateResult {
                theta_hat: vec![f64::NAN; self.model.dim_theta()],
                objective_value: f64::NAN,
                iterations: 0,
                converged: false,
                failed: true,
                gradient_norm: f64::NAN,
                wall_time: 0.0,
            }
        })
    }
}

/// Simulates the OU reference protocol with the exact sampler.
pub fn simulate_ou_reference(n_paths: usize, n_points: usize, seed: u64) -> Result<Vec<SnapshotData>> {
    let cfg = SimConfig::exact_ou(OU_THETA.to_vec(), OU_T_STEP, n_points, n_paths, seed);
    Ok(simulate_snapshots(SdeModel::OrnsteinUhlenbeck, &cfg)?.paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub bias: Vec<f64>,
    pub rmse: Vec<f64>,
    pub n_fail: usize,
    pub n_paths: usize,
    pub theta_true: Vec<f64>,
}

impl BatchStats {
    /// Bias and RMSE over the estimates not flagged as failed.
    pub fn from_estimates<'a, I>(theta_true: &[f64], estimates: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], bool)>,
    {
        let k = theta_true.len();
        let mut sum = vec![0.0; k];
        let mut sum_sq = vec![0.0; k];
        let (mut n_ok, mut n_fail) = (0usize, 0usize);
        for (theta, failed) in estimates {
            if failed {
                n_fail += 1;
                continue;
            }
            if theta.len() != k {
                return Err(invalid("estimate dimension differs from the true parameter"));
            }
            for j in 0..k {
                let e = theta[j] - theta_true[j];
                sum[j] += e;
                sum_sq[j] += e * e;
            }
            n_ok += 1;
        }
        if n_ok == 0 {
            return Err(Error::AllPathsFailed { n_fail });
        }
        let m = n_ok as f64;
        Ok(Self {
            bias: sum.iter().map(|s| s / m).collect(),
            rmse: sum_sq.iter().map(|s| (s / m).sqrt()).collect(),
            n_fail,
            n_paths: n_ok + n_fail,
            theta_true: theta_true.to_vec(),
        })
    }

    pub fn from_records(theta_true: &[f64], records: &[PathRecord]) -> Result<Self> {
        Self::from_estimates(
            theta_true,
            records.iter().map(|r| (r.result.theta_hat.as_slice(), r.result.failed)),
        )
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub stats: BatchStats,
    pub records: Vec<PathRecord>,
}

/// Estimates every dataset independently and summarises the non-failed
/// estimates. Datasets whose estimation errors count as failures.
pub fn run_batch(setup: &EstimationSetup, theta_true: &[f64], datasets: &[SnapshotData]) -> Result<BatchOutput> {
    if datasets.is_empty() {
        return Err(invalid("a batch needs at least one dataset"));
    }
    let records: Vec<PathRecord> = datasets
        .par_iter()
        .enumerate()
        .map(|(path_id, d)| PathRecord {
            path_id,
            result: setup.estimate_or_fail(d),
        })
        .collect();
    let stats = BatchStats::from_records(theta_true, &records)?;
    Ok(BatchOutput { stats, records })
}

/// Ordinary least-squares line through `(ln T, ln RMSE)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; NaN with fewer than three points.
    pub stderr: f64,
}

pub fn fit_loglog(t: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if t.len() != y.len() || t.len() < 2 {
        return Err(invalid("slope fit needs at least two matching points"));
    }
    if t.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(invalid("slope fit needs positive finite values"));
    }
    let lx: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(invalid("slope fit needs distinct abscissae"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if lx.len() > 2 {
        let ssr: f64 = lx
            .iter()
            .zip(&ly)
            .map(|(x, y)| {
                let r = y - intercept - slope * x;
                r * r
            })
            .sum();
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(SlopeFit { slope, intercept, stderr })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub j: u32,
    /// Snapshot pairs per replicate.
    pub t: usize,
    pub stats: BatchStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub points: Vec<ConvergencePoint>,
    /// One fit per parameter.
    pub slopes: Vec<SlopeFit>,
}

impl ConvergenceTable {
    /// Long-format CSV `j,T,parameter,bias,rmse,n_fail`.
    pub fn write_plot_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(out);
        writeln!(w, "j,T,parameter,bias,rmse,n_fail")?;
        for p in &self.points {
            for (k, (b, r)) in p.stats.bias.iter().zip(&p.stats.rmse).enumerate() {
                writeln!(w, "{},{},theta_{},{},{},{}", p.j, p.t, k + 1, b, r, p.stats.n_fail)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// RMSE against data length `T = base_t·2^j`.
///
/// `source(r)` returns replicate `r` with at least `base_t·2^{max j}` pairs;
/// each `T` uses its first `T` pairs.
pub fn convergence_study<S>(
    setup: &EstimationSetup,
    theta_true: &[f64],
    base_t: usize,
    j_values: &[u32],
    n_replicates: usize,
    source: S,
) -> Result<ConvergenceTable>
where
    S: Fn(usize) -> Result<SnapshotData> + Sync,
{
    if j_values.is_empty() || n_replicates == 0 || base_t == 0 {
        return Err(invalid("convergence study needs lengths and replicates"));
    }
    let lengths: Vec<usize> = j_values.iter().map(|&j| base_t << j).collect();
    let per_rep: Vec<Vec<EstimateResult>> = (0..n_replicates)
        .into_par_iter()
        .map(|r| {
            let full = source(r)?;
            lengths
                .par_iter()
                .map(|&t| Ok(setup.estimate_or_fail(&full.prefix(t)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::with_capacity(lengths.len());
    for (i, (&j, &t)) in j_values.iter().zip(&lengths).enumerate() {
        let stats = BatchStats::from_estimates(
            theta_true,
            per_rep.iter().map(|rs| (rs[i].theta_hat.as_slice(), rs[i].failed)),
        )?;
        points.push(ConvergencePoint { j, t, stats });
    }
    let ts: Vec<f64> = lengths.iter().map(|&t| t as f64).collect();
    let slopes = if lengths.len() >= 2 {
        (0..theta_true.len())
            .map(|k| {
                let ys: Vec<f64> = points.iter().map(|p| p.stats.rmse[k]).collect();
                fit_loglog(&ts, &ys).unwrap_or(SlopeFit {
                    slope: f64::NAN,
                    intercept: f64::NAN,
                    stderr: f64::NAN,
                })
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(ConvergenceTable { points, slopes })
}

/// Replicate source for the OU protocol: replicate `r` is one exact path of
/// `n_points` pairs started at `θ2`, seeded by `(seed, r)`.
pub fn ou_replicate_source(n_points: usize, seed: u64) -> impl Fn(usize) -> Result<SnapshotData> + Sync {
    move |r| {
        let mut cfg = SimConfig::exact_ou(OU_THETA.to_vec(), OU_T_STEP, n_points, 1, seed);
        cfg.seed = crate::sim::path_seed(seed, r as u64);
        Ok(simulate_snapshots(SdeModel::OrnsteinUhlenbeck, &cfg)?.paths.remove(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub n: usize,
    pub j: usize,
    /// Truncation order used after keeping conjugate pairs together.
    pub j_effective: Option<usize>,
    pub theta_hat: Option<Vec<f64>>,
    pub in_band: bool,
    pub error: Option<String>,
}

impl GridCell {
    /// `max_k |θ̂_k − θ*_k|`, infinite for failed cells.
    pub fn max_error(&self, theta_true: &[f64]) -> f64 {
        match &self.theta_hat {
            Some(t) => t
                .iter()
                .zip(theta_true)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, |m, e| if e.is_nan() { f64::INFINITY } else { m.max(e) }),
            None => f64::INFINITY,
        }
    }
}

/// Estimates over an `(N, J)` grid; cells with `J > N` are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub family: BasisFamily,
    pub n_values: Vec<usize>,
    pub j_values: Vec<usize>,
    pub theta_true: Vec<f64>,
    pub band: (f64, f64),
    /// Sorted by `(n, j)`.
    pub cells: Vec<GridCell>,
}

impl GridResult {
    pub fn get(&self, n: usize, j: usize) -> Option<&GridCell> {
        self.cells
            .binary_search_by(|c| (c.n, c.j).cmp(&(n, j)))
            .ok()
            .map(|i| &self.cells[i])
    }

    /// Long-format CSV `N,J,J_eff,theta_1..theta_k,in_band,error`.
    pub fn write_plot_csv<W: Write>(&self, out: W) -> Result<()> {
        let k = self.theta_true.len();
        let mut w = std::io::BufWriter::new(out);
        let mut header = vec!["N".to_string(), "J".to_string(), "J_eff".to_string()];
        header.extend((1..=k).map(|i| format!("theta_{i}")));
        header.extend(["in_band".to_string(), "error".to_string()]);
        writeln!(w, "{}", header.join(","))?;
        for c in &self.cells {
            let mut row = vec![
                c.n.to_string(),
                c.j.to_string(),
                c.j_effective.map_or(String::new(), |v| v.to_string()),
            ];
            match &c.theta_hat {
                Some(t) => row.extend(t.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), k)),
            }
            row.push(c.in_band.to_string());
            row.push(c.error.as_deref().unwrap_or("").replace([',', '\n'], ";"));
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn in_band(theta: &[f64], theta_true: &[f64], band: (f64, f64)) -> bool {
    theta
        .iter()
        .zip(theta_true)
        .all(|(t, s)| t / s > band.0 && t / s < band.1)
}

/// One estimate per `(N, J)` cell with `J ≤ N` on a single dataset. Errors in
/// a cell are recorded and the scan continues.
pub fn eigscan(
    model: SdeModel,
    theta_true: &[f64],
    data: &SnapshotData,
    family: BasisFamily,
    n_values: &[usize],
    j_values: &[usize],
    optimizer: &OptimizerConfig,
) -> Result<GridResult> {
    model.check_theta(theta_true)?;
    let mut n_sorted = n_values.to_vec();
    n_sorted.sort_unstable();
    n_sorted.dedup();
    let mut j_sorted = j_values.to_vec();
    j_sorted.sort_unstable();
    j_sorted.dedup();
    if n_sorted.is_empty() || j_sorted.is_empty() || j_sorted[0] == 0 {
        return Err(invalid("grid needs positive N and J values"));
    }
    let cells: Vec<GridCell> = n_sorted
        .par_iter()
        .flat_map_iter(|&n| {
            let problem = BasisSpec::for_family(family, n)
                .build(data)
                .and_then(|b| EdmdProblem::new(model, &b, data));
            let cells: Vec<GridCell> = j_sorted
                .iter()
                .filter(|&&j| j <= n)
                .map(|&j| grid_cell(&problem, n, j, theta_true, optimizer))
                .collect();
            cells
        })
        .collect();
    let mut cells = cells;
    cells.sort_by_key(|c| (c.n, c.j));
    Ok(GridResult {
        family,
        n_values: n_sorted,
        j_values: j_sorted,
        theta_true: theta_true.to_vec(),
        band: PLOT_BAND,
        cells,
    })
}

fn grid_cell(
    problem: &Result<EdmdProblem>,
    n: usize,
    j: usize,
    theta_true: &[f64],
    optimizer: &OptimizerConfig,
) -> GridCell {
    let run = || -> Result<(EstimateResult, Option<usize>)> {
        let problem = problem.as_ref().map_err(|e| invalid(e.to_string()))?;
        let spec = if j < n { ObjectiveSpec::truncated(j) } else { ObjectiveSpec::frobenius() };
        let obj = Objective::new(problem, &spec)?;
        Ok((estimate(&obj, optimizer)?, obj.j_effective()))
    };
    match run() {
        Ok((res, j_eff)) => GridCell {
            n,
            j,
            j_effective: Some(j_eff.unwrap_or(j)),
            in_band: in_band(&res.theta_hat, theta_true, PLOT_BAND),
            theta_hat: Some(res.theta_hat),
            error: None,
        },
        Err(e) => GridCell {
            n,
            j,
            j_effective: None,
            theta_hat: None,
            in_band: false,
            error: Some(e.to_string()),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub setup: EstimationSetup,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub names: Vec<String>,
    pub stats: Vec<BatchStats>,
    pub records: Vec<Vec<PathRecord>>,
    /// Per-path data fingerprints shared by every variant.
    pub fingerprints: Vec<u64>,
}

impl Comparison {
    /// CSV `variant,parameter,bias,rmse,n_fail,n_paths`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(out);
        writeln!(w, "variant,parameter,bias,rmse,n_fail,n_paths")?;
        for (name, s) in self.names.iter().zip(&self.stats) {
            for (k, (b, r)) in s.bias.iter().zip(&s.rmse).enumerate() {
                writeln!(w, "{name},theta_{},{b},{r},{},{}", k + 1, s.n_fail, s.n_paths)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every variant on the datasets produced by `source(path)`.
///
/// The source is queried afresh for each variant and the data fingerprints
/// must agree, so a non-reproducible source is caught rather than silently
/// comparing different samples.
pub fn compare_variants<S>(
    variants: &[Variant],
    theta_true: &[f64],
    n_paths: usize,
    source: S,
) -> Result<Comparison>
where
    S: Fn(usize) -> Result<SnapshotData> + Sync,
{
    if variants.is_empty() || n_paths == 0 {
        return Err(invalid("comparison needs variants and paths"));
    }
    let mut fingerprints: Option<Vec<u64>> = None;
    let mut stats = Vec::with_capacity(variants.len());
    let mut records = Vec::with_capacity(variants.len());
    for v in variants {
        let data = (0..n_paths)
            .into_par_iter()
            .map(&source)
            .collect::<Result<Vec<_>>>()?;
        let prints: Vec<u64> = data.iter().map(SnapshotData::fingerprint).collect();
        match &fingerprints {
            None => fingerprints = Some(prints),
            Some(f) if *f == prints => {}
            Some(f) => {
                let k = f.iter().zip(&prints).position(|(a, b)| a != b).unwrap_or(0);
                return Err(Error::DataMismatch(format!(
                    "variant '{}' saw different data for path {k}",
                    v.name
                )));
            }
        }
        let out = run_batch(&v.setup, theta_true, &data)?;
        stats.push(out.stats);
        records.push(out.records);
    }
    Ok(Comparison {
        names: variants.iter().map(|v| v.name.clone()).collect(),
        stats,
        records,
        fingerprints: fingerprints.unwrap_or_default(),
    })
}

/// Applies a failure rule to results produced without one.
pub fn reclassify(records: &mut [PathRecord], rule: FailureRule) {
    for r in records {
        r.result.failed = classify_failure(&r.result.theta_hat, rule);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_exact_estimates_are_zero() {
        let t = OU_THETA.to_vec();
        let s = BatchStats::from_estimates(&t, [(t.as_slice(), false), (t.as_slice(), false)]).unwrap();
        assert_eq!(s.bias, vec![0.0; 3]);
        assert_eq!(s.rmse, vec![0.0; 3]);
        assert_eq!(s.n_fail, 0);
    }

    #[test]
    fn two_point_stats() {
        let t = [0.2, 0.08, 0.03];
        let a = [0.3, 0.08, 0.03];
        let b = [0.1, 0.08, 0.03];
        let bad = [5.0, 0.0, 0.0];
        let s = BatchStats::from_estimates(&t, [(&a[..], false), (&b[..], false), (&bad[..], true)]).unwrap();
        assert!(s.bias[0].abs() < 1e-15);
        assert!((s.rmse[0] - 0.1).abs() < 1e-15);
        assert_eq!((s.n_fail, s.n_paths), (1, 3));
        assert!(matches!(
            BatchStats::from_estimates(&t, [(&bad[..], true)]),
            Err(Error::AllPathsFailed { n_fail: 1 })
        ));
    }

    #[test]
    fn slope_of_power_law() {
        let t: Vec<f64> = (0..5).map(|j| 500.0 * 2f64.powi(j)).collect();
        let y: Vec<f64> = t.iter().map(|v| 3.0 * v.powf(-0.5)).collect();
        let f = fit_loglog(&t, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!(f.stderr < 1e-10);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn planted_convergence_has_zero_rmse() {
        // Noise-free deterministic data: the drift flow is reproduced
        // exactly by the linear basis, so every length recovers θ1, θ2.
        let setup = EstimationSetup::new(
            SdeModel::OrnsteinUhlenbeck,
            BasisSpec::Chebyshev { n: 2 },
            ObjectiveSpec::frobenius(),
            OptimizerConfig::new(vec![0.25, 0.1, 0.0]),
        );
        let source = |r: usize| {
            let x: Vec<f64> = (0..2000).map(|i| ((i * 7 + r) as f64 * 0.618).fract() - 0.5).collect();
            let y = x.iter().map(|&v| crate::sim::ou_ode_flow(v, 0.2, 0.08, 0.5)).collect();
            SnapshotData::new(x, y, 0.5)
        };
        let table = convergence_study(&setup, &[0.2, 0.08, 0.0], 500, &[0, 1, 2], 3, source).unwrap();
        for p in &table.points {
            assert!(p.stats.rmse[0] < 1e-6 && p.stats.rmse[1] < 1e-6, "{:?}", p.stats);
        }
    }

    #[test]
    fn grid_omits_cells_above_diagonal() {
        let x: Vec<f64> = (0..400).map(|i| ((i as f64) * 0.618).fract() * 1.8 - 0.9).collect();
        let y = x.iter().map(|v| v * 0.99).collect();
        let d = SnapshotData::new(x, y, 0.01).unwrap();
        let g = eigscan(
            SdeModel::BoundedMeanReversion,
            &[1.0, 1.0],
            &d,
            BasisFamily::Legendre,
            &[2, 3],
            &[1, 2, 3],
            &OptimizerConfig::new(vec![1.0, 1.0]),
        )
        .unwrap();
        let keys: Vec<(usize, usize)> = g.cells.iter().map(|c| (c.n, c.j)).collect();
        assert_eq!(keys, vec![(2, 1), (2, 2), (3, 1), (3, 2), (3, 3)]);
        assert!(g.get(2, 3).is_none());
    }

    #[test]
    fn identical_variants_give_identical_columns() {
        let setup = EstimationSetup::ou_reference(3);
        let variants = vec![
            Variant {
                name: "a".into(),
                setup: setup.clone(),
            },
            Variant {
                name: "b".into(),
                setup,
            },
        ];
        let src = |k: usize| Ok(simulate_ou_reference(k + 1, 200, 17)?.pop().unwrap());
        let c = compare_variants(&variants, &OU_THETA, 3, src).unwrap();
        assert_eq!(c.stats[0], c.stats[1]);

        // A single path works too.
        let c = compare_variants(&variants[..1], &OU_THETA, 1, src).unwrap();
        assert_eq!(c.stats[0].n_paths, 1);
    }

    #[test]
    fn non_reproducible_source_is_rejected() {
        use std::sync::atomic::{AtomicU64, Ordering};
        let calls = AtomicU64::new(0);
        let src = |_k: usize| {
            let s = calls.fetch_add(1, Ordering::SeqCst);
            Ok(simulate_ou_reference(1, 100, s)?.pop().unwrap())
        };
        let setup = EstimationSetup::ou_reference(3);
        let variants = vec![
            Variant {
                name: "a".into(),
                setup: setup.clone(),
            },
            Variant {
                name: "b".into(),
                setup,
            },
        ];
        assert!(matches!(
            compare_variants(&variants, &OU_THETA, 1, src),
            Err(Error::DataMismatch(_))
        ));
    }
}
