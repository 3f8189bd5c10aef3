//! BFGS minimisation with finite-difference gradients.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::SdeModel;
use crate::objective::{EdmdProblem, Objective, ObjectiveKind, ObjectiveSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearch {
    BacktrackingInterpolation,
    HagerZhang,
}

impl LineSearch {
    /// Backtracking for the matrix objectives, Hager–Zhang for constrained
    /// EDMD where backtracking tends to run into ill-conditioned steps.
    pub fn default_for(kind: ObjectiveKind) -> Self {
        match kind {
            ObjectiveKind::ConstrainedEdmd => Self::HagerZhang,
            _ => Self::BacktrackingInterpolation,
        }
    }
}

impl fmt::Display for LineSearch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::BacktrackingInterpolation => "backtracking",
            Self::HagerZhang => "hager-zhang",
        })
    }
}

impl FromStr for LineSearch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backtracking" => Ok(Self::BacktrackingInterpolation),
            "hager-zhang" | "hagerzhang" => Ok(Self::HagerZhang),
            _ => Err(invalid(format!("unknown line search '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureRule {
    /// An estimate fails when any coordinate exceeds 1 in absolute value.
    AbsGreaterOne,
    #[default]
    None,
}

pub fn classify_failure(theta_hat: &[f64], rule: FailureRule) -> bool {
    match rule {
        FailureRule::AbsGreaterOne => theta_hat.iter().any(|v| !(v.abs() <= 1.0)),
        FailureRule::None => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// `None` picks [`LineSearch::default_for`] the objective kind.
    pub line_search: Option<LineSearch>,
    /// Relative finite-difference step.
    pub fd_step: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub theta_init: Vec<f64>,
    pub failure_rule: FailureRule,
}

impl OptimizerConfig {
    pub fn new(theta_init: Vec<f64>) -> Self {
        Self {
            line_search: None,
            fd_step: 1e-6,
            grad_tol: 1e-8,
            max_iter: 200,
            theta_init,
            failure_rule: FailureRule::None,
        }
    }

    pub fn with_line_search(mut self, ls: LineSearch) -> Self {
        self.line_search = Some(ls);
        self
    }

    pub fn with_failure_rule(mut self, rule: FailureRule) -> Self {
        self.failure_rule = rule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(invalid("fd_step must be positive"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(invalid("grad_tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be positive"));
        }
        if self.theta_init.is_empty() || self.theta_init.iter().any(|v| !v.is_finite()) {
            return Err(invalid("theta_init must be a non-empty finite vector"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub theta_hat: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub failed: bool,
    pub gradient_norm: f64,
    /// Seconds.
    pub wall_time: f64,
}

/// Central-difference gradient with per-coordinate step
/// `fd_step·max(1, |θ_j|)`, falling back to a one-sided difference when one
/// probe is non-finite.
pub fn fd_gradient<F>(f: F, theta: &[f64], fd_step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let f0 = f(theta);
    gradient_at(&f, theta, f0, fd_step)
}

fn gradient_at<F>(f: &F, theta: &[f64], f0: f64, fd_step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        let h = fd_step * theta[j].abs().max(1.0);
        probe[j] = theta[j] + h;
        let up = f(&probe);
        probe[j] = theta[j] - h;
        let down = f(&probe);
        probe[j] = theta[j];
        let g = match (up.is_finite(), down.is_finite()) {
            (true, true) => (up - down) / (2.0 * h),
            (true, false) if f0.is_finite() => (up - f0) / h,
            (false, true) if f0.is_finite() => (f0 - down) / h,
            _ => return Err(Error::GradientUnavailable(j)),
        };
        grad.push(g);
    }
    Ok(grad)
}

/// Minimises `objective` from `cfg.theta_init`, with the OU sign symmetry
/// of `θ3` folded back and the configured failure rule applied.
pub fn estimate(objective: &Objective, cfg: &OptimizerConfig) -> Result<EstimateResult> {
    let model = objective.model();
    if cfg.theta_init.len() != model.dim_theta() {
        return Err(invalid(format!(
            "{} needs {} initial parameters, got {}",
            model,
            model.dim_theta(),
            cfg.theta_init.len()
        )));
    }
    if !model.in_parameter_set(&cfg.theta_init) {
        return Err(invalid(format!("initial parameters {:?} lie outside the parameter set", cfg.theta_init)));
    }
    let ls = cfg.line_search.unwrap_or_else(|| LineSearch::default_for(objective.kind()));
    let mut res = minimize(|t| objective.value(t), cfg, ls)?;
    finish(model, cfg, &mut res);
    Ok(res)
}

fn finish(model: SdeModel, cfg: &OptimizerConfig, res: &mut EstimateResult) {
    model.canonicalize(&mut res.theta_hat);
    res.failed = classify_failure(&res.theta_hat, cfg.failure_rule);
}

/// GMM in two passes: estimate with the identity weight, set the weight to
/// the moment covariance at that estimate, then re-estimate from it.
pub fn estimate_gmm_two_pass(problem: &EdmdProblem, cfg: &OptimizerConfig) -> Result<(EstimateResult, DMatrix<f64>)> {
    let started = Instant::now();
    let first_obj = Objective::new(problem, &ObjectiveSpec::new(ObjectiveKind::Gmm))?;
    let first = estimate(&first_obj, cfg)?;
    let weight = first_obj.gmm_weight_update(&first.theta_hat)?;
    let spec = ObjectiveSpec {
        gmm_weight: Some(weight.clone()),
        ..ObjectiveSpec::new(ObjectiveKind::Gmm)
    };
    let second_obj = Objective::new(problem, &spec)?;
    let mut cfg2 = cfg.clone();
    cfg2.theta_init = first.theta_hat.clone();
    let mut second = estimate(&second_obj, &cfg2)?;
    second.iterations += first.iterations;
    second.wall_time = started.elapsed().as_secs_f64();
    Ok((second, weight))
}

/// BFGS on an arbitrary function. Returns the best iterate; line-search
/// breakdowns end the run with `converged = false`.
pub fn minimize<F>(f: F, cfg: &OptimizerConfig, ls: LineSearch) -> Result<EstimateResult>
where
    F: Fn(&[f64]) -> f64,
{
    cfg.validate()?;
    let started = Instant::now();
    let n = cfg.theta_init.len();
    let mut x = DVector::from_column_slice(&cfg.theta_init);
    let mut fx = f(x.as_slice());
    if !fx.is_finite() {
        return Err(Error::NonFiniteResult);
    }
    let mut g = DVector::from_vec(gradient_at(&f, x.as_slice(), fx, cfg.fd_step)?);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        if g.norm() < cfg.grad_tol {
            converged = true;
            break;
        }
        let mut d = -(&h * &g);
        if !(g.dot(&d) < 0.0) {
            h = DMatrix::identity(n, n);
            fresh = true;
            d = -&g;
        }
        let mut step = line_search(&f, &x, fx, &g, &d, cfg.fd_step, ls);
        if step.is_none() && !fresh {
            h = DMatrix::identity(n, n);
            fresh = true;
            d = -&g;
            step = line_search(&f, &x, fx, &g, &d, cfg.fd_step, ls);
        }
        let Some((alpha, f_new)) = step else {
            log::debug!("line search failed at iteration {iterations}");
            break;
        };
        let x_new = &x + &d * alpha;
        iterations += 1;
        let g_new = match gradient_at(&f, x_new.as_slice(), f_new, cfg.fd_step) {
            Ok(v) => DVector::from_vec(v),
            Err(e) => {
                log::debug!("stopping: {e}");
                x = x_new;
                fx = f_new;
                break;
            }
        };
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                // Rescale the identity to the curvature seen along the first step.
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        let stalled = f_new == fx && s.amax() <= f64::EPSILON * x.amax().max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        if stalled {
            break;
        }
    }
    if !converged && g.norm() < cfg.grad_tol {
        converged = true;
    }
    Ok(EstimateResult {
        theta_hat: x.as_slice().to_vec(),
        objective_value: fx,
        iterations,
        converged,
        failed: false,
        gradient_norm: g.norm(),
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Returns `(α, φ(α))` with `φ(α) ≤ φ(0)` on success.
fn line_search<F>(
    f: &F,
    x: &DVector<f64>,
    fx: f64,
    g: &DVector<f64>,
    d: &DVector<f64>,
    fd_step: f64,
    ls: LineSearch,
) -> Option<(f64, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    let phi = |alpha: f64| f((x + d * alpha).as_slice());
    let dphi0 = g.dot(d);
    match ls {
        LineSearch::BacktrackingInterpolation => backtracking(&phi, fx, dphi0),
        LineSearch::HagerZhang => {
            // Directional derivative by central differences along d.
            let scale = x.amax().max(1.0) / d.amax().max(f64::MIN_POSITIVE);
            let h = fd_step * scale;
            let dphi = |alpha: f64| {
                let up = phi(alpha + h);
                let down = phi(alpha - h);
                (up - down) / (2.0 * h)
            };
            HagerZhang::default().search(&phi, &dphi, fx, dphi0)
        }
    }
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_LS_ITERS: usize = 60;

/// Armijo backtracking with quadratic, then cubic, interpolation; the new
/// step is kept inside `[0.1α, 0.5α]` and non-finite trials halve the step.
fn backtracking<P>(phi: &P, phi0: f64, dphi0: f64) -> Option<(f64, f64)>
where
    P: Fn(f64) -> f64,
{
    let mut alpha = 1.0;
    let mut prev: Option<(f64, f64)> = None;
    for _ in 0..MAX_LS_ITERS {
        let pa = phi(alpha);
        if pa.is_finite() && pa <= phi0 + ARMIJO_C1 * alpha * dphi0 {
            return Some((alpha, pa));
        }
        let next = if !pa.is_finite() {
            0.5 * alpha
        } else {
            let trial = match prev {
                None => -dphi0 * alpha * alpha / (2.0 * (pa - phi0 - dphi0 * alpha)),
                Some((a_prev, p_prev)) => cubic_minimiser(phi0, dphi0, alpha, pa, a_prev, p_prev),
            };
            if trial.is_finite() {
                trial.clamp(0.1 * alpha, 0.5 * alpha)
            } else {
                0.5 * alpha
            }
        };
        if pa.is_finite() {
            prev = Some((alpha, pa));
        }
        alpha = next;
        if alpha < 1e-20 {
            break;
        }
    }
    None
}

/// Minimiser of the cubic through `φ(0)`, `φ′(0)`, `φ(a)` and `φ(b)`.
fn cubic_minimiser(phi0: f64, dphi0: f64, a: f64, pa: f64, b: f64, pb: f64) -> f64 {
    let ra = pa - phi0 - dphi0 * a;
    let rb = pb - phi0 - dphi0 * b;
    let den = a * a * b * b * (a - b);
    let c3 = (b * b * ra - a * a * rb) / den;
    let c2 = (-b * b * b * ra + a * a * a * rb) / den;
    if c3 == 0.0 {
        return -dphi0 / (2.0 * c2);
    }
    let disc = c2 * c2 - 3.0 * c3 * dphi0;
    if disc < 0.0 {
        return f64::NAN;
    }
    (-c2 + disc.sqrt()) / (3.0 * c3)
}

/// Hager–Zhang line search (approximate Wolfe conditions, secant² steps).
struct HagerZhang {
    delta: f64,
    sigma: f64,
    epsilon: f64,
    theta: f64,
    gamma: f64,
    rho: f64,
}

impl Default for HagerZhang {
    fn default() -> Self {
        Self {
            delta: 0.1,
            sigma: 0.9,
            epsilon: 1e-6,
            theta: 0.5,
            gamma: 0.66,
            rho: 5.0,
        }
    }
}

#[derive(Clone, Copy)]
struct Pt {
    a: f64,
    v: f64,
    d: f64,
}

impl HagerZhang {
    fn search<P, D>(&self, phi: &P, dphi: &D, phi0: f64, dphi0: f64) -> Option<(f64, f64)>
    where
        P: Fn(f64) -> f64,
        D: Fn(f64) -> f64,
    {
        let eps_k = self.epsilon * phi0.abs();
        let eval = |a: f64| {
            let v = phi(a);
            let d = if v.is_finite() { dphi(a) } else { f64::NAN };
            Pt { a, v, d }
        };
        let zero = Pt { a: 0.0, v: phi0, d: dphi0 };
        let wolfe = |p: &Pt| {
            if !(p.v.is_finite() && p.d.is_finite()) || p.v > phi0 {
                return false;
            }
            let standard = p.v - phi0 <= self.delta * p.a * dphi0 && p.d >= self.sigma * dphi0;
            let approx = (2.0 * self.delta - 1.0) * dphi0 >= p.d && p.d >= self.sigma * dphi0 && p.v <= phi0 + eps_k;
            standard || approx
        };
        let mut budget = MAX_LS_ITERS;
        let mut best: Option<Pt> = None;
        let mut note = |p: &Pt, best: &mut Option<Pt>| {
            if p.v.is_finite() && p.v <= phi0 && best.is_none_or(|b| p.v < b.v) {
                *best = Some(*p);
            }
        };

        // Bracketing phase.
        let mut c = eval(1.0);
        note(&c, &mut best);
        if wolfe(&c) {
            return Some((c.a, c.v));
        }
        let mut last_good = zero;
        let (mut lo, mut hi);
        loop {
            budget = budget.checked_sub(1)?;
            if c.d.is_finite() && c.d >= 0.0 {
                lo = last_good;
                hi = c;
                break;
            }
            if !(c.v.is_finite() && c.v <= phi0 + eps_k) {
                let (a, b) = self.update3(zero, c, phi0 + eps_k, &eval, &mut budget, &mut best, &mut note)?;
                lo = a;
                hi = b;
                break;
            }
            last_good = c;
            c = eval(self.rho * c.a);
            note(&c, &mut best);
            if wolfe(&c) {
                return Some((c.a, c.v));
            }
        }

        // Secant² refinement.
        while budget > 0 {
            for p in [lo, hi] {
                if wolfe(&p) && p.a > 0.0 {
                    return Some((p.a, p.v));
                }
            }
            let width = hi.a - lo.a;
            let (a2, b2) = self.secant2(lo, hi, phi0 + eps_k, &eval, &mut budget, &mut best, &mut note, &wolfe)?;
            if let Some(p) = [a2, b2].into_iter().find(|p| wolfe(p) && p.a > 0.0) {
                return Some((p.a, p.v));
            }
            let (mut a2, mut b2) = (a2, b2);
            if b2.a - a2.a > self.gamma * width {
                let mid = eval(0.5 * (a2.a + b2.a));
                note(&mid, &mut best);
                budget = budget.saturating_sub(1);
                if wolfe(&mid) {
                    return Some((mid.a, mid.v));
                }
                (a2, b2) = self.update(a2, b2, mid, phi0 + eps_k, &eval, &mut budget, &mut best, &mut note)?;
            }
            lo = a2;
            hi = b2;
            if hi.a - lo.a <= f64::EPSILON * hi.a.max(1e-300) {
                break;
            }
        }
        // Fall back to the best decrease seen rather than giving up.
        best.filter(|b| b.v < phi0 && b.a > 0.0).map(|b| (b.a, b.v))
    }

    #[allow(clippy::too_many_arguments)]
    fn secant2<E, N, W>(
        &self,
        a: Pt,
        b: Pt,
        bound: f64,
        eval: &E,
        budget: &mut usize,
        best: &mut Option<Pt>,
        note: &mut N,
        wolfe: &W,
    ) -> Option<(Pt, Pt)>
    where
        E: Fn(f64) -> Pt,
        N: FnMut(&Pt, &mut Option<Pt>),
        W: Fn(&Pt) -> bool,
    {
        let c = eval(secant(a, b)?);
        note(&c, best);
        *budget = budget.checked_sub(1)?;
        if wolfe(&c) {
            return Some((c, c));
        }
        let (a2, b2) = self.update(a, b, c, bound, eval, budget, best, note)?;
        let next = if c.a == b2.a {
            secant(b, b2)
        } else if c.a == a2.a {
            secant(a, a2)
        } else {
            return Some((a2, b2));
        };
        match next {
            Some(cn) if cn > a2.a && cn < b2.a => {
                let cp = eval(cn);
                note(&cp, best);
                *budget = budget.checked_sub(1)?;
                self.update(a2, b2, cp, bound, eval, budget, best, note)
            }
            _ => Some((a2, b2)),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn update<E, N>(
        &self,
        a: Pt,
        b: Pt,
        c: Pt,
        bound: f64,
        eval: &E,
        budget: &mut usize,
        best: &mut Option<Pt>,
        note: &mut N,
    ) -> Option<(Pt, Pt)>
    where
        E: Fn(f64) -> Pt,
        N: FnMut(&Pt, &mut Option<Pt>),
    {
        if !(c.a > a.a && c.a < b.a) {
            return Some((a, b));
        }
        if c.d.is_finite() && c.d >= 0.0 && c.v.is_finite() {
            return Some((a, c));
        }
        if c.v.is_finite() && c.v <= bound && c.d.is_finite() {
            return Some((c, b));
        }
        self.update3(a, c, bound, eval, budget, best, note)
    }

    /// Bisection until the interval brackets a point with a non-negative
    /// slope below the bound.
    #[allow(clippy::too_many_arguments)]
    fn update3<E, N>(
        &self,
        mut a: Pt,
        mut b: Pt,
        bound: f64,
        eval: &E,
        budget: &mut usize,
        best: &mut Option<Pt>,
        note: &mut N,
    ) -> Option<(Pt, Pt)>
    where
        E: Fn(f64) -> Pt,
        N: FnMut(&Pt, &mut Option<Pt>),
    {
        loop {
            *budget = budget.checked_sub(1)?;
            let d = eval((1.0 - self.theta) * a.a + self.theta * b.a);
            note(&d, best);
            if d.v.is_finite() && d.d.is_finite() && d.d >= 0.0 {
                return Some((a, d));
            }
            if d.v.is_finite() && d.v <= bound && d.d.is_finite() {
                a = d;
            } else {
                b = d;
            }
            if b.a - a.a <= f64::EPSILON * b.a.max(1e-300) {
                return Some((a, b));
            }
        }
    }
}

fn secant(a: Pt, b: Pt) -> Option<f64> {
    let den = b.d - a.d;
    if !(den.is_finite() && den != 0.0) {
        return None;
    }
    let c = (a.a * b.d - b.a * a.d) / den;
    c.is_finite().then_some(c)
}
