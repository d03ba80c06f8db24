//! Learning RFMP (LRFMP): per-iteration dictionary construction.
//!
//! Each iteration produces three candidates:
//!
//! 1. the best spherical harmonic of degree at most `sh_max_degree`
//!    (exhaustive scan),
//! 2. the best Abel-Poisson kernel from a discrete starting set
//!    (exhaustive scan), and
//! 3. a continuously optimized kernel, obtained by projected-gradient ascent
//!    of the RFMP objective over the ball `|x| <= r_max`, started from the
//!    discrete winner.
//!
//! Arbitration picks the best of the three (spherical harmonics are forced
//! for the first `force_sh_first` iterations), the winner is compared
//! against everything learnt so far, and the pursuit engine steps with the
//! optimal coefficient. The ordered sequence of distinct chosen elements is
//! the learnt dictionary, built so that a growing-dictionary replay of it
//! reproduces the learning run.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{sh_block, Dictionary, DictionaryElement, DictionaryOrigin};
use crate::error::{Error, Result};
use crate::grid::SphereGrid;
use crate::kernel::{
    apk_upward_grad_unchecked, apk_upward_unchecked, h2_inner, h2_inner_grad_apk, h2_norm_grad_apk,
    h2_norm_sq_apk, SeriesControl,
};
use crate::operator::{apply_operator, ProblemSetup};
use crate::pursuit::{lambda_at, Engine, PursuitConfig, StopReason};
use crate::types::{add3, norm3, scale3, BallPoint, Vec3};

/// Hard feasibility radius for learnt kernel parameters.
pub const R_MAX_DEFAULT: f64 = 0.98999999;

/// Iterates are kept away from the origin, where the centre direction
/// `x/|x|` degenerates.
const X_FLOOR: f64 = 1e-12;

/// Objective scaling for the ascent; `Auto` normalizes by the start value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjScale {
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_opt_iter: usize,
    /// Convergence threshold on the projected-gradient norm of the scaled
    /// objective.
    pub grad_tol: f64,
    /// Accepted steps shorter than this stall the ascent.
    pub step_tol: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    /// Initial trial step length along the scaled gradient.
    pub initial_step: f64,
    /// Number of discrete starts to refine; the best result wins.
    pub multistart: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_opt_iter: 200,
            grad_tol: 1e-6,
            step_tol: 1e-12,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            initial_step: 1.0,
            multistart: 1,
        }
    }
}

impl OptimizerConfig {
    fn validate(&self) -> Result<()> {
        if self.max_opt_iter == 0 || self.multistart == 0 {
            return Err(Error::Config(
                "max_opt_iter and multistart must be positive".into(),
            ));
        }
        for (name, v) in [
            ("grad_tol", self.grad_tol),
            ("step_tol", self.step_tol),
            ("initial_step", self.initial_step),
        ] {
            if !(v > 0.0) {
                return Err(Error::domain(name, v, "must be positive"));
            }
        }
        for (name, v) in [("armijo_c", self.armijo_c), ("backtrack_factor", self.backtrack_factor)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::domain(name, v, "must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LearnConfig {
    /// Degree bound for the spherical-harmonic candidate class.
    pub sh_max_degree: u32,
    pub r_max: f64,
    /// Spherical harmonics are chosen unconditionally for this many initial
    /// iterations.
    pub force_sh_first: usize,
    pub obj_scale: ObjScale,
    pub opt: OptimizerConfig,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            sh_max_degree: 20,
            r_max: R_MAX_DEFAULT,
            force_sh_first: 250,
            obj_scale: ObjScale::Auto,
            opt: OptimizerConfig::default(),
        }
    }
}

impl LearnConfig {
    fn validate(&self) -> Result<()> {
        if !(self.r_max > 0.0 && self.r_max < 1.0) {
            return Err(Error::domain("r_max", self.r_max, "must lie in (0, 1)"));
        }
        self.opt.validate()
    }
}

/// Outcome of one projected-gradient ascent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptStatus {
    /// Projected-gradient norm fell below `grad_tol`.
    Converged,
    /// No acceptable step remained above `step_tol`.
    Stalled,
    IterationCapped,
    /// Non-finite objective at the start point.
    Failed,
}

/// Read-only view of the pursuit state an objective evaluation needs.
pub struct ObjectiveContext<'a> {
    pub residual: &'a [f64],
    /// Post-restart expansion terms (the part coupling through `lambda`).
    pub expansion: &'a [(DictionaryElement, f64)],
    pub grid: &'a SphereGrid,
    pub sigma: f64,
    pub lambda: f64,
    pub series: SeriesControl,
}

/// RFMP objective `(a1 - lambda a2)^2 / (b1 + lambda b2)` for the kernel
/// `P(x, .)` and its gradient with respect to `x`.
///
/// `a1 = <R, T P(x,.)>`, `a2 = <F, P(x,.)>_{H_2}`, `b1 = ||T P(x,.)||^2`,
/// `b2 = ||P(x,.)||^2_{H_2}`; the gradient combines their derivatives by the
/// quotient rule.
pub fn rfmp_objective_and_grad(x: &BallPoint, ctx: &ObjectiveContext) -> Result<(f64, Vec3)> {
    let coords = x.coords();
    let h2 = x.h() * x.h();
    let mut a1 = 0.0;
    let mut b1 = 0.0;
    let mut da1 = [0.0; 3];
    let mut db1 = [0.0; 3];
    for (eta, r) in ctx.grid.points().iter().zip(ctx.residual) {
        let v = apk_upward_unchecked(coords, h2, *eta, ctx.sigma);
        let g = apk_upward_grad_unchecked(coords, h2, *eta, ctx.sigma);
        a1 += r * v;
        b1 += v * v;
        da1 = add3(da1, scale3(g, *r));
        db1 = add3(db1, scale3(g, 2.0 * v));
    }
    let mut a2 = 0.0;
    let mut da2 = [0.0; 3];
    for (d, c) in ctx.expansion {
        a2 += c * h2_inner(d, &DictionaryElement::AbelPoisson(*x), &ctx.series)?;
        da2 = add3(da2, scale3(h2_inner_grad_apk(d, x, &ctx.series)?, *c));
    }
    let b2 = h2_norm_sq_apk(x, &ctx.series)?;
    let db2 = h2_norm_grad_apk(x, &ctx.series)?;

    let num_root = a1 - ctx.lambda * a2;
    let den = b1 + ctx.lambda * b2;
    if den < 1e-300 {
        return Err(Error::DegenerateElement { denominator: den });
    }
    let value = num_root * num_root / den;
    let dnum = add3(da1, scale3(da2, -ctx.lambda));
    let dden = add3(db1, scale3(db2, ctx.lambda));
    let mut grad = [0.0; 3];
    for j in 0..3 {
        grad[j] = (2.0 * num_root * dnum[j] * den - num_root * num_root * dden[j]) / (den * den);
    }
    Ok((value, grad))
}

/// Radial projection onto the feasible set `X_FLOOR <= |x| <= r_max`.
fn project(v: Vec3, r_max: f64) -> Vec3 {
    let n = norm3(v);
    if n > r_max {
        scale3(v, r_max / n)
    } else if n < X_FLOOR {
        if n > 0.0 {
            scale3(v, X_FLOOR / n)
        } else {
            [0.0, 0.0, X_FLOOR]
        }
    } else {
        v
    }
}

/// Projected-gradient ascent of the RFMP objective over the feasible ball.
///
/// Returns the best feasible point found, its (unscaled) objective value,
/// and a status. The value sequence of accepted iterates is non-decreasing.
pub fn apk_optimize(
    start: &BallPoint,
    ctx: &ObjectiveContext,
    cfg: &OptimizerConfig,
    obj_scale: ObjScale,
    r_max: f64,
) -> (BallPoint, f64, OptStatus) {
    let feasible = |v: Vec3| BallPoint::new(project(v, r_max)).expect("projection stays in ball");
    let mut x = feasible(start.coords());
    let (mut value, mut grad) = match rfmp_objective_and_grad(&x, ctx) {
        Ok(vg) if vg.0.is_finite() => vg,
        _ => return (*start, f64::NAN, OptStatus::Failed),
    };
    let scale = match obj_scale {
        ObjScale::Auto => 1.0 / value.abs().max(1e-30),
        ObjScale::Fixed(s) => s,
    };
    for _ in 0..cfg.max_opt_iter {
        let g_scaled = scale3(grad, scale);
        let trial = feasible(add3(x.coords(), scale3(g_scaled, cfg.initial_step)));
        let pg = scale3(
            crate::types::sub3(trial.coords(), x.coords()),
            1.0 / cfg.initial_step,
        );
        if norm3(pg) < cfg.grad_tol {
            return (x, value, OptStatus::Converged);
        }
        let mut tau = cfg.initial_step;
        let mut accepted = false;
        while tau * norm3(g_scaled) >= cfg.step_tol {
            let x_new = feasible(add3(x.coords(), scale3(g_scaled, tau)));
            let dx = crate::types::sub3(x_new.coords(), x.coords());
            if norm3(dx) < cfg.step_tol {
                break;
            }
            if let Ok((v_new, g_new)) = rfmp_objective_and_grad(&x_new, ctx) {
                if v_new.is_finite()
                    && scale * v_new
                        >= scale * value + cfg.armijo_c * crate::types::dot3(g_scaled, dx)
                    && v_new >= value
                {
                    x = x_new;
                    value = v_new;
                    grad = g_new;
                    accepted = true;
                    break;
                }
            }
            tau *= cfg.backtrack_factor;
        }
        if !accepted {
            return (x, value, OptStatus::Stalled);
        }
    }
    (x, value, OptStatus::IterationCapped)
}

/// Per-iteration scoring cache over a fixed candidate pool (spherical
/// harmonics first, then the discrete kernel starting set). Mirrors the
/// engine's incremental `<F, d>` bookkeeping without owning the residual.
pub struct CandidateScan {
    elements: Vec<DictionaryElement>,
    td: Vec<Vec<f64>>,
    td_norm_sq: Vec<f64>,
    norm_sq: Vec<f64>,
    f_inner: Vec<f64>,
    sh_count: usize,
    series: SeriesControl,
}

impl CandidateScan {
    pub fn new(
        sh_max_degree: u32,
        start_dict: &Dictionary,
        setup: &ProblemSetup,
        series: SeriesControl,
    ) -> Result<Self> {
        let mut elements = sh_block(sh_max_degree);
        let sh_count = elements.len();
        for d in &start_dict.elements {
            if let DictionaryElement::AbelPoisson(_) = d {
                elements.push(d.clone());
            }
        }
        let per: Vec<(Vec<f64>, f64)> = elements
            .par_iter()
            .map(|d| -> Result<(Vec<f64>, f64)> {
                let td = apply_operator(d, &setup.grid, setup.sigma);
                let nsq = crate::kernel::h2_norm_sq(d, &series)?;
                Ok((td, nsq))
            })
            .collect::<Result<_>>()?;
        let mut td = Vec::with_capacity(elements.len());
        let mut td_norm_sq = Vec::with_capacity(elements.len());
        let mut norm_sq = Vec::with_capacity(elements.len());
        for (t, nsq) in per {
            td_norm_sq.push(t.iter().map(|v| v * v).sum());
            td.push(t);
            norm_sq.push(nsq);
        }
        Ok(CandidateScan {
            f_inner: vec![0.0; elements.len()],
            elements,
            td,
            td_norm_sq,
            norm_sq,
            sh_count,
            series,
        })
    }

    pub fn objective(&self, i: usize, residual: &[f64], lambda: f64) -> Option<(f64, f64)> {
        let den = self.td_norm_sq[i] + lambda * self.norm_sq[i];
        if den < 1e-300 {
            return None;
        }
        let num: f64 = residual.iter().zip(&self.td[i]).map(|(r, t)| r * t).sum::<f64>()
            - lambda * self.f_inner[i];
        Some((num * num / den, num / den))
    }

    fn best_in(&self, range: std::ops::Range<usize>, residual: &[f64], lambda: f64) -> Option<(usize, f64)> {
        let scored: Vec<Option<(f64, f64)>> = range
            .clone()
            .into_par_iter()
            .map(|i| self.objective(i, residual, lambda))
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in range.zip(scored) {
            if let Some((obj, _)) = s {
                match best {
                    Some((_, b)) if obj <= b => {}
                    _ => best = Some((i, obj)),
                }
            }
        }
        best
    }

    /// Best spherical harmonic (lowest `(n, j)` on ties).
    pub fn sh_candidate(&self, residual: &[f64], lambda: f64) -> Option<(DictionaryElement, f64)> {
        self.best_in(0..self.sh_count, residual, lambda)
            .map(|(i, v)| (self.elements[i].clone(), v))
    }

    /// Best kernel of the discrete starting set.
    pub fn apk_local_candidate(
        &self,
        residual: &[f64],
        lambda: f64,
    ) -> Option<(DictionaryElement, f64)> {
        self.best_in(self.sh_count..self.elements.len(), residual, lambda)
            .map(|(i, v)| (self.elements[i].clone(), v))
    }

    /// Top `m` starting-set kernels by objective, best first.
    pub fn apk_top_starts(&self, residual: &[f64], lambda: f64, m: usize) -> Vec<BallPoint> {
        let mut scored: Vec<(usize, f64)> = (self.sh_count..self.elements.len())
            .filter_map(|i| self.objective(i, residual, lambda).map(|(v, _)| (i, v)))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored
            .into_iter()
            .take(m)
            .filter_map(|(i, _)| match &self.elements[i] {
                DictionaryElement::AbelPoisson(x) => Some(*x),
                DictionaryElement::SphericalHarmonic(_) => None,
            })
            .collect()
    }

    /// Mirrors `Engine::step`: the iterate gained `alpha * chosen`.
    pub fn advance(&mut self, chosen: &DictionaryElement, alpha: f64) -> Result<()> {
        let increments: Vec<f64> = self
            .elements
            .par_iter()
            .map(|d| h2_inner(chosen, d, &self.series))
            .collect::<Result<_>>()?;
        for (f, inc) in self.f_inner.iter_mut().zip(increments) {
            *f += alpha * inc;
        }
        Ok(())
    }

    pub fn restart(&mut self) {
        self.f_inner.iter_mut().for_each(|f| *f = 0.0);
    }
}

/// Picks among the SH, discrete-kernel, and optimized-kernel candidates.
/// Spherical harmonics win unconditionally while `n < force_sh_first`; a
/// failed optimization falls back to the discrete kernel.
pub fn arbitrate(
    sh: (DictionaryElement, f64),
    apk_local: Option<(DictionaryElement, f64)>,
    apk_opt: Option<(DictionaryElement, f64)>,
    n: usize,
    force_sh_first: usize,
) -> (DictionaryElement, f64, &'static str) {
    if n < force_sh_first {
        return (sh.0, sh.1, "sh_forced");
    }
    let mut best = (sh.0, sh.1, "sh");
    if let Some((d, v)) = apk_local {
        if v > best.1 {
            best = (d, v, "apk_local");
        }
    }
    if let Some((d, v)) = apk_opt {
        if v > best.1 {
            best = (d, v, "apk_optimized");
        }
    }
    best
}

/// Per-iteration learning diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LearnRecord {
    pub iteration: usize,
    pub chosen: DictionaryElement,
    pub alpha: f64,
    pub lambda: f64,
    pub objective: f64,
    pub residual_norm: f64,
    pub rel_data_error: f64,
    /// Which candidate won arbitration, or "pool" when an already-learnt
    /// element outscored all three.
    pub candidate_kind: String,
    pub sh_value: f64,
    pub apk_local_value: Option<f64>,
    pub apk_opt_value: Option<f64>,
    pub optimizer_status: Option<OptStatus>,
}

#[derive(Clone, Debug)]
pub struct LearnOutcome {
    pub dictionary: Dictionary,
    pub expansion: Vec<(DictionaryElement, f64)>,
    pub records: Vec<LearnRecord>,
    pub stop: StopReason,
    pub residual: Vec<f64>,
}

/// Runs the LRFMP. `start_dict` supplies the discrete kernel starting set;
/// `pursuit_cfg` provides the `lambda` schedule, restart period, and
/// termination thresholds. The coefficient stop defaults to `1e-5` when
/// `pursuit_cfg` leaves it unset.
pub fn learn(
    setup: &ProblemSetup,
    start_dict: &Dictionary,
    learn_cfg: &LearnConfig,
    pursuit_cfg: &PursuitConfig,
) -> Result<LearnOutcome> {
    learn_cfg.validate()?;
    let series = pursuit_cfg.series;
    let mut engine = Engine::new(Vec::new(), setup, series)?;
    let mut scan = CandidateScan::new(learn_cfg.sh_max_degree, start_dict, setup, series)?;
    let mut records = Vec::new();
    let min_coeff = pursuit_cfg.min_coeff_stop.unwrap_or(1e-5);
    if engine.y_norm() == 0.0 {
        return Ok(finish(engine, records, StopReason::NullData));
    }
    let r0_norm = engine.y_norm();
    let mut stop = StopReason::MaxIterations;
    for iter in 0..pursuit_cfg.max_iter {
        if let Some(every) = pursuit_cfg.restart_every {
            if iter > 0 && iter % every == 0 {
                engine.restart();
                scan.restart();
            }
        }
        let lambda = lambda_at(pursuit_cfg, iter, r0_norm);
        let Some((sh_el, sh_val)) = scan.sh_candidate(engine.residual(), lambda) else {
            stop = StopReason::Stalled;
            break;
        };
        let mut apk_local_value = None;
        let mut apk_opt_value = None;
        let mut optimizer_status = None;
        let (cand_el, _cand_val, mut kind) = if iter < learn_cfg.force_sh_first {
            arbitrate((sh_el, sh_val), None, None, iter, learn_cfg.force_sh_first)
        } else {
            let apk_local = scan.apk_local_candidate(engine.residual(), lambda);
            apk_local_value = apk_local.as_ref().map(|c| c.1);
            let apk_opt = {
                let active = engine.active_expansion();
                let ctx = ObjectiveContext {
                    residual: engine.residual(),
                    expansion: &active,
                    grid: &setup.grid,
                    sigma: setup.sigma,
                    lambda,
                    series,
                };
                let starts =
                    scan.apk_top_starts(engine.residual(), lambda, learn_cfg.opt.multistart);
                let results: Vec<(BallPoint, f64, OptStatus)> = starts
                    .par_iter()
                    .map(|s| {
                        apk_optimize(s, &ctx, &learn_cfg.opt, learn_cfg.obj_scale, learn_cfg.r_max)
                    })
                    .collect();
                let mut best: Option<(BallPoint, f64, OptStatus)> = None;
                for r in results {
                    if r.2 == OptStatus::Failed || !r.1.is_finite() {
                        optimizer_status.get_or_insert(r.2);
                        continue;
                    }
                    match best {
                        Some((_, bv, _)) if r.1 <= bv => {}
                        _ => best = Some(r),
                    }
                }
                if let Some((x, v, status)) = best {
                    optimizer_status = Some(status);
                    apk_opt_value = Some(v);
                    Some((DictionaryElement::AbelPoisson(x), v))
                } else {
                    None
                }
            };
            arbitrate(
                (sh_el, sh_val),
                apk_local,
                apk_opt,
                iter,
                learn_cfg.force_sh_first,
            )
        };
        // the winner joins the pool unconditionally (even when it repeats an
        // earlier entry), so the pool at iteration n is always exactly the
        // first n+1 learnt elements; the step is then chosen exactly as the
        // growing-dictionary replay will choose it: argmax over that window,
        // lowest index on ties. Deduping here would let the replay window
        // reach elements the learner had not yet created and break fidelity.
        let cand_idx = engine.push_element(cand_el.clone())?;
        let Some((index, objective, alpha)) = engine.select(lambda, engine.len()) else {
            stop = StopReason::Stalled;
            break;
        };
        if objective == 0.0 {
            stop = StopReason::Stalled;
            break;
        }
        if alpha.abs() < min_coeff {
            stop = StopReason::SmallCoefficient;
            break;
        }
        if index != cand_idx {
            kind = "pool";
        }
        let chosen = engine.elements()[index].clone();
        engine.step(index, alpha)?;
        scan.advance(&chosen, alpha)?;
        let residual_norm = engine.residual_norm();
        let rel = residual_norm / engine.y_norm();
        records.push(LearnRecord {
            iteration: iter,
            chosen,
            alpha,
            lambda,
            objective,
            residual_norm,
            rel_data_error: rel,
            candidate_kind: kind.to_string(),
            sh_value: sh_val,
            apk_local_value,
            apk_opt_value,
            optimizer_status,
        });
        if rel <= pursuit_cfg.rel_data_error_stop {
            stop = StopReason::DataErrorReached;
            break;
        }
    }
    Ok(finish(engine, records, stop))
}

fn finish(engine: Engine, records: Vec<LearnRecord>, stop: StopReason) -> LearnOutcome {
    let mut dictionary = Dictionary::new(DictionaryOrigin::Learnt);
    dictionary.elements = engine.elements().to_vec();
    LearnOutcome {
        expansion: engine.expansion(),
        residual: engine.residual().to_vec(),
        dictionary,
        records,
        stop,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{grid_with_radii, reuter_grid};
    use crate::operator::synthesize_data;
    use crate::pursuit::LambdaMode;
    use crate::types::SHIndex;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn starting_set(gamma: u32, radius: f64) -> Dictionary {
        let grid = reuter_grid(gamma).unwrap();
        let mut dict = Dictionary::new(DictionaryOrigin::Starting);
        for x in grid_with_radii(&grid, &[radius]).unwrap() {
            dict.elements.push(DictionaryElement::AbelPoisson(x));
        }
        dict
    }

    fn setup_from(expansion: &[(DictionaryElement, f64)], gamma: u32, sigma: f64) -> ProblemSetup {
        let grid = reuter_grid(gamma).unwrap();
        let y = synthesize_data(expansion, &grid, sigma);
        ProblemSetup::new(grid, sigma, y).unwrap()
    }

    #[test]
    fn sh_candidate_finds_exact_match() {
        let truth = DictionaryElement::SphericalHarmonic(SHIndex::new(5, 2).unwrap());
        let setup = setup_from(&[(truth.clone(), 1.0)], 10, 1.06);
        let start = starting_set(3, 0.5);
        let scan = CandidateScan::new(8, &start, &setup, SeriesControl::default()).unwrap();
        let (el, _) = scan.sh_candidate(&setup.y, 0.0).unwrap();
        assert_eq!(el, truth);
    }

    #[test]
    fn sh_candidate_degree_zero_only_option() {
        let setup = setup_from(
            &[(DictionaryElement::SphericalHarmonic(SHIndex::new(0, 0).unwrap()), 1.0)],
            5,
            1.06,
        );
        let start = starting_set(2, 0.5);
        let scan = CandidateScan::new(0, &start, &setup, SeriesControl::default()).unwrap();
        let (el, _) = scan.sh_candidate(&setup.y, 1e-3).unwrap();
        assert_eq!(
            el,
            DictionaryElement::SphericalHarmonic(SHIndex::new(0, 0).unwrap())
        );
    }

    /// Candidate scans must agree with an independent from-scratch scan that
    /// recomputes every quantity without caches.
    #[test]
    fn candidate_scans_match_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let grid = reuter_grid(8).unwrap();
        let y: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let setup = ProblemSetup::new(grid, 1.06, y).unwrap();
        let start = starting_set(7, 0.6); // > 50 kernels
        assert!(start.elements.len() > 50);
        let ctl = SeriesControl::default();
        let mut scan = CandidateScan::new(8, &start, &setup, ctl).unwrap();
        // give the iterate two terms so f_inner matters
        let picked = [
            (DictionaryElement::SphericalHarmonic(SHIndex::new(2, -1).unwrap()), 0.7),
            (start.elements[11].clone(), -0.3),
        ];
        let mut residual = setup.y.clone();
        for (d, a) in &picked {
            let td = apply_operator(d, &setup.grid, setup.sigma);
            for (r, t) in residual.iter_mut().zip(&td) {
                *r -= a * t;
            }
            scan.advance(d, *a).unwrap();
        }
        let lambda = 1e-2;
        let brute = |elements: &[DictionaryElement]| -> (DictionaryElement, f64) {
            let mut best: Option<(DictionaryElement, f64)> = None;
            for d in elements {
                let td = apply_operator(d, &setup.grid, setup.sigma);
                let num: f64 = residual.iter().zip(&td).map(|(r, t)| r * t).sum::<f64>()
                    - lambda
                        * picked
                            .iter()
                            .map(|(p, a)| a * h2_inner(p, d, &ctl).unwrap())
                            .sum::<f64>();
                let den: f64 = td.iter().map(|t| t * t).sum::<f64>()
                    + lambda * crate::kernel::h2_norm_sq(d, &ctl).unwrap();
                let obj = num * num / den;
                match &best {
                    Some((_, b)) if obj <= *b => {}
                    _ => best = Some((d.clone(), obj)),
                }
            }
            best.unwrap()
        };
        let (sh_el, sh_val) = scan.sh_candidate(&residual, lambda).unwrap();
        let (sh_ref, sh_ref_val) = brute(&sh_block(8));
        assert_eq!(sh_el, sh_ref);
        assert!((sh_val - sh_ref_val).abs() < 1e-9 * sh_ref_val.max(1.0));
        let (apk_el, apk_val) = scan.apk_local_candidate(&residual, lambda).unwrap();
        let (apk_ref, apk_ref_val) = brute(&start.elements);
        assert_eq!(apk_el, apk_ref);
        assert!((apk_val - apk_ref_val).abs() < 1e-9 * apk_ref_val.max(1.0));
    }

    #[test]
    fn apk_local_trivial_cases() {
        let x_star = BallPoint::new([0.0, 0.45, 0.45]).unwrap();
        let mut start = Dictionary::new(DictionaryOrigin::Starting);
        start
            .elements
            .push(DictionaryElement::AbelPoisson(x_star));
        let setup = setup_from(
            &[(DictionaryElement::AbelPoisson(x_star), 1.0)],
            8,
            1.06,
        );
        let scan = CandidateScan::new(2, &start, &setup, SeriesControl::default()).unwrap();
        let (el, _) = scan.apk_local_candidate(&setup.y, 0.0).unwrap();
        assert_eq!(el, DictionaryElement::AbelPoisson(x_star));
    }

    fn fd_check(x: &BallPoint, ctx: &ObjectiveContext, tol: f64) {
        let (_, grad) = rfmp_objective_and_grad(x, ctx).unwrap();
        let h = 1e-6;
        for c in 0..3 {
            let mut xp = x.coords();
            let mut xm = x.coords();
            xp[c] += h;
            xm[c] -= h;
            let fp = rfmp_objective_and_grad(&BallPoint::new(xp).unwrap(), ctx).unwrap().0;
            let fm = rfmp_objective_and_grad(&BallPoint::new(xm).unwrap(), ctx).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            let scale = fd.abs().max(grad[c].abs()).max(1e-10);
            assert!(
                (grad[c] - fd).abs() / scale < tol,
                "comp {c}: {} vs {fd}",
                grad[c]
            );
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let grid = reuter_grid(6).unwrap();
        let n = grid.len();
        let ctl = SeriesControl::default();
        for trial in 0..100 {
            let lambda = if trial % 2 == 0 { 0.0 } else { 1e-2 };
            let residual: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut expansion = Vec::new();
            for _ in 0..rng.gen_range(1..4) {
                if rng.gen_bool(0.5) {
                    let deg = rng.gen_range(0..5u32);
                    let ord = rng.gen_range(-(deg as i32)..=deg as i32);
                    expansion.push((
                        DictionaryElement::SphericalHarmonic(SHIndex::new(deg, ord).unwrap()),
                        rng.gen_range(-1.0..1.0),
                    ));
                } else {
                    let v = [
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                    ];
                    expansion.push((
                        DictionaryElement::AbelPoisson(BallPoint::new(v).unwrap()),
                        rng.gen_range(-1.0..1.0),
                    ));
                }
            }
            let ctx = ObjectiveContext {
                residual: &residual,
                expansion: &expansion,
                grid: &grid,
                sigma: 1.06,
                lambda,
                series: ctl,
            };
            let dir = {
                let v = [
                    rng.gen_range(-1.0..1.0f64),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                scale3(v, 1.0 / norm3(v))
            };
            let r = rng.gen_range(0.1..0.95);
            fd_check(&BallPoint::new(scale3(dir, r)).unwrap(), &ctx, 1e-5);
        }
    }

    #[test]
    fn objective_empty_expansion_reduces_to_data_quotient() {
        let grid = reuter_grid(6).unwrap();
        let truth = BallPoint::new([0.1, 0.2, 0.8]).unwrap();
        let y = synthesize_data(
            &[(DictionaryElement::AbelPoisson(truth), 1.0)],
            &grid,
            1.06,
        );
        let ctx = ObjectiveContext {
            residual: &y,
            expansion: &[],
            grid: &grid,
            sigma: 1.06,
            lambda: 0.0,
            series: SeriesControl::default(),
        };
        let x = BallPoint::new([0.3, -0.1, 0.5]).unwrap();
        let (value, _) = rfmp_objective_and_grad(&x, &ctx).unwrap();
        // value = a1^2 / b1 recomputed directly
        let coords = x.coords();
        let h2 = x.h() * x.h();
        let mut a1 = 0.0;
        let mut b1 = 0.0;
        for (eta, r) in grid.points().iter().zip(&y) {
            let v = apk_upward_unchecked(coords, h2, *eta, 1.06);
            a1 += r * v;
            b1 += v * v;
        }
        assert!((value - a1 * a1 / b1).abs() < 1e-12 * value);
        fd_check(&x, &ctx, 1e-6);
    }

    #[test]
    fn optimizer_basic_properties() {
        let grid = reuter_grid(8).unwrap();
        let x_star = BallPoint::new([0.15, -0.25, 0.82]).unwrap();
        let y = synthesize_data(
            &[(DictionaryElement::AbelPoisson(x_star), 1.0)],
            &grid,
            1.06,
        );
        let ctx = ObjectiveContext {
            residual: &y,
            expansion: &[],
            grid: &grid,
            sigma: 1.06,
            lambda: 0.0,
            series: SeriesControl::default(),
        };
        let cfg = OptimizerConfig::default();
        // ascent: result never scores below the start
        let start = BallPoint::new([0.1, -0.2, 0.75]).unwrap();
        let (v0, _) = rfmp_objective_and_grad(&start, &ctx).unwrap();
        let (x_end, v_end, status) = apk_optimize(&start, &ctx, &cfg, ObjScale::Auto, R_MAX_DEFAULT);
        assert!(v_end >= v0);
        assert!(x_end.h() <= R_MAX_DEFAULT + 1e-15);
        assert_ne!(status, OptStatus::Failed);
        // the optimum of this noise-free problem is near x_star
        assert!(norm3(crate::types::sub3(x_end.coords(), x_star.coords())) < 0.05);
        // fixed point: restarting from the optimum converges immediately
        let (x_again, _, status2) = apk_optimize(&x_end, &ctx, &cfg, ObjScale::Auto, R_MAX_DEFAULT);
        assert_eq!(status2, OptStatus::Converged);
        assert!(norm3(crate::types::sub3(x_again.coords(), x_end.coords())) < 1e-9);
    }

    #[test]
    fn optimizer_respects_feasible_radius() {
        let grid = reuter_grid(6).unwrap();
        // residual generated by a kernel outside r_max pulls iterates to the
        // boundary
        let strong = BallPoint::new([0.0, 0.0, 0.995]).unwrap();
        let y = synthesize_data(&[(DictionaryElement::AbelPoisson(strong), 1.0)], &grid, 1.06);
        let ctx = ObjectiveContext {
            residual: &y,
            expansion: &[],
            grid: &grid,
            sigma: 1.06,
            lambda: 0.0,
            series: SeriesControl::default(),
        };
        let start = BallPoint::new([0.0, 0.0, 0.94]).unwrap();
        let cfg = OptimizerConfig::default();
        let (x_end, _, _) = apk_optimize(&start, &ctx, &cfg, ObjScale::Auto, R_MAX_DEFAULT);
        assert!(x_end.h() <= R_MAX_DEFAULT + 1e-15);
        assert!(x_end.h() > 0.97, "expected the boundary pull, got {}", x_end.h());
    }

    /// The returned point must be competitive with a dense scan of the
    /// 3-D parameter ball.
    #[test]
    fn optimizer_matches_dense_grid_oracle() {
        let grid = reuter_grid(8).unwrap();
        let x_star = BallPoint::new([0.3, 0.4, 0.72]).unwrap();
        let y = synthesize_data(
            &[(DictionaryElement::AbelPoisson(x_star), 1.0)],
            &grid,
            1.06,
        );
        let ctx = ObjectiveContext {
            residual: &y,
            expansion: &[],
            grid: &grid,
            sigma: 1.06,
            lambda: 0.0,
            series: SeriesControl::default(),
        };
        let cfg = OptimizerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mut best_opt = f64::NEG_INFINITY;
        for _ in 0..20 {
            let dir = {
                let v = [
                    rng.gen_range(-1.0..1.0f64),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                scale3(v, 1.0 / norm3(v))
            };
            let start = BallPoint::new(scale3(dir, rng.gen_range(0.3..0.95))).unwrap();
            let (_, v, status) = apk_optimize(&start, &ctx, &cfg, ObjScale::Auto, R_MAX_DEFAULT);
            if status != OptStatus::Failed {
                best_opt = best_opt.max(v);
            }
        }
        let mut best_grid = f64::NEG_INFINITY;
        let dirs = reuter_grid(25).unwrap();
        for xi in dirs.points() {
            for k in 0..20 {
                let r = 0.3 + 0.68 * k as f64 / 19.0;
                let x = BallPoint::new(scale3(*xi, r)).unwrap();
                let (v, _) = rfmp_objective_and_grad(&x, &ctx).unwrap();
                best_grid = best_grid.max(v);
            }
        }
        assert!(
            best_opt >= best_grid * (1.0 - 1e-3),
            "optimizer {best_opt} vs dense grid {best_grid}"
        );
    }

    /// Scaling the objective is a no-op when the step length and tolerances
    /// are rescaled to match.
    #[test]
    fn optimizer_scale_invariance() {
        let grid = reuter_grid(6).unwrap();
        let x_star = BallPoint::new([0.2, 0.1, 0.7]).unwrap();
        let y = synthesize_data(
            &[(DictionaryElement::AbelPoisson(x_star), 1.0)],
            &grid,
            1.06,
        );
        let ctx = ObjectiveContext {
            residual: &y,
            expansion: &[],
            grid: &grid,
            sigma: 1.06,
            lambda: 0.0,
            series: SeriesControl::default(),
        };
        let start = BallPoint::new([0.1, 0.0, 0.6]).unwrap();
        let base = OptimizerConfig {
            max_opt_iter: 40,
            ..OptimizerConfig::default()
        };
        let c = 32.0;
        let scaled = OptimizerConfig {
            initial_step: base.initial_step / c,
            grad_tol: base.grad_tol * c,
            ..base
        };
        let (xa, va, sa) = apk_optimize(&start, &ctx, &base, ObjScale::Fixed(1.0), R_MAX_DEFAULT);
        let (xb, vb, sb) = apk_optimize(&start, &ctx, &scaled, ObjScale::Fixed(c), R_MAX_DEFAULT);
        assert_eq!(sa, sb);
        assert!(norm3(crate::types::sub3(xa.coords(), xb.coords())) < 1e-12);
        assert!((va - vb).abs() < 1e-12 * va.abs().max(1.0));
    }

    #[test]
    fn arbitration_rules() {
        let sh = (
            DictionaryElement::SphericalHarmonic(SHIndex::new(1, 0).unwrap()),
            1.0,
        );
        let local = (
            DictionaryElement::AbelPoisson(BallPoint::new([0.0, 0.0, 0.5]).unwrap()),
            2.0,
        );
        let opt = (
            DictionaryElement::AbelPoisson(BallPoint::new([0.0, 0.0, 0.6]).unwrap()),
            3.0,
        );
        // forcing window ignores the values
        let (el, _, kind) = arbitrate(sh.clone(), Some(local.clone()), Some(opt.clone()), 0, 250);
        assert_eq!(el, sh.0);
        assert_eq!(kind, "sh_forced");
        // beyond the window the argmax wins
        let (el, v, kind) = arbitrate(sh.clone(), Some(local.clone()), Some(opt.clone()), 300, 250);
        assert_eq!(el, opt.0);
        assert_eq!(v, 3.0);
        assert_eq!(kind, "apk_optimized");
        // failed optimization falls back to max(SH, local)
        let (el, _, kind) = arbitrate(sh.clone(), Some(local.clone()), None, 300, 250);
        assert_eq!(el, local.0);
        assert_eq!(kind, "apk_local");
        // dominance: arbitrated value never drops below the local value
        let (_, v, _) = arbitrate(sh, Some(local.clone()), Some(opt), 300, 0);
        assert!(v >= local.1);
    }

    #[test]
    fn learn_single_iteration_yields_one_sh() {
        let truth = DictionaryElement::SphericalHarmonic(SHIndex::new(3, 1).unwrap());
        let setup = setup_from(&[(truth, 1.0)], 8, 1.06);
        let start = starting_set(3, 0.5);
        let learn_cfg = LearnConfig {
            sh_max_degree: 5,
            force_sh_first: 1,
            ..LearnConfig::default()
        };
        let pursuit_cfg = PursuitConfig {
            max_iter: 1,
            lambda0: 1e-8,
            ..PursuitConfig::default()
        };
        let out = learn(&setup, &start, &learn_cfg, &pursuit_cfg).unwrap();
        assert_eq!(out.dictionary.len(), 1);
        assert!(matches!(
            out.dictionary.elements[0],
            DictionaryElement::SphericalHarmonic(_)
        ));
    }

    #[test]
    fn learn_recovers_starting_set_elements() {
        // target built from 3 starting-set kernels whose centres are
        // pairwise far apart, so their sharp bumps barely interfere; with no
        // SH forcing and tiny lambda the learner must find all of them
        let start = starting_set(6, 0.9);
        assert!(start.elements.len() > 35);
        let centre = |i: usize| match &start.elements[i] {
            DictionaryElement::AbelPoisson(x) => x.xi(),
            _ => unreachable!(),
        };
        let mut picks = vec![0usize];
        for i in 1..start.elements.len() {
            if picks
                .iter()
                .all(|&p| crate::types::dot3(centre(p), centre(i)) < 0.0)
            {
                picks.push(i);
                if picks.len() == 3 {
                    break;
                }
            }
        }
        assert_eq!(picks.len(), 3, "could not find separated centres");
        let expansion: Vec<(DictionaryElement, f64)> = picks
            .iter()
            .map(|&i| (start.elements[i].clone(), 1.0 + i as f64 * 0.1))
            .collect();
        let setup = setup_from(&expansion, 10, 1.06);
        let learn_cfg = LearnConfig {
            sh_max_degree: 3,
            force_sh_first: 0,
            ..LearnConfig::default()
        };
        let pursuit_cfg = PursuitConfig {
            max_iter: 40,
            lambda0: 1e-10,
            rel_data_error_stop: 1e-7,
            ..PursuitConfig::default()
        };
        let out = learn(&setup, &start, &learn_cfg, &pursuit_cfg).unwrap();
        // residual interference between bumps keeps the tail from vanishing
        // outright, but the bulk of the signal must be explained
        assert!(out.records.last().unwrap().rel_data_error < 2e-3);
        for &i in &picks {
            let target = match &start.elements[i] {
                DictionaryElement::AbelPoisson(x) => *x,
                _ => unreachable!(),
            };
            let found = out.dictionary.elements.iter().any(|d| match d {
                DictionaryElement::AbelPoisson(x) => {
                    norm3(crate::types::sub3(x.coords(), target.coords())) < 0.05
                }
                _ => false,
            });
            assert!(found, "starting-set kernel {i} not recovered");
        }
        // feasibility of every learnt kernel
        for d in &out.dictionary.elements {
            if let DictionaryElement::AbelPoisson(x) = d {
                assert!(x.h() <= R_MAX_DEFAULT + 1e-15);
            }
        }
    }

    /// Growing-dictionary replay of the learnt dictionary must reproduce the
    /// learner's expansion coefficient-for-coefficient.
    #[test]
    fn replay_reproduces_learning_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let mut truth: Vec<(DictionaryElement, f64)> = Vec::new();
        for n in 0..=3u32 {
            for j in -(n as i32)..=n as i32 {
                truth.push((
                    DictionaryElement::SphericalHarmonic(SHIndex::new(n, j).unwrap()),
                    rng.gen_range(-1.0..1.0),
                ));
            }
        }
        for _ in 0..2 {
            let dir = {
                let v = [
                    rng.gen_range(-1.0..1.0f64),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                scale3(v, 1.0 / norm3(v))
            };
            truth.push((
                DictionaryElement::AbelPoisson(
                    BallPoint::new(scale3(dir, rng.gen_range(0.8..0.88))).unwrap(),
                ),
                rng.gen_range(0.5..1.5),
            ));
        }
        let setup = setup_from(&truth, 12, 1.06);
        let start = starting_set(5, 0.85);
        let learn_cfg = LearnConfig {
            sh_max_degree: 5,
            force_sh_first: 5,
            ..LearnConfig::default()
        };
        let pursuit_cfg = PursuitConfig {
            max_iter: 25,
            lambda0: 1e-4,
            lambda_mode: LambdaMode::NonStationary,
            rel_data_error_stop: 1e-9,
            ..PursuitConfig::default()
        };
        let out = learn(&setup, &start, &learn_cfg, &pursuit_cfg).unwrap();
        assert!(out.expansion.len() > 5);
        let replay_cfg = PursuitConfig {
            growing_dictionary: true,
            ..pursuit_cfg
        };
        let replay = crate::pursuit::run(&out.dictionary, &setup, &replay_cfg).unwrap();
        assert_eq!(replay.expansion.len(), out.expansion.len());
        for ((d1, a1), (d2, a2)) in out.expansion.iter().zip(&replay.expansion) {
            assert_eq!(d1, d2);
            assert!(
                (a1 - a2).abs() <= 1e-10 * a1.abs().max(1.0),
                "{a1} vs {a2}"
            );
        }
    }

    #[test]
    fn learn_rejects_bad_config() {
        let setup = setup_from(
            &[(DictionaryElement::SphericalHarmonic(SHIndex::new(0, 0).unwrap()), 1.0)],
            4,
            1.06,
        );
        let start = starting_set(2, 0.5);
        let bad = LearnConfig {
            r_max: 1.5,
            ..LearnConfig::default()
        };
        assert!(learn(&setup, &start, &bad, &PursuitConfig::default()).is_err());
        let bad_opt = LearnConfig {
            opt: OptimizerConfig {
                armijo_c: 1.5,
                ..OptimizerConfig::default()
            },
            ..LearnConfig::default()
        };
        assert!(learn(&setup, &start, &bad_opt, &PursuitConfig::default()).is_err());
    }
}
