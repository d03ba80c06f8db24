//! Regularized Functional Matching Pursuit (RFMP).
//!
//! Greedily minimizes the Tikhonov functional
//! `J(F) = ||y - T F||^2 + lambda ||F||_{H_2}^2` over expansions in a fixed
//! dictionary. Each iteration picks the element `d` maximizing
//!
//! ```text
//! RFMP(d; n) = (<R_n, T d> - lambda <F_n, d>_{H_2})^2
//!              / (||T d||^2 + lambda ||d||_{H_2}^2)
//! ```
//!
//! and steps with the optimal coefficient `alpha = numerator / denominator`,
//! which lowers `J` by exactly the objective value.
//!
//! The [`Engine`] keeps all per-element caches (`T d` images, norms, inner
//! products with the current iterate) and supports appending elements
//! mid-run, which the dictionary learner builds on.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, DictionaryElement};
use crate::error::{Error, Result};
use crate::kernel::{h2_inner, h2_norm_sq, SeriesControl};
use crate::operator::{apply_operator, ProblemSetup};

/// Regularization-parameter schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaMode {
    /// `lambda_n = lambda0` for all iterations.
    Fixed,
    /// `lambda_n = lambda0 ||R_0|| / (n + 1)`; the counter `n` runs over all
    /// iterations and is not reset by restarts.
    NonStationary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PursuitConfig {
    pub lambda0: f64,
    pub lambda_mode: LambdaMode,
    pub max_iter: usize,
    /// Stop once `||R_n|| / ||y||` falls to this level.
    pub rel_data_error_stop: f64,
    /// Stop once `|alpha_n|` falls below this, if set.
    pub min_coeff_stop: Option<f64>,
    /// Zero the `<F_n, d>` caches every this many iterations, if set,
    /// keeping the expansion and residual.
    pub restart_every: Option<usize>,
    /// Restrict iteration `n` to the first `n + 1` dictionary elements;
    /// used to replay a learnt dictionary in its build order.
    pub growing_dictionary: bool,
    pub series: SeriesControl,
}

impl Default for PursuitConfig {
    fn default() -> Self {
        PursuitConfig {
            lambda0: 1e-6,
            lambda_mode: LambdaMode::Fixed,
            max_iter: 200,
            rel_data_error_stop: 1e-8,
            min_coeff_stop: None,
            restart_every: None,
            growing_dictionary: false,
            series: SeriesControl::default(),
        }
    }
}

/// Why the pursuit loop ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    DataErrorReached,
    SmallCoefficient,
    /// Every admissible element scored an objective of zero.
    Stalled,
    /// The data vector is identically zero.
    NullData,
}

/// Per-iteration diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub index: usize,
    pub element: DictionaryElement,
    pub alpha: f64,
    pub lambda: f64,
    pub objective: f64,
    pub residual_norm: f64,
    pub rel_data_error: f64,
}

/// Result of a pursuit run. `expansion` lists one `(element, alpha)` pair per
/// iteration in pick order; repeated elements are not merged.
#[derive(Clone, Debug)]
pub struct PursuitOutcome {
    pub expansion: Vec<(DictionaryElement, f64)>,
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
    pub residual: Vec<f64>,
}

/// Denominators below this are treated as degenerate and the element skipped.
const DEGENERACY_FLOOR: f64 = 1e-300;

/// Pursuit working state over a (possibly growing) element list.
pub struct Engine {
    elements: Vec<DictionaryElement>,
    td: Vec<Vec<f64>>,
    td_norm_sq: Vec<f64>,
    norm_sq: Vec<f64>,
    /// `H_2` Gram rows, computed lazily for chosen elements only.
    gram_rows: HashMap<usize, Vec<f64>>,
    residual: Vec<f64>,
    /// `<F_n, d_i>_{H_2}` for every element.
    f_inner: Vec<f64>,
    /// `||F_n||_{H_2}^2`, updated incrementally.
    reg_norm_sq: f64,
    expansion: Vec<(usize, f64)>,
    /// Expansion length at the last restart; terms before it no longer
    /// contribute to the regularization coupling.
    restart_at: usize,
    sigma: f64,
    grid: crate::grid::SphereGrid,
    series: SeriesControl,
    y_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Engine {
    pub fn new(
        elements: Vec<DictionaryElement>,
        setup: &ProblemSetup,
        series: SeriesControl,
    ) -> Result<Self> {
        let per_element: Vec<(Vec<f64>, f64)> = elements
            .par_iter()
            .map(|d| -> Result<(Vec<f64>, f64)> {
                let td = apply_operator(d, &setup.grid, setup.sigma);
                let nsq = h2_norm_sq(d, &series)?;
                Ok((td, nsq))
            })
            .collect::<Result<_>>()?;
        let mut td = Vec::with_capacity(elements.len());
        let mut td_norm_sq = Vec::with_capacity(elements.len());
        let mut norm_sq = Vec::with_capacity(elements.len());
        for (t, nsq) in per_element {
            td_norm_sq.push(dot(&t, &t));
            td.push(t);
            norm_sq.push(nsq);
        }
        let y_norm = dot(&setup.y, &setup.y).sqrt();
        Ok(Engine {
            f_inner: vec![0.0; elements.len()],
            elements,
            td,
            td_norm_sq,
            norm_sq,
            gram_rows: HashMap::new(),
            residual: setup.y.clone(),
            reg_norm_sq: 0.0,
            expansion: Vec::new(),
            restart_at: 0,
            sigma: setup.sigma,
            grid: setup.grid.clone(),
            series,
            y_norm,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[DictionaryElement] {
        &self.elements
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn residual_norm(&self) -> f64 {
        dot(&self.residual, &self.residual).sqrt()
    }

    pub fn y_norm(&self) -> f64 {
        self.y_norm
    }

    pub fn reg_norm_sq(&self) -> f64 {
        self.reg_norm_sq
    }

    pub fn expansion_indices(&self) -> &[(usize, f64)] {
        &self.expansion
    }

    pub fn expansion(&self) -> Vec<(DictionaryElement, f64)> {
        self.expansion
            .iter()
            .map(|&(i, a)| (self.elements[i].clone(), a))
            .collect()
    }

    /// `<R_n, T d_i>`.
    pub fn residual_inner(&self, i: usize) -> f64 {
        dot(&self.residual, &self.td[i])
    }

    /// `<F_n, d_i>_{H_2}` from the incremental cache.
    pub fn f_inner(&self, i: usize) -> f64 {
        self.f_inner[i]
    }

    pub fn td_norm_sq(&self, i: usize) -> f64 {
        self.td_norm_sq[i]
    }

    pub fn norm_sq(&self, i: usize) -> f64 {
        self.norm_sq[i]
    }

    /// RFMP quotient and optimal coefficient for element `i`; `None` if the
    /// denominator is degenerate.
    pub fn objective(&self, i: usize, lambda: f64) -> Option<(f64, f64)> {
        let den = self.td_norm_sq[i] + lambda * self.norm_sq[i];
        if den < DEGENERACY_FLOOR {
            return None;
        }
        let num = self.residual_inner(i) - lambda * self.f_inner[i];
        Some((num * num / den, num / den))
    }

    /// Best element among the first `limit`, by objective; ties keep the
    /// lowest index. Returns `(index, objective, alpha)`.
    pub fn select(&self, lambda: f64, limit: usize) -> Option<(usize, f64, f64)> {
        let m = limit.min(self.elements.len());
        let scored: Vec<Option<(f64, f64)>> = (0..m)
            .into_par_iter()
            .map(|i| self.objective(i, lambda))
            .collect();
        let mut best: Option<(usize, f64, f64)> = None;
        for (i, s) in scored.into_iter().enumerate() {
            if let Some((obj, alpha)) = s {
                match best {
                    Some((_, best_obj, _)) if obj <= best_obj => {}
                    _ => best = Some((i, obj, alpha)),
                }
            }
        }
        best
    }

    /// Ensures the `H_2` Gram row of element `i` covers all current elements.
    fn gram_row(&mut self, i: usize) -> Result<&[f64]> {
        let row = self.gram_rows.entry(i).or_default();
        if row.len() < self.elements.len() {
            let start = row.len();
            let di = self.elements[i].clone();
            let extension: Vec<f64> = self.elements[start..]
                .par_iter()
                .map(|dj| h2_inner(&di, dj, &self.series))
                .collect::<Result<_>>()?;
            self.gram_rows.get_mut(&i).unwrap().extend(extension);
        }
        Ok(self.gram_rows.get(&i).unwrap())
    }

    /// Applies the update `F_{n+1} = F_n + alpha d_i`, maintaining the
    /// residual, the regularization norm, and the `<F, d>` caches.
    pub fn step(&mut self, i: usize, alpha: f64) -> Result<()> {
        // the norm update needs <F_n, d_i> *before* the cache moves on
        self.reg_norm_sq += 2.0 * alpha * self.f_inner[i] + alpha * alpha * self.norm_sq[i];
        for (r, t) in self.residual.iter_mut().zip(&self.td[i]) {
            *r -= alpha * t;
        }
        self.gram_row(i)?;
        let row = &self.gram_rows[&i];
        for (f, g) in self.f_inner.iter_mut().zip(row) {
            *f += alpha * g;
        }
        self.expansion.push((i, alpha));
        Ok(())
    }

    /// Appends a new element mid-run; its `<F_n, d>` cache is rebuilt from
    /// the expansion so far. Returns the new index.
    pub fn push_element(&mut self, d: DictionaryElement) -> Result<usize> {
        let td = apply_operator(&d, &self.grid, self.sigma);
        self.td_norm_sq.push(dot(&td, &td));
        self.td.push(td);
        self.norm_sq.push(h2_norm_sq(&d, &self.series)?);
        let mut fi = 0.0;
        for &(k, a) in &self.expansion[self.restart_at..] {
            fi += a * h2_inner(&self.elements[k], &d, &self.series)?;
        }
        self.f_inner.push(fi);
        self.elements.push(d);
        Ok(self.elements.len() - 1)
    }

    /// Restart: forget the `H_2` coupling to the current iterate while
    /// keeping the expansion and residual.
    pub fn restart(&mut self) {
        self.f_inner.iter_mut().for_each(|f| *f = 0.0);
        self.reg_norm_sq = 0.0;
        self.restart_at = self.expansion.len();
    }

    /// Expansion terms added since the last restart — the part of the
    /// iterate that still couples through the regularization term.
    pub fn active_expansion(&self) -> Vec<(DictionaryElement, f64)> {
        self.expansion[self.restart_at..]
            .iter()
            .map(|&(i, a)| (self.elements[i].clone(), a))
            .collect()
    }
}

/// Regularization parameter at global iteration `iter`.
pub fn lambda_at(cfg: &PursuitConfig, iter: usize, r0_norm: f64) -> f64 {
    match cfg.lambda_mode {
        LambdaMode::Fixed => cfg.lambda0,
        LambdaMode::NonStationary => cfg.lambda0 * r0_norm / (iter as f64 + 1.0),
    }
}

/// Runs RFMP on a fixed dictionary.
pub fn run(dict: &Dictionary, setup: &ProblemSetup, cfg: &PursuitConfig) -> Result<PursuitOutcome> {
    if dict.elements.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    let mut engine = Engine::new(dict.elements.clone(), setup, cfg.series)?;
    let mut records = Vec::new();
    if engine.y_norm() == 0.0 {
        return Ok(PursuitOutcome {
            expansion: Vec::new(),
            records,
            stop: StopReason::NullData,
            residual: engine.residual().to_vec(),
        });
    }
    let r0_norm = engine.y_norm();
    let mut stop = StopReason::MaxIterations;
    for iter in 0..cfg.max_iter {
        if let Some(every) = cfg.restart_every {
            if iter > 0 && iter % every == 0 {
                engine.restart();
            }
        }
        let lambda = lambda_at(cfg, iter, r0_norm);
        let limit = if cfg.growing_dictionary {
            iter + 1
        } else {
            engine.len()
        };
        let Some((index, objective, alpha)) = engine.select(lambda, limit) else {
            stop = StopReason::Stalled;
            break;
        };
        if objective == 0.0 {
            stop = StopReason::Stalled;
            break;
        }
        if let Some(mc) = cfg.min_coeff_stop {
            if alpha.abs() < mc {
                stop = StopReason::SmallCoefficient;
                break;
            }
        }
        engine.step(index, alpha)?;
        let residual_norm = engine.residual_norm();
        let rel = residual_norm / engine.y_norm();
        records.push(IterationRecord {
            iteration: iter,
            index,
            element: engine.elements()[index].clone(),
            alpha,
            lambda,
            objective,
            residual_norm,
            rel_data_error: rel,
        });
        if rel <= cfg.rel_data_error_stop {
            stop = StopReason::DataErrorReached;
            break;
        }
    }
    Ok(PursuitOutcome {
        expansion: engine.expansion(),
        records,
        stop,
        residual: engine.residual().to_vec(),
    })
}
