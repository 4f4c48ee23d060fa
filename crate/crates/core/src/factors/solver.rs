use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DVector, Vector6};
use serde::{Deserialize, Serialize};

use super::skyline::Skyline;
use super::{linearize, FactorGraph, Values, VariableKey};
use crate::error::{Error, Result};
use crate::geometry::{oplus, Twist};

const LAMBDA_MAX: f64 = 1e16;
const LAMBDA_MIN: f64 = 1e-15;
const DIAGONAL_FLOOR: f64 = 1e-9;
const NEGLIGIBLE_COST: f64 = 1e-24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmParams {
    pub max_iterations: usize,
    pub lambda_init: f64,
    /// Multiplier applied to lambda after a rejected step; accepted steps
    /// divide by it.
    pub lambda_factor: f64,
    /// Stop once the relative cost decrease of an accepted step is below this.
    pub cost_tolerance: f64,
}

impl Default for LmParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            lambda_init: 1e-4,
            lambda_factor: 10.0,
            cost_tolerance: 1e-9,
        }
    }
}

impl LmParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0
            || !(self.lambda_init > 0.0)
            || !(self.lambda_factor > 1.0)
            || !(self.cost_tolerance > 0.0)
        {
            return Err(Error::Config(format!("invalid optimizer parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizeStats {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted step.
    pub accepted_costs: Vec<f64>,
    pub converged: bool,
}

pub fn optimize(graph: &FactorGraph, init: &Values, params: &LmParams) -> Result<(Values, OptimizeStats)> {
    optimize_with_fixed(graph, init, params, &BTreeSet::new())
}

/// Levenberg-Marquardt over all variables of `init` except `fixed`.
///
/// Every free variable must be touched by at least one factor.
pub fn optimize_with_fixed(
    graph: &FactorGraph,
    init: &Values,
    params: &LmParams,
    fixed: &BTreeSet<VariableKey>,
) -> Result<(Values, OptimizeStats)> {
    params.validate()?;
    let used = graph.keys();
    for k in &used {
        init.get(k)?;
    }
    let free: Vec<VariableKey> = init.keys().filter(|k| !fixed.contains(k)).copied().collect();
    if let Some(k) = free.iter().find(|k| !used.contains(k)) {
        return Err(Error::Gauge(k.to_string()));
    }
    let index: BTreeMap<VariableKey, usize> = free.iter().enumerate().map(|(i, k)| (*k, i)).collect();

    let initial_cost = graph.cost(init)?;
    if !initial_cost.is_finite() {
        return Err(Error::Divergence(format!("initial cost is {initial_cost}")));
    }
    let mut stats = OptimizeStats {
        initial_cost,
        final_cost: initial_cost,
        ..OptimizeStats::default()
    };
    if free.is_empty() || graph.is_empty() {
        stats.converged = true;
        return Ok((init.clone(), stats));
    }

    // envelope of the normal matrix: earliest variable each one couples to
    let mut first_var: Vec<usize> = (0..free.len()).collect();
    for f in &graph.factors {
        let ids: Vec<usize> = f.keys().iter().filter_map(|k| index.get(k).copied()).collect();
        if let Some(&lo) = ids.iter().min() {
            for &i in &ids {
                first_var[i] = first_var[i].min(lo);
            }
        }
    }
    let first_row: Vec<usize> = (0..6 * free.len()).map(|r| 6 * first_var[r / 6]).collect();

    let mut values = init.clone();
    let mut cost = initial_cost;
    let mut lambda = params.lambda_init;
    while stats.iterations < params.max_iterations {
        stats.iterations += 1;
        let lin = linearize(graph, &values)?;
        let mut h = Skyline::new(first_row.clone());
        let mut g = DVector::zeros(6 * free.len());
        for lf in &lin {
            for (a, ka) in lf.keys.iter().enumerate() {
                let Some(&ia) = index.get(ka) else { continue };
                let ja = &lf.jacobians[a];
                let ga = ja.transpose() * lf.residual;
                for r in 0..6 {
                    g[6 * ia + r] += ga[r];
                }
                for (b, kb) in lf.keys.iter().enumerate() {
                    let Some(&ib) = index.get(kb) else { continue };
                    if ib > ia {
                        continue;
                    }
                    let block = ja.transpose() * lf.jacobians[b];
                    for r in 0..6 {
                        for c in 0..6 {
                            let (row, col) = (6 * ia + r, 6 * ib + c);
                            if col <= row {
                                h.add(row, col, block[(r, c)]);
                            }
                        }
                    }
                }
            }
        }
        if g.amax() < 1e-12 || cost <= NEGLIGIBLE_COST {
            stats.converged = true;
            break;
        }

        let mut accepted = false;
        while lambda <= LAMBDA_MAX {
            let mut damped = h.clone();
            for i in 0..damped.dim() {
                let d = damped.diagonal(i).max(DIAGONAL_FLOOR);
                damped.add_diagonal(i, lambda * d);
            }
            let delta = match damped.cholesky() {
                Ok(l) => l.solve((-&g).as_slice()),
                Err(_) => {
                    lambda *= params.lambda_factor;
                    continue;
                }
            };
            let mut candidate = values.clone();
            for (k, &i) in &index {
                let step = Twist::from_vector(&Vector6::from_column_slice(&delta[6 * i..6 * i + 6]));
                candidate.insert(*k, oplus(values.get(k)?, &step));
            }
            let new_cost = graph.cost(&candidate)?;
            if new_cost.is_finite() && new_cost <= cost {
                let relative = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                values = candidate;
                cost = new_cost;
                stats.accepted_costs.push(cost);
                lambda = (lambda / params.lambda_factor).max(LAMBDA_MIN);
                accepted = true;
                if relative < params.cost_tolerance || cost <= NEGLIGIBLE_COST {
                    stats.converged = true;
                }
                break;
            }
            lambda *= params.lambda_factor;
        }
        if !accepted {
            // no damping produces a decrease: at a minimum to working precision
            stats.converged = true;
            break;
        }
        if stats.converged {
            break;
        }
    }
    stats.final_cost = cost;
    Ok((values, stats))
}
