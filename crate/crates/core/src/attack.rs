//! Constrained adversarial perturbation search.
//!
//! All searches climb the loss `L(f(M), Y)` of the true label `Y` with
//! L∞-normalized gradient steps: the largest single-coordinate change per step
//! is `size`. Only compromised coordinates move.
//!
//! * [`eq_one_step`] keeps the gradient on the independent coordinates of
//!   `Φx = 0` and recomputes the dependent ones as `x_D = B·x_I`, so each step
//!   lies in the null space of `Φ`.
//! * [`gen_eq_per`] accumulates such steps; sums of null-space vectors stay in
//!   the null space, so the total perturbation keeps every equality law.
//! * [`gen_iq_per`] walks freely while all inequalities hold and, when a probe
//!   crosses a boundary, holds the violated rows fixed as equalities and
//!   steps again from the last feasible point.
//! * [`uni_adv_measur`] handles unknown uncompromised readings by growing one
//!   perturbation over a set of guessed completions until enough of them are
//!   misclassified.
//! * [`supreme_attack`] is the unconstrained baseline.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::constraints::{self, ConstraintKind, ConstraintSet, MeasurementVector};
use crate::error::{check_len, Error, Result};
use crate::linalg::{self, DependencyDecomposition, DEFAULT_PIVOT_TOL};
use crate::nn::Network;

/// Anything the searches can query: a label prediction and the input
/// gradient of the loss for a given label.
pub trait Classifier: Sync {
    fn input_dim(&self) -> usize;
    fn predict(&self, x: &[f64]) -> Result<usize>;
    fn loss_gradient(&self, x: &[f64], label: usize) -> Result<Vec<f64>>;
}

impl Classifier for Network {
    fn input_dim(&self) -> usize {
        Network::input_dim(self)
    }

    fn predict(&self, x: &[f64]) -> Result<usize> {
        Network::predict(self, x)
    }

    fn loss_gradient(&self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        self.input_gradient(x, label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Step budget of one best-effort search.
    pub step: usize,
    /// Largest change of any single measurement in one step.
    pub size: f64,
    /// The universal search stops once sample accuracy drops below this.
    pub lambda_threshold: f64,
    /// Outer passes over the sample set in the universal search.
    pub max_itera: usize,
    /// Number of sampled uncompromised completions.
    pub sample_count: usize,
    pub seed: u64,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step == 0 {
            return Err(Error::InvalidConfig("step must be at least 1".into()));
        }
        if !(self.size > 0.0) || !self.size.is_finite() {
            return Err(Error::InvalidConfig("size must be positive".into()));
        }
        if !(self.lambda_threshold > 0.0 && self.lambda_threshold <= 1.0) {
            return Err(Error::InvalidConfig("lambda must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            step: 50,
            size: 0.06,
            lambda_threshold: 0.1,
            max_itera: 5,
            sample_count: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    /// `M* = M + Δ`.
    pub adversarial: Vec<f64>,
    /// `Δ`, zero outside the compromised set (except for the supreme baseline).
    pub perturbation: Vec<f64>,
    /// Whether the attacking model misclassifies `M*` (for the universal
    /// search: whether the λ test fired).
    pub succeeded: bool,
    /// Best-effort search steps taken, summed over all generator calls.
    pub steps_used: usize,
    /// Outer passes of the universal search (0 elsewhere).
    pub outer_iterations: usize,
    pub elapsed: Duration,
}

/// Outcome of one best-effort search.
#[derive(Debug, Clone, PartialEq)]
pub struct Search {
    pub perturbation: Vec<f64>,
    pub steps: usize,
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Scales `g` so that its largest magnitude equals `size`; zero stays zero.
fn normalize_step(g: &mut [f64], size: f64) {
    let peak = linalg::norm_inf(g);
    if peak == 0.0 {
        return;
    }
    // Dividing first: `size / peak` overflows for subnormal gradients.
    g.iter_mut().for_each(|v| *v = *v / peak * size);
}

fn check_indices(idx: &[usize], d: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= d) {
        Some(&i) => Err(Error::IndexOutOfBounds { index: i, len: d }),
        None => Ok(()),
    }
}

/// Unconstrained step over the compromised coordinates: the gradient with
/// `G_U` zeroed, scaled so its largest component is `size`.
pub fn free_step<M: Classifier + ?Sized>(
    model: &M,
    u: &[usize],
    m: &[f64],
    size: f64,
    y: usize,
) -> Result<Vec<f64>> {
    check_indices(u, m.len())?;
    let mut g = model.loss_gradient(m, y)?;
    for &i in u {
        g[i] = 0.0;
    }
    normalize_step(&mut g, size);
    Ok(g)
}

/// How the compromised gradient is corrected before scaling.
enum StepBasis<'a> {
    /// No active constraint rows: every compromised coordinate is free.
    Free,
    Dependent(&'a DependencyDecomposition),
}

fn constrained_step<M: Classifier + ?Sized>(
    model: &M,
    c: &[usize],
    m: &[f64],
    size: f64,
    basis: StepBasis<'_>,
    y: usize,
) -> Result<Vec<f64>> {
    check_indices(c, m.len())?;
    let g = model.loss_gradient(m, y)?;
    let mut g_c = constraints::subvector(&g, c)?;
    if let StepBasis::Dependent(dep) = basis {
        check_len("dependency columns", c.len(), dep.dim())?;
        dep.complete(&mut g_c);
    }
    let mut r = vec![0.0; m.len()];
    constraints::scatter(&mut r, c, &g_c)?;
    normalize_step(&mut r, size);
    Ok(r)
}

/// One step that keeps `Φ·r_C = 0` and `r_U = 0`.
///
/// The gradient on the independent coordinates `I` of `Φx = 0` is kept, the
/// dependent ones are recomputed as `B·G_I`, and the corrected vector is
/// scaled so its largest component equals `size`. A rank-0 `Φ` leaves every
/// compromised coordinate free.
pub fn eq_one_step<M: Classifier + ?Sized>(
    model: &M,
    c: &[usize],
    m: &[f64],
    size: f64,
    cs: &ConstraintSet,
    y: usize,
) -> Result<Vec<f64>> {
    check_len("constraint columns", c.len(), cs.phi.cols())?;
    match linalg::dependency(&cs.phi, DEFAULT_PIVOT_TOL) {
        Ok(dep) => constrained_step(model, c, m, size, StepBasis::Dependent(&dep), y),
        Err(Error::EmptyConstraint) => constrained_step(model, c, m, size, StepBasis::Free, y),
        Err(e) => Err(e),
    }
}

/// Best-effort search under equality constraints.
///
/// Starts from `delta` (which must already satisfy `Φ·delta_C = 0`), takes up
/// to `step` [`eq_one_step`]s, and returns as soon as `model` misclassifies
/// `m + v`.
#[allow(clippy::too_many_arguments)]
pub fn gen_eq_per<M: Classifier + ?Sized>(
    delta: &[f64],
    model: &M,
    c: &[usize],
    m: &[f64],
    step: usize,
    size: f64,
    cs: &ConstraintSet,
    y: usize,
) -> Result<Search> {
    check_len("perturbation", m.len(), delta.len())?;
    check_len("constraint columns", c.len(), cs.phi.cols())?;
    let basis_owned = match linalg::dependency(&cs.phi, DEFAULT_PIVOT_TOL) {
        Ok(dep) => Some(dep),
        Err(Error::EmptyConstraint) => None,
        Err(e) => return Err(e),
    };
    let mut v = delta.to_vec();
    let mut steps = 0;
    while steps < step {
        let x = add(m, &v);
        if model.predict(&x)? != y {
            break;
        }
        let basis = match &basis_owned {
            Some(dep) => StepBasis::Dependent(dep),
            None => StepBasis::Free,
        };
        let r = constrained_step(model, c, &x, size, basis, y)?;
        v.iter_mut().zip(&r).for_each(|(a, b)| *a += b);
        steps += 1;
    }
    Ok(Search {
        perturbation: v,
        steps,
    })
}

/// Best-effort search under inequality constraints.
///
/// Keeps a feasible `valid` perturbation and a probing `pioneer`. While the
/// pioneer satisfies every row it is accepted and a free step is probed from
/// it; when it violates rows, those rows join the active set `V` and the next
/// probe is an equality step from `valid` that holds every row in `V` fixed.
/// Accepting a probe clears `V`. The returned perturbation is always the last
/// feasible one. If `V` grows to full column rank the search stops.
#[allow(clippy::too_many_arguments)]
pub fn gen_iq_per<M: Classifier + ?Sized>(
    delta: &[f64],
    model: &M,
    c: &[usize],
    u: &[usize],
    m: &[f64],
    step: usize,
    size: f64,
    cs: &ConstraintSet,
    y: usize,
) -> Result<Search> {
    check_len("perturbation", m.len(), delta.len())?;
    check_len("constraint columns", c.len(), cs.phi.cols())?;
    let mut pioneer = delta.to_vec();
    let mut valid = pioneer.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut steps = 0;
    while steps < step {
        let at_valid = add(m, &valid);
        if model.predict(&at_valid)? != y {
            break;
        }
        let probe_c = constraints::subvector(&add(m, &pioneer), c)?;
        let violated = cs.check_inequality(&probe_c)?;
        let r = if violated.is_empty() {
            valid.clone_from(&pioneer);
            active.clear();
            free_step(model, u, &add(m, &valid), size, y)?
        } else {
            active.extend(violated);
            let held = cs.row_subset(&active)?;
            active = dedup(&active);
            match eq_one_step(model, c, &at_valid, size, &held, y) {
                Ok(r) => r,
                Err(Error::DegenerateConstraint { .. }) => break,
                Err(e) => return Err(e),
            }
        };
        pioneer = add(&valid, &r);
        steps += 1;
    }
    Ok(Search {
        perturbation: valid,
        steps,
    })
}

fn dedup(v: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(v.len());
    for &i in v {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// Fraction of `muc + delta` that `model` still labels `y`.
pub fn sample_eva<M: Classifier + ?Sized>(
    model: &M,
    y: usize,
    muc: &[Vec<f64>],
    delta: &[f64],
) -> Result<f64> {
    if muc.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut kept = 0usize;
    for x in muc {
        check_len("sample vector", delta.len(), x.len())?;
        if model.predict(&add(x, delta))? == y {
            kept += 1;
        }
    }
    Ok(kept as f64 / muc.len() as f64)
}

/// Runs the best-effort search matching the constraint kind.
#[allow(clippy::too_many_arguments)]
pub fn best_effort<M: Classifier + ?Sized>(
    delta: &[f64],
    model: &M,
    c: &[usize],
    u: &[usize],
    m: &[f64],
    step: usize,
    size: f64,
    cs: &ConstraintSet,
    y: usize,
) -> Result<Search> {
    match cs.kind {
        ConstraintKind::Equality => gen_eq_per(delta, model, c, m, step, size, cs, y),
        ConstraintKind::Inequality => gen_iq_per(delta, model, c, u, m, step, size, cs, y),
    }
}

/// Single best-effort search from a zero perturbation with full knowledge of
/// `m` (the white-box and gray-box1 settings).
pub fn known_measurement_attack<M: Classifier + ?Sized>(
    model: &M,
    m: &MeasurementVector,
    y: usize,
    cs: &ConstraintSet,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    cs.check_dimension(m.values.len())?;
    let start = Instant::now();
    let zero = vec![0.0; m.values.len()];
    let s = best_effort(
        &zero,
        model,
        &m.compromised,
        &m.uncompromised,
        &m.values,
        cfg.step,
        cfg.size,
        cs,
        y,
    )?;
    let adversarial = add(&m.values, &s.perturbation);
    let succeeded = model.predict(&adversarial)? != y;
    Ok(AttackResult {
        adversarial,
        perturbation: s.perturbation,
        succeeded,
        steps_used: s.steps,
        outer_iterations: 0,
        elapsed: start.elapsed(),
    })
}

/// Universal perturbation search for an attacker who sees only `M_C`.
///
/// Each entry of `mu` supplies guessed uncompromised readings; they are
/// spliced with the true compromised readings of `m` into the sample set.
/// One perturbation `Δ` is grown across the set, warm-starting every search
/// from the current `Δ`, until fewer than `lambda` of the samples keep label
/// `y` or `max_itera` passes are spent. The result applies `Δ` to the real
/// measurement `m`; only its compromised readings are ever read.
#[allow(clippy::too_many_arguments)]
pub fn uni_adv_measur<M: Classifier + ?Sized>(
    model: &M,
    mu: &[Vec<f64>],
    m: &MeasurementVector,
    lambda: f64,
    y: usize,
    max_itera: usize,
    cs: &ConstraintSet,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidConfig("lambda must lie in (0, 1]".into()));
    }
    if mu.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = m.values.len();
    cs.check_dimension(d)?;
    let start = Instant::now();
    let m_c = m.compromised_values();
    let muc: Vec<Vec<f64>> = mu
        .iter()
        .map(|sample| {
            check_len("sampled measurement", d, sample.len())?;
            let mut x = sample.clone();
            constraints::scatter(&mut x, &m.compromised, &m_c)?;
            Ok(x)
        })
        .collect::<Result<_>>()?;

    let mut delta = vec![0.0; d];
    let mut steps_used = 0;
    let mut outer = 0;
    let mut succeeded = false;
    'outer: while outer < max_itera {
        outer += 1;
        for x in &muc {
            let s = best_effort(
                &delta,
                model,
                &m.compromised,
                &m.uncompromised,
                x,
                cfg.step,
                cfg.size,
                cs,
                y,
            )?;
            delta = s.perturbation;
            steps_used += s.steps;
            if sample_eva(model, y, &muc, &delta)? < lambda {
                succeeded = true;
                break 'outer;
            }
        }
    }
    Ok(AttackResult {
        adversarial: add(&m.values, &delta),
        perturbation: delta,
        succeeded,
        steps_used,
        outer_iterations: outer,
        elapsed: start.elapsed(),
    })
}

/// Unconstrained baseline: raw-gradient steps over every feature, each
/// scaled so the largest component is `size`, stopping once `model`
/// misclassifies.
pub fn supreme_attack<M: Classifier + ?Sized>(
    model: &M,
    m: &[f64],
    y: usize,
    step: usize,
    size: f64,
) -> Result<AttackResult> {
    let start = Instant::now();
    let mut x = m.to_vec();
    let mut steps = 0;
    let mut succeeded = model.predict(&x)? != y;
    while steps < step && !succeeded {
        let mut g = model.loss_gradient(&x, y)?;
        normalize_step(&mut g, size);
        x.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        steps += 1;
        succeeded = model.predict(&x)? != y;
    }
    Ok(AttackResult {
        perturbation: x.iter().zip(m).map(|(a, b)| a - b).collect(),
        adversarial: x,
        succeeded,
        steps_used: steps,
        outer_iterations: 0,
        elapsed: start.elapsed(),
    })
}
