//! Perturbation experiments for truncated bilinear reductions.
//!
//! Everything here measures, never proves. The module answers four
//! questions about a system and a state-matrix perturbation A -> A + F:
//!
//! * [`perturbation_gain`]: through which frequency-dependent factor does
//!   F enter the order-M transfer-function error,
//! * [`subsystem_error_bound`]: does the measured squared H2 error of one
//!   subsystem stay under its product bound of resolvent norms and the
//!   gain's sup norm,
//! * [`scaling_sweep`]: does the error shrink linearly with the
//!   perturbation size, order by order and in total,
//! * [`first_condition_experiment`] and [`birka_hypothesis_check`]: how
//!   close does an inexactly solved reduction land to the exactly solved
//!   one, and does the instance satisfy the spectral hypotheses under
//!   which the coupled iteration tolerates perturbations at all.
//!
//! The sweep fixes a unit-norm direction D and walks F = scale * D over
//! several decades:
//!
//! ```text
//! scale ->  1e-6   1e-5   ...   1e-2
//!            |      |            |
//!            v      v            v
//!          record record ...  record     (parallel, sorted by scale)
//!            \______|____________/
//!                   v
//!        log-log slope fits (total, per order, gain)
//! ```
//!
//! All norms come from the norms module: exact Gramian sums where a
//! closed form exists, quadrature and refinement scans where it does not.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mor::{self, MorConfig};
use crate::norms::{self, FrequencyGrid};
use crate::solvers::OrthogonalityMetrics;
use crate::sylvester::SolveBackend;
use crate::system::{BilinearSystem, PerturbedSystem, TruncatedSeries};
use crate::tensor;
use crate::{CMatrix, CVector};

/// Relative slack on the product bound, absorbing quadrature error.
const BOUND_SLACK: f64 = 0.05;

/// Absolute floor for the bound comparison, so that a vanishing
/// perturbation (both sides zero) still counts as satisfied.
const BOUND_FLOOR: f64 = 1e-12;

/// Refinement rounds for every sup-norm scan in this module.
const HINF_REFINE: usize = 3;

/// Largest state dimension [`birka_hypothesis_check`] accepts; it
/// assembles dense 4n^2 x 4n^2 matrices.
pub const MAX_HYPOTHESIS_STATES: usize = 30;

/// One measured-versus-bound pair for a single subsystem order.
///
/// `lhs` is the squared H2 norm of the subsystem difference, `rhs` the
/// product bound, and `holds` their comparison with a small relative
/// slack and an absolute floor.
#[derive(Debug, Clone, Copy)]
pub struct ErrorBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Everything measured at one perturbation scale during a sweep.
#[derive(Debug, Clone)]
pub struct SweepRecord {
    /// The scale sigma with F = sigma * direction.
    pub scale: f64,
    /// Spectral norm of F; equals `scale` because the direction is
    /// normalized.
    pub f_norm: f64,
    /// H2 norm of the order-k subsystem difference, k = 1..=order.
    /// Quadrature where the axis count allows it, exact Gramian terms
    /// above that.
    pub per_subsystem_h2_error: Vec<f64>,
    /// H2 norm of the full truncated-series difference.
    pub total_h2_error: f64,
    /// Sup-norm estimates of the perturbation gain, orders 2..=order.
    pub gain_norm_estimates: Vec<f64>,
    /// Measured-versus-bound pairs for orders 1..=min(order, 3).
    pub error_bounds: Vec<ErrorBound>,
}

/// A scaling sweep with its slope fits.
///
/// Slopes are least-squares fits of log error against log scale; a value
/// near 1 means the error is proportional to the perturbation size.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Records for the scales that kept the perturbed system stable,
    /// sorted by scale.
    pub records: Vec<SweepRecord>,
    /// Slope of the total series error.
    pub total_slope: f64,
    /// Slope per subsystem order, k = 1..=order.
    pub per_subsystem_slopes: Vec<f64>,
    /// Slope per gain estimate, orders 2..=order.
    pub gain_slopes: Vec<f64>,
    /// Scales that were dropped, with the reason.
    pub dropped: Vec<(f64, String)>,
}

/// One row of the inexact-versus-exact comparison.
#[derive(Debug, Clone, Copy)]
pub struct FirstConditionRow {
    /// Inner linear-solve tolerance for this run.
    pub tolerance: f64,
    /// Whether the outer iteration converged under this tolerance.
    pub converged: bool,
    /// Outer sweeps used.
    pub outer_iterations: usize,
    /// Relative eigenvalue distance of the reduced state matrix to the
    /// direct-solve reference.
    pub eigenvalue_distance: f64,
    /// H2 distance of the truncated series of the two reduced models;
    /// infinite when this run's model is unstable.
    pub h2_distance: f64,
    /// Test-space orthogonality metrics of the final sweep.
    pub orthogonality: OrthogonalityMetrics,
}

/// Outcome of [`first_condition_experiment`].
///
/// When the direct-solve reference fails to converge the experiment is
/// skipped: `reference_converged` is false and `rows` is empty.
#[derive(Debug, Clone)]
pub struct FirstConditionReport {
    pub reference_converged: bool,
    pub reference_iterations: usize,
    pub rows: Vec<FirstConditionRow>,
}

/// Hypothesis checks for the perturbation analysis of the coupled
/// iteration, plus the contraction hypotheses used by the product bound.
///
/// `q_hat` is the Kronecker coefficient matrix of the doubled-system
/// fixed-point equation, `f_hat_hat` the doubled-and-lifted perturbation
/// acting on the same space. Booleans restate the stored numeric values
/// against their thresholds.
#[derive(Debug, Clone, Copy)]
pub struct HypothesisReport {
    /// Spectral norm of F.
    pub f_norm: f64,
    pub f_norm_lt_1: bool,
    /// Sup-norm estimate of the resolvent (s I - A)^-1 over the
    /// imaginary axis; infinite when A is unstable.
    pub resolvent_hinf: f64,
    pub resolvent_hinf_lt_1: bool,
    pub q_hat_invertible: bool,
    /// 1 / sigma_min of the coefficient matrix; infinite when singular.
    pub q_hat_inv_norm: f64,
    /// Spectral norm of the lifted perturbation.
    pub f_hat_hat_norm: f64,
}

/// The frequency-dependent gain through which a state-matrix
/// perturbation enters the order-M subsystem error, M = shifts.len().
///
/// With K(s) = s I - A, the gain at shifts (s_1, ..., s_M) is the
/// resolvent product K(s_1)...K(s_(M-1)) times the difference between
/// the plain coupling chain N K^-1(s_(M-1)) ... N K^-1(s_2) N and the
/// same chain with a correction factor (I - F K^-1(s_i))^-1 behind every
/// resolvent, led by the correction at s_M and trailed by
/// (I - K^-1(s_1) F)^-1. For M = 1 the chain degenerates and the gain is
/// F (I - K^-1(s_1) F)^-1.
///
/// The subsystem difference factors exactly through this quantity:
/// H_M - H~_M = c K^-1(s_M) ... K^-1(s_1) * gain * K^-1(s_1) b, which is
/// what the product bound exploits. A vanishing F gives a vanishing gain
/// because the two chains coincide.
///
/// Errors: [`Error::Singular`] naming the factor when a resolvent or a
/// correction factor is not invertible at the given shifts.
pub fn perturbation_gain(
    sys: &BilinearSystem,
    f: &DMatrix<f64>,
    shifts: &[Complex64],
) -> Result<CMatrix> {
    let dim = sys.dim();
    if f.nrows() != dim || f.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "perturbation is {}x{}, state dimension is {dim}",
            f.nrows(),
            f.ncols()
        )));
    }
    if shifts.is_empty() {
        return Err(Error::InvalidArgument(
            "perturbation gain needs at least one shift".into(),
        ));
    }
    let a = linalg::to_complex(sys.a());
    let nc = linalg::to_complex(sys.n());
    let fc = linalg::to_complex(f);
    let eye = CMatrix::identity(dim, dim);
    let m = shifts.len();

    let kinv: Vec<CMatrix> = shifts
        .iter()
        .map(|&s| {
            linalg::invert_c(
                &(&eye * s - &a),
                &format!("shifted state matrix at {s}"),
            )
        })
        .collect::<Result<_>>()?;
    let trailing = linalg::invert_c(
        &(&eye - &kinv[0] * &fc),
        "trailing correction factor at the first shift",
    )?;
    if m == 1 {
        return Ok(&fc * &trailing);
    }

    // Plain chain between the outermost resolvents, built left to right.
    let mut plain = nc.clone();
    for i in (1..=m - 2).rev() {
        plain = &plain * &(&kinv[i] * &nc);
    }

    // Corrected chain: one correction behind every resolvent, led by the
    // factor at the last shift.
    let mut corrected = linalg::invert_c(
        &(&eye - &fc * &kinv[m - 1]),
        "leading correction factor at the last shift",
    )?;
    for i in (1..=m - 2).rev() {
        let corr = linalg::invert_c(
            &(&eye - &fc * &kinv[i]),
            &format!("correction factor at shift {}", shifts[i]),
        )?;
        corrected = &corrected * &(&nc * &(&kinv[i] * &corr));
    }
    corrected = &corrected * &(&nc * &trailing);

    let mut lead = &eye * shifts[0] - &a;
    for &s in shifts.iter().take(m - 1).skip(1) {
        lead = &lead * &(&eye * s - &a);
    }
    Ok(&lead * &(plain - corrected))
}

/// Squared H2 norms of the resolvent, from one Lyapunov solve.
///
/// Returns (trace P, P) with A P + P A^T + I = 0, so trace P is the
/// squared H2 norm of (s I - A)^-1 and c P c^T the squared H2 norm of
/// the output-weighted resolvent c (s I - A)^-1.
fn resolvent_gramian(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = a.nrows();
    let eye = DMatrix::identity(dim, dim);
    let t = -(tensor::kron(a, &eye) + tensor::kron(&eye, a));
    let rhs = tensor::vectorize(&eye);
    let p_vec = t
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Kronecker sum matrix is singular".into()))?;
    tensor::unvectorize(&p_vec, dim, dim)
}

/// Measures the squared H2 error of the order-`order` subsystem under
/// the perturbation F and compares it against the product bound
///
/// ```text
/// lhs = || H_M - H~_M ||^2
/// rhs = ||c K^-1||^2_H2 * (||K^-1||^2_H2)^(M-1)
///         * ||gain||^2_Hinf * ||K^-1 b||^2_Hinf
/// ```
///
/// The left side is direct quadrature of the stacked difference system
/// on `quad_grid`; the H2 factors on the right come from one exact
/// Lyapunov solve and the sup norms from refinement scans on
/// `hinf_grid`. `holds` compares with 5% relative slack plus an absolute
/// floor. When a correction factor is singular somewhere on the scan the
/// gain's sup norm is infinite and the bound holds vacuously.
///
/// Orders above the quadrature axis limit are rejected with
/// [`Error::SizeLimit`]; both A and A + F must be stable.
pub fn subsystem_error_bound(
    sys: &BilinearSystem,
    f: &DMatrix<f64>,
    order: usize,
    quad_grid: &FrequencyGrid,
    hinf_grid: &FrequencyGrid,
) -> Result<ErrorBound> {
    if order == 0 {
        return Err(Error::InvalidArgument(
            "subsystem order must be at least 1".into(),
        ));
    }
    if order > norms::MAX_QUADRATURE_AXES {
        return Err(Error::SizeLimit(format!(
            "the error bound integrates over {order} axes; the quadrature limit is {}",
            norms::MAX_QUADRATURE_AXES
        )));
    }
    let perturbed = PerturbedSystem::new(sys.clone(), f.clone())?;
    if !sys.is_stable() {
        return Err(Error::Unstable("base system is unstable".into()));
    }
    let pert_sys = perturbed.to_system();
    if !pert_sys.is_stable() {
        return Err(Error::Unstable(
            "perturbed state matrix is unstable; the error norm does not exist".into(),
        ));
    }

    let diff = norms::difference_system(sys, &pert_sys)?;
    let lhs = norms::h2_subsystem_quadrature(&diff, order, quad_grid)?
        .value
        .powi(2);

    let p = resolvent_gramian(sys.a())?;
    let weighted = sys.c().dot(&(&p * sys.c()));
    let mut rhs = weighted;
    for _ in 1..order {
        rhs *= p.trace();
    }
    rhs *= gain_hinf_squared(sys, f, order, hinf_grid);
    let ac = linalg::to_complex(sys.a());
    let bc: CVector = sys.b().map(|x| Complex64::new(x, 0.0));
    let input_gain = move |omegas: &[f64]| -> f64 {
        let lu = linalg::resolvent_lu(&ac, Complex64::new(0.0, omegas[0]));
        lu.solve(&bc).map(|v| v.norm()).unwrap_or(f64::INFINITY)
    };
    let kb = norms::h_infinity_estimate(&input_gain, 1, hinf_grid, HINF_REFINE);
    rhs *= kb * kb;

    let holds = lhs <= rhs * (1.0 + BOUND_SLACK) + BOUND_FLOOR;
    Ok(ErrorBound { lhs, rhs, holds })
}

/// Squared sup-norm estimate of the perturbation gain over `order` axes.
fn gain_hinf_squared(
    sys: &BilinearSystem,
    f: &DMatrix<f64>,
    order: usize,
    hinf_grid: &FrequencyGrid,
) -> f64 {
    let gain = |omegas: &[f64]| -> f64 {
        let shifts: Vec<Complex64> =
            omegas.iter().map(|&w| Complex64::new(0.0, w)).collect();
        match perturbation_gain(sys, f, &shifts) {
            Ok(u) => linalg::spectral_norm_c(&u),
            // A singular correction factor means the gain is unbounded.
            Err(_) => f64::INFINITY,
        }
    };
    let value = norms::h_infinity_estimate(&gain, order, hinf_grid, HINF_REFINE);
    value * value
}

/// Walks F = scale * direction over the given scales and records the
/// truncated-series error, the per-order errors, the gain estimates and
/// the measured-versus-bound pairs at every scale, then fits log-log
/// slopes.
///
/// The direction is normalized to unit spectral norm, so the stored
/// `f_norm` equals the scale. Scales whose perturbed state matrix is
/// unstable are dropped with a warning entry instead of failing the
/// sweep; at least two must survive for the fits. Records are computed
/// in parallel and sorted by scale.
pub fn scaling_sweep(
    sys: &BilinearSystem,
    order: usize,
    direction: &DMatrix<f64>,
    scales: &[f64],
    quad_grid: &FrequencyGrid,
    hinf_grid: &FrequencyGrid,
) -> Result<SweepOutcome> {
    let dim = sys.dim();
    if direction.nrows() != dim || direction.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "direction is {}x{}, state dimension is {dim}",
            direction.nrows(),
            direction.ncols()
        )));
    }
    if order == 0 {
        return Err(Error::InvalidArgument(
            "truncation order must be at least 1".into(),
        ));
    }
    if scales.is_empty() {
        return Err(Error::InvalidArgument("no scales given".into()));
    }
    if scales.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::InvalidArgument(
            "scales must be positive and finite".into(),
        ));
    }
    if !sys.is_stable() {
        return Err(Error::Unstable("base system is unstable".into()));
    }
    let dir_norm = linalg::spectral_norm(direction);
    if dir_norm <= 0.0 || !dir_norm.is_finite() {
        return Err(Error::InvalidArgument(
            "direction must be a nonzero finite matrix".into(),
        ));
    }
    let dir = direction / dir_norm;

    let outcomes: Vec<(f64, std::result::Result<SweepRecord, String>)> = scales
        .par_iter()
        .map(|&scale| {
            let record = sweep_record(sys, order, &dir, scale, quad_grid, hinf_grid);
            (scale, record)
        })
        .collect();

    let mut records = Vec::new();
    let mut dropped = Vec::new();
    for (scale, outcome) in outcomes {
        match outcome {
            Ok(record) => records.push(record),
            Err(reason) => dropped.push((scale, reason)),
        }
    }
    records.sort_by(|x, y| x.scale.total_cmp(&y.scale));
    dropped.sort_by(|x, y| x.0.total_cmp(&y.0));
    if records.len() < 2 {
        return Err(Error::Numerical(format!(
            "only {} scale(s) kept the perturbed system stable; need at least 2 for a slope fit",
            records.len()
        )));
    }

    let log_scales: Vec<f64> = records.iter().map(|r| r.scale.ln()).collect();
    let total_slope = fit_slope(
        &log_scales,
        &records
            .iter()
            .map(|r| safe_ln(r.total_h2_error))
            .collect::<Vec<_>>(),
    );
    let per_subsystem_slopes = (0..order)
        .map(|k| {
            fit_slope(
                &log_scales,
                &records
                    .iter()
                    .map(|r| safe_ln(r.per_subsystem_h2_error[k]))
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let gain_slopes = (0..order.saturating_sub(1))
        .map(|k| {
            fit_slope(
                &log_scales,
                &records
                    .iter()
                    .map(|r| safe_ln(r.gain_norm_estimates[k]))
                    .collect::<Vec<_>>(),
            )
        })
        .collect();

    Ok(SweepOutcome {
        records,
        total_slope,
        per_subsystem_slopes,
        gain_slopes,
        dropped,
    })
}

/// One sweep point: all quantities at a fixed perturbation scale.
/// String errors are drop reasons, not failures.
fn sweep_record(
    sys: &BilinearSystem,
    order: usize,
    dir: &DMatrix<f64>,
    scale: f64,
    quad_grid: &FrequencyGrid,
    hinf_grid: &FrequencyGrid,
) -> std::result::Result<SweepRecord, String> {
    let f = dir * scale;
    if !linalg::is_stable(&(sys.a() + &f)) {
        return Err("perturbed state matrix is unstable at this scale".into());
    }
    let run = || -> Result<SweepRecord> {
        let ts = TruncatedSeries::new(sys.clone(), order)?;
        let series = norms::h2_error_norm(&ts, &f)?;

        let mut error_bounds = Vec::new();
        for k in 1..=order.min(norms::MAX_QUADRATURE_AXES) {
            error_bounds.push(subsystem_error_bound(sys, &f, k, quad_grid, hinf_grid)?);
        }
        // Quadrature values double as the per-order errors; beyond the
        // axis limit the exact Gramian terms take over.
        let per_subsystem_h2_error: Vec<f64> = (1..=order)
            .map(|k| {
                if k <= norms::MAX_QUADRATURE_AXES {
                    error_bounds[k - 1].lhs.sqrt()
                } else {
                    series.per_term[k - 1]
                }
            })
            .collect();
        let gain_norm_estimates: Vec<f64> = (2..=order)
            .map(|k| gain_hinf_squared(sys, &f, k, hinf_grid).sqrt())
            .collect();

        Ok(SweepRecord {
            scale,
            f_norm: linalg::spectral_norm(&f),
            per_subsystem_h2_error,
            total_h2_error: series.total.value,
            gain_norm_estimates,
            error_bounds,
        })
    };
    run().map_err(|e| e.to_string())
}

fn safe_ln(x: f64) -> f64 {
    x.max(1e-300).ln()
}

/// Least-squares slope of y against x.
fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mean_x) * (y - mean_y);
        den += (x - mean_x) * (x - mean_x);
    }
    num / den
}

/// Runs the truncated iteration once with direct solves as the reference
/// and once per inner tolerance, and tabulates how far each inexact run
/// lands from the reference.
///
/// The iterative backend keeps the shape configured in `cfg` (recycling
/// stays recycling); a direct backend in `cfg` falls back to plain
/// iterative solves with a generous iteration cap. When the reference
/// run does not converge the experiment is skipped and the report says
/// so instead of comparing against a moving target.
pub fn first_condition_experiment(
    sys: &BilinearSystem,
    cfg: &MorConfig,
    tolerances: &[f64],
) -> Result<FirstConditionReport> {
    if tolerances.is_empty() {
        return Err(Error::InvalidArgument("no tolerances given".into()));
    }
    if tolerances.iter().any(|t| !t.is_finite() || *t <= 0.0) {
        return Err(Error::InvalidArgument(
            "tolerances must be positive and finite".into(),
        ));
    }
    let mut ref_cfg = cfg.clone();
    ref_cfg.backend = SolveBackend::Direct;
    let (red_ref, trace_ref) = mor::tbirka(sys, &ref_cfg)?;
    if !trace_ref.converged {
        return Ok(FirstConditionReport {
            reference_converged: false,
            reference_iterations: trace_ref.outer_iterations(),
            rows: Vec::new(),
        });
    }
    let ref_eigs = linalg::eigenvalues_sorted(red_ref.a());
    let ref_sys = red_ref.to_system()?;
    let fallback_cap = 100 + 20 * sys.dim();

    let rows = tolerances
        .iter()
        .map(|&tolerance| {
            let mut run_cfg = cfg.clone();
            run_cfg.backend = match cfg.backend {
                SolveBackend::BiCgDeflated {
                    max_iterations,
                    recycle_rank,
                    ..
                } => SolveBackend::BiCgDeflated {
                    tolerance,
                    max_iterations,
                    recycle_rank,
                },
                SolveBackend::BiCg { max_iterations, .. } => SolveBackend::BiCg {
                    tolerance,
                    max_iterations,
                },
                SolveBackend::Direct => SolveBackend::BiCg {
                    tolerance,
                    max_iterations: fallback_cap,
                },
            };
            let (red, trace) = mor::tbirka(sys, &run_cfg)?;
            let eigenvalue_distance =
                mor::eig_change(&ref_eigs, &linalg::eigenvalues_sorted(red.a()));
            // An unstable iterate has no finite H2 distance; keep the row.
            let h2_distance = match norms::h2_pair_error(&ref_sys, &red.to_system()?, cfg.terms)
            {
                Ok(series) => series.total.value,
                Err(Error::Unstable(_)) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            let last = trace
                .iterations
                .last()
                .expect("the outer loop records at least one sweep");
            Ok(FirstConditionRow {
                tolerance,
                converged: trace.converged,
                outer_iterations: trace.outer_iterations(),
                eigenvalue_distance,
                h2_distance,
                orthogonality: last.orthogonality,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(FirstConditionReport {
        reference_converged: true,
        reference_iterations: trace_ref.outer_iterations(),
        rows,
    })
}

/// Assembles the doubled-system fixed-point coefficient matrix and the
/// lifted perturbation, and checks the spectral hypotheses that the
/// coupled iteration's perturbation analysis rests on.
///
/// With D_A = diag(A, A) and D_N = diag(N, N) on 2n states, the
/// coefficient matrix is
///
/// ```text
/// q_hat = -D_A (x) I_2n - I_2n (x) D_A - D_N (x) D_N
/// ```
///
/// and the lifted perturbation is f_hat_hat = I (x) f_hat + f_hat (x) I
/// with f_hat = diag(0, F). Both norms come from dense singular values,
/// never estimates; only the resolvent sup norm is a refinement scan.
///
/// Errors: [`Error::SizeLimit`] above [`MAX_HYPOTHESIS_STATES`] states,
/// since the assembled matrices are 4n^2 x 4n^2.
pub fn birka_hypothesis_check(
    sys: &BilinearSystem,
    f: &DMatrix<f64>,
) -> Result<HypothesisReport> {
    let dim = sys.dim();
    if f.nrows() != dim || f.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "perturbation is {}x{}, state dimension is {dim}",
            f.nrows(),
            f.ncols()
        )));
    }
    if dim > MAX_HYPOTHESIS_STATES {
        return Err(Error::SizeLimit(format!(
            "hypothesis check on {dim} states assembles a {0}x{0} matrix; the limit is {MAX_HYPOTHESIS_STATES} states, check a reduced model instead",
            4 * dim * dim
        )));
    }

    let a2 = linalg::block_diag(sys.a(), sys.a());
    let n2 = linalg::block_diag(sys.n(), sys.n());
    let eye2 = DMatrix::identity(2 * dim, 2 * dim);
    let mut q_hat = tensor::kron(&a2, &eye2);
    q_hat += tensor::kron(&eye2, &a2);
    q_hat += tensor::kron(&n2, &n2);
    q_hat.neg_mut();
    let singular_values = q_hat.singular_values();
    let sigma_max = singular_values.iter().copied().fold(0.0, f64::max);
    let sigma_min = singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let q_hat_invertible = sigma_min > sigma_max * 1e-12 && sigma_min > 0.0;
    let q_hat_inv_norm = if q_hat_invertible {
        1.0 / sigma_min
    } else {
        f64::INFINITY
    };

    let mut f_hat = DMatrix::zeros(2 * dim, 2 * dim);
    f_hat.view_mut((dim, dim), (dim, dim)).copy_from(f);
    let f_hat_hat = tensor::kron(&eye2, &f_hat) + tensor::kron(&f_hat, &eye2);
    let f_hat_hat_norm = linalg::spectral_norm(&f_hat_hat);

    let f_norm = linalg::spectral_norm(f);
    let resolvent_hinf = resolvent_hinf_estimate(sys);

    Ok(HypothesisReport {
        f_norm,
        f_norm_lt_1: f_norm < 1.0,
        resolvent_hinf,
        resolvent_hinf_lt_1: resolvent_hinf < 1.0,
        q_hat_invertible,
        q_hat_inv_norm,
        f_hat_hat_norm,
    })
}

/// Sup-norm estimate of (s I - A)^-1 over the imaginary axis; infinite
/// for an unstable A.
pub fn resolvent_hinf_estimate(sys: &BilinearSystem) -> f64 {
    if !sys.is_stable() {
        return f64::INFINITY;
    }
    let ac = linalg::to_complex(sys.a());
    let dim = sys.dim();
    let gain = move |omegas: &[f64]| -> f64 {
        let k = CMatrix::identity(dim, dim) * Complex64::new(0.0, omegas[0]) - &ac;
        let smallest = linalg::smallest_singular_value_c(&k);
        if smallest > 0.0 {
            1.0 / smallest
        } else {
            f64::INFINITY
        }
    };
    norms::h_infinity_estimate(&gain, 1, &FrequencyGrid::default(), HINF_REFINE + 1)
}

/// Shifts the state matrix to A - c I with the smallest c (in 0.25
/// steps) that brings the resolvent sup norm under 1 - margin, so that
/// the contraction hypotheses of the error bound hold by construction.
///
/// The margin must lie in [0, 1). Systems already satisfying the target
/// are returned unchanged.
pub fn shift_to_contraction(sys: &BilinearSystem, margin: f64) -> Result<BilinearSystem> {
    if !(0.0..1.0).contains(&margin) {
        return Err(Error::InvalidArgument(format!(
            "margin must be in [0, 1), got {margin}"
        )));
    }
    let target = 1.0 - margin;
    if resolvent_hinf_estimate(sys) < target {
        return Ok(sys.clone());
    }
    let dim = sys.dim();
    // First shift makes the spectral abscissa at most -1/target, the
    // exact requirement for a normal A; non-normal growth is handled by
    // the step loop below.
    let mut shift = (linalg::spectral_abscissa(sys.a()) + 1.0 / target).max(0.0);
    for _ in 0..200 {
        let candidate = BilinearSystem::new(
            sys.a() - DMatrix::identity(dim, dim) * shift,
            sys.n().clone(),
            sys.b().clone(),
            sys.c().clone(),
        )?;
        if resolvent_hinf_estimate(&candidate) < target {
            return Ok(candidate);
        }
        shift += 0.25;
    }
    Err(Error::Numerical(
        "resolvent sup norm did not drop under the target after 200 shift steps".into(),
    ))
}
