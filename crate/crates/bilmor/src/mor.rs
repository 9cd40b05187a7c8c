//! Interpolatory model order reduction of bilinear systems.
//!
//! The module hosts the two fixed-point iterations and their support
//! operations:
//!
//! * [`birka`]: bilinear iterative rational Krylov. Each sweep solves one
//!   coupled Sylvester equation per side, representing every Volterra
//!   term at once.
//! * [`tbirka`]: the truncated variant. Each sweep solves a cascade of
//!   shifted systems per side and sums the first M terms.
//! * [`project`]: Petrov-Galerkin compression of the full system onto a
//!   basis pair.
//! * [`orthonormal_basis`]: realification plus rank-revealing
//!   orthonormalization, padded back to the target dimension when the
//!   solves return rank-deficient data.
//! * [`eig_change`]: the relative spectral-change metric that drives
//!   termination.
//! * [`verify_truncated_interpolation`]: residuals of the weighted
//!   multipoint conditions a converged truncated iteration is expected
//!   to satisfy.
//!
//! One sweep of either iteration:
//!
//! ```text
//!   (Ar, Nr, br, cr) --eigendecompose--> (L, R, weights, coupling)
//!          ^                                        |
//!          |                              shifted solves (primal V, dual W)
//!          |                                        |
//!       project   <--  orthonormalize  <--  realify V, W
//! ```
//!
//! Convergence is declared when the reduced spectrum stops moving. Every
//! sweep leaves a trace record behind, so non-convergence, inexact-solve
//! trouble, and intermediate instability are observable rather than
//! fatal.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::solvers::{residual_orthogonality, OrthogonalityMetrics, RecycleSpace, SolveReport};
use crate::sylvester::{self, ReducedSpectralData, Side, SolveBackend};
use crate::system::BilinearSystem;
use crate::{CMatrix, CVector};

/// Condition ceiling on the basis cross matrix before a projection is
/// refused.
const PROJECTION_COND_LIMIT: f64 = 1e12;

/// Relative rank tolerance for the realified basis columns.
const BASIS_RANK_TOL: f64 = 1e-10;

/// Floor for the denominator of the relative eigenvalue-change metric.
const EIG_CHANGE_FLOOR: f64 = 1e-12;

/// Budget guard for the interpolation verifier: r^M stays below this.
const VERIFIER_TUPLE_LIMIT: f64 = 1e6;

/// A real reduced-order model produced by projection.
///
/// Same shape as the full system, `ẋ = Ar x + Nr x u + br u`,
/// `y = cr x`, just smaller. Stability is not an invariant: the
/// iterations monitor it but never enforce it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    a: DMatrix<f64>,
    n: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
}

impl ReducedSystem {
    /// Validates dimensions and finiteness.
    pub fn new(
        a: DMatrix<f64>,
        n: DMatrix<f64>,
        b: DVector<f64>,
        c: DVector<f64>,
    ) -> Result<Self> {
        let r = a.nrows();
        if r == 0 {
            return Err(Error::InvalidArgument("empty reduced state space".into()));
        }
        if a.ncols() != r || n.nrows() != r || n.ncols() != r || b.len() != r || c.len() != r {
            return Err(Error::DimensionMismatch(format!(
                "reduced parts are {}x{}, {}x{}, {}, {}; expected order {r} throughout",
                a.nrows(),
                a.ncols(),
                n.nrows(),
                n.ncols(),
                b.len(),
                c.len()
            )));
        }
        let finite = a.iter().chain(n.iter()).chain(b.iter()).chain(c.iter());
        if !finite.copied().all(f64::is_finite) {
            return Err(Error::InvalidArgument(
                "reduced system data contains non-finite entries".into(),
            ));
        }
        Ok(Self { a, n, b, c })
    }

    /// Reduced state matrix.
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Reduced bilinear coupling matrix.
    pub fn n(&self) -> &DMatrix<f64> {
        &self.n
    }

    /// Reduced input vector.
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Reduced output vector, applied as a row.
    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    /// Reduced order r.
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// Repackages the reduced model as a full-featured system so the
    /// transfer, simulation, and norm routines apply to it.
    pub fn to_system(&self) -> Result<BilinearSystem> {
        BilinearSystem::new(
            self.a.clone(),
            self.n.clone(),
            self.b.clone(),
            self.c.clone(),
        )
    }
}

/// How the first reduced model of an iteration is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitRule {
    /// Seeded random stable quadruple: a block-diagonal state matrix with
    /// conjugate-paired eigenvalues drawn from the left half-plane, a
    /// random coupling scaled to a tenth of the full coupling's spectral
    /// norm, and random unit input/output vectors.
    SeededRandom,
    /// Leading principal submatrices and subvectors of the full system.
    /// Refused when that initial state matrix is unstable, since the
    /// solves shift with its mirrored eigenvalues.
    CoordinateProjection,
}

/// Settings for one reduction run.
#[derive(Debug, Clone)]
pub struct MorConfig {
    /// Reduced order r, between 1 and the full dimension.
    pub order: usize,
    /// Number of Volterra terms M kept by the truncated iteration; the
    /// coupled iteration ignores it.
    pub terms: usize,
    /// Relative eigenvalue-change threshold that ends the outer loop.
    pub tol: f64,
    /// Hard cap on outer sweeps; hitting it flags non-convergence in the
    /// trace instead of raising an error.
    pub max_outer_iterations: usize,
    /// Initial reduced model rule.
    pub init: InitRule,
    /// Linear-solve engine for the inner systems.
    pub backend: SolveBackend,
    /// Seed for the initial model and any basis padding.
    pub seed: u64,
}

impl MorConfig {
    /// Defaults: M = 2, tolerance 1e-8, cap 500 sweeps, seeded random
    /// initialization, direct solves, seed 0.
    pub fn new(order: usize) -> Self {
        Self {
            order,
            terms: 2,
            tol: 1e-8,
            max_outer_iterations: 500,
            init: InitRule::SeededRandom,
            backend: SolveBackend::Direct,
            seed: 0,
        }
    }

    fn validate(&self, full_dim: usize) -> Result<()> {
        if self.order == 0 || self.order > full_dim {
            return Err(Error::InvalidArgument(format!(
                "reduced order {} outside 1..={full_dim}",
                self.order
            )));
        }
        if self.terms == 0 {
            return Err(Error::InvalidArgument(
                "truncation index must be at least 1".into(),
            ));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidArgument(
                "convergence tolerance must be positive and finite".into(),
            ));
        }
        if self.max_outer_iterations == 0 {
            return Err(Error::InvalidArgument(
                "iteration cap must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Everything observable about one outer sweep.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// Reduced spectrum after the sweep's projection, sorted by real
    /// then imaginary part.
    pub eigenvalues: Vec<Complex64>,
    /// Relative change against the previous spectrum.
    pub eigenvalue_change: f64,
    /// Inner-solve reports for the primal side, one per solve block.
    pub primal_reports: Vec<SolveReport>,
    /// Inner-solve reports for the dual side.
    pub dual_reports: Vec<SolveReport>,
    /// Residual-orthogonality metrics of the sweep's solve blocks.
    pub orthogonality: OrthogonalityMetrics,
    /// The primal basis lost rank and was padded or truncated.
    pub primal_rank_deficient: bool,
    /// Same for the dual basis.
    pub dual_rank_deficient: bool,
    /// The projected model of this sweep is stable.
    pub reduced_stable: bool,
}

/// Full history of an outer iteration; at most the configured cap of
/// records.
#[derive(Debug, Clone)]
pub struct MorTrace {
    /// One record per completed sweep, in order.
    pub iterations: Vec<IterationRecord>,
    /// The eigenvalue change dropped below tolerance before the cap.
    pub converged: bool,
}

impl MorTrace {
    /// Number of completed outer sweeps.
    pub fn outer_iterations(&self) -> usize {
        self.iterations.len()
    }

    /// Eigenvalue change of the last sweep, infinite for an empty trace.
    pub fn final_change(&self) -> f64 {
        self.iterations
            .last()
            .map_or(f64::INFINITY, |rec| rec.eigenvalue_change)
    }
}

/// Petrov-Galerkin projection of the full system onto the pair (V, W).
///
/// Produces `Ar = (WᵀV)⁻¹ Wᵀ A V`, the analogous compression of the
/// coupling, `br = (WᵀV)⁻¹ Wᵀ b`, and `cr = c V`. The cross matrix WᵀV
/// must be well conditioned; when it is not, the caller should
/// re-orthonormalize the bases rather than push through a distorted
/// projector.
pub fn project(
    sys: &BilinearSystem,
    v: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<ReducedSystem> {
    let n = sys.dim();
    let r = v.ncols();
    if r == 0 || v.nrows() != n || w.nrows() != n || w.ncols() != r {
        return Err(Error::DimensionMismatch(format!(
            "bases are {}x{} and {}x{}; expected {n}xr with matching r >= 1",
            v.nrows(),
            v.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    let cross = w.transpose() * v;
    let sv = nalgebra::linalg::SVD::new(cross.clone(), false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0f64, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smin > 0.0) || smax / smin >= PROJECTION_COND_LIMIT {
        return Err(Error::Numerical(format!(
            "basis cross matrix has condition {:.3e}; re-orthonormalize the bases",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }
    let lu = cross.lu();
    let solve = |rhs: DMatrix<f64>| -> Result<DMatrix<f64>> {
        lu.solve(&rhs)
            .ok_or_else(|| Error::Singular("basis cross matrix".into()))
    };
    let a_r = solve(w.transpose() * sys.a() * v)?;
    let n_r = solve(w.transpose() * sys.n() * v)?;
    let b_r_mat = solve(DMatrix::from_column_slice(r, 1, (w.transpose() * sys.b()).as_slice()))?;
    let b_r = DVector::from_column_slice(b_r_mat.as_slice());
    let c_r = v.transpose() * sys.c();
    ReducedSystem::new(a_r, n_r, b_r, c_r)
}

/// Real orthonormal basis of the (realified) range of a complex block.
///
/// The real and imaginary parts of the columns are stacked, run through
/// rank-revealing orthonormalization, and the result is brought to
/// exactly `target` columns: missing directions are filled with seeded
/// random orthonormal complements, surplus ones are dropped in column
/// order. The boolean is true when either adjustment happened, so outer
/// loops can record the rank deficiency.
///
/// Solves on a real system with a conjugate-paired shift set return
/// blocks whose realified rank is at most `target`, so padding is the
/// expected repair and truncation the unusual one.
pub fn orthonormal_basis(
    x: &CMatrix,
    target: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, bool)> {
    let n = x.nrows();
    if n == 0 || x.ncols() == 0 {
        return Err(Error::InvalidArgument("empty basis input".into()));
    }
    if target == 0 || target > n {
        return Err(Error::InvalidArgument(format!(
            "target basis size {target} outside 1..={n}"
        )));
    }
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(2 * x.ncols());
    for j in 0..x.ncols() {
        cols.push(x.column(j).map(|z| z.re));
    }
    for j in 0..x.ncols() {
        cols.push(x.column(j).map(|z| z.im));
    }
    let q = linalg::mgs_real(n, &cols, BASIS_RANK_TOL);
    let rank = q.ncols();
    if rank == 0 {
        return Err(Error::Numerical(
            "basis input has numerical rank zero".into(),
        ));
    }
    let mut basis: Vec<DVector<f64>> = (0..rank.min(target))
        .map(|j| q.column(j).into_owned())
        .collect();
    if rank < target {
        let mut rng = linalg::seeded_rng(seed);
        while basis.len() < target {
            let mut cand = linalg::unit_vector(n, &mut rng);
            // Two orthogonalization passes keep the complement orthonormal
            // to working precision even when the draw nearly lies in the
            // span already.
            for _ in 0..2 {
                for qcol in &basis {
                    let h = qcol.dot(&cand);
                    cand -= qcol * h;
                }
            }
            let norm = cand.norm();
            if norm > 1e-8 {
                basis.push(cand / norm);
            }
        }
    }
    Ok((DMatrix::from_columns(&basis), rank != target))
}

/// Relative movement between two reduced spectra of equal size.
///
/// Both multisets are sorted by modulus (ties broken by real then
/// imaginary part) and paired positionally; the result is the largest
/// relative displacement over the pairs. Sorting makes the metric
/// insensitive to eigenvalue ordering, in particular to conjugate pairs
/// swapping places between sweeps.
pub fn eig_change(previous: &[Complex64], current: &[Complex64]) -> f64 {
    assert_eq!(
        previous.len(),
        current.len(),
        "eigenvalue sets must have equal cardinality"
    );
    let cmp = |a: &Complex64, b: &Complex64| {
        a.norm()
            .total_cmp(&b.norm())
            .then(a.re.total_cmp(&b.re))
            .then(a.im.total_cmp(&b.im))
    };
    let mut prev = previous.to_vec();
    let mut curr = current.to_vec();
    prev.sort_by(cmp);
    curr.sort_by(cmp);
    prev.iter()
        .zip(&curr)
        .map(|(p, c)| (c - p).norm() / p.norm().max(EIG_CHANGE_FLOOR))
        .fold(0.0, f64::max)
}

/// Coupled-solve outer iteration: both projection bases come from one
/// pair of coupled Sylvester solves per sweep.
///
/// Runs until the reduced spectrum moves less than `cfg.tol` or the
/// sweep cap is hit; the cap is reported through the trace's `converged`
/// flag, never as an error. Hard failures (defective intermediate
/// models, shift collisions, oversized direct solves) do error out.
/// With the deflated backend, recycle spaces are carried from sweep to
/// sweep on each side, warm-starting the slowly drifting systems.
pub fn birka(sys: &BilinearSystem, cfg: &MorConfig) -> Result<(ReducedSystem, MorTrace)> {
    fixed_point_iteration(sys, cfg, None)
}

/// Truncated outer iteration: per sweep, each side solves a cascade of
/// `cfg.terms` shifted systems and sums the blocks into its basis.
///
/// Same termination, tracing, and recycling behavior as [`birka`].
pub fn tbirka(sys: &BilinearSystem, cfg: &MorConfig) -> Result<(ReducedSystem, MorTrace)> {
    fixed_point_iteration(sys, cfg, Some(cfg.terms))
}

fn fixed_point_iteration(
    sys: &BilinearSystem,
    cfg: &MorConfig,
    layers: Option<usize>,
) -> Result<(ReducedSystem, MorTrace)> {
    cfg.validate(sys.dim())?;
    let mut rng = linalg::seeded_rng(cfg.seed);
    let mut red = initial_reduced(sys, cfg, &mut rng)?;
    let mut prev = linalg::eigenvalues_sorted(red.a());

    let mut primal_coupled: Option<RecycleSpace> = None;
    let mut dual_coupled: Option<RecycleSpace> = None;
    let mut primal_cascade: Option<Vec<RecycleSpace>> = None;
    let mut dual_cascade: Option<Vec<RecycleSpace>> = None;

    let mut iterations = Vec::new();
    let mut converged = false;

    for sweep in 0..cfg.max_outer_iterations {
        let data = ReducedSpectralData::from_reduced(red.a(), red.n(), red.b(), red.c())?;

        let (v_blocks, w_blocks, primal_reports, dual_reports) = match layers {
            None => {
                let (primal, dual) = rayon::join(
                    || {
                        sylvester::solve_birka_coupled_with_recycle(
                            sys,
                            &data,
                            Side::Primal,
                            cfg.backend,
                            primal_coupled.as_ref(),
                        )
                    },
                    || {
                        sylvester::solve_birka_coupled_with_recycle(
                            sys,
                            &data,
                            Side::Dual,
                            cfg.backend,
                            dual_coupled.as_ref(),
                        )
                    },
                );
                let (v, v_report, v_space) = primal?;
                let (w, w_report, w_space) = dual?;
                primal_coupled = Some(v_space);
                dual_coupled = Some(w_space);
                (vec![v], vec![w], vec![v_report], vec![w_report])
            }
            Some(m) => {
                let (primal, dual) = rayon::join(
                    || {
                        sylvester::solve_tbirka_cascade_with_recycle(
                            sys,
                            &data,
                            m,
                            Side::Primal,
                            cfg.backend,
                            primal_cascade.as_deref(),
                        )
                    },
                    || {
                        sylvester::solve_tbirka_cascade_with_recycle(
                            sys,
                            &data,
                            m,
                            Side::Dual,
                            cfg.backend,
                            dual_cascade.as_deref(),
                        )
                    },
                );
                let (v_list, v_reports, v_spaces) = primal?;
                let (w_list, w_reports, w_spaces) = dual?;
                primal_cascade = Some(v_spaces);
                dual_cascade = Some(w_spaces);
                (v_list, w_list, v_reports, w_reports)
            }
        };

        let coupled = layers.is_none();
        let lambda = data.eigenvalues().clone();
        let sd_primal = sylvester::side_data(sys, &data, Side::Primal);
        let sd_dual = sylvester::side_data(sys, &data, Side::Dual);
        let primal_residuals = block_residuals(&sd_primal, &lambda, &v_blocks, coupled);
        let dual_residuals = block_residuals(&sd_dual, &lambda, &w_blocks, coupled);
        let orthogonality =
            residual_orthogonality(&v_blocks, &w_blocks, &primal_residuals, &dual_residuals);

        let v_sum = sum_blocks(&v_blocks);
        let w_sum = sum_blocks(&w_blocks);
        let (v, primal_rank_deficient) =
            orthonormal_basis(&v_sum, cfg.order, pad_seed(cfg.seed, sweep, 0))?;
        let (w, dual_rank_deficient) =
            orthonormal_basis(&w_sum, cfg.order, pad_seed(cfg.seed, sweep, 1))?;

        red = project(sys, &v, &w)?;

        let eigenvalues = linalg::eigenvalues_sorted(red.a());
        let eigenvalue_change = eig_change(&prev, &eigenvalues);
        let reduced_stable = linalg::is_stable(red.a());
        iterations.push(IterationRecord {
            eigenvalues: eigenvalues.clone(),
            eigenvalue_change,
            primal_reports,
            dual_reports,
            orthogonality,
            primal_rank_deficient,
            dual_rank_deficient,
            reduced_stable,
        });
        prev = eigenvalues;
        if eigenvalue_change < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok((red, MorTrace { iterations, converged }))
}

/// Deterministic per-sweep, per-side seed for basis padding.
fn pad_seed(seed: u64, sweep: usize, side: u64) -> u64 {
    seed.wrapping_mul(6364136223846793005)
        .wrapping_add(2 * sweep as u64 + side + 1)
}

fn initial_reduced(
    sys: &BilinearSystem,
    cfg: &MorConfig,
    rng: &mut impl Rng,
) -> Result<ReducedSystem> {
    let r = cfg.order;
    match cfg.init {
        InitRule::SeededRandom => {
            let mut a = DMatrix::zeros(r, r);
            let mut i = 0;
            // Planar rotation blocks realize conjugate pairs p +- iq with a
            // perfectly conditioned eigenbasis; an odd tail mode stays real.
            while i + 1 < r {
                let p = -rng.random_range(0.5..2.0);
                let q = rng.random_range(0.1..2.0);
                a[(i, i)] = p;
                a[(i + 1, i + 1)] = p;
                a[(i, i + 1)] = q;
                a[(i + 1, i)] = -q;
                i += 2;
            }
            if i < r {
                a[(i, i)] = -rng.random_range(0.5..2.0);
            }
            let mut n = linalg::uniform_matrix(r, r, rng);
            let target = 0.1 * linalg::spectral_norm(sys.n());
            let norm = linalg::spectral_norm(&n);
            if norm > 0.0 {
                n *= target / norm;
            }
            let b = linalg::unit_vector(r, rng);
            let c = linalg::unit_vector(r, rng);
            ReducedSystem::new(a, n, b, c)
        }
        InitRule::CoordinateProjection => {
            let a = sys.a().view((0, 0), (r, r)).into_owned();
            if !linalg::is_stable(&a) {
                return Err(Error::Unstable(
                    "coordinate-projected initial state matrix is unstable; \
                     use the seeded random initialization"
                        .into(),
                ));
            }
            let n = sys.n().view((0, 0), (r, r)).into_owned();
            let b = sys.b().rows(0, r).into_owned();
            let c = sys.c().rows(0, r).into_owned();
            ReducedSystem::new(a, n, b, c)
        }
    }
}

/// Analytic residual blocks of the sweep's solves, for the
/// orthogonality metrics. The coupled equation yields one block per
/// side; the cascade yields one per layer.
fn block_residuals(
    sd: &sylvester::SideData,
    lambda: &CVector,
    blocks: &[CMatrix],
    coupled: bool,
) -> Vec<CMatrix> {
    let diag = CMatrix::from_diagonal(lambda);
    let rhs0 = &sd.driver * sd.weights.transpose();
    let mut out = Vec::with_capacity(blocks.len());
    for (j, v) in blocks.iter().enumerate() {
        let drift = &sd.a * v + v * &diag;
        let residual = if coupled {
            &rhs0 + drift + &sd.n * v * &sd.coupling
        } else if j == 0 {
            &rhs0 + drift
        } else {
            &sd.n * &blocks[j - 1] * &sd.coupling + drift
        };
        out.push(residual);
    }
    out
}

fn sum_blocks(blocks: &[CMatrix]) -> CMatrix {
    let mut sum = blocks[0].clone();
    for b in &blocks[1..] {
        sum += b;
    }
    sum
}

/// Which matrix propagates the residue chains of the verifier.
///
/// The reduced transfer functions factor over the eigenbasis of the
/// reduced state matrix; the scalar residues are chain products of a
/// rotated coupling matrix sandwiched between the rotated input and
/// output weights. Four rotations of the reduced coupling are coherent
/// candidates, differing in whether the eigenvector matrix enters by
/// similarity or by congruence and in the chain's index orientation.
/// The alternatives stay constructible so the discrimination test can
/// keep ruling them out against the frozen choice.
#[cfg_attr(not(test), allow(dead_code))]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ResidueChain {
    /// `Rᵀ Nr R⁻ᵀ`, the rotation used by the solve drivers.
    Coupling,
    /// Its transpose, `R⁻¹ Nrᵀ R`.
    CouplingTransposed,
    /// `R⁻¹ Nr R`, the similarity transform of the reduced coupling.
    Similarity,
    /// Its transpose, `Rᵀ Nrᵀ R⁻ᵀ`.
    SimilarityTransposed,
}

/// The convention the public verifier uses, fixed by measurement: on
/// converged truncated iterations this chain annihilates the value
/// condition down to the Volterra tail of the truncation, while the
/// other three rotations leave residuals orders of magnitude larger. It
/// is also invariant under rescaling of the eigenvectors, which the
/// congruence rotations are not.
const RESIDUE_CHAIN: ResidueChain = ResidueChain::CouplingTransposed;

fn chain_matrix(
    data: &ReducedSpectralData,
    n_reduced: &DMatrix<f64>,
    kind: ResidueChain,
) -> CMatrix {
    match kind {
        ResidueChain::Coupling => data.coupling().clone(),
        ResidueChain::CouplingTransposed => data.coupling().transpose(),
        ResidueChain::Similarity => {
            data.eigenvectors_inv() * linalg::to_complex(n_reduced) * data.eigenvectors()
        }
        ResidueChain::SimilarityTransposed => {
            (data.eigenvectors_inv() * linalg::to_complex(n_reduced) * data.eigenvectors())
                .transpose()
        }
    }
}

/// Residuals of the truncated multipoint interpolation conditions.
///
/// A reduced model that is a stationary point of the M-term reduction
/// problem matches the full system in two weighted sums over all chains
/// of mirrored reduced eigenvalues: the sum of transfer values, and the
/// sum of their total first-order derivatives. This evaluates both sums
/// on both models and returns the relative mismatches
/// `(value_residual, derivative_residual)`.
///
/// The weights are the reduced transfer functions' residues, computed
/// from the spectral decomposition of the reduced state matrix. The
/// evaluation never enumerates the r^M chains: prefix and suffix states
/// are aggregated per mirrored eigenvalue, which costs M·r shifted
/// solves per side. The r^M budget guard is kept anyway to bound the
/// conditioning of the sums.
///
/// The derivative sum is reported for observability; stationarity
/// arguments for the truncated iteration gate on the value sum.
pub fn verify_truncated_interpolation(
    sys: &BilinearSystem,
    red: &ReducedSystem,
    terms: usize,
) -> Result<(f64, f64)> {
    interpolation_residuals(sys, red, terms, RESIDUE_CHAIN)
}

fn interpolation_residuals(
    sys: &BilinearSystem,
    red: &ReducedSystem,
    terms: usize,
    kind: ResidueChain,
) -> Result<(f64, f64)> {
    if terms == 0 {
        return Err(Error::InvalidArgument(
            "truncation index must be at least 1".into(),
        ));
    }
    let r = red.order();
    if (r as f64).powi(terms as i32) > VERIFIER_TUPLE_LIMIT {
        return Err(Error::SizeLimit(format!(
            "verifier budget: {r}^{terms} chains exceed {VERIFIER_TUPLE_LIMIT:.0}"
        )));
    }
    let data = ReducedSpectralData::from_reduced(red.a(), red.n(), red.b(), red.c())?;
    let mirrors = data.eigenvalues().map(|z| -z);
    let chain = chain_matrix(&data, red.n(), kind);
    let in_w = data.input_weights();
    let out_w = data.output_weights();

    let (value_full, deriv_full) = weighted_chain_sums(
        &linalg::to_complex(sys.a()),
        &linalg::to_complex(sys.n()),
        &sys.b().map(|x| Complex64::new(x, 0.0)),
        &sys.c().map(|x| Complex64::new(x, 0.0)),
        &mirrors,
        in_w,
        out_w,
        &chain,
        terms,
    )?;
    let (value_red, deriv_red) = weighted_chain_sums(
        &linalg::to_complex(red.a()),
        &linalg::to_complex(red.n()),
        &red.b().map(|x| Complex64::new(x, 0.0)),
        &red.c().map(|x| Complex64::new(x, 0.0)),
        &mirrors,
        in_w,
        out_w,
        &chain,
        terms,
    )?;
    Ok((
        relative_mismatch(value_full, value_red),
        relative_mismatch(deriv_full, deriv_red),
    ))
}

fn relative_mismatch(x: Complex64, y: Complex64) -> f64 {
    (x - y).norm() / x.norm().max(y.norm()).max(1e-300)
}

/// Both weighted sums for one model, by aggregated chain states.
///
/// Forward state j holds, per ending eigenvalue index, the weighted sum
/// of all j-long chain prefixes applied to the input; suffix state i
/// holds the transposed weighted suffixes of the output. The value sum
/// contracts forward states with the output weights; the derivative sum
/// pairs every forward/suffix state combination whose lengths fit one
/// doubled resolvent slot inside an M-term chain.
fn weighted_chain_sums(
    a: &CMatrix,
    n_mat: &CMatrix,
    b: &CVector,
    c: &CVector,
    mirrors: &CVector,
    in_w: &CVector,
    out_w: &CVector,
    chain: &CMatrix,
    terms: usize,
) -> Result<(Complex64, Complex64)> {
    let dim = a.nrows();
    let r = mirrors.len();
    let lus: Vec<_> = (0..r).map(|m| linalg::resolvent_lu(a, mirrors[m])).collect();
    let a_t = a.transpose();
    let lus_t: Vec<_> = (0..r)
        .map(|m| linalg::resolvent_lu(&a_t, mirrors[m]))
        .collect();

    let mut forward: Vec<CMatrix> = Vec::with_capacity(terms);
    let mut suffix: Vec<CMatrix> = Vec::with_capacity(terms);
    for k in 0..terms {
        let sources = if k == 0 {
            None
        } else {
            Some((
                n_mat * (&forward[k - 1] * chain.transpose()),
                n_mat.transpose() * (&suffix[k - 1] * chain),
            ))
        };
        let mut f = CMatrix::zeros(dim, r);
        let mut s = CMatrix::zeros(dim, r);
        for m in 0..r {
            let f_rhs = match &sources {
                None => b * in_w[m],
                Some((fs, _)) => fs.column(m).into_owned(),
            };
            let s_rhs = match &sources {
                None => c * out_w[m],
                Some((_, ss)) => ss.column(m).into_owned(),
            };
            f.set_column(
                m,
                &lus[m].solve(&f_rhs).ok_or_else(|| {
                    Error::Singular("a mirrored eigenvalue hit the spectrum".into())
                })?,
            );
            s.set_column(
                m,
                &lus_t[m].solve(&s_rhs).ok_or_else(|| {
                    Error::Singular("a mirrored eigenvalue hit the spectrum".into())
                })?,
            );
        }
        forward.push(f);
        suffix.push(s);
    }

    let mut value = Complex64::new(0.0, 0.0);
    for f in &forward {
        value += linalg::udot(c, &(f * out_w));
    }
    // A doubled resolvent in slot j of a k-chain pairs forward state j
    // with suffix state k-j+1; over k <= M that is every index pair with
    // i + j <= M + 1. The sign comes from differentiating the resolvent.
    let mut derivative = Complex64::new(0.0, 0.0);
    for j in 0..terms {
        for i in 0..(terms - j) {
            let paired: Complex64 = suffix[i]
                .iter()
                .zip(forward[j].iter())
                .map(|(x, y)| x * y)
                .sum();
            derivative -= paired;
        }
    }
    Ok((value, derivative))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn seeded(dim: usize, seed: u64, coupling: f64) -> BilinearSystem {
        BilinearSystem::seeded(dim, seed, coupling)
    }

    fn direct_config(order: usize, seed: u64) -> MorConfig {
        MorConfig {
            seed,
            ..MorConfig::new(order)
        }
    }

    #[test]
    fn project_with_identity_bases_reproduces_the_system() {
        let sys = seeded(4, 7, 0.4);
        let eye = DMatrix::<f64>::identity(4, 4);
        let red = project(&sys, &eye, &eye).unwrap();
        assert_eq!(red.a(), sys.a());
        assert_eq!(red.n(), sys.n());
        assert_eq!(red.b(), sys.b());
        assert_eq!(red.c(), sys.c());
    }

    #[test]
    fn project_with_coordinate_bases_takes_leading_blocks() {
        let sys = seeded(4, 11, 0.4);
        let mut basis = DMatrix::<f64>::zeros(4, 2);
        basis[(0, 0)] = 1.0;
        basis[(1, 1)] = 1.0;
        let red = project(&sys, &basis, &basis).unwrap();
        assert_eq!(red.a(), &sys.a().view((0, 0), (2, 2)).into_owned());
        assert_eq!(red.n(), &sys.n().view((0, 0), (2, 2)).into_owned());
        assert_eq!(red.b(), &sys.b().rows(0, 2).into_owned());
        assert_eq!(red.c(), &sys.c().rows(0, 2).into_owned());
    }

    #[test]
    fn projected_transfer_matches_the_galerkin_formula() {
        let sys = seeded(5, 3, 0.3);
        let mut rng = linalg::seeded_rng(15);
        let cols: Vec<DVector<f64>> = (0..2)
            .map(|_| DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let v = linalg::mgs_real(5, &cols, 1e-12);
        assert_eq!(v.ncols(), 2);
        let red = project(&sys, &v, &v).unwrap();
        let red_sys = red.to_system().unwrap();

        let a_r = linalg::to_complex(&(v.transpose() * sys.a() * &v));
        let b_r = (v.transpose() * sys.b()).map(|x| Complex64::new(x, 0.0));
        let c_r = (v.transpose() * sys.c()).map(|x| Complex64::new(x, 0.0));
        for s in [
            Complex64::new(0.4, 1.3),
            Complex64::new(1.0, -0.2),
            Complex64::new(0.05, 2.0),
        ] {
            let direct = red_sys.transfer(&[s]).unwrap();
            let resolvent = linalg::resolvent_lu(&a_r, s).solve(&b_r).unwrap();
            let oracle = linalg::udot(&c_r, &resolvent);
            assert_abs_diff_eq!(direct.re, oracle.re, epsilon = 1e-10);
            assert_abs_diff_eq!(direct.im, oracle.im, epsilon = 1e-10);
        }
    }

    #[test]
    fn projection_rejects_nearly_dependent_bases() {
        let sys = seeded(3, 5, 0.3);
        let mut v = DMatrix::<f64>::zeros(3, 2);
        v[(0, 0)] = 1.0;
        v[(1, 1)] = 1.0;
        let mut w = DMatrix::<f64>::zeros(3, 2);
        w[(0, 0)] = 1.0;
        w[(0, 1)] = 1.0;
        w[(1, 1)] = 1e-15;
        let err = project(&sys, &v, &w).unwrap_err();
        assert!(err.to_string().contains("re-orthonormalize"));
    }

    #[test]
    fn orthonormal_basis_keeps_real_orthonormal_input() {
        let mut rng = linalg::seeded_rng(8);
        let cols: Vec<DVector<f64>> = (0..3)
            .map(|_| DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let q = linalg::mgs_real(6, &cols, 1e-12);
        let x = linalg::to_complex(&q);
        let (basis, deficient) = orthonormal_basis(&x, 3, 99).unwrap();
        assert!(!deficient);
        for j in 0..3 {
            let same: f64 = (basis.column(j) - q.column(j)).norm();
            let flipped: f64 = (basis.column(j) + q.column(j)).norm();
            assert!(same.min(flipped) < 1e-12);
        }
    }

    #[test]
    fn orthonormal_basis_pads_duplicated_columns() {
        let mut rng = linalg::seeded_rng(21);
        let col = linalg::unit_vector(5, &mut rng);
        let other = linalg::unit_vector(5, &mut rng);
        let mut x = CMatrix::zeros(5, 3);
        x.set_column(0, &col.map(|v| Complex64::new(v, 0.0)));
        x.set_column(1, &other.map(|v| Complex64::new(v, 0.0)));
        x.set_column(2, &col.map(|v| Complex64::new(v, 0.0)));
        let (basis, deficient) = orthonormal_basis(&x, 3, 4).unwrap();
        assert!(deficient);
        let gram = basis.transpose() * &basis;
        assert!((gram - DMatrix::identity(3, 3)).norm() < 1e-12);
        for probe in [&col, &other] {
            let residual = probe - &basis * (basis.transpose() * probe);
            assert!(residual.norm() < 1e-10);
        }
    }

    #[test]
    fn orthonormal_basis_spans_conjugate_paired_input() {
        let mut rng = linalg::seeded_rng(33);
        let re = linalg::unit_vector(6, &mut rng);
        let im = linalg::unit_vector(6, &mut rng);
        let z = CVector::from_fn(6, |i, _| Complex64::new(re[i], im[i]));
        let mut x = CMatrix::zeros(6, 2);
        x.set_column(0, &z);
        x.set_column(1, &z.map(|v| v.conj()));
        let (basis, deficient) = orthonormal_basis(&x, 2, 0).unwrap();
        assert!(!deficient);
        for probe in [&re, &im] {
            let residual = probe - &basis * (basis.transpose() * probe);
            assert!(residual.norm() < 1e-10);
        }
    }

    #[test]
    fn orthonormal_basis_truncates_excess_rank() {
        let mut rng = linalg::seeded_rng(44);
        let x = CMatrix::from_fn(6, 2, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let (basis, deficient) = orthonormal_basis(&x, 2, 0).unwrap();
        assert!(deficient);
        assert_eq!(basis.ncols(), 2);
        let gram = basis.transpose() * &basis;
        assert!((gram - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn eig_change_examples() {
        let pair = vec![Complex64::new(-1.0, 2.0), Complex64::new(-1.0, -2.0)];
        let swapped = vec![pair[1], pair[0]];
        assert_eq!(eig_change(&pair, &swapped), 0.0);

        let prev = vec![Complex64::new(-1.0, 0.0)];
        let curr = vec![Complex64::new(-1.1, 0.0)];
        assert_abs_diff_eq!(eig_change(&prev, &curr), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn eig_change_ignores_permutations() {
        let mut rng = linalg::seeded_rng(3);
        let vals: Vec<Complex64> = (0..5)
            .map(|_| Complex64::new(rng.random_range(-2.0..-0.1), rng.random_range(-1.0..1.0)))
            .collect();
        let permuted = vec![vals[3], vals[0], vals[4], vals[2], vals[1]];
        assert_eq!(eig_change(&vals, &permuted), 0.0);
    }

    #[test]
    fn aggregated_sums_match_tuple_enumeration() {
        // Generic complex data, including a generic chain matrix, so any
        // index-orientation mistake in the aggregation would show.
        let mut rng = linalg::seeded_rng(62);
        let sys = seeded(4, 62, 0.4);
        let a = linalg::to_complex(sys.a());
        let n_mat = linalg::to_complex(sys.n());
        let b = sys.b().map(|x| Complex64::new(x, 0.0));
        let c = sys.c().map(|x| Complex64::new(x, 0.0));
        let r = 2usize;
        let mirrors = CVector::from_fn(r, |i, _| {
            Complex64::new(rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0) * i as f64)
        });
        let cplx = |rng: &mut rand_chacha::ChaCha8Rng| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        };
        let in_w = CVector::from_fn(r, |_, _| cplx(&mut rng));
        let out_w = CVector::from_fn(r, |_, _| cplx(&mut rng));
        let chain = CMatrix::from_fn(r, r, |_, _| cplx(&mut rng));
        let terms = 3;

        let (value, derivative) =
            weighted_chain_sums(&a, &n_mat, &b, &c, &mirrors, &in_w, &out_w, &chain, terms)
                .unwrap();

        let lus: Vec<_> = (0..r)
            .map(|m| linalg::resolvent_lu(&a, mirrors[m]))
            .collect();
        let mut value_ref = Complex64::new(0.0, 0.0);
        let mut deriv_ref = Complex64::new(0.0, 0.0);
        for k in 1..=terms {
            let mut tuple = vec![0usize; k];
            'tuples: loop {
                let mut phi = out_w[tuple[k - 1]] * in_w[tuple[0]];
                for j in 1..k {
                    phi *= chain[(tuple[j], tuple[j - 1])];
                }
                let mut x = b.clone();
                for (i, &l) in tuple.iter().enumerate() {
                    if i > 0 {
                        x = &n_mat * x;
                    }
                    x = lus[l].solve(&x).unwrap();
                }
                value_ref += phi * linalg::udot(&c, &x);
                for slot in 0..k {
                    let mut x = b.clone();
                    for (i, &l) in tuple.iter().enumerate() {
                        if i > 0 {
                            x = &n_mat * x;
                        }
                        x = lus[l].solve(&x).unwrap();
                        if i == slot {
                            x = lus[l].solve(&x).unwrap();
                        }
                    }
                    deriv_ref -= phi * linalg::udot(&c, &x);
                }
                let mut pos = 0;
                loop {
                    tuple[pos] += 1;
                    if tuple[pos] < r {
                        break;
                    }
                    tuple[pos] = 0;
                    pos += 1;
                    if pos == k {
                        break 'tuples;
                    }
                }
            }
        }
        assert!((value - value_ref).norm() <= 1e-12 * value_ref.norm().max(1.0));
        assert!((derivative - deriv_ref).norm() <= 1e-12 * deriv_ref.norm().max(1.0));
    }

    #[test]
    fn birka_with_zero_coupling_performs_rational_interpolation() {
        let base = seeded(6, 2, 0.0);
        let sys = BilinearSystem::new(
            base.a().clone(),
            DMatrix::zeros(6, 6),
            base.b().clone(),
            base.c().clone(),
        )
        .unwrap();
        let mut cfg = direct_config(2, 5);
        cfg.tol = 1e-10;
        cfg.max_outer_iterations = 200;
        let (red, trace) = birka(&sys, &cfg).unwrap();
        assert!(trace.converged, "final change {}", trace.final_change());
        let (value, derivative) = verify_truncated_interpolation(&sys, &red, 1).unwrap();
        assert!(value <= 1e-6, "value residual {value:.3e}");
        assert!(derivative <= 1e-6, "derivative residual {derivative:.3e}");
    }

    #[test]
    fn full_order_reduction_reproduces_the_transfer_function() {
        let sys = seeded(4, 9, 0.35);
        let mut cfg = direct_config(4, 1);
        cfg.max_outer_iterations = 20;
        let (red, trace) = birka(&sys, &cfg).unwrap();
        assert!(trace.converged);
        let red_sys = red.to_system().unwrap();
        let mut rng = linalg::seeded_rng(77);
        for _ in 0..10 {
            let s1 = Complex64::new(rng.random_range(0.1..2.0), rng.random_range(-2.0..2.0));
            let s2 = Complex64::new(rng.random_range(0.1..2.0), rng.random_range(-2.0..2.0));
            let h1 = sys.transfer(&[s1]).unwrap();
            let h1_red = red_sys.transfer(&[s1]).unwrap();
            assert!((h1 - h1_red).norm() <= 1e-8 * h1.norm().max(1.0));
            let h2 = sys.transfer(&[s1, s2]).unwrap();
            let h2_red = red_sys.transfer(&[s1, s2]).unwrap();
            assert!((h2 - h2_red).norm() <= 1e-8 * h2.norm().max(1.0));
        }
    }

    #[test]
    fn birka_converges_for_most_seeds() {
        let mut hits = 0;
        for seed in 0..10 {
            let sys = seeded(6, 1000 + seed, 0.3);
            let mut cfg = direct_config(2, seed);
            cfg.tol = 1e-8;
            cfg.max_outer_iterations = 100;
            let (_, trace) = birka(&sys, &cfg).unwrap();
            if trace.converged {
                hits += 1;
            }
        }
        assert!(hits >= 8, "only {hits}/10 seeds converged");
    }

    #[test]
    fn truncated_iteration_equals_coupled_one_without_coupling() {
        let base = seeded(5, 12, 0.0);
        let sys = BilinearSystem::new(
            base.a().clone(),
            DMatrix::zeros(5, 5),
            base.b().clone(),
            base.c().clone(),
        )
        .unwrap();
        let mut cfg = direct_config(2, 3);
        cfg.tol = 1e-10;
        cfg.terms = 3;
        let (red_coupled, tr_coupled) = birka(&sys, &cfg).unwrap();
        let (red_truncated, tr_truncated) = tbirka(&sys, &cfg).unwrap();
        assert!(tr_coupled.converged && tr_truncated.converged);
        let e1 = linalg::eigenvalues_sorted(red_coupled.a());
        let e2 = linalg::eigenvalues_sorted(red_truncated.a());
        for (a, b) in e1.iter().zip(&e2) {
            assert!((a - b).norm() <= 1e-10);
        }
    }

    #[test]
    fn deep_truncation_approaches_the_coupled_fixed_point() {
        let sys = seeded(6, 1001, 0.15);
        let mut cfg = direct_config(2, 0);
        cfg.tol = 1e-9;
        cfg.max_outer_iterations = 500;
        let (red_coupled, tr_coupled) = birka(&sys, &cfg).unwrap();
        cfg.terms = 8;
        let (red_truncated, tr_truncated) = tbirka(&sys, &cfg).unwrap();
        assert!(tr_coupled.converged && tr_truncated.converged);
        let e1 = linalg::eigenvalues_sorted(red_coupled.a());
        let e2 = linalg::eigenvalues_sorted(red_truncated.a());
        for (a, b) in e1.iter().zip(&e2) {
            assert!((a - b).norm() <= 1e-8, "coupled {a}, truncated {b}");
        }
    }

    #[test]
    fn traces_are_bit_identical_for_a_fixed_seed() {
        let sys = seeded(6, 21, 0.3);
        let mut cfg = direct_config(2, 9);
        cfg.max_outer_iterations = 40;
        cfg.terms = 2;
        let (_, first) = tbirka(&sys, &cfg).unwrap();
        let (_, second) = tbirka(&sys, &cfg).unwrap();
        assert_eq!(first.outer_iterations(), second.outer_iterations());
        for (x, y) in first.iterations.iter().zip(&second.iterations) {
            assert_eq!(
                x.eigenvalue_change.to_bits(),
                y.eigenvalue_change.to_bits()
            );
            for (ex, ey) in x.eigenvalues.iter().zip(&y.eigenvalues) {
                assert_eq!(ex.re.to_bits(), ey.re.to_bits());
                assert_eq!(ex.im.to_bits(), ey.im.to_bits());
            }
        }
    }

    #[test]
    fn verifier_is_tautological_on_the_identity_projection() {
        let sys = seeded(4, 14, 0.3);
        let red = ReducedSystem::new(
            sys.a().clone(),
            sys.n().clone(),
            sys.b().clone(),
            sys.c().clone(),
        )
        .unwrap();
        let (value, derivative) = verify_truncated_interpolation(&sys, &red, 2).unwrap();
        assert!(value <= 1e-10, "value residual {value:.3e}");
        assert!(derivative <= 1e-10, "derivative residual {derivative:.3e}");
    }

    #[test]
    fn verifier_flags_an_unconverged_model() {
        let sys = seeded(6, 25, 0.35);
        let mut rng = linalg::seeded_rng(70);
        let a = DMatrix::from_row_slice(2, 2, &[-0.7, 0.4, -0.4, -1.3]);
        let n = linalg::uniform_matrix(2, 2, &mut rng) * 0.2;
        let red = ReducedSystem::new(
            a,
            n,
            linalg::unit_vector(2, &mut rng),
            linalg::unit_vector(2, &mut rng),
        )
        .unwrap();
        let (value, _) = verify_truncated_interpolation(&sys, &red, 2).unwrap();
        assert!(value > 1e-3, "value residual {value:.3e} suspiciously small");
    }

    #[test]
    fn converged_truncated_iteration_satisfies_the_value_condition() {
        // Weak coupling keeps the discarded series tail below the gate; the
        // residual at the fixed point is exactly that tail.
        let sys = seeded(6, 17, 0.02);
        let mut cfg = direct_config(2, 6);
        cfg.terms = 2;
        cfg.tol = 1e-12;
        cfg.max_outer_iterations = 400;
        let (red, trace) = tbirka(&sys, &cfg).unwrap();
        assert!(trace.converged, "final change {}", trace.final_change());
        let (value, derivative) = verify_truncated_interpolation(&sys, &red, 2).unwrap();
        assert!(value <= 1e-6, "value residual {value:.3e}");
        assert!(derivative <= 1e-6, "derivative residual {derivative:.3e}");
    }

    #[test]
    fn fixed_points_single_out_the_transposed_coupling_chain() {
        // Deterministic discrimination between the four candidate residue
        // chains: only the frozen one is annihilated at a converged fixed
        // point, the rest stay orders of magnitude above it.
        let sys = seeded(8, 29, 0.2);
        let mut cfg = direct_config(2, 2);
        cfg.terms = 3;
        cfg.tol = 1e-13;
        cfg.max_outer_iterations = 3000;
        let (red, trace) = tbirka(&sys, &cfg).unwrap();
        assert!(trace.converged);
        let (value, deriv) =
            interpolation_residuals(&sys, &red, 3, ResidueChain::CouplingTransposed).unwrap();
        assert!(value <= 1e-8, "value residual {value:.3e}");
        assert!(deriv <= 1e-7, "derivative residual {deriv:.3e}");
        for chain in [
            ResidueChain::Coupling,
            ResidueChain::Similarity,
            ResidueChain::SimilarityTransposed,
        ] {
            let (value, deriv) = interpolation_residuals(&sys, &red, 3, chain).unwrap();
            assert!(value >= 1e-7, "{chain:?} value residual {value:.3e}");
            assert!(deriv >= 1e-5, "{chain:?} derivative residual {deriv:.3e}");
        }
    }
}
