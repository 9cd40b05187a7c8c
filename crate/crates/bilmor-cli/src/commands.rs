//! The operations behind the subcommands.
//!
//! Every command follows the same shape: pull settings from the
//! [`RunConfig`], run the library, write CSV reports into the output
//! directory, and print a summary to stdout whose last line is a
//! `status:` field. A run that completes exits 0 even when it has
//! something to flag (a reduction that hit its iteration cap says
//! `status: did-not-converge`); only validation and numerical failures
//! terminate nonzero.
//!
//! CSV files contain no timestamps, floats go through the shared
//! round-trip format, and rows keep a fixed order, so identical
//! configurations produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use bilmor::mor::{self, IterationRecord, ReducedSystem};
use bilmor::norms::{self, FrequencyGrid};
use bilmor::stability;
use bilmor::system::{BilinearSystem, TruncatedSeries};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Method, RunConfig};
use crate::io::{self, SystemPaths};
use crate::RunError;

/// The subcommand to execute; parsing lives in the binary, behavior here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Reduce,
    H2Norm,
    VerifyInterp,
    Sweep,
    FirstCondition,
    HypoCheck,
    GenDemo,
}

/// Runs one command against a configuration.
pub fn run(command: Command, cfg: &RunConfig) -> Result<(), RunError> {
    fs::create_dir_all(&cfg.output).map_err(|e| {
        RunError::Validation(format!("cannot create output directory {}: {e}", cfg.output.display()))
    })?;
    match command {
        Command::Reduce => reduce(cfg),
        Command::H2Norm => h2norm(cfg),
        Command::VerifyInterp => verify_interp(cfg),
        Command::Sweep => sweep(cfg),
        Command::FirstCondition => first_condition(cfg),
        Command::HypoCheck => hypo_check(cfg),
        Command::GenDemo => gen_demo(cfg),
    }
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output.join(name)
}

/// Loads the full system and reports its stability up front, before any
/// operation that may refuse an unstable model.
fn load_full(cfg: &RunConfig) -> Result<BilinearSystem, RunError> {
    let sys = load_full(cfg)?;
    println!("system stable: {}", sys.is_stable());
    Ok(sys)
}

/// Floats in summaries: short, CSV keeps the full digits.
fn short(x: f64) -> String {
    format!("{x:.6e}")
}

fn print_status(status: &str) {
    println!("status: {status}");
}

/// A `quantity,value` report, the format of the single-result commands.
fn kv_csv(rows: &[(String, String)]) -> String {
    let mut out = String::from("quantity,value\n");
    for (key, value) in rows {
        let _ = writeln!(out, "{key},{value}");
    }
    out
}

fn kv(key: &str, value: String) -> (String, String) {
    (key.to_string(), value)
}

/// Seeded dense direction with unit spectral norm, the perturbation shape
/// used by `sweep` and `hypo-check`.
pub fn unit_direction(dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let norm = spectral_norm(&f);
    if norm > 0.0 {
        f /= norm;
    }
    f
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Deterministic demo system: stable, with resolvent gain times coupling
/// norm pinned to 0.4, inside every contraction condition the analysis
/// commands check with margin.
pub fn demo_system(dim: usize, seed: u64) -> Result<BilinearSystem, RunError> {
    if dim < 2 {
        return Err(RunError::Validation(format!(
            "demo systems need dim >= 2, got {dim}"
        )));
    }
    let base = BilinearSystem::seeded(dim, seed, 0.4);
    let shifted = stability::shift_to_contraction(&base, 0.05)?;
    let gain = stability::resolvent_hinf_estimate(&shifted);
    let coupling = spectral_norm(shifted.n());
    if !(gain.is_finite() && gain > 0.0 && coupling > 0.0) {
        return Err(RunError::Numerical(
            "demo construction produced a degenerate resolvent or coupling".into(),
        ));
    }
    let n_scaled = shifted.n() * (0.4 / (gain * coupling));
    Ok(BilinearSystem::new(
        shifted.a().clone(),
        n_scaled,
        shifted.b().clone(),
        shifted.c().clone(),
    )?)
}

fn reduce(cfg: &RunConfig) -> Result<(), RunError> {
    let sys = load_full(cfg)?;
    let mor_cfg = cfg.mor_config()?;
    let (red, trace) = match cfg.method {
        Method::Birka => mor::birka(&sys, &mor_cfg)?,
        Method::Tbirka => mor::tbirka(&sys, &mor_cfg)?,
    };

    let out = SystemPaths {
        a: out_path(cfg, "reduced_a.mtx"),
        n: out_path(cfg, "reduced_n.mtx"),
        b: out_path(cfg, "reduced_b.txt"),
        c: out_path(cfg, "reduced_c.txt"),
    };
    out.save(red.a(), red.n(), red.b(), red.c())?;
    io::write_atomic(&out_path(cfg, "trace.csv"), &trace_csv(&trace.iterations))?;

    let stable = trace.iterations.last().is_some_and(|rec| rec.reduced_stable);
    println!(
        "reduce: {} states -> order {}, terms {}",
        sys.dim(),
        red.order(),
        mor_cfg.terms
    );
    println!("outer iterations: {}", trace.outer_iterations());
    println!("final eigenvalue change: {}", short(trace.final_change()));
    println!("reduced model stable: {stable}");
    println!("output: {}", cfg.output.display());
    print_status(if trace.converged {
        "converged"
    } else {
        "did-not-converge"
    });
    Ok(())
}

fn trace_csv(iterations: &[IterationRecord]) -> String {
    let mut out = String::from(
        "iteration,eigenvalue_change,reduced_stable,primal_rank_deficient,dual_rank_deficient,\
         primal_iterations,dual_iterations,primal_residual,dual_residual,\
         metric_b,metric_c,metric_b_summed,metric_c_summed\n",
    );
    for (idx, rec) in iterations.iter().enumerate() {
        let primal_iters: usize = rec.primal_reports.iter().map(|r| r.iterations).sum();
        let dual_iters: usize = rec.dual_reports.iter().map(|r| r.iterations).sum();
        let primal_res = rec
            .primal_reports
            .iter()
            .map(|r| r.final_relative_residual)
            .fold(0.0f64, f64::max);
        let dual_res = rec
            .dual_reports
            .iter()
            .map(|r| r.final_relative_residual)
            .fold(0.0f64, f64::max);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            idx + 1,
            io::format_float(rec.eigenvalue_change),
            rec.reduced_stable,
            rec.primal_rank_deficient,
            rec.dual_rank_deficient,
            primal_iters,
            dual_iters,
            io::format_float(primal_res),
            io::format_float(dual_res),
            io::format_float(rec.orthogonality.metric_b),
            io::format_float(rec.orthogonality.metric_c),
            io::format_float(rec.orthogonality.metric_b_summed),
            io::format_float(rec.orthogonality.metric_c_summed),
        );
    }
    out
}

fn h2norm(cfg: &RunConfig) -> Result<(), RunError> {
    let sys = load_full(cfg)?;
    let dim = sys.dim();
    let ts = TruncatedSeries::new(sys, cfg.terms)?;
    let norm = norms::h2_truncated_gramian(&ts)?;

    let mut rows = vec![
        kv("terms", cfg.terms.to_string()),
        kv("h2_total", io::format_float(norm.total.value)),
        kv("estimated_error", io::format_float(norm.total.estimated_error)),
    ];
    for (k, value) in norm.per_term.iter().enumerate() {
        rows.push((format!("h2_term_{}", k + 1), io::format_float(*value)));
    }
    io::write_atomic(&out_path(cfg, "h2norm.csv"), &kv_csv(&rows))?;

    println!("h2norm: {dim} states, {} series terms", cfg.terms);
    println!("h2 total: {}", short(norm.total.value));
    for (k, value) in norm.per_term.iter().enumerate() {
        println!("h2 term {}: {}", k + 1, short(*value));
    }
    println!("output: {}", cfg.output.display());
    print_status("ok");
    Ok(())
}

fn verify_interp(cfg: &RunConfig) -> Result<(), RunError> {
    let sys = load_full(cfg)?;
    let red_sys = cfg.reduced_paths()?.load()?;
    let red = ReducedSystem::new(
        red_sys.a().clone(),
        red_sys.n().clone(),
        red_sys.b().clone(),
        red_sys.c().clone(),
    )?;
    let (value, derivative) = mor::verify_truncated_interpolation(&sys, &red, cfg.terms)?;

    let rows = [
        kv("terms", cfg.terms.to_string()),
        kv("value_residual", io::format_float(value)),
        kv("derivative_residual", io::format_float(derivative)),
    ];
    io::write_atomic(&out_path(cfg, "verify.csv"), &kv_csv(&rows))?;

    println!(
        "verify-interp: order {} against {} states, {} terms",
        red.order(),
        sys.dim(),
        cfg.terms
    );
    println!("value residual: {}", short(value));
    println!("derivative residual: {}", short(derivative));
    println!("output: {}", cfg.output.display());
    print_status("ok");
    Ok(())
}

fn sweep(cfg: &RunConfig) -> Result<(), RunError> {
    let sys = load_full(cfg)?;
    let scales = cfg
        .scales
        .as_ref()
        .ok_or_else(|| RunError::Validation("missing config key \"scales\"".into()))?;
    let order = cfg.terms;
    let direction = unit_direction(sys.dim(), cfg.direction_seed);
    let quad_grid = FrequencyGrid::new(cfg.quad_points)?;
    let hinf_grid = FrequencyGrid::new(cfg.hinf_points)?;
    let outcome = stability::scaling_sweep(&sys, order, &direction, scales, &quad_grid, &hinf_grid)?;

    io::write_atomic(&out_path(cfg, "sweep.csv"), &sweep_csv(&outcome, order))?;
    io::write_atomic(&out_path(cfg, "sweep_dropped.csv"), &dropped_csv(&outcome.dropped))?;

    let held: usize = outcome
        .records
        .iter()
        .flat_map(|rec| &rec.error_bounds)
        .filter(|bound| bound.holds)
        .count();
    let total_bounds: usize = outcome.records.iter().map(|rec| rec.error_bounds.len()).sum();

    println!(
        "sweep: {} scales kept, {} dropped, series order {order}",
        outcome.records.len(),
        outcome.dropped.len()
    );
    println!("total error slope: {}", short(outcome.total_slope));
    println!("per-subsystem slopes: {}", join_short(&outcome.per_subsystem_slopes));
    if !outcome.gain_slopes.is_empty() {
        println!("gain norm slopes: {}", join_short(&outcome.gain_slopes));
    }
    println!("bounds held: {held}/{total_bounds}");
    hypothesis_summary(&sys, &direction, &outcome);
    println!("output: {}", cfg.output.display());
    print_status("ok");
    Ok(())
}

fn join_short(values: &[f64]) -> String {
    values.iter().map(|v| short(*v)).collect::<Vec<_>>().join(", ")
}

/// Prints the contraction hypotheses at the largest surviving scale; the
/// sweep stays useful without them, so failures only annotate the summary.
fn hypothesis_summary(sys: &BilinearSystem, direction: &DMatrix<f64>, outcome: &stability::SweepOutcome) {
    if sys.dim() > stability::MAX_HYPOTHESIS_STATES {
        println!(
            "hypothesis check: skipped, {} states exceed the dense limit {}",
            sys.dim(),
            stability::MAX_HYPOTHESIS_STATES
        );
        return;
    }
    let Some(record) = outcome.records.last() else {
        return;
    };
    let f = direction * record.scale;
    match stability::birka_hypothesis_check(sys, &f) {
        Ok(rep) => println!(
            "hypothesis check at scale {}: f_norm_lt_1={} resolvent_hinf_lt_1={} q_hat_invertible={}",
            short(record.scale),
            rep.f_norm_lt_1,
            rep.resolvent_hinf_lt_1,
            rep.q_hat_invertible
        ),
        Err(err) => println!("hypothesis check at scale {}: failed ({err})", short(record.scale)),
    }
}

fn sweep_csv(outcome: &stability::SweepOutcome, order: usize) -> String {
    let mut header = String::from("scale,f_norm,total_h2_error");
    for k in 1..=order {
        let _ = write!(header, ",h2_error_k{k}");
    }
    for m in 2..=order {
        let _ = write!(header, ",gain_norm_m{m}");
    }
    for m in 1..=order.min(3) {
        let _ = write!(header, ",bound_lhs_m{m},bound_rhs_m{m},bound_holds_m{m}");
    }
    header.push('\n');

    let mut out = header;
    for rec in &outcome.records {
        let mut row = format!(
            "{},{},{}",
            io::format_float(rec.scale),
            io::format_float(rec.f_norm),
            io::format_float(rec.total_h2_error)
        );
        for err in &rec.per_subsystem_h2_error {
            let _ = write!(row, ",{}", io::format_float(*err));
        }
        for gain in &rec.gain_norm_estimates {
            let _ = write!(row, ",{}", io::format_float(*gain));
        }
        for bound in &rec.error_bounds {
            let _ = write!(
                row,
                ",{},{},{}",
                io::format_float(bound.lhs),
                io::format_float(bound.rhs),
                bound.holds
            );
        }
        row.push('\n');
        out.push_str(&row);
    }
    out
}

fn dropped_csv(dropped: &[(f64, String)]) -> String {
    let mut out = String::from("scale,reason\n");
    for (scale, reason) in dropped {
        // Reasons are prose; quote them so commas cannot shift columns.
        let _ = writeln!(
            out,
            "{},\"{}\"",
            io::format_float(*scale),
            reason.replace('"', "\"\"")
        );
    }
    out
}

fn first_condition(cfg: &RunConfig) -> Result<(), RunError> {
    let sys = load_full(cfg)?;
    let mor_cfg = cfg.mor_config()?;
    let tolerances = cfg
        .tolerances
        .as_ref()
        .ok_or_else(|| RunError::Validation("missing config key \"tolerances\"".into()))?;
    let report = stability::first_condition_experiment(&sys, &mor_cfg, tolerances)?;

    let mut out = String::from(
        "tolerance,converged,outer_iterations,eigenvalue_distance,h2_distance,\
         metric_b,metric_c,metric_b_summed,metric_c_summed\n",
    );
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            io::format_float(row.tolerance),
            row.converged,
            row.outer_iterations,
            io::format_float(row.eigenvalue_distance),
            io::format_float(row.h2_distance),
            io::format_float(row.orthogonality.metric_b),
            io::format_float(row.orthogonality.metric_c),
            io::format_float(row.orthogonality.metric_b_summed),
            io::format_float(row.orthogonality.metric_c_summed),
        );
    }
    io::write_atomic(&out_path(cfg, "first_condition.csv"), &out)?;

    println!(
        "first-condition: reference iteration {} in {} sweeps",
        if report.reference_converged { "converged" } else { "did not converge" },
        report.reference_iterations
    );
    for row in &report.rows {
        println!(
            "tolerance {}: eigenvalue distance {}, h2 distance {}",
            short(row.tolerance),
            short(row.eigenvalue_distance),
            short(row.h2_distance)
        );
    }
    println!("output: {}", cfg.output.display());
    print_status(if report.reference_converged {
        "ok"
    } else {
        "reference-did-not-converge"
    });
    Ok(())
}

fn hypo_check(cfg: &RunConfig) -> Result<(), RunError> {
    let sys = load_full(cfg)?;
    let f = unit_direction(sys.dim(), cfg.direction_seed) * cfg.f_scale;
    let rep = stability::birka_hypothesis_check(&sys, &f)?;
    let all_hold = rep.f_norm_lt_1 && rep.resolvent_hinf_lt_1 && rep.q_hat_invertible;

    let rows = [
        kv("f_norm", io::format_float(rep.f_norm)),
        kv("f_norm_lt_1", rep.f_norm_lt_1.to_string()),
        kv("resolvent_hinf", io::format_float(rep.resolvent_hinf)),
        kv("resolvent_hinf_lt_1", rep.resolvent_hinf_lt_1.to_string()),
        kv("q_hat_invertible", rep.q_hat_invertible.to_string()),
        kv("q_hat_inv_norm", io::format_float(rep.q_hat_inv_norm)),
        kv("f_hat_hat_norm", io::format_float(rep.f_hat_hat_norm)),
    ];
    io::write_atomic(&out_path(cfg, "hypo.csv"), &kv_csv(&rows))?;

    println!("hypo-check: {} states, perturbation norm {}", sys.dim(), short(rep.f_norm));
    println!("f_norm < 1: {}", rep.f_norm_lt_1);
    println!(
        "resolvent gain {} < 1: {}",
        short(rep.resolvent_hinf),
        rep.resolvent_hinf_lt_1
    );
    println!("perturbation operator invertible: {}", rep.q_hat_invertible);
    println!("output: {}", cfg.output.display());
    print_status(if all_hold { "hypotheses-hold" } else { "hypotheses-fail" });
    Ok(())
}

fn gen_demo(cfg: &RunConfig) -> Result<(), RunError> {
    let dim = cfg
        .dim
        .ok_or_else(|| RunError::Validation("missing config key \"dim\"".into()))?;
    let r_hint = match cfg.order {
        Some(r) => r,
        None => 2.min(dim),
    };
    if r_hint == 0 || r_hint > dim {
        return Err(RunError::Validation(format!(
            "demo order {r_hint} outside 1..={dim}"
        )));
    }
    let sys = demo_system(dim, cfg.seed)?;

    let paths = SystemPaths {
        a: out_path(cfg, "a.mtx"),
        n: out_path(cfg, "n.mtx"),
        b: out_path(cfg, "b.txt"),
        c: out_path(cfg, "c.txt"),
    };
    paths.save(sys.a(), sys.n(), sys.b(), sys.c())?;

    let conf = format!(
        "# demo system: dim={dim}, seed={}\n\
         a = a.mtx\n\
         n = n.mtx\n\
         b = b.txt\n\
         c = c.txt\n\
         output = .\n\
         method = tbirka\n\
         order = {r_hint}\n\
         terms = 2\n\
         tol = 1e-8\n\
         backend = direct\n\
         seed = {}\n",
        cfg.seed, cfg.seed
    );
    io::write_atomic(&out_path(cfg, "demo.conf"), &conf)?;

    let gain = stability::resolvent_hinf_estimate(&sys);
    let coupling = spectral_norm(sys.n());
    println!("gen-demo: {dim} states, seed {}", cfg.seed);
    println!("resolvent gain: {}", short(gain));
    println!("coupling norm: {}", short(coupling));
    println!("contraction product: {}", short(gain * coupling));
    println!("output: {}", cfg.output.display());
    print_status("ok");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_systems_are_deterministic_and_contractive() {
        let one = demo_system(5, 3).unwrap();
        let two = demo_system(5, 3).unwrap();
        assert_eq!(one.a(), two.a());
        assert_eq!(one.n(), two.n());
        assert_eq!(one.b(), two.b());
        assert_eq!(one.c(), two.c());
        assert!(one.is_stable());

        let gain = stability::resolvent_hinf_estimate(&one);
        let product = gain * spectral_norm(one.n());
        assert!(product < 0.5, "contraction product {product} out of range");

        let other = demo_system(5, 4).unwrap();
        assert_ne!(one.a(), other.a(), "different seeds must give different systems");
    }

    #[test]
    fn demo_rejects_degenerate_dimensions() {
        let err = demo_system(1, 0).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn directions_have_unit_spectral_norm() {
        let f = unit_direction(6, 9);
        let norm = spectral_norm(&f);
        assert!((norm - 1.0).abs() < 1e-12, "norm {norm}");
        assert_eq!(f, unit_direction(6, 9));
    }

    #[test]
    fn dropped_rows_quote_their_reasons() {
        let csv = dropped_csv(&[(0.5, "went \"unstable\", dropped".into())]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("scale,reason"));
        let row = lines.next().unwrap();
        assert!(row.ends_with("\"went \"\"unstable\"\", dropped\""), "{row}");
    }
}
