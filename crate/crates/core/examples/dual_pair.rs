//! Mollified dual-pair diagnostic on the interpolated discrete solution.
use nonlocal_korn::geometry::BallDomain;
use nonlocal_korn::nonlocal::{dual_pair_diagnostic, solve, Discretization, GridSpec, NonlocalProblem, SolveOptions};
use nonlocal_korn::quadrature::PlanSettings;

fn main() -> nonlocal_korn::Result<()> {
    let prob = NonlocalProblem::reference(0.4, 2.0)?;
    let disc = Discretization::new(&prob, GridSpec::new(17))?;
    let (u, _) = solve(&disc, &SolveOptions::default())?;
    let ball = BallDomain::new(vec![0.0, 0.0], 0.5)?;
    let report = dual_pair_diagnostic(&disc.interpolant(&u), &ball, &prob.params, 0.1, &[0.0, 0.05, 0.1, 0.2], PlanSettings::default(), 4)?;
    for r in &report.rows {
        println!(
            "delta={:<5}: {:.5e} +- {:.1e}, doubled-budget change {:.2}%, stable {}",
            r.delta,
            r.value.value,
            r.value.std_error,
            100.0 * r.relative_change,
            r.stable
        );
    }
    println!("direct seminorm {:.5e}; delta = 0 differs by {:.2?} sigma", report.direct_w.value, report.delta0_sigmas);
    Ok(())
}
