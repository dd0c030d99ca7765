//! Solves the discretized nonlocal p-Laplace system on the unit disc and
//! reports convergence, the gradient check and weak residuals.
use nonlocal_korn::fields::catalog_field;
use nonlocal_korn::nonlocal::{solve, Discretization, GridSpec, NonlocalProblem, SolveOptions};

fn main() -> nonlocal_korn::Result<()> {
    for (s, p) in [(0.4, 2.0), (0.6, 3.0)] {
        let prob = NonlocalProblem::reference(s, p)?;
        let disc = Discretization::new(&prob, GridSpec::new(17))?;
        let (u, report) = solve(&disc, &SolveOptions::default())?;
        // the relative check needs a point where the gradient is not small
        let fd = disc.gradient_fd_check(&disc.sample(&*catalog_field("random", 2, 1)?), 4, 0)?;
        let worst = report.weak_residuals.iter().map(|r| r.residual.relative).fold(0.0, f64::max);
        println!(
            "s={s} p={p}: {:?} after {} iterations, energy {:.6e}, gradient FD error {fd:.1e}, worst weak residual {worst:.1e}",
            report.status, report.iterations, report.final_energy
        );
        if p == 2.0 {
            let direct = disc.dense_linear_solve()?;
            println!("  distance to the direct linear solve: {:.1e}", u.sup_distance(&direct));
        }
    }
    Ok(())
}
