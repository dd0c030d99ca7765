//! Caccioppoli-type inequality for the discrete solution under mesh refinement.
use nonlocal_korn::fields::CutoffFunction;
use nonlocal_korn::geometry::BallDomain;
use nonlocal_korn::nonlocal::{caccioppoli_check, solve, Discretization, GridSpec, NonlocalProblem, SolveOptions};

fn main() -> nonlocal_korn::Result<()> {
    let ball = BallDomain::new(vec![0.0, 0.0], 0.5)?;
    let psi = CutoffFunction::with_default_plateau(ball.clone());
    for (s, p) in [(0.4, 2.0), (0.3, 3.0)] {
        let prob = NonlocalProblem::reference(s, p)?;
        for n in [17, 33] {
            let disc = Discretization::new(&prob, GridSpec::new(n))?;
            let (u, _) = solve(&disc, &SolveOptions::default())?;
            let r = caccioppoli_check(&disc, &u, &ball, &psi)?;
            println!(
                "p={p} n={n}: lhs {:.4e}, mass {:.4e}, tail {:.4e}, force {:.4e}, ratio {:.4}",
                r.lhs, r.mass, r.tail, r.force, r.ratio
            );
        }
    }
    Ok(())
}
