//! Solves for the reflection constants of the extension operator and shows
//! that `lambda = mu` is rejected.
use nonlocal_korn::extension::ReflectionConstants;

fn main() -> nonlocal_korn::Result<()> {
    for (lambda, mu) in [(1.0, 2.0), (0.5, 3.0), (2.0, 1.0)] {
        let c = ReflectionConstants::solve(lambda, mu)?;
        println!("lambda={lambda} mu={mu}: k={:+.6} l={:+.6} m={:+.6} n={:+.6} residual={:.1e}", c.k, c.l, c.m, c.n, c.max_residual());
    }
    match ReflectionConstants::solve(1.5, 1.5) {
        Err(e) => println!("lambda = mu: {e}"),
        Ok(c) => println!("unexpected solution {c:?}"),
    }
    Ok(())
}
