//! The reflection extension across a Lipschitz graph: identity on the domain,
//! matching one-sided limits, and the empirical bound constant.
use nonlocal_korn::extension::{boundary_limit_check, extend, extension_bound_check, standard_extension_field, ReflectionConstants};
use nonlocal_korn::fields::{catalog_field, VectorField};
use nonlocal_korn::geometry::{EpigraphDomain, Profile};
use nonlocal_korn::quadrature::PlanSettings;
use nonlocal_korn::seminorms::SeminormParams;

fn main() -> nonlocal_korn::Result<()> {
    let params = SeminormParams::new(0.4, 2.0)?;
    let constants = ReflectionConstants::default();
    for m in [0.0, 0.1, 0.3, 0.5] {
        let dom = EpigraphDomain::new(2, Profile::with_lipschitz("sine", m)?)?;
        let u = standard_extension_field(&dom)?;
        let ext = extend(u.clone(), &dom, constants)?;
        let x = [0.1, dom.height(&[0.1, 0.0]) + 1.4];
        let diff: f64 = u.eval(&x).iter().zip(ext.eval(&x)).map(|(a, b)| (a - b).abs()).sum();

        let limits =
            boundary_limit_check(&extend(catalog_field("random", 2, 0)?, &dom, constants)?, &[vec![-0.2], vec![0.4]], &[1e-2, 1e-4, 1e-6])?;
        let bound = extension_bound_check(u, &dom, constants, &params, PlanSettings::default(), 3)?;
        println!(
            "M={m}: |Eu - u| on D = {diff:.1e}, jump rate {:.3}, bound ratio {:.4} (doubled budget {:.4})",
            limits.rate, bound.ratio, bound.ratio_doubled
        );
    }
    Ok(())
}
