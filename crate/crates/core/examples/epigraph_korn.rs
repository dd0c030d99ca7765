//! Korn ratio over a Lipschitz epigraph and the bound for the flattened field.
use nonlocal_korn::geometry::{EpigraphDomain, Profile};
use nonlocal_korn::korn::{epigraph_korn_check, epigraph_test_field, straightening_bound_check};
use nonlocal_korn::quadrature::PlanSettings;
use nonlocal_korn::seminorms::SeminormParams;

fn main() -> nonlocal_korn::Result<()> {
    let params = SeminormParams::new(0.4, 2.0)?;
    for m in [0.0, 0.2, 0.4] {
        let dom = EpigraphDomain::new(2, Profile::with_lipschitz("sine", m)?)?;
        let u = epigraph_test_field(&dom, "random", 2)?;
        let korn = epigraph_korn_check(&*u, &dom, &params, PlanSettings::default(), 1)?;
        let flat = straightening_bound_check(u, &dom, &params, PlanSettings::default(), 1)?;
        println!("M={m}: W/X = {:.4}, flattened bound ratio {:.4}", korn.ratio, flat.ratio);
    }
    let steep = EpigraphDomain::new(2, Profile::with_lipschitz("sine", 0.65)?)?;
    let u = epigraph_test_field(&EpigraphDomain::half_space(2), "random", 2)?;
    if let Err(e) = epigraph_korn_check(&*u, &steep, &params, PlanSettings::default(), 1) {
        println!("M=0.65: {e}");
    }
    Ok(())
}
