//! Estimates the two fractional seminorms of a catalog field and compares
//! them with the dense two-dimensional quadrature.
use nonlocal_korn::fields::catalog_field;
use nonlocal_korn::geometry::BallDomain;
use nonlocal_korn::quadrature::PlanSettings;
use nonlocal_korn::seminorms::{dense_seminorms_p, joint_seminorms_p, seminorm_plan, SeminormParams};

fn main() -> nonlocal_korn::Result<()> {
    let ball = BallDomain::unit(2);
    let params = SeminormParams::new(0.5, 2.0)?;
    for name in ["skew-bump", "translation", "random"] {
        let u = catalog_field(name, 2, 3)?;
        let plan = seminorm_plan(&*u, &ball, &params, PlanSettings::default())?;
        let mc = joint_seminorms_p(&*u, &ball, &params, &plan, 1)?;
        let (x, w) = dense_seminorms_p(&*u, &ball, &params, 48)?;
        println!(
            "{name:>11}: X {:.5} +- {:.1e} (dense {:.5}), W {:.5} +- {:.1e} (dense {:.5}), X > W at {} of {} pairs",
            mc.x.value, mc.x.std_error, x.value, mc.w.value, mc.w.std_error, w.value, mc.dominance_violations, mc.pairs_compared
        );
    }
    Ok(())
}
