//! Fixed-step Euler/RK4 and adaptive Dormand–Prince on dz/dt = −z.

use aqc::ode::{dopri5_integrate, fixed_step_integrate, Method, SolverConfig, TimeGrid};

fn decay(_: f64, z: &Vec<f64>) -> aqc::Result<Vec<f64>> {
    Ok(z.iter().map(|v| -v).collect())
}

fn main() -> aqc::Result<()> {
    let grid = TimeGrid::new(vec![0.0, 1.0])?;
    let exact = (-1.0f64).exp();
    println!("{:>6} {:>12} {:>12}", "steps", "Euler err", "RK4 err");
    for n in [4, 8, 16, 32, 64] {
        let e = fixed_step_integrate(decay, vec![1.0], &grid, Method::Euler, n)?[0][0];
        let r = fixed_step_integrate(decay, vec![1.0], &grid, Method::Rk4, n)?[0][0];
        println!("{n:>6} {:>12.3e} {:>12.3e}", (e - exact).abs(), (r - exact).abs());
    }
    println!();
    for tol in [1e-3, 1e-5, 1e-7, 1e-9] {
        let (z, stats) = dopri5_integrate(decay, vec![1.0], &grid, &SolverConfig::with_tolerance(tol))?;
        println!(
            "dopri5 tol {tol:.0e}: error {:.3e}, {} accepted / {} rejected steps, {} evaluations",
            (z[0][0] - exact).abs(),
            stats.accepted,
            stats.rejected,
            stats.evaluations
        );
    }
    Ok(())
}
