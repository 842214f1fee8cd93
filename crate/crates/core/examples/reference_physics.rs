//! Closed-form diffusion and advection on a small graph. Both conserve the
//! total concentration; diffusion flattens it, advection pushes it along
//! the edge velocities.

use aqc::numcore::Tensor;
use aqc::physics::{simulate_advection_reference, simulate_diffusion_reference};

fn main() -> aqc::Result<()> {
    // a path a - b - c - d
    let w = Tensor::matrix(4, 4, vec![
        0.0, 1.0, 0.0, 0.0,
        1.0, 0.0, 1.0, 0.0,
        0.0, 1.0, 0.0, 1.0,
        0.0, 0.0, 1.0, 0.0,
    ])?;
    // flow from a towards d
    let v = Tensor::matrix(4, 4, vec![
        0.0, 0.5, 0.0, 0.0,
        0.0, 0.0, 0.5, 0.0,
        0.0, 0.0, 0.0, 0.5,
        0.0, 0.0, 0.0, 0.0,
    ])?;
    let x0 = [100.0, 0.0, 0.0, 0.0];
    println!("{:>5} | {:^35} | {:^35}", "t", "diffusion (k = 0.3)", "advection");
    for t in [0.0, 1.0, 2.0, 5.0, 10.0] {
        let d = simulate_diffusion_reference(&w, &x0, 0.3, t)?;
        let a = simulate_advection_reference(&v, &x0, t)?;
        let fmt = |x: &[f64]| x.iter().map(|v| format!("{v:7.2}")).collect::<String>();
        println!(
            "{t:5.1} | {} sum {:6.2} | {} sum {:6.2}",
            fmt(&d),
            d.iter().sum::<f64>(),
            fmt(&a),
            a.iter().sum::<f64>()
        );
    }
    Ok(())
}
