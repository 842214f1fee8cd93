//! Evaluates the learned diffusion–advection derivative on a latent state:
//! the gate between the two branches, and the trajectory from both solvers.

use aqc::geo_graph::LaplacianSource;
use aqc::layers::Initializer;
use aqc::numcore::{ParamStore, Tape, Tensor};
use aqc::ode::{ode_solve, Mode, SolverConfig, TimeGrid};
use aqc::physics::{flow_field_adjacency, scaled_laplacian_var, DeConfig, DeFunction, FlowNet};
use aqc::synthetic::{generate, SyntheticConfig};

fn main() -> aqc::Result<()> {
    let (ds, _) = generate(&SyntheticConfig { steps: 10, ..Default::default() })?;
    let graph = ds.graph()?;
    let n = graph.len();
    let d = 4;

    let mut store = ParamStore::new();
    let mut init = Initializer::uniform(3);
    let flow = FlowNet::register(&mut store, 8, &mut init)?;
    let de = DeFunction::register(&mut store, &DeConfig { latent_dim: d, ..Default::default() }, &mut init)?;
    println!("k = softplus(k_raw) = {:.4}", de.diffusion_coefficient(&store));

    let tape = Tape::no_grad();
    let wind = tape.constant(ds.series.wind.slice_outer(5));
    let wp = flow_field_adjacency(&wind, &flow.bind(&tape, &store))?;
    println!("W_p row 0: {:?}", wp.value().row(0).iter().map(|v| format!("{v:+.3}")).collect::<Vec<_>>());
    let m = scaled_laplacian_var(&wp, LaplacianSource::FlowField)?;
    let l = tape.constant(graph.distance_laplacian()?.matrix);
    let bound = de.bind(&tape, &store, l, Some(m))?;

    let z0 = tape.constant(Tensor::matrix(n, d, (0..n * d).map(|i| ((i as f64) * 0.7).sin()).collect())?);
    let alpha = bound.alpha(&z0)?.value();
    println!("gate alpha (station 0): {:?}", alpha.row(0).iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());

    let grid = TimeGrid::uniform(8)?;
    let train = ode_solve(&bound, z0.clone(), &grid, &SolverConfig::default(), Mode::Train, 2)?;
    let infer = ode_solve(&bound, z0, &grid, &SolverConfig::default(), Mode::Infer, 2)?;
    for (t, (a, b)) in train.iter().zip(&infer).enumerate() {
        println!(
            "t = {}: z[0,0] RK4 {:+.6}, dopri5 {:+.6}, max diff {:.2e}",
            t + 1,
            a.value().get(0, 0),
            b.value().get(0, 0),
            a.value().max_abs_diff(&b.value())
        );
    }
    Ok(())
}
