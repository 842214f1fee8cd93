//! Builds the inverse-distance graph for a handful of Beijing stations and
//! prints its weights and the scaled Laplacian used by the Chebyshev filters.

use aqc::geo_graph::{distance_adjacency, haversine_km, Station};

fn main() -> aqc::Result<()> {
    let stations = vec![
        Station::new("Dongsi", 39.929, 116.417)?,
        Station::new("Tiantan", 39.886, 116.407)?,
        Station::new("Guanyuan", 39.929, 116.339)?,
        Station::new("Changping", 40.217, 116.230)?,
    ];
    for (i, a) in stations.iter().enumerate() {
        for b in &stations[i + 1..] {
            println!("{:>10} - {:<10} {:6.2} km", a.id, b.id, haversine_km(a, b));
        }
    }
    let graph = distance_adjacency(stations)?;
    println!("\nweights (1/km):");
    for i in 0..graph.len() {
        println!("  {:?}", graph.weights().row(i).iter().map(|w| format!("{w:.4}")).collect::<Vec<_>>());
    }
    let lap = graph.distance_laplacian()?;
    println!("\nlambda_max = {:.6}", lap.lambda_max);
    println!("scaled Laplacian:");
    for i in 0..graph.len() {
        println!("  {:?}", lap.matrix.row(i).iter().map(|w| format!("{w:+.4}")).collect::<Vec<_>>());
    }
    Ok(())
}
