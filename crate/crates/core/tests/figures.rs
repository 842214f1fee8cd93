mod common;

use aqc::eval::{diffusion_fluxes, diffusion_lines_svg, wind_heatmap_svg};
use aqc::geo_graph::{distance_adjacency, haversine_km, Station};
use aqc::Error;
use common::*;

fn assert_xml(svg: &str) -> roxmltree::Document<'_> {
    let doc = roxmltree::Document::parse(svg).expect("SVG parses as XML");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    doc
}

#[test]
fn figures_are_valid_deterministic_xml() {
    let ds = synthetic(6, 30, 3);
    let s = &ds.series;
    let step = 12;
    let values = s.pm25.row(step).to_vec();
    let wind: Vec<(f64, f64)> = (0..6).map(|i| (s.wind.data()[(step * 6 + i) * 2], s.wind.data()[(step * 6 + i) * 2 + 1])).collect();
    let a = wind_heatmap_svg(&ds.stations, &values, &wind).unwrap();
    assert_eq!(a, wind_heatmap_svg(&ds.stations, &values, &wind).unwrap());
    let doc = assert_xml(&a);
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 6);

    let graph = ds.graph().unwrap();
    let (b, fluxes) = diffusion_lines_svg(&graph, &values, "S01", 0.3).unwrap();
    assert_eq!(b, diffusion_lines_svg(&graph, &values, "S01", 0.3).unwrap().0);
    let doc = assert_xml(&b);
    assert_eq!(doc.descendants().filter(|n| n.attribute("class") == Some("flux")).count(), 5);
    assert_eq!(fluxes.len(), 5);
}

#[test]
fn three_node_fluxes_by_hand() {
    let stations = vec![
        Station::new("a", 40.0, 116.0).unwrap(),
        Station::new("b", 40.1, 116.0).unwrap(),
        Station::new("c", 40.0, 116.2).unwrap(),
    ];
    let graph = distance_adjacency(stations.clone()).unwrap();
    let x = [80.0, 50.0, 95.0];
    let k = 0.25;
    let fluxes = diffusion_fluxes(&graph, &x, "a", k).unwrap();
    let dab = haversine_km(&stations[0], &stations[1]);
    let dac = haversine_km(&stations[0], &stations[2]);
    let want_b = k * (1.0 / dab) * (80.0 - 50.0);
    let want_c = k * (1.0 / dac) * (80.0 - 95.0);
    assert_eq!(fluxes[0].0, "b");
    assert!((fluxes[0].1 - want_b).abs() < 1e-12 * want_b.abs());
    assert!((fluxes[1].1 - want_c).abs() < 1e-12 * want_c.abs());
    assert!(fluxes[0].1 > 0.0 && fluxes[1].1 < 0.0);

    let flat = diffusion_fluxes(&graph, &[7.0; 3], "b", k).unwrap();
    assert!(flat.iter().all(|(_, f)| *f == 0.0));
    assert!(matches!(diffusion_fluxes(&graph, &x, "zz", k), Err(Error::Reference(_))));
}

#[test]
fn station_names_are_escaped() {
    let st = vec![Station::new("a<&>\"b", 39.9, 116.4).unwrap()];
    let svg = wind_heatmap_svg(&st, &[10.0], &[(1.0, 0.0)]).unwrap();
    assert_xml(&svg);
}
