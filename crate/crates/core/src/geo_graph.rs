//! Sensor-network graph: stations, distance-weighted adjacency and the
//! scaled normalized Laplacian used by the Chebyshev graph filters.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// A monitoring station; its position in a [`SensorGraph`] is its node index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    /// Degrees in `[-90, 90]`.
    pub latitude: f64,
    /// Degrees in `(-180, 180]`.
    pub longitude: f64,
}

impl Station {
    pub fn new(id: impl Into<String>, latitude: f64, longitude: f64) -> Result<Self> {
        let id = id.into();
        if !(-90.0..=90.0).contains(&latitude) || !latitude.is_finite() {
            return Err(Error::Data(format!(
                "station `{id}`: latitude {latitude} outside [-90, 90]"
            )));
        }
        if !(longitude > -180.0 && longitude <= 180.0) {
            return Err(Error::Data(format!(
                "station `{id}`: longitude {longitude} outside (-180, 180]"
            )));
        }
        Ok(Station {
            id,
            latitude,
            longitude,
        })
    }
}

/// Great-circle distance in kilometres.
pub fn haversine_km(a: &Station, b: &Station) -> f64 {
    let (p1, p2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dp = p2 - p1;
    let dl = (b.longitude - a.longitude).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Stations plus the symmetric inverse-distance adjacency `W[i][j] = 1/d_ij`.
#[derive(Clone, Debug)]
pub struct SensorGraph {
    stations: Vec<Station>,
    weights: Tensor,
}

/// Complete graph with inverse-haversine edge weights (km⁻¹).
pub fn distance_adjacency(stations: Vec<Station>) -> Result<SensorGraph> {
    SensorGraph::with_cutoff(stations, None)
}

impl SensorGraph {
    /// Like [`distance_adjacency`], but edges longer than `max_km` get weight 0.
    pub fn with_cutoff(stations: Vec<Station>, max_km: Option<f64>) -> Result<Self> {
        let n = stations.len();
        if n < 2 {
            return Err(Error::Data(format!("graph needs at least 2 stations, got {n}")));
        }
        let mut seen = HashSet::new();
        for s in &stations {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Data(format!("duplicate station id `{}`", s.id)));
            }
        }
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = haversine_km(&stations[i], &stations[j]);
                if d == 0.0 {
                    return Err(Error::Data(format!(
                        "degenerate graph: stations `{}` and `{}` share coordinates",
                        stations[i].id, stations[j].id
                    )));
                }
                let v = match max_km {
                    Some(cut) if d > cut => 0.0,
                    _ => 1.0 / d,
                };
                w[i * n + j] = v;
                w[j * n + i] = v;
            }
        }
        Ok(SensorGraph {
            stations,
            weights: Tensor::matrix(n, n, w)?,
        })
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.id == id)
    }

    pub fn distance_laplacian(&self) -> Result<ScaledLaplacian> {
        scaled_laplacian(&self.weights, LaplacianSource::Distance)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianSource {
    Distance,
    FlowField,
}

/// `2·L̄/λ_max − I` with `L̄ = I − D^{-1/2} W D^{-1/2}`.
#[derive(Clone, Debug)]
pub struct ScaledLaplacian {
    pub matrix: Tensor,
    pub lambda_max: f64,
    pub source: LaplacianSource,
}

/// Convergence tolerance on the eigen-residual used for distance Laplacians.
const LAMBDA_TOL: f64 = 1e-12;
const LAMBDA_MAX_ITER: usize = 200_000;

/// `D^{-1/2} W D^{-1/2}` with `D_ii = Σ_j |W_ij|`; rows and columns of
/// zero-degree nodes are zero.
pub fn sym_normalize(w: &Tensor) -> Result<Tensor> {
    let n = check_square(w)?;
    let d: Vec<f64> = (0..n).map(|i| w.row(i).iter().map(|v| v.abs()).sum()).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            // one rounding in the square root keeps the 2-node case exact
            let dd = d[i] * d[j];
            if dd > 0.0 {
                out[i * n + j] = w.get(i, j) / dd.sqrt();
            }
        }
    }
    Tensor::matrix(n, n, out)
}

/// `L̄ = I − D^{-1/2} W D^{-1/2}`. Isolated nodes keep an identity row.
pub fn normalized_laplacian(w: &Tensor) -> Result<Tensor> {
    let n = check_square(w)?;
    let a = sym_normalize(w)?;
    let mut out = a.data().iter().map(|v| -v).collect::<Vec<_>>();
    for i in 0..n {
        out[i * n + i] += 1.0;
    }
    Tensor::matrix(n, n, out)
}

pub fn scaled_laplacian(w: &Tensor, source: LaplacianSource) -> Result<ScaledLaplacian> {
    let n = check_square(w)?;
    if let Some(i) = (0..n).find(|&i| w.get(i, i) != 0.0) {
        return Err(Error::Contract(format!(
            "adjacency diagonal must be zero, W[{i}][{i}] = {}",
            w.get(i, i)
        )));
    }
    let lbar = normalized_laplacian(w)?;
    let lambda_max = match source {
        LaplacianSource::Distance => power_iteration_lambda_max(&lbar, LAMBDA_TOL, LAMBDA_MAX_ITER)?,
        LaplacianSource::FlowField => 2.0,
    };
    if lambda_max <= 0.0 {
        return Err(Error::Numeric(format!(
            "largest Laplacian eigenvalue {lambda_max} is not positive"
        )));
    }
    let scale = 2.0 / lambda_max;
    let mut out: Vec<f64> = lbar.data().iter().map(|v| scale * v).collect();
    for i in 0..n {
        out[i * n + i] -= 1.0;
    }
    Ok(ScaledLaplacian {
        matrix: Tensor::matrix(n, n, out)?,
        lambda_max,
        source,
    })
}

/// Dominant eigenvalue of a symmetric matrix by power iteration.
///
/// The iterate is rescaled by its largest component and the estimate is the
/// Rayleigh quotient; iteration stops once `‖Mv − λv‖/‖v‖ ≤ tol`. The start
/// vector is all-ones with a small fixed ripple, so it is never exactly
/// orthogonal to a dominant eigenvector by symmetry alone.
pub fn power_iteration_lambda_max(m: &Tensor, tol: f64, max_iter: usize) -> Result<f64> {
    let n = check_square(m)?;
    if tol <= 0.0 {
        return Err(Error::Contract(format!("tolerance {tol} must be positive")));
    }
    if n == 0 {
        return Err(Error::dim("empty matrix"));
    }
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i + 1) as f64).sin()).collect();
    scale_inf(&mut v);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mv = mat_vec(m, &v);
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let lambda = v.iter().zip(&mv).map(|(a, b)| a * b).sum::<f64>() / vv;
        residual = mv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt()
            / vv.sqrt();
        if residual <= tol * lambda.abs().max(1.0) {
            return Ok(lambda);
        }
        if mv.iter().all(|&x| x == 0.0) {
            // start vector in the null space; nothing else is reachable
            return Ok(0.0);
        }
        v = mv;
        scale_inf(&mut v);
    }
    Err(Error::Numeric(format!(
        "power iteration did not converge in {max_iter} iterations (residual {residual:e})"
    )))
}

fn scale_inf(v: &mut [f64]) {
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m > 0.0 {
        v.iter_mut().for_each(|x| *x /= m);
    }
}

fn mat_vec(m: &Tensor, v: &[f64]) -> Vec<f64> {
    (0..v.len())
        .map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn check_square(m: &Tensor) -> Result<usize> {
    if m.rank() != 2 || m.rows() != m.cols() {
        return Err(Error::dim(format!("expected a square matrix, got {:?}", m.shape())));
    }
    Ok(m.rows())
}

#[derive(Deserialize)]
struct StationRow {
    station_id: String,
    latitude: f64,
    longitude: f64,
}

/// Reads a `station_id,latitude,longitude` CSV.
pub fn read_stations_csv(path: impl AsRef<Path>) -> Result<Vec<Station>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_stations(file)
}

pub fn parse_stations(reader: impl std::io::Read) -> Result<Vec<Station>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let expected = ["station_id", "latitude", "longitude"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header `{}`", expected.join(",")),
        });
    }
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.deserialize::<StationRow>() {
        let row = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        if !seen.insert(row.station_id.clone()) {
            return Err(Error::Data(format!("duplicate station id `{}`", row.station_id)));
        }
        out.push(Station::new(row.station_id, row.latitude, row.longitude)?);
    }
    Ok(out)
}

pub fn write_stations_csv(path: impl AsRef<Path>, stations: &[Station]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["station_id", "latitude", "longitude"]).map_err(io)?;
    for s in stations {
        w.write_record([s.id.clone(), s.latitude.to_string(), s.longitude.to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(id: &str, lat: f64, lon: f64) -> Station {
        Station::new(id, lat, lon).unwrap()
    }

    #[test]
    fn haversine_reference_distances() {
        let o = st("o", 0.0, 0.0);
        assert_eq!(haversine_km(&o, &o), 0.0);
        let half = haversine_km(&o, &st("a", 0.0, 180.0));
        assert!((half - std::f64::consts::PI * 6371.0).abs() < 1e-9);
        assert!((half - 20015.087).abs() < 1e-3);
        let quarter = haversine_km(&o, &st("b", 90.0, 0.0));
        assert!((quarter - 10007.543).abs() < 1e-3);
    }

    #[test]
    fn equatorial_chain_weights() {
        let g = distance_adjacency(vec![st("a", 0.0, 0.0), st("b", 0.0, 1.0), st("c", 0.0, 2.0)])
            .unwrap();
        let per_degree = std::f64::consts::PI / 180.0 * 6371.0;
        let w = g.weights();
        assert!((w.get(0, 1) - 1.0 / per_degree).abs() < 1e-15);
        assert!((w.get(0, 2) - 1.0 / (2.0 * per_degree)).abs() < 1e-15);
        assert!((w.get(1, 2) - 1.0 / per_degree).abs() < 1e-15);
        assert!((1.0 / w.get(0, 1) - 111.195).abs() < 1e-3);
        assert_eq!(w.get(1, 1), 0.0);
    }

    #[test]
    fn ten_km_apart_gives_point_one() {
        // 10 km of arc along the equator
        let deg = 10.0 / (std::f64::consts::PI / 180.0 * 6371.0);
        let g = distance_adjacency(vec![st("a", 0.0, 0.0), st("b", 0.0, deg)]).unwrap();
        assert!((g.weights().get(0, 1) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn duplicate_coordinates_are_degenerate() {
        let r = distance_adjacency(vec![st("a", 10.0, 10.0), st("b", 10.0, 10.0)]);
        assert!(matches!(r, Err(Error::Data(m)) if m.contains("degenerate")));
    }

    #[test]
    fn coordinate_ranges() {
        assert!(Station::new("x", 91.0, 0.0).is_err());
        assert!(Station::new("x", 0.0, -180.0).is_err());
        assert!(Station::new("x", 0.0, 180.0).is_ok());
    }

    #[test]
    fn power_iteration_examples() {
        let id = Tensor::identity(3);
        assert!((power_iteration_lambda_max(&id, 1e-12, 1000).unwrap() - 1.0).abs() < 1e-12);
        let m = Tensor::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        assert_eq!(power_iteration_lambda_max(&m, 1e-12, 1000).unwrap(), 2.0);
        let d = Tensor::from_rows(&[
            vec![3.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 2.0],
        ])
        .unwrap();
        assert!((power_iteration_lambda_max(&d, 1e-12, 10_000).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn power_iteration_reports_non_convergence() {
        let m = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        // [[1,1],[1,-1]] has eigenvalues ±√2
        let err = power_iteration_lambda_max(&m, 1e-12, 50).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref s) if s.contains("residual")), "{err}");
    }

    #[test]
    fn zero_adjacency_gives_identity() {
        let s = scaled_laplacian(&Tensor::zeros(vec![3, 3]), LaplacianSource::Distance).unwrap();
        assert_eq!(s.lambda_max, 1.0);
        assert_eq!(s.matrix, Tensor::identity(3));
    }

    #[test]
    fn two_node_hand_case_is_exact() {
        let w = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let lbar = normalized_laplacian(&w).unwrap();
        assert_eq!(lbar.data(), &[1.0, -1.0, -1.0, 1.0]);
        let s = scaled_laplacian(&w, LaplacianSource::Distance).unwrap();
        assert_eq!(s.lambda_max, 2.0);
        assert_eq!(s.matrix.data(), &[0.0, -1.0, -1.0, 0.0]);
    }

    #[test]
    fn non_square_rejected() {
        let r = scaled_laplacian(&Tensor::zeros(vec![2, 3]), LaplacianSource::Distance);
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn stations_csv_rejects_duplicates_and_bad_header() {
        let ok = "station_id,latitude,longitude\na,1.0,2.0\nb,1.5,2.5\n";
        assert_eq!(parse_stations(ok.as_bytes()).unwrap().len(), 2);
        let dup = "station_id,latitude,longitude\na,1.0,2.0\na,1.5,2.5\n";
        assert!(matches!(parse_stations(dup.as_bytes()), Err(Error::Data(_))));
        let bad = "id,lat,lon\na,1,2\n";
        assert!(matches!(parse_stations(bad.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let garbled = "station_id,latitude,longitude\na,1.0,2.0\nb,north,2.5\n";
        assert!(matches!(parse_stations(garbled.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }
}
