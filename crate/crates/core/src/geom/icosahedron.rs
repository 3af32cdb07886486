use super::{CameraPose, SphericalCoord};
use crate::error::Result;

/// The 12 vertices of a regular icosahedron with two vertices at the poles.
fn vertices() -> Vec<[f64; 3]> {
    let ring_lat = 0.5f64.atan();
    let mut v = vec![[0.0, 0.0, 1.0]];
    for k in 0..5 {
        let lon = (72.0 * k as f64).to_radians();
        v.push(SphericalCoord::new(lon, ring_lat).to_unit_vector());
    }
    for k in 0..5 {
        let lon = (36.0 + 72.0 * k as f64).to_radians();
        v.push(SphericalCoord::new(lon, -ring_lat).to_unit_vector());
    }
    v.push([0.0, 0.0, -1.0]);
    v
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Unit normals through the 20 face centers, ordered north to south, then by longitude.
pub fn icosahedron_face_centers() -> Vec<SphericalCoord> {
    let v = vertices();
    let edge = dist2(v[0], v[1]);
    let is_edge = |a: usize, b: usize| (dist2(v[a], v[b]) - edge).abs() < 1e-9;
    let mut centers = Vec::with_capacity(20);
    for a in 0..v.len() {
        for b in a + 1..v.len() {
            for c in b + 1..v.len() {
                if is_edge(a, b) && is_edge(b, c) && is_edge(a, c) {
                    let s = [
                        v[a][0] + v[b][0] + v[c][0],
                        v[a][1] + v[b][1] + v[c][1],
                        v[a][2] + v[b][2] + v[c][2],
                    ];
                    centers.push(SphericalCoord::from_vector(s));
                }
            }
        }
    }
    debug_assert_eq!(centers.len(), 20);
    // round before ordering so ties within a ring sort stably by longitude
    let key = |c: &SphericalCoord| ((-c.lat * 1e9).round() as i64, (c.lon * 1e9).round() as i64);
    centers.sort_by_key(key);
    centers
}

/// One camera per icosahedron face, looking out through the face center, roll 0.
pub fn icosahedron_cameras(fov: f64, image_size: usize) -> Result<Vec<CameraPose>> {
    icosahedron_face_centers()
        .into_iter()
        .map(|c| CameraPose::new(c.lon, c.lat, 0.0, fov, image_size))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_faces() {
        let cams = icosahedron_cameras(90f64.to_radians(), 64).unwrap();
        assert_eq!(cams.len(), 20);
        assert!(cams.iter().all(|c| c.roll == 0.0));
    }

    #[test]
    fn adjacent_face_separation() {
        // dihedral angle of the icosahedron is acos(-sqrt(5)/3); adjacent face
        // normals are separated by its supplement
        let expected = std::f64::consts::PI - (-(5f64.sqrt()) / 3.0).acos();
        assert!((expected.to_degrees() - 41.81).abs() < 0.01);
        let c = icosahedron_face_centers();
        let mut min = f64::MAX;
        for i in 0..20 {
            for j in i + 1..20 {
                min = min.min(c[i].angular_distance(c[j]));
            }
        }
        assert!((min - expected).abs() < 1e-12, "{}", min.to_degrees());
    }

    #[test]
    fn axes_sum_to_zero() {
        let mut s = [0.0; 3];
        for c in icosahedron_face_centers() {
            let v = c.to_unit_vector();
            for k in 0..3 {
                s[k] += v[k] / 20.0;
            }
        }
        assert!(s.iter().all(|x| x.abs() < 1e-12), "{s:?}");
    }

    #[test]
    fn closed_under_inversion() {
        let c = icosahedron_face_centers();
        for a in &c {
            let v = a.to_unit_vector();
            let inv = SphericalCoord::from_vector([-v[0], -v[1], -v[2]]);
            assert!(c.iter().any(|b| b.angular_distance(inv) < 1e-12));
        }
    }
}
