//! Delaunay triangulation of random pixels and point location.
//!
//! cargo run --example triangulate -- [points]

use meshmap::delaunay::{triangulate, Location, PointLocator};
use meshmap::geometry::PixelPoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let points: Vec<PixelPoint> = (0..n)
        .map(|_| PixelPoint::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)))
        .collect();

    let tri = triangulate(&points).expect("random points are in general position");
    println!("{} vertices, {} triangles, {} edges", tri.vertices.len(), tri.triangles.len(), tri.edge_count());

    let locator = PointLocator::new(&tri.vertices, &tri.triangles);
    for q in [PixelPoint::new(320.0, 240.0), PixelPoint::new(-5.0, 10.0)] {
        match locator.locate(&q) {
            Location::Triangle(t) => {
                let [a, b, c] = tri.triangles[t].map(|i| tri.source_indices[i]);
                println!("({}, {}) lies in the triangle of input points {a}, {b}, {c}", q.u, q.v);
            }
            Location::OutsideHull => println!("({}, {}) is outside the hull", q.u, q.v),
        }
    }
}
