//! Absolute trajectory error with rigid alignment.

use meshmap::evaluation::{associate, ate, umeyama_align, Trajectory};
use meshmap::geometry::Pose;
use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let gt = Trajectory::new(
        (0..100)
            .map(|i| {
                let a = i as f64 * 0.06;
                (i as f64 / 30.0, Pose::from_translation(Vector3::new(2.0 * a.cos(), 0.2 * a, 2.0 * a.sin())))
            })
            .collect(),
    )
    .unwrap();

    // the estimate lives in another world frame, is 5 ms late and noisy
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let frame = Pose::from_parts(&Rotation3::from_euler_angles(0.1, 0.7, -0.3), Vector3::new(1.0, -2.0, 0.5));
    let est = Trajectory::new(
        gt.transformed(&frame)
            .samples()
            .iter()
            .map(|(t, p)| {
                let noise = Vector3::new(rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03));
                (t + 0.005, Pose::from_translation(p.translation() + noise))
            })
            .collect(),
    )
    .unwrap();

    let pairs = associate(&est, &gt, 0.02).unwrap();
    let align = umeyama_align(&pairs).unwrap();
    println!("{} pairs; recovered frame offset {:.3?}", pairs.len(), align.inverse().translation());
    println!("{}", ate(&est, &gt, 0.02).unwrap().to_key_values());
}
