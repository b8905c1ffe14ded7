//! Sliding-window map expansion over a sideways sweep past a wall.
//!
//! cargo run --release --example expansion -- [frames] [window]

use meshmap::config::PipelineConfig;
use meshmap::evaluation::map_stats;
use meshmap::map_expansion::{expand, MeshMap};
use meshmap::synthetic::planar_sweep;

fn main() {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().ok());
    let frames = args.next().flatten().unwrap_or(60);
    let mut cfg = PipelineConfig::default();
    if let Some(n) = args.next().flatten() {
        cfg.window_size = n;
    }
    let cam = cfg.camera();
    let (scene, poses) = planar_sweep(frames, 3.0, 0.02, 7);

    let mut map = MeshMap::new();
    println!("frame  samples  outside  offset  on-plane  +vertices  +triangles  ms");
    for (i, pose) in poses.iter().enumerate() {
        let frame = scene.render(&cam, pose, i as f64 / 30.0);
        let s = expand(&mut map, &frame, &cam, &cfg.expansion(), &cfg.thresholds(), &cfg.sampling()).unwrap();
        if i % 5 == 0 || i + 1 == frames {
            println!(
                "{i:>5}  {:>7}  {:>7}  {:>6}  {:>8}  {:>9}  {:>10}  {:.1}",
                s.samples,
                s.kept_outside,
                s.kept_offset,
                s.discarded_on_plane,
                s.vertices_added,
                s.triangles_added,
                s.timings.total.as_secs_f64() * 1e3
            );
        }
    }
    let stats = map_stats(&map);
    println!("\n{}", stats.to_key_values());
    println!("window holds frames {:?}", map.window().iter().map(|w| w.frame).collect::<Vec<_>>());
    if let Some(r) = stats.compaction_ratio() {
        println!("dense points per mesh vertex: {r:.0}");
    }
}
