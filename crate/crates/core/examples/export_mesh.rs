//! Build a small map, export it as PLY and OBJ, and read the PLY back.
//!
//! cargo run --release --example export_mesh -- [out_dir]

use std::path::PathBuf;

use meshmap::config::PipelineConfig;
use meshmap::dataset_io::{export_mesh, import_ply, MeshFormat};
use meshmap::evaluation::map_stats;
use meshmap::map_expansion::{expand, MeshMap};
use meshmap::synthetic::planar_sweep;

fn main() {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = PipelineConfig::default();
    let cam = cfg.camera();
    let (scene, poses) = planar_sweep(20, 2.5, 0.03, 1);
    let mut map = MeshMap::new();
    for (i, pose) in poses.iter().enumerate() {
        let frame = scene.render(&cam, pose, i as f64);
        expand(&mut map, &frame, &cam, &cfg.expansion(), &cfg.thresholds(), &cfg.sampling()).unwrap();
    }

    for (name, format) in [("sweep.ply", MeshFormat::Ply), ("sweep.obj", MeshFormat::Obj)] {
        let path = dir.join(name);
        export_mesh(&map, &path, format).unwrap();
        println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path).unwrap().len());
    }
    let back = import_ply(&dir.join("sweep.ply")).unwrap();
    println!("exported: {}", map_stats(&map).to_key_values());
    println!("imported: {}", map_stats(&back).to_key_values());
}
