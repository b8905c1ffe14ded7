//! Single-frame mesh: features, triangulation and outlier rejection.

use meshmap::config::PipelineConfig;
use meshmap::geometry::Pose;
use meshmap::mesh_builder::build_frame_mesh;
use meshmap::synthetic::mondrian;

fn main() {
    let cfg = PipelineConfig::default();
    let cam = cfg.camera();
    let frame = mondrian(1).render(&cam, &Pose::identity(), 0.0);

    let mesh = build_frame_mesh(&frame, 0, &cam, &cfg.sampling(), &cfg.thresholds()).unwrap();
    let s = &mesh.stats;
    println!("features            {}", s.features);
    println!("delaunay triangles  {}", s.triangles_2d);
    println!("rejected (2D side)  {}", s.rejected_2d);
    println!("rejected (3D side)  {}", s.rejected_3d_edges);
    println!("rejected (grazing)  {}", s.rejected_grazing);
    println!("mesh                {} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
}
