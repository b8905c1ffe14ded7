//! Underwater degradation and the classical enhancement baseline.
//!
//! cargo run --release --example underwater -- [out_dir]
//! With an output directory, the clean, hazed and enhanced images are saved.

use meshmap::config::PipelineConfig;
use meshmap::features::detect_features;
use meshmap::frame::{color_to_rgb8, to_gray};
use meshmap::geometry::Pose;
use meshmap::synthetic::mondrian_in;
use meshmap::underwater::{degrade, enhance_baseline, WaterParams};

fn main() {
    let cfg = PipelineConfig::default();
    let cam = cfg.camera();
    let frame = mondrian_in(3, [(0.0, 1.0), (0.35, 0.55), (0.35, 0.55)]).render(&cam, &Pose::identity(), 0.0);

    let water = WaterParams::default();
    let hazed = degrade(&frame.color, &frame.depth, &water).unwrap();
    let enhanced = enhance_baseline(&hazed);

    let count = |img| detect_features(&to_gray(img), &cfg.sampling(), None).unwrap().len();
    println!("beta {:?}, backlight {:?}", water.beta, water.backlight);
    println!("features: clean {}, hazed {}, enhanced {}", count(&frame.color), count(&hazed), count(&enhanced));

    if let Some(dir) = std::env::args().nth(1) {
        let dir = std::path::PathBuf::from(dir);
        std::fs::create_dir_all(&dir).unwrap();
        for (name, img) in [("clean", &frame.color), ("hazed", &hazed), ("enhanced", &enhanced)] {
            let path = dir.join(format!("{name}.png"));
            color_to_rgb8(img).save(&path).unwrap();
            println!("wrote {}", path.display());
        }
    }
}
