//! Generate the procedural fixtures and write each to disk in the layout
//! the `scenetex` binary reads.
//!
//!     cargo run --release --example gen_scene -- [out_dir] [seed]

use std::path::PathBuf;

use scenetex::scene::load_scene;
use scenetex::scene::synth::{Fixture, FixtureKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "fixtures".into()));
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;

    for kind in ["quad", "box-room", "multi-object:4"] {
        let fixture = Fixture::generate(kind.parse()?, seed, 256, 32, None)?;
        let dir = out.join(kind.replace(':', "-"));
        let manifest = fixture.write(&dir)?;

        // read it back the way a training run would
        let (scene, summary) = load_scene(&dir.join(&manifest.mesh), &dir.join(&manifest.instance_map))?;
        println!("{kind} -> {}", dir.display());
        println!("  {} triangles, {} cameras, atlas occupancy {:.3}", scene.triangles.len(), manifest.rig_count, manifest.atlas_occupancy);
        for (name, area) in manifest.instance_names.iter().zip(&summary.instance_uv_area) {
            println!("  {name:<10} uv area {area:.4}");
        }
        if let FixtureKind::MultiObject { boxes } = fixture.kind {
            println!("  {boxes} boxes placed from seed {seed}");
        }
    }
    Ok(())
}
