//! Central-difference gradient checks in f64 for each component.
//!
//!     cargo run --release --example gradcheck -- [diffcore|texfield|xattn|critic|all] [seed]

use scenetex::verify::{gradcheck_suite, Component};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let component: Component = args.next().unwrap_or_else(|| "all".into()).parse()?;
    let seed = args.next().map_or(Ok(0), |s| s.parse())?;
    let start = std::time::Instant::now();
    let results = gradcheck_suite(component, seed)?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    println!("{} cases, {failed} failed, {:.1?}", results.len(), start.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
    Ok(())
}
