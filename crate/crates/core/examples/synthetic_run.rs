//! Runs the whole synthetic pipeline with default settings and prints the
//! evaluation summary.

use std::time::Instant;

use vprd::config::Config;
use vprd::pipeline;

fn main() -> vprd::Result<()> {
    let cfg = Config::load(std::env::args().nth(1).as_deref().map(std::path::Path::new))?;
    let t0 = Instant::now();
    let out = pipeline::run(&cfg)?;
    let r = &out.report;
    let t = &out.trained.report;
    println!("profile width after cropping: {}", out.dataset.d_out());
    println!("steps {} (best {}), stopped early: {}", t.steps, t.best_step, t.stopped_early);
    println!(
        "median MSE  prediction {:.6}  mean {:.6}  neighbor {:.6}",
        r.prediction.median, r.mean.median, r.neighbor.median
    );
    println!("{}", serde_json::to_string_pretty(&r.prediction_vs_mean)?);
    println!("{}", serde_json::to_string_pretty(&r.prediction_vs_neighbor)?);
    println!("total {:.1} s", t0.elapsed().as_secs_f64());
    Ok(())
}
