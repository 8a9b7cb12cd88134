use witten_lab::scenarios::{find_scenario, verify_scenario, Stage};

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "cubic_1d".to_string());
    let s = find_scenario(&name).expect("scenario");
    let start = std::time::Instant::now();
    match verify_scenario(&s, Stage::Verify, None) {
        Ok((report, artifacts)) => {
            for c in &report.checks {
                println!("{:?}\t{}\t{}", c.status, c.name, c.details);
            }
            println!("overall: {} ({} eigen rows, {} scatter rows, {} flowline rows)",
                report.overall_pass, artifacts.eigenvalues.len(),
                artifacts.decay_scatter.len(), artifacts.flowlines.len());
            println!("warnings: {:?}", report.warnings);
            println!("elapsed: {:?}", start.elapsed());
        }
        Err(e) => println!("ERROR: {e}"),
    }
}
