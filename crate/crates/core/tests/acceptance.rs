//! Acceptance checks as a plain test binary, so every criterion line is
//! printed whether or not it passes. Exits non-zero if any criterion fails.

fn main() {
    let results = match ppn::verify::run_all() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("acceptance checks could not run: {e}");
            std::process::exit(2);
        }
    };
    for r in &results {
        println!("{r}");
    }
    let failed: Vec<u8> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    println!("{} passed, {} failed", results.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        eprintln!("failing criteria: {failed:?}");
        std::process::exit(1);
    }
}
