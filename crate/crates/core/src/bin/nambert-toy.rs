//! Regenerate the bundled toy dataset.
//!
//! ```text
//! nambert-toy [OUT_DIR] [SEED]
//! ```

use std::process::ExitCode;

use nambert::toy::{generate, ToyConfig};

fn main() -> ExitCode {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "data/toy".into());
    let mut cfg = ToyConfig::default();
    if let Some(seed) = args.next() {
        match seed.parse() {
            Ok(s) => cfg.seed = s,
            Err(_) => {
                eprintln!("seed must be an unsigned integer, got {seed:?}");
                return ExitCode::from(2);
            }
        }
    }
    let data = match generate(&cfg) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = data.write(&out) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let erroneous = data.train.iter().filter(|e| e.has_error()).count();
    println!(
        "wrote {out}: {} characters, {} train ({erroneous} with errors), {} test, {} unseen-substitute test",
        data.pinyin.len(),
        data.train.len(),
        data.test.len(),
        data.test_unseen.len()
    );
    ExitCode::SUCCESS
}
