//! Write a seeded demo corpus of raw speed-time events.
//!
//! cargo run -p leadkin --example demo_data -- demo/events.csv [seed]

use std::path::PathBuf;

use leadkin::corpus::{raw_corpus, RawCorpusSpec};
use leadkin::io::write_events;

fn main() -> leadkin::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "events.csv".into()));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let events = raw_corpus(&RawCorpusSpec::default(), seed);
    write_events(&path, &events)?;
    println!("wrote {} events to {}", events.len(), path.display());
    Ok(())
}
