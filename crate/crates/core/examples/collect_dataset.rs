//! Collects behavior-policy episodes, slices them into training windows and
//! writes the windows file that `macdmp train` consumes.
//!
//! ```text
//! cargo run --release --example collect_dataset -- /tmp/windows.macd
//! ```

use macdmp::dataset::{collect, read_windows, slice_windows, write_windows, DatasetHeader, DatasetStats};
use macdmp::netsim::ScenarioConfig;

fn main() -> macdmp::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "windows.macd".into());
    let scenarios = ["s8_2v6", "s8_4v4", "s9_2v7", "s9_4v5"]
        .iter()
        .map(|s| ScenarioConfig::preset(s))
        .collect::<macdmp::Result<Vec<_>>>()?;
    let (horizon, gamma) = (8, 0.99);
    let streams = collect(&scenarios, 8, 500, 42)?;
    let mut windows = Vec::new();
    for s in &streams {
        windows.extend(slice_windows(s, horizon, gamma)?);
    }
    let stats = DatasetStats::fit(&windows)?;
    println!("{} streams, {} windows", streams.len(), windows.len());
    println!("observation mean {:?}", stats.obs_mean);
    println!("observation std  {:?}", stats.obs_std);
    println!("return range     [{:.4}, {:.4}]", stats.return_min, stats.return_max);

    let header = DatasetHeader {
        config_hash: "example".into(),
        horizon: horizon as u32,
        gamma,
        stats: Some(stats),
    };
    write_windows(out.as_ref(), &header, &windows)?;
    let (back, reread) = read_windows(out.as_ref())?;
    assert_eq!(back, header);
    assert_eq!(reread, windows);
    println!("wrote {out}");
    Ok(())
}
