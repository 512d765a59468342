//! Records the same completions with every logger mechanism and log method
//! and prints the resulting log sizes.
//!
//! ```text
//! cargo run --example log_methods -- [files] [blocks_per_file] [done_fraction]
//! ```

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use objxfer::ftlog::{load_log, measure_log_space, FtLogConfig, FtLogger, LogMethod, LoggerMechanism};
use objxfer::layout::{DatasetManifest, FileSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let files: u32 = args.first().map_or(Ok(8), |s| s.parse())?;
    let blocks: u64 = args.get(1).map_or(Ok(1024), |s| s.parse())?;
    let done: f64 = args.get(2).map_or(Ok(0.5), |s| s.parse())?;

    let object_size = 4096;
    let specs: Vec<FileSpec> = (0..files)
        .map(|i| FileSpec {
            file_id: i,
            path: format!("f{i}"),
            size: blocks * object_size,
            mtime: 0,
            ost_list: vec![i % 11],
            stripe_size: object_size,
            stripe_count: 1,
        })
        .collect();
    let manifest = DatasetManifest::new("/nonexistent", object_size, specs)?;

    // One fixed random completion order shared by every configuration.
    let mut order: Vec<(u32, u64)> = (0..files).flat_map(|f| (0..blocks).map(move |k| (f, k))).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    order.truncate((order.len() as f64 * done) as usize);

    println!("{} files x {} blocks, {} completions", files, blocks, order.len());
    print!("{:<10}", "");
    for m in LogMethod::ALL {
        print!("{:>9}", m.as_str());
    }
    println!();
    for mech in LoggerMechanism::ALL {
        print!("{:<10}", mech.as_str());
        for method in LogMethod::ALL {
            let tmp = tempfile::tempdir()?;
            let mut cfg = FtLogConfig::new(mech, method, tmp.path());
            cfg.fsync = false;
            let mut logger = FtLogger::open(cfg.clone())?;
            for &(f, k) in &order {
                logger.record_completion(&manifest.files[f as usize], blocks, k)?;
            }
            let size = measure_log_space(tmp.path())?;
            let back: u64 = manifest
                .files
                .iter()
                .map(|f| load_log(&cfg, f, blocks).map(|s| s.map_or(0, |s| s.len())))
                .sum::<Result<u64, _>>()?;
            assert_eq!(back, order.len() as u64);
            print!("{size:>9}");
        }
        println!();
    }
    Ok(())
}
