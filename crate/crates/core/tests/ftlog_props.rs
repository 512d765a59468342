use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use objxfer::ftlog::encoding::{
    bitmap_len, decode_bitmap, decode_stream, max_record_len, region_size, set_bit, write_varint,
};
use objxfer::ftlog::{
    bit_position, encode_record, load_completed, load_log, measure_log_space, FtLogConfig, FtLogger, LogMethod,
    LoggerMechanism, RecordUpdate,
};
use objxfer::layout::FileSpec;

fn spec(id: u32, blocks: u64) -> FileSpec {
    FileSpec {
        file_id: id,
        path: format!("dir/f{id:03}.dat"),
        size: blocks << 20,
        mtime: 0,
        stripe_size: 1 << 20,
        stripe_count: 1,
        ost_list: vec![id % 11],
    }
}

fn config(dir: &Path, mechanism: LoggerMechanism, method: LogMethod) -> FtLogConfig {
    let mut c = FtLogConfig::new(mechanism, method, dir);
    c.fsync = false;
    c
}

fn combos() -> impl Iterator<Item = (LoggerMechanism, LogMethod)> {
    LoggerMechanism::ALL
        .into_iter()
        .flat_map(|m| LogMethod::ALL.into_iter().map(move |x| (m, x)))
}

#[test]
fn record_codec_round_trips_random_indices() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let keys: Vec<u64> = (0..10_000).map(|_| rng.random_range(0..u32::MAX as u64)).collect();
    let total = u32::MAX as u64;
    for method in LogMethod::ALL {
        if method.is_bitmap() {
            // Bitmap over a smaller universe so the region stays small.
            let total = 1 << 20;
            let mut region = vec![0u8; bitmap_len(method, total) as usize];
            let mut want = BTreeSet::new();
            for &k in &keys {
                let k = k % total;
                set_bit(method, &mut region, k);
                want.insert(k);
            }
            let got = decode_bitmap(method, &region, total).unwrap();
            assert_eq!(got, want.into_iter().collect::<Vec<_>>(), "{method}");
            continue;
        }
        let mut stream = Vec::new();
        for &k in &keys {
            match encode_record(method, k).unwrap() {
                RecordUpdate::Append(b) => stream.extend_from_slice(&b),
                other => panic!("{method}: {other:?}"),
            }
        }
        let decoded = decode_stream(method, &stream, total).unwrap();
        assert!(!decoded.torn, "{method}");
        assert_eq!(decoded.blocks, keys, "{method}");
    }
}

#[test]
fn bit_position_matches_division_exhaustively() {
    for n in [8u64, 64] {
        for k in 0..(1u64 << 16) {
            let (i, j) = bit_position(k, n);
            assert_eq!(i * n + j as u64, k);
            assert!((j as u64) < n);
            // Bit j of word i is the same bit as bit k of the byte array.
            let mut region = vec![0u8; (((1u64 << 16) / n) * (n / 8)) as usize];
            let method = if n == 8 { LogMethod::Bit8 } else { LogMethod::Bit64 };
            let dirty = set_bit(method, &mut region, k);
            assert_eq!(dirty.len() as u64, n / 8);
            let word = &region[dirty];
            let mut v = 0u64;
            for (b, &byte) in word.iter().enumerate() {
                v |= u64::from(byte) << (8 * b);
            }
            assert_eq!(v, 1u64 << j, "k={k} n={n}");
        }
    }
}

#[test]
fn enc_matches_reference_leb128() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut values: Vec<u64> = vec![0, 1, 127, 128, 300, 16_383, 16_384, u32::MAX as u64, u64::MAX];
    values.extend((0..2000).map(|_| rng.random::<u64>() >> rng.random_range(0..64)));
    for v in values {
        let mut ours = Vec::new();
        write_varint(v, &mut ours);
        let mut reference = Vec::new();
        leb128::write::unsigned(&mut reference, v).unwrap();
        assert_eq!(ours, reference, "{v}");
    }
    let mut reference = Vec::new();
    leb128::write::unsigned(&mut reference, 300).unwrap();
    assert_eq!(
        encode_record(LogMethod::Enc, 300).unwrap(),
        RecordUpdate::Append(reference)
    );
}

#[test]
fn char_worst_case_for_1024_blocks() {
    // Every block of a 1024-block file recorded once, summed independently.
    let brute: usize = (0..1024u32).map(|k| format!("{k}\n").len()).sum();
    assert!(brute as u64 <= 1024 * 5);

    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), LoggerMechanism::File, LogMethod::Char);
    let f = spec(0, 1024);
    let mut lg = FtLogger::open(cfg.clone()).unwrap();
    let mut order: Vec<u64> = (0..1024).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    for k in order {
        lg.record_completion(&f, 1024, k).unwrap();
    }
    let header = format!("ftl char 1024 {}\n", f.path).len();
    assert_eq!(measure_log_space(dir.path()).unwrap() as usize, header + brute);
    assert_eq!(max_record_len(LogMethod::Char, 1024), 5);
}

#[test]
fn bitmap_region_size_is_independent_of_progress() {
    for method in [LogMethod::Bit8, LogMethod::Bit64] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), LoggerMechanism::File, method);
        let f = spec(0, 1024);
        let mut lg = FtLogger::open(cfg).unwrap();
        lg.record_completion(&f, 1024, 5).unwrap();
        let one = measure_log_space(dir.path()).unwrap();
        for k in 0..1024 {
            lg.record_completion(&f, 1024, k).unwrap();
        }
        assert_eq!(measure_log_space(dir.path()).unwrap(), one);
        assert_eq!(bitmap_len(method, 1024), 128);
        assert_eq!(region_size(method, 1024), 128);
    }
}

#[test]
fn stream_space_is_nondecreasing() {
    for method in [LogMethod::Char, LogMethod::Enc, LogMethod::Int, LogMethod::Binary] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), LoggerMechanism::File, method);
        let f = spec(0, 300);
        let mut lg = FtLogger::open(cfg).unwrap();
        let mut last = 0;
        for k in (0..300).rev() {
            lg.record_completion(&f, 300, k).unwrap();
            let now = measure_log_space(dir.path()).unwrap();
            assert!(now > last, "{method}");
            last = now;
        }
    }
}

#[test]
fn transaction_of_size_one_matches_file_logger() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let files: Vec<FileSpec> = (0..6).map(|i| spec(i, 40)).collect();
    let mut events: Vec<(u32, u64)> = (0..6).flat_map(|f| (0..40).map(move |k| (f, k))).collect();
    events.shuffle(&mut rng);
    events.truncate(120);
    for method in LogMethod::ALL {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fc = config(a.path(), LoggerMechanism::File, method);
        let mut tc = config(b.path(), LoggerMechanism::Transaction, method);
        tc.transaction_size = 1;
        let mut la = FtLogger::open(fc.clone()).unwrap();
        let mut lb = FtLogger::open(tc.clone()).unwrap();
        for &(f, k) in &events {
            la.record_completion(&files[f as usize], 40, k).unwrap();
            lb.record_completion(&files[f as usize], 40, k).unwrap();
        }
        for f in &files {
            assert_eq!(load_completed(&fc, f, 40).unwrap(), load_completed(&tc, f, 40).unwrap());
        }
    }
}

/// Runs `events` through a fresh logger and returns the recovered set per file.
fn recover(
    dir: &Path,
    mechanism: LoggerMechanism,
    method: LogMethod,
    files: &[FileSpec],
    total: u64,
    events: &[(u32, u64)],
    finalize: &[u32],
) -> Vec<Option<Vec<u64>>> {
    let cfg = config(dir, mechanism, method);
    let mut lg = FtLogger::open(cfg.clone()).unwrap();
    for &(f, k) in events {
        lg.record_completion(&files[f as usize], total, k).unwrap();
    }
    for &f in finalize {
        lg.finalize_file(&files[f as usize]).unwrap();
    }
    drop(lg);
    files
        .iter()
        .map(|f| load_log(&cfg, f, total).unwrap().map(|s| s.to_vec()))
        .collect()
}

#[test]
fn mechanisms_recover_identical_sets_over_random_interleavings() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let total = 96;
    let files: Vec<FileSpec> = (0..7).map(|i| spec(i, total)).collect();
    for round in 0..100 {
        let method = LogMethod::ALL[round % LogMethod::ALL.len()];
        let mut events: Vec<(u32, u64)> = Vec::new();
        for _ in 0..rng.random_range(1..400) {
            events.push((rng.random_range(0..7), rng.random_range(0..total)));
        }
        let finalize: Vec<u32> = (0..7).filter(|_| rng.random_bool(0.3)).collect();
        let sets: Vec<_> = LoggerMechanism::ALL
            .into_iter()
            .map(|m| {
                let dir = tempfile::tempdir().unwrap();
                recover(dir.path(), m, method, &files, total, &events, &finalize)
            })
            .collect();
        assert_eq!(sets[0], sets[1], "round {round} {method}: file vs txn");
        assert_eq!(sets[0], sets[2], "round {round} {method}: file vs universal");
        // And against the plain set semantics.
        for (i, got) in sets[0].iter().enumerate() {
            let want: BTreeSet<u64> = events.iter().filter(|e| e.0 == i as u32).map(|e| e.1).collect();
            let expected = if finalize.contains(&(i as u32)) || want.is_empty() {
                None
            } else {
                Some(want.into_iter().collect())
            };
            assert_eq!(*got, expected, "round {round} {method} file {i}");
        }
    }
}

/// Which of `recorded` lose their storage when the last byte of the log
/// holding `victim` is cut off.
fn lost_to_truncation(
    method: LogMethod,
    recorded_in_order: &[u64],
    total: u64,
    region_is_last_byte_aligned: bool,
) -> BTreeSet<u64> {
    if method.is_bitmap() {
        // The final byte of the bitmap carries blocks 8*(len-1) .. 8*len.
        let len = bitmap_len(method, total);
        let first = 8 * (len - 1);
        recorded_in_order.iter().copied().filter(|&k| k >= first).collect()
    } else if region_is_last_byte_aligned {
        recorded_in_order.last().copied().into_iter().collect()
    } else {
        BTreeSet::new()
    }
}

#[test]
fn truncating_the_last_byte_only_loses_the_torn_record() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let total = 64;
    for (mechanism, method) in combos() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), mechanism, method);
        let files = [spec(0, total), spec(1, total)];
        let mut lg = FtLogger::open(cfg.clone()).unwrap();
        // File 1 is attached last, so its log region (or own log) ends the file.
        let mut order: Vec<u64> = (0..total).filter(|_| rng.random_bool(0.6)).collect();
        order.shuffle(&mut rng);
        lg.record_completion(&files[0], total, 3).unwrap();
        for &k in &order {
            lg.record_completion(&files[1], total, k).unwrap();
        }
        drop(lg);

        let log_path = match cfg.group_of(1) {
            None => cfg.file_log_path(1),
            Some(g) => dir.path().join(format!("{g}.ftl")),
        };
        let len = fs::metadata(&log_path).unwrap().len();
        fs::OpenOptions::new()
            .write(true)
            .open(&log_path)
            .unwrap()
            .set_len(len - 1)
            .unwrap();

        // Own logs end at the last record; shared stream regions are
        // preallocated, so the cut byte is the last record only if the region is full.
        let aligned = match mechanism {
            LoggerMechanism::File => true,
            _ => {
                let used: u64 = order.iter().map(|&k| record_len(method, k)).sum();
                used == region_size(method, total) - 8
            }
        };
        let lost = lost_to_truncation(method, &order, total, aligned);
        let want: BTreeSet<u64> = order.iter().copied().filter(|k| !lost.contains(k)).collect();
        let got: BTreeSet<u64> = load_completed(&cfg, &files[1], total).unwrap().iter().collect();
        assert_eq!(got, want, "{mechanism}/{method}");
        assert!(lost.len() <= if method.is_bitmap() { 8 } else { 1 });
        assert_eq!(load_completed(&cfg, &files[0], total).unwrap().to_vec(), vec![3]);

        // The logger keeps working on top of the torn log.
        let mut lg = FtLogger::open(cfg.clone()).unwrap();
        for k in 0..total {
            lg.record_completion(&files[1], total, k).unwrap();
        }
        drop(lg);
        assert!(load_completed(&cfg, &files[1], total).unwrap().is_complete(), "{mechanism}/{method}");
    }
}

fn record_len(method: LogMethod, k: u64) -> u64 {
    match encode_record(method, k).unwrap() {
        RecordUpdate::Append(b) => b.len() as u64,
        RecordUpdate::SetBit { .. } => 0,
    }
}

#[test]
fn a_partial_trailing_record_is_dropped_with_the_rest_kept() {
    for method in [LogMethod::Char, LogMethod::Int, LogMethod::Enc, LogMethod::Binary] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), LoggerMechanism::File, method);
        let f = spec(0, 400);
        let mut lg = FtLogger::open(cfg.clone()).unwrap();
        for k in [2, 0, 300] {
            lg.record_completion(&f, 400, k).unwrap();
        }
        drop(lg);
        let path = cfg.file_log_path(0);
        let len = fs::metadata(&path).unwrap().len();
        fs::OpenOptions::new().write(true).open(&path).unwrap().set_len(len - 1).unwrap();
        assert_eq!(load_completed(&cfg, &f, 400).unwrap().to_vec(), vec![0, 2], "{method}");
    }
}

#[test]
fn corruption_before_the_tail_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), LoggerMechanism::File, LogMethod::Char);
    let f = spec(0, 10);
    let mut lg = FtLogger::open(cfg.clone()).unwrap();
    for k in [1, 2, 3] {
        lg.record_completion(&f, 10, k).unwrap();
    }
    drop(lg);
    let path = cfg.file_log_path(0);
    let mut bytes = fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 4] = b'x';
    fs::write(&path, bytes).unwrap();
    let err = load_completed(&cfg, &f, 10).unwrap_err();
    assert!(err.to_string().contains("corrupted"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_combo_round_trips_random_subsets(
        blocks in 1u64..300,
        picks in proptest::collection::vec(any::<u64>(), 0..200),
        seed in any::<u64>(),
    ) {
        let files: Vec<FileSpec> = (0..5).map(|i| spec(i, blocks)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let events: Vec<(u32, u64)> = picks.iter().map(|p| ((p % 5) as u32, (p / 5) % blocks)).collect();
        let mut shuffled = events.clone();
        shuffled.shuffle(&mut rng);
        for (mechanism, method) in combos() {
            let dir = tempfile::tempdir().unwrap();
            let got = recover(dir.path(), mechanism, method, &files, blocks, &shuffled, &[]);
            for (i, set) in got.into_iter().enumerate() {
                let want: Vec<u64> = events
                    .iter()
                    .filter(|e| e.0 == i as u32)
                    .map(|e| e.1)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                let got = set.unwrap_or_default();
                prop_assert_eq!(&got, &want, "{}/{} file {}", mechanism, method, i);
            }
        }
    }

    #[test]
    fn recording_twice_equals_recording_once(ks in proptest::collection::vec(0u64..50, 1..60)) {
        let f = spec(0, 50);
        for method in LogMethod::ALL {
            let once = tempfile::tempdir().unwrap();
            let twice = tempfile::tempdir().unwrap();
            let a = recover(once.path(), LoggerMechanism::Universal, method, std::slice::from_ref(&f), 50,
                &ks.iter().map(|&k| (0, k)).collect::<Vec<_>>(), &[]);
            let doubled: Vec<(u32, u64)> = ks.iter().flat_map(|&k| [(0, k), (0, k)]).collect();
            let b = recover(twice.path(), LoggerMechanism::Universal, method, std::slice::from_ref(&f), 50, &doubled, &[]);
            prop_assert_eq!(a, b);
            prop_assert_eq!(measure_log_space(once.path()).unwrap(), measure_log_space(twice.path()).unwrap());
        }
    }
}
