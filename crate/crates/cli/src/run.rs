//! Run bookkeeping: manifests and the worker pool.

use std::path::Path;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, HarnessResult};
use crate::io::write_text;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "M3D_THREADS";

/// Writes `manifest.txt`: comment lines naming the tool version and the
/// command, then the full resolved configuration. No timestamps, so
/// identical runs give identical manifests. The file parses as a config.
pub fn write_manifest(out: &Path, command: &str, args: &[(&str, String)], cfg: &ExperimentConfig) -> HarnessResult<()> {
    let mut text = format!("# stereogc {}\n# command = {command}\n", env!("CARGO_PKG_VERSION"));
    for (k, v) in args {
        text.push_str(&format!("# {k} = {v}\n"));
    }
    text.push_str(&cfg.to_text());
    write_text(&out.join(MANIFEST_FILE), &text)
}

/// Worker count from `M3D_THREADS`, else the available parallelism.
pub fn worker_count() -> HarnessResult<usize> {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n.min(avail)),
            _ => Err(HarnessError::usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(avail),
    }
}

/// Maps `f` over `items` on up to `threads` workers; results keep input order.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> HarnessResult<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| HarnessError::usage(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u64> = (0..200).collect();
        for threads in [1, 3, 8] {
            let out = parallel_map(&items, threads, |x| x * x).unwrap();
            assert_eq!(out, items.iter().map(|x| x * x).collect::<Vec<_>>());
        }
    }

    #[test]
    fn manifest_parses_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig { seed: 7, ..ExperimentConfig::default() };
        write_manifest(dir.path(), "optimize", &[("synth", "plane".into())], &cfg).unwrap();
        let back = ExperimentConfig::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, cfg);
    }
}
