use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};

/// A run aborts when more than this share of examples fail.
pub const FAILURE_THRESHOLD_PERCENT: f64 = 10.0;

/// Errors when `failed` exceeds [`FAILURE_THRESHOLD_PERCENT`] of `total`.
pub fn check_failure_threshold(failed: usize, total: usize) -> Result<()> {
    if failed as f64 * 100.0 > FAILURE_THRESHOLD_PERCENT * total as f64 {
        return Err(Error::FailureThreshold {
            failed,
            total,
            threshold: FAILURE_THRESHOLD_PERCENT,
        });
    }
    Ok(())
}

/// Applies `f` to every item on up to `workers` scoped threads, returning
/// results in input order.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let items: Vec<u64> = (0..200).collect();
        let out = parallel_map(&items, 8, |x| x * 2);
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(parallel_map(&Vec::<u8>::new(), 4, |x| *x).is_empty());
    }

    #[test]
    fn threshold_is_strictly_above_ten_percent() {
        assert!(check_failure_threshold(1, 10).is_ok());
        assert!(check_failure_threshold(2, 10).is_err());
        assert!(check_failure_threshold(10, 100).is_ok());
        assert!(check_failure_threshold(11, 100).is_err());
        assert!(check_failure_threshold(0, 0).is_ok());
    }
}
