use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

/// Token bucket shared by every caller holding a clone.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    inner: Arc<Mutex<Bucket>>,
    capacity: f64,
    refill_per_sec: f64,
}

#[derive(Debug)]
struct Bucket {
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    pub fn new(capacity: u32, refill_per_sec: f64) -> Self {
        assert!(capacity > 0 && refill_per_sec > 0.0);
        Self {
            inner: Arc::new(Mutex::new(Bucket {
                tokens: capacity as f64,
                last: Instant::now(),
            })),
            capacity: capacity as f64,
            refill_per_sec,
        }
    }

    /// Takes one token if available, otherwise returns how long to wait.
    pub fn try_acquire(&self) -> Result<(), Duration> {
        let mut b = self.inner.lock();
        let now = Instant::now();
        let elapsed = now.duration_since(b.last).as_secs_f64();
        b.tokens = (b.tokens + elapsed * self.refill_per_sec).min(self.capacity);
        b.last = now;
        if b.tokens >= 1.0 {
            b.tokens -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - b.tokens) / self.refill_per_sec))
        }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        while let Err(wait) = self.try_acquire() {
            std::thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_then_wait() {
        let bucket = TokenBucket::new(2, 1000.0);
        assert!(bucket.try_acquire().is_ok());
        assert!(bucket.try_acquire().is_ok());
        let shared = bucket.clone();
        // clones draw from the same bucket
        match shared.try_acquire() {
            Ok(()) => {} // refill may already have produced a token
            Err(wait) => assert!(wait <= Duration::from_millis(1)),
        }
        bucket.acquire();
    }
}
