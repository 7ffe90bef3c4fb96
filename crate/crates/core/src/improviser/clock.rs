use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

/// Session time source. `now` is measured from the session origin.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    /// Returns once `now() >= t`.
    fn sleep_until(&self, t: Duration);
    /// Virtual clocks jump; real ones wait.
    fn is_virtual(&self) -> bool;
}

/// Wall clock. Sleeps coarsely, then yields until the target instant.
#[derive(Debug, Clone, Copy)]
pub struct RealClock {
    origin: Instant,
}

const SPIN_WINDOW: Duration = Duration::from_micros(1500);

impl RealClock {
    pub fn start() -> Self {
        RealClock { origin: Instant::now() }
    }
}

impl Clock for RealClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep_until(&self, t: Duration) {
        let target = self.origin + t;
        loop {
            let now = Instant::now();
            if now >= target {
                return;
            }
            let left = target - now;
            if RT_THREAD.get() {
                // a real-time thread is woken promptly; spinning would starve the worker
                thread::sleep(left);
            } else if left > SPIN_WINDOW {
                thread::sleep(left - SPIN_WINDOW);
            } else {
                thread::yield_now();
            }
        }
    }

    fn is_virtual(&self) -> bool {
        false
    }
}

thread_local! {
    static RT_THREAD: Cell<bool> = const { Cell::new(false) };
}

/// Fixed-priority FIFO scheduling for the calling thread while held.
/// The previous policy comes back on drop.
pub struct RealtimeGuard {
    #[cfg(unix)]
    saved: (libc::c_int, libc::sched_param),
}

impl RealtimeGuard {
    pub const PRIORITY: i32 = 10;

    /// `None` when the platform or the process limits refuse it.
    #[cfg(unix)]
    pub fn acquire() -> Option<Self> {
        // SAFETY: plain calls on the current thread with valid out-pointers.
        unsafe {
            let me = libc::pthread_self();
            let mut policy = 0;
            let mut saved: libc::sched_param = std::mem::zeroed();
            if libc::pthread_getschedparam(me, &mut policy, &mut saved) != 0 {
                return None;
            }
            let mut p: libc::sched_param = std::mem::zeroed();
            p.sched_priority = Self::PRIORITY;
            if libc::pthread_setschedparam(me, libc::SCHED_FIFO, &p) != 0 {
                return None;
            }
            RT_THREAD.set(true);
            Some(RealtimeGuard { saved: (policy, saved) })
        }
    }

    #[cfg(not(unix))]
    pub fn acquire() -> Option<Self> {
        None
    }
}

impl Drop for RealtimeGuard {
    fn drop(&mut self) {
        RT_THREAD.set(false);
        // SAFETY: restores the parameters read in `acquire` on the same thread.
        #[cfg(unix)]
        unsafe {
            libc::pthread_setschedparam(libc::pthread_self(), self.saved.0, &self.saved.1);
        }
    }
}

/// Simulated clock that jumps straight to every requested instant.
#[derive(Debug, Default)]
pub struct VirtualClock {
    nanos: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::Acquire))
    }

    fn sleep_until(&self, t: Duration) {
        self.nanos.fetch_max(t.as_nanos() as u64, Ordering::AcqRel);
    }

    fn is_virtual(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_never_goes_back() {
        let c = VirtualClock::new();
        c.sleep_until(Duration::from_millis(40));
        c.sleep_until(Duration::from_millis(10));
        assert_eq!(c.now(), Duration::from_millis(40));
    }

    #[test]
    fn real_clock_wakes_on_time() {
        let c = RealClock::start();
        for k in 1..=5 {
            let t = Duration::from_millis(10 * k);
            c.sleep_until(t);
            let late = c.now() - t;
            assert!(late < Duration::from_millis(5), "woke {late:?} late");
        }
    }

    #[test]
    fn realtime_guard_restores_the_thread() {
        std::thread::spawn(|| {
            if let Some(g) = RealtimeGuard::acquire() {
                assert!(RT_THREAD.get());
                let c = RealClock::start();
                c.sleep_until(Duration::from_millis(5));
                assert!(c.now() >= Duration::from_millis(5));
                drop(g);
            }
            assert!(!RT_THREAD.get());
        })
        .join()
        .unwrap();
    }
}
