//! Scheduling hooks placed in front of every shared-memory step of the queue.
//!
//! Outside of the deterministic driver these are no-ops: a single thread-local
//! read. Inside a driver-owned coroutine, [`yield_point`] suspends the current
//! handle so the driver can pick which handle takes the next atomic step, and
//! [`linearize`] stamps the step at which an operation takes effect.

use std::cell::Cell;
use std::ptr;

use corosensei::Yielder;

/// The shared step a handle is about to perform when it yields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Site {
    /// Load of the published block array pointer.
    SharedLoad,
    /// Compare-and-swap on the published block array pointer.
    SharedCas,
    /// Test-and-set on an item's deletion mark.
    Take,
    /// Owner write of its block slots and size.
    DistPublish,
    /// Spy read of a victim's size or block slot.
    SpyRead,
}

/// What a linearization stamp stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lin {
    /// An insert became reachable (dist publish or shared CAS).
    Insert,
    /// A delete verified its snapshot of the shared array. The last such stamp
    /// of an operation is its linearization point.
    DeleteVerify,
}

/// Messages a simulated handle hands to the driver.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Event {
    Yield(Site),
}

pub(crate) type SimYielder = Yielder<(), Event>;

/// Per-coroutine instrumentation sink, owned by the driver.
pub(crate) trait Recorder {
    fn linearize(&self, lin: Lin);
}

#[derive(Clone, Copy)]
struct Active {
    yielder: *const SimYielder,
    recorder: *const dyn Recorder,
}

thread_local! {
    static ACTIVE: Cell<Option<Active>> = const { Cell::new(None) };
}

/// Marks the upcoming shared step. Returns immediately unless running under
/// the deterministic driver.
#[inline]
pub fn yield_point(site: Site) {
    let Some(active) = ACTIVE.with(Cell::get) else {
        return;
    };
    ACTIVE.with(|a| a.set(None));
    // SAFETY: the driver installs pointers that outlive the coroutine body and
    // clears them whenever control returns to it.
    unsafe { (*active.yielder).suspend(Event::Yield(site)) };
    ACTIVE.with(|a| a.set(Some(active)));
}

/// Records a linearization stamp for the running operation.
#[inline]
pub fn linearize(lin: Lin) {
    if let Some(active) = ACTIVE.with(Cell::get) {
        // SAFETY: see `yield_point`.
        unsafe { (*active.recorder).linearize(lin) };
    }
}

/// Installs the hooks for the coroutine body currently running.
///
/// # Safety
/// Both references must stay valid until [`uninstall`] is called or the
/// coroutine suspends; `yield_point` reinstalls them on resume.
pub(crate) unsafe fn install(yielder: &SimYielder, recorder: &dyn Recorder) {
    let recorder: *const (dyn Recorder + '_) = recorder;
    // SAFETY: lifetime erased; the caller guarantees validity.
    let recorder: *const (dyn Recorder + 'static) = unsafe { std::mem::transmute(recorder) };
    ACTIVE.with(|a| {
        a.set(Some(Active {
            yielder: ptr::from_ref(yielder),
            recorder,
        }))
    });
}

pub(crate) fn uninstall() {
    ACTIVE.with(|a| a.set(None));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hooks_are_inert_outside_the_driver() {
        yield_point(Site::SharedCas);
        linearize(Lin::Insert);
    }
}
