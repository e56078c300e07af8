//! The per-frame animation loop must not touch the heap once its output
//! buffers exist.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;

use splatar_core::synthetic;
use splatar_core::{animate, animate_serial, PosedGaussianSet};

struct Counting;

thread_local! {
    static ARMED: Cell<bool> = const { Cell::new(false) };
    static COUNT: Cell<usize> = const { Cell::new(0) };
}

fn note() {
    if ARMED.with(Cell::get) {
        COUNT.with(|c| c.set(c.get() + 1));
    }
}

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        note();
        System.alloc(layout)
    }
    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout)
    }
    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        note();
        System.alloc_zeroed(layout)
    }
    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        note();
        System.realloc(ptr, layout, new_size)
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

fn counted(f: impl FnOnce()) -> usize {
    COUNT.with(|c| c.set(0));
    ARMED.with(|a| a.set(true));
    f();
    ARMED.with(|a| a.set(false));
    COUNT.with(Cell::get)
}

#[test]
fn animation_does_not_allocate() {
    let a = synthetic::random_avatar(5_000, 8, 5, 1);
    let mut r = synthetic::rng(4);
    let params: Vec<_> = (0..10).map(|_| synthetic::random_params(&mut r, 5, 8, 0.5)).collect();
    let mut out = PosedGaussianSet::for_avatar(&a);

    let n = counted(|| {
        for (theta, phi) in &params {
            animate_serial(&a, theta, phi, &mut out).unwrap();
        }
    });
    assert_eq!(n, 0, "serial animation allocated {n} times");

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let n = counted(|| {
            for (theta, phi) in &params {
                animate(&a, theta, phi, &mut out).unwrap();
            }
        });
        assert_eq!(n, 0, "single-thread animate allocated {n} times");
    });
}
