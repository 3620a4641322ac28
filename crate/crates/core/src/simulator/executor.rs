// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! A minimal single-threaded executor. Tasks are polled in FIFO order of
//! their wake-ups, so a run is a deterministic function of its inputs.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;
use std::sync::{Arc, Mutex};
use std::task::Context;

use futures::task::{waker, ArcWake};

type Task = Pin<Box<dyn Future<Output = ()>>>;

struct TaskWaker {
    id: u64,
    ready: Arc<Mutex<VecDeque<u64>>>,
}

impl ArcWake for TaskWaker {
    fn wake_by_ref(arc_self: &Arc<Self>) {
        arc_self.ready.lock().expect("ready queue").push_back(arc_self.id);
    }
}

#[derive(Default)]
pub struct Executor {
    tasks: RefCell<BTreeMap<u64, Task>>,
    ready: Arc<Mutex<VecDeque<u64>>>,
    next_id: RefCell<u64>,
}

/// The eventual output of a spawned task.
pub struct JoinHandle<T>(Rc<RefCell<Option<T>>>);

impl<T> JoinHandle<T> {
    pub fn is_finished(&self) -> bool {
        self.0.borrow().is_some()
    }

    pub fn take(&self) -> Option<T> {
        self.0.borrow_mut().take()
    }
}

impl Executor {
    pub fn spawn<T: 'static>(&self, future: impl Future<Output = T> + 'static) -> JoinHandle<T> {
        let slot = Rc::new(RefCell::new(None));
        let output = slot.clone();
        let task: Task = Box::pin(async move {
            let value = future.await;
            *output.borrow_mut() = Some(value);
        });
        let id = {
            let mut next = self.next_id.borrow_mut();
            *next += 1;
            *next
        };
        self.tasks.borrow_mut().insert(id, task);
        self.ready.lock().expect("ready queue").push_back(id);
        JoinHandle(slot)
    }

    /// Polls ready tasks until none is ready. Returns whether any ran.
    pub fn run_until_stalled(&self) -> bool {
        let mut progressed = false;
        loop {
            let next = self.ready.lock().expect("ready queue").pop_front();
            let Some(id) = next else {
                return progressed;
            };
            // A task may be woken several times before it is polled, and
            // finished tasks may still be woken by stale wakers.
            let Some(mut task) = self.tasks.borrow_mut().remove(&id) else {
                continue;
            };
            progressed = true;
            let task_waker = waker(Arc::new(TaskWaker {
                id,
                ready: self.ready.clone(),
            }));
            let mut cx = Context::from_waker(&task_waker);
            if task.as_mut().poll(&mut cx).is_pending() {
                self.tasks.borrow_mut().insert(id, task);
            }
        }
    }

    pub fn live_tasks(&self) -> usize {
        self.tasks.borrow().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::task::Poll;

    #[test]
    fn runs_tasks_to_completion() {
        let executor = Executor::default();
        let a = executor.spawn(async { 1 + 1 });
        let b = executor.spawn(async { "done" });
        assert!(executor.run_until_stalled());
        assert_eq!(a.take(), Some(2));
        assert_eq!(b.take(), Some("done"));
        assert_eq!(executor.live_tasks(), 0);
    }

    #[test]
    fn pending_tasks_wait_for_wakeups() {
        let executor = Executor::default();
        let gate: Rc<RefCell<(bool, Option<std::task::Waker>)>> = Rc::default();
        let inner = gate.clone();
        let handle = executor.spawn(std::future::poll_fn(move |cx| {
            let mut gate = inner.borrow_mut();
            if gate.0 {
                Poll::Ready(())
            } else {
                gate.1 = Some(cx.waker().clone());
                Poll::Pending
            }
        }));
        executor.run_until_stalled();
        assert!(!handle.is_finished());
        assert!(!executor.run_until_stalled());
        gate.borrow_mut().0 = true;
        gate.borrow_mut().1.take().unwrap().wake();
        executor.run_until_stalled();
        assert!(handle.is_finished());
    }
}
