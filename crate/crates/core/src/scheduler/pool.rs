use std::ops::Range;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::{exec, SchedulerError};
use crate::graph::{NodeId, Op};
use crate::kernels::KernelError;
use crate::tensor::Tensor;

pub(crate) struct Task {
    pub node: NodeId,
    pub chunk: usize,
    pub worker: usize,
    pub op: Op,
    pub inputs: Vec<Arc<Tensor>>,
    pub rows: Option<Range<usize>>,
    /// Modeled wait before compute starts.
    pub delay: Duration,
    /// Factor applied to measured compute time.
    pub stretch: f64,
}

pub(crate) struct Done {
    pub node: NodeId,
    pub chunk: usize,
    pub worker: usize,
    pub start_ns: u64,
    pub end_ns: u64,
    pub result: Result<Tensor, KernelError>,
}

pub(crate) struct Pool {
    senders: Vec<Sender<Task>>,
    results: Mutex<Receiver<Done>>,
    handles: Vec<JoinHandle<()>>,
}

impl Pool {
    pub fn new(n: usize, epoch: Instant) -> Self {
        let (done_tx, done_rx) = channel();
        let mut senders = Vec::with_capacity(n);
        let mut handles = Vec::with_capacity(n);
        for worker in 0..n {
            let (tx, rx) = channel::<Task>();
            let done_tx = done_tx.clone();
            let handle = thread::Builder::new()
                .name(format!("sched-worker-{worker}"))
                .spawn(move || {
                    for task in rx {
                        if done_tx.send(perform(task, worker, epoch)).is_err() {
                            break;
                        }
                    }
                })
                .expect("spawn scheduler worker");
            senders.push(tx);
            handles.push(handle);
        }
        Pool {
            senders,
            results: Mutex::new(done_rx),
            handles,
        }
    }

    /// Sends every task to its worker and waits for all of them.
    pub fn run_all(&self, tasks: Vec<Task>) -> Result<Vec<Done>, SchedulerError> {
        let results = self.results.lock().unwrap_or_else(|e| e.into_inner());
        let count = tasks.len();
        for task in tasks {
            let w = task.worker % self.senders.len();
            self.senders[w].send(task).map_err(|_| SchedulerError::PoolClosed)?;
        }
        (0..count)
            .map(|_| results.recv().map_err(|_| SchedulerError::PoolClosed))
            .collect()
    }
}

impl Drop for Pool {
    fn drop(&mut self) {
        self.senders.clear();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

pub(crate) fn perform(task: Task, worker: usize, epoch: Instant) -> Done {
    let start_ns = epoch.elapsed().as_nanos() as u64;
    wait(task.delay);
    let t0 = Instant::now();
    let result = exec::execute(&task.op, &task.inputs, task.rows);
    if task.stretch > 1.0 {
        wait(t0.elapsed().mul_f64(task.stretch - 1.0));
    }
    Done {
        node: task.node,
        chunk: task.chunk,
        worker,
        start_ns,
        end_ns: epoch.elapsed().as_nanos() as u64,
        result,
    }
}

/// Waits `d`, sleeping for the bulk and spinning for the remainder so short
/// delays stay accurate.
pub(crate) fn wait(d: Duration) {
    if d.is_zero() {
        return;
    }
    let until = Instant::now() + d;
    const SPIN: Duration = Duration::from_micros(200);
    if d > SPIN {
        thread::sleep(d - SPIN);
    }
    while Instant::now() < until {
        std::hint::spin_loop();
    }
}
