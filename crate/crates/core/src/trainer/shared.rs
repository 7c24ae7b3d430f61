//! Parameters shared between asynchronous workers.
//!
//! Each named tensor sits behind its own mutex together with its Adam
//! moments, so one optimizer update of one tensor is atomic. Nothing
//! coordinates across tensors: a snapshot taken concurrently with an update
//! can mix tensor versions. That torn-read behaviour is the asynchronous
//! training contract, not a bug; with one worker it never occurs.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

use crate::autodiff::{adam_tensor_step, AdamHyper, Gradients, ParamSet, Tensor};
use crate::error::{Error, Result};

struct CellInner {
    data: Vec<f32>,
    m: Vec<f32>,
    v: Vec<f32>,
}

struct Cell {
    name: String,
    shape: Vec<usize>,
    inner: Mutex<CellInner>,
}

/// Private Adam moments for a worker running with `shared_adam` off.
pub struct LocalMoments {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

pub struct SharedTrainingState {
    cells: Vec<Cell>,
    hyper: AdamHyper,
    lr: f64,
    shared_adam: bool,
    /// Bias-correction step count of the shared moments.
    adam_t: AtomicU64,
    env_steps: AtomicU64,
    version: AtomicU64,
    stop: AtomicBool,
}

impl SharedTrainingState {
    pub fn new(params: ParamSet<f32>, lr: f64, hyper: AdamHyper, shared_adam: bool) -> Self {
        let cells = params
            .iter()
            .map(|(name, tensor)| Cell {
                name: name.clone(),
                shape: tensor.shape.clone(),
                inner: Mutex::new(CellInner {
                    m: vec![0.0; tensor.numel()],
                    v: vec![0.0; tensor.numel()],
                    data: tensor.data.clone(),
                }),
            })
            .collect();
        SharedTrainingState {
            cells,
            hyper,
            lr,
            shared_adam,
            adam_t: AtomicU64::new(0),
            env_steps: AtomicU64::new(0),
            version: AtomicU64::new(0),
            stop: AtomicBool::new(false),
        }
    }

    pub fn local_moments(&self) -> LocalMoments {
        LocalMoments {
            m: self.cells.iter().map(|c| vec![0.0; lock(&c.inner).data.len()]).collect(),
            v: self.cells.iter().map(|c| vec![0.0; lock(&c.inner).data.len()]).collect(),
            t: 0,
        }
    }

    pub fn snapshot(&self) -> ParamSet<f32> {
        let mut set = ParamSet::new();
        for cell in &self.cells {
            let inner = lock(&cell.inner);
            set.insert(cell.name.clone(), Tensor::new(cell.shape.clone(), inner.data.clone()));
        }
        set
    }

    /// One Adam update from one worker's gradients. Pass the worker's own
    /// moments when the run is configured with per-worker Adam.
    pub fn apply(
        &self,
        grads: &Gradients<f32>,
        local: Option<&mut LocalMoments>,
    ) -> Result<()> {
        match (self.shared_adam, local) {
            (true, None) => {
                let t = self.adam_t.fetch_add(1, Ordering::SeqCst) + 1;
                for cell in &self.cells {
                    let g = expect_grad(grads, &cell.name)?;
                    let mut inner = lock(&cell.inner);
                    let inner = &mut *inner;
                    adam_tensor_step(&mut inner.data, g, &mut inner.m, &mut inner.v, self.lr, t, &self.hyper);
                }
            }
            (false, Some(local)) => {
                local.t += 1;
                for (i, cell) in self.cells.iter().enumerate() {
                    let g = expect_grad(grads, &cell.name)?;
                    let mut inner = lock(&cell.inner);
                    adam_tensor_step(
                        &mut inner.data,
                        g,
                        &mut local.m[i],
                        &mut local.v[i],
                        self.lr,
                        local.t,
                        &self.hyper,
                    );
                }
            }
            (true, Some(_)) => {
                return Err(Error::contract("local moments passed to a shared-adam run"))
            }
            (false, None) => {
                return Err(Error::contract("per-worker adam needs the worker's moments"))
            }
        }
        self.version.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }

    pub fn add_env_steps(&self, n: u64) -> u64 {
        self.env_steps.fetch_add(n, Ordering::SeqCst) + n
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps.load(Ordering::SeqCst)
    }

    pub fn version(&self) -> u64 {
        self.version.load(Ordering::SeqCst)
    }

    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    pub fn stop_requested(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }
}

fn lock(m: &Mutex<CellInner>) -> std::sync::MutexGuard<'_, CellInner> {
    // a poisoned lock means another worker panicked mid-update; the data is
    // still per-tensor consistent, so training may continue
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn expect_grad<'a>(grads: &'a Gradients<f32>, name: &str) -> Result<&'a [f32]> {
    grads
        .get(name)
        .ok_or_else(|| Error::contract(format!("no gradient for shared parameter {name}")))
}
