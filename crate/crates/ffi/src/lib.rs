//! C ABI over featurevo.
//!
//! Every function returns an [`FvStatus`]. On failure the message is kept
//! per thread and can be copied out with [`fv_last_error`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use featurevo::envs::{EnvSource, Environment};
use featurevo::es::centered_rank_shape;
use featurevo::experiment::{run_experiment, ExperimentConfig, RunOptions};
use featurevo::features::{ExtractorDims, FeatureExtractor, FeatureKind, RolloutState};
use featurevo::stats::{mann_whitney_u, SampleSet};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Env = 4,
    Feature = 5,
    Stats = 6,
    Experiment = 7,
    Io = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FvMannWhitney {
    pub u_a: f64,
    pub u_b: f64,
    pub p: f64,
    /// 1 when the exact null distribution was used.
    pub exact: i32,
}

pub struct FvEnv {
    env: Box<dyn Environment>,
}

pub struct FvExtractor {
    fx: FeatureExtractor,
    rollout: RolloutState,
}

struct Failure(FvStatus, String);

impl Failure {
    fn new(status: FvStatus, message: impl ToString) -> Self {
        Failure(status, message.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FvStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure(FvStatus::Panic, msg))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            FvStatus::Ok
        }
        Err(Failure(status, msg)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = msg);
            status
        }
    }
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure::new(FvStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| Failure::new(FvStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::new(FvStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn write_out(src: &[f64], dst: *mut f64, cap: usize) -> Result<(), Failure> {
    if cap < src.len() {
        return Err(Failure::new(FvStatus::BufferTooSmall, format!("buffer holds {cap} values, need {}", src.len())));
    }
    if src.is_empty() {
        return Ok(());
    }
    if dst.is_null() {
        return Err(Failure::new(FvStatus::NullPointer, "output buffer is null"));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

unsafe fn handle<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| Failure::new(FvStatus::NullPointer, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(FvStatus::NullPointer, "output pointer is null"));
    }
    out.write(value);
    Ok(())
}

/// NUL-terminated library version; static storage.
#[no_mangle]
pub extern "C" fn fv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `cap > 0`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn fv_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Opens `racecar`, `swingup`, `echo`, `cmd:<command>` or `tcp:<addr>`.
/// `max_steps` of 0 keeps the environment default.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fv_env_new(name: *const c_char, max_steps: usize, out: *mut *mut FvEnv) -> FvStatus {
    guard(|| {
        let name = text(name, "name")?;
        let source =
            EnvSource::parse(name, (max_steps > 0).then_some(max_steps)).map_err(|e| Failure::new(FvStatus::InvalidArgument, e))?;
        let env = source.make().map_err(|e| Failure::new(FvStatus::Env, e))?;
        put(out, Box::into_raw(Box::new(FvEnv { env })))
    })
}

/// # Safety
/// `env` must be null or a handle from [`fv_env_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fv_env_free(env: *mut FvEnv) {
    if !env.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(env))));
    }
}

/// # Safety
/// `env` must be a live handle; the outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fv_env_dims(env: *const FvEnv, obs_dim: *mut usize, act_dim: *mut usize, max_steps: *mut usize) -> FvStatus {
    guard(|| {
        let env = handle(env.cast_mut(), "env")?;
        let spec = env.env.spec();
        put(obs_dim, spec.obs_dim)?;
        put(act_dim, spec.act_dim)?;
        put(max_steps, spec.max_steps)
    })
}

/// Starts an episode and writes the first observation into `obs`.
///
/// # Safety
/// `env` must be a live handle and `obs` valid for `obs_cap` values.
#[no_mangle]
pub unsafe extern "C" fn fv_env_reset(env: *mut FvEnv, seed: u64, obs: *mut f64, obs_cap: usize) -> FvStatus {
    guard(|| {
        let env = handle(env, "env")?;
        let first = env.env.reset(seed).map_err(|e| Failure::new(FvStatus::Env, e))?;
        write_out(&first, obs, obs_cap)
    })
}

/// Applies one action; `done` is set to 1 when the episode ended.
///
/// # Safety
/// `env` must be a live handle, `action` valid for `act_len` values, `obs`
/// for `obs_cap` values, and `reward`/`done` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fv_env_step(
    env: *mut FvEnv,
    action: *const f64,
    act_len: usize,
    obs: *mut f64,
    obs_cap: usize,
    reward: *mut f64,
    done: *mut i32,
) -> FvStatus {
    guard(|| {
        let env = handle(env, "env")?;
        let action = slice(action, act_len, "action")?;
        let t = env.env.step(action).map_err(|e| Failure::new(FvStatus::Env, e))?;
        write_out(&t.obs, obs, obs_cap)?;
        put(reward, t.reward)?;
        put(done, t.done as i32)
    })
}

/// Fresh, untrained extractor. `kind` is one of `ete`, `ae`, `ae-fm`,
/// `sts`, `fsts`; sizes of 0 keep the defaults.
///
/// # Safety
/// `kind` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fv_extractor_new(
    kind: *const c_char,
    obs_dim: usize,
    act_dim: usize,
    latent: usize,
    hidden: usize,
    seed: u64,
    out: *mut *mut FvExtractor,
) -> FvStatus {
    guard(|| {
        let kind: FeatureKind = text(kind, "kind")?.parse().map_err(|e| Failure::new(FvStatus::InvalidArgument, e))?;
        let mut dims = ExtractorDims::default();
        if latent > 0 {
            dims.latent = latent;
        }
        if hidden > 0 {
            dims.hidden = hidden;
        }
        let fx = FeatureExtractor::new(kind, obs_dim, act_dim, dims, seed).map_err(|e| Failure::new(FvStatus::Feature, e))?;
        let rollout = fx.new_rollout();
        put(out, Box::into_raw(Box::new(FvExtractor { fx, rollout })))
    })
}

/// Loads an extractor written by `featurevo pretrain`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fv_extractor_load(path: *const c_char, out: *mut *mut FvExtractor) -> FvStatus {
    guard(|| {
        let path = PathBuf::from(text(path, "path")?);
        let bytes = std::fs::read(&path).map_err(|e| Failure::new(FvStatus::Io, format!("{}: {e}", path.display())))?;
        let fx = FeatureExtractor::from_bytes(&bytes).map_err(|e| Failure::new(FvStatus::Feature, e))?;
        let rollout = fx.new_rollout();
        put(out, Box::into_raw(Box::new(FvExtractor { fx, rollout })))
    })
}

/// # Safety
/// `fx` must be null or a live extractor handle.
#[no_mangle]
pub unsafe extern "C" fn fv_extractor_free(fx: *mut FvExtractor) {
    if !fx.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(fx))));
    }
}

/// # Safety
/// `fx` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fv_extractor_feature_dim(fx: *const FvExtractor, out: *mut usize) -> FvStatus {
    guard(|| {
        let fx = handle(fx.cast_mut(), "extractor")?;
        put(out, fx.fx.feature_dim())
    })
}

/// Clears the per-episode state; call at every environment reset.
///
/// # Safety
/// `fx` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fv_extractor_reset(fx: *mut FvExtractor) -> FvStatus {
    guard(|| {
        handle(fx, "extractor")?.rollout.reset();
        Ok(())
    })
}

/// Features for one observation. `prev_action` may be null on the first step.
///
/// # Safety
/// `fx` must be a live handle, `obs` valid for `obs_len` values,
/// `prev_action` null or valid for `act_len`, `out` valid for `out_cap`.
#[no_mangle]
pub unsafe extern "C" fn fv_extractor_extract(
    fx: *mut FvExtractor,
    obs: *const f64,
    obs_len: usize,
    prev_action: *const f64,
    act_len: usize,
    out: *mut f64,
    out_cap: usize,
) -> FvStatus {
    guard(|| {
        let fx = handle(fx, "extractor")?;
        let obs = slice(obs, obs_len, "obs")?;
        let prev = if prev_action.is_null() { None } else { Some(slice(prev_action, act_len, "prev_action")?) };
        let z = fx.fx.extract(&mut fx.rollout, obs, prev).map_err(|e| Failure::new(FvStatus::Feature, e))?;
        write_out(&z, out, out_cap)
    })
}

/// Centered ranks `rank / (n - 1) - 0.5`, ties broken by index.
///
/// # Safety
/// `fitness` and `out` must be valid for `n` values.
#[no_mangle]
pub unsafe extern "C" fn fv_centered_ranks(fitness: *const f64, n: usize, out: *mut f64) -> FvStatus {
    guard(|| {
        let u = centered_rank_shape(slice(fitness, n, "fitness")?).map_err(|e| Failure::new(FvStatus::InvalidArgument, e))?;
        write_out(&u, out, n)
    })
}

/// Two-sided Mann-Whitney U test between samples `a` and `b`.
///
/// # Safety
/// `a`/`b` must be valid for `na`/`nb` values and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fv_mann_whitney(a: *const f64, na: usize, b: *const f64, nb: usize, out: *mut FvMannWhitney) -> FvStatus {
    guard(|| {
        let stats = |e| Failure::new(FvStatus::Stats, e);
        let a = SampleSet::new("a", slice(a, na, "a")?.to_vec()).map_err(stats)?;
        let b = SampleSet::new("b", slice(b, nb, "b")?.to_vec()).map_err(stats)?;
        let r = mann_whitney_u(&a, &b).map_err(stats)?;
        put(out, FvMannWhitney { u_a: r.u_a, u_b: r.u_b, p: r.p, exact: r.exact as i32 })
    })
}

/// Runs one experiment from a `key = value` configuration (the format of
/// `config.cfg`). With a non-null `out_dir` the run log and checkpoints are
/// written there and an existing checkpoint is resumed. `final_best` may be
/// null.
///
/// # Safety
/// `config` must be a NUL-terminated string; `out_dir` null or one.
#[no_mangle]
pub unsafe extern "C" fn fv_run_experiment(
    config: *const c_char,
    workers: usize,
    out_dir: *const c_char,
    final_best: *mut f64,
) -> FvStatus {
    guard(|| {
        let config = ExperimentConfig::from_text(text(config, "config")?).map_err(|e| Failure::new(FvStatus::InvalidArgument, e))?;
        let out_dir = if out_dir.is_null() { None } else { Some(PathBuf::from(text(out_dir, "out_dir")?)) };
        let resume = out_dir.is_some();
        let opts = RunOptions { workers: workers.max(1), out_dir, checkpoint_every: 10, progress: false };
        let log = run_experiment(config, &opts, resume).map_err(|e| Failure::new(FvStatus::Experiment, e))?;
        if !final_best.is_null() {
            final_best.write(log.final_best().unwrap_or(f64::NAN));
        }
        Ok(())
    })
}
