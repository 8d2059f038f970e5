//! C interface to the tabular parts of `relaxdice`.
//!
//! Objects are opaque handles created by `rdx_*_new`/`rdx_*_load` style
//! functions and released with the matching `rdx_*_free`. Every fallible
//! function returns an [`RdxStatus`]; on failure the message is available
//! from [`rdx_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use relaxdice::data::{Role, TransitionDataset};
use relaxdice::dice::{self, BetaMode, Estimator, SolverConfig, Variant, DEFAULT_EXP_CLIP};
use relaxdice::divergence::{Generator, RelaxedDivergenceSpec};
use relaxdice::extraction::{extract_tabular, Weighting};
use relaxdice::mdp::{self, GridSpec, Gridworld, TabularMdp, TabularPolicy, Termination};
use relaxdice::ratio::{tabular_ratio_from_data, DEFAULT_CLIP};
use relaxdice::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdxStatus {
    Ok = 0,
    InvalidArgument = 1,
    ShapeMismatch = 2,
    SupportViolation = 3,
    Numerical = 4,
    TrainingFailure = 5,
    Io = 6,
    Format = 7,
    NullPointer = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdxVariant {
    RelaxDice = 0,
    RelaxDiceDrc = 1,
    DemoDiceLimit = 2,
}

impl From<RdxVariant> for Variant {
    fn from(v: RdxVariant) -> Self {
        match v {
            RdxVariant::RelaxDice => Variant::RelaxDice,
            RdxVariant::RelaxDiceDrc => Variant::RelaxDiceDrc,
            RdxVariant::DemoDiceLimit => Variant::DemoDiceLimit,
        }
    }
}

pub struct RdxMdp {
    mdp: TabularMdp,
    reward: Option<Vec<f64>>,
}

pub struct RdxPolicy(TabularPolicy);

pub struct RdxDataset(TransitionDataset);

pub struct RdxSolution {
    values: Vec<f64>,
    omega: Vec<f64>,
    policy: TabularPolicy,
    beta: f64,
    loss: f64,
    converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> RdxStatus {
    match err {
        Error::InvalidArgument(_) | Error::Validation(_) => RdxStatus::InvalidArgument,
        Error::ShapeMismatch(_) => RdxStatus::ShapeMismatch,
        Error::SupportViolation { .. } => RdxStatus::SupportViolation,
        Error::Numerical(_) | Error::StaleCache => RdxStatus::Numerical,
        Error::TrainingFailure { .. } => RdxStatus::TrainingFailure,
        Error::Io(_) => RdxStatus::Io,
        Error::Format(_) | Error::Checksum { .. } | Error::Version { .. } => RdxStatus::Format,
    }
}

struct Fail(RdxStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RdxStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RdxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RdxStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RdxStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), Fail> {
    if len < src.len() {
        return Err(Fail(RdxStatus::BufferTooSmall, format!("buffer holds {len}, need {}", src.len())));
    }
    if src.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(null("output buffer"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = value;
    Ok(())
}

unsafe fn boxed<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    put(out, Box::into_raw(Box::new(value)))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(RdxStatus::InvalidArgument, "path is not UTF-8".into()))
}

/// Message for the most recent failure on this thread; empty after a
/// success. Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn rdx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rdx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Relaxed KL generator at `u` for relaxation level `beta > 1`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rdx_f_tilde(u: f64, beta: f64, out: *mut f64) -> RdxStatus {
    guard(|| {
        let spec = RelaxedDivergenceSpec::new(Generator::Kl, beta)?;
        put(out, spec.f_tilde(u)?)
    })
}

/// Closed-form inner maximizer `ω*` and value `h` for the relaxed objective.
///
/// # Safety
/// `omega` and `h` must be valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn rdx_omega_star_relaxdice(e: f64, alpha: f64, beta: f64, omega: *mut f64, h: *mut f64) -> RdxStatus {
    guard(|| {
        let cf = dice::omega_star_relaxdice(e, alpha, &RelaxedDivergenceSpec::new(Generator::Kl, beta)?, DEFAULT_EXP_CLIP)?;
        put(omega, cf.omega)?;
        put(h, cf.h)
    })
}

/// Closed-form inner maximizer and value for the density-ratio corrected
/// objective.
///
/// # Safety
/// `omega` and `h` must be valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn rdx_omega_star_drc(
    e: f64,
    log_r_hat: f64,
    alpha: f64,
    beta: f64,
    omega: *mut f64,
    h: *mut f64,
) -> RdxStatus {
    guard(|| {
        let spec = RelaxedDivergenceSpec::new(Generator::Kl, beta)?;
        let cf = dice::omega_star_drc(e, log_r_hat, alpha, &spec, DEFAULT_EXP_CLIP)?;
        put(omega, cf.omega)?;
        put(h, cf.h)
    })
}

/// Closed form of the β → 0 limit.
///
/// # Safety
/// `omega` and `h` must be valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn rdx_omega_star_demodice(e: f64, alpha: f64, omega: *mut f64, h: *mut f64) -> RdxStatus {
    guard(|| {
        let cf = dice::omega_star_demodice(e, alpha, DEFAULT_EXP_CLIP)?;
        put(omega, cf.omega)?;
        put(h, cf.h)
    })
}

/// Builds an MDP from `transition[s][a][s']` (row-major, length
/// `ns * na * ns`) and `initial[s]`.
///
/// # Safety
/// The arrays must hold the stated number of elements; `out` must be valid
/// for one write.
#[no_mangle]
pub unsafe extern "C" fn rdx_mdp_new(
    num_states: usize,
    num_actions: usize,
    transition: *const f64,
    initial: *const f64,
    discount: f64,
    out: *mut *mut RdxMdp,
) -> RdxStatus {
    guard(|| {
        let t = slice(transition, num_states * num_actions * num_states, "transition")?;
        let p0 = slice(initial, num_states, "initial")?;
        let mdp = TabularMdp::new(num_states, num_actions, t.to_vec(), p0.to_vec(), discount)?;
        boxed(out, RdxMdp { mdp, reward: None })
    })
}

/// Gridworld with the goal in the far corner, uniform starts and a reward
/// attached for [`rdx_expected_return`].
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rdx_mdp_gridworld(
    width: usize,
    height: usize,
    slip: f64,
    discount: f64,
    out: *mut *mut RdxMdp,
) -> RdxStatus {
    guard(|| {
        let spec = GridSpec {
            width,
            height,
            goal: (width.saturating_sub(1), height.saturating_sub(1)),
            slip,
            discount,
            ..GridSpec::default()
        };
        let world = Gridworld::new(spec)?;
        boxed(out, RdxMdp { mdp: world.mdp().clone(), reward: Some(world.reward().to_vec()) })
    })
}

/// Loads an MDP written by `relaxdice gen-data`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rdx_mdp_load(file: *const c_char, out: *mut *mut RdxMdp) -> RdxStatus {
    guard(|| {
        let mdp = relaxdice::data::load_mdp(path(file)?)?;
        boxed(out, RdxMdp { mdp, reward: None })
    })
}

/// # Safety
/// `mdp` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rdx_mdp_free(mdp: *mut RdxMdp) {
    if !mdp.is_null() {
        drop(Box::from_raw(mdp));
    }
}

/// # Safety
/// `mdp` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn rdx_mdp_num_states(mdp: *const RdxMdp) -> usize {
    mdp.as_ref().map_or(0, |m| m.mdp.num_states())
}

/// # Safety
/// `mdp` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn rdx_mdp_num_actions(mdp: *const RdxMdp) -> usize {
    mdp.as_ref().map_or(0, |m| m.mdp.num_actions())
}

/// Policy from row-major probabilities `probs[s][a]`.
///
/// # Safety
/// `probs` must hold `ns * na` elements; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rdx_policy_new(
    num_states: usize,
    num_actions: usize,
    probs: *const f64,
    out: *mut *mut RdxPolicy,
) -> RdxStatus {
    guard(|| {
        let p = slice(probs, num_states * num_actions, "probs")?;
        boxed(out, RdxPolicy(TabularPolicy::new(num_states, num_actions, p.to_vec())?))
    })
}

/// # Safety
/// `policy` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rdx_policy_free(policy: *mut RdxPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Copies the policy's probabilities into `out` (capacity `len`).
///
/// # Safety
/// `out` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn rdx_policy_probs(policy: *const RdxPolicy, out: *mut f64, len: usize) -> RdxStatus {
    guard(|| write_out(handle(policy, "policy")?.0.as_slice(), out, len))
}

/// Discounted occupancy `d(s, a)` of `policy`, row-major, `ns * na` values.
///
/// # Safety
/// Handles must be live; `out` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn rdx_occupancy(mdp: *const RdxMdp, policy: *const RdxPolicy, out: *mut f64, len: usize) -> RdxStatus {
    guard(|| {
        let d = mdp::occupancy_of_policy(&handle(mdp, "mdp")?.mdp, &handle(policy, "policy")?.0)?;
        write_out(d.as_slice(), out, len)
    })
}

/// Normalized discounted return. Uses the MDP's own reward when
/// `reward` is null (gridworlds only).
///
/// # Safety
/// Handles must be live; `reward` must be null or hold `ns * na` values
/// (`reward_len`); `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rdx_expected_return(
    mdp: *const RdxMdp,
    policy: *const RdxPolicy,
    reward: *const f64,
    reward_len: usize,
    out: *mut f64,
) -> RdxStatus {
    guard(|| {
        let m = handle(mdp, "mdp")?;
        let r = if reward.is_null() {
            m.reward.as_deref().ok_or_else(|| Fail(RdxStatus::InvalidArgument, "MDP has no reward attached".into()))?
        } else {
            slice(reward, reward_len, "reward")?
        };
        put(out, mdp::expected_return(&m.mdp, &handle(policy, "policy")?.0, r)?)
    })
}

/// Rolls out `policy` for `num_steps` transitions with geometric episode
/// termination.
///
/// # Safety
/// Handles must be live; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rdx_sample_trajectories(
    mdp: *const RdxMdp,
    policy: *const RdxPolicy,
    num_steps: usize,
    seed: u64,
    out: *mut *mut RdxDataset,
) -> RdxStatus {
    guard(|| {
        let data = mdp::sample_trajectories(
            &handle(mdp, "mdp")?.mdp,
            &handle(policy, "policy")?.0,
            num_steps,
            Termination::Geometric,
            seed,
        )?;
        boxed(out, RdxDataset(data))
    })
}

/// Loads a dataset written by `relaxdice gen-data`.
///
/// # Safety
/// `file` must be a NUL-terminated string; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rdx_dataset_load(file: *const c_char, out: *mut *mut RdxDataset) -> RdxStatus {
    guard(|| boxed(out, RdxDataset(TransitionDataset::load(path(file)?)?)))
}

/// # Safety
/// `data` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rdx_dataset_free(data: *mut RdxDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// # Safety
/// `data` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn rdx_dataset_len(data: *const RdxDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

/// Estimates ratios from counts, solves the tabular problem with the exact
/// estimator and extracts a policy. `beta <= 0` selects automatic β.
///
/// # Safety
/// Handles must be live; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rdx_solve_tabular(
    mdp: *const RdxMdp,
    expert: *const RdxDataset,
    suboptimal: *const RdxDataset,
    variant: RdxVariant,
    alpha: f64,
    beta: f64,
    out: *mut *mut RdxSolution,
) -> RdxStatus {
    guard(|| {
        let m = &handle(mdp, "mdp")?.mdp;
        let expert = handle(expert, "expert")?.0.clone().with_role(Role::Expert);
        let suboptimal = handle(suboptimal, "suboptimal")?.0.clone().with_role(Role::Suboptimal);
        let mut config = SolverConfig::new(variant.into());
        config.alpha = alpha;
        config.estimator = Estimator::ExactTabular;
        config.beta_mode = if beta <= 0.0 {
            BetaMode::Auto
        } else if beta > 1.0 {
            BetaMode::Fixed(beta)
        } else {
            BetaMode::Limit(beta)
        };
        let ratio = tabular_ratio_from_data(&expert, &suboptimal, 0.0, DEFAULT_CLIP)?;
        let sol = dice::solve(&config, &suboptimal, &ratio.log_values(), m.discount(), Some(m))?;
        let policy = extract_tabular(&suboptimal, &sol.omega_star, Weighting::SelfNormalized)?.policy;
        boxed(
            out,
            RdxSolution {
                values: sol.tabular_values().unwrap_or_default().to_vec(),
                omega: sol.omega_star.clone(),
                policy,
                beta: sol.beta,
                loss: sol.final_loss,
                converged: sol.converged,
            },
        )
    })
}

/// # Safety
/// `sol` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rdx_solution_free(sol: *mut RdxSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Number of state values (the MDP's state count).
///
/// # Safety
/// `sol` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn rdx_solution_num_values(sol: *const RdxSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.values.len())
}

/// # Safety
/// `sol` must be live; `out` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn rdx_solution_values(sol: *const RdxSolution, out: *mut f64, len: usize) -> RdxStatus {
    guard(|| write_out(&handle(sol, "solution")?.values, out, len))
}

/// Number of ω* entries (one per suboptimal record).
///
/// # Safety
/// `sol` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn rdx_solution_omega_len(sol: *const RdxSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.omega.len())
}

/// # Safety
/// `sol` must be live; `out` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn rdx_solution_omega(sol: *const RdxSolution, out: *mut f64, len: usize) -> RdxStatus {
    guard(|| write_out(&handle(sol, "solution")?.omega, out, len))
}

/// β used by the solve, the final loss, and whether the solver converged.
///
/// # Safety
/// `sol` must be live; each output pointer may be null to skip it.
#[no_mangle]
pub unsafe extern "C" fn rdx_solution_summary(
    sol: *const RdxSolution,
    beta: *mut f64,
    loss: *mut f64,
    converged: *mut bool,
) -> RdxStatus {
    guard(|| {
        let s = handle(sol, "solution")?;
        if !beta.is_null() {
            *beta = s.beta;
        }
        if !loss.is_null() {
            *loss = s.loss;
        }
        if !converged.is_null() {
            *converged = s.converged;
        }
        Ok(())
    })
}

/// Copy of the extracted policy as a new handle.
///
/// # Safety
/// `sol` must be live; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rdx_solution_policy(sol: *const RdxSolution, out: *mut *mut RdxPolicy) -> RdxStatus {
    guard(|| boxed(out, RdxPolicy(handle(sol, "solution")?.policy.clone())))
}
