use std::ffi::CStr;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use relaxdice_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(rdx_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn closed_forms_match_known_values() {
    let (mut w, mut h) = (0.0, 0.0);
    unsafe {
        assert_eq!(rdx_omega_star_relaxdice(3.0, 0.2, 2.0, &mut w, &mut h), RdxStatus::Ok);
        assert!((w - 1.5f64.exp()).abs() < 1e-12);
        assert!((h - 5.316656320517666).abs() < 1e-9);
        assert_eq!(rdx_omega_star_drc(3.0, 4f64.ln(), 0.2, 2.0, &mut w, &mut h), RdxStatus::Ok);
        assert!((w - 5.26652400788766).abs() < 1e-9);
        assert_eq!(rdx_omega_star_demodice(3.0, 0.2, &mut w, &mut h), RdxStatus::Ok);
        assert!((w - 1.5f64.exp()).abs() < 1e-12);
        let mut f = f64::NAN;
        assert_eq!(rdx_f_tilde(1.0, 2.0, &mut f), RdxStatus::Ok);
        assert_eq!(f, 0.0);
    }
    assert_eq!(last_error(), "");
}

#[test]
fn errors_carry_status_and_message() {
    let mut f = 0.0;
    unsafe {
        assert_eq!(rdx_f_tilde(1.0, 0.5, &mut f), RdxStatus::InvalidArgument);
        assert!(last_error().contains("beta"), "{}", last_error());
        assert_eq!(rdx_f_tilde(1.0, 2.0, ptr::null_mut()), RdxStatus::NullPointer);
        let mut mdp = ptr::null_mut();
        assert_eq!(rdx_mdp_new(2, 1, [0.5; 3].as_ptr(), [0.5, 0.5].as_ptr(), 0.9, &mut mdp), RdxStatus::InvalidArgument);
        assert!(mdp.is_null());
        let mut data = ptr::null_mut();
        let missing = c"/nonexistent/file.rdxd";
        assert_eq!(rdx_dataset_load(missing.as_ptr(), &mut data), RdxStatus::Io);
    }
}

#[test]
fn gridworld_occupancy_and_solve() {
    unsafe {
        let mut mdp = ptr::null_mut();
        assert_eq!(rdx_mdp_gridworld(4, 4, 0.1, 0.9, &mut mdp), RdxStatus::Ok);
        let (ns, na) = (rdx_mdp_num_states(mdp), rdx_mdp_num_actions(mdp));
        assert_eq!((ns, na), (17, 4));

        let uniform = vec![0.25; ns * na];
        let mut random = ptr::null_mut();
        assert_eq!(rdx_policy_new(ns, na, uniform.as_ptr(), &mut random), RdxStatus::Ok);
        let mut d = vec![0.0; ns * na];
        assert_eq!(rdx_occupancy(mdp, random, d.as_mut_ptr(), 3), RdxStatus::BufferTooSmall);
        assert_eq!(rdx_occupancy(mdp, random, d.as_mut_ptr(), d.len()), RdxStatus::Ok);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-10);

        // Any skewed policy serves as the expert here.
        let skewed: Vec<f64> = (0..ns * na).map(|i| if i % na < 2 { 0.45 } else { 0.05 }).collect();
        let mut expert_pi = ptr::null_mut();
        assert_eq!(rdx_policy_new(ns, na, skewed.as_ptr(), &mut expert_pi), RdxStatus::Ok);
        let (mut expert, mut mixed) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(rdx_sample_trajectories(mdp, expert_pi, 300, 1, &mut expert), RdxStatus::Ok);
        assert_eq!(rdx_sample_trajectories(mdp, random, 3000, 2, &mut mixed), RdxStatus::Ok);
        assert_eq!(rdx_dataset_len(mixed), 3000);

        let mut sol = ptr::null_mut();
        let status = rdx_solve_tabular(mdp, expert, mixed, RdxVariant::RelaxDice, 0.2, 0.0, &mut sol);
        assert_eq!(status, RdxStatus::Ok, "{}", last_error());
        let (mut beta, mut loss, mut converged) = (0.0, 0.0, false);
        assert_eq!(rdx_solution_summary(sol, &mut beta, &mut loss, &mut converged), RdxStatus::Ok);
        assert!(converged && beta > 1.0 && loss.is_finite());
        assert_eq!(rdx_solution_num_values(sol), ns);
        let mut omega = vec![0.0; rdx_solution_omega_len(sol)];
        assert_eq!(omega.len(), 3000);
        assert_eq!(rdx_solution_omega(sol, omega.as_mut_ptr(), omega.len()), RdxStatus::Ok);
        assert!(omega.iter().all(|w| *w >= 0.0 && w.is_finite()));

        let mut pi = ptr::null_mut();
        assert_eq!(rdx_solution_policy(sol, &mut pi), RdxStatus::Ok);
        let mut probs = vec![0.0; ns * na];
        assert_eq!(rdx_policy_probs(pi, probs.as_mut_ptr(), probs.len()), RdxStatus::Ok);
        for row in probs.chunks(na) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let mut ret = 0.0;
        assert_eq!(rdx_expected_return(mdp, pi, ptr::null(), 0, &mut ret), RdxStatus::Ok);
        assert!(ret.is_finite());

        rdx_policy_free(pi);
        rdx_solution_free(sol);
        rdx_dataset_free(expert);
        rdx_dataset_free(mixed);
        rdx_policy_free(expert_pi);
        rdx_policy_free(random);
        rdx_mdp_free(mdp);
        rdx_mdp_free(ptr::null_mut());
    }
}

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/relaxdice.h");
    let text = std::fs::read_to_string(&header).expect("generated header");
    for sym in ["rdx_solve_tabular", "rdx_last_error_message", "RDX_STATUS_OK", "typedef struct RdxMdp RdxMdp"] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    // target/<profile>/deps/<test> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap();
    let lib = profile_dir.join("librelaxdice_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include "relaxdice.h"
#include <math.h>
#include <stdio.h>
int main(void) {
    double w = 0, h = 0;
    if (rdx_omega_star_relaxdice(3.0, 0.2, 2.0, &w, &h) != RDX_STATUS_OK) return 1;
    if (fabs(w - exp(1.5)) > 1e-12) return 2;
    if (rdx_f_tilde(1.0, 0.5, &w) != RDX_STATUS_INVALID_ARGUMENT) return 3;
    if (rdx_last_error_message()[0] == '\0') return 4;
    RdxMdp *mdp = NULL;
    if (rdx_mdp_gridworld(3, 3, 0.0, 0.9, &mdp) != RDX_STATUS_OK) return 5;
    size_t ns = rdx_mdp_num_states(mdp);
    rdx_mdp_free(mdp);
    printf("ok %zu\n", ns);
    return ns == 10 ? 0 : 6;
}
"#,
    )
    .unwrap();
    let bin = tmp.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("run C compiler");
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "smoke exit {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok 10");
}
