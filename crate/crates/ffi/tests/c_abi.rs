//! Compiles a C program against the generated header and the shared library.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "goalfactor.h"

int main(int argc, char **argv) {
    float values[6] = {0.1f, 0.9f, 0.5f, 0.3f, 0.8f, 0.2f};
    GfMatrix *m = NULL;
    GfMatrix *b = NULL;
    float out[6];
    if (gf_matrix_new(2, 3, values, &m) != GF_STATUS_OK) return 1;
    if (gf_matrix_save(m, argv[1]) != GF_STATUS_OK) return 2;
    if (gf_matrix_binarize(m, 0.5, &b) != GF_STATUS_OK) return 3;
    if (gf_matrix_values(b, out, 6) != GF_STATUS_OK) return 4;
    for (int i = 0; i < 6; i++) printf("%d", (int)out[i]);
    printf("\n");
    if (gf_matrix_load("/nonexistent.ilfm", &b) != GF_STATUS_IO) return 5;
    if (strlen(gf_last_error()) == 0) return 6;
    gf_matrix_free(b);
    gf_matrix_free(m);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let lib_dir = target_dir();
    assert!(
        lib_dir.join("libgoalfactor_ffi.so").exists() || lib_dir.join("libgoalfactor_ffi.dylib").exists(),
        "shared library not found in {}",
        lib_dir.display()
    );
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    let exe = tmp.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lgoalfactor_ffi")
        .arg("-o")
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let matrix = tmp.path().join("m.ilfm");
    let out = Command::new(&exe)
        .arg(&matrix)
        .env("LD_LIBRARY_PATH", &lib_dir)
        .env("DYLD_LIBRARY_PATH", &lib_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "011010\n");
    // the file written from C is readable from Rust
    let m = goalfactor::corpus_store::artifact::load_matrix(&matrix).unwrap();
    assert_eq!((m.rows(), m.cols()), (2, 3));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/goalfactor.h")).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}
