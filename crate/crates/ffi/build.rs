use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    let config = cbindgen::Config::from_file(crate_dir.join("cbindgen.toml")).unwrap();
    let header = PathBuf::from(env::var("OUT_DIR").unwrap()).join("loadmix.h");
    cbindgen::generate_with_config(&crate_dir, config)
        .expect("header generation failed")
        .write_to_file(&header);

    let include = crate_dir.join("include");
    std::fs::create_dir_all(&include).unwrap();
    std::fs::copy(&header, include.join("loadmix.h")).unwrap();

    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
