use std::path::PathBuf;

// Regenerates include/assure.h from the crate's public surface. The header
// is checked in so C consumers can build without a Rust toolchain; this
// keeps it in sync on every build.
fn main() {
    let crate_dir = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());
    let header = crate_dir.join("include").join("assure.h");

    let config = cbindgen::Config {
        language: cbindgen::Language::C,
        include_guard: Some("ASSURE_H".into()),
        cpp_compat: true,
        documentation: true,
        usize_is_size_t: true,
        header: Some("/* C interface for the assure welfare-estimation library. */".into()),
        ..Default::default()
    };

    match cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
    {
        Ok(bindings) => {
            bindings.write_to_file(&header);
        }
        // Expansion can fail mid-edit (syntax errors); keep the checked-in
        // header rather than breaking the build pipeline.
        Err(err) => println!("cargo:warning=cbindgen skipped: {err}"),
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
}
