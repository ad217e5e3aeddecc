//! Hashes the workspace sources so run manifests can name the code version.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

fn collect(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = std::fs::read_dir(dir) else { return };
    for entry in entries.flatten() {
        let path = entry.path();
        if path.is_dir() {
            collect(&path, out);
        } else if path.extension().is_some_and(|e| e == "rs" || e == "toml") {
            out.push(path);
        }
    }
}

fn main() {
    let manifest = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());
    let crates = manifest.parent().unwrap().to_path_buf();
    let mut files = Vec::new();
    for name in ["core", "cli"] {
        for sub in ["src", "Cargo.toml", "build.rs"] {
            let p = crates.join(name).join(sub);
            if p.is_dir() {
                collect(&p, &mut files);
                println!("cargo:rerun-if-changed={}", p.display());
            } else if p.exists() {
                files.push(p.clone());
                println!("cargo:rerun-if-changed={}", p.display());
            }
        }
    }
    files.sort();
    // Git-style blob hashing per file, then a hash over (path, blob hash) pairs.
    let mut tree = Sha256::new();
    for f in &files {
        let bytes = std::fs::read(f).unwrap();
        let mut blob = Sha256::new();
        blob.update(format!("blob {}\0", bytes.len()).as_bytes());
        blob.update(&bytes);
        let rel = f.strip_prefix(&crates).unwrap().to_string_lossy().replace('\\', "/");
        tree.update(rel.as_bytes());
        tree.update([0]);
        tree.update(blob.finalize());
    }
    println!("cargo:rustc-env=EQUIDIAG_SOURCE_HASH={}", hex::encode(tree.finalize()));
}
