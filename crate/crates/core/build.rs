use std::process::Command;

/// Embed a `git describe` of the working tree so run artifacts record the
/// exact code revision; falls back to the crate version outside a checkout.
fn main() {
    let describe = Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|out| out.status.success())
        .and_then(|out| String::from_utf8(out.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| std::env::var("CARGO_PKG_VERSION").unwrap_or_default());
    println!("cargo:rustc-env=FLOE_BUILD_VERSION={describe}");
    println!("cargo:rerun-if-changed=../../.git/HEAD");
}
