//! `gradgibbs report`: human-readable summary of a run manifest, with the
//! output checksums re-verified.

use std::path::Path;

use crate::manifest::{hash_file, read_manifest, MANIFEST_NAME};
use crate::{CliError, CliResult};

pub fn run(path: &Path) -> CliResult<()> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    let m = read_manifest(&manifest_path)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    println!("command   {} (gradgibbs {})", m.command, m.version);
    println!("status    {}", m.status);
    if let Some(err) = &m.error {
        println!("error     {err}");
    }
    println!("seed      {}", m.root_seed);
    println!("workers   {}", m.workers);

    if !m.timings.is_empty() {
        println!("stages");
        for t in &m.timings {
            println!("  {:<24} {:>9.3}s", t.stage, t.seconds);
        }
    }

    let mut bad = 0usize;
    if !m.outputs.is_empty() {
        println!("outputs");
        for out in &m.outputs {
            let state = match hash_file(&dir.join(&out.path)) {
                Ok((bytes, sha)) if bytes == out.bytes && sha == out.sha256 => "verified",
                Ok(_) => {
                    bad += 1;
                    "MISMATCH"
                }
                Err(_) => {
                    bad += 1;
                    "MISSING"
                }
            };
            println!(
                "  {:<24} {:>12} bytes  {}  {}",
                out.path, out.bytes, &out.sha256[..12], state
            );
        }
    }

    if bad > 0 {
        Err(CliError::Check(format!(
            "{bad} output file(s) missing or differing from the manifest"
        )))
    } else {
        Ok(())
    }
}
