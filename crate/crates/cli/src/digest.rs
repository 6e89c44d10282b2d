//! Content hash of a run's input files.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::CliError;

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("walk stays under root").to_path_buf());
        }
    }
    Ok(())
}

/// SHA-256 over every file below `roots`, in sorted relative-path order;
/// each file contributes its path, a NUL byte, its length and its bytes.
pub fn digest_inputs(roots: &[&Path]) -> Result<String, CliError> {
    let mut hasher = Sha256::new();
    for root in roots {
        let mut files = Vec::new();
        if root.is_dir() {
            collect_files(root, root, &mut files)?;
        } else {
            return Err(CliError::Data(format!("{} is not a directory", root.display())));
        }
        files.sort();
        for rel in files {
            let bytes = fs::read(root.join(&rel)).map_err(|e| CliError::io(&root.join(&rel), e))?;
            hasher.update(rel.to_string_lossy().replace('\\', "/").as_bytes());
            hasher.update([0u8]);
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
