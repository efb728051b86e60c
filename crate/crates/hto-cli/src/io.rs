//! Output-directory plumbing: atomic writes, CSV emission, and the run
//! manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Write `bytes` to `path` atomically: a temp file in the same
/// directory is persisted over the target, so readers never observe a
/// partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(|| ".".into());
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Emit a CSV with the given header and preformatted rows, atomically.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut out = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Serialize `value` as JSON with a trailing newline, atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

fn sha256_hex_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path)
        .with_context(|| format!("hashing {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(s, "{b:02x}").expect("write to string");
    }
    s
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    root_seed: u64,
    command: &'a str,
    config: &'a serde_json::Value,
    files: BTreeMap<String, String>,
    manifest_sha256: String,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Rebuild `manifest.json` in `out`: every regular file except the
/// manifest itself is listed with its SHA-256, and the manifest hash
/// covers the seed, command, config echo, and file map. No timestamps,
/// so identical runs produce identical manifests.
pub fn update_manifest(
    out: &Path,
    root_seed: u64,
    command: &str,
    config: &serde_json::Value,
) -> Result<()> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(out).with_context(|| format!("listing {}", out.display()))? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == MANIFEST_NAME {
            continue;
        }
        files.insert(name, sha256_hex_file(&entry.path())?);
    }
    let body = serde_json::json!({
        "root_seed": root_seed,
        "command": command,
        "config": config,
        "files": files,
    });
    let manifest_sha256 = hex(&Sha256::digest(serde_json::to_vec(&body)?));
    let manifest = Manifest {
        format: "hto-manifest",
        root_seed,
        command,
        config,
        files,
        manifest_sha256,
    };
    write_json(&out.join(MANIFEST_NAME), &manifest)
}

/// Resolve and create the output directory.
pub fn ensure_out_dir(out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
    }

    #[test]
    fn manifest_is_stable_and_skips_itself() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "h\n1\n").unwrap();
        let cfg = serde_json::json!({"eps": 3.0});
        update_manifest(dir.path(), 7, "attack", &cfg).unwrap();
        let first = fs::read(dir.path().join(MANIFEST_NAME)).unwrap();
        update_manifest(dir.path(), 7, "attack", &cfg).unwrap();
        let second = fs::read(dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(first, second);
        let text = String::from_utf8(second).unwrap();
        assert!(text.contains("a.csv"));
        assert!(!text.contains("\"manifest.json\""));
    }
}
