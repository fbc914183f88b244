//! Run manifest: what was run, with which settings, and what it produced.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use taps_core::digest::hash_bytes;
use taps_core::Error;

pub const RUN_MANIFEST: &str = "run-manifest.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    /// Output paths relative to the output directory, with their sha256.
    pub outputs: Vec<(PathBuf, String)>,
}

fn collect(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> Result<(), Error> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<Result<_, _>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect(&p, base, out)?;
        } else {
            let rel = p.strip_prefix(base).expect("under base").to_path_buf();
            if rel != Path::new(RUN_MANIFEST) {
                out.push(rel);
            }
        }
    }
    Ok(())
}

impl RunManifest {
    /// Hashes every file under `out_dir` except the manifest itself.
    pub fn scan(command: &str, config_digest: String, seed: u64, out_dir: &Path) -> Result<Self, Error> {
        let mut files = Vec::new();
        collect(out_dir, out_dir, &mut files)?;
        let outputs = files
            .into_iter()
            .map(|rel| {
                let p = out_dir.join(&rel);
                let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
                Ok((rel, hash_bytes(&bytes)))
            })
            .collect::<Result<_, Error>>()?;
        Ok(Self {
            command: command.to_string(),
            config_digest,
            seed,
            outputs,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("#taps-run v1\n");
        writeln!(s, "command\t{}", self.command).unwrap();
        writeln!(s, "config_digest\t{}", self.config_digest).unwrap();
        writeln!(s, "seed\t{}", self.seed).unwrap();
        for (p, h) in &self.outputs {
            writeln!(s, "output\t{}\t{h}", p.to_string_lossy()).unwrap();
        }
        s
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), Error> {
        let p = out_dir.join(RUN_MANIFEST);
        std::fs::write(&p, self.to_text()).map_err(|e| Error::io(&p, e))
    }
}
