//! Checkpoint directories: one `.ten` file per parameter plus `manifest.txt`.
//!
//! ```text
//! eventdehaze-checkpoint 1
//! meta<TAB>key<TAB>value          (zero or more)
//! param<TAB>name<TAB>file<TAB>d0,d1,...
//! ```

use std::fs;
use std::path::Path;

use super::param::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{load_tensor, save_tensor};

pub const CHECKPOINT_HEADER: &str = "eventdehaze-checkpoint 1";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn save_checkpoint(dir: impl AsRef<Path>, params: &ParamStore, meta: &[(String, String)]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("{CHECKPOINT_HEADER}\n");
    for (k, v) in meta {
        if k.contains(['\t', '\n']) || v.contains(['\t', '\n']) {
            return Err(Error::domain(format!("metadata {k:?} contains tabs or newlines")));
        }
        manifest.push_str(&format!("meta\t{k}\t{v}\n"));
    }
    for (i, p) in params.iter().enumerate() {
        let file = format!("p{i:03}.ten");
        save_tensor(&p.value, dir.join(&file))?;
        let dims: Vec<String> = p.value.dims().iter().map(usize::to_string).collect();
        manifest.push_str(&format!("param\t{}\t{file}\t{}\n", p.name, dims.join(",")));
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.clone(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CHECKPOINT_HEADER => {}
        other => {
            return Err(perr(
                1,
                format!("expected header {CHECKPOINT_HEADER:?}, found {:?}", other.map(|o| o.1)),
            ))
        }
    }
    let mut params = ParamStore::new();
    let mut meta = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        match f.as_slice() {
            ["meta", k, v] => meta.push((k.to_string(), v.to_string())),
            ["param", name, file, dims] => {
                let dims: Vec<usize> = dims
                    .split(',')
                    .map(|d| d.parse().map_err(|_| perr(i + 1, format!("bad extent {d:?}"))))
                    .collect::<Result<_>>()?;
                let t = load_tensor(dir.join(file))?;
                if t.dims() != dims.as_slice() {
                    return Err(perr(
                        i + 1,
                        format!("{file} holds {:?}, manifest says {dims:?}", t.dims()),
                    ));
                }
                params.add(*name, t);
            }
            _ => return Err(perr(i + 1, format!("unrecognized manifest line {line:?}"))),
        }
    }
    Ok(Checkpoint { params, meta })
}
