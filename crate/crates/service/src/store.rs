//! Directory-backed session persistence.
//!
//! Layout: `<dir>/<id>/session.json` (timestamps and the pair manifest as
//! RLE masks) plus `content.png` / `style.png` holding the uploaded bytes.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use regionstyle::mask::rle_encode;
use regionstyle::{Image, MaskPair, Rle};
use serde::{Deserialize, Serialize};

use crate::session::StyleSession;

#[derive(Serialize, Deserialize)]
struct PairRecord {
    content: Rle,
    style: Rle,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    id: String,
    created: u64,
    updated: u64,
    pairs: Vec<PairRecord>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn save_image(&self, id: &str, role: &str, png: &[u8]) -> io::Result<()> {
        let dir = self.dir(id);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(format!("{role}.png")), png)
    }

    pub fn save_manifest(&self, session: &StyleSession) -> io::Result<()> {
        let manifest = Manifest {
            id: session.id.clone(),
            created: session.created,
            updated: session.updated,
            pairs: session
                .pairs
                .iter()
                .map(|p| PairRecord {
                    content: rle_encode(&p.content),
                    style: rle_encode(&p.style),
                })
                .collect(),
        };
        let dir = self.dir(&session.id);
        fs::create_dir_all(&dir)?;
        let tmp = dir.join("session.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&manifest)?)?;
        fs::rename(tmp, dir.join("session.json"))
    }

    /// Loads every readable session; unreadable ones are logged and skipped.
    pub fn load_all(&self) -> io::Result<Vec<StyleSession>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let path = entry?.path();
            if !path.join("session.json").is_file() {
                continue;
            }
            match load_session(&path) {
                Ok(s) => out.push(s),
                Err(e) => log::warn!("skipping session at {}: {e}", path.display()),
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }
}

fn load_session(dir: &Path) -> Result<StyleSession, Box<dyn std::error::Error>> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("session.json"))?)?;
    let image = |role: &str| -> Result<Option<Image>, Box<dyn std::error::Error>> {
        let path = dir.join(format!("{role}.png"));
        Ok(if path.is_file() { Some(Image::load_png(path)?) } else { None })
    };
    let mut session = StyleSession::new(manifest.id);
    session.content = image("content")?;
    session.style = image("style")?;
    session.created = manifest.created;
    session.updated = manifest.updated;
    for p in manifest.pairs {
        session.pairs.push(MaskPair::new(p.content.decode()?, p.style.decode()?));
    }
    Ok(session)
}
