//! Plain-file persistence under the store root:
//!
//! ```text
//! images/<id>.<png|jpg>            uploaded bytes, id = sha256 of the bytes
//! masks/<image_id>/<mask_id>.rle   RLE json, ids m1, m2, ... per image
//! sessions/<session_id>.log        json lines: header record, then messages
//! ```
//!
//! Files are written to a temp file and renamed into place; session logs are
//! only ever appended to after their header is in place.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use capengine_core::chat::ChatMessage;
use capengine_core::geometry::{ImageDims, RleMask};
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store io error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt store file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("image is not a decodable png or jpeg: {0}")]
    Undecodable(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoredFormat {
    Png,
    Jpeg,
}

impl StoredFormat {
    pub fn extension(self) -> &'static str {
        match self {
            StoredFormat::Png => "png",
            StoredFormat::Jpeg => "jpg",
        }
    }

    fn from_extension(ext: &str) -> Option<Self> {
        match ext {
            "png" => Some(StoredFormat::Png),
            "jpg" => Some(StoredFormat::Jpeg),
            _ => None,
        }
    }

    fn image_format(self) -> ImageFormat {
        match self {
            StoredFormat::Png => ImageFormat::Png,
            StoredFormat::Jpeg => ImageFormat::Jpeg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoredImage {
    pub dims: ImageDims,
    pub format: StoredFormat,
}

/// One line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum SessionRecord {
    Header {
        session_id: String,
        image_id: String,
        mask_id: String,
        mask: RleMask,
        seed_caption: String,
    },
    Message(ChatMessage),
}

/// A session as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub session_id: String,
    pub image_id: String,
    pub mask_id: String,
    pub mask: RleMask,
    pub seed_caption: String,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    images: RwLock<HashMap<String, StoredImage>>,
    /// Per image, masks in creation order.
    masks: Mutex<HashMap<String, Vec<(String, RleMask)>>>,
}

pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Store {
    /// Creates the directory layout if needed, checks it is writable and
    /// indexes existing images and masks.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["images", "masks", "sessions"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            tempfile::NamedTempFile::new_in(&dir).map_err(io_err(&dir))?;
        }
        let store = Self {
            images: RwLock::new(scan_images(&root.join("images"))?),
            masks: Mutex::new(scan_masks(&root.join("masks"))?),
            root,
        };
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Validates and stores image bytes. Idempotent: the same bytes always
    /// yield the same id and are written once.
    pub fn put_image(&self, bytes: &[u8]) -> Result<(String, StoredImage), StoreError> {
        let format = match image::guess_format(bytes) {
            Ok(ImageFormat::Png) => StoredFormat::Png,
            Ok(ImageFormat::Jpeg) => StoredFormat::Jpeg,
            Ok(other) => return Err(StoreError::Undecodable(format!("unsupported format {other:?}"))),
            Err(e) => return Err(StoreError::Undecodable(e.to_string())),
        };
        let decoded = image::load_from_memory_with_format(bytes, format.image_format())
            .map_err(|e| StoreError::Undecodable(e.to_string()))?;
        let dims = ImageDims::new(decoded.width(), decoded.height())
            .map_err(|e| StoreError::Undecodable(e.to_string()))?;
        let id = content_id(bytes);
        let meta = StoredImage { dims, format };

        let mut images = self.images.write().unwrap();
        if let Some(existing) = images.get(&id) {
            return Ok((id, *existing));
        }
        let path = self.image_path(&id, format);
        write_atomic(&path, bytes)?;
        images.insert(id.clone(), meta);
        Ok((id, meta))
    }

    pub fn image(&self, id: &str) -> Option<StoredImage> {
        self.images.read().unwrap().get(id).copied()
    }

    pub fn image_count(&self) -> usize {
        self.images.read().unwrap().len()
    }

    pub fn load_image(&self, id: &str) -> Result<Option<RgbImage>, StoreError> {
        let Some(meta) = self.image(id) else { return Ok(None) };
        let path = self.image_path(id, meta.format);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let img = image::load_from_memory_with_format(&bytes, meta.format.image_format())
            .map_err(|e| StoreError::Corrupt { path, message: e.to_string() })?;
        Ok(Some(img.to_rgb8()))
    }

    fn image_path(&self, id: &str, format: StoredFormat) -> PathBuf {
        self.root.join("images").join(format!("{id}.{}", format.extension()))
    }

    /// Returns the id of an identical stored mask, or persists it under the
    /// next sequential id.
    pub fn put_mask(&self, image_id: &str, mask: &RleMask) -> Result<String, StoreError> {
        let mut masks = self.masks.lock().unwrap();
        let list = masks.entry(image_id.to_string()).or_default();
        if let Some((id, _)) = list.iter().find(|(_, m)| m == mask) {
            return Ok(id.clone());
        }
        let next = list.iter().filter_map(|(id, _)| mask_number(id)).max().unwrap_or(0) + 1;
        let id = format!("m{next}");
        let dir = self.root.join("masks").join(image_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_atomic(&dir.join(format!("{id}.rle")), mask.to_json().as_bytes())?;
        list.push((id.clone(), mask.clone()));
        Ok(id)
    }

    pub fn mask(&self, image_id: &str, mask_id: &str) -> Option<RleMask> {
        let masks = self.masks.lock().unwrap();
        masks.get(image_id)?.iter().find(|(id, _)| id == mask_id).map(|(_, m)| m.clone())
    }

    pub fn mask_ids(&self, image_id: &str) -> Vec<String> {
        let masks = self.masks.lock().unwrap();
        masks.get(image_id).map(|l| l.iter().map(|(id, _)| id.clone()).collect()).unwrap_or_default()
    }

    fn session_path(&self, session_id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{session_id}.log"))
    }

    /// Writes a new session log holding only its header.
    pub fn create_session(&self, header: &SessionRecord) -> Result<(), StoreError> {
        let SessionRecord::Header { session_id, .. } = header else {
            panic!("session logs start with a header record");
        };
        let mut line = serde_json::to_string(header).expect("records serialize");
        line.push('\n');
        write_atomic(&self.session_path(session_id), line.as_bytes())
    }

    /// Appends message records to an existing session log.
    pub fn append_session(&self, session_id: &str, messages: &[ChatMessage]) -> Result<(), StoreError> {
        let path = self.session_path(session_id);
        let mut buf = String::new();
        for m in messages {
            buf.push_str(&serde_json::to_string(&SessionRecord::Message(m.clone())).expect("records serialize"));
            buf.push('\n');
        }
        let mut f = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        f.write_all(buf.as_bytes()).map_err(io_err(&path))?;
        f.sync_data().map_err(io_err(&path))
    }

    /// Every persisted session, sorted by id.
    pub fn load_sessions(&self) -> Result<Vec<SessionLog>, StoreError> {
        let dir = self.root.join("sessions");
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("log") {
                continue;
            }
            out.push(read_session(&path)?);
        }
        out.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        Ok(out)
    }
}

fn read_session(path: &Path) -> Result<SessionLog, StoreError> {
    let corrupt = |message: String| StoreError::Corrupt { path: path.to_path_buf(), message };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut records = text.lines().filter(|l| !l.trim().is_empty()).map(|l| {
        serde_json::from_str::<SessionRecord>(l).map_err(|e| corrupt(e.to_string()))
    });
    let Some(SessionRecord::Header { session_id, image_id, mask_id, mask, seed_caption }) =
        records.next().transpose()?
    else {
        return Err(corrupt("missing header record".into()));
    };
    let mut messages = Vec::new();
    for r in records {
        match r? {
            SessionRecord::Message(m) => messages.push(m),
            SessionRecord::Header { .. } => return Err(corrupt("duplicate header record".into())),
        }
    }
    Ok(SessionLog { session_id, image_id, mask_id, mask, seed_caption, messages })
}

fn mask_number(id: &str) -> Option<u64> {
    id.strip_prefix('m')?.parse().ok()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().expect("store paths have a parent");
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_data().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StoreError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

fn is_content_id(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

fn scan_images(dir: &Path) -> Result<HashMap<String, StoredImage>, StoreError> {
    let mut out = HashMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let (Some(stem), Some(ext)) = (
            path.file_stem().and_then(|s| s.to_str()),
            path.extension().and_then(|s| s.to_str()),
        ) else {
            continue;
        };
        let Some(format) = StoredFormat::from_extension(ext) else { continue };
        if !is_content_id(stem) {
            continue;
        }
        let (w, h) = image::image_dimensions(&path)
            .map_err(|e| StoreError::Corrupt { path: path.clone(), message: e.to_string() })?;
        let dims = ImageDims::new(w, h)
            .map_err(|e| StoreError::Corrupt { path: path.clone(), message: e.to_string() })?;
        out.insert(stem.to_string(), StoredImage { dims, format });
    }
    Ok(out)
}

fn scan_masks(dir: &Path) -> Result<HashMap<String, Vec<(String, RleMask)>>, StoreError> {
    let mut out = HashMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let image_dir = entry.map_err(io_err(dir))?.path();
        let Some(image_id) = image_dir.file_name().and_then(|s| s.to_str()).map(String::from) else {
            continue;
        };
        if !image_dir.is_dir() || !is_content_id(&image_id) {
            continue;
        }
        let mut list = Vec::new();
        for entry in fs::read_dir(&image_dir).map_err(io_err(&image_dir))? {
            let path = entry.map_err(io_err(&image_dir))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("rle") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(String::from) else {
                continue;
            };
            let Some(n) = mask_number(&id) else { continue };
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let rle = RleMask::from_json(&text)
                .map_err(|e| StoreError::Corrupt { path: path.clone(), message: e.to_string() })?;
            list.push((n, id, rle));
        }
        list.sort_by_key(|(n, _, _)| *n);
        out.insert(image_id, list.into_iter().map(|(_, id, m)| (id, m)).collect());
    }
    Ok(out)
}
