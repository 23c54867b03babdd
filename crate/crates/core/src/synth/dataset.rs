//! On-disk dataset layout: `manifest.jsonl` with one JSON object per record
//! plus per-record binary blobs (rgb u8x3, depth f32 little-endian, mask u8,
//! all row-major) and text tables for the optional curation intermediates.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CurationIntermediates, Provenance, SampleRecord};
use crate::contact::{FingerRegion, TrackedPoint};
use crate::denoiser::{Mask, RgbdFrame};
use crate::geometry::{CameraIntrinsics, DepthMap, PixelPoint, Point3, PoseCenteredAffordance, Quaternion};
use crate::grip::{HandKeypoints, NUM_JOINTS};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt manifest at line {line}: {reason}")]
    CorruptManifest { line: usize, reason: String },
    #[error("missing blob {path}")]
    MissingBlob { path: String },
    #[error("blob {path}: expected {expected} bytes, found {found}")]
    SizeMismatch { path: String, expected: usize, found: usize },
    #[error("record {id} violates invariants: {reason}")]
    InvalidRecord { id: u64, reason: String },
}

/// Stable manifest schema; field names are part of the dataset contract.
#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: u64,
    width: usize,
    height: usize,
    instruction_id: usize,
    provenance: Provenance,
    gt: GtEntry,
    camera: CameraEntry,
    rgb: String,
    depth: String,
    mask: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    hand: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tracks: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    region: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    curated: Option<GtEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GtEntry {
    u: f64,
    v: f64,
    quaternion: [f64; 4],
}

impl GtEntry {
    fn from(a: &PoseCenteredAffordance) -> Self {
        Self {
            u: a.contact_point.u,
            v: a.contact_point.v,
            quaternion: [a.orientation.w, a.orientation.x, a.orientation.y, a.orientation.z],
        }
    }

    fn to_affordance(&self) -> Result<PoseCenteredAffordance, String> {
        let [w, x, y, z] = self.quaternion;
        // Validate but keep the stored bits; renormalizing would break the
        // full-precision round-trip contract.
        Quaternion::new(w, x, y, z).map_err(|e| e.to_string())?;
        Ok(PoseCenteredAffordance {
            contact_point: PixelPoint::new(self.u, self.v),
            orientation: Quaternion { w, x, y, z }.canonicalized(),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CameraEntry {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

fn blob_name(id: u64, ext: &str) -> String {
    format!("blobs/{id:012}.{ext}")
}

fn write_blob(dir: &Path, rel: &str, bytes: &[u8]) -> Result<(), DataError> {
    let path = dir.join(rel);
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

fn read_blob(dir: &Path, rel: &str, expected: usize) -> Result<Vec<u8>, DataError> {
    let path = dir.join(rel);
    if !path.exists() {
        return Err(DataError::MissingBlob { path: rel.to_string() });
    }
    let mut buf = Vec::new();
    File::open(&path)?.read_to_end(&mut buf)?;
    if buf.len() != expected {
        return Err(DataError::SizeMismatch { path: rel.to_string(), expected, found: buf.len() });
    }
    Ok(buf)
}

fn hand_to_csv(hand: &HandKeypoints) -> String {
    let mut s = String::new();
    for j in hand.joints() {
        s.push_str(&format!("{},{},{}\n", j.x, j.y, j.z));
    }
    s
}

fn hand_from_csv(text: &str) -> Result<HandKeypoints, String> {
    let mut joints = [Point3::ZERO; NUM_JOINTS];
    let mut count = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if i >= NUM_JOINTS {
            return Err("too many joint rows".into());
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(format!("joint row {i} has {} fields", parts.len()));
        }
        let p: Result<Vec<f64>, _> = parts.iter().map(|s| s.trim().parse::<f64>()).collect();
        let p = p.map_err(|e| format!("joint row {i}: {e}"))?;
        joints[i] = Point3::new(p[0], p[1], p[2]);
        count += 1;
    }
    if count != NUM_JOINTS {
        return Err(format!("{count} joint rows, expected {NUM_JOINTS}"));
    }
    HandKeypoints::new(joints).map_err(|e| e.to_string())
}

fn tracks_to_csv(tracks: &[TrackedPoint]) -> String {
    let mut s = String::from("id,u_pre,v_pre,u_contact,v_contact,visible\n");
    for t in tracks {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.id,
            t.pos_pre.u,
            t.pos_pre.v,
            t.pos_contact.u,
            t.pos_contact.v,
            t.visible_contact as u8
        ));
    }
    s
}

fn tracks_from_csv(text: &str) -> Result<Vec<TrackedPoint>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(format!("track row {i} has {} fields", parts.len()));
        }
        out.push(TrackedPoint {
            id: parts[0].trim().parse().map_err(|e| format!("track row {i}: {e}"))?,
            pos_pre: PixelPoint::new(
                parts[1].trim().parse().map_err(|e| format!("track row {i}: {e}"))?,
                parts[2].trim().parse().map_err(|e| format!("track row {i}: {e}"))?,
            ),
            pos_contact: PixelPoint::new(
                parts[3].trim().parse().map_err(|e| format!("track row {i}: {e}"))?,
                parts[4].trim().parse().map_err(|e| format!("track row {i}: {e}"))?,
            ),
            visible_contact: parts[5].trim() == "1",
        });
    }
    Ok(out)
}

fn region_to_csv(region: &FingerRegion) -> String {
    let mut s = String::new();
    for v in &region.vertices {
        s.push_str(&format!("{},{}\n", v.u, v.v));
    }
    s.push_str(&format!("{}\n", region.dilation));
    s
}

fn region_from_csv(text: &str) -> Result<FingerRegion, String> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != 4 {
        return Err(format!("{} region rows, expected 4", lines.len()));
    }
    let mut vertices = [PixelPoint::new(0.0, 0.0); 3];
    for (i, line) in lines[..3].iter().enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 2 {
            return Err(format!("region row {i} has {} fields", parts.len()));
        }
        vertices[i] = PixelPoint::new(
            parts[0].trim().parse().map_err(|e| format!("region row {i}: {e}"))?,
            parts[1].trim().parse().map_err(|e| format!("region row {i}: {e}"))?,
        );
    }
    let dilation = lines[3].trim().parse().map_err(|e| format!("dilation row: {e}"))?;
    Ok(FingerRegion { vertices, dilation })
}

/// Writes records into `dir` (created if needed): `manifest.jsonl` plus one
/// blob set per record. Records are validated before anything is written.
pub fn write_dataset(records: &[SampleRecord], dir: &Path) -> Result<(), DataError> {
    for r in records {
        r.validate()
            .map_err(|reason| DataError::InvalidRecord { id: r.id, reason })?;
    }
    fs::create_dir_all(dir.join("blobs"))?;
    let mut manifest = BufWriter::new(File::create(dir.join("manifest.jsonl"))?);
    for r in records {
        let (w, h) = (r.frame.width, r.frame.height);
        let rgb_rel = blob_name(r.id, "rgb");
        let depth_rel = blob_name(r.id, "depth");
        let mask_rel = blob_name(r.id, "mask");

        let mut rgb_bytes = Vec::with_capacity(w * h * 3);
        for &v in &r.frame.rgb {
            rgb_bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
        write_blob(dir, &rgb_rel, &rgb_bytes)?;

        let mut depth_bytes = Vec::with_capacity(w * h * 4);
        for &d in r.frame.depth.values() {
            depth_bytes.extend_from_slice(&d.to_le_bytes());
        }
        write_blob(dir, &depth_rel, &depth_bytes)?;
        write_blob(dir, &mask_rel, r.mask.data())?;

        let mut entry = ManifestEntry {
            id: r.id,
            width: w,
            height: h,
            instruction_id: r.instruction_id,
            provenance: r.provenance,
            gt: GtEntry::from(&r.gt),
            camera: CameraEntry { fx: r.camera.fx, fy: r.camera.fy, cx: r.camera.cx, cy: r.camera.cy },
            rgb: rgb_rel,
            depth: depth_rel,
            mask: mask_rel,
            hand: None,
            tracks: None,
            region: None,
            curated: r.curated.as_ref().map(GtEntry::from),
        };
        if let Some(inter) = &r.intermediates {
            let hand_rel = blob_name(r.id, "hand.csv");
            let tracks_rel = blob_name(r.id, "tracks.csv");
            let region_rel = blob_name(r.id, "region.csv");
            write_blob(dir, &hand_rel, hand_to_csv(&inter.hand).as_bytes())?;
            write_blob(dir, &tracks_rel, tracks_to_csv(&inter.tracks).as_bytes())?;
            write_blob(dir, &region_rel, region_to_csv(&inter.region).as_bytes())?;
            entry.hand = Some(hand_rel);
            entry.tracks = Some(tracks_rel);
            entry.region = Some(region_rel);
        }
        let line = serde_json::to_string(&entry)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        manifest.write_all(line.as_bytes())?;
        manifest.write_all(b"\n")?;
    }
    manifest.flush()?;
    Ok(())
}

/// Reads a dataset back; every record is re-validated.
pub fn read_dataset(dir: &Path) -> Result<Vec<SampleRecord>, DataError> {
    let manifest_path: PathBuf = dir.join("manifest.jsonl");
    if !manifest_path.exists() {
        return Err(DataError::MissingBlob { path: "manifest.jsonl".to_string() });
    }
    let reader = BufReader::new(File::open(&manifest_path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| DataError::CorruptManifest { line: i + 1, reason: e.to_string() })?;
        let (w, h) = (entry.width, entry.height);
        if w == 0 || h == 0 {
            return Err(DataError::CorruptManifest {
                line: i + 1,
                reason: "zero image dimension".to_string(),
            });
        }

        let rgb_bytes = read_blob(dir, &entry.rgb, w * h * 3)?;
        let rgb: Vec<f32> = rgb_bytes.iter().map(|&b| b as f32 / 255.0).collect();
        let depth_bytes = read_blob(dir, &entry.depth, w * h * 4)?;
        let depth_vals: Vec<f32> = depth_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mask_bytes = read_blob(dir, &entry.mask, w * h)?;
        if mask_bytes.iter().any(|&b| b > 1) {
            return Err(DataError::InvalidRecord {
                id: entry.id,
                reason: "mask bytes must be 0 or 1".to_string(),
            });
        }

        let gt = entry.gt.to_affordance().map_err(|reason| DataError::CorruptManifest {
            line: i + 1,
            reason,
        })?;
        let curated = match &entry.curated {
            Some(c) => Some(c.to_affordance().map_err(|reason| DataError::CorruptManifest {
                line: i + 1,
                reason,
            })?),
            None => None,
        };

        let intermediates = match (&entry.hand, &entry.tracks, &entry.region) {
            (Some(hand_rel), Some(tracks_rel), Some(region_rel)) => {
                let hand_text = String::from_utf8(read_blob_any(dir, hand_rel)?)
                    .map_err(|e| DataError::CorruptManifest { line: i + 1, reason: e.to_string() })?;
                let tracks_text = String::from_utf8(read_blob_any(dir, tracks_rel)?)
                    .map_err(|e| DataError::CorruptManifest { line: i + 1, reason: e.to_string() })?;
                let region_text = String::from_utf8(read_blob_any(dir, region_rel)?)
                    .map_err(|e| DataError::CorruptManifest { line: i + 1, reason: e.to_string() })?;
                Some(CurationIntermediates {
                    hand: hand_from_csv(&hand_text)
                        .map_err(|reason| DataError::InvalidRecord { id: entry.id, reason })?,
                    tracks: tracks_from_csv(&tracks_text)
                        .map_err(|reason| DataError::InvalidRecord { id: entry.id, reason })?,
                    region: region_from_csv(&region_text)
                        .map_err(|reason| DataError::InvalidRecord { id: entry.id, reason })?,
                })
            }
            (None, None, None) => None,
            _ => {
                return Err(DataError::CorruptManifest {
                    line: i + 1,
                    reason: "intermediates must be all present or all absent".to_string(),
                })
            }
        };

        let record = SampleRecord {
            id: entry.id,
            frame: RgbdFrame::new(w, h, rgb, DepthMap::new(w, h, depth_vals)),
            mask: Mask::new(w, h, mask_bytes),
            instruction_id: entry.instruction_id,
            gt,
            camera: CameraIntrinsics::new(
                entry.camera.fx,
                entry.camera.fy,
                entry.camera.cx,
                entry.camera.cy,
                w,
                h,
            ),
            provenance: entry.provenance,
            intermediates,
            curated,
        };
        record
            .validate()
            .map_err(|reason| DataError::InvalidRecord { id: entry.id, reason })?;
        records.push(record);
    }
    Ok(records)
}

fn read_blob_any(dir: &Path, rel: &str) -> Result<Vec<u8>, DataError> {
    let path = dir.join(rel);
    if !path.exists() {
        return Err(DataError::MissingBlob { path: rel.to_string() });
    }
    let mut buf = Vec::new();
    File::open(&path)?.read_to_end(&mut buf)?;
    Ok(buf)
}
