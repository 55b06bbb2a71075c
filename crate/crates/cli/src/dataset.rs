//! Stereo dataset ingestion for two normalized directory layouts.
//!
//! `scared-like`:
//!
//! ```text
//! ROOT/<sequence>/calibration.txt
//! ROOT/<sequence>/left/<frame>.png
//! ROOT/<sequence>/right/<frame>.png
//! ROOT/<sequence>/depth/<frame>.pfm     optional, key frames only
//! ```
//!
//! `latte-like`:
//!
//! ```text
//! ROOT/<sequence>/calib.txt
//! ROOT/<sequence>/rgb/<frame>_l.png
//! ROOT/<sequence>/rgb/<frame>_r.png
//! ROOT/<sequence>/gt/<frame>.pfm        optional
//! ```
//!
//! Calibration files are `key = value` text with `focal`, `cx`, `cy` and
//! `baseline` (pixels and scene units). Depth is PFM in the baseline's unit.

use std::fs;
use std::path::{Path, PathBuf};

use stereogc::objective::StereoPair;
use stereogc::{CameraRig, DepthMap};

use crate::error::{HarnessError, HarnessResult};
use crate::io::{read_depth, read_image_png, write_depth, write_image_png16, write_text};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    ScaredLike,
    LatteLike,
}

impl Layout {
    pub fn parse(s: &str) -> HarnessResult<Self> {
        match s {
            "scared-like" => Ok(Layout::ScaredLike),
            "latte-like" => Ok(Layout::LatteLike),
            _ => Err(HarnessError::usage(format!("unknown layout '{s}' (scared-like or latte-like)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Layout::ScaredLike => "scared-like",
            Layout::LatteLike => "latte-like",
        }
    }

    fn calibration_file(self) -> &'static str {
        match self {
            Layout::ScaredLike => "calibration.txt",
            Layout::LatteLike => "calib.txt",
        }
    }

    /// Left, right and ground-truth paths of one frame.
    fn frame_paths(self, seq: &Path, frame: &str) -> (PathBuf, PathBuf, PathBuf) {
        match self {
            Layout::ScaredLike => (
                seq.join("left").join(format!("{frame}.png")),
                seq.join("right").join(format!("{frame}.png")),
                seq.join("depth").join(format!("{frame}.pfm")),
            ),
            Layout::LatteLike => (
                seq.join("rgb").join(format!("{frame}_l.png")),
                seq.join("rgb").join(format!("{frame}_r.png")),
                seq.join("gt").join(format!("{frame}.pfm")),
            ),
        }
    }

    /// Frame names found in a sequence, sorted.
    fn frames(self, seq: &Path) -> HarnessResult<Vec<String>> {
        let (dir, suffix) = match self {
            Layout::ScaredLike => (seq.join("left"), ".png"),
            Layout::LatteLike => (seq.join("rgb"), "_l.png"),
        };
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut frames: Vec<String> = list_dir(&dir)?
            .into_iter()
            .filter_map(|p| p.file_name()?.to_str()?.strip_suffix(suffix).map(String::from))
            .collect();
        frames.sort();
        Ok(frames)
    }
}

/// Camera intrinsics and baseline shared by every frame of a sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline: f64,
}

impl Calibration {
    pub fn from_rig(rig: &CameraRig) -> Self {
        Self { focal: rig.focal, cx: rig.cx, cy: rig.cy, baseline: rig.baseline }
    }

    pub fn rig(&self, height: usize, width: usize) -> HarnessResult<CameraRig> {
        Ok(CameraRig::new(self.focal, self.cx, self.cy, self.baseline, height, width)?)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let (mut focal, mut cx, mut cy, mut baseline) = (None, None, None, None);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| format!("malformed line '{line}'"))?;
            let v: f64 = v.trim().parse().map_err(|_| format!("bad number in '{line}'"))?;
            match k.trim() {
                "focal" => focal = Some(v),
                "cx" => cx = Some(v),
                "cy" => cy = Some(v),
                "baseline" => baseline = Some(v),
                other => return Err(format!("unknown calibration key '{other}'")),
            }
        }
        let need = |v: Option<f64>, k: &str| v.ok_or_else(|| format!("missing '{k}'"));
        Ok(Self {
            focal: need(focal, "focal")?,
            cx: need(cx, "cx")?,
            cy: need(cy, "cy")?,
            baseline: need(baseline, "baseline")?,
        })
    }

    pub fn to_text(&self) -> String {
        format!("focal = {}\ncx = {}\ncy = {}\nbaseline = {}\n", self.focal, self.cx, self.cy, self.baseline)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub sequence: String,
    pub frame: String,
    pub pair: StereoPair,
    pub gt_depth: Option<DepthMap>,
    pub rig: CameraRig,
}

/// A sequence or frame that was left out, and why.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkipReport {
    pub sequence: String,
    /// `None` when the whole sequence was skipped.
    pub frame: Option<String>,
    pub reason: String,
}

/// A frame located on disk but not yet read.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRef {
    pub sequence: String,
    pub frame: String,
    left: PathBuf,
    right: PathBuf,
    gt: PathBuf,
    calibration: Calibration,
}

impl SampleRef {
    /// Reads the frame; the error string is the skip reason.
    pub fn load(&self) -> Result<Sample, String> {
        let read = |p: &Path| read_image_png(p).map_err(|e| e.to_string());
        let (left, right) = (read(&self.left)?, read(&self.right)?);
        let pair = StereoPair::new(left, right).map_err(|e| e.to_string())?;
        let (h, w) = pair.dims();
        let gt_depth = if self.gt.is_file() {
            let d = read_depth(&self.gt).map_err(|e| e.to_string())?;
            if d.dims() != (h, w) {
                return Err(format!("ground truth is {:?}, images are {:?}", d.dims(), (h, w)));
            }
            Some(d)
        } else {
            None
        };
        let rig = self.calibration.rig(h, w).map_err(|e| e.to_string())?;
        Ok(Sample { sequence: self.sequence.clone(), frame: self.frame.clone(), pair, gt_depth, rig })
    }
}

fn list_dir(dir: &Path) -> HarnessResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
        out.push(entry.map_err(|e| HarnessError::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Lazily loading dataset. Iterating yields readable samples in sequence
/// then frame order; unreadable ones are recorded in [`skipped`](Self::skipped).
#[derive(Debug)]
pub struct Dataset {
    entries: Vec<SampleRef>,
    next: usize,
    skipped: Vec<SkipReport>,
}

impl Dataset {
    pub fn entries(&self) -> &[SampleRef] {
        &self.entries
    }

    /// Skips so far: sequences at index time, frames as they are reached.
    pub fn skipped(&self) -> &[SkipReport] {
        &self.skipped
    }
}

impl Iterator for Dataset {
    type Item = Sample;

    fn next(&mut self) -> Option<Sample> {
        while let Some(entry) = self.entries.get(self.next) {
            self.next += 1;
            match entry.load() {
                Ok(s) => return Some(s),
                Err(reason) => self.skipped.push(SkipReport {
                    sequence: entry.sequence.clone(),
                    frame: Some(entry.frame.clone()),
                    reason,
                }),
            }
        }
        None
    }
}

/// Indexes `root`; no image is read until iteration.
pub fn ingest_dataset(root: &Path, layout: Layout) -> HarnessResult<Dataset> {
    if !root.is_dir() {
        return Err(HarnessError::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for seq in list_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = seq.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let calib_path = seq.join(layout.calibration_file());
        let calibration = match fs::read_to_string(&calib_path) {
            Ok(text) => Calibration::parse(&text),
            Err(e) => Err(format!("{}: {e}", calib_path.display())),
        };
        let calibration = match calibration {
            Ok(c) => c,
            Err(reason) => {
                skipped.push(SkipReport { sequence: name, frame: None, reason });
                continue;
            }
        };
        for frame in layout.frames(&seq)? {
            let (left, right, gt) = layout.frame_paths(&seq, &frame);
            entries.push(SampleRef { sequence: name.clone(), frame, left, right, gt, calibration });
        }
    }
    Ok(Dataset { entries, next: 0, skipped })
}

/// Writes one frame in `layout`, creating the sequence's calibration file.
/// Images are stored as 16-bit PNG.
pub fn export_sample(
    root: &Path,
    layout: Layout,
    sequence: &str,
    frame: &str,
    pair: &StereoPair,
    gt_depth: Option<&DepthMap>,
    rig: &CameraRig,
) -> HarnessResult<()> {
    let seq = root.join(sequence);
    write_text(&seq.join(layout.calibration_file()), &Calibration::from_rig(rig).to_text())?;
    let (left, right, gt) = layout.frame_paths(&seq, frame);
    write_image_png16(&left, &pair.left)?;
    write_image_png16(&right, &pair.right)?;
    if let Some(d) = gt_depth {
        write_depth(&gt, d)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_text_round_trip() {
        let c = Calibration { focal: 512.25, cx: 160.0, cy: 127.5, baseline: 4.1 };
        assert_eq!(Calibration::parse(&c.to_text()).unwrap(), c);
        assert!(Calibration::parse("focal = 1\n").unwrap_err().contains("missing 'cx'"));
        assert!(Calibration::parse("focal = 1\nskew = 0\n").is_err());
    }

    #[test]
    fn layout_names() {
        for l in [Layout::ScaredLike, Layout::LatteLike] {
            assert_eq!(Layout::parse(l.name()).unwrap(), l);
        }
        assert_eq!(Layout::parse("kitti").unwrap_err().exit_code(), 1);
    }
}
