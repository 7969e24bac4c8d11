//! Deterministic moving-shapes clips with occluders, written as one PNG per frame, and
//! the manifest-driven loader.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use hmpdm_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::VideoClip;
use crate::error::{io_err, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Rect,
    Disc,
}

/// Constant-velocity agent; `pos` is the top-left corner of its bounding box at frame 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Agent {
    pub shape: Shape,
    /// Bounding box size (width, height); discs use `size.0` as diameter.
    pub size: (usize, usize),
    pub pos: (i64, i64),
    pub velocity: (i64, i64),
    pub color: [u8; 3],
}

impl Agent {
    /// Top-left corner at frame `t`, before wrapping.
    pub fn position(&self, t: usize) -> (i64, i64) {
        (
            self.pos.0 + self.velocity.0 * t as i64,
            self.pos.1 + self.velocity.1 * t as i64,
        )
    }

    fn covers(&self, dx: usize, dy: usize) -> bool {
        match self.shape {
            Shape::Rect => dx < self.size.0 && dy < self.size.1,
            Shape::Disc => {
                let d = self.size.0 as f64;
                let r = d / 2.0;
                let (cx, cy) = (dx as f64 + 0.5 - r, dy as f64 + 0.5 - r);
                cx * cx + cy * cy <= r * r
            }
        }
    }
}

/// Static rectangle drawn above all agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occluder {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub color: [u8; 3],
}

impl Occluder {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub background: [u8; 3],
    pub agents: Vec<Agent>,
    pub occluder: Option<Occluder>,
    /// Agents wrap around the canvas edges; otherwise they are clipped.
    pub wrap: bool,
    /// Value written to the red channel of the bottom-right pixel of every frame.
    pub watermark: Option<u8>,
    pub seed: u64,
}

const PALETTE: [[u8; 3]; 6] = [
    [230, 60, 50],
    [60, 200, 80],
    [70, 110, 240],
    [240, 210, 60],
    [220, 90, 220],
    [70, 220, 220],
];

impl SceneSpec {
    /// A road-like scene with one to three agents and an optional occluding pillar.
    pub fn random(height: usize, width: usize, frames: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_agents = rng.random_range(1..=3);
        let agents = (0..n_agents)
            .map(|_| {
                let shape = if rng.random_bool(0.5) { Shape::Rect } else { Shape::Disc };
                let size = match shape {
                    Shape::Rect => (rng.random_range(5..=9), rng.random_range(4..=7)),
                    Shape::Disc => {
                        let d = rng.random_range(5..=8);
                        (d, d)
                    }
                };
                let mut velocity = (rng.random_range(-2..=2), rng.random_range(-1..=1));
                if velocity == (0, 0) {
                    velocity.0 = 1;
                }
                Agent {
                    shape,
                    size,
                    pos: (
                        rng.random_range(0..width as i64),
                        rng.random_range(0..(height - size.1) as i64),
                    ),
                    velocity,
                    color: PALETTE[rng.random_range(0..PALETTE.len())],
                }
            })
            .collect();
        let occluder = rng.random_bool(0.5).then(|| {
            let w = rng.random_range(3..=5);
            Occluder {
                x: rng.random_range(0..width - w),
                y: 0,
                width: w,
                height,
                color: [150, 150, 150],
            }
        });
        SceneSpec {
            height,
            width,
            frames,
            background: [40, 40, 48],
            agents,
            occluder,
            wrap: true,
            watermark: None,
            seed,
        }
    }

    fn check(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return Err(Error::Invalid("scene canvas and frame count must be positive".into()));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.size.0 == 0 || a.size.1 == 0 || a.size.0 > self.width || a.size.1 > self.height {
                return Err(Error::Invalid(format!(
                    "agent {i} of size {:?} does not fit the {}x{} canvas",
                    a.size, self.width, self.height
                )));
            }
        }
        Ok(())
    }

    /// Interleaved 8-bit RGB of frame `t`, row-major.
    pub fn render_frame(&self, t: usize) -> Vec<u8> {
        let (h, w) = (self.height, self.width);
        let mut img: Vec<u8> = self.background.iter().copied().cycle().take(h * w * 3).collect();
        for a in &self.agents {
            let (px, py) = a.position(t);
            for dy in 0..a.size.1 {
                for dx in 0..a.size.0 {
                    if !a.covers(dx, dy) {
                        continue;
                    }
                    let (x, y) = (px + dx as i64, py + dy as i64);
                    let (x, y) = if self.wrap {
                        (x.rem_euclid(w as i64), y.rem_euclid(h as i64))
                    } else if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        continue;
                    } else {
                        (x, y)
                    };
                    let o = (y as usize * w + x as usize) * 3;
                    img[o..o + 3].copy_from_slice(&a.color);
                }
            }
        }
        if let Some(occ) = self.occluder {
            for y in 0..h {
                for x in 0..w {
                    if occ.contains(x, y) {
                        let o = (y * w + x) * 3;
                        img[o..o + 3].copy_from_slice(&occ.color);
                    }
                }
            }
        }
        if let Some(mark) = self.watermark {
            img[(h * w - 1) * 3] = mark;
        }
        img
    }
}

/// Renders every frame as a `(1, T, 3, H, W)` clip in [0, 1].
pub fn generate_clip(spec: &SceneSpec) -> Result<VideoClip> {
    spec.check()?;
    let frames: Vec<Vec<u8>> = (0..spec.frames).map(|t| spec.render_frame(t)).collect();
    frames_to_clip(&frames, spec.height, spec.width)
}

/// HWC 8-bit frames to a `(1, T, 3, H, W)` clip.
pub fn frames_to_clip(frames: &[Vec<u8>], height: usize, width: usize) -> Result<VideoClip> {
    let mut data = Vec::with_capacity(frames.len() * 3 * height * width);
    for f in frames {
        if f.len() != height * width * 3 {
            return Err(Error::Invalid(format!("frame has {} bytes, expected {}", f.len(), height * width * 3)));
        }
        for c in 0..3 {
            data.extend(f.iter().skip(c).step_by(3).map(|&v| v as f32 / 255.0));
        }
    }
    VideoClip::new(Tensor::new(&[1, frames.len(), 3, height, width], data)?)
}

/// Frame `(b, t)` of a clip as HWC 8-bit RGB.
pub fn frame_to_rgb8(clip: &VideoClip, b: usize, t: usize) -> Vec<u8> {
    let plane = clip.height() * clip.width();
    let frame = clip.frame(b, t);
    let mut out = vec![0u8; plane * 3];
    for c in 0..3 {
        for i in 0..plane {
            out[i * 3 + c] = (frame[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    out
}

pub fn write_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let image_err = |e: png::EncodingError| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(image_err)?;
    writer.write_image_data(rgb).map_err(image_err)?;
    writer.finish().map_err(image_err)
}

/// Reads an 8-bit RGB PNG; returns `(width, height, rgb)`.
pub fn read_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(io_err(path))?;
    let image_err = |msg: String| Error::Image {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = png::Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(|e| image_err(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(image_err(format!(
            "expected 8-bit RGB, found {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

pub fn frame_file_name(t: usize) -> String {
    format!("frame_{t:04}.png")
}

/// Writes frames of batch element `b` as `frame_0000.png`.. into `dir`.
pub fn write_clip_frames(dir: &Path, clip: &VideoClip, b: usize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for t in 0..clip.frames() {
        write_png(&dir.join(frame_file_name(t)), clip.width(), clip.height(), &frame_to_rgb8(clip, b, t))?;
    }
    Ok(())
}

/// Number of consecutive frame files `frame_0000.png`.. in `dir`.
pub fn count_frames(dir: &Path) -> Result<usize> {
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", dir.display())));
    }
    Ok((0..).take_while(|&t| dir.join(frame_file_name(t)).is_file()).count())
}

/// Reads `frames` consecutive frame files starting at `start` as a `(1, frames, 3, H, W)` clip.
pub fn read_clip_frames(dir: &Path, start: usize, frames: usize) -> Result<VideoClip> {
    let mut imgs = Vec::with_capacity(frames);
    let mut dims = None;
    for t in start..start + frames {
        let (w, h, rgb) = read_png(&dir.join(frame_file_name(t)))?;
        if dims.is_some_and(|d| d != (w, h)) {
            return Err(Error::Dataset(format!("{}: frame {t} size differs", dir.display())));
        }
        dims = Some((w, h));
        imgs.push(rgb);
    }
    let (w, h) = dims.ok_or_else(|| Error::Dataset("no frames requested".into()))?;
    frames_to_clip(&imgs, h, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Dataset(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipEntry {
    pub split: Split,
    /// Directory relative to the manifest root.
    pub dir: String,
    pub frames: usize,
}

/// Clip listing read from `manifest.tsv` (`split<TAB>dir<TAB>T` lines).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ClipEntry>,
}

impl DatasetManifest {
    pub fn path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    /// Accepts the manifest file or the directory holding it.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let text = std::fs::read_to_string(&file).map_err(io_err(&file))?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let [split, dir, frames] = parts[..] else {
                return Err(Error::Dataset(format!("{}:{}: expected 3 tab-separated fields", file.display(), n + 1)));
            };
            let frames = frames
                .trim()
                .parse()
                .map_err(|_| Error::Dataset(format!("{}:{}: bad frame count `{frames}`", file.display(), n + 1)))?;
            entries.push(ClipEntry {
                split: split.parse()?,
                dir: dir.to_string(),
                frames,
            });
        }
        Ok(DatasetManifest { root, entries })
    }

    pub fn save(&self) -> Result<()> {
        let text: String = self
            .entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.split.as_str(), e.dir, e.frames))
            .collect();
        let path = self.path();
        std::fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn clips(&self, split: Split) -> Vec<&ClipEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    /// Every clip must hold at least `P + F` frames.
    pub fn validate(&self, history: usize, future: usize) -> Result<()> {
        for e in &self.entries {
            if history + future > e.frames {
                return Err(Error::Dataset(format!(
                    "P+F = {} exceeds the {} frames of clip {}",
                    history + future,
                    e.frames,
                    e.dir
                )));
            }
        }
        Ok(())
    }

    pub fn clip_dir(&self, e: &ClipEntry) -> PathBuf {
        self.root.join(&e.dir)
    }

    /// All frames of one clip.
    pub fn load_clip(&self, e: &ClipEntry) -> Result<VideoClip> {
        read_clip_frames(&self.clip_dir(e), 0, e.frames)
    }
}

/// Generates `n_train + n_test` clips of `frames` frames under `out` and writes the manifest.
pub fn build_dataset(
    out: &Path,
    n_train: usize,
    n_test: usize,
    frames: usize,
    seed: u64,
    canvas: (usize, usize),
) -> Result<DatasetManifest> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::Invalid("need at least one train and one test clip".into()));
    }
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut entries = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (split, count) in [(Split::Train, n_train), (Split::Test, n_test)] {
        for i in 0..count {
            let mut spec = SceneSpec::random(canvas.0, canvas.1, frames, rng.random());
            spec.watermark = Some((entries.len() % 256) as u8);
            let dir = format!("{}/clip_{i:04}", split.as_str());
            write_clip_frames(&out.join(&dir), &generate_clip(&spec)?, 0)?;
            entries.push(ClipEntry { split, dir, frames });
        }
    }
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        entries,
    };
    manifest.save()?;
    Ok(manifest)
}

/// Loads `(c, x)`: frames `offset..offset+P` and the following `F` of each selected clip.
pub fn load_batch(
    manifest: &DatasetManifest,
    split: Split,
    indices: &[usize],
    history: usize,
    future: usize,
    offset: usize,
) -> Result<(VideoClip, VideoClip)> {
    let clips = manifest.clips(split);
    let (mut cs, mut xs) = (Vec::new(), Vec::new());
    for &i in indices {
        let e = clips.get(i).ok_or_else(|| {
            Error::Dataset(format!("{} clip index {i} out of range ({} clips)", split.as_str(), clips.len()))
        })?;
        if offset + history + future > e.frames {
            return Err(Error::Dataset(format!(
                "clip {} has {} frames, need {} from offset {offset}",
                e.dir,
                e.frames,
                history + future
            )));
        }
        let clip = read_clip_frames(&manifest.clip_dir(e), offset, history + future)?;
        cs.push(clip.narrow_frames(0, history)?);
        xs.push(clip.narrow_frames(history, future)?);
    }
    Ok((VideoClip::stack(&cs)?, VideoClip::stack(&xs)?))
}
