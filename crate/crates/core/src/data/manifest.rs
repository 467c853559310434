//! Line-oriented split manifests: `<image>\t<mask or ->` per line, with
//! optional `# key=value` metadata comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::pnm::{load_image, load_mask};
use super::{DataError, ImageGrid, LabelGrid};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub split: String,
    pub entries: Vec<ManifestEntry>,
    pub num_classes: Option<usize>,
    pub dims: Option<(usize, usize)>,
    pub seed: Option<u64>,
}

fn relative(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().into_owned()
}

impl DatasetManifest {
    pub fn new(split: &str) -> Self {
        Self { split: split.into(), entries: Vec::new(), num_classes: None, dims: None, seed: None }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes the manifest; paths under the manifest's directory are stored relative.
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut s = String::new();
        write!(s, "# split={}", self.split).unwrap();
        if let Some(c) = self.num_classes {
            write!(s, " classes={c}").unwrap();
        }
        if let Some((h, w)) = self.dims {
            write!(s, " height={h} width={w}").unwrap();
        }
        if let Some(seed) = self.seed {
            write!(s, " seed={seed}").unwrap();
        }
        s.push('\n');
        for e in &self.entries {
            let mask = e.mask.as_ref().map(|m| relative(m, base)).unwrap_or_else(|| "-".into());
            writeln!(s, "{}\t{}", relative(&e.image, base), mask).unwrap();
        }
        std::fs::write(path, s).map_err(|e| DataError::io(path, e))
    }

    /// Parses a manifest; relative paths resolve against its directory and
    /// every referenced file must exist.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let mut m = Self::new(&stem);
        let bad = |line: usize, msg: String| DataError::Manifest { path: path.to_path_buf(), line, msg };
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split_whitespace() {
                    let Some((k, v)) = kv.split_once('=') else { continue };
                    let num = || v.parse::<u64>().map_err(|_| bad(line_no, format!("bad value for {k}")));
                    match k {
                        "split" => m.split = v.to_string(),
                        "classes" => m.num_classes = Some(num()? as usize),
                        "height" => m.dims = Some((num()? as usize, m.dims.map_or(0, |d| d.1))),
                        "width" => m.dims = Some((m.dims.map_or(0, |d| d.0), num()? as usize)),
                        "seed" => m.seed = Some(num()?),
                        _ => {}
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (img, mask) = line.split_once('\t').ok_or_else(|| bad(line_no, "expected <image>\\t<mask>".into()))?;
            let resolve = |p: &str| {
                let p = Path::new(p);
                if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
            };
            let image = resolve(img);
            let mask = (mask != "-").then(|| resolve(mask));
            for p in std::iter::once(&image).chain(mask.as_ref()) {
                if !p.is_file() {
                    return Err(bad(line_no, format!("missing file {}", p.display())));
                }
            }
            m.entries.push(ManifestEntry { image, mask });
        }
        Ok(m)
    }

    /// Loads every image (and mask, where present), checking uniform dims
    /// and class counts.
    pub fn load_samples(&self) -> Result<Vec<(ImageGrid, Option<LabelGrid>)>, DataError> {
        let mut out = Vec::with_capacity(self.entries.len());
        let mut dims = self.dims.filter(|d| d.0 > 0 && d.1 > 0);
        for e in &self.entries {
            let img = load_image(&e.image)?;
            let mask = e.mask.as_deref().map(load_mask).transpose()?;
            let d = img.dims();
            if *dims.get_or_insert(d) != d {
                return Err(DataError::Invalid(format!("{} has dims {:?}, expected {:?}", e.image.display(), d, dims.unwrap())));
            }
            if let Some(m) = &mask {
                if m.dims() != d {
                    return Err(DataError::Invalid(format!("mask dims {:?} differ from image {:?}", m.dims(), d)));
                }
                if self.num_classes.is_some_and(|c| c != m.num_classes()) {
                    return Err(DataError::Invalid(format!("mask has {} classes, manifest says {:?}", m.num_classes(), self.num_classes)));
                }
            }
            out.push((img, mask));
        }
        Ok(out)
    }
}
