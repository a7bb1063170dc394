//! Line-oriented text formats: the dataset manifest and the keypoint and
//! box annotation files it references.
//!
//! Manifest (`liftkit-manifest v1`): after the header, `#` lines are comments
//! and every other non-empty line is one record of tab-separated fields:
//!
//! ```text
//! id <TAB> image.ppm <TAB> s1=a.lftb <TAB> s1/2=b.lftb <TAB> s1/4=c.lftb
//!    [<TAB> img1/2=x.ppm] [<TAB> img1/4=y.ppm] [<TAB> kp=pair.kp] [<TAB> boxes=gt.boxes]
//! ```
//!
//! Paths are relative to the manifest's directory. Floats in annotation
//! files are written in shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::eval::{BBox, KeypointPair};
use crate::train::ToyFeaturizer;

pub const MANIFEST_HEADER: &str = "liftkit-manifest v1";
pub const KEYPOINTS_HEADER: &str = "liftkit-keypoints v1";
pub const BOXES_HEADER: &str = "liftkit-boxes v1";

const TOY_COMMENT: &str = "toy-featurizer";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub image: String,
    pub s1: String,
    pub s1_2: String,
    pub s1_4: String,
    pub img1_2: Option<String>,
    pub img1_4: Option<String>,
    pub keypoints: Option<String>,
    pub boxes: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    /// Comment lines without the leading `#`, written after the header.
    pub comments: Vec<String>,
    pub records: Vec<ManifestRecord>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    FormatError::Parse { line, msg: msg.into() }.into()
}

fn check_header(first: Option<&str>, header: &str) -> Result<()> {
    match first {
        Some(l) if l.trim_end() == header => Ok(()),
        Some(l) => Err(FormatError::BadMagic {
            expected: header.to_string(),
            found: l.chars().take(40).collect(),
        }
        .into()),
        None => Err(FormatError::Truncated(format!("missing `{header}` header")).into()),
    }
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        check_header(lines.next(), MANIFEST_HEADER)?;
        let mut manifest = Manifest::default();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                manifest.comments.push(c.to_string());
                continue;
            }
            manifest.records.push(parse_record(line, line_no)?);
        }
        Ok(manifest)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\n");
        for c in &self.comments {
            let _ = writeln!(out, "#{c}");
        }
        for r in &self.records {
            let _ = write!(
                out,
                "{}\t{}\ts1={}\ts1/2={}\ts1/4={}",
                r.id, r.image, r.s1, r.s1_2, r.s1_4
            );
            for (key, value) in [
                ("img1/2", &r.img1_2),
                ("img1/4", &r.img1_4),
                ("kp", &r.keypoints),
                ("boxes", &r.boxes),
            ] {
                if let Some(v) = value {
                    let _ = write!(out, "\t{key}={v}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::from(e).in_file(path))
    }

    /// Featurizer named by a `toy-featurizer seed=.. patch=.. dim=..` comment.
    pub fn toy_featurizer(&self) -> Result<Option<ToyFeaturizer>> {
        for c in &self.comments {
            let mut words = c.split_whitespace();
            if words.next() != Some(TOY_COMMENT) {
                continue;
            }
            let (mut seed, mut patch, mut dim) = (None, None, None);
            for w in words {
                if let Some((k, v)) = w.split_once('=') {
                    let parsed = v.parse::<u64>().ok();
                    match k {
                        "seed" => seed = parsed,
                        "patch" => patch = parsed,
                        "dim" => dim = parsed,
                        _ => {}
                    }
                }
            }
            return match (seed, patch, dim) {
                (Some(s), Some(p), Some(d)) => Ok(Some(ToyFeaturizer::new(s, p as usize, d as usize)?)),
                _ => Err(FormatError::Parse {
                    line: 0,
                    msg: format!("incomplete toy featurizer comment `{c}`"),
                }
                .into()),
            };
        }
        Ok(None)
    }

    pub fn toy_comment(featurizer: &ToyFeaturizer, res: usize) -> String {
        format!(
            " {TOY_COMMENT} seed={} patch={} dim={} res={res}",
            featurizer.seed(),
            featurizer.patch(),
            featurizer.dim()
        )
    }
}

fn parse_record(line: &str, line_no: usize) -> Result<ManifestRecord> {
    let mut fields = line.split('\t');
    let id = fields.next().unwrap_or_default().to_string();
    if id.is_empty() {
        return Err(parse_err(line_no, "empty record id"));
    }
    let image = fields
        .next()
        .filter(|s| !s.is_empty() && !s.contains('='))
        .ok_or_else(|| parse_err(line_no, "second field must be the image path"))?
        .to_string();
    let mut r = ManifestRecord {
        id,
        image,
        ..Default::default()
    };
    let mut s1 = None;
    let mut s1_2 = None;
    let mut s1_4 = None;
    for f in fields {
        let (key, value) = f
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, format!("field `{f}` is not key=value")))?;
        if value.is_empty() {
            return Err(parse_err(line_no, format!("empty path for `{key}`")));
        }
        let slot = match key {
            "s1" => &mut s1,
            "s1/2" => &mut s1_2,
            "s1/4" => &mut s1_4,
            "img1/2" => &mut r.img1_2,
            "img1/4" => &mut r.img1_4,
            "kp" => &mut r.keypoints,
            "boxes" => &mut r.boxes,
            _ => return Err(parse_err(line_no, format!("unknown field `{key}`"))),
        };
        if slot.is_some() {
            return Err(parse_err(line_no, format!("duplicate field `{key}`")));
        }
        *slot = Some(value.to_string());
    }
    let need = |v: Option<String>, k: &str| v.ok_or_else(|| parse_err(line_no, format!("missing `{k}` blob")));
    r.s1 = need(s1, "s1")?;
    r.s1_2 = need(s1_2, "s1/2")?;
    r.s1_4 = need(s1_4, "s1/4")?;
    Ok(r)
}

fn parse_floats<const N: usize>(words: &[&str], line: usize) -> Result<[f64; N]> {
    if words.len() != N {
        return Err(parse_err(line, format!("expected {N} numbers, got {}", words.len())));
    }
    let mut out = [0.0; N];
    for (o, w) in out.iter_mut().zip(words) {
        *o = w
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(line, format!("`{w}` is not a finite number")))?;
    }
    Ok(out)
}

fn parse_size(words: &[&str], line: usize) -> Result<(String, (usize, usize))> {
    if words.len() != 3 {
        return Err(parse_err(line, "expected `<id> <width> <height>`"));
    }
    let dim = |w: &str| {
        w.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| parse_err(line, format!("`{w}` is not a positive extent")))
    };
    Ok((words[0].to_string(), (dim(words[1])?, dim(words[2])?)))
}

pub fn parse_keypoints(text: &str) -> Result<KeypointPair> {
    let mut lines = text.lines();
    check_header(lines.next(), KEYPOINTS_HEADER)?;
    let mut source = None;
    let mut target = None;
    let mut bbox_src = None;
    let mut bbox_tgt = None;
    let mut keypoints = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let words: Vec<&str> = line.split_whitespace().collect();
        let Some((&tag, rest)) = words.split_first() else {
            continue;
        };
        match tag {
            "source" => source = Some(parse_size(rest, line_no)?),
            "target" => target = Some(parse_size(rest, line_no)?),
            "bbox_src" => {
                let [x, y, w, h] = parse_floats::<4>(rest, line_no)?;
                bbox_src = Some(BBox::new(x, y, w, h));
            }
            "bbox_tgt" => {
                let [x, y, w, h] = parse_floats::<4>(rest, line_no)?;
                bbox_tgt = Some(BBox::new(x, y, w, h));
            }
            "kp" => {
                let [sx, sy, tx, ty] = parse_floats::<4>(rest, line_no)?;
                keypoints.push(([sx, sy], [tx, ty]));
            }
            t if t.starts_with('#') => {}
            other => return Err(parse_err(line_no, format!("unknown tag `{other}`"))),
        }
    }
    let missing = |what: &str| Error::from(FormatError::Truncated(format!("keypoint file lacks `{what}`")));
    let (source_id, source_size) = source.ok_or_else(|| missing("source"))?;
    let (target_id, target_size) = target.ok_or_else(|| missing("target"))?;
    let pair = KeypointPair {
        source_id,
        target_id,
        source_size,
        target_size,
        keypoints,
        source_bbox: bbox_src.ok_or_else(|| missing("bbox_src"))?,
        target_bbox: bbox_tgt.ok_or_else(|| missing("bbox_tgt"))?,
    };
    pair.validate()?;
    Ok(pair)
}

pub fn format_keypoints(pair: &KeypointPair) -> String {
    let mut out = format!("{KEYPOINTS_HEADER}\n");
    let _ = writeln!(
        out,
        "source {} {} {}",
        pair.source_id, pair.source_size.0, pair.source_size.1
    );
    let _ = writeln!(
        out,
        "target {} {} {}",
        pair.target_id, pair.target_size.0, pair.target_size.1
    );
    for (tag, b) in [("bbox_src", &pair.source_bbox), ("bbox_tgt", &pair.target_bbox)] {
        let _ = writeln!(out, "{tag} {} {} {} {}", b.x, b.y, b.w, b.h);
    }
    for (s, t) in &pair.keypoints {
        let _ = writeln!(out, "kp {} {} {} {}", s[0], s[1], t[0], t[1]);
    }
    out
}

pub fn parse_boxes(text: &str) -> Result<Vec<BBox>> {
    let mut lines = text.lines();
    check_header(lines.next(), BOXES_HEADER)?;
    let mut boxes = Vec::new();
    for (i, line) in lines.enumerate() {
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() || words[0].starts_with('#') {
            continue;
        }
        let [x, y, w, h] = parse_floats::<4>(&words, i + 2)?;
        if !(w > 0.0 && h > 0.0) {
            return Err(parse_err(i + 2, "box must have positive extent"));
        }
        boxes.push(BBox::new(x, y, w, h));
    }
    Ok(boxes)
}

pub fn format_boxes(boxes: &[BBox]) -> String {
    let mut out = format!("{BOXES_HEADER}\n");
    for b in boxes {
        let _ = writeln!(out, "{} {} {} {}", b.x, b.y, b.w, b.h);
    }
    out
}

pub fn read_keypoints(path: impl AsRef<Path>) -> Result<KeypointPair> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    parse_keypoints(&text).map_err(|e| e.in_file(path))
}

pub fn read_boxes(path: impl AsRef<Path>) -> Result<Vec<BBox>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    parse_boxes(&text).map_err(|e| e.in_file(path))
}
