use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ImagePromptPair;
use crate::error::{Error, Result};
use crate::numerics::record::{load_tensor_file, save_tensor_file};

pub const MOS_MIN: f64 = 0.0;
pub const MOS_MAX: f64 = 5.0;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: String,
    image: PathBuf,
    prompt: String,
    mos_quality: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mos_align: Option<f64>,
    object: String,
}

/// Reads a JSONL manifest. Image paths are resolved against the manifest's
/// directory. Blank lines are skipped.
pub fn load_manifest(path: &Path) -> Result<Vec<ImagePromptPair>> {
    let file = std::fs::File::open(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let err = |line: usize, msg: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (i, text) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let line: Line = serde_json::from_str(&text).map_err(|e| err(n, e.to_string()))?;
        if line.id.is_empty() {
            return Err(err(n, "empty id".into()));
        }
        if !seen.insert(line.id.clone()) {
            return Err(err(n, format!("duplicate id `{}`", line.id)));
        }
        if line.object.is_empty() {
            return Err(err(n, "empty object label".into()));
        }
        check_mos(line.mos_quality, "mos_quality").map_err(|m| err(n, m))?;
        if let Some(a) = line.mos_align {
            check_mos(a, "mos_align").map_err(|m| err(n, m))?;
        }
        let image_path = base.join(&line.image);
        let (_, image) = load_tensor_file(&image_path)
            .map_err(|e| err(n, format!("image {}: {e}", image_path.display())))?;
        if image.rank() != 3 {
            return Err(err(n, format!("image must be [C×H×W], got {:?}", image.shape())));
        }
        pairs.push(ImagePromptPair {
            id: line.id,
            image,
            prompt: line.prompt,
            mos_quality: line.mos_quality,
            mos_align: line.mos_align,
            object_label: line.object,
        });
    }
    Ok(pairs)
}

fn check_mos(v: f64, field: &str) -> std::result::Result<(), String> {
    if v.is_finite() && (MOS_MIN..=MOS_MAX).contains(&v) {
        Ok(())
    } else {
        Err(format!("{field} = {v} outside [{MOS_MIN}, {MOS_MAX}]"))
    }
}

/// Writes `path` plus one tensor-record file per image under
/// `<manifest dir>/images/`.
pub fn save_manifest(path: &Path, pairs: &[ImagePromptPair]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(base.join("images"))?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in pairs {
        if p.id.is_empty() || p.id.contains(['/', '\\']) {
            return Err(Error::Data(format!("id `{}` cannot name an image file", p.id)));
        }
        let rel = PathBuf::from("images").join(format!("{}.tensor", p.id));
        save_tensor_file(&base.join(&rel), &p.id, &p.image)?;
        let line = Line {
            id: p.id.clone(),
            image: rel,
            prompt: p.prompt.clone(),
            mos_quality: p.mos_quality,
            mos_align: p.mos_align,
            object: p.object_label.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn pair(id: &str, align: Option<f64>) -> ImagePromptPair {
        ImagePromptPair {
            id: id.into(),
            image: Tensor::new(vec![1, 2, 2], vec![0.1, -0.2, 1.0 / 3.0, 4.0]).unwrap(),
            prompt: "a red apple".into(),
            mos_quality: 3.25,
            mos_align: align,
            object_label: "apple".into(),
        }
    }

    #[test]
    fn empty_file_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let pairs = vec![pair("a", None), pair("b", Some(0.5))];
        save_manifest(&p, &pairs).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), pairs);
    }

    #[test]
    fn missing_field_names_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        save_manifest(&p, &[pair("a", None)]).unwrap();
        let good = std::fs::read_to_string(&p).unwrap();
        let bad = good.replace("\"prompt\":\"a red apple\",", "");
        std::fs::write(&p, format!("{good}{bad}")).unwrap();
        let msg = load_manifest(&p).unwrap_err().to_string();
        assert!(msg.contains(":2:"), "{msg}");
        assert!(msg.contains("prompt"), "{msg}");
    }

    #[test]
    fn out_of_range_mos_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let mut bad = pair("a", None);
        bad.mos_quality = 5.5;
        save_manifest(&p, &[bad]).unwrap();
        let e = load_manifest(&p).unwrap_err();
        assert!(matches!(e, Error::Manifest { line: 1, .. }), "{e}");
    }
}
