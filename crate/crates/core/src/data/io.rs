//! Dataset directory layout.
//!
//! ```text
//! features.bin    "TGMZF1", u32 n, u32 d_x, n*d_x little-endian f32, row-major
//! labels.txt      one class id per line
//! attributes.txt  one class per line, space-separated reals
//! splits.txt      `seen:`, `unseen:`, `sup:`, `qry:` lines of class ids
//! classes.txt     optional, one class name per line
//! sources.txt     optional fusion offset table: `name offset count attr_dim`
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{Dataset, SourceInfo, SplitSpec};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const FEATURES_MAGIC: &[u8; 6] = b"TGMZF1";

pub fn save_dataset(d: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let x = d.raw_features();
    let mut buf = Vec::with_capacity(14 + 4 * x.len());
    buf.extend_from_slice(FEATURES_MAGIC);
    buf.extend_from_slice(&(x.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(x.cols() as u32).to_le_bytes());
    for v in x.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(dir.join("features.bin"), buf)?;

    let mut labels = String::new();
    for y in d.labels() {
        labels.push_str(&format!("{y}\n"));
    }
    fs::write(dir.join("labels.txt"), labels)?;

    let a = d.attributes();
    let mut attrs = String::new();
    for r in 0..a.rows() {
        let line: Vec<String> = a.row(r).iter().map(|v| format!("{v}")).collect();
        attrs.push_str(&line.join(" "));
        attrs.push('\n');
    }
    fs::write(dir.join("attributes.txt"), attrs)?;

    if let Some(s) = &d.split {
        write_split(s, &dir.join("splits.txt"))?;
    }
    if let Some(names) = &d.class_names {
        fs::write(dir.join("classes.txt"), names.join("\n") + "\n")?;
    }
    if !d.sources.is_empty() {
        let mut f = fs::File::create(dir.join("sources.txt"))?;
        for s in &d.sources {
            writeln!(f, "{} {} {} {}", s.name, s.class_offset, s.num_classes, s.attr_dim)?;
        }
    }
    fs::write(dir.join("name.txt"), format!("{}\n", d.name))?;
    Ok(())
}

pub fn write_split(s: &SplitSpec, path: &Path) -> Result<()> {
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    let text = format!(
        "seen: {}\nunseen: {}\nsup: {}\nqry: {}\n",
        join(&s.seen),
        join(&s.unseen),
        join(&s.support),
        join(&s.query)
    );
    fs::write(path, text)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::format(path, None, format!("cannot read: {e}")))
}

fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::format(path, None, format!("cannot read: {e}")))?;
    if bytes.len() < 14 || &bytes[..6] != FEATURES_MAGIC {
        return Err(Error::format(path, None, "bad magic"));
    }
    let n = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let dx = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let body = &bytes[14..];
    if body.len() != 4 * n * dx {
        return Err(Error::format(
            path,
            None,
            format!(
                "expected {} payload bytes for {n}x{dx}, found {}",
                4 * n * dx,
                body.len()
            ),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::from_vec(n, dx, data)
}

fn parse_ids(path: &Path, line_no: usize, text: &str) -> Result<Vec<usize>> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::format(path, Some(line_no), format!("`{t}` is not a class id")))
        })
        .collect()
}

pub fn read_split(path: &Path) -> Result<SplitSpec> {
    let text = read_text(path)?;
    let mut fields: [Option<Vec<usize>>; 4] = Default::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (key, rest) = line
            .split_once(':')
            .ok_or_else(|| Error::format(path, Some(line_no), "expected `key: ids`"))?;
        let slot = match key.trim() {
            "seen" => 0,
            "unseen" => 1,
            "sup" => 2,
            "qry" => 3,
            other => return Err(Error::format(path, Some(line_no), format!("unknown key `{other}`"))),
        };
        fields[slot] = Some(parse_ids(path, line_no, rest)?);
    }
    let [Some(seen), Some(unseen), Some(sup), Some(qry)] = fields else {
        return Err(Error::format(path, None, "needs seen, unseen, sup and qry lines"));
    };
    Ok(SplitSpec::new(seen, unseen, sup, qry))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let fpath = dir.join("features.bin");
    let features = read_features(&fpath)?;

    let lpath = dir.join("labels.txt");
    let mut labels = Vec::new();
    for (i, line) in read_text(&lpath)?.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        labels.push(
            t.parse::<usize>()
                .map_err(|_| Error::format(&lpath, Some(i + 1), format!("`{t}` is not a label")))?,
        );
    }
    if labels.len() != features.rows() {
        return Err(Error::format(
            &lpath,
            None,
            format!("{} labels but {} feature rows", labels.len(), features.rows()),
        ));
    }

    let apath = dir.join("attributes.txt");
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in read_text(&apath)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(&apath, Some(i + 1), format!("`{t}` is not a finite real")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::format(
                    &apath,
                    Some(i + 1),
                    format!("{} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let attributes = Tensor::from_rows(&rows)?;
    let c = attributes.rows();
    if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= c) {
        return Err(Error::format(
            &lpath,
            Some(i + 1),
            format!("label {y} outside [0, {c})"),
        ));
    }

    let name = fs::read_to_string(dir.join("name.txt"))
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|_| {
            dir.file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        });
    let mut d =
        Dataset::new(name, features, attributes, labels).map_err(|e| Error::format(dir, None, e.to_string()))?;

    let spath = dir.join("splits.txt");
    if spath.exists() {
        let split = read_split(&spath)?;
        split
            .validate(c)
            .map_err(|e| Error::format(&spath, None, e.to_string()))?;
        d.split = Some(split);
    }
    let cpath = dir.join("classes.txt");
    if cpath.exists() {
        let names: Vec<String> = read_text(&cpath)?.lines().map(str::to_string).collect();
        if names.len() != c {
            return Err(Error::format(
                &cpath,
                None,
                format!("{} names for {c} classes", names.len()),
            ));
        }
        d.class_names = Some(names);
    }
    let srcpath = dir.join("sources.txt");
    if srcpath.exists() {
        for (i, line) in read_text(&srcpath)?.lines().enumerate() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::format(&srcpath, Some(i + 1), "expected `name offset count attr_dim`");
            if parts.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
            d.sources.push(SourceInfo {
                name: parts[0].to_string(),
                class_offset: num(parts[1])?,
                num_classes: num(parts[2])?,
                attr_dim: num(parts[3])?,
            });
        }
    }
    Ok(d)
}
