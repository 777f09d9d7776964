use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use heatmap_bfv::serialize::{open, BlobKind};
use heatmap_bfv::{EvalKeys, KeyMaterial, SecretKey};
use heatmap_core::matrix::MATRIX_MAGIC;
use heatmap_core::protocol::{context_for, IndexMapping};
use heatmap_core::CdrMatrix;

pub const SECRET_FILE: &str = "secret.key";
pub const EVAL_FILE: &str = "eval.keys";

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let f = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

/// Non-empty lines with surrounding whitespace removed; `#` starts a comment.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn read_indicator(path: &Path) -> Result<Vec<u64>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.parse::<u64>()
                .with_context(|| format!("{}:{}: `{l}` is not a non-negative integer", path.display(), i + 1))
        })
        .collect()
}

/// Binary layout when the file starts with the matrix magic, CSV otherwise.
pub fn load_matrix(path: &Path) -> Result<CdrMatrix> {
    let bytes = read(path)?;
    let m = if bytes.starts_with(&MATRIX_MAGIC) {
        CdrMatrix::read_binary(&bytes[..]).map(|(m, _)| m)
    } else {
        CdrMatrix::read_csv(&bytes[..])
    };
    m.with_context(|| format!("{}", path.display()))
}

pub fn save_matrix(path: &Path, m: &CdrMatrix, t: u64) -> Result<()> {
    let mut w = create(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        m.write_csv(&mut w)?;
    } else {
        m.write_binary(&mut w, t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_mapping(path: &Path) -> Result<IndexMapping> {
    let f = fs::File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(IndexMapping::read_csv(BufReader::new(f))?)
}

fn key_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join(SECRET_FILE), dir.join(EVAL_FILE))
}

pub fn load_secret(dir: &Path) -> Result<SecretKey> {
    let (sk_path, _) = key_paths(dir);
    let bytes = read(&sk_path)?;
    let (params, _) = open(&bytes, BlobKind::SecretKey).with_context(|| format!("{}", sk_path.display()))?;
    let ctx = context_for(&params)?;
    Ok(SecretKey::from_blob(&ctx, &bytes)?)
}

pub fn load_keys(dir: &Path) -> Result<KeyMaterial> {
    let secret = load_secret(dir)?;
    let (_, ek_path) = key_paths(dir);
    let eval = EvalKeys::from_blob(secret.context(), &read(&ek_path)?)
        .with_context(|| format!("{}", ek_path.display()))?;
    if eval.params().name() != secret.context().params().name() {
        bail!("secret and evaluation keys belong to different parameter sets");
    }
    Ok(KeyMaterial { secret, eval })
}

pub fn save_keys(dir: &Path, keys: &KeyMaterial) -> Result<(usize, usize)> {
    let (sk_path, ek_path) = key_paths(dir);
    let sk = keys.secret.to_blob();
    let ek = keys.eval.to_blob(keys.secret.context());
    write(&sk_path, &sk)?;
    write(&ek_path, &ek)?;
    Ok((sk.len(), ek.len()))
}

/// `tower,value` rows; labels fall back to the column index.
pub fn write_heatmap(path: &Path, towers: Option<&[String]>, values: &[i64]) -> Result<()> {
    if let Some(t) = towers {
        if t.len() != values.len() {
            bail!("{} tower ids for {} heatmap cells", t.len(), values.len());
        }
    }
    let mut w = create(path)?;
    writeln!(w, "tower,value")?;
    for (c, v) in values.iter().enumerate() {
        match towers {
            Some(t) => writeln!(w, "{},{v}", t[c])?,
            None => writeln!(w, "{c},{v}")?,
        }
    }
    w.flush()?;
    Ok(())
}
