//! Checkpoint directory: `manifest.txt` (format version, configuration,
//! vocabulary files, tensor index), `weights.bin` (little-endian f32 in
//! manifest order) and one `id<TAB>symbol` file per vocabulary.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use crate::config::{configs_from_pairs, parse_pairs, to_pairs};
use crate::data::{Vocab, Vocabularies};
use crate::encoders::PretrainedWords;
use crate::error::{Error, Result};
use crate::model::Tagger;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::training::{init_rng, TrainConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.txt";
pub const WEIGHTS: &str = "weights.bin";

const VOCAB_FILES: [(&str, &str); 4] = [
    ("vocab.chars", "chars.tsv"),
    ("vocab.words", "words.tsv"),
    ("vocab.tags", "tags.tsv"),
    ("vocab.pretrained", "pretrained.tsv"),
];

pub struct Checkpoint {
    pub tagger: Tagger,
    pub params: ParamStore<f32>,
    pub train: TrainConfig,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn vocab_bytes(v: &Vocab) -> Vec<u8> {
    let mut out = Vec::new();
    v.write_tsv(&mut out).expect("writing to memory");
    out
}

/// Writes the checkpoint into `dir`, creating it if needed.
pub fn save(dir: impl AsRef<Path>, tagger: &Tagger, params: &ParamStore<f32>, train: &TrainConfig) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut manifest = format!("format_version={FORMAT_VERSION}\n");
    for (k, v) in to_pairs(&tagger.config, train) {
        manifest.push_str(&format!("config.{k}={v}\n"));
    }
    let vocabs: Vec<(&str, &str, &Vocab)> = VOCAB_FILES
        .iter()
        .zip([
            Some(&tagger.vocab.chars),
            Some(&tagger.vocab.words),
            Some(&tagger.vocab.tags),
            tagger.encoder.pretrained_words(),
        ])
        .filter_map(|(&(key, file), v)| v.map(|v| (key, file, v)))
        .collect();
    for (key, file, v) in &vocabs {
        manifest.push_str(&format!("{key}={file}\n"));
        write_file(&dir.join(file), &vocab_bytes(v))?;
    }

    let mut blob = Vec::with_capacity(params.num_values() * 4);
    let mut offset = 0usize;
    for id in params.ids() {
        let t = params.value(id);
        let shape = t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
        manifest.push_str(&format!(
            "tensor={}\t{}\t{}\t{}\n",
            params.name(id),
            shape,
            offset,
            t.len()
        ));
        for &x in t.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        offset += t.len();
    }
    write_file(&dir.join(WEIGHTS), &blob)?;
    write_file(&dir.join(MANIFEST), manifest.as_bytes())
}

struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

fn read_vocab(dir: &Path, file: &str) -> Result<Vocab> {
    let path = dir.join(file);
    let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    Vocab::read_tsv(BufReader::new(f), &path.display().to_string())
}

pub fn load(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let source = manifest_path.display().to_string();
    let bad = |msg: String| Error::Checkpoint(format!("{source}: {msg}"));

    let mut version = None;
    let mut config = Vec::new();
    let mut files = std::collections::HashMap::new();
    let mut tensors = Vec::new();
    for (k, v) in parse_pairs(&text, &source)? {
        if k == "format_version" {
            version = Some(v);
        } else if let Some(key) = k.strip_prefix("config.") {
            config.push((key.to_string(), v));
        } else if k.starts_with("vocab.") {
            files.insert(k, v);
        } else if k == "tensor" {
            let f: Vec<&str> = v.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(format!("malformed tensor entry {v:?}")));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad number {s:?}")));
            let shape = f[1].split('x').map(num).collect::<Result<Vec<_>>>()?;
            let entry = TensorEntry {
                name: f[0].to_string(),
                offset: num(f[2])?,
                len: num(f[3])?,
                shape,
            };
            if entry.shape.iter().product::<usize>() != entry.len {
                return Err(bad(format!("tensor {} shape does not match its length", entry.name)));
            }
            tensors.push(entry);
        } else {
            return Err(bad(format!("unknown manifest key {k:?}")));
        }
    }
    match version.as_deref() {
        Some(v) if v == FORMAT_VERSION.to_string() => {}
        Some(v) => return Err(bad(format!("unsupported format version {v}"))),
        None => return Err(bad("missing format_version".into())),
    }
    let (model, train) = configs_from_pairs(&config)?;

    let vocab_file = |key: &str| {
        files
            .get(key)
            .ok_or_else(|| bad(format!("missing {key}")))
            .and_then(|f| read_vocab(dir, f))
    };
    let vocab = Vocabularies {
        chars: vocab_file("vocab.chars")?,
        words: vocab_file("vocab.words")?,
        tags: vocab_file("vocab.tags")?,
        singleton_chars: Default::default(),
        singleton_words: Default::default(),
    };
    let pretrained = if files.contains_key("vocab.pretrained") {
        let words = vocab_file("vocab.pretrained")?;
        let rows = words.len() + 1;
        Some(PretrainedWords {
            words,
            table: Tensor::zeros(&[rows, model.encoder.pretrained_dim]),
        })
    } else {
        None
    };
    let (tagger, mut params) = Tagger::new::<f32>(model, vocab, pretrained.as_ref(), &mut init_rng(0))?;

    let weights_path = dir.join(WEIGHTS);
    let blob = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    if blob.len() % 4 != 0 {
        return Err(bad("weights blob length is not a multiple of 4".into()));
    }
    let values: Vec<f32> = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if tensors.len() != params.len() {
        return Err(bad(format!(
            "{} tensors in manifest, model has {}",
            tensors.len(),
            params.len()
        )));
    }
    let mut expected_offset = 0;
    for (id, entry) in params.ids().collect::<Vec<_>>().into_iter().zip(&tensors) {
        if entry.name != params.name(id) || entry.shape != params.value(id).shape() {
            return Err(bad(format!(
                "tensor {} {:?} does not match model parameter {} {:?}",
                entry.name,
                entry.shape,
                params.name(id),
                params.value(id).shape()
            )));
        }
        if entry.offset != expected_offset || entry.offset + entry.len > values.len() {
            return Err(bad(format!("tensor {} has an inconsistent offset", entry.name)));
        }
        let data = values[entry.offset..entry.offset + entry.len].to_vec();
        params.set_value(id, Tensor::from_vec(&entry.shape, data)?)?;
        expected_offset += entry.len;
    }
    if expected_offset != values.len() {
        return Err(bad("weights blob has trailing data".into()));
    }
    Ok(Checkpoint { tagger, params, train })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EncoderKind;
    use crate::training::{toy_batch, toy_model_config, toy_pretrained};

    fn tmpdir(name: &str) -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("morphtag-ckpt-{}-{name}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        d
    }

    fn dir_bytes(d: &Path) -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        v.sort();
        v
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let batch = toy_batch();
        let pre = toy_pretrained(&batch, 3, 1);
        for (kind, pretrained) in [
            (EncoderKind::CnnHighway, None),
            (EncoderKind::Blstm, Some(&pre)),
        ] {
            let mut cfg = toy_model_config(kind, true);
            if pretrained.is_some() {
                cfg.encoder.pretrained = crate::data::PretrainedMode::Fixed;
            }
            let vocab = Vocabularies::build(&batch).unwrap();
            let (tagger, params) = Tagger::new::<f32>(cfg, vocab, pretrained, &mut init_rng(4)).unwrap();
            let (a, b) = (tmpdir(&format!("{kind}-a")), tmpdir(&format!("{kind}-b")));
            save(&a, &tagger, &params, &TrainConfig::default()).unwrap();
            let ck = load(&a).unwrap();
            save(&b, &ck.tagger, &ck.params, &ck.train).unwrap();
            assert_eq!(dir_bytes(&a), dir_bytes(&b));

            let words: Vec<&[String]> = batch.iter().map(|s| s.words.as_slice()).collect();
            assert_eq!(
                tagger.predict(&params, &words).unwrap(),
                ck.tagger.predict(&ck.params, &words).unwrap()
            );
            assert_eq!(
                ck.params.is_trainable(ck.tagger.encoder.word_table().unwrap_or(ck.tagger.classifier.weight)),
                pretrained.is_none()
            );
            let _ = fs::remove_dir_all(&a);
            let _ = fs::remove_dir_all(&b);
        }
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let batch = toy_batch();
        let vocab = Vocabularies::build(&batch).unwrap();
        let (tagger, params) =
            Tagger::new::<f32>(toy_model_config(EncoderKind::Lut, false), vocab, None, &mut init_rng(4)).unwrap();
        let d = tmpdir("corrupt");
        save(&d, &tagger, &params, &TrainConfig::default()).unwrap();
        let weights = fs::read(d.join(WEIGHTS)).unwrap();
        fs::write(d.join(WEIGHTS), &weights[..weights.len() - 4]).unwrap();
        assert!(load(&d).is_err());
        fs::write(d.join(WEIGHTS), &weights).unwrap();
        let manifest = fs::read_to_string(d.join(MANIFEST)).unwrap();
        fs::write(d.join(MANIFEST), manifest.replace("format_version=1", "format_version=9")).unwrap();
        assert!(matches!(load(&d), Err(Error::Checkpoint(_))));
        fs::write(d.join(MANIFEST), manifest.replace("format_version=1\n", "")).unwrap();
        assert!(load(&d).is_err());
        let _ = fs::remove_dir_all(&d);
    }
}
