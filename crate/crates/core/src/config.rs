//! Flat `key=value` configuration shared by config files, command-line
//! overrides, checkpoint manifests and metrics-log headers.

use std::fmt::Display;
use std::str::FromStr;

use crate::data::{PretrainedMode, Tagset};
use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(source, i + 1, format!("expected key=value, found {line:?}")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

fn list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Builds configs from ordered pairs; later pairs override earlier ones.
/// `encoder` picks the architecture defaults before any other key applies.
pub fn configs_from_pairs(pairs: &[(String, String)]) -> Result<(ModelConfig, TrainConfig)> {
    let kind = pairs
        .iter()
        .rev()
        .find(|(k, _)| k == "encoder")
        .map(|(_, v)| v.parse::<EncoderKind>())
        .transpose()?
        .unwrap_or(EncoderKind::Cnn);
    let tagset = pairs
        .iter()
        .rev()
        .find(|(k, _)| k == "tagset")
        .map(|(_, v)| v.parse::<Tagset>())
        .transpose()?
        .unwrap_or(Tagset::PosMorph);
    let mut model = ModelConfig::new(kind, tagset);
    let mut train = TrainConfig::default();
    for (k, v) in pairs {
        apply(&mut model, &mut train, k, v)?;
    }
    model.encoder.validate().or_else(|e| match e {
        // the embedding file is attached later
        Error::Config(_) if model.encoder.pretrained != PretrainedMode::None && model.encoder.pretrained_dim == 0 => Ok(()),
        e => Err(e),
    })?;
    train.validate()?;
    Ok((model, train))
}

pub fn apply(model: &mut ModelConfig, train: &mut TrainConfig, key: &str, v: &str) -> Result<()> {
    let e = &mut model.encoder;
    match key {
        "encoder" | "tagset" => {}
        "char_dim" => e.char_dim = parse_value(key, v)?,
        "word_dim" => e.word_dim = parse_value(key, v)?,
        "dnn_hidden" => e.dnn_hidden = parse_value(key, v)?,
        "max_word_len" => e.max_word_len = parse_value(key, v)?,
        "conv_filters" => e.conv_filters = parse_value(key, v)?,
        "conv_width" => e.conv_width = parse_value(key, v)?,
        "conv_layers" => e.conv_layers = parse_value(key, v)?,
        "highway_max_width" => e.highway_max_width = parse_value(key, v)?,
        "highway_filters_per_width" => e.highway_filters_per_width = parse_value(key, v)?,
        "highway_filter_cap" => e.highway_filter_cap = parse_value(key, v)?,
        "highway_layers" => e.highway_layers = parse_value(key, v)?,
        "lstm_hidden" => e.lstm_hidden = parse_list(key, v)?,
        "blstm_hidden" => e.blstm_hidden = parse_list(key, v)?,
        "pretrained" => e.pretrained = v.parse()?,
        "pretrained_dim" => e.pretrained_dim = parse_value(key, v)?,
        "context_layers" => model.context_layers = parse_value(key, v)?,
        "context_hidden" => model.context_hidden = parse_value(key, v)?,
        "skip_connections" => model.skip_connections = parse_value(key, v)?,
        "base_lr" => train.base_lr = parse_value(key, v)?,
        "rms_decay" => train.rms_decay = parse_value(key, v)?,
        "rms_eps" => train.rms_eps = parse_value(key, v)?,
        "batch_size" => train.batch_size = parse_value(key, v)?,
        "keep_prob" => train.keep_prob = parse_value(key, v)?,
        "variational_dropout" => train.variational_dropout = parse_value(key, v)?,
        "lr_halving_period" => train.lr_halving_period = parse_value(key, v)?,
        "max_epochs" => train.max_epochs = parse_value(key, v)?,
        "patience" => train.patience = parse_value(key, v)?,
        "grad_clip_norm" => train.grad_clip_norm = parse_value(key, v)?,
        "seed" => train.seed = parse_value(key, v)?,
        other => return Err(Error::config(format!("unknown configuration key {other:?}"))),
    }
    Ok(())
}

/// Every setting, in a fixed order.
pub fn to_pairs(model: &ModelConfig, train: &TrainConfig) -> Vec<(&'static str, String)> {
    let e = &model.encoder;
    vec![
        ("encoder", e.kind.to_string()),
        ("tagset", model.tagset.to_string()),
        ("char_dim", e.char_dim.to_string()),
        ("word_dim", e.word_dim.to_string()),
        ("dnn_hidden", e.dnn_hidden.to_string()),
        ("max_word_len", e.max_word_len.to_string()),
        ("conv_filters", e.conv_filters.to_string()),
        ("conv_width", e.conv_width.to_string()),
        ("conv_layers", e.conv_layers.to_string()),
        ("highway_max_width", e.highway_max_width.to_string()),
        ("highway_filters_per_width", e.highway_filters_per_width.to_string()),
        ("highway_filter_cap", e.highway_filter_cap.to_string()),
        ("highway_layers", e.highway_layers.to_string()),
        ("lstm_hidden", list(&e.lstm_hidden)),
        ("blstm_hidden", list(&e.blstm_hidden)),
        ("pretrained", e.pretrained.to_string()),
        ("pretrained_dim", e.pretrained_dim.to_string()),
        ("context_layers", model.context_layers.to_string()),
        ("context_hidden", model.context_hidden.to_string()),
        ("skip_connections", model.skip_connections.to_string()),
        ("base_lr", train.base_lr.to_string()),
        ("rms_decay", train.rms_decay.to_string()),
        ("rms_eps", train.rms_eps.to_string()),
        ("batch_size", train.batch_size.to_string()),
        ("keep_prob", train.keep_prob.to_string()),
        ("variational_dropout", train.variational_dropout.to_string()),
        ("lr_halving_period", train.lr_halving_period.to_string()),
        ("max_epochs", train.max_epochs.to_string()),
        ("patience", train.patience.to_string()),
        ("grad_clip_norm", train.grad_clip_norm.to_string()),
        ("seed", train.seed.to_string()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut model = ModelConfig::new(EncoderKind::Lstm, Tagset::Morph);
        model.skip_connections = true;
        model.encoder.lstm_hidden = vec![64, 32];
        let train = TrainConfig {
            base_lr: 3e-4,
            seed: 42,
            ..TrainConfig::default()
        };
        let pairs: Vec<(String, String)> = to_pairs(&model, &train)
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let (m2, t2) = configs_from_pairs(&pairs).unwrap();
        assert_eq!(m2, model);
        assert_eq!(t2, train);
    }

    #[test]
    fn encoder_defaults_then_overrides() {
        let text = "# comment\nencoder = cnnhighway\n\nhighway_layers=1\n";
        let (m, t) = configs_from_pairs(&parse_pairs(text, "cfg").unwrap()).unwrap();
        assert_eq!(m.encoder.char_dim, 15);
        assert_eq!(m.encoder.highway_layers, 1);
        assert_eq!(t.batch_size, 16);
    }

    #[test]
    fn errors() {
        assert!(parse_pairs("novalue\n", "cfg").is_err());
        let bad = |k: &str, v: &str| configs_from_pairs(&[(k.to_string(), v.to_string())]).is_err();
        assert!(bad("frobnicate", "1"));
        assert!(bad("batch_size", "x"));
        assert!(bad("keep_prob", "0"));
        assert!(bad("tagset", "LEMMA"));
    }
}
