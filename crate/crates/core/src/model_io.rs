//! `.kan` model files.
//!
//! A short line-oriented header describing every layer, followed by one
//! weight per line printed with 17 significant digits so that every `f64`
//! survives the round trip exactly:
//!
//! ```text
//! leankan-model v1
//! layers 2
//! layer kind=add n_in=2 n_out=5 grid=4 normalizer=tanh base=on
//! layer kind=lean n_mu=3 n_in=5 n_out=2 grid=4 normalizer=tanh base=on
//! weights 100
//! -1.2345678901234567e-1
//! ...
//! end
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::basis::NormalizerKind;
use crate::error::{Error, Result};
use crate::layer::{LayerKind, LayerSpec};
use crate::network::Network;

pub const MAGIC: &str = "leankan-model";
pub const FORMAT_VERSION: u32 = 1;

pub fn model_to_string(net: &Network) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} v{FORMAT_VERSION}");
    let _ = writeln!(s, "layers {}", net.layers().len());
    for layer in net.layers() {
        let spec = layer.spec();
        let _ = write!(s, "layer kind={}", spec.kind.tag());
        match spec.kind {
            LayerKind::Add => {}
            LayerKind::Mult { n_a, k } => {
                let _ = write!(s, " n_a={n_a} k={k}");
            }
            LayerKind::Lean { n_mu } => {
                let _ = write!(s, " n_mu={n_mu}");
            }
        }
        let _ = writeln!(
            s,
            " n_in={} n_out={} grid={} normalizer={} base={}",
            spec.n_in,
            spec.n_out,
            spec.grid.n_points(),
            spec.normalizer,
            if spec.base_on { "on" } else { "off" }
        );
    }
    let params = net.flatten();
    let _ = writeln!(s, "weights {}", params.len());
    for w in params.iter() {
        let _ = writeln!(s, "{w:.16e}");
    }
    s.push_str("end\n");
    s
}

fn parse_usize(fields: &HashMap<&str, &str>, key: &str) -> Result<usize> {
    let raw = fields
        .get(key)
        .ok_or_else(|| Error::decode(key, "missing"))?;
    raw.parse()
        .map_err(|_| Error::decode(key, format!("expected a non-negative integer, got `{raw}`")))
}

fn parse_layer(line: &str) -> Result<LayerSpec> {
    let mut fields = HashMap::new();
    for tok in line.split_whitespace().skip(1) {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::decode("layer", format!("malformed token `{tok}`")))?;
        fields.insert(k, v);
    }
    let tag = *fields
        .get("kind")
        .ok_or_else(|| Error::decode("kind", "missing"))?;
    let kind = match tag {
        "add" => LayerKind::Add,
        "mult" => LayerKind::Mult {
            n_a: parse_usize(&fields, "n_a")?,
            k: parse_usize(&fields, "k")?,
        },
        "lean" => LayerKind::Lean {
            n_mu: parse_usize(&fields, "n_mu")?,
        },
        other => return Err(Error::decode("kind", format!("unknown layer kind tag `{other}`"))),
    };
    let norm_raw = *fields
        .get("normalizer")
        .ok_or_else(|| Error::decode("normalizer", "missing"))?;
    let normalizer = NormalizerKind::from_name(norm_raw)
        .ok_or_else(|| Error::decode("normalizer", format!("unknown normalizer `{norm_raw}`")))?;
    let base_on = match fields.get("base").copied() {
        Some("on") => true,
        Some("off") => false,
        Some(other) => return Err(Error::decode("base", format!("expected on/off, got `{other}`"))),
        None => return Err(Error::decode("base", "missing")),
    };
    LayerSpec::new(
        kind,
        parse_usize(&fields, "n_in")?,
        parse_usize(&fields, "n_out")?,
        parse_usize(&fields, "grid")?,
        normalizer,
        base_on,
    )
    .map_err(|e| Error::decode("layer", e.to_string()))
}

pub fn model_from_str(text: &str) -> Result<Network> {
    let mut lines = text.lines();
    let mut next = |field: &str| {
        lines
            .next()
            .ok_or_else(|| Error::decode(field.to_string(), "unexpected end of file"))
    };

    let header = next("header")?;
    let version = header
        .strip_prefix(MAGIC)
        .map(str::trim)
        .ok_or_else(|| Error::decode("header", format!("expected `{MAGIC}`, got `{header}`")))?;
    if version != format!("v{FORMAT_VERSION}") {
        return Err(Error::decode(
            "version",
            format!("unsupported format version `{version}`, expected v{FORMAT_VERSION}"),
        ));
    }

    let count_line = next("layers")?;
    let n_layers: usize = count_line
        .strip_prefix("layers ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::decode("layers", format!("malformed line `{count_line}`")))?;

    let mut specs = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let line = next("layer")?;
        if !line.starts_with("layer ") {
            return Err(Error::decode("layer", format!("malformed line `{line}`")));
        }
        specs.push(parse_layer(line)?);
    }

    let wline = next("weights")?;
    let n_weights: usize = wline
        .strip_prefix("weights ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::decode("weights", format!("malformed line `{wline}`")))?;
    let expected: usize = specs.iter().map(LayerSpec::count_parameters).sum();
    if n_weights != expected {
        return Err(Error::decode(
            "weights",
            format!("header declares {n_weights} weights but layers need {expected}"),
        ));
    }
    let mut params = Vec::with_capacity(n_weights);
    for i in 0..n_weights {
        let line = next("weights")?;
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|_| Error::decode("weights", format!("entry {i} is not a number: `{line}`")))?;
        params.push(v);
    }
    if next("end")?.trim() != "end" {
        return Err(Error::decode("end", "missing end marker"));
    }
    Network::unflatten(specs, &params).map_err(|e| Error::decode("weights", e.to_string()))
}

pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_string(net))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    model_from_str(&std::fs::read_to_string(path)?)
}
