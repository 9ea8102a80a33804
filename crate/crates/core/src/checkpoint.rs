//! Model checkpoints.
//!
//! ```text
//! SIVAE1\n
//! header_len=<bytes>\n
//! <header: key=value lines, then one `tensor` line per parameter>
//! <payload: little-endian f32 values>
//! ```
//!
//! Tensor lines read `tensor <name> dtype=f32 shape=<a>x<b> offset=<byte> len=<values>`.
//! Parameters are stored in 32-bit precision, so loading then saving again
//! reproduces the file byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{self, ConfigMap};
use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp, MlpSpec, VaeModel};
use crate::tensor::{Tensor, Unary};
use crate::trainers::TrainConfig;

const MAGIC: &str = "SIVAE1\n";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: VaeModel,
    pub config: TrainConfig,
}

fn act_name(a: Unary) -> &'static str {
    match a {
        Unary::Relu => "relu",
        Unary::Exp => "exp",
        Unary::Log => "log",
        Unary::Neg => "neg",
        Unary::Square => "square",
        Unary::Tanh => "tanh",
    }
}

fn act_from(s: &str) -> Option<Unary> {
    [Unary::Relu, Unary::Exp, Unary::Log, Unary::Neg, Unary::Square, Unary::Tanh]
        .into_iter()
        .find(|a| act_name(*a) == s)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Serializes a model and the config that produced it.
pub fn encode(model: &VaeModel, config: &TrainConfig) -> Vec<u8> {
    let mut header = String::new();
    for (k, v) in config::to_map(config) {
        let _ = writeln!(header, "config.{k}={v}");
    }
    let _ = writeln!(header, "model.data_dim={}", model.data_dim);
    let _ = writeln!(header, "model.z_dim={}", model.z_dim);
    let mut payload = Vec::new();
    for (net_name, net) in [("encoder", &model.encoder), ("decoder", &model.decoder)] {
        let _ = writeln!(header, "model.{net_name}.widths={}", join(&net.spec.widths));
        let acts: Vec<&str> = net.spec.activations.iter().map(|a| act_name(*a)).collect();
        let _ = writeln!(header, "model.{net_name}.activations={}", acts.join(","));
        for (i, layer) in net.layers.iter().enumerate() {
            for (kind, t) in [("weight", &layer.weight), ("bias", &layer.bias)] {
                let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
                let _ = writeln!(
                    header,
                    "tensor {net_name}.{i}.{kind} dtype=f32 shape={} offset={} len={}",
                    shape.join("x"),
                    payload.len(),
                    t.len()
                );
                for &v in t.data() {
                    payload.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
    }
    let mut out = Vec::with_capacity(64 + header.len() + payload.len());
    out.extend_from_slice(MAGIC.as_bytes());
    out.extend_from_slice(format!("header_len={}\n", header.len()).as_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn save(path: &Path, model: &VaeModel, config: &TrainConfig) -> Result<()> {
    crate::report::write_atomic(path, &encode(model, config))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|message| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

fn parse_tensor_line(line: &str) -> std::result::Result<TensorEntry, String> {
    let mut parts = line.split_whitespace();
    parts.next();
    let name = parts.next().ok_or("tensor line without a name")?.to_string();
    let mut shape = None;
    let mut offset = None;
    let mut len = None;
    for p in parts {
        let (k, v) = p.split_once('=').ok_or_else(|| format!("bad field `{p}`"))?;
        match k {
            "dtype" if v == "f32" => {}
            "dtype" => return Err(format!("unsupported dtype `{v}`")),
            "shape" => {
                shape = Some(
                    v.split('x')
                        .map(|d| d.parse::<usize>().map_err(|_| format!("bad shape `{v}`")))
                        .collect::<std::result::Result<Vec<_>, _>>()?,
                )
            }
            "offset" => offset = Some(v.parse().map_err(|_| format!("bad offset `{v}`"))?),
            "len" => len = Some(v.parse().map_err(|_| format!("bad len `{v}`"))?),
            _ => return Err(format!("unknown tensor field `{k}`")),
        }
    }
    Ok(TensorEntry {
        name,
        shape: shape.ok_or("missing shape")?,
        offset: offset.ok_or("missing offset")?,
        len: len.ok_or("missing len")?,
    })
}

fn decode(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    let rest = bytes
        .strip_prefix(MAGIC.as_bytes())
        .ok_or("missing SIVAE1 magic")?;
    let nl = rest.iter().position(|&b| b == b'\n').ok_or("missing header length")?;
    let len_line = std::str::from_utf8(&rest[..nl]).map_err(|_| "header length not UTF-8")?;
    let header_len: usize = len_line
        .strip_prefix("header_len=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("bad header length line `{len_line}`"))?;
    let rest = &rest[nl + 1..];
    if rest.len() < header_len {
        return Err(format!("header truncated: {} of {header_len} bytes", rest.len()));
    }
    let header = std::str::from_utf8(&rest[..header_len]).map_err(|_| "header not UTF-8")?;
    let payload = &rest[header_len..];

    let mut cfg = ConfigMap::new();
    let mut meta = std::collections::BTreeMap::new();
    let mut tensors = Vec::new();
    for line in header.lines() {
        if line.starts_with("tensor ") {
            tensors.push(parse_tensor_line(line)?);
        } else if let Some((k, v)) = line.split_once('=') {
            match k.strip_prefix("config.") {
                Some(ck) => {
                    cfg.insert(ck.to_string(), v.to_string());
                }
                None => {
                    meta.insert(k.to_string(), v.to_string());
                }
            }
        } else {
            return Err(format!("unrecognized header line `{line}`"));
        }
    }
    let config = config::from_map(&cfg).map_err(|e| format!("config echo: {e}"))?;

    // Offsets must tile the payload exactly, in order.
    let mut expect = 0usize;
    let mut values = std::collections::BTreeMap::new();
    for t in &tensors {
        if t.offset != expect {
            return Err(format!("tensor {} at offset {} overlaps or leaves a gap", t.name, t.offset));
        }
        if t.shape.iter().product::<usize>() != t.len {
            return Err(format!("tensor {} shape and len disagree", t.name));
        }
        let end = t.offset + 4 * t.len;
        if end > payload.len() {
            return Err(format!("tensor {} runs past the payload", t.name));
        }
        let data = payload[t.offset..end]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        let tensor = Tensor::new(t.shape.clone(), data).map_err(|e| e.to_string())?;
        values.insert(t.name.clone(), tensor);
        expect = end;
    }
    if expect != payload.len() {
        return Err(format!("{} trailing payload bytes", payload.len() - expect));
    }

    let get = |k: &str| meta.get(k).ok_or_else(|| format!("missing `{k}`"));
    let mut nets = Vec::new();
    for net in ["encoder", "decoder"] {
        let widths = get(&format!("model.{net}.widths"))?
            .split(',')
            .map(|w| w.parse::<usize>().map_err(|_| format!("bad width `{w}`")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let acts_s = get(&format!("model.{net}.activations"))?;
        let acts = acts_s
            .split(',')
            .filter(|a| !a.is_empty())
            .map(|a| act_from(a).ok_or_else(|| format!("unknown activation `{a}`")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let spec = MlpSpec::new(widths, acts).map_err(|e| e.to_string())?;
        let mut layers = Vec::new();
        for i in 0..spec.widths.len() - 1 {
            let mut take = |kind: &str| {
                values
                    .remove(&format!("{net}.{i}.{kind}"))
                    .ok_or_else(|| format!("missing tensor {net}.{i}.{kind}"))
            };
            let weight = take("weight")?;
            let bias = take("bias")?;
            if weight.shape() != [spec.widths[i], spec.widths[i + 1]] || bias.shape() != [spec.widths[i + 1]] {
                return Err(format!("layer {net}.{i} shape disagrees with widths"));
            }
            layers.push(Linear { weight, bias });
        }
        nets.push(Mlp { spec, layers });
    }
    if let Some(extra) = values.keys().next() {
        return Err(format!("unexpected tensor {extra}"));
    }
    let decoder = nets.pop().expect("two nets");
    let encoder = nets.pop().expect("two nets");
    let model = VaeModel::from_parts(encoder, decoder).map_err(|e| e.to_string())?;
    for (k, v) in [("model.data_dim", model.data_dim), ("model.z_dim", model.z_dim)] {
        if get(k)?.parse::<usize>().ok() != Some(v) {
            return Err(format!("`{k}` disagrees with the stored networks"));
        }
    }
    Ok(Checkpoint { model, config })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetSpec, ToyDatasetId};
    use crate::rng::Rng;
    use crate::trainers::Regime;

    fn sample() -> (VaeModel, TrainConfig) {
        let m = VaeModel::new(2, 2, &[5, 3], &mut Rng::seed_from_u64(1)).unwrap();
        let mut c = TrainConfig::new(Regime::SIntroVae, DatasetSpec::Toy(ToyDatasetId::Rings), 4);
        c.hidden = vec![5, 3];
        (m, c)
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let (m, c) = sample();
        let a = encode(&m, &c);
        let ck = decode(&a).unwrap();
        assert_eq!(ck.config, c);
        let b = encode(&ck.model, &ck.config);
        assert_eq!(a, b);
        for (x, y) in m.encoder.params().iter().zip(ck.model.encoder.params()) {
            for (p, q) in x.data().iter().zip(y.data()) {
                assert_eq!(*p as f32, *q as f32);
            }
        }
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let (m, c) = sample();
        let good = encode(&m, &c);
        assert!(decode(&good[..good.len() - 1]).is_err());
        assert!(decode(b"NOTIT\n").is_err());
        let mut extra = good.clone();
        extra.extend_from_slice(&[0, 0, 0, 0]);
        assert!(decode(&extra).unwrap_err().contains("trailing"));
    }

    #[test]
    fn save_and_load_from_disk() {
        let (m, c) = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save(&p, &m, &c).unwrap();
        let ck = load(&p).unwrap();
        save(&p, &ck.model, &ck.config).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), encode(&m, &c));
        assert!(matches!(load(&dir.path().join("none")), Err(Error::Io { .. })));
    }
}
