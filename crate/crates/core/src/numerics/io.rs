//! Parameter files: one plain-text header line describing the layout, then the
//! values as little-endian f64.
//!
//! ```text
//! mlp-params v1 input=5 hidden=256,256 output=5 activation=tanh len=68613
//! <68613 x 8 bytes>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::params::{Activation, MlpSpec, ParamVector};

const MAGIC: &str = "mlp-params v1";

pub fn encode(params: &ParamVector) -> Result<Vec<u8>> {
    let spec = params
        .mlp()
        .ok_or_else(|| Error::contract("only network parameters can be serialized"))?;
    let mut out = format!("{MAGIC} {spec} len={}\n", params.len()).into_bytes();
    out.reserve(params.len() * 8);
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<ParamVector> {
    let bad = |msg: &str| Error::Data(format!("parameter file: {msg}"));
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| bad("missing header"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not utf-8"))?;
    let rest = header
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad("unknown magic"))?;
    let mut input = None;
    let mut hidden = None;
    let mut output = None;
    let mut activation = None;
    let mut len = None;
    for field in rest.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| bad("malformed field"))?;
        match k {
            "input" => input = v.parse::<usize>().ok(),
            "output" => output = v.parse::<usize>().ok(),
            "len" => len = v.parse::<usize>().ok(),
            "activation" => activation = Activation::parse(v),
            "hidden" => {
                hidden = if v == "-" {
                    Some(Vec::new())
                } else {
                    v.split(',')
                        .map(|h| h.parse::<usize>().ok())
                        .collect::<Option<Vec<_>>>()
                }
            }
            _ => return Err(bad(&format!("unknown field `{k}`"))),
        }
    }
    let spec = MlpSpec {
        input_dim: input.ok_or_else(|| bad("input"))?,
        hidden: hidden.ok_or_else(|| bad("hidden"))?,
        output_dim: output.ok_or_else(|| bad("output"))?,
        activation: activation.ok_or_else(|| bad("activation"))?,
    };
    spec.validate()?;
    let len = len.ok_or_else(|| bad("len"))?;
    if len != spec.param_count() {
        return Err(bad("len does not match layout"));
    }
    let body = &bytes[nl + 1..];
    if body.len() != len * 8 {
        return Err(bad("truncated body"));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    ParamVector::from_values(&spec, values)
}

/// Write via a temporary file and rename, so readers never see a partial file.
pub fn write_params(path: &Path, params: &ParamVector) -> Result<()> {
    let bytes = encode(params)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_params(path: &Path) -> Result<ParamVector> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng;
    use proptest::prelude::*;

    #[test]
    fn header_is_plain_text() {
        let spec = MlpSpec::new(5, &[256, 256], 5, Activation::Tanh);
        let bytes = encode(&ParamVector::zeros(&spec)).unwrap();
        let nl = bytes.iter().position(|b| *b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes[..nl]).unwrap(),
            "mlp-params v1 input=5 hidden=256,256 output=5 activation=tanh len=68613"
        );
        assert_eq!(bytes.len(), nl + 1 + 68613 * 8);
    }

    #[test]
    fn corrupt_files_rejected() {
        let spec = MlpSpec::linear(2, 2);
        let mut bytes = encode(&ParamVector::zeros(&spec)).unwrap();
        bytes.pop();
        assert!(decode(&bytes).is_err());
        assert!(decode(b"garbage\n").is_err());
        assert!(encode(&ParamVector::flat(vec![1.0])).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.params");
        let spec = MlpSpec::new(3, &[4], 2, Activation::Relu);
        let p = ParamVector::init(&spec, &mut rng::stream(3, 3));
        write_params(&path, &p).unwrap();
        assert_eq!(read_params(&path).unwrap(), p);
    }

    proptest! {
        #[test]
        fn encode_decode_is_lossless(
            input in 1usize..5,
            hidden in prop::collection::vec(1usize..6, 0..3),
            output in 1usize..4,
            seed in any::<u64>(),
        ) {
            let spec = MlpSpec::new(input, &hidden, output, Activation::Tanh);
            let p = ParamVector::init(&spec, &mut rng::stream(seed, 0));
            prop_assert_eq!(decode(&encode(&p).unwrap()).unwrap(), p);
        }
    }
}
