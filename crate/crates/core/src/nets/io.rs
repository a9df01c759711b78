//! Model files: `"HATM"`, `u16` version, `u8` model kind, then one record per
//! weight or bias (`u32` rows, `u32` cols, row-major `f32`). Little-endian.
//! Biases are written as `1×n` records. Hallucinator files carry one extra
//! `u8` after the kind: the decoder output activation.

use std::path::Path;

use super::{Activation, ClassifierHead, Dense, DiscriminatorModel, HallucinatorModel, Mlp3};
use crate::codec::{read_file, write_file, FormatError, Reader, Writer};
use crate::numgrad::Tensor;

pub const MODEL_MAGIC: &[u8; 4] = b"HATM";
pub const MODEL_VERSION: u16 = 1;

const KIND_HALLUCINATOR: u8 = 1;
const KIND_DISCRIMINATOR: u8 = 2;
const KIND_CLASSIFIER: u8 = 3;

const ACT_RELU: u8 = 1;
const ACT_SOFTPLUS: u8 = 2;

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Relu => ACT_RELU,
        Activation::Softplus => ACT_SOFTPLUS,
        Activation::Sigmoid | Activation::Identity => unreachable!("decoder output is nonnegative"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelFile {
    Hallucinator(HallucinatorModel),
    Discriminator(DiscriminatorModel),
    Classifier(ClassifierHead),
}

fn put_dense(w: &mut Writer, d: &Dense) {
    w.u32(d.fan_in() as u32);
    w.u32(d.fan_out() as u32);
    w.f32s(d.weight.data());
    w.u32(1);
    w.u32(d.bias.len() as u32);
    w.f32s(d.bias.data());
}

fn put_mlp(w: &mut Writer, m: &Mlp3) {
    put_dense(w, &m.hidden);
    put_dense(w, &m.output);
}

pub fn model_to_bytes(model: &ModelFile) -> Vec<u8> {
    let mut w = Writer::new(MODEL_MAGIC, MODEL_VERSION);
    match model {
        ModelFile::Hallucinator(h) => {
            w.u8(KIND_HALLUCINATOR);
            w.u8(activation_tag(h.decoder.activation));
            put_mlp(&mut w, &h.encoder);
            put_mlp(&mut w, &h.decoder);
        }
        ModelFile::Discriminator(d) => {
            w.u8(KIND_DISCRIMINATOR);
            put_mlp(&mut w, &d.net);
        }
        ModelFile::Classifier(c) => {
            w.u8(KIND_CLASSIFIER);
            for l in &c.layers {
                put_dense(&mut w, l);
            }
        }
    }
    w.finish()
}

fn shape_err(what: impl Into<String>) -> FormatError {
    FormatError::Shape { what: what.into() }
}

fn get_record(r: &mut Reader, name: &str) -> Result<(usize, usize, Vec<f32>), FormatError> {
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let data = r.f32s(rows.checked_mul(cols).ok_or_else(|| shape_err(name))?)?;
    Ok((rows, cols, data))
}

fn get_dense(r: &mut Reader, name: &str) -> Result<Dense, FormatError> {
    let (rows, cols, w) = get_record(r, &format!("{name}.weight"))?;
    let (brows, bcols, b) = get_record(r, &format!("{name}.bias"))?;
    if brows != 1 || bcols != cols {
        return Err(shape_err(format!(
            "{name}.bias: declared {brows}x{bcols}, weight is {rows}x{cols}"
        )));
    }
    let finite = |what: String| move |_| FormatError::NonFinite { what };
    Ok(Dense {
        weight: Tensor::matrix(rows, cols, w).map_err(finite(format!("{name}.weight")))?,
        bias: Tensor::new(vec![cols], b).map_err(finite(format!("{name}.bias")))?,
    })
}

fn get_mlp(r: &mut Reader, name: &str, activation: Activation) -> Result<Mlp3, FormatError> {
    let hidden = get_dense(r, &format!("{name}.hidden"))?;
    let output = get_dense(r, &format!("{name}.output"))?;
    if output.fan_in() != hidden.fan_out() {
        return Err(shape_err(format!(
            "{name}.output.weight: declared {} input rows, hidden layer has {} units",
            output.fan_in(),
            hidden.fan_out()
        )));
    }
    Ok(Mlp3 {
        hidden,
        output,
        activation,
    })
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ModelFile, FormatError> {
    let mut r = Reader::open(bytes, MODEL_MAGIC, MODEL_VERSION)?;
    let kind = r.u8()?;
    let model = match kind {
        KIND_HALLUCINATOR => {
            let out = match r.u8()? {
                ACT_RELU => Activation::Relu,
                ACT_SOFTPLUS => Activation::Softplus,
                tag => return Err(FormatError::UnknownTag { what: "decoder activation", tag }),
            };
            let encoder = get_mlp(&mut r, "encoder", Activation::Relu)?;
            let decoder = get_mlp(&mut r, "decoder", out)?;
            let h = HallucinatorModel::from_parts(encoder, decoder)
                .map_err(|e| shape_err(format!("hallucinator: {e}")))?;
            ModelFile::Hallucinator(h)
        }
        KIND_DISCRIMINATOR => {
            let net = get_mlp(&mut r, "discriminator", Activation::Sigmoid)?;
            ModelFile::Discriminator(
                DiscriminatorModel::from_net(net).map_err(|e| shape_err(format!("discriminator: {e}")))?,
            )
        }
        KIND_CLASSIFIER => {
            let layers = [
                get_dense(&mut r, "classifier.fc1")?,
                get_dense(&mut r, "classifier.fc2")?,
                get_dense(&mut r, "classifier.fc3")?,
            ];
            ModelFile::Classifier(
                ClassifierHead::from_layers(layers).map_err(|e| shape_err(format!("classifier: {e}")))?,
            )
        }
        tag => return Err(FormatError::UnknownTag { what: "model kind", tag }),
    };
    r.finish()?;
    Ok(model)
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<(), FormatError> {
    write_file(path, &model_to_bytes(model))
}

pub fn load_model(path: &Path) -> Result<ModelFile, FormatError> {
    model_from_bytes(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn models() -> Vec<ModelFile> {
        vec![
            ModelFile::Hallucinator(HallucinatorModel::new(5, 3, 7, 1).unwrap()),
            ModelFile::Discriminator(DiscriminatorModel::new(5, 6, 2).unwrap()),
            ModelFile::Classifier(ClassifierHead::new(5, (4, 3), 3).unwrap()),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for m in models() {
            let bytes = model_to_bytes(&m);
            let back = model_from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(model_to_bytes(&back), bytes);
        }
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = model_to_bytes(&models()[0]);
        bytes[0] = b'X';
        assert!(matches!(model_from_bytes(&bytes), Err(FormatError::BadMagic { .. })));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = model_to_bytes(&models()[1]);
        bytes[4] = 9;
        assert!(matches!(
            model_from_bytes(&bytes),
            Err(FormatError::UnsupportedVersion { found: 9, .. })
        ));
    }

    #[test]
    fn truncated() {
        let bytes = model_to_bytes(&models()[2]);
        assert!(matches!(
            model_from_bytes(&bytes[..bytes.len() - 3]),
            Err(FormatError::Truncated { .. })
        ));
    }

    #[test]
    fn mismatched_shapes_name_the_offender() {
        let mut bytes = model_to_bytes(&models()[1]);
        // First bias record header sits after magic(4)+version(2)+kind(1)+
        // weight header(8)+weight data(10·6·4).
        let bias_cols = 7 + 8 + 10 * 6 * 4 + 4;
        bytes[bias_cols..bias_cols + 4].copy_from_slice(&5u32.to_le_bytes());
        match model_from_bytes(&bytes) {
            Err(FormatError::Shape { what }) => assert!(what.contains("discriminator.hidden.bias"), "{what}"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_kind() {
        let mut bytes = model_to_bytes(&models()[1]);
        bytes[6] = 42;
        assert!(matches!(model_from_bytes(&bytes), Err(FormatError::UnknownTag { tag: 42, .. })));
    }
}
